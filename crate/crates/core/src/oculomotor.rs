//! Stimulus scripts and 100 Hz ground-truth gaze traces.
//!
//! A script is a run of 1 s fixation targets separated by 0.1 s target
//! transitions. The simulated eye holds each fixation with Gaussian jitter
//! and, after a sampled latency, makes a minimum-jerk saccade whose duration
//! follows a linear main sequence.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angular_distance, GazeAngles};
use crate::seed;

pub const FIXATION_MS: u64 = 1000;
pub const TRANSITION_MS: u64 = 100;
pub const FRAME_MS: u64 = 10;
/// Largest target eccentricity accepted for stimulus ranges.
pub const MAX_TARGET_DEG: f64 = 45.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulusEvent {
    pub target: GazeAngles,
    pub onset_ms: u64,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusScript {
    pub events: Vec<StimulusEvent>,
    pub total_duration_ms: u64,
}

impl StimulusScript {
    pub fn validate(&self) -> Result<()> {
        let first = self.events.first().ok_or_else(|| Error::invalid("script has no events"))?;
        if first.onset_ms != 0 {
            return Err(Error::invalid("first fixation must start at 0 ms"));
        }
        for (k, e) in self.events.iter().enumerate() {
            if e.duration_ms != FIXATION_MS {
                return Err(Error::invalid(format!("event {k} lasts {} ms, expected {FIXATION_MS}", e.duration_ms)));
            }
            if !e.target.is_finite() || !e.target.within(MAX_TARGET_DEG) {
                return Err(Error::invalid(format!("event {k} target out of range")));
            }
            if k > 0 {
                let prev = &self.events[k - 1];
                if e.onset_ms != prev.onset_ms + prev.duration_ms + TRANSITION_MS {
                    return Err(Error::invalid(format!("event {k} does not follow a {TRANSITION_MS} ms transition")));
                }
            }
        }
        let last = self.events.last().unwrap();
        if self.total_duration_ms != last.onset_ms + last.duration_ms {
            return Err(Error::invalid("total duration does not match the last event"));
        }
        Ok(())
    }
}

/// Closed interval of angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    pub min: f64,
    pub max: f64,
}

impl AngleRange {
    pub const fn symmetric(half: f64) -> Self {
        Self { min: -half, max: half }
    }

    fn check(&self, what: &str) -> Result<()> {
        if !(self.min < self.max) {
            return Err(Error::invalid(format!("{what} range [{}, {}] is empty", self.min, self.max)));
        }
        if self.min < -MAX_TARGET_DEG || self.max > MAX_TARGET_DEG {
            return Err(Error::invalid(format!("{what} range exceeds ±{MAX_TARGET_DEG}°")));
        }
        Ok(())
    }
}

impl Default for AngleRange {
    fn default() -> Self {
        Self::symmetric(20.0)
    }
}

/// Targets uniform over the ranges, 1 s each, 0.1 s transitions.
pub fn generate_stimulus(
    rng_seed: u64,
    n_fixations: usize,
    yaw_range: AngleRange,
    pitch_range: AngleRange,
) -> Result<StimulusScript> {
    if n_fixations == 0 {
        return Err(Error::invalid("need at least one fixation"));
    }
    yaw_range.check("yaw")?;
    pitch_range.check("pitch")?;
    let mut rng = seed::rng(rng_seed, &[seed::STIMULUS]);
    let events: Vec<StimulusEvent> = (0..n_fixations as u64)
        .map(|k| StimulusEvent {
            target: GazeAngles::new(
                rng.random_range(yaw_range.min..=yaw_range.max),
                rng.random_range(pitch_range.min..=pitch_range.max),
            ),
            onset_ms: k * (FIXATION_MS + TRANSITION_MS),
            duration_ms: FIXATION_MS,
        })
        .collect();
    let total_duration_ms = n_fixations as u64 * FIXATION_MS + (n_fixations as u64 - 1) * TRANSITION_MS;
    Ok(StimulusScript {
        events,
        total_duration_ms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameLabel {
    #[serde(rename = "FIX")]
    Fix,
    #[serde(rename = "SAC")]
    Sac,
}

impl FrameLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrameLabel::Fix => "FIX",
            FrameLabel::Sac => "SAC",
        }
    }
}

impl std::str::FromStr for FrameLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "FIX" => Ok(FrameLabel::Fix),
            "SAC" => Ok(FrameLabel::Sac),
            other => Err(Error::Data(format!("unknown frame label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanpathFrame {
    pub index: usize,
    pub t_ms: u64,
    pub gaze: GazeAngles,
    pub label: FrameLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OculomotorParams {
    pub latency_min_ms: f64,
    pub latency_max_ms: f64,
    /// saccade duration = c0 + c1 * amplitude
    pub main_sequence_c0_ms: f64,
    pub main_sequence_c1_ms_per_deg: f64,
    pub fixation_jitter_sigma_deg: f64,
    pub landing_noise_sigma_deg: f64,
}

impl Default for OculomotorParams {
    fn default() -> Self {
        Self {
            latency_min_ms: 150.0,
            latency_max_ms: 250.0,
            main_sequence_c0_ms: 20.0,
            main_sequence_c1_ms_per_deg: 2.2,
            fixation_jitter_sigma_deg: 0.1,
            landing_noise_sigma_deg: 0.3,
        }
    }
}

impl OculomotorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.main_sequence_c0_ms > 0.0 && self.main_sequence_c1_ms_per_deg > 0.0) {
            return Err(Error::invalid("main-sequence coefficients must be positive"));
        }
        if !(self.fixation_jitter_sigma_deg >= 0.0 && self.landing_noise_sigma_deg >= 0.0) {
            return Err(Error::invalid("noise sigmas must be non-negative"));
        }
        if !(self.latency_min_ms >= 0.0 && self.latency_min_ms <= self.latency_max_ms) {
            return Err(Error::invalid("latency range must satisfy 0 <= min <= max"));
        }
        Ok(())
    }

    pub fn saccade_duration_ms(&self, amplitude_deg: f64) -> f64 {
        self.main_sequence_c0_ms + self.main_sequence_c1_ms_per_deg * amplitude_deg
    }
}

/// Minimum-jerk position profile `10t^3 - 15t^4 + 6t^5` on `[0, 1]`.
pub fn minimum_jerk(t_norm: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t_norm) {
        return Err(Error::invalid(format!("normalized time {t_norm} outside [0, 1]")));
    }
    Ok(min_jerk(t_norm))
}

fn min_jerk(t: f64) -> f64 {
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

#[derive(Debug, Clone, Copy)]
struct Saccade {
    start_ms: f64,
    duration_ms: f64,
    /// may be cut short by a later saccade
    end_ms: f64,
    from: GazeAngles,
    to: GazeAngles,
}

impl Saccade {
    fn position(&self, t_ms: f64) -> GazeAngles {
        let s = min_jerk(((t_ms - self.start_ms) / self.duration_ms).clamp(0.0, 1.0));
        GazeAngles::new(
            self.from.yaw_deg + (self.to.yaw_deg - self.from.yaw_deg) * s,
            self.from.pitch_deg + (self.to.pitch_deg - self.from.pitch_deg) * s,
        )
    }
}

fn plan_saccades(script: &StimulusScript, p: &OculomotorParams, rng: &mut impl Rng) -> Result<Vec<Saccade>> {
    let landing = Normal::new(0.0, p.landing_noise_sigma_deg).map_err(|e| Error::invalid(e.to_string()))?;
    let mut plans: Vec<Saccade> = Vec::with_capacity(script.events.len());
    let mut center = script.events[0].target;
    for event in &script.events[1..] {
        let trigger = (event.onset_ms - TRANSITION_MS) as f64;
        let latency = if p.latency_max_ms > p.latency_min_ms {
            rng.random_range(p.latency_min_ms..p.latency_max_ms)
        } else {
            p.latency_min_ms
        };
        let mut start = trigger + latency;
        let to = GazeAngles::new(
            event.target.yaw_deg + landing.sample(rng),
            event.target.pitch_deg + landing.sample(rng),
        );
        let mut from = center;
        if let Some(prev) = plans.last_mut() {
            start = start.max(prev.start_ms);
            if start < prev.end_ms {
                // retarget mid-flight from the current eye position
                from = prev.position(start);
                prev.end_ms = start;
            }
        }
        let duration = p.saccade_duration_ms(angular_distance(from, to));
        plans.push(Saccade {
            start_ms: start,
            duration_ms: duration,
            end_ms: start + duration,
            from,
            to,
        });
        center = to;
    }
    Ok(plans)
}

/// Samples the eye trace at 100 Hz; frame `i` is at `10 * i` ms.
pub fn simulate_scanpath(script: &StimulusScript, p: &OculomotorParams, rng_seed: u64) -> Result<Vec<ScanpathFrame>> {
    script.validate()?;
    p.validate()?;
    let mut rng = seed::rng(rng_seed, &[seed::SCANPATH]);
    let saccades = plan_saccades(script, p, &mut rng)?;
    let jitter =
        Normal::new(0.0, p.fixation_jitter_sigma_deg).map_err(|e| Error::invalid(e.to_string()))?;
    let n_frames = (script.total_duration_ms / FRAME_MS) as usize;
    let mut frames = Vec::with_capacity(n_frames);
    let mut next = 0;
    let mut center = script.events[0].target;
    for index in 0..n_frames {
        let t_ms = index as u64 * FRAME_MS;
        let t = t_ms as f64;
        while next < saccades.len() && saccades[next].end_ms <= t {
            center = saccades[next].to;
            next += 1;
        }
        let frame = match saccades.get(next) {
            Some(s) if s.start_ms <= t => ScanpathFrame {
                index,
                t_ms,
                gaze: s.position(t),
                label: FrameLabel::Sac,
            },
            _ => {
                let gaze = if p.fixation_jitter_sigma_deg > 0.0 {
                    GazeAngles::new(
                        center.yaw_deg + jitter.sample(&mut rng),
                        center.pitch_deg + jitter.sample(&mut rng),
                    )
                } else {
                    center
                };
                ScanpathFrame {
                    index,
                    t_ms,
                    gaze,
                    label: FrameLabel::Fix,
                }
            }
        };
        frames.push(frame);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stimulus_timing() {
        let s = generate_stimulus(1, 2, AngleRange::default(), AngleRange::default()).unwrap();
        assert_eq!(s.total_duration_ms, 2100);
        assert_eq!(s.events[1].onset_ms, 1100);
        s.validate().unwrap();
        assert_eq!(s, generate_stimulus(1, 2, AngleRange::default(), AngleRange::default()).unwrap());
    }

    #[test]
    fn stimulus_rejects_bad_ranges() {
        let ok = AngleRange::default();
        assert!(generate_stimulus(1, 0, ok, ok).is_err());
        assert!(generate_stimulus(1, 3, AngleRange { min: 5.0, max: 5.0 }, ok).is_err());
        assert!(generate_stimulus(1, 3, ok, AngleRange { min: -50.0, max: 0.0 }).is_err());
    }

    #[test]
    fn targets_fill_ranges_uniformly() {
        let yaw = AngleRange { min: -20.0, max: 10.0 };
        let pitch = AngleRange { min: -5.0, max: 15.0 };
        let s = generate_stimulus(99, 10_000, yaw, pitch).unwrap();
        let bins = 10;
        let mut counts = vec![0usize; bins];
        for e in &s.events {
            let t = e.target;
            assert!(t.yaw_deg >= yaw.min && t.yaw_deg <= yaw.max);
            assert!(t.pitch_deg >= pitch.min && t.pitch_deg <= pitch.max);
            let b = (((t.yaw_deg - yaw.min) / (yaw.max - yaw.min)) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let expected = 1000.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square critical value, 9 dof, alpha = 0.001
        assert!(chi2 < 27.877, "chi2 = {chi2}");
    }

    #[test]
    fn minimum_jerk_profile() {
        assert_eq!(minimum_jerk(0.0).unwrap(), 0.0);
        assert_eq!(minimum_jerk(1.0).unwrap(), 1.0);
        assert!((minimum_jerk(0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(minimum_jerk(-0.1).is_err());
        assert!(minimum_jerk(1.1).is_err());
        let h = 1e-7;
        let d0 = (minimum_jerk(h).unwrap() - minimum_jerk(0.0).unwrap()) / h;
        let d1 = (minimum_jerk(1.0).unwrap() - minimum_jerk(1.0 - h).unwrap()) / h;
        assert!(d0.abs() <= 1e-6 && d1.abs() <= 1e-6);
        // peak velocity at the midpoint
        let vel = |t: f64| (min_jerk(t + 1e-6) - min_jerk(t - 1e-6)) / 2e-6;
        for t in [0.1, 0.3, 0.45, 0.55, 0.7, 0.9] {
            assert!(vel(0.5) > vel(t));
        }
        let mut prev = 0.0;
        for i in 0..=1000 {
            let v = minimum_jerk(i as f64 / 1000.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    fn quiet() -> OculomotorParams {
        OculomotorParams {
            fixation_jitter_sigma_deg: 0.0,
            landing_noise_sigma_deg: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_single_fixation_is_static() {
        let s = generate_stimulus(4, 1, AngleRange::default(), AngleRange::default()).unwrap();
        let frames = simulate_scanpath(&s, &quiet(), 0).unwrap();
        assert_eq!(frames.len(), 100);
        for f in &frames {
            assert_eq!(f.gaze, s.events[0].target);
            assert_eq!(f.label, FrameLabel::Fix);
        }
    }

    #[test]
    fn ten_degree_saccade_spans_four_or_five_frames() {
        let script = StimulusScript {
            events: vec![
                StimulusEvent {
                    target: GazeAngles::new(0.0, 0.0),
                    onset_ms: 0,
                    duration_ms: FIXATION_MS,
                },
                StimulusEvent {
                    target: GazeAngles::new(10.0, 0.0),
                    onset_ms: 1100,
                    duration_ms: FIXATION_MS,
                },
            ],
            total_duration_ms: 2100,
        };
        let p = quiet();
        assert!((p.saccade_duration_ms(10.0) - 42.0).abs() < 1e-12);
        for seed in 0..50 {
            let frames = simulate_scanpath(&script, &p, seed).unwrap();
            let sac = frames.iter().filter(|f| f.label == FrameLabel::Sac).count();
            assert!((4..=5).contains(&sac), "seed {seed}: {sac} saccade frames");
            assert_eq!(frames.last().unwrap().gaze, GazeAngles::new(10.0, 0.0));
        }
    }

    #[test]
    fn retargets_when_latency_overruns_next_jump() {
        let script = generate_stimulus(3, 4, AngleRange::default(), AngleRange::default()).unwrap();
        let p = OculomotorParams {
            latency_min_ms: 1150.0,
            latency_max_ms: 1160.0,
            main_sequence_c1_ms_per_deg: 40.0,
            ..quiet()
        };
        let frames = simulate_scanpath(&script, &p, 1).unwrap();
        assert_eq!(frames.len(), (script.total_duration_ms / 10) as usize);
        // gaze stays continuous through the truncated saccade
        for w in frames.windows(2) {
            let d = angular_distance(w[0].gaze, w[1].gaze);
            assert!(d < 10.0, "jump of {d} deg");
        }
    }

    #[test]
    fn deterministic_and_evenly_timed() {
        let s = generate_stimulus(5, 6, AngleRange::default(), AngleRange::default()).unwrap();
        let p = OculomotorParams::default();
        let a = simulate_scanpath(&s, &p, 17).unwrap();
        assert_eq!(a, simulate_scanpath(&s, &p, 17).unwrap());
        assert_ne!(a, simulate_scanpath(&s, &p, 18).unwrap());
        for (i, f) in a.iter().enumerate() {
            assert_eq!(f.t_ms, 10 * i as u64);
            assert_eq!(f.index, i);
        }
    }

    #[test]
    fn fixation_jitter_stays_within_four_sigma() {
        let p = OculomotorParams {
            landing_noise_sigma_deg: 0.0,
            ..Default::default()
        };
        let sigma = p.fixation_jitter_sigma_deg;
        let (mut total, mut inside) = (0usize, 0usize);
        for seed in 0..40 {
            let s = generate_stimulus(seed, 8, AngleRange::default(), AngleRange::default()).unwrap();
            let frames = simulate_scanpath(&s, &p, seed).unwrap();
            // with exact landings every fixation centers on some target
            for f in frames.iter().filter(|f| f.label == FrameLabel::Fix) {
                let dev = s
                    .events
                    .iter()
                    .map(|e| (f.gaze.yaw_deg - e.target.yaw_deg).abs().max((f.gaze.pitch_deg - e.target.pitch_deg).abs()))
                    .fold(f64::INFINITY, f64::min);
                total += 1;
                inside += usize::from(dev <= 4.0 * sigma);
            }
        }
        assert!(inside as f64 / total as f64 >= 0.999, "{inside}/{total}");
    }

    #[test]
    fn saccade_runs_are_flanked_and_land_on_target() {
        let p = OculomotorParams::default();
        for seed in 0..20 {
            let s = generate_stimulus(seed, 6, AngleRange::default(), AngleRange::default()).unwrap();
            let frames = simulate_scanpath(&s, &p, seed).unwrap();
            let mut i = 0;
            let mut jump = 1;
            while i < frames.len() {
                if frames[i].label == FrameLabel::Fix {
                    i += 1;
                    continue;
                }
                let start = i;
                while i < frames.len() && frames[i].label == FrameLabel::Sac {
                    i += 1;
                }
                assert!(start > 0, "trace starts mid-saccade");
                if i < frames.len() {
                    assert_eq!(frames[i].label, FrameLabel::Fix);
                    // landing lies within landing noise of the target; fixation
                    // jitter on the first post-saccade frame adds a little
                    let t = s.events[jump].target;
                    let err = (frames[i].gaze.yaw_deg - t.yaw_deg).abs().max((frames[i].gaze.pitch_deg - t.pitch_deg).abs());
                    assert!(err < 5.0 * (p.landing_noise_sigma_deg + p.fixation_jitter_sigma_deg));
                }
                jump += 1;
            }
        }
    }
}
