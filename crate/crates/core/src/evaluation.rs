//! Test-split analyses: common-subset scoring, movement annotation, paired
//! model comparison, trace export, and per-subject breakdown.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Sequence, SequenceKey};
use crate::error::{Error, Result};
use crate::geometry::{angular_distance, mirror_angles, GazeAngles};
use crate::metrics::{ErrorStats, SampleError};
use crate::models::GazeModel;
use crate::oculomotor::{FrameLabel, FRAME_MS};
use crate::render::Side;
use crate::stats::{ks_two_sample, wilcoxon_signed_rank, TestResult};

pub const DEFAULT_VELOCITY_THRESHOLD: f64 = 75.0;
pub const SUBJECT_ALPHA: f64 = 0.01;

/// Samples per sequence usable by every model with a window of at most
/// `s_max` frames: the last-frame indices `s_max - 1 ..= len - 1`.
pub fn common_subset(len: usize, s_max: usize) -> Result<Vec<usize>> {
    if s_max == 0 || s_max > len {
        return Err(Error::invalid(format!("s_max must be in 1..={len}, got {s_max}")));
    }
    Ok((s_max - 1..len).collect())
}

pub fn coverage(len: usize, s_max: usize) -> Result<f64> {
    Ok(common_subset(len, s_max)?.len() as f64 / len as f64)
}

/// Angular speed in deg/s between consecutive samples; entry 0 is the speed
/// into frame 1.
pub fn angular_speeds(trace: &[GazeAngles]) -> Vec<f64> {
    let hz = 1000.0 / FRAME_MS as f64;
    trace.windows(2).map(|w| angular_distance(w[0], w[1]) * hz).collect()
}

/// Velocity-threshold (I-VT) frame labels; the first frame takes the
/// second's label.
pub fn annotate_frames(trace: &[GazeAngles], threshold_deg_s: f64) -> Result<Vec<FrameLabel>> {
    if trace.len() < 2 {
        return Err(Error::invalid("annotation needs at least two samples"));
    }
    if !(threshold_deg_s >= 0.0) {
        return Err(Error::invalid("velocity threshold must be non-negative"));
    }
    let mut labels: Vec<FrameLabel> = angular_speeds(trace)
        .into_iter()
        .map(|v| if v > threshold_deg_s { FrameLabel::Sac } else { FrameLabel::Fix })
        .collect();
    labels.insert(0, labels[0]);
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MovementLabel {
    Fixation,
    Saccade,
    FixToSac,
    SacToFix,
    FixSacFix,
    Other,
}

impl MovementLabel {
    pub const ALL: [MovementLabel; 6] = [
        MovementLabel::Fixation,
        MovementLabel::Saccade,
        MovementLabel::FixToSac,
        MovementLabel::SacToFix,
        MovementLabel::FixSacFix,
        MovementLabel::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MovementLabel::Fixation => "FIXATION",
            MovementLabel::Saccade => "SACCADE",
            MovementLabel::FixToSac => "FIX_TO_SAC",
            MovementLabel::SacToFix => "SAC_TO_FIX",
            MovementLabel::FixSacFix => "FIX_SAC_FIX",
            MovementLabel::Other => "OTHER",
        }
    }
}

impl fmt::Display for MovementLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MovementLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown movement label {s:?}")))
    }
}

/// Movement class of a window from the run-length pattern of its frame
/// labels.
pub fn label_window(labels: &[FrameLabel]) -> MovementLabel {
    let mut runs: Vec<FrameLabel> = Vec::new();
    for &l in labels {
        if runs.last() != Some(&l) {
            runs.push(l);
        }
    }
    use FrameLabel::{Fix, Sac};
    match runs.as_slice() {
        [Fix] => MovementLabel::Fixation,
        [Sac] => MovementLabel::Saccade,
        [Fix, Sac] => MovementLabel::FixToSac,
        [Sac, Fix] => MovementLabel::SacToFix,
        [Fix, Sac, Fix] => MovementLabel::FixSacFix,
        _ => MovementLabel::Other,
    }
}

/// Labels of the `s_max`-frame windows ending at each index of the common
/// subset, from I-VT annotation of the sequence's ground truth.
pub fn window_labels(seq: &Sequence, s_max: usize, threshold_deg_s: f64) -> Result<Vec<MovementLabel>> {
    let frames = annotate_frames(&seq.gaze, threshold_deg_s)?;
    Ok(common_subset(seq.len(), s_max)?
        .into_iter()
        .map(|i| label_window(&frames[i + 1 - s_max..=i]))
        .collect())
}

/// Anything that produces per-frame gaze estimates for a sequence.
pub trait GazeEstimator {
    fn name(&self) -> String;
    /// frames needed before the first estimate
    fn window(&self) -> usize;
    /// One entry per frame; `None` where no estimate exists.
    fn estimate(&mut self, seq: &Sequence) -> Result<Vec<Option<GazeAngles>>>;
}

impl GazeEstimator for GazeModel<f32> {
    fn name(&self) -> String {
        self.variant.label()
    }

    fn window(&self) -> usize {
        self.variant.window
    }

    fn estimate(&mut self, seq: &Sequence) -> Result<Vec<Option<GazeAngles>>> {
        if !seq.normalized {
            return Err(Error::invalid(format!("{} is not side-normalized", seq.key.tag())));
        }
        let frames: Vec<&[u8]> = (0..seq.len()).map(|i| seq.frame(i)).collect();
        Ok(self
            .predict_frames(&frames)?
            .into_iter()
            .map(|p| p.map(|[y, p]| GazeAngles::new(y, p)))
            .collect())
    }
}

/// Test stub returning the ground truth.
#[derive(Debug, Clone)]
pub struct EchoEstimator {
    pub window: usize,
}

impl GazeEstimator for EchoEstimator {
    fn name(&self) -> String {
        "ECHO".into()
    }
    fn window(&self) -> usize {
        self.window
    }
    fn estimate(&mut self, seq: &Sequence) -> Result<Vec<Option<GazeAngles>>> {
        Ok(seq.gaze.iter().enumerate().map(|(i, g)| (i + 1 >= self.window).then_some(*g)).collect())
    }
}

/// Test stub returning a fixed angle pair.
#[derive(Debug, Clone)]
pub struct ConstantEstimator {
    pub value: GazeAngles,
    pub window: usize,
}

impl GazeEstimator for ConstantEstimator {
    fn name(&self) -> String {
        "CONSTANT".into()
    }
    fn window(&self) -> usize {
        self.window
    }
    fn estimate(&mut self, seq: &Sequence) -> Result<Vec<Option<GazeAngles>>> {
        Ok((0..seq.len()).map(|i| (i + 1 >= self.window).then_some(self.value)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub key: SequenceKey,
    pub frame: usize,
    pub gt: GazeAngles,
    pub pred: GazeAngles,
    pub error: SampleError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEvaluation {
    pub name: String,
    pub window: usize,
    pub stats: ErrorStats,
    pub samples: Vec<EvalSample>,
}

impl ModelEvaluation {
    pub fn mean_errors(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.error.mean()).collect()
    }
}

/// Scores `est` on the common subset for `s_max` of every sequence.
pub fn evaluate_model(est: &mut dyn GazeEstimator, seqs: &[Sequence], s_max: usize) -> Result<ModelEvaluation> {
    if est.window() > s_max {
        return Err(Error::invalid(format!(
            "{} needs {} frames but the common subset allows {s_max}",
            est.name(),
            est.window()
        )));
    }
    let mut samples = Vec::new();
    for seq in seqs {
        let preds = est.estimate(seq)?;
        if preds.len() != seq.len() {
            return Err(Error::Data(format!("{}: {} estimates for {} frames", seq.key.tag(), preds.len(), seq.len())));
        }
        for i in common_subset(seq.len(), s_max)? {
            let pred = preds[i].ok_or_else(|| Error::Data(format!("{}: no estimate at frame {i}", seq.key.tag())))?;
            samples.push(EvalSample {
                key: seq.key,
                frame: i,
                gt: seq.gaze[i],
                pred,
                error: SampleError::between(pred, seq.gaze[i]),
            });
        }
    }
    let errors: Vec<SampleError> = samples.iter().map(|s| s.error).collect();
    Ok(ModelEvaluation {
        name: est.name(),
        window: est.window(),
        stats: ErrorStats::from_errors(&errors)?,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Yaw,
    Pitch,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::Yaw => "yaw",
            Axis::Pitch => "pitch",
        }
    }

    fn of(&self, e: &SampleError) -> f64 {
        match self {
            Axis::Yaw => e.yaw,
            Axis::Pitch => e.pitch,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassImprovement {
    pub class: MovementLabel,
    pub axis: Axis,
    /// static minus temporal mean absolute error, degrees
    pub improvement_deg: f64,
    /// standard error of the mean paired difference; `None` below 2 samples
    pub sem: Option<f64>,
    /// two-sided KS between the two error samples; `None` below 2 samples
    pub ks_p: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub baseline: String,
    pub candidate: String,
    /// paired Wilcoxon over per-sample mean errors, or why it was not run
    pub wilcoxon: std::result::Result<TestResult, String>,
    pub classes: Vec<ClassImprovement>,
}

fn same_index_set(a: &ModelEvaluation, b: &ModelEvaluation) -> bool {
    a.samples.len() == b.samples.len()
        && a.samples.iter().zip(&b.samples).all(|(x, y)| x.key == y.key && x.frame == y.frame)
}

/// Paired comparison of a baseline against a candidate scored on the same
/// samples. `labels` gives each sample's movement class.
pub fn compare_models(baseline: &ModelEvaluation, candidate: &ModelEvaluation, labels: &[MovementLabel]) -> Result<Comparison> {
    if !same_index_set(baseline, candidate) {
        return Err(Error::invalid("models were scored on different sample sets"));
    }
    if labels.len() != baseline.samples.len() {
        return Err(Error::invalid("one movement label per sample required"));
    }
    let wilcoxon = wilcoxon_signed_rank(&baseline.mean_errors(), &candidate.mean_errors()).map_err(|e| e.to_string());
    let mut classes = Vec::new();
    for class in MovementLabel::ALL {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        for axis in [Axis::Yaw, Axis::Pitch] {
            let a: Vec<f64> = idx.iter().map(|&i| axis.of(&baseline.samples[i].error)).collect();
            let b: Vec<f64> = idx.iter().map(|&i| axis.of(&candidate.samples[i].error)).collect();
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let n = d.len();
            let mean = d.iter().sum::<f64>() / n as f64;
            let (sem, ks_p) = if n >= 2 {
                let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (Some((var / n as f64).sqrt()), Some(ks_two_sample(&a, &b)?.p_value))
            } else {
                (None, None)
            };
            classes.push(ClassImprovement {
                class,
                axis,
                improvement_deg: mean,
                sem,
                ks_p,
                n,
            });
        }
    }
    Ok(Comparison {
        baseline: baseline.name.clone(),
        candidate: candidate.name.clone(),
        wilcoxon,
        classes,
    })
}

/// Spread of the estimates while the eye holds still: the population
/// standard deviation of the estimates within each maximal run of
/// consecutive FIXATION samples (at least 2 long), averaged over both axes
/// and weighted by run length. `None` when no such run exists.
pub fn fixation_estimate_std(eval: &ModelEvaluation, labels: &[MovementLabel]) -> Result<Option<f64>> {
    if labels.len() != eval.samples.len() {
        return Err(Error::invalid("one movement label per sample required"));
    }
    let std = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let (mut total, mut weight) = (0.0, 0usize);
    let mut i = 0;
    while i < labels.len() {
        if labels[i] != MovementLabel::Fixation {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < labels.len()
            && labels[j] == MovementLabel::Fixation
            && eval.samples[j].key == eval.samples[i].key
            && eval.samples[j].frame == eval.samples[j - 1].frame + 1
        {
            j += 1;
        }
        if j - i >= 2 {
            let yaw: Vec<f64> = eval.samples[i..j].iter().map(|s| s.pred.yaw_deg).collect();
            let pitch: Vec<f64> = eval.samples[i..j].iter().map(|s| s.pred.pitch_deg).collect();
            total += (std(&yaw) + std(&pitch)) / 2.0 * (j - i) as f64;
            weight += j - i;
        }
        i = j;
    }
    Ok((weight > 0).then(|| total / weight as f64))
}

/// Per-frame ground truth and estimates of one sequence in the eye's own
/// convention (right-eye values mirrored back).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TraceTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Data(e.to_string()))?).map_err(|e| Error::Data(e.to_string()))
    }
}

pub fn export_trace(estimators: &mut [&mut dyn GazeEstimator], seq: &Sequence) -> Result<TraceTable> {
    let unflip = |g: GazeAngles| {
        if seq.normalized && seq.key.side == Side::Right {
            mirror_angles(g)
        } else {
            g
        }
    };
    let mut header: Vec<String> = ["frame", "t_ms", "gt_yaw", "gt_pitch"].map(String::from).to_vec();
    let mut columns = Vec::new();
    for est in estimators.iter_mut() {
        let name = est.name();
        header.push(format!("{name}_yaw"));
        header.push(format!("{name}_pitch"));
        columns.push(est.estimate(seq)?);
    }
    let f = |v: f64| format!("{v:.6}");
    let rows = (0..seq.len())
        .map(|i| {
            let gt = unflip(seq.gaze[i]);
            let mut row = vec![i.to_string(), seq.t_ms[i].to_string(), f(gt.yaw_deg), f(gt.pitch_deg)];
            for col in &columns {
                match col.get(i).copied().flatten() {
                    Some(p) => {
                        let p = unflip(p);
                        row.push(f(p.yaw_deg));
                        row.push(f(p.pitch_deg));
                    }
                    None => row.extend([String::new(), String::new()]),
                }
            }
            row
        })
        .collect();
    Ok(TraceTable { header, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRow {
    pub subject_id: u32,
    pub stats: ErrorStats,
    /// KS p against the pooled remaining subjects; `None` with one subject
    pub ks_p: Option<f64>,
    pub flagged: bool,
}

/// Error statistics per subject, flagging subjects whose mean-error
/// distribution differs from everyone else's (two-sided KS at
/// `SUBJECT_ALPHA`, Bonferroni over subjects).
pub fn per_subject_report(samples: &[EvalSample]) -> Result<Vec<SubjectRow>> {
    let mut by: BTreeMap<u32, Vec<SampleError>> = BTreeMap::new();
    for s in samples {
        by.entry(s.key.subject_id).or_default().push(s.error);
    }
    let k = by.len();
    let mut rows = Vec::with_capacity(k);
    for (&id, errs) in &by {
        let stats = ErrorStats::from_errors(errs)?;
        let ks_p = if k > 1 {
            let mine: Vec<f64> = errs.iter().map(|e| e.mean()).collect();
            let rest: Vec<f64> = by
                .iter()
                .filter(|(o, _)| **o != id)
                .flat_map(|(_, e)| e.iter().map(|e| e.mean()))
                .collect();
            Some(ks_two_sample(&mine, &rest)?.p_value)
        } else {
            None
        };
        rows.push(SubjectRow {
            subject_id: id,
            stats,
            flagged: ks_p.is_some_and(|p| p < SUBJECT_ALPHA / k as f64),
            ks_p,
        });
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_default()
}

pub fn write_metrics_csv(path: &Path, evals: &[ModelEvaluation]) -> Result<()> {
    let mut out = String::from("model,window,mae_yaw,std_yaw,mae_pitch,std_pitch,mae_mean,std_mean\n");
    for e in evals {
        let s = &e.stats;
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            e.name, e.window, s.mae_yaw, s.std_yaw, s.mae_pitch, s.std_pitch, s.mae_mean, s.std_mean
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_movement_csv(path: &Path, cmp: &Comparison) -> Result<()> {
    let mut out = String::from("class,axis,improvement_deg,sem,ks_p,n\n");
    for c in &cmp.classes {
        out.push_str(&format!(
            "{},{},{:.6},{},{},{}\n",
            c.class,
            c.axis.as_str(),
            c.improvement_deg,
            c.sem.map(|s| format!("{s:.6}")).unwrap_or_default(),
            opt(c.ks_p),
            c.n
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_per_subject_csv(path: &Path, evals: &[ModelEvaluation]) -> Result<()> {
    let mut out = String::from("model,subject,n,mae_yaw,std_yaw,mae_pitch,std_pitch,mae_mean,std_mean,ks_p,flagged\n");
    for e in evals {
        for r in per_subject_report(&e.samples)? {
            let s = &r.stats;
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}\n",
                e.name,
                r.subject_id,
                s.n,
                s.mae_yaw,
                s.std_yaw,
                s.mae_pitch,
                s.std_pitch,
                s.mae_mean,
                s.std_mean,
                opt(r.ks_p),
                r.flagged
            ));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::FRAME_PIXELS;
    use FrameLabel::{Fix, Sac};

    fn seq(subject_id: u32, gaze: Vec<GazeAngles>) -> Sequence {
        let n = gaze.len();
        Sequence {
            key: SequenceKey {
                subject_id,
                side: Side::Left,
                sequence: 0,
            },
            pixels: vec![0; n * FRAME_PIXELS],
            labels: vec![Fix; n],
            t_ms: (0..n as u64).map(|i| i * 10).collect(),
            gaze,
            normalized: true,
        }
    }

    fn wavy(n: usize, phase: f64) -> Vec<GazeAngles> {
        (0..n).map(|i| GazeAngles::new((i as f64 * 0.3 + phase).sin() * 10.0, (i as f64 * 0.2).cos() * 5.0)).collect()
    }

    #[test]
    fn common_subset_sizes() {
        for (s, n) in [(1, 100), (5, 96), (10, 91), (15, 86), (20, 81)] {
            assert_eq!(common_subset(100, s).unwrap().len(), n);
        }
        assert_eq!(coverage(100, 20).unwrap(), 0.81);
        assert_eq!(common_subset(100, 20).unwrap()[0], 19);
        assert!(common_subset(100, 101).is_err());
        assert!(common_subset(100, 0).is_err());
    }

    #[test]
    fn ivt_examples() {
        let still = vec![GazeAngles::new(3.0, -2.0); 10];
        assert!(annotate_frames(&still, 75.0).unwrap().iter().all(|&l| l == Fix));
        let mut step = vec![GazeAngles::new(0.0, 0.0); 5];
        step.extend(vec![GazeAngles::new(10.0, 0.0); 5]);
        let labels = annotate_frames(&step, 75.0).unwrap();
        assert_eq!(labels[5], Sac);
        assert_eq!(labels.iter().filter(|&&l| l == Sac).count(), 1);
        assert!(annotate_frames(&still[..1], 75.0).is_err());
        // first frame inherits the second
        let jump = vec![GazeAngles::new(0.0, 0.0), GazeAngles::new(5.0, 0.0), GazeAngles::new(5.0, 0.0)];
        assert_eq!(annotate_frames(&jump, 75.0).unwrap(), [Sac, Sac, Fix]);
    }

    #[test]
    fn window_rule_table() {
        let w = |s: &str| label_window(&s.chars().map(|c| if c == 'F' { Fix } else { Sac }).collect::<Vec<_>>());
        assert_eq!(w(&"F".repeat(20)), MovementLabel::Fixation);
        assert_eq!(w(&format!("{}{}{}", "F".repeat(5), "S".repeat(4), "F".repeat(11))), MovementLabel::FixSacFix);
        assert_eq!(w("SFS"), MovementLabel::Other);
        assert_eq!(w("SSS"), MovementLabel::Saccade);
        assert_eq!(w("FFS"), MovementLabel::FixToSac);
        assert_eq!(w("SFF"), MovementLabel::SacToFix);
        assert_eq!(w(""), MovementLabel::Other);
    }

    #[test]
    fn stub_estimators() {
        let seqs = vec![seq(1, wavy(100, 0.0)), seq(2, wavy(100, 1.0))];
        let e = evaluate_model(&mut EchoEstimator { window: 1 }, &seqs, 20).unwrap();
        assert_eq!(e.stats.mae_mean, 0.0);
        assert_eq!(e.samples.len(), 2 * 81);
        let c = GazeAngles::new(1.5, -0.5);
        let e = evaluate_model(&mut ConstantEstimator { value: c, window: 10 }, &seqs, 20).unwrap();
        let idx = common_subset(100, 20).unwrap();
        let direct: f64 = seqs
            .iter()
            .flat_map(|s| idx.iter().map(move |&i| (s.gaze[i].yaw_deg - 1.5).abs()))
            .sum::<f64>()
            / (2 * 81) as f64;
        assert!((e.stats.mae_yaw - direct).abs() < 1e-12);
        assert!(evaluate_model(&mut EchoEstimator { window: 21 }, &seqs, 20).is_err());
    }

    fn eval_with(errors: &[(f64, f64)]) -> ModelEvaluation {
        let samples: Vec<EvalSample> = errors
            .iter()
            .enumerate()
            .map(|(i, &(y, p))| EvalSample {
                key: SequenceKey {
                    subject_id: (i % 3) as u32,
                    side: Side::Left,
                    sequence: 0,
                },
                frame: i,
                gt: GazeAngles::new(0.0, 0.0),
                pred: GazeAngles::new(y, p),
                error: SampleError { yaw: y, pitch: p },
            })
            .collect();
        let errs: Vec<SampleError> = samples.iter().map(|s| s.error).collect();
        ModelEvaluation {
            name: "M".into(),
            window: 1,
            stats: ErrorStats::from_errors(&errs).unwrap(),
            samples,
        }
    }

    #[test]
    fn identical_models_compare_to_zero() {
        let a = eval_with(&(0..30).map(|i| (i as f64 * 0.1, 1.0)).collect::<Vec<_>>());
        let labels = vec![MovementLabel::Fixation; 30];
        let c = compare_models(&a, &a, &labels).unwrap();
        assert!(c.wilcoxon.is_err());
        assert!(c.classes.iter().all(|k| k.improvement_deg == 0.0));
    }

    #[test]
    fn constant_halving() {
        let a = eval_with(&vec![(1.0, 1.0); 12]);
        let b = eval_with(&vec![(0.5, 0.5); 12]);
        let labels: Vec<MovementLabel> = (0..12).map(|i| MovementLabel::ALL[i % 3]).collect();
        let c = compare_models(&a, &b, &labels).unwrap();
        assert_eq!(c.classes.len(), 6);
        for k in &c.classes {
            assert_eq!(k.improvement_deg, 0.5);
            assert_eq!(k.sem, Some(0.0));
            assert_eq!(k.n, 4);
        }
        assert!(c.wilcoxon.unwrap().p_value < 0.01);
    }

    #[test]
    fn singleton_class_is_untested() {
        let a = eval_with(&[(1.0, 1.0), (2.0, 2.0), (3.0, 1.0)]);
        let b = eval_with(&[(0.5, 1.0), (1.0, 2.0), (2.0, 1.0)]);
        let labels = [MovementLabel::Fixation, MovementLabel::Fixation, MovementLabel::Saccade];
        let c = compare_models(&a, &b, &labels).unwrap();
        let sac: Vec<_> = c.classes.iter().filter(|k| k.class == MovementLabel::Saccade).collect();
        assert_eq!(sac.len(), 2);
        assert!(sac.iter().all(|k| k.ks_p.is_none() && k.sem.is_none() && k.n == 1));
    }

    #[test]
    fn fixation_std_of_flat_estimates_is_zero() {
        let one_run = |mut e: ModelEvaluation| {
            e.samples.iter_mut().for_each(|s| s.key.subject_id = 0);
            e
        };
        let a = one_run(eval_with(&vec![(1.0, 2.0); 10]));
        let labels = vec![MovementLabel::Fixation; 10];
        // interleaved subjects never form a run
        assert_eq!(fixation_estimate_std(&eval_with(&vec![(1.0, 2.0); 10]), &labels).unwrap(), None);
        assert_eq!(fixation_estimate_std(&a, &labels).unwrap(), Some(0.0));
        let alt = one_run(eval_with(&(0..10).map(|i| if i % 2 == 0 { (1.0, 0.0) } else { (-1.0, 0.0) }).collect::<Vec<_>>()));
        assert_eq!(fixation_estimate_std(&alt, &labels).unwrap(), Some(0.5));
        assert_eq!(fixation_estimate_std(&a, &[MovementLabel::Saccade; 10]).unwrap(), None);
    }

    #[test]
    fn trace_layout() {
        let mut s = seq(4, wavy(100, 0.0));
        let mut echo = EchoEstimator { window: 1 };
        let mut late = EchoEstimator { window: 15 };
        let t = export_trace(&mut [&mut echo, &mut late], &s).unwrap();
        assert_eq!(t.header.len(), 4 + 2 * 2);
        assert_eq!(t.rows.iter().filter(|r| r[6].is_empty()).count(), 14);
        assert!(t.rows[..14].iter().all(|r| r[6].is_empty()));
        assert!(t.rows.iter().all(|r| r[4] == r[2] && r[5] == r[3]));
        // right-eye sequences are reported in their own convention
        s.key.side = Side::Right;
        let t2 = export_trace(&mut [&mut echo], &s).unwrap();
        assert_eq!(t2.rows[3][2], format!("{:.6}", -s.gaze[3].yaw_deg));
        assert!(t.to_csv().unwrap().starts_with("frame,t_ms,gt_yaw,gt_pitch,ECHO_yaw"));
    }

    #[test]
    fn subject_report_rows() {
        let a = eval_with(&(0..60).map(|i| ((i % 7) as f64, 1.0)).collect::<Vec<_>>());
        let rows = per_subject_report(&a.samples).unwrap();
        assert_eq!(rows.len(), 3);
        let one: Vec<EvalSample> = a.samples.iter().filter(|s| s.key.subject_id == 0).cloned().collect();
        let rows = per_subject_report(&one).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(!rows[0].flagged && rows[0].ks_p.is_none());
    }
}
