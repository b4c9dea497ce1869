//! Analytic rendering of 100x160 grayscale eye images.
//!
//! The eye is drawn as a sclera region bounded by two parabolic eyelids,
//! an iris disc with a darker pupil, and optional corneal glints, all
//! rasterized with 2x2 supersampling before additive Gaussian sensor noise.
//! Right-eye frames are the mirror image of the left-eye geometry.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mirror_angles, GazeAngles};
use crate::seed;

pub const FRAME_HEIGHT: usize = 100;
pub const FRAME_WIDTH: usize = 160;
pub const FRAME_PIXELS: usize = FRAME_HEIGHT * FRAME_WIDTH;

const PUPIL_INTENSITY: f64 = 12.0;
const GLINT_INTENSITY: f64 = 255.0;
const EYE_HALF_WIDTH_PX: f64 = 60.0;
/// Fraction of the vertical iris displacement followed by the eyelids.
const LID_FOLLOW: f64 = 0.5;
/// Relative change of the upper-lid height per degree of pitch.
const LID_APERTURE_PER_DEG: f64 = 0.02;
/// Largest gaze magnitude accepted by the renderer.
pub const MAX_RENDER_DEG: f64 = 45.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

impl Side {
    pub fn letter(&self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }

    pub fn flipped(&self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

impl std::str::FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" | "LEFT" | "left" => Ok(Side::Left),
            "R" | "RIGHT" | "right" => Ok(Side::Right),
            _ => Err(Error::invalid(format!("unknown side `{s}`"))),
        }
    }
}

/// One 100x160 8-bit monocular eye image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EyeFrame {
    pub pixels: Vec<u8>,
    pub side: Side,
}

impl EyeFrame {
    pub fn new(pixels: Vec<u8>, side: Side) -> Result<Self> {
        if pixels.len() != FRAME_PIXELS {
            return Err(Error::shape(format!("eye frame needs {FRAME_PIXELS} pixels, got {}", pixels.len())));
        }
        Ok(Self { pixels, side })
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * FRAME_WIDTH + col]
    }
}

/// Columns reversed, side toggled.
pub fn mirror_image(f: &EyeFrame) -> EyeFrame {
    let mut pixels = Vec::with_capacity(f.pixels.len());
    for row in f.pixels.chunks_exact(FRAME_WIDTH) {
        pixels.extend(row.iter().rev());
    }
    EyeFrame {
        pixels,
        side: f.side.flipped(),
    }
}

/// Per-subject eye appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectAppearance {
    pub subject_id: u32,
    pub iris_radius_px: f64,
    pub pupil_to_iris_ratio: f64,
    pub sclera_intensity: f64,
    pub iris_intensity: f64,
    pub skin_intensity: f64,
    /// upper-lid height above the lid baseline at straight-ahead gaze
    pub eyelid_aperture_px: f64,
    /// (x, y) offset of the eye center from the frame center
    pub eye_center_offset_px: [f64; 2],
    /// iris displacement per degree of (yaw, pitch)
    pub gain_per_degree_px: [f64; 2],
    pub glints_enabled: bool,
    pub seed: u64,
}

/// Sampling ranges for [`sample_subject`]; every draw is uniform.
pub mod ranges {
    pub const IRIS_RADIUS_PX: (f64, f64) = (15.0, 19.0);
    pub const PUPIL_TO_IRIS: (f64, f64) = (0.35, 0.55);
    pub const SCLERA: (f64, f64) = (170.0, 220.0);
    pub const IRIS: (f64, f64) = (70.0, 120.0);
    pub const SKIN: (f64, f64) = (110.0, 160.0);
    pub const EYELID_APERTURE_PX: (f64, f64) = (18.0, 24.0);
    pub const CENTER_OFFSET_X_PX: (f64, f64) = (-3.0, 3.0);
    pub const CENTER_OFFSET_Y_PX: (f64, f64) = (-2.0, 2.0);
    pub const GAIN_YAW_PX: (f64, f64) = (1.9, 2.1);
    pub const GAIN_PITCH_PX: (f64, f64) = (1.15, 1.25);
}

fn mid(r: (f64, f64)) -> f64 {
    0.5 * (r.0 + r.1)
}

impl Default for SubjectAppearance {
    /// Midpoint of every sampling range.
    fn default() -> Self {
        use ranges::*;
        Self {
            subject_id: 0,
            iris_radius_px: mid(IRIS_RADIUS_PX),
            pupil_to_iris_ratio: mid(PUPIL_TO_IRIS),
            sclera_intensity: mid(SCLERA),
            iris_intensity: mid(IRIS),
            skin_intensity: mid(SKIN),
            eyelid_aperture_px: mid(EYELID_APERTURE_PX),
            eye_center_offset_px: [0.0, 0.0],
            gain_per_degree_px: [2.0, 1.2],
            glints_enabled: false,
            seed: 0,
        }
    }
}

impl SubjectAppearance {
    pub fn validate(&self) -> Result<()> {
        if !(self.pupil_to_iris_ratio > 0.0 && self.pupil_to_iris_ratio < 1.0) {
            return Err(Error::invalid("pupil/iris ratio must lie in (0, 1)"));
        }
        for v in [self.sclera_intensity, self.iris_intensity, self.skin_intensity] {
            if !(0.0..=255.0).contains(&v) {
                return Err(Error::invalid("intensities must lie in [0, 255]"));
            }
        }
        if !(self.iris_radius_px > 0.0 && self.eyelid_aperture_px > 0.0) {
            return Err(Error::invalid("iris radius and eyelid aperture must be positive"));
        }
        let (cx, cy) = self.eye_center();
        let r = self.iris_radius_px;
        if cx - r < 0.0 || cx + r > FRAME_WIDTH as f64 || cy - r < 0.0 || cy + r > FRAME_HEIGHT as f64 {
            return Err(Error::invalid("iris does not fit in the frame at straight-ahead gaze"));
        }
        Ok(())
    }

    fn eye_center(&self) -> (f64, f64) {
        (
            FRAME_WIDTH as f64 / 2.0 + self.eye_center_offset_px[0],
            FRAME_HEIGHT as f64 / 2.0 + self.eye_center_offset_px[1],
        )
    }

    /// Iris center in pixel coordinates (x right, y down) for a left eye.
    pub fn iris_center(&self, gaze: GazeAngles) -> (f64, f64) {
        let (cx, cy) = self.eye_center();
        (
            cx + self.gain_per_degree_px[0] * gaze.yaw_deg,
            cy - self.gain_per_degree_px[1] * gaze.pitch_deg,
        )
    }
}

pub fn sample_subject(subject_id: u32, rng_seed: u64) -> SubjectAppearance {
    use ranges::*;
    let mut rng = seed::rng(rng_seed, &[seed::APPEARANCE, subject_id as u64]);
    let mut draw = |r: (f64, f64)| rng.random_range(r.0..r.1);
    SubjectAppearance {
        subject_id,
        iris_radius_px: draw(IRIS_RADIUS_PX),
        pupil_to_iris_ratio: draw(PUPIL_TO_IRIS),
        sclera_intensity: draw(SCLERA),
        iris_intensity: draw(IRIS),
        skin_intensity: draw(SKIN),
        eyelid_aperture_px: draw(EYELID_APERTURE_PX),
        eye_center_offset_px: [draw(CENTER_OFFSET_X_PX), draw(CENTER_OFFSET_Y_PX)],
        gain_per_degree_px: [draw(GAIN_YAW_PX), draw(GAIN_PITCH_PX)],
        glints_enabled: false,
        seed: seed::derive(rng_seed, &[seed::APPEARANCE, subject_id as u64]),
    }
}

struct Scene<'a> {
    app: &'a SubjectAppearance,
    cx: f64,
    iris: (f64, f64),
    pupil_r: f64,
    lid_base: f64,
    upper_h: f64,
    lower_h: f64,
    glints: [(f64, f64); 2],
}

impl Scene<'_> {
    fn new(app: &SubjectAppearance, gaze: GazeAngles) -> Scene<'_> {
        let (cx, cy) = app.eye_center();
        let iris = app.iris_center(gaze);
        let lid_base = cy - LID_FOLLOW * app.gain_per_degree_px[1] * gaze.pitch_deg;
        let upper_h = app.eyelid_aperture_px * (1.0 + LID_APERTURE_PER_DEG * gaze.pitch_deg).clamp(0.3, 1.4);
        let r = app.iris_radius_px;
        Scene {
            app,
            cx,
            iris,
            pupil_r: r * app.pupil_to_iris_ratio,
            lid_base,
            upper_h,
            lower_h: 0.8 * app.eyelid_aperture_px,
            glints: [(iris.0 - 0.35 * r, iris.1 + 0.25 * r), (iris.0 + 0.35 * r, iris.1 + 0.25 * r)],
        }
    }

    fn lids(&self, x: f64) -> Option<(f64, f64)> {
        let u = (x - self.cx) / EYE_HALF_WIDTH_PX;
        (u.abs() < 1.0).then(|| {
            let s = 1.0 - u * u;
            (self.lid_base - self.upper_h * s, self.lid_base + self.lower_h * s)
        })
    }

    fn in_opening(&self, x: f64, y: f64) -> bool {
        matches!(self.lids(x), Some((top, bottom)) if y > top && y < bottom)
    }

    fn in_iris(&self, x: f64, y: f64) -> bool {
        let d2 = (x - self.iris.0).powi(2) + (y - self.iris.1).powi(2);
        d2 < self.app.iris_radius_px.powi(2) && self.in_opening(x, y)
    }

    fn intensity(&self, x: f64, y: f64) -> f64 {
        let app = self.app;
        match self.lids(x) {
            Some((top, bottom)) if y > top && y < bottom => {
                if app.glints_enabled
                    && self.glints.iter().any(|g| (x - g.0).powi(2) + (y - g.1).powi(2) < 2.25)
                {
                    return GLINT_INTENSITY;
                }
                let d = ((x - self.iris.0).powi(2) + (y - self.iris.1).powi(2)).sqrt();
                if d < self.pupil_r {
                    PUPIL_INTENSITY
                } else if d < app.iris_radius_px {
                    // darker limbus ring
                    app.iris_intensity * (0.8 + 0.2 * (1.0 - d / app.iris_radius_px))
                } else {
                    let u = (x - self.cx) / EYE_HALF_WIDTH_PX;
                    app.sclera_intensity * (1.0 - 0.15 * u * u)
                }
            }
            Some((top, _)) if y <= top && y > top - 2.5 => app.skin_intensity * 0.35,
            _ => {
                let v = (y - FRAME_HEIGHT as f64 / 2.0) / FRAME_HEIGHT as f64;
                app.skin_intensity * (1.0 - 0.3 * v * v)
            }
        }
    }
}

const SUBSAMPLES: [f64; 2] = [0.25, 0.75];

fn render_left(gaze: GazeAngles, app: &SubjectAppearance, noise_sigma: f64, frame_rng_seed: u64) -> Result<Vec<u8>> {
    let scene = Scene::new(app, gaze);
    let mut rng = seed::rng(frame_rng_seed, &[seed::FRAME_NOISE]);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut pixels = Vec::with_capacity(FRAME_PIXELS);
    for row in 0..FRAME_HEIGHT {
        for col in 0..FRAME_WIDTH {
            let mut acc = 0.0;
            for dy in SUBSAMPLES {
                for dx in SUBSAMPLES {
                    acc += scene.intensity(col as f64 + dx, row as f64 + dy);
                }
            }
            let mut v = acc / 4.0;
            if noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(pixels)
}

/// Renders one eye image. Deterministic in all arguments.
pub fn render_eye(
    gaze: GazeAngles,
    app: &SubjectAppearance,
    noise_sigma: f64,
    frame_rng_seed: u64,
    side: Side,
) -> Result<EyeFrame> {
    if !gaze.is_finite() || !gaze.within(MAX_RENDER_DEG) {
        return Err(Error::invalid(format!("gaze {gaze:?} outside ±{MAX_RENDER_DEG}°")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::invalid("noise sigma must be non-negative"));
    }
    let left_gaze = match side {
        Side::Left => gaze,
        Side::Right => mirror_angles(gaze),
    };
    let (ix, iy) = app.iris_center(left_gaze);
    let r = app.iris_radius_px;
    if ix + r <= 0.0 || ix - r >= FRAME_WIDTH as f64 || iy + r <= 0.0 || iy - r >= FRAME_HEIGHT as f64 {
        return Err(Error::invalid(format!("iris falls outside the frame at gaze {gaze:?}")));
    }
    let left = EyeFrame {
        pixels: render_left(left_gaze, app, noise_sigma, frame_rng_seed)?,
        side: Side::Left,
    };
    Ok(match side {
        Side::Left => left,
        Side::Right => mirror_image(&left),
    })
}

/// Number of supersampled iris points visible between the eyelids
/// (pixel-center sampling), used to quantify occlusion.
pub fn visible_iris_pixels(gaze: GazeAngles, app: &SubjectAppearance) -> usize {
    let scene = Scene::new(app, gaze);
    let mut n = 0;
    for row in 0..FRAME_HEIGHT {
        for col in 0..FRAME_WIDTH {
            n += usize::from(scene.in_iris(col as f64 + 0.5, row as f64 + 0.5));
        }
    }
    n
}
