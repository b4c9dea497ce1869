//! The synthetic corpus: generation, on-disk layout, subject splits, and
//! sliding windows.
//!
//! Layout under the dataset root:
//!
//! ```text
//! manifest.json
//! sub{SSS}/{L|R}/seq{NN}/frame{FFF}.pgm
//! sub{SSS}/{L|R}/seq{NN}/gt.csv      frame,t_ms,yaw_deg,pitch_deg,label
//! ```

pub mod pgm;
mod split;
mod window;

pub use split::{split_counts, split_subjects, Split, MIN_SUBJECTS};
pub use window::{normalize_side, window_ranges, windows, WindowRange, WindowSample};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{mirror_angles, GazeAngles};
use crate::oculomotor::{generate_stimulus, simulate_scanpath, AngleRange, FrameLabel, OculomotorParams};
use crate::render::{mirror_image, render_eye, sample_subject, EyeFrame, Side, SubjectAppearance, FRAME_PIXELS};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GT_FILE: &str = "gt.csv";
pub const MANIFEST_VERSION: u32 = 1;
pub const SEQUENCES_PER_RECORDING: usize = 10;
pub const FRAMES_PER_SEQUENCE: usize = 100;
pub const SIDES: [Side; 2] = [Side::Left, Side::Right];

/// Frames generated for `n_subjects` (two eyes, 10 x 100 frames each).
pub fn total_frames(n_subjects: usize) -> usize {
    n_subjects * SIDES.len() * SEQUENCES_PER_RECORDING * FRAMES_PER_SEQUENCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub yaw_range: AngleRange,
    pub pitch_range: AngleRange,
    /// fixation targets per recording; the 10 sequences are drawn from the
    /// resulting trace
    pub fixations_per_recording: usize,
    pub oculomotor: OculomotorParams,
    /// standard deviation of additive sensor noise, in intensity units
    pub noise_sigma: f64,
    pub glints_enabled: bool,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            yaw_range: AngleRange::default(),
            pitch_range: AngleRange::default(),
            fixations_per_recording: 12,
            oculomotor: OculomotorParams::default(),
            noise_sigma: 25.0,
            glints_enabled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    /// dataset root relative to the manifest; always `.` so the manifest
    /// is independent of where the dataset lives
    pub root: String,
    pub n_subjects: usize,
    pub seed: u64,
    pub total_frames: usize,
    pub generation: GenerationParams,
    pub subjects: Vec<SubjectAppearance>,
    pub split: BTreeMap<u32, Split>,
}

impl DatasetManifest {
    pub fn subjects_in(&self, split: Split) -> Vec<u32> {
        self.split.iter().filter(|(_, s)| **s == split).map(|(id, _)| *id).collect()
    }

    pub fn split_of(&self, subject_id: u32) -> Option<Split> {
        self.split.get(&subject_id).copied()
    }

    pub fn validate(&self) -> Result<()> {
        if self.split.len() != self.n_subjects {
            return Err(Error::Data("split does not cover every subject".into()));
        }
        if self.total_frames != total_frames(self.n_subjects) {
            return Err(Error::Data("manifest frame count is inconsistent".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// SHA-256 of the manifest file, hex encoded.
pub fn manifest_hash(root: &Path) -> Result<String> {
    let path = root.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SequenceKey {
    pub subject_id: u32,
    pub side: Side,
    pub sequence: usize,
}

impl SequenceKey {
    pub fn dir(&self, root: &Path) -> PathBuf {
        root.join(format!("sub{:03}", self.subject_id))
            .join(self.side.letter())
            .join(format!("seq{:02}", self.sequence))
    }

    /// Compact identifier such as `sub003_R_seq07`.
    pub fn tag(&self) -> String {
        format!("sub{:03}_{}_seq{:02}", self.subject_id, self.side.letter(), self.sequence)
    }
}

pub fn frame_path(root: &Path, key: SequenceKey, frame: usize) -> PathBuf {
    key.dir(root).join(format!("frame{frame:03}.pgm"))
}

/// A contiguous run of frames with per-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub key: SequenceKey,
    /// `len * FRAME_PIXELS` bytes, frame-major
    pub pixels: Vec<u8>,
    pub gaze: Vec<GazeAngles>,
    pub labels: Vec<FrameLabel>,
    pub t_ms: Vec<u64>,
    /// true once right-eye data has been mirrored into the left-eye convention
    pub normalized: bool,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.gaze.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaze.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        &self.pixels[i * FRAME_PIXELS..(i + 1) * FRAME_PIXELS]
    }

    pub fn eye_frame(&self, i: usize) -> EyeFrame {
        let side = if self.normalized { Side::Left } else { self.key.side };
        EyeFrame {
            pixels: self.frame(i).to_vec(),
            side,
        }
    }

    /// Left-eye convention: right-eye frames mirrored, yaw negated.
    /// Idempotent.
    pub fn normalize_side(mut self) -> Self {
        if self.normalized {
            return self;
        }
        if self.key.side == Side::Right {
            let mut pixels = Vec::with_capacity(self.pixels.len());
            for i in 0..self.len() {
                pixels.extend(mirror_image(&self.eye_frame(i)).pixels);
            }
            self.pixels = pixels;
            self.gaze = self.gaze.iter().map(|g| mirror_angles(*g)).collect();
        }
        self.normalized = true;
        self
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GtRow {
    frame: usize,
    t_ms: u64,
    yaw_deg: f64,
    pitch_deg: f64,
    label: FrameLabel,
}

pub fn write_gt(path: &Path, t_ms: &[u64], gaze: &[GazeAngles], labels: &[FrameLabel]) -> Result<()> {
    let mut out = String::from("frame,t_ms,yaw_deg,pitch_deg,label\n");
    for (i, ((t, g), l)) in t_ms.iter().zip(gaze).zip(labels).enumerate() {
        out.push_str(&format!("{i},{t},{:.6},{:.6},{}\n", g.yaw_deg, g.pitch_deg, l.as_str()));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_gt(path: &Path) -> Result<(Vec<u64>, Vec<GazeAngles>, Vec<FrameLabel>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["frame", "t_ms", "yaw_deg", "pitch_deg", "label"] {
        return Err(Error::Data(format!("{}: unexpected header {headers:?}", path.display())));
    }
    let (mut t, mut g, mut l) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in reader.deserialize::<GtRow>().enumerate() {
        let row = row?;
        if row.frame != i {
            return Err(Error::Data(format!("{}: frame {} out of order", path.display(), row.frame)));
        }
        t.push(row.t_ms);
        g.push(GazeAngles::new(row.yaw_deg, row.pitch_deg));
        l.push(row.label);
    }
    Ok((t, g, l))
}

/// Loads one sequence exactly as stored (no side normalization).
pub fn load_sequence(root: &Path, key: SequenceKey) -> Result<Sequence> {
    let (t_ms, gaze, labels) = read_gt(&key.dir(root).join(GT_FILE))?;
    let mut pixels = Vec::with_capacity(gaze.len() * FRAME_PIXELS);
    for i in 0..gaze.len() {
        pixels.extend(pgm::read(&frame_path(root, key, i), key.side)?.pixels);
    }
    Ok(Sequence {
        key,
        pixels,
        gaze,
        labels,
        t_ms,
        normalized: false,
    })
}

/// An opened dataset root with its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(Self { root, manifest })
    }

    pub fn keys(&self, split: Split) -> Vec<SequenceKey> {
        let mut keys = Vec::new();
        for subject_id in self.manifest.subjects_in(split) {
            for side in SIDES {
                for sequence in 0..SEQUENCES_PER_RECORDING {
                    keys.push(SequenceKey {
                        subject_id,
                        side,
                        sequence,
                    });
                }
            }
        }
        keys
    }

    /// Raw sequences of a split in key order.
    pub fn load_split(&self, split: Split) -> Result<Vec<Sequence>> {
        self.keys(split)
            .into_par_iter()
            .map(|k| load_sequence(&self.root, k))
            .collect()
    }

    /// Left-eye-normalized sequences of a split in key order.
    pub fn load_normalized(&self, split: Split) -> Result<Vec<Sequence>> {
        Ok(self.load_split(split)?.into_iter().map(Sequence::normalize_side).collect())
    }
}

/// Start frames of `count` non-overlapping `len`-frame segments drawn from a
/// trace of `total` frames.
fn pick_segments(total: usize, count: usize, len: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let need = count * len;
    if total < need {
        return Err(Error::Generation(format!("trace of {total} frames cannot hold {count} x {len} frames")));
    }
    let slack = total - need;
    let mut offsets: Vec<usize> = (0..count).map(|_| rng.random_range(0..=slack)).collect();
    offsets.sort_unstable();
    Ok(offsets.iter().enumerate().map(|(k, o)| o + k * len).collect())
}

/// Ground truth for one subject: the 10 selected sequences of the scanpath
/// (shared by both eyes).
fn subject_trace(
    subject_id: u32,
    seed: u64,
    params: &GenerationParams,
) -> Result<Vec<(Vec<u64>, Vec<GazeAngles>, Vec<FrameLabel>)>> {
    let sid = subject_id as u64;
    let script = generate_stimulus(
        seed::derive(seed, &[sid]),
        params.fixations_per_recording,
        params.yaw_range,
        params.pitch_range,
    )?;
    let path = simulate_scanpath(&script, &params.oculomotor, seed::derive(seed, &[sid]))?;
    let starts = pick_segments(
        path.len(),
        SEQUENCES_PER_RECORDING,
        FRAMES_PER_SEQUENCE,
        &mut seed::rng(seed, &[seed::SEQUENCE_PICK, sid]),
    )?;
    let mut out = Vec::with_capacity(starts.len());
    for start in starts {
        let frames = &path[start..start + FRAMES_PER_SEQUENCE];
        if frames.iter().any(|f| !f.gaze.is_finite() || !f.gaze.within(90.0)) {
            return Err(Error::Generation(format!("subject {subject_id}: gaze outside ±90°")));
        }
        out.push((
            frames.iter().map(|f| f.t_ms).collect(),
            frames.iter().map(|f| f.gaze).collect(),
            frames.iter().map(|f| f.label).collect(),
        ));
    }
    Ok(out)
}

fn write_recording(
    root: &Path,
    app: &SubjectAppearance,
    side: Side,
    trace: &[(Vec<u64>, Vec<GazeAngles>, Vec<FrameLabel>)],
    seed: u64,
    noise_sigma: f64,
) -> Result<()> {
    for (k, (t_ms, gaze, labels)) in trace.iter().enumerate() {
        let key = SequenceKey {
            subject_id: app.subject_id,
            side,
            sequence: k,
        };
        let dir = key.dir(root);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (j, g) in gaze.iter().enumerate() {
            let frame_seed = seed::derive(
                seed,
                &[seed::FRAME_NOISE, app.subject_id as u64, side as u64, k as u64, j as u64],
            );
            let frame = render_eye(*g, app, noise_sigma, frame_seed, side)
                .map_err(|e| Error::Generation(format!("{}: {e}", key.tag())))?;
            pgm::write(&frame_path(root, key, j), &frame)?;
        }
        write_gt(&dir.join(GT_FILE), t_ms, gaze, labels)?;
    }
    Ok(())
}

/// Generates, persists, and splits a corpus of `n_subjects` subjects.
///
/// Recordings are generated in parallel; the manifest is written last, once
/// every recording succeeded.
pub fn build_dataset(n_subjects: usize, seed: u64, out_dir: &Path, params: &GenerationParams) -> Result<DatasetManifest> {
    if n_subjects < MIN_SUBJECTS {
        return Err(Error::invalid(format!("need at least {MIN_SUBJECTS} subjects, got {n_subjects}")));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ids: Vec<u32> = (0..n_subjects as u32).collect();
    let subjects: Vec<SubjectAppearance> = ids
        .iter()
        .map(|&id| {
            let mut app = sample_subject(id, seed);
            app.glints_enabled = params.glints_enabled;
            app
        })
        .collect();

    let jobs: Vec<(usize, Side)> = (0..n_subjects).flat_map(|i| SIDES.map(|s| (i, s))).collect();
    let traces: Vec<_> = ids
        .par_iter()
        .map(|&id| subject_trace(id, seed, params))
        .collect::<Result<_>>()?;
    jobs.par_iter()
        .map(|&(i, side)| write_recording(out_dir, &subjects[i], side, &traces[i], seed, params.noise_sigma))
        .collect::<Result<Vec<()>>>()?;

    let (train, val, test) = split_subjects(&ids, seed)?;
    let mut split = BTreeMap::new();
    for (ids, s) in [(train, Split::Train), (val, Split::Val), (test, Split::Test)] {
        for id in ids {
            split.insert(id, s);
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        root: ".".into(),
        n_subjects,
        seed,
        total_frames: total_frames(n_subjects),
        generation: params.clone(),
        subjects,
        split,
    };
    manifest.validate()?;
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
