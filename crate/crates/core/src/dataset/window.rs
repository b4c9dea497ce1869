//! Stride-1 sliding windows over contiguous sequences.

use crate::error::{Error, Result};
use crate::geometry::{mirror_angles, GazeAngles};
use crate::render::{mirror_image, EyeFrame, Side};

use super::Sequence;

/// Frame span `[start, last]` of one window inside its sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRange {
    pub start: usize,
    pub last: usize,
}

/// All `len - s + 1` stride-1 windows of `s` frames.
pub fn window_ranges(len: usize, s: usize) -> Result<Vec<WindowRange>> {
    if s == 0 || s > len {
        return Err(Error::invalid(format!("window length {s} must lie in 1..={len}")));
    }
    Ok((0..=len - s)
        .map(|start| WindowRange {
            start,
            last: start + s - 1,
        })
        .collect())
}

/// One many-to-one training unit: `s` consecutive frames and the ground
/// truth of the last one.
#[derive(Debug, Clone)]
pub struct WindowSample<'a> {
    pub frames: Vec<&'a [u8]>,
    pub target: GazeAngles,
    pub last_frame_index: usize,
    pub sequence_index: usize,
    pub subject_id: u32,
    pub side: Side,
}

pub fn windows(seq: &Sequence, s: usize) -> Result<Vec<WindowSample<'_>>> {
    Ok(window_ranges(seq.len(), s)?
        .into_iter()
        .map(|r| WindowSample {
            frames: (r.start..=r.last).map(|i| seq.frame(i)).collect(),
            target: seq.gaze[r.last],
            last_frame_index: r.last,
            sequence_index: seq.key.sequence,
            subject_id: seq.key.subject_id,
            side: seq.key.side,
        })
        .collect())
}

/// Maps raw frames and target to the left-eye convention: right-eye frames
/// are mirrored and their yaw negated, left-eye data passes through.
pub fn normalize_side(frames: &[EyeFrame], target: GazeAngles, side: Side) -> (Vec<EyeFrame>, GazeAngles) {
    match side {
        Side::Left => (frames.to_vec(), target),
        Side::Right => (
            frames
                .iter()
                .map(|f| if f.side == Side::Right { mirror_image(f) } else { f.clone() })
                .collect(),
            mirror_angles(target),
        ),
    }
}
