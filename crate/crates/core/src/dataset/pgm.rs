//! Binary PGM (`P5`, maxval 255) frame files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::render::{EyeFrame, Side, FRAME_HEIGHT, FRAME_WIDTH};

pub fn encode(frame: &EyeFrame) -> Vec<u8> {
    let mut out = format!("P5\n{FRAME_WIDTH} {FRAME_HEIGHT}\n255\n").into_bytes();
    out.extend_from_slice(&frame.pixels);
    out
}

pub fn write(path: &Path, frame: &EyeFrame) -> Result<()> {
    fs::write(path, encode(frame)).map_err(|e| Error::io(path, e))
}

/// Parses a P5 image, accepting arbitrary header whitespace and comments.
pub fn decode(bytes: &[u8], side: Side) -> Result<EyeFrame> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::Data(format!("not a binary PGM (magic `{}`)", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Data(format!("bad PGM header field `{s}`")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if (w, h, maxval) != (FRAME_WIDTH, FRAME_HEIGHT, 255) {
        return Err(Error::Data(format!("expected {FRAME_WIDTH}x{FRAME_HEIGHT} maxval 255, got {w}x{h} maxval {maxval}")));
    }
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| Error::Data("truncated PGM raster".into()))?;
    EyeFrame::new(raster.to_vec(), side)
}

pub fn read(path: &Path, side: Side) -> Result<EyeFrame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, side).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
