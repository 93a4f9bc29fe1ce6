//! Binary feature files shared by every stage.
//!
//! Layout (little-endian): magic `HMSE`, u32 version, u32 frame count,
//! u32 stream width, u32 frame shift, then `frames × width` float32 values in
//! row-major order. F0 tracks are width-2 streams of (voiced flag, log F0)
//! with NaN standing in for the missing value of unvoiced frames.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::analysis::{F0Track, MelCepstrumSequence};

pub const FEATURE_MAGIC: &[u8; 4] = b"HMSE";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("not a feature file (bad magic)")]
    BadMagic,
    #[error("unsupported feature file version {0}")]
    UnsupportedVersion(u32),
    #[error("feature file truncated: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unexpected stream width {found} (expected {expected})")]
    WidthMismatch { expected: usize, found: usize },
    #[error("frame {0} has inconsistent width")]
    RaggedFrames(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub width: usize,
    pub frame_shift: usize,
    pub frames: Vec<Vec<f32>>,
}

pub fn encode_features(frames: &[Vec<f64>], width: usize, frame_shift: usize) -> Result<Vec<u8>, FeatureError> {
    let mut out = Vec::with_capacity(20 + frames.len() * width * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [FEATURE_VERSION, frames.len() as u32, width as u32, frame_shift as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (t, frame) in frames.iter().enumerate() {
        if frame.len() != width {
            return Err(FeatureError::RaggedFrames(t));
        }
        for &v in frame {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_features(mut bytes: &[u8]) -> Result<FeatureFile, FeatureError> {
    let mut magic = [0u8; 4];
    bytes.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(FeatureError::BadMagic);
    }
    let mut word = || -> Result<u32, FeatureError> {
        let mut b = [0u8; 4];
        bytes.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    };
    let version = word()?;
    if version != FEATURE_VERSION {
        return Err(FeatureError::UnsupportedVersion(version));
    }
    let (count, width, frame_shift) = (word()? as usize, word()? as usize, word()? as usize);
    let expected = count * width;
    let found = bytes.len() / 4;
    if found < expected {
        return Err(FeatureError::Truncated { expected, found });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .take(expected)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let frames = if width == 0 { vec![Vec::new(); count] } else { values.chunks(width).map(<[f32]>::to_vec).collect() };
    Ok(FeatureFile { width, frame_shift, frames })
}

pub fn write_feature_file(
    path: impl AsRef<Path>,
    frames: &[Vec<f64>],
    width: usize,
    frame_shift: usize,
) -> Result<(), FeatureError> {
    let bytes = encode_features(frames, width, frame_shift)?;
    std::fs::File::create(path.as_ref())?.write_all(&bytes)?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureFile, FeatureError> {
    decode_features(&std::fs::read(path.as_ref())?)
}

pub fn f0_to_rows(f0: &F0Track) -> Vec<Vec<f64>> {
    f0.frames
        .iter()
        .map(|f| match f {
            Some(l) => vec![1.0, *l],
            None => vec![0.0, f64::NAN],
        })
        .collect()
}

pub fn write_f0(path: impl AsRef<Path>, f0: &F0Track) -> Result<(), FeatureError> {
    write_feature_file(path, &f0_to_rows(f0), 2, f0.frame_shift)
}

pub fn read_f0(path: impl AsRef<Path>) -> Result<F0Track, FeatureError> {
    let file = read_feature_file(path)?;
    if file.width != 2 {
        return Err(FeatureError::WidthMismatch { expected: 2, found: file.width });
    }
    let frames = file
        .frames
        .iter()
        .map(|row| if row[0] > 0.5 && row[1].is_finite() { Some(f64::from(row[1])) } else { None })
        .collect();
    Ok(F0Track { frame_shift: file.frame_shift, frames })
}

pub fn write_mgc(path: impl AsRef<Path>, mc: &MelCepstrumSequence) -> Result<(), FeatureError> {
    write_feature_file(path, &mc.frames, mc.order + 1, mc.frame_shift)
}

/// The file does not carry alpha; the caller supplies it.
pub fn read_mgc(path: impl AsRef<Path>, alpha: f64) -> Result<MelCepstrumSequence, FeatureError> {
    let file = read_feature_file(path)?;
    if file.width == 0 {
        return Err(FeatureError::WidthMismatch { expected: 1, found: 0 });
    }
    Ok(MelCepstrumSequence {
        order: file.width - 1,
        alpha,
        frame_shift: file.frame_shift,
        frames: file.frames.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect(),
    })
}
