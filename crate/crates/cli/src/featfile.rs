//! Binary feature file: `HAADFT01`, four little-endian `u32` header fields
//! (`h_p`, `w_p`, `d_in`, count), one label byte per sample, then `f32`
//! payload, sample-major and row-major within a sample.

use std::fs;
use std::path::Path;

use haad::training::Dataset;
use haad::{FeatureGrid, GridShape, Mat};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"HAADFT01";
const HEADER_LEN: usize = 8 + 4 * 4;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureFileError {
    #[error("bad magic: expected \"HAADFT01\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("truncated file: need {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("trailing data: header accounts for {expected} bytes, file has {actual}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("non-finite float at sample {sample}, element {element}")]
    NonFinite { sample: usize, element: usize },
    #[error("invalid label {value} at sample {sample} (expected 0, 1 or 255)")]
    BadLabel { sample: usize, value: u8 },
    #[error("header dimension is zero (h_p={h_p}, w_p={w_p}, d_in={d_in})")]
    ZeroDimension { h_p: u32, w_p: u32, d_in: u32 },
    #[error("header sizes overflow the address space")]
    Overflow,
    #[error("sample {index} does not match the file shape")]
    ShapeMismatch { index: usize },
    #[error("{count} samples but {labels} labels")]
    LabelCount { count: usize, labels: usize },
}

/// Decoded feature file, features promoted to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub shape: GridShape,
    pub labels: Vec<u8>,
    pub samples: Vec<FeatureGrid>,
}

impl FeatureFile {
    pub fn new(shape: GridShape, labels: Vec<u8>, samples: Vec<FeatureGrid>) -> Result<Self, FeatureFileError> {
        if labels.len() != samples.len() {
            return Err(FeatureFileError::LabelCount {
                count: samples.len(),
                labels: labels.len(),
            });
        }
        for (i, s) in samples.iter().enumerate() {
            if s.grid() != shape.patch_grid() || s.d_in() != shape.d_in {
                return Err(FeatureFileError::ShapeMismatch { index: i });
            }
        }
        if let Some((sample, &value)) = labels.iter().enumerate().find(|(_, &y)| y > 1 && y != 255) {
            return Err(FeatureFileError::BadLabel { sample, value });
        }
        Ok(FeatureFile { shape, labels, samples })
    }

    pub fn from_dataset(data: &Dataset) -> Result<Self, FeatureFileError> {
        let d_in = data.d_in().unwrap_or(1);
        let shape = GridShape {
            h_p: data.grid.h_p,
            w_p: data.grid.w_p,
            d_in,
        };
        FeatureFile::new(shape, data.labels.clone(), data.samples.clone())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.iter().all(|&y| y <= 1)
    }

    pub fn into_dataset(self) -> Dataset {
        Dataset::new(self.shape.patch_grid(), self.samples, self.labels).expect("validated on construction")
    }

    pub fn encode(&self) -> Vec<u8> {
        let per = self.shape.h_p * self.shape.w_p * self.shape.d_in;
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (1 + 4 * per));
        out.extend_from_slice(MAGIC);
        for v in [self.shape.h_p, self.shape.w_p, self.shape.d_in, self.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.labels);
        for s in &self.samples {
            for &v in s.features().data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FeatureFileError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(FeatureFileError::BadMagic {
                found: bytes[..bytes.len().min(8)].to_vec(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(FeatureFileError::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
        let (h_p, w_p, d_in, count) = (word(0), word(1), word(2), word(3));
        if h_p == 0 || w_p == 0 || d_in == 0 {
            return Err(FeatureFileError::ZeroDimension { h_p, w_p, d_in });
        }
        let (h, w, d, n) = (h_p as usize, w_p as usize, d_in as usize, count as usize);
        let per = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(d))
            .ok_or(FeatureFileError::Overflow)?;
        let expected = per
            .checked_mul(4)
            .and_then(|v| v.checked_mul(n))
            .and_then(|v| v.checked_add(HEADER_LEN + n))
            .ok_or(FeatureFileError::Overflow)?;
        if bytes.len() < expected {
            return Err(FeatureFileError::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(FeatureFileError::TrailingBytes {
                expected,
                actual: bytes.len(),
            });
        }
        let labels = bytes[HEADER_LEN..HEADER_LEN + n].to_vec();
        if let Some((sample, &value)) = labels.iter().enumerate().find(|(_, &y)| y > 1 && y != 255) {
            return Err(FeatureFileError::BadLabel { sample, value });
        }
        let shape = GridShape { h_p: h, w_p: w, d_in: d };
        let payload = &bytes[HEADER_LEN + n..];
        let mut samples = Vec::with_capacity(n);
        for (sample, chunk) in payload.chunks_exact(4 * per).enumerate() {
            let mut data = Vec::with_capacity(per);
            for (element, b) in chunk.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
                if !v.is_finite() {
                    return Err(FeatureFileError::NonFinite { sample, element });
                }
                data.push(f64::from(v));
            }
            let x = Mat::from_vec(h * w, d, data).expect("sized from header");
            samples.push(FeatureGrid::new(shape.patch_grid(), x).expect("finite"));
        }
        Ok(FeatureFile { shape, labels, samples })
    }
}

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: String, source: FeatureFileError },
}

pub fn read(path: &Path) -> Result<FeatureFile, FileError> {
    let bytes = fs::read(path).map_err(|source| FileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    FeatureFile::decode(&bytes).map_err(|source| FileError::Format {
        path: path.display().to_string(),
        source,
    })
}

pub fn write(path: &Path, file: &FeatureFile) -> Result<(), FileError> {
    fs::write(path, file.encode()).map_err(|source| FileError::Io {
        path: path.display().to_string(),
        source,
    })
}
