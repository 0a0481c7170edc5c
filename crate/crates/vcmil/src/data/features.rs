//! Snippet feature matrices and their on-disk format.
//!
//! Layout: magic `VFEA`, format version u16, snippet count N u32, feature
//! dimension D u32, then N*D f32 values, all little-endian, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"VFEA";
pub const FEATURE_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "normal" => Some(Label::Normal),
            "abnormal" => Some(Label::Abnormal),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        }
    }
}

/// Dense N x D matrix of per-snippet features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<FeatureMatrix> {
        if data.len() != n * d {
            return Err(Error::Contract(format!(
                "feature matrix {}x{} needs {} values, got {}",
                n,
                d,
                n * d,
                data.len()
            )));
        }
        Ok(FeatureMatrix { n, d, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::constant(self.data.clone(), vec![self.n, self.d])
            .expect("matrix invariant guarantees the shape")
    }
}

/// One crop of one video: features plus identity, label, and optional
/// per-frame ground truth (test videos).
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub video_id: String,
    pub crop: u32,
    pub label: Label,
    pub features: FeatureMatrix,
    pub frame_gt: Option<Vec<u8>>,
}

pub fn save_features(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(FEATURE_MAGIC).map_err(io_err)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(m.n as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(m.d as u32).to_le_bytes()).map_err(io_err)?;
    for v in &m.data {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Load a feature file. When `expect_dim` is given, a differing header D is a
/// dimension error (the caller knows what the model was configured for).
pub fn load_features(path: &Path, expect_dim: Option<usize>) -> Result<FeatureMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path, "magic")?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            expected: "VFEA",
        });
    }
    let version = u16::from_le_bytes(read_array(&mut r, path, "version")?);
    if version != FEATURE_VERSION {
        return Err(Error::VersionMismatch {
            path: path.display().to_string(),
            found: version,
            supported: FEATURE_VERSION,
        });
    }
    let n = u32::from_le_bytes(read_array(&mut r, path, "snippet count")?) as usize;
    let d = u32::from_le_bytes(read_array(&mut r, path, "feature dim")?) as usize;
    if let Some(expect) = expect_dim {
        if d != expect {
            return Err(Error::DimMismatch {
                expected: expect,
                found: d,
            });
        }
    }

    let mut payload = vec![0u8; n * d * 4];
    read_exact(&mut r, &mut payload, path, "payload")?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Truncated {
            path: path.display().to_string(),
            detail: "trailing bytes after payload".into(),
        });
    }

    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureMatrix::new(n, d, data)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Truncated {
        path: path.display().to_string(),
        detail: format!("short read in {}", what),
    })
}

fn read_array<const K: usize>(r: &mut impl Read, path: &Path, what: &str) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    read_exact(r, &mut buf, path, what)?;
    Ok(buf)
}

/// Scale each snippet row to unit Euclidean norm; zero rows stay zero.
/// Idempotent.
pub fn l2_normalize_features(m: &mut FeatureMatrix) {
    for i in 0..m.n {
        let row = &mut m.data[i * m.d..(i + 1) * m.d];
        let norm: f64 = row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        }
    }
}
