//! Manifest files: one tab-separated entry per (video, crop).
//!
//! Fields: feature path, video id, label, split, crop index, optional
//! ground-truth path. Feature and gt paths are resolved relative to the
//! manifest's directory unless absolute.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::features::{load_features, FeatureSequence, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub video_id: String,
    pub label: Label,
    pub split: Split,
    pub crop: u32,
    pub gt_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |detail: String| Error::Manifest {
            path: path.display().to_string(),
            line: lineno + 1,
            detail,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 5 || fields.len() > 6 {
            return Err(err(format!(
                "expected 5 or 6 tab-separated fields, got {}",
                fields.len()
            )));
        }
        let label = Label::parse(fields[2])
            .ok_or_else(|| err(format!("unknown label '{}'", fields[2])))?;
        let split = Split::parse(fields[3])
            .ok_or_else(|| err(format!("unknown split '{}'", fields[3])))?;
        let crop: u32 = fields[4]
            .parse()
            .map_err(|_| err(format!("bad crop index '{}'", fields[4])))?;
        if !seen.insert((fields[1].to_string(), crop)) {
            return Err(err(format!(
                "duplicate (video_id, crop) = ({}, {})",
                fields[1], crop
            )));
        }
        let resolve = |f: &str| {
            let p = Path::new(f);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        entries.push(ManifestEntry {
            path: resolve(fields[0]),
            video_id: fields[1].to_string(),
            label,
            split,
            crop,
            gt_path: fields.get(5).filter(|s| !s.is_empty()).map(|s| resolve(s)),
        });
    }
    Ok(Manifest { entries })
}

/// Write entries with paths relativized to the manifest directory when
/// possible, so a dataset directory stays relocatable.
pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = String::new();
    for e in &manifest.entries {
        let rel = |p: &Path| {
            p.strip_prefix(base)
                .unwrap_or(p)
                .display()
                .to_string()
        };
        out.push_str(&rel(&e.path));
        out.push('\t');
        out.push_str(&e.video_id);
        out.push('\t');
        out.push_str(e.label.name());
        out.push('\t');
        out.push_str(e.split.name());
        out.push('\t');
        out.push_str(&e.crop.to_string());
        if let Some(gt) = &e.gt_path {
            out.push('\t');
            out.push_str(&rel(gt));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-frame ground truth: one `0` or `1` per line.
pub fn load_gt(path: &Path) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut gt = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        match line.trim() {
            "" => continue,
            "0" => gt.push(0),
            "1" => gt.push(1),
            other => {
                return Err(Error::Manifest {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    detail: format!("ground truth must be 0 or 1, got '{}'", other),
                })
            }
        }
    }
    Ok(gt)
}

/// Load every sequence of a split, with features and (when referenced) ground
/// truth. `expect_dim` guards against mixing datasets and model configs.
pub fn load_split(
    manifest: &Manifest,
    split: Split,
    expect_dim: Option<usize>,
) -> Result<Vec<FeatureSequence>> {
    let mut out = Vec::new();
    for e in manifest.split(split) {
        let features = load_features(&e.path, expect_dim)?;
        let frame_gt = match &e.gt_path {
            Some(p) => Some(load_gt(p)?),
            None => None,
        };
        out.push(FeatureSequence {
            video_id: e.video_id.clone(),
            crop: e.crop,
            label: e.label,
            features,
            frame_gt,
        });
    }
    Ok(out)
}
