//! Synthetic dataset generator for desk-scale verification.
//!
//! Videos are clouds of Gaussian snippets around a "normal" center; abnormal
//! videos carry one contiguous window of snippets around an "anomaly" center
//! with a larger feature magnitude. Test videos get per-frame ground truth
//! marking exactly the planted window. Everything is a pure function of the
//! seed.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::features::{save_features, FeatureMatrix, Label};
use super::manifest::{save_manifest, Manifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

pub const FRAMES_PER_SNIPPET: usize = 16;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub d: usize,
    /// Fraction of each split generated as abnormal videos.
    pub anomaly_rate: f64,
    pub snippets_min: usize,
    pub snippets_max: usize,
    pub noise_sigma: f64,
    /// Feature crops per video; training treats them as independent samples,
    /// evaluation averages them.
    pub crops: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 40,
            n_test: 20,
            d: 64,
            anomaly_rate: 0.5,
            snippets_min: 24,
            snippets_max: 96,
            noise_sigma: 0.5,
            crops: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_train == 0 && self.n_test == 0 {
            return Err(Error::Config("nothing to generate: zero videos".into()));
        }
        if self.d == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.anomaly_rate) {
            return Err(Error::Config(format!(
                "anomaly_rate {} outside [0, 1]",
                self.anomaly_rate
            )));
        }
        if self.snippets_min == 0 || self.snippets_min > self.snippets_max {
            return Err(Error::Config(format!(
                "bad snippet range {}..={}",
                self.snippets_min, self.snippets_max
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        if self.crops == 0 {
            return Err(Error::Config("crops must be at least 1".into()));
        }
        Ok(())
    }
}

/// Euclidean magnitudes of the two cluster centers. The anomaly center is
/// deliberately larger so magnitude-based selection has signal to find.
const NORMAL_CENTER_NORM: f64 = 4.0;
const ANOMALY_CENTER_NORM: f64 = 10.0;

fn unit_vector(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generate feature files, ground truth, and a manifest under `dir`.
/// Returns the manifest (already saved as `manifest.tsv`).
pub fn generate(dir: &Path, config: &SynthConfig) -> Result<Manifest> {
    config.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = stream_rng(config.seed, stream::SYNTH, 0);

    let normal_center: Vec<f64> = unit_vector(config.d, &mut rng)
        .into_iter()
        .map(|x| x * NORMAL_CENTER_NORM)
        .collect();
    let anomaly_center: Vec<f64> = unit_vector(config.d, &mut rng)
        .into_iter()
        .map(|x| x * ANOMALY_CENTER_NORM)
        .collect();

    let mut entries = Vec::new();
    for (split, count) in [(Split::Train, config.n_train), (Split::Test, config.n_test)] {
        let n_abnormal = (count as f64 * config.anomaly_rate).round() as usize;
        for v in 0..count {
            let label = if v < n_abnormal { Label::Abnormal } else { Label::Normal };
            let video_id = format!("{}_{:03}", split.name(), v);
            let n = rng.gen_range(config.snippets_min..=config.snippets_max);

            // Planted window: contiguous, 20% to 50% of the video.
            let window = if label == Label::Abnormal {
                let lo = (n as f64 * 0.2).ceil() as usize;
                let hi = (n as f64 * 0.5).floor() as usize;
                let len = if lo >= hi { lo.clamp(1, n) } else { rng.gen_range(lo..=hi) };
                let start = rng.gen_range(0..=n - len);
                Some((start, start + len))
            } else {
                None
            };

            let gt_path = if split == Split::Test {
                let mut gt = String::new();
                for j in 0..n * FRAMES_PER_SNIPPET {
                    let inside = window
                        .map(|(s, e)| j >= s * FRAMES_PER_SNIPPET && j < e * FRAMES_PER_SNIPPET)
                        .unwrap_or(false);
                    gt.push(if inside { '1' } else { '0' });
                    gt.push('\n');
                }
                let p = dir.join(format!("{}.gt", video_id));
                std::fs::write(&p, gt).map_err(|e| Error::io(&p, e))?;
                Some(p)
            } else {
                None
            };

            for crop in 0..config.crops {
                let mut data = vec![0.0f32; n * config.d];
                for j in 0..n {
                    let center = match window {
                        Some((s, e)) if j >= s && j < e => &anomaly_center,
                        _ => &normal_center,
                    };
                    for c in 0..config.d {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        data[j * config.d + c] =
                            (center[c] + config.noise_sigma * noise) as f32;
                    }
                }
                let path = dir.join(format!("{}_c{}.vfea", video_id, crop));
                save_features(&path, &FeatureMatrix::new(n, config.d, data)?)?;
                entries.push(ManifestEntry {
                    path,
                    video_id: video_id.clone(),
                    label,
                    split,
                    crop,
                    gt_path: gt_path.clone(),
                });
            }
        }
    }

    let manifest = Manifest { entries };
    save_manifest(&dir.join("manifest.tsv"), &manifest)?;
    Ok(manifest)
}
