//! Scoring pipelines and frame-level metric reports.
//!
//! Two inference modes exist. Corrected mode runs the full offline pipeline:
//! 32-segment pooling, the aggregator's video probability, and per-instance
//! scores multiplied by that probability so normal-looking videos are
//! suppressed. Plain mode skips the correction (and, at snippet granularity,
//! the aggregator entirely, which is what an online scorer can do). Instance
//! scores expand to 16 frames per snippet and are pooled over the whole test
//! set before AUC/AP.

pub mod metrics;

pub use metrics::{average_precision, roc_auc};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::data::{
    inverse_segment, load_split, pooling_matrix, segment, FeatureSequence, Label, Manifest, Split,
    FRAMES_PER_SNIPPET,
};
use crate::error::{Error, Result};
use crate::model::{Model, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Instance scores multiplied by the video probability p.
    Corrected,
    /// Raw instance scores.
    Plain,
}

impl ScoreMode {
    pub fn parse(s: &str) -> Result<ScoreMode> {
        match s {
            "corrected" => Ok(ScoreMode::Corrected),
            "plain" => Ok(ScoreMode::Plain),
            other => Err(Error::Config(format!(
                "unknown score mode '{}' (expected corrected or plain)",
                other
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreMode::Corrected => "corrected",
            ScoreMode::Plain => "plain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    /// Offline: score the 32 pooled segments, then map back to snippets.
    Segment,
    /// Online: score each snippet directly with the MIL head.
    Snippet,
}

impl Granularity {
    pub fn parse(s: &str) -> Result<Granularity> {
        match s {
            "segment" => Ok(Granularity::Segment),
            "snippet" => Ok(Granularity::Snippet),
            other => Err(Error::Config(format!(
                "unknown granularity '{}' (expected segment or snippet)",
                other
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Granularity::Segment => "segment",
            Granularity::Snippet => "snippet",
        }
    }
}

/// Scores for one crop of one video.
pub struct ScoreRecord {
    pub video_id: String,
    pub granularity: Granularity,
    /// What the MIL head scored: 32 segments, or N snippets.
    pub instance_scores: Vec<f32>,
    /// Video probability, present when the aggregator ran.
    pub video_score: Option<f32>,
    /// Per-frame scores, 16 per snippet.
    pub frame_scores: Vec<f32>,
}

/// Score one crop. Corrected mode requires segment granularity: the video
/// probability only exists once all 32 segments went through the aggregator.
pub fn score_video(
    model: &Model,
    seq: &FeatureSequence,
    mode: ScoreMode,
    granularity: Granularity,
) -> Result<ScoreRecord> {
    let snippets = seq.features.to_tensor();
    let (instance_scores, snippet_scores, video_score) = match granularity {
        Granularity::Segment => {
            let pooling = pooling_matrix(seq.features.n)?;
            let out = model.forward(&snippets, &pooling, &mut Phase::Eval)?;
            let p = out.p_video.value();
            let mut inst = out.scores.to_vec();
            if mode == ScoreMode::Corrected {
                for s in &mut inst {
                    *s *= p;
                }
            }
            let per_snippet = if inst.len() == seq.features.n {
                // Snippet-input models already score one row per snippet.
                inst.clone()
            } else {
                let seg = segment(&seq.features)?;
                inverse_segment(&inst, &seg.assignment)?
            };
            (inst, per_snippet, Some(p))
        }
        Granularity::Snippet => {
            if mode == ScoreMode::Corrected {
                return Err(Error::Contract(
                    "corrected scoring needs segment granularity; an online snippet \
                     stream has no video probability"
                        .into(),
                ));
            }
            let scores = model.score_snippets(&snippets, &mut Phase::Eval)?.to_vec();
            (scores.clone(), scores, None)
        }
    };

    let mut frame_scores = Vec::with_capacity(snippet_scores.len() * FRAMES_PER_SNIPPET);
    for s in &snippet_scores {
        frame_scores.extend(std::iter::repeat(*s).take(FRAMES_PER_SNIPPET));
    }

    Ok(ScoreRecord {
        video_id: seq.video_id.clone(),
        granularity,
        instance_scores,
        video_score,
        frame_scores,
    })
}

/// Streaming scorer over the online path: one snippet in, one score out.
/// Construction fails for models whose MIL head needs aggregator output.
pub struct OnlineScorer<'a> {
    model: &'a Model,
}

impl<'a> OnlineScorer<'a> {
    pub fn new(model: &'a Model) -> Result<OnlineScorer<'a>> {
        // Surface the incompatibility at construction, not first push.
        let probe = crate::tensor::Tensor::zeros(vec![1, model.config.feature_dim]);
        model.score_snippets(&probe, &mut Phase::Eval)?;
        Ok(OnlineScorer { model })
    }

    pub fn push(&mut self, snippet: &[f32]) -> Result<f32> {
        if snippet.len() != self.model.config.feature_dim {
            return Err(Error::shape(
                "online_scorer.push",
                format!(
                    "snippet has {} values, feature_dim is {}",
                    snippet.len(),
                    self.model.config.feature_dim
                ),
            ));
        }
        let row = crate::tensor::Tensor::constant(snippet.to_vec(), vec![1, snippet.len()])?;
        let scores = self.model.score_snippets(&row, &mut Phase::Eval)?;
        Ok(scores.to_vec()[0])
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VideoBreakdown {
    pub video_id: String,
    pub abnormal: bool,
    pub frames: usize,
    pub positive_frames: usize,
    pub max_corrected: f32,
    pub max_plain: f32,
    pub video_score: f32,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    /// Corrected-mode metrics (segment granularity).
    pub auc: f64,
    pub ap: f64,
    /// Plain-mode metrics at the configured granularity.
    pub auc_2: f64,
    pub ap_2: f64,
    pub plain_granularity: String,
    pub videos: Vec<VideoBreakdown>,
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "AUC   {:.6}   AP   {:.6}   (corrected, segment)", self.auc, self.ap)?;
        writeln!(
            f,
            "AUC-2 {:.6}   AP-2 {:.6}   (plain, {})",
            self.auc_2, self.ap_2, self.plain_granularity
        )?;
        writeln!(f, "{:<20} {:>5} {:>8} {:>8} {:>9} {:>9} {:>8}", "video", "label", "frames", "pos", "max_corr", "max_plain", "p_video")?;
        for v in &self.videos {
            writeln!(
                f,
                "{:<20} {:>5} {:>8} {:>8} {:>9.4} {:>9.4} {:>8.4}",
                v.video_id,
                if v.abnormal { "anom" } else { "norm" },
                v.frames,
                v.positive_frames,
                v.max_corrected,
                v.max_plain,
                v.video_score
            )?;
        }
        Ok(())
    }
}

pub struct EvalOptions {
    /// Granularity of the plain (uncorrected) pipeline; corrected scoring is
    /// always segment-level.
    pub granularity: Granularity,
    /// Worker threads for per-video scoring. 1 scores sequentially.
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            granularity: Granularity::Snippet,
            threads: 1,
        }
    }
}

impl EvalOptions {
    /// Default options, with the thread count taken from `VCMIL_THREADS`
    /// when set.
    pub fn from_env() -> Result<EvalOptions> {
        let mut opts = EvalOptions::default();
        if let Ok(v) = std::env::var("VCMIL_THREADS") {
            let n: usize = v
                .parse()
                .map_err(|_| Error::Config(format!("VCMIL_THREADS must be a number, got '{}'", v)))?;
            if n == 0 {
                return Err(Error::Config("VCMIL_THREADS must be at least 1".into()));
            }
            opts.threads = n;
        }
        Ok(opts)
    }
}

/// Crop-averaged frame scores for one video, aligned to its ground truth.
struct VideoScores {
    video_id: String,
    abnormal: bool,
    corrected: Vec<f32>,
    plain: Vec<f32>,
    video_score: f32,
    gt: Vec<u8>,
}

/// Pad with the last snippet's score or truncate so scores line up with the
/// per-frame ground truth (a video's frame count is rarely a multiple of 16).
pub fn align_to_gt(mut scores: Vec<f32>, gt_len: usize) -> Vec<f32> {
    if scores.len() >= gt_len {
        scores.truncate(gt_len);
    } else {
        let last = *scores.last().expect("videos have at least one snippet");
        scores.resize(gt_len, last);
    }
    scores
}

fn score_one_video(
    model: &Model,
    video_id: &str,
    crops: &[&FeatureSequence],
    granularity: Granularity,
) -> Result<VideoScores> {
    let gt = crops[0]
        .frame_gt
        .clone()
        .ok_or_else(|| Error::Contract(format!("test video '{}' has no ground truth", video_id)))?;
    if gt.is_empty() {
        return Err(Error::Contract(format!(
            "test video '{}' has empty ground truth",
            video_id
        )));
    }

    let mut corrected: Vec<f32> = Vec::new();
    let mut plain: Vec<f32> = Vec::new();
    let mut p_sum = 0.0f32;
    for (i, seq) in crops.iter().enumerate() {
        let corr = score_video(model, seq, ScoreMode::Corrected, Granularity::Segment)?;
        let pln = score_video(model, seq, ScoreMode::Plain, granularity)?;
        if i == 0 {
            corrected = corr.frame_scores;
            plain = pln.frame_scores;
        } else {
            if corr.frame_scores.len() != corrected.len() || pln.frame_scores.len() != plain.len() {
                return Err(Error::Contract(format!(
                    "crops of video '{}' disagree on snippet count",
                    video_id
                )));
            }
            for (a, b) in corrected.iter_mut().zip(&corr.frame_scores) {
                *a += b;
            }
            for (a, b) in plain.iter_mut().zip(&pln.frame_scores) {
                *a += b;
            }
        }
        p_sum += corr.video_score.unwrap_or(0.0);
    }
    let k = crops.len() as f32;
    if crops.len() > 1 {
        for s in corrected.iter_mut().chain(plain.iter_mut()) {
            *s /= k;
        }
    }

    Ok(VideoScores {
        video_id: video_id.to_string(),
        abnormal: crops[0].label == Label::Abnormal,
        corrected: align_to_gt(corrected, gt.len()),
        plain: align_to_gt(plain, gt.len()),
        video_score: p_sum / k,
        gt,
    })
}

/// Score the manifest's test split and compute frame-level metrics pooled
/// over every video. Corrected metrics come from the offline segment
/// pipeline; plain metrics from the configured granularity.
pub fn evaluate(model: &Model, manifest: &Manifest, opts: &EvalOptions) -> Result<MetricReport> {
    let sequences = load_split(manifest, Split::Test, Some(model.config.feature_dim))?;
    if sequences.is_empty() {
        return Err(Error::Contract("manifest has no test videos".into()));
    }
    let mut by_video: BTreeMap<&str, Vec<&FeatureSequence>> = BTreeMap::new();
    for seq in &sequences {
        by_video.entry(&seq.video_id).or_default().push(seq);
    }
    let videos: Vec<(&str, Vec<&FeatureSequence>)> = by_video.into_iter().collect();

    let scored = if opts.threads <= 1 {
        let mut out = Vec::with_capacity(videos.len());
        for (id, crops) in &videos {
            out.push(score_one_video(model, id, crops, opts.granularity)?);
        }
        out
    } else {
        score_videos_parallel(model, &videos, opts)?
    };

    let mut corrected_all = Vec::new();
    let mut plain_all = Vec::new();
    let mut gt_all = Vec::new();
    let mut breakdown = Vec::with_capacity(scored.len());
    for v in scored {
        let max = |xs: &[f32]| xs.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        breakdown.push(VideoBreakdown {
            video_id: v.video_id,
            abnormal: v.abnormal,
            frames: v.gt.len(),
            positive_frames: v.gt.iter().filter(|&&g| g != 0).count(),
            max_corrected: max(&v.corrected),
            max_plain: max(&v.plain),
            video_score: v.video_score,
        });
        corrected_all.extend(v.corrected);
        plain_all.extend(v.plain);
        gt_all.extend(v.gt);
    }

    Ok(MetricReport {
        auc: roc_auc(&corrected_all, &gt_all)?,
        ap: average_precision(&corrected_all, &gt_all)?,
        auc_2: roc_auc(&plain_all, &gt_all)?,
        ap_2: average_precision(&plain_all, &gt_all)?,
        plain_granularity: opts.granularity.name().to_string(),
        videos: breakdown,
    })
}

/// Fan per-video scoring out over worker threads. Tensors are not `Send`, so
/// each worker rebuilds the model from a plain-data snapshot. Workers own
/// contiguous slices of a result vector in video order, so the report is
/// identical to the sequential one regardless of scheduling.
fn score_videos_parallel(
    model: &Model,
    videos: &[(&str, Vec<&FeatureSequence>)],
    opts: &EvalOptions,
) -> Result<Vec<VideoScores>> {
    let snapshot = model.snapshot();
    let n_workers = opts.threads.min(videos.len());
    let mut results: Vec<Option<Result<VideoScores>>> = Vec::new();
    results.resize_with(videos.len(), || None);

    std::thread::scope(|scope| {
        let base = videos.len() / n_workers;
        let extra = videos.len() % n_workers;
        let mut rest: &mut [Option<Result<VideoScores>>] = &mut results;
        let mut start = 0;
        for w in 0..n_workers {
            let len = base + usize::from(w < extra);
            let (head, tail) = rest.split_at_mut(len);
            rest = tail;
            let chunk = &videos[start..start + len];
            start += len;
            let snapshot = snapshot.clone();
            let granularity = opts.granularity;
            scope.spawn(move || {
                let local = match snapshot.build() {
                    Ok(m) => m,
                    Err(e) => {
                        head[0] = Some(Err(e));
                        return;
                    }
                };
                for (slot, (id, crops)) in head.iter_mut().zip(chunk) {
                    *slot = Some(score_one_video(&local, id, crops, granularity));
                }
            });
        }
    });

    results
        .into_iter()
        .map(|r| r.ok_or_else(|| Error::Contract("scoring worker died before finishing".into()))?)
        .collect()
}

/// Write one video's frame scores as `frame_index,score` CSV.
pub fn write_score_csv(path: &Path, frame_scores: &[f32]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    writeln!(w, "frame_index,score").map_err(io_err)?;
    for (i, s) in frame_scores.iter().enumerate() {
        writeln!(w, "{},{}", i, s).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, FeatureMatrix, SynthConfig};
    use crate::model::{BertConfig, MilInput, Model, ModelConfig};

    fn tiny_model(feature_dim: usize) -> Model {
        let config = ModelConfig {
            feature_dim,
            bert: BertConfig {
                layers: 1,
                heads: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        Model::new(config, 0).unwrap()
    }

    fn test_sequence(id: &str, crop: u32, n: usize, d: usize, salt: u64) -> FeatureSequence {
        let data: Vec<f32> = (0..n * d)
            .map(|i| (((i as u64 * 2654435761 + salt * 97) % 1000) as f32 - 500.0) / 500.0)
            .collect();
        FeatureSequence {
            video_id: id.to_string(),
            crop,
            label: Label::Abnormal,
            features: FeatureMatrix::new(n, d, data).unwrap(),
            frame_gt: Some(
                (0..n * FRAMES_PER_SNIPPET)
                    .map(|i| u8::from(i < FRAMES_PER_SNIPPET))
                    .collect(),
            ),
        }
    }

    #[test]
    fn correction_multiplies_by_the_video_probability() {
        let model = tiny_model(8);
        let seq = test_sequence("v", 0, 40, 8, 1);
        let plain = score_video(&model, &seq, ScoreMode::Plain, Granularity::Segment).unwrap();
        let corr = score_video(&model, &seq, ScoreMode::Corrected, Granularity::Segment).unwrap();
        let p = corr.video_score.unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(plain.instance_scores.len(), 32);
        for (c, s) in corr.instance_scores.iter().zip(&plain.instance_scores) {
            assert_eq!(*c, s * p);
            assert!(c <= s);
        }
    }

    #[test]
    fn frame_scores_expand_sixteen_per_snippet() {
        let model = tiny_model(8);
        let seq = test_sequence("v", 0, 37, 8, 2);
        let rec = score_video(&model, &seq, ScoreMode::Plain, Granularity::Segment).unwrap();
        assert_eq!(rec.frame_scores.len(), 37 * FRAMES_PER_SNIPPET);
        for block in rec.frame_scores.chunks(FRAMES_PER_SNIPPET) {
            assert!(block.iter().all(|&s| s == block[0]));
        }
    }

    #[test]
    fn snippet_granularity_scores_every_row() {
        let model = tiny_model(8);
        let seq = test_sequence("v", 0, 9, 8, 3);
        let rec = score_video(&model, &seq, ScoreMode::Plain, Granularity::Snippet).unwrap();
        assert_eq!(rec.instance_scores.len(), 9);
        assert!(rec.video_score.is_none());
        assert!(matches!(
            score_video(&model, &seq, ScoreMode::Corrected, Granularity::Snippet),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn online_scorer_matches_batch_plain_scoring() {
        let model = tiny_model(8);
        let seq = test_sequence("v", 0, 6, 8, 4);
        let batch = score_video(&model, &seq, ScoreMode::Plain, Granularity::Snippet).unwrap();
        let mut online = OnlineScorer::new(&model).unwrap();
        for (i, expected) in batch.instance_scores.iter().enumerate() {
            let got = online.push(seq.features.row(i)).unwrap();
            assert_eq!(got, *expected);
        }
    }

    #[test]
    fn online_scorer_rejects_refined_feature_models() {
        let config = ModelConfig {
            feature_dim: 8,
            mil_input: MilInput::Refined,
            bert: BertConfig {
                layers: 1,
                heads: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let model = Model::new(config, 0).unwrap();
        assert!(OnlineScorer::new(&model).is_err());
    }

    #[test]
    fn gt_alignment_truncates_or_extends_with_the_last_score() {
        assert_eq!(align_to_gt(vec![0.1, 0.2, 0.3], 2), vec![0.1, 0.2]);
        assert_eq!(align_to_gt(vec![0.1, 0.2], 4), vec![0.1, 0.2, 0.2, 0.2]);
    }

    #[test]
    fn crops_average_in_score_space() {
        let model = tiny_model(8);
        let a = test_sequence("v", 0, 12, 8, 5);
        let mut b = test_sequence("v", 1, 12, 8, 6);
        b.frame_gt = a.frame_gt.clone();
        let merged =
            score_one_video(&model, "v", &[&a, &b], Granularity::Segment).unwrap();
        let ra = score_video(&model, &a, ScoreMode::Plain, Granularity::Segment).unwrap();
        let rb = score_video(&model, &b, ScoreMode::Plain, Granularity::Segment).unwrap();
        for ((m, x), y) in merged.plain.iter().zip(&ra.frame_scores).zip(&rb.frame_scores) {
            assert_eq!(*m, (x + y) / 2.0);
        }
    }

    #[test]
    fn evaluate_on_synthetic_data_reports_sane_untrained_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            n_train: 4,
            n_test: 6,
            d: 16,
            snippets_min: 24,
            snippets_max: 40,
            seed: 3,
            ..Default::default()
        };
        let manifest = synth_generate(dir.path(), &config).unwrap();
        let model = tiny_model(16);

        let opts = EvalOptions {
            granularity: Granularity::Segment,
            threads: 1,
        };
        let report = evaluate(&model, &manifest, &opts).unwrap();
        assert_eq!(report.videos.len(), 6);
        for m in [report.auc, report.auc_2, report.ap, report.ap_2] {
            assert!((0.0..=1.0).contains(&m), "metric out of range: {}", m);
        }
        for v in &report.videos {
            // Same granularity for both pipelines: correction only shrinks.
            assert!(v.max_corrected <= v.max_plain);
            assert!(v.frames > 0);
        }
    }

    #[test]
    fn untrained_model_scores_at_chance_on_uninformative_data() {
        use crate::data::{save_features, ManifestEntry};
        use rand::Rng;

        // Features carry no class signal and the ground truth is random, so
        // any fixed scorer should land near AUC 0.5.
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        let mut rng = crate::rng::stream_rng(7, crate::rng::stream::SYNTH, 99);
        for v in 0..4 {
            let n = 25;
            let d = 16;
            let data: Vec<f32> = (0..n * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let path = dir.path().join(format!("v{}.vfea", v));
            save_features(&path, &FeatureMatrix::new(n, d, data).unwrap()).unwrap();
            let gt_path = dir.path().join(format!("v{}.gt", v));
            let gt: String = (0..n * FRAMES_PER_SNIPPET)
                .map(|_| if rng.gen_bool(0.3) { "1\n" } else { "0\n" })
                .collect();
            std::fs::write(&gt_path, gt).unwrap();
            entries.push(ManifestEntry {
                path,
                video_id: format!("v{}", v),
                label: if v % 2 == 0 { Label::Abnormal } else { Label::Normal },
                split: Split::Test,
                crop: 0,
                gt_path: Some(gt_path),
            });
        }
        let manifest = Manifest { entries };
        let model = tiny_model(16);
        let report = evaluate(&model, &manifest, &EvalOptions::default()).unwrap();
        assert!(
            report.auc > 0.3 && report.auc < 0.7,
            "expected chance-level auc, got {}",
            report.auc
        );
    }

    #[test]
    fn parallel_evaluation_matches_sequential() {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            n_train: 4,
            n_test: 5,
            d: 16,
            snippets_min: 24,
            snippets_max: 40,
            crops: 2,
            seed: 4,
            ..Default::default()
        };
        let manifest = synth_generate(dir.path(), &config).unwrap();
        let model = tiny_model(16);

        let sequential = evaluate(
            &model,
            &manifest,
            &EvalOptions {
                granularity: Granularity::Snippet,
                threads: 1,
            },
        )
        .unwrap();
        let parallel = evaluate(
            &model,
            &manifest,
            &EvalOptions {
                granularity: Granularity::Snippet,
                threads: 3,
            },
        )
        .unwrap();
        assert_eq!(sequential, parallel);
    }

    #[test]
    fn score_csv_roundtrips_through_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        write_score_csv(&path, &[0.25, 0.5]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "frame_index,score\n0,0.25\n1,0.5\n");
    }
}
