//! The training loop: paired abnormal/normal sampling, forward through the
//! aggregator and MIL head, combined loss, Adam with gradient clipping, and
//! periodic evaluation with best-checkpoint tracking.

use std::path::Path;
use std::time::Instant;

use crate::data::{
    load_split, pooling_matrix, FeatureSequence, Label, Manifest, PairedIterator, Split,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalOptions, Granularity};
use crate::losses::{
    combined_loss, mil_ranking_loss, rtfm_loss, video_bce_loss, LossConfig, LossMode, LossParts,
};
use crate::model::checkpoint::Checkpoint;
use crate::model::{Model, ModelConfig, ModelSnapshot, Phase};
use crate::rng::{stream, stream_rng};
use crate::tensor::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

/// The learning rate holds for this many epochs, then follows a half-cosine
/// down toward zero. A deterministic stand-in for by-hand schedule tweaks.
const DECAY_START_EPOCH: usize = 50;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: LossMode,
    pub model: ModelConfig,
    pub lr: f32,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Evaluate on the test split every this many epochs (0 = never). Needs a
    /// test split with ground truth.
    pub eval_every: usize,
    /// Update only the MIL head, leaving the aggregator (and any input FC)
    /// bitwise untouched. Used for two-stage training on top of a checkpoint.
    pub freeze_aggregator: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: LossMode::MilBert,
            model: ModelConfig::default(),
            lr: 1e-4,
            epochs: 100,
            seed: 0,
            loss: LossConfig::default(),
            eval_every: 0,
            freeze_aggregator: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub abnormal_id: String,
    pub normal_id: String,
    pub hinge: Option<f32>,
    pub smooth: Option<f32>,
    pub sparse: Option<f32>,
    pub bce_video: f32,
    pub bce_rtfm: Option<f32>,
    pub rtfm_rank: Option<f32>,
    pub total: f32,
    pub lr: f32,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub epoch: usize,
    pub auc: f64,
    pub auc_2: f64,
    pub ap: f64,
    pub ap_2: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Step(StepRecord),
    Eval(EvalRecord),
}

/// Append-only record of one training run. Equality ignores wall-clock time,
/// so two runs compare equal exactly when they took the same numeric path.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct RunLog {
    pub events: Vec<LogEvent>,
    pub wall_clock_secs: f64,
}

impl PartialEq for RunLog {
    fn eq(&self, other: &Self) -> bool {
        self.events == other.events
    }
}

impl RunLog {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.events.iter().filter_map(|e| match e {
            LogEvent::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn evals(&self) -> impl Iterator<Item = &EvalRecord> {
        self.events.iter().filter_map(|e| match e {
            LogEvent::Eval(v) => Some(v),
            _ => None,
        })
    }

    /// One JSON object per line: every event in order, then a summary line
    /// carrying the wall clock (kept apart so logs stay comparable).
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io_err = |e| Error::io(path, e);
        for event in &self.events {
            let line = serde_json::to_string(event)
                .map_err(|e| Error::Contract(format!("log serialization failed: {}", e)))?;
            writeln!(w, "{}", line).map_err(io_err)?;
        }
        writeln!(
            w,
            "{{\"event\":\"summary\",\"wall_clock_secs\":{}}}",
            self.wall_clock_secs
        )
        .map_err(io_err)?;
        w.flush().map_err(io_err)
    }
}

pub struct BestCheckpoint {
    pub snapshot: ModelSnapshot,
    pub auc: f64,
    pub step: u64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: Adam,
    pub step: u64,
    pub log: RunLog,
    /// Highest corrected-AUC evaluation seen, when periodic evals ran.
    pub best: Option<BestCheckpoint>,
}

/// Learning rate at a given epoch: flat, then half-cosine decay.
pub fn lr_at(base: f32, epoch: usize, total_epochs: usize) -> f32 {
    if epoch < DECAY_START_EPOCH || total_epochs <= DECAY_START_EPOCH {
        return base;
    }
    let span = (total_epochs - DECAY_START_EPOCH) as f32;
    let t = (epoch - DECAY_START_EPOCH) as f32 / span;
    base * 0.5 * (1.0 + (std::f32::consts::PI * t).cos())
}

struct PreparedVideo {
    id: String,
    snippets: Tensor,
    pooling: Tensor,
}

fn prepare(seq: &FeatureSequence) -> Result<PreparedVideo> {
    Ok(PreparedVideo {
        id: seq.video_id.clone(),
        snippets: seq.features.to_tensor(),
        pooling: pooling_matrix(seq.features.n)?,
    })
}

pub fn train(manifest: &Manifest, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_resumed(manifest, cfg, None)
}

/// Train, optionally continuing from a checkpoint. Resuming replays the same
/// sample and dropout streams the uninterrupted run would have seen, so a
/// split run reproduces it exactly.
pub fn train_resumed(
    manifest: &Manifest,
    cfg: &TrainConfig,
    resume: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();

    let sequences = load_split(manifest, Split::Train, Some(cfg.model.feature_dim))?;
    let mut abnormal = Vec::new();
    let mut normal = Vec::new();
    for seq in &sequences {
        match seq.label {
            Label::Abnormal => abnormal.push(prepare(seq)?),
            Label::Normal => normal.push(prepare(seq)?),
        }
    }
    let mut iter = PairedIterator::new(cfg.seed, abnormal.len(), normal.len())?;

    let (model, mut optimizer, start_step) = match resume {
        Some(ckpt) => {
            if ckpt.config != cfg.model {
                return Err(Error::Config(
                    "checkpoint model config differs from the requested one".into(),
                ));
            }
            let model = ckpt.build_model()?;
            // A changed trainable set would misalign the saved moments.
            let optimizer = if cfg.freeze_aggregator {
                Adam::new(AdamConfig::default())
            } else {
                ckpt.build_optimizer(AdamConfig::default())
                    .unwrap_or_else(|| Adam::new(AdamConfig::default()))
            };
            (model, optimizer, ckpt.step)
        }
        None => (
            Model::new(cfg.model.clone(), cfg.seed)?,
            Adam::new(AdamConfig::default()),
            0u64,
        ),
    };
    iter.seek(start_step);

    let trainable: Vec<Tensor> = if cfg.freeze_aggregator {
        model
            .named_params()
            .iter()
            .filter(|(name, _)| name.starts_with("mil."))
            .map(|(_, t)| t.clone())
            .collect()
    } else {
        model.param_tensors()
    };

    let steps_per_epoch = iter.pairs_per_epoch() as u64;
    let total_steps = cfg.epochs as u64 * steps_per_epoch;
    let mut log = RunLog::default();
    let mut best: Option<BestCheckpoint> = None;

    let mut step = start_step;
    while step < total_steps {
        let epoch = (step / steps_per_epoch) as usize;
        let lr = lr_at(cfg.lr, epoch, cfg.epochs);
        let (ai, ni) = iter.next_pair();
        let a = &abnormal[ai];
        let n = &normal[ni];

        let mut dropout_rng = stream_rng(cfg.seed, stream::DROPOUT, step);
        let mut phase = Phase::Train {
            rng: &mut dropout_rng,
        };
        let a_out = model.forward(&a.snippets, &a.pooling, &mut phase)?;
        let n_out = model.forward(&n.snippets, &n.pooling, &mut phase)?;

        let bce = video_bce_loss(&a_out.p_video, &n_out.p_video)?;
        let bce_v = bce.value();
        let parts = match cfg.mode {
            LossMode::MilBert => LossParts {
                ranking: Some(mil_ranking_loss(&a_out.scores, &n_out.scores, &cfg.loss)?),
                video_bce: Some(bce),
                rtfm: None,
            },
            LossMode::RtfmBert => LossParts {
                ranking: None,
                video_bce: Some(bce),
                rtfm: Some(rtfm_loss(
                    &a_out.instances,
                    &a_out.scores,
                    &n_out.instances,
                    &n_out.scores,
                    &cfg.loss,
                )?),
            },
        };
        let total = combined_loss(cfg.mode, &parts, &cfg.loss)?;
        let total_v = total.value();
        if !total_v.is_finite() {
            return Err(Error::NumericAbort {
                step: step as usize,
                abnormal_id: a.id.clone(),
                normal_id: n.id.clone(),
                detail: format!("loss became {}", total_v),
            });
        }

        model.zero_grads();
        total.backward()?;
        optimizer.step(&trainable, Some(lr));

        log.events.push(LogEvent::Step(StepRecord {
            step,
            epoch,
            abnormal_id: a.id.clone(),
            normal_id: n.id.clone(),
            hinge: parts.ranking.as_ref().map(|r| r.hinge.value()),
            smooth: parts.ranking.as_ref().map(|r| r.smooth.value()),
            sparse: parts.ranking.as_ref().map(|r| r.sparse.value()),
            bce_video: bce_v,
            bce_rtfm: parts.rtfm.as_ref().map(|r| r.bce.value()),
            rtfm_rank: parts.rtfm.as_ref().map(|r| r.rank.value()),
            total: total_v,
            lr,
        }));

        step += 1;
        let epoch_done = step % steps_per_epoch == 0;
        let run_done = step == total_steps;
        if cfg.eval_every > 0 && epoch_done {
            let finished_epoch = epoch + 1;
            if finished_epoch % cfg.eval_every == 0 || run_done {
                let report = evaluate(
                    &model,
                    manifest,
                    &EvalOptions {
                        granularity: Granularity::Segment,
                        threads: 1,
                    },
                )?;
                log.events.push(LogEvent::Eval(EvalRecord {
                    step,
                    epoch,
                    auc: report.auc,
                    auc_2: report.auc_2,
                    ap: report.ap,
                    ap_2: report.ap_2,
                }));
                if best.as_ref().map_or(true, |b| report.auc > b.auc) {
                    best = Some(BestCheckpoint {
                        snapshot: model.snapshot(),
                        auc: report.auc,
                        step,
                    });
                }
            }
        }
    }

    log.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        model,
        optimizer,
        step,
        log,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{save_features, synth_generate, FeatureMatrix, ManifestEntry, SynthConfig};
    use crate::model::BertConfig;

    fn tiny_train_config(seed: u64) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                feature_dim: 16,
                bert: BertConfig {
                    layers: 1,
                    heads: 2,
                    ..Default::default()
                },
                ..Default::default()
            },
            epochs: 1,
            seed,
            ..Default::default()
        }
    }

    fn synth_manifest(dir: &Path, seed: u64) -> Manifest {
        let config = SynthConfig {
            n_train: 6,
            n_test: 4,
            d: 16,
            snippets_min: 24,
            snippets_max: 40,
            seed,
            ..Default::default()
        };
        synth_generate(dir, &config).unwrap()
    }

    #[test]
    fn loss_trends_down_within_an_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_manifest(dir.path(), 0);
        let mut cfg = tiny_train_config(0);
        cfg.epochs = 10;
        let outcome = train(&manifest, &cfg).unwrap();
        let totals: Vec<f32> = outcome.log.steps().map(|s| s.total).collect();
        assert!(totals.len() >= 20);
        let head: f32 = totals[..10].iter().sum::<f32>() / 10.0;
        let tail: f32 = totals[totals.len() - 10..].iter().sum::<f32>() / 10.0;
        assert!(
            tail < head,
            "loss did not decrease: first 10 avg {}, last 10 avg {}",
            head,
            tail
        );
    }

    #[test]
    fn identical_seeds_produce_identical_logs() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_manifest(dir.path(), 1);
        let cfg = tiny_train_config(7);
        let a = train(&manifest, &cfg).unwrap();
        let b = train(&manifest, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        for ((_, ta), (_, tb)) in a.model.named_params().iter().zip(b.model.named_params()) {
            assert_eq!(ta.to_vec(), tb.to_vec());
        }
    }

    #[test]
    fn zero_epochs_returns_the_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_manifest(dir.path(), 2);
        let mut cfg = tiny_train_config(3);
        cfg.epochs = 0;
        let outcome = train(&manifest, &cfg).unwrap();
        let fresh = Model::new(cfg.model.clone(), cfg.seed).unwrap();
        for ((_, ta), (_, tb)) in outcome.model.named_params().iter().zip(fresh.named_params()) {
            assert_eq!(ta.to_vec(), tb.to_vec());
        }
        assert_eq!(outcome.log.events.len(), 0);
    }

    #[test]
    fn freezing_keeps_the_aggregator_bitwise_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_manifest(dir.path(), 3);
        let mut cfg = tiny_train_config(4);
        cfg.freeze_aggregator = true;
        let before = Model::new(cfg.model.clone(), cfg.seed).unwrap();
        let outcome = train(&manifest, &cfg).unwrap();
        let mut mil_changed = false;
        for ((name, ta), (_, tb)) in outcome
            .model
            .named_params()
            .iter()
            .zip(before.named_params())
        {
            if name.starts_with("mil.") {
                mil_changed |= ta.to_vec() != tb.to_vec();
            } else {
                assert_eq!(ta.to_vec(), tb.to_vec(), "{} moved while frozen", name);
            }
        }
        assert!(mil_changed, "MIL head should still learn");
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_manifest(dir.path(), 4);
        let mut cfg = tiny_train_config(5);
        cfg.epochs = 2;
        let full = train(&manifest, &cfg).unwrap();

        let mut first_half = tiny_train_config(5);
        first_half.epochs = 1;
        let half = train(&manifest, &first_half).unwrap();
        let ckpt_path = dir.path().join("half.vckp");
        crate::model::checkpoint::save(&ckpt_path, &half.model, half.step, Some(&half.optimizer))
            .unwrap();
        let ckpt = crate::model::checkpoint::load(&ckpt_path).unwrap();

        let resumed = train_resumed(&manifest, &cfg, Some(&ckpt)).unwrap();
        for ((name, ta), (_, tb)) in full
            .model
            .named_params()
            .iter()
            .zip(resumed.model.named_params())
        {
            assert_eq!(ta.to_vec(), tb.to_vec(), "{} diverged after resume", name);
        }
        // The resumed log covers exactly the second half of the steps.
        let full_tail: Vec<_> = full.log.steps().skip(half.step as usize).collect();
        let resumed_steps: Vec<_> = resumed.log.steps().collect();
        assert_eq!(full_tail, resumed_steps);
    }

    #[test]
    fn rtfm_mode_trains_and_logs_magnitude_terms() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_manifest(dir.path(), 5);
        let mut cfg = tiny_train_config(6);
        cfg.mode = LossMode::RtfmBert;
        let outcome = train(&manifest, &cfg).unwrap();
        let first = outcome.log.steps().next().unwrap().clone();
        assert!(first.bce_rtfm.is_some());
        assert!(first.rtfm_rank.is_some());
        assert!(first.hinge.is_none());
    }

    #[test]
    fn non_finite_loss_aborts_with_the_offending_pair() {
        let dir = tempfile::tempdir().unwrap();
        let d = 16;
        let make = |name: &str, fill: f32| {
            let path = dir.path().join(format!("{}.vfea", name));
            save_features(&path, &FeatureMatrix::new(8, d, vec![fill; 8 * d]).unwrap()).unwrap();
            path
        };
        let entries = vec![
            ManifestEntry {
                path: make("a", f32::INFINITY),
                video_id: "a".into(),
                label: Label::Abnormal,
                split: Split::Train,
                crop: 0,
                gt_path: None,
            },
            ManifestEntry {
                path: make("n", 0.5),
                video_id: "n".into(),
                label: Label::Normal,
                split: Split::Train,
                crop: 0,
                gt_path: None,
            },
        ];
        let manifest = Manifest { entries };
        let err = match train(&manifest, &tiny_train_config(0)) {
            Err(e) => e,
            Ok(_) => panic!("expected the run to abort"),
        };
        match err {
            Error::NumericAbort {
                step, abnormal_id, ..
            } => {
                assert_eq!(step, 0);
                assert_eq!(abnormal_id, "a");
            }
            other => panic!("expected numeric abort, got {:?}", other),
        }
    }

    #[test]
    fn periodic_eval_tracks_the_best_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_manifest(dir.path(), 6);
        let mut cfg = tiny_train_config(8);
        cfg.epochs = 2;
        cfg.eval_every = 1;
        let outcome = train(&manifest, &cfg).unwrap();
        assert_eq!(outcome.log.evals().count(), 2);
        let best = outcome.best.expect("evals ran, a best must exist");
        assert!(best.auc >= outcome.log.evals().next().unwrap().auc);
        let rebuilt = best.snapshot.build().unwrap();
        assert_eq!(rebuilt.config, cfg.model);
    }

    #[test]
    fn lr_schedule_is_flat_then_cosine() {
        assert_eq!(lr_at(1e-4, 0, 100), 1e-4);
        assert_eq!(lr_at(1e-4, 49, 100), 1e-4);
        assert_eq!(lr_at(1e-4, 50, 100), 1e-4);
        let mid = lr_at(1e-4, 75, 100);
        assert!(mid < 1e-4 && mid > 0.0);
        let late = lr_at(1e-4, 99, 100);
        assert!(late < mid);
        // Short runs never reach the decay phase.
        assert_eq!(lr_at(1e-4, 29, 30), 1e-4);
    }

    #[test]
    fn jsonl_log_is_stable_and_tagged() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_manifest(dir.path(), 7);
        let mut cfg = tiny_train_config(9);
        cfg.eval_every = 1;
        let outcome = train(&manifest, &cfg).unwrap();
        let path = dir.path().join("run.jsonl");
        outcome.log.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let first: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(first["event"], "step");
        assert!(first["total"].is_number());
        let last = text.lines().last().unwrap();
        assert!(last.contains("\"event\":\"summary\""));
    }
}
