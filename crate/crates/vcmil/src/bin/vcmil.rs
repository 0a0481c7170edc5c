//! Batch driver: synthesize data, train, evaluate, and score from the shell.
//!
//! Every subcommand writes the fully resolved configuration to the output
//! directory, so any run can be reproduced from its artifacts alone.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vcmil::config::RunConfig;
use vcmil::data::{load_features, load_gt, load_manifest, synth_generate, FeatureSequence, Label};
use vcmil::error::{Error, Result};
use vcmil::evaluation::{
    align_to_gt, evaluate, metrics, score_video, EvalOptions, Granularity, ScoreMode,
};
use vcmil::model::{checkpoint, MilInput, Model};
use vcmil::training::{train, train_resumed};

#[derive(Parser)]
#[command(
    name = "vcmil",
    version,
    about = "Weakly supervised video anomaly detection over snippet features"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// key = value config file, applied before any flags
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// RNG seed (overrides the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key; repeatable, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; receives the resolved config and all artifacts
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset: feature files, ground truth, manifest
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on the train split of a manifest
    Train {
        #[command(flatten)]
        common: Common,
        /// TSV manifest listing feature files
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Objective: mil_bert or rtfm_bert
        #[arg(long)]
        mode: Option<String>,
        /// Sequence aggregator: bert or lstm
        #[arg(long)]
        aggregator: Option<String>,
        /// Features the MIL head scores: x_i, y_i, or f_i
        #[arg(long = "mil-input")]
        mil_input: Option<String>,
        /// Blend between video and magnitude BCE (rtfm_bert only)
        #[arg(long)]
        beta: Option<String>,
        /// Number of passes over the paired training set
        #[arg(long)]
        epochs: Option<String>,
        /// Base learning rate (decays after epoch 50)
        #[arg(long)]
        lr: Option<String>,
        /// Continue from a checkpoint instead of initializing fresh
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split of a manifest
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// TSV manifest listing feature files
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Plain-mode scoring granularity: segment or snippet
        #[arg(long)]
        granularity: Option<String>,
    },
    /// Score one feature file, writing per-frame CSVs
    Score {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Feature file to score
        #[arg(long, value_name = "FILE")]
        features: PathBuf,
        /// Optional per-frame ground truth; prints single-video AUC
        #[arg(long, value_name = "FILE")]
        gt: Option<PathBuf>,
        /// Plain-mode scoring granularity: segment or snippet
        #[arg(long)]
        granularity: Option<String>,
        /// Emit only the corrected scores
        #[arg(long, conflicts_with = "plain")]
        corrected: bool,
        /// Emit only the plain scores
        #[arg(long)]
        plain: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Defaults, then the config file, then typed flags, then --set pairs.
fn resolve(common: &Common, flags: &[(&str, &Option<String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    for pair in &common.set {
        let (k, v) = pair.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set needs KEY=VALUE, got '{}'", pair))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn echo_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("resolved.cfg");
    std::fs::write(&path, cfg.resolved()).map_err(|e| Error::io(&path, e))
}

/// Plain scoring granularity for a checkpoint: honors the request unless the
/// model scores refined features, which only exist on the segment path.
fn plain_granularity(model: &Model, requested: Granularity) -> Granularity {
    if model.config.mil_input == MilInput::Refined && requested == Granularity::Snippet {
        println!("note: refined-feature checkpoint, plain scoring falls back to segment granularity");
        Granularity::Segment
    } else {
        requested
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth { common } => {
            let cfg = resolve(&common, &[])?;
            echo_config(&common.out, &cfg)?;
            let manifest = synth_generate(&common.out, &cfg.synth_config())?;
            println!(
                "wrote {} feature files ({} videos) under {}",
                manifest.entries.len(),
                cfg.n_train + cfg.n_test,
                common.out.display()
            );
            println!("manifest: {}", common.out.join("manifest.tsv").display());
            Ok(())
        }
        Cmd::Train {
            common,
            manifest,
            mode,
            aggregator,
            mil_input,
            beta,
            epochs,
            lr,
            resume,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("mode", &mode),
                    ("aggregator", &aggregator),
                    ("mil_input", &mil_input),
                    ("beta", &beta),
                    ("epochs", &epochs),
                    ("lr", &lr),
                ],
            )?;
            echo_config(&common.out, &cfg)?;
            let manifest = load_manifest(&manifest)?;
            let outcome = match &resume {
                Some(path) => {
                    let ckpt = checkpoint::load(path)?;
                    println!("resuming from {} at step {}", path.display(), ckpt.step);
                    train_resumed(&manifest, &cfg.train_config(), Some(&ckpt))?
                }
                None => train(&manifest, &cfg.train_config())?,
            };

            let ckpt_path = common.out.join("model.vckp");
            checkpoint::save(&ckpt_path, &outcome.model, outcome.step, Some(&outcome.optimizer))?;
            let log_path = common.out.join("train_log.jsonl");
            outcome.log.write_jsonl(&log_path)?;

            if let Some(last) = outcome.log.steps().last() {
                println!(
                    "finished step {} (epoch {}): loss {:.6}",
                    last.step, last.epoch, last.total
                );
            }
            if let Some(eval) = outcome.log.evals().last() {
                println!(
                    "last eval: AUC {:.4}  AUC-2 {:.4}  AP {:.4}  AP-2 {:.4}",
                    eval.auc, eval.auc_2, eval.ap, eval.ap_2
                );
            }
            if let Some(best) = &outcome.best {
                let best_path = common.out.join("best.vckp");
                checkpoint::save(&best_path, &best.snapshot.build()?, best.step, None)?;
                println!(
                    "best checkpoint: AUC {:.4} at step {} -> {}",
                    best.auc,
                    best.step,
                    best_path.display()
                );
            }
            println!("checkpoint: {}", ckpt_path.display());
            println!("log: {}", log_path.display());
            Ok(())
        }
        Cmd::Eval {
            common,
            checkpoint: ckpt_path,
            manifest,
            granularity,
        } => {
            let cfg = resolve(&common, &[("granularity", &granularity)])?;
            echo_config(&common.out, &cfg)?;
            let model = checkpoint::load(&ckpt_path)?.build_model()?;
            let manifest = load_manifest(&manifest)?;
            let opts = EvalOptions {
                granularity: plain_granularity(&model, cfg.granularity),
                threads: EvalOptions::from_env()?.threads,
            };
            let report = evaluate(&model, &manifest, &opts)?;
            print!("{}", report);
            let json_path = common.out.join("metrics.json");
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Contract(format!("report serialization failed: {}", e)))?;
            std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
            println!("report: {}", json_path.display());
            Ok(())
        }
        Cmd::Score {
            common,
            checkpoint: ckpt_path,
            features,
            gt,
            granularity,
            corrected,
            plain,
        } => {
            let cfg = resolve(&common, &[("granularity", &granularity)])?;
            echo_config(&common.out, &cfg)?;
            let model = checkpoint::load(&ckpt_path)?.build_model()?;
            let matrix = load_features(&features, Some(model.config.feature_dim))?;
            let video_id = features
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "video".into());
            let seq = FeatureSequence {
                video_id,
                crop: 0,
                label: Label::Normal,
                features: matrix,
                frame_gt: gt.as_deref().map(load_gt).transpose()?,
            };

            // Both modes by default; a flag narrows to one.
            let both = !corrected && !plain;
            let mut outputs = Vec::new();
            if corrected || both {
                let rec = score_video(&model, &seq, ScoreMode::Corrected, Granularity::Segment)?;
                if let Some(p) = rec.video_score {
                    println!("video abnormality probability: {:.6}", p);
                }
                outputs.push(("corrected.csv", rec));
            }
            if plain || both {
                let g = plain_granularity(&model, cfg.granularity);
                let rec = score_video(&model, &seq, ScoreMode::Plain, g)?;
                outputs.push(("plain.csv", rec));
            }

            for (name, rec) in &outputs {
                let path = common.out.join(name);
                vcmil::evaluation::write_score_csv(&path, &rec.frame_scores)?;
                println!(
                    "{}: {} instance scores, {} frame rows ({})",
                    path.display(),
                    rec.instance_scores.len(),
                    rec.frame_scores.len(),
                    rec.granularity.name()
                );
                if let Some(gt) = &seq.frame_gt {
                    let aligned = align_to_gt(rec.frame_scores.clone(), gt.len());
                    match metrics::roc_auc(&aligned, gt) {
                        Ok(auc) => println!("  single-video AUC vs gt: {:.4}", auc),
                        Err(e) => println!("  single-video AUC undefined: {}", e),
                    }
                }
            }
            Ok(())
        }
    }
}
