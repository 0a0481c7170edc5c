//! The magnitude-driven objective: top-k feature norms feed a BCE blended
//! with the video-classification BCE, plus a margin on the norms themselves.
//! Runs two blend weights and reports both.

use vcmil::data::{synth_generate, SynthConfig};
use vcmil::evaluation::{evaluate, EvalOptions, Granularity};
use vcmil::losses::{LossConfig, LossMode};
use vcmil::model::{BertConfig, ModelConfig};
use vcmil::training::{train, TrainConfig};

fn main() -> vcmil::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = SynthConfig {
        n_train: 12,
        n_test: 8,
        d: 24,
        seed: 0,
        ..Default::default()
    };
    let manifest = synth_generate(dir.path(), &data)?;

    for beta in [0.5f32, 0.7] {
        let cfg = TrainConfig {
            mode: LossMode::RtfmBert,
            model: ModelConfig {
                feature_dim: data.d,
                bert: BertConfig {
                    layers: 1,
                    heads: 4,
                    ..Default::default()
                },
                ..Default::default()
            },
            loss: LossConfig {
                beta,
                ..Default::default()
            },
            epochs: 8,
            seed: 0,
            ..Default::default()
        };
        let outcome = train(&manifest, &cfg)?;
        let report = evaluate(
            &outcome.model,
            &manifest,
            &EvalOptions {
                granularity: Granularity::Segment,
                threads: 1,
            },
        )?;
        let last = outcome.log.steps().last().unwrap();
        println!(
            "beta {:.1}: final loss {:.4} (video bce {:.4}, magnitude bce {:.4}, rank {:.4})",
            beta,
            last.total,
            last.bce_video,
            last.bce_rtfm.unwrap(),
            last.rtfm_rank.unwrap()
        );
        println!("          AUC {:.4}  AUC-2 {:.4}", report.auc, report.auc_2);
    }
    Ok(())
}
