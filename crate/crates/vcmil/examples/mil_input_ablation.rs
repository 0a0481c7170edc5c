//! Which features should the MIL head score? Pooled segment features x_i,
//! the aggregator's refined outputs y_i, or raw snippets f_i. Trains one
//! model per choice and compares frame-level AUC.

use vcmil::data::{synth_generate, SynthConfig};
use vcmil::evaluation::{evaluate, EvalOptions, Granularity};
use vcmil::model::{BertConfig, MilInput, ModelConfig};
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

    for mil_input in [MilInput::Segment, MilInput::Refined, MilInput::Snippet] {
        let cfg = TrainConfig {
            model: ModelConfig {
                feature_dim: data.d,
                mil_input,
                bert: BertConfig {
                    layers: 1,
                    heads: 4,
                    ..Default::default()
                },
                ..Default::default()
            },
            epochs: 8,
            seed: 0,
            ..Default::default()
        };
        let outcome = train(&manifest, &cfg)?;
        // Refined features only exist on the segment path, so evaluate
        // everything there for a like-for-like comparison.
        let report = evaluate(
            &outcome.model,
            &manifest,
            &EvalOptions {
                granularity: Granularity::Segment,
                threads: 1,
            },
        )?;
        println!(
            "mil_input {:3}:  AUC {:.4}  AUC-2 {:.4}  AP {:.4}",
            mil_input.name(),
            report.auc,
            report.auc_2,
            report.ap
        );
    }
    Ok(())
}
