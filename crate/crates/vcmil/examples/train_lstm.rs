//! Swap the transformer for the two-layer LSTM aggregator and compare
//! frame-level AUC at matched epochs.

use vcmil::data::{synth_generate, SynthConfig};
use vcmil::evaluation::{evaluate, EvalOptions, Granularity};
use vcmil::model::{AggregatorKind, BertConfig, ModelConfig};
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

    let mut aucs = Vec::new();
    for aggregator in [AggregatorKind::Bert, AggregatorKind::Lstm] {
        let cfg = TrainConfig {
            model: ModelConfig {
                feature_dim: data.d,
                aggregator,
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
        let report = evaluate(
            &outcome.model,
            &manifest,
            &EvalOptions {
                granularity: Granularity::Segment,
                threads: 1,
            },
        )?;
        println!("{:4}: AUC {:.4}  AP {:.4}", aggregator.name(), report.auc, report.ap);
        aucs.push(report.auc);
    }
    println!("AUC gap |bert - lstm| = {:.4}", (aucs[0] - aucs[1]).abs());
    Ok(())
}
