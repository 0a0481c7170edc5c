//! Train the ranking + video-classification objective with the transformer
//! aggregator on synthetic data, evaluating every few epochs.

use vcmil::data::{synth_generate, SynthConfig};
use vcmil::losses::LossMode;
use vcmil::model::{checkpoint, BertConfig, ModelConfig};
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

    let cfg = TrainConfig {
        mode: LossMode::MilBert,
        model: ModelConfig {
            feature_dim: data.d,
            bert: BertConfig {
                layers: 1,
                heads: 4,
                ..Default::default()
            },
            ..Default::default()
        },
        epochs: 8,
        eval_every: 2,
        seed: 0,
        ..Default::default()
    };
    let outcome = train(&manifest, &cfg)?;

    let first = outcome.log.steps().next().unwrap();
    let last = outcome.log.steps().last().unwrap();
    println!(
        "loss {:.4} -> {:.4} over {} steps",
        first.total, last.total, outcome.step
    );
    for eval in outcome.log.evals() {
        println!(
            "epoch {:2}  AUC {:.4}  AUC-2 {:.4}  AP {:.4}",
            eval.epoch, eval.auc, eval.auc_2, eval.ap
        );
    }

    let ckpt = dir.path().join("model.vckp");
    checkpoint::save(&ckpt, &outcome.model, outcome.step, Some(&outcome.optimizer))?;
    println!("saved {} ({} bytes)", ckpt.display(), std::fs::metadata(&ckpt).unwrap().len());
    if let Some(best) = &outcome.best {
        println!("best AUC {:.4} at step {}", best.auc, best.step);
    }
    Ok(())
}
