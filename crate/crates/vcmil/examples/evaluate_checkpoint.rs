//! Persist a trained model, reload it from disk, and run the full test-split
//! evaluation in both scoring modes. Set VCMIL_THREADS to parallelize the
//! per-video scoring.

use vcmil::data::{load_split, synth_generate, Split, SynthConfig};
use vcmil::evaluation::{
    evaluate, score_video, write_score_csv, EvalOptions, Granularity, ScoreMode,
};
use vcmil::model::{checkpoint, BertConfig, ModelConfig};
use vcmil::training::{train, TrainConfig};

fn main() -> vcmil::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = SynthConfig {
        n_train: 10,
        n_test: 6,
        d: 24,
        seed: 3,
        ..Default::default()
    };
    let manifest = synth_generate(dir.path(), &data)?;

    let cfg = TrainConfig {
        model: ModelConfig {
            feature_dim: data.d,
            bert: BertConfig {
                layers: 1,
                heads: 4,
                ..Default::default()
            },
            ..Default::default()
        },
        epochs: 6,
        seed: 3,
        ..Default::default()
    };
    let outcome = train(&manifest, &cfg)?;

    let path = dir.path().join("model.vckp");
    checkpoint::save(&path, &outcome.model, outcome.step, Some(&outcome.optimizer))?;
    let loaded = checkpoint::load(&path)?;
    println!("reloaded checkpoint from step {}", loaded.step);
    let model = loaded.build_model()?;

    let opts = EvalOptions {
        granularity: Granularity::Snippet,
        threads: EvalOptions::from_env()?.threads,
    };
    let report = evaluate(&model, &manifest, &opts)?;
    print!("{}", report);

    // Export one test video's corrected frame scores as CSV.
    let seq = &load_split(&manifest, Split::Test, Some(data.d))?[0];
    let record = score_video(&model, seq, ScoreMode::Corrected, Granularity::Segment)?;
    let csv = dir.path().join(format!("{}.csv", seq.video_id));
    write_score_csv(&csv, &record.frame_scores)?;
    println!("wrote {} rows to {}", record.frame_scores.len(), csv.display());
    Ok(())
}
