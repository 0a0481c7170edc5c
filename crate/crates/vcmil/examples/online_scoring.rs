//! Score a stream of snippets one at a time. The online path runs only the
//! MIL head, never the sequence aggregator, so each snippet costs a couple of
//! small matmuls and produces the same number batch scoring would.

use vcmil::data::{load_split, synth_generate, Split, SynthConfig};
use vcmil::evaluation::{score_video, Granularity, OnlineScorer, ScoreMode};
use vcmil::model::{BertConfig, ModelConfig};
use vcmil::training::{train, TrainConfig};

fn main() -> vcmil::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = SynthConfig {
        n_train: 8,
        n_test: 4,
        d: 24,
        seed: 1,
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
        epochs: 4,
        seed: 1,
        ..Default::default()
    };
    let model = train(&manifest, &cfg)?.model;

    let seq = &load_split(&manifest, Split::Test, Some(data.d))?[0];
    let mut scorer = OnlineScorer::new(&model)?;
    let mut streamed = Vec::with_capacity(seq.features.n);
    for j in 0..seq.features.n {
        streamed.push(scorer.push(seq.features.row(j))?);
    }
    println!(
        "streamed {} snippets of {}: scores head {:?}",
        streamed.len(),
        seq.video_id,
        &streamed[..4.min(streamed.len())]
    );

    let batch = score_video(&model, seq, ScoreMode::Plain, Granularity::Snippet)?;
    assert_eq!(streamed, batch.instance_scores);
    println!("online scores match the batch snippet path exactly");
    Ok(())
}
