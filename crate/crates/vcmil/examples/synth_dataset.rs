//! Generate a synthetic feature dataset and poke at its pieces: the manifest,
//! a feature file, per-frame ground truth, and the 32-segment pooling.

use vcmil::data::{
    inverse_segment, load_gt, load_split, segment, synth_generate, Split, SynthConfig,
    FRAMES_PER_SNIPPET, NUM_SEGMENTS,
};

fn main() -> vcmil::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = SynthConfig {
        n_train: 8,
        n_test: 4,
        d: 32,
        seed: 7,
        ..Default::default()
    };
    let manifest = synth_generate(dir.path(), &config)?;
    println!("manifest entries: {}", manifest.entries.len());

    let test = load_split(&manifest, Split::Test, Some(config.d))?;
    for seq in &test {
        let gt = seq.frame_gt.as_ref().expect("test split has ground truth");
        let positives = gt.iter().filter(|&&g| g == 1).count();
        println!(
            "{:10}  {:4} snippets  {:5} frames  {:4} abnormal frames  ({:?})",
            seq.video_id,
            seq.features.n,
            gt.len(),
            positives,
            seq.label
        );
        assert_eq!(gt.len(), seq.features.n * FRAMES_PER_SNIPPET);
    }

    // Pool the first video to 32 segments, then map segment scores back to
    // snippets: every snippet inherits the score of the segment covering it.
    let seq = &test[0];
    let seg = segment(&seq.features)?;
    println!(
        "first video: {} snippets -> {} segments, assignment head {:?}",
        seq.features.n,
        NUM_SEGMENTS,
        &seg.assignment[..8.min(seg.assignment.len())]
    );
    let seg_scores: Vec<f32> = (0..NUM_SEGMENTS).map(|i| i as f32 / 31.0).collect();
    let snippet_scores = inverse_segment(&seg_scores, &seg.assignment)?;
    println!(
        "snippet scores head {:?}",
        &snippet_scores[..8.min(snippet_scores.len())]
    );

    // Same gt file on disk as through the loader.
    let entry = manifest
        .entries
        .iter()
        .find(|e| e.video_id == seq.video_id)
        .unwrap();
    let gt = load_gt(entry.gt_path.as_ref().unwrap())?;
    assert_eq!(&gt, seq.frame_gt.as_ref().unwrap());
    println!("ground truth loader round-trips");
    Ok(())
}
