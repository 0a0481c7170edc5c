//! End-to-end tests of the binary: artifact layout, determinism, the resolved
//! config echo, and the exit-code contract.

use std::path::Path;
use std::process::Output;

use vcmil::data::{save_features, save_manifest, FeatureMatrix, Label, Manifest, ManifestEntry, Split};

fn vcmil(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_vcmil"))
        .args(args)
        .output()
        .expect("failed to launch the binary")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Tiny dataset so every test trains in well under a second.
fn synth(dir: &Path, seed: u64) {
    let out = vcmil(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--set",
        "n_train=4",
        "--set",
        "n_test=2",
        "--set",
        "feature_dim=8",
        "--set",
        "snippets_min=8",
        "--set",
        "snippets_max=12",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
}

fn train(data: &Path, run: &Path, extra: &[&str]) -> Output {
    let manifest = data.join("manifest.tsv");
    let mut args = vec![
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--epochs",
        "1",
        "--set",
        "feature_dim=8",
    ];
    args.extend_from_slice(extra);
    vcmil(&args)
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    synth(&a, 5);
    synth(&b, 5);
    let manifest_a = std::fs::read_to_string(a.join("manifest.tsv")).unwrap();
    let manifest_b = std::fs::read_to_string(b.join("manifest.tsv")).unwrap();
    assert_eq!(
        manifest_a.replace(a.to_str().unwrap(), ""),
        manifest_b.replace(b.to_str().unwrap(), "")
    );
    for entry in ["train_000_c0.vfea", "test_000_c0.vfea", "test_000.gt"] {
        let fa = std::fs::read(a.join(entry)).unwrap();
        let fb = std::fs::read(b.join(entry)).unwrap();
        assert_eq!(fa, fb, "{} differs between identical seeds", entry);
    }
}

#[test]
fn training_writes_checkpoint_log_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 0);
    let run = dir.path().join("run");
    let out = train(&data, &run, &[]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(run.join("model.vckp").exists());
    assert!(run.join("train_log.jsonl").exists());
    let echo = std::fs::read_to_string(run.join("resolved.cfg")).unwrap();
    assert!(echo.contains("feature_dim = 8"));
    assert!(echo.contains("epochs = 1"));
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert!(log.lines().next().unwrap().contains("\"event\":\"step\""));
}

#[test]
fn rerunning_from_the_echoed_config_reproduces_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1);
    let first = dir.path().join("first");
    let out = train(&data, &first, &["--lr", "0.0003", "--seed", "9"]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let second = dir.path().join("second");
    let out = vcmil(&[
        "train",
        "--manifest",
        data.join("manifest.tsv").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
        "--config",
        first.join("resolved.cfg").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let a = std::fs::read(first.join("model.vckp")).unwrap();
    let b = std::fs::read(second.join("model.vckp")).unwrap();
    assert_eq!(a, b, "checkpoints differ after config round trip");
}

#[test]
fn eval_prints_both_modes_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 2);
    let run = dir.path().join("run");
    assert!(train(&data, &run, &[]).status.success());

    let eval_dir = dir.path().join("eval");
    let out = vcmil(&[
        "eval",
        "--checkpoint",
        run.join("model.vckp").to_str().unwrap(),
        "--manifest",
        data.join("manifest.tsv").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("AUC"));
    assert!(stdout.contains("AUC-2"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap())
            .unwrap();
    assert!(json["auc"].is_number());
    assert!(json["auc_2"].is_number());
    assert_eq!(json["videos"].as_array().unwrap().len(), 2);
}

#[test]
fn score_writes_sixteen_frame_rows_per_snippet_in_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3);
    let run = dir.path().join("run");
    assert!(train(&data, &run, &[]).status.success());

    let feature = std::fs::read_dir(&data)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("test_000"))
        .filter(|p| p.extension().is_some_and(|x| x == "vfea"))
        .unwrap();
    let n = vcmil::data::load_features(&feature, Some(8)).unwrap().n;

    let score_dir = dir.path().join("score");
    let out = vcmil(&[
        "score",
        "--checkpoint",
        run.join("model.vckp").to_str().unwrap(),
        "--features",
        feature.to_str().unwrap(),
        "--out",
        score_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    for name in ["corrected.csv", "plain.csv"] {
        let text = std::fs::read_to_string(score_dir.join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("frame_index,score"));
        assert_eq!(lines.count(), 16 * n, "{} row count", name);
    }
}

#[test]
fn plain_flag_narrows_the_score_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 4);
    let run = dir.path().join("run");
    assert!(train(&data, &run, &[]).status.success());
    let feature = data.join("test_000_c0.vfea");

    let score_dir = dir.path().join("score");
    let out = vcmil(&[
        "score",
        "--checkpoint",
        run.join("model.vckp").to_str().unwrap(),
        "--features",
        feature.to_str().unwrap(),
        "--out",
        score_dir.to_str().unwrap(),
        "--plain",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(score_dir.join("plain.csv").exists());
    assert!(!score_dir.join("corrected.csv").exists());
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let out = vcmil(&[
        "synth",
        "--out",
        dir.path().join("x").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("learning_rate"));

    let out = vcmil(&["train", "--manifest", "m.tsv", "--out", "o", "--mode", "bilstm"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
}

#[test]
fn data_errors_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = vcmil(&[
        "train",
        "--manifest",
        dir.path().join("absent.tsv").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
}

#[test]
fn numeric_aborts_exit_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = 8;
    let mk = |name: &str, fill: f32| {
        let path = dir.path().join(format!("{}.vfea", name));
        save_features(&path, &FeatureMatrix::new(8, d, vec![fill; 8 * d]).unwrap()).unwrap();
        path
    };
    let manifest = Manifest {
        entries: vec![
            ManifestEntry {
                path: mk("a", f32::INFINITY),
                video_id: "a".into(),
                label: Label::Abnormal,
                split: Split::Train,
                crop: 0,
                gt_path: None,
            },
            ManifestEntry {
                path: mk("n", 0.2),
                video_id: "n".into(),
                label: Label::Normal,
                split: Split::Train,
                crop: 0,
                gt_path: None,
            },
        ],
    };
    let manifest_path = dir.path().join("manifest.tsv");
    save_manifest(&manifest_path, &manifest).unwrap();

    let out = vcmil(&[
        "train",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--epochs",
        "1",
        "--set",
        "feature_dim=8",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("numeric abort"));
}
