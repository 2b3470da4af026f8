use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmstew::models::{read_checkpoint, CheckpointKind};
use cmstew::training::{read_metrics, MetricsLine};

const CONFIG: &str = r#"{
  "run_id": "t",
  "manifest": "data/synthetic/manifest.json",
  "strong": "strong",
  "weak": "weak",
  "arch": {"latent_dim": 4, "ffn_hidden": 8, "classifier_hidden": 6, "gru_layers": 1,
           "gru_hidden": 4, "transformer_layers": 1, "decoder_gru_layers": 1, "decoder_hidden": 4},
  "train": {"lr": 0.003, "batch_size": 4, "max_epochs": 3},
  "synthetic": {"train_clips": 12, "dev_clips": 4, "test_clips": 4, "clip_len": 10, "seed": 3}
}"#;

fn cmstew(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmstew"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env("CMSTEW_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// A workspace with the config and its synthetic dataset.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), CONFIG).unwrap();
    ok(&cmstew(
        dir.path(),
        &["--config", "run.json", "--out", "data", "synth"],
    ));
    dir
}

fn without_time(lines: Vec<MetricsLine>) -> Vec<MetricsLine> {
    lines
        .into_iter()
        .map(|mut l| {
            l.seconds = 0.0;
            l
        })
        .collect()
}

#[test]
fn two_stage_training_and_evaluation() {
    let ws = workspace();
    let d = ws.path();
    let out = ok(&cmstew(
        d,
        &["--config", "run.json", "train", "--stage", "source"],
    ));
    let summary: MetricsLine = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(summary.split, "best");
    let ckpt = d.join("out/t.source.ckpt");
    assert_eq!(
        read_checkpoint(&ckpt).unwrap().kind(),
        CheckpointKind::Source
    );

    // Evaluation reproduces the dev value logged at the selected epoch.
    let eval = ok(&cmstew(
        d,
        &[
            "--config",
            "run.json",
            "eval",
            "--checkpoint",
            "out/t.source.ckpt",
        ],
    ));
    let eval: MetricsLine = serde_json::from_str(eval.trim()).unwrap();
    let logged = read_metrics(&d.join("out/metrics.jsonl"))
        .unwrap()
        .into_iter()
        .find(|l| l.stage == "source" && l.split == "dev" && l.epoch == summary.epoch)
        .unwrap();
    assert_eq!(eval.acc, logged.acc);
    assert_eq!(eval.loss_p, logged.loss_p);

    ok(&cmstew(
        d,
        &[
            "--config",
            "run.json",
            "train",
            "--stage",
            "weak",
            "--source",
            "out/t.source.ckpt",
            "--ablation",
            "no-decoder",
        ],
    ));
    let weak = read_checkpoint(&d.join("out/t.weak.ckpt")).unwrap();
    assert_eq!(weak.kind(), CheckpointKind::Weak);
    assert!(weak.network().decoder.is_none());
    let recorded: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/t.weak.config.json")).unwrap())
            .unwrap();
    assert_eq!(recorded["train"]["beta"], 0.0);
    assert_eq!(recorded["train"]["ablation"], "no_decoder");

    // The weak checkpoint needs nothing but weak-modality files.
    let weak_only = d.join("weak_only");
    let manifest = weak_only_manifest(d, &weak_only);
    ok(&cmstew(
        d,
        &[
            "--config",
            "run.json",
            "--set",
            &format!("manifest={}", manifest.display()),
            "eval",
            "--checkpoint",
            "out/t.weak.ckpt",
            "--split",
            "test",
        ],
    ));

    let bad = cmstew(
        d,
        &[
            "--config",
            "run.json",
            "eval",
            "--checkpoint",
            "out/t.weak.ckpt",
            "--split",
            "holdout",
        ],
    );
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("available: train, dev, test"));
}

/// Copy of the synthetic manifest that lists the weak modality only.
fn weak_only_manifest(ws: &Path, dir: &Path) -> PathBuf {
    let src = ws.join("data/synthetic");
    let mut m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(src.join("manifest.json")).unwrap()).unwrap();
    m["modalities"].as_object_mut().unwrap().remove("strong");
    for split in m["splits"].as_object_mut().unwrap().values_mut() {
        for clip in split.as_array_mut().unwrap() {
            let feats = clip["features"].as_object_mut().unwrap();
            feats.remove("strong");
            for v in feats.values_mut() {
                *v = serde_json::Value::String(src.join(v.as_str().unwrap()).display().to_string());
            }
            let labels = clip["labels"].as_str().unwrap();
            clip["labels"] = serde_json::Value::String(src.join(labels).display().to_string());
        }
    }
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    path
}

#[test]
fn reruns_reproduce_the_metrics_stream() {
    let ws = workspace();
    let d = ws.path();
    let run = |out: &str| {
        ok(&cmstew(
            d,
            &[
                "--config", "run.json", "--out", out, "--seed", "4", "train", "--stage", "source",
            ],
        ));
        without_time(read_metrics(&d.join(out).join("metrics.jsonl")).unwrap())
    };
    let a = run("a");
    let b = run("b");
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(d.join("a/t.source.ckpt")).unwrap(),
        std::fs::read(d.join("b/t.source.ckpt")).unwrap()
    );
    // Appended, never overwritten.
    run("a");
    assert_eq!(
        read_metrics(&d.join("a/metrics.jsonl")).unwrap().len(),
        2 * a.len()
    );
}

#[test]
fn exit_codes_follow_the_mapping() {
    let ws = workspace();
    let d = ws.path();
    let missing = cmstew(d, &["--config", "run.json", "train", "--stage", "weak"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("source checkpoint"));

    let unknown = cmstew(
        d,
        &["--config", "run.json", "--set", "train.bogus=1", "synth"],
    );
    assert_eq!(unknown.status.code(), Some(2));

    let io = cmstew(
        d,
        &[
            "--config",
            "run.json",
            "--set",
            "manifest=nowhere.json",
            "train",
            "--stage",
            "source",
        ],
    );
    assert_eq!(io.status.code(), Some(4));

    let diverged = cmstew(
        d,
        &[
            "--config",
            "run.json",
            "--set",
            "train.lr=1e30",
            "train",
            "--stage",
            "source",
        ],
    );
    assert_eq!(
        diverged.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&diverged.stderr)
    );

    let single = cmstew(d, &["--config", "run.json", "rank", "--modalities", "weak"]);
    assert_eq!(single.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&single.stderr).contains("at least 2"));
}

#[test]
fn rank_orders_the_synthetic_modalities() {
    let ws = workspace();
    let d = ws.path();
    let out = ok(&cmstew(d, &["--config", "run.json", "rank"]));
    assert!(out.contains("modality"));
    let ranked: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/ranking.json")).unwrap())
            .unwrap();
    assert_eq!(ranked.len(), 2);
    assert!(ranked[0]["score"].as_f64().unwrap() >= ranked[1]["score"].as_f64().unwrap());
}

#[test]
fn verify_fails_on_a_tampered_oracle() {
    let ws = workspace();
    let d = ws.path();
    let good = ok(&cmstew(d, &["verify"]));
    assert!(good.contains("PASS ccc_example"));
    let bad = cmstew(d, &["--set", "oracles.window_count=299", "verify"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL window_count"));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("window_count"));
}

#[test]
fn sweep_reports_every_variant() {
    let ws = workspace();
    let d = ws.path();
    let out = ok(&cmstew(
        d,
        &[
            "--config",
            "run.json",
            "--set",
            "seeds=[0,1]",
            "--set",
            "train.max_epochs=1",
            "sweep",
        ],
    ));
    assert!(out.contains("no_decoder") && out.contains("mean"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/sweep.json")).unwrap()).unwrap();
    assert_eq!(summary["per_seed"].as_array().unwrap().len(), 2);
}
