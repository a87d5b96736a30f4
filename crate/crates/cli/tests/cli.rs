use std::path::Path;
use std::process::{Command, Output};

fn msk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msk"))
        .args(args)
        .env_remove("MSK_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = msk(args);
    assert!(
        out.status.success(),
        "msk {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Toy data, a window index and a tiny training run in `dir`.
fn prepared(dir: &Path, seed: &str) {
    let config = dir.join("tiny.toml");
    std::fs::write(
        &config,
        "[arch]\ncontent_channels = [8, 8]\nstyle_channels = [8, 8, 8]\nmlp_hidden = 16\ndisc_channels = [8, 8, 8]\n",
    )
    .unwrap();
    ok(&["toy-data", "--out", s(&dir.join("toy")), "--clips-per-style", "3"]);
    ok(&["dataset-prepare", "--manifest", s(&dir.join("toy/manifest.json")), "--out", s(&dir.join("index.json"))]);
    ok(&[
        "train",
        "--config",
        s(&config),
        "--seed",
        seed,
        "--index",
        s(&dir.join("index.json")),
        "--out",
        s(&dir.join("run")),
        "--iterations",
        "10",
        "--batch-size",
        "2",
        "--checkpoint-every",
        "0",
    ]);
}

#[test]
fn help_lists_commands_and_flags() {
    let top = ok(&["--help"]);
    for c in ["toy-data", "dataset-prepare", "train", "transfer", "interpolate", "embed", "eval-cluster", "baseline-spectral"] {
        assert!(top.contains(c), "{c} missing from help");
    }
    let transfer = ok(&["transfer", "--help"]);
    for f in ["--checkpoint", "--style-2d", "--no-warp", "--no-ik", "--seed", "--config"] {
        assert!(transfer.contains(f), "{f} missing from transfer help");
    }
}

#[test]
fn bad_invocations_fail() {
    assert!(!msk(&["train", "--bogus"]).status.success());
    let out = msk(&["transfer", "--checkpoint", "x", "--content", "y.bvh", "--out", "z.bvh"]);
    assert!(!out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let out = msk(&["dataset-prepare", "--manifest", s(&dir.path().join("none.json")), "--out", s(&dir.path().join("i.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("none.json"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[train]\niters = 3\n").unwrap();
    let out = msk(&["toy-data", "--config", s(&cfg), "--out", s(&dir.path().join("toy"))]);
    assert!(!out.status.success());
}

#[test]
fn pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepared(d, "3");
    let run = d.join("run");
    assert!(run.join("checkpoint-000010/meta.json").is_file());
    assert!(run.join("config.toml").is_file());
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 11);

    let content = d.join("toy/neutral_000.bvh");
    let style = d.join("toy/crouched_006.bvh");
    let out = ok(&[
        "transfer", "--checkpoint", s(&run), "--content", s(&content), "--style", s(&style), "--out", s(&d.join("t.bvh")), "--no-warp",
    ]);
    assert!(out.contains("V_con") && out.contains("warp factor 1.000000"));
    let text = std::fs::read_to_string(d.join("t.bvh")).unwrap();
    let frames = text.lines().find_map(|l| l.strip_prefix("Frames:")).unwrap().trim().to_string();
    assert_eq!(frames, "56");

    ok(&[
        "interpolate",
        "--checkpoint",
        s(&run),
        "--content",
        s(&content),
        "--style-a",
        s(&content),
        "--style-b",
        s(&style),
        "--steps",
        "3",
        "--out",
        s(&d.join("interp")),
    ]);
    for i in 0..3 {
        assert!(d.join(format!("interp/interp_{i:03}.bvh")).is_file());
    }

    ok(&["embed", "--checkpoint", s(&run), "--index", s(&d.join("index.json")), "--split", "all", "--out", s(&d.join("codes.csv"))]);
    let codes = std::fs::read_to_string(d.join("codes.csv")).unwrap();
    assert!(codes.starts_with("id,label,kind,v0"));
    let eval = ok(&["eval-cluster", "--codes", s(&d.join("codes.csv")), "--pca-out", s(&d.join("pca.csv"))]);
    assert!(eval.contains("silhouette") && eval.contains("probe accuracy"));
    assert!(d.join("pca.csv").is_file());

    ok(&[
        "baseline-spectral",
        "--content",
        s(&content),
        "--style-source",
        s(&content),
        "--style-target",
        s(&style),
        "--out",
        s(&d.join("spec.bvh")),
    ]);
}

#[test]
fn training_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    prepared(a.path(), "5");
    prepared(b.path(), "5");
    let read = |d: &Path| std::fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let weights = |d: &Path| std::fs::read(d.join("run/checkpoint-000010/weights.bin")).unwrap();
    assert_eq!(weights(a.path()), weights(b.path()));
}
