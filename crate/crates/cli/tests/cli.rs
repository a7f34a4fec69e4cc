use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inpaint-aug"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn stats_on_three_records() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.csv");
    fs::write(&manifest, "id,path,A,B\nr1,r1.png,1,0\nr2,r2.png,1,1\nr3,r3.png,0,1\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "stats",
        "-q",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stats = json(&out.join("stats.json"));
    assert_eq!(stats["total_samples"], 3);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["command"], "stats");
    assert_eq!(summary["counts"], serde_json::json!([2, 2]));
    assert!(out.join("resolved_config.toml").exists());
}

#[test]
fn failing_stage_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "evaluate",
        "-q",
        "--classifier",
        "missing.ckpt",
        "--manifest",
        "missing.csv",
        "--train-manifest",
        "missing.csv",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `evaluate` failed"));
}

#[test]
fn bad_override_fails_config_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--set", "no_such_key=1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `config` failed"));
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_owned();
    let small = [
        "--set",
        "synth_train_samples=200",
        "--set",
        "synth_test_samples=40",
        "--set",
        "synth_image_size=32",
        "--set",
        "image_size=32",
        "--set",
        "epochs=2",
        "--set",
        "finetune_epochs=2",
        "--set",
        "gen_timesteps=10",
        "--set",
        "gen_epochs=1",
        "-q",
    ];
    let step = |args: &[&str]| {
        let mut all: Vec<&str> = args.to_vec();
        all.extend_from_slice(&small);
        let o = run(&all);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    step(&["synth", "--out", &d("s")]);
    let train = d("s/world/train.csv");
    let test = d("s/world/test.csv");
    step(&["train-gen", "--manifest", &train, "--out", &d("g")]);
    let normals_used = json(&dir.path().join("g/summary.json"))["normals"].as_u64().unwrap();
    assert!(normals_used > 0);
    step(&["train-classifier", "--manifest", &train, "--out", &d("c")]);
    step(&[
        "generate",
        "--manifest",
        &train,
        "--classifier",
        &d("c/classifier.ckpt"),
        "--generator",
        &d("g/generator.ckpt"),
        "--out",
        &d("a"),
    ]);
    step(&[
        "finetune",
        "--manifest",
        &train,
        "--classifier",
        &d("c/classifier.ckpt"),
        "--augmented",
        &d("a/augmented/augmented.csv"),
        "--out",
        &d("f"),
    ]);
    for (model, out) in [("c/classifier.ckpt", "eb"), ("f/classifier.ckpt", "et")] {
        step(&[
            "evaluate",
            "--manifest",
            &test,
            "--train-manifest",
            &train,
            "--classifier",
            &d(model),
            "--out",
            &d(out),
        ]);
    }
    step(&[
        "report",
        "--baseline",
        &d("eb/eval.json"),
        "--treated",
        &d("et/eval.json"),
        "--manifest",
        &train,
        "--out",
        &d("r"),
    ]);
    let md = fs::read_to_string(dir.path().join("r/report.md")).unwrap();
    assert!(md.contains("| Method | F1 Score |"));
    assert!(dir.path().join("r/class_distribution.svg").exists());
    assert!(dir.path().join("r/f1_delta.svg").exists());
}

/// The default synthetic world end to end. Takes a few minutes in release.
#[test]
#[ignore]
fn default_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let o = run(&["pipeline", "-q", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(t0.elapsed() < Duration::from_secs(15 * 60));
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["command"], "pipeline");
    assert!(dir.path().join("report/report.md").exists());
    assert!(dir.path().join("report/delta.json").exists());
}
