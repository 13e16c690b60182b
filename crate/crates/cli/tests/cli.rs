use std::path::Path;
use std::process::{Command, Output};

fn gath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gath"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gath(args);
    assert!(
        out.status.success(),
        "gath {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const MINI: &[&str] = &["--arch", "mini", "--batch-size", "2", "--aue-batch-size", "2", "--seed", "4"];

/// Corpus, estimator and a three-step checkpoint in `dir`.
fn pipeline(dir: &Path) {
    let p = |rel: &str| dir.join(rel).to_str().unwrap().to_string();
    ok(&["gen-corpus", "--out", &p("corpus"), "--identities", "2", "--expressions", "3", "--side", "8", "--seed", "2"]);
    let (target, aue) = (p("corpus/target.tsv"), p("aue.ckpt"));
    let mut args = vec!["train-aue", "--target", &target, "--out", &aue, "--aue-iterations", "3"];
    args.extend_from_slice(MINI);
    ok(&args);
    let (source, model, log) = (p("corpus/source.tsv"), p("model.ckpt"), p("train.jsonl"));
    let mut args = vec![
        "train", "--source", &source, "--target", &target, "--aue", &aue, "--out", &model, "--log", &log, "--iterations", "3",
    ];
    args.extend_from_slice(MINI);
    ok(&args);
}

#[test]
fn full_pipeline_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);
    let log = std::fs::read_to_string(d.join("train.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["total_g"].as_f64().unwrap().is_finite());
    }

    let table = ok(&[
        "evaluate",
        "--ckpt",
        s(&d.join("model.ckpt")),
        "--manifest",
        s(&d.join("corpus/target.tsv")),
        "--oracle",
        s(&d.join("aue.ckpt")),
        "--out",
        s(&d.join("report")),
    ]);
    assert!(!table.is_empty());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report/report.json")).unwrap()).unwrap();
    assert!(report["intra"].is_object());
    assert!(d.join("report/report.txt").exists());

    let portrait = d.join("corpus/neutral/id_000.png");
    let au = d.join("smile.txt");
    let mut values = vec!["0"; 46];
    values[0] = "1";
    std::fs::write(&au, values.join(" ")).unwrap();
    let out = d.join("out/smile.png");
    ok(&["synthesize", "--ckpt", s(&d.join("model.ckpt")), "--in", s(&portrait), "--au", s(&au), "--out", s(&out), "--postprocess", "clahe,sharpen"]);
    let img = gath_core::data::RasterImage::read(&out).unwrap();
    assert_eq!((img.width, img.height), (8, 8));

    let neutral = d.join("neutral.png");
    ok(&["suppress", "--ckpt", s(&d.join("model.ckpt")), "--in", s(&portrait), "--out", s(&neutral)]);
    assert!(neutral.exists());

    // Resume continues to a larger total.
    ok(&[
        "train",
        "--source",
        s(&d.join("corpus/source.tsv")),
        "--target",
        s(&d.join("corpus/target.tsv")),
        "--resume",
        s(&d.join("model.ckpt")),
        "--out",
        s(&d.join("resumed.ckpt")),
        "--iterations",
        "5",
    ]);
    let model = gath_core::training::load_checkpoint(&d.join("resumed.ckpt")).unwrap();
    assert_eq!(model.iteration, 5);
}

#[test]
fn animate_writes_one_frame_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);
    let rows: Vec<String> = (0..4)
        .map(|k| {
            let mut v = vec!["0".to_string(); 46];
            v[k] = "0.8".into();
            v.join("\t")
        })
        .collect();
    let seq = d.join("seq.tsv");
    std::fs::write(&seq, rows.join("\n") + "\n").unwrap();
    let frames = d.join("frames");
    ok(&[
        "animate",
        "--ckpt",
        s(&d.join("model.ckpt")),
        "--in",
        s(&d.join("corpus/neutral/id_001.png")),
        "--au-seq",
        s(&seq),
        "--out-dir",
        s(&frames),
    ]);
    let mut names: Vec<String> = std::fs::read_dir(&frames)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["frame_0000.png", "frame_0001.png", "frame_0002.png", "frame_0003.png"]);
}

#[test]
fn missing_config_names_the_path() {
    let out = gath(&["train-aue", "--target", "t.tsv", "--out", "a.ckpt", "--config", "/nonexistent/gath.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/gath.cfg"), "{err}");
    assert!(err.contains("error[io]"), "{err}");
}

#[test]
fn bad_config_value_is_a_config_error() {
    let out = gath(&["train-aue", "--target", "t.tsv", "--out", "a.ckpt", "--batch-size", "many"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[config]"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = gath(&["synthesize", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn wrong_au_length_is_reported_with_both_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);
    let au = d.join("short.txt");
    std::fs::write(&au, vec!["0.5"; 45].join(" ")).unwrap();
    let out = gath(&[
        "synthesize",
        "--ckpt",
        s(&d.join("model.ckpt")),
        "--in",
        s(&d.join("corpus/neutral/id_000.png")),
        "--au",
        s(&au),
        "--out",
        s(&d.join("x.png")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("46") && err.contains("45"), "{err}");
}
