//! End-to-end runs of the `locate` binary: the full artifact chain, exit
//! codes, and byte-level determinism.

use std::path::Path;
use std::process::{Command, Output};

fn locate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locate"))
        .args(args)
        .env("LOCATE_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Generate a small dataset into `dir/name` and return its path.
fn gen_dataset(dir: &Path, name: &str, classes: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join(name);
    let out = locate(&[
        "generate",
        "--classes",
        &classes.to_string(),
        "--sequences",
        "4",
        "--duration-min",
        "3",
        "--duration-max",
        "4",
        "--seed",
        &seed.to_string(),
        "-o",
        path.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    path
}

/// Train a deliberately tiny model for two epochs; returns the run dir.
fn tiny_train(dir: &Path, data: &Path) -> std::path::PathBuf {
    let run = dir.join("run");
    let out = locate(&[
        "train",
        "--train",
        data.to_str().unwrap(),
        "--val",
        data.to_str().unwrap(),
        "--epochs",
        "2",
        "--batch",
        "2",
        "--dim",
        "8",
        "--layers",
        "1",
        "--heads",
        "2",
        "--snippet",
        "2",
        "--seq-len",
        "8",
        "--queries",
        "4",
        "--samples-k",
        "2",
        "--seed",
        "3",
        "-o",
        run.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    run
}

#[test]
fn full_pipeline_produces_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = gen_dataset(dir, "data.json", 2, 11);
    let run = tiny_train(dir, &data);
    assert!(run.join("best.ckpt").exists());
    let log = read(&run.join("train_log.csv"));
    assert_eq!(log.lines().count(), 3, "header plus one row per epoch:\n{log}");
    assert!(log.starts_with("epoch,"));

    let dets = dir.join("dets.jsonl");
    let out = locate(&[
        "predict",
        run.join("best.ckpt").to_str().unwrap(),
        data.to_str().unwrap(),
        "--score-threshold",
        "0.0",
        "-o",
        dets.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    assert!(read(&dets).starts_with('#'));

    let kept = dir.join("kept.jsonl");
    let out = locate(&[
        "nms",
        dets.to_str().unwrap(),
        "--nms-iou",
        "0.5",
        "-o",
        kept.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);

    let eval_dir = dir.join("eval");
    let out = locate(&[
        "eval",
        kept.to_str().unwrap(),
        data.to_str().unwrap(),
        "--thresholds",
        "0.3,0.5",
        "-o",
        eval_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let bundle: serde_json::Value =
        serde_json::from_str(&read(&eval_dir.join("report.json"))).expect("report parses");
    assert_eq!(bundle["report"]["thresholds"], serde_json::json!([0.3, 0.5]));
    assert_eq!(bundle["report"]["ap"].as_array().unwrap().len(), 2);
    assert_eq!(bundle["class_names"].as_array().unwrap().len(), 2);
    let csv = read(&eval_dir.join("report.csv"));
    assert!(csv.contains("motif_00"), "csv names classes:\n{csv}");

    let plot_dir = dir.join("plots");
    let out = locate(&[
        "report",
        eval_dir.join("report.json").to_str().unwrap(),
        "-o",
        plot_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let ap_svg = read(&plot_dir.join("ap_vs_tiou.svg"));
    assert_eq!(
        ap_svg.matches("<polyline").count(),
        2,
        "one AP curve per class"
    );
    let conf_svg = read(&plot_dir.join("confusion.svg"));
    assert!(conf_svg.contains("(none)"));
}

#[test]
fn generate_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = gen_dataset(tmp.path(), "a.json", 3, 7);
    let b = gen_dataset(tmp.path(), "b.json", 3, 7);
    let c = gen_dataset(tmp.path(), "c.json", 3, 8);
    assert_eq!(read(&a), read(&b), "same seed, same bytes");
    assert_ne!(read(&a), read(&c), "different seed, different data");
}

#[test]
fn bad_inputs_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out_path = dir.join("x.json");

    // Config rejected by validation.
    let out = locate(&[
        "generate",
        "--sequences",
        "0",
        "-o",
        out_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);

    // Unknown flag is a usage error.
    let out = locate(&["generate", "--such-flag", "-o", out_path.to_str().unwrap()]);
    assert_exit(&out, 2);

    // Missing files.
    let data = gen_dataset(dir, "data.json", 2, 1);
    let out = locate(&[
        "train",
        "--train",
        data.to_str().unwrap(),
        "--val",
        dir.join("nope.json").to_str().unwrap(),
        "-o",
        dir.join("run").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    let out = locate(&[
        "nms",
        dir.join("nope.jsonl").to_str().unwrap(),
        "-o",
        out_path.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn checkpoint_class_count_mismatch_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let two = gen_dataset(dir, "two.json", 2, 5);
    let three = gen_dataset(dir, "three.json", 3, 5);
    let run = tiny_train(dir, &two);
    let out = locate(&[
        "predict",
        run.join("best.ckpt").to_str().unwrap(),
        three.to_str().unwrap(),
        "-o",
        dir.join("d.jsonl").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("2 classes") && err.contains('3'), "stderr: {err}");
}

#[test]
fn help_exits_zero_everywhere() {
    for sub in [
        None,
        Some("generate"),
        Some("preprocess"),
        Some("train"),
        Some("predict"),
        Some("nms"),
        Some("eval"),
        Some("report"),
    ] {
        let mut args = Vec::new();
        if let Some(s) = sub {
            args.push(s);
        }
        args.push("--help");
        let out = locate(&args);
        assert_exit(&out, 0);
    }
}

#[test]
fn impossible_score_threshold_yields_empty_but_valid_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = gen_dataset(dir, "data.json", 2, 2);
    let run = tiny_train(dir, &data);
    let dets = dir.join("none.jsonl");
    let out = locate(&[
        "predict",
        run.join("best.ckpt").to_str().unwrap(),
        data.to_str().unwrap(),
        "--score-threshold",
        "1.1",
        "-o",
        dets.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let body = read(&dets);
    assert!(
        body.lines().all(|l| l.starts_with('#')),
        "sigmoid scores cannot reach 1.1:\n{body}"
    );

    // An empty detection set still evaluates: zero AP, valid report.
    let eval_dir = dir.join("eval");
    let out = locate(&[
        "eval",
        dets.to_str().unwrap(),
        data.to_str().unwrap(),
        "-o",
        eval_dir.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let bundle: serde_json::Value =
        serde_json::from_str(&read(&eval_dir.join("report.json"))).unwrap();
    assert_eq!(bundle["report"]["avg_map"], serde_json::json!(0.0));
}

#[test]
fn preprocess_writes_one_record_per_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = gen_dataset(dir, "data.json", 2, 9);
    let snips = dir.join("snips.json");
    let out = locate(&[
        "preprocess",
        data.to_str().unwrap(),
        "--snippet",
        "2",
        "--seq-len",
        "8",
        "-o",
        snips.to_str().unwrap(),
    ]);
    assert_exit(&out, 0);
    let records: serde_json::Value = serde_json::from_str(&read(&snips)).unwrap();
    let records = records.as_array().unwrap();
    assert_eq!(records.len(), 4);
    for r in records {
        assert_eq!(r["t"], serde_json::json!(8));
        assert_eq!(r["n_f"], serde_json::json!(2));
        assert_eq!(r["data"].as_array().unwrap().len(), 8 * 66 * 2);
        assert!(r["id"].as_str().unwrap().starts_with("seq_"));
    }
}
