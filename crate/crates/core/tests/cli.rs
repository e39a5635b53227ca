use std::path::Path;
use std::process::{Command, Output};

use echographs::model::{save_checkpoint, Mode, Model, ModelConfig};
use echographs::syndata::{generate_case, random_params, write_video, ParamRanges};
use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echographs"))
        .args(args)
        .current_dir(dir)
        .env("ECHOGRAPH_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn small_config(dir: &Path) {
    std::fs::write(
        dir.join("small.toml"),
        "warmup_steps = 4\n[ranges]\nimage_size = 48\nn_cycles = 1\ncycle_len = [16, 20]\n",
    )
    .unwrap();
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(read_tree(&path));
        } else {
            out.push((path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap()));
        }
    }
    out.sort();
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn model_cfg(mode: Mode, size: usize) -> ModelConfig {
    ModelConfig {
        mode,
        image_height: size,
        image_width: size,
        ..ModelConfig::default()
    }
}

#[test]
fn gen_data_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_config(d);
    ok(d, &["gen-data", "--config", "small.toml", "--count", "10", "--seed", "7", "--out", "a"]);
    ok(d, &["gen-data", "--config", "small.toml", "--count", "10", "--seed", "7", "--out", "b"]);
    assert_eq!(read_tree(&d.join("a")), read_tree(&d.join("b")));
    ok(d, &["gen-data", "--count", "0", "--out", "empty"]);
    let text = std::fs::read_to_string(d.join("empty/annotations.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("case_id,frame_idx,phase,ef,x0,y0"));
}

#[test]
fn train_is_deterministic_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_config(d);
    ok(d, &["gen-data", "--config", "small.toml", "--count", "6", "--out", "data"]);
    let args = ["train", "--config", "small.toml", "--data", "data", "--batch", "4", "--seed", "3"];
    ok(d, &[&args[..], &["--epochs", "2", "--out", "r1"]].concat());
    ok(d, &[&args[..], &["--epochs", "2", "--out", "r2"]].concat());
    let csv1 = std::fs::read(d.join("r1/loss.csv")).unwrap();
    assert_eq!(csv1, std::fs::read(d.join("r2/loss.csv")).unwrap());
    assert_eq!(std::fs::read(d.join("r1/last.egrf")).unwrap(), std::fs::read(d.join("r2/last.egrf")).unwrap());
    let steps = json(&d.join("r1/train.json"))["steps"].as_u64().unwrap();
    assert!(steps > 0);
    assert!(d.join("r1/loss.config.json").exists());

    ok(d, &[&args[..], &["--epochs", "1", "--ckpt", "r1/last.egrf", "--out", "r3"]].concat());
    let resumed = json(&d.join("r3/train.json"));
    assert_eq!(resumed["start"], "resumed");
    let first_step: u64 = std::fs::read_to_string(d.join("r3/loss.csv")).unwrap().lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(first_step > steps);
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_config(d);
    ok(d, &["gen-data", "--config", "small.toml", "--count", "4", "--out", "data"]);
    ok(d, &["eval", "--data", "data", "--predictions", "data/annotations.csv", "--out", "ev"]);
    let s = json(&d.join("ev/summary.json"));
    assert_eq!(s["segmentation"]["dice"]["min"], 1.0);
    assert_eq!(s["segmentation"]["mke"]["max"], 0.0);
    assert_eq!(s["segmentation"]["hausdorff"]["max"], 0.0);
    assert!(s["ef_from_keypoints"]["mae"].as_f64().unwrap() < 1e-3);
    assert!(d.join("ev/segmentation.config.json").exists());
}

#[test]
fn infer_frame_writes_an_annotation_row() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_config(d);
    ok(d, &["gen-data", "--config", "small.toml", "--count", "1", "--out", "data"]);
    save_checkpoint(&Model::new(model_cfg(Mode::SingleFrame, 48), 1).unwrap(), &d.join("single.egrf")).unwrap();
    ok(d, &["infer-frame", "--ckpt", "single.egrf", "--video", "data/videos/case_00000.egvd", "--frame", "3", "--out", "kp.csv"]);
    let rows = echographs::syndata::read_annotations(&d.join("kp.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].frame_idx, 3);
    assert_eq!(rows[0].points.len(), 42);

    // a multi-frame checkpoint is a configuration error
    save_checkpoint(&Model::new(model_cfg(Mode::MultiFrameKnown, 48), 1).unwrap(), &d.join("known.egrf")).unwrap();
    let out = run(d, &["infer-frame", "--ckpt", "known.egrf", "--video", "data/videos/case_00000.egvd"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}

#[test]
fn single_window_video_gives_one_entry() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let ranges = ParamRanges {
        image_size: 48,
        n_cycles: 1,
        cycle_len: (16, 16),
        ..ParamRanges::default()
    };
    let case = generate_case(4, &random_params(4, &ranges)).unwrap();
    assert_eq!(case.video.len(), 16);
    write_video(&case.video, &d.join("clip.egvd")).unwrap();
    save_checkpoint(&Model::new(model_cfg(Mode::MultiFrameClassifier, 48), 2).unwrap(), &d.join("cls.egrf")).unwrap();
    ok(d, &["infer-video", "--ckpt", "cls.egrf", "--video", "clip.egvd", "--out", "r1.json"]);
    ok(d, &["infer-video", "--ckpt", "cls.egrf", "--video", "clip.egvd", "--mode", "classifier", "--out", "r2.json"]);
    let r = json(&d.join("r1.json"));
    assert_eq!(r["pipeline"], "classifier");
    assert_eq!(r["result"]["windows"].as_array().unwrap().len(), 1);
    assert_eq!(r["cycle_pairs"].as_array().unwrap().len(), 1);
    let ef = r["mean_ef"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ef));
    let mut r2 = json(&d.join("r2.json"));
    r2["config"] = r["config"].clone();
    assert_eq!(r, r2);

    let out = run(d, &["infer-video", "--ckpt", "cls.egrf", "--video", "clip.egvd", "--mode", "two-stage"]);
    assert!(!out.status.success());
}

#[test]
fn bench_reports_the_closed_form_parameter_count() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = ok(d, &["bench", "--repetitions", "3"]);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let count = r["parameter_count"].as_u64().unwrap() as usize;
    assert_eq!(count, ModelConfig::default().analytic_parameter_count());
    assert_eq!(r["parameter_count"], r["analytic_parameter_count"]);
    let keys: Vec<&str> = r.as_object().unwrap().keys().map(String::as_str).collect();
    let mut want = vec![
        "analytic_parameter_count",
        "config",
        "frames_per_forward",
        "latency_ms_per_frame",
        "mode",
        "model",
        "parameter_count",
        "repetitions",
        "threads",
        "warmup_runs",
    ];
    want.sort();
    assert_eq!(keys, want);
    for k in ["median", "p5", "p95", "mean", "min", "max"] {
        assert!(r["latency_ms_per_frame"][k].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn bad_flags_fail_before_work() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = run(d, &["train", "--lr", "-1", "--out", "x"]);
    assert!(!out.status.success());
    assert!(!d.join("x").exists());
    std::fs::write(d.join("bad.toml"), "no_such_key = 1\n").unwrap();
    assert!(!run(d, &["bench", "--config", "bad.toml"]).status.success());
}
