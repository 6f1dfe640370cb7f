//! End-to-end runs of the command-line tool. Each command is run once with
//! flags and once from the configuration it echoed; both runs must leave
//! byte-identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cfm_motion::predictor::read_checkpoint;
use cfm_motion::trainer::{init_model, TrainConfig};

const BIN: &str = env!("CARGO_BIN_EXE_cfm-motion");

const SMALL: &[&str] = &[
    "--set",
    "dataset.sequences_per_family=3",
    "--set",
    "dataset.max_frames=40",
    "--set",
    "test_sequences_per_family=8",
    "--set",
    "predictor.hidden_dim=16",
    "--set",
    "predictor.layer_count=1",
    "--set",
    "predictor.max_frames=40",
    "--set",
    "train.batch_size=4",
    "--set",
    "train.steps=20",
    "--set",
    "train.learning_rate=0.003",
    "--set",
    "sample.frames=30",
    "--set",
    "sample.steps=4",
    "--set",
    "eval.trials=2",
    "--set",
    "eval.r_precision_batch=8",
    "--set",
    "eval.mmodality_samples=3",
    "--set",
    "ablation.seeds=[5]",
];

fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                out.insert(path.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Runs `command` into `<root>/<name>_a` with `args`, then again into
/// `<root>/<name>_b` from the echoed configuration only.
fn rerun_matches(root: &Path, name: &str, command: &[&str], args: &[&str]) -> PathBuf {
    let a = root.join(format!("{name}_a"));
    let b = root.join(format!("{name}_b"));
    let mut first: Vec<&str> = command.to_vec();
    first.extend(["--out", s(&a)]);
    first.extend(args);
    ok(&first);
    let echo = a.join("config.json");
    let mut second: Vec<&str> = command.to_vec();
    second.extend(["--out", s(&b), "--config", s(&echo)]);
    ok(&second);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>(), "{name}: file sets differ");
    for (k, v) in &sa {
        assert!(v == &sb[k], "{name}: {} differs between runs", k.display());
    }
    a
}

#[test]
fn every_command_reproduces_from_its_echoed_config() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();

    let data = rerun_matches(root, "data", &["dataset-gen"], SMALL);
    assert!(data.join("train/manifest.json").is_file());
    assert!(data.join("test/manifest.json").is_file());

    let train = rerun_matches(root, "train", &["train", "--data", s(&data)], SMALL);
    let ck = train.join("checkpoint.fmck");
    let loss = std::fs::read_to_string(train.join("loss.csv")).unwrap();
    assert!(loss.starts_with("step,loss\n"));

    let sample = rerun_matches(root, "sample", &["sample", "--checkpoint", s(&ck), "--count", "2"], SMALL);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(sample.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.as_array().unwrap().len(), 8);

    let eval = rerun_matches(root, "eval", &["evaluate", "--target", s(&ck), "--data", s(&data)], SMALL);
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["fid"]["trials"], 2);
    assert!(eval.join("metrics_trials.csv").is_file());

    let sweep = rerun_matches(root, "sweep", &["sweep", "--checkpoint", s(&ck), "--data", s(&data)], &[SMALL, &["--values", "1,3"]].concat());
    let csv = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    roxmltree::Document::parse(&std::fs::read_to_string(sweep.join("plots/sweep.svg")).unwrap()).unwrap();

    let plot = rerun_matches(root, "plot", &["plot", s(&sample.join("motions/000000.fmot"))], SMALL);
    roxmltree::Document::parse(&std::fs::read_to_string(plot.join("plots/000000.svg")).unwrap()).unwrap();

    let ablation = rerun_matches(root, "ablation", &["ablation", "--data", s(&data)], SMALL);
    let csv = std::fs::read_to_string(ablation.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("5,")).count(), 2);
    assert!(ablation.join("arms/target_seed5/checkpoint.fmck").is_file());
    assert!(ablation.join("arms/vector_field_seed5/metrics.json").is_file());
}

#[test]
fn dataset_generation_depends_only_on_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        ok(&[&["dataset-gen", "--out", s(&out), "--seed", seed], SMALL].concat());
        out
    };
    let a = snapshot(&run("a", "4"));
    let b = snapshot(&run("b", "4"));
    let c = snapshot(&run("c", "5"));
    assert_eq!(a, b);
    let key = PathBuf::from("train/motions/000000.fmot");
    assert_ne!(a[&key], c[&key]);
}

#[test]
fn training_zero_steps_writes_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&[&["dataset-gen", "--out", s(&data)], SMALL].concat());
    let out = tmp.path().join("train");
    ok(&[&["train", "--data", s(&data), "--out", s(&out), "--steps", "0"], SMALL].concat());
    let model = read_checkpoint(out.join("checkpoint.fmck")).unwrap();
    let dataset = cfm_motion::motion_data::read_dataset(data.join("train")).unwrap();
    let train: TrainConfig = serde_json::from_value(model.header.train.clone().unwrap()).unwrap();
    assert_eq!(train.steps, 0);
    let init = init_model(&dataset, &model.header.predictor, &train).unwrap();
    assert_eq!(init.params, model.params);
    assert_eq!(init.norm, model.norm);
}

#[test]
fn ground_truth_against_itself_scores_zero_fid() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&[&["dataset-gen", "--out", s(&data)], SMALL].concat());
    let out = tmp.path().join("eval");
    ok(&[&["evaluate", "--target", s(&data.join("test")), "--data", s(&data), "--out", s(&out)], SMALL].concat());
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["fid"]["mean"].as_f64().unwrap() < 1e-6);
}

#[test]
fn fidj_command_reproduces_the_kit_column() {
    let tmp = tempfile::tempdir().unwrap();
    let points = tmp.path().join("kit.csv");
    std::fs::write(
        &points,
        "method,fid,jitter\nT2M-GPT,0.469,98.425\nMDM,0.505,73.21\nMFM,0.327,1099.988\nFlowMotion,0.396,52.40\nGT,0.026,49.922\n",
    )
    .unwrap();
    let out = tmp.path().join("fidj");
    ok(&["fidj", "--points", s(&points), "--out", s(&out)]);
    let csv = std::fs::read_to_string(out.join("fidj.csv")).unwrap();
    let flow = csv.lines().find(|l| l.starts_with("FlowMotion,")).unwrap();
    let d: f64 = flow.rsplit(',').next().unwrap().parse().unwrap();
    assert!((d - 8.362).abs() < 0.01);
    assert!(csv.contains("MFM,0.327,1099.988,0,"));
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().unwrap()).unwrap()
}

#[test]
fn exit_codes_and_error_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");

    let usage = cli(&["train"]);
    assert_eq!(usage.status.code(), Some(1));

    let config = cli(&["dataset-gen", "--out", s(&out), "--set", "train.nope=1"]);
    assert_eq!(config.status.code(), Some(1));
    assert_eq!(error_line(&config)["error"], "invalid_config");
    assert!(!out.exists(), "nothing is written before validation passes");

    let missing = cli(&["train", "--data", s(&tmp.path().join("none")), "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(error_line(&missing)["error"], "io");

    let data = tmp.path().join("data");
    ok(&[&["dataset-gen", "--out", s(&data)], SMALL].concat());
    let div = cli(&[&["train", "--data", s(&data), "--out", s(&out)], SMALL, &["--set", "train.learning_rate=1e300"]].concat());
    assert_eq!(div.status.code(), Some(2));
    let line = error_line(&div);
    assert_eq!(line["error"], "divergence");
    assert_eq!(line["exit_code"], 2);
    // The last finite model is still written.
    read_checkpoint(out.join("checkpoint.fmck")).unwrap();

    let ck = out.join("checkpoint.fmck");
    let bad_prompt = cli(&["sample", "--checkpoint", s(&ck), "--prompt", "juggles", "--out", s(&tmp.path().join("s"))]);
    assert_eq!(bad_prompt.status.code(), Some(1));
}
