use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use edgelit::learning::TwoStageModel;

const PLAN: &str = r#"
schema = "edgelit-plan/1"
seed = 12
rays_per_state = 800
output_dir = "out"
active_side_mm = 8.0
grid_spacing_mm = 4.0
grid_margin_mm = 3.0

[schedules.short]
hover_mm = [-2.0, -1.0]
contact_max_mm = 2.0
contact_step_mm = 0.5
mirrored = true

[[datasets]]
name = "train_lit"
pattern = "grid"
schedule = "short"
ambient_level = 0.05
noise_sigma = 1e-4

[[datasets]]
name = "train_dark"
pattern = "grid"
schedule = "short"
ambient_level = 0.0
noise_sigma = 1e-4

[[datasets]]
name = "test"
pattern = "random"
count = 4
schedule = "short"
ambient_level = 0.0
noise_sigma = 1e-4
"#;

fn edgelit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgelit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn simulate_train_eval_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("plan.toml"), PLAN).unwrap();

    ok(&edgelit(dir, &["simulate", "--plan", "plan.toml"]));
    let first = read(dir.join("out/datasets/train_lit.csv"));
    ok(&edgelit(dir, &["simulate", "--plan", "plan.toml"]));
    assert_eq!(first, read(dir.join("out/datasets/train_lit.csv")));
    for name in ["train_lit", "train_dark", "test"] {
        assert!(dir.join(format!("out/datasets/{name}.csv")).exists());
    }

    ok(&edgelit(
        dir,
        &[
            "train",
            "out/datasets/train_lit.csv",
            "out/datasets/train_dark.csv",
            "--lambda",
            "2.15e-4",
            "--gamma",
            "5.45e-4",
            "--out",
            "model.json",
        ],
    ));
    let model = TwoStageModel::load(&dir.join("model.json")).unwrap();
    assert!(!model.report.grid_searched);
    assert_eq!((model.report.lambda, model.report.gamma), (2.15e-4, 5.45e-4));
    let back: TwoStageModel = serde_json::from_str(&model.to_json()).unwrap();
    assert_eq!(back.report, model.report);
    let report: serde_json::Value =
        serde_json::from_slice(&read(dir.join("model.report.json"))).unwrap();
    assert_eq!(report["config_hash"], model.config_hash.as_str());

    ok(&edgelit(dir, &["eval", "--model", "model.json", "out/datasets/test.csv", "--out", "eval"]));
    let table = String::from_utf8(read(dir.join("eval/tables/test.csv"))).unwrap();
    assert!(table.contains(&format!("# config_hash = {}", model.config_hash)));
    assert!(table.contains("# dataset_seed = "));
    assert!(dir.join("eval/tables/test.txt").exists());
    assert!(dir.join("eval/arrows/test_1mm.jsonl").exists());
    let again = edgelit(dir, &["eval", "--model", "model.json", "out/datasets/test.csv", "--out", "eval2"]);
    ok(&again);
    assert_eq!(table.as_bytes(), read(dir.join("eval2/tables/test.csv")));

    let pred = edgelit(dir, &["predict", "--model", "model.json", "out/datasets/test.csv"]);
    ok(&pred);
    let lines: Vec<serde_json::Value> = String::from_utf8(pred.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4 * 13);
    assert!(lines.iter().all(|v| v["touch"] == "touch" || v["touch"] == "no_touch"));

    // Data recorded with a different ray count is a different sensor.
    ok(&edgelit(dir, &["simulate", "--plan", "plan.toml", "--rays-per-state", "900", "--out", "other"]));
    let mismatch = edgelit(dir, &["eval", "--model", "model.json", "other/datasets/test.csv", "--out", "eval3"]);
    assert_eq!(mismatch.status.code(), Some(2));
    let mixed = edgelit(dir, &["train", "out/datasets/train_lit.csv", "other/datasets/train_dark.csv"]);
    assert_eq!(mixed.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(edgelit(tmp.path(), &["eval", "--model", "", "x.csv"]).status.code(), Some(1));
    assert_eq!(edgelit(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(edgelit(tmp.path(), &["train"]).status.code(), Some(1));
    assert_eq!(edgelit(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_files_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = edgelit(tmp.path(), &["eval", "--model", "nope.json", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
    let bad_plan = tmp.path().join("bad.toml");
    fs::write(&bad_plan, "schema = \"edgelit-plan/1\"\nseed = 1\n").unwrap();
    assert_eq!(edgelit(tmp.path(), &["simulate", "--plan", "bad.toml"]).status.code(), Some(2));
}

#[test]
fn sweep_single_point_and_repeatability() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let args = [
        "sweep-thickness", "--thickness-mm", "8", "--depth-max-mm", "0", "--rays-per-state", "2000",
    ];
    ok(&edgelit(dir, &[&args[..], &["--out", "a"]].concat()));
    ok(&edgelit(dir, &[&args[..], &["--out", "b"]].concat()));
    let series = String::from_utf8(read(dir.join("a/series_8mm.csv"))).unwrap();
    assert_eq!(series.lines().filter(|l| !l.starts_with('#')).count(), 2);
    assert_eq!(series.as_bytes(), read(dir.join("b/series_8mm.csv")));
    assert_eq!(read(dir.join("a/summary.csv")), read(dir.join("b/summary.csv")));
    let bad = edgelit(dir, &["sweep-thickness", "--thickness-mm", "-1", "--out", "c"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn path_dump_writes_one_record_per_ray() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("plan.toml"), PLAN).unwrap();
    ok(&edgelit(
        dir,
        &["simulate", "--plan", "plan.toml", "--dump-paths", "paths.jsonl", "--dump-at-mm", "1,-2,0.5", "--out", "d"],
    ));
    let text = String::from_utf8(read(dir.join("paths.jsonl"))).unwrap();
    assert_eq!(text.lines().count(), 800);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first.get("bounces").is_some() && first.get("cause").is_some());
}
