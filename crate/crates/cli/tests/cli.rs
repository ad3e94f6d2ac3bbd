use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dpo_lab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpo-lab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn gen(dir: &Path, num_pairs: usize) {
    fs::write(dir.join("gen.json"), format!(r#"{{"num_pairs": {num_pairs}, "quality_gap": 2.0, "seed": 4}}"#)).unwrap();
    let out = dpo_lab(&["gen-data", "--config", "gen.json", "--out", "data.jsonl", "--quiet"], dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn write_run(dir: &Path, extra: &str) {
    fs::write(
        dir.join("run.json"),
        format!(r#"{{"dataset": "data.jsonl", "variant": "dpo_2d", "iterations": 60, "eval_every": 20{extra}}}"#),
    )
    .unwrap();
}

#[test]
fn gen_data_writes_one_line_per_pair_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 25);
    let first = fs::read(dir.path().join("data.jsonl")).unwrap();
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 25);
    gen(dir.path(), 25);
    assert_eq!(first, fs::read(dir.path().join("data.jsonl")).unwrap());
}

#[test]
fn gen_data_rejects_zero_pairs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("gen.json"), r#"{"num_pairs": 0}"#).unwrap();
    let out = dpo_lab(&["gen-data", "--config", "gen.json"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("num_pairs"));
}

#[test]
fn train_then_eval_reproduces_the_logged_win_rate() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 80);
    write_run(dir.path(), r#", "eval_noise": "segment", "eval_noise_seed": 11"#);
    let out = dpo_lab(&["train", "--config", "run.json", "--quiet"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let metrics = fs::read_to_string(dir.path().join("out/metrics.jsonl")).unwrap();
    let entries: Vec<Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let iters: Vec<u64> = entries.iter().map(|e| e["iter"].as_u64().unwrap()).collect();
    assert_eq!(iters, [20, 40, 60]);
    for key in ["loss", "train_win_rate", "eval_win_rate"] {
        assert!(entries[0][key].is_f64(), "{key}");
    }

    let eval_args = [
        "eval", "--checkpoint", "out/checkpoint.json", "--dataset", "out/eval_split.jsonl",
        "--variant", "dpo_2d", "--noise", "segment", "--seed", "11",
    ];
    let out = dpo_lab(&eval_args, dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["win_rate"], entries[2]["eval_win_rate"]);
    assert_eq!(report["num_pairs"], 16);
}

#[test]
fn clean_eval_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 40);
    write_run(dir.path(), "");
    assert_eq!(code(&dpo_lab(&["train", "--config", "run.json", "--quiet"], dir.path())), 0);
    let args = ["eval", "--checkpoint", "out/checkpoint.json", "--dataset", "data.jsonl", "--variant", "dpo"];
    let a = dpo_lab(&args, dir.path());
    let b = dpo_lab(&args, dir.path());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn config_and_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 30);

    fs::write(dir.path().join("missing.json"), r#"{"dataset": "nope.jsonl", "variant": "dpo"}"#).unwrap();
    let out = dpo_lab(&["train", "--config", "missing.json"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope.jsonl"));

    fs::write(dir.path().join("typo.json"), r#"{"dataset": "data.jsonl", "variant": "dpo", "lr": 0.1}"#).unwrap();
    assert_eq!(code(&dpo_lab(&["train", "--config", "typo.json"], dir.path())), 2);

    write_run(dir.path(), "");
    assert_eq!(code(&dpo_lab(&["train", "--config", "run.json", "--quiet"], dir.path())), 0);
    let seg_on_dpo = [
        "eval", "--checkpoint", "out/checkpoint.json", "--dataset", "data.jsonl", "--variant", "dpo", "--noise", "segment",
    ];
    assert_eq!(code(&dpo_lab(&seg_on_dpo, dir.path())), 2);

    // A checkpoint over a smaller vocabulary than the dataset uses.
    fs::write(dir.path().join("small.json"), r#"{"vocab_size": 2, "seed": 0, "logits": [[0, 0], [0, 0]]}"#).unwrap();
    let mismatch = ["eval", "--checkpoint", "small.json", "--dataset", "data.jsonl", "--variant", "dpo"];
    let out = dpo_lab(&mismatch, dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("vocabulary"));

    assert_eq!(code(&dpo_lab(&["train", "--config", "run.json", "--variant", "ipo"], dir.path())), 2);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), 30);
    fs::write(
        dir.path().join("run.json"),
        r#"{"dataset": "data.jsonl", "variant": "robust_dpo", "epsilon": 0.4, "learning_rate": 1.7976931348623157e308, "iterations": 500}"#,
    )
    .unwrap();
    let out = dpo_lab(&["train", "--config", "run.json"], dir.path());
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn verify_passes_and_canary_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpo_lab(&["verify", "--out", "report.json", "--gradient-instances", "10", "--quiet"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["checks"].as_array().unwrap().len() >= 10);
    assert_eq!(report["passed"], true);

    let out = dpo_lab(&["verify", "--gradient-instances", "2", "--canary"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL robust_dpo_unbiased"));
}

#[test]
fn matrix_writes_four_rows_in_order() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.json"), r#"{"num_pairs": 200, "iterations": 100, "seed": 3}"#).unwrap();
    let out = dpo_lab(&["matrix", "--config", "m.json", "--quiet"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("out/matrix.csv")).unwrap();
    let names: Vec<&str> = csv.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        [
            "algorithm",
            "Vanilla DPO",
            "Vanilla 2D-DPO",
            "Vanilla 2D-DPO under noise",
            "Robust 2D-DPO under noise"
        ]
    );
    assert_eq!(csv.lines().next().unwrap(), "algorithm,train_win_rate,eval_win_rate");
}
