use std::path::Path;
use std::process::{Command, Output};

use chainlabel::cli::PredictionRecord;
use chainlabel::data::read_dataset;

fn chainlabel(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chainlabel"));
    cmd.current_dir(dir).args(args).env_remove("CHAINLABEL_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = chainlabel(dir, args, &[]);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"{"hyper": {"embed_dim": 8, "state_dim": 12},
 "train": {"epochs": 3, "batch_size": 16, "learning_rate": 0.005},
 "synth": {"examples_per_group": 30}}"#;

fn trained(dir: &Path) {
    std::fs::write(dir.join("c.json"), CONFIG).unwrap();
    ok(
        dir,
        &[
            "synth",
            "--config",
            "c.json",
            "--out",
            "train.jsonl",
            "--holdout",
            "0.25",
            "--test-out",
            "test.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "train",
            "--data",
            "train.jsonl",
            "--config",
            "c.json",
            "--out",
            "m.json",
            "--baseline",
            "--history",
            "h.jsonl",
        ],
    );
}

fn predictions(path: &Path) -> Vec<PredictionRecord> {
    chainlabel::cli::read_predictions(path).unwrap()
}

#[test]
fn predict_with_min_len_emits_exactly_k_labels() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    ok(
        dir.path(),
        &[
            "predict",
            "--model",
            "m.json",
            "--data",
            "test.jsonl",
            "--k",
            "3",
            "--min-len",
            "3",
            "--out",
            "p.jsonl",
        ],
    );
    let preds = predictions(&dir.path().join("p.jsonl"));
    let test = read_dataset(std::fs::File::open(dir.path().join("test.jsonl")).unwrap()).unwrap();
    assert_eq!(preds.len(), test.len());
    for (p, ex) in preds.iter().zip(&test.examples) {
        assert_eq!(p.id, ex.id);
        assert_eq!(p.labels.len(), 3);
        assert!(p.log_prob.unwrap() <= 0.0);
    }

    ok(
        dir.path(),
        &[
            "predict",
            "--model",
            "m.json",
            "--data",
            "test.jsonl",
            "--k",
            "2",
            "--baseline",
            "--out",
            "b.jsonl",
        ],
    );
    for p in predictions(&dir.path().join("b.jsonl")) {
        assert_eq!(p.labels.len(), 2);
        assert_eq!(p.log_prob, None);
    }
}

#[test]
fn evaluating_the_truth_scores_one_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), CONFIG).unwrap();
    ok(dir.path(), &["synth", "--config", "c.json", "--out", "d.jsonl"]);
    let data = read_dataset(std::fs::File::open(dir.path().join("d.jsonl")).unwrap()).unwrap();
    let lines: Vec<String> = data
        .examples
        .iter()
        .map(|ex| serde_json::json!({"id": ex.id, "labels": ex.labels, "log_prob": null}).to_string())
        .collect();
    std::fs::write(dir.path().join("p.jsonl"), lines.join("\n")).unwrap();
    ok(
        dir.path(),
        &[
            "evaluate", "--pred", "p.jsonl", "--truth", "d.jsonl", "--k", "3", "--map-n", "3", "--out", "r.json",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    for key in ["C_P", "C_R", "C_F1", "O_P", "O_R", "O_F1", "MAP"] {
        assert_eq!(report[key], 1.0, "{key}");
    }
    assert_eq!(report["k"], 3);
    assert_eq!(report["N"], 3);
    assert_eq!(report["per_class"].as_array().unwrap().len(), 12);
}

#[test]
fn seed_env_is_a_last_resort_default() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let read = |name: &str| std::fs::read(d.join(name)).unwrap();
    ok(d, &["synth", "--seed", "5", "--out", "flag.jsonl"]);
    assert!(
        chainlabel(d, &["synth", "--out", "env.jsonl"], &[("CHAINLABEL_SEED", "5")])
            .status
            .success()
    );
    assert_eq!(read("flag.jsonl"), read("env.jsonl"));

    std::fs::write(d.join("c.json"), r#"{"synth": {"seed": 9}}"#).unwrap();
    ok(d, &["synth", "--seed", "9", "--out", "nine.jsonl"]);
    assert!(chainlabel(
        d,
        &["synth", "--config", "c.json", "--out", "file.jsonl"],
        &[("CHAINLABEL_SEED", "5")]
    )
    .status
    .success());
    assert_eq!(read("nine.jsonl"), read("file.jsonl"));

    let bad = chainlabel(d, &["synth", "--out", "x.jsonl"], &[("CHAINLABEL_SEED", "five")]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn resolved_config_is_echoed_first() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), CONFIG).unwrap();
    let stdout = ok(
        dir.path(),
        &["synth", "--config", "c.json", "--seed", "3", "--out", "d.jsonl"],
    );
    let first: serde_json::Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(first["command"], "synth");
    assert_eq!(first["resolved"]["synth"]["seed"], 3);
    assert_eq!(first["resolved"]["synth"]["examples_per_group"], 30);
}

#[test]
fn history_nn_and_order_outputs() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let history = std::fs::read_to_string(dir.path().join("h.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(history.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 1);
    assert!(first["mean_loss"].as_f64().unwrap() > 0.0);
    assert_eq!(first["examples_skipped"], 0);

    let nn = ok(
        dir.path(),
        &["nn", "--model", "m.json", "--label", "g1-context0", "--m", "4"],
    );
    let rows: Vec<&str> = nn.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| !r.starts_with("g1-context0\t")));

    let order = ok(dir.path(), &["order", "--data", "train.jsonl"]);
    let counts: Vec<usize> = order
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts.len(), 12);
    assert!(counts.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn errors_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let usage = chainlabel(dir.path(), &["predict", "--model", "m.json"], &[]);
    assert_eq!(usage.status.code(), Some(2));
    let unknown = chainlabel(dir.path(), &["--frobnicate"], &[]);
    assert_eq!(unknown.status.code(), Some(2));

    let missing = chainlabel(dir.path(), &["order", "--data", "missing.jsonl"], &[]);
    assert_eq!(missing.status.code(), Some(1));
    let stderr = String::from_utf8(missing.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    assert!(stderr.starts_with("error: "));

    std::fs::write(
        dir.path().join("bad.jsonl"),
        "{\"id\":\"a\",\"features\":[1.0],\"labels\":[]}\nnot json\n",
    )
    .unwrap();
    let bad = chainlabel(dir.path(), &["order", "--data", "bad.jsonl"], &[]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8(bad.stderr).unwrap().contains("line 2"));
}
