use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hcdir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcdir"))
        .args(args)
        .env_remove("HCDIR_NUM_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset and a two-epoch training budget.
fn small_config(dir: &Path, train_extra: &str) -> PathBuf {
    let path = dir.join("run.json");
    let text = format!(
        r#"{{
  "generator": {{"users": 300, "source_items": 40, "target_items": 10, "agents": 20, "properties": 8}},
  "train": {{"max_epochs": 2, "source": {{"word2vec": {{"epochs": 2}}}}{train_extra}}},
  "out": "{}"
}}"#,
        s(&dir.join("runs"))
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn generate(dir: &Path, cfg: &Path, seed: &str) -> PathBuf {
    let data = dir.join(format!("data{seed}"));
    let o = hcdir(&["generate", "--config", s(cfg), "--out", s(&data), "--seed", seed]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    data
}

fn train(cfg: &Path, data: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let mut args = vec!["train", "--config", s(cfg), "--data", s(data)];
    args.extend_from_slice(extra);
    let o = hcdir(&args);
    let dir = PathBuf::from(stdout(&o).trim());
    (o, dir)
}

fn without_wall(line: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
    v.as_object_mut().unwrap().remove("wall_sec");
    v
}

#[test]
fn generate_is_deterministic_and_rejects_bad_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let hash = |seed: &str, out: &str| -> String {
        let o = hcdir(&["generate", "--config", s(&cfg), "--out", s(&tmp.path().join(out)), "--seed", seed]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(v["node_counts"].as_object().unwrap().len(), 4);
        v["content_hash"].as_str().unwrap().to_string()
    };
    assert_eq!(hash("3", "a"), hash("3", "b"));
    assert_ne!(hash("3", "a"), hash("4", "c"));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"generator\": {\"users\": 10,}\n}").unwrap();
    let o = hcdir(&["generate", "--config", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2 column"), "{}", stderr(&o));

    std::fs::write(&bad, r#"{"generator": {"user": 10}}"#).unwrap();
    assert_eq!(code(&hcdir(&["generate", "--config", s(&bad)])), 2);
}

#[test]
fn train_logs_eta_ablation_and_warnings() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let data = generate(tmp.path(), &cfg, "0");

    let (o, dir) = train(&cfg, &data, &["--model", "bpr", "--eta", "0.1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("bpr ignores the meta-path configuration"), "{}", stderr(&o));
    let log = std::fs::read_to_string(dir.join("train.log")).unwrap();
    let line = log.lines().find(|l| l.starts_with("eta 0.1 retains")).unwrap();
    let nums: Vec<f64> = line.split(' ').filter_map(|w| w.parse().ok()).collect();
    // "eta 0.1 retains R of N ..."
    assert_eq!(nums[1], (nums[2] * 0.1).round(), "{line}");
    assert!(log.contains("data_hash "));
    assert!(log.contains("\"max_epochs\":2"));

    let (o, dir) = train(&cfg, &data, &["--model", "hcdir", "--ablation", "no_agent"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = std::fs::read_to_string(dir.join("train.log")).unwrap();
    assert!(log.contains("drops relations [served_by, serve]"), "{log}");
}

#[test]
fn eval_appends_metrics_and_writes_rankings() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let data = generate(tmp.path(), &cfg, "0");
    let (o, ck) = train(&cfg, &data, &["--model", "emcdr-bpr", "--eta", "0.5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let out = tmp.path().join("eval");
    let args = ["eval", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&out)];
    let first = hcdir(&args);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert_eq!(code(&hcdir(&args)), 0);
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(without_wall(lines[0]), without_wall(lines[1]));
    assert_eq!(stdout(&first).trim(), lines[0]);

    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["eta", "model", "ndcg", "rec1", "rec3", "rec5", "seed", "wall_sec"]);
    assert!(lines[0].starts_with(r#"{"eta":0.5,"model":"emcdr-bpr","ndcg":"#));
    let r = |k: &str| v[k].as_f64().unwrap();
    assert!(r("rec1") <= r("rec3") && r("rec3") <= r("rec5"));

    let name = ck.file_name().unwrap().to_str().unwrap();
    let recs = std::fs::read_to_string(out.join(format!("{name}.recommendations.tsv"))).unwrap();
    let mut rows = recs.lines();
    assert_eq!(rows.next().unwrap(), "user_id\trank\titem_id\tscore");
    let first_row: Vec<&str> = rows.next().unwrap().split('\t').collect();
    assert_eq!(first_row[1], "1");
    assert_eq!(first_row[3].split('.').nth(1).unwrap().len(), 9);
    // Ten target items per test user.
    assert_eq!(recs.lines().count() % 10, 1);
}

#[test]
fn identical_runs_give_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let data = generate(tmp.path(), &cfg, "5");
    let mut got = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let (o, ck) = train(&cfg, &data, &["--model", "hcdir", "--seed", "5", "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let e = hcdir(&["eval", "--checkpoint", s(&ck), "--data", s(&data)]);
        assert_eq!(code(&e), 0, "{}", stderr(&e));
        got.push(without_wall(stdout(&e).trim()));
        assert!(out.join("metrics.jsonl").exists());
    }
    assert_eq!(got[0], got[1]);
}

#[test]
fn integrity_and_divergence_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let data = generate(tmp.path(), &cfg, "0");
    let other = generate(tmp.path(), &cfg, "1");
    let (o, ck) = train(&cfg, &data, &["--model", "bpr"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = hcdir(&["eval", "--checkpoint", s(&ck), "--data", s(&other)]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let o = hcdir(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--split", "valid"]);
    assert_eq!(code(&o), 2);

    let mut bytes = std::fs::read(ck.join("tensors.bin")).unwrap();
    bytes[0] ^= 1;
    std::fs::write(ck.join("tensors.bin"), bytes).unwrap();
    let o = hcdir(&["eval", "--checkpoint", s(&ck), "--data", s(&data)]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    let hot = small_config(tmp.path(), r#", "baseline_lr": 1e300, "adam": {"lr": 1e300}"#);
    // BPR keeps its last-good parameters; the graph model has no usable
    // partial model.
    for (model, eval_code) in [("bpr", 0), ("hcdir", 3)] {
        let (o, ck) = train(&hot, &data, &["--model", model]);
        assert_eq!(code(&o), 3, "{model}: {}", stderr(&o));
        assert!(ck.join("manifest.json").exists());
        let e = hcdir(&["eval", "--checkpoint", s(&ck), "--data", s(&data)]);
        assert_eq!(code(&e), eval_code, "{model}: {}", stderr(&e));
        if eval_code == 0 {
            assert!(stderr(&e).contains("diverged run"), "{}", stderr(&e));
        }
    }
}

#[test]
fn sweep_renders_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("sweep");
    let o = hcdir(&[
        "sweep", "--config", s(&cfg), "--etas", "0.5,1.0", "--models", "bpr,emcdr-bpr", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "Single-domain");
    assert_eq!(lines[4], "Cross-domain");
    assert_eq!(lines.len(), 7, "{text}");
    assert_eq!(std::fs::read_to_string(out.join("sweep.txt")).unwrap(), text);
    assert_eq!(std::fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(), 4);
}

#[test]
fn verify_and_environment() {
    let o = hcdir(&["verify", "--suite", "invariants"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS attention distributions"));
    assert_eq!(code(&hcdir(&["verify", "--suite", "everything"])), 2);

    let o = Command::new(env!("CARGO_BIN_EXE_hcdir"))
        .args(["verify", "--suite", "oracles"])
        .env("HCDIR_NUM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
