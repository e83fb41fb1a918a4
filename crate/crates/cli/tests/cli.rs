mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::write_toy_idx;
use tempfile::TempDir;

fn bset(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bset")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bset(args);
    assert!(
        out.status.success(),
        "bset {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = bset(args);
    assert!(!out.status.success(), "bset {args:?} should fail");
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(!err.trim().is_empty(), "no diagnostic for {args:?}");
    err
}

struct Toy {
    _dir: TempDir,
    data: PathBuf,
    root: PathBuf,
}

fn toy() -> Toy {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("toy");
    write_toy_idx(&data, 120, 40, 3, 4, 3);
    let root = dir.path().to_path_buf();
    Toy { _dir: dir, data, root }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(t: &Toy, name: &str, extra: &[&str]) -> PathBuf {
    train_for(t, name, "4", extra)
}

fn train_for(t: &Toy, name: &str, epochs: &str, extra: &[&str]) -> PathBuf {
    let out = t.root.join(name);
    let mut args = vec!["train", "--data", s(&t.data), "--out", s(&out), "--epochs", epochs];
    args.extend(["--nb", "10", "--nt", "10", "--seed", "5"]);
    if !extra.contains(&"--eval-every") {
        args.extend(["--eval-every", "2"]);
    }
    args.extend(extra);
    ok(&args);
    out
}

fn report_rows(run: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(run.join("report.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model,dataset,test_error_pct,misclassified,test_points,nodes,trees,epochs,train_secs,finalize_secs"
    );
    lines.map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn train_finalize_evaluate_round_trip() {
    let t = toy();
    let run = train(&t, "dbs", &[]);
    for f in ["manifest.json", "metrics.csv", "checkpoint.bin", "summary.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["architecture"], serde_json::json!([16, 400, 400, 20]));
    assert!(manifest["versions"]["bset_cli"].is_string());

    ok(&["finalize", "--run", s(&run)]);
    assert!(run.join("tree.bin").is_file());
    let rows = report_rows(&run);
    assert_eq!(rows.len(), 1);
    let (wrong, total): (usize, usize) = (rows[0][3].parse().unwrap(), rows[0][4].parse().unwrap());
    assert_eq!(total, 40);
    let pct: f64 = rows[0][2].parse().unwrap();
    assert!((pct - 100.0 * wrong as f64 / total as f64).abs() < 1e-9);

    let eval = ok(&["evaluate", "--run", s(&run)]);
    assert!(eval.contains(&format!("({wrong} of {total})")), "{eval}");
}

#[test]
fn forest_of_one_matches_the_tree() {
    let t = toy();
    let run = train(&t, "dbs", &[]);
    ok(&["finalize", "--run", s(&run)]);
    ok(&["finalize", "--run", s(&run), "--forest", "1"]);
    let rows = report_rows(&run);
    assert_eq!(rows.len(), 2);
    // error and node count agree; only the tree column and timing differ
    assert_eq!(rows[0][..6], rows[1][..6]);
    assert!(run.join("tree-0.bin").is_file());
    assert!(!run.join("tree.bin").exists());
    ok(&["evaluate", "--run", s(&run)]);
    fails(&["finalize", "--run", s(&run), "--forest", "0"]);
}

#[test]
fn deterministic_runs_repeat_exactly() {
    let t = toy();
    for alg in ["dbs", "dbt_v1", "dbt_v2", "nnet_baseline"] {
        let a = train(&t, &format!("{alg}-a"), &["--algorithm", alg, "--deterministic"]);
        let b = train(&t, &format!("{alg}-b"), &["--algorithm", alg, "--deterministic"]);
        let ma = fs::read(a.join("metrics.csv")).unwrap();
        assert_eq!(ma, fs::read(b.join("metrics.csv")).unwrap(), "{alg}");
        assert!(String::from_utf8(ma).unwrap().starts_with("algorithm,kind,epoch,step,loss,set_size,lr,wall_ms,test_error\n"));
    }
}

#[test]
fn baseline_reports_without_a_tree() {
    let t = toy();
    let run = train(&t, "base", &["--algorithm", "nnet_baseline"]);
    ok(&["finalize", "--run", s(&run)]);
    let rows = report_rows(&run);
    assert_eq!(rows[0][0], "nnet_baseline");
    assert_eq!(rows[0][5], "-");
    assert!(!run.join("tree.bin").exists());
    ok(&["evaluate", "--run", s(&run)]);
}

#[test]
fn resume_continues_from_the_checkpoint() {
    let t = toy();
    let run = train_for(&t, "first", "2", &["--eval-every", "1", "--patience", "0"]);
    let ck = run.join("checkpoint.bin");
    let out = t.root.join("second");
    ok(&["train", "--data", s(&t.data), "--out", s(&out), "--epochs", "4", "--nb", "10", "--nt", "10", "--resume", s(&ck)]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["start_epoch"].as_u64().unwrap() >= 1);
    fails(&["train", "--data", s(&t.data), "--out", s(&out), "--arch", "16,8,4", "--resume", s(&ck)]);
}

#[test]
fn embed_writes_seeded_subsets() {
    let t = toy();
    let run = train(&t, "flat", &["--arch", "16,8,2"]);
    let a = t.root.join("a.csv");
    let b = t.root.join("b.csv");
    ok(&["embed", "--run", s(&run), "--sample", "25", "--seed", "9", "--out", s(&a)]);
    ok(&["embed", "--run", s(&run), "--sample", "25", "--seed", "9", "--out", s(&b)]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,y,label");
    assert_eq!(lines.len(), 26);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 3));

    ok(&["embed", "--run", s(&run), "--sample", "0", "--out", s(&a)]);
    assert_eq!(fs::read_to_string(&a).unwrap(), "x,y,label\n");
    ok(&["embed", "--run", s(&run), "--sample", "5", "--split", "train"]);
    assert!(run.join("embedding.csv").is_file());

    let wide = train(&t, "wide", &[]);
    let err = fails(&["embed", "--run", s(&wide)]);
    assert!(err.contains("2-d"), "{err}");
}

#[test]
fn config_file_and_flags_combine() {
    let t = toy();
    let cfg = t.root.join("run.toml");
    fs::write(&cfg, format!("algorithm = \"dbt_v2\"\ndata_dir = {:?}\nepochs = 1\nsigma = 3.0\nn_b = 10\nn_t = 10\n", t.data)).unwrap();
    let out = t.root.join("cfg");
    ok(&["train", "--config", s(&cfg), "--out", s(&out), "--sigma", "2.0"]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["algorithm"], "dbt_v2");
    assert_eq!(manifest["config"]["sigma"], 2.0);
    assert_eq!(manifest["config"]["lr"], 1e-4);

    fs::write(&cfg, "epochz = 3\n").unwrap();
    fails(&["train", "--config", s(&cfg), "--out", s(&out)]);
}

#[test]
fn bench_logs_time_against_error() {
    // Each algorithm keeps its own batch sizes, so the tree variants need
    // at least 2000 training points.
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("toy");
    write_toy_idx(&data, 2000, 40, 3, 4, 3);
    let out = dir.path().join("bench");
    ok(&[
        "bench", "--data", s(&data), "--out", s(&out), "--algorithms", "dbs,dbt_v1,dbt_v2", "--epochs", "2",
        "--eval-subsample", "300", "--target", "0.0", "--interval", "0.01", "--budget", "30",
    ]);
    let text = fs::read_to_string(out.join("bench.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "algorithm,elapsed_s,epoch,step,test_error");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    for alg in ["dbs", "dbt_v1", "dbt_v2"] {
        let times: Vec<f64> = rows.iter().filter(|r| r[0] == alg).map(|r| r[1].parse().unwrap()).collect();
        assert!(!times.is_empty(), "no rows for {alg}");
        assert!(times.windows(2).all(|w| w[0] <= w[1]), "{alg}: {times:?}");
    }
    assert!(rows.iter().all(|r| ["dbs", "dbt_v1", "dbt_v2"].contains(&r[0])));
    assert!(out.join("bench_summary.csv").is_file());
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let t = toy();
    let out = t.root.join("x");
    let missing = t.root.join("nowhere");
    fails(&["train", "--data", s(&missing), "--out", s(&out)]);
    fails(&["train", "--out", s(&out)]);
    fails(&["train", "--data", s(&t.data), "--out", s(&out), "--algorithm", "svm"]);
    fails(&["train", "--data", s(&t.data), "--out", s(&out), "--nb", "0"]);
    fails(&["train", "--data", s(&t.data), "--out", s(&out), "--sigma", "-1"]);
    fails(&["train", "--data", s(&t.data), "--out", s(&out), "--arch", "9,4"]);
    fails(&["finalize", "--run", s(&missing)]);
    fails(&["evaluate", "--run", s(&missing)]);

    let run = train_for(&t, "ok", "1", &[]);
    let err = fails(&["evaluate", "--run", s(&run)]);
    assert!(err.contains("finalize"), "{err}");
    let other = t.root.join("other");
    write_toy_idx(&other, 30, 10, 3, 5, 1);
    fails(&["finalize", "--run", s(&run), "--data", s(&other)]);
}
