use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtl"))
        .args(args)
        .output()
        .expect("spawn mtl")
}

fn small_config(dir: &Path, body_schemes: &str, max_lr: f64, scheduler: &str) -> String {
    let path = dir.join("config.json");
    fs::write(
        &path,
        format!(
            r#"{{
  "dataset": {{
    "source": {{ "kind": "synthetic", "seed": 1, "fine": 4, "per_class": 15, "dim": 4, "spread": 0.3 }},
    "groupings": [2, 4]
  }},
  "trunk_widths": [8],
  "train": {{ "epochs": 1, "batch_size": 16, "max_lr": {max_lr}, "scheduler": "{scheduler}" }},
  "schemes": {body_schemes},
  "seeds": [0]
}}"#
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_writes_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = mtl(&[
            "gen",
            "--seed",
            "3",
            "--fine",
            "8",
            "--per-class",
            "50",
            "--dim",
            "16",
            "--spread",
            "0.35",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 401);
    assert!(text.starts_with("f0,f1,"));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn gen_bad_path_exits_2() {
    let o = mtl(&[
        "gen",
        "--fine",
        "4",
        "--per-class",
        "2",
        "--dim",
        "2",
        "--out",
        "/nonexistent/dir/x.csv",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_single_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"["equal"]"#, 0.05, "one_cycle");
    let out = dir.path().join("out");
    let o = mtl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(out.join("metrics/equal_seed0.csv")).unwrap();
    assert!(metrics
        .starts_with("scheme,seed,epoch,task,train_loss,test_loss,test_accuracy,mean_weight,lr\n"));
    assert_eq!(metrics.lines().count(), 1 + 2);
    let table = fs::read_to_string(out.join("accuracy.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert_eq!(
        fs::read_to_string(out.join("config.json")).unwrap(),
        fs::read_to_string(&cfg).unwrap()
    );
    assert!(out.join("loss_curves.svg").exists());
    assert!(out.join("loss_curves/equal.csv").exists());
}

#[test]
fn run_empty_schemes_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "[]", 0.05, "one_cycle");
    let o = mtl(&[
        "run",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_missing_config_exits_2() {
    let o = mtl(&["run", "--config", "/nonexistent.json", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn all_runs_diverging_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        r#"["equal", "adaptive_ratio"]"#,
        1e300,
        "constant",
    );
    let out = dir.path().join("out");
    let o = mtl(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let failures = fs::read_to_string(out.join("failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 3);
}

#[test]
fn bench_prints_three_rows() {
    let o = mtl(&["bench", "--tasks", "5", "--iters", "500", "--seed", "1"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "scheme,n_tasks,iterations,median_ns,mean_ns,p99_ns"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("adaptive_ratio,5,500,"));
}

#[test]
fn bench_too_few_iterations_exits_2() {
    assert_eq!(
        mtl(&["bench", "--tasks", "5", "--iters", "10"])
            .status
            .code(),
        Some(2)
    );
}
