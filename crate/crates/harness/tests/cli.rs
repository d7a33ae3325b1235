mod common;

use std::path::Path;
use std::process::{Command, Output};

use apollo_harness::metrics::{read_metrics, write_curve};
use apollo_core::LossCurve;
use common::tiny;

fn apollo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apollo")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> String {
    let out = apollo(args);
    assert!(
        out.status.success(),
        "apollo {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_one_record_per_step() {
    let f = tiny(&[]);
    let out = f.path("out");
    let stdout = run_ok(&["train", "--config", s(&f.config), "--out", s(&out)]);
    assert!(stdout.contains("trained 10 steps"), "{stdout}");
    let records = read_metrics(&out.join("metrics.jsonl")).unwrap();
    assert_eq!(records.len(), 10);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.step, i + 1);
        assert!(r.train_loss.is_finite());
        assert!(r.sampled_depth >= r.n_slots && r.sampled_depth <= 4);
        assert_eq!(r.val_loss.is_some(), r.step % 5 == 0);
    }
    assert_eq!(records.iter().map(|r| r.n_slots).collect::<Vec<_>>(), [1, 1, 1, 2, 2, 2, 4, 4, 4, 4]);
    assert!(records.windows(2).all(|w| w[1].cum_flops > w[0].cum_flops));
    assert!(out.join("curve.json").is_file());
    assert!(out.join("final.aplo").is_file());
}

#[test]
fn seed_flag_overrides_config() {
    let f = tiny(&[]);
    let (a, b, c) = (f.path("a"), f.path("b"), f.path("c"));
    run_ok(&["train", "--config", s(&f.config), "--out", s(&a)]);
    run_ok(&["train", "--config", s(&f.config), "--out", s(&b), "--seed", "3"]);
    run_ok(&["train", "--config", s(&f.config), "--out", s(&c), "--seed", "4"]);
    let read = |d: &Path| common::without_wall_ms(&std::fs::read_to_string(d.join("metrics.jsonl")).unwrap());
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn exit_codes() {
    let f = tiny(&[("model.colour", "blue")]);
    let out = apollo(&["train", "--config", s(&f.config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.colour"));

    let f = tiny(&[("data.corpus", "missing.txt")]);
    let out = apollo(&["train", "--config", s(&f.config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.corpus"));

    let out = apollo(&["train", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(out.status.code(), Some(3));

    let f = tiny(&[("optimizer.lr", "1e300"), ("optimizer.weight_decay", "0")]);
    let dir = f.path("out");
    let out = apollo(&["train", "--config", s(&f.config), "--out", s(&dir)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("halt.json").is_file());

    let out = apollo(&["map", "--kind", "interpolation", "--from", "4", "--to", "3"]);
    assert_eq!(out.status.code(), Some(1));

    let f = tiny(&[]);
    let bad = f.path("bad.json");
    std::fs::write(&bad, "not json").unwrap();
    let out = apollo(&["compare", "--candidate", s(&bad), "--baseline", s(&bad)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn map_prints_layer_assignment() {
    let parse = |kind: &str| -> Vec<usize> {
        serde_json::from_str(&run_ok(&["map", "--kind", kind, "--from", "3", "--to", "6"])).unwrap()
    };
    assert_eq!(parse("interpolation"), [1, 1, 2, 2, 3, 3]);
    assert_eq!(parse("stack"), [1, 2, 3, 1, 2, 3]);
}

#[test]
fn sample_depth_dump() {
    let stdout = run_ok(&["sample-depth", "--kind", "lvps", "--floor", "3", "--depth", "12", "--draws", "20000"]);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let pmf: Vec<(usize, f64)> = serde_json::from_value(v["pmf"].clone()).unwrap();
    let freq: Vec<(usize, f64)> = serde_json::from_value(v["frequencies"].clone()).unwrap();
    assert_eq!(pmf.len(), 10);
    assert_eq!(pmf[0].0, 3);
    assert!((pmf.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
    for (p, q) in pmf.iter().zip(&freq) {
        assert!((p.1 - q.1).abs() < 0.02, "{p:?} vs {q:?}");
    }
    let out = apollo(&["sample-depth", "--kind", "gaussian", "--floor", "1", "--depth", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compare_reports_saving() {
    let f = tiny(&[]);
    let base = f.path("base.json");
    let cand = f.path("cand.json");
    write_curve(&base, &LossCurve::from_points(vec![(0.0, 3.0), (50.0, 2.0), (100.0, 1.0)]).unwrap()).unwrap();
    write_curve(&cand, &LossCurve::from_points(vec![(0.0, 3.0), (30.0, 2.0), (60.0, 1.0)]).unwrap()).unwrap();
    let saving: f64 = run_ok(&["compare", "--candidate", s(&cand), "--baseline", s(&base)]).trim().parse().unwrap();
    assert!((saving - 0.4).abs() < 1e-12);
    let worse = f.path("worse.json");
    write_curve(&worse, &LossCurve::from_points(vec![(0.0, 3.0), (80.0, 1.5)]).unwrap()).unwrap();
    assert_eq!(run_ok(&["compare", "--candidate", s(&worse), "--baseline", s(&base)]).trim(), "not-reached");
}

#[test]
fn corpus_subcommand() {
    let f = tiny(&[]);
    let path = f.path("gen.txt");
    run_ok(&["corpus", "--out", s(&path), "--bytes", "3000", "--seed", "9"]);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, apollo_harness::corpus::synthetic_text(3000, 9));
}

#[test]
fn expand_analyze_writes_report() {
    let f = tiny(&[("expand.pre_steps", "6"), ("schedule.slots", ""), ("schedule.boundary_steps", "")]);
    let out = f.path("ea");
    let stdout = run_ok(&["expand-analyze", "--config", s(&f.config), "--out", s(&out)]);
    for name in ["pre-expansion", "stack", "interpolation", "random"] {
        assert!(stdout.contains(name), "{stdout}");
    }
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["half_depth"], 2);
    assert_eq!(v["pre_expansion"]["depth"], 2);
    assert_eq!(v["interpolation_expanded"]["depth"], 4);
    assert_eq!(v["random_init"]["n_slots"], 4);
}

#[test]
fn sampler_bench_writes_every_run() {
    let f = tiny(&[("bench.samplers", "lvps, fs"), ("run.steps", "8")]);
    let out = f.path("bench");
    let stdout = run_ok(&["sampler-bench", "--config", s(&f.config), "--out", s(&out)]);
    assert!(stdout.contains("scratch final loss"), "{stdout}");
    for sub in ["scratch", "lvps", "fs"] {
        assert_eq!(read_metrics(&out.join(sub).join("metrics.jsonl")).unwrap().len(), 8);
    }
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    assert_eq!(v["expected_step_flops"].as_array().unwrap().len(), 3);
}
