mod common;

use std::fs;

use common::{fake_mnist, p, prepared, run, stderr};
use serde_json::Value;

fn json(path: &std::path::Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn prepare_data_is_reproducible_and_sized() {
    let tmp = tempfile::tempdir().unwrap();
    let mnist = fake_mnist(tmp.path(), 30, 10);
    let mut outs = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("t{k}"));
        let o = run(&["prepare-data", "--mnist-dir", p(&mnist), "--transform", "t", "--seed", "5", "--out", p(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(out);
    }
    for f in ["train.prt4", "train-labels.idx1", "test.prt4", "test-labels.idx1", "data.json"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
    let info = json(&outs[0].join("data.json"));
    assert_eq!(info["train"]["side"], serde_json::json!([42, 42]));
    assert_eq!(info["test"]["samples"], 10);
}

#[test]
fn missing_mnist_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let mnist = fake_mnist(tmp.path(), 10, 10);
    fs::remove_file(mnist.join("t10k-labels-idx1-ubyte")).unwrap();
    let out = tmp.path().join("out");
    let o = run(&["prepare-data", "--mnist-dir", p(&mnist), "--transform", "r", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("t10k-labels-idx1-ubyte"), "{}", stderr(&o));
    // The failed run still leaves its manifest.
    assert_eq!(json(&out.join("manifest.json"))["exit_code"], 2);
}

#[test]
fn config_file_sets_the_step_count_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared(tmp.path(), "r");
    let cfg = tmp.path().join("train.toml");
    fs::write(&cfg, "total_iters = 100\nbatch = 4\neval_every = 1000\nlr_step = 60\n").unwrap();
    let out = tmp.path().join("run");
    let o = run(&["train", "--preset", "mnist_cnn", "--config", p(&cfg), "--data", p(&data), "--batch", "2", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    assert_eq!(rows.len(), 100);
    assert!(rows[59].starts_with("60,0.01,") && rows[60].starts_with("61,0.001"), "{}", rows[60]);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["job"]["config"]["total_iters"], 100);
    assert_eq!(m["job"]["config"]["batch"], 2);
    assert_eq!(m["job"]["spec"]["input"], serde_json::json!([1, 28, 28]));
    for key in ["command", "seed", "started_at", "finished_at", "git_describe", "outputs"] {
        assert!(!m[key].is_null(), "manifest lacks {key}");
    }
    let eval = tmp.path().join("eval");
    let o = run(&["eval", "--checkpoint", p(&out), "--data", p(&data), "--out", p(&eval)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = json(&out.join("summary.json"));
    assert_eq!(json(&eval.join("eval.json"))["error_percent"], summary["final_eval_error"]);
}

#[test]
fn invalid_spec_and_config_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared(tmp.path(), "r");
    let spec = tmp.path().join("net.json");
    fs::write(&spec, r#"{"input": [1, 28, 28], "layers": [{"type": "conv", "out_channels": 4, "kernal": 3}]}"#).unwrap();
    let o = run(&["train", "--spec", p(&spec), "--data", p(&data), "--out", p(&tmp.path().join("a"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kernal"), "{}", stderr(&o));

    fs::write(&spec, r#"{"input": [1, 28, 28], "layers": [{"type": "conv", "out_channels": 4, "kernel": 40}, {"type": "dense", "out": 10}, {"type": "softmax"}]}"#).unwrap();
    let o = run(&["train", "--spec", p(&spec), "--data", p(&data), "--out", p(&tmp.path().join("b"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("layers[0]"), "{}", stderr(&o));

    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "total_iter = 100\n").unwrap();
    let o = run(&["train", "--preset", "mnist_cnn", "--config", p(&cfg), "--data", p(&data), "--out", p(&tmp.path().join("c"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("total_iter"), "{}", stderr(&o));

    let o = run(&["train", "--spec", p(&tmp.path().join("nope.json")), "--data", p(&data), "--out", p(&tmp.path().join("d"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.json"));
}

#[test]
fn existing_run_directories_are_never_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gc");
    assert!(run(&["gradcheck", "--out", p(&out)]).status.success());
    let before = fs::read(out.join("manifest.json")).unwrap();
    let o = run(&["gradcheck", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("refusing to overwrite"));
    assert_eq!(fs::read(out.join("manifest.json")).unwrap(), before);
    let manifests = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().file_name() == "manifest.json").count();
    assert_eq!(manifests, 1);
}

#[test]
fn gradcheck_exit_code_follows_the_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = run(&["gradcheck", "--preset", "tiny_cnn", "--out", p(&tmp.path().join("a"))]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = run(&["gradcheck", "--preset", "tiny_cnn", "--tolerance", "1e-14", "--out", p(&tmp.path().join("b"))]);
    assert_eq!(bad.status.code(), Some(3));
    let report = json(&tmp.path().join("b/gradcheck.json"));
    assert_eq!(report["passed"], false);
}

#[test]
fn analyses_run_on_a_checkpoint_and_rerun_reproduces_them() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared(tmp.path(), "r");
    let train = tmp.path().join("train");
    let o = run(&["train", "--preset", "mnist_prcnn", "--data", p(&data), "--total-iters", "5", "--batch", "4", "--out", p(&train)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let inv = tmp.path().join("inv");
    let o = run(&["invariance", "--checkpoint", p(&train), "--data", p(&data), "--limit", "20", "--out", p(&inv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&inv.join("invariance.json"));
    let angles: Vec<f64> = report["grid"]["angles"].as_array().unwrap().iter().map(|a| a.as_f64().unwrap()).collect();
    assert_eq!(angles, (-5..=5).map(|k| 9.0 * k as f64).collect::<Vec<_>>());
    assert_eq!(report["orbit"], 11);
    assert_eq!(report["layer"], "pool2");

    let red = tmp.path().join("red");
    let o = run(&["redundancy", "--checkpoint", p(&train), "--out", p(&red)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&red.join("redundancy.json"))["pairs"], 45);

    let again = tmp.path().join("inv2");
    let o = run(&["rerun", "--manifest", p(&inv.join("manifest.json")), "--out", p(&again)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(inv.join("invariance.csv")).unwrap(), fs::read(again.join("invariance.csv")).unwrap());

    let o = run(&["invariance", "--checkpoint", p(&train), "--data", p(&data), "--layer", "conv9", "--out", p(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("conv9"));
}

#[test]
fn ablation_grid_streams_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared(tmp.path(), "r");
    let grid = tmp.path().join("grid.toml");
    fs::write(
        &grid,
        r#"
filters = 4
kernels = [5, 3]
placements = [1, 2]

[[levels]]
grids = [[2, 2]]
norm = "l1"
remainder = "fixed_margin"

[train]
total_iters = 3
batch = 4
"#,
    )
    .unwrap();
    let out = tmp.path().join("abl");
    let o = run(&["ablate", "--grid", p(&grid), "--data", p(&data), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2, "{csv}");
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",ok")), "{csv}");
}
