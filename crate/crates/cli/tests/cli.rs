use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn darnwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_darnwalk")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = darnwalk(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, output: &Path) -> String {
    let cfg = serde_json::json!({
        "levels": {"min": 2, "max": 3},
        "window_radius": 2,
        "num_paths": 2000,
        "t_max": 0.5,
        "marginal_times": [0.1, 0.25],
        "star_occupation": {"times": [0.5]},
        "output_dir": output,
    });
    let path = dir.join("cfg.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn csv_header(file: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(file).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

#[test]
fn graph_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("out"));
    let (graph, summary) = (path(tmp.path(), "g.bin"), path(tmp.path(), "summary.json"));
    ok(&["build-graph", "--config", &cfg, "--out", &graph, "--level", "3", "--summary", &summary]);
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    for key in ["num_vertices", "num_edges", "star_degree", "m_total", "m_complement_Sj"] {
        assert!(s.get(key).is_some(), "summary lacks {key}");
    }
    let total = s["m_total"].as_f64().unwrap();
    let edges = s["num_edges"].as_f64().unwrap();
    assert!((total - 2.0 * edges * 2f64.powi(-6) / 4.0).abs() < 1e-12);

    let (sim, dump) = (path(tmp.path(), "sim.json"), path(tmp.path(), "paths.csv"));
    ok(&[
        "simulate", "--graph", &graph, "--T", "0.25", "--paths", "500", "--seed", "3", "--marginal-times", "0.1,0.25",
        "--out", &sim, "--dump-paths", &dump, "--dump-limit", "5",
    ]);
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(&sim).unwrap()).unwrap();
    let marginals = s["marginals"].as_array().unwrap();
    assert_eq!(marginals.len(), 2);
    let counted: u64 = marginals[1]["counts"].as_array().unwrap().iter().map(|c| c[1].as_u64().unwrap()).sum();
    assert_eq!(counted + marginals[1]["exited"].as_u64().unwrap(), 500);
    assert_eq!(csv_header(&dump), ["path", "t", "vertex", "x", "y"]);

    let kernel = path(tmp.path(), "kernel.csv");
    ok(&["heat-kernel", "--graph", &graph, "--t", "0.25", "--sources", "star,origin", "--out", &kernel]);
    assert_eq!(csv_header(&kernel), ["x_id", "y_id", "d_j", "p", "bound_ratio"]);

    let iso = path(tmp.path(), "iso.json");
    ok(&["isoperimetry", "--graph", &graph, "--families", "connected:3,star:1", "--out", &iso]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&iso).unwrap()).unwrap();
    assert!(r["min_ratio"].as_f64().unwrap() > 0.0);
}

#[test]
fn generator_check_writes_one_row_per_level() {
    let tmp = tempfile::tempdir().unwrap();
    let out = path(tmp.path(), "gen.csv");
    ok(&["generator-check", "--f", "bump", "--levels", "3..5", "--out", &out]);
    let rows = csv::Reader::from_path(&out).unwrap().records().count();
    assert_eq!(rows, 3);
    assert!(!darnwalk(&["generator-check", "--f", "cosine", "--out", &out]).status.success());
}

fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().unwrap() != "timing.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn converge_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        fs::create_dir_all(&dir).unwrap();
        let cfg = write_config(&dir, &dir.join("out"));
        ok(&["converge", "--config", &cfg]);
        runs.push(outputs(&dir.join("out")));
    }
    assert!(runs[0].contains_key("manifest.json"));
    assert!(runs[0].contains_key("level_consistency.csv"));
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn single_thread_run_matches_default() {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (name, threads) in [("a", None), ("b", Some("1"))] {
        let dir = tmp.path().join(name);
        fs::create_dir_all(&dir).unwrap();
        let cfg = write_config(&dir, &dir.join("out"));
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_darnwalk"));
        cmd.args(["converge", "--config", &cfg]);
        if let Some(n) = threads {
            cmd.env("DARNWALK_THREADS", n);
        }
        assert!(cmd.output().unwrap().status.success());
        runs.push(outputs(&dir.join("out")));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"levels": {"min": 4, "max": 3}}"#).unwrap();
    let out = darnwalk(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/levels"));

    fs::write(&cfg, r#"{"num_pathz": 10}"#).unwrap();
    let out = darnwalk(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_pathz"));
}
