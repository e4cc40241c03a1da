//! End-to-end runs of the command-line binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dyson-edge");
const SMALL: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/small.ini");

const TINY: &str = "\
master_seed = 77
ensemble_size = 6

[dbm]
n = 16
dt = 1e-3
t_end = 0.02
sample_times = 0.01, 0.02

[tw]
n = 16
dt = 1e-3
";

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("DYSON_EDGE_WORKERS").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_on_every_subcommand() {
    for sub in ["simulate", "mkv", "series", "rigidity", "clt", "tw", "interp", "all"] {
        let o = run(&[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("--config"), "{sub}");
    }
    let o = run(&["--help"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("interp"));
}

#[test]
fn missing_config_exits_two() {
    let o = run(&["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config"));

    let o = run(&["mkv", "--json-errors"]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(v["error"], "usage");
    assert!(v["message"].as_str().unwrap().contains("--config"));
}

#[test]
fn invalid_config_lists_every_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ini");
    fs::write(&path, "[dbm]\nbeta = 0.5\nbogus = 1\n").unwrap();
    let o = run(&["simulate", "--config", path.to_str().unwrap(), "--json-errors"]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    let msgs = v["messages"].as_array().unwrap();
    assert_eq!(msgs.len(), 2, "{msgs:?}");
    assert!(msgs.iter().any(|m| m.as_str().unwrap().contains("beta must be >= 1")));
}

#[test]
fn all_writes_every_artifact_family() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["all", "--config", SMALL, "--out", out.to_str().unwrap(), "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in [
        "mkv_edge.csv",
        "mkv_probes.csv",
        "mkv_checks.json",
        "series_coefficients.csv",
        "series_edge.csv",
        "series_check.json",
        "traj_0000.csv",
        "simulate_stats.csv",
        "rigidity.csv",
        "rigidity.json",
        "rigidity_edge_bound.json",
        "clt_gamma.csv",
        "clt_covariance.json",
        "clt_linear.json",
        "tw_edge.csv",
        "tw_compare.json",
        "interp_coupling.json",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    for sub in ["mkv", "series", "simulate", "rigidity", "clt", "tw", "interp"] {
        let text = fs::read_to_string(out.join(format!("manifest_{sub}.json"))).unwrap();
        let m: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(m["subcommand"], sub);
        assert_eq!(m["master_seed"], 20240611);
    }
    let edge = fs::read_to_string(out.join("tw_edge.csv")).unwrap();
    assert!(edge.starts_with("sample_id,value,source\n"));
}

/// Everything but the manifests, by name.
fn statistics(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.file_name().unwrap().to_str().unwrap().starts_with("manifest_"))
        .map(|p| (p.file_name().unwrap().to_str().unwrap().to_string(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn manifest_without_timing(path: &Path) -> serde_json::Value {
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let obj = m.as_object_mut().unwrap();
    for key in ["wall_time_s", "started_unix", "workers"] {
        obj.remove(key);
    }
    m
}

#[test]
fn worker_count_does_not_change_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.ini");
    fs::write(&cfg, TINY).unwrap();
    let mut outs = Vec::new();
    for workers in ["1", "3"] {
        let out = dir.path().join(format!("w{workers}"));
        for sub in ["simulate", "tw"] {
            let o = run(&[
                sub,
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--workers",
                workers,
                "--quiet",
            ]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        outs.push(out);
    }
    assert_eq!(statistics(&outs[0]), statistics(&outs[1]));
    for sub in ["simulate", "tw"] {
        let name = format!("manifest_{sub}.json");
        assert_eq!(manifest_without_timing(&outs[0].join(&name)), manifest_without_timing(&outs[1].join(&name)));
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.ini");
    fs::write(&cfg, TINY).unwrap();
    let stats_for = |seed: &str| {
        let out = dir.path().join(format!("s{seed}"));
        let o = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
            "--quiet",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out.join("simulate_stats.csv")).unwrap()
    };
    assert_eq!(stats_for("5"), stats_for("5"));
    assert_ne!(stats_for("5"), stats_for("6"));
}
