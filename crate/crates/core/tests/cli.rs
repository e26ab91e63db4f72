//! Black-box tests of the `mdhp` binary.

use std::path::Path;
use std::process::{Command, Output};

use mdhp::harness::{parse_csv, ExperimentConfig, CSV_HEADER};

fn mdhp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdhp"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: &str = "nt = 32\nnr = 16\nns = 2\nmt = 4\nmr = 4\ntrials = 3\nsnr_grid_db = [-20.0, -10.0, 0.0]\ntrace_entry = [0, 3]\n";

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn error_kind(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr).to_string();
    let v: serde_json::Value = serde_json::from_str(line.trim()).expect("one JSON line");
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn default_configs_parse_back() {
    for preset in ["sweep", "convergence", "mmwave"] {
        let out = mdhp(&["default-config", preset]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        ExperimentConfig::from_toml_str(&text).unwrap();
    }
    let text = String::from_utf8(mdhp(&["default-config"]).stdout).unwrap();
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), ExperimentConfig::default());
}

#[test]
fn sweep_writes_identical_csv_for_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut files = Vec::new();
    for threads in ["1", "4"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let out = mdhp(&[
            "sweep",
            "--config",
            &cfg,
            "--seed",
            "5",
            "--threads",
            threads,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        files.push(std::fs::read(out_dir.join("sweep.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    let text = String::from_utf8(files.remove(0)).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    let rows = parse_csv(&text).unwrap();
    assert_eq!(rows.len(), 3 * 3);
    assert!(rows.iter().all(|r| r.trials == 3 && r.mean_rate.is_finite()));
}

#[test]
fn seed_flag_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut files = Vec::new();
    for seed in ["1", "2"] {
        let out_dir = dir.path().join(seed);
        let out = mdhp(&["sweep", "--config", &cfg, "--seed", seed, "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success());
        files.push(std::fs::read(out_dir.join("sweep.csv")).unwrap());
    }
    assert_ne!(files[0], files[1]);
}

#[test]
fn convergence_and_single_emit_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("o");
    let o = out_dir.to_str().unwrap();
    assert!(mdhp(&["convergence", "--config", &cfg, "--out", o]).status.success());
    let conv = std::fs::read_to_string(out_dir.join("convergence.csv")).unwrap();
    assert!(conv.starts_with("mode,k,eps,delta_bar\n"));
    assert!(conv.contains("\nadaptive,0,") && conv.contains("\nconstant,0,"));
    assert!(out_dir.join("phase_trace.csv").exists());

    let out = mdhp(&["single", "--config", &cfg, "--snr-db", "-10", "--out", o]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("single.json")).unwrap()).unwrap();
    assert_eq!(json["snr_db"], -10.0);
    assert_eq!(json["precoder"]["phases"].as_array().unwrap().len(), 32);
    assert!(json["achieved"].as_f64().unwrap() <= json["upper_bound"].as_f64().unwrap() + 1e-6);
}

#[test]
fn errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("ns = 4\nmt = 2\n", "config"),
        ("nt = [\n", "config_parse"),
        ("unknown_key = 3\n", "config_parse"),
    ];
    for (text, kind) in cases {
        let cfg = write_config(dir.path(), text);
        let out = mdhp(&["sweep", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
        assert!(!out.status.success());
        assert_eq!(error_kind(&out), kind);
    }
    let out = mdhp(&["sweep", "--config", "/nonexistent/cfg.toml"]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "io");

    let cfg = write_config(dir.path(), "nt = 32\nnr = 16\nns = 2\nmt = 4\nmr = 4\n");
    let out = mdhp(&["convergence", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(error_kind(&out), "config", "trace entry outside a 32x4 RF factor");
}
