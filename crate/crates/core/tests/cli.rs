mod common;

use std::fs;
use std::path::Path;

use common::{date, synthetic_market, weekdays_for_years, write_config};
use decarb_core::cli::run_with;
use tempfile::TempDir;

const WINDOW: &str = "\n[window]\nstart = 2019-01-01\nend = 2019-12-31\n";

fn market_dir() -> TempDir {
    let dir = TempDir::new().unwrap();
    synthetic_market(11, 20, weekdays_for_years(date(2019, 1, 1), 3)).write_files(dir.path());
    dir
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["decarb"];
    full.extend_from_slice(args);
    let code = run_with(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn run_conf(cmd: &str, conf: &Path, out: &Path) -> (i32, String, String) {
    run(&[cmd, "--config", conf.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

#[test]
fn sweep_writes_curves_and_reports_optima() {
    let dir = market_dir();
    let conf = write_config(dir.path(), &format!("risk = var\np = 0.95\n{WINDOW}"));
    let out = dir.path().join("out");
    let (code, stdout, stderr) = run_conf("sweep", &conf, &out);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("k_opt") && stdout.contains("c_opt"), "{stdout}");
    for f in ["k_curve.csv", "c_curve.csv", "sweep.svg"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let k = fs::read_to_string(out.join("k_curve.csv")).unwrap();
    assert!(k.starts_with("k,risk_value,footprint,status\n"));
    assert!(fs::read_to_string(out.join("sweep.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn build_writes_normalized_weights() {
    let dir = market_dir();
    let conf = write_config(dir.path(), &format!("k = 3\nc_rel = 0.8\n{WINDOW}"));
    let out = dir.path().join("out");
    let (code, _, stderr) = run_conf("build", &conf, &out);
    assert_eq!(code, 0, "{stderr}");
    for f in ["weights_di1.csv", "weights_di2.csv"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        let total: f64 = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-8, "{f}: {total}");
        assert_eq!(text.lines().count(), 21);
    }
}

#[test]
fn backtest_writes_reports_with_builtin_events() {
    let dir = market_dir();
    let conf = write_config(
        dir.path(),
        "k = 3\nmarket = sp500\n[backtest]\nstart = 2019-01-01\nwindows = 2\n",
    );
    let out = dir.path().join("out");
    let (code, _, stderr) = run_conf("backtest", &conf, &out);
    assert_eq!(code, 0, "{stderr}");
    let oos = fs::read_to_string(out.join("out_sample.csv")).unwrap();
    // 2020-01 .. 2021-12
    assert_eq!(oos.lines().count(), 25);
    assert!(oos.contains("2021-11,") && oos.contains("COP 26"));
    assert!(oos.contains("Hurricane Ida"));
    assert!(out.join("summary.csv").is_file());
    assert!(out.join("monthly_returns_ghg.svg").is_file());
}

#[test]
fn missing_input_names_the_path() {
    let dir = market_dir();
    fs::remove_file(dir.path().join("carbon.csv")).unwrap();
    let conf = write_config(dir.path(), &format!("k = 3\n{WINDOW}"));
    let (code, _, stderr) = run_conf("build", &conf, &dir.path().join("out"));
    assert_eq!(code, 1);
    assert!(stderr.contains("carbon.csv"), "{stderr}");
}

#[test]
fn confidence_out_of_range_is_rejected() {
    let dir = market_dir();
    let conf = write_config(dir.path(), &format!("k = 3\np = 1.2\n{WINDOW}"));
    let (code, _, stderr) = run_conf("build", &conf, &dir.path().join("out"));
    assert_eq!(code, 1);
    assert!(stderr.contains("p must be in (0,1)"), "{stderr}");
}

#[test]
fn infeasible_cap_is_a_user_error() {
    let dir = market_dir();
    let conf = write_config(dir.path(), &format!("c_rel = 0.0001\n{WINDOW}"));
    let (code, _, stderr) = run_conf("build", &conf, &dir.path().join("out"));
    assert_eq!(code, 1);
    assert!(stderr.contains("carbon cap infeasible"), "{stderr}");
}

#[test]
fn zero_windows_is_rejected() {
    let dir = market_dir();
    let conf = write_config(dir.path(), "k = 3\n[backtest]\nstart = 2019-01-01\nwindows = 0\n");
    let (code, _, stderr) = run_conf("backtest", &conf, &dir.path().join("out"));
    assert_eq!(code, 1);
    assert!(stderr.contains("no windows"), "{stderr}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = market_dir();
    let conf = write_config(dir.path(), &format!("k = 3\nbogus = 1\n{WINDOW}"));
    let (code, _, stderr) = run_conf("build", &conf, &dir.path().join("out"));
    assert_eq!(code, 1);
    assert!(stderr.contains("bogus"), "{stderr}");
}

#[test]
fn jobs_flag_gives_identical_output() {
    let dir = market_dir();
    let conf = write_config(dir.path(), &format!("k = 3\nc_rel = 0.8\n{WINDOW}"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run_conf("build", &conf, &a).0, 0);
    let (code, _, _) = run(&["--jobs", "1", "build", "--config", conf.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code, 0);
    for f in ["weights_di1.csv", "weights_di2.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    assert_eq!(run(&["--jobs", "0", "presets"]).0, 1);
}

#[test]
fn presets_and_help() {
    let (code, stdout, _) = run(&["presets"]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 9);
    assert!(stdout.contains("sp500-ghg-var"));

    let (code, stdout, _) = run(&["backtest", "--help"]);
    assert_eq!(code, 0);
    for (key, _) in decarb_core::config::KEYS {
        assert!(stdout.contains(key), "help lacks {key}");
    }
    assert_eq!(run(&["frobnicate"]).0, 1);
}
