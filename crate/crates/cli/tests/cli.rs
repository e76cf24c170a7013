use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pwl_fhn::orbit::{lambda_1, lambda_v1};
use pwl_fhn::ModelParams;
use pwl_fhn_cli::config::RunConfig;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pwl-fhn"));
    c.env_remove("FHN_THREADS");
    c
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|row| row.unwrap().iter().map(String::from).collect()).collect()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

#[test]
fn validate_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["validate"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(tmp.path());
    assert_eq!(m["command"], "validate");
    assert_eq!(m["config"]["lambda"], 0.028);
    assert_eq!(m["config"]["D"], 0.0008);
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert!(m["versions"]["pwl-fhn"].is_string());
}

#[test]
fn invalid_parameters_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"v1": 1.5, "w1": 0.5}"#).unwrap();
    let o = bin()
        .args(["bifurcation", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid input"));

    let o = bin().args(["validate", "--config"]).arg(&cfg).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(code(&o), 1);
    assert!(tmp.path().join("validation.csv").exists());
}

#[test]
fn bad_flags_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["simulate", "--model", "quartic"], tmp.path())), 1);
    assert_eq!(code(&run(&["nonsense"], tmp.path())), 1);
    assert_eq!(code(&run(&["simulate", "--dt", "abc"], tmp.path())), 1);
    let cfg = tmp.path().join("typo.json");
    std::fs::write(&cfg, r#"{"lambdaa": 0.03}"#).unwrap();
    let o = bin().args(["validate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_config_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["validate", "--config"])
        .arg(tmp.path().join("absent.json"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
}

#[test]
fn unwritable_output_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    assert_eq!(code(&run(&["validate"], &file.join("sub"))), 3);
}

#[test]
fn thread_count_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin().env("FHN_THREADS", "2").args(["validate", "--out"]).arg(tmp.path()).output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(manifest(tmp.path())["threads"], 2);
    for bad in ["0", "two", ""] {
        let o = bin().env("FHN_THREADS", bad).args(["validate", "--out"]).arg(tmp.path()).output().unwrap();
        assert_eq!(code(&o), 1, "FHN_THREADS={bad:?}");
    }
}

#[test]
fn config_round_trip() {
    let c = RunConfig::default();
    let text = c.to_json();
    assert_eq!(RunConfig::parse(&text).unwrap().to_json(), text);
    let c = RunConfig {
        lambda: 0.1 + 0.2,
        noise_d: 1.0 / 3.0,
        d_min: Some(2.5e-5),
        grid: Some(7),
        t_end: Some(1e300),
        seed: u64::MAX,
        ..RunConfig::default()
    };
    let text = c.to_json();
    let back = RunConfig::parse(&text).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.to_json(), text);
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"seed": 5, "dt": 0.002, "lambda": 0.03}"#).unwrap();
    let out = tmp.path().join("o");
    let o = bin()
        .args(["validate", "--config"])
        .arg(&cfg)
        .args(["--seed", "9", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let m = manifest(&out);
    assert_eq!(m["config"]["seed"], 9);
    assert_eq!(m["config"]["dt"], 0.002);
    assert_eq!(m["config"]["lambda"], 0.03);
}

#[test]
fn shipped_configs_validate() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let c = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let r = pwl_fhn::model::validate(&c.params());
        assert!(r.is_valid(), "{}: {r}", path.display());
        n += 1;
    }
    assert!(n >= 8);
}

#[test]
fn simulate_smooth_model() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--model", "cubic", "--t-end", "300", "--seed", "3"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(tmp.path().join("timeseries.csv")).unwrap();
    assert!(text.starts_with("t,v,w\n"));
    assert!(!text.contains('\r'));
    let rows = read_csv(&tmp.path().join("timeseries.csv"));
    assert!(rows.len() > 100);
    let last: Vec<f64> = rows.last().unwrap().iter().map(|s| s.parse().unwrap()).collect();
    assert!((last[0] - 300.0).abs() < 1.0, "{last:?}");
    assert!(last[1].is_finite() && last[2].is_finite());
    assert_eq!(manifest(tmp.path())["config"]["model"], "cubic");
}

#[test]
fn manifest_lists_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--t-end", "300", "--seed", "1"], tmp.path());
    assert_eq!(code(&o), 0);
    let m = manifest(tmp.path());
    let files = m["files"].as_array().unwrap();
    let mut listed: Vec<String> = files.iter().map(|f| f["path"].as_str().unwrap().to_string()).collect();
    for f in files {
        let bytes = std::fs::read(tmp.path().join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), format!("{:x}", Sha256::digest(&bytes)));
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }
    let mut on_disk: Vec<String> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    listed.sort();
    on_disk.sort();
    assert_eq!(listed, on_disk);
}

#[test]
fn rerun_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["compare", "--t-end", "3000", "--seed", "17"];
    assert_eq!(code(&run(&args, a.path())), 0);
    let o = bin().env("FHN_THREADS", "3").args(args).arg("--out").arg(b.path()).output().unwrap();
    assert_eq!(code(&o), 0);
    let (ma, mb) = (manifest(a.path()), manifest(b.path()));
    assert_eq!(ma["files"], mb["files"]);
    for f in ma["files"].as_array().unwrap() {
        let name = f["path"].as_str().unwrap();
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn floats_carry_seventeen_digits() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["bifurcation", "--grid", "3", "--lambda-min", "0.01", "--lambda-max", "0.03"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&tmp.path().join("bifurcation.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.01);
    assert_eq!(rows[2][0].parse::<f64>().unwrap(), 0.03);
    let mantissa = rows[1][0].split('e').next().unwrap().replace(['-', '.'], "");
    assert_eq!(mantissa.len(), 17);
}

#[test]
fn mmo_intercepts_match_deterministic_proxies() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["mmo-region", "--grid", "2", "--d-min", "2.5e-5", "--d-max", "5e-5"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&tmp.path().join("intercepts.csv"));
    let p = ModelParams::default();
    let expect = [("left", lambda_1(&p).unwrap()), ("right", lambda_v1(&p).unwrap())];
    for (row, (side, det)) in rows.iter().zip(expect) {
        assert_eq!(row[0], side);
        let at_zero: f64 = row[1].parse().unwrap();
        assert!((at_zero - det).abs() < 1e-4, "{side}: {at_zero} vs {det}");
        assert_eq!(row[3].parse::<f64>().unwrap(), det);
    }
    assert_eq!(read_csv(&tmp.path().join("boundaries.csv")).len(), 2);
}
