use std::path::Path;
use std::process::{Command, Output};

use gapmodes_cli::validate_report;
use serde_json::Value;

const BASE: &str = r#"
k_x = -3.141592653589793
[medium]
background = 1.0
inclusions = [{ x0 = 0.25, x1 = 0.75, y0 = 0.25, y1 = 0.75, eps = 12.0 }]
[defect]
regions = [{ x0 = 0.25, x1 = 0.75, y0 = 0.8125, y1 = 0.9375, delta_eps = 1.0 }]
t = [0.5, 4.0]
[discretization]
n = 8
n_y = 9
n_k = 9
n_bands = 8
"#;

fn gapmodes(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gapmodes"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .env("GAPMODES_THREADS", "1")
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn gapmodes")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn report(dir: &Path) -> Value {
    let text = std::fs::read_to_string(dir.join("out/report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn bands_writes_one_row_per_grid_point() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BASE);
    let out = gapmodes(&["bands", &cfg], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut r = csv::Reader::from_path(tmp.path().join("out/bands.csv")).unwrap();
    assert_eq!(r.headers().unwrap().len(), 9);
    let rows: Vec<_> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|row| row.len() == 9));
    assert!(tmp.path().join("out/gap.json").exists());
}

#[test]
fn run_report_is_valid_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BASE);
    let out = gapmodes(&["run", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read(tmp.path().join("out/report.json")).unwrap();
    let v = report(tmp.path());
    validate_report(&v).unwrap();
    assert_eq!(v["verdict"], "true");
    for run in v["runs"].as_array().unwrap() {
        assert_eq!(run["bs_count"], run["supercell_count"]);
        assert_eq!(run["bs_count"], v["gap"]["n"]);
    }

    // kappa_j(mu) is nondecreasing along each strength's rows
    let mut r = csv::Reader::from_path(tmp.path().join("out/kappa.csv")).unwrap();
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for rec in r.records() {
        let rec = rec.unwrap();
        let vals: Vec<f64> = rec.iter().filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect();
        let (t, ks) = (vals[0], vals[2..].to_vec());
        if let Some((pt, pk)) = &prev {
            if *pt == t {
                for (a, b) in pk.iter().zip(&ks) {
                    assert!(b >= &(a - 1e-9 * a.abs().max(1.0)), "kappa decreased at t = {t}");
                }
            }
        }
        prev = Some((t, ks));
    }

    let again = gapmodes(&["run", &cfg], tmp.path());
    assert!(again.status.success());
    assert_eq!(first, std::fs::read(tmp.path().join("out/report.json")).unwrap());
}

#[test]
fn count_reuses_cached_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), BASE);
    assert!(gapmodes(&["bands", &cfg], tmp.path()).status.success());
    let out = gapmodes(&["count", &cfg, "--format", "json"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = report(tmp.path());
    assert!(v["config"]["gap"].is_array());
}

#[test]
fn zero_perturbation_is_vacuous() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &BASE.replace("t = [0.5, 4.0]", "t = 0.0"));
    let out = gapmodes(&["run", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let v = report(tmp.path());
    assert_eq!(v["verdict"], "vacuous");
    assert_eq!(v["runs"][0]["bs_count"], 0);
    assert_eq!(v["runs"][0]["supercell_count"], 0);
}

#[test]
fn quartic_override_leaves_assumptions_unverified() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{BASE}[override]\nquartic_edge = true\n"));
    let out = gapmodes(&["run", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let v = report(tmp.path());
    assert_eq!(v["verdict"], "assumptions_unverified");
    assert_eq!(v["gap"]["nondegenerate_ok"], false);
    for run in v["runs"].as_array().unwrap() {
        assert!(run["upper_bound_check"].is_null());
    }
}

#[test]
fn unknown_key_exits_with_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &BASE.replace("background = 1.0", "background = 1.0\nepsilonn = 2.0"));
    let out = Command::new(env!("CARGO_BIN_EXE_gapmodes"))
        .args(["run", &cfg])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilonn"));
}
