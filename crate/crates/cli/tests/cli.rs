use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const POPULATION: &str = "[population]\nsensors = 6\nusers = 2\n";

fn urllc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urllc")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "status {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
}

fn setup() -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("pop.toml"), POPULATION).unwrap();
    ok(&urllc(dir.path(), &["--config", "pop.toml", "--seed", "4", "--out", "s", "generate"]));
    dir
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_solve_validate_round_trip() {
    let dir = setup();
    let d = dir.path();
    ok(&urllc(d, &["--out", "r", "solve", "--scenario", "s/scenario.json"]));
    let report = json(&d.join("r/report.json"));
    assert_eq!(report["manifest"], "solve.manifest.json");
    let alloc = &report["report"]["allocation"];
    assert_eq!(alloc["b_ul"].as_array().unwrap().len(), 6);
    assert_eq!(alloc["b_dl"].as_array().unwrap().len(), 2);

    ok(&urllc(
        d,
        &["--out", "v", "validate", "--scenario", "s/scenario.json", "--report", "r/report.json", "--trials", "20000"],
    ));
    let v = json(&d.join("v/validation.json"));
    assert_eq!(v["report"]["config"]["trials"], 20000);
    assert_eq!(v["report"]["ul"].as_array().unwrap().len(), 6);
    for key in ["ul_drop_rate", "dl_drop_rate", "delay_violation_rate", "avg_ul_power", "avg_dl_power"] {
        assert!(v["report"][key]["empirical"].is_number(), "{key}");
    }
    let manifest = json(&d.join("v/validate.manifest.json"));
    assert_eq!(manifest["outputs"][0], "validation.json");
}

#[test]
fn solve_output_is_byte_identical() {
    let dir = setup();
    let d = dir.path();
    ok(&urllc(d, &["--out", "a", "solve", "--scenario", "s/scenario.json"]));
    ok(&urllc(d, &["--out", "b", "solve", "--scenario", "s/scenario.json"]));
    assert_eq!(fs::read(d.join("a/report.json")).unwrap(), fs::read(d.join("b/report.json")).unwrap());
    ok(&urllc(d, &["--config", "pop.toml", "--seed", "4", "--out", "c", "generate"]));
    assert_eq!(fs::read(d.join("s/scenario.json")).unwrap(), fs::read(d.join("c/scenario.json")).unwrap());
}

#[test]
fn feasibility_changes_sign_once_per_subchannel_count() {
    let dir = setup();
    let d = dir.path();
    ok(&urllc(d, &["--out", "f", "feasibility", "--scenario", "s/scenario.json", "--n-t-to", "96", "--n-t-step", "1"]));
    let mut rdr = csv::Reader::from_path(d.join("f/feasibility.csv")).unwrap();
    let mut by_na: BTreeMap<u32, Vec<(u32, bool)>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row.unwrap();
        let n_a: u32 = row[0].parse().unwrap();
        let n_t: u32 = row[1].parse().unwrap();
        let z: f64 = row[2].parse().unwrap();
        assert_eq!(&row[3] == "true", z <= 0.0);
        by_na.entry(n_a).or_default().push((n_t, z <= 0.0));
    }
    assert_eq!(by_na.len(), 6);
    for (n_a, rows) in by_na {
        assert_eq!(rows.len(), 95, "n_a {n_a}");
        let flips = rows.windows(2).filter(|w| w[0].1 != w[1].1).count();
        assert_eq!(flips, 1, "n_a {n_a}");
        assert!(!rows[0].1 && rows[rows.len() - 1].1, "n_a {n_a}");
    }
}

#[test]
fn compare_lists_every_strategy() {
    let dir = setup();
    let d = dir.path();
    ok(&urllc(d, &["--out", "c", "compare", "--scenario", "s/scenario.json"]));
    let mut rdr = csv::Reader::from_path(d.join("c/compare.csv")).unwrap();
    let names: Vec<String> = rdr.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(names, ["joint", "eq-bw", "fixed-na", "fixed-nt", "opt-bw", "opt-na", "opt-nt"]);
}

#[test]
fn infeasible_exits_three() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("small.toml"), format!("[system]\npsi = 4\n{POPULATION}")).unwrap();
    let out = urllc(d, &["--config", "small.toml", "--out", "o", "solve"]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "infeasible");
}

#[test]
fn usage_errors_exit_two() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[system]\nbogus = 1\n").unwrap();
    for args in [
        &["--config", "bad.toml", "--out", "o", "generate"][..],
        &["--out", "o", "validate", "--scenario", "s/scenario.json", "--relaxed-eps", "often"],
        &["--out", "o", "solve", "--scenario", "missing.json"],
        &["--out", "o", "feasibility", "--scenario", "s/scenario.json", "--n-t-from", "50", "--n-t-to", "10"],
    ] {
        let out = urllc(d, args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(err["error"], "usage", "{args:?}");
    }
}
