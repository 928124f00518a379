//! Headline numbers through the command line, on cohorts big enough for the
//! medians to sit within the trial tolerances.

use std::path::Path;
use std::process::Command;

fn run(args: &[&str], dir: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_glioma")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn summary(dir: &Path) -> Vec<(String, f64)> {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    v["arms"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| (a["tag"].as_str().unwrap().to_string(), a["median_days"].as_f64().unwrap()))
        .collect()
}

#[test]
fn monotherapy_and_combined_medians() {
    let dir = tempfile::tempdir().unwrap();
    run(&["trial", "--patients", "2000", "--protocols", "NT,2C,10T,5T2C5T", "--total-cart", "1e9", "--out", "t"], dir.path());
    let got = summary(&dir.path().join("t"));
    let want = [("NT", 268.0), ("2C_v1e9", 312.0), ("10T", 558.0), ("5T2C5T_v1e9", 652.0)];
    for ((tag, m), (wtag, w)) in got.iter().zip(want) {
        assert_eq!(tag, wtag);
        assert!((m - w).abs() <= 0.07 * w, "{tag}: {m} vs {w}");
    }
}

#[test]
fn single_car_t_block_wins_for_the_fastest_resistant_growth() {
    let dir = tempfile::tempdir().unwrap();
    run(&["trial", "--patients", "1000", "--r2-ratio", "2", "--total-cart", "1e9", "--out", "t"], dir.path());
    let got = summary(&dir.path().join("t"));
    let best = got.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(best.0, "2C_v1e9", "{got:?}");
}

#[test]
fn combined_protocols_are_mostly_interchangeable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let combined = ["5T2C5T", "2C10T", "1C5T1C5T", "5T1C5T1C", "10T2C", "1C10T1C"];
    run(&["trial", "--patients", "1000", "--protocols", &combined.join(","), "--total-cart", "1e9", "--out", "t"], d);
    let files: Vec<String> = combined.iter().map(|p| format!("t/outcomes_{p}_v1e9.csv")).collect();
    run(&["analyze", "equivalence", "--outcomes", &files.join(","), "--margin", "0.1", "--out", "eq"], d);
    let eq: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("eq/equivalence.json")).unwrap()).unwrap();
    let f = eq["all_fraction"].as_f64().unwrap();
    assert!((f - 0.75).abs() <= 0.05, "{f}");

    run(&["analyze", "compare", "--outcomes", &format!("{},{}", files[2], files[0]), "--out", "cmp"], d);
    let cmp: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("cmp/compare.json")).unwrap()).unwrap();
    let r = cmp["survival_r"].as_f64().unwrap();
    assert!((r - 0.99).abs() <= 0.08, "{r}");
}
