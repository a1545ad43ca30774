use std::path::Path;
use std::process::{Command, Output};

fn relayrate() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_relayrate"));
    cmd.env_remove("RELAYRATE_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    relayrate().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Header and data rows of a CSV output, metadata stripped.
fn rows(csv: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let data = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, data)
}

fn meta<'a>(csv: &'a str, key: &str) -> Option<&'a str> {
    csv.lines()
        .filter_map(|l| l.strip_prefix("# "))
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(": ")))
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn bounds_emits_one_column_per_repeater_count() {
    let out = stdout(&run(&[
        "bounds", "--alpha", "0.2", "--min-km", "50", "--max-km", "500", "--points", "10", "--repeaters", "0,1",
    ]));
    let (header, data) = rows(&out);
    assert_eq!(header, ["total_km", "eta", "skc0", "skc1"]);
    assert_eq!(data.len(), 10);
    let first: Vec<f64> = data[0].iter().map(|c| c.parse().unwrap()).collect();
    assert_eq!(first[0], 50.0);
    let want = -(1.0f64 - 0.1).log2();
    assert!((first[2] - want).abs() < 1e-11 * want, "{} vs {want}", first[2]);
    // Twelve significant digits in scientific notation.
    assert_eq!(data[0][2], format!("{want:.11e}"));
    assert_eq!(meta(&out, "command"), Some("bounds"));
    assert!(meta(&out, "config").unwrap().starts_with('{'));
}

#[test]
fn empty_range_is_a_usage_error() {
    let out = run(&["bounds", "--min-km", "100", "--max-km", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("range"));
    let out = run(&["bounds", "--points", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ideal_preset_reproduces_fig1c_columns_and_crossovers() {
    let out = stdout(&run(&["ideal", "--preset", "fig1c", "--points", "120"]));
    let (header, data) = rows(&out);
    for name in ["k_0", "k_1", "k_5", "k_inf", "skc0", "skc1"] {
        col(&header, name);
    }
    let (eta, k0) = (col(&header, "eta"), col(&header, "k_0"));
    for row in &data {
        let e: f64 = row[eta].parse().unwrap();
        let k: f64 = row[k0].parse().unwrap();
        assert!((k - 0.5 * e.sqrt()).abs() <= 1e-11 * k);
    }
    let x0: f64 = meta(&out, "crossover_k_inf_skc0_km").unwrap().parse().unwrap();
    let x1: f64 = meta(&out, "crossover_k_inf_skc1_km").unwrap().parse().unwrap();
    assert!((x0 - 41.2).abs() < 0.1, "{x0}");
    assert!((x1 - 230.6).abs() < 0.1, "{x1}");
}

#[test]
fn ideal_rejects_unnestable_speed_ratio() {
    let out = run(&["ideal", "--f", "1.2"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn output_is_written_atomically_and_failures_leave_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("bounds.csv");
    stdout(&run(&["bounds", "--points", "5", "-o", good.to_str().unwrap()]));
    assert!(good.exists());
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");

    let bad = dir.path().join("bad.csv");
    let out = run(&["bounds", "--min-km", "5", "--max-km", "1", "-o", bad.to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
    assert!(!bad.exists());

    let missing = dir.path().join("no/such/dir/out.csv");
    let out = run(&["bounds", "--points", "5", "-o", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

fn assert_rerun_identical(file: &Path) {
    let out = run(&["rerun", file.to_str().unwrap(), "--check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let again = file.with_extension("again");
    stdout(&run(&["rerun", file.to_str().unwrap(), "-o", again.to_str().unwrap()]));
    assert_eq!(std::fs::read_to_string(file).unwrap(), std::fs::read_to_string(&again).unwrap());
}

#[test]
fn outputs_round_trip_through_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ideal.csv");
    stdout(&run(&["ideal", "--depths", "0,2,inf", "--points", "7", "-o", csv.to_str().unwrap()]));
    assert_rerun_identical(&csv);

    let json = dir.path().join("sim.json");
    stdout(&run(&[
        "sim", "--p0", "0.2", "--p1", "0.5", "--m", "3", "--trials", "20000", "--seed", "9", "--format", "json", "-o",
        json.to_str().unwrap(),
    ]));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc["metadata"]["seed"], "9");
    assert_eq!(doc["metadata"]["command"], "sim");
    assert!(doc["metadata"]["generator"].as_str().unwrap().contains("ChaCha8"));
    assert_rerun_identical(&json);
}

#[test]
fn rerun_check_detects_edits() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    stdout(&run(&["bounds", "--points", "4", "-o", csv.to_str().unwrap()]));
    let text = std::fs::read_to_string(&csv).unwrap();
    let last = text.trim_end().rsplit_once(',').unwrap().0.to_string();
    std::fs::write(&csv, format!("{last},0.0\n")).unwrap();
    let out = run(&["rerun", csv.to_str().unwrap(), "--check"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_files_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "alpha_db_per_km = 0.16\nl_points = 3\n").unwrap();
    let out = stdout(&run(&["bounds", "--config", cfg.to_str().unwrap()]));
    let (_, data) = rows(&out);
    assert_eq!(data.len(), 3);
    let eta: f64 = data[2][1].parse().unwrap();
    assert!((eta - 10f64.powf(-0.016 * 1000.0)).abs() < 1e-11 * eta);

    std::fs::write(&cfg, "alpha_db_per_km = 0.16\nwavelength_nm = 1550\n").unwrap();
    let out = run(&["bounds", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("wavelength_nm"));

    let json = dir.path().join("run.json");
    std::fs::write(&json, r#"{"eta_det": 2.0}"#).unwrap();
    let out = run(&["bounds", "--config", json.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_override_is_honoured_and_checked() {
    let one = relayrate()
        .env("RELAYRATE_THREADS", "1")
        .args(["sim", "--p0", "0.3", "--m", "2", "--trials", "5000"])
        .output()
        .unwrap();
    let four = relayrate()
        .env("RELAYRATE_THREADS", "4")
        .args(["sim", "--p0", "0.3", "--m", "2", "--trials", "5000"])
        .output()
        .unwrap();
    assert_eq!(stdout(&one), stdout(&four));
    let bad = relayrate().env("RELAYRATE_THREADS", "zero").args(["bounds"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sim_reports_waits_consistent_with_formula() {
    let out = stdout(&run(&["sim", "--p0", "0.1", "--m", "5", "--trials", "200000", "--seed", "3"]));
    let mean: f64 = meta(&out, "mean_wait_slots").unwrap().parse().unwrap();
    let se: f64 = meta(&out, "stderr_slots").unwrap().parse().unwrap();
    let z: f64 = meta(&out, "analytic_wait_slots").unwrap().parse().unwrap();
    assert!((mean - z).abs() < 4.0 * se, "{mean} vs {z}");
    let (header, data) = rows(&out);
    let (h, mass) = (col(&header, "histogram"), col(&header, "mass"));
    for kind in ["storage", "wait"] {
        let total: f64 = data.iter().filter(|r| r[h] == kind).map(|r| r[mass].parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
    let bad = run(&["sim", "--p0", "0", "--m", "1"]);
    assert_ne!(bad.status.code(), Some(0));
}

#[test]
fn thresholds_table_matches_closed_forms() {
    let out = stdout(&run(&["thresholds", "--f", "1", "--gammas", "0,0.25,0.5,0.75"]));
    let (header, data) = rows(&out);
    let gs = col(&header, "gamma_star");
    let e1 = col(&header, "e1_min_over_l");
    let star: f64 = data[0][gs].parse().unwrap();
    // c_c = 0.9997 c against buffers at c.
    assert!((star - 0.5 * 0.9997).abs() < 1e-12);
    let e0: f64 = data[0][e1].parse().unwrap();
    assert!((e0 - 0.25).abs() < 1e-12);
    let flat: Vec<f64> = data[2..].iter().map(|r| r[e1].parse().unwrap()).collect();
    assert!(flat.iter().all(|v| (v - 0.5).abs() < 1e-12), "{flat:?}");
}

#[test]
fn practical_rows_carry_mode_and_curve_labels() {
    let out = stdout(&run(&[
        "practical", "--mode", "analytic", "--min-km", "100", "--max-km", "300", "--points", "3",
    ]));
    let (header, data) = rows(&out);
    let (curve, mode) = (col(&header, "curve"), col(&header, "mode"));
    let multi: Vec<_> = data.iter().filter(|r| r[curve] == "multi-node").collect();
    assert_eq!(multi.len(), 3);
    assert!(multi.iter().all(|r| r[mode] == "analytic"));
    assert!(data.iter().filter(|r| r[curve].starts_with("skc")).all(|r| r[mode] == "bound"));
    let skr = col(&header, "skr_bits_per_use");
    assert!(multi.iter().all(|r| r[skr].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn heatmap_lossless_buffers_favour_zero_offset() {
    let out = stdout(&run(&[
        "heatmap",
        "--preset",
        "heatmap-d2",
        "--set",
        "alpha_qm_grid = [0.0, 0.2]",
        "--min-km",
        "400",
        "--max-km",
        "400",
        "--points",
        "1",
    ]));
    let (header, data) = rows(&out);
    let (a, r) = (col(&header, "alpha_qm_db_per_km"), col(&header, "d2_over_l"));
    let lossless = data.iter().find(|row| row[a].parse::<f64>().unwrap() == 0.0).unwrap();
    assert_eq!(lossless[r].parse::<f64>().unwrap(), 0.0);
    let lossy = data.iter().find(|row| row[a].parse::<f64>().unwrap() == 0.2).unwrap();
    assert!(lossy[r].parse::<f64>().unwrap() > 0.2);
    assert!(meta(&out, "break_even_alpha_qm_db_per_km").unwrap().starts_with("400:"));
}

#[test]
fn unknown_preset_and_subcommand_fail() {
    assert_eq!(run(&["bounds", "--preset", "fig9"]).status.code(), Some(2));
    assert_ne!(run(&["plot"]).status.code(), Some(0));
}
