use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bkam_cli::report::{read_csv, DiophantineRow, ExampleRow, FrequencyRow, KamRow, KnfRow, LatticeRow, SimulationRow};
use tempfile::TempDir;

fn bkam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bkam")).args(args).output().expect("spawn bkam")
}

/// Writes `config` into `dir`, runs `cmd` with the CSV going to `out.csv`, and returns the CSV text.
fn run_ok(dir: &TempDir, cmd: &str, config: &str) -> String {
    let cfg = dir.path().join(format!("{cmd}.json"));
    let out = dir.path().join(format!("{cmd}.csv"));
    fs::write(&cfg, config).unwrap();
    let o = bkam(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
    fs::read_to_string(out).unwrap()
}

fn exit_code(dir: &TempDir, cmd: &str, config: &str) -> i32 {
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, config).unwrap();
    bkam(&[cmd, "--config", cfg.to_str().unwrap()]).status.code().unwrap()
}

const DESK_OFF_Z: &str = r#"{
  "system": {"catalog": {"name": "desk-kam-n3", "epsilon": 0.0}},
  "initial": {"phi": [0.1, 0.2, 0.3], "y": [0.01, 0.02, -0.03]},
  "t_final": 10.0, "dt": 0.1
}"#;

#[test]
fn simulate_unperturbed_desk() {
    let dir = TempDir::new().unwrap();
    let text = run_ok(&dir, "simulate", DESK_OFF_Z);
    assert!(text.starts_with("t,phi_1,phi_2,phi_3,y_1,y_2,y_3,H\n"));
    let rows: Vec<SimulationRow> = read_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 101);
    assert!(rows.iter().all(|r| r.y == rows[0].y));
    assert!(rows.iter().all(|r| (r.h - rows[0].h).abs() < 1e-9));
}

#[test]
fn simulate_conserves_energy_off_z() {
    let dir = TempDir::new().unwrap();
    let cfg = DESK_OFF_Z.replace("\"epsilon\": 0.0", "\"epsilon\": 0.01");
    let rows: Vec<SimulationRow> = read_csv(run_ok(&dir, "simulate", &cfg).as_bytes()).unwrap();
    assert!(rows.iter().any(|r| r.y != rows[0].y));
    assert!(rows.iter().all(|r| (r.h - rows[0].h).abs() < 1e-9));
}

#[test]
fn stdout_carries_the_csv_when_no_out_is_given() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(&cfg, DESK_OFF_Z).unwrap();
    let o = bkam(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let rows: Vec<SimulationRow> = read_csv(&o.stdout[..]).unwrap();
    assert_eq!(rows.len(), 101);
    assert!(String::from_utf8_lossy(&o.stderr).contains("samples=101"));
}

#[test]
fn freq_on_the_unperturbed_torus() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{
      "system": {"catalog": {"name": "desk-kam-n3"}},
      "initial": {"phi": [0.1, 0.2, 0.3], "y": [0.0, 0.0, 0.0]},
      "t_final": 204.7, "dt": 0.1
    }"#;
    let rows: Vec<FrequencyRow> = read_csv(run_ok(&dir, "freq", cfg).as_bytes()).unwrap();
    let want = [1.0, 1.0, (5f64.sqrt() - 1.0) / 2.0];
    assert_eq!(rows.len(), 3);
    for (r, w) in rows.iter().zip(want) {
        assert!((r.omega - w).abs() < 1e-8, "{r:?}");
    }
}

#[test]
fn diophantine_finds_the_resonance() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"diophantine": {"omega": [1.0, 0.5], "gamma": 1.0, "k_max": 5}}"#;
    let rows: Vec<DiophantineRow> = read_csv(run_ok(&dir, "diophantine", cfg).as_bytes()).unwrap();
    assert_eq!(rows[0].l_lower, 0.0);
    assert_eq!(rows[0].worst_k, vec![1, -2]);
}

#[test]
fn knf_history_decreases() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"system": {"catalog": {"name": "desk-kam-n3", "epsilon": 0.001}}, "knf": {"k_max": 12}}"#;
    let rows: Vec<KnfRow> = read_csv(run_ok(&dir, "knf", cfg).as_bytes()).unwrap();
    assert!(rows.len() >= 3);
    assert!(rows.windows(2).all(|w| w[1].residual < w[0].residual));
    assert!(rows.last().unwrap().residual < 1e-12);
}

const KAM_SMALL: &str = r#"{
  "system": {"catalog": {"name": "desk-kam-n3"}},
  "epsilon": [0.001, 0.0, 0.0001],
  "kam": {"t_final": 60.0, "trajectories": 2, "grid": 16},
  "seed": 11
}"#;

#[test]
fn kam_rows_are_sorted_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = run_ok(&dir, "kam", KAM_SMALL);
    let b = run_ok(&dir, "kam", KAM_SMALL);
    assert_eq!(a, b);
    let rows: Vec<KamRow> = read_csv(a.as_bytes()).unwrap();
    assert_eq!(rows.iter().map(|r| r.epsilon).collect::<Vec<_>>(), vec![0.0, 1e-4, 1e-3]);
    let zero = &rows[0];
    assert!(zero.passed && zero.max_torus_deviation == 0.0 && zero.psi_dist == 0.0, "{zero:?}");
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    for r in &rows {
        assert!(r.passed, "{r:?}");
        assert!((r.freq[0] - (1.0 + r.epsilon)).abs() < 1e-6);
        assert!((r.freq[1] - 1.0).abs() < 1e-6 && (r.freq[2] - golden).abs() < 1e-6);
    }
}

#[test]
fn kam_records_failures_per_row() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"system": {"catalog": {"name": "desk-kam-n3"}}, "epsilon": [0.0, 0.5], "kam": {"t_final": 20.0}}"#;
    let rows: Vec<KamRow> = read_csv(run_ok(&dir, "kam", cfg).as_bytes()).unwrap();
    assert!(rows[0].passed);
    assert!(!rows[1].passed && !rows[1].reason.is_empty());
}

#[test]
fn psi_distance_scales_linearly() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"system": {"catalog": {"name": "desk-kam-n3"}}, "epsilon": [1e-5, 1e-4, 1e-3, 1e-2], "kam": {"t_final": 20.0, "trajectories": 1}}"#;
    run_ok(&dir, "kam", cfg);
    let csv = dir.path().join("kam.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_kam-slope")).arg(&csv).output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert!(text.contains("PASS"));
}

fn lattice_rows(dir: &TempDir, cfg: &str) -> Vec<LatticeRow> {
    read_csv(run_ok(dir, "lattice", cfg).as_bytes()).unwrap()
}

#[test]
fn lattice_recovers_the_modular_period() {
    let dir = TempDir::new().unwrap();
    for c in [2.5, 1.0] {
        let cfg = format!(r#"{{"system": {{"catalog": {{"name": "standard-lattice", "n": 3, "c": {c}}}}}}}"#);
        let rows = lattice_rows(&dir, &cfg);
        assert_eq!(rows.len(), 3);
        for (i, r) in rows.iter().enumerate() {
            let mut want = vec![0.0; 3];
            want[i] = if i == 2 { c } else { 1.0 };
            assert!(r.lambda.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-8), "{r:?}");
            assert!((r.modular_period - c).abs() < 1e-8);
        }
    }
}

#[test]
fn lattice_of_a_rescaled_integral() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"system": {"inline": {"n": 2, "c": 1.5, "integrals": [
        {"terms": [{"coef": 2.0, "alpha": [0, 1]}]},
        {"kappa": 1.0}
    ]}}, "initial": {"phi": [0.2, 0.4], "y": [0.0, 0.1]}}"#;
    let rows = lattice_rows(&dir, cfg);
    assert!((rows[0].lambda[0] - 0.5).abs() < 1e-8 && rows[0].lambda[1].abs() < 1e-8);
    assert!((rows[1].modular_period - 1.5).abs() < 1e-8);
}

#[test]
fn example_list_names_the_catalog() {
    let o = bkam(&["example-list"]);
    assert!(o.status.success());
    let rows: Vec<ExampleRow> = read_csv(&o.stdout[..]).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["sphere-product", "desk-kam-n3", "standard-lattice", "kepler-mcgehee"]);
}

#[test]
fn config_problems_exit_with_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(exit_code(&dir, "simulate", r#"{"system": {"catalog": {"name": "desk-kam-n3"}}, "tfinal": 1}"#), 2);
    assert_eq!(exit_code(&dir, "simulate", "not json"), 2);
    assert_eq!(exit_code(&dir, "simulate", r#"{"system": {"catalog": {"name": "no-such-system"}}}"#), 2);
    assert_eq!(exit_code(&dir, "kam", r#"{"system": {"catalog": {"name": "desk-kam-n3"}}}"#), 2);
    assert_eq!(bkam(&["simulate"]).status.code(), Some(2));
    assert_eq!(bkam(&["frobnicate"]).status.code(), Some(2));
    let missing = Path::new("/nonexistent/config.json");
    assert_eq!(bkam(&["simulate", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn numerical_problems_exit_with_3() {
    let dir = TempDir::new().unwrap();
    // Eleven samples are far too few for frequency analysis.
    let cfg = DESK_OFF_Z.replace("\"t_final\": 10.0", "\"t_final\": 1.0");
    assert_eq!(exit_code(&dir, "freq", &cfg), 3);
}
