use std::path::{Path, PathBuf};
use std::process::Command;

use tnt_harness::output::{read_table, RunManifest, MANIFEST_NAME};

fn tnt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tnt"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("tnt-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_NAME)).unwrap()).unwrap()
}

#[test]
fn q_function_run_writes_snapshots_and_manifest() {
    let d = scratch("q");
    let cfg = write_config(
        &d,
        r#"{"n_atoms": 20, "chi": 1.0, "time": {"unit": "chi_t", "values": [0.0, 0.05]},
            "q_grid": {"n_theta": 11, "n_phi": 21}}"#,
    );
    let out = d.join("out");
    let st = tnt().args(["q_function", "--quiet", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(st.success());
    let m = manifest(&out);
    assert!(m.complete);
    let names: Vec<&str> = m.files.iter().map(|f| f.name.as_str()).collect();
    assert!(names.contains(&"q_000.csv") && names.contains(&"q_001.csv"), "{names:?}");
    let (header, rows) = read_table(&out.join("q_001.csv")).unwrap();
    assert_eq!(header, ["theta", "phi", "q"]);
    assert_eq!(rows.len(), 11 * 21);
    assert!(rows.iter().all(|r| r[2] >= 0.0 && r[2] <= 1.0 + 1e-12));
}

#[test]
fn repeated_stochastic_runs_are_identical() {
    let d = scratch("repeat");
    let cfg = write_config(
        &d,
        r#"{"kind": "single_mode_tw", "n_atoms": 500, "n_traj": 200, "omega": "tnt", "chi": 1.0,
            "time": {"unit": "chi_t", "stop": 0.01, "points": 6}}"#,
    );
    let read = |dir: &Path| std::fs::read(dir.join("metrology.csv")).unwrap();
    for (name, seed) in [("a", "3"), ("b", "3"), ("c", "4")] {
        let st = tnt().args(["run", "--quiet", "--seed", seed, "--config"]).arg(&cfg).arg("--out").arg(d.join(name)).status().unwrap();
        assert!(st.success());
    }
    assert_eq!(read(&d.join("a")), read(&d.join("b")));
    assert_ne!(read(&d.join("a")), read(&d.join("c")));
}

#[test]
fn trajectories_flag_overrides_the_config() {
    let d = scratch("traj");
    let cfg = write_config(
        &d,
        r#"{"kind": "single_mode_tw", "n_atoms": 100, "n_traj": 50, "seed": 1,
            "time": {"unit": "chi_t", "stop": 0.01, "points": 3}}"#,
    );
    let out = d.join("out");
    let st = tnt().args(["run", "--quiet", "--trajectories", "120", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(st.success());
    assert_eq!(manifest(&out).config.n_traj, Some(120));
}

#[test]
fn config_errors_exit_with_two() {
    let d = scratch("bad");
    // stochastic kind without a seed
    let cfg = write_config(&d, r#"{"kind": "single_mode_tw", "time": {"stop": 0.1, "points": 3}}"#);
    let st = tnt().args(["run", "--quiet", "--config"]).arg(&cfg).arg("--out").arg(d.join("out")).status().unwrap();
    assert_eq!(st.code(), Some(2));
    let unknown = write_config(&d, r#"{"kind": "gpe", "colour": "blue"}"#);
    let st = tnt().args(["run", "--quiet", "--config"]).arg(&unknown).status().unwrap();
    assert_eq!(st.code(), Some(2));
    let st = tnt().args(["run", "--quiet", "--threads", "0"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn subcommand_must_match_config_kind() {
    let d = scratch("kind");
    let cfg = write_config(&d, r#"{"kind": "gpe", "time": {"stop": 0.001, "points": 2}}"#);
    let st = tnt().args(["ground_state", "--quiet", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn verify_reports_one_line_per_criterion() {
    let out = tnt().args(["verify", "1", "3"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert!(lines[0].starts_with("criterion  1 PASS"));
    assert!(lines[1].starts_with("criterion  3 PASS"));
    assert!(out.status.success());
}

#[test]
fn compare_of_a_run_with_itself_is_zero() {
    let d = scratch("compare");
    let cfg = write_config(
        &d,
        r#"{"kind": "single_mode_exact", "n_atoms": 30, "chi": 1.0, "time": {"unit": "chi_t", "stop": 0.2, "points": 5}}"#,
    );
    let out = d.join("out");
    assert!(tnt().args(["run", "--quiet", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap().success());
    let table = out.join("metrology.csv");
    let o = tnt().args(["compare", "--quiet"]).arg(&table).arg(&table).output().unwrap();
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), "0");
}
