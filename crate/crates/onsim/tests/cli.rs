//! CLI contract: subcommands, exit codes, artifact files, reproducibility.

use std::path::{Path, PathBuf};
use std::process::Command;

fn onsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_onsim"))
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

#[test]
fn validate_accepts_bundled_configs() {
    for name in [
        "scenario1.toml",
        "scenario1_acceptance.toml",
        "scenario2.toml",
        "scenario_knowledge.toml",
    ] {
        let out = onsim()
            .args(["validate"])
            .arg(config_path(name))
            .output()
            .unwrap();
        assert!(out.status.success(), "{name} failed validation");
        assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok:"));
    }
}

#[test]
fn validate_rejects_unknown_keys_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let mut text = std::fs::read_to_string(config_path("scenario1.toml")).unwrap();
    text = text.replace("[scenario]", "[scenario]\nnot_a_real_key = 1");
    std::fs::write(&bad, text).unwrap();
    let out = onsim().args(["validate"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("not_a_real_key"), "diagnostic names the key: {stderr}");
}

#[test]
fn validate_reports_semantic_errors_by_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(config_path("scenario1.toml"))
        .unwrap()
        .replace("src = \"mt-01\"", "src = \"ghost\"");
    std::fs::write(&bad, text).unwrap();
    let out = onsim().args(["validate"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("flows.src"));
}

#[test]
fn missing_config_exits_with_code_two() {
    let out = onsim().args(["run", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_the_artifact_set_and_is_byte_reproducible() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = onsim()
            .args(["run"])
            .arg(config_path("scenario2.toml"))
            .args(["--seed", "7", "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in [
        "summary.csv",
        "packets.csv",
        "on_events.csv",
        "knowledge.csv",
        "power.csv",
        "fig_latency_before_after.csv",
        "fig_power_before_after.csv",
    ] {
        let a = std::fs::read(dir_a.path().join(file)).unwrap_or_else(|_| panic!("{file} written"));
        let b = std::fs::read(dir_b.path().join(file)).unwrap();
        assert_eq!(a, b, "{file} must be byte-identical across replays");
    }
    let summary = std::fs::read_to_string(dir_a.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with(
        "phase,level,protocol,seed,total_power_mw,reduction_pct,mean_delay_s,acceptable,mean_latency_s,trace_digest\n"
    ));
    // Run row plus the direct-baseline row.
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn sweep_covers_the_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = onsim()
        .args(["sweep"])
        .arg(config_path("scenario1_acceptance.toml"))
        .args([
            "--phases",
            "1,2,3,4",
            "--levels",
            "0,0.5,1.5,3,6,10,15",
            "--protocols",
            "reactive",
            "--reps",
            "10",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("swept 280 runs over 28 cells"), "{stdout}");
    let runs = std::fs::read_to_string(dir.path().join("sweep_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 281, "header plus one row per run");
    let cells = std::fs::read_to_string(dir.path().join("sweep_cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 29, "header plus one row per cell");
    let fig7 = std::fs::read_to_string(dir.path().join("fig_delay_vs_mobility.csv")).unwrap();
    assert_eq!(fig7.lines().count(), 29, "4 phases x 7 levels plus header");
    let fig6 = std::fs::read_to_string(dir.path().join("fig_power_vs_phase.csv")).unwrap();
    assert_eq!(fig6.lines().count(), 5, "4 phases plus header");
}

#[test]
fn sweep_artifacts_are_byte_reproducible_across_schedules() {
    // Parallel cell execution must not leak scheduling order into output.
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = onsim()
            .args(["sweep"])
            .arg(config_path("scenario1_acceptance.toml"))
            .args(["--phases", "4", "--levels", "3,6", "--reps", "2", "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    for file in ["sweep_runs.csv", "sweep_cells.csv", "fig_delay_vs_mobility.csv"] {
        let a = std::fs::read(dir_a.path().join(file)).unwrap();
        let b = std::fs::read(dir_b.path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical sweeps");
    }
}

#[test]
fn sweep_rejects_bad_axes_with_exit_code_two() {
    let out = onsim()
        .args(["sweep"])
        .arg(config_path("scenario1_acceptance.toml"))
        .args(["--phases", "5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = onsim()
        .args(["sweep"])
        .arg(config_path("scenario1_acceptance.toml"))
        .args(["--levels", "2.25"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = onsim()
        .args(["sweep"])
        .arg(config_path("scenario1_acceptance.toml"))
        .args(["--protocols", "carrier-pigeon"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verbose_run_logs_positions() {
    let dir = tempfile::tempdir().unwrap();
    let out = onsim()
        .args(["run"])
        .arg(config_path("scenario1.toml"))
        .args(["--level", "6", "--verbose", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let positions = std::fs::read_to_string(dir.path().join("positions.csv")).unwrap();
    assert!(positions.starts_with("t,node,x,y\n"));
    assert!(positions.lines().count() > 13, "samples for every node per tick");
}

#[test]
fn fig8_table_has_direct_and_opportunistic_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = onsim()
        .args(["run"])
        .arg(config_path("scenario2.toml"))
        .args(["--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let fig8 = std::fs::read_to_string(dir.path().join("fig_latency_before_after.csv")).unwrap();
    let lines: Vec<&str> = fig8.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("direct,"));
    assert!(lines[2].starts_with("opportunistic,"));
}
