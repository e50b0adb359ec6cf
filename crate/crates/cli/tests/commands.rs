use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use poscon::scenario::EXAMPLE_TOML;
use poscon_cli::published;

fn poscon(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poscon"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn relaxed_gains(dir: &Path) -> PathBuf {
    let o = poscon(&["synthesize", "--mode", "relaxed", "-o", "gains.json"], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    dir.join("gains.json")
}

#[test]
fn check_accepts_builtin_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = poscon(&["check"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("regulator agent 8"));
}

#[test]
fn check_rejects_stable_pattern() {
    let dir = tempfile::tempdir().unwrap();
    let text = EXAMPLE_TOML.replace("a0 = [[0.01, 0.01], [0.0, 0.0]]", "a0 = [[-1.0, 0.01], [0.0, 0.0]]");
    assert_ne!(text, EXAMPLE_TOML);
    let cfg = write_config(dir.path(), "stable.toml", &text);
    let o = poscon(&["check", "-c", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn malformed_config_exits_with_parse_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "name = \"x\"\n[pattern\na0 = 1\n");
    let o = poscon(&["check", "-c", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn output_mode_with_pins_reports_infeasible_agents() {
    let dir = tempfile::tempdir().unwrap();
    let o = poscon(&["synthesize", "--mode", "output"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    for label in ["agent 5", "agent 6", "agent 8"] {
        let line = out.lines().find(|l| l.starts_with(&format!("FAIL {label}:"))).expect(label);
        assert!(line.contains("diagonal entry (1,1) = 2.062500"), "{line}");
    }
    assert!(!out.contains("FAIL agent 1:"));
    assert!(!dir.path().join("gains.json").exists());
}

#[test]
fn relaxed_mode_with_pins_matches_published_gains() {
    let dir = tempfile::tempdir().unwrap();
    let path = relaxed_gains(dir.path());
    let gains = poscon_cli::read_gains(&path).unwrap();
    assert_eq!(gains.mu, 3.0);
    for (g, p) in gains.agents.iter().zip(published::agents()) {
        assert!((&g.k1 - &p.k1).amax() <= 1e-3, "{}", g.label);
        assert!((&g.k2 - &p.k2).amax() <= 1e-3, "{}", g.label);
        assert!((g.k3.as_ref().unwrap() - &p.k3).amax() <= 1e-3, "{}", g.label);
    }
}

#[test]
fn simulate_writes_deterministic_trace() {
    let dir = tempfile::tempdir().unwrap();
    relaxed_gains(dir.path());
    let run = |out: &str| {
        let o = poscon(&["simulate", "-g", "gains.json", "--horizon", "5", "-o", out], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        fs::read_to_string(dir.path().join(out).join("trace.csv")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    let header = a.lines().next().unwrap();
    assert!(header.starts_with("t,x1_1,x1_2,x1_3,x2_1"));
    assert!(header.ends_with("E2_7,E2_8,D2"));
    assert_eq!(a.lines().count(), 502);

    let audit: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/audit.json")).unwrap()).unwrap();
    assert_eq!(audit["seed"], 20211005);
    assert_eq!(audit["audit"]["informational"][0], "consensus");
}

#[test]
fn seed_changes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    relaxed_gains(dir.path());
    let run = |out: &str, seed: &str| {
        let o = poscon(&["simulate", "-g", "gains.json", "--horizon", "1", "--seed", seed, "-o", out], dir.path());
        assert_eq!(o.status.code(), Some(0));
        fs::read_to_string(dir.path().join(out).join("trace.csv")).unwrap()
    };
    assert_ne!(run("a", "1"), run("b", "2"));
}

#[test]
fn short_horizon_flags_insufficient_decay() {
    let dir = tempfile::tempdir().unwrap();
    relaxed_gains(dir.path());
    let o = poscon(
        &["simulate", "-g", "gains.json", "--horizon", "0.1", "--disturbance", "zero", "-o", "short"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("consensus    FAIL"));
    let audit = fs::read_to_string(dir.path().join("short/audit.json")).unwrap();
    assert!(audit.contains("never drops below"), "{audit}");
}

#[test]
fn gain_file_for_other_scenario_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("junk.json"), "{\"not\": \"gains\"}").unwrap();
    let o = poscon(&["simulate", "-g", "junk.json", "-o", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reproduce_matches_published_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = poscon(&["reproduce-paper", "-o", "rep"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let md = fs::read_to_string(dir.path().join("rep/summary.md")).unwrap();
    assert!(md.contains("within the published rounding"));
    assert!(md.contains("Overall: PASS"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rep/summary.json")).unwrap()).unwrap();
    assert!(summary["max_delta"].as_f64().unwrap() <= 1e-3);
    assert_eq!(summary["synthesis_notes"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("rep/nominal/trace.csv").exists());
    assert!(dir.path().join("rep/disturbed/audit.json").exists());
}

#[test]
fn reproduce_state_feedback_variant() {
    let dir = tempfile::tempdir().unwrap();
    let o = poscon(&["reproduce-paper", "--state-feedback", "--horizon", "50", "-o", "rep"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let md = fs::read_to_string(dir.path().join("rep/summary.md")).unwrap();
    assert!(md.contains("Controller: state feedback"));
    assert!(!md.contains("| K3 |"));
}

#[test]
fn gamma_bisection_reports_per_agent_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let o = poscon(&["synthesize", "--mode", "output", "--no-pins", "--gamma-bisect"], dir.path());
    let out = stdout(&o);
    let gammas: Vec<f64> = out
        .lines()
        .filter_map(|l| l.split("minimal gamma = ").nth(1))
        .map(|v| v.trim().parse().unwrap())
        .collect();
    assert_eq!(gammas.len(), 8, "{out}");
    // identical classes share a value, and every minimum sits below the scenario's gamma
    assert_eq!(gammas[0], gammas[1]);
    assert_eq!(gammas[4], gammas[7]);
    assert!(gammas.iter().all(|&g| g > 0.0 && g < 4.0));
}
