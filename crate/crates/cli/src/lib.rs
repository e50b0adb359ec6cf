//! Command layer behind the `poscon` binary: scenario loading, the four
//! subcommands, and CSV/JSON/markdown emission.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use poscon::metrics::{
    audit_consensus, audit_contraction, audit_l2_gain, audit_positivity, AuditReport, ConsensusOptions, KappaSpec,
};
use poscon::model::{validate_scenario, DisturbanceSignal, ValidationReport};
use poscon::numerics::Mat;
use poscon::regulator::{solve_regulator, RegulatorSolution};
use poscon::scenario::{BuiltScenario, RunMode, Scenario, ScenarioError};
use poscon::sim::{build_closed_loop, Integrator, SimError, Trajectory};
use poscon::synthesis::{synthesize_gain_set, ControllerKind, GainSet, SynthesisReport};

pub mod published;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

/// Lower end and resolution of the gamma bisection.
pub const BISECT_LO: f64 = 0.05;
pub const BISECT_RESOLUTION: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Failure(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse(_) => EXIT_PARSE,
            Self::Failure(_) | Self::Io { .. } => EXIT_FAILURE,
            Self::Divergence(_) => EXIT_DIVERGENCE,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { path, source } => Self::Io {
                path: path.into(),
                source,
            },
            other => Self::Parse(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NonFiniteState { .. } => Self::Divergence(e.to_string()),
            other => Self::Failure(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Command-line overrides applied to a scenario before it is built.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub horizon: Option<f64>,
    pub step: Option<f64>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, scenario: &mut Scenario) {
        if let Some(h) = self.horizon {
            scenario.simulation.horizon = h;
        }
        if let Some(h) = self.step {
            scenario.simulation.step = h;
        }
        if let Some(s) = self.seed {
            scenario.simulation.seed = s;
        }
    }
}

/// Loads a scenario file, or the built-in example when `path` is `None`.
pub fn load_scenario(path: Option<&Path>, overrides: &Overrides) -> Result<BuiltScenario, CliError> {
    let mut scenario = match path {
        Some(p) => Scenario::from_path(p)?,
        None => Scenario::example(),
    };
    overrides.apply(&mut scenario);
    Ok(scenario.build()?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failure(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_gains(path: &Path) -> Result<GainSet, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- check

#[derive(Debug, Clone, Serialize)]
pub struct RegulatorRow {
    pub label: String,
    pub solution: Option<RegulatorSolution>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub validation: ValidationReport,
    pub regulators: Vec<RegulatorRow>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.validation.passed() && self.regulators.iter().all(|r| r.solution.as_ref().is_some_and(|s| s.positive_certified))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:<6} detail", "check", "result");
        if self.validation.passed() {
            let _ = writeln!(out, "{:<28} {:<6} all structural checks hold", "structure", "PASS");
        }
        for v in &self.validation.violations {
            let kind = serde_json::to_value(&v.kind).ok().and_then(|k| k.as_str().map(str::to_owned)).unwrap_or_default();
            let _ = writeln!(out, "{:<28} {:<6} [{kind}] {}", v.location, "FAIL", v.detail);
        }
        for r in &self.regulators {
            let name = format!("regulator {}", r.label);
            match (&r.solution, &r.error) {
                (Some(s), _) if s.positive_certified => {
                    let _ = writeln!(out, "{name:<28} {:<6} residual {:.1e}{}", "PASS", s.residual, if s.unique { "" } else { ", non-unique" });
                }
                (Some(s), _) => {
                    let _ = writeln!(out, "{name:<28} {:<6} no nonnegative solution found (residual {:.1e})", "FAIL", s.residual);
                }
                (None, e) => {
                    let _ = writeln!(out, "{name:<28} {:<6} {}", "FAIL", e.as_deref().unwrap_or("unsolvable"));
                }
            }
        }
        out
    }
}

/// Structural validation plus a regulator solve for every agent.
pub fn cmd_check(s: &BuiltScenario) -> CheckReport {
    let validation = validate_scenario(&s.agents, &s.pattern, &s.schedule, &s.tolerances);
    let regulators = s
        .agents
        .iter()
        .map(|a| match solve_regulator(a, &s.pattern, &s.tolerances) {
            Ok(sol) => RegulatorRow {
                label: a.label.clone(),
                solution: Some(sol),
                error: None,
            },
            Err(e) => RegulatorRow {
                label: a.label.clone(),
                solution: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    CheckReport { validation, regulators }
}

// ----------------------------------------------------------- synthesize

#[derive(Debug, Clone, Copy)]
pub struct SynthesizeOptions {
    pub mode: RunMode,
    pub gamma: Option<f64>,
    pub bisect: bool,
    pub use_pins: bool,
}

impl Default for SynthesizeOptions {
    fn default() -> Self {
        Self {
            mode: RunMode::Output,
            gamma: None,
            bisect: false,
            use_pins: true,
        }
    }
}

pub fn cmd_synthesize(s: &BuiltScenario, options: &SynthesizeOptions) -> SynthesisReport {
    let mut request = s.request(options.mode, options.use_pins, options.gamma);
    if options.bisect {
        request.bisect = Some((BISECT_LO, BISECT_RESOLUTION));
    }
    synthesize_gain_set(&s.agents, &s.pattern, &s.schedule, &request, &s.tolerances)
}

pub fn render_synthesis(report: &SynthesisReport) -> String {
    let mut out = String::new();
    if let Some(g) = &report.gains {
        let _ = writeln!(out, "mu = {} (lower bound {:.6})", g.mu, g.mu_lower_bound);
        for a in &g.agents {
            let _ = writeln!(
                out,
                "{:<10} K1 = {}  K2 = {}{}",
                a.label,
                fmt_mat(&a.k1),
                fmt_mat(&a.k2),
                a.k3.as_ref().map(|k| format!("  K3 = {}", fmt_mat(k))).unwrap_or_default()
            );
        }
    }
    for (label, g) in &report.min_gamma {
        let _ = match g {
            Some(g) => writeln!(out, "{label:<10} minimal gamma = {g:.4}"),
            None => writeln!(out, "{label:<10} minimal gamma: infeasible on the search range"),
        };
    }
    for f in &report.failures {
        let _ = writeln!(out, "FAIL {}: {}", f.label, f.reason);
    }
    for n in &report.notes {
        let _ = writeln!(out, "note: {n}");
    }
    out
}

/// `[a b; c d]` with four decimals.
pub fn fmt_mat(m: &Mat) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| r.iter().map(|v| format!("{:.4}", v + 0.0)).collect::<Vec<_>>().join(" "))
        .collect();
    format!("[{}]", rows.join("; "))
}

// ------------------------------------------------------------- simulate

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DisturbanceChoice {
    /// Use the signal from the scenario.
    #[default]
    Scenario,
    /// Force `d = 0`.
    Zero,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimulateOptions {
    pub disturbance: DisturbanceChoice,
    /// Level for the L2 audit; defaults to the gain set's, then the scenario's.
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub scenario: String,
    pub seed: u64,
    pub controller: ControllerKind,
    pub horizon: f64,
    pub step: f64,
    pub samples: usize,
    pub disturbance_zero: bool,
    pub warnings: Vec<String>,
    pub gain_notes: Vec<String>,
    pub audit: AuditReport,
    pub passed: bool,
}

/// Integrates the closed loop and audits the result.
pub fn run_simulation(
    s: &BuiltScenario,
    gains: &GainSet,
    options: &SimulateOptions,
) -> Result<(Trajectory, SimulationSummary), CliError> {
    let disturbance = match options.disturbance {
        DisturbanceChoice::Scenario => s.disturbance.clone(),
        DisturbanceChoice::Zero => DisturbanceSignal::Zero { dim: s.disturbance.dim() },
    };
    let sys = build_closed_loop(&s.agents, gains, &s.pattern, &s.schedule, &disturbance, &s.initial)?;
    let traj = sys.integrate(s.horizon, s.step, Integrator::Rk4)?;

    let mut audit = AuditReport {
        positivity: Some(audit_positivity(&traj, s.tolerances.positivity_slack)),
        consensus: Some(audit_consensus(&traj, ConsensusOptions::default())),
        ..AuditReport::default()
    };
    if !traj.disturbance_zero {
        audit.informational.push(AuditReport::CONSENSUS.into());
        audit.notes.push("consensus is only required when d = 0".into());
    }
    let lambda_min = s.schedule.lambda_min();
    if let Some(gamma) = options.gamma.or(gains.gamma).or(s.gamma) {
        let l2 = audit_l2_gain(
            &traj,
            gamma,
            KappaSpec::Auto {
                agents: &s.agents,
                gains: Some(gains),
                lambda_min,
            },
        )
        .map_err(|e| CliError::Failure(e.to_string()))?;
        audit.l2 = Some(l2);
    }
    audit.contraction = Some(audit_contraction(&traj, lambda_min));
    if gains.mu < gains.mu_lower_bound {
        audit.informational.push(AuditReport::CONTRACTION.into());
        audit.notes.push(format!(
            "mu = {} is below the generator bound {:.6}; the contraction audit is informational",
            gains.mu, gains.mu_lower_bound
        ));
    }

    let summary = SimulationSummary {
        scenario: s.name.clone(),
        seed: s.seed,
        controller: gains.kind,
        horizon: s.horizon,
        step: s.step,
        samples: traj.len(),
        disturbance_zero: traj.disturbance_zero,
        warnings: sys.warnings().to_vec(),
        gain_notes: gains.notes.clone(),
        passed: audit.passed(),
        audit,
    };
    Ok((traj, summary))
}

/// Column names: `t`, `x{i}_{k}`, `y{i}`, `y0`, `e{i}`, `E2_{i}`, `D2`
/// (outputs with more than one channel get a `_{j}` suffix).
pub fn trace_header(traj: &Trajectory) -> Vec<String> {
    let n = traj.agent_count();
    let l = traj.output_dim;
    let chan = |base: String| -> Vec<String> {
        if l == 1 {
            vec![base]
        } else {
            (1..=l).map(|j| format!("{base}_{j}")).collect()
        }
    };
    let mut h = vec!["t".to_string()];
    for i in 0..n {
        h.extend((1..=traj.layout.agent_dim(i)).map(|k| format!("x{}_{k}", i + 1)));
    }
    for i in 1..=n {
        h.extend(chan(format!("y{i}")));
    }
    h.extend(chan("y0".to_string()));
    for i in 1..=n {
        h.extend(chan(format!("e{i}")));
    }
    h.extend((1..=n).map(|i| format!("E2_{i}")));
    h.push("D2".to_string());
    h
}

pub fn write_trace_csv<W: Write>(traj: &Trajectory, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(traj))?;
    let mut row: Vec<String> = Vec::new();
    for k in 0..traj.len() {
        row.clear();
        row.push(traj.times[k].to_string());
        let state = &traj.states[k];
        for i in 0..traj.agent_count() {
            row.extend(state.rows_range(traj.layout.x(i)).iter().map(f64::to_string));
        }
        row.extend(traj.outputs[k].iter().map(f64::to_string));
        row.extend(traj.reference[k].iter().map(f64::to_string));
        row.extend(traj.errors[k].iter().map(f64::to_string));
        row.extend(traj.error_energy[k].iter().map(f64::to_string));
        row.push(traj.disturbance_energy[k].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the simulation and writes `trace.csv` and `audit.json` into `out_dir`.
pub fn cmd_simulate(
    s: &BuiltScenario,
    gains: &GainSet,
    options: &SimulateOptions,
    out_dir: &Path,
) -> Result<SimulationSummary, CliError> {
    if gains.agents.len() != s.agents.len() {
        return Err(CliError::Parse(format!(
            "gain file has {} agents, scenario has {}",
            gains.agents.len(),
            s.agents.len()
        )));
    }
    let (traj, summary) = run_simulation(s, gains, options)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let trace = out_dir.join("trace.csv");
    let file = fs::File::create(&trace).map_err(io_err(&trace))?;
    write_trace_csv(&traj, std::io::BufWriter::new(file)).map_err(|e| CliError::Failure(format!("{}: {e}", trace.display())))?;
    write_json(&out_dir.join("audit.json"), &summary)?;
    Ok(summary)
}

pub fn render_audit(summary: &SimulationSummary) -> String {
    let mut out = String::new();
    let a = &summary.audit;
    for (name, pass) in a.outcomes() {
        let tag = if a.informational.iter().any(|n| n == name) {
            "INFO"
        } else if pass {
            "PASS"
        } else {
            "FAIL"
        };
        let detail = match name {
            AuditReport::POSITIVITY => a.positivity.as_ref().map(|p| format!("min entry {:.3e}", p.positivity_min)),
            AuditReport::CONSENSUS => a.consensus.as_ref().map(|c| {
                let sup = c.tail_sup.iter().copied().fold(0.0, f64::max);
                match (&c.decay_fit, &c.fit_note) {
                    (Some(f), _) => format!("tail sup {sup:.3e}, log-slope {:.4}", f.rate),
                    (None, Some(n)) => format!("tail sup {sup:.3e}; {n}"),
                    (None, None) => format!("tail sup {sup:.3e}"),
                }
            }),
            AuditReport::L2 => a.l2.as_ref().map(|l| {
                let min = l.slack.iter().copied().fold(f64::INFINITY, f64::min);
                format!("gamma {}, min slack {min:.3e}", l.gamma)
            }),
            AuditReport::CONTRACTION => a.contraction.as_ref().map(|c| format!("margin {:.3e}", c.margin)),
            _ => None,
        };
        let _ = writeln!(out, "{name:<12} {tag}  {}", detail.unwrap_or_default());
    }
    for w in &summary.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    for n in &a.notes {
        let _ = writeln!(out, "note: {n}");
    }
    out
}

// ------------------------------------------------------ reproduce-paper

#[derive(Debug, Clone, Copy, Default)]
pub struct ReproduceOptions {
    pub gamma_bisect: bool,
    pub state_feedback: bool,
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReproduceSummary {
    pub check_passed: bool,
    pub synthesis_notes: Vec<String>,
    pub max_delta: f64,
    pub deltas_within_precision: bool,
    pub nominal: SimulationSummary,
    pub disturbed: SimulationSummary,
    pub min_gamma: Vec<(String, Option<f64>)>,
    pub passed: bool,
}

fn delta(a: &Mat, b: &Mat) -> f64 {
    if a.shape() != b.shape() {
        f64::INFINITY
    } else {
        (a - b).amax()
    }
}

/// Check, synthesize in reproduce mode, simulate with and without the
/// disturbance, and write a markdown comparison against the published values.
pub fn cmd_reproduce_paper(out_dir: &Path, options: &ReproduceOptions) -> Result<ReproduceSummary, CliError> {
    let mut s = load_scenario(None, &options.overrides)?;
    if options.state_feedback {
        s.kind = ControllerKind::StateFeedback;
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let check = cmd_check(&s);
    if !check.passed() {
        return Err(CliError::Failure(format!("built-in scenario failed its checks:\n{}", check.render())));
    }
    let report = cmd_synthesize(
        &s,
        &SynthesizeOptions {
            mode: RunMode::Reproduce,
            ..SynthesizeOptions::default()
        },
    );
    let gains = match &report.gains {
        Some(g) if report.succeeded() => g.clone(),
        _ => return Err(CliError::Failure(format!("synthesis failed:\n{}", render_synthesis(&report)))),
    };
    write_json(&out_dir.join("gains.json"), &gains)?;

    let min_gamma = if options.gamma_bisect {
        // unpinned: the smallest gamma over all admissible diagonal certificates
        let bisect = cmd_synthesize(
            &s,
            &SynthesizeOptions {
                mode: if options.state_feedback { RunMode::State } else { RunMode::Output },
                gamma: s.gamma,
                bisect: true,
                use_pins: false,
            },
        );
        bisect.min_gamma
    } else {
        Vec::new()
    };

    let nominal = cmd_simulate(
        &s,
        &gains,
        &SimulateOptions {
            disturbance: DisturbanceChoice::Zero,
            gamma: None,
        },
        &out_dir.join("nominal"),
    )?;
    let disturbed = cmd_simulate(&s, &gains, &SimulateOptions::default(), &out_dir.join("disturbed"))?;

    let published = published::agents();
    let mut md = String::new();
    let _ = writeln!(md, "# Reproduction of the eight-agent example\n");
    let _ = writeln!(
        md,
        "Controller: {}; gamma = {}; mu = {} (bound {:.4}); horizon {} s, step {} s, seed {}.\n",
        match gains.kind {
            ControllerKind::StateFeedback => "state feedback",
            ControllerKind::OutputFeedback => "output feedback",
        },
        gains.gamma.map_or("-".to_string(), |g| g.to_string()),
        gains.mu,
        gains.mu_lower_bound,
        s.horizon,
        s.step,
        s.seed
    );
    let _ = writeln!(md, "## Regulator solutions and gains\n");
    let _ = writeln!(md, "| agent | quantity | computed | published | max abs delta |");
    let _ = writeln!(md, "|---|---|---|---|---|");
    let mut max_delta = 0.0_f64;
    for (g, p) in gains.agents.iter().zip(&published) {
        let mut rows = vec![
            ("X", &g.regulator.x, &p.x),
            ("U", &g.regulator.u, &p.u),
            ("K1", &g.k1, &p.k1),
            ("K2", &g.k2, &p.k2),
        ];
        if let Some(k3) = &g.k3 {
            rows.push(("K3", k3, &p.k3));
        }
        for (name, c, r) in rows {
            let d = delta(c, r);
            max_delta = max_delta.max(d);
            let _ = writeln!(md, "| {} | {name} | {} | {} | {d:.2e} |", g.label, fmt_mat(c), fmt_mat(r));
        }
    }
    let within = max_delta <= published::PRECISION;
    let _ = writeln!(
        md,
        "\nLargest delta: {max_delta:.2e} ({} the published rounding of {:.0e}).\n",
        if within { "within" } else { "OUTSIDE" },
        published::PRECISION
    );
    if !gains.notes.is_empty() {
        let _ = writeln!(md, "## Synthesis notes\n");
        for n in &gains.notes {
            let _ = writeln!(md, "- {n}");
        }
        let _ = writeln!(md);
    }
    if !min_gamma.is_empty() {
        let _ = writeln!(md, "## Minimal gamma (unpinned search)\n");
        let _ = writeln!(md, "| agent | gamma |");
        let _ = writeln!(md, "|---|---|");
        for (label, g) in &min_gamma {
            let _ = writeln!(md, "| {label} | {} |", g.map_or("infeasible".to_string(), |g| format!("{g:.4}")));
        }
        let _ = writeln!(md);
    }
    for (title, sim) in [("Simulation with d = 0", &nominal), ("Simulation with the scenario disturbance", &disturbed)] {
        let _ = writeln!(md, "## {title}\n\n```text\n{}```\n", render_audit(sim));
    }

    let summary = ReproduceSummary {
        check_passed: true,
        synthesis_notes: gains.notes.clone(),
        max_delta,
        deltas_within_precision: within,
        passed: within && nominal.passed && disturbed.passed,
        nominal,
        disturbed,
        min_gamma,
    };
    let _ = writeln!(md, "Overall: {}.", if summary.passed { "PASS" } else { "FAIL" });
    let path = out_dir.join("summary.md");
    fs::write(&path, md).map_err(io_err(&path))?;
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
