//! Matrix-inequality feasibility checks, a derivative-free search for
//! diagonal certificates, controller gain formulas and the generator
//! coupling gain.
//!
//! "Positive" matrix inequalities (`M > 0`) are read entrywise: every entry
//! at least `-zero_tol` and at least one entry above `zero_tol`. Definite
//! inequalities (`S ≺ 0`) are checked through the largest eigenvalue of the
//! symmetric part, which must sit below `-definiteness_margin`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{is_metzler, is_nonnegative, is_positive, AgentModel, PatternModel, ToleranceConfig};
use crate::numerics::{diag, lambda_max, spectral_norm, sym_part, Mat};
use crate::regulator::{solve_regulator, RegulatorSolution};
use crate::topology::SwitchingSchedule;

/// Default evaluation budget of [`search_certificate`].
pub const DEFAULT_SEARCH_BUDGET: usize = 200_000;

const GRID_LOG_MIN: f64 = -2.0;
const GRID_LOG_MAX: f64 = 2.0;
const GRID_POINTS: usize = 41;
const DELTA_LOG_MIN: f64 = -3.0;
const DELTA_LOG_MAX: f64 = 1.0;
const DELTA_POINTS: usize = 161;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// `u = K1 x + K2 w`.
    StateFeedback,
    /// `u = K1 xi + K2 w` with a positive observer gain `K3`.
    OutputFeedback,
}

/// Which version of the input-side inequalities a certificate satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionSet {
    /// Includes the disturbance and output terms weighted by `gamma`.
    Full,
    /// Nominal inequalities only; enough for consensus with `d = 0`.
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginKind {
    Entrywise,
    Definiteness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub name: String,
    pub kind: MarginKind,
    /// Entrywise: the smallest entry. Definiteness: `-lambda_max`.
    pub value: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl fmt::Display for Margin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "pass" } else { "FAIL" };
        write!(f, "{} [{verdict}] margin {:.6e}", self.name, self.value)?;
        if let Some(d) = &self.detail {
            write!(f, " ({d})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Margins(pub Vec<Margin>);

impl Margins {
    pub fn all_pass(&self) -> bool {
        self.0.iter().all(|m| m.pass)
    }

    pub fn failing(&self) -> impl Iterator<Item = &Margin> {
        self.0.iter().filter(|m| !m.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Margin> {
        self.0.iter().find(|m| m.name == name)
    }
}

fn entrywise_margin(name: &str, m: &Mat, tol: &ToleranceConfig) -> Margin {
    let value = m.min();
    let pass = is_positive(m, tol.zero_tol);
    let detail = (!pass && is_nonnegative(m, tol.zero_tol))
        .then(|| "no strictly positive entry".to_string());
    Margin {
        name: name.to_string(),
        kind: MarginKind::Entrywise,
        value,
        pass,
        detail,
    }
}

fn definiteness_margin(name: &str, s: &Mat, tol: &ToleranceConfig) -> Margin {
    let s = sym_part(s);
    let value = -lambda_max(&s).unwrap_or(f64::INFINITY);
    let pass = value > tol.definiteness_margin;
    let detail = (0..s.nrows())
        .map(|i| (i, s[(i, i)]))
        .filter(|&(_, v)| v > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, v)| format!("diagonal entry ({0},{0}) = {v:.6} > 0", i + 1));
    Margin {
        name: name.to_string(),
        kind: MarginKind::Definiteness,
        value,
        pass,
        detail,
    }
}

/// `A Q - B B^T + delta Q`.
pub fn input_entrywise_form(agent: &AgentModel, q: &Mat, delta: f64) -> Mat {
    &agent.a * q - &agent.b * agent.b.transpose() + q * delta
}

/// `Q A^T + A Q - 2 B B^T`.
pub fn input_nominal_form(agent: &AgentModel, q: &Mat) -> Mat {
    let aq = &agent.a * q;
    aq.transpose() + aq - &agent.b * agent.b.transpose() * 2.0
}

/// `Q A^T + A Q - 2 B B^T + gamma^-2 D D^T + Q C^T C Q`.
pub fn input_gamma_form(agent: &AgentModel, q: &Mat, gamma: f64) -> Mat {
    let cq = &agent.c * q;
    input_nominal_form(agent, q) + &agent.d * agent.d.transpose() / (gamma * gamma) + cq.transpose() * cq
}

/// `P A - C^T C + delta P`.
pub fn observer_entrywise_form(agent: &AgentModel, p: &Mat, delta: f64) -> Mat {
    p * &agent.a - agent.c.transpose() * &agent.c + p * delta
}

/// `A^T P + P A - 2 C^T C`.
pub fn observer_nominal_form(agent: &AgentModel, p: &Mat) -> Mat {
    let pa = p * &agent.a;
    pa.transpose() + pa - agent.c.transpose() * &agent.c * 2.0
}

pub const M_INPUT_POSITIVE: &str = "A Q - B B^T + delta Q > 0";
pub const M_INPUT_GAMMA: &str = "Q A^T + A Q - 2 B B^T + D D^T / gamma^2 + Q C^T C Q < 0";
pub const M_INPUT_NOMINAL: &str = "Q A^T + A Q - 2 B B^T < 0";
pub const M_OBSERVER_POSITIVE: &str = "P A - C^T C + delta P > 0";
pub const M_OBSERVER_NOMINAL: &str = "A^T P + P A - 2 C^T C < 0";

pub fn check_state_conditions(
    agent: &AgentModel,
    q: &[f64],
    delta: f64,
    gamma: f64,
    tol: &ToleranceConfig,
) -> Margins {
    let q = diag(q);
    Margins(vec![
        entrywise_margin(M_INPUT_POSITIVE, &input_entrywise_form(agent, &q, delta), tol),
        definiteness_margin(M_INPUT_GAMMA, &input_gamma_form(agent, &q, gamma), tol),
    ])
}

pub fn check_relaxed_conditions(agent: &AgentModel, q: &[f64], delta: f64, tol: &ToleranceConfig) -> Margins {
    let q = diag(q);
    Margins(vec![
        entrywise_margin(M_INPUT_POSITIVE, &input_entrywise_form(agent, &q, delta), tol),
        definiteness_margin(M_INPUT_NOMINAL, &input_nominal_form(agent, &q), tol),
    ])
}

fn observer_margins(agent: &AgentModel, p: &[f64], delta: f64, tol: &ToleranceConfig) -> Vec<Margin> {
    let p = diag(p);
    vec![
        entrywise_margin(M_OBSERVER_POSITIVE, &observer_entrywise_form(agent, &p, delta), tol),
        definiteness_margin(M_OBSERVER_NOMINAL, &observer_nominal_form(agent, &p), tol),
    ]
}

pub fn check_output_conditions(
    agent: &AgentModel,
    p: &[f64],
    q: &[f64],
    delta: f64,
    gamma: f64,
    tol: &ToleranceConfig,
) -> Margins {
    let mut out = observer_margins(agent, p, delta, tol);
    out.extend(check_state_conditions(agent, q, delta, gamma, tol).0);
    Margins(out)
}

/// Observer pair plus the relaxed input pair.
pub fn check_output_relaxed_conditions(
    agent: &AgentModel,
    p: &[f64],
    q: &[f64],
    delta: f64,
    tol: &ToleranceConfig,
) -> Margins {
    let mut out = observer_margins(agent, p, delta, tol);
    out.extend(check_relaxed_conditions(agent, q, delta, tol).0);
    Margins(out)
}

/// Concrete diagonal `Q`, `P`, scalar `delta` (and `gamma` for the full
/// condition set) together with the margins measured at those values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCertificate {
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub conditions: ConditionSet,
    pub margins: Margins,
}

impl FeasibilityCertificate {
    /// Recomputes every margin from scratch.
    pub fn verify(&self, agent: &AgentModel, tol: &ToleranceConfig) -> Margins {
        evaluate(agent, &self.q, self.p.as_deref(), self.delta, self.gamma, self.conditions, tol)
    }
}

fn evaluate(
    agent: &AgentModel,
    q: &[f64],
    p: Option<&[f64]>,
    delta: f64,
    gamma: Option<f64>,
    conditions: ConditionSet,
    tol: &ToleranceConfig,
) -> Margins {
    match (p, conditions) {
        (Some(p), ConditionSet::Full) => {
            check_output_conditions(agent, p, q, delta, gamma.unwrap_or(f64::NAN), tol)
        }
        (Some(p), ConditionSet::Relaxed) => check_output_relaxed_conditions(agent, p, q, delta, tol),
        (None, ConditionSet::Full) => check_state_conditions(agent, q, delta, gamma.unwrap_or(f64::NAN), tol),
        (None, ConditionSet::Relaxed) => check_relaxed_conditions(agent, q, delta, tol),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("{label}: no certificate found after {evaluations} evaluations; best margins: {best}")]
    Infeasible {
        label: String,
        evaluations: usize,
        best: MarginsSummary,
    },
    #[error("{label}: gain invariant violated: {predicate}")]
    InvariantViolation { label: String, predicate: String },
    #[error("graph {graph} is disconnected (lambda2 = {lambda2:e})")]
    DisconnectedGraph { graph: usize, lambda2: f64 },
    #[error("{label}: {reason}")]
    BadRequest { label: String, reason: String },
}

/// Margins wrapped for display inside error messages.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginsSummary(pub Margins);

impl fmt::Display for MarginsSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0 .0.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Optional fixed diagonals for `Q` / `P`; unset entries are searched.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CertificatePins {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub budget: usize,
    pub pins: CertificatePins,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            budget: DEFAULT_SEARCH_BUDGET,
            pins: CertificatePins::default(),
        }
    }
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}

struct Searcher<'a> {
    agent: &'a AgentModel,
    gamma: Option<f64>,
    conditions: ConditionSet,
    output: bool,
    tol: &'a ToleranceConfig,
    n: usize,
    q_pinned: Option<Vec<f64>>,
    p_pinned: Option<Vec<f64>>,
    deltas: Vec<f64>,
    evaluations: usize,
    budget: usize,
    best: Option<(f64, Margins)>,
}

struct Evaluated {
    score: f64,
    cert: Option<FeasibilityCertificate>,
}

impl Searcher<'_> {
    fn free_dims(&self) -> usize {
        let q = if self.q_pinned.is_some() { 0 } else { self.n };
        let p = if self.output && self.p_pinned.is_none() { self.n } else { 0 };
        q + p
    }

    fn unpack(&self, theta: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut it = theta.iter().map(|t| 10f64.powf(*t));
        let q = match &self.q_pinned {
            Some(q) => q.clone(),
            None => it.by_ref().take(self.n).collect(),
        };
        let p = if self.output {
            Some(match &self.p_pinned {
                Some(p) => p.clone(),
                None => it.take(self.n).collect(),
            })
        } else {
            None
        };
        (q, p)
    }

    /// Smallest delta on the grid satisfying the entrywise inequalities;
    /// only diagonal entries depend on delta.
    fn pick_delta(&self, q: &[f64], p: Option<&[f64]>) -> f64 {
        let qm = diag(q);
        let base_q = input_entrywise_form(self.agent, &qm, 0.0);
        let base_p = p.map(|p| observer_entrywise_form(self.agent, &diag(p), 0.0));
        let ok = |delta: f64| {
            let zq = &base_q + &qm * delta;
            let pos_q = is_positive(&zq, self.tol.zero_tol);
            let pos_p = match (&base_p, p) {
                (Some(bp), Some(p)) => is_positive(&(bp + diag(p) * delta), self.tol.zero_tol),
                _ => true,
            };
            pos_q && pos_p
        };
        self.deltas
            .iter()
            .copied()
            .find(|&d| ok(d))
            .unwrap_or(*self.deltas.last().expect("nonempty grid"))
    }

    fn eval(&mut self, theta: &[f64]) -> Evaluated {
        self.evaluations += 1;
        let (q, p) = self.unpack(theta);
        let delta = self.pick_delta(&q, p.as_deref());
        let margins = evaluate(self.agent, &q, p.as_deref(), delta, self.gamma, self.conditions, self.tol);
        let score = margins
            .0
            .iter()
            .map(|m| match m.kind {
                MarginKind::Entrywise if !m.pass && m.value >= -self.tol.zero_tol => -self.tol.zero_tol,
                MarginKind::Entrywise => m.value + self.tol.zero_tol,
                MarginKind::Definiteness => m.value - self.tol.definiteness_margin,
            })
            .fold(f64::INFINITY, f64::min);
        if self.best.as_ref().is_none_or(|(s, _)| score > *s) {
            self.best = Some((score, margins.clone()));
        }
        let cert = margins.all_pass().then(|| FeasibilityCertificate {
            q,
            p,
            delta,
            gamma: match self.conditions {
                ConditionSet::Full => self.gamma,
                ConditionSet::Relaxed => None,
            },
            conditions: self.conditions,
            margins,
        });
        Evaluated { score, cert }
    }

    fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }

    fn run(&mut self) -> Option<FeasibilityCertificate> {
        let dims = self.free_dims();
        let mut theta = vec![0.0; dims];
        let first = self.eval(&theta);
        if first.cert.is_some() {
            return first.cert;
        }
        let mut best = first.score;
        let grid = log_grid(GRID_LOG_MIN, GRID_LOG_MAX, GRID_POINTS);

        // coarse coordinate sweeps over the log grid
        loop {
            let mut improved = false;
            for j in 0..dims {
                for &g in &grid {
                    if self.exhausted() {
                        return None;
                    }
                    let mut trial = theta.clone();
                    trial[j] = g;
                    let e = self.eval(&trial);
                    if e.cert.is_some() {
                        return e.cert;
                    }
                    if e.score > best {
                        best = e.score;
                        theta = trial;
                        improved = true;
                    }
                }
            }
            if !improved || dims == 0 {
                break;
            }
        }

        // pattern refinement with shrinking log steps
        let mut step = (GRID_LOG_MAX - GRID_LOG_MIN) / (GRID_POINTS - 1) as f64;
        while step > 1e-6 && dims > 0 {
            let mut improved = false;
            for j in 0..dims {
                for sign in [1.0, -1.0] {
                    if self.exhausted() {
                        return None;
                    }
                    let mut trial = theta.clone();
                    trial[j] = (trial[j] + sign * step).clamp(GRID_LOG_MIN, GRID_LOG_MAX);
                    let e = self.eval(&trial);
                    if e.cert.is_some() {
                        return e.cert;
                    }
                    if e.score > best {
                        best = e.score;
                        theta = trial;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        None
    }
}

/// Searches diagonal `Q` (and `P` for output feedback) on a log grid over
/// `[1e-2, 1e2]` refined by coordinate descent on the worst margin, with
/// `delta` drawn from a log grid over `[1e-3, 10]`. The returned
/// certificate has been re-verified from scratch.
pub fn search_certificate(
    agent: &AgentModel,
    gamma: Option<f64>,
    kind: ControllerKind,
    conditions: ConditionSet,
    options: &SearchOptions,
    tol: &ToleranceConfig,
) -> Result<FeasibilityCertificate, SynthesisError> {
    let n = agent.state_dim();
    let bad = |reason: String| SynthesisError::BadRequest {
        label: agent.label.clone(),
        reason,
    };
    if conditions == ConditionSet::Full && !gamma.is_some_and(|g| g > 0.0 && g.is_finite()) {
        return Err(bad("the full condition set needs a positive gamma".into()));
    }
    for (name, pin) in [("Q", &options.pins.q), ("P", &options.pins.p)] {
        if let Some(v) = pin {
            if v.len() != n || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(bad(format!("pinned {name} must have {n} positive entries")));
            }
        }
    }
    let mut searcher = Searcher {
        agent,
        gamma,
        conditions,
        output: kind == ControllerKind::OutputFeedback,
        tol,
        n,
        q_pinned: options.pins.q.clone(),
        p_pinned: options.pins.p.clone(),
        deltas: log_grid(DELTA_LOG_MIN, DELTA_LOG_MAX, DELTA_POINTS)
            .into_iter()
            .map(|e| 10f64.powf(e))
            .collect(),
        evaluations: 0,
        budget: options.budget.max(1),
        best: None,
    };
    match searcher.run() {
        Some(cert) => {
            let recheck = cert.verify(agent, tol);
            if recheck.all_pass() {
                Ok(cert)
            } else {
                Err(SynthesisError::InvariantViolation {
                    label: agent.label.clone(),
                    predicate: format!("certificate failed re-verification: {}", MarginsSummary(recheck)),
                })
            }
        }
        None => Err(SynthesisError::Infeasible {
            label: agent.label.clone(),
            evaluations: searcher.evaluations,
            best: MarginsSummary(searcher.best.map(|b| b.1).unwrap_or_default()),
        }),
    }
}

/// Bisects `gamma` over `[lo, hi]` down to `resolution`, using the full
/// condition set. Returns the smallest feasible gamma found and its
/// certificate.
pub fn bisect_gamma(
    agent: &AgentModel,
    kind: ControllerKind,
    lo: f64,
    hi: f64,
    resolution: f64,
    options: &SearchOptions,
    tol: &ToleranceConfig,
) -> Result<(f64, FeasibilityCertificate), SynthesisError> {
    let search = |g: f64| search_certificate(agent, Some(g), kind, ConditionSet::Full, options, tol);
    let mut best = search(hi)?;
    let (mut lo, mut hi) = (lo, hi);
    if let Ok(c) = search(lo) {
        return Ok((lo, c));
    }
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        match search(mid) {
            Ok(c) => {
                hi = mid;
                best = c;
            }
            Err(SynthesisError::Infeasible { .. }) => lo = mid,
            Err(e) => return Err(e),
        }
    }
    Ok((hi, best))
}

/// Gains of one agent together with the data that certifies them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentGains {
    pub label: String,
    #[serde(with = "crate::serde_mat")]
    pub k1: Mat,
    #[serde(with = "crate::serde_mat")]
    pub k2: Mat,
    #[serde(default, with = "crate::serde_mat::option", skip_serializing_if = "Option::is_none")]
    pub k3: Option<Mat>,
    pub regulator: RegulatorSolution,
    pub certificate: FeasibilityCertificate,
}

impl AgentGains {
    pub fn q_matrix(&self) -> Mat {
        diag(&self.certificate.q)
    }

    pub fn p_matrix(&self) -> Option<Mat> {
        self.certificate.p.as_deref().map(diag)
    }
}

/// `K1 = -B^T Q^-1`, `K2 = U - K1 X`, and for output feedback
/// `K3 = P^-1 C^T`; every sign and Metzler invariant of the resulting
/// closed loop is checked before returning.
pub fn compute_gains(
    agent: &AgentModel,
    cert: &FeasibilityCertificate,
    regulator: &RegulatorSolution,
    kind: ControllerKind,
    tol: &ToleranceConfig,
) -> Result<AgentGains, SynthesisError> {
    let fail = |predicate: &str| SynthesisError::InvariantViolation {
        label: agent.label.clone(),
        predicate: predicate.to_string(),
    };
    let z = tol.zero_tol;
    if !cert.margins.all_pass() || !cert.verify(agent, tol).all_pass() {
        return Err(fail("certificate margins do not all pass"));
    }
    if !regulator.positive_certified {
        return Err(fail("regulator solution is not certified nonnegative"));
    }
    let q_inv = diag(&cert.q.iter().map(|v| 1.0 / v).collect::<Vec<_>>());
    let k1 = -(agent.b.transpose() * q_inv);
    let k2 = &regulator.u - &k1 * &regulator.x;

    if !is_nonnegative(&-&k1, z) {
        return Err(fail("-K1 >= 0"));
    }
    if !is_nonnegative(&k2, z) {
        return Err(fail("K2 >= 0"));
    }
    if !is_metzler(&(&agent.a + &agent.b * &k1), z) {
        return Err(fail("A + B K1 Metzler"));
    }

    let k3 = match kind {
        ControllerKind::StateFeedback => None,
        ControllerKind::OutputFeedback => {
            let p = cert
                .p
                .as_deref()
                .ok_or_else(|| fail("output feedback requires a P certificate"))?;
            let p_inv = diag(&p.iter().map(|v| 1.0 / v).collect::<Vec<_>>());
            let k3 = p_inv * agent.c.transpose();
            let observer = &agent.a - &k3 * &agent.c;
            if !is_metzler(&observer, z) {
                return Err(fail("A - K3 C Metzler"));
            }
            let lyap = diag(p) * &observer;
            let top = lambda_max(&sym_part(&lyap)).unwrap_or(f64::INFINITY);
            if !(top < -tol.definiteness_margin) {
                return Err(fail("sym(P (A - K3 C)) negative definite"));
            }
            Some(k3)
        }
    };

    Ok(AgentGains {
        label: agent.label.clone(),
        k1,
        k2,
        k3,
        regulator: regulator.clone(),
        certificate: cert.clone(),
    })
}

/// `||A0|| / lambda_min + 1`, the smallest coupling gain covered by the
/// generator convergence bound.
pub fn mu_lower_bound(pattern: &PatternModel, schedule: &SwitchingSchedule, tol: &ToleranceConfig) -> Result<f64, SynthesisError> {
    let mut lambda = f64::INFINITY;
    for (k, g) in schedule.graphs().iter().enumerate() {
        let l2 = g.lambda2();
        if !(l2 > tol.zero_tol) {
            return Err(SynthesisError::DisconnectedGraph { graph: k + 1, lambda2: l2 });
        }
        lambda = lambda.min(l2);
    }
    Ok(spectral_norm(&pattern.a0) / lambda + 1.0)
}

pub fn select_mu(
    pattern: &PatternModel,
    schedule: &SwitchingSchedule,
    margin: f64,
    tol: &ToleranceConfig,
) -> Result<f64, SynthesisError> {
    Ok(mu_lower_bound(pattern, schedule, tol)? + margin.max(0.0))
}

/// Whether a user-chosen `mu` satisfies the generator bound.
pub fn validate_mu(mu: f64, pattern: &PatternModel, schedule: &SwitchingSchedule, tol: &ToleranceConfig) -> Result<bool, SynthesisError> {
    Ok(mu >= mu_lower_bound(pattern, schedule, tol)? - tol.zero_tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuChoice {
    Auto { margin: f64 },
    Fixed(f64),
}

/// Everything needed to synthesise a complete gain set.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    pub kind: ControllerKind,
    pub conditions: ConditionSet,
    pub gamma: Option<f64>,
    /// Retry with [`ConditionSet::Relaxed`] when the full set is infeasible.
    pub relaxed_fallback: bool,
    /// Per-agent pins; shorter than the agent list means "no pins".
    pub pins: Vec<CertificatePins>,
    pub budget: usize,
    pub mu: MuChoice,
    /// `(lo, resolution)`; bisection runs over `[lo, gamma]`.
    pub bisect: Option<(f64, f64)>,
}

impl Default for SynthesisRequest {
    fn default() -> Self {
        Self {
            kind: ControllerKind::OutputFeedback,
            conditions: ConditionSet::Full,
            gamma: Some(4.0),
            relaxed_fallback: false,
            pins: Vec::new(),
            budget: DEFAULT_SEARCH_BUDGET,
            mu: MuChoice::Auto { margin: 0.0 },
            bisect: None,
        }
    }
}

/// A complete set of per-agent gains plus the shared coupling gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub kind: ControllerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub mu: f64,
    pub mu_lower_bound: f64,
    pub agents: Vec<AgentGains>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentFailure {
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisReport {
    pub gains: Option<GainSet>,
    pub failures: Vec<AgentFailure>,
    /// Smallest feasible gamma per agent when bisection was requested.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub min_gamma: Vec<(String, Option<f64>)>,
    pub notes: Vec<String>,
}

impl SynthesisReport {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty() && self.gains.is_some()
    }
}

/// Per-agent regulator solve, certificate search and gain computation.
/// Failures are collected per agent rather than aborting the whole run.
pub fn synthesize_gain_set(
    agents: &[AgentModel],
    pattern: &PatternModel,
    schedule: &SwitchingSchedule,
    request: &SynthesisRequest,
    tol: &ToleranceConfig,
) -> SynthesisReport {
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    let mut gains = Vec::new();
    let mut min_gamma = Vec::new();

    let bound = mu_lower_bound(pattern, schedule, tol);
    let (mu, bound) = match (request.mu, bound) {
        (_, Err(e)) => {
            failures.push(AgentFailure {
                label: "topology".into(),
                reason: e.to_string(),
            });
            (f64::NAN, f64::NAN)
        }
        (MuChoice::Auto { margin }, Ok(b)) => (b + margin.max(0.0), b),
        (MuChoice::Fixed(mu), Ok(b)) => {
            if mu < b - tol.zero_tol {
                notes.push(format!(
                    "mu = {mu} is below the generator bound {b:.6}; exponential agreement of the generators is not guaranteed"
                ));
            }
            (mu, b)
        }
    };

    for (k, agent) in agents.iter().enumerate() {
        let pins = request.pins.get(k).cloned().unwrap_or_default();
        let options = SearchOptions {
            budget: request.budget,
            pins,
        };
        let regulator = match solve_regulator(agent, pattern, tol) {
            Ok(r) => r,
            Err(e) => {
                failures.push(AgentFailure {
                    label: agent.label.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };

        if let (Some((lo, res)), Some(hi)) = (request.bisect, request.gamma) {
            let g = bisect_gamma(agent, request.kind, lo, hi, res, &options, tol)
                .ok()
                .map(|(g, _)| g);
            min_gamma.push((agent.label.clone(), g));
        }

        let mut cert = search_certificate(agent, request.gamma, request.kind, request.conditions, &options, tol);
        if let (Err(SynthesisError::Infeasible { best, .. }), true) = (&cert, request.relaxed_fallback) {
            if request.conditions == ConditionSet::Full {
                let diagnostic = best
                    .0
                     .0
                    .iter()
                    .filter(|m| !m.pass)
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; ");
                let relaxed = search_certificate(agent, None, request.kind, ConditionSet::Relaxed, &options, tol);
                if relaxed.is_ok() {
                    notes.push(format!(
                        "{}: gamma-weighted inequalities infeasible ({diagnostic}); gains certified by the relaxed (disturbance-free) conditions",
                        agent.label
                    ));
                }
                cert = relaxed;
            }
        }
        let cert = match cert {
            Ok(c) => c,
            Err(e) => {
                failures.push(AgentFailure {
                    label: agent.label.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match compute_gains(agent, &cert, &regulator, request.kind, tol) {
            Ok(g) => gains.push(g),
            Err(e) => failures.push(AgentFailure {
                label: agent.label.clone(),
                reason: e.to_string(),
            }),
        }
    }

    let gains = failures.is_empty().then(|| GainSet {
        kind: request.kind,
        gamma: request.gamma,
        mu,
        mu_lower_bound: bound,
        agents: gains,
        notes: notes.clone(),
    });
    SynthesisReport {
        gains,
        failures,
        min_gamma,
        notes,
    }
}
