//! Post-hoc audits of a simulated trajectory: positivity, consensus,
//! finite-horizon L2 gain and the generator contraction bound.

use serde::Serialize;
use thiserror::Error;

use crate::model::AgentModel;
use crate::numerics::{lambda_max, spectral_norm, Mat, Vector};
use crate::sim::{LoopMode, Trajectory};
use crate::synthesis::{input_gamma_form, input_nominal_form, ControllerKind, GainSet};

/// `||e||` range used for the log-linear decay fit.
pub const FIT_WINDOW: (f64, f64) = (1e-8, 1e-2);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("automatic kappa needs synthesized gains with certificates: {0}")]
    MissingCertificate(String),
    #[error("error norm never drops below {threshold:e} (smallest value {smallest:e}); decay fit skipped")]
    InsufficientDecay { threshold: f64, smallest: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityAudit {
    pub pass: bool,
    pub slack: f64,
    /// Most negative entry over agent and generator blocks and all samples.
    pub positivity_min: f64,
    pub worst_time: f64,
    /// Smallest observer entry, informational only (observers need not be positive).
    pub observer_min: Option<f64>,
}

/// Every agent and generator entry at every sample must be `>= -slack`.
pub fn audit_positivity(traj: &Trajectory, slack: f64) -> PositivityAudit {
    let physical: Vec<usize> = traj.layout.physical().collect();
    let observers: Vec<usize> = (0..traj.layout.agent_count())
        .filter_map(|i| traj.layout.xi(i))
        .flatten()
        .collect();
    let mut min = f64::INFINITY;
    let mut worst_time = 0.0;
    let mut observer_min = f64::INFINITY;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        for &k in &physical {
            if s[k] < min {
                min = s[k];
                worst_time = *t;
            }
        }
        for &k in &observers {
            observer_min = observer_min.min(s[k]);
        }
    }
    if !min.is_finite() {
        min = 0.0;
    }
    PositivityAudit {
        pass: min >= -slack,
        slack,
        positivity_min: min,
        worst_time,
        observer_min: (!observers.is_empty()).then_some(observer_min),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    /// Least-squares slope of `ln ||e(t)||`, negative for decay.
    pub rate: f64,
    pub window: (f64, f64),
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
}

/// Fits `ln v(t) ≈ a + rate t` over samples with `v` inside `window`.
pub fn fit_decay(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit, MetricsError> {
    let smallest = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smallest < window.1) {
        return Err(MetricsError::InsufficientDecay { threshold: window.1, smallest });
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v >= window.0 && **v <= window.1)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 || pts.first().map(|p| p.0) == pts.last().map(|p| p.0) {
        return Err(MetricsError::InsufficientDecay { threshold: window.1, smallest });
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(DecayFit {
        rate: sxy / sxx,
        window,
        t_start: pts[0].0,
        t_end: pts[pts.len() - 1].0,
        samples: pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsensusOptions {
    /// Trailing fraction of the horizon over which the sup is taken.
    pub tail_fraction: f64,
    /// Pass iff every agent's tail sup is at most this.
    pub tolerance: f64,
    pub fit_window: (f64, f64),
}

impl Default for ConsensusOptions {
    fn default() -> Self {
        Self {
            tail_fraction: 0.2,
            tolerance: 1e-3,
            fit_window: FIT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusAudit {
    pub pass: bool,
    pub options: ConsensusOptions,
    pub tail_start: f64,
    pub tail_sup: Vec<f64>,
    pub final_error: Vec<f64>,
    pub decay_fit: Option<DecayFit>,
    /// Why the fit is missing, if it is.
    pub fit_note: Option<String>,
}

/// Tail sup of `||e_i||` per agent plus a decay-rate fit of the stacked
/// error, the latter only for disturbance-free runs.
pub fn audit_consensus(traj: &Trajectory, options: ConsensusOptions) -> ConsensusAudit {
    let n = traj.agent_count();
    let horizon = traj.times.last().copied().unwrap_or(0.0);
    let tail_start = horizon * (1.0 - options.tail_fraction.clamp(0.0, 1.0));
    let mut tail_sup = vec![0.0_f64; n];
    let mut stacked = Vec::with_capacity(traj.len());
    for (k, t) in traj.times.iter().enumerate() {
        let mut sq = 0.0;
        for (i, sup) in tail_sup.iter_mut().enumerate() {
            let e = traj.error_norm(k, i);
            sq += e * e;
            if *t >= tail_start {
                *sup = sup.max(e);
            }
        }
        stacked.push(sq.sqrt());
    }
    let last = traj.len().saturating_sub(1);
    let final_error = (0..n).map(|i| if traj.is_empty() { 0.0 } else { traj.error_norm(last, i) }).collect();
    let (decay_fit, fit_note) = if !traj.disturbance_zero {
        (None, Some("disturbance is active; decay fit only applies when d = 0".to_string()))
    } else {
        match fit_decay(&traj.times, &stacked, options.fit_window) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    ConsensusAudit {
        pass: tail_sup.iter().all(|s| *s <= options.tolerance),
        options,
        tail_start,
        tail_sup,
        final_error,
        decay_fit,
        fit_note,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayBasis {
    /// `c0` read off the gamma inequality, as in the L2 argument.
    Gamma,
    /// The gamma inequality gave no margin (relaxed certificate); the
    /// nominal inequality was used instead and the bound is heuristic.
    Nominal,
}

/// `V_i(0)` together with the constants it was built from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaEstimate {
    pub value: f64,
    pub c0: f64,
    pub basis: DecayBasis,
    pub iota: f64,
    pub c1: Option<f64>,
    pub m: Option<f64>,
}

/// Computes `V_i(0) = x~'Q^-1 x~ + iota V_w~(0) (+ m x̄'P x̄)` with the
/// constants at the lower bounds used in the stability proofs.
pub fn auto_kappa(
    traj: &Trajectory,
    agents: &[AgentModel],
    gains: Option<&GainSet>,
    gamma: f64,
    lambda_min: f64,
) -> Result<Vec<KappaEstimate>, MetricsError> {
    let gains = gains.ok_or_else(|| MetricsError::MissingCertificate("no gain set supplied".to_string()))?;
    if traj.is_empty() {
        return Err(MetricsError::DimensionMismatch("empty trajectory".to_string()));
    }
    if gains.agents.len() != agents.len() || agents.len() != traj.agent_count() {
        return Err(MetricsError::DimensionMismatch(format!(
            "{} agents, {} gain entries, {} simulated agents",
            agents.len(),
            gains.agents.len(),
            traj.agent_count()
        )));
    }
    if !(lambda_min > 0.0) {
        return Err(MetricsError::DimensionMismatch("lambda_min must be positive".to_string()));
    }
    let output = traj.mode == LoopMode::OutputFeedback;
    if output && gains.kind != ControllerKind::OutputFeedback {
        return Err(MetricsError::MissingCertificate("output-feedback run with state-feedback gains".to_string()));
    }
    let k = if output { 4.0 } else { 2.0 };
    let s0 = &traj.states[0];
    let w_av0 = traj.generator_average(0);
    let v_w = 0.5 * traj.generator_disagreement(0).norm_squared();

    let mut out = Vec::with_capacity(agents.len());
    for (i, (agent, g)) in agents.iter().zip(&gains.agents).enumerate() {
        let q = g.q_matrix();
        let q_inv = Mat::from_diagonal(&q.diagonal().map(|v| 1.0 / v));
        let scaled = |s: &Mat| -lambda_max(&(&q_inv * s * &q_inv)).unwrap_or(f64::NAN);
        let mut c0 = scaled(&input_gamma_form(agent, &q, gamma));
        let mut basis = DecayBasis::Gamma;
        if !(c0 > 0.0) {
            c0 = scaled(&input_nominal_form(agent, &q));
            basis = DecayBasis::Nominal;
        }
        if !(c0 > 0.0) {
            return Err(MetricsError::MissingCertificate(format!(
                "{}: certificate gives no decay margin",
                agent.label
            )));
        }
        let qbk2 = spectral_norm(&(&q_inv * &agent.b * &g.k2));
        let iota = (2.0 / lambda_min) * (k / c0 * qbk2 * qbk2).max(1.0);

        let x0: Vector = s0.rows_range(traj.layout.x(i)).into_owned();
        let x_tilde = &x0 - &g.regulator.x * &w_av0;
        let mut value = (x_tilde.transpose() * &q_inv * &x_tilde)[(0, 0)] + iota * v_w;

        let (mut c1, mut m) = (None, None);
        if output {
            let p = g
                .p_matrix()
                .ok_or_else(|| MetricsError::MissingCertificate(format!("{}: no observer certificate", agent.label)))?;
            let ctc = agent.c.transpose() * &agent.c;
            let form = agent.a.transpose() * &p + &p * &agent.a - ctc * 2.0;
            let c1v = -lambda_max(&form).unwrap_or(f64::NAN);
            if !(c1v > 0.0) {
                return Err(MetricsError::MissingCertificate(format!(
                    "{}: observer certificate gives no decay margin",
                    agent.label
                )));
            }
            let qbk1 = spectral_norm(&(&q_inv * &agent.b * &g.k1));
            let mv = (2.0 / c1v) * (4.0 / c0 * qbk1 * qbk1).max(1.0);
            let xi = traj.layout.xi(i).expect("output layout has observers");
            let x_bar = &x0 - s0.rows_range(xi);
            value += mv * (x_bar.transpose() * &p * &x_bar)[(0, 0)];
            c1 = Some(c1v);
            m = Some(mv);
        }
        out.push(KappaEstimate { value, c0, basis, iota, c1, m });
    }
    Ok(out)
}

/// How the additive constant of the L2 inequality is chosen.
#[derive(Debug, Clone, Copy)]
pub enum KappaSpec<'a> {
    /// Same constant for every agent.
    Value(f64),
    PerAgent(&'a [f64]),
    Auto {
        agents: &'a [AgentModel],
        gains: Option<&'a GainSet>,
        lambda_min: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L2Audit {
    pub pass: bool,
    pub gamma: f64,
    pub horizon: f64,
    pub kappa: Vec<f64>,
    pub kappa_detail: Option<Vec<KappaEstimate>>,
    pub l2_error: Vec<f64>,
    pub l2_disturbance: f64,
    /// `gamma^2 ∫||d||^2 + kappa - ∫||e_i||^2` per agent.
    pub slack: Vec<f64>,
    pub note: String,
}

pub fn audit_l2_gain(traj: &Trajectory, gamma: f64, kappa: KappaSpec<'_>) -> Result<L2Audit, MetricsError> {
    let n = traj.agent_count();
    let (kappa, kappa_detail) = match kappa {
        KappaSpec::Value(v) => (vec![v; n], None),
        KappaSpec::PerAgent(v) => {
            if v.len() != n {
                return Err(MetricsError::DimensionMismatch(format!("{} kappa values for {n} agents", v.len())));
            }
            (v.to_vec(), None)
        }
        KappaSpec::Auto { agents, gains, lambda_min } => {
            let est = auto_kappa(traj, agents, gains, gamma, lambda_min)?;
            (est.iter().map(|e| e.value).collect(), Some(est))
        }
    };
    let l2_error = traj.error_energy.last().cloned().unwrap_or_else(|| vec![0.0; n]);
    let l2_disturbance = traj.disturbance_energy.last().copied().unwrap_or(0.0);
    let slack: Vec<f64> = l2_error
        .iter()
        .zip(&kappa)
        .map(|(e, k)| gamma * gamma * l2_disturbance + k - e)
        .collect();
    Ok(L2Audit {
        pass: slack.iter().all(|s| *s >= 0.0),
        gamma,
        horizon: traj.times.last().copied().unwrap_or(0.0),
        kappa,
        kappa_detail,
        l2_error,
        l2_disturbance,
        slack,
        note: "integrals truncated at the simulation horizon; passing is necessary, not sufficient, for the infinite-horizon bound"
            .to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionAudit {
    pub pass: bool,
    pub lambda_min: f64,
    pub initial_disagreement: f64,
    /// `min_t ||w~(0)|| e^{-lambda t} - ||w~(t)||`.
    pub margin: f64,
    pub worst_time: f64,
}

/// Checks `||w~(t)|| <= ||w~(0)|| e^{-lambda_min t}` at every sample.
pub fn audit_contraction(traj: &Trajectory, lambda_min: f64) -> ContractionAudit {
    let w0 = if traj.is_empty() { 0.0 } else { traj.generator_disagreement(0).norm() };
    let mut margin = f64::INFINITY;
    let mut worst_time = 0.0;
    for (k, &t) in traj.times.iter().enumerate() {
        let m = w0 * (-lambda_min * t).exp() - traj.generator_disagreement(k).norm();
        if m < margin {
            margin = m;
            worst_time = t;
        }
    }
    if !margin.is_finite() {
        margin = 0.0;
    }
    ContractionAudit {
        pass: margin >= -1e-6 * w0,
        lambda_min,
        initial_disagreement: w0,
        margin,
        worst_time,
    }
}

/// Bundle written to the JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct AuditReport {
    pub positivity: Option<PositivityAudit>,
    pub consensus: Option<ConsensusAudit>,
    pub l2: Option<L2Audit>,
    pub contraction: Option<ContractionAudit>,
    /// Audits reported for information only; they do not affect [`AuditReport::passed`].
    pub informational: Vec<String>,
    pub notes: Vec<String>,
}

impl AuditReport {
    pub const POSITIVITY: &'static str = "positivity";
    pub const CONSENSUS: &'static str = "consensus";
    pub const L2: &'static str = "l2";
    pub const CONTRACTION: &'static str = "contraction";

    fn counts(&self, name: &str) -> bool {
        !self.informational.iter().any(|n| n == name)
    }

    /// Pass/fail of each audit that was run, with its name.
    pub fn outcomes(&self) -> Vec<(&'static str, bool)> {
        let mut out = Vec::new();
        if let Some(a) = &self.positivity {
            out.push((Self::POSITIVITY, a.pass));
        }
        if let Some(a) = &self.consensus {
            out.push((Self::CONSENSUS, a.pass));
        }
        if let Some(a) = &self.l2 {
            out.push((Self::L2, a.pass));
        }
        if let Some(a) = &self.contraction {
            out.push((Self::CONTRACTION, a.pass));
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.outcomes().iter().all(|(name, pass)| *pass || !self.counts(name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PatternModel;
    use crate::numerics::mat_from_rows;
    use crate::sim::{build_generator, Integrator};
    use crate::topology::{Graph, SwitchingSchedule};

    fn generator_run(w0: Vec<Vector>, a0: Mat, mu: f64, horizon: f64) -> (Trajectory, f64) {
        let n0 = a0.nrows();
        let pattern = PatternModel::new(a0, Mat::from_element(1, n0, 1.0)).unwrap();
        let n = w0.len();
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let sched = SwitchingSchedule::fixed(Graph::new(n, &edges).unwrap());
        let lam = sched.lambda_min();
        let sys = build_generator(&pattern, &sched, mu, &w0).unwrap();
        (sys.integrate(horizon, 0.01, Integrator::Rk4).unwrap(), lam)
    }

    #[test]
    fn zero_trajectory_is_positive() {
        let (traj, _) = generator_run(vec![Vector::zeros(1); 3], Mat::zeros(1, 1), 1.0, 1.0);
        let a = audit_positivity(&traj, 1e-8);
        assert!(a.pass);
        assert_eq!(a.positivity_min, 0.0);
        assert_eq!(a.observer_min, None);
    }

    #[test]
    fn fit_recovers_known_rate() {
        let times: Vec<f64> = (0..2000).map(|k| k as f64 * 0.01).collect();
        let values: Vec<f64> = times.iter().map(|t| 0.5 * (-1.5 * t).exp()).collect();
        let f = fit_decay(&times, &values, FIT_WINDOW).unwrap();
        assert!((f.rate + 1.5).abs() < 1e-9);
    }

    #[test]
    fn constant_error_has_insufficient_decay() {
        let times = [0.0, 1.0, 2.0];
        let r = fit_decay(&times, &[0.3, 0.3, 0.3], FIT_WINDOW);
        assert!(matches!(r, Err(MetricsError::InsufficientDecay { .. })));
    }

    #[test]
    fn contraction_bound_holds_on_path_graph() {
        let w0 = vec![Vector::from_element(1, 0.0), Vector::from_element(1, 2.0), Vector::from_element(1, 7.0)];
        let (traj, lam) = generator_run(w0, Mat::zeros(1, 1), 1.0, 10.0);
        let a = audit_contraction(&traj, lam);
        assert!(a.pass, "{a:?}");
        assert!(a.initial_disagreement > 0.0);
    }

    #[test]
    fn contraction_trivial_when_agreeing() {
        let w = Vector::from_element(1, 1.0);
        let (traj, lam) = generator_run(vec![w.clone(), w], Mat::zeros(1, 1), 1.0, 1.0);
        let a = audit_contraction(&traj, lam);
        assert!(a.pass);
        assert_eq!(a.margin, 0.0);
    }

    #[test]
    fn generator_decay_beats_lambda() {
        let a0 = mat_from_rows(&[&[0.01, 0.01], &[0.0, 0.0]]);
        let w0: Vec<Vector> = (1..=4).map(|i| Vector::from_vec(vec![i as f64 - 0.5, i as f64])).collect();
        let (traj, lam) = generator_run(w0, a0, 3.0, 60.0);
        let norms: Vec<f64> = (0..traj.len()).map(|k| traj.generator_disagreement(k).norm()).collect();
        let f = fit_decay(&traj.times, &norms, FIT_WINDOW).unwrap();
        assert!(f.rate <= -lam, "rate {} vs {}", f.rate, lam);
    }

    #[test]
    fn auto_kappa_needs_gains() {
        let (traj, lam) = generator_run(vec![Vector::zeros(1); 2], Mat::zeros(1, 1), 1.0, 0.1);
        let r = audit_l2_gain(&traj, 1.0, KappaSpec::Auto { agents: &[], gains: None, lambda_min: lam });
        assert!(matches!(r, Err(MetricsError::MissingCertificate(_))));
    }
}
