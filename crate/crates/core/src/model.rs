//! Agent, pattern and disturbance models together with the positivity
//! predicates and the standing-assumption checks run before synthesis.

use std::fmt;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Mat, Vector};
use crate::topology::SwitchingSchedule;

/// Numerical tolerances shared by every check in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToleranceConfig {
    pub zero_tol: f64,
    pub definiteness_margin: f64,
    pub positivity_slack: f64,
    pub regulator_residual_tol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            zero_tol: 1e-9,
            definiteness_margin: 1e-7,
            positivity_slack: 1e-8,
            regulator_residual_tol: 1e-8,
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("zero_tol", self.zero_tol),
            ("definiteness_margin", self.definiteness_margin),
            ("positivity_slack", self.positivity_slack),
            ("regulator_residual_tol", self.regulator_residual_tol),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::BadTolerance { name, value: v });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: String,
        found: String,
    },
    #[error("tolerance {name} must be positive and finite, found {value}")]
    BadTolerance { name: &'static str, value: f64 },
    #[error("eigenvalue routine supports matrices up to 4x4, got {0}x{0}")]
    UnsupportedDimension(usize),
    #[error("disturbance: {0}")]
    Disturbance(String),
}

fn dim_err(what: impl Into<String>, expected: impl fmt::Display, found: impl fmt::Display) -> ModelError {
    ModelError::Dimension {
        what: what.into(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

/// One heterogeneous agent `x' = A x + B u + D d`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub label: String,
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl AgentModel {
    /// Checks shape consistency only; sign structure is reported by
    /// [`validate_scenario`].
    pub fn new(label: impl Into<String>, a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self, ModelError> {
        let label = label.into();
        let n = a.nrows();
        if a.ncols() != n {
            return Err(dim_err(format!("agent {label}: A"), "square", format!("{}x{}", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(dim_err(format!("agent {label}: B rows"), n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(dim_err(format!("agent {label}: C columns"), n, c.ncols()));
        }
        if d.nrows() != n {
            return Err(dim_err(format!("agent {label}: D rows"), n, d.nrows()));
        }
        Ok(Self { label, a, b, c, d })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.d.ncols()
    }
}

/// Consensus pattern exosystem `w' = A0 w`, `y0 = C0 w`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternModel {
    pub a0: Mat,
    pub c0: Mat,
}

impl PatternModel {
    pub fn new(a0: Mat, c0: Mat) -> Result<Self, ModelError> {
        if a0.nrows() != a0.ncols() {
            return Err(dim_err("pattern A0", "square", format!("{}x{}", a0.nrows(), a0.ncols())));
        }
        if c0.ncols() != a0.nrows() {
            return Err(dim_err("pattern C0 columns", a0.nrows(), c0.ncols()));
        }
        Ok(Self { a0, c0 })
    }

    pub fn dim(&self) -> usize {
        self.a0.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c0.nrows()
    }
}

/// External input `d(t)`, nonnegative at all times.
#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceSignal {
    Zero { dim: usize },
    /// `amplitude * |sin(frequency * t)|` in every channel.
    AbsSine { amplitude: f64, frequency: f64, dim: usize },
    Constant(Vector),
    /// Piecewise-constant table: `values[k]` holds on `[times[k], times[k+1])`.
    Piecewise { times: Vec<f64>, values: Vec<Vector> },
}

impl DisturbanceSignal {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Disturbance(m.to_string()));
        match self {
            Self::Zero { .. } => Ok(()),
            Self::AbsSine { amplitude, frequency, .. } => {
                if !(*amplitude >= 0.0 && amplitude.is_finite() && frequency.is_finite()) {
                    return bad("abs_sine amplitude must be finite and nonnegative");
                }
                Ok(())
            }
            Self::Constant(v) => {
                if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                    return bad("constant disturbance must be finite and nonnegative");
                }
                Ok(())
            }
            Self::Piecewise { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return bad("piecewise table needs one value per breakpoint");
                }
                if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
                    return bad("piecewise breakpoints must start at 0 and increase");
                }
                let dim = values[0].len();
                if values.iter().any(|v| v.len() != dim) {
                    return bad("piecewise values must share one dimension");
                }
                if values.iter().flat_map(|v| v.iter()).any(|x| !(*x >= 0.0) || !x.is_finite()) {
                    return bad("piecewise values must be finite and nonnegative");
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Zero { dim } | Self::AbsSine { dim, .. } => *dim,
            Self::Constant(v) => v.len(),
            Self::Piecewise { values, .. } => values.first().map_or(0, |v| v.len()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero { .. } => true,
            Self::AbsSine { amplitude, .. } => *amplitude == 0.0,
            Self::Constant(v) => v.iter().all(|x| *x == 0.0),
            Self::Piecewise { values, .. } => values.iter().all(|v| v.iter().all(|x| *x == 0.0)),
        }
    }

    pub fn eval(&self, t: f64) -> Vector {
        match self {
            Self::Zero { dim } => Vector::zeros(*dim),
            Self::AbsSine { amplitude, frequency, dim } => {
                Vector::from_element(*dim, amplitude * (frequency * t).sin().abs())
            }
            Self::Constant(v) => v.clone(),
            Self::Piecewise { times, values } => {
                let k = times.partition_point(|&s| s <= t).saturating_sub(1);
                values[k].clone()
            }
        }
    }
}

/// Off-diagonal entries all `>= -tol`.
pub fn is_metzler(a: &Mat, tol: f64) -> bool {
    a.nrows() == a.ncols()
        && (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] >= -tol))
}

/// Every entry `>= -tol`.
pub fn is_nonnegative(m: &Mat, tol: f64) -> bool {
    m.iter().all(|v| *v >= -tol)
}

/// Nonnegative with at least one entry strictly above `tol`.
pub fn is_positive(m: &Mat, tol: f64) -> bool {
    is_nonnegative(m, tol) && m.iter().any(|v| *v > tol)
}

/// Characteristic polynomial coefficients `[c0, c1, ..., c_{n-1}, 1]`
/// (ascending powers) by the Faddeev–LeVerrier recursion.
pub fn characteristic_polynomial(a: &Mat) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let mut m = Mat::zeros(n, n);
    for k in 1..=n {
        m = a * &m + Mat::identity(n, n) * coeffs[n - k + 1];
        let am = a * &m;
        coeffs[n - k] = -am.trace() / k as f64;
    }
    coeffs
}

/// Roots of a monic polynomial given by ascending coefficients.
fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let deg = coeffs.len() - 1;
    match deg {
        0 => Vec::new(),
        1 => vec![Complex::new(-coeffs[0], 0.0)],
        2 => {
            let (b, c) = (coeffs[1], coeffs[0]);
            let disc = b * b - 4.0 * c;
            if disc >= 0.0 {
                // stable form avoids cancellation in the smaller root
                let sign = if b >= 0.0 { 1.0 } else { -1.0 };
                let q = -0.5 * (b + sign * disc.sqrt());
                let other = if q != 0.0 { c / q } else { 0.0 };
                vec![Complex::new(q, 0.0), Complex::new(other, 0.0)]
            } else {
                let s = (-disc).sqrt() / 2.0;
                vec![Complex::new(-b / 2.0, s), Complex::new(-b / 2.0, -s)]
            }
        }
        _ => durand_kerner(coeffs),
    }
}

/// Simultaneous Weierstrass iteration for all roots of a monic polynomial.
fn durand_kerner(coeffs: &[f64]) -> Vec<Complex<f64>> {
    let deg = coeffs.len() - 1;
    let eval = |z: Complex<f64>| {
        coeffs
            .iter()
            .rev()
            .fold(Complex::new(0.0, 0.0), |acc, &c| acc * z + c)
    };
    let radius = 1.0 + coeffs[..deg].iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let seed = Complex::new(0.4, 0.9);
    let mut roots: Vec<Complex<f64>> = (0..deg).map(|k| seed.powu(k as u32) * radius).collect();
    for _ in 0..500 {
        let mut delta = 0.0_f64;
        for i in 0..deg {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..deg {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() == 0.0 {
                denom = Complex::new(1e-300, 0.0);
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 * radius {
            break;
        }
    }
    roots
}

/// Eigenvalues of a small (at most 4x4) nonsymmetric matrix via its
/// characteristic polynomial.
pub fn small_eigenvalues(a: &Mat) -> Result<Vec<Complex<f64>>, ModelError> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(dim_err("eigenvalue input", "square", format!("{}x{}", n, a.ncols())));
    }
    if n > 4 {
        return Err(ModelError::UnsupportedDimension(n));
    }
    let mut roots = polynomial_roots(&characteristic_polynomial(a));
    roots.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    Ok(roots)
}

/// Outcome of the pattern admissibility check (Metzler, no stable modes).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternReport {
    pub metzler: bool,
    /// `(re, im)` pairs.
    pub eigenvalues: Vec<(f64, f64)>,
    pub min_real_part: f64,
    pub pass: bool,
}

pub fn check_pattern(pattern: &PatternModel, tol: f64) -> Result<PatternReport, ModelError> {
    let metzler = is_metzler(&pattern.a0, tol);
    let eigs = small_eigenvalues(&pattern.a0)?;
    let min_real_part = eigs.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let stable_mode = eigs.iter().any(|z| z.re < -tol);
    Ok(PatternReport {
        metzler,
        eigenvalues: eigs.iter().map(|z| (z.re, z.im)).collect(),
        min_real_part,
        pass: metzler && !stable_mode,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NotMetzler,
    Negative,
    PatternNotMetzler,
    PatternStableMode,
    PatternTooLarge,
    Disconnected,
    NodeCount,
    Dimension,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

/// Runs every structural precondition of the synthesis and collects all
/// failures rather than stopping at the first one.
pub fn validate_scenario(
    agents: &[AgentModel],
    pattern: &PatternModel,
    schedule: &SwitchingSchedule,
    tol: &ToleranceConfig,
) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |kind, location: String, detail: String| {
        violations.push(Violation { kind, location, detail })
    };
    let z = tol.zero_tol;

    let l = pattern.output_dim();
    let q = agents.first().map_or(0, AgentModel::disturbance_dim);
    for agent in agents {
        let loc = agent.label.clone();
        if !is_metzler(&agent.a, z) {
            push(ViolationKind::NotMetzler, format!("{loc}.A"), "A is not Metzler".into());
        }
        for (name, m) in [("B", &agent.b), ("C", &agent.c), ("D", &agent.d)] {
            if !is_nonnegative(m, z) {
                push(ViolationKind::Negative, format!("{loc}.{name}"), format!("{name} has a negative entry"));
            }
        }
        if agent.output_dim() != l {
            push(
                ViolationKind::Dimension,
                format!("{loc}.C"),
                format!("output dimension {} differs from pattern output dimension {l}", agent.output_dim()),
            );
        }
        if agent.disturbance_dim() != q {
            push(
                ViolationKind::Dimension,
                format!("{loc}.D"),
                format!("disturbance dimension {} differs from {q}", agent.disturbance_dim()),
            );
        }
    }

    if !is_nonnegative(&pattern.c0, z) {
        push(ViolationKind::Negative, "pattern.C0".into(), "C0 has a negative entry".into());
    }
    match check_pattern(pattern, z) {
        Ok(rep) => {
            if !rep.metzler {
                push(ViolationKind::PatternNotMetzler, "pattern.A0".into(), "A0 is not Metzler".into());
            }
            if rep.min_real_part < -z {
                push(
                    ViolationKind::PatternStableMode,
                    "pattern.A0".into(),
                    format!("eigenvalue with real part {:.6e} < 0", rep.min_real_part),
                );
            }
        }
        Err(e) => push(ViolationKind::PatternTooLarge, "pattern.A0".into(), e.to_string()),
    }

    if schedule.node_count() != agents.len() {
        push(
            ViolationKind::NodeCount,
            "topology".into(),
            format!("graphs have {} nodes but there are {} agents", schedule.node_count(), agents.len()),
        );
    }
    for (p, g) in schedule.graphs().iter().enumerate() {
        if !g.is_connected() {
            push(
                ViolationKind::Disconnected,
                format!("topology.graph {}", p + 1),
                format!("graph is not connected (lambda2 = {:.3e})", g.lambda2()),
            );
        }
    }

    violations.sort();
    ValidationReport { violations }
}
