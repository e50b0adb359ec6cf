//! Regulator equations `A X + B U - X A0 = 0`, `C X = C0` for one agent.
//!
//! Both equations are vectorised with `vec(A X B) = (B^T ⊗ A) vec(X)` and
//! solved jointly in the least-squares sense, which also covers the
//! rank-deficient-but-consistent case (minimum-norm solution).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentModel, PatternModel, ToleranceConfig};
use crate::numerics::{kron, max_abs, Mat, Vector};

/// Evaluation budget of the null-space search for a nonnegative solution.
pub const NONNEGATIVE_SEARCH_BUDGET: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegulatorError {
    #[error("agent {label}: regulator equations have no solution (residual {residual:e})")]
    NoSolution { label: String, residual: f64 },
    #[error("agent {label}: output dimension {agent} does not match pattern output dimension {pattern}")]
    DimensionMismatch {
        label: String,
        agent: usize,
        pattern: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulatorSolution {
    #[serde(with = "crate::serde_mat")]
    pub x: Mat,
    #[serde(with = "crate::serde_mat")]
    pub u: Mat,
    /// Max-norm of both equation residuals after substitution.
    pub residual: f64,
    /// False when the stacked system is rank deficient (minimum-norm or
    /// null-space-shifted solution returned).
    pub unique: bool,
    /// `X >= 0` and `U >= 0` within the zero tolerance.
    pub positive_certified: bool,
}

/// Max-norm residual of both regulator equations at `(x, u)`.
pub fn regulator_residual(agent: &AgentModel, pattern: &PatternModel, x: &Mat, u: &Mat) -> f64 {
    let r1 = &agent.a * x + &agent.b * u - x * &pattern.a0;
    let r2 = &agent.c * x - &pattern.c0;
    max_abs(&r1).max(max_abs(&r2))
}

struct Stacked {
    matrix: Mat,
    rhs: Vector,
    n_x: usize,
}

fn stack(agent: &AgentModel, pattern: &PatternModel) -> Stacked {
    let n = agent.state_dim();
    let m = agent.input_dim();
    let l = agent.output_dim();
    let n0 = pattern.dim();
    let i_n0 = Mat::identity(n0, n0);
    let i_n = Mat::identity(n, n);

    let n_x = n * n0;
    let n_u = m * n0;
    let rows = n * n0 + l * n0;
    let mut matrix = Mat::zeros(rows, n_x + n_u);

    let first_x = kron(&i_n0, &agent.a) - kron(&pattern.a0.transpose(), &i_n);
    let first_u = kron(&i_n0, &agent.b);
    let second_x = kron(&i_n0, &agent.c);
    matrix.view_mut((0, 0), (n * n0, n_x)).copy_from(&first_x);
    matrix.view_mut((0, n_x), (n * n0, n_u)).copy_from(&first_u);
    matrix.view_mut((n * n0, 0), (l * n0, n_x)).copy_from(&second_x);

    let mut rhs = Vector::zeros(rows);
    // column-major vec(C0)
    for (k, v) in pattern.c0.iter().enumerate() {
        rhs[n * n0 + k] = *v;
    }
    Stacked { matrix, rhs, n_x }
}

fn split(z: &Vector, agent: &AgentModel, n0: usize, n_x: usize) -> (Mat, Mat) {
    let x = Mat::from_column_slice(agent.state_dim(), n0, &z.as_slice()[..n_x]);
    let u = Mat::from_column_slice(agent.input_dim(), n0, &z.as_slice()[n_x..]);
    (x, u)
}

/// Minimum-norm least-squares solution plus an orthonormal basis of the
/// null space of `matrix`.
fn min_norm_solve(matrix: &Mat, rhs: &Vector) -> (Vector, Mat) {
    let (rows, cols) = matrix.shape();
    // pad with zero rows so the thin SVD exposes the full right basis
    let padded_rows = rows.max(cols);
    let mut padded = Mat::zeros(padded_rows, cols);
    padded.view_mut((0, 0), (rows, cols)).copy_from(matrix);
    let mut padded_rhs = Vector::zeros(padded_rows);
    padded_rhs.rows_mut(0, rows).copy_from(rhs);

    let svd = padded.svd(true, true);
    let sigma_max = svd.singular_values.iter().fold(0.0_f64, |m, s| m.max(*s));
    let cutoff = sigma_max * padded_rows.max(cols) as f64 * f64::EPSILON * 16.0;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");

    let mut z = Vector::zeros(cols);
    let mut null_cols = Vec::new();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let coef = u.column(k).dot(&padded_rhs) / s;
            z += v_t.row(k).transpose() * coef;
        } else {
            null_cols.push(v_t.row(k).transpose());
        }
    }
    let null = if null_cols.is_empty() {
        Mat::zeros(cols, 0)
    } else {
        Mat::from_columns(&null_cols)
    };
    (z, null)
}

/// Shifts `z` within the null space to maximise its smallest entry, using a
/// deterministic coordinate search with step halving.
fn nonnegative_shift(z: &Vector, null: &Mat, tol: f64, budget: usize) -> Option<Vector> {
    let score = |c: &Vector| (z + null * c).min();
    let mut coeffs = Vector::zeros(null.ncols());
    let mut best = score(&coeffs);
    let mut step = z.amax().max(1.0);
    let mut evaluations = 0;
    while evaluations < budget && best < -tol && step > 1e-14 {
        let mut improved = false;
        for j in 0..null.ncols() {
            for sign in [1.0, -1.0] {
                let mut trial = coeffs.clone();
                trial[j] += sign * step;
                let s = score(&trial);
                evaluations += 1;
                if s > best {
                    best = s;
                    coeffs = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best >= -tol).then(|| z + null * coeffs)
}

pub fn solve_regulator(
    agent: &AgentModel,
    pattern: &PatternModel,
    tol: &ToleranceConfig,
) -> Result<RegulatorSolution, RegulatorError> {
    if agent.output_dim() != pattern.output_dim() {
        return Err(RegulatorError::DimensionMismatch {
            label: agent.label.clone(),
            agent: agent.output_dim(),
            pattern: pattern.output_dim(),
        });
    }
    let n0 = pattern.dim();
    let sys = stack(agent, pattern);
    let (mut z, null) = min_norm_solve(&sys.matrix, &sys.rhs);
    let unique = null.ncols() == 0;

    let (x, u) = split(&z, agent, n0, sys.n_x);
    let residual = regulator_residual(agent, pattern, &x, &u);
    if !(residual <= tol.regulator_residual_tol) {
        return Err(RegulatorError::NoSolution {
            label: agent.label.clone(),
            residual,
        });
    }

    let mut positive = z.min() >= -tol.zero_tol;
    if !positive && !unique {
        if let Some(shifted) =
            nonnegative_shift(&z, &null, tol.zero_tol, NONNEGATIVE_SEARCH_BUDGET)
        {
            let (xs, us) = split(&shifted, agent, n0, sys.n_x);
            if regulator_residual(agent, pattern, &xs, &us) <= tol.regulator_residual_tol {
                z = shifted;
                positive = true;
            }
        }
    }
    let (x, u) = split(&z, agent, n0, sys.n_x);
    let residual = regulator_residual(agent, pattern, &x, &u);
    Ok(RegulatorSolution {
        x,
        u,
        residual,
        unique,
        positive_certified: positive,
    })
}
