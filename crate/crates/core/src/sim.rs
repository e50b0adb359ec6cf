//! Closed-loop assembly and fixed-step integration of the switched,
//! piecewise-LTI multi-agent system.
//!
//! The stacked state is `[x_1 .. x_N, xi_1 .. xi_N, w_1 .. w_N]`, where
//! the observer block `xi` only exists in output-feedback mode and the
//! agent blocks are absent for a generator-only run.

use std::collections::HashMap;
use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::model::{is_nonnegative, AgentModel, DisturbanceSignal, PatternModel};
use crate::numerics::{expm, kron, Mat, NumericsError, Vector};
use crate::synthesis::{ControllerKind, GainSet};
use crate::topology::SwitchingSchedule;

/// States larger than this in magnitude abort the integration.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("initial condition is not nonnegative: {0}")]
    NonnegativityViolation(String),
    #[error("state diverged at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("exact-flow integration needs a disturbance that is constant in time")]
    UnsupportedDisturbance,
    #[error("invalid integration parameters: {0}")]
    BadParameters(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    GeneratorOnly,
    StateFeedback,
    OutputFeedback,
}

impl From<ControllerKind> for LoopMode {
    fn from(k: ControllerKind) -> Self {
        match k {
            ControllerKind::StateFeedback => Self::StateFeedback,
            ControllerKind::OutputFeedback => Self::OutputFeedback,
        }
    }
}

/// Offsets of each block inside the stacked state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateLayout {
    agent_dims: Vec<usize>,
    agent_offsets: Vec<usize>,
    observer_offsets: Option<Vec<usize>>,
    generator_offset: usize,
    generators: usize,
    pattern_dim: usize,
    total: usize,
}

impl StateLayout {
    fn new(agent_dims: &[usize], observers: bool, generators: usize, pattern_dim: usize) -> Self {
        let mut offset = 0;
        let mut agent_offsets = Vec::with_capacity(agent_dims.len());
        for &n in agent_dims {
            agent_offsets.push(offset);
            offset += n;
        }
        let observer_offsets = observers.then(|| {
            agent_dims
                .iter()
                .map(|&n| {
                    let o = offset;
                    offset += n;
                    o
                })
                .collect()
        });
        let generator_offset = offset;
        Self {
            agent_dims: agent_dims.to_vec(),
            agent_offsets,
            observer_offsets,
            generator_offset,
            generators,
            pattern_dim,
            total: generator_offset + generators * pattern_dim,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn agent_count(&self) -> usize {
        self.agent_dims.len()
    }

    pub fn generator_count(&self) -> usize {
        self.generators
    }

    pub fn pattern_dim(&self) -> usize {
        self.pattern_dim
    }

    pub fn agent_dim(&self, i: usize) -> usize {
        self.agent_dims[i]
    }

    pub fn x(&self, i: usize) -> Range<usize> {
        self.agent_offsets[i]..self.agent_offsets[i] + self.agent_dims[i]
    }

    pub fn xi(&self, i: usize) -> Option<Range<usize>> {
        self.observer_offsets
            .as_ref()
            .map(|o| o[i]..o[i] + self.agent_dims[i])
    }

    pub fn w(&self, i: usize) -> Range<usize> {
        let start = self.generator_offset + i * self.pattern_dim;
        start..start + self.pattern_dim
    }

    pub fn generators(&self) -> Range<usize> {
        self.generator_offset..self.total
    }

    /// Agent and generator blocks, i.e. everything except observers.
    pub fn physical(&self) -> impl Iterator<Item = usize> + '_ {
        let agents_end = self.agent_offsets.last().map_or(0, |&o| o + self.agent_dims.last().copied().unwrap_or(0));
        (0..agents_end).chain(self.generators())
    }
}

/// `t ↦ C0 e^{A0 t} w_av(0)`, the pattern solution tracked by every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    a0: Mat,
    c0: Mat,
    w_av0: Vector,
}

impl ReferenceTrajectory {
    pub fn w_av0(&self) -> &Vector {
        &self.w_av0
    }

    pub fn state_at(&self, t: f64) -> Result<Vector, NumericsError> {
        Ok(expm(&self.a0, t)? * &self.w_av0)
    }

    pub fn at(&self, t: f64) -> Result<Vector, NumericsError> {
        Ok(&self.c0 * self.state_at(t)?)
    }
}

pub fn reference_trajectory(pattern: &PatternModel, w0: &[Vector]) -> ReferenceTrajectory {
    let n0 = pattern.dim();
    let mut sum = Vector::zeros(n0);
    for w in w0 {
        sum += w;
    }
    let w_av0 = if w0.is_empty() { sum } else { sum / w0.len() as f64 };
    ReferenceTrajectory {
        a0: pattern.a0.clone(),
        c0: pattern.c0.clone(),
        w_av0,
    }
}

/// Per-agent initial values. An empty `xi0` means all observers start at
/// zero; `w0 = None` means generators start at zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InitialConditions {
    pub x0: Vec<Vector>,
    pub xi0: Vec<Vector>,
    pub w0: Option<Vec<Vector>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    mode: LoopMode,
    layout: StateLayout,
    /// One drift matrix per graph in the family.
    drifts: Vec<Mat>,
    /// Maps `d(t)` into the stacked derivative.
    input: Mat,
    disturbance: DisturbanceSignal,
    schedule: SwitchingSchedule,
    output_maps: Vec<Mat>,
    reference: ReferenceTrajectory,
    initial: Vector,
    warnings: Vec<String>,
}

fn generator_drift(pattern: &PatternModel, laplacian: &Mat, mu: f64) -> Mat {
    let n = laplacian.nrows();
    let n0 = pattern.dim();
    kron(&Mat::identity(n, n), &pattern.a0) - kron(laplacian, &Mat::identity(n0, n0)) * mu
}

fn check_generator_init(w0: &[Vector], n: usize, n0: usize) -> Result<(), SimError> {
    if w0.len() != n {
        return Err(SimError::DimensionMismatch(format!(
            "{} generator initial states for {n} nodes",
            w0.len()
        )));
    }
    for (i, w) in w0.iter().enumerate() {
        if w.len() != n0 {
            return Err(SimError::DimensionMismatch(format!(
                "w{}(0) has {} entries, pattern order is {n0}",
                i + 1,
                w.len()
            )));
        }
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(SimError::NonnegativityViolation(format!("w{}(0)", i + 1)));
        }
    }
    Ok(())
}

/// Reference generators alone: `w' = (I ⊗ A0 - mu L_sigma ⊗ I) w`.
pub fn build_generator(
    pattern: &PatternModel,
    schedule: &SwitchingSchedule,
    mu: f64,
    w0: &[Vector],
) -> Result<ClosedLoopSystem, SimError> {
    let n = schedule.node_count();
    let n0 = pattern.dim();
    check_generator_init(w0, n, n0)?;
    let layout = StateLayout::new(&[], false, n, n0);
    let drifts = schedule
        .graphs()
        .iter()
        .map(|g| generator_drift(pattern, &g.laplacian(), mu))
        .collect();
    let mut initial = Vector::zeros(layout.total());
    for (i, w) in w0.iter().enumerate() {
        initial.rows_range_mut(layout.w(i)).copy_from(w);
    }
    Ok(ClosedLoopSystem {
        mode: LoopMode::GeneratorOnly,
        input: Mat::zeros(layout.total(), 0),
        disturbance: DisturbanceSignal::Zero { dim: 0 },
        schedule: schedule.clone(),
        output_maps: Vec::new(),
        reference: reference_trajectory(pattern, w0),
        drifts,
        layout,
        initial,
        warnings: Vec::new(),
    })
}

/// Agents, controllers and generators in one switched linear system with
/// affine disturbance input.
pub fn build_closed_loop(
    agents: &[AgentModel],
    gains: &GainSet,
    pattern: &PatternModel,
    schedule: &SwitchingSchedule,
    disturbance: &DisturbanceSignal,
    init: &InitialConditions,
) -> Result<ClosedLoopSystem, SimError> {
    let n_agents = agents.len();
    let n0 = pattern.dim();
    let mode = LoopMode::from(gains.kind);
    let output = mode == LoopMode::OutputFeedback;
    let mut warnings = Vec::new();

    if gains.agents.len() != n_agents {
        return Err(SimError::DimensionMismatch(format!(
            "{} gain entries for {n_agents} agents",
            gains.agents.len()
        )));
    }
    if schedule.node_count() != n_agents {
        return Err(SimError::DimensionMismatch(format!(
            "graphs have {} nodes for {n_agents} agents",
            schedule.node_count()
        )));
    }
    if init.x0.len() != n_agents {
        return Err(SimError::DimensionMismatch(format!(
            "{} initial states for {n_agents} agents",
            init.x0.len()
        )));
    }
    let q = disturbance.dim();
    for (i, (agent, g)) in agents.iter().zip(&gains.agents).enumerate() {
        let n = agent.state_dim();
        let m = agent.input_dim();
        let shape_ok = g.k1.shape() == (m, n)
            && g.k2.shape() == (m, n0)
            && (!output || g.k3.as_ref().is_some_and(|k| k.shape() == (n, agent.output_dim())));
        if !shape_ok {
            return Err(SimError::DimensionMismatch(format!("gains of agent {} do not fit its model", agent.label)));
        }
        if agent.disturbance_dim() != q {
            return Err(SimError::DimensionMismatch(format!(
                "{} expects a {}-dimensional disturbance, signal has {q}",
                agent.label,
                agent.disturbance_dim()
            )));
        }
        if init.x0[i].len() != n {
            return Err(SimError::DimensionMismatch(format!("x{}(0) has {} entries, expected {n}", i + 1, init.x0[i].len())));
        }
        if init.x0[i].iter().any(|v| !(*v >= 0.0)) {
            return Err(SimError::NonnegativityViolation(format!("x{}(0)", i + 1)));
        }
    }

    let xi0: Vec<Vector> = if output {
        if init.xi0.is_empty() {
            agents.iter().map(|a| Vector::zeros(a.state_dim())).collect()
        } else {
            if init.xi0.len() != n_agents {
                return Err(SimError::DimensionMismatch(format!("{} observer states for {n_agents} agents", init.xi0.len())));
            }
            for (i, (xi, x)) in init.xi0.iter().zip(&init.x0).enumerate() {
                if xi.len() != x.len() {
                    return Err(SimError::DimensionMismatch(format!("xi{}(0) has {} entries, expected {}", i + 1, xi.len(), x.len())));
                }
                if !is_nonnegative(&Mat::from_column_slice(x.len(), 1, (x - xi).as_slice()), 0.0) {
                    return Err(SimError::NonnegativityViolation(format!("x{0}(0) - xi{0}(0)", i + 1)));
                }
            }
            init.xi0.clone()
        }
    } else {
        Vec::new()
    };

    let w0 = match &init.w0 {
        Some(w0) => {
            if output && w0.iter().any(|w| w.iter().any(|v| *v != 0.0)) {
                warnings.push("output feedback with nonzero generator initial states (the design assumes w(0) = 0)".to_string());
            }
            w0.clone()
        }
        None => vec![Vector::zeros(n0); n_agents],
    };
    check_generator_init(&w0, n_agents, n0)?;

    let dims: Vec<usize> = agents.iter().map(AgentModel::state_dim).collect();
    let layout = StateLayout::new(&dims, output, n_agents, n0);

    // everything except the generator coupling is topology independent
    let mut base = Mat::zeros(layout.total(), layout.total());
    let mut input = Mat::zeros(layout.total(), q);
    for (i, (agent, g)) in agents.iter().zip(&gains.agents).enumerate() {
        let x = layout.x(i);
        let w = layout.w(i);
        let bk1 = &agent.b * &g.k1;
        let bk2 = &agent.b * &g.k2;
        input.view_mut((x.start, 0), (x.len(), q)).copy_from(&agent.d);
        base.view_mut((x.start, w.start), (x.len(), w.len())).copy_from(&bk2);
        match layout.xi(i) {
            None => {
                base.view_mut((x.start, x.start), (x.len(), x.len())).copy_from(&(&agent.a + &bk1));
            }
            Some(xi) => {
                let k3 = g.k3.as_ref().expect("shape-checked above");
                let k3c = k3 * &agent.c;
                base.view_mut((x.start, x.start), (x.len(), x.len())).copy_from(&agent.a);
                base.view_mut((x.start, xi.start), (x.len(), xi.len())).copy_from(&bk1);
                base.view_mut((xi.start, x.start), (xi.len(), x.len())).copy_from(&k3c);
                base.view_mut((xi.start, xi.start), (xi.len(), xi.len()))
                    .copy_from(&(&agent.a - &k3c + &bk1));
                base.view_mut((xi.start, w.start), (xi.len(), w.len())).copy_from(&bk2);
            }
        }
    }
    let gen = layout.generators();
    let drifts = schedule
        .graphs()
        .iter()
        .map(|graph| {
            let mut m = base.clone();
            m.view_mut((gen.start, gen.start), (gen.len(), gen.len()))
                .copy_from(&generator_drift(pattern, &graph.laplacian(), gains.mu));
            m
        })
        .collect();

    let mut initial = Vector::zeros(layout.total());
    for i in 0..n_agents {
        initial.rows_range_mut(layout.x(i)).copy_from(&init.x0[i]);
        if let Some(xi) = layout.xi(i) {
            initial.rows_range_mut(xi).copy_from(&xi0[i]);
        }
        initial.rows_range_mut(layout.w(i)).copy_from(&w0[i]);
    }

    Ok(ClosedLoopSystem {
        mode,
        reference: reference_trajectory(pattern, &w0),
        output_maps: agents.iter().map(|a| a.c.clone()).collect(),
        layout,
        drifts,
        input,
        disturbance: disturbance.clone(),
        schedule: schedule.clone(),
        initial,
        warnings,
    })
}

/// `A - K3 C`, the autonomous dynamics of the estimation error `x - xi`.
pub fn observer_error_matrix(agent: &AgentModel, k3: &Mat) -> Mat {
    &agent.a - k3 * &agent.c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    /// Classical fourth-order Runge–Kutta.
    #[default]
    Rk4,
    /// Matrix-exponential propagation on every step (constant disturbances only).
    ExactFlow,
}

impl ClosedLoopSystem {
    pub fn mode(&self) -> LoopMode {
        self.mode
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn drift(&self, graph: usize) -> &Mat {
        &self.drifts[graph]
    }

    pub fn input_matrix(&self) -> &Mat {
        &self.input
    }

    pub fn schedule(&self) -> &SwitchingSchedule {
        &self.schedule
    }

    pub fn disturbance(&self) -> &DisturbanceSignal {
        &self.disturbance
    }

    pub fn reference(&self) -> &ReferenceTrajectory {
        &self.reference
    }

    pub fn initial_state(&self) -> &Vector {
        &self.initial
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Right-hand side on graph `graph` at time `t`.
    pub fn derivative(&self, graph: usize, t: f64, state: &Vector) -> Vector {
        let mut dx = &self.drifts[graph] * state;
        if self.input.ncols() > 0 && !self.disturbance.is_zero() {
            dx += &self.input * self.disturbance.eval(t);
        }
        dx
    }

    /// One classical Runge–Kutta step with `d(t)` sampled at stage times.
    pub fn rk4_step(&self, graph: usize, t: f64, state: &Vector, h: f64) -> Vector {
        let k1 = self.derivative(graph, t, state);
        let k2 = self.derivative(graph, t + 0.5 * h, &(state + &k1 * (0.5 * h)));
        let k3 = self.derivative(graph, t + 0.5 * h, &(state + &k2 * (0.5 * h)));
        let k4 = self.derivative(graph, t + h, &(state + &k3 * h));
        state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    /// Exact propagator `(Phi, offset)` for one step of length `h` with a
    /// constant disturbance: `x(t + h) = Phi x(t) + offset`.
    pub fn exact_step(&self, graph: usize, h: f64) -> Result<(Mat, Vector), SimError> {
        let d = match &self.disturbance {
            DisturbanceSignal::Zero { .. } => None,
            DisturbanceSignal::Constant(v) => Some(v.clone()),
            _ if self.disturbance.is_zero() => None,
            _ => return Err(SimError::UnsupportedDisturbance),
        };
        let n = self.layout.total();
        match d {
            None => Ok((expm(&self.drifts[graph], h)?, Vector::zeros(n))),
            Some(d) => {
                // augmented generator [[M, E d], [0, 0]]
                let mut aug = Mat::zeros(n + 1, n + 1);
                aug.view_mut((0, 0), (n, n)).copy_from(&self.drifts[graph]);
                aug.view_mut((0, n), (n, 1)).copy_from(&(&self.input * d));
                let e = expm(&aug, h)?;
                Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, 1)).column(0).into_owned()))
            }
        }
    }

    /// Integrates over `[0, horizon]`. The nominal step `step` is shrunk on
    /// each switching interval so that switch instants land on the grid.
    pub fn integrate(&self, horizon: f64, step: f64, method: Integrator) -> Result<Trajectory, SimError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(SimError::BadParameters(format!("horizon must be positive, got {horizon}")));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(SimError::BadParameters(format!("step must be positive, got {step}")));
        }
        let mut traj = Trajectory::new(self);
        let mut state = self.initial.clone();
        traj.record(self, 0.0, &state, 0.0)?;
        let mut cache: HashMap<(usize, u64), (Mat, Vector)> = HashMap::new();

        for (start, end, graph) in self.schedule.intervals(horizon) {
            let len = end - start;
            let steps = ((len / step) - 1e-9).ceil().max(1.0) as usize;
            let h = len / steps as f64;
            for j in 1..=steps {
                let t_prev = start + (j - 1) as f64 * h;
                let t = if j == steps { end } else { start + j as f64 * h };
                state = match method {
                    Integrator::Rk4 => self.rk4_step(graph, t_prev, &state, h),
                    Integrator::ExactFlow => {
                        let key = (graph, h.to_bits());
                        if !cache.contains_key(&key) {
                            cache.insert(key, self.exact_step(graph, h)?);
                        }
                        let (phi, offset) = &cache[&key];
                        phi * &state + offset
                    }
                };
                if state.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
                    return Err(SimError::NonFiniteState { t });
                }
                traj.record(self, t, &state, h)?;
            }
        }
        Ok(traj)
    }
}

/// Fourth-order Runge–Kutta for a homogeneous LTI system; returns the
/// state at every grid point including the initial one.
pub fn integrate_lti(m: &Mat, x0: &Vector, horizon: f64, step: f64) -> Vec<Vector> {
    let steps = ((horizon / step) - 1e-9).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    out.push(x.clone());
    for _ in 0..steps {
        let k1 = m * &x;
        let k2 = m * (&x + &k1 * (0.5 * h));
        let k3 = m * (&x + &k2 * (0.5 * h));
        let k4 = m * (&x + &k3 * h);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push(x.clone());
    }
    out
}

/// Sampled closed-loop response.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mode: LoopMode,
    pub layout: StateLayout,
    pub output_dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    /// Per sample, agent outputs concatenated (`N * l` entries).
    pub outputs: Vec<Vec<f64>>,
    /// Per sample, `y0(t)`.
    pub reference: Vec<Vec<f64>>,
    /// Per sample, `y_i - y0` concatenated.
    pub errors: Vec<Vec<f64>>,
    /// Per sample, running trapezoidal `∫ ||e_i||^2` for each agent.
    pub error_energy: Vec<Vec<f64>>,
    /// Per sample, running trapezoidal `∫ ||d||^2`.
    pub disturbance_energy: Vec<f64>,
    pub disturbance_zero: bool,
    last_error_sq: Vec<f64>,
    last_disturbance_sq: f64,
}

impl Trajectory {
    fn new(sys: &ClosedLoopSystem) -> Self {
        Self {
            mode: sys.mode,
            layout: sys.layout.clone(),
            output_dim: sys.reference.c0.nrows(),
            times: Vec::new(),
            states: Vec::new(),
            outputs: Vec::new(),
            reference: Vec::new(),
            errors: Vec::new(),
            error_energy: Vec::new(),
            disturbance_energy: Vec::new(),
            disturbance_zero: sys.disturbance.is_zero(),
            last_error_sq: Vec::new(),
            last_disturbance_sq: 0.0,
        }
    }

    fn record(&mut self, sys: &ClosedLoopSystem, t: f64, state: &Vector, h: f64) -> Result<(), SimError> {
        let y0 = sys.reference.at(t)?;
        let n = self.layout.agent_count();
        let mut outputs = Vec::with_capacity(n * self.output_dim);
        let mut errors = Vec::with_capacity(n * self.output_dim);
        let mut error_sq = Vec::with_capacity(n);
        for i in 0..n {
            let y = &sys.output_maps[i] * state.rows_range(self.layout.x(i));
            let e = &y - &y0;
            error_sq.push(e.norm_squared());
            outputs.extend(y.iter());
            errors.extend(e.iter());
        }
        let d_sq = if self.disturbance_zero { 0.0 } else { sys.disturbance.eval(t).norm_squared() };

        let energy = match self.error_energy.last() {
            None => vec![0.0; n],
            Some(prev) => prev
                .iter()
                .zip(self.last_error_sq.iter().zip(&error_sq))
                .map(|(acc, (a, b))| acc + 0.5 * h * (a + b))
                .collect(),
        };
        let d_energy = match self.disturbance_energy.last() {
            None => 0.0,
            Some(prev) => prev + 0.5 * h * (self.last_disturbance_sq + d_sq),
        };

        self.times.push(t);
        self.states.push(state.clone());
        self.outputs.push(outputs);
        self.reference.push(y0.iter().copied().collect());
        self.errors.push(errors);
        self.error_energy.push(energy);
        self.disturbance_energy.push(d_energy);
        self.last_error_sq = error_sq;
        self.last_disturbance_sq = d_sq;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn agent_count(&self) -> usize {
        self.layout.agent_count()
    }

    /// `||e_i||` at sample `k`.
    pub fn error_norm(&self, k: usize, agent: usize) -> f64 {
        let l = self.output_dim;
        self.errors[k][agent * l..(agent + 1) * l]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Stacked generator disagreement `w_i - w_av` at sample `k`.
    pub fn generator_disagreement(&self, k: usize) -> Vector {
        let n = self.layout.generator_count();
        let n0 = self.layout.pattern_dim();
        let state = &self.states[k];
        let mut avg = Vector::zeros(n0);
        for i in 0..n {
            avg += state.rows_range(self.layout.w(i));
        }
        if n > 0 {
            avg /= n as f64;
        }
        let mut out = Vector::zeros(n * n0);
        for i in 0..n {
            out.rows_mut(i * n0, n0)
                .copy_from(&(state.rows_range(self.layout.w(i)) - &avg));
        }
        out
    }

    /// Generator average `w_av` at sample `k`.
    pub fn generator_average(&self, k: usize) -> Vector {
        let n = self.layout.generator_count();
        let mut avg = Vector::zeros(self.layout.pattern_dim());
        for i in 0..n {
            avg += self.states[k].rows_range(self.layout.w(i));
        }
        if n > 0 {
            avg /= n as f64;
        }
        avg
    }
}
