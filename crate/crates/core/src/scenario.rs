//! Declarative scenario files (TOML) and their conversion into models.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentModel, DisturbanceSignal, PatternModel, ToleranceConfig};
use crate::numerics::{Mat, Vector};
use crate::serde_mat::from_rows;
use crate::sim::InitialConditions;
use crate::synthesis::{CertificatePins, ConditionSet, ControllerKind, MuChoice, SynthesisRequest, DEFAULT_SEARCH_BUDGET};
use crate::topology::{Graph, SwitchingSchedule};

/// Source text of the built-in eight-agent scenario.
pub const EXAMPLE_TOML: &str = include_str!("../scenarios/example.toml");

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub pattern: PatternSpec,
    pub agents: Vec<AgentSpec>,
    pub topology: TopologySpec,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    pub controller: ControllerSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub a0: Rows,
    pub c0: Rows,
}

/// One agent class; `ids` lists the 1-based nodes that share the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub ids: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub d: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pin_q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pin_p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub nodes: usize,
    /// Edge lists with 1-based endpoints.
    pub graphs: Vec<Vec<[usize; 2]>>,
    pub schedule: ScheduleSpec,
}

/// Graph indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Fixed {
        #[serde(default = "one")]
        graph: usize,
    },
    Periodic {
        order: Vec<usize>,
        period: f64,
    },
    Explicit {
        times: Vec<f64>,
        active: Vec<usize>,
        dwell: f64,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    #[default]
    Zero,
    /// `amplitude * |sin(frequency t)|` in every channel.
    AbsSine { amplitude: f64, frequency: f64 },
    Constant { value: Vec<f64> },
    Piecewise { times: Vec<f64>, values: Rows },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateInit {
    #[default]
    Zero,
    /// Independent uniform draws from `[low, high]` using the scenario seed.
    Uniform { low: f64, high: f64 },
    Explicit { values: Rows },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub x0: StateInit,
    /// Observer states; zero when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi0: Option<Rows>,
    /// Generator states; zero when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<Rows>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    State,
    Output,
}

impl From<Structure> for ControllerKind {
    fn from(s: Structure) -> Self {
        match s {
            Structure::State => ControllerKind::StateFeedback,
            Structure::Output => ControllerKind::OutputFeedback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub structure: Structure,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Fixed coupling gain; chosen from the generator bound when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default = "default_mu_margin")]
    pub mu_margin: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
}

fn default_mu_margin() -> f64 {
    0.5
}

fn default_budget() -> usize {
    DEFAULT_SEARCH_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_horizon() -> f64 {
    200.0
}

fn default_step() -> f64 {
    0.01
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            step: default_step(),
            seed: 0,
        }
    }
}

/// Validated, ready-to-use scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltScenario {
    pub name: String,
    pub agents: Vec<AgentModel>,
    pub pins: Vec<CertificatePins>,
    pub pattern: PatternModel,
    pub schedule: SwitchingSchedule,
    pub disturbance: DisturbanceSignal,
    pub initial: InitialConditions,
    pub kind: ControllerKind,
    pub gamma: Option<f64>,
    pub mu: MuChoice,
    pub budget: usize,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    pub tolerances: ToleranceConfig,
}

/// How a gain set is requested from a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// State feedback under the full gamma conditions.
    State,
    /// Output feedback under the full gamma conditions.
    Output,
    /// Scenario controller structure under the nominal conditions only.
    Relaxed,
    /// Scenario structure, full conditions with a per-agent fallback to the
    /// nominal ones, and the scenario's certificate pins.
    Reproduce,
}

impl BuiltScenario {
    /// Synthesis request for `mode`. Pins are honoured unless `use_pins` is
    /// false; `gamma` overrides the scenario value.
    pub fn request(&self, mode: RunMode, use_pins: bool, gamma: Option<f64>) -> SynthesisRequest {
        let (kind, conditions, relaxed_fallback) = match mode {
            RunMode::State => (ControllerKind::StateFeedback, ConditionSet::Full, false),
            RunMode::Output => (ControllerKind::OutputFeedback, ConditionSet::Full, false),
            RunMode::Relaxed => (self.kind, ConditionSet::Relaxed, false),
            RunMode::Reproduce => (self.kind, ConditionSet::Full, true),
        };
        SynthesisRequest {
            kind,
            conditions,
            gamma: gamma.or(self.gamma).or(Some(4.0)),
            relaxed_fallback,
            pins: if use_pins { self.pins.clone() } else { Vec::new() },
            budget: self.budget,
            mu: self.mu,
            bisect: None,
        }
    }
}

fn matrix(field: String, rows: &Rows) -> Result<Mat, ScenarioError> {
    from_rows(rows).map_err(|m| invalid(field, m))
}

fn vectors(field: &str, rows: &Rows, count: usize, dims: &[usize]) -> Result<Vec<Vector>, ScenarioError> {
    if rows.len() != count {
        return Err(invalid(field, format!("expected {count} entries, found {}", rows.len())));
    }
    rows.iter()
        .zip(dims)
        .enumerate()
        .map(|(i, (r, &n))| {
            if r.len() != n {
                return Err(invalid(format!("{field}[{}]", i + 1), format!("expected {n} values, found {}", r.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("{field}[{}]", i + 1), "non-finite value"));
            }
            Ok(Vector::from_column_slice(r))
        })
        .collect()
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    /// The built-in eight-agent example.
    pub fn example() -> Self {
        Self::from_toml_str(EXAMPLE_TOML).expect("built-in scenario parses")
    }

    pub fn agent_count(&self) -> usize {
        self.topology.nodes
    }

    pub fn build(&self) -> Result<BuiltScenario, ScenarioError> {
        let tol = self.tolerances;
        tol.validate().map_err(|e| invalid("tolerances", e))?;
        let n = self.topology.nodes;
        if n == 0 {
            return Err(invalid("topology.nodes", "must be at least 1"));
        }

        let pattern = PatternModel::new(
            matrix("pattern.a0".into(), &self.pattern.a0)?,
            matrix("pattern.c0".into(), &self.pattern.c0)?,
        )
        .map_err(|e| invalid("pattern", e))?;

        let mut slots: Vec<Option<(AgentModel, CertificatePins)>> = vec![None; n];
        for (k, spec) in self.agents.iter().enumerate() {
            let f = |m: &str| format!("agents[{}].{m}", k + 1);
            let a = matrix(f("a"), &spec.a)?;
            let b = matrix(f("b"), &spec.b)?;
            let c = matrix(f("c"), &spec.c)?;
            let d = matrix(f("d"), &spec.d)?;
            if spec.ids.is_empty() {
                return Err(invalid(f("ids"), "lists no agents"));
            }
            for &id in &spec.ids {
                if id == 0 || id > n {
                    return Err(invalid(f("ids"), format!("agent {id} is outside 1..={n}")));
                }
                if slots[id - 1].is_some() {
                    return Err(invalid(f("ids"), format!("agent {id} is defined twice")));
                }
                let label = match &spec.label {
                    Some(l) if spec.ids.len() == 1 => l.clone(),
                    Some(l) => format!("{l} {id}"),
                    None => format!("agent {id}"),
                };
                let model = AgentModel::new(label, a.clone(), b.clone(), c.clone(), d.clone())
                    .map_err(|e| invalid(f("a"), e))?;
                let pins = CertificatePins {
                    q: spec.pin_q.clone(),
                    p: spec.pin_p.clone(),
                };
                for (name, pin) in [("pin_q", &pins.q), ("pin_p", &pins.p)] {
                    if let Some(v) = pin {
                        if v.len() != model.state_dim() || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                            return Err(invalid(f(name), format!("needs {} positive values", model.state_dim())));
                        }
                    }
                }
                slots[id - 1] = Some((model, pins));
            }
        }
        let mut agents = Vec::with_capacity(n);
        let mut pins = Vec::with_capacity(n);
        for (i, slot) in slots.into_iter().enumerate() {
            let (m, p) = slot.ok_or_else(|| invalid("agents", format!("agent {} has no model", i + 1)))?;
            agents.push(m);
            pins.push(p);
        }

        let graphs = self
            .topology
            .graphs
            .iter()
            .enumerate()
            .map(|(k, edges)| {
                let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
                Graph::from_one_based(n, &pairs).map_err(|e| invalid(format!("topology.graphs[{}]", k + 1), e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if graphs.is_empty() {
            return Err(invalid("topology.graphs", "no graphs given"));
        }
        let sim = &self.simulation;
        if !(sim.horizon > 0.0 && sim.horizon.is_finite()) {
            return Err(invalid("simulation.horizon", "must be positive"));
        }
        if !(sim.step > 0.0 && sim.step.is_finite()) {
            return Err(invalid("simulation.step", "must be positive"));
        }
        let zero_based = |field: &str, idx: &[usize]| -> Result<Vec<usize>, ScenarioError> {
            idx.iter()
                .map(|&g| {
                    if g == 0 || g > graphs.len() {
                        Err(invalid(field, format!("graph {g} is outside 1..={}", graphs.len())))
                    } else {
                        Ok(g - 1)
                    }
                })
                .collect()
        };
        let schedule = match &self.topology.schedule {
            ScheduleSpec::Fixed { graph } => {
                let g = zero_based("topology.schedule.graph", &[*graph])?[0];
                SwitchingSchedule::fixed(graphs[g].clone())
            }
            ScheduleSpec::Periodic { order, period } => {
                let order = zero_based("topology.schedule.order", order)?;
                SwitchingSchedule::periodic(graphs, &order, *period, sim.horizon)
                    .map_err(|e| invalid("topology.schedule", e))?
            }
            ScheduleSpec::Explicit { times, active, dwell } => {
                let active = zero_based("topology.schedule.active", active)?;
                SwitchingSchedule::new(graphs, times.clone(), active, *dwell)
                    .map_err(|e| invalid("topology.schedule", e))?
            }
        };

        let q = agents[0].disturbance_dim();
        if let Some(a) = agents.iter().find(|a| a.disturbance_dim() != q) {
            return Err(invalid("agents", format!("{} has a different disturbance dimension", a.label)));
        }
        let disturbance = match &self.disturbance {
            DisturbanceSpec::Zero => DisturbanceSignal::Zero { dim: q },
            DisturbanceSpec::AbsSine { amplitude, frequency } => DisturbanceSignal::AbsSine {
                amplitude: *amplitude,
                frequency: *frequency,
                dim: q,
            },
            DisturbanceSpec::Constant { value } => DisturbanceSignal::Constant(Vector::from_column_slice(value)),
            DisturbanceSpec::Piecewise { times, values } => DisturbanceSignal::Piecewise {
                times: times.clone(),
                values: values.iter().map(|v| Vector::from_column_slice(v)).collect(),
            },
        };
        disturbance.validate().map_err(|e| invalid("disturbance", e))?;
        if disturbance.dim() != q {
            return Err(invalid("disturbance", format!("has {} channels, agents expect {q}", disturbance.dim())));
        }

        let dims: Vec<usize> = agents.iter().map(AgentModel::state_dim).collect();
        let x0 = match &self.initial.x0 {
            StateInit::Zero => dims.iter().map(|&d| Vector::zeros(d)).collect(),
            StateInit::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && *low >= 0.0 && low <= high) {
                    return Err(invalid("initial.x0", "needs 0 <= low <= high"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
                dims.iter()
                    .map(|&d| Vector::from_fn(d, |_, _| rng.gen_range(*low..=*high)))
                    .collect()
            }
            StateInit::Explicit { values } => vectors("initial.x0", values, n, &dims)?,
        };
        let xi0 = match &self.initial.xi0 {
            None => Vec::new(),
            Some(rows) => vectors("initial.xi0", rows, n, &dims)?,
        };
        let w0 = match &self.initial.w0 {
            None => None,
            Some(rows) => Some(vectors("initial.w0", rows, n, &vec![pattern.dim(); n])?),
        };

        let ctl = &self.controller;
        if let Some(g) = ctl.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(invalid("controller.gamma", "must be positive"));
            }
        }
        let mu = match ctl.mu {
            Some(mu) if mu > 0.0 && mu.is_finite() => MuChoice::Fixed(mu),
            Some(_) => return Err(invalid("controller.mu", "must be positive")),
            None => MuChoice::Auto { margin: ctl.mu_margin },
        };

        Ok(BuiltScenario {
            name: self.name.clone(),
            agents,
            pins,
            pattern,
            schedule,
            disturbance,
            initial: InitialConditions { x0, xi0, w0 },
            kind: ctl.structure.into(),
            gamma: ctl.gamma,
            mu,
            budget: ctl.budget,
            horizon: sim.horizon,
            step: sim.step,
            seed: sim.seed,
            tolerances: tol,
        })
    }
}
