//! Undirected communication graphs and dwell-time switching schedules.
//!
//! Nodes are 0-based inside the crate. Configuration files use 1-based
//! node labels; [`Graph::from_one_based`] does the conversion.

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use crate::numerics::{sym_eigen, Mat};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("edge ({0}, {1}) appears more than once")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) references a node outside 1..={2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("graph family is empty")]
    EmptyFamily,
    #[error("graph {index} has {found} nodes, expected {expected}")]
    NodeCountMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("schedule needs one active graph per switch time ({times} times, {active} indices)")]
    ScheduleLength { times: usize, active: usize },
    #[error("first switch time must be 0, found {0}")]
    FirstTimeNotZero(f64),
    #[error("switch gap {gap} at t={at} is shorter than the dwell floor {dwell}")]
    DwellViolation { at: f64, gap: f64, dwell: f64 },
    #[error("active graph index {0} is out of range")]
    BadIndex(usize),
    #[error("dwell floor must be positive and finite, found {0}")]
    BadDwell(f64),
}

/// Simple undirected graph with unit edge weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from 0-based edges. Edges are normalised to `(lo, hi)`.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i == j {
                return Err(TopologyError::SelfLoop(i + 1, j + 1));
            }
            if i >= n || j >= n {
                return Err(TopologyError::NodeOutOfRange(i + 1, j + 1, n));
            }
            let e = (i.min(j), i.max(j));
            if !seen.insert(e) {
                return Err(TopologyError::DuplicateEdge(i + 1, j + 1));
            }
            out.push(e);
        }
        Ok(Self { n, edges: out })
    }

    /// Builds a graph from 1-based edges, as written in scenario files.
    pub fn from_one_based(n: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i == 0 || j == 0) {
            return Err(TopologyError::NodeOutOfRange(i, j, n));
        }
        let shifted: Vec<_> = edges.iter().map(|&(i, j)| (i - 1, j - 1)).collect();
        Self::new(n, &shifted)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// 0-based normalised edge list.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// 1-based edge list, the form used in configuration files.
    pub fn edges_one_based(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&(i, j)| (i + 1, j + 1)).collect()
    }

    pub fn adjacency(&self) -> Mat {
        let mut a = Mat::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// `L = D - A`.
    pub fn laplacian(&self) -> Mat {
        let mut l = Mat::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
        }
        l
    }

    /// Algebraic connectivity (second-smallest Laplacian eigenvalue).
    /// Graphs with fewer than two nodes report 0.
    pub fn lambda2(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        // the Laplacian is symmetric by construction, so this cannot fail
        let (values, _) = sym_eigen(&self.laplacian()).expect("laplacian is symmetric");
        values[1]
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let mut neighbours = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            neighbours[i].push(j);
            neighbours[j].push(i);
        }
        let mut visited = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        visited[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &u in &neighbours[v] {
                if !visited[u] {
                    visited[u] = true;
                    count += 1;
                    queue.push_back(u);
                }
            }
        }
        count == self.n
    }
}

/// Piecewise-constant switching signal over a finite graph family.
///
/// Interval `k` is `[switch_times[k], switch_times[k + 1])`; the last
/// interval extends to infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSchedule {
    graphs: Vec<Graph>,
    switch_times: Vec<f64>,
    active: Vec<usize>,
    dwell: f64,
}

impl SwitchingSchedule {
    /// `active` holds 0-based indices into `graphs`.
    pub fn new(
        graphs: Vec<Graph>,
        switch_times: Vec<f64>,
        active: Vec<usize>,
        dwell: f64,
    ) -> Result<Self, TopologyError> {
        let first = graphs.first().ok_or(TopologyError::EmptyFamily)?;
        let n = first.node_count();
        if let Some((index, g)) = graphs.iter().enumerate().find(|(_, g)| g.node_count() != n) {
            return Err(TopologyError::NodeCountMismatch {
                index,
                expected: n,
                found: g.node_count(),
            });
        }
        if !(dwell > 0.0 && dwell.is_finite()) {
            return Err(TopologyError::BadDwell(dwell));
        }
        if switch_times.len() != active.len() || switch_times.is_empty() {
            return Err(TopologyError::ScheduleLength {
                times: switch_times.len(),
                active: active.len(),
            });
        }
        if switch_times[0] != 0.0 {
            return Err(TopologyError::FirstTimeNotZero(switch_times[0]));
        }
        for w in switch_times.windows(2) {
            let gap = w[1] - w[0];
            // relative slack so that unrolled periodic schedules are accepted
            if !(gap >= dwell * (1.0 - 1e-12)) {
                return Err(TopologyError::DwellViolation {
                    at: w[1],
                    gap,
                    dwell,
                });
            }
        }
        if let Some(&bad) = active.iter().find(|&&k| k >= graphs.len()) {
            return Err(TopologyError::BadIndex(bad));
        }
        Ok(Self {
            graphs,
            switch_times,
            active,
            dwell,
        })
    }

    /// A single graph active forever.
    pub fn fixed(graph: Graph) -> Self {
        Self {
            graphs: vec![graph],
            switch_times: vec![0.0],
            active: vec![0],
            dwell: f64::INFINITY,
        }
    }

    /// Cycles through `order` (0-based graph indices), switching every
    /// `period` seconds, unrolled until `horizon`.
    pub fn periodic(
        graphs: Vec<Graph>,
        order: &[usize],
        period: f64,
        horizon: f64,
    ) -> Result<Self, TopologyError> {
        if order.is_empty() {
            return Err(TopologyError::ScheduleLength {
                times: 0,
                active: 0,
            });
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(TopologyError::BadDwell(period));
        }
        let mut times = Vec::new();
        let mut active = Vec::new();
        let mut k = 0usize;
        loop {
            let t = k as f64 * period;
            if k > 0 && t >= horizon {
                break;
            }
            times.push(t);
            active.push(order[k % order.len()]);
            k += 1;
        }
        Self::new(graphs, times, active, period)
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn switch_times(&self) -> &[f64] {
        &self.switch_times
    }

    pub fn active_indices(&self) -> &[usize] {
        &self.active
    }

    pub fn dwell(&self) -> f64 {
        self.dwell
    }

    pub fn node_count(&self) -> usize {
        self.graphs[0].node_count()
    }

    /// 0-based index of the graph active at time `t` (right-continuous).
    pub fn sigma_at(&self, t: f64) -> usize {
        let k = self.switch_times.partition_point(|&s| s <= t);
        self.active[k.saturating_sub(1)]
    }

    /// Splits `[0, horizon]` into `(start, end, graph)` pieces on which the
    /// topology is constant.
    pub fn intervals(&self, horizon: f64) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::new();
        for (k, &start) in self.switch_times.iter().enumerate() {
            if start >= horizon {
                break;
            }
            let end = self
                .switch_times
                .get(k + 1)
                .copied()
                .unwrap_or(f64::INFINITY)
                .min(horizon);
            out.push((start, end, self.active[k]));
        }
        out
    }

    /// `min_p lambda2(L_p)` over the whole family.
    pub fn lambda_min(&self) -> f64 {
        self.graphs
            .iter()
            .map(Graph::lambda2)
            .fold(f64::INFINITY, f64::min)
    }
}
