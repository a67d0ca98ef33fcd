//! Allocation probabilities of algorithms over nodes and their dynamics.
//!
//! Row `j` of `pi` is the probability of hosting algorithm `j` on each
//! node. Initialization multiplies an execution-time factor `a1` by a
//! communication factor `a2` and normalizes the row. Each later step adds a
//! zero-sum weight row derived from processing power over upstream
//! communication time. `peak` keeps the entrywise maximum over every
//! iterate and is what the capability subspace reads.
//!
//! Invariants after every operation:
//! * each row sums to 1 (within 1e-9);
//! * entries of incapable nodes are exactly 0;
//! * every row has a positive entry;
//! * `peak >= pi` entrywise and never decreases.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{Algorithm, TaskCatalog};
use crate::graph::{GraphError, Vertex};
use crate::network::{NodeId, TaskId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CapabilityError {
    #[error("algorithm {alg} of task {task} has no capable node")]
    NoCapableNode { task: String, alg: String },
    #[error("every candidate entry for algorithm {alg} of task {task} is zero")]
    DegenerateRow { task: String, alg: String },
    #[error("execution time row for algorithm {alg} of task {task} has {got} entries, expected {expected}")]
    ShapeMismatch {
        task: String,
        alg: String,
        got: usize,
        expected: usize,
    },
    #[error("invalid execution time {value} for algorithm {alg} of task {task}")]
    BadExecTime {
        task: String,
        alg: String,
        value: f64,
    },
    #[error("round-trip matrix must be {0}x{0}")]
    BadRoundTrip(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Everything `pi_init` needs besides the catalog and the round-trip times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CapabilityInputs {
    /// Average execution time per node; `None` marks an incapable node.
    /// Virtual algorithms default to 0 on every node; real algorithms
    /// without an entry have no capable node.
    pub exec: BTreeMap<(TaskId, Algorithm), Vec<Option<f64>>>,
    /// Fixed hosts of real algorithms, used in place of the row argmax
    /// when summing upstream communication.
    pub placement: BTreeMap<(TaskId, Algorithm), NodeId>,
    /// Replacement values for the execution-time factor.
    pub a1: BTreeMap<(TaskId, Algorithm, NodeId), f64>,
    /// Replacement values for the communication factor.
    pub a2: BTreeMap<(TaskId, Algorithm, NodeId), f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynamicsConfig {
    /// Scale of the weight update applied per step.
    pub step: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            step: 0.1,
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Convergence {
    pub iterations: usize,
    pub converged: bool,
    /// Largest entrywise change in the final step.
    pub last_change: f64,
}

/// Factors that produced a row at initialization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowTrace {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Normalizing constant `c_j`.
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct RowInfo {
    task: TaskId,
    alg: Algorithm,
    preds: Vec<usize>,
    placed: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
struct TaskRows {
    base: usize,
    real_count: usize,
    order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapabilityState {
    nodes: usize,
    rows: Vec<RowInfo>,
    tasks: Vec<TaskRows>,
    exec: Vec<Vec<f64>>,
    capable: Vec<Vec<bool>>,
    round_trip: Vec<Vec<f64>>,
    pi: Vec<Vec<f64>>,
    peak: Vec<Vec<f64>>,
    trace: Vec<RowTrace>,
    iterations: usize,
}

/// `1 - x_i / sum(x)` over capable entries, with `x_i = 0` mapping to 1.
fn complement_share(values: &[f64], capable: &[bool]) -> Vec<f64> {
    let total: f64 = values
        .iter()
        .zip(capable)
        .filter(|(_, &c)| c)
        .map(|(v, _)| v)
        .sum();
    values
        .iter()
        .zip(capable)
        .map(|(&v, &c)| {
            if !c {
                0.0
            } else if v != 0.0 {
                1.0 - v / total
            } else {
                1.0
            }
        })
        .collect()
}

/// Lowest index among the maximal entries.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Builds the initial state.
pub fn pi_init(
    catalog: &TaskCatalog,
    nodes: usize,
    round_trip: &[Vec<f64>],
    inputs: &CapabilityInputs,
) -> Result<CapabilityState, CapabilityError> {
    if round_trip.len() != nodes || round_trip.iter().any(|r| r.len() != nodes) {
        return Err(CapabilityError::BadRoundTrip(nodes));
    }
    let mut rows = Vec::new();
    let mut tasks = Vec::new();
    let mut exec = Vec::new();
    let mut capable = Vec::new();
    for (tid, spec) in catalog.ids().zip(catalog.tasks()) {
        let base = rows.len();
        let n = spec.real_count() as usize;
        let row_of = |alg: Algorithm| match alg {
            Algorithm::Top => base,
            Algorithm::Real(i) => base + i as usize,
            Algorithm::Bottom => base + n + 1,
        };
        let all: Vec<Algorithm> = std::iter::once(Algorithm::Top)
            .chain((1..=n as u32).map(Algorithm::Real))
            .chain(std::iter::once(Algorithm::Bottom))
            .collect();
        for &alg in &all {
            let preds = spec
                .predecessors(alg)?
                .into_iter()
                .map(|p| row_of(Algorithm::Real(p)))
                .collect();
            let name = || (spec.name.clone(), spec.label(alg).to_string());
            let times = match inputs.exec.get(&(tid, alg)) {
                Some(t) => {
                    if t.len() != nodes {
                        let (task, alg) = name();
                        return Err(CapabilityError::ShapeMismatch {
                            task,
                            alg,
                            got: t.len(),
                            expected: nodes,
                        });
                    }
                    t.clone()
                }
                None if alg.is_virtual() => vec![Some(0.0); nodes],
                None => vec![None; nodes],
            };
            if let Some(&value) = times
                .iter()
                .flatten()
                .find(|v| !(v.is_finite() && **v >= 0.0))
            {
                let (task, alg) = name();
                return Err(CapabilityError::BadExecTime { task, alg, value });
            }
            if times.iter().all(Option::is_none) {
                let (task, alg) = name();
                return Err(CapabilityError::NoCapableNode { task, alg });
            }
            capable.push(times.iter().map(Option::is_some).collect());
            exec.push(times.iter().map(|t| t.unwrap_or(0.0)).collect());
            rows.push(RowInfo {
                task: tid,
                alg,
                preds,
                placed: match alg {
                    Algorithm::Real(_) => inputs.placement.get(&(tid, alg)).copied(),
                    _ => None,
                },
            });
        }
        let order = spec.algorithms_in_order().into_iter().map(row_of).collect();
        tasks.push(TaskRows {
            base,
            real_count: n,
            order,
        });
    }

    let mut state = CapabilityState {
        nodes,
        pi: vec![vec![0.0; nodes]; rows.len()],
        peak: vec![vec![0.0; nodes]; rows.len()],
        trace: vec![
            RowTrace {
                a1: Vec::new(),
                a2: Vec::new(),
                kappa: Vec::new(),
                c: 0.0,
            };
            rows.len()
        ],
        rows,
        tasks,
        exec,
        capable,
        round_trip: round_trip.to_vec(),
        iterations: 0,
    };

    for t in 0..state.tasks.len() {
        for pos in 0..state.tasks[t].order.len() {
            let row = state.tasks[t].order[pos];
            state.init_row(row, catalog, inputs)?;
        }
    }
    state.peak = state.pi.clone();
    Ok(state)
}

impl CapabilityState {
    fn init_row(
        &mut self,
        row: usize,
        catalog: &TaskCatalog,
        inputs: &CapabilityInputs,
    ) -> Result<(), CapabilityError> {
        let info = &self.rows[row];
        let capable = &self.capable[row];
        let kappa: Vec<f64> = (0..self.nodes)
            .map(|i| self.upstream_time(row, i))
            .collect();
        let mut a1 = complement_share(&self.exec[row], capable);
        let mut a2 = complement_share(&kappa, capable);
        for i in 0..self.nodes {
            let key = (info.task, info.alg, NodeId(i));
            if let Some(&v) = inputs.a1.get(&key) {
                a1[i] = v;
            }
            if let Some(&v) = inputs.a2.get(&key) {
                a2[i] = v;
            }
        }
        let capable_count = capable.iter().filter(|&&c| c).count();
        let raw: Vec<f64> = if capable_count == 1 {
            // a lone capable node takes the whole row regardless of its factors
            capable.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
        } else {
            (0..self.nodes)
                .map(|i| if capable[i] { a1[i] * a2[i] } else { 0.0 })
                .collect()
        };
        let total: f64 = raw.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            let spec = catalog.task(info.task);
            return Err(CapabilityError::DegenerateRow {
                task: spec.name.clone(),
                alg: spec.label(info.alg).to_string(),
            });
        }
        let c = 1.0 / total;
        self.pi[row] = raw.iter().map(|x| x * c).collect();
        self.trace[row] = RowTrace { a1, a2, kappa, c };
        Ok(())
    }

    /// Node hosting `row` for communication purposes: its fixed placement
    /// if any, otherwise the argmax of its current probabilities.
    fn host(&self, row: usize) -> usize {
        match self.rows[row].placed {
            Some(node) => node.0,
            None => argmax(&self.pi[row]),
        }
    }

    /// Total round-trip time between `node` and the hosts of every
    /// upstream algorithm of `row`.
    fn upstream_time(&self, row: usize, node: usize) -> f64 {
        self.rows[row]
            .preds
            .iter()
            .map(|&p| self.round_trip[node][self.host(p)])
            .sum()
    }

    fn omega_row(&self, row: usize, step: f64) -> Vec<f64> {
        let capable = &self.capable[row];
        let count = capable.iter().filter(|&&c| c).count();
        let mut omega = vec![0.0; self.nodes];
        if count <= 1 || step == 0.0 {
            return omega;
        }
        let raw: Vec<f64> = (0..self.nodes)
            .map(|i| {
                if !capable[i] {
                    return 0.0;
                }
                let exec = self.exec[row][i];
                let power = if exec > 0.0 { 1.0 / exec } else { 1.0 };
                let upstream = self.upstream_time(row, i);
                if upstream > 0.0 {
                    power / upstream
                } else {
                    power
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        let mean_share = 1.0 / count as f64;
        for i in 0..self.nodes {
            if capable[i] {
                omega[i] = step * (raw[i] / total - mean_share);
            }
        }
        omega
    }

    fn apply(&mut self, row: usize, omega: &[f64]) -> f64 {
        let capable = &self.capable[row];
        let moved: Vec<f64> = (0..self.nodes)
            .map(|i| {
                if capable[i] {
                    (self.pi[row][i] + omega[i]).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = moved.iter().sum();
        let mut change = 0.0f64;
        for i in 0..self.nodes {
            let next = moved[i] / total;
            change = change.max((next - self.pi[row][i]).abs());
            self.pi[row][i] = next;
            self.peak[row][i] = self.peak[row][i].max(next);
        }
        change
    }

    /// The weight matrix for the current probabilities, one row per
    /// algorithm. Every row sums to zero.
    pub fn omega(&self, step: f64) -> Vec<Vec<f64>> {
        (0..self.rows.len())
            .map(|r| self.omega_row(r, step))
            .collect()
    }

    /// One update of every row. Rows are visited in dependency order so
    /// each row sees the updated hosts of its upstream algorithms.
    /// Returns the largest entrywise change.
    pub fn step(&mut self, step: f64) -> f64 {
        let mut change = 0.0f64;
        for t in 0..self.tasks.len() {
            for pos in 0..self.tasks[t].order.len() {
                let row = self.tasks[t].order[pos];
                let omega = self.omega_row(row, step);
                change = change.max(self.apply(row, &omega));
            }
        }
        self.iterations += 1;
        change
    }

    /// Iterates until the largest change drops below `tol` or `max_iter`
    /// steps have run.
    pub fn pi_limit(&mut self, cfg: &DynamicsConfig) -> Convergence {
        let mut last_change = 0.0;
        for done in 1..=cfg.max_iter {
            last_change = self.step(cfg.step);
            if last_change < cfg.tol {
                return Convergence {
                    iterations: done,
                    converged: true,
                    last_change,
                };
            }
        }
        Convergence {
            iterations: cfg.max_iter,
            converged: false,
            last_change,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn row_index(&self, task: TaskId, alg: Algorithm) -> Option<usize> {
        let t = self.tasks.get(task.0)?;
        match alg {
            Algorithm::Top => Some(t.base),
            Algorithm::Real(i) if i >= 1 && i as usize <= t.real_count => Some(t.base + i as usize),
            Algorithm::Real(_) => None,
            Algorithm::Bottom => Some(t.base + t.real_count + 1),
        }
    }

    pub fn row_key(&self, row: usize) -> (TaskId, Algorithm) {
        (self.rows[row].task, self.rows[row].alg)
    }

    pub fn pi(&self) -> &[Vec<f64>] {
        &self.pi
    }

    /// Running entrywise maximum of every iterate.
    pub fn peak(&self) -> &[Vec<f64>] {
        &self.peak
    }

    pub fn capable(&self) -> &[Vec<bool>] {
        &self.capable
    }

    pub fn exec_times(&self) -> &[Vec<f64>] {
        &self.exec
    }

    pub fn trace(&self, task: TaskId, alg: Algorithm) -> Option<&RowTrace> {
        self.row_index(task, alg).map(|r| &self.trace[r])
    }

    pub fn pi_row(&self, task: TaskId, alg: Algorithm) -> Option<&[f64]> {
        self.row_index(task, alg).map(|r| self.pi[r].as_slice())
    }

    /// Peak allocation probability of `alg` on `node`; 0 exactly when the
    /// node never had positive probability.
    pub fn capital_pi(&self, task: TaskId, alg: Algorithm, node: NodeId) -> f64 {
        self.row_index(task, alg)
            .and_then(|r| self.peak[r].get(node.0).copied())
            .unwrap_or(0.0)
    }

    /// Node with the highest peak probability for `alg`, lowest index on ties.
    pub fn peak_host(&self, task: TaskId, alg: Algorithm) -> Option<NodeId> {
        self.row_index(task, alg)
            .map(|r| NodeId(argmax(&self.peak[r])))
    }

    /// Longest execution flow of `task` measured in round-trip time
    /// between the peak hosts of consecutive algorithms.
    pub fn overall_comm_bound(&self, catalog: &TaskCatalog, task: TaskId, dt: &[Vec<f64>]) -> f64 {
        let spec = catalog.task(task);
        let sl = &spec.lattice;
        let host = |v: Vertex| {
            self.peak_host(task, Algorithm::of_vertex(v))
                .expect("vertex belongs to the task")
                .0
        };
        let vertices = sl.lifted_vertices();
        let mut best = vec![f64::NEG_INFINITY; vertices.len()];
        for c in 0..sl.components().len() {
            best[sl.lifted_index(Vertex::Top(c))] = 0.0;
        }
        let order = std::iter::once_with(|| {
            (0..sl.components().len())
                .map(Vertex::Top)
                .collect::<Vec<_>>()
        })
        .flatten()
        .chain(sl.base().topological_order().into_iter().map(Vertex::Real));
        for u in order {
            let from = best[sl.lifted_index(u)];
            for v in sl.successors(u) {
                let cost = from + dt[host(u)][host(v)];
                let slot = &mut best[sl.lifted_index(v)];
                if cost > *slot {
                    *slot = cost;
                }
            }
        }
        (0..sl.components().len())
            .map(|c| best[sl.lifted_index(Vertex::Bottom(c))])
            .fold(0.0, f64::max)
    }

    /// The same bound computed through walk matrices: the (max, +) powers
    /// of the host-weighted adjacency matrix, restricted to the support of
    /// `AD^p` for `p = 1..=2l`.
    pub fn overall_comm_bound_by_powers(
        &self,
        catalog: &TaskCatalog,
        task: TaskId,
        dt: &[Vec<f64>],
    ) -> f64 {
        let spec = catalog.task(task);
        let sl = &spec.lattice;
        let vertices = sl.lifted_vertices();
        let size = vertices.len();
        let hosts: Vec<usize> = vertices
            .iter()
            .map(|&v| {
                self.peak_host(task, Algorithm::of_vertex(v))
                    .expect("vertex belongs to the task")
                    .0
            })
            .collect();
        let mut weight = vec![vec![f64::NEG_INFINITY; size]; size];
        for (u, v) in sl.edges() {
            let (i, j) = (sl.lifted_index(u), sl.lifted_index(v));
            weight[i][j] = dt[hosts[i]][hosts[j]];
        }
        let l = sl.longest_flow_len();
        let counts = sl.adjacency_powers(l);
        let mut walk = weight.clone();
        let mut bound = 0.0f64;
        for count in &counts {
            for c in 0..sl.components().len() {
                let (i, j) = (
                    sl.lifted_index(Vertex::Top(c)),
                    sl.lifted_index(Vertex::Bottom(c)),
                );
                if count.get(i, j) > 0 {
                    bound = bound.max(walk[i][j]);
                }
            }
            let mut next = vec![vec![f64::NEG_INFINITY; size]; size];
            for i in 0..size {
                for k in 0..size {
                    if walk[i][k] == f64::NEG_INFINITY {
                        continue;
                    }
                    for j in 0..size {
                        if weight[k][j] != f64::NEG_INFINITY {
                            next[i][j] = next[i][j].max(walk[i][k] + weight[k][j]);
                        }
                    }
                }
            }
            walk = next;
        }
        bound
    }

    /// Checks the row invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (r, row) in self.pi.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(format!("row {r} sums to {sum}"));
            }
            for (i, &x) in row.iter().enumerate() {
                if !self.capable[r][i] && x != 0.0 {
                    return Err(format!("row {r} has mass {x} on incapable node {i}"));
                }
                if !(0.0..=1.0).contains(&x) {
                    return Err(format!("row {r} entry {i} is {x}"));
                }
                if self.peak[r][i] < x {
                    return Err(format!("peak below current value at row {r}, node {i}"));
                }
            }
            if !row.iter().any(|&x| x > 0.0) {
                return Err(format!("row {r} has no positive entry"));
            }
        }
        Ok(())
    }
}
