//! Builds the allocation model from a scenario and runs the arrival loop.

use std::fmt;
use std::str::FromStr;

use hyperalloc_core::allocator::{
    run_arrivals, AllocError, AllocationDecision, CandidateScore, CandidateScorer, DeadlineScorer,
    NodeSchedule,
};
use hyperalloc_core::capability::{
    pi_init, CapabilityError, CapabilityInputs, CapabilityState, Convergence, DynamicsConfig,
};
use hyperalloc_core::catalog::{Algorithm, TaskCatalog, TaskSpec, TimeWindow};
use hyperalloc_core::graph::{AlgorithmGraph, GraphError};
use hyperalloc_core::network::{
    com_t_max, ict, Evaluation, NetError, NetworkModel, NodeId, RequestProfile, RoutingTable,
    TaskId,
};
use hyperalloc_core::stochastics::SeedStream;
use hyperalloc_core::subspaces::{
    cmpt_score, combine_scores, cplt_score, CompatibilityTable, ScoreError, Subspace, SubspaceScore,
};
use thiserror::Error;

use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Communication times are distribution means.
    #[default]
    Expected,
    /// Communication times are single seeded draws.
    Sample,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Expected => "expected",
            Mode::Sample => "sample",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "expected" => Ok(Mode::Expected),
            "sample" | "sampled" => Ok(Mode::Sample),
            other => Err(format!(
                "unknown mode `{other}` (expected `expected` or `sample`)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub mode: Mode,
    pub seed: u64,
    pub subspaces: Vec<Subspace>,
    pub dynamics: DynamicsConfig,
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mode: Mode::Expected,
            seed: 0,
            subspaces: Subspace::ALL.to_vec(),
            dynamics: DynamicsConfig::default(),
            threads: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineErrorKind {
    #[error(transparent)]
    Network(#[from] NetError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Capability(#[from] CapabilityError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error("cannot start worker pool: {0}")]
    Threads(String),
}

#[derive(Debug, Error)]
#[error("{context}: {kind}")]
pub struct EngineError {
    /// Where in the scenario the failure originates.
    pub context: String,
    #[source]
    pub kind: EngineErrorKind,
}

fn at<E: Into<EngineErrorKind>>(context: impl Into<String>) -> impl FnOnce(E) -> EngineError {
    let context = context.into();
    move |e| EngineError {
        context,
        kind: e.into(),
    }
}

/// Everything derived from a scenario that scoring needs.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: NetworkModel,
    pub routes: RoutingTable,
    pub catalog: TaskCatalog,
    pub compat: CompatibilityTable,
    pub profile: RequestProfile,
    /// Expected single round-trip time between every pair of nodes.
    pub round_trip: Vec<Vec<f64>>,
    pub state: CapabilityState,
    pub convergence: Convergence,
    pub options: RunOptions,
    scores: std::collections::BTreeMap<(Subspace, TaskId, NodeId), f64>,
}

impl Model {
    pub fn build(scenario: &Scenario, options: &RunOptions) -> Result<Model, EngineError> {
        let network_ctx = format!("[network] at line {}", scenario.source.network);
        let net = scenario.network().map_err(at(network_ctx.clone()))?;
        let routes = RoutingTable::new(&net).map_err(at(network_ctx))?;
        let round_trip = routes.round_trip_matrix(&net);

        let mut catalog = TaskCatalog::default();
        let mut inputs = CapabilityInputs::default();
        for (i, def) in scenario.tasks.iter().enumerate() {
            let ctx = match scenario.source.tasks.get(i) {
                Some(line) => format!("task `{}` at line {line}", def.name),
                None => format!("task `{}`", def.name),
            };
            let graph =
                AlgorithmGraph::new(def.labels.len() as u32, &def.edges).map_err(at(ctx))?;
            let mut spec = TaskSpec::new(def.name.clone(), graph.to_semilattice());
            spec.labels = def.labels.clone();
            spec.top_label = def.top_label.clone();
            spec.bottom_label = def.bottom_label.clone();
            spec.window = def.window;
            spec.candidates = def.candidates.clone();
            let id = catalog.push(spec);
            for (&alg, row) in &def.exec {
                inputs.exec.insert((id, alg), row.clone());
            }
            for (&alg, &node) in &def.placement {
                inputs.placement.insert((id, alg), node);
            }
        }
        inputs.a1 = scenario.a1.clone();
        inputs.a2 = scenario.a2.clone();

        let mut compat = CompatibilityTable::new(catalog.len(), net.len());
        for &(t, n) in &scenario.incompatible {
            compat.mark_incompatible(t, n);
        }
        let mut profile = RequestProfile::new();
        for (&(t, a, b), &k) in &scenario.requests {
            profile.set(t, a, b, k);
        }

        let mut state =
            pi_init(&catalog, net.len(), &round_trip, &inputs).map_err(at("capability"))?;
        let convergence = state.pi_limit(&options.dynamics);

        Ok(Model {
            net,
            routes,
            catalog,
            compat,
            profile,
            round_trip,
            state,
            convergence,
            options: options.clone(),
            scores: scenario.scores.clone(),
        })
    }

    fn injected(&self, sub: Subspace, task: TaskId, node: NodeId) -> Option<f64> {
        self.scores.get(&(sub, task, node)).copied()
    }

    /// Largest communication time of `task` on `node`, sampled per
    /// (arrival, node) stream in sample mode.
    pub fn com_t(&self, task: TaskId, node: NodeId, arrival_index: usize) -> f64 {
        if let Some(v) = self.injected(Subspace::Comm, task, node) {
            return if v == 0.0 { f64::INFINITY } else { 1.0 / v };
        }
        match self.options.mode {
            Mode::Expected => com_t_max(
                &self.net,
                &self.routes,
                &self.profile,
                task,
                node,
                &mut Evaluation::Expected,
            ),
            Mode::Sample => {
                let stream = arrival_index as u64 * self.net.len() as u64 + node.0 as u64;
                let mut rng = SeedStream::new(self.options.seed).rng(stream);
                com_t_max(
                    &self.net,
                    &self.routes,
                    &self.profile,
                    task,
                    node,
                    &mut Evaluation::Sampled(&mut rng),
                )
            }
        }
    }

    /// Critical-path execution time of `task` when run on `node`. An
    /// algorithm the node cannot run is timed on its peak host.
    pub fn critical_path(&self, task: TaskId, node: NodeId) -> f64 {
        let spec = self.catalog.task(task);
        let base = spec.lattice.base();
        let exec = self.state.exec_times();
        let time = |alg: Algorithm| -> f64 {
            let Some(row) = self.state.row_index(task, alg) else {
                return 0.0;
            };
            let host = if self.state.capable()[row][node.0] {
                node
            } else {
                self.state.peak_host(task, alg).unwrap_or(node)
            };
            exec[row][host.0]
        };
        let mut finish = vec![0.0f64; base.vertex_count() as usize + 1];
        for v in base.topological_order() {
            let ready = base
                .predecessors(v)
                .iter()
                .map(|&u| finish[u as usize])
                .fold(0.0, f64::max);
            finish[v as usize] = ready + time(Algorithm::Real(v));
        }
        time(Algorithm::Top) + finish.iter().copied().fold(0.0, f64::max) + time(Algorithm::Bottom)
    }

    pub fn candidates_of(&self, task: TaskId) -> Vec<NodeId> {
        match &self.catalog.task(task).candidates {
            Some(c) => c.clone(),
            None => self.net.node_ids().collect(),
        }
    }

    pub fn score_candidate(
        &self,
        task: TaskId,
        node: NodeId,
        arrival_index: usize,
    ) -> CandidateScore {
        let comt = self.com_t(task, node, arrival_index);
        let scores: Vec<SubspaceScore> = self
            .options
            .subspaces
            .iter()
            .map(|&sub| {
                let value = match self.injected(sub, task, node) {
                    Some(v) => v,
                    None => match sub {
                        Subspace::Cmpt => {
                            cmpt_score(&self.compat, task, node).map_or(0.0, |s| s.value)
                        }
                        Subspace::Comm => ict(comt),
                        Subspace::Cplt => cplt_score(&self.state, task, node).value,
                    },
                };
                SubspaceScore::new(sub, value)
            })
            .collect();
        let combined = combine_scores(&scores).unwrap_or(0.0);
        let comm_time = if comt.is_finite() { comt } else { 0.0 };
        CandidateScore {
            node,
            scores,
            combined,
            duration: self.critical_path(task, node) + comm_time,
        }
    }
}

impl CandidateScorer for Model {
    fn candidates(&self, task: TaskId) -> Vec<NodeId> {
        self.candidates_of(task)
    }

    fn window(&self, task: TaskId) -> TimeWindow {
        self.catalog.task(task).window
    }

    fn score(&self, task: TaskId, node: NodeId, arrival_index: usize) -> CandidateScore {
        self.score_candidate(task, node, arrival_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub mode: Mode,
    pub seed: u64,
    pub subspaces: Vec<Subspace>,
    pub convergence: Convergence,
    pub node_labels: Vec<String>,
    pub task_names: Vec<String>,
    pub decisions: Vec<AllocationDecision>,
    pub schedules: Vec<NodeSchedule>,
}

impl RunReport {
    pub fn node_label(&self, id: NodeId) -> &str {
        &self.node_labels[id.0]
    }

    pub fn task_name(&self, id: TaskId) -> &str {
        &self.task_names[id.0]
    }
}

/// Runs every arrival of `scenario` under `options`.
pub fn run(scenario: &Scenario, options: &RunOptions) -> Result<RunReport, EngineError> {
    let model = Model::build(scenario, options)?;
    run_model(&model, scenario)
}

pub fn run_model(model: &Model, scenario: &Scenario) -> Result<RunReport, EngineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(model.options.threads.max(1))
        .build()
        .map_err(|e| EngineError {
            context: "options".into(),
            kind: EngineErrorKind::Threads(e.to_string()),
        })?;
    let arrivals: Vec<(f64, TaskId)> = scenario.arrivals.iter().map(|a| (a.time, a.task)).collect();
    let outcome = pool
        .install(|| run_arrivals(&arrivals, model.net.len(), model, &DeadlineScorer))
        .map_err(|e| {
            let line = match &e {
                AllocError::UnorderedArrivals { index, .. } => {
                    scenario.source.arrivals.get(*index).copied()
                }
                _ => None,
            };
            match line {
                Some(l) => at(format!("[arrivals] at line {l}"))(e),
                None => at("[arrivals]")(e),
            }
        })?;
    Ok(RunReport {
        mode: model.options.mode,
        seed: model.options.seed,
        subspaces: model.options.subspaces.clone(),
        convergence: model.convergence,
        node_labels: scenario.nodes.iter().map(|n| n.label.clone()).collect(),
        task_names: scenario.tasks.iter().map(|t| t.name.clone()).collect(),
        decisions: outcome.decisions,
        schedules: outcome.schedules,
    })
}
