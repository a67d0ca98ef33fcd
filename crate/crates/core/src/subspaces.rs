//! Per-subspace measures and their product combination.
//!
//! * CMPT: 1 if the node is compatible with the task, else 0.
//! * Communication: inverse of the node's largest communication time for
//!   the task, `+inf` when it communicates with nobody.
//! * CPLT: product of the peak probabilities of the task's virtual entry
//!   and exit algorithms on the node.
//!
//! Subspaces are orthogonal, so the measure of their union is the product
//! of the individual measures. Any zero annihilates, including `0 * inf`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::CapabilityState;
use crate::catalog::Algorithm;
use crate::network::{
    com_t_max, ict, Evaluation, NetworkModel, NodeId, RequestProfile, RoutingTable, TaskId,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoreError {
    #[error("no compatibility entry for task {0} and node {1}")]
    UnknownPair(usize, usize),
    #[error("subspace {0} appears more than once")]
    DuplicateSubspace(Subspace),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subspace {
    Cmpt,
    Comm,
    Cplt,
}

impl Subspace {
    pub const ALL: [Subspace; 3] = [Subspace::Cmpt, Subspace::Comm, Subspace::Cplt];

    pub fn name(self) -> &'static str {
        match self {
            Subspace::Cmpt => "cmpt",
            Subspace::Comm => "comm",
            Subspace::Cplt => "cplt",
        }
    }
}

impl fmt::Display for Subspace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subspace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cmpt" => Ok(Subspace::Cmpt),
            "comm" | "communication" => Ok(Subspace::Comm),
            "cplt" => Ok(Subspace::Cplt),
            other => Err(format!(
                "unknown subspace `{other}` (expected cmpt, comm or cplt)"
            )),
        }
    }
}

/// Parses a comma-separated subspace list such as `cmpt,comm`.
pub fn parse_subspaces(s: &str) -> Result<Vec<Subspace>, String> {
    let mut out: Vec<Subspace> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let sub: Subspace = part.parse()?;
        if out.contains(&sub) {
            return Err(format!("subspace `{sub}` listed twice"));
        }
        out.push(sub);
    }
    if out.is_empty() {
        return Err("at least one subspace is required".into());
    }
    out.sort();
    Ok(out)
}

/// The measure of one subspace for a (task, node) pair; values may be `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubspaceScore {
    pub subspace: Subspace,
    pub value: f64,
}

impl SubspaceScore {
    pub fn new(subspace: Subspace, value: f64) -> Self {
        SubspaceScore { subspace, value }
    }
}

/// Compatibility of tasks with nodes; every pair is compatible unless
/// marked otherwise.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompatibilityTable {
    tasks: usize,
    nodes: usize,
    incompatible: BTreeSet<(TaskId, NodeId)>,
}

impl CompatibilityTable {
    pub fn new(tasks: usize, nodes: usize) -> Self {
        CompatibilityTable {
            tasks,
            nodes,
            incompatible: BTreeSet::new(),
        }
    }

    pub fn mark_incompatible(&mut self, task: TaskId, node: NodeId) {
        self.incompatible.insert((task, node));
    }

    pub fn is_compatible(&self, task: TaskId, node: NodeId) -> Result<bool, ScoreError> {
        if task.0 >= self.tasks || node.0 >= self.nodes {
            return Err(ScoreError::UnknownPair(task.0, node.0));
        }
        Ok(!self.incompatible.contains(&(task, node)))
    }

    pub fn incompatible_pairs(&self) -> impl Iterator<Item = (TaskId, NodeId)> + '_ {
        self.incompatible.iter().copied()
    }
}

pub fn cmpt_score(
    tbl: &CompatibilityTable,
    task: TaskId,
    node: NodeId,
) -> Result<SubspaceScore, ScoreError> {
    let ok = tbl.is_compatible(task, node)?;
    Ok(SubspaceScore::new(
        Subspace::Cmpt,
        if ok { 1.0 } else { 0.0 },
    ))
}

pub fn communication_score(
    net: &NetworkModel,
    routes: &RoutingTable,
    profile: &RequestProfile,
    task: TaskId,
    node: NodeId,
    eval: &mut Evaluation<'_>,
) -> SubspaceScore {
    let comt = com_t_max(net, routes, profile, task, node, eval);
    SubspaceScore::new(Subspace::Comm, ict(comt))
}

pub fn cplt_score(state: &CapabilityState, task: TaskId, node: NodeId) -> SubspaceScore {
    let entry = state.capital_pi(task, Algorithm::Top, node);
    let exit = state.capital_pi(task, Algorithm::Bottom, node);
    SubspaceScore::new(Subspace::Cplt, entry * exit)
}

/// Product of the measures; at most one score per subspace.
pub fn combine_scores(scores: &[SubspaceScore]) -> Result<f64, ScoreError> {
    let mut seen = BTreeSet::new();
    for s in scores {
        if !seen.insert(s.subspace) {
            return Err(ScoreError::DuplicateSubspace(s.subspace));
        }
    }
    if scores.iter().any(|s| s.value == 0.0) {
        return Ok(0.0);
    }
    Ok(scores.iter().map(|s| s.value).product())
}
