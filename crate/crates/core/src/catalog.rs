//! Tasks, their algorithm graphs and time windows.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::graph::{GraphError, SemiLattice, Vertex};
use crate::network::{NodeId, TaskId};

/// An algorithm of one task. `Top` and `Bottom` are the task's virtual
/// entry and exit; when the task graph has several components their
/// per-component virtual vertices all map onto these two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Algorithm {
    Top,
    Real(u32),
    Bottom,
}

impl Algorithm {
    pub fn of_vertex(v: Vertex) -> Self {
        match v {
            Vertex::Top(_) => Algorithm::Top,
            Vertex::Real(i) => Algorithm::Real(i),
            Vertex::Bottom(_) => Algorithm::Bottom,
        }
    }

    pub fn is_virtual(self) -> bool {
        !matches!(self, Algorithm::Real(_))
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Top => f.write_str("top"),
            Algorithm::Real(i) => write!(f, "{i}"),
            Algorithm::Bottom => f.write_str("bottom"),
        }
    }
}

/// `[start, deadline]`; an absent deadline is `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeWindow {
    pub start: f64,
    pub deadline: f64,
}

impl TimeWindow {
    pub fn unbounded() -> Self {
        TimeWindow {
            start: 0.0,
            deadline: f64::INFINITY,
        }
    }

    pub fn new(start: f64, deadline: f64) -> Option<Self> {
        (start.is_finite() && !deadline.is_nan() && start <= deadline)
            .then_some(TimeWindow { start, deadline })
    }
}

impl Default for TimeWindow {
    fn default() -> Self {
        TimeWindow::unbounded()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub lattice: SemiLattice,
    /// Labels of real algorithms `1..=n`, by index - 1.
    pub labels: Vec<String>,
    pub top_label: String,
    pub bottom_label: String,
    pub window: TimeWindow,
    /// Nodes the task may be allocated to; `None` means every node.
    pub candidates: Option<Vec<NodeId>>,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, lattice: SemiLattice) -> Self {
        let n = lattice.base().vertex_count();
        TaskSpec {
            name: name.into(),
            labels: (1..=n).map(|i| format!("A{i}")).collect(),
            lattice,
            top_label: "top".into(),
            bottom_label: "bottom".into(),
            window: TimeWindow::unbounded(),
            candidates: None,
        }
    }

    pub fn real_count(&self) -> u32 {
        self.lattice.base().vertex_count()
    }

    /// Top, real algorithms in topological order, bottom.
    pub fn algorithms_in_order(&self) -> Vec<Algorithm> {
        std::iter::once(Algorithm::Top)
            .chain(
                self.lattice
                    .base()
                    .topological_order()
                    .into_iter()
                    .map(Algorithm::Real),
            )
            .chain(std::iter::once(Algorithm::Bottom))
            .collect()
    }

    /// Real algorithms preceding `alg` on some execution flow.
    pub fn predecessors(&self, alg: Algorithm) -> Result<BTreeSet<u32>, GraphError> {
        match alg {
            Algorithm::Top => Ok(BTreeSet::new()),
            Algorithm::Real(i) => self.lattice.flow_predecessors(Vertex::Real(i)),
            Algorithm::Bottom => Ok((1..=self.real_count()).collect()),
        }
    }

    pub fn label(&self, alg: Algorithm) -> &str {
        match alg {
            Algorithm::Top => &self.top_label,
            Algorithm::Real(i) => &self.labels[i as usize - 1],
            Algorithm::Bottom => &self.bottom_label,
        }
    }

    pub fn find_algorithm(&self, label: &str) -> Option<Algorithm> {
        if label == self.top_label {
            return Some(Algorithm::Top);
        }
        if label == self.bottom_label {
            return Some(Algorithm::Bottom);
        }
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| Algorithm::Real(i as u32 + 1))
    }

    pub fn is_candidate(&self, node: NodeId) -> bool {
        self.candidates.as_ref().is_none_or(|c| c.contains(&node))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskCatalog {
    tasks: Vec<TaskSpec>,
}

impl TaskCatalog {
    pub fn new(tasks: Vec<TaskSpec>) -> Self {
        TaskCatalog { tasks }
    }

    pub fn push(&mut self, task: TaskSpec) -> TaskId {
        self.tasks.push(task);
        TaskId(self.tasks.len() - 1)
    }

    pub fn get(&self, id: TaskId) -> Option<&TaskSpec> {
        self.tasks.get(id.0)
    }

    pub fn task(&self, id: TaskId) -> &TaskSpec {
        &self.tasks[id.0]
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn ids(&self) -> impl Iterator<Item = TaskId> {
        (0..self.tasks.len()).map(TaskId)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<TaskId> {
        self.tasks.iter().position(|t| t.name == name).map(TaskId)
    }
}
