//! Allocation decisions over per-node schedules.
//!
//! A newly arrived task is placed on a node at the earliest time the node
//! can start it: after every entry that has already started and no earlier
//! than the task's arrival and window start. Entries queued behind that
//! point are pushed right as far as needed to stay non-overlapping. The
//! pushed entries form the impact report; those whose score strictly drops
//! once re-scored at their new start make up `nv`, and the sum of their
//! drops is the loss.
//!
//! Among candidates the highest combined score wins. Ties between maximal
//! candidates go to a non-perturbing node, then to the smallest loss, then
//! to the lowest node index.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::catalog::TimeWindow;
use crate::network::{NodeId, TaskId};
use crate::subspaces::SubspaceScore;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("task would finish at {end} after its deadline {deadline}")]
    WindowViolation { end: f64, deadline: f64 },
    #[error("task duration must be finite and positive, got {0}")]
    InvalidDuration(f64),
    #[error("arrival {index} at time {time} precedes the previous arrival")]
    UnorderedArrivals { index: usize, time: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleEntry {
    pub task: TaskId,
    /// Index of the decision that created the entry.
    pub decision: usize,
    pub arrival: f64,
    pub start: f64,
    pub end: f64,
    pub deadline: f64,
    /// Combined score at allocation time.
    pub score: f64,
    pub forced_idle: bool,
    /// Started at the moment it was allocated; never moved afterwards.
    pub dispatched: bool,
}

impl ScheduleEntry {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Time-ordered entries of one node, task entries interleaved with forced
/// idle entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSchedule {
    pub node: NodeId,
    entries: Vec<ScheduleEntry>,
}

impl NodeSchedule {
    pub fn new(node: NodeId) -> Self {
        NodeSchedule {
            node,
            entries: Vec::new(),
        }
    }

    /// Builds a schedule from task entries given in time order.
    pub fn from_tasks(node: NodeId, tasks: Vec<ScheduleEntry>) -> Self {
        let mut s = NodeSchedule {
            node,
            entries: tasks,
        };
        s.rebuild_idle();
        s
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn tasks(&self) -> impl Iterator<Item = &ScheduleEntry> {
        self.entries.iter().filter(|e| !e.forced_idle)
    }

    pub fn task_count(&self) -> usize {
        self.tasks().count()
    }

    /// Places a new task entry and applies the shifts of `placement`.
    pub fn commit(&mut self, placement: &Placement, mut entry: ScheduleEntry) {
        let mut tasks: Vec<ScheduleEntry> =
            self.entries.drain(..).filter(|e| !e.forced_idle).collect();
        for shift in &placement.shifts {
            let e = &mut tasks[shift.index - 1];
            let d = e.duration();
            e.start = shift.new_start;
            e.end = shift.new_start + d;
        }
        entry.start = placement.start;
        entry.end = placement.end;
        entry.dispatched = placement.start <= entry.arrival;
        tasks.insert(placement.position, entry);
        self.entries = tasks;
        self.rebuild_idle();
    }

    fn rebuild_idle(&mut self) {
        let tasks: Vec<ScheduleEntry> = self.entries.drain(..).filter(|e| !e.forced_idle).collect();
        let mut prev_end = f64::NEG_INFINITY;
        for e in tasks {
            let from = prev_end.max(e.arrival);
            if e.start > from {
                self.entries.push(ScheduleEntry {
                    start: from,
                    end: e.start,
                    score: 0.0,
                    forced_idle: true,
                    dispatched: false,
                    ..e.clone()
                });
            }
            prev_end = e.end;
            self.entries.push(e);
        }
    }
}

/// A queued entry moved right by an insertion; `index` is 1-based among
/// the node's task entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Shift {
    pub index: usize,
    pub old_start: f64,
    pub new_start: f64,
}

/// Where a task would go on one node and what it would move.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Placement {
    pub start: f64,
    pub end: f64,
    /// Insertion index among task entries.
    pub position: usize,
    pub shifts: Vec<Shift>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpactReport {
    pub node: NodeId,
    pub affected: Vec<Shift>,
    /// Affected indices whose score strictly drops.
    pub nv: Vec<usize>,
    pub loss: f64,
}

impl ImpactReport {
    pub fn is_non_perturbing(&self) -> bool {
        self.affected.is_empty()
    }
}

/// Computes where a task of `duration` arriving at `arrival` would be
/// placed on `schedule`, and which queued entries it pushes.
pub fn schedule_impact(
    schedule: &NodeSchedule,
    duration: f64,
    arrival: f64,
    window: TimeWindow,
) -> Result<Placement, AllocError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(AllocError::InvalidDuration(duration));
    }
    let tasks: Vec<&ScheduleEntry> = schedule.tasks().collect();
    let fixed = tasks
        .iter()
        .take_while(|e| e.start < arrival || e.dispatched)
        .count();
    let busy_until = tasks[..fixed]
        .iter()
        .map(|e| e.end)
        .fold(f64::NEG_INFINITY, f64::max);
    let start = arrival.max(window.start).max(busy_until);
    let end = start + duration;
    if end > window.deadline {
        return Err(AllocError::WindowViolation {
            end,
            deadline: window.deadline,
        });
    }
    let mut shifts = Vec::new();
    let mut prev_end = end;
    for (offset, e) in tasks[fixed..].iter().enumerate() {
        let new_start = e.start.max(prev_end);
        if new_start > e.start {
            shifts.push(Shift {
                index: fixed + offset + 1,
                old_start: e.start,
                new_start,
            });
        }
        prev_end = new_start + e.duration();
    }
    Ok(Placement {
        start,
        end,
        position: fixed,
        shifts,
    })
}

/// Re-evaluates a scheduled task's score at a new start time.
pub trait EntryScorer: Sync {
    fn rescore(&self, entry: &ScheduleEntry, new_start: f64) -> f64;
}

impl<F> EntryScorer for F
where
    F: Fn(&ScheduleEntry, f64) -> f64 + Sync,
{
    fn rescore(&self, entry: &ScheduleEntry, new_start: f64) -> f64 {
        self(entry, new_start)
    }
}

/// Keeps an entry's score while it still meets its deadline; a task pushed
/// past its deadline scores 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeadlineScorer;

impl EntryScorer for DeadlineScorer {
    fn rescore(&self, entry: &ScheduleEntry, new_start: f64) -> f64 {
        if new_start + entry.duration() <= entry.deadline {
            entry.score
        } else {
            0.0
        }
    }
}

/// Fills `nv` and `loss` of an impact report by re-scoring every shifted
/// entry. Returns the loss.
pub fn reallocation_loss(
    report: &mut ImpactReport,
    schedule: &NodeSchedule,
    scorer: &dyn EntryScorer,
) -> f64 {
    let tasks: Vec<&ScheduleEntry> = schedule.tasks().collect();
    report.nv.clear();
    report.loss = 0.0;
    for shift in &report.affected {
        let entry = tasks[shift.index - 1];
        let old = entry.score;
        let new = scorer.rescore(entry, shift.new_start);
        if new < old {
            report.nv.push(shift.index);
            report.loss += old - new;
        }
    }
    report.loss
}

/// What a candidate node scores for a task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateScore {
    pub node: NodeId,
    pub scores: Vec<SubspaceScore>,
    pub combined: f64,
    /// Time the task occupies the node.
    pub duration: f64,
}

/// Source of candidate nodes and their scores for the allocator.
pub trait CandidateScorer: Sync {
    fn candidates(&self, task: TaskId) -> Vec<NodeId>;
    fn window(&self, task: TaskId) -> TimeWindow;
    /// Scores `task` on `node` for the arrival with index `arrival_index`.
    fn score(&self, task: TaskId, node: NodeId, arrival_index: usize) -> CandidateScore;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rationale {
    MaxScore,
    NonPerturbing,
    MinLoss,
    NoCapableNode,
}

impl fmt::Display for Rationale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rationale::MaxScore => "max-score",
            Rationale::NonPerturbing => "non-perturbing",
            Rationale::MinLoss => "min-loss",
            Rationale::NoCapableNode => "no-capable-node",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateReport {
    #[serde(flatten)]
    pub score: CandidateScore,
    pub placement: Option<Placement>,
    pub impact: Option<ImpactReport>,
    /// Why the node cannot take the task, if it cannot.
    pub rejected: Option<String>,
}

impl CandidateReport {
    pub fn is_admissible(&self) -> bool {
        self.rejected.is_none() && self.score.combined > 0.0
    }

    pub fn loss(&self) -> f64 {
        self.impact.as_ref().map_or(0.0, |i| i.loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationDecision {
    pub index: usize,
    pub task: TaskId,
    pub arrival: f64,
    pub chosen: Option<NodeId>,
    pub rationale: Rationale,
    pub candidates: Vec<CandidateReport>,
}

impl AllocationDecision {
    pub fn chosen_report(&self) -> Option<&CandidateReport> {
        let node = self.chosen?;
        self.candidates.iter().find(|c| c.score.node == node)
    }
}

fn evaluate_candidate(
    score: CandidateScore,
    schedule: &NodeSchedule,
    arrival: f64,
    window: TimeWindow,
    entry_scorer: &dyn EntryScorer,
) -> CandidateReport {
    if score.combined.is_nan() || score.combined <= 0.0 {
        return CandidateReport {
            score,
            placement: None,
            impact: None,
            rejected: Some("zero score".into()),
        };
    }
    match schedule_impact(schedule, score.duration, arrival, window) {
        Ok(placement) => {
            let mut impact = ImpactReport {
                node: score.node,
                affected: placement.shifts.clone(),
                nv: Vec::new(),
                loss: 0.0,
            };
            reallocation_loss(&mut impact, schedule, entry_scorer);
            CandidateReport {
                score,
                placement: Some(placement),
                impact: Some(impact),
                rejected: None,
            }
        }
        Err(e) => CandidateReport {
            score,
            placement: None,
            impact: None,
            rejected: Some(e.to_string()),
        },
    }
}

/// Picks the winning candidate among evaluated reports.
pub fn select(candidates: &[CandidateReport]) -> (Option<NodeId>, Rationale) {
    let admissible: Vec<&CandidateReport> =
        candidates.iter().filter(|c| c.is_admissible()).collect();
    let Some(best) = admissible.iter().map(|c| c.score.combined).reduce(f64::max) else {
        return (None, Rationale::NoCapableNode);
    };
    let maximal: Vec<&CandidateReport> = admissible
        .into_iter()
        .filter(|c| c.score.combined == best)
        .collect();
    if let [only] = maximal.as_slice() {
        return (Some(only.score.node), Rationale::MaxScore);
    }
    let impact = |c: &CandidateReport| {
        c.impact
            .clone()
            .expect("admissible candidates carry an impact")
    };
    if let Some(c) = maximal.iter().find(|c| impact(c).affected.is_empty()) {
        return (Some(c.score.node), Rationale::NonPerturbing);
    }
    if let Some(c) = maximal.iter().find(|c| impact(c).nv.is_empty()) {
        return (Some(c.score.node), Rationale::NonPerturbing);
    }
    let mut winner = maximal[0];
    for c in &maximal[1..] {
        if c.loss() < winner.loss() {
            winner = c;
        }
    }
    (Some(winner.score.node), Rationale::MinLoss)
}

/// Scores every candidate for `task` and selects one. Does not modify the
/// schedules.
pub fn allocate(
    index: usize,
    task: TaskId,
    arrival: f64,
    schedules: &[NodeSchedule],
    scorer: &dyn CandidateScorer,
    entry_scorer: &dyn EntryScorer,
) -> AllocationDecision {
    let window = scorer.window(task);
    let candidates: Vec<CandidateReport> = scorer
        .candidates(task)
        .into_par_iter()
        .map(|node| {
            let score = scorer.score(task, node, index);
            evaluate_candidate(score, &schedules[node.0], arrival, window, entry_scorer)
        })
        .collect();
    let (chosen, rationale) = select(&candidates);
    AllocationDecision {
        index,
        task,
        arrival,
        chosen,
        rationale,
        candidates,
    }
}

/// Applies a decision to the schedules.
pub fn commit(decision: &AllocationDecision, schedules: &mut [NodeSchedule], deadline: f64) {
    let Some(report) = decision.chosen_report() else {
        return;
    };
    let placement = report
        .placement
        .as_ref()
        .expect("chosen candidate has a placement");
    let entry = ScheduleEntry {
        task: decision.task,
        decision: decision.index,
        arrival: decision.arrival,
        start: placement.start,
        end: placement.end,
        deadline,
        score: report.score.combined,
        forced_idle: false,
        dispatched: false,
    };
    schedules[report.score.node.0].commit(placement, entry);
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrivalOutcome {
    pub decisions: Vec<AllocationDecision>,
    pub schedules: Vec<NodeSchedule>,
}

/// Processes arrivals in order, carrying schedules between decisions.
pub fn run_arrivals(
    arrivals: &[(f64, TaskId)],
    node_count: usize,
    scorer: &dyn CandidateScorer,
    entry_scorer: &dyn EntryScorer,
) -> Result<ArrivalOutcome, AllocError> {
    let mut schedules: Vec<NodeSchedule> = (0..node_count)
        .map(|i| NodeSchedule::new(NodeId(i)))
        .collect();
    let mut decisions = Vec::with_capacity(arrivals.len());
    let mut last = f64::NEG_INFINITY;
    for (index, &(time, task)) in arrivals.iter().enumerate() {
        if time < last || time.is_nan() {
            return Err(AllocError::UnorderedArrivals { index, time });
        }
        last = time;
        let decision = allocate(index, task, time, &schedules, scorer, entry_scorer);
        commit(&decision, &mut schedules, scorer.window(task).deadline);
        decisions.push(decision);
    }
    Ok(ArrivalOutcome {
        decisions,
        schedules,
    })
}
