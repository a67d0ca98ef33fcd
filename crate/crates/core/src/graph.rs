//! Algorithm dependency graphs and their semi-lattice lift.
//!
//! An [`AlgorithmGraph`] is a DAG over algorithms `1..=n` where an edge
//! `i -> j` means algorithm `j` consumes the output of algorithm `i`.
//! Lifting it to a [`SemiLattice`] adds one virtual top and one virtual
//! bottom per weakly connected component: the top feeds every source of the
//! component and every sink of the component feeds the bottom. Execution
//! flows are the top-to-bottom paths of the lifted graph.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Upper bound on the number of execution flows enumerated before giving up.
pub const DEFAULT_FLOW_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph must contain at least one algorithm")]
    Empty,
    #[error("algorithm index {index} out of range 1..={count}")]
    IndexOutOfRange { index: u32, count: u32 },
    #[error("self-edge on algorithm {0}")]
    SelfEdge(u32),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(u32, u32),
    #[error("cycle detected: {cycle:?}")]
    CycleDetected { cycle: Vec<u32> },
    #[error("more than {cap} execution flows")]
    FlowExplosion { cap: usize },
    #[error("unknown vertex {0}")]
    UnknownVertex(Vertex),
}

/// A vertex of the lifted graph.
///
/// Component indices are 0-based and follow the order of
/// [`SemiLattice::components`]. The derived ordering (tops, then real
/// algorithms by index, then bottoms) is the ordering used for flows and
/// for the rows of adjacency matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Vertex {
    Top(usize),
    Real(u32),
    Bottom(usize),
}

impl Vertex {
    pub fn is_virtual(self) -> bool {
        !matches!(self, Vertex::Real(_))
    }

    pub fn real(self) -> Option<u32> {
        match self {
            Vertex::Real(i) => Some(i),
            _ => None,
        }
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Vertex::Top(c) => write!(f, "top{c}"),
            Vertex::Real(i) => write!(f, "{i}"),
            Vertex::Bottom(c) => write!(f, "bottom{c}"),
        }
    }
}

/// Validated acyclic dependency graph over algorithms `1..=vertex_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlgorithmGraph {
    vertex_count: u32,
    edges: Vec<(u32, u32)>,
    succ: Vec<Vec<u32>>,
    pred: Vec<Vec<u32>>,
}

impl AlgorithmGraph {
    pub fn new(vertex_count: u32, edges: &[(u32, u32)]) -> Result<Self, GraphError> {
        if vertex_count == 0 {
            return Err(GraphError::Empty);
        }
        let n = vertex_count as usize;
        let mut succ = vec![Vec::new(); n + 1];
        let mut pred = vec![Vec::new(); n + 1];
        let mut seen = BTreeSet::new();
        for &(from, to) in edges {
            for index in [from, to] {
                if index == 0 || index > vertex_count {
                    return Err(GraphError::IndexOutOfRange {
                        index,
                        count: vertex_count,
                    });
                }
            }
            if from == to {
                return Err(GraphError::SelfEdge(from));
            }
            if !seen.insert((from, to)) {
                return Err(GraphError::DuplicateEdge(from, to));
            }
            succ[from as usize].push(to);
            pred[to as usize].push(from);
        }
        for list in succ.iter_mut().chain(pred.iter_mut()) {
            list.sort_unstable();
        }
        let graph = AlgorithmGraph {
            vertex_count,
            edges: seen.into_iter().collect(),
            succ,
            pred,
        };
        if let Some(cycle) = graph.find_cycle() {
            return Err(GraphError::CycleDetected { cycle });
        }
        Ok(graph)
    }

    pub fn vertex_count(&self) -> u32 {
        self.vertex_count
    }

    /// Edges in lexicographic order.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn successors(&self, v: u32) -> &[u32] {
        &self.succ[v as usize]
    }

    pub fn predecessors(&self, v: u32) -> &[u32] {
        &self.pred[v as usize]
    }

    pub fn in_degree(&self, v: u32) -> usize {
        self.pred[v as usize].len()
    }

    pub fn out_degree(&self, v: u32) -> usize {
        self.succ[v as usize].len()
    }

    /// Topological order, choosing the smallest ready index first.
    pub fn topological_order(&self) -> Vec<u32> {
        let mut indeg: Vec<usize> = (0..=self.vertex_count).map(|v| self.in_degree(v)).collect();
        let mut ready: BTreeSet<u32> = (1..=self.vertex_count)
            .filter(|&v| indeg[v as usize] == 0)
            .collect();
        let mut order = Vec::with_capacity(self.vertex_count as usize);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for &w in self.successors(v) {
                indeg[w as usize] -= 1;
                if indeg[w as usize] == 0 {
                    ready.insert(w);
                }
            }
        }
        order
    }

    pub fn to_semilattice(self) -> SemiLattice {
        SemiLattice::new(self)
    }

    fn find_cycle(&self) -> Option<Vec<u32>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let n = self.vertex_count as usize;
        let mut mark = vec![Mark::White; n + 1];
        let mut parent = vec![0u32; n + 1];
        for root in 1..=self.vertex_count {
            if mark[root as usize] != Mark::White {
                continue;
            }
            // iterative DFS: (vertex, next successor position)
            let mut stack = vec![(root, 0usize)];
            mark[root as usize] = Mark::Grey;
            while let Some(&mut (v, ref mut pos)) = stack.last_mut() {
                if let Some(&w) = self.succ[v as usize].get(*pos) {
                    *pos += 1;
                    match mark[w as usize] {
                        Mark::White => {
                            mark[w as usize] = Mark::Grey;
                            parent[w as usize] = v;
                            stack.push((w, 0));
                        }
                        Mark::Grey => {
                            let mut cycle = Vec::new();
                            let mut u = v;
                            while u != w {
                                cycle.push(u);
                                u = parent[u as usize];
                            }
                            cycle.push(w);
                            cycle.reverse();
                            return Some(cycle);
                        }
                        Mark::Black => {}
                    }
                } else {
                    mark[v as usize] = Mark::Black;
                    stack.pop();
                }
            }
        }
        None
    }
}

/// One weakly connected component of the base graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Component {
    pub members: Vec<u32>,
    /// Members with in-degree 0; the virtual top links to exactly these.
    pub sources: Vec<u32>,
    /// Members with out-degree 0; exactly these link to the virtual bottom.
    pub sinks: Vec<u32>,
}

/// The base graph plus one virtual top/bottom pair per component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemiLattice {
    base: AlgorithmGraph,
    components: Vec<Component>,
    component_of: Vec<usize>,
}

/// A top-to-bottom path through a [`SemiLattice`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ExecutionFlow(pub Vec<Vertex>);

impl ExecutionFlow {
    pub fn vertices(&self) -> &[Vertex] {
        &self.0
    }

    pub fn real_vertices(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().filter_map(|v| v.real())
    }

    /// Number of edges on the flow.
    pub fn edge_count(&self) -> usize {
        self.0.len().saturating_sub(1)
    }
}

impl fmt::Display for ExecutionFlow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" -> ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl SemiLattice {
    pub fn new(base: AlgorithmGraph) -> Self {
        let n = base.vertex_count as usize;
        let mut component_of = vec![usize::MAX; n + 1];
        let mut components = Vec::new();
        for root in 1..=base.vertex_count {
            if component_of[root as usize] != usize::MAX {
                continue;
            }
            let id = components.len();
            let mut members = Vec::new();
            let mut stack = vec![root];
            component_of[root as usize] = id;
            while let Some(v) = stack.pop() {
                members.push(v);
                for &w in base.successors(v).iter().chain(base.predecessors(v)) {
                    if component_of[w as usize] == usize::MAX {
                        component_of[w as usize] = id;
                        stack.push(w);
                    }
                }
            }
            members.sort_unstable();
            let sources = members
                .iter()
                .copied()
                .filter(|&v| base.in_degree(v) == 0)
                .collect();
            let sinks = members
                .iter()
                .copied()
                .filter(|&v| base.out_degree(v) == 0)
                .collect();
            components.push(Component {
                members,
                sources,
                sinks,
            });
        }
        SemiLattice {
            base,
            components,
            component_of,
        }
    }

    pub fn base(&self) -> &AlgorithmGraph {
        &self.base
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component_of(&self, v: u32) -> Option<usize> {
        self.component_of
            .get(v as usize)
            .copied()
            .filter(|&c| c != usize::MAX)
    }

    pub fn contains(&self, v: Vertex) -> bool {
        match v {
            Vertex::Real(i) => i >= 1 && i <= self.base.vertex_count,
            Vertex::Top(c) | Vertex::Bottom(c) => c < self.components.len(),
        }
    }

    /// Successors in ascending [`Vertex`] order.
    pub fn successors(&self, v: Vertex) -> Vec<Vertex> {
        match v {
            Vertex::Top(c) => self.components[c]
                .sources
                .iter()
                .map(|&i| Vertex::Real(i))
                .collect(),
            Vertex::Real(i) => {
                let succ = self.base.successors(i);
                if succ.is_empty() {
                    vec![Vertex::Bottom(self.component_of[i as usize])]
                } else {
                    succ.iter().map(|&j| Vertex::Real(j)).collect()
                }
            }
            Vertex::Bottom(_) => Vec::new(),
        }
    }

    pub fn predecessors(&self, v: Vertex) -> Vec<Vertex> {
        match v {
            Vertex::Top(_) => Vec::new(),
            Vertex::Real(i) => {
                let pred = self.base.predecessors(i);
                if pred.is_empty() {
                    vec![Vertex::Top(self.component_of[i as usize])]
                } else {
                    pred.iter().map(|&j| Vertex::Real(j)).collect()
                }
            }
            Vertex::Bottom(c) => self.components[c]
                .sinks
                .iter()
                .map(|&i| Vertex::Real(i))
                .collect(),
        }
    }

    /// All vertices of the lifted graph in matrix order: tops, reals, bottoms.
    pub fn lifted_vertices(&self) -> Vec<Vertex> {
        let k = self.components.len();
        (0..k)
            .map(Vertex::Top)
            .chain((1..=self.base.vertex_count).map(Vertex::Real))
            .chain((0..k).map(Vertex::Bottom))
            .collect()
    }

    pub fn lifted_index(&self, v: Vertex) -> usize {
        let k = self.components.len();
        let n = self.base.vertex_count as usize;
        match v {
            Vertex::Top(c) => c,
            Vertex::Real(i) => k + i as usize - 1,
            Vertex::Bottom(c) => k + n + c,
        }
    }

    /// Edges of the lifted graph in lexicographic order.
    pub fn edges(&self) -> Vec<(Vertex, Vertex)> {
        let mut edges: Vec<_> = self
            .lifted_vertices()
            .into_iter()
            .flat_map(|u| self.successors(u).into_iter().map(move |v| (u, v)))
            .collect();
        edges.sort_unstable();
        edges
    }

    pub fn execution_flows(&self) -> Result<Vec<ExecutionFlow>, GraphError> {
        self.execution_flows_capped(DEFAULT_FLOW_CAP)
    }

    /// Enumerates every top-to-bottom path, in lexicographic order.
    pub fn execution_flows_capped(&self, cap: usize) -> Result<Vec<ExecutionFlow>, GraphError> {
        let mut flows = Vec::new();
        let mut path = Vec::new();
        for c in 0..self.components.len() {
            self.extend_flows(Vertex::Top(c), &mut path, &mut flows, cap)?;
        }
        Ok(flows)
    }

    fn extend_flows(
        &self,
        v: Vertex,
        path: &mut Vec<Vertex>,
        flows: &mut Vec<ExecutionFlow>,
        cap: usize,
    ) -> Result<(), GraphError> {
        path.push(v);
        if let Vertex::Bottom(_) = v {
            if flows.len() >= cap {
                return Err(GraphError::FlowExplosion { cap });
            }
            flows.push(ExecutionFlow(path.clone()));
        } else {
            for w in self.successors(v) {
                self.extend_flows(w, path, flows, cap)?;
            }
        }
        path.pop();
        Ok(())
    }

    /// Real algorithms that precede `v` on some execution flow through `v`.
    ///
    /// Every vertex lies on at least one flow, so this is the set of real
    /// ancestors of `v`. For a virtual bottom it is its whole component.
    pub fn flow_predecessors(&self, v: Vertex) -> Result<BTreeSet<u32>, GraphError> {
        if !self.contains(v) {
            return Err(GraphError::UnknownVertex(v));
        }
        let mut out = BTreeSet::new();
        match v {
            Vertex::Top(_) => {}
            Vertex::Bottom(c) => out.extend(self.components[c].members.iter().copied()),
            Vertex::Real(i) => {
                let mut stack: Vec<u32> = self.base.predecessors(i).to_vec();
                while let Some(u) = stack.pop() {
                    if out.insert(u) {
                        stack.extend_from_slice(self.base.predecessors(u));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Number of edges on the longest execution flow.
    pub fn longest_flow_len(&self) -> usize {
        let mut depth = vec![0usize; self.base.vertex_count as usize + 1];
        let mut longest = 0;
        for v in self.base.topological_order() {
            let d = self
                .base
                .predecessors(v)
                .iter()
                .map(|&u| depth[u as usize] + 1)
                .max()
                .unwrap_or(1);
            depth[v as usize] = d;
            longest = longest.max(d + 1);
        }
        longest
    }

    pub fn adjacency_matrix(&self) -> CountMatrix {
        let size = self.components.len() * 2 + self.base.vertex_count as usize;
        let mut m = CountMatrix::zeros(size);
        for (u, v) in self.edges() {
            m.set(self.lifted_index(u), self.lifted_index(v), 1);
        }
        m
    }

    /// `AD^1 ..= AD^(2l)` of the lifted adjacency matrix.
    pub fn adjacency_powers(&self, l: usize) -> Vec<CountMatrix> {
        let ad = self.adjacency_matrix();
        let mut powers: Vec<CountMatrix> = Vec::with_capacity(2 * l);
        for p in 0..2 * l {
            let next = match powers.last() {
                None => ad.clone(),
                Some(prev) => prev.mul(&ad),
            };
            debug_assert_eq!(powers.len(), p);
            powers.push(next);
        }
        powers
    }
}

/// Dense square matrix of walk counts.
///
/// Arithmetic saturates at `u128::MAX`; path counts of DAGs small enough to
/// enumerate stay far below that.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    size: usize,
    data: Vec<u128>,
}

impl CountMatrix {
    pub fn zeros(size: usize) -> Self {
        CountMatrix {
            size,
            data: vec![0; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> u128 {
        self.data[row * self.size + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u128) {
        self.data[row * self.size + col] = value;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0)
    }

    pub fn nonzero_entries(&self) -> Vec<(usize, usize, u128)> {
        (0..self.size)
            .flat_map(|i| (0..self.size).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let x = self.get(i, j);
                (x != 0).then_some((i, j, x))
            })
            .collect()
    }

    pub fn mul(&self, other: &CountMatrix) -> CountMatrix {
        assert_eq!(self.size, other.size, "matrix size mismatch");
        let n = self.size;
        let mut out = CountMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0 {
                    continue;
                }
                for j in 0..n {
                    let b = other.get(k, j);
                    if b != 0 {
                        let cell = &mut out.data[i * n + j];
                        *cell = cell.saturating_add(a.saturating_mul(b));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diamond() -> SemiLattice {
        AlgorithmGraph::new(4, &[(1, 2), (1, 3), (2, 4), (3, 4)])
            .unwrap()
            .to_semilattice()
    }

    fn chain(n: u32) -> SemiLattice {
        let edges: Vec<_> = (1..n).map(|i| (i, i + 1)).collect();
        AlgorithmGraph::new(n, &edges).unwrap().to_semilattice()
    }

    #[test]
    fn smallest_graph() {
        let g = AlgorithmGraph::new(1, &[]).unwrap();
        assert_eq!(g.vertex_count(), 1);
        assert!(g.edges().is_empty());
        let sl = g.to_semilattice();
        assert_eq!(sl.components().len(), 1);
        assert_eq!(
            sl.edges(),
            vec![
                (Vertex::Top(0), Vertex::Real(1)),
                (Vertex::Real(1), Vertex::Bottom(0))
            ]
        );
    }

    #[test]
    fn triangle_dag_accepted() {
        let g = AlgorithmGraph::new(3, &[(1, 2), (1, 3), (2, 3)]).unwrap();
        assert_eq!(g.edges().len(), 3);
        assert_eq!(g.topological_order(), vec![1, 2, 3]);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            AlgorithmGraph::new(2, &[(1, 2), (2, 1)]),
            Err(GraphError::CycleDetected { cycle: vec![1, 2] })
        );
        assert_eq!(
            AlgorithmGraph::new(2, &[(1, 3)]),
            Err(GraphError::IndexOutOfRange { index: 3, count: 2 })
        );
        assert_eq!(
            AlgorithmGraph::new(2, &[(1, 1)]),
            Err(GraphError::SelfEdge(1))
        );
        assert_eq!(
            AlgorithmGraph::new(2, &[(1, 2), (1, 2)]),
            Err(GraphError::DuplicateEdge(1, 2))
        );
        assert_eq!(AlgorithmGraph::new(0, &[]), Err(GraphError::Empty));
    }

    #[test]
    fn longer_cycle_is_reported() {
        let err = AlgorithmGraph::new(4, &[(1, 2), (2, 3), (3, 4), (4, 2)]).unwrap_err();
        match err {
            GraphError::CycleDetected { cycle } => {
                let mut sorted = cycle.clone();
                sorted.sort_unstable();
                assert_eq!(sorted, vec![2, 3, 4]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disjoint_edges_make_two_components() {
        let sl = AlgorithmGraph::new(4, &[(1, 2), (3, 4)])
            .unwrap()
            .to_semilattice();
        assert_eq!(sl.components().len(), 2);
        assert_eq!(sl.components()[0].members, vec![1, 2]);
        assert_eq!(sl.components()[1].members, vec![3, 4]);
        let flows = sl.execution_flows().unwrap();
        assert_eq!(flows.len(), 2);
        assert_eq!(
            flows[1].vertices(),
            &[
                Vertex::Top(1),
                Vertex::Real(3),
                Vertex::Real(4),
                Vertex::Bottom(1)
            ]
        );
    }

    #[test]
    fn diamond_virtual_edges() {
        let sl = diamond();
        assert_eq!(sl.components().len(), 1);
        assert_eq!(sl.successors(Vertex::Top(0)), vec![Vertex::Real(1)]);
        assert_eq!(sl.predecessors(Vertex::Bottom(0)), vec![Vertex::Real(4)]);
        assert_eq!(sl.edges().len(), 6);
    }

    #[test]
    fn chain_has_one_flow() {
        let flows = chain(3).execution_flows().unwrap();
        assert_eq!(flows.len(), 1);
        assert_eq!(
            flows[0].vertices(),
            &[
                Vertex::Top(0),
                Vertex::Real(1),
                Vertex::Real(2),
                Vertex::Real(3),
                Vertex::Bottom(0)
            ]
        );
        assert_eq!(flows[0].to_string(), "top0 -> 1 -> 2 -> 3 -> bottom0");
    }

    #[test]
    fn diamond_flows_are_ordered() {
        let flows = diamond().execution_flows().unwrap();
        let real: Vec<Vec<u32>> = flows.iter().map(|f| f.real_vertices().collect()).collect();
        assert_eq!(real, vec![vec![1, 2, 4], vec![1, 3, 4]]);
    }

    #[test]
    fn flow_cap_is_enforced() {
        assert_eq!(
            diamond().execution_flows_capped(1),
            Err(GraphError::FlowExplosion { cap: 1 })
        );
        assert_eq!(diamond().execution_flows_capped(2).unwrap().len(), 2);
    }

    #[test]
    fn predecessors_on_flows() {
        let c = chain(3);
        assert!(c.flow_predecessors(Vertex::Real(1)).unwrap().is_empty());
        assert_eq!(
            c.flow_predecessors(Vertex::Real(3)).unwrap(),
            BTreeSet::from([1, 2])
        );
        assert_eq!(
            diamond().flow_predecessors(Vertex::Real(4)).unwrap(),
            BTreeSet::from([1, 2, 3])
        );
        assert_eq!(
            diamond().flow_predecessors(Vertex::Bottom(0)).unwrap(),
            BTreeSet::from([1, 2, 3, 4])
        );
        assert_eq!(
            c.flow_predecessors(Vertex::Real(9)),
            Err(GraphError::UnknownVertex(Vertex::Real(9)))
        );
    }

    #[test]
    fn empty_edge_set_powers() {
        // A lone vertex still has virtual edges; two isolated vertices have
        // no real edges, and AD^p for p >= 3 vanishes.
        let sl = AlgorithmGraph::new(2, &[]).unwrap().to_semilattice();
        let powers = sl.adjacency_powers(2);
        assert_eq!(powers.len(), 4);
        assert!(powers[2].is_zero());
        assert!(powers[3].is_zero());
        let real_block: u128 = (2..4)
            .flat_map(|i| (2..4).map(move |j| (i, j)))
            .map(|(i, j)| powers[0].get(i, j))
            .sum();
        assert_eq!(real_block, 0);
    }

    #[test]
    fn chain_square() {
        // lifted order: top, 1, 2, bottom
        let sl = chain(2);
        let powers = sl.adjacency_powers(1);
        assert_eq!(powers.len(), 2);
        assert_eq!(powers[1].nonzero_entries(), vec![(0, 2, 1), (1, 3, 1)]);
    }

    #[test]
    fn diamond_square_counts_two_walks() {
        let sl = diamond();
        let sq = &sl.adjacency_powers(1)[1];
        let top = sl.lifted_index(Vertex::Top(0));
        let one = sl.lifted_index(Vertex::Real(1));
        let four = sl.lifted_index(Vertex::Real(4));
        assert_eq!(sq.get(one, four), 2);
        assert_eq!(sq.get(top, sl.lifted_index(Vertex::Real(2))), 1);
        assert_eq!(sl.longest_flow_len(), 4);
    }
}
