//! Node/link topology, expected-time routing and communication times.
//!
//! Every link carries a constant transmission time `C` and an exponential
//! delay. A task that makes `k` requests from node `r` to node `t` spends
//! `2k` one-way legs on every hop of the chosen route, so its communication
//! time is `2k * sum(C) + sum over hops of Erlang(2k, rate_hop)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stochastics::{DelayError, DelaySum, ErlangDelay, ExponentialDelay};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("unknown node index {0}")]
    UnknownNode(usize),
    #[error("link endpoints must differ (node {0})")]
    SelfLink(String),
    #[error("duplicate link between {0} and {1}")]
    DuplicateLink(String, String),
    #[error("link constant time must be finite and non-negative, got {0}")]
    BadConstant(f64),
    #[error("network is disconnected: {0} cannot reach {1}")]
    Disconnected(String, String),
    #[error("no route from node {0} to node {1}")]
    Unreachable(usize, usize),
    #[error(transparent)]
    Delay(#[from] DelayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Robot,
    Fog,
    Cloud,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Robot => "robot",
            NodeKind::Fog => "fog",
            NodeKind::Cloud => "cloud",
        })
    }
}

impl FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "robot" => Ok(NodeKind::Robot),
            "fog" => Ok(NodeKind::Fog),
            "cloud" => Ok(NodeKind::Cloud),
            other => Err(format!(
                "unknown node kind `{other}` (expected robot, fog or cloud)"
            )),
        }
    }
}

/// Position of a node in the network, 0-based. [`NodeId::idx`] is the
/// 1-based index used in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn idx(self) -> usize {
        self.0 + 1
    }
}

/// Position of a task in the task catalog, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub kind: NodeKind,
    pub label: String,
}

impl Node {
    pub fn new(kind: NodeKind, label: impl Into<String>) -> Self {
        Node {
            kind,
            label: label.into(),
        }
    }
}

/// Undirected link with symmetric parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    constant: f64,
    delay: ExponentialDelay,
}

impl Link {
    pub fn new(a: NodeId, b: NodeId, constant: f64, rate: f64) -> Result<Self, NetError> {
        if !(constant.is_finite() && constant >= 0.0) {
            return Err(NetError::BadConstant(constant));
        }
        Ok(Link {
            a,
            b,
            constant,
            delay: ExponentialDelay::new(rate)?,
        })
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn rate(&self) -> f64 {
        self.delay.rate()
    }

    /// Expected one-way time: `C + 1/rate`.
    pub fn expected_time(&self) -> f64 {
        self.constant + self.delay.mean()
    }

    pub fn other(&self, end: NodeId) -> NodeId {
        if end == self.a {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    nodes: Vec<Node>,
    links: Vec<Link>,
    adjacency: Vec<Vec<usize>>,
}

/// Cost, node path and link path of a tentative route.
type Label = (f64, Vec<NodeId>, Vec<usize>);

impl NetworkModel {
    pub fn new(nodes: Vec<Node>, links: Vec<Link>) -> Result<Self, NetError> {
        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut pairs = std::collections::BTreeSet::new();
        for (i, link) in links.iter().enumerate() {
            for end in [link.a, link.b] {
                if end.0 >= nodes.len() {
                    return Err(NetError::UnknownNode(end.0));
                }
            }
            if link.a == link.b {
                return Err(NetError::SelfLink(nodes[link.a.0].label.clone()));
            }
            let key = (link.a.min(link.b), link.a.max(link.b));
            if !pairs.insert(key) {
                return Err(NetError::DuplicateLink(
                    nodes[key.0 .0].label.clone(),
                    nodes[key.1 .0].label.clone(),
                ));
            }
            adjacency[link.a.0].push(i);
            adjacency[link.b.0].push(i);
        }
        let net = NetworkModel {
            nodes,
            links,
            adjacency,
        };
        net.check_connected()?;
        Ok(net)
    }

    fn check_connected(&self) -> Result<(), NetError> {
        if self.nodes.is_empty() {
            return Ok(());
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![NodeId(0)];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &l in &self.adjacency[u.0] {
                let v = self.links[l].other(u);
                if !seen[v.0] {
                    seen[v.0] = true;
                    stack.push(v);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(missing) => Err(NetError::Disconnected(
                self.nodes[0].label.clone(),
                self.nodes[missing].label.clone(),
            )),
            None => Ok(()),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn find(&self, label: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.label == label).map(NodeId)
    }

    /// Route from `a` to `b` with the smallest expected one-way time.
    ///
    /// Equal-cost routes are broken by the lexicographically smallest node
    /// sequence. Hop costs are strictly positive, so routes are simple.
    pub fn shortest_comm_path(&self, a: NodeId, b: NodeId) -> Result<Route, NetError> {
        let n = self.nodes.len();
        for end in [a, b] {
            if end.0 >= n {
                return Err(NetError::UnknownNode(end.0));
            }
        }
        let mut best: Vec<Option<Label>> = vec![None; n];
        let mut done = vec![false; n];
        best[a.0] = Some((0.0, vec![a], Vec::new()));
        loop {
            let next = (0..n)
                .filter(|&i| !done[i])
                .filter_map(|i| best[i].as_ref().map(|(c, p, _)| (i, *c, p)))
                .min_by(|x, y| x.1.total_cmp(&y.1).then_with(|| x.2.cmp(y.2)))
                .map(|(i, _, _)| i);
            let Some(u) = next else { break };
            done[u] = true;
            if u == b.0 {
                break;
            }
            let (cost_u, path_u, links_u) = best[u].clone().expect("selected node has a label");
            for &l in &self.adjacency[u] {
                let v = self.links[l].other(NodeId(u));
                if done[v.0] {
                    continue;
                }
                let cost = cost_u + self.links[l].expected_time();
                let improves = match &best[v.0] {
                    None => true,
                    Some((c, p, _)) => {
                        cost < *c || (cost == *c && lex_less_extended(&path_u, v, p))
                    }
                };
                if improves {
                    let mut path = path_u.clone();
                    path.push(v);
                    let mut links = links_u.clone();
                    links.push(l);
                    best[v.0] = Some((cost, path, links));
                }
            }
        }
        match best[b.0].take() {
            Some((_, nodes, links)) => Ok(Route { nodes, links }),
            None => Err(NetError::Unreachable(a.idx(), b.idx())),
        }
    }
}

fn lex_less_extended(prefix: &[NodeId], last: NodeId, other: &[NodeId]) -> bool {
    prefix
        .iter()
        .copied()
        .chain(std::iter::once(last))
        .lt(other.iter().copied())
}

/// A simple path through the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    /// Link indices, one per hop.
    pub links: Vec<usize>,
}

impl Route {
    pub fn hop_count(&self) -> usize {
        self.links.len()
    }

    /// Sum of expected one-way hop times, accumulated in path order.
    pub fn expected_cost(&self, net: &NetworkModel) -> f64 {
        self.links
            .iter()
            .fold(0.0, |acc, &l| acc + net.links[l].expected_time())
    }

    /// Communication time distribution for `requests` round trips along
    /// this route.
    pub fn round_trips(&self, net: &NetworkModel, requests: u32) -> DelaySum {
        let mut total = DelaySum::zero();
        if requests == 0 {
            return total;
        }
        let legs = 2 * u64::from(requests);
        let constants: f64 = self.links.iter().map(|&l| net.links[l].constant).sum();
        total
            .add_constant(legs as f64 * constants)
            .expect("link constants are validated");
        for &l in &self.links {
            total.push_term(
                ErlangDelay::new(legs, net.links[l].rate()).expect("link rates are validated"),
            );
        }
        total
    }
}

/// All-pairs routes, computed once per network.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    routes: Vec<Vec<Route>>,
}

impl RoutingTable {
    pub fn new(net: &NetworkModel) -> Result<Self, NetError> {
        let routes = net
            .node_ids()
            .map(|a| {
                net.node_ids()
                    .map(|b| net.shortest_comm_path(a, b))
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        Ok(RoutingTable { routes })
    }

    pub fn route(&self, a: NodeId, b: NodeId) -> &Route {
        &self.routes[a.0][b.0]
    }

    /// Expected single round-trip time between every pair of nodes.
    pub fn round_trip_matrix(&self, net: &NetworkModel) -> Vec<Vec<f64>> {
        self.routes
            .iter()
            .map(|row| row.iter().map(|r| r.round_trips(net, 1).mean()).collect())
            .collect()
    }
}

/// Request counts `k_T` per (task, requesting node, target node).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RequestProfile {
    counts: BTreeMap<(TaskId, NodeId, NodeId), u32>,
}

impl RequestProfile {
    pub fn new() -> Self {
        RequestProfile::default()
    }

    pub fn set(&mut self, task: TaskId, from: NodeId, to: NodeId, count: u32) {
        if count == 0 {
            self.counts.remove(&(task, from, to));
        } else {
            self.counts.insert((task, from, to), count);
        }
    }

    pub fn get(&self, task: TaskId, from: NodeId, to: NodeId) -> u32 {
        self.counts.get(&(task, from, to)).copied().unwrap_or(0)
    }

    /// Targets with a non-zero request count, in node order.
    pub fn targets(&self, task: TaskId, from: NodeId) -> impl Iterator<Item = (NodeId, u32)> + '_ {
        self.counts
            .range((task, from, NodeId(0))..=(task, from, NodeId(usize::MAX)))
            .map(|(&(_, _, to), &k)| (to, k))
    }

    pub fn iter(&self) -> impl Iterator<Item = (TaskId, NodeId, NodeId, u32)> + '_ {
        self.counts.iter().map(|(&(t, a, b), &k)| (t, a, b, k))
    }
}

/// How a communication-time distribution is collapsed to one number.
pub enum Evaluation<'a> {
    /// The mean of the distribution.
    Expected,
    /// One draw from the supplied generator.
    Sampled(&'a mut dyn RngCore),
}

impl Evaluation<'_> {
    pub fn eval(&mut self, d: &DelaySum) -> f64 {
        match self {
            Evaluation::Expected => d.mean(),
            Evaluation::Sampled(rng) => d.sample(&mut **rng),
        }
    }
}

/// Distribution of the total communication time between `from` and
/// `target` while performing `task`.
pub fn com_t_pair(
    net: &NetworkModel,
    routes: &RoutingTable,
    profile: &RequestProfile,
    task: TaskId,
    from: NodeId,
    target: NodeId,
) -> DelaySum {
    let k = profile.get(task, from, target);
    if k == 0 || from == target {
        return DelaySum::zero();
    }
    routes.route(from, target).round_trips(net, k)
}

/// Largest communication time over every target `from` talks to.
pub fn com_t_max(
    net: &NetworkModel,
    routes: &RoutingTable,
    profile: &RequestProfile,
    task: TaskId,
    from: NodeId,
    eval: &mut Evaluation<'_>,
) -> f64 {
    profile
        .targets(task, from)
        .map(|(target, _)| eval.eval(&com_t_pair(net, routes, profile, task, from, target)))
        .fold(0.0, f64::max)
}

/// Inverse communication time; zero communication maps to `+inf`.
pub fn ict(comt: f64) -> f64 {
    if comt == 0.0 {
        f64::INFINITY
    } else {
        1.0 / comt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(n: usize) -> Vec<Node> {
        (0..n)
            .map(|i| Node::new(NodeKind::Robot, format!("N{i}")))
            .collect()
    }

    /// Links whose expected hop time is exactly `cost` (constant cost - 1, rate 1).
    fn link(a: usize, b: usize, cost: f64) -> Link {
        Link::new(NodeId(a), NodeId(b), cost - 1.0, 1.0).unwrap()
    }

    #[test]
    fn adjacent_nodes_use_one_hop() {
        let net = NetworkModel::new(nodes(2), vec![link(0, 1, 3.0)]).unwrap();
        let r = net.shortest_comm_path(NodeId(0), NodeId(1)).unwrap();
        assert_eq!(r.nodes, vec![NodeId(0), NodeId(1)]);
        assert_eq!(r.hop_count(), 1);
    }

    #[test]
    fn triangle_prefers_two_cheap_hops() {
        // a=0, b=1, c=2
        let net = NetworkModel::new(
            nodes(3),
            vec![link(0, 1, 10.0), link(0, 2, 1.0), link(2, 1, 1.0)],
        )
        .unwrap();
        let r = net.shortest_comm_path(NodeId(0), NodeId(1)).unwrap();
        assert_eq!(r.nodes, vec![NodeId(0), NodeId(2), NodeId(1)]);
        assert_eq!(r.expected_cost(&net), 2.0);
    }

    #[test]
    fn ties_break_lexicographically() {
        // square 0-1-3 and 0-2-3 with equal costs
        let net = NetworkModel::new(
            nodes(4),
            vec![
                link(0, 2, 2.0),
                link(2, 3, 2.0),
                link(0, 1, 2.0),
                link(1, 3, 2.0),
            ],
        )
        .unwrap();
        let r = net.shortest_comm_path(NodeId(0), NodeId(3)).unwrap();
        assert_eq!(r.nodes, vec![NodeId(0), NodeId(1), NodeId(3)]);
    }

    #[test]
    fn invalid_networks() {
        assert!(matches!(
            NetworkModel::new(nodes(3), vec![link(0, 1, 2.0)]),
            Err(NetError::Disconnected(_, _))
        ));
        assert!(matches!(
            NetworkModel::new(nodes(2), vec![link(0, 0, 2.0)]),
            Err(NetError::SelfLink(_))
        ));
        assert!(matches!(
            NetworkModel::new(nodes(2), vec![link(0, 1, 2.0), link(1, 0, 3.0)]),
            Err(NetError::DuplicateLink(_, _))
        ));
        assert!(Link::new(NodeId(0), NodeId(1), -1.0, 1.0).is_err());
        assert!(Link::new(NodeId(0), NodeId(1), 1.0, 0.0).is_err());
    }

    fn two_hop() -> (NetworkModel, RoutingTable) {
        let net = NetworkModel::new(
            nodes(3),
            vec![
                Link::new(NodeId(0), NodeId(1), 1.0, 4.0).unwrap(),
                Link::new(NodeId(1), NodeId(2), 1.0, 4.0).unwrap(),
            ],
        )
        .unwrap();
        let routes = RoutingTable::new(&net).unwrap();
        (net, routes)
    }

    #[test]
    fn zero_requests_cost_nothing() {
        let (net, routes) = two_hop();
        let profile = RequestProfile::new();
        let d = com_t_pair(&net, &routes, &profile, TaskId(0), NodeId(0), NodeId(2));
        assert!(d.is_zero());
        assert_eq!(
            com_t_max(
                &net,
                &routes,
                &profile,
                TaskId(0),
                NodeId(0),
                &mut Evaluation::Expected
            ),
            0.0
        );
    }

    #[test]
    fn single_hop_expected_time() {
        let net = NetworkModel::new(
            nodes(2),
            vec![Link::new(NodeId(0), NodeId(1), 1.0, 2.0).unwrap()],
        )
        .unwrap();
        let routes = RoutingTable::new(&net).unwrap();
        let mut profile = RequestProfile::new();
        profile.set(TaskId(0), NodeId(0), NodeId(1), 2);
        let d = com_t_pair(&net, &routes, &profile, TaskId(0), NodeId(0), NodeId(1));
        assert_eq!(d.mean(), 6.0);
    }

    #[test]
    fn equal_rate_hops_collapse() {
        let (net, routes) = two_hop();
        let mut profile = RequestProfile::new();
        profile.set(TaskId(0), NodeId(0), NodeId(2), 1);
        let d = com_t_pair(&net, &routes, &profile, TaskId(0), NodeId(0), NodeId(2));
        assert_eq!(d.offset(), 4.0);
        assert_eq!(
            d.as_single_erlang(),
            Some(ErlangDelay::new(4, 4.0).unwrap())
        );
        assert_eq!(d.mean(), 5.0);
    }

    #[test]
    fn max_over_targets() {
        let net = NetworkModel::new(
            nodes(3),
            vec![
                Link::new(NodeId(0), NodeId(1), 1.0, 2.0).unwrap(),
                Link::new(NodeId(0), NodeId(2), 1.0, 4.0).unwrap(),
            ],
        )
        .unwrap();
        let routes = RoutingTable::new(&net).unwrap();
        let mut profile = RequestProfile::new();
        profile.set(TaskId(0), NodeId(0), NodeId(1), 2); // 4 + 2 = 6
        profile.set(TaskId(0), NodeId(0), NodeId(2), 2); // 4 + 1 = 5
        let m = com_t_max(
            &net,
            &routes,
            &profile,
            TaskId(0),
            NodeId(0),
            &mut Evaluation::Expected,
        );
        assert_eq!(m, 6.0);
    }

    #[test]
    fn inverse_time() {
        assert_eq!(ict(0.0), f64::INFINITY);
        assert_eq!(ict(2.0), 0.5);
        assert!((ict(375.94) - 0.00266).abs() < 5e-6);
    }

    #[test]
    fn round_trip_matrix_is_symmetric() {
        let (net, routes) = two_hop();
        let ct = routes.round_trip_matrix(&net);
        assert_eq!(ct[0][0], 0.0);
        assert_eq!(ct[0][2], ct[2][0]);
        // 2 * (1 + 1) + 2/4 + 2/4
        assert_eq!(ct[0][2], 5.0);
    }
}
