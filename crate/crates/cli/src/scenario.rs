//! Line-oriented scenario files.
//!
//! ```text
//! # comments run to the end of the line
//! [network]
//! node R1 robot
//! node C cloud
//! link R1 C const=12 rate=8
//!
//! [task T]
//! algorithms A1 A2
//! top Data
//! bottom Out
//! edge A1 -> A2
//! window start=0 deadline=inf
//! candidates R1
//! place A2 C
//!
//! [exec T]
//! nodes R1 C
//! A1 2 0.5
//! A2 - 1.5
//!
//! [compatibility]
//! incompatible T R1
//!
//! [requests]
//! request T R1 C 7
//!
//! [overrides]
//! score comm T R1 0.00266
//! a1 T Out R1 0.65
//! a2 T Out R1 0.65
//!
//! [arrivals]
//! arrive t=0 task=T
//!
//! [options]
//! mode expected
//! seed 7
//! subspaces cmpt,comm,cplt
//! step 0.1
//! tol 1e-6
//! max_iter 10000
//! threads 1
//! ```
//!
//! Sections may appear in any order. `-` in an exec row marks a node that
//! cannot run the algorithm; nodes missing from the `nodes` header are
//! likewise incapable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use hyperalloc_core::catalog::{Algorithm, TimeWindow};
use hyperalloc_core::graph::AlgorithmGraph;
use hyperalloc_core::network::{Link, NetworkModel, Node, NodeId, NodeKind, TaskId};
use hyperalloc_core::subspaces::{parse_subspaces, Subspace};
use thiserror::Error;

use crate::engine::{Mode, RunOptions};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ErrorKind {
    #[error("{0}")]
    Parse(String),
    #[error("unresolved reference to {what} `{name}`")]
    UnresolvedReference { what: &'static str, name: String },
    #[error("duplicate definition of {what} `{name}`")]
    DuplicateDefinition { what: &'static str, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ScenarioError {
    pub line: usize,
    pub column: usize,
    pub kind: ErrorKind,
}

/// Every problem found in a scenario, in source order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioErrors(pub Vec<ScenarioError>);

impl fmt::Display for ScenarioErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioErrors {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDef {
    pub a: NodeId,
    pub b: NodeId,
    pub constant: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDef {
    pub name: String,
    pub labels: Vec<String>,
    pub top_label: String,
    pub bottom_label: String,
    /// 1-based algorithm indices.
    pub edges: Vec<(u32, u32)>,
    pub window: TimeWindow,
    pub candidates: Option<Vec<NodeId>>,
    /// One entry per node; `None` where the node is incapable.
    pub exec: BTreeMap<Algorithm, Vec<Option<f64>>>,
    pub placement: BTreeMap<Algorithm, NodeId>,
}

impl TaskDef {
    pub fn label(&self, alg: Algorithm) -> &str {
        match alg {
            Algorithm::Top => &self.top_label,
            Algorithm::Real(i) => &self.labels[i as usize - 1],
            Algorithm::Bottom => &self.bottom_label,
        }
    }

    fn find(&self, label: &str) -> Option<Algorithm> {
        if label == self.top_label {
            Some(Algorithm::Top)
        } else if label == self.bottom_label {
            Some(Algorithm::Bottom)
        } else {
            self.labels
                .iter()
                .position(|l| l == label)
                .map(|i| Algorithm::Real(i as u32 + 1))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub task: TaskId,
}

/// Line numbers of definitions, for error context. Not part of a
/// scenario's identity.
#[derive(Debug, Clone, Default)]
pub struct SourceMap {
    pub network: usize,
    pub tasks: Vec<usize>,
    pub arrivals: Vec<usize>,
}

impl PartialEq for SourceMap {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub nodes: Vec<Node>,
    pub links: Vec<LinkDef>,
    pub tasks: Vec<TaskDef>,
    pub incompatible: BTreeSet<(TaskId, NodeId)>,
    pub requests: BTreeMap<(TaskId, NodeId, NodeId), u32>,
    /// Injected subspace measures, used instead of computed ones.
    pub scores: BTreeMap<(Subspace, TaskId, NodeId), f64>,
    pub a1: BTreeMap<(TaskId, Algorithm, NodeId), f64>,
    pub a2: BTreeMap<(TaskId, Algorithm, NodeId), f64>,
    pub arrivals: Vec<Arrival>,
    pub options: RunOptions,
    pub source: SourceMap,
}

impl Scenario {
    pub fn find_node(&self, label: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.label == label).map(NodeId)
    }

    pub fn find_task(&self, name: &str) -> Option<TaskId> {
        self.tasks.iter().position(|t| t.name == name).map(TaskId)
    }

    pub fn node_label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    pub fn task_name(&self, id: TaskId) -> &str {
        &self.tasks[id.0].name
    }

    pub fn network(&self) -> Result<NetworkModel, hyperalloc_core::network::NetError> {
        let links = self
            .links
            .iter()
            .map(|l| Link::new(l.a, l.b, l.constant, l.rate))
            .collect::<Result<Vec<_>, _>>()?;
        NetworkModel::new(self.nodes.clone(), links)
    }

    /// Renders the scenario in the text format accepted by [`parse_scenario`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let node = |id: NodeId| self.node_label(id);
        let _ = writeln!(out, "[network]");
        for n in &self.nodes {
            let _ = writeln!(out, "node {} {}", n.label, n.kind);
        }
        for l in &self.links {
            let _ = writeln!(
                out,
                "link {} {} const={} rate={}",
                node(l.a),
                node(l.b),
                l.constant,
                l.rate
            );
        }
        for t in &self.tasks {
            let _ = writeln!(out, "\n[task {}]", t.name);
            let _ = writeln!(out, "algorithms {}", t.labels.join(" "));
            let _ = writeln!(out, "top {}", t.top_label);
            let _ = writeln!(out, "bottom {}", t.bottom_label);
            for &(a, b) in &t.edges {
                let _ = writeln!(
                    out,
                    "edge {} -> {}",
                    t.labels[a as usize - 1],
                    t.labels[b as usize - 1]
                );
            }
            let _ = writeln!(
                out,
                "window start={} deadline={}",
                t.window.start, t.window.deadline
            );
            if let Some(c) = &t.candidates {
                let names: Vec<&str> = c.iter().map(|&n| node(n)).collect();
                let _ = writeln!(out, "candidates {}", names.join(" "));
            }
            for (&alg, &n) in &t.placement {
                let _ = writeln!(out, "place {} {}", t.label(alg), node(n));
            }
            if !t.exec.is_empty() {
                let _ = writeln!(out, "\n[exec {}]", t.name);
                let names: Vec<&str> = self.nodes.iter().map(|n| n.label.as_str()).collect();
                let _ = writeln!(out, "nodes {}", names.join(" "));
                for (&alg, row) in &t.exec {
                    let cells: Vec<String> = row
                        .iter()
                        .map(|c| c.map_or_else(|| "-".to_string(), |v| v.to_string()))
                        .collect();
                    let _ = writeln!(out, "{} {}", t.label(alg), cells.join(" "));
                }
            }
        }
        if !self.incompatible.is_empty() {
            let _ = writeln!(out, "\n[compatibility]");
            for &(t, n) in &self.incompatible {
                let _ = writeln!(out, "incompatible {} {}", self.task_name(t), node(n));
            }
        }
        if !self.requests.is_empty() {
            let _ = writeln!(out, "\n[requests]");
            for (&(t, a, b), k) in &self.requests {
                let _ = writeln!(
                    out,
                    "request {} {} {} {}",
                    self.task_name(t),
                    node(a),
                    node(b),
                    k
                );
            }
        }
        if !(self.scores.is_empty() && self.a1.is_empty() && self.a2.is_empty()) {
            let _ = writeln!(out, "\n[overrides]");
            for (&(s, t, n), v) in &self.scores {
                let _ = writeln!(out, "score {} {} {} {}", s, self.task_name(t), node(n), v);
            }
            for (key, map) in [("a1", &self.a1), ("a2", &self.a2)] {
                for (&(t, alg, n), v) in map {
                    let task = &self.tasks[t.0];
                    let _ = writeln!(
                        out,
                        "{key} {} {} {} {v}",
                        task.name,
                        task.label(alg),
                        node(n)
                    );
                }
            }
        }
        if !self.arrivals.is_empty() {
            let _ = writeln!(out, "\n[arrivals]");
            for a in &self.arrivals {
                let _ = writeln!(out, "arrive t={} task={}", a.time, self.task_name(a.task));
            }
        }
        let o = &self.options;
        let subs: Vec<&str> = o.subspaces.iter().map(|s| s.name()).collect();
        let _ = writeln!(out, "\n[options]");
        let _ = writeln!(out, "mode {}", o.mode);
        let _ = writeln!(out, "seed {}", o.seed);
        let _ = writeln!(out, "subspaces {}", subs.join(","));
        let _ = writeln!(out, "step {}", o.dynamics.step);
        let _ = writeln!(out, "tol {}", o.dynamics.tol);
        let _ = writeln!(out, "max_iter {}", o.dynamics.max_iter);
        let _ = writeln!(out, "threads {}", o.threads);
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Tok<'a> {
    col: usize,
    text: &'a str,
}

#[derive(Debug, Clone)]
struct Line<'a> {
    no: usize,
    toks: Vec<Tok<'a>>,
}

impl Line<'_> {
    fn keyword(&self) -> &str {
        self.toks[0].text
    }

    fn end_col(&self) -> usize {
        self.toks
            .last()
            .map_or(1, |t| t.col + t.text.chars().count())
    }
}

fn tokenize(no: usize, raw: &str) -> Line<'_> {
    let text = raw.split('#').next().unwrap_or("");
    let mut toks = Vec::new();
    let mut start = None;
    for (i, ch) in text
        .char_indices()
        .chain(std::iter::once((text.len(), ' ')))
    {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                toks.push(Tok {
                    col: text[..s].chars().count() + 1,
                    text: &text[s..i],
                });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    Line { no, toks }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Header {
    Network,
    Task(String),
    Exec(String),
    Compatibility,
    Requests,
    Overrides,
    Arrivals,
    Options,
}

#[derive(Debug)]
struct Section<'a> {
    header: Header,
    line: usize,
    col: usize,
    body: Vec<Line<'a>>,
}

#[derive(Default)]
struct Parser {
    errors: Vec<ScenarioError>,
}

impl Parser {
    fn err(&mut self, line: usize, col: usize, kind: ErrorKind) {
        self.errors.push(ScenarioError {
            line,
            column: col,
            kind,
        });
    }

    fn parse_err(&mut self, line: usize, col: usize, msg: impl Into<String>) {
        self.err(line, col, ErrorKind::Parse(msg.into()));
    }

    fn unresolved(&mut self, tok: Tok<'_>, line: usize, what: &'static str) {
        self.err(
            line,
            tok.col,
            ErrorKind::UnresolvedReference {
                what,
                name: tok.text.to_string(),
            },
        );
    }

    fn duplicate(&mut self, line: usize, col: usize, what: &'static str, name: &str) {
        self.err(
            line,
            col,
            ErrorKind::DuplicateDefinition {
                what,
                name: name.to_string(),
            },
        );
    }

    /// Checks that `line` has exactly `n` tokens after the keyword.
    fn arity(&mut self, line: &Line<'_>, n: usize, usage: &str) -> bool {
        if line.toks.len() == n + 1 {
            return true;
        }
        let col = line.toks.get(n + 1).map_or(line.end_col(), |t| t.col);
        self.parse_err(line.no, col, format!("expected `{usage}`"));
        false
    }

    fn number(&mut self, line: usize, tok: Tok<'_>) -> Option<f64> {
        match tok.text.parse::<f64>() {
            Ok(v) if !v.is_nan() => Some(v),
            _ => {
                self.parse_err(line, tok.col, format!("`{}` is not a number", tok.text));
                None
            }
        }
    }

    fn finite_non_negative(&mut self, line: usize, tok: Tok<'_>, what: &str) -> Option<f64> {
        let v = self.number(line, tok)?;
        if v.is_finite() && v >= 0.0 {
            Some(v)
        } else {
            self.parse_err(
                line,
                tok.col,
                format!("{what} must be finite and non-negative, got {v}"),
            );
            None
        }
    }

    fn integer<T: std::str::FromStr>(&mut self, line: usize, tok: Tok<'_>) -> Option<T> {
        match tok.text.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.parse_err(
                    line,
                    tok.col,
                    format!("`{}` is not a non-negative integer", tok.text),
                );
                None
            }
        }
    }

    /// Splits `key=value` and checks the key.
    fn keyed<'a>(&mut self, line: usize, tok: Tok<'a>, key: &str) -> Option<Tok<'a>> {
        match tok.text.split_once('=') {
            Some((k, v)) if k == key => Some(Tok {
                col: tok.col + k.len() + 1,
                text: v,
            }),
            _ => {
                self.parse_err(
                    line,
                    tok.col,
                    format!("expected `{key}=<value>`, found `{}`", tok.text),
                );
                None
            }
        }
    }
}

fn parse_header(p: &mut Parser, line: &Line<'_>, raw: &str) -> Option<Header> {
    let first = line.toks[0];
    let inner = raw.trim().split('#').next().unwrap_or("").trim();
    let Some(inner) = inner.strip_prefix('[').and_then(|s| s.strip_suffix(']')) else {
        p.parse_err(line.no, first.col, "malformed section header");
        return None;
    };
    let words: Vec<&str> = inner.split_whitespace().collect();
    let header = match words.as_slice() {
        ["network"] => Header::Network,
        ["task", name] => Header::Task(name.to_string()),
        ["exec", name] => Header::Exec(name.to_string()),
        ["compatibility"] => Header::Compatibility,
        ["requests"] => Header::Requests,
        ["overrides"] => Header::Overrides,
        ["arrivals"] => Header::Arrivals,
        ["options"] => Header::Options,
        _ => {
            p.parse_err(line.no, first.col, format!("unknown section `[{inner}]`"));
            return None;
        }
    };
    Some(header)
}

fn split_sections<'a>(p: &mut Parser, text: &'a str) -> Vec<Section<'a>> {
    let mut sections: Vec<Section<'a>> = Vec::new();
    let mut skipping = false;
    for (i, raw) in text.lines().enumerate() {
        let line = tokenize(i + 1, raw);
        if line.toks.is_empty() {
            continue;
        }
        if line.toks[0].text.starts_with('[') {
            skipping = false;
            match parse_header(p, &line, raw) {
                Some(header) => sections.push(Section {
                    header,
                    line: line.no,
                    col: line.toks[0].col,
                    body: Vec::new(),
                }),
                None => skipping = true,
            }
        } else if skipping {
            continue;
        } else if let Some(s) = sections.last_mut() {
            s.body.push(line);
        } else {
            p.parse_err(
                line.no,
                line.toks[0].col,
                "content before the first section header",
            );
        }
    }
    sections
}

fn resolve_node(p: &mut Parser, nodes: &[Node], line: usize, tok: Tok<'_>) -> Option<NodeId> {
    let id = nodes.iter().position(|n| n.label == tok.text).map(NodeId);
    if id.is_none() {
        p.unresolved(tok, line, "node");
    }
    id
}

fn resolve_task(p: &mut Parser, tasks: &[TaskDef], line: usize, tok: Tok<'_>) -> Option<TaskId> {
    let id = tasks.iter().position(|t| t.name == tok.text).map(TaskId);
    if id.is_none() {
        p.unresolved(tok, line, "task");
    }
    id
}

fn resolve_alg(p: &mut Parser, task: &TaskDef, line: usize, tok: Tok<'_>) -> Option<Algorithm> {
    let alg = task.find(tok.text);
    if alg.is_none() {
        p.unresolved(tok, line, "algorithm");
    }
    alg
}

fn parse_network(p: &mut Parser, s: &Section<'_>) -> (Vec<Node>, Vec<LinkDef>) {
    let mut nodes: Vec<Node> = Vec::new();
    for line in s.body.iter().filter(|l| l.keyword() == "node") {
        if !p.arity(line, 2, "node <label> robot|fog|cloud") {
            continue;
        }
        let (label, kind) = (line.toks[1], line.toks[2]);
        let kind: NodeKind = match kind.text.parse() {
            Ok(k) => k,
            Err(e) => {
                p.parse_err(line.no, kind.col, e);
                continue;
            }
        };
        if nodes.iter().any(|n| n.label == label.text) {
            p.duplicate(line.no, label.col, "node", label.text);
            continue;
        }
        nodes.push(Node::new(kind, label.text));
    }
    let mut links: Vec<LinkDef> = Vec::new();
    for line in &s.body {
        match line.keyword() {
            "node" => {}
            "link" => {
                if !p.arity(line, 4, "link <a> <b> const=<time> rate=<rate>") {
                    continue;
                }
                let a = resolve_node(p, &nodes, line.no, line.toks[1]);
                let b = resolve_node(p, &nodes, line.no, line.toks[2]);
                let c = p
                    .keyed(line.no, line.toks[3], "const")
                    .and_then(|t| p.finite_non_negative(line.no, t, "link constant"));
                let r = p.keyed(line.no, line.toks[4], "rate").and_then(|t| {
                    let v = p.number(line.no, t)?;
                    if v.is_finite() && v > 0.0 {
                        Some(v)
                    } else {
                        p.parse_err(
                            line.no,
                            t.col,
                            format!("link rate must be finite and positive, got {v}"),
                        );
                        None
                    }
                });
                let (Some(a), Some(b), Some(constant), Some(rate)) = (a, b, c, r) else {
                    continue;
                };
                if a == b {
                    p.parse_err(line.no, line.toks[2].col, "link endpoints must differ");
                    continue;
                }
                let key = (a.min(b), a.max(b));
                if links.iter().any(|l| (l.a.min(l.b), l.a.max(l.b)) == key) {
                    let name = format!("{} {}", line.toks[1].text, line.toks[2].text);
                    p.duplicate(line.no, line.toks[1].col, "link", &name);
                    continue;
                }
                links.push(LinkDef {
                    a,
                    b,
                    constant,
                    rate,
                });
            }
            other => p.parse_err(
                line.no,
                line.toks[0].col,
                format!("unknown network entry `{other}`"),
            ),
        }
    }
    (nodes, links)
}

fn parse_task(p: &mut Parser, s: &Section<'_>, name: &str, nodes: &[Node]) -> TaskDef {
    let mut task = TaskDef {
        name: name.to_string(),
        labels: Vec::new(),
        top_label: "top".into(),
        bottom_label: "bottom".into(),
        edges: Vec::new(),
        window: TimeWindow::unbounded(),
        candidates: None,
        exec: BTreeMap::new(),
        placement: BTreeMap::new(),
    };
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    // labels first so that edges may precede them
    for line in &s.body {
        match line.keyword() {
            "algorithms" => {
                if !seen.insert("algorithms") {
                    p.duplicate(line.no, line.toks[0].col, "entry", "algorithms");
                    continue;
                }
                for tok in &line.toks[1..] {
                    if task.labels.iter().any(|l| l == tok.text) {
                        p.duplicate(line.no, tok.col, "algorithm", tok.text);
                    } else {
                        task.labels.push(tok.text.to_string());
                    }
                }
            }
            kw @ ("top" | "bottom") => {
                if !seen.insert(kw) {
                    p.duplicate(line.no, line.toks[0].col, "entry", kw);
                    continue;
                }
                if p.arity(line, 1, &format!("{kw} <label>")) {
                    let label = line.toks[1].text.to_string();
                    if kw == "top" {
                        task.top_label = label;
                    } else {
                        task.bottom_label = label;
                    }
                }
            }
            _ => {}
        }
    }
    if task.labels.is_empty() {
        p.parse_err(
            s.line,
            s.col,
            format!("task `{name}` declares no algorithms"),
        );
    }
    for (label, kw) in [(&task.top_label, "top"), (&task.bottom_label, "bottom")] {
        if task.labels.contains(label) {
            let line = s
                .body
                .iter()
                .find(|l| l.keyword() == kw)
                .map_or(s.line, |l| l.no);
            p.duplicate(line, 1, "algorithm", label);
        }
    }
    if task.top_label == task.bottom_label {
        p.duplicate(s.line, s.col, "algorithm", &task.top_label.clone());
    }
    for line in &s.body {
        match line.keyword() {
            "algorithms" | "top" | "bottom" => {}
            "edge" => {
                let toks = &line.toks[1..];
                if toks.len() < 3
                    || toks.len() % 2 == 0
                    || toks.iter().skip(1).step_by(2).any(|t| t.text != "->")
                {
                    p.parse_err(
                        line.no,
                        line.toks[0].col,
                        "expected `edge <from> -> <to> [-> <to>...]`",
                    );
                    continue;
                }
                let chain: Vec<Option<u32>> = toks
                    .iter()
                    .step_by(2)
                    .map(|&t| match task.find(t.text) {
                        Some(Algorithm::Real(i)) => Some(i),
                        Some(_) => {
                            p.parse_err(line.no, t.col, "edges may only join declared algorithms, not the virtual top or bottom");
                            None
                        }
                        None => {
                            p.unresolved(t, line.no, "algorithm");
                            None
                        }
                    })
                    .collect();
                for (k, pair) in chain.windows(2).enumerate() {
                    if let [Some(a), Some(b)] = *pair {
                        if task.edges.contains(&(a, b)) {
                            let col = toks[2 * k].col;
                            let name = format!("{} -> {}", toks[2 * k].text, toks[2 * k + 2].text);
                            p.duplicate(line.no, col, "edge", &name);
                        } else {
                            task.edges.push((a, b));
                        }
                    }
                }
            }
            "window" => {
                if !seen.insert("window") {
                    p.duplicate(line.no, line.toks[0].col, "entry", "window");
                    continue;
                }
                if !p.arity(line, 2, "window start=<time> deadline=<time>") {
                    continue;
                }
                let a = p
                    .keyed(line.no, line.toks[1], "start")
                    .and_then(|t| p.number(line.no, t));
                let b = p
                    .keyed(line.no, line.toks[2], "deadline")
                    .and_then(|t| p.number(line.no, t));
                if let (Some(a), Some(b)) = (a, b) {
                    match TimeWindow::new(a, b) {
                        Some(w) => task.window = w,
                        None => p.parse_err(
                            line.no,
                            line.toks[1].col,
                            format!("invalid window [{a}, {b}]"),
                        ),
                    }
                }
            }
            "candidates" => {
                if !seen.insert("candidates") {
                    p.duplicate(line.no, line.toks[0].col, "entry", "candidates");
                    continue;
                }
                let mut list = Vec::new();
                for &tok in &line.toks[1..] {
                    if let Some(n) = resolve_node(p, nodes, line.no, tok) {
                        if list.contains(&n) {
                            p.duplicate(line.no, tok.col, "candidate", tok.text);
                        } else {
                            list.push(n);
                        }
                    }
                }
                if list.is_empty() && line.toks.len() == 1 {
                    p.parse_err(
                        line.no,
                        line.end_col(),
                        "expected at least one candidate node",
                    );
                }
                task.candidates = Some(list);
            }
            "place" => {
                if !p.arity(line, 2, "place <algorithm> <node>") {
                    continue;
                }
                let alg = resolve_alg(p, &task, line.no, line.toks[1]);
                let node = resolve_node(p, nodes, line.no, line.toks[2]);
                if let (Some(alg), Some(node)) = (alg, node) {
                    if task.placement.insert(alg, node).is_some() {
                        p.duplicate(line.no, line.toks[1].col, "placement", line.toks[1].text);
                    }
                }
            }
            other => p.parse_err(
                line.no,
                line.toks[0].col,
                format!("unknown task entry `{other}`"),
            ),
        }
    }
    if !task.labels.is_empty() {
        if let Err(e) = AlgorithmGraph::new(task.labels.len() as u32, &task.edges) {
            p.parse_err(s.line, s.col, format!("task `{name}`: {e}"));
        }
    }
    task
}

fn parse_exec(p: &mut Parser, s: &Section<'_>, task: &mut TaskDef, nodes: &[Node]) {
    let Some((header, rows)) = s.body.split_first() else {
        p.parse_err(s.line, s.col, "exec table needs a `nodes` header line");
        return;
    };
    if header.keyword() != "nodes" {
        p.parse_err(
            header.no,
            header.toks[0].col,
            "exec table must start with `nodes <label>...`",
        );
        return;
    }
    let mut columns = Vec::new();
    for &tok in &header.toks[1..] {
        let Some(n) = resolve_node(p, nodes, header.no, tok) else {
            return;
        };
        if columns.contains(&n) {
            p.duplicate(header.no, tok.col, "column", tok.text);
            return;
        }
        columns.push(n);
    }
    for line in rows {
        let Some(alg) = resolve_alg(p, task, line.no, line.toks[0]) else {
            continue;
        };
        if line.toks.len() != columns.len() + 1 {
            p.parse_err(
                line.no,
                line.toks[0].col,
                format!(
                    "expected {} values, found {}",
                    columns.len(),
                    line.toks.len() - 1
                ),
            );
            continue;
        }
        let mut row = vec![None; nodes.len()];
        let mut ok = true;
        for (&node, &tok) in columns.iter().zip(&line.toks[1..]) {
            if tok.text == "-" {
                continue;
            }
            match p.finite_non_negative(line.no, tok, "execution time") {
                Some(v) => row[node.0] = Some(v),
                None => ok = false,
            }
        }
        if ok && task.exec.insert(alg, row).is_some() {
            p.duplicate(line.no, line.toks[0].col, "exec row", line.toks[0].text);
        }
    }
}

fn parse_options(p: &mut Parser, s: &Section<'_>, opts: &mut RunOptions) {
    let mut seen = BTreeSet::new();
    for line in &s.body {
        let kw = line.keyword();
        if !seen.insert(kw) {
            p.duplicate(line.no, line.toks[0].col, "option", kw);
            continue;
        }
        if !p.arity(line, 1, &format!("{kw} <value>")) {
            continue;
        }
        let (no, tok) = (line.no, line.toks[1]);
        match kw {
            "mode" => match tok.text.parse::<Mode>() {
                Ok(m) => opts.mode = m,
                Err(e) => p.parse_err(no, tok.col, e),
            },
            "seed" => {
                if let Some(v) = p.integer(no, tok) {
                    opts.seed = v;
                }
            }
            "subspaces" => match parse_subspaces(tok.text) {
                Ok(v) => opts.subspaces = v,
                Err(e) => p.parse_err(no, tok.col, e),
            },
            "step" => {
                if let Some(v) = p.finite_non_negative(no, tok, "step") {
                    opts.dynamics.step = v;
                }
            }
            "tol" => {
                if let Some(v) = p.finite_non_negative(no, tok, "tol") {
                    opts.dynamics.tol = v;
                }
            }
            "max_iter" => {
                if let Some(v) = p.integer(no, tok) {
                    opts.dynamics.max_iter = v;
                }
            }
            "threads" => match p.integer::<usize>(no, tok) {
                Some(0) => p.parse_err(no, tok.col, "threads must be at least 1"),
                Some(v) => opts.threads = v,
                None => {}
            },
            other => p.parse_err(no, line.toks[0].col, format!("unknown option `{other}`")),
        }
    }
}

/// Parses and validates a scenario, reporting every located error found.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioErrors> {
    let mut p = Parser::default();
    let sections = split_sections(&mut p, text);

    let mut singletons: BTreeMap<String, usize> = BTreeMap::new();
    for s in &sections {
        let key = match &s.header {
            Header::Task(n) => format!("task {n}"),
            Header::Exec(n) => format!("exec {n}"),
            other => format!("{other:?}").to_lowercase(),
        };
        if singletons.insert(key.clone(), s.line).is_some() {
            p.duplicate(s.line, s.col, "section", &key);
        }
    }

    let mut source = SourceMap::default();
    let network = sections.iter().find(|s| s.header == Header::Network);
    let (nodes, links) = match network {
        Some(s) => {
            source.network = s.line;
            parse_network(&mut p, s)
        }
        None => {
            p.parse_err(1, 1, "missing [network] section");
            (Vec::new(), Vec::new())
        }
    };
    if let Some(s) = network {
        if nodes.is_empty() {
            p.parse_err(s.line, s.col, "network declares no nodes");
        }
    }

    let mut tasks: Vec<TaskDef> = Vec::new();
    for s in &sections {
        if let Header::Task(name) = &s.header {
            if tasks.iter().any(|t| &t.name == name) {
                continue;
            }
            tasks.push(parse_task(&mut p, s, name, &nodes));
            source.tasks.push(s.line);
        }
    }
    for s in &sections {
        if let Header::Exec(name) = &s.header {
            match tasks.iter_mut().find(|t| &t.name == name) {
                Some(task) => parse_exec(&mut p, s, task, &nodes),
                None => {
                    let col = s.col + "[exec ".len();
                    p.err(
                        s.line,
                        col,
                        ErrorKind::UnresolvedReference {
                            what: "task",
                            name: name.clone(),
                        },
                    );
                }
            }
        }
    }

    let mut scenario = Scenario {
        nodes,
        links,
        tasks,
        incompatible: BTreeSet::new(),
        requests: BTreeMap::new(),
        scores: BTreeMap::new(),
        a1: BTreeMap::new(),
        a2: BTreeMap::new(),
        arrivals: Vec::new(),
        options: RunOptions::default(),
        source,
    };

    for s in &sections {
        match &s.header {
            Header::Network | Header::Task(_) | Header::Exec(_) => {}
            Header::Compatibility => {
                for line in &s.body {
                    if line.keyword() != "incompatible" {
                        p.parse_err(
                            line.no,
                            line.toks[0].col,
                            format!("unknown compatibility entry `{}`", line.keyword()),
                        );
                        continue;
                    }
                    if !p.arity(line, 2, "incompatible <task> <node>") {
                        continue;
                    }
                    let t = resolve_task(&mut p, &scenario.tasks, line.no, line.toks[1]);
                    let n = resolve_node(&mut p, &scenario.nodes, line.no, line.toks[2]);
                    if let (Some(t), Some(n)) = (t, n) {
                        if !scenario.incompatible.insert((t, n)) {
                            let name = format!("{} {}", line.toks[1].text, line.toks[2].text);
                            p.duplicate(line.no, line.toks[1].col, "incompatibility", &name);
                        }
                    }
                }
            }
            Header::Requests => {
                for line in &s.body {
                    if line.keyword() != "request" {
                        p.parse_err(
                            line.no,
                            line.toks[0].col,
                            format!("unknown requests entry `{}`", line.keyword()),
                        );
                        continue;
                    }
                    if !p.arity(line, 4, "request <task> <from> <to> <count>") {
                        continue;
                    }
                    let t = resolve_task(&mut p, &scenario.tasks, line.no, line.toks[1]);
                    let a = resolve_node(&mut p, &scenario.nodes, line.no, line.toks[2]);
                    let b = resolve_node(&mut p, &scenario.nodes, line.no, line.toks[3]);
                    let k = p.integer::<u32>(line.no, line.toks[4]);
                    if let (Some(t), Some(a), Some(b), Some(k)) = (t, a, b, k) {
                        if a == b {
                            p.parse_err(
                                line.no,
                                line.toks[3].col,
                                "a node does not send requests to itself",
                            );
                        } else if scenario.requests.insert((t, a, b), k).is_some() {
                            let name = format!(
                                "{} {} {}",
                                line.toks[1].text, line.toks[2].text, line.toks[3].text
                            );
                            p.duplicate(line.no, line.toks[1].col, "request", &name);
                        }
                    }
                }
            }
            Header::Overrides => parse_overrides(&mut p, s, &mut scenario),
            Header::Arrivals => {
                let mut last = f64::NEG_INFINITY;
                for line in &s.body {
                    if line.keyword() != "arrive" {
                        p.parse_err(
                            line.no,
                            line.toks[0].col,
                            format!("unknown arrivals entry `{}`", line.keyword()),
                        );
                        continue;
                    }
                    if !p.arity(line, 2, "arrive t=<time> task=<name>") {
                        continue;
                    }
                    let time = p.keyed(line.no, line.toks[1], "t").and_then(|t| {
                        let v = p.number(line.no, t)?;
                        if v.is_finite() {
                            Some(v)
                        } else {
                            p.parse_err(line.no, t.col, "arrival time must be finite");
                            None
                        }
                    });
                    let task = p
                        .keyed(line.no, line.toks[2], "task")
                        .and_then(|t| resolve_task(&mut p, &scenario.tasks, line.no, t));
                    if let (Some(time), Some(task)) = (time, task) {
                        if time < last {
                            p.parse_err(
                                line.no,
                                line.toks[1].col,
                                "arrivals must be listed in time order",
                            );
                            continue;
                        }
                        last = time;
                        scenario.arrivals.push(Arrival { time, task });
                        scenario.source.arrivals.push(line.no);
                    }
                }
            }
            Header::Options => {
                let mut opts = scenario.options.clone();
                parse_options(&mut p, s, &mut opts);
                scenario.options = opts;
            }
        }
    }

    if let Some(s) = network {
        if p.errors.is_empty() {
            if let Err(e) = scenario.network() {
                p.parse_err(s.line, s.col, e.to_string());
            }
        }
    }

    if p.errors.is_empty() {
        Ok(scenario)
    } else {
        p.errors.sort_by_key(|e| (e.line, e.column));
        Err(ScenarioErrors(p.errors))
    }
}

fn parse_overrides(p: &mut Parser, s: &Section<'_>, sc: &mut Scenario) {
    for line in &s.body {
        match line.keyword() {
            "score" => {
                if !p.arity(line, 4, "score <subspace> <task> <node> <value>") {
                    continue;
                }
                let sub = match line.toks[1].text.parse::<Subspace>() {
                    Ok(v) => Some(v),
                    Err(e) => {
                        p.parse_err(line.no, line.toks[1].col, e);
                        None
                    }
                };
                let t = resolve_task(p, &sc.tasks, line.no, line.toks[2]);
                let n = resolve_node(p, &sc.nodes, line.no, line.toks[3]);
                let v = p.number(line.no, line.toks[4]).and_then(|v| {
                    if v >= 0.0 {
                        Some(v)
                    } else {
                        p.parse_err(line.no, line.toks[4].col, "scores must be non-negative");
                        None
                    }
                });
                if let (Some(sub), Some(t), Some(n), Some(v)) = (sub, t, n, v) {
                    if sc.scores.insert((sub, t, n), v).is_some() {
                        let name = format!(
                            "{} {} {}",
                            line.toks[1].text, line.toks[2].text, line.toks[3].text
                        );
                        p.duplicate(line.no, line.toks[1].col, "score override", &name);
                    }
                }
            }
            kw @ ("a1" | "a2") => {
                if !p.arity(line, 4, &format!("{kw} <task> <algorithm> <node> <value>")) {
                    continue;
                }
                let Some(t) = resolve_task(p, &sc.tasks, line.no, line.toks[1]) else {
                    continue;
                };
                let alg = resolve_alg(p, &sc.tasks[t.0], line.no, line.toks[2]);
                let n = resolve_node(p, &sc.nodes, line.no, line.toks[3]);
                let v = p.finite_non_negative(line.no, line.toks[4], kw);
                if let (Some(alg), Some(n), Some(v)) = (alg, n, v) {
                    let map = if kw == "a1" { &mut sc.a1 } else { &mut sc.a2 };
                    if map.insert((t, alg, n), v).is_some() {
                        let name = format!(
                            "{} {} {}",
                            line.toks[1].text, line.toks[2].text, line.toks[3].text
                        );
                        p.duplicate(line.no, line.toks[1].col, "override", &name);
                    }
                }
            }
            other => p.parse_err(
                line.no,
                line.toks[0].col,
                format!("unknown override `{other}`"),
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[network]
node R1 robot

[task T]
algorithms A1

[exec T]
nodes R1
A1 2

[arrivals]
arrive t=0 task=T
";

    #[test]
    fn minimal() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.nodes.len(), 1);
        assert_eq!(s.tasks[0].exec[&Algorithm::Real(1)], vec![Some(2.0)]);
        assert_eq!(
            s.arrivals,
            vec![Arrival {
                time: 0.0,
                task: TaskId(0)
            }]
        );
        assert_eq!(s.options, RunOptions::default());
    }

    #[test]
    fn unresolved_link_endpoint() {
        let text = "[network]\nnode R1 robot\nlink R1 R9 const=1 rate=2\n";
        let err = parse_scenario(text).unwrap_err();
        assert_eq!(
            err.0[0],
            ScenarioError {
                line: 3,
                column: 9,
                kind: ErrorKind::UnresolvedReference {
                    what: "node",
                    name: "R9".into()
                }
            }
        );
    }

    #[test]
    fn duplicates_are_located() {
        let text = "[network]\nnode R1 robot\nnode R1 fog\n[network]\n";
        let err = parse_scenario(text).unwrap_err();
        let kinds: Vec<(usize, &ErrorKind)> = err.0.iter().map(|e| (e.line, &e.kind)).collect();
        assert!(kinds.contains(&(
            3,
            &ErrorKind::DuplicateDefinition {
                what: "node",
                name: "R1".into()
            }
        )));
        assert!(kinds.iter().any(|(l, k)| *l == 4
            && matches!(
                k,
                ErrorKind::DuplicateDefinition {
                    what: "section",
                    ..
                }
            )));
    }

    #[test]
    fn syntax_errors_carry_columns() {
        let text = "[network]\nnode R1 robot\n[task T]\nalgorithms A1 A2\nedge A1 => A2\n";
        let err = parse_scenario(text).unwrap_err();
        assert_eq!((err.0[0].line, err.0[0].column), (5, 1));
        assert!(matches!(err.0[0].kind, ErrorKind::Parse(_)));
    }

    #[test]
    fn cycles_are_rejected() {
        let text = "[network]\nnode R1 robot\n[task T]\nalgorithms A B\nedge A -> B -> A\n";
        let err = parse_scenario(text).unwrap_err();
        assert_eq!(err.0[0].line, 3);
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn unordered_arrivals_are_rejected() {
        let text = format!("{MINIMAL}arrive t=-1 task=T\n");
        assert!(parse_scenario(&text).is_err());
    }

    #[test]
    fn missing_network() {
        let err = parse_scenario("[options]\nseed 1\n").unwrap_err();
        assert_eq!(
            err.0[0].to_string(),
            "line 1, column 1: missing [network] section"
        );
    }

    #[test]
    fn disconnected_network_is_rejected() {
        let err = parse_scenario("[network]\nnode A robot\nnode B fog\n").unwrap_err();
        assert!(err.to_string().contains("disconnected"), "{err}");
    }

    #[test]
    fn round_trip() {
        let text = "\
[network]
node R1 robot
node F fog # comment
link R1 F const=5.17 rate=4

[task T]
algorithms A1 A2 A3
top Data
bottom Out
edge A1 -> A2 -> A3
window start=1.5 deadline=inf
candidates R1
place A2 F

[exec T]
nodes F R1
Data 0 0
A1 1 2
A2 3 -
A3 0.5 0.25

[compatibility]
incompatible T F

[requests]
request T R1 F 2

[overrides]
score comm T R1 0.00266
a2 T Out R1 0.65

[arrivals]
arrive t=0 task=T
arrive t=0.1 task=T

[options]
mode sample
seed 99
subspaces comm,cmpt
step 0
threads 2
";
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.tasks[0].exec[&Algorithm::Real(2)], vec![None, Some(3.0)]);
        let again = parse_scenario(&s.to_text()).unwrap();
        assert_eq!(s, again);
    }
}
