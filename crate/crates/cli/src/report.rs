//! Text, JSON-lines and CSV renderings of a run, plus debugging views of
//! model intermediates.

use std::fmt::Write as _;
use std::str::FromStr;

use hyperalloc_core::allocator::{AllocationDecision, CandidateReport};
use hyperalloc_core::catalog::Algorithm;
use hyperalloc_core::graph::Vertex;
use hyperalloc_core::network::NodeId;
use serde_json::{json, Map, Value};

use crate::engine::{Model, RunReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Jsonl,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Format::Table),
            "jsonl" | "json-lines" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(format!(
                "unknown format `{other}` (expected table, jsonl or csv)"
            )),
        }
    }
}

pub fn emit_report(report: &RunReport, format: Format) -> String {
    match format {
        Format::Table => table(report),
        Format::Jsonl => jsonl(report),
        Format::Csv => csv(report),
    }
}

/// Rounds to three significant figures for display.
pub fn sig3(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let rounded: f64 = format!("{x:.2e}").parse().unwrap_or(x);
    let exp = rounded.abs().log10().floor() as i32;
    if !(-3..5).contains(&exp) {
        format!("{rounded:.2e}")
    } else {
        format!("{rounded:.*}", (2 - exp).max(0) as usize)
    }
}

/// Full-precision text for machine formats; `inf` for infinity.
fn full(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else {
        sig3(x)
    }
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or_else(|| Value::String(full(x)), Value::Number)
}

fn status(decision: &AllocationDecision, c: &CandidateReport) -> String {
    if decision.chosen == Some(c.score.node) {
        format!("chosen ({})", decision.rationale)
    } else if let Some(reason) = &c.rejected {
        format!("rejected: {reason}")
    } else if decision.chosen.is_none() {
        decision.rationale.to_string()
    } else {
        String::new()
    }
}

fn table(report: &RunReport) -> String {
    let mut header: Vec<String> = vec!["task".into(), "arrival".into(), "node".into()];
    header.extend(report.subspaces.iter().map(|s| s.to_string()));
    header.extend(["combined", "start", "loss", "status"].map(String::from));
    let mut rows = vec![header];
    for d in &report.decisions {
        for c in &d.candidates {
            let mut row = vec![
                report.task_name(d.task).to_string(),
                sig3(d.arrival),
                report.node_label(c.score.node).to_string(),
            ];
            row.extend(c.score.scores.iter().map(|s| sig3(s.value)));
            row.push(sig3(c.score.combined));
            row.push(
                c.placement
                    .as_ref()
                    .map_or_else(|| "-".into(), |p| sig3(p.start)),
            );
            row.push(
                c.impact
                    .as_ref()
                    .map_or_else(|| "-".into(), |i| sig3(i.loss)),
            );
            row.push(status(d, c));
            rows.push(row);
        }
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    if report.decisions.is_empty() {
        return out;
    }
    let _ = writeln!(out);
    for s in &report.schedules {
        let spans: Vec<String> = s
            .entries()
            .iter()
            .map(|e| {
                let what = if e.forced_idle {
                    "idle".to_string()
                } else {
                    report.task_name(e.task).to_string()
                };
                format!("{what} [{}, {})", sig3(e.start), sig3(e.end))
            })
            .collect();
        let body = if spans.is_empty() {
            "(empty)".to_string()
        } else {
            spans.join(", ")
        };
        let _ = writeln!(out, "{}: {body}", report.node_label(s.node));
    }
    let subs: Vec<&str> = report.subspaces.iter().map(|s| s.name()).collect();
    let _ = writeln!(
        out,
        "\nmode {}, seed {}, subspaces {}; capability dynamics: {} iterations, {}",
        report.mode,
        report.seed,
        subs.join(","),
        report.convergence.iterations,
        if report.convergence.converged {
            "converged"
        } else {
            "not converged"
        }
    );
    out
}

fn candidate_json(report: &RunReport, c: &CandidateReport) -> Value {
    let mut scores = Map::new();
    for s in &c.score.scores {
        scores.insert(s.subspace.to_string(), num(s.value));
    }
    let impact = c.impact.as_ref();
    json!({
        "node": report.node_label(c.score.node),
        "scores": scores,
        "combined": num(c.score.combined),
        "duration": num(c.score.duration),
        "start": c.placement.as_ref().map(|p| num(p.start)),
        "end": c.placement.as_ref().map(|p| num(p.end)),
        "affected": impact.map(|i| i.affected.iter().map(|s| json!({
            "index": s.index,
            "old_start": num(s.old_start),
            "new_start": num(s.new_start),
        })).collect::<Vec<_>>()),
        "nv": impact.map(|i| i.nv.clone()),
        "loss": impact.map(|i| num(i.loss)),
        "rejected": c.rejected,
    })
}

fn jsonl(report: &RunReport) -> String {
    let mut out = String::new();
    let run = json!({
        "record": "run",
        "mode": report.mode.to_string(),
        "seed": report.seed,
        "subspaces": report.subspaces.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "convergence": {
            "iterations": report.convergence.iterations,
            "converged": report.convergence.converged,
            "last_change": num(report.convergence.last_change),
        },
    });
    let _ = writeln!(out, "{run}");
    for d in &report.decisions {
        let rec = json!({
            "record": "decision",
            "index": d.index,
            "task": report.task_name(d.task),
            "arrival": num(d.arrival),
            "chosen": d.chosen.map(|n| report.node_label(n)),
            "rationale": d.rationale.to_string(),
            "candidates": d.candidates.iter().map(|c| candidate_json(report, c)).collect::<Vec<_>>(),
        });
        let _ = writeln!(out, "{rec}");
    }
    for s in &report.schedules {
        for e in s.entries() {
            let rec = json!({
                "record": "schedule",
                "node": report.node_label(s.node),
                "task": report.task_name(e.task),
                "decision": e.decision,
                "start": num(e.start),
                "end": num(e.end),
                "forced_idle": e.forced_idle,
                "dispatched": e.dispatched,
                "score": num(e.score),
            });
            let _ = writeln!(out, "{rec}");
        }
    }
    out
}

fn csv(report: &RunReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record([
        "task",
        "node",
        "subspace",
        "score",
        "combined",
        "loss",
        "rationale",
    ]);
    for d in &report.decisions {
        for c in &d.candidates {
            let rationale = if d.chosen.is_none() || d.chosen == Some(c.score.node) {
                d.rationale.to_string()
            } else {
                String::new()
            };
            let loss = c.impact.as_ref().map_or_else(String::new, |i| full(i.loss));
            for s in &c.score.scores {
                let _ = w.write_record([
                    report.task_name(d.task),
                    report.node_label(c.score.node),
                    s.subspace.name(),
                    &full(s.value),
                    &full(c.score.combined),
                    &loss,
                    &rationale,
                ]);
            }
        }
    }
    let bytes = w.into_inner().unwrap_or_default();
    String::from_utf8(bytes).unwrap_or_default()
}

fn vertex_label(model: &Model, task: hyperalloc_core::network::TaskId, v: Vertex) -> String {
    let spec = model.catalog.task(task);
    let many = spec.lattice.components().len() > 1;
    match v {
        Vertex::Top(c) if many => format!("{}#{}", spec.top_label, c + 1),
        Vertex::Bottom(c) if many => format!("{}#{}", spec.bottom_label, c + 1),
        other => spec.label(Algorithm::of_vertex(other)).to_string(),
    }
}

/// Every execution flow of every task.
pub fn render_flows(model: &Model) -> Result<String, hyperalloc_core::graph::GraphError> {
    let mut out = String::new();
    for (id, spec) in model.catalog.ids().zip(model.catalog.tasks()) {
        let flows = spec.lattice.execution_flows()?;
        let _ = writeln!(out, "task {} ({} flows)", spec.name, flows.len());
        for f in flows {
            let path: Vec<String> = f
                .vertices()
                .iter()
                .map(|&v| vertex_label(model, id, v))
                .collect();
            let _ = writeln!(out, "  {}", path.join(" -> "));
        }
    }
    Ok(out)
}

/// Current and peak allocation probabilities per algorithm.
pub fn render_pi(model: &Model) -> String {
    let mut out = String::new();
    let labels: Vec<&str> = model.net.nodes().iter().map(|n| n.label.as_str()).collect();
    let c = &model.convergence;
    let _ = writeln!(
        out,
        "capability dynamics: {} iterations, {}, last change {}",
        c.iterations,
        if c.converged {
            "converged"
        } else {
            "not converged"
        },
        sig3(c.last_change)
    );
    for (id, spec) in model.catalog.ids().zip(model.catalog.tasks()) {
        let _ = writeln!(out, "task {}", spec.name);
        let _ = writeln!(out, "  {:<12} {:<6} {}", "algorithm", "", labels.join("  "));
        for alg in spec.algorithms_in_order() {
            let Some(row) = model.state.row_index(id, alg) else {
                continue;
            };
            for (name, values) in [
                ("pi", &model.state.pi()[row]),
                ("peak", &model.state.peak()[row]),
            ] {
                let cells: Vec<String> = values.iter().map(|&v| sig3(v)).collect();
                let _ = writeln!(
                    out,
                    "  {:<12} {:<6} {}",
                    spec.label(alg),
                    name,
                    cells.join("  ")
                );
            }
        }
    }
    out
}

/// Chosen route and expected round-trip time for every node pair.
pub fn render_routes(model: &Model) -> String {
    let mut out = String::new();
    let ids: Vec<NodeId> = model.net.node_ids().collect();
    for &a in &ids {
        for &b in ids.iter().filter(|&&b| b > a) {
            let route = model.routes.route(a, b);
            let path: Vec<&str> = route
                .nodes
                .iter()
                .map(|&n| model.net.node(n).label.as_str())
                .collect();
            let _ = writeln!(
                out,
                "{} -> {}: {} (one-way {}, round trip {})",
                model.net.node(a).label,
                model.net.node(b).label,
                path.join(" -> "),
                sig3(route.expected_cost(&model.net)),
                sig3(model.round_trip[a.0][b.0]),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_significant_figures() {
        assert_eq!(sig3(8.778e-5), "8.78e-5");
        assert_eq!(sig3(1.6687e-4), "1.67e-4");
        assert_eq!(sig3(0.041), "0.0410");
        assert_eq!(sig3(375.97), "376");
        assert_eq!(sig3(9.996), "10.0");
        assert_eq!(sig3(1.0), "1.00");
        assert_eq!(sig3(123456.0), "1.23e5");
        assert_eq!(sig3(f64::INFINITY), "inf");
        assert_eq!(sig3(0.0), "0");
    }

    #[test]
    fn full_precision_round_trips() {
        let x = 0.1 + 0.2;
        assert_eq!(full(x).parse::<f64>().unwrap(), x);
        assert_eq!(num(f64::INFINITY), Value::String("inf".into()));
    }

    #[test]
    fn formats_parse() {
        assert_eq!("jsonl".parse::<Format>(), Ok(Format::Jsonl));
        assert!("xml".parse::<Format>().is_err());
    }
}
