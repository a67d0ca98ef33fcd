use hyperalloc_core::capability::{pi_init, CapabilityInputs, CapabilityState};
use hyperalloc_core::catalog::{Algorithm, TaskCatalog, TaskSpec};
use hyperalloc_core::graph::AlgorithmGraph;
use hyperalloc_core::network::{NodeId, TaskId};
use hyperalloc_core::subspaces::{combine_scores, Subspace, SubspaceScore};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct World {
    nodes: usize,
    tasks: Vec<(u32, Vec<(u32, u32)>)>,
    /// Per task, per real algorithm, per node.
    exec: Vec<Vec<Vec<Option<f64>>>>,
    round_trip: Vec<Vec<f64>>,
}

fn task_graph() -> impl Strategy<Value = (u32, Vec<(u32, u32)>)> {
    (1u32..=5).prop_flat_map(|n| {
        let pairs = (n * (n - 1) / 2) as usize;
        (Just(n), proptest::collection::vec(any::<bool>(), pairs)).prop_map(|(n, mask)| {
            let mut edges = Vec::new();
            let mut k = 0;
            for i in 1..=n {
                for j in i + 1..=n {
                    if mask[k] {
                        edges.push((i, j));
                    }
                    k += 1;
                }
            }
            (n, edges)
        })
    })
}

fn world() -> impl Strategy<Value = World> {
    (2usize..=5, proptest::collection::vec(task_graph(), 1..=2)).prop_flat_map(|(nodes, tasks)| {
        let rows: usize = tasks.iter().map(|t| t.0 as usize).sum();
        let cells =
            proptest::collection::vec(proptest::option::weighted(0.8, 0.1..10.0f64), rows * nodes);
        let fallback = proptest::collection::vec(0..nodes, rows);
        let rt = proptest::collection::vec(0.5..50.0f64, nodes * nodes);
        (Just(nodes), Just(tasks), cells, fallback, rt).prop_map(
            |(nodes, tasks, cells, fallback, rt)| {
                let mut exec = Vec::new();
                let mut k = 0;
                for t in &tasks {
                    let mut per_alg = Vec::new();
                    for _ in 0..t.0 {
                        let mut row: Vec<Option<f64>> = cells[k * nodes..(k + 1) * nodes].to_vec();
                        if row.iter().all(Option::is_none) {
                            row[fallback[k]] = Some(1.0);
                        }
                        per_alg.push(row);
                        k += 1;
                    }
                    exec.push(per_alg);
                }
                let mut round_trip = vec![vec![0.0; nodes]; nodes];
                for i in 0..nodes {
                    for j in i + 1..nodes {
                        round_trip[i][j] = rt[i * nodes + j];
                        round_trip[j][i] = rt[i * nodes + j];
                    }
                }
                World {
                    nodes,
                    tasks,
                    exec,
                    round_trip,
                }
            },
        )
    })
}

fn init(w: &World) -> CapabilityState {
    let mut catalog = TaskCatalog::default();
    let mut inputs = CapabilityInputs::default();
    for (t, (n, edges)) in w.tasks.iter().enumerate() {
        let sl = AlgorithmGraph::new(*n, edges).unwrap().to_semilattice();
        let id = catalog.push(TaskSpec::new(format!("T{t}"), sl));
        for (a, row) in w.exec[t].iter().enumerate() {
            inputs
                .exec
                .insert((id, Algorithm::Real(a as u32 + 1)), row.clone());
        }
    }
    pi_init(&catalog, w.nodes, &w.round_trip, &inputs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rows_stay_stochastic_and_peaks_only_grow(w in world(), step in 0.0..1.0f64) {
        let mut state = init(&w);
        state.check_invariants().map_err(TestCaseError::fail)?;
        let mut previous = state.peak().to_vec();
        for _ in 0..200 {
            state.step(step);
            state.check_invariants().map_err(TestCaseError::fail)?;
            for (r, row) in state.pi().iter().enumerate() {
                for (i, &x) in row.iter().enumerate() {
                    if !state.capable()[r][i] {
                        prop_assert_eq!(x, 0.0);
                    }
                    prop_assert!(state.peak()[r][i] >= previous[r][i]);
                }
            }
            previous = state.peak().to_vec();
        }
    }

    #[test]
    fn weights_have_zero_row_sums(w in world(), step in 0.0..1.0f64) {
        let state = init(&w);
        for row in state.omega(step) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}

fn score_set() -> impl Strategy<Value = Vec<SubspaceScore>> {
    let value = prop_oneof![1 => Just(0.0), 1 => Just(f64::INFINITY), 6 => 1e-6..10.0f64];
    (value.clone(), value.clone(), value).prop_map(|(a, b, c)| {
        vec![
            SubspaceScore::new(Subspace::Cmpt, a),
            SubspaceScore::new(Subspace::Comm, b),
            SubspaceScore::new(Subspace::Cplt, c),
        ]
    })
}

fn same(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

proptest! {
    #[test]
    fn combination_is_order_free(scores in score_set(), perm in Just(vec![0usize, 1, 2]).prop_shuffle()) {
        let shuffled: Vec<SubspaceScore> = perm.iter().map(|&i| scores[i]).collect();
        let a = combine_scores(&scores).unwrap();
        let b = combine_scores(&shuffled).unwrap();
        prop_assert!(same(a, b), "{} vs {}", a, b);
    }

    #[test]
    fn combination_groups_freely(scores in score_set()) {
        let whole = combine_scores(&scores).unwrap();
        let head = combine_scores(&scores[..2]).unwrap();
        let regrouped = combine_scores(&[SubspaceScore::new(Subspace::Cmpt, head), scores[2]]).unwrap();
        prop_assert!(same(whole, regrouped), "{} vs {}", whole, regrouped);
    }

    #[test]
    fn any_zero_annihilates(scores in score_set(), at in 0usize..3) {
        let mut s = scores.clone();
        s[at].value = 0.0;
        prop_assert_eq!(combine_scores(&s).unwrap(), 0.0);
    }

    #[test]
    fn incompatibility_zeroes_every_superset(comm in prop_oneof![Just(f64::INFINITY), 1e-6..10.0f64], cplt in 1e-6..1.0f64) {
        let cmpt = SubspaceScore::new(Subspace::Cmpt, 0.0);
        let comm = SubspaceScore::new(Subspace::Comm, comm);
        let cplt = SubspaceScore::new(Subspace::Cplt, cplt);
        for set in [vec![cmpt], vec![cmpt, comm], vec![cmpt, cplt], vec![cmpt, comm, cplt]] {
            prop_assert_eq!(combine_scores(&set).unwrap(), 0.0);
        }
    }

    #[test]
    fn scaling_communication_keeps_the_winner(
        nodes in proptest::collection::vec((prop_oneof![Just(0.0), Just(1.0)], 1e-4..1.0f64, 1e-3..1.0f64), 1..6),
        factor in 1e-3..1e3f64,
    ) {
        let combined = |scale: f64| -> Vec<f64> {
            nodes
                .iter()
                .map(|&(c, m, p)| {
                    combine_scores(&[
                        SubspaceScore::new(Subspace::Cmpt, c),
                        SubspaceScore::new(Subspace::Comm, m * scale),
                        SubspaceScore::new(Subspace::Cplt, p),
                    ])
                    .unwrap()
                })
                .collect()
        };
        let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        let before = combined(1.0);
        let after = combined(factor);
        let winner = argmax(&before);
        // the old winner still attains the maximum up to rounding
        let best = after.iter().copied().fold(0.0, f64::max);
        prop_assert!(after[winner] >= best * (1.0 - 1e-12));
        let runner_up = before
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != winner)
            .map(|(_, &v)| v)
            .fold(0.0, f64::max);
        if before[winner] > runner_up * (1.0 + 1e-9) {
            prop_assert_eq!(argmax(&after), winner);
        }
    }
}

#[test]
fn cplt_reads_peak_of_virtual_rows() {
    let sl = AlgorithmGraph::new(1, &[]).unwrap().to_semilattice();
    let catalog = TaskCatalog::new(vec![TaskSpec::new("T", sl)]);
    let mut inputs = CapabilityInputs::default();
    inputs
        .exec
        .insert((TaskId(0), Algorithm::Real(1)), vec![Some(1.0), Some(3.0)]);
    let state = pi_init(&catalog, 2, &[vec![0.0, 2.0], vec![2.0, 0.0]], &inputs).unwrap();
    let score = hyperalloc_core::subspaces::cplt_score(&state, TaskId(0), NodeId(1));
    let top = state.capital_pi(TaskId(0), Algorithm::Top, NodeId(1));
    let bottom = state.capital_pi(TaskId(0), Algorithm::Bottom, NodeId(1));
    assert_eq!(score.value, top * bottom);
}
