//! Shared fixtures for the CLI test suites: random masked systems,
//! deterministic excitation, and noise-free data construction.
//!
//! Each integration test target compiles its own copy, so helpers unused by
//! one target are expected.
#![allow(dead_code)]

use std::collections::BTreeSet;

use causaltwin_core::{
    companion_spectral_radius, whatif_run, CausalGraph, CouplingSet, LagFeedback,
    MultichannelSeries, ParamLayout,
};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("B{}", i)).collect()
}

/// Random edge pattern at a fixed node count and lag order. Instantaneous
/// edges always point from a higher node index to a lower one, which keeps
/// lag 0 acyclic by construction. Guaranteed at least one edge.
pub fn random_graph_sized(rng: &mut ChaCha8Rng, g: usize, m: usize) -> CausalGraph {
    loop {
        let mut inst: BTreeSet<(usize, usize)> = BTreeSet::new();
        for c in 0..g {
            for e in 0..c {
                if rng.random::<f64>() < 0.4 {
                    inst.insert((c, e));
                }
            }
        }
        let mut lag_edges = Vec::new();
        for _ in 0..m {
            let mut set: BTreeSet<(usize, usize)> = BTreeSet::new();
            for c in 0..g {
                for e in 0..g {
                    if c != e && rng.random::<f64>() < 0.3 {
                        set.insert((c, e));
                    }
                }
            }
            lag_edges.push(set);
        }
        let graph = CausalGraph::new(labels(g), m, inst, lag_edges).unwrap();
        if !ParamLayout::new(&graph).unwrap().is_empty() {
            return graph;
        }
    }
}

/// Random system with random size: node count 3 to 5, lag order 1 or 2.
/// Coupling sets are rescaled until the companion spectral radius is
/// comfortably below 1.
pub fn random_system(rng: &mut ChaCha8Rng) -> (CausalGraph, CouplingSet) {
    let g = 3 + (rng.random::<u32>() % 3) as usize;
    let m = 1 + (rng.random::<u32>() % 2) as usize;
    let graph = random_graph_sized(rng, g, m);
    let layout = ParamLayout::new(&graph).unwrap();
    let values: Vec<f64> = (0..layout.len())
        .map(|_| 1.8 * rng.random::<f64>() - 0.9)
        .collect();
    let mut set = layout.unflatten(&values).unwrap();
    while companion_spectral_radius(&set) >= 0.95 {
        set = set.scaled(0.7);
    }
    (graph, set)
}

/// The four-node, lag-1, eight-edge system used by the recovery suites.
/// Node B4 is a pure source (no incoming edges); every edge points from a
/// higher index to a lower one, so the companion matrix is nilpotent and the
/// system is stable for any coupling magnitude.
pub fn eight_edge_system() -> (CausalGraph, CouplingSet) {
    let inst: Vec<(usize, usize)> = vec![(1, 0), (2, 0), (2, 1), (3, 2)];
    let lag: BTreeSet<(usize, usize)> = [(1, 0), (2, 1), (3, 1), (3, 2)].into_iter().collect();
    let graph = CausalGraph::new(labels(4), 1, inst, vec![lag]).unwrap();
    let set = CouplingSet::from_entries(
        &graph,
        &[
            (0, 1, 0, 0.45),
            (0, 2, 0, -0.35),
            (0, 2, 1, 0.5),
            (0, 3, 2, 0.6),
            (1, 1, 0, 0.3),
            (1, 2, 1, 0.25),
            (1, 3, 1, -0.3),
            (1, 3, 2, 0.4),
        ],
    )
    .unwrap();
    (graph, set)
}

/// Deterministic spectrally rich excitation: a sum of incommensurate
/// sinusoids.
pub fn multisine(n: usize) -> Vec<f64> {
    let freqs = [0.29, 0.53, 0.83, 1.31, 1.79, 2.23, 2.69, 3.05];
    let amps = [1.0, 0.8, 0.9, 0.7, 0.6, 0.5, 0.45, 0.4];
    (0..n)
        .map(|i| {
            let t = i as f64;
            freqs
                .iter()
                .zip(&amps)
                .map(|(w, a)| a * (w * t).sin())
                .sum()
        })
        .collect()
}

/// Noise-free data: drives `source` with the multisine and lets the
/// closed-loop re-simulation compute every other channel from the couplings
/// exactly.
pub fn noise_free_series(
    graph: &CausalGraph,
    couplings: &CouplingSet,
    source: usize,
    n: usize,
) -> MultichannelSeries {
    let g = graph.node_count();
    let mut data = Array2::zeros((n, g));
    for (i, v) in multisine(n).into_iter().enumerate() {
        data[[i, source]] = v;
    }
    let driver = MultichannelSeries::new(data, graph.labels().to_vec(), None).unwrap();
    let targets: BTreeSet<usize> = (0..g).filter(|&c| c != source).collect();
    whatif_run(couplings, &driver, &targets, LagFeedback::ClosedLoop).unwrap()
}
