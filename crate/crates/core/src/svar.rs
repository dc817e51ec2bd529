//! Deterministic structural VAR mathematics.
//!
//! The model: `y[n] = A0 y[n] + sum_m Am y[n-m] + e[n]`, with `A0` zero on the
//! diagonal and acyclic so the instantaneous part can be solved by topological
//! forward substitution. This module provides the one-step simulation used by
//! the learner's simulation layer, full synthetic series generation with
//! seeded noise, the companion-matrix stability guard, open/closed-loop
//! what-if re-simulation, and counterfactual edge/node removal.

use std::collections::BTreeSet;
use std::ops::{AddAssign, Mul};

use ndarray::{Array1, Array2, ArrayView1};
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{topological_order, CausalGraph, CouplingSet};
use crate::series::MultichannelSeries;

/// Generation refuses coupling sets whose companion spectral radius reaches
/// this value; long runs would diverge or sit on the stability boundary.
pub const STABILITY_LIMIT: f64 = 0.999;

// ── Lag window ────────────────────────────────────────────────────────────

/// The lagged measurements `[y[n-1], ..., y[n-M]]` feeding one simulation
/// step.
#[derive(Debug, Clone, PartialEq)]
pub struct LagWindow {
    past: Vec<Array1<f64>>,
}

impl LagWindow {
    /// Builds from explicit rows, `rows[0]` being `y[n-1]`.
    pub fn new(rows: Vec<Array1<f64>>) -> Self {
        Self { past: rows }
    }

    /// Extracts the window ending just before sample `n` of a series.
    pub fn from_series(series: &MultichannelSeries, n: usize, lag_order: usize) -> Result<Self> {
        if n < lag_order {
            return Err(Error::SeriesTooShort {
                required: lag_order,
                actual: n,
            });
        }
        let past = (1..=lag_order)
            .map(|m| series.sample(n - m).to_owned())
            .collect();
        Ok(Self { past })
    }

    /// An all-zero window (the pre-history convention).
    pub fn zeros(lag_order: usize, channels: usize) -> Self {
        Self {
            past: vec![Array1::zeros(channels); lag_order],
        }
    }

    pub fn lag_order(&self) -> usize {
        self.past.len()
    }

    /// The vector `y[n-m]`, `m` in `1..=M`.
    pub fn vector(&self, m: usize) -> ArrayView1<'_, f64> {
        self.past[m - 1].view()
    }
}

// ── Noise ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Laplace,
    Uniform,
}

/// Seeded disturbance specification. `scales` are per-channel standard
/// deviations regardless of distribution kind (the Laplace diversity and the
/// uniform half-width are derived from them), so signal-to-noise bookkeeping
/// is uniform across kinds. A zero scale silences a channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub scales: Vec<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, scales: Vec<f64>, seed: u64) -> Result<Self> {
        for (channel, &scale) in scales.iter().enumerate() {
            if !scale.is_finite() || scale < 0.0 {
                return Err(Error::BadNoiseScale { channel, scale });
            }
        }
        Ok(Self { kind, scales, seed })
    }

    /// Draws the full `n_samples x G` disturbance matrix. Same seed, same
    /// realization, bit for bit: the draw order is sample-major then
    /// channel, and each kind consumes a fixed number of uniforms per value.
    pub fn realize(&self, n_samples: usize) -> Array2<f64> {
        let g = self.scales.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Array2::zeros((n_samples, g));
        for n in 0..n_samples {
            for c in 0..g {
                out[[n, c]] = self.draw(&mut rng) * self.scales[c];
            }
        }
        out
    }

    /// One unit-standard-deviation draw.
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.kind {
            NoiseKind::Gaussian => {
                // Box-Muller; u1 in (0, 1] keeps the log finite.
                let u1: f64 = 1.0 - rng.random::<f64>();
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            }
            NoiseKind::Laplace => {
                // Inverse CDF with diversity b = 1/sqrt(2) so the variance
                // (2 b^2) is 1.
                let mut u: f64 = rng.random::<f64>() - 0.5;
                while u <= -0.5 {
                    u = rng.random::<f64>() - 0.5;
                }
                -std::f64::consts::FRAC_1_SQRT_2 * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseKind::Uniform => {
                // Half-width sqrt(3) gives unit variance.
                let u: f64 = rng.random();
                3.0f64.sqrt() * (2.0 * u - 1.0)
            }
        }
    }
}

// ── One-step simulation ───────────────────────────────────────────────────

/// One step of the causal-graph simulation:
/// `y_hat = A0 y_now + sum_m Am y[n-m]`.
///
/// `y_hat[e]` never reads `y_now[e]` because the diagonal of `A0` is zero.
pub fn simulate_step(
    couplings: &CouplingSet,
    y_now: ArrayView1<'_, f64>,
    lags: &LagWindow,
) -> Result<Array1<f64>> {
    check_step_dims(
        couplings.node_count(),
        couplings.lag_order(),
        y_now.len(),
        lags,
    )?;
    Ok(simulate_step_parts(couplings.matrices(), y_now, lags))
}

pub(crate) fn check_step_dims(
    g: usize,
    lag_order: usize,
    y_len: usize,
    lags: &LagWindow,
) -> Result<()> {
    if y_len != g {
        return Err(Error::DimensionMismatch {
            context: "current sample vs coupling dimension",
            expected: g,
            actual: y_len,
        });
    }
    if lags.lag_order() != lag_order {
        return Err(Error::DimensionMismatch {
            context: "lag window length vs coupling lag order",
            expected: lag_order,
            actual: lags.lag_order(),
        });
    }
    for m in 1..=lag_order {
        if lags.vector(m).len() != g {
            return Err(Error::DimensionMismatch {
                context: "lag vector length vs coupling dimension",
                expected: g,
                actual: lags.vector(m).len(),
            });
        }
    }
    Ok(())
}

/// The simulation step over any scalar that multiplies with `f64`.
/// Instantiated at `f64` for simulation and at `Complex64` for the
/// complex-step Jacobian. The inner sums iterate causes in fixed index order
/// so that zeroed couplings and deleted edges produce identical arithmetic.
#[allow(clippy::needless_range_loop)]
pub(crate) fn simulate_step_parts<T>(
    mats: &[Array2<T>],
    y_now: ArrayView1<'_, f64>,
    lags: &LagWindow,
) -> Array1<T>
where
    T: Copy + Zero + AddAssign + Mul<f64, Output = T>,
{
    let g = y_now.len();
    let mut out = Vec::with_capacity(g);
    for e in 0..g {
        let mut acc = T::zero();
        for c in 0..g {
            acc += mats[0][[e, c]] * y_now[c];
        }
        for m in 1..mats.len() {
            let past = lags.vector(m);
            for c in 0..g {
                acc += mats[m][[e, c]] * past[c];
            }
        }
        out.push(acc);
    }
    Array1::from(out)
}

// ── Series generation ─────────────────────────────────────────────────────

/// Generates `n_samples` of the SVAR process after discarding `burn_in`
/// transient samples. Each sample is produced by drawing the disturbance and
/// solving the instantaneous part in topological order (exact for DAGs, no
/// matrix inversion). Pre-history is zero. Deterministic given the noise
/// seed.
pub fn generate_series(
    graph: &CausalGraph,
    couplings: &CouplingSet,
    noise: &NoiseSpec,
    n_samples: usize,
    burn_in: usize,
) -> Result<MultichannelSeries> {
    let report = graph.validate();
    if !report.is_ok() {
        return Err(Error::InvalidGraph(report.to_string()));
    }
    let g = graph.node_count();
    check_graph_couplings(graph, couplings)?;
    if noise.scales.len() != g {
        return Err(Error::DimensionMismatch {
            context: "noise scales vs node count",
            expected: g,
            actual: noise.scales.len(),
        });
    }
    if n_samples == 0 {
        return Err(Error::EmptySeries);
    }
    let radius = companion_spectral_radius(couplings);
    if radius >= STABILITY_LIMIT {
        return Err(Error::UnstableSystem {
            radius,
            limit: STABILITY_LIMIT,
        });
    }
    let topo = graph
        .instantaneous_topological_order()
        .expect("validated graph has a topological order");

    let total = burn_in + n_samples;
    let disturbance = noise.realize(total);
    let mats = couplings.matrices();
    let lag_order = couplings.lag_order();
    let mut y = Array2::<f64>::zeros((total, g));
    for n in 0..total {
        for &e in &topo {
            let mut acc = disturbance[[n, e]];
            for c in 0..g {
                acc += mats[0][[e, c]] * y[[n, c]];
            }
            for m in 1..=lag_order {
                if n >= m {
                    for c in 0..g {
                        acc += mats[m][[e, c]] * y[[n - m, c]];
                    }
                }
            }
            y[[n, e]] = acc;
        }
    }
    let kept = y.slice(ndarray::s![burn_in.., ..]).to_owned();
    MultichannelSeries::new(kept, graph.labels().to_vec(), None)
}

fn check_graph_couplings(graph: &CausalGraph, couplings: &CouplingSet) -> Result<()> {
    if couplings.node_count() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            context: "coupling node count vs graph",
            expected: graph.node_count(),
            actual: couplings.node_count(),
        });
    }
    if couplings.lag_order() != graph.lag_order() {
        return Err(Error::DimensionMismatch {
            context: "coupling lag order vs graph",
            expected: graph.lag_order(),
            actual: couplings.lag_order(),
        });
    }
    Ok(())
}

// ── Stability ─────────────────────────────────────────────────────────────

/// Spectral radius of the `MG x MG` companion matrix of the reduced-form VAR
/// `B^m = (I - A0)^-1 A^m`.
///
/// Computed from the norm of repeatedly squared, renormalized powers of the
/// companion matrix, which converges to machine precision in a few dozen
/// squarings and is immune to the complex-conjugate eigenvalue pairs that
/// defeat a plain single-vector iteration. Returns 0 for a lag-free system
/// and +inf if the instantaneous pattern is cyclic (cannot happen for sets
/// built against a valid graph).
pub fn companion_spectral_radius(couplings: &CouplingSet) -> f64 {
    let g = couplings.node_count();
    let lag_order = couplings.lag_order();
    if lag_order == 0 {
        return 0.0;
    }
    let a0 = couplings.matrix(0);
    let edges: Vec<(usize, usize)> = {
        let mut v = Vec::new();
        for e in 0..g {
            for c in 0..g {
                if a0[[e, c]] != 0.0 {
                    v.push((c, e));
                }
            }
        }
        v
    };
    let topo = match topological_order(g, &edges) {
        Some(t) => t,
        None => return f64::INFINITY,
    };

    // Reduced-form matrices via columnwise substitution: B = A0 B + A^m.
    let mut companion = Array2::<f64>::zeros((lag_order * g, lag_order * g));
    for m in 1..=lag_order {
        let am = couplings.matrix(m);
        for j in 0..g {
            let mut x = vec![0.0; g];
            for &e in &topo {
                let mut acc = am[[e, j]];
                for c in 0..g {
                    acc += a0[[e, c]] * x[c];
                }
                x[e] = acc;
            }
            for e in 0..g {
                companion[[e, (m - 1) * g + j]] = x[e];
            }
        }
    }
    for i in 1..lag_order {
        for d in 0..g {
            companion[[i * g + d, (i - 1) * g + d]] = 1.0;
        }
    }
    gelfand_spectral_radius(companion)
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Spectral radius as the limit of `||A^(2^j)||_F^(1/2^j)`, tracking the norm
/// in log space so contractive powers never underflow.
fn gelfand_spectral_radius(a: Array2<f64>) -> f64 {
    let norm = frobenius(&a);
    if norm == 0.0 {
        return 0.0;
    }
    let mut p = a / norm;
    let mut log_norm = norm.ln();
    let mut prev = f64::INFINITY;
    for j in 1..=80 {
        let sq = p.dot(&p);
        let n = frobenius(&sq);
        if n == 0.0 {
            return 0.0; // nilpotent power
        }
        log_norm = 2.0 * log_norm + n.ln();
        p = sq / n;
        let est = (log_norm / f64::powi(2.0, j)).exp();
        if (est - prev).abs() <= 1e-14 * est.max(1.0) {
            return est;
        }
        prev = est;
    }
    prev
}

// ── What-if re-simulation ─────────────────────────────────────────────────

/// How lagged values of *target* channels are sourced during a what-if run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LagFeedback {
    /// Lagged target values come from the recorded driver data (the default:
    /// re-simulation does not compound its own errors).
    #[default]
    OpenLoop,
    /// Lagged target values come from the previously simulated samples.
    ClosedLoop,
}

/// Re-simulates the `target` channels under `couplings`, driving every other
/// channel with the recorded `driver` data. Instantaneous dependencies among
/// targets are resolved within each sample in topological order; missing
/// pre-history is treated as zero, so targets are simulated from sample 0.
pub fn whatif_run(
    couplings: &CouplingSet,
    driver: &MultichannelSeries,
    targets: &BTreeSet<usize>,
    feedback: LagFeedback,
) -> Result<MultichannelSeries> {
    let g = couplings.node_count();
    let lag_order = couplings.lag_order();
    if driver.n_channels() != g {
        return Err(Error::DimensionMismatch {
            context: "driver channels vs coupling dimension",
            expected: g,
            actual: driver.n_channels(),
        });
    }
    if driver.n_samples() <= lag_order {
        return Err(Error::SeriesTooShort {
            required: lag_order,
            actual: driver.n_samples(),
        });
    }
    for &t in targets {
        if t >= g {
            return Err(Error::UnknownNode(t.to_string()));
        }
    }
    let order = target_topological_order(couplings, targets).ok_or_else(|| {
        Error::WhatIfTargetCycle {
            nodes: targets
                .iter()
                .map(|&t| {
                    driver
                        .labels()
                        .get(t)
                        .cloned()
                        .unwrap_or_else(|| t.to_string())
                })
                .collect(),
        }
    })?;

    let n_total = driver.n_samples();
    let mats = couplings.matrices();
    let driver_data = driver.data();
    let mut out = driver_data.to_owned();
    for n in 0..n_total {
        for &e in &order {
            let mut acc = 0.0;
            for c in 0..g {
                acc += mats[0][[e, c]] * out[[n, c]];
            }
            for m in 1..=lag_order {
                if n >= m {
                    for c in 0..g {
                        let past = match feedback {
                            LagFeedback::OpenLoop => driver_data[[n - m, c]],
                            LagFeedback::ClosedLoop => out[[n - m, c]],
                        };
                        acc += mats[m][[e, c]] * past;
                    }
                }
            }
            out[[n, e]] = acc;
        }
    }
    MultichannelSeries::new(out, driver.labels().to_vec(), driver.sample_rate())
}

/// Topological order of the target nodes under the instantaneous coupling
/// pattern restricted to target-to-target entries. `None` if cyclic.
fn target_topological_order(
    couplings: &CouplingSet,
    targets: &BTreeSet<usize>,
) -> Option<Vec<usize>> {
    let nodes: Vec<usize> = targets.iter().copied().collect();
    let a0 = couplings.matrix(0);
    let mut edges = Vec::new();
    for (ei, &e) in nodes.iter().enumerate() {
        for (ci, &c) in nodes.iter().enumerate() {
            if a0[[e, c]] != 0.0 {
                edges.push((ci, ei));
            }
        }
    }
    let order = topological_order(nodes.len(), &edges)?;
    Some(order.into_iter().map(|i| nodes[i]).collect())
}

// ── Counterfactual removal ────────────────────────────────────────────────

/// What to excise in a counterfactual experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CounterfactualTarget {
    /// Remove one directed influence: zero the `(cause -> effect)` coupling
    /// at every lag, instantaneous included.
    Edge { cause: usize, effect: usize },
    /// Remove a node's influence entirely: zero every coupling with this node
    /// as the cause, at every lag.
    NodeInfluence { node: usize },
}

/// Returns a copy of `couplings` with the selected influences set to exactly
/// zero. The edge or node must exist in the graph; removing an influence
/// that is already zero is a no-op that returns an equal set.
pub fn counterfactual_remove(
    couplings: &CouplingSet,
    graph: &CausalGraph,
    target: &CounterfactualTarget,
) -> Result<CouplingSet> {
    check_graph_couplings(graph, couplings)?;
    let g = graph.node_count();
    let mut mats: Vec<Array2<f64>> = (0..=couplings.lag_order())
        .map(|m| couplings.matrix(m).to_owned())
        .collect();
    match *target {
        CounterfactualTarget::Edge { cause, effect } => {
            if cause >= g || effect >= g || !graph.has_edge_any_lag(cause, effect) {
                return Err(Error::UnknownEdge {
                    cause: graph
                        .labels()
                        .get(cause)
                        .cloned()
                        .unwrap_or_else(|| cause.to_string()),
                    effect: graph
                        .labels()
                        .get(effect)
                        .cloned()
                        .unwrap_or_else(|| effect.to_string()),
                });
            }
            for mat in &mut mats {
                mat[[effect, cause]] = 0.0;
            }
        }
        CounterfactualTarget::NodeInfluence { node } => {
            if node >= g {
                return Err(Error::UnknownNode(node.to_string()));
            }
            for mat in &mut mats {
                for e in 0..g {
                    mat[[e, node]] = 0.0;
                }
            }
        }
    }
    Ok(CouplingSet::from_matrices(mats))
}
