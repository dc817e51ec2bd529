//! Online estimation of coupling factors with a single-hidden-layer
//! recurrent network whose output layer is the causal-graph simulation
//! itself.
//!
//! Identity mapping: the input and the training target are the same
//! measurement vector `y[n]`. The network maps `x0` (measurement plus
//! delayed-hidden context) through `X1 = rho(W1 x0)` and `X2 = W2 X1`, then
//! the simulation layer turns the parameter vector `X2` into a one-step
//! prediction `X3`. Driving `|y[n] - X3|^2` to zero forces `X2` toward the
//! coupling factors that explain the data. The simulation layer's Jacobian
//! is obtained by complex-step perturbation, which is exact for this linear
//! map.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, CouplingSet, ParamLayout};
use crate::series::MultichannelSeries;
use crate::svar::{check_step_dims, simulate_step_parts, LagWindow};

/// Channels whose standard deviation falls below this are passed through
/// normalization unscaled.
const NORMALIZE_EPS: f64 = 1e-12;

// ── Configuration ─────────────────────────────────────────────────────────

/// Hyperparameters of the online estimator. Sizes that depend on the graph
/// (input width, output count) are derived at construction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Hidden layer width P.
    pub hidden_size: usize,
    /// How many hidden outputs feed back as context (at most P).
    pub context_size: usize,
    /// Context delay d: context at step n is the hidden output of step n-d.
    pub context_delay: usize,
    /// Learning rate eta.
    pub learning_rate: f64,
    /// Imaginary perturbation h for the simulation-layer Jacobian.
    pub complex_step: f64,
    /// Weight init half-range before the 1/sqrt(fan-in) factor.
    pub weight_init_scale: f64,
    pub seed: u64,
    /// Exponential smoothing factor beta for the reported estimates.
    pub estimate_smoothing: f64,
    /// Z-score each channel over the block before training. Reported
    /// estimates are mapped back to the units of the raw series.
    pub normalize_input: bool,
    /// Also append raw lagged measurements y[n-1..n-M] to the input.
    pub append_raw_lags: bool,
    /// Use the plain-logistic derivative formula 2*X1*(1-X1), which treats
    /// X1 as a unipolar activation, instead of the true bipolar-sigmoid
    /// derivative. Off by default; gradient checks only pass with the true
    /// derivative.
    pub logistic_activation_derivative: bool,
    /// Record full per-step traces (memory-heavy; for diagnostics).
    pub record_trace: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_size: 16,
            context_size: 16,
            context_delay: 1,
            learning_rate: 1e-3,
            complex_step: 1e-20,
            weight_init_scale: 1.0,
            seed: 1,
            estimate_smoothing: 0.999,
            normalize_input: true,
            append_raw_lags: false,
            logistic_activation_derivative: false,
            record_trace: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::BadConfig("hidden_size must be positive".into()));
        }
        if self.context_size > self.hidden_size {
            return Err(Error::BadConfig(format!(
                "context_size {} exceeds hidden_size {}",
                self.context_size, self.hidden_size
            )));
        }
        if self.context_delay == 0 {
            return Err(Error::BadConfig("context_delay must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::BadConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.complex_step.is_nan() || self.complex_step <= 0.0 {
            return Err(Error::BadConfig(format!(
                "complex_step must be positive, got {}",
                self.complex_step
            )));
        }
        if !self.weight_init_scale.is_finite() || self.weight_init_scale <= 0.0 {
            return Err(Error::BadConfig(format!(
                "weight_init_scale must be positive and finite, got {}",
                self.weight_init_scale
            )));
        }
        if !(0.0..1.0).contains(&self.estimate_smoothing) {
            return Err(Error::BadConfig(format!(
                "estimate_smoothing must lie in [0, 1), got {}",
                self.estimate_smoothing
            )));
        }
        Ok(())
    }
}

// ── Activation ────────────────────────────────────────────────────────────

/// Bipolar sigmoid `rho(u) = 2/(1+exp(-u)) - 1`, range (-1, 1), odd.
pub fn bipolar_sigmoid_scalar(u: f64) -> f64 {
    2.0 / (1.0 + (-u).exp()) - 1.0
}

/// Elementwise bipolar sigmoid.
pub fn bipolar_sigmoid(u: ArrayView1<'_, f64>) -> Array1<f64> {
    u.mapv(bipolar_sigmoid_scalar)
}

/// Derivative of the bipolar sigmoid expressed through its output value:
/// `rho'(u) = (1 - rho(u)^2) / 2`. The `logistic_formula` variant substitutes
/// `2 x (1 - x)`, the standard-logistic derivative, which is not the
/// derivative of this activation; it is kept as a compatibility mode.
pub fn activation_derivative(x1: ArrayView1<'_, f64>, logistic_formula: bool) -> Array1<f64> {
    if logistic_formula {
        x1.mapv(|x| 2.0 * x * (1.0 - x))
    } else {
        x1.mapv(|x| (1.0 - x * x) / 2.0)
    }
}

// ── Simulation layer ──────────────────────────────────────────────────────

/// The simulation output layer: unflattens the parameter vector `x2` onto
/// the graph mask and runs one simulation step on `(y_now, lags)`.
pub fn sim_layer(
    x2: ArrayView1<'_, f64>,
    layout: &ParamLayout,
    y_now: ArrayView1<'_, f64>,
    lags: &LagWindow,
) -> Result<Array1<f64>> {
    check_step_dims(layout.node_count(), layout.lag_order(), y_now.len(), lags)?;
    let mats = layout.unflatten_in::<f64>(x2.as_slice().expect("contiguous"))?;
    Ok(simulate_step_parts(&mats, y_now, lags))
}

/// Jacobian of the simulation layer with respect to the parameter vector,
/// by complex-step perturbation: column j is `Im(sim(x2 + i h e_j)) / h`.
/// Returns the full `G x Q` matrix.
pub fn sim_jacobian(
    x2: ArrayView1<'_, f64>,
    layout: &ParamLayout,
    y_now: ArrayView1<'_, f64>,
    lags: &LagWindow,
    h_cs: f64,
) -> Result<Array2<f64>> {
    if h_cs.is_nan() || h_cs <= 0.0 {
        return Err(Error::BadConfig(format!(
            "complex step must be positive, got {}",
            h_cs
        )));
    }
    check_step_dims(layout.node_count(), layout.lag_order(), y_now.len(), lags)?;
    let q = layout.len();
    let g = layout.node_count();
    let base: Vec<Complex64> = x2.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut jac = Array2::zeros((g, q));
    for j in 0..q {
        let mut params = base.clone();
        params[j] += Complex64::new(0.0, h_cs);
        let mats = layout.unflatten_in::<Complex64>(&params)?;
        let out = simulate_step_parts(&mats, y_now, lags);
        for i in 0..g {
            jac[[i, j]] = out[i].im / h_cs;
        }
    }
    Ok(jac)
}

/// The contraction `J^T e` feeding both weight updates.
pub fn jacobian_error_contraction(jac: &Array2<f64>, e: ArrayView1<'_, f64>) -> Array1<f64> {
    jac.t().dot(&e)
}

// ── Network state ─────────────────────────────────────────────────────────

/// Weights, context buffer, and smoothed estimates of the online estimator.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    layout: ParamLayout,
    w1: Array2<f64>,
    w2: Array2<f64>,
    context_history: VecDeque<Array1<f64>>,
    k_smoothed: Array1<f64>,
    step: usize,
}

impl Network {
    /// Fresh network for a graph: sizes derived from the graph, weights
    /// drawn uniformly from `[-s, s]` with `s = weight_init_scale /
    /// sqrt(fan-in)`, seeded.
    ///
    /// The input gains one fixed unit entry beyond measurement, optional raw
    /// lags, and context. Without that bias path the network output would be
    /// an odd function of the measurements (the activation is odd and there
    /// are no additive weights), and the time-averaged estimate over any
    /// zero-mean symmetric-noise system would be pinned to zero no matter
    /// what the true couplings are.
    pub fn new(graph: &CausalGraph, config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(graph)?;
        let g = graph.node_count();
        let input_size = g
            + if config.append_raw_lags {
                g * graph.lag_order()
            } else {
                0
            }
            + config.context_size
            + 1;
        let p = config.hidden_size;
        let q = layout.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let s1 = config.weight_init_scale / (input_size as f64).sqrt();
        let mut w1 = Array2::zeros((p, input_size));
        for v in w1.iter_mut() {
            *v = s1 * (2.0 * rng.random::<f64>() - 1.0);
        }
        let s2 = config.weight_init_scale / (p as f64).sqrt();
        let mut w2 = Array2::zeros((q, p));
        for v in w2.iter_mut() {
            *v = s2 * (2.0 * rng.random::<f64>() - 1.0);
        }
        Ok(Self {
            config,
            layout,
            w1,
            w2,
            context_history: VecDeque::new(),
            k_smoothed: Array1::zeros(q),
            step: 0,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn input_size(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_size(&self) -> usize {
        self.w2.nrows()
    }

    pub fn w1(&self) -> &Array2<f64> {
        &self.w1
    }

    pub fn w2(&self) -> &Array2<f64> {
        &self.w2
    }

    pub fn k_smoothed(&self) -> ArrayView1<'_, f64> {
        self.k_smoothed.view()
    }

    /// The context portion of the next input: the hidden output from
    /// `context_delay` steps ago, or zeros while the buffer is filling.
    pub fn context_vector(&self) -> Array1<f64> {
        if self.context_history.len() == self.config.context_delay {
            self.context_history
                .front()
                .expect("non-empty history")
                .clone()
        } else {
            Array1::zeros(self.config.context_size)
        }
    }

    /// Assembles `x0`: the measurement, optional raw lags, context, then a
    /// fixed unit bias entry.
    fn build_input(&self, data: &Array2<f64>, n: usize) -> Array1<f64> {
        let mut x0 = Vec::with_capacity(self.input_size());
        x0.extend(data.row(n).iter().copied());
        if self.config.append_raw_lags {
            for m in 1..=self.layout.lag_order() {
                x0.extend(data.row(n - m).iter().copied());
            }
        }
        let context = self.context_vector();
        x0.extend(context.iter().copied());
        x0.push(1.0);
        Array1::from(x0)
    }

    /// Forward pass: `X1 = rho(W1 x0)`, `X2 = W2 X1` (linear output, since
    /// couplings are unbounded in sign and magnitude).
    pub fn forward(&self, x0: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        if x0.len() != self.input_size() {
            return Err(Error::DimensionMismatch {
                context: "input vector vs network input size",
                expected: self.input_size(),
                actual: x0.len(),
            });
        }
        let x1 = bipolar_sigmoid(self.w1.dot(&x0).view());
        let x2 = self.w2.dot(&x1);
        Ok((x1, x2))
    }

    /// Applies both weight updates for one sample.
    ///
    /// `W2 += eta (J^T e) X1^T` and `W1 += eta (drho o W2^T J^T e) X0^T`.
    /// The leading factor -eta/2 of steepest descent on `E = e^T e` absorbs
    /// the 2 from `dE/dX3 = -2e`, leaving plain `eta`.
    pub fn backprop_update(
        &mut self,
        x0: ArrayView1<'_, f64>,
        x1: ArrayView1<'_, f64>,
        jte: ArrayView1<'_, f64>,
    ) -> Result<()> {
        let eta = self.config.learning_rate;
        let p = self.hidden_size();
        let q = self.output_size();
        if x0.len() != self.input_size() || x1.len() != p || jte.len() != q {
            return Err(Error::DimensionMismatch {
                context: "update operand sizes vs network shape",
                expected: p,
                actual: x1.len(),
            });
        }
        let back = self.w2.t().dot(&jte);
        let drho = activation_derivative(x1, self.config.logistic_activation_derivative);
        for qi in 0..q {
            for pi in 0..p {
                self.w2[[qi, pi]] += eta * jte[qi] * x1[pi];
            }
        }
        for pi in 0..p {
            let scale = eta * drho[pi] * back[pi];
            for mi in 0..x0.len() {
                self.w1[[pi, mi]] += scale * x0[mi];
            }
        }
        if self.w1.iter().chain(self.w2.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: self.step });
        }
        Ok(())
    }

    /// Shifts the context buffer: the newest entry is the leading
    /// `context_size` hidden outputs of this step.
    pub fn update_context(&mut self, x1: &Array1<f64>) {
        let slice = x1.slice(ndarray::s![..self.config.context_size]).to_owned();
        self.context_history.push_back(slice);
        while self.context_history.len() > self.config.context_delay {
            self.context_history.pop_front();
        }
    }

    fn smooth_estimates(&mut self, x2: &Array1<f64>) {
        let beta = self.config.estimate_smoothing;
        self.k_smoothed = &self.k_smoothed * beta + &(x2 * (1.0 - beta));
    }
}

// ── Training ──────────────────────────────────────────────────────────────

/// One row of the estimate trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    /// Sample index the update was computed at.
    pub step: usize,
    /// Squared error norm `E = e^T e` at this step.
    pub error_norm: f64,
    /// Smoothed coupling estimates after this step, in layout order.
    pub estimates: Vec<f64>,
}

/// Full per-step intermediate values, recorded only on request.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub x0: Array1<f64>,
    pub x1: Array1<f64>,
    pub x2: Array1<f64>,
    pub x3: Array1<f64>,
    pub e: Array1<f64>,
    pub error_norm: f64,
}

/// Outcome of an online training run.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    /// Final smoothed estimates placed on the graph mask, in the units of
    /// the input series. When input normalization is on, the internally
    /// learned factors are mapped back through the channel scales.
    pub estimates: CouplingSet,
    pub trajectory: Vec<TrajectoryRow>,
    pub layout: ParamLayout,
    /// Per-channel offsets subtracted before training (zeros when
    /// normalization is off).
    pub channel_offsets: Vec<f64>,
    /// Per-channel divisors applied before training (ones when off).
    pub channel_scales: Vec<f64>,
    pub traces: Option<Vec<StepTrace>>,
    pub steps: usize,
    pub final_error_norm: f64,
}

/// Runs the online recursion over a series: for each sample n >= M, forward
/// pass, simulation-layer prediction, error, complex-step Jacobian, weight
/// update, context shift, and estimate smoothing. Strictly sequential and
/// deterministic for a fixed seed.
pub fn train_online(
    series: &MultichannelSeries,
    graph: &CausalGraph,
    config: &NetworkConfig,
) -> Result<TrainingOutcome> {
    let report = graph.validate();
    if !report.is_ok() {
        return Err(Error::InvalidGraph(report.to_string()));
    }
    if series.n_channels() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            context: "series channels vs graph nodes",
            expected: graph.node_count(),
            actual: series.n_channels(),
        });
    }
    let mut network = Network::new(graph, config.clone())?;
    continue_training(&mut network, series)
}

/// Runs the same recursion on an existing network, carrying weights, context
/// history, and smoothed estimates over from whatever it has already seen.
/// Input normalization is refitted for this series.
pub fn continue_training(
    network: &mut Network,
    series: &MultichannelSeries,
) -> Result<TrainingOutcome> {
    let g = network.layout.node_count();
    if series.n_channels() != g {
        return Err(Error::DimensionMismatch {
            context: "series channels vs network layout",
            expected: g,
            actual: series.n_channels(),
        });
    }
    let m_order = network.layout.lag_order();
    let n_samples = series.n_samples();
    if n_samples <= m_order {
        return Err(Error::SeriesTooShort {
            required: m_order + 1,
            actual: n_samples,
        });
    }
    let config = network.config.clone();
    let layout = network.layout.clone();

    let (offsets, scales) = if config.normalize_input {
        fit_normalization(series)
    } else {
        (vec![0.0; g], vec![1.0; g])
    };
    let mut data = series.data().to_owned();
    for c in 0..g {
        let mut col = data.column_mut(c);
        col.mapv_inplace(|v| (v - offsets[c]) / scales[c]);
    }

    let mut trajectory = Vec::with_capacity(n_samples - m_order);
    let mut traces: Option<Vec<StepTrace>> = config.record_trace.then(Vec::new);
    let mut final_error = 0.0;
    for n in m_order..n_samples {
        network.step = n;
        let y_now = data.row(n);
        let lags = LagWindow::new((1..=m_order).map(|m| data.row(n - m).to_owned()).collect());
        let x0 = network.build_input(&data, n);
        let (x1, x2) = network.forward(x0.view())?;
        let x3 = sim_layer(x2.view(), &layout, y_now, &lags)?;
        let e = &y_now.to_owned() - &x3;
        let error_norm = e.dot(&e);
        if !error_norm.is_finite() {
            return Err(Error::Divergence { step: n });
        }
        let jac = sim_jacobian(x2.view(), &layout, y_now, &lags, config.complex_step)?;
        let jte = jacobian_error_contraction(&jac, e.view());
        network.backprop_update(x0.view(), x1.view(), jte.view())?;
        network.update_context(&x1);
        network.smooth_estimates(&x2);
        trajectory.push(TrajectoryRow {
            step: n,
            error_norm,
            estimates: network.k_smoothed.to_vec(),
        });
        if let Some(t) = traces.as_mut() {
            t.push(StepTrace {
                x0,
                x1,
                x2,
                x3,
                e,
                error_norm,
            });
        }
        final_error = error_norm;
    }

    // Couplings learned on z-scored channels relate to raw-unit couplings by
    // the ratio of effect scale to cause scale; undo that so the reported
    // values describe the series as given.
    let ratios: Vec<f64> = (0..layout.len())
        .map(|i| {
            let (_, effect, cause) = layout.triple(i);
            scales[effect] / scales[cause]
        })
        .collect();
    for row in &mut trajectory {
        for (v, r) in row.estimates.iter_mut().zip(&ratios) {
            *v *= r;
        }
    }
    let k_raw: Vec<f64> = network
        .k_smoothed
        .iter()
        .zip(&ratios)
        .map(|(v, r)| v * r)
        .collect();
    let estimates = layout.unflatten(&k_raw)?;
    Ok(TrainingOutcome {
        estimates,
        steps: trajectory.len(),
        trajectory,
        layout,
        channel_offsets: offsets,
        channel_scales: scales,
        traces,
        final_error_norm: final_error,
    })
}

/// Per-channel mean and standard deviation over the block. Channels with
/// near-zero spread keep scale 1 so silent channels pass through unchanged.
fn fit_normalization(series: &MultichannelSeries) -> (Vec<f64>, Vec<f64>) {
    let g = series.n_channels();
    let mut offsets = Vec::with_capacity(g);
    let mut scales = Vec::with_capacity(g);
    for c in 0..g {
        let col = series.channel(c);
        let mean = col.sum() / col.len() as f64;
        let var = crate::baselines::sample_variance(col);
        let std = var.sqrt();
        offsets.push(mean);
        scales.push(if std < NORMALIZE_EPS { 1.0 } else { std });
    }
    (offsets, scales)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::bearing_graph;
    use crate::svar::{generate_series, NoiseKind, NoiseSpec};
    use approx::assert_abs_diff_eq;

    fn labels(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("B{}", i)).collect()
    }

    fn single_edge_graph() -> CausalGraph {
        CausalGraph::new(labels(2), 0, vec![(0, 1)], vec![]).unwrap()
    }

    #[test]
    fn sigmoid_is_zero_at_zero_and_odd() {
        assert_eq!(bipolar_sigmoid_scalar(0.0), 0.0);
        for u in [-4.0, -1.3, -0.2, 0.7, 2.9] {
            assert_abs_diff_eq!(
                bipolar_sigmoid_scalar(-u),
                -bipolar_sigmoid_scalar(u),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn sigmoid_matches_shifted_logistic() {
        for u in [-10.0f64, -2.0, -0.5, 0.0, 0.1, 3.0, 12.0] {
            let logistic = 1.0 / (1.0 + (-u).exp());
            assert_abs_diff_eq!(
                bipolar_sigmoid_scalar(u),
                2.0 * logistic - 1.0,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn true_activation_derivative_matches_finite_difference() {
        let h = 1e-6;
        for u in [-2.0, -0.3, 0.0, 0.9, 1.7] {
            let x = bipolar_sigmoid_scalar(u);
            let d = activation_derivative(ndarray::array![x].view(), false)[0];
            let fd = (bipolar_sigmoid_scalar(u + h) - bipolar_sigmoid_scalar(u - h)) / (2.0 * h);
            assert_abs_diff_eq!(d, fd, epsilon = 1e-9);
        }
    }

    #[test]
    fn logistic_derivative_formula_differs_from_true_one() {
        let x = bipolar_sigmoid_scalar(1.0);
        let truth = activation_derivative(ndarray::array![x].view(), false)[0];
        let alternate = activation_derivative(ndarray::array![x].view(), true)[0];
        assert!((truth - alternate).abs() > 0.1);
    }

    #[test]
    fn forward_with_zero_weights_is_zero() {
        let graph = single_edge_graph();
        let mut net = Network::new(&graph, NetworkConfig::default()).unwrap();
        net.w1.fill(0.0);
        net.w2.fill(0.0);
        let x0 = Array1::from_elem(net.input_size(), 0.7);
        let (x1, x2) = net.forward(x0.view()).unwrap();
        assert!(x1.iter().all(|&v| v == 0.0));
        assert!(x2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_matches_hand_computation() {
        let graph = single_edge_graph();
        let config = NetworkConfig {
            hidden_size: 1,
            context_size: 0,
            ..NetworkConfig::default()
        };
        let mut net = Network::new(&graph, config).unwrap();
        net.w1 = ndarray::array![[0.5, -0.25]];
        net.w2 = ndarray::array![[2.0]];
        let x0 = ndarray::array![1.0, 2.0];
        let (x1, x2) = net.forward(x0.view()).unwrap();
        let u = 0.5 * 1.0 - 0.25 * 2.0;
        assert_abs_diff_eq!(x1[0], bipolar_sigmoid_scalar(u), epsilon = 1e-15);
        assert_abs_diff_eq!(x2[0], 2.0 * x1[0], epsilon = 1e-15);
    }

    #[test]
    fn sim_layer_zero_params_zero_output() {
        let graph = bearing_graph();
        let layout = ParamLayout::new(&graph).unwrap();
        let y = ndarray::array![1.0, -2.0, 3.0, 0.5];
        let lags = LagWindow::new(vec![ndarray::array![0.1, 0.2, 0.3, 0.4]]);
        let x2 = Array1::zeros(layout.len());
        let x3 = sim_layer(x2.view(), &layout, y.view(), &lags).unwrap();
        assert!(x3.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sim_layer_single_edge_product() {
        let graph = single_edge_graph();
        let layout = ParamLayout::new(&graph).unwrap();
        assert_eq!(layout.len(), 1);
        let y = ndarray::array![2.0, 123.0];
        let lags = LagWindow::zeros(0, 2);
        let x3 = sim_layer(ndarray::array![0.5].view(), &layout, y.view(), &lags).unwrap();
        assert_eq!(x3, ndarray::array![0.0, 1.0]);
    }

    #[test]
    fn sim_layer_equals_engine_step_on_unflattened_couplings() {
        let graph = bearing_graph();
        let layout = ParamLayout::new(&graph).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let x2: Array1<f64> =
                Array1::from((0..layout.len()).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let y: Array1<f64> =
                Array1::from((0..4).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<_>>());
            let lag_row: Array1<f64> =
                Array1::from((0..4).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<_>>());
            let lags = LagWindow::new(vec![lag_row]);
            let via_layer = sim_layer(x2.view(), &layout, y.view(), &lags).unwrap();
            let set = layout.unflatten(x2.as_slice().unwrap()).unwrap();
            let via_engine = crate::svar::simulate_step(&set, y.view(), &lags).unwrap();
            assert_eq!(via_layer, via_engine);
        }
    }

    /// Analytic Jacobian of the linear simulation layer: entry (e, j) is the
    /// input value multiplying parameter j when its effect row is e.
    fn analytic_jacobian(
        layout: &ParamLayout,
        y_now: ArrayView1<'_, f64>,
        lags: &LagWindow,
    ) -> Array2<f64> {
        let mut jac = Array2::zeros((layout.node_count(), layout.len()));
        for (j, &(lag, effect, cause)) in layout.triples().iter().enumerate() {
            jac[[effect, j]] = if lag == 0 {
                y_now[cause]
            } else {
                lags.vector(lag)[cause]
            };
        }
        jac
    }

    #[test]
    fn complex_step_jacobian_is_exact_for_the_linear_map() {
        let graph = bearing_graph();
        let layout = ParamLayout::new(&graph).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x2: Array1<f64> = Array1::from(
                (0..layout.len())
                    .map(|_| 2.0 * rng.random::<f64>() - 1.0)
                    .collect::<Vec<_>>(),
            );
            let y: Array1<f64> = Array1::from(
                (0..4).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect::<Vec<_>>(),
            );
            let lag_row: Array1<f64> = Array1::from(
                (0..4).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect::<Vec<_>>(),
            );
            let lags = LagWindow::new(vec![lag_row]);
            let jac = sim_jacobian(x2.view(), &layout, y.view(), &lags, 1e-20).unwrap();
            let truth = analytic_jacobian(&layout, y.view(), &lags);
            for (a, b) in jac.iter().zip(truth.iter()) {
                assert!((a - b).abs() <= 1e-12, "jacobian {a} vs analytic {b}");
            }
        }
    }

    #[test]
    fn complex_step_beats_central_difference_on_exp() {
        // Standalone scalar harness: d/dx exp(x) at x = 1.
        let h = 1e-20;
        let x = Complex64::new(1.0, h);
        let cs = x.exp().im / h;
        let truth = 1f64.exp();
        assert_abs_diff_eq!(cs, truth, epsilon = 1e-15 * truth);
        // Central differences cancel entirely at this step size.
        let fd = ((1.0 + h).exp() - (1.0 - h).exp()) / (2.0 * h);
        assert!((fd - truth).abs() > 1.0);
    }

    #[test]
    fn zero_error_and_zero_rate_leave_state_unchanged() {
        let graph = bearing_graph();
        let net0 = Network::new(&graph, NetworkConfig::default()).unwrap();
        let x0 = Array1::from_elem(net0.input_size(), 0.3);
        let (x1, _) = net0.forward(x0.view()).unwrap();

        let mut net = net0.clone();
        let zero_jte = Array1::zeros(net.output_size());
        net.backprop_update(x0.view(), x1.view(), zero_jte.view())
            .unwrap();
        assert_eq!(net.w1, net0.w1);
        assert_eq!(net.w2, net0.w2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Small network; compare implied gradients of E = e^T e against
        // central finite differences over every weight.
        let graph = CausalGraph::new(
            labels(3),
            1,
            vec![(0, 1), (1, 2)],
            vec![[(0usize, 2usize), (2, 0)].into_iter().collect()],
        )
        .unwrap();
        let config = NetworkConfig {
            hidden_size: 4,
            context_size: 2,
            seed: 9,
            ..NetworkConfig::default()
        };
        let net = Network::new(&graph, config.clone()).unwrap();
        let layout = net.layout.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x0: Array1<f64> = Array1::from(
            (0..net.input_size())
                .map(|_| rng.random::<f64>() - 0.5)
                .collect::<Vec<_>>(),
        );
        let y: Array1<f64> =
            Array1::from((0..3).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<_>>());
        let lag_row: Array1<f64> =
            Array1::from((0..3).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<_>>());
        let lags = LagWindow::new(vec![lag_row]);

        let loss = |w1: &Array2<f64>, w2: &Array2<f64>| -> f64 {
            let x1 = bipolar_sigmoid(w1.dot(&x0).view());
            let x2 = w2.dot(&x1);
            let x3 = sim_layer(x2.view(), &layout, y.view(), &lags).unwrap();
            let e = &y - &x3;
            e.dot(&e)
        };

        // Implied gradient: dE/dW = -2/eta * (update step).
        let (x1, x2) = net.forward(x0.view()).unwrap();
        let x3 = sim_layer(x2.view(), &layout, y.view(), &lags).unwrap();
        let e = &y - &x3;
        let jac = sim_jacobian(x2.view(), &layout, y.view(), &lags, 1e-20).unwrap();
        let jte = jacobian_error_contraction(&jac, e.view());
        let mut stepped = net.clone();
        stepped
            .backprop_update(x0.view(), x1.view(), jte.view())
            .unwrap();
        let eta = config.learning_rate;
        let grad_w1 = (&stepped.w1 - &net.w1).mapv(|v| -2.0 * v / eta);
        let grad_w2 = (&stepped.w2 - &net.w2).mapv(|v| -2.0 * v / eta);

        let h = 1e-6;
        for pi in 0..net.hidden_size() {
            for mi in 0..net.input_size() {
                let mut wp = net.w1.clone();
                let mut wm = net.w1.clone();
                wp[[pi, mi]] += h;
                wm[[pi, mi]] -= h;
                let fd = (loss(&wp, &net.w2) - loss(&wm, &net.w2)) / (2.0 * h);
                let g = grad_w1[[pi, mi]];
                assert!(
                    (fd - g).abs() <= 1e-6 * fd.abs().max(g.abs()).max(1e-3),
                    "W1[{pi},{mi}]: fd {fd} vs implied {g}"
                );
            }
        }
        for qi in 0..net.output_size() {
            for pi in 0..net.hidden_size() {
                let mut wp = net.w2.clone();
                let mut wm = net.w2.clone();
                wp[[qi, pi]] += h;
                wm[[qi, pi]] -= h;
                let fd = (loss(&net.w1, &wp) - loss(&net.w1, &wm)) / (2.0 * h);
                let g = grad_w2[[qi, pi]];
                assert!(
                    (fd - g).abs() <= 1e-6 * fd.abs().max(g.abs()).max(1e-3),
                    "W2[{qi},{pi}]: fd {fd} vs implied {g}"
                );
            }
        }
    }

    #[test]
    fn context_size_zero_means_input_is_measurement_plus_bias() {
        let graph = bearing_graph();
        let config = NetworkConfig {
            context_size: 0,
            ..NetworkConfig::default()
        };
        let net = Network::new(&graph, config).unwrap();
        assert_eq!(net.input_size(), 4 + 1);
    }

    #[test]
    fn context_delay_replays_hidden_outputs() {
        let graph = bearing_graph();
        let delay = 3;
        let config = NetworkConfig {
            context_delay: delay,
            record_trace: true,
            seed: 12,
            ..NetworkConfig::default()
        };
        let noise = NoiseSpec::new(NoiseKind::Laplace, vec![1.0; 4], 6).unwrap();
        let series =
            generate_series(&graph, &crate::graph::CouplingSet::zeros(&graph), &noise, 60, 0)
                .unwrap();
        let outcome = train_online(&series, &graph, &config).unwrap();
        let traces = outcome.traces.unwrap();
        let p = config.hidden_size;
        let ctx = config.context_size;
        for (i, trace) in traces.iter().enumerate() {
            assert_eq!(trace.x0[trace.x0.len() - 1], 1.0);
            let context = trace.x0.slice(ndarray::s![4..4 + ctx]).to_owned();
            if i < delay {
                assert!(context.iter().all(|&v| v == 0.0));
            } else {
                let expected = traces[i - delay].x1.slice(ndarray::s![..p]).to_owned();
                assert_eq!(context, expected);
            }
        }
    }

    #[test]
    fn all_zero_series_trains_with_zero_error() {
        // Zero cause values annihilate the simulation layer, so the
        // prediction error is exactly zero at every step regardless of what
        // the network outputs.
        let graph = bearing_graph();
        let data = Array2::zeros((200, 4));
        let series = MultichannelSeries::new(data, labels(4), None).unwrap();
        let outcome = train_online(&series, &graph, &NetworkConfig::default()).unwrap();
        assert!(outcome.trajectory.iter().all(|r| r.error_norm == 0.0));
    }

    #[test]
    fn pure_noise_keeps_estimates_near_zero() {
        let graph = bearing_graph();
        let noise = NoiseSpec::new(NoiseKind::Laplace, vec![1.0; 4], 31).unwrap();
        let series =
            generate_series(&graph, &crate::graph::CouplingSet::zeros(&graph), &noise, 4000, 0)
                .unwrap();
        let outcome = train_online(&series, &graph, &NetworkConfig::default()).unwrap();
        for row in outcome.trajectory.iter().rev().take(100) {
            for &k in &row.estimates {
                assert!(k.abs() < 0.15, "estimate drifted to {k}");
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let graph = bearing_graph();
        let set = crate::graph::CouplingSet::from_entries(
            &graph,
            &[(0, 1, 0, 0.4), (1, 2, 0, 0.3), (1, 3, 2, -0.2)],
        )
        .unwrap();
        let noise = NoiseSpec::new(NoiseKind::Laplace, vec![0.5; 4], 77).unwrap();
        let series = generate_series(&graph, &set, &noise, 500, 50).unwrap();
        let config = NetworkConfig {
            seed: 5,
            ..NetworkConfig::default()
        };
        let a = train_online(&series, &graph, &config).unwrap();
        let b = train_online(&series, &graph, &config).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.estimates, b.estimates);
    }

    #[test]
    fn mask_stays_zero_at_every_step() {
        let graph = bearing_graph();
        let set =
            crate::graph::CouplingSet::from_entries(&graph, &[(0, 1, 0, 0.5), (1, 3, 0, 0.3)])
                .unwrap();
        let noise = NoiseSpec::new(NoiseKind::Laplace, vec![1.0; 4], 15).unwrap();
        let series = generate_series(&graph, &set, &noise, 300, 0).unwrap();
        let outcome = train_online(&series, &graph, &NetworkConfig::default()).unwrap();
        for row in &outcome.trajectory {
            let step_set = outcome.layout.unflatten(&row.estimates).unwrap();
            for lag in 0..=1 {
                let mat = step_set.matrix(lag);
                for e in 0..4 {
                    assert_eq!(mat[[e, e]], 0.0);
                    for c in 0..4 {
                        if !graph.has_edge(lag, c, e) {
                            assert_eq!(mat[[e, c]], 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn error_decreases_on_noise_free_realizable_data() {
        // Deterministic multi-sine drive on the source node, zero noise:
        // the dynamics are exactly representable, so the error trend must
        // fall as training proceeds.
        let graph = bearing_graph();
        let set = crate::graph::CouplingSet::from_entries(
            &graph,
            &[
                (0, 1, 0, 0.5),
                (0, 3, 2, 0.4),
                (1, 2, 0, 0.3),
                (1, 3, 1, -0.3),
            ],
        )
        .unwrap();
        let n = 4000;
        let mut data = Array2::zeros((n, 4));
        for i in 0..n {
            let t = i as f64;
            data[[i, 3]] = (0.29 * t).sin() + 0.7 * (0.83 * t).sin() + 0.4 * (1.31 * t).sin();
        }
        let driver = MultichannelSeries::new(data, labels(4), None).unwrap();
        let targets: std::collections::BTreeSet<usize> = [0, 1, 2].into_iter().collect();
        let series = crate::svar::whatif_run(
            &set,
            &driver,
            &targets,
            crate::svar::LagFeedback::ClosedLoop,
        )
        .unwrap();
        let config = NetworkConfig {
            learning_rate: 2e-3,
            seed: 3,
            ..NetworkConfig::default()
        };
        let outcome = train_online(&series, &graph, &config).unwrap();
        let errs: Vec<f64> = outcome.trajectory.iter().map(|r| r.error_norm).collect();
        let quarter = errs.len() / 4;
        let first: f64 = errs[..quarter].iter().sum::<f64>() / quarter as f64;
        let last: f64 = errs[errs.len() - quarter..].iter().sum::<f64>() / quarter as f64;
        assert!(
            last < first,
            "error failed to decrease: first quarter {first}, last quarter {last}"
        );
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let bad_beta = NetworkConfig {
            estimate_smoothing: 1.0,
            ..NetworkConfig::default()
        };
        assert!(bad_beta.validate().is_err());
        let bad_context = NetworkConfig {
            context_size: 20,
            hidden_size: 8,
            ..NetworkConfig::default()
        };
        assert!(bad_context.validate().is_err());
        let bad_eta = NetworkConfig {
            learning_rate: 0.0,
            ..NetworkConfig::default()
        };
        assert!(bad_eta.validate().is_err());
    }
}
