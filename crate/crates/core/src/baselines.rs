//! Closed-form reference estimators: per-node least-squares fitting of the
//! coupling factors, a residual-dependence direction test, and pairwise
//! variance ratios. These are the independent yardsticks the online learner
//! is judged against.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, CouplingSet, ParamLayout};
use crate::series::MultichannelSeries;

/// Relative tolerance of the rank check inside the normal-equations solve.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Default gap in statistic units below which a direction test refuses to
/// pick a winner.
pub const DIRECTION_GAP_THRESHOLD: f64 = 0.1;

// ── Least-squares fit ─────────────────────────────────────────────────────

/// Result of [`ols_svar_fit`]: estimated couplings plus per-node and
/// per-coefficient uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Estimated coupling factors, masked by the graph.
    pub couplings: CouplingSet,
    /// Residual variance per effect node (length G, zero for nodes with no
    /// incoming edges).
    pub residual_variances: Vec<f64>,
    /// Standard error per coefficient, parallel to the parameter layout.
    pub std_errors: Vec<f64>,
    /// The layout the coefficient ordering refers to.
    pub layout: ParamLayout,
}

/// Fits every coupling factor by ordinary least squares, one regression per
/// effect node: `y_e[n]` on the masked regressors `y_c[n]` (instantaneous
/// edges) and `y_c[n-m]` (lag-m edges), using samples `n = M..N`.
///
/// Normal equations are solved with a symmetric positive definite
/// factorization; a relative rank tolerance of 1e-10 rejects degenerate
/// regressor sets per node.
#[allow(clippy::needless_range_loop)]
pub fn ols_svar_fit(series: &MultichannelSeries, graph: &CausalGraph) -> Result<FitReport> {
    let report = graph.validate();
    if !report.is_ok() {
        return Err(Error::InvalidGraph(report.to_string()));
    }
    let g = graph.node_count();
    if series.n_channels() != g {
        return Err(Error::DimensionMismatch {
            context: "series channels vs graph nodes",
            expected: g,
            actual: series.n_channels(),
        });
    }
    let m_order = graph.lag_order();
    let n = series.n_samples();
    let layout = ParamLayout::new(graph)?;
    let data = series.data();

    let mut values = vec![0.0; layout.len()];
    let mut std_errors = vec![0.0; layout.len()];
    let mut residual_variances = vec![0.0; g];

    for effect in 0..g {
        // Regressor list for this node, in layout order: (lag, cause) pairs.
        let param_ids: Vec<usize> = (0..layout.len())
            .filter(|&i| layout.triple(i).1 == effect)
            .collect();
        let q = param_ids.len();
        if n <= m_order {
            return Err(Error::SeriesTooShort {
                required: m_order + 1,
                actual: n,
            });
        }
        let n_obs = n - m_order;
        if q == 0 {
            // No incoming edges: the node is all residual.
            let mut ss = 0.0;
            for row in m_order..n {
                ss += data[[row, effect]] * data[[row, effect]];
            }
            residual_variances[effect] = ss / n_obs as f64;
            continue;
        }
        if n_obs <= q {
            return Err(Error::SeriesTooShort {
                required: m_order + q + 1,
                actual: n,
            });
        }

        // Accumulate X^T X and X^T y directly; regressor j at sample n is
        // data[n - lag, cause].
        let regressor = |row: usize, j: usize| -> f64 {
            let (lag, _, cause) = layout.triple(param_ids[j]);
            data[[row - lag, cause]]
        };
        let mut xtx = vec![vec![0.0; q]; q];
        let mut xty = vec![0.0; q];
        for row in m_order..n {
            let target = data[[row, effect]];
            for j in 0..q {
                let xj = regressor(row, j);
                xty[j] += xj * target;
                for i in j..q {
                    xtx[i][j] += regressor(row, i) * xj;
                }
            }
        }
        for j in 0..q {
            for i in 0..j {
                xtx[i][j] = xtx[j][i];
            }
        }

        let chol = cholesky(&xtx).ok_or_else(|| Error::RankDeficient {
            node: graph.label(effect).to_string(),
        })?;
        let beta = chol.solve(&xty);

        // Residual sum of squares via the fitted values.
        let mut ssr = 0.0;
        for row in m_order..n {
            let mut fit = 0.0;
            for j in 0..q {
                fit += beta[j] * regressor(row, j);
            }
            let r = data[[row, effect]] - fit;
            ssr += r * r;
        }
        let sigma2 = (ssr / (n_obs - q) as f64).max(0.0);
        residual_variances[effect] = sigma2;

        // Standard errors from the diagonal of (X^T X)^-1.
        for j in 0..q {
            let mut unit = vec![0.0; q];
            unit[j] = 1.0;
            let col = chol.solve(&unit);
            std_errors[param_ids[j]] = (sigma2 * col[j]).max(0.0).sqrt();
            values[param_ids[j]] = beta[j];
        }
    }

    Ok(FitReport {
        couplings: layout.unflatten(&values)?,
        residual_variances,
        std_errors,
        layout,
    })
}

/// Cholesky factor of a symmetric matrix, with a relative positive
/// definiteness check.
struct Cholesky {
    l: Vec<Vec<f64>>,
}

#[allow(clippy::needless_range_loop)]
fn cholesky(a: &[Vec<f64>]) -> Option<Cholesky> {
    let q = a.len();
    let scale = (0..q).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let tol = RANK_TOLERANCE * scale;
    let mut l = vec![vec![0.0; q]; q];
    for j in 0..q {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if d <= tol {
            return None;
        }
        l[j][j] = d.sqrt();
        for i in (j + 1)..q {
            let mut v = a[i][j];
            for k in 0..j {
                v -= l[i][k] * l[j][k];
            }
            l[i][j] = v / l[j][j];
        }
    }
    Some(Cholesky { l })
}

impl Cholesky {
    /// Solves `A x = b` given `A = L L^T`.
    #[allow(clippy::needless_range_loop)]
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let q = b.len();
        let mut y = vec![0.0; q];
        for i in 0..q {
            let mut v = b[i];
            for k in 0..i {
                v -= self.l[i][k] * y[k];
            }
            y[i] = v / self.l[i][i];
        }
        let mut x = vec![0.0; q];
        for i in (0..q).rev() {
            let mut v = y[i];
            for k in (i + 1)..q {
                v -= self.l[k][i] * x[k];
            }
            x[i] = v / self.l[i][i];
        }
        x
    }
}

// ── Direction test ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    XToY,
    YToX,
    Inconclusive,
}

/// Outcome of the residual-dependence direction test on an ordered channel
/// pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionVerdict {
    /// Dependence statistic when regressing y on x.
    pub statistic_forward: f64,
    /// Dependence statistic when regressing x on y.
    pub statistic_reverse: f64,
    pub verdict: Direction,
    pub threshold: f64,
}

/// Decides which of two channels drives the other by comparing residual
/// dependence. Regressing effect on cause leaves residuals independent of
/// the regressor; the reverse regression does not (for non-Gaussian data).
/// The dependence statistic is the absolute correlation between squared
/// residuals and squared regressor values, a second-moment proxy for full
/// independence testing. Verdicts are only issued when the gap between the
/// two statistics exceeds `threshold`.
pub fn direction_test(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<DirectionVerdict> {
    direction_test_with(x, y, DIRECTION_GAP_THRESHOLD)
}

pub fn direction_test_with(
    x: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
    threshold: f64,
) -> Result<DirectionVerdict> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 100 {
        return Err(Error::SeriesTooShort {
            required: 100,
            actual: x.len(),
        });
    }
    let statistic_forward = residual_dependence(x, y)?;
    let statistic_reverse = residual_dependence(y, x)?;
    let verdict = if (statistic_forward - statistic_reverse).abs() <= threshold {
        Direction::Inconclusive
    } else if statistic_forward < statistic_reverse {
        Direction::XToY
    } else {
        Direction::YToX
    };
    Ok(DirectionVerdict {
        statistic_forward,
        statistic_reverse,
        verdict,
        threshold,
    })
}

/// Regresses `target` on `regressor`, then correlates squared residuals with
/// squared regressor values. Near zero when the residual is independent of
/// the regressor.
fn residual_dependence(
    regressor: ArrayView1<'_, f64>,
    target: ArrayView1<'_, f64>,
) -> Result<f64> {
    let n = regressor.len() as f64;
    let mx = regressor.sum() / n;
    let my = target.sum() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xv, &yv) in regressor.iter().zip(target.iter()) {
        sxx += (xv - mx) * (xv - mx);
        sxy += (xv - mx) * (yv - my);
    }
    if sxx == 0.0 {
        return Err(Error::ConstantChannel("regressor".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;

    let r2: Vec<f64> = regressor
        .iter()
        .zip(target.iter())
        .map(|(&xv, &yv)| {
            let r = yv - intercept - slope * xv;
            r * r
        })
        .collect();
    let x2: Vec<f64> = regressor.iter().map(|&v| v * v).collect();
    Ok(correlation_or_zero(&r2, &x2))
}

/// Pearson correlation, with zero-variance inputs treated as "no detectable
/// dependence" (a perfectly fit residual carries no signal).
fn correlation_or_zero(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
        sab += (x - ma) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).abs()
}

// ── Variance ratios ───────────────────────────────────────────────────────

/// The `G x G` matrix of pairwise channel variance ratios: entry `(i, j)` is
/// `var(channel i) / var(channel j)`, diagonal exactly 1.
pub fn variance_ratios(series: &MultichannelSeries) -> Result<ndarray::Array2<f64>> {
    let g = series.n_channels();
    let vars: Vec<f64> = (0..g)
        .map(|c| sample_variance(series.channel(c)))
        .collect();
    for (c, &v) in vars.iter().enumerate() {
        if v == 0.0 {
            return Err(Error::ZeroVariance(series.labels()[c].clone()));
        }
    }
    let mut out = ndarray::Array2::zeros((g, g));
    for i in 0..g {
        for j in 0..g {
            out[[i, j]] = if i == j { 1.0 } else { vars[i] / vars[j] };
        }
    }
    Ok(out)
}

/// Two-pass sample variance (denominator n-1; 0 for a single sample).
pub fn sample_variance(x: ArrayView1<'_, f64>) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mean = x.sum() / n as f64;
    x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}
