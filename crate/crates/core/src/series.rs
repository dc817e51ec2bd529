//! Multichannel time series container.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Uniformly sampled `N x G` real-valued series: row `n` is the sample vector
/// `y[n]`, column `g` is one channel. Sample rate is optional and only used
/// to label spectral axes.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSeries {
    data: Array2<f64>,
    labels: Vec<String>,
    sample_rate: Option<f64>,
}

impl MultichannelSeries {
    /// Validates finiteness and shape. Labels default to `ch1..chG` when the
    /// provided list is empty.
    pub fn new(data: Array2<f64>, labels: Vec<String>, sample_rate: Option<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::EmptySeries);
        }
        for ((row, col), &v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { row, col });
            }
        }
        let labels = if labels.is_empty() {
            (1..=data.ncols()).map(|i| format!("ch{}", i)).collect()
        } else if labels.len() == data.ncols() {
            labels
        } else {
            return Err(Error::DimensionMismatch {
                context: "channel labels vs columns",
                expected: data.ncols(),
                actual: labels.len(),
            });
        };
        Ok(Self {
            data,
            labels,
            sample_rate,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn sample(&self, n: usize) -> ArrayView1<'_, f64> {
        self.data.row(n)
    }

    pub fn channel(&self, g: usize) -> ArrayView1<'_, f64> {
        self.data.column(g)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn sample_rate(&self) -> Option<f64> {
        self.sample_rate
    }

    pub fn channel_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownNode(label.to_string()))
    }
}
