//! Time-frequency analysis used to compare measured and re-simulated series:
//! short-time periodogram spectrograms, collapsed power spectra, band-power
//! ratios, and a log-spectrum similarity score.

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to power before log transforms so silent bins stay finite.
pub const LOG_POWER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Rectangular,
    Hann,
    Hamming,
}

impl WindowKind {
    /// Symmetric window of length `len` (symmetric, not periodic, so the
    /// time-reversal symmetry of collapsed spectra holds exactly).
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        if len == 1 {
            return vec![1.0];
        }
        let denom = (len - 1) as f64;
        (0..len)
            .map(|k| {
                let phase = std::f64::consts::TAU * k as f64 / denom;
                match self {
                    WindowKind::Rectangular => 1.0,
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                }
            })
            .collect()
    }
}

/// Short-time transform parameters. The defaults give the deliberately
/// coarse resolution used for failure-signature comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub window_len: usize,
    pub hop: usize,
    pub nfft: usize,
    pub window: WindowKind,
    /// Samples per second, used only for axis labeling.
    pub sample_rate: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            window_len: 256,
            hop: 128,
            nfft: 256,
            window: WindowKind::Hann,
            sample_rate: 1.0,
        }
    }
}

/// Time-frequency power distribution: one row per time slice, one column per
/// one-sided frequency bin (`F = nfft/2 + 1`). Entries are non-negative,
/// window-power normalized so a unit sinusoid contributes 0.5 at its bin.
#[derive(Debug, Clone, PartialEq)]
pub struct TfdMatrix {
    power: Array2<f64>,
    time_axis: Vec<f64>,
    freq_axis: Vec<f64>,
    window_len: usize,
    hop: usize,
    window: WindowKind,
}

impl TfdMatrix {
    pub fn power(&self) -> &Array2<f64> {
        &self.power
    }

    pub fn n_slices(&self) -> usize {
        self.power.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.power.ncols()
    }

    /// Slice centers in seconds.
    pub fn time_axis(&self) -> &[f64] {
        &self.time_axis
    }

    /// Bin frequencies in hertz.
    pub fn freq_axis(&self) -> &[f64] {
        &self.freq_axis
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> WindowKind {
        self.window
    }

    /// Scales every power entry, for linearity tests and unit changes.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            power: &self.power * alpha,
            ..self.clone()
        }
    }
}

/// Short-time one-sided periodogram of one channel.
///
/// Each frame of `window_len` samples is windowed, zero-padded to `nfft`,
/// transformed, and converted to power `c_f |X_f|^2 / (nfft * U)` with
/// `U = sum w^2` and `c_f = 2` except at DC and Nyquist. With a rectangular
/// window and `hop = window_len`, summing all power entries and multiplying
/// by `window_len` recovers the time-domain energy of the covered samples.
pub fn spectrogram(signal: ArrayView1<'_, f64>, config: &SpectrogramConfig) -> Result<TfdMatrix> {
    let n = signal.len();
    if config.window_len == 0 || config.hop == 0 {
        return Err(Error::BadSpectrogramParams(
            "window length and hop must be at least 1".into(),
        ));
    }
    if !config.nfft.is_multiple_of(2) {
        return Err(Error::BadSpectrogramParams(format!(
            "nfft must be even, got {}",
            config.nfft
        )));
    }
    if config.window_len > config.nfft {
        return Err(Error::BadSpectrogramParams(format!(
            "window length {} exceeds nfft {}",
            config.window_len, config.nfft
        )));
    }
    if config.sample_rate.is_nan() || config.sample_rate <= 0.0 {
        return Err(Error::BadSpectrogramParams(format!(
            "sample rate must be positive, got {}",
            config.sample_rate
        )));
    }
    if n < config.nfft {
        return Err(Error::SeriesTooShort {
            required: config.nfft,
            actual: n,
        });
    }

    let window = config.window.coefficients(config.window_len);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let n_bins = config.nfft / 2 + 1;
    let n_slices = (n - config.window_len) / config.hop + 1;
    let fft = FftPlanner::new().plan_fft_forward(config.nfft);

    let mut power = Array2::zeros((n_slices, n_bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); config.nfft];
    for t in 0..n_slices {
        let start = t * config.hop;
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = if k < config.window_len {
                Complex64::new(signal[start + k] * window[k], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for f in 0..n_bins {
            let scale = if f == 0 || f == n_bins - 1 { 1.0 } else { 2.0 };
            power[[t, f]] =
                scale * buf[f].norm_sqr() / (config.nfft as f64 * window_power);
        }
    }

    let time_axis = (0..n_slices)
        .map(|t| (t * config.hop) as f64 / config.sample_rate
            + config.window_len as f64 / (2.0 * config.sample_rate))
        .collect();
    let freq_axis = (0..n_bins)
        .map(|f| f as f64 * config.sample_rate / config.nfft as f64)
        .collect();
    Ok(TfdMatrix {
        power,
        time_axis,
        freq_axis,
        window_len: config.window_len,
        hop: config.hop,
        window: config.window,
    })
}

/// Mean power per frequency bin over all time slices: the distribution
/// collapsed onto the frequency axis.
pub fn collapse_spectrum(tfd: &TfdMatrix) -> Vec<f64> {
    let t = tfd.n_slices() as f64;
    (0..tfd.n_bins())
        .map(|f| tfd.power.column(f).sum() / t)
        .collect()
}

/// Fraction of total power strictly above `split_freq`. Returns a value in
/// [0, 1]; a spectrum with no power at all counts as 0.
pub fn band_power_ratio(spectrum: &[f64], freqs: &[f64], split_freq: f64) -> Result<f64> {
    if spectrum.len() != freqs.len() {
        return Err(Error::LengthMismatch {
            expected: freqs.len(),
            actual: spectrum.len(),
        });
    }
    let high_bins = freqs.iter().filter(|&&f| f > split_freq).count();
    if high_bins == 0 || high_bins == freqs.len() {
        // The split must leave bins on both sides, otherwise the ratio is
        // degenerate by construction.
        return Err(Error::EmptyBand(split_freq));
    }
    let total: f64 = spectrum.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let high: f64 = spectrum
        .iter()
        .zip(freqs)
        .filter(|(_, &f)| f > split_freq)
        .map(|(p, _)| p)
        .sum();
    Ok(high / total)
}

/// Pearson correlation of the floored log-power spectra, in [-1, 1]. A match
/// of 1 means identical spectral shape up to a constant power factor.
pub fn spectral_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let la = log_power(a);
    let lb = log_power(b);
    pearson(&la, &lb)
}

/// Floored base-10 log transform of a power spectrum.
pub fn log_power(spectrum: &[f64]) -> Vec<f64> {
    spectrum
        .iter()
        .map(|&p| p.max(LOG_POWER_FLOOR).log10())
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
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
        return Err(Error::ConstantSpectrum);
    }
    Ok(sab / (saa * sbb).sqrt())
}
