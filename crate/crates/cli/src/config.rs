//! Experiment configuration: one JSON document describing the graph, the
//! data source, estimator settings, scenarios, and spectral analysis
//! parameters. Every default lives here so a run needs nothing beyond
//! `--config`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use causaltwin_core::{
    CausalGraph, LagFeedback, NetworkConfig, NoiseKind, SpectrogramConfig, WindowKind,
};
use serde::{Deserialize, Serialize};

use crate::error::{io_context, CliError, Result};

/// Top-level experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Path to the causal graph JSON document, relative to this config file.
    pub graph: PathBuf,
    pub data: DataSource,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub training: TrainingOptions,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub tfd: TfdOptions,
    /// All outputs land here, relative to this config file.
    pub output_dir: PathBuf,
    /// Master seed; stage-level seeds are derived from it.
    #[serde(default)]
    pub seed: u64,
}

/// Where measurement blocks come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Explicit list of whitespace-separated numeric text files, one row per
    /// sample, one column per channel, in graph node order.
    Files {
        blocks: Vec<PathBuf>,
        #[serde(default)]
        expected_channels: Option<usize>,
    },
    /// Generated blocks: a base coupling set, optional per-block ramps, and
    /// a noise description. Ground-truth couplings are written per block.
    Synthetic {
        blocks: usize,
        samples_per_block: usize,
        /// Samples discarded before each block; defaults to
        /// `10 * lag_order * node_count`.
        #[serde(default)]
        burn_in: Option<usize>,
        noise: NoiseSettings,
        #[serde(default)]
        couplings: Vec<CouplingValue>,
        #[serde(default)]
        ramps: Vec<CouplingRamp>,
    },
}

/// Innovation noise for synthetic generation. The per-block seed is derived
/// from the experiment seed plus the block index.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSettings {
    pub kind: NoiseKind,
    /// Standard deviation per channel; zero silences a channel.
    pub scales: Vec<f64>,
}

/// One coupling assignment, endpoints given as node labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingValue {
    pub lag: usize,
    pub cause: String,
    pub effect: String,
    pub value: f64,
}

/// Linear per-block ramp of one coupling from `from` (first block) to `to`
/// (last block).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingRamp {
    pub lag: usize,
    pub cause: String,
    pub effect: String,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingOptions {
    pub enabled: bool,
    /// Keep network weights, context, and smoothed estimates across blocks
    /// instead of restarting per block.
    pub carry_over: bool,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        TrainingOptions {
            enabled: true,
            carry_over: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub enabled: bool,
    /// Record the pairwise variance-ratio matrix per block.
    pub variance_ratios: bool,
    /// Residual-dependence direction checks for these label pairs.
    pub direction_pairs: Vec<(String, String)>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            enabled: true,
            variance_ratios: true,
            direction_pairs: Vec::new(),
        }
    }
}

/// Which coupling set a scenario starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioBase {
    /// Least-squares fit of the driver block.
    #[default]
    Fit,
    /// Online-learner estimates of the driver block.
    Train,
    /// Generating couplings of the driver block (synthetic data only).
    Truth,
}

/// A what-if or counterfactual experiment on top of the estimated twin.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    /// Override selected couplings and re-simulate the target channels,
    /// driving the rest with recorded data.
    WhatIf {
        name: String,
        #[serde(default)]
        base: ScenarioBase,
        overrides: Vec<CouplingValue>,
        /// Node labels to re-simulate.
        targets: Vec<String>,
        #[serde(default)]
        feedback: LagFeedback,
    },
    /// Remove an edge or a node's entire outgoing influence, then compare a
    /// fresh simulation against an identically seeded baseline simulation.
    Counterfactual {
        name: String,
        #[serde(default)]
        base: ScenarioBase,
        remove: Removal,
        /// Noise for the paired simulations; defaults to the synthetic
        /// source's noise and is required for file-based data.
        #[serde(default)]
        noise: Option<NoiseSettings>,
        /// Samples per paired simulation; defaults to the driver block
        /// length.
        #[serde(default)]
        samples: Option<usize>,
    },
}

impl Scenario {
    pub fn name(&self) -> &str {
        match self {
            Scenario::WhatIf { name, .. } | Scenario::Counterfactual { name, .. } => name,
        }
    }

    pub fn kind_label(&self) -> &'static str {
        match self {
            Scenario::WhatIf { .. } => "what_if",
            Scenario::Counterfactual { .. } => "counterfactual",
        }
    }
}

/// What a counterfactual removes: one edge at all lags, or every outgoing
/// coupling of one node.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Removal {
    Edge { cause: String, effect: String },
    Node(String),
}

/// Spectral comparison settings; mirrors the spectrogram parameters plus the
/// band split used for power ratios.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TfdOptions {
    pub enabled: bool,
    pub window_len: usize,
    pub hop: usize,
    pub nfft: usize,
    pub window: WindowKind,
    pub sample_rate: f64,
    /// Channels to analyze; `None` means all.
    pub channels: Option<Vec<String>>,
    /// Split frequency for band power ratios; defaults to a quarter of the
    /// sample rate.
    pub band_split: Option<f64>,
}

impl Default for TfdOptions {
    fn default() -> Self {
        let s = SpectrogramConfig::default();
        TfdOptions {
            enabled: true,
            window_len: s.window_len,
            hop: s.hop,
            nfft: s.nfft,
            window: s.window,
            sample_rate: s.sample_rate,
            channels: None,
            band_split: None,
        }
    }
}

impl TfdOptions {
    pub fn spectrogram_config(&self) -> SpectrogramConfig {
        SpectrogramConfig {
            window_len: self.window_len,
            hop: self.hop,
            nfft: self.nfft,
            window: self.window,
            sample_rate: self.sample_rate,
        }
    }

    pub fn split_frequency(&self) -> f64 {
        self.band_split.unwrap_or(self.sample_rate / 4.0)
    }
}

/// A parsed config plus the directory its relative paths resolve against.
/// The manifest snapshots the config exactly as parsed, so reruns from the
/// same file are byte-identical regardless of the invocation directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {}", path.display(), e)))?;
        let base_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let loaded = LoadedConfig { config, base_dir };
        loaded.check_shape()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn graph_path(&self) -> PathBuf {
        self.resolve(&self.config.graph)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn load_graph(&self) -> Result<CausalGraph> {
        load_graph_file(&self.graph_path())
    }

    /// Structural checks that need no graph: counts, name collisions, and
    /// obviously bad numbers. Graph-dependent checks happen in the validate
    /// stage.
    pub fn check_shape(&self) -> Result<()> {
        let c = &self.config;
        if c.output_dir.as_os_str().is_empty() {
            return Err(CliError::Validation("output_dir is empty".into()));
        }
        c.network
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if let DataSource::Files { blocks, .. } = &c.data {
            if blocks.is_empty() {
                return Err(CliError::Validation("data.blocks is empty".into()));
            }
        }
        if let DataSource::Synthetic {
            blocks,
            samples_per_block,
            ..
        } = &c.data
        {
            if *blocks == 0 {
                return Err(CliError::Validation("data.blocks must be at least 1".into()));
            }
            if *samples_per_block == 0 {
                return Err(CliError::Validation(
                    "data.samples_per_block must be at least 1".into(),
                ));
            }
        }
        let mut names = BTreeSet::new();
        for s in &c.scenarios {
            let name = s.name();
            if name.is_empty()
                || !name
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-')
            {
                return Err(CliError::Validation(format!(
                    "scenario name '{}' must be non-empty and use only letters, digits, '-', '_'",
                    name
                )));
            }
            if !names.insert(name.to_string()) {
                return Err(CliError::Validation(format!(
                    "duplicate scenario name '{}'",
                    name
                )));
            }
        }
        if c.tfd.sample_rate <= 0.0 || !c.tfd.sample_rate.is_finite() {
            return Err(CliError::Validation(format!(
                "tfd.sample_rate must be positive, got {}",
                c.tfd.sample_rate
            )));
        }
        if let Some(split) = c.tfd.band_split {
            if !(split > 0.0 && split.is_finite()) {
                return Err(CliError::Validation(format!(
                    "tfd.band_split must be positive, got {}",
                    split
                )));
            }
        }
        Ok(())
    }
}

/// Resolves a `(lag, cause, effect)` reference against the graph, insisting
/// the edge exists.
/// Reads and parses a graph file on its own, outside any config.
pub fn load_graph_file(path: &Path) -> Result<CausalGraph> {
    let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    Ok(CausalGraph::from_json(&text)?)
}

pub fn resolve_edge(
    graph: &CausalGraph,
    lag: usize,
    cause: &str,
    effect: &str,
) -> Result<(usize, usize, usize)> {
    let c = graph.node_index(cause)?;
    let e = graph.node_index(effect)?;
    if lag > graph.lag_order() {
        return Err(CliError::Validation(format!(
            "lag {} exceeds the graph lag order {}",
            lag,
            graph.lag_order()
        )));
    }
    if !graph.has_edge(lag, c, e) {
        return Err(CliError::Validation(format!(
            "edge {} -> {} at lag {} is not in the graph",
            cause, effect, lag
        )));
    }
    Ok((lag, c, e))
}
