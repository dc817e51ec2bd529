//! Staged experiment runner behind the `causaltwin` binary.
//!
//! A run walks a fixed stage order: `validate`, `data`, `train`, `fit`,
//! `scenarios`, `tfd`, `report`. Every stage writes its outputs under the
//! configured output directory and the manifest records a checksum for each
//! file, so any number in a report can be traced back to the stage that
//! produced it. Reruns with the same config produce byte-identical outputs
//! and manifests; wall-clock timings go to `timings.json`, which is the one
//! file excluded from that guarantee.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use causaltwin_core::baselines::{ols_svar_fit, variance_ratios, Direction};
use causaltwin_core::graph::CausalGraph;
use causaltwin_core::learner::{continue_training, train_online, Network};
use causaltwin_core::series::MultichannelSeries;
use causaltwin_core::spectral::{
    band_power_ratio, spectral_similarity, spectrogram, SpectrogramConfig, TfdMatrix, WindowKind,
};
use causaltwin_core::graph::{CouplingSet, ParamLayout};
use causaltwin_core::svar::{
    counterfactual_remove, generate_series, whatif_run, CounterfactualTarget, NoiseSpec,
};
use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{
    resolve_edge, DataSource, ExperimentConfig, LoadedConfig, Removal, Scenario, ScenarioBase,
};
use crate::coupling_io::{save_couplings, save_trajectory, CouplingMeta, DirectionRecord};
use crate::error::{io_context, CliError, Result};
use crate::ingest::{load_block, relabel, save_block};
use crate::report;
use crate::synth::{plan_couplings, synth_dataset};

// ── Manifest ──────────────────────────────────────────────────────────────

/// A file the run read or wrote, with the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the output directory (outputs) or as configured
    /// (inputs), with forward slashes.
    pub path: String,
    pub sha256: String,
}

/// One completed stage and everything it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub outputs: Vec<FileRecord>,
}

/// The full record of a run: the config as parsed, every input consumed,
/// every stage completed, and how the run ended.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    /// External files read by the run (recorded data blocks).
    pub inputs: Vec<FileRecord>,
    /// Stages that completed, in execution order.
    pub stages: Vec<StageRecord>,
    /// True when a stage failed; earlier stage outputs are retained.
    pub incomplete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Files the tool writes without checksumming; `timings.json` varies
    /// between otherwise identical runs.
    pub untracked: Vec<String>,
}

impl RunManifest {
    fn new(config: ExperimentConfig) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs: Vec::new(),
            stages: Vec::new(),
            incomplete: false,
            failed_stage: None,
            error: None,
            untracked: vec!["timings.json".to_string()],
        }
    }

    /// Looks up a completed stage by name.
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.json")
}

pub fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    let path = manifest_path(out_dir);
    let text =
        serde_json::to_string_pretty(manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| io_context(&path, e))?;
    Ok(path)
}

pub fn load_manifest(out_dir: &Path) -> Result<RunManifest> {
    let path = manifest_path(out_dir);
    let text = fs::read_to_string(&path).map_err(|e| io_context(&path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Data(format!("{} is not a valid manifest: {}", path.display(), e))
    })
}

#[derive(Serialize)]
struct StageTiming {
    name: String,
    elapsed_ms: f64,
}

#[derive(Serialize)]
struct RunTimings {
    total_ms: f64,
    stages: Vec<StageTiming>,
}

fn write_timings(out_dir: &Path, started: Instant, stages: &[StageTiming]) -> Result<()> {
    let timings = RunTimings {
        total_ms: started.elapsed().as_secs_f64() * 1e3,
        stages: stages
            .iter()
            .map(|t| StageTiming {
                name: t.name.clone(),
                elapsed_ms: t.elapsed_ms,
            })
            .collect(),
    };
    let path = out_dir.join("timings.json");
    let text =
        serde_json::to_string_pretty(&timings).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| io_context(&path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_context(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

/// Joins path components with forward slashes regardless of platform.
fn slash_path(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn record_outputs(out_dir: &Path, name: &str, paths: Vec<PathBuf>) -> Result<StageRecord> {
    let mut outputs = Vec::with_capacity(paths.len());
    for path in &paths {
        let rel = path.strip_prefix(out_dir).map_err(|_| {
            CliError::Internal(format!(
                "stage output {} is outside the output directory",
                path.display()
            ))
        })?;
        outputs.push(FileRecord {
            path: slash_path(rel),
            sha256: sha256_file(path)?,
        });
    }
    Ok(StageRecord {
        name: name.to_string(),
        outputs,
    })
}

// ── Stage selection ───────────────────────────────────────────────────────

/// How a verb requests an optional stage. `Require` errors if the config
/// disables the stage, so the config stays the single source of truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Skip,
    IfEnabled,
    Require,
}

/// Which scenarios a verb runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioFilter {
    None,
    All,
    /// What-if scenarios only, optionally a single one by name.
    WhatIfOnly(Option<String>),
    /// Counterfactual scenarios only, optionally a single one by name.
    CounterfactualOnly(Option<String>),
}

/// The subset of stages a verb asks for. `validate` and `data` always run.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSelection {
    pub train: Gate,
    pub fit: Gate,
    pub tfd: Gate,
    pub scenarios: ScenarioFilter,
    pub report: bool,
}

impl StageSelection {
    /// Everything the config enables, plus the report.
    pub fn run_all() -> Self {
        StageSelection {
            train: Gate::IfEnabled,
            fit: Gate::IfEnabled,
            tfd: Gate::IfEnabled,
            scenarios: ScenarioFilter::All,
            report: true,
        }
    }

    /// Data stage only.
    pub fn data_only() -> Self {
        StageSelection {
            train: Gate::Skip,
            fit: Gate::Skip,
            tfd: Gate::Skip,
            scenarios: ScenarioFilter::None,
            report: false,
        }
    }

    pub fn train_only() -> Self {
        StageSelection {
            train: Gate::Require,
            ..Self::data_only()
        }
    }

    pub fn fit_only() -> Self {
        StageSelection {
            fit: Gate::Require,
            ..Self::data_only()
        }
    }

    pub fn tfd_only() -> Self {
        StageSelection {
            tfd: Gate::Require,
            ..Self::data_only()
        }
    }

    /// What-if scenarios plus whatever base estimates they need.
    pub fn whatif(name: Option<String>) -> Self {
        StageSelection {
            scenarios: ScenarioFilter::WhatIfOnly(name),
            ..Self::data_only()
        }
    }

    /// Counterfactual scenarios plus whatever base estimates they need.
    pub fn counterfactual(name: Option<String>) -> Self {
        StageSelection {
            scenarios: ScenarioFilter::CounterfactualOnly(name),
            ..Self::data_only()
        }
    }
}

/// Stages that will actually run, after reconciling the verb's selection
/// with the config's enabled flags and scenario base requirements.
struct Effective {
    train: bool,
    fit: bool,
    tfd: bool,
    /// Selected scenarios with their position in the configured list, which
    /// fixes each counterfactual's simulation seed.
    scenarios: Vec<(usize, Scenario)>,
}

fn resolve_gate(gate: Gate, enabled: bool, what: &str, needed: bool) -> Result<bool> {
    match gate {
        Gate::Skip => Ok(needed),
        Gate::IfEnabled => Ok(enabled || needed),
        Gate::Require => {
            if enabled {
                Ok(true)
            } else {
                Err(CliError::Validation(format!(
                    "{what} is disabled in the config"
                )))
            }
        }
    }
}

fn compute_effective(config: &ExperimentConfig, selection: &StageSelection) -> Result<Effective> {
    let indexed = config.scenarios.iter().cloned().enumerate();
    let scenarios: Vec<(usize, Scenario)> = match &selection.scenarios {
        ScenarioFilter::None => Vec::new(),
        ScenarioFilter::All => indexed.collect(),
        ScenarioFilter::WhatIfOnly(name) => {
            let picked: Vec<_> = indexed
                .filter(|(_, s)| matches!(s, Scenario::WhatIf { .. }))
                .filter(|(_, s)| name.as_deref().is_none_or(|n| s.name() == n))
                .collect();
            if picked.is_empty() {
                return Err(CliError::Validation(match name {
                    Some(n) => format!("no what-if scenario named '{n}'"),
                    None => "the config defines no what-if scenarios".to_string(),
                }));
            }
            picked
        }
        ScenarioFilter::CounterfactualOnly(name) => {
            let picked: Vec<_> = indexed
                .filter(|(_, s)| matches!(s, Scenario::Counterfactual { .. }))
                .filter(|(_, s)| name.as_deref().is_none_or(|n| s.name() == n))
                .collect();
            if picked.is_empty() {
                return Err(CliError::Validation(match name {
                    Some(n) => format!("no counterfactual scenario named '{n}'"),
                    None => "the config defines no counterfactual scenarios".to_string(),
                }));
            }
            picked
        }
    };

    let mut need_train = false;
    let mut need_fit = false;
    for (_, s) in &scenarios {
        let base = match s {
            Scenario::WhatIf { base, .. } | Scenario::Counterfactual { base, .. } => *base,
        };
        match base {
            ScenarioBase::Train => {
                if !config.training.enabled {
                    return Err(CliError::Validation(format!(
                        "scenario '{}' uses the train base but training is disabled in the config",
                        s.name()
                    )));
                }
                need_train = true;
            }
            ScenarioBase::Fit => {
                if !config.fit.enabled {
                    return Err(CliError::Validation(format!(
                        "scenario '{}' uses the fit base but fitting is disabled in the config",
                        s.name()
                    )));
                }
                need_fit = true;
            }
            ScenarioBase::Truth => {
                if !matches!(config.data, DataSource::Synthetic { .. }) {
                    return Err(CliError::Validation(format!(
                        "scenario '{}' uses the truth base but the data source is recorded files",
                        s.name()
                    )));
                }
            }
        }
    }

    Ok(Effective {
        train: resolve_gate(selection.train, config.training.enabled, "training", need_train)?,
        fit: resolve_gate(selection.fit, config.fit.enabled, "fitting", need_fit)?,
        tfd: resolve_gate(selection.tfd, config.tfd.enabled, "spectral analysis", false)?,
        scenarios,
    })
}

fn base_label(base: ScenarioBase) -> &'static str {
    match base {
        ScenarioBase::Fit => "fit",
        ScenarioBase::Train => "train",
        ScenarioBase::Truth => "truth",
    }
}

// ── Spectral outputs ──────────────────────────────────────────────────────

/// Sidecar for a saved spectrogram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TfdFileMeta {
    pub kind: String,
    pub channel: String,
    pub window_len: usize,
    pub hop: usize,
    pub nfft: usize,
    pub window: WindowKind,
    pub sample_rate: f64,
    pub n_slices: usize,
    pub n_bins: usize,
    /// Slice centers in seconds, one per matrix row.
    pub time_axis: Vec<f64>,
    /// Bin frequencies in hertz, one per matrix column.
    pub freq_axis: Vec<f64>,
    pub band_split: f64,
    /// High-band to low-band power ratio of the collapsed spectrum.
    pub band_ratio: f64,
}

/// Replaces anything outside `[A-Za-z0-9_-]` so a channel label can be used
/// as a file stem. Distinct labels can collide after sanitizing; outputs
/// would then overwrite each other, so keep labels to that character set.
pub(crate) fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `<stem>.tsv` (power matrix, one row per time slice),
/// `<stem>.meta.json`, and `<stem>_collapsed.tsv` (time-averaged spectrum).
/// Returns the written paths, the band power ratio of the collapsed
/// spectrum, and the collapsed spectrum itself.
fn save_tfd(
    dir: &Path,
    stem: &str,
    channel: &str,
    signal: ArrayView1<'_, f64>,
    config: &SpectrogramConfig,
    band_split: f64,
) -> Result<(Vec<PathBuf>, f64, Vec<f64>)> {
    let tfd = spectrogram(signal, config)?;
    let collapsed = collapse(&tfd);
    let ratio = band_power_ratio(&collapsed, tfd.freq_axis(), band_split)?;

    let matrix_path = dir.join(format!("{stem}.tsv"));
    let mut text = String::new();
    for row in tfd.power().rows() {
        let mut first = true;
        for v in row {
            if !first {
                text.push('\t');
            }
            first = false;
            text.push_str(&format!("{v}"));
        }
        text.push('\n');
    }
    fs::write(&matrix_path, text).map_err(|e| io_context(&matrix_path, e))?;

    let collapsed_path = dir.join(format!("{stem}_collapsed.tsv"));
    let mut text = String::from("frequency\tpower\n");
    for (f, p) in tfd.freq_axis().iter().zip(&collapsed) {
        text.push_str(&format!("{f}\t{p}\n"));
    }
    fs::write(&collapsed_path, text).map_err(|e| io_context(&collapsed_path, e))?;

    let meta = TfdFileMeta {
        kind: "tfd".to_string(),
        channel: channel.to_string(),
        window_len: tfd.window_len(),
        hop: tfd.hop(),
        nfft: config.nfft,
        window: tfd.window(),
        sample_rate: config.sample_rate,
        n_slices: tfd.n_slices(),
        n_bins: tfd.n_bins(),
        time_axis: tfd.time_axis().to_vec(),
        freq_axis: tfd.freq_axis().to_vec(),
        band_split,
        band_ratio: ratio,
    };
    let meta_file = dir.join(format!("{stem}.meta.json"));
    let text =
        serde_json::to_string_pretty(&meta).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(&meta_file, text + "\n").map_err(|e| io_context(&meta_file, e))?;

    Ok((vec![matrix_path, meta_file, collapsed_path], ratio, collapsed))
}

/// Time-averaged power per frequency bin.
fn collapse(tfd: &TfdMatrix) -> Vec<f64> {
    let power = tfd.power();
    let n = power.nrows() as f64;
    (0..power.ncols())
        .map(|j| power.column(j).sum() / n)
        .collect()
}

// ── Scenario metrics ──────────────────────────────────────────────────────

/// Spectral comparison for one channel of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub channel: String,
    /// High-band to low-band power ratio of the baseline signal.
    pub band_ratio_baseline: f64,
    /// Same ratio for the scenario signal.
    pub band_ratio_scenario: f64,
    /// Spectral similarity between baseline and scenario spectra.
    pub similarity: f64,
}

/// Contents of a scenario's `metrics.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub scenario: String,
    /// "what_if" or "counterfactual".
    pub kind: String,
    /// Which coupling estimates the scenario started from.
    pub base: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation_seed: Option<u64>,
    pub band_split: f64,
    pub channels: Vec<ChannelMetrics>,
}

fn write_metrics(dir: &Path, metrics: &ScenarioMetrics) -> Result<PathBuf> {
    let path = dir.join("metrics.json");
    let text =
        serde_json::to_string_pretty(metrics).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| io_context(&path, e))?;
    Ok(path)
}

#[derive(Serialize)]
struct ValidationFile {
    kind: &'static str,
    ok: bool,
    violations: Vec<String>,
}

// ── The runner ────────────────────────────────────────────────────────────

/// Runs the selected stages and returns the final manifest. On a stage
/// failure the manifest is still written, marked incomplete with the failed
/// stage and error recorded, and earlier outputs are retained.
pub fn run_pipeline(loaded: &LoadedConfig, selection: &StageSelection) -> Result<RunManifest> {
    let config = &loaded.config;
    loaded.check_shape()?;
    let eff = compute_effective(config, selection)?;

    let out_dir = loaded.output_dir();
    fs::create_dir_all(&out_dir).map_err(|e| io_context(&out_dir, e))?;

    let mut manifest = RunManifest::new(config.clone());
    let mut timings: Vec<StageTiming> = Vec::new();
    let run_started = Instant::now();

    let mut graph_slot: Option<CausalGraph> = None;
    let mut blocks: Vec<MultichannelSeries> = Vec::new();
    let mut truths: Vec<CouplingSet> = Vec::new();
    let mut learned: Vec<CouplingSet> = Vec::new();
    let mut fitted: Vec<CouplingSet> = Vec::new();

    macro_rules! stage {
        ($name:expr, $body:block) => {{
            let started = Instant::now();
            #[allow(clippy::redundant_closure_call)]
            let result: Result<Vec<PathBuf>> = (|| $body)();
            timings.push(StageTiming {
                name: $name.to_string(),
                elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            match result.and_then(|paths| record_outputs(&out_dir, $name, paths)) {
                Ok(record) => manifest.stages.push(record),
                Err(e) => {
                    manifest.incomplete = true;
                    manifest.failed_stage = Some($name.to_string());
                    manifest.error = Some(e.to_string());
                    let _ = write_manifest(&out_dir, &manifest);
                    let _ = write_timings(&out_dir, run_started, &timings);
                    return Err(e);
                }
            }
        }};
    }

    stage!("validate", {
        let graph = loaded.load_graph()?;
        let report = graph.validate();
        let path = out_dir.join("validation.json");
        let file = ValidationFile {
            kind: "validation",
            ok: report.is_ok(),
            violations: report.violations.iter().map(|v| v.to_string()).collect(),
        };
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| io_context(&path, e))?;
        if !report.is_ok() {
            return Err(CliError::Validation(report.to_string()));
        }
        check_against_graph(config, &graph, &eff)?;
        graph_slot = Some(graph);
        Ok(vec![path])
    });
    let graph = graph_slot.take().expect("validate stage sets the graph");
    let g = graph.node_count();

    stage!("data", {
        match &config.data {
            DataSource::Synthetic {
                blocks: n_blocks,
                samples_per_block,
                burn_in,
                noise,
                couplings,
                ramps,
            } => {
                let result = synth_dataset(
                    &graph,
                    *n_blocks,
                    *samples_per_block,
                    *burn_in,
                    noise,
                    couplings,
                    ramps,
                    config.seed,
                    &out_dir.join("data"),
                )?;
                blocks = result.series;
                truths = result.truths;
                Ok(result.files)
            }
            DataSource::Files {
                blocks: files,
                expected_channels: _,
            } => {
                for rel in files {
                    let path = loaded.resolve(rel);
                    manifest.inputs.push(FileRecord {
                        path: slash_path(rel),
                        sha256: sha256_file(&path)?,
                    });
                    let series = load_block(&path, Some(g))?;
                    blocks.push(relabel(series, graph.labels())?);
                }
                Ok(Vec::new())
            }
        }
    });

    if eff.train {
        stage!("train", {
            let dir = out_dir.join("train");
            fs::create_dir_all(&dir).map_err(|e| io_context(&dir, e))?;
            let mut paths = Vec::new();
            let mut carried: Option<Network> = if config.training.carry_over {
                Some(Network::new(&graph, config.network.clone())?)
            } else {
                None
            };
            for (b, series) in blocks.iter().enumerate() {
                let outcome = match &mut carried {
                    Some(net) => continue_training(net, series)?,
                    None => train_online(series, &graph, &config.network)?,
                };
                let traj_path = dir.join(format!("block_{b:02}_trajectory.tsv"));
                paths.extend(save_trajectory(
                    &traj_path,
                    &graph,
                    &outcome,
                    &config.network,
                )?);
                let coup_path = dir.join(format!("block_{b:02}_couplings.tsv"));
                let meta = CouplingMeta::new(&graph, &outcome.layout, "learner");
                paths.extend(save_couplings(
                    &coup_path,
                    &graph,
                    &outcome.estimates,
                    &outcome.layout,
                    &meta,
                )?);
                learned.push(outcome.estimates);
            }
            Ok(paths)
        });
    }

    if eff.fit {
        stage!("fit", {
            let dir = out_dir.join("fit");
            fs::create_dir_all(&dir).map_err(|e| io_context(&dir, e))?;
            let mut paths = Vec::new();
            for (b, series) in blocks.iter().enumerate() {
                let fitrep = ols_svar_fit(series, &graph)?;
                let mut meta = CouplingMeta::new(&graph, &fitrep.layout, "least_squares");
                meta.residual_variances = Some(fitrep.residual_variances.clone());
                meta.std_errors = Some(fitrep.std_errors.clone());
                if config.fit.variance_ratios {
                    let ratios = variance_ratios(series)?;
                    meta.variance_ratios =
                        Some(ratios.rows().into_iter().map(|r| r.to_vec()).collect());
                }
                if !config.fit.direction_pairs.is_empty() {
                    let mut checks = Vec::new();
                    for (x, y) in &config.fit.direction_pairs {
                        let xi = graph.node_index(x)?;
                        let yi = graph.node_index(y)?;
                        let verdict = causaltwin_core::baselines::direction_test(
                            series.channel(xi),
                            series.channel(yi),
                        )?;
                        checks.push(DirectionRecord {
                            x: x.clone(),
                            y: y.clone(),
                            statistic_forward: verdict.statistic_forward,
                            statistic_reverse: verdict.statistic_reverse,
                            verdict: match verdict.verdict {
                                Direction::XToY => "x_to_y".to_string(),
                                Direction::YToX => "y_to_x".to_string(),
                                Direction::Inconclusive => "inconclusive".to_string(),
                            },
                        });
                    }
                    meta.direction_checks = Some(checks);
                }
                let path = dir.join(format!("block_{b:02}_couplings.tsv"));
                paths.extend(save_couplings(
                    &path,
                    &graph,
                    &fitrep.couplings,
                    &fitrep.layout,
                    &meta,
                )?);
                fitted.push(fitrep.couplings);
            }
            Ok(paths)
        });
    }

    if !eff.scenarios.is_empty() {
        stage!("scenarios", {
            let mut paths = Vec::new();
            let driver = blocks.last().expect("data stage loaded blocks");
            let layout = ParamLayout::new(&graph)?;
            let scfg = config.tfd.spectrogram_config();
            let split = config.tfd.split_frequency();
            for (orig_idx, scenario) in &eff.scenarios {
                let sdir = out_dir.join("scenarios").join(scenario.name());
                fs::create_dir_all(&sdir).map_err(|e| io_context(&sdir, e))?;
                let base = match scenario {
                    Scenario::WhatIf { base, .. } | Scenario::Counterfactual { base, .. } => *base,
                };
                let base_set = match base {
                    ScenarioBase::Fit => fitted.last(),
                    ScenarioBase::Train => learned.last(),
                    ScenarioBase::Truth => truths.last(),
                }
                .ok_or_else(|| {
                    CliError::Internal(format!(
                        "no {} estimates available for scenario '{}'",
                        base_label(base),
                        scenario.name()
                    ))
                })?
                .clone();

                match scenario {
                    Scenario::WhatIf {
                        name,
                        overrides,
                        targets,
                        feedback,
                        ..
                    } => {
                        let mut set = base_set;
                        for ov in overrides {
                            let (lag, c, e) = resolve_edge(&graph, ov.lag, &ov.cause, &ov.effect)?;
                            set.set_coupling(&graph, lag, c, e, ov.value)?;
                        }
                        let coup_path = sdir.join("couplings.tsv");
                        let meta = CouplingMeta::new(&graph, &layout, "what_if");
                        paths.extend(save_couplings(&coup_path, &graph, &set, &layout, &meta)?);

                        let target_idx: BTreeSet<usize> = targets
                            .iter()
                            .map(|t| graph.node_index(t))
                            .collect::<causaltwin_core::Result<_>>()?;
                        let sim = whatif_run(&set, driver, &target_idx, *feedback)?;
                        let sim_path = sdir.join("simulated.tsv");
                        save_block(&sim, &sim_path)?;
                        paths.push(sim_path);

                        let mut channels = Vec::new();
                        for label in targets {
                            let idx = graph.node_index(label)?;
                            let stem = file_stem(label);
                            let (p, ratio_base, collapsed_base) = save_tfd(
                                &sdir,
                                &format!("tfd_baseline_{stem}"),
                                label,
                                driver.channel(idx),
                                &scfg,
                                split,
                            )?;
                            paths.extend(p);
                            let (p, ratio_scen, collapsed_scen) = save_tfd(
                                &sdir,
                                &format!("tfd_scenario_{stem}"),
                                label,
                                sim.channel(idx),
                                &scfg,
                                split,
                            )?;
                            paths.extend(p);
                            channels.push(ChannelMetrics {
                                channel: label.clone(),
                                band_ratio_baseline: ratio_base,
                                band_ratio_scenario: ratio_scen,
                                similarity: spectral_similarity(&collapsed_base, &collapsed_scen)?,
                            });
                        }
                        paths.push(write_metrics(
                            &sdir,
                            &ScenarioMetrics {
                                scenario: name.clone(),
                                kind: "what_if".to_string(),
                                base: base_label(base).to_string(),
                                simulation_seed: None,
                                band_split: split,
                                channels,
                            },
                        )?);
                    }
                    Scenario::Counterfactual {
                        name,
                        remove,
                        noise,
                        samples,
                        ..
                    } => {
                        let target = match remove {
                            Removal::Edge { cause, effect } => CounterfactualTarget::Edge {
                                cause: graph.node_index(cause)?,
                                effect: graph.node_index(effect)?,
                            },
                            Removal::Node(label) => CounterfactualTarget::NodeInfluence {
                                node: graph.node_index(label)?,
                            },
                        };
                        let modified = counterfactual_remove(&base_set, &graph, &target)?;
                        let coup_path = sdir.join("couplings.tsv");
                        let meta = CouplingMeta::new(&graph, &layout, "counterfactual");
                        paths.extend(save_couplings(
                            &coup_path, &graph, &modified, &layout, &meta,
                        )?);

                        let settings = noise
                            .as_ref()
                            .or(match &config.data {
                                DataSource::Synthetic { noise, .. } => Some(noise),
                                DataSource::Files { .. } => None,
                            })
                            .ok_or_else(|| {
                                CliError::Validation(format!(
                                    "counterfactual scenario '{name}' needs a noise block when \
                                     the data source is recorded files"
                                ))
                            })?;
                        let seed = config.seed.wrapping_add(10_000 + *orig_idx as u64);
                        let spec = NoiseSpec::new(settings.kind, settings.scales.clone(), seed)?;
                        let n = samples.unwrap_or(driver.n_samples());
                        let burn = match &config.data {
                            DataSource::Synthetic { burn_in, .. } => *burn_in,
                            DataSource::Files { .. } => None,
                        }
                        .unwrap_or(10 * graph.lag_order() * g);

                        let baseline = generate_series(&graph, &base_set, &spec, n, burn)?;
                        let altered = generate_series(&graph, &modified, &spec, n, burn)?;
                        let base_path = sdir.join("baseline.tsv");
                        save_block(&baseline, &base_path)?;
                        paths.push(base_path);
                        let mod_path = sdir.join("modified.tsv");
                        save_block(&altered, &mod_path)?;
                        paths.push(mod_path);

                        let labels: Vec<String> = match &config.tfd.channels {
                            Some(chs) => chs.clone(),
                            None => graph.labels().to_vec(),
                        };
                        let mut channels = Vec::new();
                        for label in &labels {
                            let idx = graph.node_index(label)?;
                            let stem = file_stem(label);
                            let (p, ratio_base, collapsed_base) = save_tfd(
                                &sdir,
                                &format!("tfd_baseline_{stem}"),
                                label,
                                baseline.channel(idx),
                                &scfg,
                                split,
                            )?;
                            paths.extend(p);
                            let (p, ratio_scen, collapsed_scen) = save_tfd(
                                &sdir,
                                &format!("tfd_scenario_{stem}"),
                                label,
                                altered.channel(idx),
                                &scfg,
                                split,
                            )?;
                            paths.extend(p);
                            channels.push(ChannelMetrics {
                                channel: label.clone(),
                                band_ratio_baseline: ratio_base,
                                band_ratio_scenario: ratio_scen,
                                similarity: spectral_similarity(&collapsed_base, &collapsed_scen)?,
                            });
                        }
                        paths.push(write_metrics(
                            &sdir,
                            &ScenarioMetrics {
                                scenario: name.clone(),
                                kind: "counterfactual".to_string(),
                                base: base_label(base).to_string(),
                                simulation_seed: Some(seed),
                                band_split: split,
                                channels,
                            },
                        )?);
                    }
                }
            }
            Ok(paths)
        });
    }

    if eff.tfd {
        stage!("tfd", {
            let dir = out_dir.join("tfd");
            fs::create_dir_all(&dir).map_err(|e| io_context(&dir, e))?;
            let series = blocks.last().expect("data stage loaded blocks");
            let scfg = config.tfd.spectrogram_config();
            let split = config.tfd.split_frequency();
            let labels: Vec<String> = match &config.tfd.channels {
                Some(chs) => chs.clone(),
                None => graph.labels().to_vec(),
            };
            let mut paths = Vec::new();
            for label in &labels {
                let idx = graph.node_index(label)?;
                let (p, _, _) = save_tfd(
                    &dir,
                    &file_stem(label),
                    label,
                    series.channel(idx),
                    &scfg,
                    split,
                )?;
                paths.extend(p);
            }
            Ok(paths)
        });
    }

    if selection.report {
        stage!("report", { report::emit(&out_dir, &manifest) });
    }

    write_manifest(&out_dir, &manifest)?;
    write_timings(&out_dir, run_started, &timings)?;
    Ok(manifest)
}

/// Full config-plus-graph validation without running anything: structural
/// graph checks, then every cross-reference a full run would resolve.
/// Returns the graph's validation report; other problems surface as errors.
pub fn validate_all(loaded: &LoadedConfig) -> Result<causaltwin_core::ValidationReport> {
    loaded.check_shape()?;
    let graph = loaded.load_graph()?;
    let report = graph.validate();
    if report.is_ok() {
        let eff = compute_effective(&loaded.config, &StageSelection::run_all())?;
        check_against_graph(&loaded.config, &graph, &eff)?;
    }
    Ok(report)
}

/// Regenerates the report for an existing run from its manifest, replacing
/// the previous report stage record.
pub fn rerun_report(out_dir: &Path) -> Result<RunManifest> {
    let mut manifest = load_manifest(out_dir)?;
    if manifest.incomplete {
        return Err(CliError::Validation(
            "the recorded run is incomplete; rerun the pipeline before reporting".to_string(),
        ));
    }
    manifest.stages.retain(|s| s.name != "report");
    let paths = report::emit(out_dir, &manifest)?;
    manifest.stages.push(record_outputs(out_dir, "report", paths)?);
    write_manifest(out_dir, &manifest)?;
    Ok(manifest)
}

/// Config checks that need the graph: label references, edge references,
/// noise widths, synthetic schedule stability. Only stages that will run
/// are checked, so an unused section cannot fail a run.
fn check_against_graph(
    config: &ExperimentConfig,
    graph: &CausalGraph,
    eff: &Effective,
) -> Result<()> {
    let g = graph.node_count();
    match &config.data {
        DataSource::Synthetic {
            blocks,
            noise,
            couplings,
            ramps,
            ..
        } => {
            if noise.scales.len() != g {
                return Err(CliError::Validation(format!(
                    "noise lists {} scales for {} graph nodes",
                    noise.scales.len(),
                    g
                )));
            }
            plan_couplings(graph, couplings, ramps, *blocks)?;
        }
        DataSource::Files {
            expected_channels, ..
        } => {
            if let Some(k) = expected_channels {
                if *k != g {
                    return Err(CliError::Validation(format!(
                        "config expects {k} channels but the graph has {g} nodes"
                    )));
                }
            }
        }
    }

    if eff.fit {
        for (x, y) in &config.fit.direction_pairs {
            graph.node_index(x)?;
            graph.node_index(y)?;
        }
    }

    for (_, scenario) in &eff.scenarios {
        match scenario {
            Scenario::WhatIf {
                name,
                overrides,
                targets,
                ..
            } => {
                for ov in overrides {
                    resolve_edge(graph, ov.lag, &ov.cause, &ov.effect)?;
                }
                if targets.is_empty() {
                    return Err(CliError::Validation(format!(
                        "what-if scenario '{name}' lists no target channels"
                    )));
                }
                for t in targets {
                    graph.node_index(t)?;
                }
            }
            Scenario::Counterfactual {
                name,
                remove,
                noise,
                ..
            } => {
                match remove {
                    Removal::Edge { cause, effect } => {
                        let c = graph.node_index(cause)?;
                        let e = graph.node_index(effect)?;
                        if !graph.has_edge_any_lag(c, e) {
                            return Err(CliError::Validation(format!(
                                "the graph has no {cause} -> {effect} edge to remove"
                            )));
                        }
                    }
                    Removal::Node(label) => {
                        graph.node_index(label)?;
                    }
                }
                let settings = noise.as_ref().or(match &config.data {
                    DataSource::Synthetic { noise, .. } => Some(noise),
                    DataSource::Files { .. } => None,
                });
                match settings {
                    None => {
                        return Err(CliError::Validation(format!(
                            "counterfactual scenario '{name}' needs a noise block when the data \
                             source is recorded files"
                        )));
                    }
                    Some(s) => {
                        if s.scales.len() != g {
                            return Err(CliError::Validation(format!(
                                "scenario '{name}' noise lists {} scales for {g} graph nodes",
                                s.scales.len()
                            )));
                        }
                    }
                }
            }
        }
    }

    if let Some(chs) = &config.tfd.channels {
        for c in chs {
            graph.node_index(c)?;
        }
    }
    let nyquist = config.tfd.sample_rate / 2.0;
    if config.tfd.split_frequency() >= nyquist {
        return Err(CliError::Validation(format!(
            "band split {} must lie below the Nyquist frequency {}",
            config.tfd.split_frequency(),
            nyquist
        )));
    }
    Ok(())
}
