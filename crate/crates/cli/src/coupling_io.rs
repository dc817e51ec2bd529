//! Persistence of coupling sets and training trajectories: tab-separated
//! values plus a JSON metadata sidecar (`<name>.meta.json`), diffable and
//! readable by any tooling. Floats are written in shortest exact decimal
//! form so loading reproduces them bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use causaltwin_core::{
    CausalGraph, CouplingSet, NetworkConfig, ParamLayout, TrainingOutcome,
};
use serde::{Deserialize, Serialize};

use crate::error::{io_context, CliError, Result};

/// Sidecar for a couplings file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingMeta {
    pub kind: String,
    /// How the values were produced: "ols", "learner", "ground_truth", or a
    /// scenario label.
    pub source: String,
    pub nodes: Vec<String>,
    pub lag_order: usize,
    pub parameter_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_variances: Option<Vec<f64>>,
    /// Coefficient standard errors in file row order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_ratios: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction_checks: Option<Vec<DirectionRecord>>,
}

impl CouplingMeta {
    pub fn new(graph: &CausalGraph, layout: &ParamLayout, source: &str) -> Self {
        CouplingMeta {
            kind: "couplings".into(),
            source: source.into(),
            nodes: graph.labels().to_vec(),
            lag_order: graph.lag_order(),
            parameter_count: layout.len(),
            residual_variances: None,
            std_errors: None,
            variance_ratios: None,
            direction_checks: None,
        }
    }
}

/// One residual-dependence direction check between two channels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionRecord {
    pub x: String,
    pub y: String,
    pub statistic_forward: f64,
    pub statistic_reverse: f64,
    /// "x_to_y", "y_to_x", or "inconclusive".
    pub verdict: String,
}

/// Sidecar for a trajectory file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub kind: String,
    pub nodes: Vec<String>,
    pub lag_order: usize,
    /// Column labels after `step` and `error_norm`, in file order.
    pub parameters: Vec<String>,
    pub network: NetworkConfig,
    pub channel_offsets: Vec<f64>,
    pub channel_scales: Vec<f64>,
    pub steps: usize,
    pub final_error_norm: f64,
}

/// Sidecar path: `x.tsv` gets `x.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Human-readable name of parameter `i`: `cause->effect@lag`.
pub fn param_label(graph: &CausalGraph, layout: &ParamLayout, i: usize) -> String {
    let (lag, effect, cause) = layout.triple(i);
    format!("{}->{}@{}", graph.label(cause), graph.label(effect), lag)
}

/// Writes the couplings file and its sidecar; returns both paths.
pub fn save_couplings(
    path: &Path,
    graph: &CausalGraph,
    couplings: &CouplingSet,
    layout: &ParamLayout,
    meta: &CouplingMeta,
) -> Result<Vec<PathBuf>> {
    let mut out = String::from("lag\tcause\teffect\tvalue\n");
    for i in 0..layout.len() {
        let (lag, effect, cause) = layout.triple(i);
        let value = couplings.coupling(lag, cause, effect);
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            lag,
            graph.label(cause),
            graph.label(effect),
            value
        ));
    }
    fs::write(path, out).map_err(|e| io_context(path, e))?;
    let side = meta_path(path);
    let text = serde_json::to_string_pretty(meta).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(&side, text + "\n").map_err(|e| io_context(&side, e))?;
    Ok(vec![path.to_path_buf(), side])
}

/// Reads a couplings file back onto the graph mask. Rows must reference
/// edges present in the graph; edges absent from the file stay zero.
pub fn load_couplings(path: &Path, graph: &CausalGraph) -> Result<CouplingSet> {
    let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    let mut set = CouplingSet::zeros(graph);
    for (line_idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if line_idx == 0 && trimmed.starts_with("lag\t") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 4 {
            return Err(CliError::Data(format!(
                "{}: row {}: expected 4 tab-separated fields, got {}",
                path.display(),
                line_idx + 1,
                fields.len()
            )));
        }
        let parse_err = |what: &str| {
            CliError::Data(format!(
                "{}: row {}: bad {}",
                path.display(),
                line_idx + 1,
                what
            ))
        };
        let lag: usize = fields[0].parse().map_err(|_| parse_err("lag"))?;
        let cause = graph.node_index(fields[1])?;
        let effect = graph.node_index(fields[2])?;
        let value: f64 = fields[3].parse().map_err(|_| parse_err("value"))?;
        set.set_coupling(graph, lag, cause, effect, value)?;
    }
    Ok(set)
}

/// Writes the trajectory file and its sidecar; returns both paths.
pub fn save_trajectory(
    path: &Path,
    graph: &CausalGraph,
    outcome: &TrainingOutcome,
    network: &NetworkConfig,
) -> Result<Vec<PathBuf>> {
    let layout = &outcome.layout;
    let parameters: Vec<String> = (0..layout.len())
        .map(|i| param_label(graph, layout, i))
        .collect();
    let mut out = String::with_capacity(outcome.trajectory.len() * (layout.len() + 2) * 12);
    out.push_str("step\terror_norm");
    for p in &parameters {
        out.push('\t');
        out.push_str(p);
    }
    out.push('\n');
    for row in &outcome.trajectory {
        out.push_str(&format!("{}\t{}", row.step, row.error_norm));
        for v in &row.estimates {
            out.push_str(&format!("\t{}", v));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_context(path, e))?;
    let meta = TrajectoryMeta {
        kind: "trajectory".into(),
        nodes: graph.labels().to_vec(),
        lag_order: graph.lag_order(),
        parameters,
        network: network.clone(),
        channel_offsets: outcome.channel_offsets.clone(),
        channel_scales: outcome.channel_scales.clone(),
        steps: outcome.steps,
        final_error_norm: outcome.final_error_norm,
    };
    let side = meta_path(path);
    let text =
        serde_json::to_string_pretty(&meta).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(&side, text + "\n").map_err(|e| io_context(&side, e))?;
    Ok(vec![path.to_path_buf(), side])
}

/// Parsed trajectory file: header labels plus numeric rows.
pub struct TrajectoryTable {
    pub parameters: Vec<String>,
    /// `(step, error_norm, estimates)` per row.
    pub rows: Vec<(usize, f64, Vec<f64>)>,
}

pub fn load_trajectory(path: &Path) -> Result<TrajectoryTable> {
    let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty trajectory", path.display())))?
        .1;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 2 || cols[0] != "step" || cols[1] != "error_norm" {
        return Err(CliError::Data(format!(
            "{}: malformed trajectory header",
            path.display()
        )));
    }
    let parameters: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (line_idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != parameters.len() + 2 {
            return Err(CliError::Data(format!(
                "{}: row {}: expected {} fields, got {}",
                path.display(),
                line_idx + 1,
                parameters.len() + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| {
            CliError::Data(format!(
                "{}: row {}: bad {}",
                path.display(),
                line_idx + 1,
                what
            ))
        };
        let step: usize = fields[0].parse().map_err(|_| bad("step"))?;
        let error_norm: f64 = fields[1].parse().map_err(|_| bad("error_norm"))?;
        let estimates = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad("estimate")))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((step, error_norm, estimates));
    }
    Ok(TrajectoryTable { parameters, rows })
}
