//! Synthetic multi-block datasets: a base coupling set, optional linear
//! per-block ramps (a desk-scale stand-in for slowly drifting machine
//! condition), and innovation noise. Every block gets a measurement file and
//! a ground-truth couplings file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use causaltwin_core::{
    companion_spectral_radius, generate_series, CausalGraph, CouplingSet, MultichannelSeries,
    NoiseSpec, ParamLayout, STABILITY_LIMIT,
};

use crate::config::{CouplingRamp, CouplingValue, NoiseSettings};
use crate::coupling_io::{save_couplings, CouplingMeta};
use crate::error::{io_context, CliError, Result};
use crate::ingest::save_block;

/// Everything the data stage produces for a synthetic source.
pub struct SynthResult {
    /// All written files in deterministic order.
    pub files: Vec<PathBuf>,
    /// Measurement file per block.
    pub block_files: Vec<PathBuf>,
    pub series: Vec<MultichannelSeries>,
    pub truths: Vec<CouplingSet>,
}

/// Resolves the schedule into one coupling set per block and checks
/// stability of every one before anything is generated. Ramps override base
/// entries for the same edge; duplicates within either list are rejected.
pub fn plan_couplings(
    graph: &CausalGraph,
    couplings: &[CouplingValue],
    ramps: &[CouplingRamp],
    blocks: usize,
) -> Result<Vec<CouplingSet>> {
    let mut seen: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    let mut base_entries = Vec::with_capacity(couplings.len());
    for cv in couplings {
        let key = crate::config::resolve_edge(graph, cv.lag, &cv.cause, &cv.effect)?;
        if !seen.insert(key) {
            return Err(CliError::Validation(format!(
                "duplicate coupling entry for {} -> {} at lag {}",
                cv.cause, cv.effect, cv.lag
            )));
        }
        base_entries.push((key, cv.value));
    }
    let mut seen_ramps: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    let mut ramp_entries = Vec::with_capacity(ramps.len());
    for r in ramps {
        let key = crate::config::resolve_edge(graph, r.lag, &r.cause, &r.effect)?;
        if !seen_ramps.insert(key) {
            return Err(CliError::Validation(format!(
                "duplicate ramp entry for {} -> {} at lag {}",
                r.cause, r.effect, r.lag
            )));
        }
        ramp_entries.push((key, r.from, r.to));
    }

    let mut plan = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let t = if blocks > 1 {
            b as f64 / (blocks - 1) as f64
        } else {
            0.0
        };
        let mut set = CouplingSet::zeros(graph);
        for &((lag, c, e), value) in &base_entries {
            set.set_coupling(graph, lag, c, e, value)?;
        }
        for &((lag, c, e), from, to) in &ramp_entries {
            set.set_coupling(graph, lag, c, e, from + (to - from) * t)?;
        }
        let radius = companion_spectral_radius(&set);
        if radius >= STABILITY_LIMIT {
            return Err(CliError::Divergence(format!(
                "schedule is unstable at block {}: companion spectral radius {:.4} >= {}",
                b, radius, STABILITY_LIMIT
            )));
        }
        plan.push(set);
    }
    Ok(plan)
}

/// Generates all blocks into `dir` as `block_XX.tsv` plus
/// `truth_XX.tsv`/`.meta.json`. The noise seed for block `b` is
/// `seed + b`, so individual blocks are reproducible in isolation.
#[allow(clippy::too_many_arguments)]
pub fn synth_dataset(
    graph: &CausalGraph,
    blocks: usize,
    samples_per_block: usize,
    burn_in: Option<usize>,
    noise: &NoiseSettings,
    couplings: &[CouplingValue],
    ramps: &[CouplingRamp],
    seed: u64,
    dir: &Path,
) -> Result<SynthResult> {
    let plan = plan_couplings(graph, couplings, ramps, blocks)?;
    let layout = ParamLayout::new(graph)?;
    let burn = burn_in.unwrap_or(10 * graph.lag_order() * graph.node_count());
    fs::create_dir_all(dir).map_err(|e| io_context(dir, e))?;

    let mut result = SynthResult {
        files: Vec::new(),
        block_files: Vec::new(),
        series: Vec::new(),
        truths: Vec::new(),
    };
    for (b, set) in plan.into_iter().enumerate() {
        let spec = NoiseSpec::new(
            noise.kind,
            noise.scales.clone(),
            seed.wrapping_add(b as u64),
        )?;
        let series = generate_series(graph, &set, &spec, samples_per_block, burn)?;

        let block_path = dir.join(format!("block_{:02}.tsv", b));
        save_block(&series, &block_path)?;
        result.files.push(block_path.clone());
        result.block_files.push(block_path);

        let truth_path = dir.join(format!("truth_{:02}.tsv", b));
        let meta = CouplingMeta::new(graph, &layout, "ground_truth");
        let written = save_couplings(&truth_path, graph, &set, &layout, &meta)?;
        result.files.extend(written);

        result.series.push(series);
        result.truths.push(set);
    }
    Ok(result)
}
