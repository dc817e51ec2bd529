//! Report stage: renders SVG charts and a summary table under `report/`.
//!
//! Everything drawn here is read back from files recorded in the manifest,
//! never from in-memory state, so each rendered number traces to a
//! checksummed stage output. Rendering is deterministic: fixed-precision
//! coordinates, no timestamps, no generated identifiers.

use std::fs;
use std::path::{Path, PathBuf};

use crate::coupling_io::load_trajectory;
use crate::error::{io_context, CliError, Result};
use crate::pipeline::{file_stem, RunManifest, ScenarioMetrics, TfdFileMeta};

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#e377c2",
    "#7f7f7f", "#bcbd22",
];

/// Truncated viridis stops for heatmap shading.
const GRADIENT: [(f64, [u8; 3]); 5] = [
    (0.00, [0x44, 0x01, 0x54]),
    (0.25, [0x3b, 0x52, 0x8b]),
    (0.50, [0x21, 0x91, 0x8c]),
    (0.75, [0x5e, 0xc9, 0x62]),
    (1.00, [0xfd, 0xe7, 0x25]),
];

/// Renders every chart the completed stages have data for, plus
/// `summary.csv`. Returns the written paths in deterministic order.
pub fn emit(out_dir: &Path, manifest: &RunManifest) -> Result<Vec<PathBuf>> {
    let dir = out_dir.join("report");
    fs::create_dir_all(&dir).map_err(|e| io_context(&dir, e))?;
    let mut paths = Vec::new();

    if let Some(stage) = manifest.stage("train") {
        for record in &stage.outputs {
            let Some(stem) = record
                .path
                .strip_prefix("train/")
                .and_then(|p| p.strip_suffix("_trajectory.tsv"))
            else {
                continue;
            };
            let table = load_trajectory(&out_dir.join(&record.path))?;
            let svg = trajectory_chart(stem, &table.parameters, &table.rows);
            let path = dir.join(format!("trajectory_{stem}.svg"));
            fs::write(&path, svg).map_err(|e| io_context(&path, e))?;
            paths.push(path);
        }
    }

    if let Some(stage) = manifest.stage("tfd") {
        for record in &stage.outputs {
            let Some(stem) = record
                .path
                .strip_prefix("tfd/")
                .and_then(|p| p.strip_suffix(".meta.json"))
            else {
                continue;
            };
            let meta_text = fs::read_to_string(out_dir.join(&record.path))
                .map_err(|e| io_context(&out_dir.join(&record.path), e))?;
            let meta: TfdFileMeta = serde_json::from_str(&meta_text)
                .map_err(|e| CliError::Data(format!("{}: {}", record.path, e)))?;
            let matrix = load_matrix(&out_dir.join(format!("tfd/{stem}.tsv")))?;
            let svg = heatmap_chart(&meta, &matrix);
            let path = dir.join(format!("tfd_{stem}.svg"));
            fs::write(&path, svg).map_err(|e| io_context(&path, e))?;
            paths.push(path);
        }
    }

    let mut summary = String::from(
        "source,scenario,base,channel,band_split,band_ratio_baseline,band_ratio_scenario,similarity\n",
    );
    if let Some(stage) = manifest.stage("scenarios") {
        for record in &stage.outputs {
            if !record.path.ends_with("/metrics.json") {
                continue;
            }
            let metrics_path = out_dir.join(&record.path);
            let text = fs::read_to_string(&metrics_path).map_err(|e| io_context(&metrics_path, e))?;
            let metrics: ScenarioMetrics = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {}", record.path, e)))?;
            let sdir = metrics_path
                .parent()
                .ok_or_else(|| CliError::Internal(format!("{} has no parent", record.path)))?
                .to_path_buf();
            for ch in &metrics.channels {
                summary.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    metrics.kind,
                    metrics.scenario,
                    metrics.base,
                    ch.channel,
                    metrics.band_split,
                    ch.band_ratio_baseline,
                    ch.band_ratio_scenario,
                    ch.similarity
                ));
                let stem = file_stem(&ch.channel);
                let base_spec =
                    load_collapsed(&sdir.join(format!("tfd_baseline_{stem}_collapsed.tsv")))?;
                let scen_spec =
                    load_collapsed(&sdir.join(format!("tfd_scenario_{stem}_collapsed.tsv")))?;
                let svg = spectrum_comparison_chart(
                    &metrics.scenario,
                    &ch.channel,
                    metrics.band_split,
                    &base_spec,
                    &scen_spec,
                );
                let path = dir.join(format!(
                    "scenario_{}_{stem}.svg",
                    file_stem(&metrics.scenario)
                ));
                fs::write(&path, svg).map_err(|e| io_context(&path, e))?;
                paths.push(path);
            }
        }
    }
    let summary_path = dir.join("summary.csv");
    fs::write(&summary_path, summary).map_err(|e| io_context(&summary_path, e))?;
    paths.push(summary_path);

    Ok(paths)
}

// ── File readers ──────────────────────────────────────────────────────────

/// Reads a bare numeric matrix (spectrogram rows).
fn load_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split('\t').map(|f| f.parse::<f64>()).collect();
        rows.push(row.map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?);
    }
    Ok(rows)
}

/// Reads a collapsed spectrum file: `frequency\tpower` rows after a header.
fn load_collapsed(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let f = fields
            .next()
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| CliError::Data(format!("{}: bad frequency field", path.display())))?;
        let p = fields
            .next()
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| CliError::Data(format!("{}: bad power field", path.display())))?;
        out.push((f, p));
    }
    Ok(out)
}

// ── SVG primitives ────────────────────────────────────────────────────────

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Svg {
            width,
            height,
            body: String::new(),
        }
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        self.body.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
            fmt2(x),
            fmt2(y),
            fmt2(w),
            fmt2(h),
            fill
        ));
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, dashed: bool) {
        let dash = if dashed { " stroke-dasharray=\"4 3\"" } else { "" };
        self.body.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"1\"{}/>\n",
            fmt2(x1),
            fmt2(y1),
            fmt2(x2),
            fmt2(y2),
            stroke,
            dash
        ));
    }

    fn polyline(&mut self, points: &[(f64, f64)], stroke: &str) {
        if points.is_empty() {
            return;
        }
        let pts: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{},{}", fmt2(*x), fmt2(*y)))
            .collect();
        self.body.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\"/>\n",
            pts.join(" "),
            stroke
        ));
    }

    fn text(&mut self, x: f64, y: f64, size: u32, anchor: &str, content: &str) {
        self.body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"{}\" font-family=\"sans-serif\" \
             text-anchor=\"{}\">{}</text>\n",
            fmt2(x),
            fmt2(y),
            size,
            anchor,
            xml_escape(content)
        ));
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
             viewBox=\"0 0 {} {}\">\n<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n{}</svg>\n",
            fmt2(self.width),
            fmt2(self.height),
            fmt2(self.width),
            fmt2(self.height),
            fmt2(self.width),
            fmt2(self.height),
            self.body
        )
    }
}

/// Maps a fraction in [0, 1] to a gradient color.
fn gradient_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let mut lo = GRADIENT[0];
    let mut hi = GRADIENT[GRADIENT.len() - 1];
    for pair in GRADIENT.windows(2) {
        if t >= pair[0].0 && t <= pair[1].0 {
            lo = pair[0];
            hi = pair[1];
            break;
        }
    }
    let span = hi.0 - lo.0;
    let f = if span > 0.0 { (t - lo.0) / span } else { 0.0 };
    let mix = |a: u8, b: u8| (a as f64 + f * (b as f64 - a as f64)).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(lo.1[0], hi.1[0]),
        mix(lo.1[1], hi.1[1]),
        mix(lo.1[2], hi.1[2])
    )
}

struct Axis {
    min: f64,
    max: f64,
}

impl Axis {
    /// A padded range covering the values; degenerate ranges get a unit pad.
    fn covering(values: impl Iterator<Item = f64>) -> Axis {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            if v.is_finite() {
                min = min.min(v);
                max = max.max(v);
            }
        }
        if !min.is_finite() || !max.is_finite() {
            return Axis { min: 0.0, max: 1.0 };
        }
        if min == max {
            return Axis {
                min: min - 0.5,
                max: max + 0.5,
            };
        }
        let pad = 0.05 * (max - min);
        Axis {
            min: min - pad,
            max: max + pad,
        }
    }

    fn project(&self, v: f64, lo_px: f64, hi_px: f64) -> f64 {
        lo_px + (v - self.min) / (self.max - self.min) * (hi_px - lo_px)
    }
}

/// Keeps at most `cap` evenly strided samples so huge trajectories stay
/// renderable; the final point is always kept.
fn stride_indices(len: usize, cap: usize) -> Vec<usize> {
    if len <= cap {
        return (0..len).collect();
    }
    let stride = len.div_ceil(cap);
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if *idx.last().unwrap() != len - 1 {
        idx.push(len - 1);
    }
    idx
}

// ── Charts ────────────────────────────────────────────────────────────────

/// Estimate traces over training steps plus the squared-error curve.
fn trajectory_chart(
    title_stem: &str,
    parameters: &[String],
    rows: &[(usize, f64, Vec<f64>)],
) -> String {
    let mut svg = Svg::new(900.0, 560.0);
    svg.text(
        450.0,
        16.0,
        13,
        "middle",
        &format!("coupling estimates over training: {title_stem}"),
    );

    let (x0, x1) = (60.0, 860.0);
    let (est_top, est_bot) = (30.0, 330.0);
    let (err_top, err_bot) = (380.0, 530.0);

    let idx = stride_indices(rows.len(), 1200);
    let step_axis = Axis::covering(rows.iter().map(|r| r.0 as f64));
    let est_axis = Axis::covering(
        rows.iter()
            .flat_map(|r| r.2.iter().copied())
            .chain(std::iter::once(0.0)),
    );
    let err_axis = Axis::covering(rows.iter().map(|r| r.1).chain(std::iter::once(0.0)));

    svg.rect(x0, est_top, x1 - x0, est_bot - est_top, "#f7f7f7");
    svg.rect(x0, err_top, x1 - x0, err_bot - err_top, "#f7f7f7");
    let zero_y = est_axis.project(0.0, est_bot, est_top);
    svg.line(x0, zero_y, x1, zero_y, "#bbbbbb", true);

    for (p, name) in parameters.iter().enumerate() {
        let color = PALETTE[p % PALETTE.len()];
        let points: Vec<(f64, f64)> = idx
            .iter()
            .map(|&i| {
                let (step, _, est) = &rows[i];
                (
                    step_axis.project(*step as f64, x0, x1),
                    est_axis.project(est[p], est_bot, est_top),
                )
            })
            .collect();
        svg.polyline(&points, color);
        let lx = x0 + 8.0 + 130.0 * (p % 6) as f64;
        let ly = est_bot + 16.0 + 12.0 * (p / 6) as f64;
        svg.line(lx, ly - 3.0, lx + 14.0, ly - 3.0, color, false);
        svg.text(lx + 18.0, ly, 9, "start", name);
    }

    let err_points: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| {
            (
                step_axis.project(rows[i].0 as f64, x0, x1),
                err_axis.project(rows[i].1, err_bot, err_top),
            )
        })
        .collect();
    svg.polyline(&err_points, "#333333");
    svg.text(x0, err_top - 6.0, 11, "start", "squared error norm");

    for (v, label_y) in [(est_axis.min, est_bot), (est_axis.max, est_top)] {
        svg.text(x0 - 6.0, label_y + 3.0, 9, "end", &fmt2(v));
    }
    for (v, label_y) in [(err_axis.min, err_bot), (err_axis.max, err_top)] {
        svg.text(x0 - 6.0, label_y + 3.0, 9, "end", &fmt2(v));
    }
    svg.text(x1, est_bot + 40.0, 10, "end", "step");
    svg.finish()
}

/// Spectrogram heatmap with the time-averaged spectrum below it.
fn heatmap_chart(meta: &TfdFileMeta, matrix: &[Vec<f64>]) -> String {
    let mut svg = Svg::new(900.0, 620.0);
    svg.text(
        450.0,
        16.0,
        13,
        "middle",
        &format!(
            "spectrogram: {} (band ratio {} at split {} Hz)",
            meta.channel,
            fmt2(meta.band_ratio),
            meta.band_split
        ),
    );

    let (x0, x1) = (70.0, 860.0);
    let (map_top, map_bot) = (30.0, 420.0);
    let rows = stride_indices(matrix.len(), 400);
    let n_bins = meta.n_bins;

    let mut log_min = f64::INFINITY;
    let mut log_max = f64::NEG_INFINITY;
    let floored: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| {
            matrix[i]
                .iter()
                .map(|&p| {
                    let l = p.max(1e-12).log10();
                    log_min = log_min.min(l);
                    log_max = log_max.max(l);
                    l
                })
                .collect()
        })
        .collect();
    let span = if log_max > log_min {
        log_max - log_min
    } else {
        1.0
    };

    let cw = (x1 - x0) / floored.len() as f64;
    let ch = (map_bot - map_top) / n_bins as f64;
    for (col, row) in floored.iter().enumerate() {
        for (bin, l) in row.iter().enumerate() {
            let color = gradient_color((l - log_min) / span);
            svg.rect(
                x0 + col as f64 * cw,
                map_bot - (bin + 1) as f64 * ch,
                cw + 0.05,
                ch + 0.05,
                &color,
            );
        }
    }
    if let (Some(first), Some(last)) = (meta.freq_axis.first(), meta.freq_axis.last()) {
        svg.text(x0 - 6.0, map_bot + 3.0, 9, "end", &fmt2(*first));
        svg.text(x0 - 6.0, map_top + 3.0, 9, "end", &fmt2(*last));
        let split_y = map_bot - (meta.band_split - first) / (last - first) * (map_bot - map_top);
        svg.line(x0, split_y, x1, split_y, "#ffffff", true);
    }
    if let (Some(first), Some(last)) = (meta.time_axis.first(), meta.time_axis.last()) {
        svg.text(x0, map_bot + 14.0, 9, "start", &fmt2(*first));
        svg.text(x1, map_bot + 14.0, 9, "end", &fmt2(*last));
    }
    svg.text(x0 - 50.0, (map_top + map_bot) / 2.0, 10, "middle", "Hz");
    svg.text((x0 + x1) / 2.0, map_bot + 28.0, 10, "middle", "time (s)");

    let (sp_top, sp_bot) = (470.0, 600.0);
    svg.rect(x0, sp_top, x1 - x0, sp_bot - sp_top, "#f7f7f7");
    let n_slices = matrix.len().max(1) as f64;
    let collapsed: Vec<f64> = (0..n_bins)
        .map(|j| {
            matrix
                .iter()
                .map(|row| row.get(j).copied().unwrap_or(0.0))
                .sum::<f64>()
                / n_slices
        })
        .collect();
    let logs: Vec<f64> = collapsed.iter().map(|&p| p.max(1e-12).log10()).collect();
    let f_axis = Axis::covering(meta.freq_axis.iter().copied());
    let p_axis = Axis::covering(logs.iter().copied());
    let points: Vec<(f64, f64)> = meta
        .freq_axis
        .iter()
        .zip(&logs)
        .map(|(&f, &l)| (f_axis.project(f, x0, x1), p_axis.project(l, sp_bot, sp_top)))
        .collect();
    svg.polyline(&points, "#1f77b4");
    let split_x = f_axis.project(meta.band_split, x0, x1);
    svg.line(split_x, sp_top, split_x, sp_bot, "#d62728", true);
    svg.text(x0, sp_top - 6.0, 11, "start", "time-averaged log10 power");
    svg.finish()
}

/// Baseline and scenario time-averaged spectra on shared axes.
fn spectrum_comparison_chart(
    scenario: &str,
    channel: &str,
    band_split: f64,
    baseline: &[(f64, f64)],
    modified: &[(f64, f64)],
) -> String {
    let mut svg = Svg::new(760.0, 420.0);
    svg.text(
        380.0,
        16.0,
        13,
        "middle",
        &format!("scenario '{scenario}': channel {channel} spectrum"),
    );
    let (x0, x1) = (60.0, 730.0);
    let (top, bot) = (40.0, 360.0);
    svg.rect(x0, top, x1 - x0, bot - top, "#f7f7f7");

    let to_log = |s: &[(f64, f64)]| -> Vec<(f64, f64)> {
        s.iter().map(|&(f, p)| (f, p.max(1e-12).log10())).collect()
    };
    let base_log = to_log(baseline);
    let scen_log = to_log(modified);
    let f_axis = Axis::covering(base_log.iter().chain(&scen_log).map(|&(f, _)| f));
    let p_axis = Axis::covering(base_log.iter().chain(&scen_log).map(|&(_, p)| p));
    let project = |pts: &[(f64, f64)]| -> Vec<(f64, f64)> {
        pts.iter()
            .map(|&(f, p)| (f_axis.project(f, x0, x1), p_axis.project(p, bot, top)))
            .collect()
    };
    svg.polyline(&project(&base_log), "#1f77b4");
    svg.polyline(&project(&scen_log), "#d62728");
    let split_x = f_axis.project(band_split, x0, x1);
    svg.line(split_x, top, split_x, bot, "#555555", true);

    svg.line(x0 + 10.0, bot + 20.0, x0 + 24.0, bot + 20.0, "#1f77b4", false);
    svg.text(x0 + 28.0, bot + 23.0, 10, "start", "baseline");
    svg.line(x0 + 110.0, bot + 20.0, x0 + 124.0, bot + 20.0, "#d62728", false);
    svg.text(x0 + 128.0, bot + 23.0, 10, "start", "scenario");
    svg.text(x1, bot + 23.0, 10, "end", "frequency (Hz), log10 power");
    svg.finish()
}
