//! Measurement block files: whitespace-separated numeric columns, one row
//! per sample, one column per channel. Lines starting with `#` and blank
//! lines are ignored. This covers the common run-to-failure archive layout
//! (one file per recording window, one column per sensor) without any
//! bundled dataset.

use std::fs;
use std::io::Write;
use std::path::Path;

use causaltwin_core::MultichannelSeries;
use ndarray::Array2;

use crate::error::{io_context, CliError, Result};

/// Parses a block file. Column count is taken from the first data row;
/// `expected_channels` adds a hard check against it. Errors carry 1-based
/// row and column positions counted over the raw file lines.
pub fn load_block(path: &Path, expected_channels: Option<usize>) -> Result<MultichannelSeries> {
    let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (line_idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut row = Vec::with_capacity(width.unwrap_or(4));
        for (col_idx, field) in trimmed.split_whitespace().enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                CliError::Data(format!(
                    "{}: row {}, column {}: '{}' is not a number",
                    path.display(),
                    line_idx + 1,
                    col_idx + 1,
                    field
                ))
            })?;
            if !value.is_finite() {
                return Err(CliError::Data(format!(
                    "{}: row {}, column {}: non-finite value",
                    path.display(),
                    line_idx + 1,
                    col_idx + 1
                )));
            }
            row.push(value);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(CliError::Data(format!(
                    "{}: row {} has {} columns, expected {}",
                    path.display(),
                    line_idx + 1,
                    row.len(),
                    w
                )));
            }
            Some(_) => {}
        }
        rows.push(row);
    }
    let g = width.ok_or_else(|| CliError::Data(format!("{}: no data rows", path.display())))?;
    if let Some(expected) = expected_channels {
        if g != expected {
            return Err(CliError::Data(format!(
                "{}: {} channels, expected {}",
                path.display(),
                g,
                expected
            )));
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let data = Array2::from_shape_vec((rows.len(), g), flat)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let labels = (1..=g).map(|i| format!("ch{}", i)).collect();
    Ok(MultichannelSeries::new(data, labels, None)?)
}

/// Writes a block file: one row per sample, tab-separated, shortest exact
/// decimal form so a reload reproduces every value bit for bit.
pub fn save_block(series: &MultichannelSeries, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(series.n_samples() * series.n_channels() * 12);
    for n in 0..series.n_samples() {
        let row = series.sample(n);
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push('\t');
            }
            out.push_str(&format!("{}", v));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| io_context(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| io_context(path, e))?;
    Ok(())
}

/// Rebinds a loaded series to graph node labels, checking the channel count.
pub fn relabel(series: MultichannelSeries, labels: &[String]) -> Result<MultichannelSeries> {
    if series.n_channels() != labels.len() {
        return Err(CliError::Data(format!(
            "block has {} channels but the graph has {} nodes",
            series.n_channels(),
            labels.len()
        )));
    }
    let sample_rate = series.sample_rate();
    Ok(MultichannelSeries::new(
        series.data().to_owned(),
        labels.to_vec(),
        sample_rate,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn four_column_block_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "b.txt",
            "0.1 0.2 0.3 0.4\n-1.5 2.5e-3 0 7\n",
        );
        let s = load_block(&path, Some(4)).unwrap();
        assert_eq!(s.n_samples(), 2);
        assert_eq!(s.n_channels(), 4);
        assert_eq!(s.data()[[1, 1]], 2.5e-3);
        assert_eq!(s.labels()[3], "ch4");
    }

    #[test]
    fn trailing_blank_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "b.txt", "1 2\n3 4\n\n");
        let s = load_block(&path, None).unwrap();
        assert_eq!(s.n_samples(), 2);
    }

    #[test]
    fn comment_lines_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "b.txt", "# four channels\n1 2\n3 4\n");
        let s = load_block(&path, None).unwrap();
        assert_eq!(s.n_samples(), 2);
    }

    #[test]
    fn non_numeric_cell_reports_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "b.txt", "1 2\n3 oops\n");
        let err = load_block(&path, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(msg.contains("column 2"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "b.txt", "1 2\n3 4 5\n");
        let err = load_block(&path, None).unwrap_err();
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn empty_file_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "b.txt", "\n# nothing\n");
        let err = load_block(&path, None).unwrap_err();
        assert!(err.to_string().contains("no data rows"));
    }

    #[test]
    fn channel_count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "b.txt", "1 2 3\n");
        let err = load_block(&path, Some(4)).unwrap_err();
        assert!(err.to_string().contains("expected 4"));
    }

    #[test]
    fn non_finite_cell_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "b.txt", "1 inf\n");
        let err = load_block(&path, None).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn save_then_load_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let data = ndarray::array![
            [0.1, -2.0e-17, 3.0],
            [1.0 / 3.0, 5.5, -0.0],
            [f64::MIN_POSITIVE, 1e300, 42.0]
        ];
        let series = MultichannelSeries::new(
            data.clone(),
            vec!["a".into(), "b".into(), "c".into()],
            None,
        )
        .unwrap();
        let path = dir.path().join("b.txt");
        save_block(&series, &path).unwrap();
        let back = load_block(&path, Some(3)).unwrap();
        assert_eq!(back.data(), &data);
        // A second save writes the same bytes.
        let first = fs::read(&path).unwrap();
        let path2 = dir.path().join("b2.txt");
        save_block(&back, &path2).unwrap();
        assert_eq!(first, fs::read(&path2).unwrap());
    }

    #[test]
    fn relabel_binds_graph_node_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "b.txt", "1 2\n");
        let s = load_block(&path, None).unwrap();
        let labels = vec!["B1".to_string(), "B2".to_string()];
        let s = relabel(s, &labels).unwrap();
        assert_eq!(s.labels(), &labels[..]);
        let labels3 = vec!["B1".to_string(), "B2".to_string(), "B3".to_string()];
        let s2 = load_block(&path, None).unwrap();
        assert!(relabel(s2, &labels3).is_err());
    }
}
