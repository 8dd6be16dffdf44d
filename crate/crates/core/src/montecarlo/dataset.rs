//! Dataset persistence for probability grids.
//!
//! UTF-8 CSV with a version comment line, then the header
//! `x1,...,xd,T,lambda,F,N,mode`, then one row per lattice cell in row-major
//! order with time fastest. Floats carry 17 significant digits so the round
//! trip is lossless. `mode` is `safety` or `recovery`.
//!
//! The lattice is reconstructed on read from the distinct per-axis
//! coordinate values, which must enumerate an affine lattice in row-major
//! order; anything else is an `InconsistentLattice` error. Provenance other
//! than Monte Carlo is not part of the format: grids read back as
//! `MonteCarlo`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{GridSource, GridSpec, ProbabilityGrid};
use crate::dynamics::Mode;

const VERSION_LINE: &str = "# pipe-dataset v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: version mismatch (expected `{VERSION_LINE}`)")]
    VersionMismatch { line: usize },
    #[error("line {line}: schema error: missing column `{column}`")]
    SchemaError { line: usize, column: String },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: probability {value} outside [0, 1]")]
    ValueOutOfRange { line: usize, value: f64 },
    #[error("line {line}: inconsistent lattice: {reason}")]
    InconsistentLattice { line: usize, reason: String },
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes a grid to the dataset CSV format.
pub fn render_dataset(grid: &ProbabilityGrid) -> String {
    let d = grid.spec.state_dim();
    let mut text = String::from(VERSION_LINE);
    text.push('\n');
    for dim in 0..d {
        text.push_str(&format!("x{},", dim + 1));
    }
    text.push_str("T,lambda,F,N,mode\n");
    for cell in 0..grid.spec.cell_count() {
        let (state, t) = grid.spec.point(cell);
        for coord in &state {
            text.push_str(&fmt(*coord));
            text.push(',');
        }
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt(t),
            fmt(grid.spec.lambda),
            fmt(grid.values[cell]),
            grid.sample_count,
            grid.mode.as_str()
        ));
    }
    text
}

pub fn write_dataset(grid: &ProbabilityGrid, path: &Path) -> Result<(), DatasetError> {
    fs::write(path, render_dataset(grid))?;
    Ok(())
}

struct Row {
    coords: Vec<f64>,
    t: f64,
    lambda: f64,
    value: f64,
    n: u64,
    mode: Mode,
}

fn parse_row(line: &str, lineno: usize, d: usize) -> Result<Row, DatasetError> {
    let fields: Vec<&str> = line.split(',').collect();
    let expected = d + 5;
    if fields.len() != expected {
        return Err(DatasetError::MalformedRow {
            line: lineno,
            reason: format!("expected {expected} fields, found {}", fields.len()),
        });
    }
    let parse_f64 = |tok: &str| -> Result<f64, DatasetError> {
        tok.parse::<f64>().map_err(|_| DatasetError::MalformedRow {
            line: lineno,
            reason: format!("malformed float `{tok}`"),
        })
    };
    let coords = fields[..d].iter().map(|t| parse_f64(t)).collect::<Result<Vec<_>, _>>()?;
    let t = parse_f64(fields[d])?;
    let lambda = parse_f64(fields[d + 1])?;
    let value = match fields[d + 2] {
        "NaN" => f64::NAN,
        tok => parse_f64(tok)?,
    };
    if !value.is_nan() && !(0.0..=1.0).contains(&value) {
        return Err(DatasetError::ValueOutOfRange { line: lineno, value });
    }
    let n = fields[d + 3].parse::<u64>().map_err(|_| DatasetError::MalformedRow {
        line: lineno,
        reason: format!("malformed sample count `{}`", fields[d + 3]),
    })?;
    let mode = fields[d + 4].parse::<Mode>().map_err(|reason| DatasetError::MalformedRow {
        line: lineno,
        reason,
    })?;
    Ok(Row { coords, t, lambda, value, n, mode })
}

/// Distinct coordinate values in ascending order, exact on bit patterns.
fn distinct_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let set: BTreeSet<u64> = values.map(|v| v.to_bits()).collect();
    let mut out: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

fn check_affine(axis: &[f64], name: &str) -> Result<(), DatasetError> {
    if axis.len() < 3 {
        return Ok(());
    }
    let span = axis[axis.len() - 1] - axis[0];
    let step = span / (axis.len() - 1) as f64;
    for (i, &v) in axis.iter().enumerate() {
        let expect = axis[0] + step * i as f64;
        if (v - expect).abs() > 1e-9 * span.abs().max(1.0) {
            return Err(DatasetError::InconsistentLattice {
                line: 0,
                reason: format!("axis {name} is not uniformly spaced near value {v}"),
            });
        }
    }
    Ok(())
}

/// Parses dataset text back into a grid. The inverse of [`render_dataset`]
/// up to provenance (always `MonteCarlo`).
pub fn parse_dataset(text: &str) -> Result<ProbabilityGrid, DatasetError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or(DatasetError::VersionMismatch { line: 1 })?;
    if first.trim() != VERSION_LINE {
        return Err(DatasetError::VersionMismatch { line: 1 });
    }
    let (_, header) = lines.next().ok_or(DatasetError::SchemaError {
        line: 2,
        column: "x1".into(),
    })?;
    let columns: Vec<&str> = header.split(',').collect();
    let d = columns.iter().take_while(|c| c.starts_with('x')).count();
    if d == 0 {
        return Err(DatasetError::SchemaError { line: 2, column: "x1".into() });
    }
    for (i, expected) in ["T", "lambda", "F", "N", "mode"].iter().enumerate() {
        match columns.get(d + i) {
            Some(c) if c == expected => {}
            _ => {
                return Err(DatasetError::SchemaError { line: 2, column: expected.to_string() })
            }
        }
    }
    for (dim, column) in columns[..d].iter().enumerate() {
        let expected = format!("x{}", dim + 1);
        if *column != expected {
            return Err(DatasetError::SchemaError { line: 2, column: expected });
        }
    }
    let mut rows = Vec::new();
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        rows.push((index + 1, parse_row(line, index + 1, d)?));
    }
    if rows.is_empty() {
        return Err(DatasetError::MalformedRow { line: 3, reason: "no data rows".into() });
    }
    let lambda = rows[0].1.lambda;
    let n = rows[0].1.n;
    let mode = rows[0].1.mode;
    for (lineno, row) in &rows {
        if row.lambda != lambda || row.n != n || row.mode != mode {
            return Err(DatasetError::InconsistentLattice {
                line: *lineno,
                reason: "lambda, N, and mode must be constant across rows".into(),
            });
        }
    }
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|dim| distinct_sorted(rows.iter().map(|(_, r)| r.coords[dim])))
        .collect();
    let t_axis = distinct_sorted(rows.iter().map(|(_, r)| r.t));
    for (dim, axis) in axes.iter().enumerate() {
        check_affine(axis, &format!("x{}", dim + 1))?;
    }
    check_affine(&t_axis, "T")?;
    let spec = GridSpec {
        state_lo: axes.iter().map(|a| a[0]).collect(),
        state_hi: axes.iter().map(|a| a[a.len() - 1]).collect(),
        state_steps: axes.iter().map(|a| a.len()).collect(),
        t_lo: t_axis[0],
        t_hi: t_axis[t_axis.len() - 1],
        t_steps: t_axis.len(),
        lambda,
    };
    spec.validate().map_err(|e| DatasetError::InconsistentLattice {
        line: 0,
        reason: e.to_string(),
    })?;
    if rows.len() != spec.cell_count() {
        return Err(DatasetError::InconsistentLattice {
            line: 0,
            reason: format!(
                "found {} rows but the axes span {} cells",
                rows.len(),
                spec.cell_count()
            ),
        });
    }
    // Rows must enumerate the lattice in row-major order with time fastest.
    let mut values = vec![f64::NAN; spec.cell_count()];
    for (cell, (lineno, row)) in rows.iter().enumerate() {
        let (state, t) = spec.point(cell);
        let matches = state
            .iter()
            .zip(&row.coords)
            .all(|(a, b)| a.to_bits() == b.to_bits() || (a - b).abs() <= 1e-12 * a.abs().max(1.0))
            && (t.to_bits() == row.t.to_bits() || (t - row.t).abs() <= 1e-12 * t.abs().max(1.0));
        if !matches {
            return Err(DatasetError::InconsistentLattice {
                line: *lineno,
                reason: "rows are not in row-major order with time fastest".into(),
            });
        }
        values[cell] = row.value;
    }
    ProbabilityGrid::new(spec, values, n, mode, GridSource::MonteCarlo).map_err(|e| {
        DatasetError::InconsistentLattice { line: 0, reason: e.to_string() }
    })
}

pub fn read_dataset(path: &Path) -> Result<ProbabilityGrid, DatasetError> {
    parse_dataset(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{builtin_system, BuiltinSystem};
    use crate::montecarlo::estimate_grid;

    fn sample_grid() -> ProbabilityGrid {
        let (system, safe_set) = builtin_system(BuiltinSystem::DriftDiffusion1D);
        let spec = GridSpec::planar(-5.0, -1.0, 5, 0.0, 3.0, 4, 1.0).unwrap();
        estimate_grid(&system, &safe_set, &spec, 25, 0.01, 123).unwrap().grid
    }

    #[test]
    fn round_trip_preserves_grid() {
        let grid = sample_grid();
        let text = render_dataset(&grid);
        let back = parse_dataset(&text).unwrap();
        assert_eq!(grid, back);
        assert_eq!(text, render_dataset(&back));
    }

    #[test]
    fn version_line_is_checked() {
        let grid = sample_grid();
        let text = render_dataset(&grid).replace("v1", "v9");
        assert!(matches!(parse_dataset(&text), Err(DatasetError::VersionMismatch { line: 1 })));
    }

    #[test]
    fn out_of_range_probability_is_rejected() {
        let grid = sample_grid();
        let mut lines: Vec<String> = render_dataset(&grid).lines().map(String::from).collect();
        // Overwrite the F field (index d + 2 = 3) of the first data row.
        let mut fields: Vec<String> = lines[2].split(',').map(String::from).collect();
        fields[3] = "1.2".to_string();
        lines[2] = fields.join(",");
        match parse_dataset(&lines.join("\n")) {
            Err(DatasetError::ValueOutOfRange { line, value }) => {
                assert_eq!(line, 3);
                assert_eq!(value, 1.2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let text = "# pipe-dataset v1\nx1,T,F,N,mode\n";
        match parse_dataset(text) {
            Err(DatasetError::SchemaError { column, .. }) => assert_eq!(column, "lambda"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_row_reports_line() {
        let grid = sample_grid();
        let mut lines: Vec<String> = render_dataset(&grid).lines().map(String::from).collect();
        lines[5] = "1.0,2.0".to_string();
        match parse_dataset(&lines.join("\n")) {
            Err(DatasetError::MalformedRow { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shuffled_rows_are_inconsistent() {
        let grid = sample_grid();
        let mut lines: Vec<String> = render_dataset(&grid).lines().map(String::from).collect();
        lines.swap(2, 3);
        assert!(matches!(
            parse_dataset(&lines.join("\n")),
            Err(DatasetError::InconsistentLattice { .. })
        ));
    }

    #[test]
    fn nan_cells_round_trip() {
        let mut grid = sample_grid();
        grid.values[7] = f64::NAN;
        let back = parse_dataset(&render_dataset(&grid)).unwrap();
        assert!(back.values[7].is_nan());
    }
}
