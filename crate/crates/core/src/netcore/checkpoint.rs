//! Self-describing text checkpoints for [`MlpParams`].
//!
//! Layout (one record per line, whitespace separated values):
//!
//! ```text
//! # pipe-checkpoint v1
//! layers: 2 32 32 32 1
//! activation: tanh
//! state_dim: 1
//! norm_lo: <d_in floats>
//! norm_hi: <d_in floats>
//! W0: <out*in floats, row-major>
//! b0: <out floats>
//! ...
//! ```
//!
//! Floats are written with 18 significant digits, so the round trip is
//! lossless.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{Activation, MlpParams};

const VERSION_LINE: &str = "# pipe-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: version mismatch (expected `{VERSION_LINE}`)")]
    VersionMismatch { line: usize },
    #[error("line {line}: expected record `{expected}`")]
    MissingRecord { line: usize, expected: String },
    #[error("line {line}: malformed value `{value}`")]
    MalformedValue { line: usize, value: String },
    #[error("line {1}: {0}")]
    Shape(String, usize),
}

fn fmt_floats(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(" ")
}

/// Serializes parameters to the checkpoint text format.
pub fn render_checkpoint(params: &MlpParams) -> String {
    let sizes =
        params.layer_sizes().iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
    let mut text = format!(
        "{VERSION_LINE}\nlayers: {sizes}\nactivation: {}\nstate_dim: {}\nnorm_lo: {}\nnorm_hi: {}\n",
        params.activation().as_str(),
        params.state_dim(),
        fmt_floats(params.input_lo()),
        fmt_floats(params.input_hi()),
    );
    let sizes = params.layer_sizes();
    let mut cursor = 0;
    for l in 0..sizes.len() - 1 {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let w = &params.theta()[cursor..cursor + n_in * n_out];
        let b = &params.theta()[cursor + n_in * n_out..cursor + n_in * n_out + n_out];
        cursor += n_in * n_out + n_out;
        text.push_str(&format!("W{l}: {}\nb{l}: {}\n", fmt_floats(w), fmt_floats(b)));
    }
    text
}

pub fn write_checkpoint(params: &MlpParams, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, render_checkpoint(params))?;
    Ok(())
}

struct Lines<'a> {
    iter: std::str::Lines<'a>,
    number: usize,
}

impl<'a> Lines<'a> {
    fn next_record(&mut self, key: &str) -> Result<(&'a str, usize), CheckpointError> {
        let line = self.iter.next().ok_or_else(|| CheckpointError::MissingRecord {
            line: self.number + 1,
            expected: key.to_string(),
        })?;
        self.number += 1;
        let prefix = format!("{key}:");
        line.strip_prefix(&prefix)
            .map(|rest| (rest.trim(), self.number))
            .ok_or_else(|| CheckpointError::MissingRecord {
                line: self.number,
                expected: key.to_string(),
            })
    }
}

fn parse_floats(text: &str, line: usize) -> Result<Vec<f64>, CheckpointError> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| CheckpointError::MalformedValue { line, value: tok.to_string() })
        })
        .collect()
}

/// Parses the checkpoint text format back into parameters.
pub fn parse_checkpoint(text: &str) -> Result<MlpParams, CheckpointError> {
    let mut lines = Lines { iter: text.lines(), number: 0 };
    let first = lines.iter.next().unwrap_or("");
    lines.number = 1;
    if first.trim() != VERSION_LINE {
        return Err(CheckpointError::VersionMismatch { line: 1 });
    }
    let (sizes_text, line) = lines.next_record("layers")?;
    let layer_sizes: Vec<usize> = sizes_text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| CheckpointError::MalformedValue { line, value: tok.to_string() })
        })
        .collect::<Result<_, _>>()?;
    if layer_sizes.len() < 2 {
        return Err(CheckpointError::Shape("need at least two layer sizes".into(), line));
    }
    let (activation, line) = lines.next_record("activation")?;
    if activation != Activation::Tanh.as_str() {
        return Err(CheckpointError::MalformedValue { line, value: activation.to_string() });
    }
    let (state_dim_text, line) = lines.next_record("state_dim")?;
    let state_dim: usize = state_dim_text
        .parse()
        .map_err(|_| CheckpointError::MalformedValue { line, value: state_dim_text.to_string() })?;
    let (lo_text, lo_line) = lines.next_record("norm_lo")?;
    let lo = parse_floats(lo_text, lo_line)?;
    let (hi_text, hi_line) = lines.next_record("norm_hi")?;
    let hi = parse_floats(hi_text, hi_line)?;
    let d_in = layer_sizes[0];
    if lo.len() != d_in || hi.len() != d_in {
        return Err(CheckpointError::Shape(
            format!("normalization bounds must each have {d_in} entries"),
            hi_line,
        ));
    }
    let mut theta = Vec::new();
    for l in 0..layer_sizes.len() - 1 {
        let (n_in, n_out) = (layer_sizes[l], layer_sizes[l + 1]);
        let (w_text, w_line) = lines.next_record(&format!("W{l}"))?;
        let w = parse_floats(w_text, w_line)?;
        if w.len() != n_in * n_out {
            return Err(CheckpointError::Shape(
                format!("W{l} must have {} entries, found {}", n_in * n_out, w.len()),
                w_line,
            ));
        }
        let (b_text, b_line) = lines.next_record(&format!("b{l}"))?;
        let b = parse_floats(b_text, b_line)?;
        if b.len() != n_out {
            return Err(CheckpointError::Shape(
                format!("b{l} must have {n_out} entries, found {}", b.len()),
                b_line,
            ));
        }
        theta.extend(w);
        theta.extend(b);
    }
    MlpParams::from_flat(layer_sizes, theta)
        .and_then(|p| p.with_input_bounds(lo, hi))
        .and_then(|p| p.with_state_dim(state_dim))
        .map_err(|e| CheckpointError::Shape(e.to_string(), 0))
}

pub fn read_checkpoint(path: &Path) -> Result<MlpParams, CheckpointError> {
    parse_checkpoint(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::init_glorot;

    #[test]
    fn round_trip_is_lossless() {
        let params = init_glorot(&[2, 5, 3, 1], 12)
            .unwrap()
            .with_input_bounds(vec![-10.0, 0.0], vec![2.0, 10.0])
            .unwrap();
        let text = render_checkpoint(&params);
        let back = parse_checkpoint(&text).unwrap();
        assert_eq!(params, back);
        // Render of the parse is byte-identical too.
        assert_eq!(text, render_checkpoint(&back));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let err = parse_checkpoint("# pipe-checkpoint v2\nlayers: 1 1\n").unwrap_err();
        assert!(matches!(err, CheckpointError::VersionMismatch { line: 1 }));
    }

    #[test]
    fn truncated_file_names_missing_record() {
        let text = "# pipe-checkpoint v1\nlayers: 2 1\nactivation: tanh\n";
        let err = parse_checkpoint(text).unwrap_err();
        assert!(matches!(err, CheckpointError::MissingRecord { .. }), "{err}");
    }

    #[test]
    fn malformed_float_carries_line_number() {
        let text = "# pipe-checkpoint v1\nlayers: 2 1\nactivation: tanh\nstate_dim: 1\nnorm_lo: oops 0\n";
        match parse_checkpoint(text).unwrap_err() {
            CheckpointError::MalformedValue { line, value } => {
                assert_eq!(line, 5);
                assert_eq!(value, "oops");
            }
            other => panic!("unexpected {other}"),
        }
    }
}
