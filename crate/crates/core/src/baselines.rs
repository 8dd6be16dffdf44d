//! Non-physics fitting baseline: thin-plate-spline interpolation over
//! scattered `(x, T)` samples.
//!
//! The model is the standard augmented radial-basis system with kernel
//! `U(r) = r^2 ln r` plus an affine part, solved densely. With zero
//! regularization the spline interpolates the data; the radial coefficients
//! satisfy the usual side conditions (they annihilate constants and linear
//! functions over the nodes).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TpsError {
    #[error("need at least 3 nodes, found {0}")]
    TooFewNodes(usize),
    #[error("nodes and values disagree in length ({nodes} vs {values})")]
    LengthMismatch { nodes: usize, values: usize },
    #[error("non-finite node or value")]
    NonFinite,
}

/// Fitted thin-plate spline: interpolation nodes, their radial coefficients,
/// and the affine part `c0 + c1 x + c2 T`.
#[derive(Debug, Clone)]
pub struct TpsModel {
    nodes: Vec<[f64; 2]>,
    radial: Vec<f64>,
    affine: [f64; 3],
    regularization: f64,
    degenerate: bool,
    center: [f64; 2],
}

impl TpsModel {
    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn radial_coefficients(&self) -> &[f64] {
        &self.radial
    }

    pub fn affine_coefficients(&self) -> [f64; 3] {
        self.affine
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    /// True when the system was singular (collinear or duplicate nodes) and
    /// the fit fell back to a least-squares solve.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

fn kernel(r2: f64) -> f64 {
    // U(r) = r^2 ln r = r^2 ln(r^2) / 2, with U(0) = 0.
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

/// Fits a thin-plate spline with explicit diagonal regularization
/// (0 = exact interpolation).
pub fn tps_fit_regularized(
    points: &[[f64; 2]],
    values: &[f64],
    regularization: f64,
) -> Result<TpsModel, TpsError> {
    let n = points.len();
    if n < 3 {
        return Err(TpsError::TooFewNodes(n));
    }
    if values.len() != n {
        return Err(TpsError::LengthMismatch { nodes: n, values: values.len() });
    }
    if points.iter().flatten().chain(values).any(|v| !v.is_finite()) {
        return Err(TpsError::NonFinite);
    }
    // Center the nodes; distances are translation-invariant so only the
    // affine block sees the shift, which improves its conditioning.
    let center = [
        points.iter().map(|p| p[0]).sum::<f64>() / n as f64,
        points.iter().map(|p| p[1]).sum::<f64>() / n as f64,
    ];
    let shifted: Vec<[f64; 2]> =
        points.iter().map(|p| [p[0] - center[0], p[1] - center[1]]).collect();
    let size = n + 3;
    let mut a = DMatrix::zeros(size, size);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                a[(i, j)] = regularization;
            } else {
                let dx = shifted[i][0] - shifted[j][0];
                let dt = shifted[i][1] - shifted[j][1];
                a[(i, j)] = kernel(dx * dx + dt * dt);
            }
        }
        a[(i, n)] = 1.0;
        a[(i, n + 1)] = shifted[i][0];
        a[(i, n + 2)] = shifted[i][1];
        a[(n, i)] = 1.0;
        a[(n + 1, i)] = shifted[i][0];
        a[(n + 2, i)] = shifted[i][1];
    }
    let mut rhs = DVector::zeros(size);
    for (i, v) in values.iter().enumerate() {
        rhs[i] = *v;
    }
    // Collinear or duplicate nodes make the augmented system singular; the
    // LU route would return a huge, meaningless solution rather than fail.
    let mut sorted: Vec<[u64; 2]> =
        shifted.iter().map(|p| [p[0].to_bits(), p[1].to_bits()]).collect();
    sorted.sort_unstable();
    let has_duplicates = sorted.windows(2).any(|w| w[0] == w[1]);
    let p_block = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => shifted[i][0],
        _ => shifted[i][1],
    });
    let p_singular = {
        let sv = p_block.svd(false, false).singular_values;
        sv[2] <= 1e-12 * sv[0].max(1.0)
    };
    let singular = has_duplicates || p_singular;
    let (mut solution, degenerate) = if singular {
        let svd = a.clone().svd(true, true);
        let sol = svd.solve(&rhs, 1e-10).map_err(|_| TpsError::NonFinite)?;
        (sol, true)
    } else {
        match a.clone().lu().solve(&rhs) {
            Some(sol) => (sol, false),
            None => {
                let svd = a.clone().svd(true, true);
                let sol = svd.solve(&rhs, 1e-10).map_err(|_| TpsError::NonFinite)?;
                (sol, true)
            }
        }
    };
    if !degenerate {
        // One step of iterative refinement pushes node residuals to roughly
        // machine precision even when the kernel matrix is ill-conditioned.
        let residual = &rhs - &a * &solution;
        if let Some(correction) = a.clone().lu().solve(&residual) {
            solution += correction;
        }
    }
    let radial = solution.as_slice()[..n].to_vec();
    let affine = [solution[n], solution[n + 1], solution[n + 2]];
    Ok(TpsModel {
        nodes: points.to_vec(),
        radial,
        affine,
        regularization,
        degenerate,
        center,
    })
}

/// Fits an interpolating thin-plate spline (zero regularization).
pub fn tps_fit(points: &[[f64; 2]], values: &[f64]) -> Result<TpsModel, TpsError> {
    tps_fit_regularized(points, values, 0.0)
}

/// Evaluates the spline anywhere; extrapolation is permitted and unbounded.
pub fn tps_eval(model: &TpsModel, x: f64, t: f64) -> f64 {
    let (sx, st) = (x - model.center[0], t - model.center[1]);
    let mut value = model.affine[0] + model.affine[1] * sx + model.affine[2] * st;
    for (node, coeff) in model.nodes.iter().zip(&model.radial) {
        let dx = x - node[0];
        let dt = t - node[1];
        value += coeff * kernel(dx * dx + dt * dt);
    }
    value
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn scattered_nodes(count: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut stream = rng::stream(seed);
        (0..count).map(|_| [stream.gen_range(-10.0..2.0), stream.gen_range(0.0..10.0)]).collect()
    }

    #[test]
    fn affine_data_yields_affine_model() {
        let points = [[0.0, 0.0], [1.0, 0.5], [-2.0, 3.0]];
        let values: Vec<f64> = points.iter().map(|p| 2.0 - 0.5 * p[0] + 0.25 * p[1]).collect();
        let model = tps_fit(&points, &values).unwrap();
        for c in model.radial_coefficients() {
            assert!(c.abs() < 1e-9, "radial coefficient {c} should vanish");
        }
        for &(x, t) in &[(5.0, 5.0), (-8.0, 1.0), (0.3, 9.0)] {
            let expect = 2.0 - 0.5 * x + 0.25 * t;
            assert!((tps_eval(&model, x, t) - expect).abs() <= 1e-8);
        }
    }

    #[test]
    fn constant_data_yields_constant_model() {
        let points = scattered_nodes(12, 5);
        let values = vec![0.4; 12];
        let model = tps_fit(&points, &values).unwrap();
        for &(x, t) in &[(0.0, 0.0), (-20.0, 30.0), (4.0, -2.0)] {
            assert!((tps_eval(&model, x, t) - 0.4).abs() <= 1e-8);
        }
    }

    #[test]
    fn interpolates_at_nodes() {
        let points = scattered_nodes(60, 9);
        let mut stream = rng::stream(10);
        let values: Vec<f64> = (0..60).map(|_| stream.gen_range(0.0..1.0)).collect();
        let model = tps_fit(&points, &values).unwrap();
        assert!(!model.is_degenerate());
        for (p, v) in points.iter().zip(&values) {
            assert!((tps_eval(&model, p[0], p[1]) - v).abs() <= 1e-8);
        }
    }

    #[test]
    fn side_conditions_hold() {
        let points = scattered_nodes(40, 2);
        let mut stream = rng::stream(3);
        let values: Vec<f64> = (0..40).map(|_| stream.gen_range(-1.0..1.0)).collect();
        let model = tps_fit(&points, &values).unwrap();
        let sum: f64 = model.radial_coefficients().iter().sum();
        let sum_x: f64 =
            model.radial_coefficients().iter().zip(&points).map(|(c, p)| c * p[0]).sum();
        let sum_t: f64 =
            model.radial_coefficients().iter().zip(&points).map(|(c, p)| c * p[1]).sum();
        assert!(sum.abs() < 1e-8 && sum_x.abs() < 1e-7 && sum_t.abs() < 1e-7);
    }

    #[test]
    fn translation_equivariance() {
        let points = scattered_nodes(25, 21);
        let mut stream = rng::stream(22);
        let values: Vec<f64> = (0..25).map(|_| stream.gen_range(0.0..1.0)).collect();
        let model = tps_fit(&points, &values).unwrap();
        let (ox, ot) = (3.7, -1.9);
        let moved: Vec<[f64; 2]> = points.iter().map(|p| [p[0] + ox, p[1] + ot]).collect();
        let model_moved = tps_fit(&moved, &values).unwrap();
        for &(x, t) in &[(0.0, 2.0), (-4.0, 7.5), (1.5, 0.1)] {
            let a = tps_eval(&model, x, t);
            let b = tps_eval(&model_moved, x + ox, t + ot);
            assert!((a - b).abs() <= 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn collinear_nodes_fall_back_to_least_squares() {
        let points: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 2.0 * i as f64]).collect();
        let values: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
        let model = tps_fit(&points, &values).unwrap();
        assert!(model.is_degenerate());
        let v = tps_eval(&model, 2.0, 4.0);
        assert!(v.is_finite());
    }

    #[test]
    fn too_few_nodes() {
        assert!(matches!(
            tps_fit(&[[0.0, 0.0], [1.0, 1.0]], &[0.0, 1.0]),
            Err(TpsError::TooFewNodes(2))
        ));
    }

    #[test]
    fn far_extrapolation_grows() {
        let points = scattered_nodes(30, 31);
        let mut stream = rng::stream(32);
        let values: Vec<f64> = (0..30).map(|_| stream.gen_range(0.0..1.0)).collect();
        let model = tps_fit(&points, &values).unwrap();
        let near = tps_eval(&model, 0.0, 5.0).abs();
        let far = tps_eval(&model, 1e4, 1e4).abs();
        assert!(far > near + 10.0, "extrapolation should be unbounded: near {near}, far {far}");
    }
}
