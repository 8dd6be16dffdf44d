//! Error metrics over lattices, with the ill-defined corner excluded.
//!
//! Metrics operate on flat value slices tied to a shared [`GridSpec`], so
//! probability grids, gradient grids, and unclamped baseline predictions all
//! go through the same code. NaN cells never contribute.

use pipe_core::dynamics::SafeSet;
use pipe_core::montecarlo::{GridSpec, ProbabilityGrid};
use pipe_core::training::Region;

/// The risk probability at `T = 0` on the safe-set boundary is not well
/// defined; metrics exclude lattice cells with `T = 0` whose barrier value
/// is within one lattice spacing of zero.
pub fn corner_excluded(spec: &GridSpec, safe_set: &SafeSet, cell: usize) -> bool {
    let (state, t) = spec.point(cell);
    if t != 0.0 {
        return false;
    }
    let spacing = (0..spec.state_dim()).map(|d| spec.state_spacing(d)).fold(0.0f64, f64::max);
    safe_set.barrier(&state).abs() < spacing
}

fn region_contains(region: Option<&Region>, spec: &GridSpec, cell: usize) -> bool {
    match region {
        None => true,
        Some(r) => {
            let (state, t) = spec.point(cell);
            r.contains(&state, t)
        }
    }
}

/// Mean absolute error between two value sets on one lattice, skipping NaN
/// cells and the excluded corner. Returns `(mae, cells_used)`.
pub fn mae(
    spec: &GridSpec,
    pred: &[f64],
    truth: &[f64],
    safe_set: &SafeSet,
    region: Option<&Region>,
) -> (f64, usize) {
    assert_eq!(pred.len(), truth.len());
    assert_eq!(pred.len(), spec.cell_count());
    let mut sum = 0.0;
    let mut count = 0usize;
    for cell in 0..pred.len() {
        let (a, b) = (pred[cell], truth[cell]);
        if a.is_nan() || b.is_nan() {
            continue;
        }
        if corner_excluded(spec, safe_set, cell) || !region_contains(region, spec, cell) {
            continue;
        }
        sum += (a - b).abs();
        count += 1;
    }
    (if count == 0 { f64::NAN } else { sum / count as f64 }, count)
}

/// Sup-norm error under the same exclusions as [`mae`].
pub fn sup_error(spec: &GridSpec, pred: &[f64], truth: &[f64], safe_set: &SafeSet) -> f64 {
    let mut sup: f64 = 0.0;
    for cell in 0..pred.len() {
        let (a, b) = (pred[cell], truth[cell]);
        if a.is_nan() || b.is_nan() || corner_excluded(spec, safe_set, cell) {
            continue;
        }
        sup = sup.max((a - b).abs());
    }
    sup
}

/// Mean relative error in percent over a region:
/// `mean(|pred - truth| / truth) * 100`, excluding cells with true value
/// below `floor` (division blowup) and the excluded corner.
pub fn percentage_error(
    spec: &GridSpec,
    pred: &[f64],
    truth: &[f64],
    safe_set: &SafeSet,
    region: &Region,
    floor: f64,
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for cell in 0..pred.len() {
        let (a, b) = (pred[cell], truth[cell]);
        if a.is_nan() || b.is_nan() || b < floor {
            continue;
        }
        if corner_excluded(spec, safe_set, cell) || !region_contains(Some(region), spec, cell) {
            continue;
        }
        sum += (a - b).abs() / b;
        count += 1;
    }
    if count == 0 {
        f64::NAN
    } else {
        100.0 * sum / count as f64
    }
}

/// Mean of the values over a region under the standard exclusions.
pub fn region_mean(grid: &ProbabilityGrid, safe_set: &SafeSet, region: &Region) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for cell in 0..grid.values.len() {
        if grid.values[cell].is_nan()
            || corner_excluded(&grid.spec, safe_set, cell)
            || !region_contains(Some(region), &grid.spec, cell)
        {
            continue;
        }
        sum += grid.values[cell];
        count += 1;
    }
    sum / count as f64
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

/// Mean absolute asymmetry of a grid under simultaneous sign flip of every
/// state axis. The lattice must be symmetric per axis.
pub fn symmetry_violation(grid: &ProbabilityGrid) -> f64 {
    let spec = &grid.spec;
    for d in 0..spec.state_dim() {
        assert!(
            (spec.state_lo[d] + spec.state_hi[d]).abs() < 1e-12,
            "axis {d} is not symmetric"
        );
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for cell in 0..grid.values.len() {
        let (idx, t_index) = spec.unravel(cell);
        let mirrored: Vec<usize> =
            idx.iter().enumerate().map(|(d, &i)| spec.state_steps[d] - 1 - i).collect();
        let other = grid.values[spec.ravel(&mirrored, t_index)];
        let this = grid.values[cell];
        if this.is_nan() || other.is_nan() {
            continue;
        }
        sum += (this - other).abs();
        count += 1;
    }
    sum / count as f64
}
