//! Empirical risk-probability grids from repeated simulation.
//!
//! Every lattice cell gets its own RNG stream derived from the global seed
//! and the cell index, and every trajectory within a cell gets a stream
//! derived from the cell seed and the trajectory index. Estimates are
//! therefore independent of evaluation order and worker count.

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{DynamicsError, Mode, SafeSet, SdeSystem, TrajectoryEngine};
use crate::rng;

pub mod dataset;

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("trajectory {stream_index} failed: {source}")]
    Trajectory {
        stream_index: u64,
        #[source]
        source: DynamicsError,
    },
    #[error("kernel size {kernel} exceeds grid extent {extent}")]
    KernelTooLarge { kernel: usize, extent: usize },
    #[error("denoising requires a 2D grid (one state dimension plus time)")]
    NotPlanar,
    #[error("axis {axis} out of range for state dimension {state_dim}")]
    BadAxis { axis: usize, state_dim: usize },
    #[error("finite differences need at least 3 points along axis {axis}, found {count}")]
    TooFewPoints { axis: usize, count: usize },
}

/// Uniform lattice over state space and horizon. Points are affine in their
/// indices; storage is row-major with the time axis last (time varies
/// fastest). A size-1 axis is a point lattice and must have `lo == hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub state_lo: Vec<f64>,
    pub state_hi: Vec<f64>,
    pub state_steps: Vec<usize>,
    pub t_lo: f64,
    pub t_hi: f64,
    pub t_steps: usize,
    pub lambda: f64,
}

impl GridSpec {
    /// Convenience constructor for the common 1D-state case.
    pub fn planar(
        x_lo: f64,
        x_hi: f64,
        x_steps: usize,
        t_lo: f64,
        t_hi: f64,
        t_steps: usize,
        lambda: f64,
    ) -> Result<Self, McError> {
        let spec = Self {
            state_lo: vec![x_lo],
            state_hi: vec![x_hi],
            state_steps: vec![x_steps],
            t_lo,
            t_hi,
            t_steps,
            lambda,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.state_lo.len() != self.state_hi.len()
            || self.state_lo.len() != self.state_steps.len()
        {
            return Err(McError::InvalidSpec("state bound/step lengths disagree".into()));
        }
        if self.state_lo.is_empty() {
            return Err(McError::InvalidSpec("need at least one state dimension".into()));
        }
        for dim in 0..self.state_lo.len() {
            let (lo, hi, n) = (self.state_lo[dim], self.state_hi[dim], self.state_steps[dim]);
            if n == 0 {
                return Err(McError::InvalidSpec(format!("axis {dim} has zero points")));
            }
            if n == 1 && lo != hi {
                return Err(McError::InvalidSpec(format!(
                    "axis {dim} has one point but lo {lo} != hi {hi}"
                )));
            }
            if n >= 2 && !(lo < hi) {
                return Err(McError::InvalidSpec(format!("axis {dim} bounds not ordered")));
            }
        }
        if self.t_steps == 0 {
            return Err(McError::InvalidSpec("time axis has zero points".into()));
        }
        if self.t_steps == 1 && self.t_lo != self.t_hi {
            return Err(McError::InvalidSpec("time axis has one point but lo != hi".into()));
        }
        if self.t_steps >= 2 && !(self.t_lo < self.t_hi) {
            return Err(McError::InvalidSpec("time bounds not ordered".into()));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.state_lo.len()
    }

    pub fn cell_count(&self) -> usize {
        self.state_steps.iter().product::<usize>() * self.t_steps
    }

    fn axis_coord(lo: f64, hi: f64, steps: usize, index: usize) -> f64 {
        if steps == 1 || index == 0 {
            lo
        } else if index == steps - 1 {
            // The endpoint is exact; lo + span * 1.0 can round past hi.
            hi
        } else {
            lo + (hi - lo) * index as f64 / (steps - 1) as f64
        }
    }

    pub fn state_coord(&self, dim: usize, index: usize) -> f64 {
        Self::axis_coord(self.state_lo[dim], self.state_hi[dim], self.state_steps[dim], index)
    }

    pub fn t_coord(&self, index: usize) -> f64 {
        Self::axis_coord(self.t_lo, self.t_hi, self.t_steps, index)
    }

    /// Lattice spacing along a state axis (axes with a single point have no
    /// spacing and return 0).
    pub fn state_spacing(&self, dim: usize) -> f64 {
        if self.state_steps[dim] <= 1 {
            0.0
        } else {
            (self.state_hi[dim] - self.state_lo[dim]) / (self.state_steps[dim] - 1) as f64
        }
    }

    pub fn t_spacing(&self) -> f64 {
        if self.t_steps <= 1 { 0.0 } else { (self.t_hi - self.t_lo) / (self.t_steps - 1) as f64 }
    }

    /// Decomposes a flat index into state indices plus time index.
    pub fn unravel(&self, flat: usize) -> (Vec<usize>, usize) {
        let mut rest = flat;
        let t_index = rest % self.t_steps;
        rest /= self.t_steps;
        let d = self.state_dim();
        let mut idx = vec![0usize; d];
        for dim in (0..d).rev() {
            idx[dim] = rest % self.state_steps[dim];
            rest /= self.state_steps[dim];
        }
        (idx, t_index)
    }

    pub fn ravel(&self, state_idx: &[usize], t_index: usize) -> usize {
        let mut flat = 0;
        for dim in 0..self.state_dim() {
            flat = flat * self.state_steps[dim] + state_idx[dim];
        }
        flat * self.t_steps + t_index
    }

    /// State vector and horizon of a flat cell index.
    pub fn point(&self, flat: usize) -> (Vec<f64>, f64) {
        let (idx, t_index) = self.unravel(flat);
        let state =
            idx.iter().enumerate().map(|(dim, &i)| self.state_coord(dim, i)).collect();
        (state, self.t_coord(t_index))
    }
}

/// Provenance of a probability grid's values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridSource {
    MonteCarlo,
    Denoised,
    Pinn,
    Oracle,
    Tps,
}

/// Risk probabilities on a lattice, with sampling provenance. Values are in
/// `[0, 1]`; failed cells hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub sample_count: u64,
    pub mode: Mode,
    pub source: GridSource,
}

impl ProbabilityGrid {
    pub fn new(
        spec: GridSpec,
        values: Vec<f64>,
        sample_count: u64,
        mode: Mode,
        source: GridSource,
    ) -> Result<Self, McError> {
        spec.validate()?;
        if values.len() != spec.cell_count() {
            return Err(McError::InvalidSpec(format!(
                "expected {} values, found {}",
                spec.cell_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_nan() && !(0.0..=1.0).contains(v)) {
            return Err(McError::InvalidSpec("probability outside [0, 1]".into()));
        }
        Ok(Self { spec, values, sample_count, mode, source })
    }

    pub fn value(&self, state_idx: &[usize], t_index: usize) -> f64 {
        self.values[self.spec.ravel(state_idx, t_index)]
    }
}

/// Spatial derivative estimates along one state axis. Cells where no
/// difference was formed hold NaN (the axis endpoints).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub axis: usize,
}

/// Failure report for one lattice cell.
#[derive(Debug, Clone)]
pub struct CellFailure {
    pub cell_index: usize,
    pub message: String,
}

/// Grid estimate plus any per-cell failures (failed cells are NaN).
#[derive(Debug, Clone)]
pub struct GridEstimate {
    pub grid: ProbabilityGrid,
    pub failures: Vec<CellFailure>,
}

/// Empirical risk probability at one point: the event fraction over `n`
/// trajectories in recovery mode, the no-event fraction in safety mode.
/// `horizon == 0` short-circuits to the safe-set indicator.
pub fn estimate_point(
    system: &SdeSystem,
    safe_set: &SafeSet,
    x0: &[f64],
    horizon: f64,
    n: u64,
    dt: f64,
    seed: u64,
) -> Result<f64, McError> {
    assert!(n >= 1, "need at least one trajectory");
    assert!(horizon >= 0.0, "horizon must be nonnegative");
    if horizon == 0.0 {
        return Ok(if safe_set.contains(x0) { 1.0 } else { 0.0 });
    }
    // Per-trajectory streams allow chunked parallelism without changing any
    // estimate: event counts are integers, so reduction order is irrelevant.
    const TRAJ_CHUNK: u64 = 1024;
    let n_chunks = n.div_ceil(TRAJ_CHUNK);
    let events: Result<u64, McError> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * TRAJ_CHUNK;
            let end = (start + TRAJ_CHUNK).min(n);
            let mut engine = TrajectoryEngine::new(system);
            let mut count = 0u64;
            for i in start..end {
                let mut stream = rng::stream(rng::derive_seed(seed, i));
                let event = engine
                    .run(system, safe_set, x0, horizon, dt, &mut stream, |_, _| {})
                    .map_err(|source| McError::Trajectory { stream_index: i, source })?;
                if event.is_some() {
                    count += 1;
                }
            }
            Ok(count)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b));
    let events = events?;
    let fraction = events as f64 / n as f64;
    Ok(match safe_set.mode() {
        Mode::Recovery => fraction,
        Mode::Safety => 1.0 - fraction,
    })
}

/// Estimates a whole lattice. Cell `i` uses the stream seed
/// `derive_seed(seed, i)`, so values do not depend on evaluation order;
/// failed cells become NaN and are listed in the failure report.
///
/// The grid's `lambda` overrides the system's drift parameter.
pub fn estimate_grid(
    system: &SdeSystem,
    safe_set: &SafeSet,
    spec: &GridSpec,
    n: u64,
    dt: f64,
    seed: u64,
) -> Result<GridEstimate, McError> {
    spec.validate()?;
    if spec.state_dim() != system.state_dim() {
        return Err(McError::InvalidSpec(format!(
            "grid has {} state dims, system has {}",
            spec.state_dim(),
            system.state_dim()
        )));
    }
    let system = system.with_lambda(spec.lambda);
    let cells = spec.cell_count();
    let results: Vec<Result<f64, McError>> = (0..cells)
        .into_par_iter()
        .map(|cell| {
            let (x0, horizon) = spec.point(cell);
            estimate_point(&system, safe_set, &x0, horizon, n, dt, rng::derive_seed(seed, cell as u64))
        })
        .collect();
    let mut values = Vec::with_capacity(cells);
    let mut failures = Vec::new();
    for (cell, result) in results.into_iter().enumerate() {
        match result {
            Ok(v) => values.push(v),
            Err(e) => {
                values.push(f64::NAN);
                failures.push(CellFailure { cell_index: cell, message: e.to_string() });
            }
        }
    }
    let grid = ProbabilityGrid::new(spec.clone(), values, n, safe_set.mode(), GridSource::MonteCarlo)?;
    Ok(GridEstimate { grid, failures })
}

/// Uniform box filter over a planar grid (one state dimension plus time).
/// Each cell becomes the mean of its `kernel x kernel` neighborhood with
/// replicate padding at the edges. NaN cells poison their neighborhoods.
pub fn denoise_uniform(grid: &ProbabilityGrid, kernel: usize) -> Result<ProbabilityGrid, McError> {
    if grid.spec.state_dim() != 1 {
        return Err(McError::NotPlanar);
    }
    if kernel % 2 == 0 || kernel == 0 {
        return Err(McError::InvalidSpec(format!("kernel {kernel} must be odd and positive")));
    }
    let nx = grid.spec.state_steps[0];
    let nt = grid.spec.t_steps;
    if kernel > nx || kernel > nt {
        return Err(McError::KernelTooLarge { kernel, extent: nx.min(nt) });
    }
    let half = (kernel / 2) as isize;
    let mut values = vec![0.0; grid.values.len()];
    for ix in 0..nx {
        for it in 0..nt {
            let mut sum = 0.0;
            for dx in -half..=half {
                for dtw in -half..=half {
                    let jx = (ix as isize + dx).clamp(0, nx as isize - 1) as usize;
                    let jt = (it as isize + dtw).clamp(0, nt as isize - 1) as usize;
                    sum += grid.values[jx * nt + jt];
                }
            }
            values[ix * nt + it] = sum / (kernel * kernel) as f64;
        }
    }
    let mut out = grid.clone();
    out.values = values;
    out.source = GridSource::Denoised;
    Ok(out)
}

/// Central differences of the grid along one state axis:
/// `(F[i+1] - F[i-1]) / (2 dx)` on interior cells, NaN at the endpoints.
pub fn finite_diff_gradient(grid: &ProbabilityGrid, axis: usize) -> Result<GradientGrid, McError> {
    let d = grid.spec.state_dim();
    if axis >= d {
        return Err(McError::BadAxis { axis, state_dim: d });
    }
    let count = grid.spec.state_steps[axis];
    if count < 3 {
        return Err(McError::TooFewPoints { axis, count });
    }
    let dx = grid.spec.state_spacing(axis);
    let mut values = vec![f64::NAN; grid.values.len()];
    for cell in 0..grid.values.len() {
        let (mut idx, t_index) = grid.spec.unravel(cell);
        if idx[axis] == 0 || idx[axis] == count - 1 {
            continue;
        }
        idx[axis] += 1;
        let hi = grid.values[grid.spec.ravel(&idx, t_index)];
        idx[axis] -= 2;
        let lo = grid.values[grid.spec.ravel(&idx, t_index)];
        values[cell] = (hi - lo) / (2.0 * dx);
    }
    Ok(GradientGrid { spec: grid.spec.clone(), values, axis })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{builtin_system, BuiltinSystem};
    use approx::assert_relative_eq;

    fn drift1d() -> (SdeSystem, SafeSet) {
        builtin_system(BuiltinSystem::DriftDiffusion1D)
    }

    #[test]
    fn point_inside_safe_set_is_certain() {
        let (system, safe_set) = drift1d();
        let v = estimate_point(&system, &safe_set, &[3.0], 5.0, 10, 0.01, 1).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn zero_horizon_is_indicator() {
        let (system, safe_set) = drift1d();
        assert_eq!(estimate_point(&system, &safe_set, &[-1.0], 0.0, 10, 0.01, 1).unwrap(), 0.0);
        assert_eq!(estimate_point(&system, &safe_set, &[2.0], 0.0, 10, 0.01, 1).unwrap(), 1.0);
    }

    #[test]
    fn estimates_are_multiples_of_one_over_n() {
        let (system, safe_set) = drift1d();
        for n in [7u64, 33, 100] {
            let v = estimate_point(&system, &safe_set, &[-0.5], 1.0, n, 0.01, 9).unwrap();
            let scaled = v * n as f64;
            assert_relative_eq!(scaled, scaled.round(), epsilon = 1e-9);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn estimate_point_deterministic_across_pools() {
        let (system, safe_set) = drift1d();
        let v1 = estimate_point(&system, &safe_set, &[-1.0], 2.0, 3000, 0.01, 4).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let v2 = pool
            .install(|| estimate_point(&system, &safe_set, &[-1.0], 2.0, 3000, 0.01, 4).unwrap());
        assert_eq!(v1.to_bits(), v2.to_bits());
    }

    #[test]
    fn single_cell_grid() {
        let (system, safe_set) = drift1d();
        let spec = GridSpec {
            state_lo: vec![3.0],
            state_hi: vec![3.0],
            state_steps: vec![1],
            t_lo: 1.0,
            t_hi: 1.0,
            t_steps: 1,
            lambda: 1.0,
        };
        let est = estimate_grid(&system, &safe_set, &spec, 5, 0.01, 3).unwrap();
        assert_eq!(est.grid.values, vec![1.0]);
        assert!(est.failures.is_empty());
    }

    #[test]
    fn grid_cells_match_point_estimates() {
        // Permutation invariance: each cell only depends on its own derived
        // seed, so the grid must reproduce direct per-point calls.
        let (system, safe_set) = drift1d();
        let spec = GridSpec::planar(-3.0, -1.0, 3, 0.0, 2.0, 3, 1.0).unwrap();
        let est = estimate_grid(&system, &safe_set, &spec, 50, 0.01, 77).unwrap();
        for cell in [0usize, 4, 8, 5] {
            let (x0, horizon) = spec.point(cell);
            let direct = estimate_point(
                &system,
                &safe_set,
                &x0,
                horizon,
                50,
                0.01,
                rng::derive_seed(77, cell as u64),
            )
            .unwrap();
            assert_eq!(est.grid.values[cell], direct);
        }
    }

    #[test]
    fn failed_cells_become_nan_with_report() {
        use std::sync::Arc;
        let system = SdeSystem::new(
            1,
            0,
            0.0,
            vec![0.0],
            Arc::new(|x: &[f64], _u: &[f64], _l: f64, out: &mut [f64]| {
                // Blows up only for starting points near -2.
                out[0] = if x[0] < -1.5 { f64::NAN } else { 0.0 };
            }),
            Arc::new(|_: &[f64], _: &mut [f64]| {}),
        )
        .unwrap();
        let safe_set = SafeSet::new(Arc::new(|x: &[f64]| x[0] - 2.0), Mode::Recovery);
        let spec = GridSpec::planar(-2.0, 0.0, 2, 1.0, 1.0, 1, 0.0).unwrap();
        let est = estimate_grid(&system, &safe_set, &spec, 3, 0.1, 0).unwrap();
        assert!(est.grid.values[0].is_nan());
        assert!(!est.grid.values[1].is_nan());
        assert_eq!(est.failures.len(), 1);
        assert_eq!(est.failures[0].cell_index, 0);
        assert!(est.failures[0].message.contains("trajectory"));
    }

    fn constant_grid(c: f64, nx: usize, nt: usize) -> ProbabilityGrid {
        let spec = GridSpec::planar(0.0, 1.0, nx, 0.0, 1.0, nt, 0.0).unwrap();
        ProbabilityGrid::new(spec, vec![c; nx * nt], 10, Mode::Recovery, GridSource::MonteCarlo)
            .unwrap()
    }

    #[test]
    fn denoise_preserves_constants() {
        let grid = constant_grid(0.37, 5, 6);
        let smoothed = denoise_uniform(&grid, 3).unwrap();
        for v in &smoothed.values {
            assert_relative_eq!(*v, 0.37, epsilon = 1e-12);
        }
        assert_eq!(smoothed.source, GridSource::Denoised);
    }

    #[test]
    fn denoise_kernel_one_is_identity() {
        let (system, safe_set) = drift1d();
        let spec = GridSpec::planar(-4.0, -1.0, 4, 0.5, 2.0, 4, 1.0).unwrap();
        let grid = estimate_grid(&system, &safe_set, &spec, 20, 0.01, 5).unwrap().grid;
        let out = denoise_uniform(&grid, 1).unwrap();
        assert_eq!(out.values, grid.values);
    }

    #[test]
    fn denoise_center_spike() {
        let spec = GridSpec::planar(0.0, 1.0, 3, 0.0, 1.0, 3, 0.0).unwrap();
        let mut values = vec![0.0; 9];
        values[4] = 1.0;
        let grid =
            ProbabilityGrid::new(spec, values, 9, Mode::Recovery, GridSource::MonteCarlo).unwrap();
        let out = denoise_uniform(&grid, 3).unwrap();
        assert_relative_eq!(out.values[4], 1.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn denoise_stays_within_input_range() {
        let (system, safe_set) = drift1d();
        let spec = GridSpec::planar(-6.0, -1.0, 8, 0.0, 4.0, 9, 1.0).unwrap();
        let grid = estimate_grid(&system, &safe_set, &spec, 40, 0.01, 11).unwrap().grid;
        let out = denoise_uniform(&grid, 3).unwrap();
        let (lo, hi) = grid.values.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        for v in &out.values {
            assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    #[test]
    fn denoise_rejects_oversized_kernel() {
        let grid = constant_grid(0.5, 3, 8);
        assert!(matches!(
            denoise_uniform(&grid, 5),
            Err(McError::KernelTooLarge { kernel: 5, extent: 3 })
        ));
    }

    #[test]
    fn gradient_exact_on_affine_data() {
        let spec = GridSpec::planar(0.0, 2.0, 5, 0.0, 1.0, 3, 0.0).unwrap();
        let mut values = vec![0.0; spec.cell_count()];
        for cell in 0..values.len() {
            let (x, t) = spec.point(cell);
            values[cell] = 0.25 * x[0] + 0.1 * t;
        }
        let grid =
            ProbabilityGrid::new(spec, values, 1, Mode::Recovery, GridSource::Oracle).unwrap();
        let grad = finite_diff_gradient(&grid, 0).unwrap();
        for cell in 0..grad.values.len() {
            let (idx, _) = grad.spec.unravel(cell);
            if idx[0] == 0 || idx[0] == 4 {
                assert!(grad.values[cell].is_nan());
            } else {
                assert_relative_eq!(grad.values[cell], 0.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gradient_zero_on_constant_data() {
        let grid = constant_grid(0.8, 5, 4);
        let grad = finite_diff_gradient(&grid, 0).unwrap();
        for cell in 0..grad.values.len() {
            let (idx, _) = grad.spec.unravel(cell);
            if idx[0] != 0 && idx[0] != 4 {
                assert_eq!(grad.values[cell], 0.0);
            }
        }
    }

    #[test]
    fn gradient_axis_checks() {
        let grid = constant_grid(0.5, 5, 4);
        assert!(matches!(finite_diff_gradient(&grid, 1), Err(McError::BadAxis { .. })));
        let small = constant_grid(0.5, 2, 4);
        assert!(matches!(finite_diff_gradient(&small, 0), Err(McError::TooFewPoints { .. })));
    }

    #[test]
    fn ravel_unravel_round_trip() {
        let spec = GridSpec {
            state_lo: vec![0.0, -1.0, 2.0],
            state_hi: vec![1.0, 1.0, 2.0],
            state_steps: vec![3, 4, 1],
            t_lo: 0.0,
            t_hi: 1.0,
            t_steps: 5,
            lambda: 0.0,
        };
        spec.validate().unwrap();
        for flat in 0..spec.cell_count() {
            let (idx, t) = spec.unravel(flat);
            assert_eq!(spec.ravel(&idx, t), flat);
        }
        // Time varies fastest.
        let (_, t0) = spec.unravel(0);
        let (_, t1) = spec.unravel(1);
        assert_eq!(t0 + 1, t1);
    }
}
