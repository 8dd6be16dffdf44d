//! Ground-truth grids for the 1D drift-diffusion system.

use pipe_core::dynamics::Mode;
use pipe_core::montecarlo::{GradientGrid, GridSource, GridSpec, ProbabilityGrid};
use pipe_core::physics::{
    oracle_recovery_gradient, oracle_recovery_probability, DRIFT1D_BOUNDARY,
};

use crate::HarnessError;

/// Recovery probability on a lattice. Lattice points at or beyond the safe
/// boundary take the boundary value 1 (the `T = 0` corner there is excluded
/// from every metric).
pub fn oracle_grid(spec: &GridSpec) -> Result<ProbabilityGrid, HarnessError> {
    let mut values = Vec::with_capacity(spec.cell_count());
    for cell in 0..spec.cell_count() {
        let (state, t) = spec.point(cell);
        let x = state[0];
        let value = if x >= DRIFT1D_BOUNDARY {
            1.0
        } else {
            oracle_recovery_probability(x, t, spec.lambda)?
        };
        values.push(value);
    }
    Ok(ProbabilityGrid::new(spec.clone(), values, 0, Mode::Recovery, GridSource::Oracle)?)
}

/// Spatial derivative of the recovery probability on a lattice; NaN at and
/// beyond the boundary.
pub fn oracle_gradient_grid(spec: &GridSpec) -> Result<GradientGrid, HarnessError> {
    let mut values = Vec::with_capacity(spec.cell_count());
    for cell in 0..spec.cell_count() {
        let (state, t) = spec.point(cell);
        let x = state[0];
        let value = if x >= DRIFT1D_BOUNDARY {
            f64::NAN
        } else {
            oracle_recovery_gradient(x, t, spec.lambda)?
        };
        values.push(value);
    }
    Ok(GradientGrid { spec: spec.clone(), values, axis: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_hits_boundary_and_initial_values() {
        let spec = GridSpec::planar(-10.0, 2.0, 7, 0.0, 10.0, 3, 1.0).unwrap();
        let grid = oracle_grid(&spec).unwrap();
        for cell in 0..spec.cell_count() {
            let (state, t) = spec.point(cell);
            if state[0] >= 2.0 {
                assert_eq!(grid.values[cell], 1.0);
            } else if t == 0.0 {
                assert_eq!(grid.values[cell], 0.0);
            }
        }
    }
}
