//! Property tests for dataset persistence.

use proptest::prelude::*;

use pipe_core::dynamics::Mode;
use pipe_core::montecarlo::dataset::{parse_dataset, render_dataset};
use pipe_core::montecarlo::{GridSource, GridSpec, ProbabilityGrid};

fn arb_grid() -> impl Strategy<Value = ProbabilityGrid> {
    (
        2usize..6,
        2usize..6,
        -100i64..100,
        1u64..10_000,
        prop::bool::ANY,
        -20i64..20,
    )
        .prop_flat_map(|(nx, nt, origin, n, recovery, lambda_q)| {
            let lo = origin as f64 * 0.1;
            let spec = GridSpec::planar(
                lo,
                lo + 3.7,
                nx,
                0.0,
                8.25,
                nt,
                lambda_q as f64 * 0.25,
            )
            .unwrap();
            let cells = spec.cell_count();
            (
                Just(spec),
                prop::collection::vec(
                    prop_oneof![9 => (0u64..=1_000).prop_map(Some), 1 => Just(None)],
                    cells,
                ),
                Just(n),
                Just(recovery),
            )
        })
        .prop_map(|(spec, raw, n, recovery)| {
            let values: Vec<f64> = raw
                .into_iter()
                .map(|cell| match cell {
                    // Monte Carlo values are multiples of 1/N; NaN marks a
                    // failed cell.
                    Some(k) => (k.min(n) as f64) / n as f64,
                    None => f64::NAN,
                })
                .collect();
            let mode = if recovery { Mode::Recovery } else { Mode::Safety };
            ProbabilityGrid::new(spec, values, n, mode, GridSource::MonteCarlo).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_read_is_identity(grid in arb_grid()) {
        let text = render_dataset(&grid);
        let back = parse_dataset(&text).unwrap();
        // NaN != NaN, so compare cell-wise.
        prop_assert_eq!(&grid.spec, &back.spec);
        prop_assert_eq!(grid.sample_count, back.sample_count);
        prop_assert_eq!(grid.mode, back.mode);
        for (a, b) in grid.values.iter().zip(&back.values) {
            prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
        // And the render of the parse is byte-identical.
        prop_assert_eq!(text, render_dataset(&back));
    }
}
