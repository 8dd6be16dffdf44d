use pipe_core::dynamics::{builtin_system, BuiltinSystem, Mode};
use pipe_core::montecarlo::{estimate_grid, finite_diff_gradient, GridSpec};
use pipe_core::physics::{
    oracle_recovery_gradient, oracle_recovery_probability, BoundaryFace, Domain, PdeSpec,
};
use pipe_core::training::{predict_grid, sample_collocation, train, SampleCounts, TrainConfig};
use std::time::Instant;

fn oracle_at(x: f64, t: f64) -> f64 {
    if x >= 2.0 {
        1.0
    } else {
        oracle_recovery_probability(x, t, 1.0).unwrap()
    }
}

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let physics_points: usize =
        std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(3000);

    let (system, safe_set) = builtin_system(BuiltinSystem::DriftDiffusion1D);
    let data_spec = GridSpec::planar(-10.0, -2.0, 21, 0.0, 10.0, 21, 1.0).unwrap();
    let dataset = estimate_grid(&system, &safe_set, &data_spec, 1000, 0.01, 7).unwrap().grid;

    let spec = PdeSpec::new(
        system,
        safe_set,
        Domain::new(vec![-10.0], vec![2.0], 10.0),
        vec![BoundaryFace { dim: 0, value: 2.0, outward: 1.0, thickness: 0.0 }],
    )
    .unwrap();
    let config = TrainConfig {
        epochs,
        counts: SampleCounts { physics: physics_points, initial: 400, boundary: 400 },
        checkpoint_every: (epochs / 10).max(1),
        ..TrainConfig::default()
    };
    let sets =
        sample_collocation(&spec, config.counts, config.sample_seed, &[&dataset], None).unwrap();

    let t0 = Instant::now();
    let (params, report) = train(&config, &sets, &spec).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    println!("train: {secs:.1}s total, {:.2}ms/epoch", 1000.0 * secs / epochs as f64);

    let eval_spec = GridSpec::planar(-10.0, 2.0, 61, 0.0, 10.0, 101, 1.0).unwrap();
    for (epoch, ck) in &report.checkpoints {
        let grid = predict_grid(ck, &eval_spec, Mode::Recovery).unwrap();
        let mut mae = 0.0;
        let mut sup: f64 = 0.0;
        let mut count = 0usize;
        for cell in 0..eval_spec.cell_count() {
            let (state, t) = eval_spec.point(cell);
            let x = state[0];
            if t == 0.0 && (x - 2.0).abs() < 0.2 {
                continue;
            }
            let err = (grid.values[cell] - oracle_at(x, t)).abs();
            mae += err;
            sup = sup.max(err);
            count += 1;
        }
        let h = &report.history[epoch - 1];
        println!(
            "epoch {epoch:6}: mae={:.5} sup={:.4} L={:.3e} Lp={:.3e} Ld={:.3e} Lic={:.3e} Lbc={:.3e}",
            mae / count as f64,
            sup,
            h.total,
            h.physics,
            h.data,
            h.initial,
            h.boundary
        );
    }

    // Gradient comparison on the coarse lattice (paper style).
    let coarse = GridSpec::planar(-10.0, 2.0, 31, 0.0, 10.0, 21, 1.0).unwrap();
    let pipe_grid = predict_grid(&params, &coarse, Mode::Recovery).unwrap();
    let pipe_fd = finite_diff_gradient(&pipe_grid, 0).unwrap();
    let mc_fd = finite_diff_gradient(&dataset, 0).unwrap();
    let mut pipe_mae = 0.0;
    let mut count = 0usize;
    for cell in 0..coarse.cell_count() {
        if pipe_fd.values[cell].is_nan() {
            continue;
        }
        let (state, t) = coarse.point(cell);
        if t == 0.0 && (state[0] - 2.0).abs() < 0.4 {
            continue;
        }
        let truth = if state[0] >= 2.0 {
            f64::NAN
        } else {
            oracle_recovery_gradient(state[0], t, 1.0).unwrap()
        };
        if truth.is_nan() {
            continue;
        }
        pipe_mae += (pipe_fd.values[cell] - truth).abs();
        count += 1;
    }
    println!("pipe gradient mae (fd of grid): {:.5} over {count}", pipe_mae / count as f64);
    let mut mc_mae = 0.0;
    let mut count = 0usize;
    for cell in 0..data_spec.cell_count() {
        if mc_fd.values[cell].is_nan() {
            continue;
        }
        let (state, t) = data_spec.point(cell);
        let truth = oracle_recovery_gradient(state[0], t, 1.0).unwrap();
        if t == 0.0 {
            continue;
        }
        mc_mae += (mc_fd.values[cell] - truth).abs();
        count += 1;
    }
    println!("mc gradient mae (fd of data grid): {:.5} over {count}", mc_mae / count as f64);
}
