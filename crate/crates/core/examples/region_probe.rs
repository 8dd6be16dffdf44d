use pipe_core::dynamics::{builtin_system, BuiltinSystem};
use pipe_core::montecarlo::estimate_point;
use pipe_core::physics::oracle_recovery_probability;
use std::time::Instant;

fn region_mean(x_lo: f64, x_hi: f64, t_lo: f64, t_hi: f64, dx: f64, dt: f64) -> f64 {
    let nx = ((x_hi - x_lo) / dx).round() as usize + 1;
    let nt = ((t_hi - t_lo) / dt).round() as usize + 1;
    let mut sum = 0.0;
    for i in 0..nx {
        for j in 0..nt {
            let x = x_lo + dx * i as f64;
            let t = t_lo + dt * j as f64;
            sum += oracle_recovery_probability(x, t, 1.0).unwrap();
        }
    }
    sum / (nx * nt) as f64
}

fn main() {
    println!("normal region mean = {:.4}", region_mean(-6.0, -2.0, 4.0, 6.0, 0.2, 0.1));
    println!("rare region mean   = {:.4}", region_mean(-2.0, 0.0, 8.0, 10.0, 0.2, 0.1));

    // MC vs oracle at one point, timing the trajectory loop.
    let (system, safe_set) = builtin_system(BuiltinSystem::DriftDiffusion1D);
    let start = Instant::now();
    let mc = estimate_point(&system, &safe_set, &[-1.0], 4.0, 100_000, 1e-3, 42).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let oracle = oracle_recovery_probability(-1.0, 4.0, 1.0).unwrap();
    println!("x=-1 T=4: mc={mc:.5} oracle={oracle:.5} diff={:+.5} ({secs:.1}s for 1e5 traj)", mc - oracle);

    let start = Instant::now();
    let mc2 = estimate_point(&system, &safe_set, &[-3.0], 8.0, 100_000, 1e-3, 42).unwrap();
    let secs2 = start.elapsed().as_secs_f64();
    let oracle2 = oracle_recovery_probability(-3.0, 8.0, 1.0).unwrap();
    println!("x=-3 T=8: mc={mc2:.5} oracle={oracle2:.5} diff={:+.5} ({secs2:.1}s)", mc2 - oracle2);
}
