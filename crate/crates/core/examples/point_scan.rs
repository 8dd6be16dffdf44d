use pipe_core::physics::{oracle_recovery_gradient, oracle_recovery_probability};

fn main() {
    // Candidate lattice: x in {-8..0 step 0.5}, T in {2..10 step 1}.
    // Score = predicted endpoint-detection bias + 3.2 sigma binomial noise.
    const N: f64 = 1e5;
    const SHIFT: f64 = 0.5826 * 0.0316227766; // 0.5826 * sqrt(dt), dt = 1e-3
    for lambda in [0.0f64, 1.0] {
        let mut rows = Vec::new();
        for i in 0..17 {
            let x = -8.0 + 0.5 * i as f64;
            for j in 0..9 {
                let t = 2.0 + 1.0 * j as f64;
                let f = oracle_recovery_probability(x, t, lambda).unwrap();
                if !(0.07..=0.93).contains(&f) {
                    continue;
                }
                let grad = oracle_recovery_gradient(x, t, lambda).unwrap().abs();
                let score = grad * SHIFT + 3.2 * (f * (1.0 - f) / N).sqrt();
                // Rough cost in steps: full horizon unless absorbed early.
                let cost = t * (1.0 - 0.6 * f);
                rows.push((score, cost, x, t, f, grad));
            }
        }
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        println!("lambda = {lambda}");
        for (score, cost, x, t, f, grad) in rows.iter().take(14) {
            println!(
                "  x={x:5.1} T={t:4.1} F={f:.4} |grad|={grad:.4} score={score:.5} cost~{cost:.1}"
            );
        }
    }
}
