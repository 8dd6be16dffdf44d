use pipe_core::netcore::{init_glorot, loss_param_gradient, JetCotangent, JetLoss, NetJet};
use std::time::Instant;

struct Residualish { input: Vec<f64> }
impl JetLoss for Residualish {
    fn input(&self) -> &[f64] { &self.input }
    fn loss(&self, jet: &NetJet) -> f64 {
        let r = jet.input_grad[1] - jet.input_grad[0] - 0.5 * jet.input_hess_diag[0];
        r * r
    }
    fn cotangent_into(&self, jet: &NetJet, cot: &mut JetCotangent) {
        let r = jet.input_grad[1] - jet.input_grad[0] - 0.5 * jet.input_hess_diag[0];
        cot.grad[1] = 2.0 * r;
        cot.grad[0] = -2.0 * r;
        cot.hess[0] = -r;
    }
}

fn main() {
    let params = init_glorot(&[2, 32, 32, 32, 1], 3).unwrap();
    let terms: Vec<Residualish> = (0..8192)
        .map(|i| Residualish { input: vec![(i % 61) as f64 / 61.0, (i % 101) as f64 / 101.0] })
        .collect();
    for threads in [1usize, 2] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let t = Instant::now();
            for _ in 0..5 {
                loss_param_gradient(&params, &terms).unwrap();
            }
            println!(
                "{threads} threads: {:.2} us/point",
                t.elapsed().as_secs_f64() * 1e6 / (5.0 * 8192.0)
            );
        });
    }
}
