use pipe_core::netcore::{
    init_glorot, loss_param_gradient, squared_error_gradient, FitPoint, JetCotangent, JetLoss,
    NetJet,
};
use std::time::Instant;

struct Residualish {
    input: Vec<f64>,
}
impl JetLoss for Residualish {
    fn input(&self) -> &[f64] {
        &self.input
    }
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
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let params = init_glorot(&[2, 32, 32, 32, 1], 3).unwrap();
        let terms: Vec<Residualish> = (0..4096)
            .map(|i| Residualish { input: vec![(i % 61) as f64 / 61.0, (i % 101) as f64 / 101.0] })
            .collect();
        let t = Instant::now();
        for _ in 0..5 {
            loss_param_gradient(&params, &terms).unwrap();
        }
        println!("jet grad: {:.2} us/point (single thread)", t.elapsed().as_secs_f64() * 1e6 / (5.0 * 4096.0));

        let points: Vec<FitPoint> = (0..4096)
            .map(|i| FitPoint { input: vec![(i % 61) as f64 / 61.0, (i % 101) as f64 / 101.0], target: 0.5 })
            .collect();
        let t = Instant::now();
        for _ in 0..5 {
            squared_error_gradient(&params, &points).unwrap();
        }
        println!("fit grad: {:.2} us/point (single thread)", t.elapsed().as_secs_f64() * 1e6 / (5.0 * 4096.0));
    });
}
