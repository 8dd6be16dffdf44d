use pipe_core::netcore::{forward, forward_jet, init_glorot};
use std::time::Instant;

fn main() {
    let params = init_glorot(&[2, 32, 32, 32, 1], 3).unwrap();
    let input = [0.3, -0.5];

    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..100_000 {
        acc += forward(&params, &input).unwrap();
    }
    println!("forward: {:.2} us/call (acc {acc:.3})", t.elapsed().as_secs_f64() * 10.0);

    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..100_000 {
        acc += forward_jet(&params, &input).unwrap().value;
    }
    println!("forward_jet (incl ws alloc): {:.2} us/call (acc {acc:.3})", t.elapsed().as_secs_f64() * 10.0);

    // tanh cost alone
    let t = Instant::now();
    let mut acc = 0.0f64;
    let mut x = 0.5f64;
    for _ in 0..9_600_000 {
        x = (x * 1.0000001).tanh() + 0.3;
        acc += x;
    }
    println!("tanh: {:.1} ns/call (acc {acc:.0})", t.elapsed().as_secs_f64() * 1e9 / 9.6e6);
}
