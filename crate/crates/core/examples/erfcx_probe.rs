fn main() {
    for u in [24.999999f64, 25.000001] {
        let direct = libm::erfc(u) * (u * u).exp();
        let inv2u2 = 1.0 / (2.0 * u * u);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..=8 {
            term *= -((2 * n - 1) as f64) * inv2u2;
            sum += term;
        }
        let asym = sum / (u * std::f64::consts::PI.sqrt());
        println!(
            "u={u}: direct={direct:.17e} asym={asym:.17e} erfc={:.5e} exp={:.5e}",
            libm::erfc(u),
            (u * u).exp()
        );
    }
}
