use lac_core::lqc::{self, LqcGains};
use lac_core::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_core::RngCore;

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Random stabilizable instance with positive-definite weights. Unstable
/// draws that defeat the Riccati iteration are resampled.
pub fn random_lqc(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize) -> LqcGains {
    loop {
        let a = DMatrix::from_fn(n, n, |_, _| 0.6 * normal(rng));
        let b = DMatrix::from_fn(n, m, |_, _| normal(rng));
        let c = DMatrix::from_fn(n, n, |_, _| normal(rng));
        let d = DMatrix::from_fn(m, m, |_, _| normal(rng));
        let q = &c.transpose() * &c + DMatrix::identity(n, n) * 0.1;
        let r = &d.transpose() * &d + DMatrix::identity(m, m) * 0.1;
        let q = (&q + q.transpose()) * 0.5;
        let r = (&r + r.transpose()) * 0.5;
        if let Ok(g) = lqc::solve_dare(&a, &b, &q, &r, horizon) {
            return g;
        }
    }
}
