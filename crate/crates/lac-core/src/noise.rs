//! Seeded randomness. Every experiment draws from named substreams of one
//! scenario seed so that results are reproducible bit-for-bit regardless of
//! worker count or execution order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::math;

/// Derive a deterministic substream from a base seed and a label.
///
/// The label and an extra index are folded into the seed with an FNV-1a
/// style hash, so `substream(s, "noise", 3)` is stable across platforms.
pub fn substream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    for b in index.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Uniform draw in `[0, 1)` built from the top 53 bits of a `u64`.
pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal via Box-Muller. Pairs are drawn but only the cosine leg
/// is returned; callers filling vectors should use [`fill_standard_normal`].
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = uniform(rng);
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * core::f64::consts::PI * u2)
}

/// Fill a slice with i.i.d. standard normals, consuming Box-Muller pairs.
pub fn fill_standard_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let mut i = 0;
    while i < out.len() {
        let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = uniform(rng);
        let r = math::sqrt(-2.0 * math::ln(u1));
        let th = 2.0 * core::f64::consts::PI * u2;
        out[i] = r * math::cos(th);
        i += 1;
        if i < out.len() {
            out[i] = r * math::sin(th);
            i += 1;
        }
    }
}
