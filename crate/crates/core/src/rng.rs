//! Seeded randomness with labeled derivation.
//!
//! All randomness in the crate flows from one root seed through
//! [`derive_seed`]; there is no global RNG. A component asks for a stream
//! by name plus indices (`derive_rng(root, "mix", &[epoch, sample])`),
//! which makes parallel and serial execution agree bit-exactly and lets
//! training resume mid-run without serializing generator state.

use rand::Rng;
pub use rand_chacha::rand_core::RngCore;
use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

use crate::math;

/// A ChaCha8 stream from a raw seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// splitmix64 finalizer; good avalanche for seed mixing.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes.
fn hash_label(label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derives a child seed from `(root, label, indices)`.
pub fn derive_seed(root: u64, label: &str, indices: &[u64]) -> u64 {
    let mut s = mix64(root ^ hash_label(label));
    for &ix in indices {
        s = mix64(s ^ ix.wrapping_mul(0x2545f4914f6cdd1d));
    }
    s
}

/// A ChaCha8 stream for the given derivation labels.
pub fn derive_rng(root: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, indices))
}

/// Standard normal sample via Box-Muller.
pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Uniform in (0, 1]: never zero, so ln() stays finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * core::f64::consts::PI * u2)
}

/// Fills a slice with standard normal samples.
pub fn fill_gaussian(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = gaussian(rng);
    }
}

/// Fisher-Yates shuffle of index order.
pub fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    if items.len() < 2 {
        return;
    }
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
