//! Seedable Gaussian noise.
//!
//! Every random draw in the crate goes through [`GaussianStream`], so a
//! `(seed, call order)` pair fully determines the output bit for bit.
//!
//! Algorithm: a ChaCha20 stream (`rand_chacha::ChaCha20Rng::seed_from_u64`)
//! produces uniform `f64` values in `[0, 1)` using rand's 53-bit mantissa
//! conversion. Standard normals come from the Box–Muller transform applied
//! to consecutive pairs `(u1, u2)`:
//!
//! ```text
//! r  = sqrt(-2 ln(1 - u1))
//! z0 = r cos(2π u2)      (returned first)
//! z1 = r sin(2π u2)      (cached, returned on the next call)
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform sample in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Standard normal sample.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        self.fill_normal(&mut v);
        v
    }
}

/// Derives an independent child seed from a base seed and a path of tags
/// (SplitMix64 finalizer applied per tag).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut h = base;
    for &t in tags {
        h = splitmix(h ^ splitmix(t.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
