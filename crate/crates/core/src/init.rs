//! Deterministic random number generation and weight-init distributions.
//!
//! Everything stochastic in the crate flows through [`Rng`], a ChaCha8 stream
//! cipher seeded either directly or through [`Rng::derive`], which mixes a
//! base seed with two context words (e.g. epoch and sample index) so that
//! independent streams never overlap.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Scalar, Tensor};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Self { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent stream for (`seed`, `stream`, `index`), e.g. per-epoch
    /// shuffles or per-sample augmentation draws.
    pub fn derive(seed: u64, stream: u64, index: u64) -> Self {
        Self::seeded(splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index))
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform in 0..n. n must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Standard normal (ziggurat; draw counts vary, as they already do for
    /// the truncated variant's rejection loop).
    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Normal(0, std) with rejection outside ±2·std.
    pub fn trunc_normal(&mut self, std: f64) -> f64 {
        loop {
            let z = self.standard_normal();
            if z.abs() <= 2.0 {
                return z * std;
            }
        }
    }

    pub fn fill_uniform<T: Scalar>(&mut self, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n).map(|_| T::from_f64(self.uniform(lo, hi))).collect();
        Tensor::new_unchecked(shape, data)
    }

    pub fn fill_normal<T: Scalar>(&mut self, shape: Vec<usize>, mean: f64, std: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n).map(|_| T::from_f64(self.normal(mean, std))).collect();
        Tensor::new_unchecked(shape, data)
    }

    pub fn fill_trunc_normal<T: Scalar>(&mut self, shape: Vec<usize>, std: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n).map(|_| T::from_f64(self.trunc_normal(std))).collect();
        Tensor::new_unchecked(shape, data)
    }

    /// Kaiming-normal with fan-out accounting: std = sqrt(2 / fan_out).
    pub fn fill_kaiming<T: Scalar>(&mut self, shape: Vec<usize>, fan_out: usize) -> Tensor<T> {
        assert!(fan_out > 0, "kaiming fan_out must be positive");
        self.fill_normal(shape, 0.0, (2.0 / fan_out as f64).sqrt())
    }
}
