//! Shared helpers for unit tests: seeded tensor construction and a central
//! finite-difference gradient checker.

use crate::error::Result;
use crate::init::Rng;
use crate::ops::{mul, sum_all};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

pub fn seeded_tensor<T: Scalar>(shape: Vec<usize>, seed: u64, scale: f64) -> Tensor<T> {
    let mut rng = Rng::seeded(seed);
    rng.fill_uniform(shape, -scale, scale)
}

/// Check the tape gradient of `f` against central finite differences for
/// every element of every input.
///
/// The (possibly non-scalar) output is projected to a scalar with fixed
/// random weights so that all output elements contribute. An element passes
/// when |analytic − numeric| ≤ max(1e-8, tol·max(|analytic|, |numeric|)).
pub fn assert_grad_matches_fd<F>(inputs: &[&Tensor<f64>], f: F, tol: f64)
where
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let owned: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|t| Tensor::from_vec(t.shape().to_vec(), t.to_vec()).unwrap())
        .collect();
    for t in &owned {
        t.set_requires_grad(true);
        t.zero_grad();
    }

    let tape = Tape::new();
    let out = f(&tape, &owned).expect("forward failed under gradient tape");
    let mut rng = Rng::seeded(0x9E37_79B9_7F4A_7C15);
    let weights: Vec<f64> = (0..out.numel())
        .map(|_| {
            let sign = if rng.chance(0.5) { 1.0 } else { -1.0 };
            sign * rng.uniform(0.25, 1.0)
        })
        .collect();
    let w = Tensor::from_vec(out.shape().to_vec(), weights.clone()).unwrap();
    let loss = sum_all(&tape, &mul(&tape, &out, &w).unwrap());
    tape.backward(&loss).expect("backward failed");
    let analytic: Vec<Vec<f64>> = owned
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let tape = Tape::no_grad();
        let out = f(&tape, tensors).expect("forward failed under finite differences");
        out.to_vec().iter().zip(&weights).map(|(a, b)| a * b).sum()
    };

    let h = 1e-5;
    for (ti, t) in owned.iter().enumerate() {
        for j in 0..t.numel() {
            let orig = t.data()[j];
            t.data_mut()[j] = orig + h;
            let plus = eval(&owned);
            t.data_mut()[j] = orig - h;
            let minus = eval(&owned);
            t.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[ti][j];
            let err = (a - numeric).abs();
            let bound = (1e-8f64).max(tol * a.abs().max(numeric.abs()));
            assert!(
                err <= bound,
                "input {ti} element {j}: analytic {a:.9e} vs numeric {numeric:.9e} (err {err:.3e}, bound {bound:.3e})"
            );
        }
    }
}
