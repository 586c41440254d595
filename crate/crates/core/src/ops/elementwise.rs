//! Elementwise ops: binary add/mul with right-operand broadcasting, the three
//! activations, and scalar affine maps.
//!
//! Broadcasting contract: `b` must be right-aligned against `a`'s shape with
//! every axis either equal or 1 (missing leading axes count as 1); the output
//! always has `a`'s shape. Gradients reduce-sum back over the broadcast axes.

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

/// Per-axis element strides of `b` aligned to `a`'s shape, 0 where broadcast.
fn broadcast_strides(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if b.len() > a.len() {
        return Err(Error::shape(op, format!("operand rank {} exceeds target rank {}", b.len(), a.len())));
    }
    let offset = a.len() - b.len();
    let mut strides = vec![0usize; a.len()];
    let mut stride = 1;
    for i in (0..b.len()).rev() {
        let (ad, bd) = (a[offset + i], b[i]);
        if bd == ad {
            strides[offset + i] = stride;
        } else if bd != 1 {
            return Err(Error::shape(
                op,
                format!("axis {}: extent {} does not broadcast into {} (shapes {:?} vs {:?})", i, bd, ad, a, b),
            ));
        }
        stride *= bd;
    }
    Ok(strides)
}

/// Walk every element of the `a_shape` index space, handing (a_index, b_index)
/// pairs to `f`, with the inner loop contiguous in `a`.
fn for_each_pair(a_shape: &[usize], b_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    if a_shape.is_empty() {
        f(0, 0);
        return;
    }
    let rank = a_shape.len();
    let inner = a_shape[rank - 1];
    let inner_stride = b_strides[rank - 1];
    let outer: usize = a_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    let mut b_base = 0usize;
    for o in 0..outer {
        let a_base = o * inner;
        if inner_stride == 0 {
            for j in 0..inner {
                f(a_base + j, b_base);
            }
        } else {
            for j in 0..inner {
                f(a_base + j, b_base + j);
            }
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            b_base += b_strides[ax];
            if idx[ax] < a_shape[ax] {
                break;
            }
            b_base -= b_strides[ax] * a_shape[ax];
            idx[ax] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Mul,
}

fn binary_broadcast<T: Scalar>(
    tape: &Tape<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    kind: BinKind,
) -> Result<Tensor<T>> {
    let op = match kind {
        BinKind::Add => "add",
        BinKind::Mul => "mul",
    };
    let strides = broadcast_strides(op, a.shape(), b.shape())?;
    let a_shape = a.shape().to_vec();
    let mut out = vec![T::ZERO; a.numel()];
    {
        let ad = a.data();
        let bd = b.data();
        if a.shape() == b.shape() {
            match kind {
                BinKind::Add => {
                    for ((o, &x), &y) in out.iter_mut().zip(ad.iter()).zip(bd.iter()) {
                        *o = x + y;
                    }
                }
                BinKind::Mul => {
                    for ((o, &x), &y) in out.iter_mut().zip(ad.iter()).zip(bd.iter()) {
                        *o = x * y;
                    }
                }
            }
        } else if b.numel() == 1 {
            let v = bd[0];
            match kind {
                BinKind::Add => {
                    for (o, &x) in out.iter_mut().zip(ad.iter()) {
                        *o = x + v;
                    }
                }
                BinKind::Mul => {
                    for (o, &x) in out.iter_mut().zip(ad.iter()) {
                        *o = x * v;
                    }
                }
            }
        } else if a.numel() % b.numel() == 0
            && a.shape()[a.rank() - b.rank()..] == *b.shape()
        {
            // b tiles over the leading axes (e.g. positional embedding 1×N×D
            // added to B×N×D): chunked contiguous fast path.
            for (chunk, o_chunk) in ad.chunks_exact(bd.len()).zip(out.chunks_exact_mut(bd.len())) {
                match kind {
                    BinKind::Add => {
                        for ((o, &x), &y) in o_chunk.iter_mut().zip(chunk).zip(bd.iter()) {
                            *o = x + y;
                        }
                    }
                    BinKind::Mul => {
                        for ((o, &x), &y) in o_chunk.iter_mut().zip(chunk).zip(bd.iter()) {
                            *o = x * y;
                        }
                    }
                }
            }
        } else if a.rank() == 4 && b.rank() == 4 && b.dim(0) == a.dim(0) && b.dim(1) == a.dim(1) && b.dim(2) == 1 && b.dim(3) == 1 {
            // Channel map scaled/shifted by per-(batch, channel) values — the
            // channel-attention hot path.
            let spatial = a.dim(2) * a.dim(3);
            for (bc, (chunk, o_chunk)) in
                ad.chunks_exact(spatial).zip(out.chunks_exact_mut(spatial)).enumerate()
            {
                let v = bd[bc];
                match kind {
                    BinKind::Add => {
                        for (o, &x) in o_chunk.iter_mut().zip(chunk) {
                            *o = x + v;
                        }
                    }
                    BinKind::Mul => {
                        for (o, &x) in o_chunk.iter_mut().zip(chunk) {
                            *o = x * v;
                        }
                    }
                }
            }
        } else {
            match kind {
                BinKind::Add => for_each_pair(&a_shape, &strides, |ai, bi| out[ai] = ad[ai] + bd[bi]),
                BinKind::Mul => for_each_pair(&a_shape, &strides, |ai, bi| out[ai] = ad[ai] * bd[bi]),
            }
        }
    }
    let out = Tensor::new_unchecked(a_shape.clone(), out);

    if tape.is_recording() {
        let an = tape.node_of(a);
        let bn = tape.node_of(b);
        if an.is_some() || bn.is_some() {
            let (need_da, need_db) = (an.is_some(), bn.is_some());
            let (ac, bc) = (a.clone(), b.clone());
            let b_numel = b.numel();
            tape.record(
                &out,
                vec![an, bn],
                Box::new(move |g| match kind {
                    BinKind::Add => {
                        let da = need_da.then(|| g.to_vec());
                        let db = need_db.then(|| {
                            let mut db = vec![T::ZERO; b_numel];
                            for_each_pair(ac.shape(), &strides, |ai, bi| db[bi] += g[ai]);
                            db
                        });
                        vec![da, db]
                    }
                    BinKind::Mul => {
                        let ad = ac.data();
                        let bd = bc.data();
                        let da = need_da.then(|| {
                            let mut da = vec![T::ZERO; ad.len()];
                            for_each_pair(ac.shape(), &strides, |ai, bi| da[ai] = g[ai] * bd[bi]);
                            da
                        });
                        let db = need_db.then(|| {
                            let mut db = vec![T::ZERO; b_numel];
                            for_each_pair(ac.shape(), &strides, |ai, bi| db[bi] += g[ai] * ad[ai]);
                            db
                        });
                        vec![da, db]
                    }
                }),
            );
        }
    }
    Ok(out)
}

pub fn add<T: Scalar>(tape: &Tape<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary_broadcast(tape, a, b, BinKind::Add)
}

pub fn mul<T: Scalar>(tape: &Tape<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary_broadcast(tape, a, b, BinKind::Mul)
}

/// y = scale·x + shift with plain scalars; the workhorse for loss weighting
/// and attention scaling.
pub fn affine<T: Scalar>(tape: &Tape<T>, x: &Tensor<T>, scale: T, shift: T) -> Result<Tensor<T>> {
    let out: Vec<T> = x.data().iter().map(|&v| v * scale + shift).collect();
    let out = Tensor::new_unchecked(x.shape().to_vec(), out);
    if tape.is_recording() {
        if let Some(xn) = tape.node_of(x) {
            tape.record(
                &out,
                vec![Some(xn)],
                Box::new(move |g| vec![Some(g.iter().map(|&v| v * scale).collect())]),
            );
        }
    }
    Ok(out)
}

pub fn relu<T: Scalar>(tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let out: Vec<T> = x.data().iter().map(|&v| v.max(T::ZERO)).collect();
    let out = Tensor::new_unchecked(x.shape().to_vec(), out);
    if tape.is_recording() {
        if let Some(xn) = tape.node_of(x) {
            let xc = x.clone();
            tape.record(
                &out,
                vec![Some(xn)],
                Box::new(move |g| {
                    // subgradient at exactly 0 is 0
                    let xd = xc.data();
                    vec![Some(
                        g.iter().zip(xd.iter()).map(|(&gv, &xv)| if xv > T::ZERO { gv } else { T::ZERO }).collect(),
                    )]
                }),
            );
        }
    }
    Ok(out)
}

#[inline]
fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

pub fn sigmoid<T: Scalar>(tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let out: Vec<T> = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    let out = Tensor::new_unchecked(x.shape().to_vec(), out);
    if tape.is_recording() {
        if let Some(xn) = tape.node_of(x) {
            let yc = out.clone();
            tape.record(
                &out,
                vec![Some(xn)],
                Box::new(move |g| {
                    let yd = yc.data();
                    vec![Some(
                        g.iter().zip(yd.iter()).map(|(&gv, &yv)| gv * yv * (T::ONE - yv)).collect(),
                    )]
                }),
            );
        }
    }
    Ok(out)
}

// tanh-form GELU; the analytic derivative below is the exact derivative of
// this expression, so finite-difference checks are self-consistent.
const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

#[inline]
fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::ONE + u.tanh())
}

#[inline]
fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (T::ONE + three * a * x * x);
    half * (T::ONE + t) + half * x * (T::ONE - t * t) * du
}

pub fn gelu<T: Scalar>(tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let out: Vec<T> = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    let out = Tensor::new_unchecked(x.shape().to_vec(), out);
    if tape.is_recording() {
        if let Some(xn) = tape.node_of(x) {
            let xc = x.clone();
            tape.record(
                &out,
                vec![Some(xn)],
                Box::new(move |g| {
                    let xd = xc.data();
                    vec![Some(
                        g.iter().zip(xd.iter()).map(|(&gv, &xv)| gv * gelu_grad_scalar(xv)).collect(),
                    )]
                }),
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;
    use crate::testutil::{assert_grad_matches_fd, seeded_tensor};

    #[test]
    fn relu_and_sigmoid_values() {
        let tape = Tape::no_grad();
        let x = Tensor::<f64>::from_vec(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&tape, &x).unwrap().to_vec(), vec![0.0, 0.0, 2.0]);
        let s = sigmoid(&tape, &Tensor::<f64>::scalar(0.0)).unwrap();
        assert_eq!(s.item(), 0.5);
        // strictly inside (0,1) even far out
        let far = sigmoid(&tape, &Tensor::<f64>::from_vec(vec![2], vec![-500.0, 500.0]).unwrap()).unwrap();
        assert!(far.to_vec()[0] > 0.0 && far.to_vec()[1] < 1.0 + 1e-15);
        assert!(far.all_finite());
    }

    #[test]
    fn activation_gradients_match_fd() {
        // keep relu inputs away from the kink
        let x = Tensor::<f64>::from_vec(vec![6], vec![-1.5, -0.4, 0.3, 0.9, 2.0, -2.5]).unwrap();
        assert_grad_matches_fd(&[&x], |t, i| relu(t, &i[0]), 1e-6);
        let x = seeded_tensor::<f64>(vec![2, 5], 7, 1.5);
        assert_grad_matches_fd(&[&x], |t, i| gelu(t, &i[0]), 1e-6);
        assert_grad_matches_fd(&[&x], |t, i| sigmoid(t, &i[0]), 1e-6);
        assert_grad_matches_fd(&[&x], |t, i| affine(t, &i[0], 2.5, -0.3), 1e-7);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let tape = Tape::no_grad();
        let x = seeded_tensor::<f64>(vec![2, 3, 4, 4], 9, 1.0);
        let ones = Tensor::<f64>::full(vec![2, 3, 1, 1], 1.0);
        let y = mul(&tape, &x, &ones).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn broadcast_mul_gradients_match_fd() {
        // channel-attention pattern: (B,C,h,w) × (B,C,1,1)
        let a = seeded_tensor::<f64>(vec![2, 3, 4, 4], 11, 1.0);
        let b = seeded_tensor::<f64>(vec![2, 3, 1, 1], 12, 1.0);
        assert_grad_matches_fd(&[&a, &b], |t, i| mul(t, &i[0], &i[1]), 1e-7);
        // positional-embedding pattern: (B,N,D) + (1,N,D)
        let a = seeded_tensor::<f64>(vec![3, 4, 5], 13, 1.0);
        let b = seeded_tensor::<f64>(vec![1, 4, 5], 14, 1.0);
        assert_grad_matches_fd(&[&a, &b], |t, i| add(t, &i[0], &i[1]), 1e-7);
        // scalar and ragged-rank broadcast
        let b = seeded_tensor::<f64>(vec![5], 15, 1.0);
        assert_grad_matches_fd(&[&a, &b], |t, i| mul(t, &i[0], &i[1]), 1e-7);
        let b = Tensor::<f64>::scalar(0.7);
        assert_grad_matches_fd(&[&a, &b], |t, i| add(t, &i[0], &i[1]), 1e-7);
    }

    #[test]
    fn broadcast_matches_generic_walker() {
        // fast path vs generic: force generic by an irregular pattern (1,3,1,4)
        let tape = Tape::no_grad();
        let a = seeded_tensor::<f64>(vec![2, 3, 2, 4], 21, 1.0);
        let b = seeded_tensor::<f64>(vec![1, 3, 1, 4], 22, 1.0);
        let y = mul(&tape, &a, &b).unwrap();
        let (ad, bd, yd) = (a.to_vec(), b.to_vec(), y.to_vec());
        for b0 in 0..2 {
            for c in 0..3 {
                for h in 0..2 {
                    for w in 0..4 {
                        let ai = ((b0 * 3 + c) * 2 + h) * 4 + w;
                        let bi = c * 4 + w;
                        assert_eq!(yd[ai], ad[ai] * bd[bi]);
                    }
                }
            }
        }
    }

    #[test]
    fn incompatible_broadcast_is_rejected() {
        let tape = Tape::<f64>::no_grad();
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::<f64>::zeros(vec![2, 2]);
        let err = add(&tape, &a, &b).unwrap_err();
        assert!(err.to_string().contains("broadcast"), "{err}");
    }

    #[test]
    fn add_fanout_through_same_tensor() {
        let tape = Tape::new();
        let x = seeded_tensor::<f64>(vec![4], 30, 1.0);
        x.set_requires_grad(true);
        let y = add(&tape, &x, &x).unwrap();
        let loss = ops::sum_all(&tape, &y);
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 4]);
    }
}
