//! Softmax along an arbitrary axis, max-subtracted for stability.

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

fn geometry<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<(usize, usize, usize)> {
    let xs = x.shape();
    if axis >= xs.len() {
        return Err(Error::shape(
            "softmax",
            format!("axis {axis} out of range for shape {:?}", xs),
        ));
    }
    let dim = xs[axis];
    let outer: usize = xs[..axis].iter().product();
    let inner: usize = xs[axis + 1..].iter().product();
    Ok((dim, outer, inner))
}

fn softmax_slices<T: Scalar>(data: &mut [T], dim: usize, outer: usize, inner: usize) {
    if inner == 1 {
        // contiguous rows — the common case (attention scores, logits-last)
        for o in 0..outer {
            let row = &mut data[o * dim..(o + 1) * dim];
            let mut mx = row[0];
            for &v in &row[1..] {
                mx = mx.max(v);
            }
            let mut sum = T::ZERO;
            for e in row.iter_mut() {
                let ev = (*e - mx).exp();
                *e = ev;
                sum += ev;
            }
            let inv = T::ONE / sum;
            for e in row.iter_mut() {
                *e = *e * inv;
            }
        }
    } else {
        for o in 0..outer {
            for i in 0..inner {
                let base = o * dim * inner + i;
                let mut mx = data[base];
                for j in 1..dim {
                    mx = mx.max(data[base + j * inner]);
                }
                let mut sum = T::ZERO;
                for j in 0..dim {
                    let idx = base + j * inner;
                    let ev = (data[idx] - mx).exp();
                    data[idx] = ev;
                    sum += ev;
                }
                let inv = T::ONE / sum;
                for j in 0..dim {
                    let idx = base + j * inner;
                    data[idx] = data[idx] * inv;
                }
            }
        }
    }
}

fn finish<T: Scalar>(
    tape: &Tape<T>,
    out: Tensor<T>,
    xn: Option<usize>,
    dim: usize,
    outer: usize,
    inner: usize,
) -> Tensor<T> {
    tape.add_flops((out.numel() as u64) * 4);
    if tape.is_recording() {
        if let Some(xn) = xn {
            let y = out.clone();
            tape.record(
                &out,
                vec![Some(xn)],
                Box::new(move |g| {
                    // dx = y ⊙ (g − Σ_axis g·y), per slice
                    let yd = y.data();
                    let mut dx = vec![T::ZERO; yd.len()];
                    if inner == 1 {
                        for o in 0..outer {
                            let r = o * dim..(o + 1) * dim;
                            let (yrow, grow) = (&yd[r.clone()], &g[r.clone()]);
                            let mut dot = T::ZERO;
                            for (&yv, &gv) in yrow.iter().zip(grow) {
                                dot += yv * gv;
                            }
                            for ((d, &yv), &gv) in dx[r].iter_mut().zip(yrow).zip(grow) {
                                *d = yv * (gv - dot);
                            }
                        }
                    } else {
                        for o in 0..outer {
                            for i in 0..inner {
                                let base = o * dim * inner + i;
                                let mut dot = T::ZERO;
                                for j in 0..dim {
                                    dot += yd[base + j * inner] * g[base + j * inner];
                                }
                                for j in 0..dim {
                                    let idx = base + j * inner;
                                    dx[idx] = yd[idx] * (g[idx] - dot);
                                }
                            }
                        }
                    }
                    vec![Some(dx)]
                }),
            );
        }
    }
    out
}

pub fn softmax<T: Scalar>(tape: &Tape<T>, x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (dim, outer, inner) = geometry(x, axis)?;
    let xn = tape.node_of(x);
    let mut out = x.to_vec();
    softmax_slices(&mut out, dim, outer, inner);
    let out = Tensor::new_unchecked(x.shape().to_vec(), out);
    Ok(finish(tape, out, xn, dim, outer, inner))
}

/// Softmax that reuses `x`'s buffer instead of allocating when this handle is
/// the buffer's sole owner — the peak-memory path for large attention score
/// maps. Falls back to the allocating path (identical results) whenever the
/// tensor is aliased by a clone, a view, or a leaf registration.
pub fn softmax_owned<T: Scalar>(tape: &Tape<T>, x: Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (dim, outer, inner) = geometry(&x, axis)?;
    let xn = tape.node_of(&x);
    match x.try_take() {
        Ok((shape, mut data)) => {
            softmax_slices(&mut data, dim, outer, inner);
            let out = Tensor::new_unchecked(shape, data);
            Ok(finish(tape, out, xn, dim, outer, inner))
        }
        Err(x) => {
            let mut out = x.to_vec();
            softmax_slices(&mut out, dim, outer, inner);
            let out = Tensor::new_unchecked(x.shape().to_vec(), out);
            Ok(finish(tape, out, xn, dim, outer, inner))
        }
    }
}
