//! Reductions: full-tensor sum/mean and spatial global average pooling.

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

pub fn sum_all<T: Scalar>(tape: &Tape<T>, x: &Tensor<T>) -> Tensor<T> {
    let mut s = T::ZERO;
    for &v in x.data().iter() {
        s += v;
    }
    let out = Tensor::scalar(s);
    if tape.is_recording() {
        if let Some(xn) = tape.node_of(x) {
            let n = x.numel();
            tape.record(
                &out,
                vec![Some(xn)],
                Box::new(move |g| vec![Some(vec![g[0]; n])]),
            );
        }
    }
    out
}

pub fn mean_all<T: Scalar>(tape: &Tape<T>, x: &Tensor<T>) -> Tensor<T> {
    let n = x.numel();
    let mut s = T::ZERO;
    for &v in x.data().iter() {
        s += v;
    }
    let inv = T::from_f64(1.0 / n as f64);
    let out = Tensor::scalar(s * inv);
    if tape.is_recording() {
        if let Some(xn) = tape.node_of(x) {
            tape.record(
                &out,
                vec![Some(xn)],
                Box::new(move |g| vec![Some(vec![g[0] * inv; n])]),
            );
        }
    }
    out
}

/// B×C×H×W → B×C×1×1 spatial mean.
pub fn global_avg_pool2d<T: Scalar>(tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::shape("global_avg_pool2d", format!("need 4-d input, got {:?}", xs)));
    }
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let spatial = h * w;
    let inv = T::from_f64(1.0 / spatial as f64);
    let mut out = vec![T::ZERO; b * c];
    {
        let xd = x.data();
        for (o, chunk) in out.iter_mut().zip(xd.chunks_exact(spatial)) {
            let mut s = T::ZERO;
            for &v in chunk {
                s += v;
            }
            *o = s * inv;
        }
    }
    let out = Tensor::new_unchecked(vec![b, c, 1, 1], out);
    if tape.is_recording() {
        if let Some(xn) = tape.node_of(x) {
            tape.record(
                &out,
                vec![Some(xn)],
                Box::new(move |g| {
                    let mut dx = vec![T::ZERO; b * c * spatial];
                    for (chunk, &gv) in dx.chunks_exact_mut(spatial).zip(g.iter()) {
                        let gs = gv * inv;
                        for d in chunk {
                            *d = gs;
                        }
                    }
                    vec![Some(dx)]
                }),
            );
        }
    }
    Ok(out)
}
