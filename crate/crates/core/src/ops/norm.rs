//! Batch normalization (2D, NCHW) and layer normalization (last axis).

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

/// Whether normalization layers use batch statistics (training) or running
/// statistics (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Train mode normalizes by per-channel batch statistics and updates the
/// running stats in place via EMA (`momentum` weighting the fresh value, with
/// the unbiased variance entering the running estimate). Eval mode normalizes
/// by the running stats.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm2d<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::shape("batch_norm2d", format!("need 4-d input, got {:?}", xs)));
    }
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    for (name, t) in [("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)] {
        if t.shape() != [c] {
            return Err(Error::shape(
                "batch_norm2d",
                format!("{name} shape {:?} != [{c}] for {c}-channel input", t.shape()),
            ));
        }
    }
    let spatial = h * w;
    let n = b * spatial;
    let eps_t = T::from_f64(eps);

    let (mean, invstd) = match mode {
        Mode::Train => {
            if n <= 1 {
                return Err(Error::DegenerateVariance(format!(
                    "batch_norm2d in train mode over {b}×{h}×{w} = {n} value(s) per channel"
                )));
            }
            let xd = x.data();
            let mut mean = vec![T::ZERO; c];
            let mut var = vec![T::ZERO; c];
            for ci in 0..c {
                let mut sum = T::ZERO;
                for bi in 0..b {
                    let base = (bi * c + ci) * spatial;
                    for &v in &xd[base..base + spatial] {
                        sum += v;
                    }
                }
                mean[ci] = sum / T::from_f64(n as f64);
            }
            for ci in 0..c {
                let m = mean[ci];
                let mut sum = T::ZERO;
                for bi in 0..b {
                    let base = (bi * c + ci) * spatial;
                    for &v in &xd[base..base + spatial] {
                        let d = v - m;
                        sum += d * d;
                    }
                }
                var[ci] = sum / T::from_f64(n as f64);
            }
            {
                // EMA update with the unbiased variance, PyTorch-style.
                let mom = T::from_f64(momentum);
                let keep = T::ONE - mom;
                let unbias = T::from_f64(n as f64 / (n as f64 - 1.0));
                let mut rm = running_mean.data_mut();
                let mut rv = running_var.data_mut();
                for ci in 0..c {
                    rm[ci] = keep * rm[ci] + mom * mean[ci];
                    rv[ci] = keep * rv[ci] + mom * var[ci] * unbias;
                }
            }
            let invstd: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps_t).sqrt()).collect();
            (mean, invstd)
        }
        Mode::Eval => {
            let rm = running_mean.data();
            let rv = running_var.data();
            let invstd: Vec<T> = rv.iter().map(|&v| T::ONE / (v + eps_t).sqrt()).collect();
            (rm.clone(), invstd)
        }
    };

    let mut out = vec![T::ZERO; x.numel()];
    {
        let xd = x.data();
        let gd = gamma.data();
        let bd = beta.data();
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * spatial;
                let (m, s, g, be) = (mean[ci], invstd[ci], gd[ci], bd[ci]);
                for (o, &v) in out[base..base + spatial].iter_mut().zip(&xd[base..base + spatial]) {
                    *o = g * (v - m) * s + be;
                }
            }
        }
    }
    let out = Tensor::new_unchecked(xs.to_vec(), out);

    if tape.is_recording() {
        let xn = tape.node_of(x);
        let gn = tape.node_of(gamma);
        let bn = tape.node_of(beta);
        if xn.is_some() || gn.is_some() || bn.is_some() {
            let need = (xn.is_some(), gn.is_some(), bn.is_some());
            let (xc, gc) = (x.clone(), gamma.clone());
            tape.record(
                &out,
                vec![xn, gn, bn],
                Box::new(move |g| {
                    let xd = xc.data();
                    let gd = gc.data();
                    // Per-channel Σg and Σ(g·x̂), shared by all three grads.
                    let mut sum_g = vec![T::ZERO; c];
                    let mut sum_gx = vec![T::ZERO; c];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * spatial;
                            let (m, s) = (mean[ci], invstd[ci]);
                            let mut sg = T::ZERO;
                            let mut sgx = T::ZERO;
                            for (&gv, &xv) in g[base..base + spatial].iter().zip(&xd[base..base + spatial]) {
                                sg += gv;
                                sgx += gv * (xv - m) * s;
                            }
                            sum_g[ci] += sg;
                            sum_gx[ci] += sgx;
                        }
                    }
                    let dx = need.0.then(|| {
                        let mut dx = vec![T::ZERO; xd.len()];
                        let inv_n = T::from_f64(1.0 / n as f64);
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * spatial;
                                let (m, s, ga) = (mean[ci], invstd[ci], gd[ci]);
                                match mode {
                                    Mode::Train => {
                                        let c1 = sum_g[ci] * inv_n;
                                        let c2 = sum_gx[ci] * inv_n;
                                        for ((d, &gv), &xv) in dx[base..base + spatial]
                                            .iter_mut()
                                            .zip(&g[base..base + spatial])
                                            .zip(&xd[base..base + spatial])
                                        {
                                            let xhat = (xv - m) * s;
                                            *d = ga * s * (gv - c1 - xhat * c2);
                                        }
                                    }
                                    Mode::Eval => {
                                        for (d, &gv) in
                                            dx[base..base + spatial].iter_mut().zip(&g[base..base + spatial])
                                        {
                                            *d = ga * s * gv;
                                        }
                                    }
                                }
                            }
                        }
                        dx
                    });
                    let dg = need.1.then(|| sum_gx.clone());
                    let db = need.2.then(|| sum_g.clone());
                    vec![dx, dg, db]
                }),
            );
        }
    }
    Ok(out)
}

/// Normalize over the last axis; gamma/beta have that axis's length.
pub fn layer_norm<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.is_empty() {
        return Err(Error::shape("layer_norm", "scalar input"));
    }
    let d = xs[xs.len() - 1];
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape(
            "layer_norm",
            format!("gamma {:?} / beta {:?} must be [{d}]", gamma.shape(), beta.shape()),
        ));
    }
    let rows = x.numel() / d;
    let eps_t = T::from_f64(eps);

    let mut out = vec![T::ZERO; x.numel()];
    let mut means = vec![T::ZERO; rows];
    let mut invstds = vec![T::ZERO; rows];
    {
        let xd = x.data();
        let gd = gamma.data();
        let bd = beta.data();
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mut sum = T::ZERO;
            for &v in row {
                sum += v;
            }
            let m = sum / T::from_f64(d as f64);
            let mut var = T::ZERO;
            for &v in row {
                let dv = v - m;
                var += dv * dv;
            }
            var = var / T::from_f64(d as f64);
            let s = T::ONE / (var + eps_t).sqrt();
            means[r] = m;
            invstds[r] = s;
            for ((o, &v), (&g, &be)) in out[r * d..(r + 1) * d]
                .iter_mut()
                .zip(row)
                .zip(gd.iter().zip(bd.iter()))
            {
                *o = g * (v - m) * s + be;
            }
        }
    }
    let out = Tensor::new_unchecked(xs.to_vec(), out);

    if tape.is_recording() {
        let xn = tape.node_of(x);
        let gn = tape.node_of(gamma);
        let bn = tape.node_of(beta);
        if xn.is_some() || gn.is_some() || bn.is_some() {
            let need = (xn.is_some(), gn.is_some(), bn.is_some());
            let (xc, gc) = (x.clone(), gamma.clone());
            tape.record(
                &out,
                vec![xn, gn, bn],
                Box::new(move |g| {
                    let xd = xc.data();
                    let gd = gc.data();
                    let inv_d = T::from_f64(1.0 / d as f64);
                    let mut dx = need.0.then(|| vec![T::ZERO; xd.len()]);
                    let mut dgamma = need.1.then(|| vec![T::ZERO; d]);
                    let mut dbeta = need.2.then(|| vec![T::ZERO; d]);
                    for r in 0..rows {
                        let (m, s) = (means[r], invstds[r]);
                        let row = &xd[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        if let Some(dg) = dgamma.as_mut() {
                            for ((acc, &gv), &xv) in dg.iter_mut().zip(grow).zip(row) {
                                *acc += gv * (xv - m) * s;
                            }
                        }
                        if let Some(db) = dbeta.as_mut() {
                            for (acc, &gv) in db.iter_mut().zip(grow) {
                                *acc += gv;
                            }
                        }
                        if let Some(dx) = dx.as_mut() {
                            let mut mean_gg = T::ZERO;
                            let mut mean_ggx = T::ZERO;
                            for ((&gv, &xv), &ga) in grow.iter().zip(row).zip(gd.iter()) {
                                let gg = gv * ga;
                                mean_gg += gg;
                                mean_ggx += gg * (xv - m) * s;
                            }
                            mean_gg = mean_gg * inv_d;
                            mean_ggx = mean_ggx * inv_d;
                            for ((dxv, (&gv, &xv)), &ga) in dx[r * d..(r + 1) * d]
                                .iter_mut()
                                .zip(grow.iter().zip(row))
                                .zip(gd.iter())
                            {
                                let xhat = (xv - m) * s;
                                *dxv = s * (gv * ga - mean_gg - xhat * mean_ggx);
                            }
                        }
                    }
                    vec![dx, dgamma, dbeta]
                }),
            );
        }
    }
    Ok(out)
}
