//! Dense products: batched matmul with leading-dim broadcasting, and the
//! fused affine layer (x·Wᵀ + b) used by attention projections and MLPs.

use crate::error::{Error, Result};
use crate::ops::gemm::{gemm_flops, gemm_nn, gemm_nt, gemm_tn};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

/// Broadcast batch shapes of two operands (right-aligned, 1-extends), plus
/// per-operand element strides over the broadcast batch space.
fn broadcast_batches(
    op: &'static str,
    a_batch: &[usize],
    b_batch: &[usize],
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let rank = a_batch.len().max(b_batch.len());
    let mut shape = vec![1usize; rank];
    for i in 0..rank {
        let ad = *a_batch.iter().rev().nth(rank - 1 - i).unwrap_or(&1);
        let bd = *b_batch.iter().rev().nth(rank - 1 - i).unwrap_or(&1);
        shape[i] = match (ad, bd) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            (x, y) => {
                return Err(Error::shape(
                    op,
                    format!("batch dims {x} and {y} do not broadcast ({:?} vs {:?})", a_batch, b_batch),
                ))
            }
        };
    }
    let strides_for = |dims: &[usize]| -> Vec<usize> {
        let offset = rank - dims.len();
        let mut s = vec![0usize; rank];
        let mut stride = 1;
        for i in (0..dims.len()).rev() {
            if dims[i] != 1 {
                s[offset + i] = stride;
            }
            stride *= dims[i];
        }
        s
    };
    Ok((shape, strides_for(a_batch), strides_for(b_batch)))
}

fn batch_offsets(shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let total: usize = shape.iter().product();
    let mut offsets = Vec::with_capacity(total);
    let mut idx = vec![0usize; shape.len()];
    let mut off = 0usize;
    for _ in 0..total {
        offsets.push(off);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    offsets
}

/// a: …×M×K, b: …×K×N → …×M×N with broadcastable leading dims.
pub fn matmul<T: Scalar>(tape: &Tape<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ashape, bshape) = (a.shape(), b.shape());
    if ashape.len() < 2 || bshape.len() < 2 {
        return Err(Error::shape(
            "matmul",
            format!("need at least 2-d operands, got {:?} and {:?}", ashape, bshape),
        ));
    }
    let (m, ka) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
    let (kb, n) = (bshape[bshape.len() - 2], bshape[bshape.len() - 1]);
    if ka != kb {
        return Err(Error::shape(
            "matmul",
            format!("inner dims differ: {:?} vs {:?} ({ka} != {kb})", ashape, bshape),
        ));
    }
    let (batch_shape, a_strides, b_strides) =
        broadcast_batches("matmul", &ashape[..ashape.len() - 2], &bshape[..bshape.len() - 2])?;
    let a_offsets = batch_offsets(&batch_shape, &a_strides);
    let b_offsets = batch_offsets(&batch_shape, &b_strides);
    let batch: usize = batch_shape.iter().product();

    let mut out = vec![T::ZERO; batch * m * n];
    {
        let ad = a.data();
        let bd = b.data();
        for i in 0..batch {
            let a_off = a_offsets[i] * m * ka;
            let b_off = b_offsets[i] * ka * n;
            gemm_nn(
                m,
                ka,
                n,
                &ad[a_off..a_off + m * ka],
                &bd[b_off..b_off + ka * n],
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
    }
    tape.add_flops(batch as u64 * gemm_flops(m, ka, n));
    let mut out_shape = batch_shape.clone();
    out_shape.push(m);
    out_shape.push(n);
    let out = Tensor::new_unchecked(out_shape, out);

    if tape.is_recording() {
        let an = tape.node_of(a);
        let bn = tape.node_of(b);
        if an.is_some() || bn.is_some() {
            let (need_da, need_db) = (an.is_some(), bn.is_some());
            let (ac, bc) = (a.clone(), b.clone());
            let k = ka;
            tape.record(
                &out,
                vec![an, bn],
                Box::new(move |g| {
                    let da = need_da.then(|| {
                        let bd = bc.data();
                        let mut da = vec![T::ZERO; ac.numel()];
                        for i in 0..batch {
                            let a_off = a_offsets[i] * m * k;
                            let b_off = b_offsets[i] * k * n;
                            gemm_nt(
                                m,
                                n,
                                k,
                                &g[i * m * n..(i + 1) * m * n],
                                &bd[b_off..b_off + k * n],
                                &mut da[a_off..a_off + m * k],
                                true,
                            );
                        }
                        da
                    });
                    let db = need_db.then(|| {
                        let ad = ac.data();
                        let mut db = vec![T::ZERO; bc.numel()];
                        for i in 0..batch {
                            let a_off = a_offsets[i] * m * k;
                            let b_off = b_offsets[i] * k * n;
                            gemm_tn(
                                k,
                                m,
                                n,
                                &ad[a_off..a_off + m * k],
                                &g[i * m * n..(i + 1) * m * n],
                                &mut db[b_off..b_off + k * n],
                                true,
                            );
                        }
                        db
                    });
                    vec![da, db]
                }),
            );
        }
    }
    Ok(out)
}

/// x: …×K, w: N×K, b: N → …×N. Row-major gemm over the flattened leading dims.
pub fn linear<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.is_empty() || ws.len() != 2 {
        return Err(Error::shape(
            "linear",
            format!("need …×K input and N×K weight, got {:?} and {:?}", xs, ws),
        ));
    }
    let k = xs[xs.len() - 1];
    let (n, wk) = (ws[0], ws[1]);
    if k != wk {
        return Err(Error::shape(
            "linear",
            format!("input width {k} != weight width {wk} (shapes {:?}, {:?})", xs, ws),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [n] {
            return Err(Error::shape("linear", format!("bias shape {:?} != [{n}]", b.shape())));
        }
    }
    let rows: usize = xs[..xs.len() - 1].iter().product();

    let mut out = vec![T::ZERO; rows * n];
    {
        let xd = x.data();
        let wd = w.data();
        gemm_nt(rows, k, n, &xd, &wd, &mut out, false);
        if let Some(b) = bias {
            let bd = b.data();
            for row in out.chunks_exact_mut(n) {
                for (o, &bv) in row.iter_mut().zip(bd.iter()) {
                    *o += bv;
                }
            }
        }
    }
    tape.add_flops(gemm_flops(rows, k, n));
    let mut out_shape = xs[..xs.len() - 1].to_vec();
    out_shape.push(n);
    let out = Tensor::new_unchecked(out_shape, out);

    if tape.is_recording() {
        let xn = tape.node_of(x);
        let wn = tape.node_of(w);
        let bn = bias.and_then(|b| tape.node_of(b));
        if xn.is_some() || wn.is_some() || bn.is_some() {
            let (need_dx, need_dw, need_db) = (xn.is_some(), wn.is_some(), bn.is_some());
            let (xc, wc) = (x.clone(), w.clone());
            tape.record(
                &out,
                vec![xn, wn, bn],
                Box::new(move |g| {
                    let dx = need_dx.then(|| {
                        let wd = wc.data();
                        let mut dx = vec![T::ZERO; rows * k];
                        gemm_nn(rows, n, k, g, &wd, &mut dx, false);
                        dx
                    });
                    let dw = need_dw.then(|| {
                        let xd = xc.data();
                        let mut dw = vec![T::ZERO; n * k];
                        gemm_tn(n, rows, k, g, &xd, &mut dw, false);
                        dw
                    });
                    let db = need_db.then(|| {
                        let mut db = vec![T::ZERO; n];
                        for row in g.chunks_exact(n) {
                            for (acc, &gv) in db.iter_mut().zip(row) {
                                *acc += gv;
                            }
                        }
                        db
                    });
                    vec![dx, dw, db]
                }),
            );
        }
    }
    Ok(out)
}
