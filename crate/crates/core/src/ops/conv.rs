//! 2D convolution, transposed convolution, and max-pooling, all via
//! im2col/col2im plus the gemm kernels.
//!
//! Weight layouts follow the usual convention: conv2d takes
//! `w: Cout×Cin×kh×kw`, conv_transpose2d takes `w: Cin×Cout×kh×kw`. The
//! transposed convolution is implemented as the exact adjoint of the matching
//! convolution (same scatter the conv gradient uses), which is what makes the
//! inner-product identity ⟨conv(x,w), y⟩ == ⟨x, convT(y,w)⟩ hold to rounding.

use crate::error::{Error, Result};
use crate::ops::gemm::{gemm_flops, gemm_nn, gemm_nt, gemm_tn};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn ckk(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn howo(&self) -> usize {
        self.ho * self.wo
    }
}

fn out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Gather one image plane set (cin×h×w) into the patch matrix (cin·kh·kw × ho·wo).
fn im2col<T: Scalar>(x: &[T], g: ConvGeom, cols: &mut [T]) {
    debug_assert_eq!(x.len(), g.cin * g.h * g.w);
    debug_assert_eq!(cols.len(), g.ckk() * g.howo());
    let howo = g.howo();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (ci * g.kh + ki) * g.kw + kj;
                let rows = &mut cols[r * howo..(r + 1) * howo];
                for oy in 0..g.ho {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    let dst = &mut rows[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let off = kj as isize - g.pw as isize;
                    if g.sw == 1 {
                        let lo = (-off).max(0) as usize;
                        let hi = ((g.w as isize - off).max(0) as usize).min(g.wo);
                        let hi = hi.max(lo);
                        dst[..lo].fill(T::ZERO);
                        dst[hi..].fill(T::ZERO);
                        if hi > lo {
                            let s0 = (lo as isize + off) as usize;
                            dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.sw) as isize + off;
                            *d = if ix >= 0 && ix < g.w as isize {
                                src[ix as usize]
                            } else {
                                T::ZERO
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the patch matrix back onto an image plane set: the adjoint of im2col.
fn col2im_add<T: Scalar>(cols: &[T], g: ConvGeom, x: &mut [T]) {
    debug_assert_eq!(x.len(), g.cin * g.h * g.w);
    debug_assert_eq!(cols.len(), g.ckk() * g.howo());
    let howo = g.howo();
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (ci * g.kh + ki) * g.kw + kj;
                let rows = &cols[r * howo..(r + 1) * howo];
                for oy in 0..g.ho {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &rows[oy * g.wo..(oy + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let off = kj as isize - g.pw as isize;
                    if g.sw == 1 {
                        let lo = (-off).max(0) as usize;
                        let hi = ((g.w as isize - off).max(0) as usize).min(g.wo).max(lo);
                        if hi > lo {
                            let d0 = (lo as isize + off) as usize;
                            for (d, &s) in dst[d0..d0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                                *d += s;
                            }
                        }
                    } else {
                        for (ox, &s) in src.iter().enumerate() {
                            let ix = (ox * g.sw) as isize + off;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// y[b] = W·im2col(x[b]) for all b, overwriting y. Shared by conv2d forward
/// and conv_transpose2d backward-input.
fn conv_forward_raw<T: Scalar>(
    x: &[T],
    w_mat: &[T],
    bias: Option<&[T]>,
    batch: usize,
    cout: usize,
    g: ConvGeom,
    y: &mut [T],
) {
    let (ckk, howo) = (g.ckk(), g.howo());
    let mut cols = vec![T::ZERO; ckk * howo];
    for b in 0..batch {
        im2col(&x[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w], g, &mut cols);
        let yb = &mut y[b * cout * howo..(b + 1) * cout * howo];
        gemm_nn(cout, ckk, howo, w_mat, &cols, yb, false);
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                for v in &mut yb[co * howo..(co + 1) * howo] {
                    *v += bv;
                }
            }
        }
    }
}

/// dx[b] += col2im(Wᵀ·dy[b]): the conv input gradient, also the convT forward core.
fn conv_input_grad_raw<T: Scalar>(
    dy: &[T],
    w_mat: &[T],
    batch: usize,
    cout: usize,
    g: ConvGeom,
    dx: &mut [T],
) {
    let (ckk, howo) = (g.ckk(), g.howo());
    let mut gcols = vec![T::ZERO; ckk * howo];
    for b in 0..batch {
        gemm_tn(
            ckk,
            cout,
            howo,
            w_mat,
            &dy[b * cout * howo..(b + 1) * cout * howo],
            &mut gcols,
            false,
        );
        col2im_add(&gcols, g, &mut dx[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w]);
    }
}

/// dW += Σ_b dy[b]·im2col(x[b])ᵀ.
fn conv_weight_grad_raw<T: Scalar>(
    x: &[T],
    dy: &[T],
    batch: usize,
    cout: usize,
    g: ConvGeom,
    dw_mat: &mut [T],
) {
    let (ckk, howo) = (g.ckk(), g.howo());
    let mut cols = vec![T::ZERO; ckk * howo];
    for b in 0..batch {
        im2col(&x[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w], g, &mut cols);
        gemm_nt(
            cout,
            howo,
            ckk,
            &dy[b * cout * howo..(b + 1) * cout * howo],
            &cols,
            dw_mat,
            true,
        );
    }
}

fn per_channel_sums<T: Scalar>(dy: &[T], batch: usize, channels: usize, spatial: usize) -> Vec<T> {
    let mut db = vec![T::ZERO; channels];
    for b in 0..batch {
        for (c, acc) in db.iter_mut().enumerate() {
            let row = &dy[(b * channels + c) * spatial..(b * channels + c + 1) * spatial];
            for &v in row {
                *acc += v;
            }
        }
    }
    db
}

pub fn conv2d<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("need 4-d input and weight, got {:?} and {:?}", xs, ws),
        ));
    }
    let (batch, cin, h, w_in) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if cin != wcin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels but weight expects {wcin}"),
        ));
    }
    let (Some(ho), Some(wo)) = (
        out_extent(h, kh, stride.0, padding.0),
        out_extent(w_in, kw, stride.1, padding.1),
    ) else {
        return Err(Error::shape(
            "conv2d",
            format!(
                "kernel {kh}x{kw} (stride {:?}) does not fit input {h}x{w_in} with padding {:?}",
                stride, padding
            ),
        ));
    };
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} != [{cout}]", b.shape()),
            ));
        }
    }
    let g = ConvGeom { cin, h, w: w_in, kh, kw, sh: stride.0, sw: stride.1, ph: padding.0, pw: padding.1, ho, wo };

    let mut y = vec![T::ZERO; batch * cout * ho * wo];
    {
        let xd = x.data();
        let wd = w.data();
        let bd = bias.map(|b| b.data());
        conv_forward_raw(&xd, &wd, bd.as_deref().map(|v| &v[..]), batch, cout, g, &mut y);
    }
    tape.add_flops(batch as u64 * gemm_flops(cout, g.ckk(), g.howo()));
    let out = Tensor::new_unchecked(vec![batch, cout, ho, wo], y);

    if tape.is_recording() {
        let xn = tape.node_of(x);
        let wn = tape.node_of(w);
        let bn = bias.and_then(|b| tape.node_of(b));
        let (need_dx, need_dw, need_db) = (xn.is_some(), wn.is_some(), bn.is_some());
        if need_dx || need_dw || need_db {
            let (xc, wc) = (x.clone(), w.clone());
            tape.record(
                &out,
                vec![xn, wn, bn],
                Box::new(move |dy| {
                    let dx = need_dx.then(|| {
                        let mut dx = vec![T::ZERO; xc.numel()];
                        conv_input_grad_raw(dy, &wc.data(), batch, cout, g, &mut dx);
                        dx
                    });
                    let dw = need_dw.then(|| {
                        let mut dw = vec![T::ZERO; wc.numel()];
                        conv_weight_grad_raw(&xc.data(), dy, batch, cout, g, &mut dw);
                        dw
                    });
                    let db = need_db.then(|| per_channel_sums(dy, batch, cout, g.howo()));
                    vec![dx, dw, db]
                }),
            );
        }
    }
    Ok(out)
}

pub fn conv_transpose2d<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("need 4-d input and weight, got {:?} and {:?}", xs, ws),
        ));
    }
    let (batch, cin, h, w_in) = (xs[0], xs[1], xs[2], xs[3]);
    let (wcin, cout, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if cin != wcin {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("input has {cin} channels but weight expects {wcin}"),
        ));
    }
    let h_out = ((h - 1) * stride.0 + kh).checked_sub(2 * padding.0);
    let w_out = ((w_in - 1) * stride.1 + kw).checked_sub(2 * padding.1);
    let (Some(h_out), Some(w_out)) = (h_out, w_out) else {
        return Err(Error::shape(
            "conv_transpose2d",
            format!(
                "padding {:?} swallows the whole {h}x{w_in} upsampled extent (kernel {kh}x{kw}, stride {:?})",
                padding, stride
            ),
        ));
    };
    if h_out == 0 || w_out == 0 {
        return Err(Error::shape("conv_transpose2d", "empty output extent"));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("bias shape {:?} != [{cout}]", b.shape()),
            ));
        }
    }
    // Geometry of the *virtual* conv that maps (cout, h_out, w_out) -> (cin, h, w):
    // conv_transpose forward is exactly that conv's input gradient.
    let g = ConvGeom {
        cin: cout,
        h: h_out,
        w: w_out,
        kh,
        kw,
        sh: stride.0,
        sw: stride.1,
        ph: padding.0,
        pw: padding.1,
        ho: h,
        wo: w_in,
    };

    let mut y = vec![T::ZERO; batch * cout * h_out * w_out];
    {
        let xd = x.data();
        let wd = w.data();
        conv_input_grad_raw(&xd, &wd, batch, cin, g, &mut y);
        if let Some(b) = bias {
            let bd = b.data();
            let spatial = h_out * w_out;
            for bi in 0..batch {
                for (co, &bv) in bd.iter().enumerate() {
                    for v in &mut y[(bi * cout + co) * spatial..(bi * cout + co + 1) * spatial] {
                        *v += bv;
                    }
                }
            }
        }
    }
    tape.add_flops(batch as u64 * gemm_flops(g.ckk(), cin, g.howo()));
    let out = Tensor::new_unchecked(vec![batch, cout, h_out, w_out], y);

    if tape.is_recording() {
        let xn = tape.node_of(x);
        let wn = tape.node_of(w);
        let bn = bias.and_then(|b| tape.node_of(b));
        let (need_dx, need_dw, need_db) = (xn.is_some(), wn.is_some(), bn.is_some());
        if need_dx || need_dw || need_db {
            let (xc, wc) = (x.clone(), w.clone());
            let spatial = h_out * w_out;
            tape.record(
                &out,
                vec![xn, wn, bn],
                Box::new(move |dy| {
                    let dx = need_dx.then(|| {
                        let mut dx = vec![T::ZERO; xc.numel()];
                        conv_forward_raw(dy, &wc.data(), None, batch, cin, g, &mut dx);
                        dx
                    });
                    let dw = need_dw.then(|| {
                        let mut dw = vec![T::ZERO; wc.numel()];
                        conv_weight_grad_raw(dy, &xc.data(), batch, cin, g, &mut dw);
                        dw
                    });
                    let db = need_db.then(|| per_channel_sums(dy, batch, cout, spatial));
                    vec![dx, dw, db]
                }),
            );
        }
    }
    Ok(out)
}

pub fn max_pool2d<T: Scalar>(
    tape: &Tape<T>,
    x: &Tensor<T>,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(Error::shape("max_pool2d", format!("need 4-d input, got {:?}", xs)));
    }
    let (batch, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (Some(ho), Some(wo)) = (
        out_extent(h, kernel.0, stride.0, padding.0),
        out_extent(w, kernel.1, stride.1, padding.1),
    ) else {
        return Err(Error::shape(
            "max_pool2d",
            format!("window {:?}/{:?} does not fit {h}x{w} with padding {:?}", kernel, stride, padding),
        ));
    };

    let mut y = vec![T::ZERO; batch * c * ho * wo];
    let mut argmax = vec![0u32; y.len()];
    {
        let xd = x.data();
        for bc in 0..batch * c {
            let plane = &xd[bc * h * w..(bc + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best: Option<(T, usize)> = None;
                    for ki in 0..kernel.0 {
                        let iy = (oy * stride.0 + ki) as isize - padding.0 as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..kernel.1 {
                            let ix = (ox * stride.1 + kj) as isize - padding.1 as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            let v = plane[idx];
                            if best.map_or(true, |(bv, _)| v > bv) {
                                best = Some((v, idx));
                            }
                        }
                    }
                    let (v, idx) = best.expect("pool window never fully outside input");
                    let o = bc * ho * wo + oy * wo + ox;
                    y[o] = v;
                    argmax[o] = (bc * h * w + idx) as u32;
                }
            }
        }
    }
    let out = Tensor::new_unchecked(vec![batch, c, ho, wo], y);

    if tape.is_recording() {
        if let Some(xn) = tape.node_of(x) {
            let numel = x.numel();
            tape.record(
                &out,
                vec![Some(xn)],
                Box::new(move |dy| {
                    let mut dx = vec![T::ZERO; numel];
                    for (&g, &src) in dy.iter().zip(&argmax) {
                        dx[src as usize] += g;
                    }
                    vec![Some(dx)]
                }),
            );
        }
    }
    Ok(out)
}
