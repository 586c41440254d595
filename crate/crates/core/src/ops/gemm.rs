//! Blocked matrix-multiply kernels. Plain safe Rust, shaped so LLVM's
//! autovectorizer does the wide work: operands are repacked into panel-local
//! tiles and combined by an MR×NR register-tile micro-kernel built on fused
//! multiply-adds.
//!
//! Three variants cover every use in the network without materializing
//! transposes: nn (C = A·B), nt (C = A·Bᵀ), tn (C = Aᵀ·B). All accept an
//! `acc` flag to accumulate into `c` instead of overwriting. Sub-panel
//! problems skip the packing and run simple loop kernels instead.

use crate::tensor::Scalar;

/// Micro-tile rows (A-side register blocking).
const MR: usize = 8;
/// Micro-tile columns (B-side register blocking; one AVX-512 f32 vector).
const NR: usize = 16;
/// Rows of the shared operand kept per panel (k-blocking).
const KC: usize = 256;
/// Rows of C per packed A block (L2 blocking); multiple of MR.
const MC: usize = 256;
/// Columns of C per packed B panel (L3 blocking); multiple of NR.
const NC: usize = 2048;

/// Below this m·k·n volume the packing overhead outweighs the tile kernel.
const SMALL: usize = 32 * 32 * 32;

// The micro-kernel unrolls its accumulator rows by hand.
const _: () = assert!(MR == 8);

pub fn gemm_flops(m: usize, k: usize, n: usize) -> u64 {
    2 * m as u64 * k as u64 * n as u64
}

/// C[m×n] = A[m×k] · B[k×n] (+= when `acc`).
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], acc: bool) {
    assert_eq!(a.len(), m * k, "gemm_nn: a buffer");
    assert_eq!(b.len(), k * n, "gemm_nn: b buffer");
    assert_eq!(c.len(), m * n, "gemm_nn: c buffer");
    if m * k * n < SMALL {
        small_nn(m, k, n, a, b, c, acc);
    } else {
        driver(m, k, n, a, false, b, false, c, acc);
    }
}

/// C[m×n] = A[m×k] · B[n×k]ᵀ (+= when `acc`).
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], acc: bool) {
    assert_eq!(a.len(), m * k, "gemm_nt: a buffer");
    assert_eq!(b.len(), n * k, "gemm_nt: b buffer");
    assert_eq!(c.len(), m * n, "gemm_nt: c buffer");
    if m * k * n < SMALL {
        small_nt(m, k, n, a, b, c, acc);
    } else {
        driver(m, k, n, a, false, b, true, c, acc);
    }
}

/// C[m×n] = A[k×m]ᵀ · B[k×n] (+= when `acc`).
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], acc: bool) {
    assert_eq!(a.len(), k * m, "gemm_tn: a buffer");
    assert_eq!(b.len(), k * n, "gemm_tn: b buffer");
    assert_eq!(c.len(), m * n, "gemm_tn: c buffer");
    if m * k * n < SMALL {
        small_tn(m, k, n, a, b, c, acc);
    } else {
        driver(m, k, n, a, true, b, false, c, acc);
    }
}

/// Panel-blocked path. `at`: A is stored k×m (column i strided). `bt`: B is
/// stored n×k (row j holds the k run). Contributions land on each C element
/// in ascending-k panel order, so results are reproducible for fixed shapes.
#[allow(clippy::too_many_arguments)]
fn driver<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    at: bool,
    b: &[T],
    bt: bool,
    c: &mut [T],
    acc: bool,
) {
    if !acc {
        c.fill(T::ZERO);
    }
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let mut ap = vec![T::ZERO; MC.min(m.next_multiple_of(MR)) * KC];
    let mut bp = vec![T::ZERO; KC * NC.min(n.next_multiple_of(NR))];

    for jc in (0..n).step_by(NC) {
        let ncb = (jc + NC).min(n) - jc;
        let jtiles = ncb.div_ceil(NR);
        for kb in (0..k).step_by(KC) {
            let kcb = (kb + KC).min(k) - kb;
            if bt {
                pack_b_trans(&mut bp, b, k, kb, kcb, jc, ncb, n);
            } else {
                pack_b_normal(&mut bp, b, n, kb, kcb, jc, ncb);
            }
            for ic in (0..m).step_by(MC) {
                let mcb = (ic + MC).min(m) - ic;
                let itiles = mcb.div_ceil(MR);
                if at {
                    pack_a_trans(&mut ap, a, m, kb, kcb, ic, mcb);
                } else {
                    pack_a_normal(&mut ap, a, k, kb, kcb, ic, mcb);
                }
                for jt in 0..jtiles {
                    let cols = (ncb - jt * NR).min(NR);
                    for it in 0..itiles {
                        let rows = (mcb - it * MR).min(MR);
                        let mut tile = [[T::ZERO; NR]; MR];
                        micro_kernel(
                            kcb,
                            &ap[it * MR * kcb..(it + 1) * MR * kcb],
                            &bp[jt * NR * kcb..(jt + 1) * NR * kcb],
                            &mut tile,
                        );
                        let col0 = jc + jt * NR;
                        for (r, trow) in tile.iter().enumerate().take(rows) {
                            let crow = &mut c[(ic + it * MR + r) * n + col0..][..cols];
                            for (cv, tv) in crow.iter_mut().zip(trow) {
                                *cv += *tv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// tile[r][c] += Σ_p ap[p·MR + r] · bp[p·NR + c]. The accumulator tile stays
/// in registers across the whole k panel.
#[inline(always)]
fn vfma<T: Scalar>(acc: &mut [T; NR], a: T, b: &[T; NR]) {
    for c in 0..NR {
        acc[c] = a.mul_add(b[c], acc[c]);
    }
}

/// The accumulator rows are separate locals so they stay in vector registers
/// across the whole k panel; a row array indexed by a loop variable gets
/// spilled to the stack instead (and the spills turn into gather/scatter).
#[inline(always)]
fn micro_kernel<T: Scalar>(kc: usize, ap: &[T], bp: &[T], tile: &mut [[T; NR]; MR]) {
    debug_assert_eq!(ap.len(), kc * MR);
    debug_assert_eq!(bp.len(), kc * NR);
    let mut t0 = [T::ZERO; NR];
    let mut t1 = [T::ZERO; NR];
    let mut t2 = [T::ZERO; NR];
    let mut t3 = [T::ZERO; NR];
    let mut t4 = [T::ZERO; NR];
    let mut t5 = [T::ZERO; NR];
    let mut t6 = [T::ZERO; NR];
    let mut t7 = [T::ZERO; NR];
    for p in 0..kc {
        let av: &[T; MR] = ap[p * MR..p * MR + MR].try_into().unwrap();
        let bv: &[T; NR] = bp[p * NR..p * NR + NR].try_into().unwrap();
        vfma(&mut t0, av[0], bv);
        vfma(&mut t1, av[1], bv);
        vfma(&mut t2, av[2], bv);
        vfma(&mut t3, av[3], bv);
        vfma(&mut t4, av[4], bv);
        vfma(&mut t5, av[5], bv);
        vfma(&mut t6, av[6], bv);
        vfma(&mut t7, av[7], bv);
    }
    tile[0] = t0;
    tile[1] = t1;
    tile[2] = t2;
    tile[3] = t3;
    tile[4] = t4;
    tile[5] = t5;
    tile[6] = t6;
    tile[7] = t7;
}

/// A (m×k row-major) → MR-tall k-major tiles: ap[it][p][r].
fn pack_a_normal<T: Scalar>(
    ap: &mut [T],
    a: &[T],
    k: usize,
    kb: usize,
    kcb: usize,
    ic: usize,
    mcb: usize,
) {
    for it in 0..mcb.div_ceil(MR) {
        let tile = &mut ap[it * MR * kcb..(it + 1) * MR * kcb];
        let rows = (mcb - it * MR).min(MR);
        for r in 0..MR {
            if r < rows {
                let arow = &a[(ic + it * MR + r) * k + kb..][..kcb];
                for (p, &v) in arow.iter().enumerate() {
                    tile[p * MR + r] = v;
                }
            } else {
                for p in 0..kcb {
                    tile[p * MR + r] = T::ZERO;
                }
            }
        }
    }
}

/// A stored k×m (logical Aᵀ) → the same tile layout; source rows are
/// contiguous in the tile's r direction.
fn pack_a_trans<T: Scalar>(
    ap: &mut [T],
    a: &[T],
    m: usize,
    kb: usize,
    kcb: usize,
    ic: usize,
    mcb: usize,
) {
    for it in 0..mcb.div_ceil(MR) {
        let tile = &mut ap[it * MR * kcb..(it + 1) * MR * kcb];
        let rows = (mcb - it * MR).min(MR);
        for p in 0..kcb {
            let src = &a[(kb + p) * m + ic + it * MR..][..rows];
            let dst = &mut tile[p * MR..p * MR + MR];
            dst[..rows].copy_from_slice(src);
            for v in &mut dst[rows..] {
                *v = T::ZERO;
            }
        }
    }
}

/// B (k×n row-major) → NR-wide k-major tiles: bp[jt][p][c].
fn pack_b_normal<T: Scalar>(
    bp: &mut [T],
    b: &[T],
    n: usize,
    kb: usize,
    kcb: usize,
    jc: usize,
    ncb: usize,
) {
    for jt in 0..ncb.div_ceil(NR) {
        let tile = &mut bp[jt * NR * kcb..(jt + 1) * NR * kcb];
        let cols = (ncb - jt * NR).min(NR);
        for p in 0..kcb {
            let src = &b[(kb + p) * n + jc + jt * NR..][..cols];
            let dst = &mut tile[p * NR..p * NR + NR];
            dst[..cols].copy_from_slice(src);
            for v in &mut dst[cols..] {
                *v = T::ZERO;
            }
        }
    }
}

/// B stored n×k (logical Bᵀ) → the same tile layout; each source row is
/// contiguous along k.
fn pack_b_trans<T: Scalar>(
    bp: &mut [T],
    b: &[T],
    k: usize,
    kb: usize,
    kcb: usize,
    jc: usize,
    ncb: usize,
    n: usize,
) {
    for jt in 0..ncb.div_ceil(NR) {
        let tile = &mut bp[jt * NR * kcb..(jt + 1) * NR * kcb];
        let cols = (ncb - jt * NR).min(NR);
        for cix in 0..NR {
            if cix < cols {
                let j = jc + jt * NR + cix;
                debug_assert!(j < n);
                let src = &b[j * k + kb..][..kcb];
                for (p, &v) in src.iter().enumerate() {
                    tile[p * NR + cix] = v;
                }
            } else {
                for p in 0..kcb {
                    tile[p * NR + cix] = T::ZERO;
                }
            }
        }
    }
}

/// Small-problem C = A·B: panel axpy over rows, four-way unrolled.
fn small_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], acc: bool) {
    if !acc {
        c.fill(T::ZERO);
    }
    for kb in (0..k).step_by(KC) {
        let kend = (kb + KC).min(k);
        for i in 0..m {
            let arow = &a[i * k + kb..i * k + kend];
            let crow = &mut c[i * n..(i + 1) * n];
            axpy_panel(arow, b, n, kb, crow);
        }
    }
}

/// crow += Σ_p arow[p] · B[kb+p, ..], unrolled four rows at a time.
#[inline]
fn axpy_panel<T: Scalar>(arow: &[T], b: &[T], n: usize, kb: usize, crow: &mut [T]) {
    let mut p = 0;
    while p + 4 <= arow.len() {
        let (a0, a1, a2, a3) = (arow[p], arow[p + 1], arow[p + 2], arow[p + 3]);
        let r = kb + p;
        let b0 = &b[r * n..r * n + n];
        let b1 = &b[(r + 1) * n..(r + 1) * n + n];
        let b2 = &b[(r + 2) * n..(r + 2) * n + n];
        let b3 = &b[(r + 3) * n..(r + 3) * n + n];
        for ((((cv, &v0), &v1), &v2), &v3) in crow.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3) {
            *cv += a0 * v0 + a1 * v1 + a2 * v2 + a3 * v3;
        }
        p += 4;
    }
    while p < arow.len() {
        let av = arow[p];
        let r = kb + p;
        let brow = &b[r * n..r * n + n];
        for (cv, &bv) in crow.iter_mut().zip(brow) {
            *cv += av * bv;
        }
        p += 1;
    }
}

/// Small-problem C = A·Bᵀ: rows-by-rows dot products.
fn small_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], acc: bool) {
    if !acc {
        c.fill(T::ZERO);
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(arow, brow);
        }
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut s0 = T::ZERO;
    let mut s1 = T::ZERO;
    let mut s2 = T::ZERO;
    let mut s3 = T::ZERO;
    let mut xc = x.chunks_exact(4);
    let mut yc = y.chunks_exact(4);
    for (xv, yv) in (&mut xc).zip(&mut yc) {
        s0 += xv[0] * yv[0];
        s1 += xv[1] * yv[1];
        s2 += xv[2] * yv[2];
        s3 += xv[3] * yv[3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for (&xv, &yv) in xc.remainder().iter().zip(yc.remainder()) {
        s += xv * yv;
    }
    s
}

/// Small-problem C = Aᵀ·B with A stored k×m.
fn small_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], acc: bool) {
    if !acc {
        c.fill(T::ZERO);
    }
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}
