//! Shape manipulation: reshape (zero-copy), permute, concat.

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

pub fn reshape<T: Scalar>(tape: &Tape<T>, x: &Tensor<T>, shape: Vec<usize>) -> Result<Tensor<T>> {
    let new_numel: usize = shape.iter().product();
    if new_numel != x.numel() {
        return Err(Error::shape(
            "reshape",
            format!("cannot view {:?} ({} elements) as {:?} ({} elements)", x.shape(), x.numel(), shape, new_numel),
        ));
    }
    let out = x.view_with_shape(shape);
    if tape.is_recording() {
        if let Some(xn) = tape.node_of(x) {
            tape.record(&out, vec![Some(xn)], Box::new(move |g| vec![Some(g.to_vec())]));
        }
    }
    Ok(out)
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copy `data` (shape `in_shape`) into axis order `perm`; out axis j draws
/// from in axis perm[j].
fn permute_data<T: Scalar>(data: &[T], in_shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let rank = in_shape.len();
    let in_strides = contiguous_strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let walk_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    // odometer over the output index space, keeping a running source offset
    loop {
        out.push(data[src]);
        let mut axis = rank;
        loop {
            if axis == 0 {
                return (out_shape, out);
            }
            axis -= 1;
            idx[axis] += 1;
            src += walk_strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            src -= walk_strides[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
}

pub fn permute<T: Scalar>(tape: &Tape<T>, x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    if perm.len() != rank {
        return Err(Error::shape(
            "permute",
            format!("perm {:?} has {} entries for rank-{rank} tensor", perm, perm.len()),
        ));
    }
    let mut seen = vec![false; rank];
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(Error::shape("permute", format!("{:?} is not a permutation of 0..{rank}", perm)));
        }
        seen[p] = true;
    }
    let (out_shape, out_data) = permute_data(&x.data(), x.shape(), perm);
    let out = Tensor::new_unchecked(out_shape, out_data);
    if tape.is_recording() {
        if let Some(xn) = tape.node_of(x) {
            let mut inverse = vec![0usize; rank];
            for (j, &p) in perm.iter().enumerate() {
                inverse[p] = j;
            }
            let gshape = out.shape().to_vec();
            tape.record(
                &out,
                vec![Some(xn)],
                Box::new(move |g| {
                    let (_, dx) = permute_data(g, &gshape, &inverse);
                    vec![Some(dx)]
                }),
            );
        }
    }
    Ok(out)
}

pub fn concat<T: Scalar>(tape: &Tape<T>, parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "no tensors given"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::shape("concat", format!("axis {axis} out of range for rank {rank}")));
    }
    let mut axis_extents = Vec::with_capacity(parts.len());
    for p in parts {
        if p.rank() != rank {
            return Err(Error::shape(
                "concat",
                format!("rank mismatch: {:?} vs {:?}", first.shape(), p.shape()),
            ));
        }
        for d in 0..rank {
            if d != axis && p.dim(d) != first.dim(d) {
                return Err(Error::shape(
                    "concat",
                    format!("shapes {:?} and {:?} differ outside axis {axis}", first.shape(), p.shape()),
                ));
            }
        }
        axis_extents.push(p.dim(axis));
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = axis_extents.iter().sum();
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();

    let mut out = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for (p, &ext) in parts.iter().zip(&axis_extents) {
            let block = ext * inner;
            let pd = p.data();
            out.extend_from_slice(&pd[o * block..(o + 1) * block]);
        }
    }
    let out = Tensor::new_unchecked(out_shape, out);

    if tape.is_recording() {
        let nodes: Vec<Option<usize>> = parts.iter().map(|p| tape.node_of(p)).collect();
        if nodes.iter().any(Option::is_some) {
            let tracked: Vec<bool> = nodes.iter().map(Option::is_some).collect();
            let extents = axis_extents.clone();
            tape.record(
                &out,
                nodes,
                Box::new(move |g| {
                    let total_block: usize = extents.iter().map(|e| e * inner).sum();
                    let mut grads: Vec<Option<Vec<T>>> = extents
                        .iter()
                        .zip(&tracked)
                        .map(|(&e, &t)| t.then(|| Vec::with_capacity(outer * e * inner)))
                        .collect();
                    for o in 0..outer {
                        let mut off = o * total_block;
                        for (slot, &ext) in grads.iter_mut().zip(&extents) {
                            let block = ext * inner;
                            if let Some(v) = slot {
                                v.extend_from_slice(&g[off..off + block]);
                            }
                            off += block;
                        }
                    }
                    grads
                }),
            );
        }
    }
    Ok(out)
}
