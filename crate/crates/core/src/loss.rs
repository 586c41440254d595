//! Training loss: pixelwise cross-entropy and soft Dice over softmax
//! probabilities, combined with fixed weights. Both terms are differentiable
//! tape ops with closed-form backward rules.

use crate::error::{Error, Result};
use crate::ops;
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

pub const DICE_SMOOTH: f64 = 1e-5;

/// Weights for the combined loss: `lambda1` scales Dice, `lambda2` scales
/// cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 0.5, lambda2: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got λ1={} λ2={}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// Integer class masks, B×H×W, every value < num_classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    shape: [usize; 3],
    data: Vec<usize>,
}

impl Labels {
    pub fn new(shape: [usize; 3], data: Vec<usize>, num_classes: usize) -> Result<Self> {
        let numel = shape[0] * shape[1] * shape[2];
        if data.len() != numel {
            return Err(Error::Data(format!(
                "label buffer holds {} values but shape {shape:?} needs {numel}",
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| v >= num_classes) {
            return Err(Error::Data(format!(
                "label value {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { shape, data })
    }

    /// Reads a float mask (as stored in tensor files) into integer labels,
    /// rejecting anything that is not exactly a small non-negative integer.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, num_classes: usize) -> Result<Self> {
        let shape: [usize; 3] = match *t.shape() {
            [b, h, w] => [b, h, w],
            [h, w] => [1, h, w],
            _ => {
                return Err(Error::Data(format!(
                    "labels must be H×W or B×H×W, got {:?}",
                    t.shape()
                )))
            }
        };
        let mut data = Vec::with_capacity(t.numel());
        for &v in t.data().iter() {
            let f = v.to_f64();
            let r = f.round();
            if !f.is_finite() || (f - r).abs() > 1e-9 || r < 0.0 {
                return Err(Error::Data(format!("label value {f} is not a class index")));
            }
            data.push(r as usize);
        }
        Self::new(shape, data, num_classes)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

fn check_logits_vs_labels<T: Scalar>(op: &'static str, logits: &Tensor<T>, labels: &Labels) -> Result<()> {
    let [b, h, w] = labels.shape();
    if logits.rank() != 4 || logits.dim(0) != b || logits.dim(2) != h || logits.dim(3) != w {
        return Err(Error::shape(
            op,
            format!("logits {:?} do not match labels {}×{}×{}", logits.shape(), b, h, w),
        ));
    }
    if let Some(&v) = labels.as_slice().iter().max() {
        if v >= logits.dim(1) {
            return Err(Error::shape(op, format!("label {v} exceeds {} classes", logits.dim(1))));
        }
    }
    Ok(())
}

/// Mean over pixels of −log softmax(logits) at the true class, via a stable
/// log-sum-exp. Scalar output.
pub fn cross_entropy<T: Scalar>(tape: &Tape<T>, logits: &Tensor<T>, labels: &Labels) -> Result<Tensor<T>> {
    check_logits_vs_labels("cross_entropy", logits, labels)?;
    let (b, k) = (logits.dim(0), logits.dim(1));
    let hw = logits.dim(2) * logits.dim(3);
    let n = b * hw;

    let mut probs = vec![T::ZERO; logits.numel()];
    let mut total = 0.0f64;
    {
        let x = logits.data();
        for bi in 0..b {
            for p in 0..hw {
                let at = |c: usize| x[(bi * k + c) * hw + p];
                let mut m = at(0);
                for c in 1..k {
                    m = m.max(at(c));
                }
                let mut z = T::ZERO;
                for c in 0..k {
                    z += (at(c) - m).exp();
                }
                let lse = m + z.ln();
                for c in 0..k {
                    probs[(bi * k + c) * hw + p] = (at(c) - lse).exp();
                }
                let y = labels.as_slice()[bi * hw + p];
                total += (lse - at(y)).to_f64();
            }
        }
    }
    let out = Tensor::scalar(T::from_f64(total / n as f64));
    tape.add_flops(5 * logits.numel() as u64);

    if tape.is_recording() {
        if let Some(xn) = tape.node_of(logits) {
            let y = labels.as_slice().to_vec();
            let inv_n = T::from_f64(1.0 / n as f64);
            tape.record(
                &out,
                vec![Some(xn)],
                Box::new(move |g| {
                    let scale = g[0] * inv_n;
                    let mut dx = probs.clone();
                    for bi in 0..b {
                        for p in 0..hw {
                            dx[(bi * k + y[bi * hw + p]) * hw + p] -= T::ONE;
                        }
                    }
                    for v in dx.iter_mut() {
                        *v *= scale;
                    }
                    vec![Some(dx)]
                }),
            );
        }
    }
    Ok(out)
}

/// Soft Dice from an explicit probability field (softmax already applied):
/// per class k, d_k = (2·Σ p_k·y_k + s)/(Σ p_k + Σ y_k + s) with batch-global
/// sums; returns 1 − mean over the included classes. Scalar output.
pub fn dice_from_probs<T: Scalar>(
    tape: &Tape<T>,
    probs: &Tensor<T>,
    labels: &Labels,
    smooth: f64,
    include_background: bool,
) -> Result<Tensor<T>> {
    check_logits_vs_labels("dice_loss", probs, labels)?;
    let (b, k) = (probs.dim(0), probs.dim(1));
    let hw = probs.dim(2) * probs.dim(3);
    let first = if include_background { 0 } else { 1 };
    if first >= k {
        return Err(Error::Config("dice over foreground only needs at least 2 classes".into()));
    }

    // per-class intersection and mass sums
    let mut inter = vec![0.0f64; k];
    let mut psum = vec![0.0f64; k];
    let mut ysum = vec![0.0f64; k];
    {
        let p = probs.data();
        for bi in 0..b {
            for pix in 0..hw {
                let y = labels.as_slice()[bi * hw + pix];
                ysum[y] += 1.0;
                inter[y] += p[(bi * k + y) * hw + pix].to_f64();
                for c in 0..k {
                    psum[c] += p[(bi * k + c) * hw + pix].to_f64();
                }
            }
        }
    }
    let classes = (k - first) as f64;
    let mut mean_d = 0.0f64;
    for c in first..k {
        mean_d += (2.0 * inter[c] + smooth) / (psum[c] + ysum[c] + smooth);
    }
    mean_d /= classes;
    let out = Tensor::scalar(T::from_f64(1.0 - mean_d));
    tape.add_flops(3 * probs.numel() as u64);

    if tape.is_recording() {
        if let Some(pn) = tape.node_of(probs) {
            let y = labels.as_slice().to_vec();
            tape.record(
                &out,
                vec![Some(pn)],
                Box::new(move |g| {
                    // ∂d_c/∂p_c(i) = (2·y_c(i)·(B_c+s) − (2·A_c+s)) / (B_c+s)²
                    let scale = -g[0].to_f64() / classes;
                    let mut dx = vec![T::ZERO; b * k * hw];
                    for c in first..k {
                        let denom = psum[c] + ysum[c] + smooth;
                        let flat = (2.0 * inter[c] + smooth) / (denom * denom);
                        let on = scale * (2.0 / denom - flat);
                        let off = scale * (-flat);
                        for bi in 0..b {
                            for pix in 0..hw {
                                let hit = y[bi * hw + pix] == c;
                                dx[(bi * k + c) * hw + pix] = T::from_f64(if hit { on } else { off });
                            }
                        }
                    }
                    vec![Some(dx)]
                }),
            );
        }
    }
    Ok(out)
}

/// Soft Dice loss on logits: softmax over the class axis, then
/// [`dice_from_probs`].
pub fn dice_loss<T: Scalar>(
    tape: &Tape<T>,
    logits: &Tensor<T>,
    labels: &Labels,
    smooth: f64,
    include_background: bool,
) -> Result<Tensor<T>> {
    let probs = ops::softmax(tape, logits, 1)?;
    dice_from_probs(tape, &probs, labels, smooth, include_background)
}

pub struct CombinedLoss<T: Scalar> {
    pub total: Tensor<T>,
    pub dice: Tensor<T>,
    pub ce: Tensor<T>,
}

/// λ1·Dice + λ2·CE, keeping both sublosses for logging.
pub fn combined_loss<T: Scalar>(
    tape: &Tape<T>,
    logits: &Tensor<T>,
    labels: &Labels,
    w: LossWeights,
    smooth: f64,
    include_background: bool,
) -> Result<CombinedLoss<T>> {
    w.validate()?;
    let dice = dice_loss(tape, logits, labels, smooth, include_background)?;
    let ce = cross_entropy(tape, logits, labels)?;
    let total = ops::add(
        tape,
        &ops::affine(tape, &dice, T::from_f64(w.lambda1), T::ZERO)?,
        &ops::affine(tape, &ce, T::from_f64(w.lambda2), T::ZERO)?,
    )?;
    Ok(CombinedLoss { total, dice, ce })
}
