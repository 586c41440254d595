//! Channel-attention fusion: concatenate CNN and ViT features (CNN channels
//! first), squeeze with global average pooling, re-weight channels through a
//! two-layer MLP and sigmoid, and rescale the merged map.

use crate::error::{Error, Result};
use crate::init::Rng;
use crate::layers::{Init, Linear};
use crate::ops;
use crate::params::ParamSet;
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

/// Channel concatenation, CNN first — shared by attended and plain fusion.
pub fn merge<T: Scalar>(tape: &Tape<T>, f_cnn: &Tensor<T>, f_vit: &Tensor<T>) -> Result<Tensor<T>> {
    let (a, b) = (f_cnn.shape(), f_vit.shape());
    if a.len() != 4 || b.len() != 4 || a[0] != b[0] || a[2..] != b[2..] {
        return Err(Error::shape(
            "merge",
            format!("branch features {a:?} and {b:?} must agree outside the channel axis"),
        ));
    }
    ops::concat(tape, &[f_cnn, f_vit], 1)
}

pub struct ChannelAttention<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    channels: usize,
}

impl<T: Scalar> ChannelAttention<T> {
    pub fn new(rng: &mut Rng, channels: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::new(rng, channels, hidden, true, Init::KaimingFanOut),
            fc2: Linear::new(rng, hidden, channels, true, Init::KaimingFanOut),
            channels,
        }
    }

    /// sigmoid(MLP(GAP(F_M))) as B×M×1×1.
    pub fn attention_map(&self, tape: &Tape<T>, f_m: &Tensor<T>) -> Result<Tensor<T>> {
        if f_m.rank() != 4 || f_m.dim(1) != self.channels {
            return Err(Error::shape(
                "attention_map",
                format!("expected B×{}×h×w, got {:?}", self.channels, f_m.shape()),
            ));
        }
        let b = f_m.dim(0);
        let pooled = ops::global_avg_pool2d(tape, f_m)?;
        let squeezed = ops::reshape(tape, &pooled, vec![b, self.channels])?;
        let h = ops::relu(tape, &self.fc1.forward(tape, &squeezed)?)?;
        let logits = self.fc2.forward(tape, &h)?;
        let weights = ops::sigmoid(tape, &logits)?;
        ops::reshape(tape, &weights, vec![b, self.channels, 1, 1])
    }

    /// F_CA = F_AM ⊗ F_M, broadcasting the per-channel weights spatially.
    pub fn apply(&self, tape: &Tape<T>, f_am: &Tensor<T>, f_m: &Tensor<T>) -> Result<Tensor<T>> {
        ops::mul(tape, f_m, f_am)
    }

    /// Full fused path; returns (F_CA, F_AM).
    pub fn forward(&self, tape: &Tape<T>, f_m: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let map = self.attention_map(tape, f_m)?;
        Ok((self.apply(tape, &map, f_m)?, map))
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        self.fc1.collect(&format!("{prefix}.fc1"), params);
        self.fc2.collect(&format!("{prefix}.fc2"), params);
    }
}
