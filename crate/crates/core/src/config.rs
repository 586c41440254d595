//! Model configuration: the user-facing knob set plus the resolved geometry
//! (per-stage widths, token counts, head counts) derived from it. Everything
//! downstream builds against the resolved form, so invalid combinations die
//! here and never at step time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_token_dim() -> usize {
    320
}
fn default_layers() -> Vec<usize> {
    vec![3, 3, 3]
}
fn default_cnn_width() -> usize {
    64
}
fn default_blocks() -> Vec<usize> {
    vec![2, 2, 2]
}
fn default_reduction() -> usize {
    16
}
fn default_decoder_widths() -> Vec<usize> {
    vec![256, 128, 64]
}
fn default_classes() -> usize {
    9
}
fn default_input() -> usize {
    224
}

/// ParaTransCNN-Medium by default: C=320, layers [3,3,3], ResNet-18-style
/// trunk, 224×224 input, 9 classes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Stage-1 token width C; stages scale it ×1, ×2, ×4 (×8 with a 4th stage).
    pub token_dim: usize,
    /// Transformer layers per ViT stage.
    pub layers_per_stage: Vec<usize>,
    /// Stage-1 CNN width C′; same ×2 progression across stages.
    pub cnn_base_width: usize,
    /// Residual blocks per CNN stage.
    pub cnn_blocks_per_stage: Vec<usize>,
    /// Attention heads per stage; `None` applies max(1, D_j/64).
    pub num_heads: Option<usize>,
    /// Channel-attention squeeze ratio (hidden = max(4, M/r)).
    pub reduction_ratio: usize,
    /// Decoder widths, shallow ← deep: the first stages−1 are skip-block
    /// outputs, the last is the final upsampler width before the class head.
    pub decoder_widths: Vec<usize>,
    pub num_classes: usize,
    /// Square input extent; must tile by the deepest downsampling factor.
    pub input_size: usize,
    /// Overlapping patch embeddings: 7/4/3 at stage 1, 3/2/1 afterwards.
    pub patch_overlap: bool,
    /// Append a 4th stage at /32 with widths 8C / 8C′.
    pub four_stages: bool,
    /// Single patch-16 embedding at the deepest scale; only the last stage
    /// fuses, earlier skips carry raw CNN features.
    pub no_pyramid: bool,
    /// Fuse by concatenation alone.
    pub no_channel_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            token_dim: default_token_dim(),
            layers_per_stage: default_layers(),
            cnn_base_width: default_cnn_width(),
            cnn_blocks_per_stage: default_blocks(),
            num_heads: None,
            reduction_ratio: default_reduction(),
            decoder_widths: default_decoder_widths(),
            num_classes: default_classes(),
            input_size: default_input(),
            patch_overlap: false,
            four_stages: false,
            no_pyramid: false,
            no_channel_attention: false,
        }
    }
}

/// Geometry of one patch-embedding conv.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Everything the module constructors need, precomputed and checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub cfg: ModelConfig,
    pub stages: usize,
    pub input_size: usize,
    pub num_classes: usize,
    /// Spatial extent of stage i (square).
    pub spatial: Vec<usize>,
    pub vit_widths: Vec<usize>,
    pub cnn_widths: Vec<usize>,
    /// Channel width entering decoder skip/bottleneck position i.
    pub fused_widths: Vec<usize>,
    pub heads: Vec<usize>,
    pub layers: Vec<usize>,
    pub blocks: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    /// Patch-embed convs per ViT stage (single entry under no_pyramid).
    pub patches: Vec<PatchSpec>,
    /// Token count per ViT stage.
    pub tokens: Vec<usize>,
}

impl ModelConfig {
    pub fn resolve(&self) -> Result<Resolved> {
        let stages = if self.four_stages { 4 } else { 3 };
        let factor = 1usize << (stages + 1); // 16 or 32

        if self.input_size == 0 || self.input_size % factor != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of {factor}",
                self.input_size
            )));
        }
        if self.token_dim == 0 {
            return Err(Error::Config("token_dim must be positive".into()));
        }
        if self.cnn_base_width == 0 {
            return Err(Error::Config("cnn_base_width must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes {} must be at least 2",
                self.num_classes
            )));
        }
        if self.reduction_ratio == 0 {
            return Err(Error::Config("reduction_ratio must be positive".into()));
        }
        if matches!(self.num_heads, Some(0)) {
            return Err(Error::Config("num_heads override must be positive".into()));
        }

        let extend = |name: &str, v: &[usize]| -> Result<Vec<usize>> {
            if v.iter().any(|&e| e == 0) {
                return Err(Error::Config(format!("{name} entries must be ≥ 1, got {v:?}")));
            }
            match (v.len(), stages) {
                (l, s) if l == s => Ok(v.to_vec()),
                (3, 4) => {
                    // mirror stage 3 into the extra stage
                    let mut out = v.to_vec();
                    out.push(v[2]);
                    Ok(out)
                }
                (l, s) => Err(Error::Config(format!("{name} has {l} entries but the model has {s} stages"))),
            }
        };
        let layers = extend("layers_per_stage", &self.layers_per_stage)?;
        let blocks = extend("cnn_blocks_per_stage", &self.cnn_blocks_per_stage)?;

        let decoder_widths = {
            let v = &self.decoder_widths;
            if v.iter().any(|&e| e == 0) {
                return Err(Error::Config(format!("decoder_widths entries must be ≥ 1, got {v:?}")));
            }
            match (v.len(), stages) {
                (l, s) if l == s => v.clone(),
                (3, 4) => {
                    // deepen the taper by prepending twice the first width
                    let mut out = vec![v[0] * 2];
                    out.extend_from_slice(v);
                    out
                }
                (l, s) => Err(Error::Config(format!(
                    "decoder_widths has {l} entries but the model has {s} stages"
                )))?,
            }
        };

        let spatial: Vec<usize> = (0..stages).map(|i| self.input_size >> (i + 2)).collect();
        let cnn_widths: Vec<usize> = (0..stages).map(|i| self.cnn_base_width << i).collect();
        let pyramid_widths: Vec<usize> = (0..stages).map(|i| self.token_dim << i).collect();

        let (vit_widths, patches, tokens): (Vec<usize>, Vec<PatchSpec>, Vec<usize>) = if self.no_pyramid {
            let width = *pyramid_widths.last().unwrap();
            let side = *spatial.last().unwrap();
            (
                vec![width],
                vec![PatchSpec { kernel: factor, stride: factor, padding: 0 }],
                vec![side * side],
            )
        } else {
            let mut specs = Vec::with_capacity(stages);
            for i in 0..stages {
                let p = if i == 0 { 4 } else { 2 };
                specs.push(if self.patch_overlap {
                    if i == 0 {
                        PatchSpec { kernel: 7, stride: 4, padding: 3 }
                    } else {
                        PatchSpec { kernel: 3, stride: 2, padding: 1 }
                    }
                } else {
                    PatchSpec { kernel: p, stride: p, padding: 0 }
                });
            }
            let toks = spatial.iter().map(|&s| s * s).collect();
            (pyramid_widths.clone(), specs, toks)
        };

        let heads: Vec<usize> = vit_widths
            .iter()
            .map(|&d| self.num_heads.unwrap_or_else(|| (d / 64).max(1)))
            .collect();
        for (i, (&d, &h)) in vit_widths.iter().zip(&heads).enumerate() {
            if d % h != 0 {
                return Err(Error::Config(format!(
                    "stage {} embed dim {d} is not divisible by {h} heads",
                    i + 1
                )));
            }
        }

        let fused_widths: Vec<usize> = if self.no_pyramid {
            (0..stages)
                .map(|i| {
                    if i + 1 == stages {
                        cnn_widths[i] + vit_widths[0]
                    } else {
                        cnn_widths[i]
                    }
                })
                .collect()
        } else {
            cnn_widths.iter().zip(&vit_widths).map(|(a, b)| a + b).collect()
        };

        Ok(Resolved {
            cfg: self.clone(),
            stages,
            input_size: self.input_size,
            num_classes: self.num_classes,
            spatial,
            vit_widths,
            cnn_widths,
            fused_widths,
            heads,
            layers,
            blocks,
            decoder_widths,
            patches,
            tokens,
        })
    }
}

impl Resolved {
    /// Channel-attention hidden width for merged width `m`.
    pub fn ca_hidden(&self, m: usize) -> usize {
        (m / self.cfg.reduction_ratio).max(4)
    }

    /// Index into `vit_widths`/`tokens` for fused stage `i`, if stage `i`
    /// receives a ViT feature at all.
    pub fn vit_index(&self, stage: usize) -> Option<usize> {
        if self.cfg.no_pyramid {
            (stage + 1 == self.stages).then_some(0)
        } else {
            Some(stage)
        }
    }
}
