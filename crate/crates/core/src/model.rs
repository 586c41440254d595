//! The assembled network: parallel ViT + CNN encoders, per-stage
//! channel-attention fusion, and a skip-connected transposed-conv decoder
//! ending in full-resolution class logits.

use crate::cnn::CnnBranch;
use crate::config::{ModelConfig, Resolved};
use crate::error::{Error, Result};
use crate::fusion::{merge, ChannelAttention};
use crate::init::Rng;
use crate::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Init, Mode};
use crate::ops;
use crate::params::ParamSet;
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};
use crate::vit::VitBranch;

/// ×2 upsample, optional skip concat, then two 3×3 conv+BN+ReLU.
pub struct DecoderBlock<T: Scalar> {
    pub up: ConvTranspose2d<T>,
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    skip_width: Option<usize>,
}

impl<T: Scalar> DecoderBlock<T> {
    pub fn new(rng: &mut Rng, cin: usize, skip_width: Option<usize>, out: usize) -> Self {
        Self {
            up: ConvTranspose2d::new(rng, cin, out, (2, 2), (2, 2), true),
            conv1: Conv2d::new(
                rng,
                out + skip_width.unwrap_or(0),
                out,
                (3, 3),
                (1, 1),
                (1, 1),
                false,
                Init::KaimingFanOut,
            ),
            bn1: BatchNorm2d::new(out),
            conv2: Conv2d::new(rng, out, out, (3, 3), (1, 1), (1, 1), false, Init::KaimingFanOut),
            bn2: BatchNorm2d::new(out),
            skip_width,
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, skip: Option<&Tensor<T>>, mode: Mode) -> Result<Tensor<T>> {
        let up = self.up.forward(tape, x)?;
        let merged = match (skip, self.skip_width) {
            (Some(s), Some(w)) => {
                if s.dim(1) != w || s.shape()[2..] != up.shape()[2..] {
                    return Err(Error::shape(
                        "decoder_block",
                        format!("skip {:?} does not fit upsampled {:?} (skip width {w})", s.shape(), up.shape()),
                    ));
                }
                ops::concat(tape, &[&up, s], 1)?
            }
            (None, None) => up,
            _ => {
                return Err(Error::shape(
                    "decoder_block",
                    "skip presence does not match block construction".to_string(),
                ))
            }
        };
        let y = ops::relu(tape, &self.bn1.forward(tape, &self.conv1.forward(tape, &merged)?, mode)?)?;
        ops::relu(tape, &self.bn2.forward(tape, &self.conv2.forward(tape, &y)?, mode)?)
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>, buffers: &mut ParamSet<T>) {
        self.up.collect(&format!("{prefix}.up"), params);
        self.conv1.collect(&format!("{prefix}.conv1"), params);
        self.bn1.collect(&format!("{prefix}.bn1"), params, buffers);
        self.conv2.collect(&format!("{prefix}.conv2"), params);
        self.bn2.collect(&format!("{prefix}.bn2"), params, buffers);
    }
}

/// The closing ×4: transpose conv, 3×3 conv+BN+ReLU, transpose conv, and the
/// 1×1 class head. Two chained ×2 steps rather than one ×4 kernel.
pub struct FinalUpsampler<T: Scalar> {
    pub up1: ConvTranspose2d<T>,
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub up2: ConvTranspose2d<T>,
    pub head: Conv2d<T>,
}

impl<T: Scalar> FinalUpsampler<T> {
    pub fn new(rng: &mut Rng, cin: usize, width: usize, classes: usize) -> Self {
        Self {
            up1: ConvTranspose2d::new(rng, cin, width, (2, 2), (2, 2), true),
            conv: Conv2d::new(rng, width, width, (3, 3), (1, 1), (1, 1), false, Init::KaimingFanOut),
            bn: BatchNorm2d::new(width),
            up2: ConvTranspose2d::new(rng, width, width, (2, 2), (2, 2), true),
            head: Conv2d::new(rng, width, classes, (1, 1), (1, 1), (0, 0), true, Init::KaimingFanOut),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.up1.forward(tape, x)?;
        let y = ops::relu(tape, &self.bn.forward(tape, &self.conv.forward(tape, &y)?, mode)?)?;
        let y = self.up2.forward(tape, &y)?;
        self.head.forward(tape, &y)
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>, buffers: &mut ParamSet<T>) {
        self.up1.collect(&format!("{prefix}.up1"), params);
        self.conv.collect(&format!("{prefix}.conv"), params);
        self.bn.collect(&format!("{prefix}.bn"), params, buffers);
        self.up2.collect(&format!("{prefix}.up2"), params);
        self.head.collect(&format!("{prefix}.head"), params);
    }
}

/// Per-stage encoder features captured during a forward pass.
pub struct StageFeatures<T: Scalar> {
    pub vit: Vec<Tensor<T>>,
    pub cnn: Vec<Tensor<T>>,
    pub fused: Vec<Tensor<T>>,
    /// Channel-attention maps (B×M×1×1), `None` for unfused stages or when
    /// attention is ablated away.
    pub attention: Vec<Option<Tensor<T>>>,
}

pub struct ParaTransCnn<T: Scalar> {
    resolved: Resolved,
    pub vit: VitBranch<T>,
    pub cnn: CnnBranch<T>,
    pub fusion: Vec<Option<ChannelAttention<T>>>,
    pub decoder: Vec<DecoderBlock<T>>,
    pub final_up: FinalUpsampler<T>,
}

impl<T: Scalar> ParaTransCnn<T> {
    pub fn new(rng: &mut Rng, cfg: &ModelConfig) -> Result<Self> {
        let r = cfg.resolve()?;
        let vit = VitBranch::new(rng, &r);
        let cnn = CnnBranch::new(rng, &r);
        let fusion: Vec<Option<ChannelAttention<T>>> = (0..r.stages)
            .map(|i| {
                let fused_here = r.vit_index(i).is_some();
                (fused_here && !cfg.no_channel_attention).then(|| {
                    let m = r.fused_widths[i];
                    ChannelAttention::new(rng, m, r.ca_hidden(m))
                })
            })
            .collect();

        let mut decoder = Vec::with_capacity(r.stages - 1);
        let mut cin = *r.fused_widths.last().unwrap();
        for d in 0..r.stages - 1 {
            let skip_stage = r.stages - 2 - d;
            let out = r.decoder_widths[d];
            decoder.push(DecoderBlock::new(rng, cin, Some(r.fused_widths[skip_stage]), out));
            cin = out;
        }
        let final_up = FinalUpsampler::new(rng, cin, *r.decoder_widths.last().unwrap(), r.num_classes);

        Ok(Self { resolved: r, vit, cnn, fusion, decoder, final_up })
    }

    pub fn resolved(&self) -> &Resolved {
        &self.resolved
    }

    pub fn config(&self) -> &ModelConfig {
        &self.resolved.cfg
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.forward_with_features(tape, x, mode)?.0)
    }

    pub fn forward_with_features(
        &self,
        tape: &Tape<T>,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, StageFeatures<T>)> {
        let r = &self.resolved;
        let s = r.input_size;
        if x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != s || x.dim(3) != s {
            return Err(Error::shape(
                "paratranscnn",
                format!("expected B×3×{s}×{s} input, got {:?}", x.shape()),
            ));
        }

        let vit_maps = self.vit.forward(tape, x)?;
        let cnn_maps = self.cnn.forward(tape, x, mode)?;

        let mut fused = Vec::with_capacity(r.stages);
        let mut attention = Vec::with_capacity(r.stages);
        for i in 0..r.stages {
            match r.vit_index(i) {
                None => {
                    fused.push(cnn_maps[i].clone());
                    attention.push(None);
                }
                Some(vi) => {
                    let m = merge(tape, &cnn_maps[i], &vit_maps[vi])?;
                    match &self.fusion[i] {
                        Some(ca) => {
                            let (f, map) = ca.forward(tape, &m)?;
                            fused.push(f);
                            attention.push(Some(map));
                        }
                        None => {
                            fused.push(m);
                            attention.push(None);
                        }
                    }
                }
            }
        }

        let mut cur = fused[r.stages - 1].clone();
        for (d, block) in self.decoder.iter().enumerate() {
            let skip = &fused[r.stages - 2 - d];
            cur = block.forward(tape, &cur, Some(skip), mode)?;
        }
        let logits = self.final_up.forward(tape, &cur, mode)?;

        debug_assert_eq!(logits.shape(), &[x.dim(0), r.num_classes, s, s]);
        Ok((logits, StageFeatures { vit: vit_maps, cnn: cnn_maps, fused, attention }))
    }

    /// Trainable parameters, in checkpoint order.
    pub fn parameters(&self) -> ParamSet<T> {
        let (params, _) = self.collect();
        params
    }

    /// Non-trainable state (batch-norm running stats).
    pub fn buffers(&self) -> ParamSet<T> {
        let (_, buffers) = self.collect();
        buffers
    }

    pub fn collect(&self) -> (ParamSet<T>, ParamSet<T>) {
        let mut params = ParamSet::new();
        let mut buffers = ParamSet::new();
        self.vit.collect(&mut params);
        self.cnn.collect(&mut params, &mut buffers);
        for (i, ca) in self.fusion.iter().enumerate() {
            if let Some(ca) = ca {
                ca.collect(&format!("fusion.stage{}", i + 1), &mut params);
            }
        }
        for (d, block) in self.decoder.iter().enumerate() {
            block.collect(&format!("decoder.block{}", d + 1), &mut params, &mut buffers);
        }
        self.final_up.collect("decoder.final", &mut params, &mut buffers);
        (params, buffers)
    }

    pub fn count_parameters(&self) -> usize {
        self.parameters().total_elements()
    }

    /// Multiply-accumulates ×2 for one forward pass at the given batch size,
    /// measured by running the forward with a counting tape.
    pub fn count_flops(&self, batch: usize) -> Result<u64> {
        let tape = Tape::no_grad();
        let x = Tensor::zeros(vec![batch, 3, self.resolved.input_size, self.resolved.input_size]);
        self.forward(&tape, &x, Mode::Eval)?;
        Ok(tape.flops())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::seeded_tensor;

    fn desk_cfg() -> ModelConfig {
        ModelConfig {
            token_dim: 16,
            layers_per_stage: vec![1, 1, 1],
            cnn_base_width: 8,
            cnn_blocks_per_stage: vec![1, 1, 1],
            num_heads: Some(2),
            decoder_widths: vec![32, 16, 8],
            num_classes: 4,
            input_size: 32,
            ..Default::default()
        }
    }

    fn build(cfg: &ModelConfig, seed: u64) -> ParaTransCnn<f32> {
        ParaTransCnn::new(&mut Rng::seeded(seed), cfg).unwrap()
    }

    #[test]
    fn logits_land_at_full_resolution() {
        let model = build(&desk_cfg(), 1);
        let x = seeded_tensor::<f32>(vec![2, 3, 32, 32], 2, 1.0);
        let tape = Tape::no_grad();
        let (logits, feats) = model.forward_with_features(&tape, &x, Mode::Train).unwrap();
        assert_eq!(logits.shape(), &[2, 4, 32, 32]);
        assert!(logits.all_finite());
        assert_eq!(feats.vit.len(), 3);
        assert_eq!(feats.fused[0].shape(), &[2, 8 + 16, 8, 8]);
        assert_eq!(feats.fused[1].shape(), &[2, 16 + 32, 4, 4]);
        assert_eq!(feats.fused[2].shape(), &[2, 32 + 64, 2, 2]);
        assert!(feats.attention.iter().all(Option::is_some));
    }

    #[test]
    fn ablations_reshape_the_graph_as_specified() {
        let tape = Tape::no_grad();
        let x = seeded_tensor::<f32>(vec![1, 3, 32, 32], 3, 1.0);

        let no_ca = build(&ModelConfig { no_channel_attention: true, ..desk_cfg() }, 4);
        assert!(no_ca.fusion.iter().all(Option::is_none));
        let (logits, feats) = no_ca.forward_with_features(&tape, &x, Mode::Train).unwrap();
        assert_eq!(logits.shape(), &[1, 4, 32, 32]);
        // fused is exactly the concatenation
        let m = merge(&tape, &feats.cnn[0], &feats.vit[0]).unwrap();
        assert_eq!(feats.fused[0].to_vec(), m.to_vec());

        let np = build(&ModelConfig { no_pyramid: true, ..desk_cfg() }, 5);
        let (logits, feats) = np.forward_with_features(&tape, &x, Mode::Train).unwrap();
        assert_eq!(logits.shape(), &[1, 4, 32, 32]);
        assert_eq!(feats.vit.len(), 1);
        // stages 1–2 skip fusion entirely: raw CNN features
        assert_eq!(feats.fused[0].to_vec(), feats.cnn[0].to_vec());
        assert_eq!(feats.fused[1].to_vec(), feats.cnn[1].to_vec());
        assert_eq!(feats.fused[2].dim(1), 32 + 64);
        assert!(feats.attention[0].is_none() && feats.attention[2].is_some());

        let ov = build(&ModelConfig { patch_overlap: true, ..desk_cfg() }, 6);
        let (logits, _) = ov.forward_with_features(&tape, &x, Mode::Train).unwrap();
        assert_eq!(logits.shape(), &[1, 4, 32, 32]);

        // the /32 stage collapses to 1×1 here, so train-mode BN needs batch > 1
        let fs = build(&ModelConfig { four_stages: true, ..desk_cfg() }, 7);
        let x2 = seeded_tensor::<f32>(vec![2, 3, 32, 32], 30, 1.0);
        let (logits, feats) = fs.forward_with_features(&tape, &x2, Mode::Train).unwrap();
        assert_eq!(logits.shape(), &[2, 4, 32, 32]);
        assert_eq!(feats.fused.len(), 4);
        assert_eq!(feats.fused[3].shape(), &[2, 64 + 128, 1, 1]);
        assert_eq!(fs.decoder.len(), 3);
    }

    #[test]
    fn zero_init_attention_mlp_halves_the_merged_feature() {
        let model = build(&desk_cfg(), 8);
        for ca in model.fusion.iter().flatten() {
            for t in [&ca.fc1.weight, &ca.fc2.weight] {
                for v in t.data_mut().iter_mut() {
                    *v = 0.0;
                }
            }
        }
        let x = seeded_tensor::<f32>(vec![1, 3, 32, 32], 9, 1.0);
        let tape = Tape::no_grad();
        let (_, feats) = model.forward_with_features(&tape, &x, Mode::Train).unwrap();
        for i in 0..3 {
            let m = merge(&tape, &feats.cnn[i], &feats.vit[i]).unwrap();
            for (f, mv) in feats.fused[i].to_vec().iter().zip(m.to_vec()) {
                assert_eq!(*f, 0.5 * mv, "stage {i}");
            }
        }
    }

    #[test]
    fn decoder_block_is_a_pure_chain_no_residual() {
        let mut rng = Rng::seeded(10);
        let block = DecoderBlock::<f32>::new(&mut rng, 8, Some(4), 8);
        // zero the closing BN: with any internal bypass the input would leak
        for t in [&block.bn2.gamma, &block.bn2.beta] {
            for v in t.data_mut().iter_mut() {
                *v = 0.0;
            }
        }
        let x = seeded_tensor::<f32>(vec![1, 8, 4, 4], 11, 1.0);
        let skip = seeded_tensor::<f32>(vec![1, 4, 8, 8], 12, 1.0);
        let tape = Tape::no_grad();
        let y = block.forward(&tape, &x, Some(&skip), Mode::Train).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));

        // skip wiring is checked, not silently broadcast
        assert!(block.forward(&tape, &x, None, Mode::Train).is_err());
        let bad = seeded_tensor::<f32>(vec![1, 5, 8, 8], 13, 1.0);
        assert!(block.forward(&tape, &x, Some(&bad), Mode::Train).is_err());
    }

    #[test]
    fn zeroed_class_head_gives_identically_zero_logits() {
        let model = build(&desk_cfg(), 14);
        for v in model.final_up.head.weight.data_mut().iter_mut() {
            *v = 0.0;
        }
        if let Some(b) = &model.final_up.head.bias {
            for v in b.data_mut().iter_mut() {
                *v = 0.0;
            }
        }
        let x = seeded_tensor::<f32>(vec![1, 3, 32, 32], 15, 1.0);
        let tape = Tape::no_grad();
        let logits = model.forward(&tape, &x, Mode::Train).unwrap();
        assert!(logits.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_extent_is_rejected() {
        let model = build(&desk_cfg(), 16);
        let tape = Tape::no_grad();
        let bad = Tensor::<f32>::zeros(vec![1, 3, 64, 64]);
        let err = model.forward(&tape, &bad, Mode::Eval).unwrap_err();
        assert!(err.to_string().contains("32"), "{err}");
        let bad = Tensor::<f32>::zeros(vec![1, 1, 32, 32]);
        assert!(model.forward(&tape, &bad, Mode::Eval).is_err());
    }

    #[test]
    fn parameter_counts_scale_quadratically_in_cnn_width() {
        let base = build(&desk_cfg(), 17);
        let wide = build(&ModelConfig { cnn_base_width: 16, ..desk_cfg() }, 18);
        let count_cnn = |m: &ParaTransCnn<f32>| -> usize {
            m.parameters()
                .iter()
                .filter(|(n, _)| n.starts_with("cnn."))
                .map(|(_, t)| t.numel())
                .sum()
        };
        assert!(count_cnn(&wide) > 2 * count_cnn(&base));

        // single 3×3 conv, 1→1 channel, no bias: 9 params
        let mut rng = Rng::seeded(19);
        let conv = Conv2d::<f32>::new(&mut rng, 1, 1, (3, 3), (1, 1), (1, 1), false, Init::KaimingFanOut);
        let mut ps = ParamSet::new();
        conv.collect("probe", &mut ps);
        assert_eq!(ps.total_elements(), 9);
    }

    #[test]
    fn flops_counter_reports_forward_work() {
        let model = build(&desk_cfg(), 20);
        let f1 = model.count_flops(1).unwrap();
        let f2 = model.count_flops(2).unwrap();
        assert!(f1 > 0);
        assert_eq!(f2, 2 * f1);
    }

    #[test]
    fn identical_seeds_build_identical_models() {
        let a = build(&desk_cfg(), 21);
        let b = build(&desk_cfg(), 21);
        let (pa, pb) = (a.parameters(), b.parameters());
        for ((na, ta), (nb, tb)) in pa.iter().zip(pb.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.to_vec(), tb.to_vec(), "{na}");
        }
        let c = build(&desk_cfg(), 22);
        let any_diff = pa
            .iter()
            .zip(c.parameters().iter())
            .any(|((_, ta), (_, tc))| ta.to_vec() != tc.to_vec());
        assert!(any_diff);
    }
}
