//! Pyramid vision-transformer branch: per-stage patch embedding followed by
//! pre-norm transformer layers, emitting a spatial feature map per stage at
//! 1/4, 1/8, 1/16 of the input (plus 1/32 with a fourth stage).

use crate::config::{PatchSpec, Resolved};
use crate::error::{Error, Result};
use crate::init::Rng;
use crate::layers::{Init, LayerNorm, Linear, Mlp};
use crate::ops;
use crate::params::ParamSet;
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

pub const MLP_RATIO: usize = 4;

/// Strided-conv patch projection plus a learned, zero-initialized positional
/// embedding added to the flattened tokens.
pub struct PatchEmbed<T: Scalar> {
    pub proj: crate::layers::Conv2d<T>,
    pub pos: Tensor<T>, // 1×N×D
    dim: usize,
}

impl<T: Scalar> PatchEmbed<T> {
    pub fn new(rng: &mut Rng, cin: usize, dim: usize, spec: PatchSpec, tokens: usize) -> Self {
        let proj = crate::layers::Conv2d::new(
            rng,
            cin,
            dim,
            (spec.kernel, spec.kernel),
            (spec.stride, spec.stride),
            (spec.padding, spec.padding),
            true,
            Init::TruncNormal(0.02),
        );
        Self { proj, pos: Tensor::zeros(vec![1, tokens, dim]), dim }
    }

    /// Returns tokens B×N×D plus the token-grid extent (h, w).
    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<(Tensor<T>, usize, usize)> {
        let fm = self.proj.forward(tape, x)?;
        let (b, d, h, w) = (fm.dim(0), fm.dim(1), fm.dim(2), fm.dim(3));
        let flat = ops::reshape(tape, &fm, vec![b, d, h * w])?;
        let tokens = ops::permute(tape, &flat, &[0, 2, 1])?;
        if tokens.dim(1) != self.pos.dim(1) {
            return Err(Error::shape(
                "patch_embed",
                format!(
                    "{} tokens from a {h}x{w} grid but the positional embedding holds {}",
                    tokens.dim(1),
                    self.pos.dim(1)
                ),
            ));
        }
        let tokens = ops::add(tape, &tokens, &self.pos)?;
        Ok((tokens, h, w))
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        self.proj.collect(&format!("{prefix}.proj"), params);
        params.push(format!("{prefix}.pos"), &self.pos);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Standard multi-head scaled dot-product self-attention.
pub struct MultiHeadAttention<T: Scalar> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub heads: usize,
    dim: usize,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn new(rng: &mut Rng, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        let lin = |rng: &mut Rng| Linear::new(rng, dim, dim, true, Init::TruncNormal(0.02));
        Self { wq: lin(rng), wk: lin(rng), wv: lin(rng), wo: lin(rng), heads, dim }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_with_probs(tape, x)?.0)
    }

    /// Also returns the attention probabilities B×heads×N×N.
    pub fn forward_with_probs(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let xs = x.shape();
        if xs.len() != 3 || xs[2] != self.dim {
            return Err(Error::shape(
                "attention",
                format!("expected B×N×{} tokens, got {:?}", self.dim, xs),
            ));
        }
        let (b, n) = (xs[0], xs[1]);
        let (h, dh) = (self.heads, self.dim / self.heads);

        let split = |tape: &Tape<T>, t: &Tensor<T>| -> Result<Tensor<T>> {
            let t = ops::reshape(tape, t, vec![b, n, h, dh])?;
            ops::permute(tape, &t, &[0, 2, 1, 3]) // B×h×N×dh
        };
        // The 1/√dh scale lands on q (B×N×D) rather than on the N×N score
        // maps, and softmax consumes the score buffer in place: at pyramid
        // stage 1 the scores are orders of magnitude larger than q, and the
        // extra copies dominated peak memory for wide models.
        let q = ops::affine(
            tape,
            &self.wq.forward(tape, x)?,
            T::from_f64(1.0 / (dh as f64).sqrt()),
            T::ZERO,
        )?;
        let q = split(tape, &q)?;
        let k = split(tape, &self.wk.forward(tape, x)?)?;
        let v = split(tape, &self.wv.forward(tape, x)?)?;

        let kt = ops::permute(tape, &k, &[0, 1, 3, 2])?;
        let scores = ops::matmul(tape, &q, &kt)?;
        let probs = ops::softmax_owned(tape, scores, 3)?;

        let ctx = ops::matmul(tape, &probs, &v)?;
        let ctx = ops::permute(tape, &ctx, &[0, 2, 1, 3])?;
        let ctx = ops::reshape(tape, &ctx, vec![b, n, self.dim])?;
        Ok((self.wo.forward(tape, &ctx)?, probs))
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        self.wq.collect(&format!("{prefix}.wq"), params);
        self.wk.collect(&format!("{prefix}.wk"), params);
        self.wv.collect(&format!("{prefix}.wv"), params);
        self.wo.collect(&format!("{prefix}.wo"), params);
    }
}

/// Pre-norm block: x + MSA(LN(x)), then + MLP(LN(·)).
pub struct TransformerLayer<T: Scalar> {
    pub norm1: LayerNorm<T>,
    pub attn: MultiHeadAttention<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

impl<T: Scalar> TransformerLayer<T> {
    pub fn new(rng: &mut Rng, dim: usize, heads: usize) -> Self {
        Self {
            norm1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(rng, dim, heads),
            norm2: LayerNorm::new(dim),
            mlp: Mlp::new(rng, dim, dim * MLP_RATIO),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.attn.forward(tape, &self.norm1.forward(tape, x)?)?;
        let x = ops::add(tape, x, &a)?;
        let m = self.mlp.forward(tape, &self.norm2.forward(tape, &x)?)?;
        ops::add(tape, &x, &m)
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        self.norm1.collect(&format!("{prefix}.norm1"), params);
        self.attn.collect(&format!("{prefix}.attn"), params);
        self.norm2.collect(&format!("{prefix}.norm2"), params);
        self.mlp.collect(&format!("{prefix}.mlp"), params);
    }
}

pub struct VitStage<T: Scalar> {
    pub embed: PatchEmbed<T>,
    pub layers: Vec<TransformerLayer<T>>,
}

impl<T: Scalar> VitStage<T> {
    /// Tokens in, spatial map B×D×h×w out.
    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (mut tokens, h, w) = self.embed.forward(tape, x)?;
        for layer in &self.layers {
            tokens = layer.forward(tape, &tokens)?;
        }
        let b = tokens.dim(0);
        let d = self.embed.dim();
        let spatial = ops::permute(tape, &tokens, &[0, 2, 1])?;
        ops::reshape(tape, &spatial, vec![b, d, h, w])
    }

    pub fn collect(&self, prefix: &str, params: &mut ParamSet<T>) {
        self.embed.collect(&format!("{prefix}.embed"), params);
        for (k, layer) in self.layers.iter().enumerate() {
            layer.collect(&format!("{prefix}.layer{}", k + 1), params);
        }
    }
}

pub struct VitBranch<T: Scalar> {
    pub stages: Vec<VitStage<T>>,
}

impl<T: Scalar> VitBranch<T> {
    pub fn new(rng: &mut Rng, r: &Resolved) -> Self {
        let mut stages = Vec::new();
        if r.cfg.no_pyramid {
            // one deep stage; every configured layer runs at the bottom scale
            let dim = r.vit_widths[0];
            let embed = PatchEmbed::new(rng, 3, dim, r.patches[0], r.tokens[0]);
            let total: usize = r.layers.iter().sum();
            let layers = (0..total).map(|_| TransformerLayer::new(rng, dim, r.heads[0])).collect();
            stages.push(VitStage { embed, layers });
        } else {
            let mut cin = 3;
            for i in 0..r.stages {
                let dim = r.vit_widths[i];
                let embed = PatchEmbed::new(rng, cin, dim, r.patches[i], r.tokens[i]);
                let layers = (0..r.layers[i])
                    .map(|_| TransformerLayer::new(rng, dim, r.heads[i]))
                    .collect();
                stages.push(VitStage { embed, layers });
                cin = dim;
            }
        }
        Self { stages }
    }

    /// Feature maps per stage, shallow → deep (a single deep map under
    /// no_pyramid).
    pub fn forward(&self, tape: &Tape<T>, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut maps = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for stage in &self.stages {
            let map = stage.forward(tape, &cur)?;
            cur = map.clone();
            maps.push(map);
        }
        Ok(maps)
    }

    pub fn collect(&self, params: &mut ParamSet<T>) {
        for (j, stage) in self.stages.iter().enumerate() {
            stage.collect(&format!("vit.stage{}", j + 1), params);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::testutil::{assert_grad_matches_fd, seeded_tensor};

    fn small_resolved() -> Resolved {
        ModelConfig {
            token_dim: 8,
            layers_per_stage: vec![1, 1, 1],
            cnn_base_width: 8,
            num_heads: Some(2),
            input_size: 32,
            num_classes: 2,
            ..Default::default()
        }
        .resolve()
        .unwrap()
    }

    #[test]
    fn constant_image_identity_projection_yields_constant_tokens() {
        let mut rng = Rng::seeded(1);
        let embed = PatchEmbed::<f64>::new(
            &mut rng,
            1,
            4,
            PatchSpec { kernel: 4, stride: 4, padding: 0 },
            4,
        );
        // identity-ish projection: each output channel sums its patch equally
        {
            let mut w = embed.proj.weight.data_mut();
            for v in w.iter_mut() {
                *v = 1.0 / 16.0;
            }
        }
        if let Some(b) = &embed.proj.bias {
            for v in b.data_mut().iter_mut() {
                *v = 0.0;
            }
        }
        let x = Tensor::<f64>::full(vec![1, 1, 8, 8], 3.0);
        let tape = Tape::no_grad();
        let (tokens, h, w) = embed.forward(&tape, &x).unwrap();
        assert_eq!((h, w), (2, 2));
        assert_eq!(tokens.shape(), &[1, 4, 4]);
        for v in tokens.to_vec() {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn token_count_times_patch_area_covers_input() {
        let r = small_resolved();
        for (i, spec) in r.patches.iter().enumerate() {
            let side = r.input_size >> (i + 2);
            assert_eq!(r.tokens[i], side * side);
            // stride, not kernel, determines the grid
            let prev = if i == 0 { r.input_size } else { r.input_size >> (i + 1) };
            assert_eq!(prev / spec.stride, side);
        }
    }

    #[test]
    fn single_token_attends_to_itself_exactly() {
        let mut rng = Rng::seeded(2);
        let attn = MultiHeadAttention::<f64>::new(&mut rng, 8, 2);
        let x = seeded_tensor::<f64>(vec![2, 1, 8], 3, 1.0);
        let tape = Tape::no_grad();
        let (out, probs) = attn.forward_with_probs(&tape, &x).unwrap();
        assert_eq!(probs.shape(), &[2, 2, 1, 1]);
        for p in probs.to_vec() {
            assert_eq!(p, 1.0);
        }
        // output is wo(v) of that single token
        let v = attn.wv.forward(&tape, &x).unwrap();
        let direct = attn.wo.forward(&tape, &v).unwrap();
        for (a, b) in out.to_vec().iter().zip(direct.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_tokens_give_uniform_rows() {
        let mut rng = Rng::seeded(4);
        let attn = MultiHeadAttention::<f64>::new(&mut rng, 8, 2);
        let one = seeded_tensor::<f64>(vec![1, 1, 8], 5, 1.0);
        let tape = Tape::no_grad();
        let x = ops::concat(&tape, &[&one, &one, &one, &one, &one], 1).unwrap();
        let (_, probs) = attn.forward_with_probs(&tape, &x).unwrap();
        for p in probs.to_vec() {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_stochastic_and_grads_match_fd() {
        let mut rng = Rng::seeded(6);
        let attn = MultiHeadAttention::<f64>::new(&mut rng, 8, 2);
        let x = seeded_tensor::<f64>(vec![1, 4, 8], 7, 1.0);
        let tape = Tape::no_grad();
        let (_, probs) = attn.forward_with_probs(&tape, &x).unwrap();
        let pv = probs.to_vec();
        for row in pv.chunks(4) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
        assert_grad_matches_fd(
            &[&x, &attn.wq.weight, &attn.wo.weight],
            |t, i| {
                let a = MultiHeadAttention {
                    wq: Linear { weight: i[1].clone(), bias: attn.wq.bias.clone() },
                    wk: Linear { weight: attn.wk.weight.clone(), bias: attn.wk.bias.clone() },
                    wv: Linear { weight: attn.wv.weight.clone(), bias: attn.wv.bias.clone() },
                    wo: Linear { weight: i[2].clone(), bias: attn.wo.bias.clone() },
                    heads: 2,
                    dim: 8,
                };
                a.forward(t, &i[0])
            },
            1e-5,
        );
    }

    #[test]
    fn zeroed_output_projections_make_layer_identity() {
        let mut rng = Rng::seeded(8);
        let layer = TransformerLayer::<f64>::new(&mut rng, 8, 2);
        for t in [&layer.attn.wo.weight, &layer.mlp.fc2.weight] {
            for v in t.data_mut().iter_mut() {
                *v = 0.0;
            }
        }
        let x = seeded_tensor::<f64>(vec![2, 5, 8], 9, 1.0);
        let tape = Tape::no_grad();
        let y = layer.forward(&tape, &x).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn transformer_layer_gradcheck_tiny() {
        let mut rng = Rng::seeded(10);
        let layer = TransformerLayer::<f64>::new(&mut rng, 4, 2);
        let x = seeded_tensor::<f64>(vec![1, 3, 4], 11, 1.0);
        assert_grad_matches_fd(&[&x], |t, i| layer.forward(t, &i[0]), 1e-5);
    }

    #[test]
    fn branch_shapes_pyramid_and_flat() {
        let r = small_resolved();
        let mut rng = Rng::seeded(12);
        let branch = VitBranch::<f32>::new(&mut rng, &r);
        let x = seeded_tensor::<f32>(vec![1, 3, 32, 32], 13, 1.0);
        let tape = Tape::no_grad();
        let maps = branch.forward(&tape, &x).unwrap();
        assert_eq!(maps.len(), 3);
        assert_eq!(maps[0].shape(), &[1, 8, 8, 8]);
        assert_eq!(maps[1].shape(), &[1, 16, 4, 4]);
        assert_eq!(maps[2].shape(), &[1, 32, 2, 2]);

        let rnp = ModelConfig {
            token_dim: 8,
            layers_per_stage: vec![1, 1, 1],
            num_heads: Some(2),
            input_size: 32,
            no_pyramid: true,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        let branch = VitBranch::<f32>::new(&mut rng, &rnp);
        assert_eq!(branch.stages.len(), 1);
        assert_eq!(branch.stages[0].layers.len(), 3);
        let maps = branch.forward(&tape, &x).unwrap();
        assert_eq!(maps.len(), 1);
        assert_eq!(maps[0].shape(), &[1, 32, 2, 2]);
    }

    #[test]
    fn zeroed_residual_paths_reduce_branch_to_chained_embeds() {
        let r = small_resolved();
        let mut rng = Rng::seeded(14);
        let branch = VitBranch::<f64>::new(&mut rng, &r);
        for stage in &branch.stages {
            for layer in &stage.layers {
                for t in [&layer.attn.wo.weight, &layer.mlp.fc2.weight] {
                    for v in t.data_mut().iter_mut() {
                        *v = 0.0;
                    }
                }
            }
        }
        let x = seeded_tensor::<f64>(vec![1, 3, 32, 32], 15, 1.0);
        let tape = Tape::no_grad();
        let maps = branch.forward(&tape, &x).unwrap();

        // chained embeds alone
        let mut cur = x.clone();
        for (i, stage) in branch.stages.iter().enumerate() {
            let (tokens, h, w) = stage.embed.forward(&tape, &cur).unwrap();
            let spatial = ops::permute(&tape, &tokens, &[0, 2, 1]).unwrap();
            cur = ops::reshape(&tape, &spatial, vec![1, stage.embed.dim(), h, w]).unwrap();
            for (a, b) in maps[i].to_vec().iter().zip(cur.to_vec()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn param_names_follow_the_stage_layer_scheme() {
        let r = small_resolved();
        let mut rng = Rng::seeded(16);
        let branch = VitBranch::<f32>::new(&mut rng, &r);
        let mut ps = ParamSet::new();
        branch.collect(&mut ps);
        assert!(ps.get("vit.stage1.embed.proj.weight").is_some());
        assert!(ps.get("vit.stage1.embed.pos").is_some());
        assert!(ps.get("vit.stage2.layer1.attn.wq.weight").is_some());
        assert!(ps.get("vit.stage3.layer1.mlp.fc2.bias").is_some());
    }
}
