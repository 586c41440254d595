//! End-to-end finite-difference validation of the full network gradient in
//! f64: every parameter tensor is probed at sampled elements against central
//! differences of the combined loss.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::init::Rng;
use crate::loss::{self, Labels, LossWeights};
use crate::model::ParaTransCnn;
use crate::ops::Mode;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Stream tag for gradcheck RNG ("GRAD").
pub const STREAM_GRAD: u64 = 0x4752_4144;

#[derive(Debug, Clone)]
pub struct GradCheckSettings {
    pub batch: usize,
    /// Elements probed per tensor (larger tensors are subsampled).
    pub samples_per_tensor: usize,
    /// Tensors at or below this element count are probed exhaustively.
    pub exhaustive_below: usize,
    pub tolerance_rel: f64,
    pub tolerance_abs: f64,
    pub base_step: f64,
    pub seed: u64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            batch: 2,
            samples_per_tensor: 3,
            exhaustive_below: 8,
            tolerance_rel: 1e-4,
            tolerance_abs: 1e-8,
            base_step: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckFailure {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_diff: f64,
    pub rel: f64,
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub tensors_checked: usize,
    pub elements_checked: usize,
    pub max_rel: f64,
    pub max_abs: f64,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary(&self) -> String {
        format!(
            "{} tensors, {} elements probed; worst rel {:.3e}, worst abs {:.3e}; {} failure(s)",
            self.tensors_checked,
            self.elements_checked,
            self.max_rel,
            self.max_abs,
            self.failures.len()
        )
    }
}

fn agrees(analytic: f64, numeric: f64, s: &GradCheckSettings) -> (bool, f64, f64) {
    let abs = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    let rel = if scale > 0.0 { abs / scale } else { 0.0 };
    (abs <= s.tolerance_abs || rel <= s.tolerance_rel, abs, rel)
}

/// Probes every parameter of a model built from `cfg` against central
/// differences of the combined Dice + cross-entropy loss on one random batch.
/// Train-mode forward is used so the path being checked is the one the
/// optimizer sees; the tolerance accepts an element if either the absolute
/// difference stays under the floor or the relative error stays under the
/// bound, retrying with a smaller and a larger step before recording a
/// failure (a finite step can straddle a ReLU kink).
pub fn run(cfg: &ModelConfig, settings: &GradCheckSettings) -> Result<GradCheckReport> {
    let mut rng = Rng::derive(settings.seed, STREAM_GRAD, 0);
    let model = ParaTransCnn::<f64>::new(&mut rng, cfg)?;
    let params = model.parameters();
    params.set_requires_grad(true);

    let s = cfg.input_size;
    let x: Tensor<f64> = rng.fill_uniform(vec![settings.batch, 3, s, s], 0.0, 1.0);
    let label_data: Vec<usize> = (0..settings.batch * s * s)
        .map(|_| rng.below(cfg.num_classes))
        .collect();
    let labels = Labels::new([settings.batch, s, s], label_data, cfg.num_classes)?;
    let weights = LossWeights::default();

    let objective = |model: &ParaTransCnn<f64>, tape: &Tape<f64>| -> Result<Tensor<f64>> {
        let logits = model.forward(tape, &x, Mode::Train)?;
        Ok(loss::combined_loss(tape, &logits, &labels, weights, loss::DICE_SMOOTH, true)?.total)
    };

    params.zero_grads();
    let tape = Tape::new();
    let total = objective(&model, &tape)?;
    tape.backward(&total)?;

    let loss_at = |tensor: &Tensor<f64>, index: usize, value: f64| -> Result<f64> {
        let old = tensor.data()[index];
        tensor.data_mut()[index] = value;
        let tape = Tape::no_grad();
        let out = objective(&model, &tape);
        tensor.data_mut()[index] = old;
        Ok(out?.item())
    };

    let mut report = GradCheckReport {
        tensors_checked: 0,
        elements_checked: 0,
        max_rel: 0.0,
        max_abs: 0.0,
        failures: Vec::new(),
    };

    for (name, tensor) in params.iter() {
        let grad = tensor
            .grad()
            .ok_or_else(|| crate::error::Error::Autodiff(format!("no gradient reached {name:?}")))?;
        let numel = tensor.numel();
        let indices: Vec<usize> = if numel <= settings.exhaustive_below {
            (0..numel).collect()
        } else {
            let mut chosen = std::collections::BTreeSet::new();
            while chosen.len() < settings.samples_per_tensor.min(numel) {
                chosen.insert(rng.below(numel));
            }
            chosen.into_iter().collect()
        };

        for index in indices {
            let analytic = grad[index];
            let center = tensor.data()[index];
            let mut attempt_stats = None;
            let mut ok = false;
            for step_scale in [1.0, 0.1, 10.0] {
                let h = settings.base_step * step_scale * (1.0 + center.abs());
                let hi = loss_at(tensor, index, center + h)?;
                let lo = loss_at(tensor, index, center - h)?;
                let numeric = (hi - lo) / (2.0 * h);
                let (pass, abs, rel) = agrees(analytic, numeric, settings);
                if attempt_stats.is_none() {
                    attempt_stats = Some((numeric, abs, rel));
                }
                if pass {
                    if step_scale == 1.0 {
                        report.max_rel = report.max_rel.max(rel);
                        report.max_abs = report.max_abs.max(abs);
                    }
                    ok = true;
                    break;
                }
            }
            report.elements_checked += 1;
            if !ok {
                let (numeric, abs_diff, rel) = attempt_stats.expect("at least one attempt ran");
                report.failures.push(GradCheckFailure {
                    tensor: name.to_string(),
                    index,
                    analytic,
                    numeric,
                    abs_diff,
                    rel,
                });
            }
        }
        report.tensors_checked += 1;
    }
    Ok(report)
}

/// The smallest architecture exercising every structural element, used by the
/// command-line gradient suite by default.
pub fn minimal_config() -> ModelConfig {
    ModelConfig {
        token_dim: 8,
        layers_per_stage: vec![1, 1, 1],
        cnn_base_width: 8,
        cnn_blocks_per_stage: vec![1, 1, 1],
        num_heads: Some(2),
        reduction_ratio: 16,
        decoder_widths: vec![16, 8, 8],
        num_classes: 2,
        input_size: 32,
        patch_overlap: false,
        four_stages: false,
        no_pyramid: false,
        no_channel_attention: false,
    }
}
