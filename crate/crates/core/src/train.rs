//! SGD training loop with polynomial learning-rate decay, checkpointing and
//! resume, plus the evaluation / prediction / attention-export entry points
//! that the command-line tools wrap.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Snapshot};
use crate::config::ModelConfig;
use crate::data::{self, DatasetManifest, EpochStream, SegmentationSample};
use crate::error::{Error, Result};
use crate::init::Rng;
use crate::loss::{self, LossWeights};
use crate::metrics::{self, CasePair, MetricReport, VolumeMask};
use crate::model::ParaTransCnn;
use crate::ops::Mode;
use crate::params::ParamSet;
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

/// Stream tag for the parameter-initialization RNG ("INIT").
pub const STREAM_INIT: u64 = 0x494e_4954;
/// Stream tag for per-epoch shuffle/augmentation RNGs ("EPOC").
pub const STREAM_EPOCH: u64 = 0x4550_4f43;

pub const CHECKPOINT_FILE: &str = "checkpoint.ptckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EVAL_LOG_FILE: &str = "eval_log.csv";
pub const RUN_CONFIG_FILE: &str = "config.json";

fn default_base_lr() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_batch_size() -> usize {
    4
}
fn default_epochs() -> usize {
    150
}
fn default_poly_power() -> f64 {
    0.9
}
fn default_log_every() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_dice_smooth() -> f64 {
    loss::DICE_SMOOTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_poly_power")]
    pub poly_power: f64,
    #[serde(default)]
    pub seed: u64,
    /// Write a log row every this many iterations (the first of each run is
    /// always written).
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Save a checkpoint every this many epochs; 0 saves only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Evaluate on the training set every this many epochs; 0 evaluates only
    /// after the last epoch.
    #[serde(default)]
    pub eval_every: usize,
    /// Stop once a scheduled evaluation reaches this mean foreground DSC.
    #[serde(default)]
    pub target_dsc: Option<f64>,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default = "default_dice_smooth")]
    pub dice_smooth: f64,
    #[serde(default = "default_true")]
    pub dice_includes_background: bool,
    #[serde(default = "default_true")]
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config deserializes via field defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if !(self.poly_power > 0.0) || !self.poly_power.is_finite() {
            return Err(Error::Config(format!("poly_power must be positive, got {}", self.poly_power)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0,1), got {}", self.momentum)));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!("weight_decay must be ≥ 0, got {}", self.weight_decay)));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be ≥ 1".into()));
        }
        if !(self.dice_smooth > 0.0) {
            return Err(Error::Config(format!("dice_smooth must be positive, got {}", self.dice_smooth)));
        }
        self.loss.validate()
    }
}

/// The full description of a training run; written beside the checkpoint so
/// downstream commands can rebuild the architecture.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
            }
        }
        let text = serde_json::to_string_pretty(self).expect("run config serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// lr = base · (1 − iter/max_iter)^power, evaluated per iteration.
pub fn poly_lr(iter: u64, max_iter: u64, base_lr: f64, power: f64) -> f64 {
    if max_iter == 0 {
        return base_lr;
    }
    let frac = 1.0 - iter as f64 / max_iter as f64;
    base_lr * frac.max(0.0).powf(power)
}

/// SGD with classic momentum and decoupled-from-nothing L2 weight decay:
/// v ← μ·v + (g + wd·p), p ← p − lr·v.
pub struct Sgd<T: Scalar> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(params: &ParamSet<T>, momentum: f64, weight_decay: f64) -> Self {
        let velocity = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.shape().to_vec()))
            .collect();
        Self { momentum, weight_decay, velocity }
    }

    /// Momentum buffers in parameter order, for checkpointing.
    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    pub fn step(&mut self, params: &ParamSet<T>, lr: f64) -> Result<()> {
        let mu = T::from_f64(self.momentum);
        let wd = T::from_f64(self.weight_decay);
        let lr = T::from_f64(lr);
        for ((name, p), v) in params.iter().zip(&self.velocity) {
            let grad = p
                .grad()
                .ok_or_else(|| Error::Autodiff(format!("parameter {name:?} has no gradient")))?;
            let mut pd = p.data_mut();
            let mut vd = v.data_mut();
            for i in 0..pd.len() {
                vd[i] = mu * vd[i] + (grad[i] + wd * pd[i]);
                pd[i] = pd[i] - lr * vd[i];
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
    pub dice_loss: f64,
    pub ce_loss: f64,
    pub wall_ms: f64,
}

pub struct TrainOutcome {
    pub iterations: u64,
    pub epochs_run: usize,
    pub final_train_dsc: Option<f64>,
    pub rows: Vec<LogRow>,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub stopped_early: bool,
}

fn checkpoint_entries<'a>(
    params: &'a ParamSet<f32>,
    buffers: &'a ParamSet<f32>,
    opt_names: &'a [String],
    velocity: &'a [Tensor<f32>],
) -> impl Iterator<Item = (&'a str, &'a Tensor<f32>)> {
    params
        .iter()
        .chain(buffers.iter())
        .chain(opt_names.iter().map(String::as_str).zip(velocity.iter()))
}

/// Runs (or resumes) a training job, leaving `checkpoint.ptckpt`,
/// `train_log.csv`, `eval_log.csv`, and `config.json` in `out_dir`.
///
/// `resume` restores parameters, batch-norm statistics, momentum, and the
/// iteration counter from an earlier checkpoint; only epoch boundaries are
/// valid resume points. `stop_after_epochs` limits how many epochs this
/// invocation runs without changing the overall schedule, so a later resume
/// continues exactly where an uninterrupted run would have been.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
    out_dir: impl AsRef<Path>,
    resume: Option<&Path>,
    stop_after_epochs: Option<usize>,
) -> Result<TrainOutcome> {
    let out_dir = out_dir.as_ref();
    cfg.validate()?;
    if manifest.num_classes != model_cfg.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model is configured for {}",
            manifest.num_classes, model_cfg.num_classes
        )));
    }
    let samples = manifest.load_all()?;

    let mut rng = Rng::derive(cfg.seed, STREAM_INIT, 0);
    let model = ParaTransCnn::<f32>::new(&mut rng, model_cfg)?;
    let (params, buffers) = model.collect();
    params.set_requires_grad(true);
    let mut sgd = Sgd::new(&params, cfg.momentum, cfg.weight_decay);
    let opt_names: Vec<String> = params.names().map(|n| format!("opt.{n}")).collect();

    let input_size = model.resolved().input_size;
    let batches_per_epoch = samples.len().div_ceil(cfg.batch_size) as u64;
    let max_iter = cfg.epochs as u64 * batches_per_epoch;

    let mut iter = 0u64;
    if let Some(ckpt) = resume {
        let snap = Snapshot::load(ckpt)?;
        if snap.iteration % batches_per_epoch != 0 {
            return Err(Error::Config(format!(
                "checkpoint stopped mid-epoch (iteration {} with {} batches per epoch); \
                 only epoch boundaries are valid resume points",
                snap.iteration, batches_per_epoch
            )));
        }
        if snap.iteration > max_iter {
            return Err(Error::Config(format!(
                "checkpoint iteration {} exceeds the schedule of {max_iter}",
                snap.iteration
            )));
        }
        snap.apply(&params, "", ckpt)?;
        snap.apply(&buffers, "", ckpt)?;
        let mut vel = ParamSet::new();
        for (name, v) in opt_names.iter().zip(sgd.velocity()) {
            vel.push(name.clone(), v);
        }
        snap.apply(&vel, "", ckpt)?;
        iter = snap.iteration;
    }
    let start_epoch = (iter / batches_per_epoch) as usize;
    let end_epoch = match stop_after_epochs {
        Some(n) => cfg.epochs.min(start_epoch + n),
        None => cfg.epochs,
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    RunConfig { model: model_cfg.clone(), train: cfg.clone() }.save(out_dir.join(RUN_CONFIG_FILE))?;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(TRAIN_LOG_FILE);
    let eval_log_path = out_dir.join(EVAL_LOG_FILE);

    let append = resume.is_some() && log_path.exists();
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if !append {
        writeln!(log, "iter,lr,loss,dice_loss,ce_loss,wall_ms").map_err(|e| Error::io(&log_path, e))?;
    }
    let mut eval_log = std::fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(&eval_log_path)
        .map_err(|e| Error::io(&eval_log_path, e))?;
    if !append {
        writeln!(eval_log, "epoch,iter,mean_dsc").map_err(|e| Error::io(&eval_log_path, e))?;
    }

    let save_state = |iteration: u64, sgd: &Sgd<f32>| {
        checkpoint::save(
            &checkpoint_path,
            checkpoint_entries(&params, &buffers, &opt_names, sgd.velocity()),
            iteration,
        )
    };

    let eval_opts = EvalOptions::default();
    let mut rows = Vec::new();
    let mut stopped_early = false;
    let mut final_train_dsc = None;
    let mut epochs_run = 0usize;

    for epoch in start_epoch..end_epoch {
        let stream = EpochStream::new(
            &samples,
            manifest.num_classes,
            cfg.batch_size,
            input_size,
            cfg.augment,
            Rng::derive(cfg.seed, STREAM_EPOCH, epoch as u64),
        )?;
        for batch in stream {
            let batch = batch?;
            let lr = poly_lr(iter, max_iter, cfg.base_lr, cfg.poly_power);
            let clock = Instant::now();

            let tape = Tape::new();
            params.zero_grads();
            let logits = model.forward(&tape, &batch.images, Mode::Train)?;
            let combined = loss::combined_loss(
                &tape,
                &logits,
                &batch.labels,
                cfg.loss,
                cfg.dice_smooth,
                cfg.dice_includes_background,
            )?;
            let loss_v = combined.total.item() as f64;
            if !loss_v.is_finite() {
                return Err(Error::Training {
                    iter: iter as usize,
                    lr,
                    detail: format!("non-finite loss {loss_v}"),
                });
            }
            tape.backward(&combined.total)?;
            sgd.step(&params, lr)?;

            let row = LogRow {
                iter,
                lr,
                loss: loss_v,
                dice_loss: combined.dice.item() as f64,
                ce_loss: combined.ce.item() as f64,
                wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            };
            if iter % cfg.log_every as u64 == 0 {
                writeln!(
                    log,
                    "{},{},{},{},{},{:.3}",
                    row.iter, row.lr, row.loss, row.dice_loss, row.ce_loss, row.wall_ms
                )
                .map_err(|e| Error::io(&log_path, e))?;
                rows.push(row);
            }
            iter += 1;
        }
        epochs_run += 1;

        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            save_state(iter, &sgd)?;
        }
        let scheduled_eval = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        let last = epoch + 1 == end_epoch;
        if scheduled_eval || last {
            let report = evaluate(&model, &samples, manifest.num_classes, &eval_opts)?;
            final_train_dsc = Some(report.mean_dsc);
            writeln!(eval_log, "{},{},{}", epoch + 1, iter, report.mean_dsc)
                .map_err(|e| Error::io(&eval_log_path, e))?;
            if let Some(target) = cfg.target_dsc {
                if report.mean_dsc >= target {
                    stopped_early = !last;
                    break;
                }
            }
        }
    }

    log.flush().map_err(|e| Error::io(&log_path, e))?;
    eval_log.flush().map_err(|e| Error::io(&eval_log_path, e))?;
    save_state(iter, &sgd)?;
    Ok(TrainOutcome {
        iterations: iter,
        epochs_run,
        final_train_dsc,
        rows,
        checkpoint_path,
        log_path,
        stopped_early,
    })
}

/// Rebuilds a trained model from a run directory's `config.json` and
/// checkpoint; returns the model and the checkpoint's iteration counter.
pub fn load_model(config_path: impl AsRef<Path>, checkpoint_path: impl AsRef<Path>) -> Result<(ParaTransCnn<f32>, RunConfig, u64)> {
    let run = RunConfig::load(config_path)?;
    let checkpoint_path = checkpoint_path.as_ref();
    let mut rng = Rng::derive(run.train.seed, STREAM_INIT, 0);
    let model = ParaTransCnn::<f32>::new(&mut rng, &run.model)?;
    let snap = Snapshot::load(checkpoint_path)?;
    let (params, buffers) = model.collect();
    snap.apply(&params, "", checkpoint_path)?;
    snap.apply(&buffers, "", checkpoint_path)?;
    Ok((model, run, snap.iteration))
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Include class 0 in the aggregate means.
    pub include_background: bool,
    /// Slice spacing used when stacking a case's slices into a volume.
    pub z_spacing: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { include_background: false, z_spacing: 1.0 }
    }
}

/// Per-pixel argmax over the class axis of B×K×H×W logits; ties resolve to
/// the lowest class index.
pub fn argmax_classes<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    if logits.rank() != 4 {
        return Err(Error::shape("argmax_classes", format!("expected B×K×H×W, got {:?}", logits.shape())));
    }
    let (b, k, h, w) = (logits.dim(0), logits.dim(1), logits.dim(2), logits.dim(3));
    let data = logits.data();
    let plane = h * w;
    let mut out = vec![0usize; b * plane];
    for bi in 0..b {
        let base = bi * k * plane;
        for p in 0..plane {
            let mut best = 0usize;
            let mut best_v = data[base + p];
            for c in 1..k {
                let v = data[base + c * plane + p];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            out[bi * plane + p] = best;
        }
    }
    Ok(out)
}

fn model_input_from_planes(image: &Tensor<f32>, h: usize, w: usize, size: usize) -> Result<Tensor<f32>> {
    let planes = image.dim(0);
    let data = image.data();
    let mut out = Vec::with_capacity(3 * size * size);
    for p in 0..3 {
        let src = if planes == 3 { p } else { 0 };
        out.extend(data::resize_bilinear(&data[src * h * w..(src + 1) * h * w], h, w, size, size));
    }
    Tensor::from_vec(vec![1, 3, size, size], out)
}

/// Segments one sample: eval-mode forward at the model's resolution, argmax,
/// then nearest-neighbour resize of the mask back to the source extents.
pub fn predict_mask(model: &ParaTransCnn<f32>, image: &Tensor<f32>) -> Result<Vec<usize>> {
    let (planes, h, w) = match image.shape() {
        [h, w] => (1, *h, *w),
        [p @ (1 | 3), h, w] => (*p, *h, *w),
        other => {
            return Err(Error::shape(
                "predict_mask",
                format!("expected H×W or {{1|3}}×H×W image, got {other:?}"),
            ))
        }
    };
    let image = if image.rank() == 2 {
        image.view_with_shape(vec![planes, h, w])
    } else {
        image.clone()
    };
    let size = model.resolved().input_size;
    let x = model_input_from_planes(&image, h, w, size)?;
    let tape = Tape::no_grad();
    let logits = model.forward(&tape, &x, Mode::Eval)?;
    let mask = argmax_classes(&logits)?;
    Ok(data::resize_nearest(&mask, size, size, h, w))
}

/// Evaluation protocol: per-slice eval-mode forward, argmax at model
/// resolution, nearest resize back to each slice's native extents, then
/// case-grouped volume metrics.
pub fn evaluate(
    model: &ParaTransCnn<f32>,
    samples: &[SegmentationSample],
    num_classes: usize,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty sample list".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        (samples[a].case_id.as_str(), samples[a].slice_index)
            .cmp(&(samples[b].case_id.as_str(), samples[b].slice_index))
    });

    let mut pairs: Vec<CasePair> = Vec::new();
    let mut case: Option<(String, Vec<VolumeMask>, Vec<VolumeMask>)> = None;
    let flush = |case: &mut Option<(String, Vec<VolumeMask>, Vec<VolumeMask>)>,
                 pairs: &mut Vec<CasePair>,
                 z: f64|
     -> Result<()> {
        if let Some((id, preds, truths)) = case.take() {
            pairs.push(CasePair {
                case_id: id,
                pred: VolumeMask::stack(&preds, z)?,
                truth: VolumeMask::stack(&truths, z)?,
            });
        }
        Ok(())
    };

    for &i in &order {
        let s = &samples[i];
        let mask = predict_mask(model, &s.image)?;
        let pred = VolumeMask::slice2d(s.height, s.width, s.spacing_mm, mask)?;
        let truth = VolumeMask::slice2d(s.height, s.width, s.spacing_mm, s.label.clone())?;
        match &mut case {
            Some((id, preds, truths)) if *id == s.case_id => {
                preds.push(pred);
                truths.push(truth);
            }
            _ => {
                flush(&mut case, &mut pairs, opts.z_spacing)?;
                case = Some((s.case_id.clone(), vec![pred], vec![truth]));
            }
        }
    }
    flush(&mut case, &mut pairs, opts.z_spacing)?;
    metrics::report(&pairs, num_classes, opts.include_background)
}

/// One fused stage's attention artifacts: the gate vector and the
/// channel-mean |features| heat map at input resolution, normalized to [0,1].
pub struct StageAttention {
    pub stage: usize,
    pub weights: Vec<f32>,
    pub heatmap: Vec<f32>,
    pub heatmap_size: usize,
}

pub fn attention_artifacts(model: &ParaTransCnn<f32>, image: &Tensor<f32>) -> Result<Vec<StageAttention>> {
    let (h, w) = match image.shape() {
        [h, w] => (*h, *w),
        [1 | 3, h, w] => (*h, *w),
        other => {
            return Err(Error::shape(
                "attention_artifacts",
                format!("expected H×W or {{1|3}}×H×W image, got {other:?}"),
            ))
        }
    };
    let image = if image.rank() == 2 {
        image.view_with_shape(vec![1, h, w])
    } else {
        image.clone()
    };
    let size = model.resolved().input_size;
    let x = model_input_from_planes(&image, h, w, size)?;
    let tape = Tape::no_grad();
    let (_, features) = model.forward_with_features(&tape, &x, Mode::Eval)?;

    let mut out = Vec::new();
    for (stage, attention) in features.attention.iter().enumerate() {
        let Some(gate) = attention else { continue };
        let weights: Vec<f32> = gate.to_vec();

        let fused = &features.fused[stage];
        let (c, fh, fw) = (fused.dim(1), fused.dim(2), fused.dim(3));
        let data = fused.data();
        let mut mean_abs = vec![0.0f32; fh * fw];
        for ch in 0..c {
            let base = ch * fh * fw;
            for p in 0..fh * fw {
                mean_abs[p] += data[base + p].abs();
            }
        }
        for v in &mut mean_abs {
            *v /= c as f32;
        }
        let mut heatmap = data::resize_bilinear(&mean_abs, fh, fw, size, size);
        let lo = heatmap.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = heatmap.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if hi > lo {
            for v in &mut heatmap {
                *v = (*v - lo) / (hi - lo);
            }
        } else {
            heatmap.iter_mut().for_each(|v| *v = 0.0);
        }
        out.push(StageAttention { stage, weights, heatmap, heatmap_size: size });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SynthConfig};

    #[test]
    fn poly_lr_hits_both_endpoints_exactly_and_never_increases() {
        assert_eq!(poly_lr(0, 1000, 0.01, 0.9), 0.01);
        assert_eq!(poly_lr(1000, 1000, 0.01, 0.9), 0.0);
        let mid = poly_lr(500, 1000, 0.01, 0.9);
        let frozen = 0.005358867312681466_f64;
        assert!((mid - frozen).abs() < 1e-17, "{mid} vs {frozen}");
        let mut last = f64::INFINITY;
        for i in 0..=1000 {
            let lr = poly_lr(i, 1000, 0.01, 0.9);
            assert!(lr <= last, "lr increased at {i}");
            last = lr;
        }
    }

    fn param_with_grad(values: &[f32], grad: &[f32]) -> (ParamSet<f32>, Tensor<f32>) {
        let t = Tensor::from_vec(vec![values.len()], values.to_vec()).unwrap();
        t.set_requires_grad(true);
        t.accumulate_grad(grad);
        let mut set = ParamSet::new();
        set.push("p", &t);
        (set, t)
    }

    #[test]
    fn vanilla_sgd_is_exactly_p_minus_lr_grad() {
        let (set, p) = param_with_grad(&[1.0, -2.0, 0.5], &[10.0, 4.0, -8.0]);
        let mut sgd = Sgd::new(&set, 0.0, 0.0);
        sgd.step(&set, 0.25).unwrap();
        assert_eq!(p.to_vec(), vec![1.0 - 2.5, -2.0 - 1.0, 0.5 + 2.0]);
    }

    #[test]
    fn zero_grads_leave_params_and_decay_momentum() {
        let (set, p) = param_with_grad(&[3.0], &[2.0]);
        let mut sgd = Sgd::new(&set, 0.5, 0.0);
        sgd.step(&set, 1.0).unwrap();
        assert_eq!(p.to_vec(), vec![1.0]);
        assert_eq!(sgd.velocity()[0].to_vec(), vec![2.0]);

        p.zero_grad();
        p.accumulate_grad(&[0.0]);
        sgd.step(&set, 1.0).unwrap();
        assert_eq!(sgd.velocity()[0].to_vec(), vec![1.0]);
        assert_eq!(p.to_vec(), vec![0.0]);
    }

    #[test]
    fn momentum_trajectory_matches_hand_computation_on_a_quadratic() {
        // loss = (p − 3)², grad = 2(p − 3), lr = 0.1, μ = 0.9
        let (set, p) = param_with_grad(&[0.0], &[-6.0]);
        let mut sgd = Sgd::new(&set, 0.9, 0.0);
        sgd.step(&set, 0.1).unwrap();
        assert!((p.to_vec()[0] - 0.6).abs() < 1e-6);

        p.zero_grad();
        let g = 2.0 * (p.to_vec()[0] - 3.0);
        p.accumulate_grad(&[g]);
        sgd.step(&set, 0.1).unwrap();
        // v₂ = 0.9·(−6) + (−4.8) = −10.2; p₂ = 0.6 + 1.02 = 1.62
        assert!((p.to_vec()[0] - 1.62).abs() < 1e-5, "{}", p.to_vec()[0]);
    }

    #[test]
    fn weight_decay_pulls_parameters_toward_zero() {
        let (set, p) = param_with_grad(&[2.0], &[0.0]);
        let mut sgd = Sgd::new(&set, 0.0, 0.1);
        sgd.step(&set, 1.0).unwrap();
        // v = 0 + (0 + 0.1·2) = 0.2; p = 2 − 0.2
        assert!((p.to_vec()[0] - 1.8).abs() < 1e-6);
    }

    #[test]
    fn step_without_gradients_is_an_error() {
        let t = Tensor::<f32>::zeros(vec![2]);
        let mut set = ParamSet::new();
        set.push("p", &t);
        let mut sgd = Sgd::new(&set, 0.9, 0.0);
        assert!(sgd.step(&set, 0.1).is_err());
    }

    fn tiny_model_cfg(classes: usize) -> ModelConfig {
        ModelConfig {
            token_dim: 8,
            layers_per_stage: vec![1, 1, 1],
            cnn_base_width: 8,
            cnn_blocks_per_stage: vec![1, 1, 1],
            num_heads: Some(2),
            reduction_ratio: 16,
            decoder_widths: vec![16, 8, 8],
            num_classes: classes,
            input_size: 32,
            patch_overlap: false,
            four_stages: false,
            no_pyramid: false,
            no_channel_attention: false,
        }
    }

    fn tiny_train_cfg(seed: u64, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            seed,
            base_lr: 0.01,
            ..TrainConfig::default()
        }
    }

    fn tiny_dataset(dir: &Path, seed: u64) -> DatasetManifest {
        let cfg = SynthConfig { cases: 2, slices_per_case: 2, num_classes: 2, size: 32, seed };
        synth::generate(&cfg, dir).unwrap()
    }

    #[test]
    fn smoke_run_writes_all_artifacts_with_one_row_per_batch() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(&dir.path().join("data"), 11);
        let out = dir.path().join("run");
        let outcome = train(&tiny_model_cfg(2), &tiny_train_cfg(1, 2), &manifest, &out, None, None).unwrap();

        assert_eq!(outcome.iterations, 2); // 4 samples / batch 4 = 1 batch × 2 epochs
        assert_eq!(outcome.epochs_run, 2);
        assert_eq!(outcome.rows.len(), 2);
        assert!(outcome.rows.iter().all(|r| r.loss.is_finite()));
        assert!(outcome.final_train_dsc.is_some());
        assert!(out.join(CHECKPOINT_FILE).exists());
        assert!(out.join(RUN_CONFIG_FILE).exists());
        let log = std::fs::read_to_string(out.join(TRAIN_LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 3, "{log}");
        assert!(log.starts_with("iter,lr,loss,dice_loss,ce_loss,wall_ms"));
        let eval = std::fs::read_to_string(out.join(EVAL_LOG_FILE)).unwrap();
        assert!(eval.starts_with("epoch,iter,mean_dsc"));
        assert_eq!(eval.lines().count(), 2);
    }

    #[test]
    fn identical_seeds_give_identical_loss_sequences() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(&dir.path().join("data"), 12);
        let a = train(&tiny_model_cfg(2), &tiny_train_cfg(7, 2), &manifest, dir.path().join("a"), None, None).unwrap();
        let b = train(&tiny_model_cfg(2), &tiny_train_cfg(7, 2), &manifest, dir.path().join("b"), None, None).unwrap();
        let c = train(&tiny_model_cfg(2), &tiny_train_cfg(8, 2), &manifest, dir.path().join("c"), None, None).unwrap();
        let losses = |o: &TrainOutcome| o.rows.iter().map(|r| r.loss).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));
        assert_ne!(losses(&a), losses(&c));
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(&dir.path().join("data"), 13);
        let model_cfg = tiny_model_cfg(2);
        let cfg = tiny_train_cfg(3, 3);

        let full = train(&model_cfg, &cfg, &manifest, dir.path().join("full"), None, None).unwrap();

        let part_dir = dir.path().join("part");
        let first = train(&model_cfg, &cfg, &manifest, &part_dir, None, Some(1)).unwrap();
        assert_eq!(first.iterations, 1);
        let ckpt = part_dir.join(CHECKPOINT_FILE);
        let rest = train(&model_cfg, &cfg, &manifest, &part_dir, Some(&ckpt), None).unwrap();

        assert_eq!(rest.rows[0].iter, 1);
        assert_eq!(rest.rows[0].loss, full.rows[1].loss);
        assert_eq!(rest.rows[1].loss, full.rows[2].loss);
        assert_eq!(rest.iterations, full.iterations);

        // the appended log covers the whole schedule with one header
        let log = std::fs::read_to_string(part_dir.join(TRAIN_LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 4, "{log}");
    }

    #[test]
    fn eval_mode_forward_is_batch_size_invariant() {
        let mut rng = Rng::seeded(5);
        let model = ParaTransCnn::<f32>::new(&mut rng, &tiny_model_cfg(3)).unwrap();
        let batch: Tensor<f32> = Rng::seeded(6).fill_uniform(vec![2, 3, 32, 32], 0.0, 1.0);

        let tape = Tape::no_grad();
        let joint = model.forward(&tape, &batch, Mode::Eval).unwrap();
        let one = batch.to_vec()[..3 * 32 * 32].to_vec();
        let single = Tensor::from_vec(vec![1, 3, 32, 32], one).unwrap();
        let alone = model.forward(&tape, &single, Mode::Eval).unwrap();

        let k = joint.dim(1);
        let ja = joint.to_vec();
        let aa = alone.to_vec();
        for i in 0..k * 32 * 32 {
            assert!((ja[i] - aa[i]).abs() < 1e-6, "index {i}: {} vs {}", ja[i], aa[i]);
        }
    }

    #[test]
    fn argmax_breaks_ties_toward_the_lowest_class() {
        let logits = Tensor::<f32>::from_vec(
            vec![1, 3, 1, 2],
            vec![
                1.0, 5.0, // class 0
                1.0, 2.0, // class 1
                0.5, 5.0, // class 2
            ],
        )
        .unwrap();
        assert_eq!(argmax_classes(&logits).unwrap(), vec![0, 0]);
    }

    #[test]
    fn predict_is_deterministic_and_respects_extents() {
        let mut rng = Rng::seeded(9);
        let model = ParaTransCnn::<f32>::new(&mut rng, &tiny_model_cfg(4)).unwrap();
        let image: Tensor<f32> = Rng::seeded(10).fill_uniform(vec![1, 40, 24], 0.0, 1.0);

        let a = predict_mask(&model, &image).unwrap();
        let b = predict_mask(&model, &image).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 40 * 24);
        assert!(a.iter().all(|&c| c < 4));
    }

    #[test]
    fn evaluate_groups_slices_into_cases() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_dataset(&dir.path().join("data"), 14);
        let samples = manifest.load_all().unwrap();
        let mut rng = Rng::seeded(15);
        let model = ParaTransCnn::<f32>::new(&mut rng, &tiny_model_cfg(2)).unwrap();
        let report = evaluate(&model, &samples, 2, &EvalOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 2); // 2 cases × 1 foreground class
        assert!(report.mean_dsc >= 0.0 && report.mean_dsc <= 1.0);
    }

    #[test]
    fn attention_artifacts_have_gate_range_and_input_extents() {
        let mut rng = Rng::seeded(16);
        let model = ParaTransCnn::<f32>::new(&mut rng, &tiny_model_cfg(2)).unwrap();
        let image: Tensor<f32> = Rng::seeded(17).fill_uniform(vec![1, 32, 32], 0.0, 1.0);

        let stages = attention_artifacts(&model, &image).unwrap();
        assert_eq!(stages.len(), 3);
        let widths = [8 + 8, 16 + 16, 32 + 32];
        for (s, expect) in stages.iter().zip(widths) {
            assert_eq!(s.weights.len(), expect);
            assert!(s.weights.iter().all(|&v| v > 0.0 && v < 1.0));
            assert_eq!(s.heatmap.len(), 32 * 32);
            assert!(s.heatmap.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let good = TrainConfig::default();
        assert!(good.validate().is_ok());
        assert!(TrainConfig { base_lr: 0.0, ..good.clone() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..good.clone() }.validate().is_err());
        assert!(TrainConfig { poly_power: 0.0, ..good.clone() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..good.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..good.clone() }.validate().is_err());
        assert!(TrainConfig { log_every: 0, ..good }.validate().is_err());
    }

    #[test]
    fn run_config_round_trips_and_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let run = RunConfig { model: tiny_model_cfg(2), train: tiny_train_cfg(4, 5) };
        run.save(&path).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(back.model, run.model);
        assert_eq!(back.train, run.train);

        std::fs::write(&path, "{}").unwrap();
        let defaults = RunConfig::load(&path).unwrap();
        assert_eq!(defaults.train.base_lr, 0.01);
        assert_eq!(defaults.train.epochs, 150);
        assert_eq!(defaults.model.num_classes, ModelConfig::default().num_classes);
    }
}
