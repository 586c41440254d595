//! `ptcnn`: synthetic-data generation, training, evaluation, prediction,
//! attention export, and gradient checking for the dual-branch segmentation
//! network.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use paratranscnn::data::DatasetManifest;
use paratranscnn::error::{Error, Result};
use paratranscnn::gradcheck::{self, GradCheckSettings};
use paratranscnn::io;
use paratranscnn::metrics::MetricReport;
use paratranscnn::synth::{self, SynthConfig};
use paratranscnn::train::{self, EvalOptions, RunConfig};
use paratranscnn::tensor::Tensor;
use paratranscnn::viz;

#[derive(Parser)]
#[command(name = "ptcnn", version, about = "Dual-branch (transformer ∥ CNN) medical image segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ellipse-phantom dataset with a manifest.
    Synth(SynthArgs),
    /// Train a model; writes checkpoint, config, and CSV logs to --out.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a dataset and report DSC / HD95.
    Eval(EvalArgs),
    /// Segment one image; writes the class mask and a grayscale overlay.
    Predict(PredictArgs),
    /// Export per-stage channel-attention vectors and heat maps.
    ExportAttention(ExportAttentionArgs),
    /// Finite-difference validation of the full f64 gradient; exits nonzero on failure.
    Gradcheck(GradcheckArgs),
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    cases: usize,
    #[arg(long, default_value_t = 4)]
    slices: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// JSON run configuration ({"model": …, "train": …}); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest JSON.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for checkpoint, config, and logs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Base learning rate for the poly schedule.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    input_size: Option<usize>,
    /// Overlapping patch embeddings (7/4/3 then 3/2/1).
    #[arg(long)]
    patch_overlap: bool,
    /// Append a fourth encoder stage at 1/32 resolution.
    #[arg(long)]
    four_stages: bool,
    /// Single deepest-scale transformer instead of the pyramid.
    #[arg(long)]
    no_pyramid: bool,
    /// Fuse branches by concatenation alone.
    #[arg(long)]
    no_channel_attention: bool,
    /// Stage-1 token width C.
    #[arg(long)]
    token_dim: Option<usize>,
    /// Transformer layers per stage, comma-separated (e.g. 2,2,2).
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Resume from an existing checkpoint (epoch boundaries only).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Render the loss curves to <out>/loss_curves.pgm when training ends.
    #[arg(long)]
    plot: bool,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Checkpoint file; its run config is read from config.json alongside.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest JSON.
    #[arg(long)]
    data: PathBuf,
    /// Also write the per-case metric table to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(clap::Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input image tensor (H×W or {1|3}×H×W, intensities in [0,1]).
    #[arg(long)]
    image: PathBuf,
    /// Output directory for mask.ptcn and overlay.pgm.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ExportAttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Output directory for stage<k>_weights.ptcn and stage<k>_heatmap.pgm.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    /// JSON run configuration; its "model" section is checked. Defaults to
    /// the minimal architecture.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Elements probed per parameter tensor.
    #[arg(long, default_value_t = 3)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(*args),
        Command::Eval(args) => run_eval(args),
        Command::Predict(args) => run_predict(args),
        Command::ExportAttention(args) => run_export_attention(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run_synth(args: SynthArgs) -> Result<ExitCode> {
    let cfg = SynthConfig {
        cases: args.cases,
        slices_per_case: args.slices,
        num_classes: args.classes,
        size: args.size,
        seed: args.seed,
    };
    let manifest = synth::generate(&cfg, &args.out)?;
    println!(
        "wrote {} slices across {} cases to {}",
        manifest.len(),
        args.cases,
        args.out.display()
    );
    println!("manifest: {}", args.out.join("manifest.json").display());
    Ok(ExitCode::SUCCESS)
}

fn run_train(args: TrainArgs) -> Result<ExitCode> {
    let mut run = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.seed {
        run.train.seed = v;
    }
    if let Some(v) = args.epochs {
        run.train.epochs = v;
    }
    if let Some(v) = args.lr {
        run.train.base_lr = v;
    }
    if let Some(v) = args.batch_size {
        run.train.batch_size = v;
    }
    if let Some(v) = args.input_size {
        run.model.input_size = v;
    }
    if let Some(v) = args.token_dim {
        run.model.token_dim = v;
    }
    if let Some(v) = args.layers.clone() {
        run.model.layers_per_stage = v;
    }
    if args.patch_overlap {
        run.model.patch_overlap = true;
    }
    if args.four_stages {
        run.model.four_stages = true;
    }
    if args.no_pyramid {
        run.model.no_pyramid = true;
    }
    if args.no_channel_attention {
        run.model.no_channel_attention = true;
    }

    let manifest = DatasetManifest::load(&args.data)?;
    if manifest.num_classes != run.model.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model config says {}; set model.num_classes in the \
             --config file to match",
            manifest.num_classes, run.model.num_classes
        )));
    }

    let outcome = train::train(
        &run.model,
        &run.train,
        &manifest,
        &args.out,
        args.resume.as_deref(),
        None,
    )?;
    println!(
        "trained {} iterations over {} epochs{}",
        outcome.iterations,
        outcome.epochs_run,
        if outcome.stopped_early { " (stopped early at target DSC)" } else { "" }
    );
    if let Some(dsc) = outcome.final_train_dsc {
        println!("final train mean foreground DSC: {dsc:.4}");
    }
    println!("checkpoint: {}", outcome.checkpoint_path.display());
    println!("train log:  {}", outcome.log_path.display());

    if args.plot {
        let plot_path = args.out.join("loss_curves.pgm");
        plot_train_log(&outcome.log_path, &plot_path)?;
        println!("loss plot:  {}", plot_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Renders total/dice/cross-entropy loss columns of a training log.
fn plot_train_log(log_path: &Path, plot_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(log_path).map_err(|e| Error::io(log_path, e))?;
    let mut loss = Vec::new();
    let mut dice = Vec::new();
    let mut ce = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(Error::format(log_path, format!("malformed log row {line:?}")));
        }
        let f = |i: usize| -> Result<f64> {
            cols[i]
                .parse()
                .map_err(|_| Error::format(log_path, format!("bad number {:?} in {line:?}", cols[i])))
        };
        loss.push(f(2)?);
        dice.push(f(3)?);
        ce.push(f(4)?);
    }
    let pixels = viz::plot_series(&[("loss", loss), ("dice", dice), ("ce", ce)], 640, 480)?;
    viz::write_pgm(plot_path, 640, 480, &pixels)
}

fn run_config_beside(checkpoint: &Path) -> PathBuf {
    checkpoint
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(train::RUN_CONFIG_FILE)
}

fn print_report(report: &MetricReport) {
    let first = if report.include_background { 0 } else { 1 };
    println!("class  mean_dsc  mean_hd95");
    for k in first..report.num_classes {
        let dsc = report.per_class_dsc[k]
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".into());
        let hd = report.per_class_hd95[k]
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".into());
        println!("{k:<6} {dsc:<9} {hd}");
    }
    let hd = report.mean_hd95.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    println!("mean   {:<9.4} {hd}", report.mean_dsc);
}

fn run_eval(args: EvalArgs) -> Result<ExitCode> {
    let config_path = run_config_beside(&args.checkpoint);
    let (model, _, iteration) = train::load_model(&config_path, &args.checkpoint)?;
    let manifest = DatasetManifest::load(&args.data)?;
    let samples = manifest.load_all()?;
    let report = train::evaluate(&model, &samples, manifest.num_classes, &EvalOptions::default())?;

    println!(
        "checkpoint at iteration {iteration}; {} cases, {} classes",
        report.rows.len() / report.num_classes.saturating_sub(1).max(1),
        manifest.num_classes
    );
    print_report(&report);
    if let Some(csv) = &args.csv {
        if let Some(parent) = csv.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(csv, e))?;
            }
        }
        std::fs::write(csv, report.to_csv()).map_err(|e| Error::io(csv, e))?;
        println!("per-case table: {}", csv.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let image = io::read_tensor(path)?.cast::<f32>();
    match image.shape() {
        [_, _] | [1 | 3, _, _] => Ok(image),
        other => Err(Error::format(
            path,
            format!("expected an H×W or {{1|3}}×H×W image tensor, got shape {other:?}"),
        )),
    }
}

fn run_predict(args: PredictArgs) -> Result<ExitCode> {
    let config_path = run_config_beside(&args.checkpoint);
    let (model, run, _) = train::load_model(&config_path, &args.checkpoint)?;
    let image = load_image(&args.image)?;
    let (h, w) = match image.shape() {
        [h, w] => (*h, *w),
        [_, h, w] => (*h, *w),
        _ => unreachable!("load_image validated the rank"),
    };

    let mask = train::predict_mask(&model, &image)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mask_f32: Vec<f32> = mask.iter().map(|&c| c as f32).collect();
    let mask_path = args.out.join("mask.ptcn");
    io::write_tensor(&mask_path, &Tensor::from_vec(vec![h, w], mask_f32)?)?;

    let plane = image.data()[..h * w].to_vec();
    let blended = viz::overlay(&plane, &mask, run.model.num_classes);
    let overlay_path = args.out.join("overlay.pgm");
    viz::write_pgm(&overlay_path, w, h, &viz::to_gray_bytes(&blended))?;

    println!("mask:    {}", mask_path.display());
    println!("overlay: {}", overlay_path.display());
    Ok(ExitCode::SUCCESS)
}

fn run_export_attention(args: ExportAttentionArgs) -> Result<ExitCode> {
    let config_path = run_config_beside(&args.checkpoint);
    let (model, _, _) = train::load_model(&config_path, &args.checkpoint)?;
    let image = load_image(&args.image)?;
    let stages = train::attention_artifacts(&model, &image)?;
    if stages.is_empty() {
        return Err(Error::Config(
            "this model has no channel-attention stages to export".into(),
        ));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for stage in &stages {
        let tag = stage.stage + 1;
        let weights_path = args.out.join(format!("stage{tag}_weights.ptcn"));
        let m = stage.weights.len();
        io::write_tensor(&weights_path, &Tensor::from_vec(vec![m], stage.weights.clone())?)?;
        let heat_path = args.out.join(format!("stage{tag}_heatmap.pgm"));
        viz::write_pgm(
            &heat_path,
            stage.heatmap_size,
            stage.heatmap_size,
            &viz::to_gray_bytes(&stage.heatmap),
        )?;
        println!("stage {tag}: {} and {}", weights_path.display(), heat_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let model_cfg = match &args.config {
        Some(path) => RunConfig::load(path)?.model,
        None => gradcheck::minimal_config(),
    };
    let settings = GradCheckSettings {
        samples_per_tensor: args.samples,
        seed: args.seed,
        ..GradCheckSettings::default()
    };
    let report = gradcheck::run(&model_cfg, &settings)?;
    println!("{}", report.summary());
    if report.passed() {
        println!("gradcheck passed");
        Ok(ExitCode::SUCCESS)
    } else {
        for f in report.failures.iter().take(10) {
            eprintln!(
                "FAIL {}[{}]: analytic {:+.9e} vs numeric {:+.9e} (rel {:.3e}, abs {:.3e})",
                f.tensor, f.index, f.analytic, f.numeric, f.rel, f.abs_diff
            );
        }
        eprintln!("gradcheck failed for {} element(s)", report.failures.len());
        Ok(ExitCode::from(1))
    }
}
