//! Synthetic segmentation data: per-case ellipse phantoms with slice-to-slice
//! drift, class-specific intensity bands, and Gaussian noise. Generation is a
//! pure function of the seed, down to the file bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, SampleRecord};
use crate::error::{Error, Result};
use crate::init::Rng;
use crate::io;
use crate::tensor::Tensor;

pub const NOISE_SIGMA: f64 = 0.05;
pub const BACKGROUND_INTENSITY: f64 = 0.1;
const STREAM_CASE: u64 = 0x53594e54; // "SYNT"
const MAX_CASE_RETRIES: usize = 200;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub cases: usize,
    pub slices_per_case: usize,
    pub num_classes: usize,
    pub size: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cases == 0 || self.slices_per_case == 0 {
            return Err(Error::Config("synth needs at least one case and one slice".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("synth needs at least 2 classes (background + 1)".into()));
        }
        if self.size < 16 {
            return Err(Error::Config(format!("synth size {} is too small to place ellipses", self.size)));
        }
        Ok(())
    }
}

/// Intensity band for foreground class k (1-based), spread over [0.35, 0.95]
/// and well separated from the background at σ-scale.
pub fn class_intensity(k: usize, num_classes: usize) -> f64 {
    debug_assert!(k >= 1 && k < num_classes);
    0.35 + 0.6 * (k - 1) as f64 / (num_classes - 2).max(1) as f64
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    vx: f64,
    vy: f64,
}

/// One rendered slice: image in [0,1] and its label mask.
pub struct SynthSlice {
    pub image: Vec<f32>,
    pub label: Vec<usize>,
}

fn render_label(ellipses: &[Ellipse], slice: usize, size: usize) -> Vec<usize> {
    let mut label = vec![0usize; size * size];
    for (i, e) in ellipses.iter().enumerate() {
        let class = i + 1;
        let cx = e.cx + e.vx * slice as f64;
        let cy = e.cy + e.vy * slice as f64;
        for y in 0..size {
            let dy = (y as f64 - cy) / e.ry;
            for x in 0..size {
                let dx = (x as f64 - cx) / e.rx;
                if dx * dx + dy * dy <= 1.0 {
                    label[y * size + x] = class;
                }
            }
        }
    }
    label
}

/// Renders all slices of one case. The case geometry is redrawn until every
/// slice keeps every foreground class covering 1–40% of the pixels, so
/// degenerate layouts (swallowed or clipped-away classes) never escape.
pub fn render_case(cfg: &SynthConfig, case_index: usize) -> Result<Vec<SynthSlice>> {
    cfg.validate()?;
    let mut rng = Rng::derive(cfg.seed, STREAM_CASE, case_index as u64);
    let s = cfg.size as f64;
    let k = cfg.num_classes;

    for _attempt in 0..MAX_CASE_RETRIES {
        let ellipses: Vec<Ellipse> = (1..k)
            .map(|_| Ellipse {
                cx: rng.uniform(0.3, 0.7) * s,
                cy: rng.uniform(0.3, 0.7) * s,
                rx: rng.uniform(0.10, 0.28) * s,
                ry: rng.uniform(0.10, 0.28) * s,
                vx: rng.uniform(-0.015, 0.015) * s,
                vy: rng.uniform(-0.015, 0.015) * s,
            })
            .collect();

        let labels: Vec<Vec<usize>> =
            (0..cfg.slices_per_case).map(|sl| render_label(&ellipses, sl, cfg.size)).collect();

        let pixels = cfg.size * cfg.size;
        let ok = labels.iter().all(|label| {
            (1..k).all(|class| {
                let frac = label.iter().filter(|&&v| v == class).count() as f64 / pixels as f64;
                (0.01..=0.40).contains(&frac)
            })
        });
        if !ok {
            continue;
        }

        let slices = labels
            .into_iter()
            .map(|label| {
                let image = label
                    .iter()
                    .map(|&v| {
                        let base = if v == 0 { BACKGROUND_INTENSITY } else { class_intensity(v, k) };
                        (base + rng.normal(0.0, NOISE_SIGMA)).clamp(0.0, 1.0) as f32
                    })
                    .collect();
                SynthSlice { image, label }
            })
            .collect();
        return Ok(slices);
    }
    Err(Error::Data(format!(
        "could not place {} ellipses on a {}×{} grid within {MAX_CASE_RETRIES} redraws",
        k - 1,
        cfg.size,
        cfg.size
    )))
}

/// Writes the full dataset tree (images/, labels/, manifest.json) under
/// `out_dir` and returns the manifest.
pub fn generate(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let mut records = Vec::with_capacity(cfg.cases * cfg.slices_per_case);
    for case in 0..cfg.cases {
        let case_id = format!("case{case:03}");
        for (sl, slice) in render_case(cfg, case)?.into_iter().enumerate() {
            let image_rel = format!("images/{case_id}_slice{sl:03}.ptcn");
            let label_rel = format!("labels/{case_id}_slice{sl:03}.ptcn");
            let image = Tensor::from_vec(vec![cfg.size, cfg.size], slice.image)?;
            let label = Tensor::from_vec(
                vec![cfg.size, cfg.size],
                slice.label.iter().map(|&v| v as f32).collect(),
            )?;
            io::write_tensor(out_dir.join(&image_rel), &image)?;
            io::write_tensor(out_dir.join(&label_rel), &label)?;
            records.push(SampleRecord {
                image: image_rel,
                label: label_rel,
                case_id: case_id.clone(),
                slice_index: sl as i64,
                spacing_mm: None,
            });
        }
    }
    let manifest = DatasetManifest::new(cfg.num_classes, [1.0, 1.0], "train", records);
    manifest.save(out_dir.join("manifest.json"))?;
    DatasetManifest::load(out_dir.join("manifest.json"))
}
