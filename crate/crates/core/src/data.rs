//! Dataset plumbing: manifest files, intensity normalization, dihedral
//! augmentation, resizing, and seeded batch streams. Samples are eagerly
//! loaded tensors; everything downstream of a seed is deterministic.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::Rng;
use crate::io;
use crate::loss::Labels;
use crate::tensor::Tensor;

/// One 2-d slice: a 1- or 3-plane image in [0,1] plus its integer mask.
#[derive(Debug, Clone)]
pub struct SegmentationSample {
    /// planes×H×W, planes ∈ {1, 3}
    pub image: Tensor<f32>,
    pub label: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub case_id: String,
    pub slice_index: i64,
    pub spacing_mm: (f64, f64),
}

impl SegmentationSample {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let s = self.image.shape();
        if s.len() != 3 || (s[0] != 1 && s[0] != 3) || s[1] != self.height || s[2] != self.width {
            return Err(Error::Data(format!(
                "sample {}[{}]: image must be 1- or 3-plane {}×{}, got {s:?}",
                self.case_id, self.slice_index, self.height, self.width
            )));
        }
        if self.label.len() != self.height * self.width {
            return Err(Error::Data(format!(
                "sample {}[{}]: label size {} does not cover {}×{}",
                self.case_id,
                self.slice_index,
                self.label.len(),
                self.height,
                self.width
            )));
        }
        if self.image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Data(format!(
                "sample {}[{}]: image intensities must lie in [0,1]",
                self.case_id, self.slice_index
            )));
        }
        if let Some(&bad) = self.label.iter().find(|&&v| v >= num_classes) {
            return Err(Error::Data(format!(
                "sample {}[{}]: label {bad} out of range for {num_classes} classes",
                self.case_id, self.slice_index
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub image: String,
    pub label: String,
    pub case_id: String,
    pub slice_index: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_mm: Option<[f64; 2]>,
}

fn default_root() -> String {
    ".".into()
}

fn default_spacing() -> [f64; 2] {
    [1.0, 1.0]
}

fn default_split() -> String {
    "train".into()
}

/// JSON index of a dataset: class count, spacing, and per-slice file records
/// with paths relative to `root` (itself relative to the manifest file).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default = "default_root")]
    pub root: String,
    pub num_classes: usize,
    #[serde(default = "default_spacing")]
    pub spacing_mm: [f64; 2],
    #[serde(default = "default_split")]
    pub split: String,
    /// Optional intensity window [lo, hi] applied at load; absent means files
    /// already hold [0,1] data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    pub samples: Vec<SampleRecord>,
    #[serde(skip, default)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(num_classes: usize, spacing_mm: [f64; 2], split: &str, samples: Vec<SampleRecord>) -> Self {
        Self {
            root: default_root(),
            num_classes,
            spacing_mm,
            split: split.into(),
            window: None,
            samples,
            base_dir: PathBuf::from("."),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if m.num_classes < 2 {
            return Err(Error::format(path, format!("num_classes must be ≥ 2, got {}", m.num_classes)));
        }
        if m.split != "train" && m.split != "test" {
            return Err(Error::format(path, format!("split must be train|test, got {:?}", m.split)));
        }
        m.base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("manifest serialization cannot fail");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(&self.root).join(rel)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn spacing_of(&self, index: usize) -> (f64, f64) {
        let s = self.samples[index].spacing_mm.unwrap_or(self.spacing_mm);
        (s[0], s[1])
    }

    pub fn load_sample(&self, index: usize) -> Result<SegmentationSample> {
        let rec = &self.samples[index];
        let image_path = self.resolve(&rec.image);
        let image = io::read_tensor(&image_path)?.exact::<f32>(&image_path)?;
        let image = match *image.shape() {
            [h, w] => image.view_with_shape(vec![1, h, w]),
            [p, _, _] if p == 1 || p == 3 => image,
            _ => {
                return Err(Error::format(
                    &image_path,
                    format!("image must be H×W or planes×H×W, got {:?}", image.shape()),
                ))
            }
        };
        let image = match self.window {
            Some([lo, hi]) => normalize_intensity(&image, (lo, hi))?,
            None => image,
        };
        let (h, w) = (image.dim(1), image.dim(2));

        let label_path = self.resolve(&rec.label);
        let label_t = io::read_tensor(&label_path)?.exact::<f32>(&label_path)?;
        if label_t.shape() != [h, w] {
            return Err(Error::format(
                &label_path,
                format!("label shape {:?} does not match image {h}×{w}", label_t.shape()),
            ));
        }
        let label = Labels::from_tensor(&label_t, self.num_classes)
            .map_err(|e| Error::format(&label_path, e.to_string()))?;

        let sample = SegmentationSample {
            image,
            label: label.as_slice().to_vec(),
            height: h,
            width: w,
            case_id: rec.case_id.clone(),
            slice_index: rec.slice_index,
            spacing_mm: self.spacing_of(index),
        };
        sample.validate(self.num_classes)?;
        Ok(sample)
    }

    pub fn load_all(&self) -> Result<Vec<SegmentationSample>> {
        (0..self.len()).map(|i| self.load_sample(i)).collect()
    }

    /// Checks every referenced file parses and respects the class range.
    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Data("manifest lists no samples".into()));
        }
        self.load_all().map(|_| ())
    }
}

/// Clamp to the window then map it affinely onto [0,1].
pub fn normalize_intensity(raw: &Tensor<f32>, window: (f64, f64)) -> Result<Tensor<f32>> {
    let (lo, hi) = window;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("intensity window [{lo}, {hi}] is not an interval")));
    }
    let scale = 1.0 / (hi - lo);
    let data = raw
        .data()
        .iter()
        .map(|&v| (((v as f64).clamp(lo, hi) - lo) * scale) as f32)
        .collect();
    Ok(Tensor::new_unchecked(raw.shape().to_vec(), data))
}

/// An element of the dihedral group: flips then quarter-turns, applied as a
/// pure index permutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral {
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { hflip: false, vflip: false, quarter_turns: 0 };

    /// Independent 50% horizontal flip, 50% vertical flip, uniform k·90°.
    pub fn sample(rng: &mut Rng) -> Self {
        Self {
            hflip: rng.chance(0.5),
            vflip: rng.chance(0.5),
            quarter_turns: rng.below(4) as u8,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Applies the transform to one plane. Output dims follow [`Self::out_dims`].
    pub fn apply_plane<X: Copy>(&self, src: &[X], h: usize, w: usize) -> Vec<X> {
        let mut cur: Vec<X> = src.to_vec();
        let (mut ch, mut cw) = (h, w);
        if self.hflip {
            let mut next = cur.clone();
            for y in 0..ch {
                for x in 0..cw {
                    next[y * cw + x] = cur[y * cw + (cw - 1 - x)];
                }
            }
            cur = next;
        }
        if self.vflip {
            let mut next = cur.clone();
            for y in 0..ch {
                for x in 0..cw {
                    next[y * cw + x] = cur[(ch - 1 - y) * cw + x];
                }
            }
            cur = next;
        }
        for _ in 0..self.quarter_turns % 4 {
            // one 90° turn: out(y, x) = in(x, w_in − 1 − y)
            let mut next = vec![cur[0]; cur.len()];
            let (nh, nw) = (cw, ch);
            for y in 0..nh {
                for x in 0..nw {
                    next[y * nw + x] = cur[x * cw + (cw - 1 - y)];
                }
            }
            cur = next;
            std::mem::swap(&mut ch, &mut cw);
        }
        cur
    }
}

/// Applies one dihedral transform identically to image planes and label.
pub fn augment(sample: &SegmentationSample, t: Dihedral) -> SegmentationSample {
    let (h, w) = (sample.height, sample.width);
    let planes = sample.image.dim(0);
    let (oh, ow) = t.out_dims(h, w);
    let mut image = Vec::with_capacity(sample.image.numel());
    {
        let data = sample.image.data();
        for p in 0..planes {
            image.extend(t.apply_plane(&data[p * h * w..(p + 1) * h * w], h, w));
        }
    }
    SegmentationSample {
        image: Tensor::new_unchecked(vec![planes, oh, ow], image),
        label: t.apply_plane(&sample.label, h, w),
        height: oh,
        width: ow,
        ..sample.clone()
    }
}

/// Bilinear resize of one plane (half-pixel centers, clamped edges).
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w);
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let mut out = Vec::with_capacity(oh * ow);
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    for y in 0..oh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for x in 0..ow {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            let v = (src[y0 * w + x0] as f64) * (1.0 - wy) * (1.0 - wx)
                + (src[y0 * w + x1] as f64) * (1.0 - wy) * wx
                + (src[y1 * w + x0] as f64) * wy * (1.0 - wx)
                + (src[y1 * w + x1] as f64) * wy * wx;
            out.push(v as f32);
        }
    }
    out
}

/// Nearest-neighbor resize for integer masks (no interpolation, ever).
pub fn resize_nearest(src: &[usize], h: usize, w: usize, oh: usize, ow: usize) -> Vec<usize> {
    assert_eq!(src.len(), h * w);
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let iy = (((y as f64 + 0.5) * sy) as usize).min(h - 1);
        for x in 0..ow {
            let ix = (((x as f64 + 0.5) * sx) as usize).min(w - 1);
            out.push(src[iy * w + ix]);
        }
    }
    out
}

/// One training batch at model geometry.
pub struct Batch {
    /// B×3×S×S
    pub images: Tensor<f32>,
    /// B×S×S
    pub labels: Labels,
    /// Positions of the chosen samples in the source slice list.
    pub indices: Vec<usize>,
}

/// One shuffled epoch over preloaded samples, chunked into batches; the final
/// partial batch is kept. Order and augmentation are fixed at construction by
/// the RNG, so iteration is pure.
pub struct EpochStream<'a> {
    samples: &'a [SegmentationSample],
    num_classes: usize,
    batch_size: usize,
    input_size: usize,
    order: Vec<usize>,
    transforms: Vec<Dihedral>,
    pos: usize,
}

impl<'a> EpochStream<'a> {
    pub fn new(
        samples: &'a [SegmentationSample],
        num_classes: usize,
        batch_size: usize,
        input_size: usize,
        augment: bool,
        mut rng: Rng,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("cannot iterate an empty sample list".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        rng.shuffle(&mut order);
        let transforms = (0..samples.len())
            .map(|_| if augment { Dihedral::sample(&mut rng) } else { Dihedral::IDENTITY })
            .collect();
        Ok(Self { samples, num_classes, batch_size, input_size, order, transforms, pos: 0 })
    }

    pub fn batches_total(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn build(&self, chosen: &[usize], transforms: &[Dihedral]) -> Result<Batch> {
        let s = self.input_size;
        let b = chosen.len();
        let mut images = Vec::with_capacity(b * 3 * s * s);
        let mut labels = Vec::with_capacity(b * s * s);
        for (&idx, &t) in chosen.iter().zip(transforms) {
            let sample = augment(&self.samples[idx], t);
            let (h, w) = (sample.height, sample.width);
            let planes = sample.image.dim(0);
            let data = sample.image.data();
            for p in 0..3 {
                let src = if planes == 3 { p } else { 0 };
                images.extend(resize_bilinear(&data[src * h * w..(src + 1) * h * w], h, w, s, s));
            }
            labels.extend(resize_nearest(&sample.label, h, w, s, s));
        }
        Ok(Batch {
            images: Tensor::from_vec(vec![b, 3, s, s], images)?,
            labels: Labels::new([b, s, s], labels, self.num_classes)?,
            indices: chosen.to_vec(),
        })
    }
}

impl Iterator for EpochStream<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let chosen = &self.order[self.pos..end];
        let transforms = &self.transforms[self.pos..end];
        let batch = self.build(chosen, transforms);
        self.pos = end;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(h: usize, w: usize, case: &str, slice: i64) -> SegmentationSample {
        let image: Vec<f32> = (0..h * w).map(|i| (i % 7) as f32 / 7.0).collect();
        let label: Vec<usize> = (0..h * w).map(|i| (i / w + i % w) % 3).collect();
        SegmentationSample {
            image: Tensor::from_vec(vec![1, h, w], image).unwrap(),
            label,
            height: h,
            width: w,
            case_id: case.into(),
            slice_index: slice,
            spacing_mm: (1.0, 1.0),
        }
    }

    #[test]
    fn normalization_clamps_and_maps_endpoints() {
        let raw = Tensor::from_vec(vec![1, 1, 4], vec![300.0, -500.0, -100.0, 100.0]).unwrap();
        let out = normalize_intensity(&raw, (-100.0, 300.0)).unwrap();
        assert_eq!(out.to_vec(), vec![1.0, 0.0, 0.0, 0.5]);

        let already = Tensor::from_vec(vec![1, 1, 3], vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(normalize_intensity(&already, (0.0, 1.0)).unwrap().to_vec(), already.to_vec());
        assert!(normalize_intensity(&already, (1.0, 1.0)).is_err());
    }

    #[test]
    fn quarter_turns_compose_back_to_identity() {
        let s = sample(5, 7, "c", 0);
        let once = Dihedral { hflip: false, vflip: false, quarter_turns: 1 };
        let mut cur = s.clone();
        for _ in 0..4 {
            cur = augment(&cur, once);
        }
        assert_eq!(cur.image.to_vec(), s.image.to_vec());
        assert_eq!(cur.label, s.label);

        let r1 = augment(&s, once);
        assert_eq!((r1.height, r1.width), (7, 5));
    }

    #[test]
    fn flips_are_involutions_and_preserve_histograms() {
        let s = sample(6, 6, "c", 0);
        for t in [
            Dihedral { hflip: true, vflip: false, quarter_turns: 0 },
            Dihedral { hflip: false, vflip: true, quarter_turns: 0 },
        ] {
            let twice = augment(&augment(&s, t), t);
            assert_eq!(twice.label, s.label);
            let hist = |l: &[usize]| {
                let mut h = [0usize; 3];
                for &v in l {
                    h[v] += 1;
                }
                h
            };
            assert_eq!(hist(&augment(&s, t).label), hist(&s.label));
        }
    }

    #[test]
    fn augmentation_sampling_is_deterministic() {
        let draw = |seed: u64| -> Vec<Dihedral> {
            let mut rng = Rng::seeded(seed);
            (0..20).map(|_| Dihedral::sample(&mut rng)).collect()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn resize_is_identity_at_same_size_and_bounded() {
        let src: Vec<f32> = (0..64).map(|i| i as f32 / 63.0).collect();
        assert_eq!(resize_bilinear(&src, 8, 8, 8, 8), src);
        let up = resize_bilinear(&src, 8, 8, 13, 13);
        assert!(up.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let flat = resize_bilinear(&vec![0.37f32; 64], 8, 8, 5, 9);
        assert!(flat.iter().all(|&v| (v - 0.37).abs() < 1e-6));

        let lbl: Vec<usize> = (0..64).map(|i| i % 4).collect();
        assert_eq!(resize_nearest(&lbl, 8, 8, 8, 8), lbl);
        let up = resize_nearest(&lbl, 8, 8, 11, 3);
        assert!(up.iter().all(|&v| v < 4));
    }

    #[test]
    fn epoch_stream_chunks_and_keeps_partial_tail() {
        let samples: Vec<SegmentationSample> = (0..10).map(|i| sample(8, 8, "c", i)).collect();
        let stream = EpochStream::new(&samples, 3, 4, 8, false, Rng::seeded(1)).unwrap();
        assert_eq!(stream.batches_total(), 3);
        let sizes: Vec<usize> = stream.map(|b| b.unwrap().indices.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn shuffle_is_a_permutation_and_seeded() {
        let samples: Vec<SegmentationSample> = (0..10).map(|i| sample(8, 8, "c", i)).collect();
        let collect = |seed: u64| -> Vec<usize> {
            EpochStream::new(&samples, 3, 4, 8, false, Rng::seeded(seed))
                .unwrap()
                .flat_map(|b| b.unwrap().indices)
                .collect()
        };
        let a = collect(5);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_eq!(a, collect(5));
        assert_ne!(a, collect(6));
    }

    #[test]
    fn augmented_streams_are_reproducible_and_replicate_planes() {
        let samples: Vec<SegmentationSample> = (0..5).map(|i| sample(8, 8, "c", i)).collect();
        let run = |seed: u64| -> Vec<Vec<f32>> {
            EpochStream::new(&samples, 3, 2, 8, true, Rng::seeded(seed))
                .unwrap()
                .map(|b| b.unwrap().images.to_vec())
                .collect()
        };
        assert_eq!(run(3), run(3));

        let batch = EpochStream::new(&samples, 3, 2, 8, false, Rng::seeded(0))
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        assert_eq!(batch.images.shape(), &[2, 3, 8, 8]);
        let v = batch.images.to_vec();
        let plane = 64;
        assert_eq!(v[0..plane], v[plane..2 * plane]);
        assert_eq!(v[0..plane], v[2 * plane..3 * plane]);
    }

    #[test]
    fn stream_resizes_to_model_geometry() {
        let samples = vec![sample(10, 6, "c", 0)];
        let batch = EpochStream::new(&samples, 3, 1, 8, false, Rng::seeded(0))
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        assert_eq!(batch.images.shape(), &[1, 3, 8, 8]);
        assert_eq!(batch.labels.shape(), [1, 8, 8]);
    }

    #[test]
    fn manifest_round_trips_and_validates() {
        let dir = std::env::temp_dir().join(format!("ptc-data-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let image = Tensor::<f32>::from_vec(vec![4, 4], (0..16).map(|i| i as f32 / 15.0).collect()).unwrap();
        let label = Tensor::<f32>::from_vec(vec![4, 4], (0..16).map(|i| (i % 2) as f32).collect()).unwrap();
        io::write_tensor(dir.join("img.ptcn"), &image).unwrap();
        io::write_tensor(dir.join("lbl.ptcn"), &label).unwrap();

        let m = DatasetManifest::new(
            2,
            [1.0, 1.0],
            "train",
            vec![SampleRecord {
                image: "img.ptcn".into(),
                label: "lbl.ptcn".into(),
                case_id: "c0".into(),
                slice_index: 0,
                spacing_mm: None,
            }],
        );
        let path = dir.join("manifest.json");
        m.save(&path).unwrap();
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(loaded.num_classes, 2);
        assert_eq!(loaded.samples, m.samples);
        loaded.validate().unwrap();

        let s = loaded.load_sample(0).unwrap();
        assert_eq!(s.image.shape(), &[1, 4, 4]);
        assert_eq!(s.label.iter().filter(|&&v| v == 1).count(), 8);
        assert_eq!(s.spacing_mm, (1.0, 1.0));

        // a label out of class range must fail loading
        let bad_label = Tensor::<f32>::from_vec(vec![4, 4], vec![3.0; 16]).unwrap();
        io::write_tensor(dir.join("lbl.ptcn"), &bad_label).unwrap();
        assert!(loaded.load_sample(0).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn manifest_rejects_unknown_fields_and_bad_split() {
        let dir = std::env::temp_dir().join(format!("ptc-data2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("manifest.json");
        std::fs::write(&path, r#"{"num_classes":2,"samples":[],"surprise":1}"#).unwrap();
        assert!(DatasetManifest::load(&path).is_err());
        std::fs::write(&path, r#"{"num_classes":2,"split":"dev","samples":[]}"#).unwrap();
        assert!(DatasetManifest::load(&path).is_err());
        std::fs::write(&path, r#"{"num_classes":2,"samples":[]}"#).unwrap();
        let m = DatasetManifest::load(&path).unwrap();
        assert_eq!(m.split, "train");
        assert!(m.validate().is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
