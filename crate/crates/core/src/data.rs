//! Datasets: CIFAR-10 binary and IDX readers/writers, two synthetic
//! generators, augmentation and deterministic mini-batch order.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, stream_rng, SeededRng, Stream};
use crate::tensor::Tensor;

const CIFAR_SIDE: usize = 32;
const CIFAR_PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_PIXELS;
const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// How raw values were mapped to the stored floats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Bytes divided by 255; no per-channel centering.
    UnitInterval,
    /// Generated directly as floats.
    Raw,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
    pub split: Split,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize, split: Split, normalization: Normalization) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::format("dataset is empty"));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::format(format!(
                "{} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::format(format!("label {bad} outside {classes} classes")));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            split,
            normalization,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Per-example shape, e.g. `[H, W, C]`.
    pub fn example_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Batch::new(self.inputs.gather_rows(idx), labels).expect("gathered rows match labels")
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Batch {
        Batch::new(self.inputs.clone(), self.labels.clone()).expect("dataset rows match labels")
    }

    fn rows(&self, start: usize, end: usize, split: Split) -> Dataset {
        Dataset {
            inputs: self.inputs.slice_rows(start, end),
            labels: self.labels[start..end].to_vec(),
            classes: self.classes,
            split,
            normalization: self.normalization,
        }
    }

    /// Moves the last `n` examples into a validation set.
    pub fn split_last(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.len() {
            return Err(Error::config(format!(
                "validation split of {n} needs 0 < n < {}",
                self.len()
            )));
        }
        let cut = self.len() - n;
        Ok((self.rows(0, cut, self.split), self.rows(cut, self.len(), Split::Val)))
    }
}

/// Size of the small-data subset used for full-batch and sharpness runs.
pub const SMALL_SUBSET: usize = 2560;
/// The rounder subset size that also circulates for the same experiments.
pub const SMALL_SUBSET_ALT: usize = 2500;

/// The first `n` examples in file order; `n ≥ N` keeps everything.
pub fn subsample_first_n(dataset: &Dataset, n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::format("cannot subsample zero examples"));
    }
    Ok(dataset.rows(0, n.min(dataset.len()), dataset.split))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Decodes CIFAR-10 binary batch bytes: records of one label byte followed
/// by 1024 red, 1024 green and 1024 blue bytes. Stored NHWC in `[0, 1]`.
pub fn decode_cifar10(bytes: &[u8], split: Split) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::format(format!(
            "CIFAR-10 data of {} bytes is not a whole number of {CIFAR_RECORD}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut data = Vec::with_capacity(n * 3 * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::format(format!("record {r} has label byte {}", rec[0])));
        }
        labels.push(rec[0] as usize);
        let planes = &rec[1..];
        for p in 0..CIFAR_PIXELS {
            for c in 0..3 {
                data.push(planes[c * CIFAR_PIXELS + p] as f64 / 255.0);
            }
        }
    }
    let inputs = Tensor::new(vec![n, CIFAR_SIDE, CIFAR_SIDE, 3], data)?;
    Dataset::new(inputs, labels, 10, split, Normalization::UnitInterval)
}

/// Concatenates CIFAR-10 binary files in the given order.
pub fn load_cifar10_bin(paths: &[PathBuf], split: Split) -> Result<Dataset> {
    let mut bytes = Vec::new();
    for p in paths {
        let chunk = read_file(p)?;
        if chunk.len() % CIFAR_RECORD != 0 {
            return Err(Error::format(format!(
                "{} holds {} bytes, not a multiple of {CIFAR_RECORD}",
                p.display(),
                chunk.len()
            )));
        }
        bytes.extend_from_slice(&chunk);
    }
    decode_cifar10(&bytes, split)
}

fn to_byte(v: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::format(format!("value {v} outside [0, 1] cannot be stored as a byte")));
    }
    Ok((v * 255.0).round() as u8)
}

/// Inverse of [`decode_cifar10`]; needs 32×32×3 inputs and labels ≤ 9.
pub fn encode_cifar10(dataset: &Dataset) -> Result<Vec<u8>> {
    if dataset.example_shape() != [CIFAR_SIDE, CIFAR_SIDE, 3] || dataset.classes() > 10 {
        return Err(Error::format("CIFAR-10 layout needs 32×32×3 images and at most 10 classes"));
    }
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD);
    let x = dataset.inputs().data();
    for (i, &label) in dataset.labels().iter().enumerate() {
        out.push(label as u8);
        let img = &x[i * 3 * CIFAR_PIXELS..(i + 1) * 3 * CIFAR_PIXELS];
        for c in 0..3 {
            for p in 0..CIFAR_PIXELS {
                out.push(to_byte(img[p * 3 + c])?);
            }
        }
    }
    Ok(out)
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(format!("{what} header is truncated")))
}

/// Decodes IDX unsigned-byte image (rank 3) and label (rank 1) files.
/// Images become `N×rows×cols×1` in `[0, 1]`.
pub fn decode_idx(images: &[u8], labels: &[u8], split: Split) -> Result<Dataset> {
    let magic = be_u32(images, 0, "IDX image")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(format!("IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let magic = be_u32(labels, 0, "IDX label")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(format!("IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(images, 4, "IDX image")? as usize;
    let rows = be_u32(images, 8, "IDX image")? as usize;
    let cols = be_u32(images, 12, "IDX image")? as usize;
    let n_labels = be_u32(labels, 4, "IDX label")? as usize;
    if n != n_labels {
        return Err(Error::format(format!("IDX files disagree: {n} images, {n_labels} labels")));
    }
    if n == 0 {
        return Err(Error::format("IDX files hold no examples"));
    }
    let pixels = &images[16..];
    if pixels.len() != n * rows * cols {
        return Err(Error::format(format!(
            "IDX image payload is {} bytes, dimensions need {}",
            pixels.len(),
            n * rows * cols
        )));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() != n {
        return Err(Error::format(format!("IDX label payload is {} bytes, expected {n}", label_bytes.len())));
    }
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1).max(2);
    let data = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let inputs = Tensor::new(vec![n, rows, cols, 1], data)?;
    Dataset::new(inputs, labels, classes, split, Normalization::UnitInterval)
}

pub fn load_idx(image_path: &Path, label_path: &Path, split: Split) -> Result<Dataset> {
    decode_idx(&read_file(image_path)?, &read_file(label_path)?, split)
}

/// Inverse of [`decode_idx`] for single-channel images.
pub fn encode_idx(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let shape = dataset.example_shape();
    if shape.len() != 3 || shape[2] != 1 {
        return Err(Error::format("IDX layout needs rows×cols×1 images"));
    }
    if dataset.classes() > 256 {
        return Err(Error::format("IDX labels are single bytes"));
    }
    let mut images = Vec::with_capacity(16 + dataset.inputs().len());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [dataset.len(), shape[0], shape[1]] {
        images.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &v in dataset.inputs().data() {
        images.push(to_byte(v)?);
    }
    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    labels.extend(dataset.labels().iter().map(|&l| l as u8));
    Ok((images, labels))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_cifar10_bin(dataset: &Dataset, path: &Path) -> Result<()> {
    write_file(path, &encode_cifar10(dataset)?)
}

pub fn write_idx(dataset: &Dataset, image_path: &Path, label_path: &Path) -> Result<()> {
    let (images, labels) = encode_idx(dataset)?;
    write_file(image_path, &images)?;
    write_file(label_path, &labels)
}

/// Round-robin labels in a seeded random order, so class counts differ by
/// at most one.
fn balanced_labels(n: usize, classes: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    labels
}

fn normal(rng: &mut SeededRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Class-conditional Gaussians `x ~ N(separation·μ_c, I)` with unit-norm
/// random class means `μ_c`.
pub fn synth_gaussian(classes: usize, n: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || n == 0 || dim == 0 {
        return Err(Error::config("synth_gaussian needs classes ≥ 2, n ≥ 1 and dim ≥ 1"));
    }
    let mut rng = stream_rng(seed, Stream::Data, &[0]);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
            let len = crate::param::norm(&v).max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| separation * x / len).collect()
        })
        .collect();
    let labels = balanced_labels(n, classes, &mut rng);
    let mut data = Vec::with_capacity(n * dim);
    for &l in &labels {
        data.extend(means[l].iter().map(|m| m + normal(&mut rng)));
    }
    let inputs = Tensor::new(vec![n, dim], data)?;
    Dataset::new(inputs, labels, classes, Split::Train, Normalization::Raw)
}

/// Target rows `y ~ N(0, noise²·I)` for the quadratic model, whose loss
/// averages `½(θ − y)ᵀA(θ − y)` over rows. Labels are all zero.
pub fn quadratic_targets(n: usize, dim: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 || !(noise >= 0.0) {
        return Err(Error::config("quadratic_targets needs n ≥ 1, dim ≥ 1 and noise ≥ 0"));
    }
    let mut rng = stream_rng(seed, Stream::Data, &[2]);
    let data = (0..n * dim).map(|_| noise * normal(&mut rng)).collect();
    Dataset::new(Tensor::new(vec![n, dim], data)?, vec![0; n], 1, Split::Train, Normalization::Raw)
}

/// Parameters of the synthetic image generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthImageConfig {
    pub classes: usize,
    pub n: usize,
    /// `[height, width, channels]`
    pub shape: [usize; 3],
    /// Distinct templates per class; examples pick one at random.
    #[serde(default = "default_prototypes")]
    pub prototypes: usize,
    /// Number of random plane waves summed into each template.
    #[serde(default = "default_waves")]
    pub waves: usize,
    /// Standard deviation of the per-pixel Gaussian noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Templates are cyclically shifted by up to this many pixels.
    #[serde(default)]
    pub max_shift: usize,
    /// Fraction of examples whose label is replaced by a uniformly random
    /// class.
    #[serde(default)]
    pub label_noise: f64,
    pub seed: u64,
}

fn default_prototypes() -> usize {
    4
}

fn default_waves() -> usize {
    3
}

fn default_noise() -> f64 {
    0.1
}

impl SynthImageConfig {
    pub fn new(classes: usize, n: usize, shape: [usize; 3], seed: u64) -> Self {
        Self {
            classes,
            n,
            shape,
            prototypes: default_prototypes(),
            waves: default_waves(),
            noise: default_noise(),
            max_shift: 0,
            label_noise: 0.0,
            seed,
        }
    }
}

/// Images built from smooth per-class templates (sums of random plane
/// waves per channel), randomly shifted and corrupted by pixel noise, then
/// clamped to `[0, 1]`.
pub fn synth_images(cfg: &SynthImageConfig) -> Result<Dataset> {
    let [h, w, c] = cfg.shape;
    if cfg.classes < 2 || cfg.n == 0 || h == 0 || w == 0 || c == 0 || cfg.prototypes == 0 {
        return Err(Error::config("synth_images needs classes ≥ 2 and positive extents"));
    }
    if !(0.0..=1.0).contains(&cfg.label_noise) || !(cfg.noise >= 0.0) {
        return Err(Error::config("synth_images needs noise ≥ 0 and label_noise in [0, 1]"));
    }
    let mut rng = stream_rng(cfg.seed, Stream::Data, &[1]);
    let tau = std::f64::consts::TAU;
    let templates: Vec<Vec<f64>> = (0..cfg.classes * cfg.prototypes)
        .map(|_| {
            let mut img = vec![0.0; h * w * c];
            for ch in 0..c {
                for _ in 0..cfg.waves {
                    let fy = rng.random_range(0..=2) as f64 / h as f64;
                    let fx = rng.random_range(0..=2) as f64 / w as f64;
                    let phase = rng.random::<f64>() * tau;
                    let amp = normal(&mut rng) / (cfg.waves as f64).sqrt();
                    for y in 0..h {
                        for x in 0..w {
                            img[(y * w + x) * c + ch] += amp * (tau * (fy * y as f64 + fx * x as f64) + phase).cos();
                        }
                    }
                }
            }
            img
        })
        .collect();
    let labels = balanced_labels(cfg.n, cfg.classes, &mut rng);
    let mut data = Vec::with_capacity(cfg.n * h * w * c);
    let mut observed = Vec::with_capacity(cfg.n);
    for &label in &labels {
        let t = &templates[label * cfg.prototypes + rng.random_range(0..cfg.prototypes)];
        let span = 2 * cfg.max_shift + 1;
        let dy = rng.random_range(0..span) + h * span - cfg.max_shift;
        let dx = rng.random_range(0..span) + w * span - cfg.max_shift;
        for y in 0..h {
            for x in 0..w {
                let src = (((y + dy) % h) * w + (x + dx) % w) * c;
                for ch in 0..c {
                    let v = 0.5 + 0.25 * t[src + ch] + cfg.noise * normal(&mut rng);
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        let flip = cfg.label_noise > 0.0 && rng.random::<f64>() < cfg.label_noise;
        observed.push(if flip { rng.random_range(0..cfg.classes) } else { label });
    }
    let inputs = Tensor::new(vec![cfg.n, h, w, c], data)?;
    Dataset::new(inputs, observed, cfg.classes, Split::Train, Normalization::UnitInterval)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Zero padding added on every side before cropping.
    #[serde(default)]
    pub pad: usize,
    #[serde(default)]
    pub random_crop: bool,
    #[serde(default)]
    pub hflip: bool,
    #[serde(default)]
    pub seed: u64,
}

impl AugmentConfig {
    /// Pad-4 random crop plus horizontal flips.
    pub fn standard() -> Self {
        Self {
            pad: 4,
            random_crop: true,
            hflip: true,
            seed: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        (self.pad == 0 || !self.random_crop) && !self.hflip
    }
}

fn image_dims(batch: &Batch) -> Result<(usize, usize, usize)> {
    match batch.inputs().shape() {
        [_, h, w, c] => Ok((*h, *w, *c)),
        s => Err(Error::config(format!("augmentation needs N×H×W×C images, got {s:?}"))),
    }
}

/// Mirrors every image left to right.
pub fn flip_horizontal(batch: &Batch) -> Result<Batch> {
    let (h, w, c) = image_dims(batch)?;
    let mut out = batch.inputs().clone();
    let src = batch.inputs().data();
    for (n, img) in out.data_mut().chunks_exact_mut(h * w * c).enumerate() {
        let base = n * h * w * c;
        for y in 0..h {
            for x in 0..w {
                let from = base + (y * w + (w - 1 - x)) * c;
                img[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(&src[from..from + c]);
            }
        }
    }
    Batch::new(out, batch.labels().to_vec())
}

/// Per image: with `random_crop`, a crop of the original size at a random
/// offset into the zero-padded image; with `hflip`, a mirror with
/// probability ½. Labels are untouched.
pub fn augment(batch: &Batch, cfg: &AugmentConfig, rng: &mut SeededRng) -> Result<Batch> {
    if cfg.is_identity() {
        return Ok(batch.clone());
    }
    let (h, w, c) = image_dims(batch)?;
    let p = if cfg.random_crop { cfg.pad } else { 0 };
    let src = batch.inputs().data();
    let mut out = Tensor::zeros(batch.inputs().shape().to_vec());
    for (n, img) in out.data_mut().chunks_exact_mut(h * w * c).enumerate() {
        let (oy, ox) = if p > 0 {
            (rng.random_range(0..=2 * p), rng.random_range(0..=2 * p))
        } else {
            (0, 0)
        };
        let flip = cfg.hflip && rng.random::<bool>();
        let base = n * h * w * c;
        for y in 0..h {
            // row y of the crop is row y + oy − p of the original
            let sy = y + oy;
            if sy < p || sy >= h + p {
                continue;
            }
            for x in 0..w {
                let xx = if flip { w - 1 - x } else { x };
                let sx = xx + ox;
                if sx < p || sx >= w + p {
                    continue;
                }
                let from = base + ((sy - p) * w + (sx - p)) * c;
                img[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(&src[from..from + c]);
            }
        }
    }
    Batch::new(out, batch.labels().to_vec())
}

/// Example order for one epoch: a permutation seeded by `(seed, epoch)`,
/// or file order without shuffling.
pub fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[epoch as u64]));
    }
    order
}

/// Mini-batches of one epoch. The final short batch is kept.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    size: usize,
    at: usize,
}

impl BatchIter<'_> {
    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.size)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.at >= self.order.len() {
            return None;
        }
        let end = (self.at + self.size).min(self.order.len());
        let b = self.dataset.gather(&self.order[self.at..end]);
        self.at = end;
        Some(b)
    }
}

pub fn batch_iter(dataset: &Dataset, batch_size: usize, seed: u64, epoch: usize, shuffle: bool) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    Ok(BatchIter {
        dataset,
        order: epoch_order(dataset.len(), seed, epoch, shuffle),
        size: batch_size,
        at: 0,
    })
}

/// `count` distinct indices of `0..n`, drawn once from `seed`.
pub fn random_subset(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    idx.truncate(count.min(n));
    idx.sort_unstable();
    idx
}

/// Where a dataset comes from, as written in experiment configs. Relative
/// paths are resolved against the data root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Cifar10 {
        files: Vec<PathBuf>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    SynthGaussian {
        classes: usize,
        n: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
    SynthImages(SynthImageConfig),
    QuadraticTargets {
        n: usize,
        dim: usize,
        noise: f64,
        seed: u64,
    },
}

impl DatasetSource {
    /// Files this source reads, resolved against `root`.
    pub fn paths(&self, root: &Path) -> Vec<PathBuf> {
        match self {
            DatasetSource::Cifar10 { files } => files.iter().map(|f| root.join(f)).collect(),
            DatasetSource::Idx { images, labels } => vec![root.join(images), root.join(labels)],
            _ => Vec::new(),
        }
    }

    /// Fails with a configuration error naming the first missing file.
    pub fn check_paths(&self, root: &Path) -> Result<()> {
        match self.paths(root).into_iter().find(|p| !p.is_file()) {
            Some(p) => Err(Error::config(format!("dataset file not found: {}", p.display()))),
            None => Ok(()),
        }
    }

    pub fn load(&self, root: &Path, split: Split) -> Result<Dataset> {
        self.check_paths(root)?;
        let mut ds = match self {
            DatasetSource::Cifar10 { .. } => load_cifar10_bin(&self.paths(root), split)?,
            DatasetSource::Idx { images, labels } => load_idx(&root.join(images), &root.join(labels), split)?,
            DatasetSource::SynthGaussian {
                classes,
                n,
                dim,
                separation,
                seed,
            } => synth_gaussian(*classes, *n, *dim, *separation, *seed)?,
            DatasetSource::SynthImages(cfg) => synth_images(cfg)?,
            DatasetSource::QuadraticTargets { n, dim, noise, seed } => quadratic_targets(*n, *dim, *noise, *seed)?,
        };
        ds.split = split;
        Ok(ds)
    }
}
