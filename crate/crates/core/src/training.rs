//! Self-supervised training: synthetic distortions, residual targets,
//! augmentation and a depth curriculum.
//!
//! A training pair is produced by the recursion itself. For every level at
//! which the estimator runs, the pair `(img1, warp(img2, d1))` is fed to the
//! network and compared against the residual between the resampled ground
//! truth and `d1`. The recursion runs with the current weights in inference
//! mode and `d1` is treated as a constant.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Deserialize;

use crate::cnn::checkpoint::Checkpoint;
use crate::cnn::{adam_step, AdamConfig, AdamState, Gradients, Network, Tensor};
use crate::dataio::{load_dataset, load_scene, save_checkpoint, Scene};
use crate::estimator::{cnn_estimate, Estimator, EstimatorSpec, StereoMode};
use crate::eval::end_point_error;
use crate::image::{
    bilinear, blur_planar, downsample_field_half, gaussian_blur, warp, DisplacementField, Image,
};
use crate::pyramid::{effective_range, register_with, RecursionConfig};
use crate::rng;
use crate::{Error, Result};

/// Shape of a synthetic displacement field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DistortionKind {
    /// The given constant displacement.
    Shift { dx: f32, dy: f32 },
    /// A constant displacement drawn uniformly from `[-max, max]` per
    /// component.
    RandomShift,
    /// Gaussian-smoothed white noise with standard deviation `sigma` px,
    /// rescaled so that its largest component equals the maximum magnitude.
    Smooth { sigma: f32 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// Bound on `|dx|` and `|dy|` in pixels.
    pub max_magnitude: f32,
    /// Strict bound on the largest forward difference of the field.
    pub lambda: f32,
    /// Horizontal displacements only.
    pub stereo: bool,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, max_magnitude: f32, lambda: f32, stereo: bool) -> Result<Self> {
        if !(max_magnitude >= 0.0 && max_magnitude.is_finite()) {
            return Err(Error::invalid(format!("max magnitude must be >= 0, got {max_magnitude}")));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::invalid(format!("lambda must lie in (0, 1), got {lambda}")));
        }
        if let DistortionKind::Smooth { sigma } = kind {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::invalid(format!("smoothness sigma must be positive, got {sigma}")));
            }
        }
        Ok(Self { kind, max_magnitude, lambda, stereo })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    Dataset,
}

/// Image pair with the full-resolution field that maps one onto the other:
/// `img1(x) ~ img2(x - truth(x))`. Unknown truth is `+inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub img1: Image,
    pub img2: Image,
    pub truth: DisplacementField,
    pub provenance: Provenance,
}

impl TrainSample {
    pub fn new(img1: Image, img2: Image, truth: DisplacementField, provenance: Provenance) -> Result<Self> {
        if img1.shape() != img2.shape() || img1.shape() != truth.shape() || img1.channels() != img2.channels() {
            return Err(Error::invalid(format!(
                "sample shapes disagree: {:?}, {:?}, {:?}",
                img1.shape(),
                img2.shape(),
                truth.shape()
            )));
        }
        Ok(Self { img1, img2, truth, provenance })
    }
}

/// Scale factor below which a smooth field is rejected instead of being
/// shrunk to satisfy the slope bound.
const MIN_SLOPE_SCALE: f32 = 0.5;
const INVERSION_ITERATIONS: usize = 30;

/// Distorts `img` with a random field drawn from `spec`.
///
/// Returns `img1 = img` and an `img2` built so that warping it by the truth
/// reproduces `img1` away from the border. A smooth field whose slope
/// exceeds `lambda` is scaled down; if that would remove more than half of
/// its magnitude the spec is rejected as unsatisfiable.
pub fn synth_distortion(img: &Image, spec: &DistortionSpec, seed: u64) -> Result<TrainSample> {
    let (h, w) = img.shape();
    let mut rng = rng::from_seed(seed);
    let m = spec.max_magnitude;
    let truth = match spec.kind {
        DistortionKind::Shift { dx, dy } => {
            let dy = if spec.stereo { 0.0 } else { dy };
            if dx.abs() > m || dy.abs() > m {
                return Err(Error::invalid(format!("shift ({dx}, {dy}) exceeds max magnitude {m}")));
            }
            DisplacementField::constant(h, w, dx, dy)
        }
        DistortionKind::RandomShift => {
            let draw = |r: &mut rng::Prng| if m > 0.0 { r.random_range(-m..=m) } else { 0.0 };
            let dx = draw(&mut rng);
            let dy = if spec.stereo { 0.0 } else { draw(&mut rng) };
            DisplacementField::constant(h, w, dx, dy)
        }
        DistortionKind::Smooth { sigma } => smooth_field(h, w, sigma, spec, &mut rng)?,
    };
    if truth.max_abs() == 0.0 {
        return TrainSample::new(img.clone(), img.clone(), truth, Provenance::Synthetic);
    }
    let inverse = invert_field(&truth);
    let img2 = warp(img, &inverse.scale(-1.0))?;
    TrainSample::new(img.clone(), img2, truth, Provenance::Synthetic)
}

fn smooth_field(h: usize, w: usize, sigma: f32, spec: &DistortionSpec, rng: &mut rng::Prng) -> Result<DisplacementField> {
    let need = (4.0 * sigma).ceil() as usize;
    if h < need || w < need {
        return Err(Error::invalid(format!("{h}x{w} image is too small for smoothness sigma {sigma}")));
    }
    if spec.max_magnitude == 0.0 {
        return Ok(DisplacementField::zeros(h, w));
    }
    let noise = DisplacementField::from_fn(h, w, |_, _| {
        let dx = rng.random_range(-1.0f32..1.0);
        let dy = rng.random_range(-1.0f32..1.0);
        (dx, if spec.stereo { 0.0 } else { dy })
    });
    let smooth = gaussian_blur(&noise, sigma)?;
    let peak = smooth.max_abs();
    if peak == 0.0 {
        return Ok(DisplacementField::zeros(h, w));
    }
    let mut field = smooth.scale(spec.max_magnitude / peak);
    let slope = field.max_gradient();
    if slope >= spec.lambda {
        let shrink = 0.99 * spec.lambda / slope;
        if shrink < MIN_SLOPE_SCALE {
            return Err(Error::invalid(format!(
                "slope bound {} cannot be met at magnitude {} with sigma {sigma} (slope {slope:.3})",
                spec.lambda, spec.max_magnitude
            )));
        }
        field = field.scale(shrink);
    }
    Ok(field)
}

/// Field `e` with `e(y) = d(y + e(y))`, found by fixed-point iteration.
/// Converges for fields with slope below one.
fn invert_field(d: &DisplacementField) -> DisplacementField {
    let (h, w) = d.shape();
    let mut e = d.clone();
    for _ in 0..INVERSION_ITERATIONS {
        e = DisplacementField::from_fn(h, w, |y, x| {
            let (ex, ey) = e.get(y, x);
            let sy = y as f32 + ey;
            let sx = x as f32 + ex;
            (bilinear(d.data(), h, w, 2, 0, sy, sx), bilinear(d.data(), h, w, 2, 1, sy, sx))
        });
    }
    e
}

/// Network target at one level and the pixels that enter the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualTarget {
    pub target: DisplacementField,
    pub mask: Vec<bool>,
}

impl ResidualTarget {
    /// Fraction of pixels excluded from the loss.
    pub fn masked_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| !m).count() as f64 / self.mask.len() as f64
    }
}

/// `blur(resample(truth) - d1)` and its loss mask.
///
/// `truth` is box-downsampled and halved until it matches `d1`'s shape. A
/// pixel is kept when neither residual component exceeds `mask_limit` and the
/// truth is known there; `mask_limit = 0` excludes everything.
pub fn residual_target(
    truth: &DisplacementField,
    d1: &DisplacementField,
    blur_sigma: f32,
    mask_limit: f32,
) -> Result<ResidualTarget> {
    let resampled = resample_truth(truth, d1.shape())?;
    let (h, w) = d1.shape();
    let mut holes = vec![false; h * w];
    let mut residual = Vec::with_capacity(2 * h * w);
    for (i, (t, d)) in resampled.data().chunks_exact(2).zip(d1.data().chunks_exact(2)).enumerate() {
        if t[0].is_finite() && t[1].is_finite() {
            residual.push(t[0] - d[0]);
            residual.push(t[1] - d[1]);
        } else {
            holes[i] = true;
            residual.push(0.0);
            residual.push(0.0);
        }
    }
    let data = if blur_sigma > 0.0 { blur_planar(&residual, h, w, 2, blur_sigma) } else { residual };
    let target = DisplacementField::new(h, w, data)?;
    let mask = target
        .data()
        .chunks_exact(2)
        .zip(&holes)
        .map(|(t, &hole)| !hole && mask_limit > 0.0 && t[0].abs() <= mask_limit && t[1].abs() <= mask_limit)
        .collect();
    Ok(ResidualTarget { target, mask })
}

/// `truth` at `shape`, with values scaled by the resolution ratio.
pub fn resample_truth(truth: &DisplacementField, shape: (usize, usize)) -> Result<DisplacementField> {
    let mut t = truth.clone();
    while t.shape() != shape {
        let (h, w) = t.shape();
        if h < shape.0 || w < shape.1 || h < 2 || w < 2 {
            return Err(Error::invalid(format!(
                "cannot resample a {}x{} field to {}x{}",
                truth.height(),
                truth.width(),
                shape.0,
                shape.1
            )));
        }
        t = downsample_field_half(&t)?.scale(0.5);
    }
    Ok(t)
}

/// Horizontal mirror of a sample: both images flipped, `dx` negated.
pub fn mirror_sample(sample: &TrainSample) -> TrainSample {
    TrainSample {
        img1: sample.img1.mirror_horizontal(),
        img2: sample.img2.mirror_horizontal(),
        truth: sample.truth.mirror_horizontal(),
        provenance: sample.provenance,
    }
}

/// Rotates the hue of an RGB image by `theta` radians around the gray axis,
/// clamping to `[0, 1]`. Other channel counts are returned unchanged.
pub fn hue_rotate(img: &Image, theta: f32) -> Image {
    if img.channels() != 3 || theta == 0.0 {
        return img.clone();
    }
    let (s, c) = theta.sin_cos();
    let k = 1.0 / 3.0;
    let r3 = 1.0f32 / 3.0f32.sqrt();
    let a = c + (1.0 - c) * k;
    let b = k * (1.0 - c) - r3 * s;
    let d = k * (1.0 - c) + r3 * s;
    let m = [[a, b, d], [d, a, b], [b, d, a]];
    let (h, w) = img.shape();
    Image::from_fn(h, w, 3, |y, x, ch| {
        let p = img.pixel(y, x);
        (m[ch][0] * p[0] + m[ch][1] * p[1] + m[ch][2] * p[2]).clamp(0.0, 1.0)
    })
}

/// Mirrors with probability one half and rotates the hue of both images by
/// the same random angle.
pub fn augment(sample: &TrainSample, seed: u64) -> TrainSample {
    let mut rng = rng::from_seed(seed);
    let mirrored = rng.random_bool(0.5);
    let theta = rng.random_range(-std::f32::consts::PI..std::f32::consts::PI);
    let base = if mirrored { mirror_sample(sample) } else { sample.clone() };
    TrainSample {
        img1: hue_rotate(&base.img1, theta),
        img2: hue_rotate(&base.img2, theta),
        ..base
    }
}

/// Multi-octave value noise in `[0, 1]`, a stand-in for natural texture.
pub fn texture_image(height: usize, width: usize, channels: usize, seed: u64) -> Image {
    let mut rng = rng::from_seed(seed);
    let mut acc = vec![0.0f32; height * width * channels];
    let mut total = 0.0f32;
    for octave in 0..5 {
        let cell = (1usize << octave) as f32;
        let amp = cell.sqrt();
        let gh = (height as f32 / cell).ceil() as usize + 2;
        let gw = (width as f32 / cell).ceil() as usize + 2;
        let grid: Vec<f32> = (0..gh * gw * channels).map(|_| rng.random::<f32>()).collect();
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = bilinear(&grid, gh, gw, channels, c, y as f32 / cell, x as f32 / cell);
                    acc[(y * width + x) * channels + c] += amp * v;
                }
            }
        }
        total += amp;
    }
    for v in &mut acc {
        *v /= total;
    }
    let (lo, hi) = acc.iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let span = (hi - lo).max(1e-6);
    Image::from_fn(height, width, channels, |y, x, c| (acc[(y * width + x) * channels + c] - lo) / span)
}

/// One curriculum stage.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    /// Deepest recursion level (0 = full resolution only).
    pub depth: usize,
    pub steps: usize,
    /// Training image sizes `[height, width]`, drawn uniformly between the
    /// two bounds.
    pub min_size: [usize; 2],
    pub max_size: [usize; 2],
    #[serde(default = "default_lr")]
    pub lr: f32,
}

fn default_lr() -> f32 {
    1e-3
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumSchedule {
    stages: Vec<Stage>,
}

impl CurriculumSchedule {
    /// Requires at least one stage, depth 0 first, nondecreasing depths and
    /// valid size ranges.
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        let first = stages.first().ok_or_else(|| Error::invalid("curriculum has no stages"))?;
        if first.depth != 0 {
            return Err(Error::invalid("the first curriculum stage must have depth 0"));
        }
        for (i, pair) in stages.windows(2).enumerate() {
            if pair[1].depth < pair[0].depth {
                return Err(Error::invalid(format!("stage {} lowers the recursion depth", i + 1)));
            }
        }
        for (i, s) in stages.iter().enumerate() {
            if s.min_size[0] > s.max_size[0] || s.min_size[1] > s.max_size[1] || s.min_size.contains(&0) {
                return Err(Error::invalid(format!("stage {i} has an invalid size range")));
            }
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(Error::invalid(format!("stage {i} has learning rate {}", s.lr)));
            }
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.steps).sum()
    }
}

/// Loss and masking settings shared by all stages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub mu: f32,
    pub blur_sigma: f32,
    pub mask_limit: f32,
    /// Pairs with a larger excluded fraction are skipped.
    pub max_masked_fraction: f64,
    pub stereo: bool,
}

impl LossConfig {
    pub fn new(mu: f32, stereo: bool) -> Self {
        Self {
            mu,
            blur_sigma: 1.0,
            mask_limit: mu,
            max_masked_fraction: 0.2,
            stereo,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    /// Mean masked loss per sample, in order.
    pub losses: Vec<f32>,
    /// End-point error of each sample's full-resolution estimate before its
    /// update.
    pub epes: Vec<f64>,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

impl EpochMetrics {
    pub fn mean_loss(&self) -> f64 {
        mean(self.losses.iter().map(|&v| v as f64))
    }

    pub fn mean_epe(&self) -> f64 {
        mean(self.epes.iter().copied())
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    values.sum::<f64>() / n as f64
}

struct BorrowedCnn<'a> {
    net: &'a Network,
    mu: f32,
}

impl Estimator for BorrowedCnn<'_> {
    fn spec(&self) -> EstimatorSpec {
        let (min_height, min_width) = self.net.receptive_field();
        EstimatorSpec { mu: self.mu, error_bound: self.mu / 2.0, min_height, min_width }
    }

    fn estimate(&self, img1: &Image, img2: &Image, mode: StereoMode) -> Result<DisplacementField> {
        cnn_estimate(self.net, img1, img2, mode, self.mu)
    }
}

struct LevelPair {
    img1: Image,
    img2_warped: Image,
    coarse: DisplacementField,
}

/// Trains `net` on `samples` in order, one optimizer step per sample.
///
/// Each sample is registered to `depth` levels with the current weights. The
/// network is then fitted at every level against [`residual_target`] with a
/// masked mean squared error on `dx` (and `dy` unless stereo).
pub fn train_epoch(
    net: &mut Network,
    samples: &[TrainSample],
    depth: usize,
    loss: &LossConfig,
    adam: &mut AdamState,
    seed: u64,
) -> Result<EpochMetrics> {
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let mut metrics = EpochMetrics::default();
    for (i, sample) in samples.iter().enumerate() {
        let mut dropout = rng::derive(seed, i as u64);
        let step = train_sample(net, sample, depth, loss, adam, &mut dropout)?;
        metrics.losses.push(step.loss);
        metrics.epes.push(step.epe);
        metrics.pairs_used += step.pairs_used;
        metrics.pairs_skipped += step.pairs_skipped;
    }
    Ok(metrics)
}

struct StepResult {
    loss: f32,
    epe: f64,
    pairs_used: usize,
    pairs_skipped: usize,
}

fn train_sample(
    net: &mut Network,
    sample: &TrainSample,
    depth: usize,
    loss_cfg: &LossConfig,
    adam: &mut AdamState,
    dropout: &mut rng::Prng,
) -> Result<StepResult> {
    let stereo = StereoMode { enabled: loss_cfg.stereo };
    let mut pairs = Vec::new();
    let field = {
        let est = BorrowedCnn { net, mu: loss_cfg.mu };
        let cfg = RecursionConfig::for_estimator(&est).with_max_depth(Some(depth)).with_stereo(stereo);
        register_with(&sample.img1, &sample.img2, &est, &cfg, |v| {
            pairs.push(LevelPair {
                img1: v.img1.clone(),
                img2_warped: v.img2_warped.clone(),
                coarse: v.coarse.clone(),
            });
        })?
    };
    let epe = end_point_error(&field, &sample.truth, 0).unwrap_or(f64::NAN);

    let mut targets = Vec::new();
    let mut skipped = 0;
    for pair in pairs {
        let t = residual_target(&sample.truth, &pair.coarse, loss_cfg.blur_sigma, loss_cfg.mask_limit)?;
        if t.masked_fraction() > loss_cfg.max_masked_fraction {
            skipped += 1;
        } else {
            targets.push((pair, t));
        }
    }
    if targets.is_empty() {
        return Ok(StepResult { loss: 0.0, epe, pairs_used: 0, pairs_skipped: skipped });
    }

    let n = targets.len() as f32;
    let mut grads = Gradients::zeros_like(net);
    let mut total = 0.0f32;
    for (pair, target) in &targets {
        let input = network_input(net, &pair.img1, &pair.img2_warped)?;
        let cache = net.forward_cached(&input, Some(&mut *dropout))?;
        let (l, grad) = masked_mse(cache.output(), target, loss_cfg.stereo, n);
        total += l;
        grads.accumulate(&net.backward(&cache, &grad)?);
    }
    adam_step(net, &grads, adam)?;
    Ok(StepResult { loss: total / n, epe, pairs_used: targets.len(), pairs_skipped: skipped })
}

/// Concatenated pair padded so the network output matches the image size.
pub fn network_input(net: &Network, img1: &Image, img2: &Image) -> Result<Tensor> {
    let (top, bottom, left, right) = net.padding();
    Ok(Tensor::from_image(&img1.concat_channels(img2)?).pad_replicate(top, bottom, left, right))
}

/// Mean over masked pixels of the squared error, and its gradient divided by
/// `weight`.
fn masked_mse(out: &Tensor, target: &ResidualTarget, stereo: bool, weight: f32) -> (f32, Tensor) {
    let comps = if stereo { 1 } else { 2 };
    let count = target.mask.iter().filter(|&&m| m).count();
    let mut grad = Tensor::zeros(out.height, out.width, out.channels);
    if count == 0 {
        return (0.0, grad);
    }
    let mut sum = 0.0f64;
    let scale = 2.0 / (count as f32 * weight);
    for (i, &keep) in target.mask.iter().enumerate() {
        if !keep {
            continue;
        }
        for c in 0..comps {
            let diff = out.data[i * out.channels + c] - target.target.data()[2 * i + c];
            sum += (diff * diff) as f64;
            grad.data[i * out.channels + c] = scale * diff;
        }
    }
    ((sum / count as f64) as f32, grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Table1,
    Compact,
}

impl Architecture {
    pub fn build(self, stereo: bool) -> Network {
        match self {
            Architecture::Table1 => Network::table1(),
            Architecture::Compact => Network::compact(6, if stereo { 1 } else { 2 }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Shift,
    Smooth,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionConfig {
    #[serde(default = "default_field_kind")]
    pub kind: FieldKind,
    /// Largest synthetic displacement; each stage further caps it at the
    /// range its depth can recover.
    pub max_shift: f32,
    #[serde(default = "default_lambda")]
    pub lambda: f32,
    #[serde(default = "default_sigma")]
    pub sigma: f32,
}

fn default_field_kind() -> FieldKind {
    FieldKind::Shift
}

fn default_lambda() -> f32 {
    0.5
}

fn default_sigma() -> f32 {
    8.0
}

/// Training run description, read from TOML.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub mu: f32,
    #[serde(default = "default_true")]
    pub stereo: bool,
    pub architecture: Architecture,
    #[serde(default = "default_blur")]
    pub blur_sigma: f32,
    /// Defaults to `mu`.
    pub mask_limit: Option<f32>,
    #[serde(default = "default_masked_fraction")]
    pub max_masked_fraction: f64,
    #[serde(default = "default_true")]
    pub augment: bool,
    pub distortion: DistortionConfig,
    /// Directory of scene folders mixed with synthetic samples.
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_dataset_fraction")]
    pub dataset_fraction: f64,
    /// Warm-start weights.
    pub init_checkpoint: Option<PathBuf>,
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub checkpoint_interval: usize,
    pub metrics: Option<PathBuf>,
    pub stages: Vec<Stage>,
}

fn default_seed() -> u64 {
    rng::DEFAULT_SEED
}

fn default_true() -> bool {
    true
}

fn default_blur() -> f32 {
    1.0
}

fn default_masked_fraction() -> f64 {
    0.2
}

fn default_dataset_fraction() -> f64 {
    0.5
}

impl TrainConfig {
    /// Parses a config; relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut cfg.dataset, &mut cfg.init_checkpoint, &mut cfg.metrics].into_iter().flatten() {
            *p = base_dir.join(&*p);
        }
        cfg.checkpoint = base_dir.join(&cfg.checkpoint);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if !(0.0..=1.0).contains(&self.dataset_fraction) || !(0.0..=1.0).contains(&self.max_masked_fraction) {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        CurriculumSchedule::new(self.stages.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let kind = match self.distortion.kind {
            FieldKind::Shift => DistortionKind::RandomShift,
            FieldKind::Smooth => DistortionKind::Smooth { sigma: self.distortion.sigma },
        };
        DistortionSpec::new(kind, self.distortion.max_shift, self.distortion.lambda, self.stereo)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            mu: self.mu,
            blur_sigma: self.blur_sigma,
            mask_limit: self.mask_limit.unwrap_or(self.mu),
            max_masked_fraction: self.max_masked_fraction,
            stereo: self.stereo,
        }
    }
}

/// One line of the metrics stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub stage: usize,
    pub loss: f32,
    pub epe: f64,
}

impl StepRecord {
    /// `step stage loss epe`, space separated.
    pub fn to_line(&self) -> String {
        format!("{} {} {:.6} {:.6}", self.step, self.stage, self.loss, self.epe)
    }
}

/// Runs a full curriculum.
pub struct Trainer {
    config: TrainConfig,
    schedule: CurriculumSchedule,
    network: Network,
    adam: AdamState,
    scenes: Vec<Scene>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let schedule = CurriculumSchedule::new(config.stages.clone())?;
        for path in std::iter::once(&config.checkpoint).chain(&config.metrics) {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        let network = match &config.init_checkpoint {
            Some(path) => crate::dataio::load_checkpoint(path)?.network,
            None => {
                let mut net = config.architecture.build(config.stereo);
                net.init_weights(&mut rng::derive(config.seed, u64::MAX));
                net
            }
        };
        let adam = AdamState::new(&network, AdamConfig::default());
        let scenes = match &config.dataset {
            Some(root) => {
                let index = load_dataset(root)?;
                let mut scenes = Vec::new();
                for rec in index.scenes.iter().filter(|r| r.is_supervised()) {
                    scenes.push(load_scene(rec)?);
                }
                log::info!("loaded {} supervised scenes from {}", scenes.len(), root.display());
                scenes
            }
            None => Vec::new(),
        };
        Ok(Self { config, schedule, network, adam, scenes })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn into_network(self) -> Network {
        self.network
    }

    /// Runs every stage, calling `on_step` after each optimizer step. Writes
    /// the metrics stream and checkpoints as configured.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepRecord)) -> Result<Vec<StepRecord>> {
        let mut metrics = match &self.config.metrics {
            Some(p) => Some(std::io::BufWriter::new(fs::File::create(p).map_err(|e| Error::io(p, e))?)),
            None => None,
        };
        let loss_cfg = self.config.loss_config();
        let mut records = Vec::with_capacity(self.schedule.total_steps());
        let mut step = 0usize;
        for (stage_idx, stage) in self.schedule.stages().to_vec().iter().enumerate() {
            self.adam.config.lr = stage.lr;
            for _ in 0..stage.steps {
                let sample = self.make_sample(stage, step)?;
                let mut dropout = rng::derive(self.config.seed, 2 * step as u64 + 1);
                let r = train_sample(&mut self.network, &sample, stage.depth, &loss_cfg, &mut self.adam, &mut dropout)?;
                let rec = StepRecord { step, stage: stage_idx, loss: r.loss, epe: r.epe };
                if let Some(m) = metrics.as_mut() {
                    let path = self.config.metrics.as_ref().expect("metrics path");
                    writeln!(m, "{}", rec.to_line()).map_err(|e| Error::io(path, e))?;
                }
                on_step(&rec);
                records.push(rec);
                step += 1;
                if self.config.checkpoint_interval > 0 && step.is_multiple_of(self.config.checkpoint_interval) {
                    self.save()?;
                }
            }
        }
        if let (Some(m), Some(p)) = (metrics.as_mut(), &self.config.metrics) {
            m.flush().map_err(|e| Error::io(p, e))?;
        }
        self.save()?;
        Ok(records)
    }

    fn save(&self) -> Result<()> {
        let ckpt = Checkpoint { mu: self.config.mu, network: self.network.clone() };
        save_checkpoint(&ckpt, &self.config.checkpoint)
    }

    fn make_sample(&self, stage: &Stage, step: usize) -> Result<TrainSample> {
        let seed = self.config.seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut rng = rng::derive(seed, 0);
        let h = rng.random_range(stage.min_size[0]..=stage.max_size[0]);
        let w = rng.random_range(stage.min_size[1]..=stage.max_size[1]);
        let use_dataset = !self.scenes.is_empty() && rng.random_bool(self.config.dataset_fraction);
        let sample = if use_dataset {
            let scene = &self.scenes[rng.random_range(0..self.scenes.len())];
            dataset_crop(scene, h, w, &mut rng)?
        } else {
            let img = texture_image(h, w, 3, rng.random());
            let d = &self.config.distortion;
            let cfg = RecursionConfig {
                max_depth: Some(stage.depth),
                min_height: 1,
                min_width: 1,
                stereo: StereoMode { enabled: self.config.stereo },
                capture_trace: false,
            };
            let (rh, rw) = self.network.receptive_field();
            let cfg = RecursionConfig { min_height: rh, min_width: rw, ..cfg };
            let spec = EstimatorSpec { mu: self.config.mu, error_bound: self.config.mu / 2.0, min_height: rh, min_width: rw };
            let range = effective_range(&cfg, &spec, h, w);
            let kind = match d.kind {
                FieldKind::Shift => DistortionKind::RandomShift,
                FieldKind::Smooth => DistortionKind::Smooth { sigma: d.sigma },
            };
            let spec = DistortionSpec::new(kind, d.max_shift.min(range), d.lambda, self.config.stereo)?;
            synth_distortion(&img, &spec, rng.random())?
        };
        Ok(if self.config.augment { augment(&sample, rng.random()) } else { sample })
    }
}

fn dataset_crop(scene: &Scene, h: usize, w: usize, rng: &mut rng::Prng) -> Result<TrainSample> {
    let gt = scene.disparity.as_ref().ok_or_else(|| Error::invalid("scene has no ground truth"))?;
    let (sh, sw) = scene.left.shape();
    let (h, w) = (h.min(sh), w.min(sw));
    let y0 = rng.random_range(0..=sh - h);
    let x0 = rng.random_range(0..=sw - w);
    let truth = gt.to_stereo_field().crop(y0, x0, h, w)?;
    TrainSample::new(
        scene.left.crop(y0, x0, h, w)?,
        scene.right.crop(y0, x0, h, w)?,
        truth,
        Provenance::Dataset,
    )
}
