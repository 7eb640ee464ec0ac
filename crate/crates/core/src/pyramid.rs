//! Coarse-to-fine recursion.
//!
//! `register(f1, f2)` estimates a coarse field on half-resolution copies,
//! upsamples it and doubles its values (`d1`), warps `f2` by `d1` and adds the
//! small-displacement estimate between `f1` and the warped image (`d2`).
//! Below the estimator's minimum input size the answer is a zero field.
//! Each level multiplies the detectable range by two while the error stays
//! that of the small estimator.

use crate::estimator::{Estimator, EstimatorSpec, StereoMode};
use crate::image::{downsample_half, shape_mismatch, upsample_double, warp, DisplacementField, Image};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecursionConfig {
    /// Deepest level (0 = full resolution) at which the estimator runs;
    /// `None` recurses until the images fall below the minimum size.
    pub max_depth: Option<usize>,
    pub min_height: usize,
    pub min_width: usize,
    pub stereo: StereoMode,
    /// Record per-level statistics. Does not affect the result.
    pub capture_trace: bool,
}

impl RecursionConfig {
    pub fn for_estimator<E: Estimator + ?Sized>(est: &E) -> Self {
        let spec = est.spec();
        Self {
            max_depth: None,
            min_height: spec.min_height,
            min_width: spec.min_width,
            stereo: StereoMode::OFF,
            capture_trace: false,
        }
    }

    pub fn with_max_depth(mut self, depth: Option<usize>) -> Self {
        self.max_depth = depth;
        self
    }

    pub fn with_stereo(mut self, stereo: StereoMode) -> Self {
        self.stereo = stereo;
        self
    }

    pub fn with_trace(mut self, on: bool) -> Self {
        self.capture_trace = on;
        self
    }

    fn runs_at(&self, level: usize, h: usize, w: usize) -> bool {
        h >= self.min_height && w >= self.min_width && self.max_depth.is_none_or(|m| level <= m)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldStats {
    pub mean_abs_dx: f32,
    pub mean_abs_dy: f32,
    pub max_abs: f32,
}

impl FieldStats {
    pub fn of(field: &DisplacementField) -> Self {
        let n = (field.height() * field.width()) as f64;
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        for p in field.data().chunks_exact(2) {
            sx += p[0].abs() as f64;
            sy += p[1].abs() as f64;
        }
        Self {
            mean_abs_dx: (sx / n) as f32,
            mean_abs_dy: (sy / n) as f32,
            max_abs: field.max_abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelRecord {
    /// 0 is full resolution.
    pub level: usize,
    pub height: usize,
    pub width: usize,
    /// Upsampled, doubled estimate from the coarser level (`d1`).
    pub coarse: FieldStats,
    /// Small-displacement correction at this level (`d2`).
    pub correction: FieldStats,
}

/// Levels in execution order, coarsest first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LevelTrace {
    pub levels: Vec<LevelRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Registration {
    pub field: DisplacementField,
    pub trace: Option<LevelTrace>,
}

/// What the recursion saw and produced at one level.
pub struct LevelVisit<'a> {
    pub level: usize,
    pub img1: &'a Image,
    /// Second image warped by `coarse`.
    pub img2_warped: &'a Image,
    pub coarse: &'a DisplacementField,
    pub correction: &'a DisplacementField,
}

/// Registers `img2` onto `img1`: the result `d` satisfies
/// `img1(x) ~ img2(x - d(x))`.
pub fn register<E: Estimator + ?Sized>(
    img1: &Image,
    img2: &Image,
    est: &E,
    cfg: &RecursionConfig,
) -> Result<Registration> {
    let mut trace = cfg.capture_trace.then(LevelTrace::default);
    let field = register_with(img1, img2, est, cfg, |v| {
        if let Some(t) = trace.as_mut() {
            t.levels.push(LevelRecord {
                level: v.level,
                height: v.img1.height(),
                width: v.img1.width(),
                coarse: FieldStats::of(v.coarse),
                correction: FieldStats::of(v.correction),
            });
        }
    })?;
    Ok(Registration { field, trace })
}

/// [`register`] with a callback invoked once per level that runs the
/// estimator, coarsest level first.
pub fn register_with<E: Estimator + ?Sized, F: FnMut(&LevelVisit<'_>)>(
    img1: &Image,
    img2: &Image,
    est: &E,
    cfg: &RecursionConfig,
    mut visit: F,
) -> Result<DisplacementField> {
    if img1.shape() != img2.shape() {
        return Err(shape_mismatch(img1.shape(), img2.shape()));
    }
    let mu = est.spec().mu;
    recurse(img1, img2, 0, est, cfg, mu, &mut visit)
}

fn recurse<E: Estimator + ?Sized>(
    img1: &Image,
    img2: &Image,
    level: usize,
    est: &E,
    cfg: &RecursionConfig,
    mu: f32,
    visit: &mut dyn FnMut(&LevelVisit<'_>),
) -> Result<DisplacementField> {
    let (h, w) = img1.shape();
    if !cfg.runs_at(level, h, w) {
        return Ok(DisplacementField::zeros(h, w));
    }
    let coarse = if h >= 2 && w >= 2 {
        let (s1, s2) = rayon::join(|| downsample_half(img1), || downsample_half(img2));
        let sub = recurse(&s1?, &s2?, level + 1, est, cfg, mu, visit)?;
        upsample_double(&sub, h, w)?.scale(2.0)
    } else {
        DisplacementField::zeros(h, w)
    };
    let warped = warp(img2, &coarse)?;
    let mut correction = est.estimate_with_prior(img1, &warped, &coarse, cfg.stereo)?.clamp(mu);
    if cfg.stereo.enabled {
        correction = correction.without_dy();
    }
    visit(&LevelVisit {
        level,
        img1,
        img2_warped: &warped,
        coarse: &coarse,
        correction: &correction,
    });
    coarse.add(&correction)
}

/// Number of levels at which the estimator runs for an `h x w` input.
pub fn recursion_levels(cfg: &RecursionConfig, height: usize, width: usize) -> usize {
    let (mut h, mut w) = (height, width);
    let mut levels = 0;
    while cfg.runs_at(levels, h, w) {
        levels += 1;
        if h < 2 || w < 2 {
            break;
        }
        h = h.div_ceil(2);
        w = w.div_ceil(2);
    }
    levels
}

/// Largest displacement the recursion can recover on an `h x w` input:
/// `mu * 2^depth`, where `depth` is the number of levels below full
/// resolution at which the estimator runs. At least `mu`.
pub fn effective_range(cfg: &RecursionConfig, spec: &EstimatorSpec, height: usize, width: usize) -> f32 {
    let depth = recursion_levels(cfg, height, width).saturating_sub(1);
    spec.mu * (1u64 << depth.min(62)) as f32
}
