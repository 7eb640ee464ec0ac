//! Bad-pixel statistics, left-right consistency and report formatting.

use std::fmt::Write as _;

use crate::image::{bilinear, shape_mismatch, DisplacementField, ScalarMap};
use crate::{Error, Result};

/// Error thresholds in pixels for `bad1`, `bad2` and `bad5`.
pub const THRESHOLDS: [f32; 3] = [1.0, 2.0, 5.0];

/// Default left-right consistency tolerance in pixels.
pub const DEFAULT_OCCLUSION_TOLERANCE: f32 = 1.0;

/// Published `bad2` rates (fractions) that a full training run is compared
/// against. Informational only.
pub const REFERENCE_BAD2: [(&str, f64); 2] = [("cones", 0.109), ("teddy", 0.085)];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    /// Fraction of evaluated pixels with error strictly above 1 px.
    pub bad1: f64,
    pub bad2: f64,
    pub bad5: f64,
    pub max_error: f32,
    /// Fraction of ground-truth pixels flagged occluded; 0 without a mask.
    pub occlusion_fraction: f64,
    pub evaluated_pixels: usize,
}

/// Which pixels enter the statistics. Holes are always excluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskPolicy {
    All,
    NonOccluded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionMask {
    height: usize,
    width: usize,
    occluded: Vec<bool>,
}

impl OcclusionMask {
    pub fn new(height: usize, width: usize, occluded: Vec<bool>) -> Result<Self> {
        if occluded.len() != height * width {
            return Err(Error::invalid(format!(
                "mask has {} entries, expected {height}x{width}",
                occluded.len()
            )));
        }
        Ok(Self { height, width, occluded })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_occluded(&self, y: usize, x: usize) -> bool {
        self.occluded[y * self.width + x]
    }

    pub fn fraction(&self) -> f64 {
        self.occluded.iter().filter(|&&o| o).count() as f64 / self.occluded.len() as f64
    }

    pub fn count(&self) -> usize {
        self.occluded.iter().filter(|&&o| o).count()
    }
}

/// Horizontal error statistics of `pred` against `gt`.
///
/// The error is `|pred.dx - gt|`. Holes in either input are skipped.
/// `NonOccluded` requires `occlusion`.
pub fn bad_pixel_report(
    pred: &DisplacementField,
    gt: &ScalarMap,
    occlusion: Option<&OcclusionMask>,
    policy: MaskPolicy,
) -> Result<EvalReport> {
    if pred.shape() != gt.shape() {
        return Err(shape_mismatch(pred.shape(), gt.shape()));
    }
    if let Some(m) = occlusion {
        if m.shape() != gt.shape() {
            return Err(shape_mismatch(m.shape(), gt.shape()));
        }
    }
    let mask = match (policy, occlusion) {
        (MaskPolicy::NonOccluded, None) => {
            return Err(Error::invalid("non-occluded policy needs an occlusion mask"))
        }
        (MaskPolicy::NonOccluded, Some(m)) => Some(m),
        (MaskPolicy::All, _) => None,
    };

    let (h, w) = gt.shape();
    let mut bad = [0usize; 3];
    let mut max_error = 0.0f32;
    let mut evaluated = 0usize;
    let mut valid_gt = 0usize;
    let mut occluded_gt = 0usize;
    for y in 0..h {
        for x in 0..w {
            let g = gt.get(y, x);
            if !g.is_finite() {
                continue;
            }
            valid_gt += 1;
            let occluded = occlusion.is_some_and(|m| m.is_occluded(y, x));
            if occluded {
                occluded_gt += 1;
            }
            let p = pred.dx(y, x);
            if !p.is_finite() || (occluded && mask.is_some()) {
                continue;
            }
            let e = (p - g).abs();
            evaluated += 1;
            max_error = max_error.max(e);
            for (b, t) in bad.iter_mut().zip(THRESHOLDS) {
                if e > t {
                    *b += 1;
                }
            }
        }
    }
    if evaluated == 0 {
        return Err(Error::EmptyReport);
    }
    let n = evaluated as f64;
    Ok(EvalReport {
        bad1: bad[0] as f64 / n,
        bad2: bad[1] as f64 / n,
        bad5: bad[2] as f64 / n,
        max_error,
        occlusion_fraction: if valid_gt == 0 { 0.0 } else { occluded_gt as f64 / valid_gt as f64 },
        evaluated_pixels: evaluated,
    })
}

/// Left-right consistency check.
///
/// A left pixel `x` is occluded when `|dL(x) + dR(x - dL(x))| > tol` in
/// either component, with `dR` sampled bilinearly and clamped at the
/// border. Holes in `dL` count as occluded.
pub fn occlusion_mask(
    left_to_right: &DisplacementField,
    right_to_left: &DisplacementField,
    tol: f32,
) -> Result<OcclusionMask> {
    if left_to_right.shape() != right_to_left.shape() {
        return Err(shape_mismatch(left_to_right.shape(), right_to_left.shape()));
    }
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::invalid(format!("tolerance must be >= 0, got {tol}")));
    }
    let (h, w) = left_to_right.shape();
    let dr = right_to_left.data();
    let mut occluded = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = left_to_right.get(y, x);
            if !dx.is_finite() || !dy.is_finite() {
                occluded.push(true);
                continue;
            }
            let sy = y as f32 - dy;
            let sx = x as f32 - dx;
            let rx = bilinear(dr, h, w, 2, 0, sy, sx);
            let ry = bilinear(dr, h, w, 2, 1, sy, sx);
            let err = (dx + rx).abs().max((dy + ry).abs());
            occluded.push(err.is_nan() || err > tol);
        }
    }
    OcclusionMask::new(h, w, occluded)
}

/// Mean Euclidean end-point error over pixels at least `margin` from the
/// border, skipping holes in `truth`.
pub fn end_point_error(pred: &DisplacementField, truth: &DisplacementField, margin: usize) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(shape_mismatch(pred.shape(), truth.shape()));
    }
    let (h, w) = pred.shape();
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for y in margin..h.saturating_sub(margin) {
        for x in margin..w.saturating_sub(margin) {
            if truth.is_hole(y, x) {
                continue;
            }
            let (px, py) = pred.get(y, x);
            let (tx, ty) = truth.get(y, x);
            sum += ((px - tx) as f64).hypot((py - ty) as f64);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyReport);
    }
    Ok(sum / n as f64)
}

/// Evaluation of one scene under both mask policies.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneResult {
    pub name: String,
    pub all: EvalReport,
    pub non_occluded: Option<EvalReport>,
}

/// Human-readable table, one row per scene and policy.
pub fn format_table(results: &[SceneResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:<8} {:>8} {:>8} {:>8} {:>9} {:>8} {:>10}",
        "scene", "mask", "bad1%", "bad2%", "bad5%", "max", "occl%", "pixels"
    );
    for r in results {
        let rows = std::iter::once(("all", &r.all)).chain(r.non_occluded.as_ref().map(|n| ("nonocc", n)));
        for (mask, e) in rows {
            let _ = writeln!(
                out,
                "{:<20} {:<8} {:>8.2} {:>8.2} {:>8.2} {:>9.2} {:>8.2} {:>10}",
                r.name,
                mask,
                100.0 * e.bad1,
                100.0 * e.bad2,
                100.0 * e.bad5,
                e.max_error,
                100.0 * e.occlusion_fraction,
                e.evaluated_pixels
            );
        }
    }
    out
}

/// Machine-readable records: `name bad1 bad2 bad5 max occl` per line, all
/// pixels policy, fractions in [0, 1].
pub fn format_records(results: &[SceneResult]) -> String {
    let mut out = String::new();
    for r in results {
        let e = &r.all;
        let _ = writeln!(
            out,
            "{} {:.6} {:.6} {:.6} {:.4} {:.6}",
            r.name, e.bad1, e.bad2, e.bad5, e.max_error, e.occlusion_fraction
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> ScalarMap {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        ScalarMap::new(h, w, data).unwrap()
    }

    #[test]
    fn exact_prediction() {
        let gt = map(6, 7, |y, x| (y + x) as f32 * 0.5);
        let r = bad_pixel_report(&gt.to_stereo_field(), &gt, None, MaskPolicy::All).unwrap();
        assert_eq!((r.bad1, r.bad2, r.bad5, r.max_error), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.evaluated_pixels, 42);
    }

    #[test]
    fn uniform_offset_of_three() {
        let gt = map(5, 5, |y, x| (y * 5 + x) as f32);
        let pred = DisplacementField::from_fn(5, 5, |y, x| (gt.get(y, x) + 3.0, 0.0));
        let r = bad_pixel_report(&pred, &gt, None, MaskPolicy::All).unwrap();
        assert_eq!((r.bad1, r.bad2, r.bad5), (1.0, 1.0, 0.0));
        assert_eq!(r.max_error, 3.0);
    }

    #[test]
    fn threshold_is_strict() {
        let gt = map(1, 4, |_, _| 0.0);
        let pred = DisplacementField::from_components(1, 4, &[1.0, 2.0, 5.0, 5.5], &[0.0; 4]).unwrap();
        let r = bad_pixel_report(&pred, &gt, None, MaskPolicy::All).unwrap();
        assert_eq!((r.bad1, r.bad2, r.bad5), (0.75, 0.5, 0.25));
    }

    #[test]
    fn holes_are_excluded() {
        // 4 of 10 pixels are holes; of the 6 left, 3 are off by 4.
        let gt = map(2, 5, |y, x| if x < 2 { f32::INFINITY } else { y as f32 });
        let pred = DisplacementField::from_fn(2, 5, |y, x| (y as f32 + if y == 0 && x >= 2 { 4.0 } else { 0.0 }, 0.0));
        let r = bad_pixel_report(&pred, &gt, None, MaskPolicy::All).unwrap();
        assert_eq!(r.evaluated_pixels, 6);
        assert_eq!((r.bad1, r.bad2, r.bad5), (0.5, 0.5, 0.0));
        assert_eq!(r.max_error, 4.0);
    }

    #[test]
    fn all_holes_is_empty_report() {
        let gt = map(2, 2, |_, _| f32::INFINITY);
        let err = bad_pixel_report(&DisplacementField::zeros(2, 2), &gt, None, MaskPolicy::All).unwrap_err();
        assert!(matches!(err, Error::EmptyReport));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let gt = map(2, 2, |_, _| 0.0);
        assert!(bad_pixel_report(&DisplacementField::zeros(2, 3), &gt, None, MaskPolicy::All).is_err());
        assert!(bad_pixel_report(&DisplacementField::zeros(2, 2), &gt, None, MaskPolicy::NonOccluded).is_err());
    }

    #[test]
    fn non_occluded_policy_drops_masked_pixels() {
        let gt = map(1, 4, |_, _| 0.0);
        let pred = DisplacementField::from_components(1, 4, &[0.0, 0.0, 9.0, 9.0], &[0.0; 4]).unwrap();
        let mask = OcclusionMask::new(1, 4, vec![false, false, true, false]).unwrap();
        let all = bad_pixel_report(&pred, &gt, Some(&mask), MaskPolicy::All).unwrap();
        let non = bad_pixel_report(&pred, &gt, Some(&mask), MaskPolicy::NonOccluded).unwrap();
        assert_eq!(all.bad1, 0.5);
        assert_eq!(all.occlusion_fraction, 0.25);
        assert_eq!(non.evaluated_pixels, 3);
        assert_eq!(non.bad1, 1.0 / 3.0);
    }

    #[test]
    fn consistent_constant_fields() {
        let l = DisplacementField::constant(8, 12, 3.0, 0.0);
        let r = DisplacementField::constant(8, 12, -3.0, 0.0);
        assert_eq!(occlusion_mask(&l, &r, 1.0).unwrap().count(), 0);
    }

    #[test]
    fn zero_right_field_occludes_everything() {
        let l = DisplacementField::constant(8, 12, 5.0, 0.0);
        let m = occlusion_mask(&l, &DisplacementField::zeros(8, 12), 1.0).unwrap();
        assert_eq!(m.fraction(), 1.0);
    }

    #[test]
    fn square_occludes_band_on_its_left() {
        // Foreground square in the left view at columns 40..60 moving 10 px
        // leftwards into the right view (columns 30..50). Background pixels
        // at left columns 30..40 have no partner: they land on the square in
        // the right view.
        let (h, w) = (60, 90);
        let rows = 20..40;
        let l = DisplacementField::from_fn(h, w, |y, x| {
            if rows.contains(&y) && (40..60).contains(&x) { (10.0, 0.0) } else { (0.0, 0.0) }
        });
        let r = DisplacementField::from_fn(h, w, |y, x| {
            if rows.contains(&y) && (30..50).contains(&x) { (-10.0, 0.0) } else { (0.0, 0.0) }
        });
        let m = occlusion_mask(&l, &r, 1.0).unwrap();
        for y in 0..h {
            for x in 0..w {
                let expected = rows.contains(&y) && (30..40).contains(&x);
                assert_eq!(m.is_occluded(y, x), expected, "({y}, {x})");
            }
        }
        assert_eq!(m.count(), 20 * 10);
    }

    #[test]
    fn records_and_table() {
        let gt = map(1, 4, |_, _| 0.0);
        let pred = DisplacementField::from_components(1, 4, &[0.0, 1.5, 2.5, 6.0], &[0.0; 4]).unwrap();
        let all = bad_pixel_report(&pred, &gt, None, MaskPolicy::All).unwrap();
        let res = [SceneResult { name: "toy".into(), all, non_occluded: None }];
        assert_eq!(format_records(&res), "toy 0.750000 0.500000 0.250000 6.0000 0.000000\n");
        let table = format_table(&res);
        assert_eq!(table.lines().count(), 2);
        assert!(table.contains("75.00"));
    }

    #[test]
    fn epe_of_offset() {
        let a = DisplacementField::constant(5, 5, 3.0, 4.0);
        let b = DisplacementField::zeros(5, 5);
        assert!((end_point_error(&a, &b, 1).unwrap() - 5.0).abs() < 1e-12);
        assert!(end_point_error(&a, &b, 3).is_err());
    }

    proptest! {
        #[test]
        fn bad_rates_are_monotone_and_bounded(seed in 0u64..500, holes in 0.0f64..0.5) {
            use rand::Rng;
            let mut rng = crate::rng::from_seed(seed);
            let (h, w) = (7, 9);
            let gt = map(h, w, |_, _| 0.0);
            let gt = ScalarMap::new(h, w, gt.data().iter().map(|_| if rng.random_bool(holes) { f32::INFINITY } else { rng.random_range(-8.0..8.0) }).collect()).unwrap();
            let pred = DisplacementField::from_fn(h, w, |_, _| (rng.random_range(-10.0..10.0), 0.0));
            if let Ok(r) = bad_pixel_report(&pred, &gt, None, MaskPolicy::All) {
                prop_assert!(r.bad1 >= r.bad2 && r.bad2 >= r.bad5);
                prop_assert!((0.0..=1.0).contains(&r.bad1) && r.bad5 >= 0.0);
                let flipped = gt.mirror_horizontal();
                let negated: Vec<f32> = flipped.data().iter().map(|&v| if v.is_finite() { -v } else { v }).collect();
                let gt_m = ScalarMap::new(h, w, negated).unwrap();
                let mirrored = bad_pixel_report(&pred.mirror_horizontal(), &gt_m, None, MaskPolicy::All).unwrap();
                prop_assert_eq!(r, mirrored);
            }
        }
    }
}
