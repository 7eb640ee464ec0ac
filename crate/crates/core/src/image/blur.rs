use super::DisplacementField;
use crate::{Error, Result};

/// Normalized discrete Gaussian with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i32;
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let raw: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / s2).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / sum) as f32).collect()
}

/// Separable Gaussian blur of each component with replicate borders.
/// `sigma = 0` returns the input unchanged.
pub fn gaussian_blur(field: &DisplacementField, sigma: f32) -> Result<DisplacementField> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::invalid(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(field.clone());
    }
    let (h, w) = field.shape();
    let data = blur_planar(field.data(), h, w, 2, sigma);
    Ok(DisplacementField::from_raw(h, w, data))
}

/// Blurs an interleaved `h x w x c` buffer.
pub(crate) fn blur_planar(src: &[f32], h: usize, w: usize, c: usize, sigma: f32) -> Vec<f32> {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (k, wgt) in kernel.iter().enumerate() {
                    let xx = clamp(x as isize + k as isize - r, w);
                    acc += wgt * src[(y * w + xx) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (k, wgt) in kernel.iter().enumerate() {
                    let yy = clamp(y as isize + k as isize - r, h);
                    acc += wgt * tmp[(yy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigma_zero_is_identity() {
        let f = DisplacementField::from_fn(5, 6, |y, x| (y as f32, -(x as f32)));
        assert_eq!(gaussian_blur(&f, 0.0).unwrap(), f);
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(gaussian_blur(&DisplacementField::zeros(2, 2), -1.0).is_err());
        assert!(gaussian_blur(&DisplacementField::zeros(2, 2), f32::NAN).is_err());
    }

    #[test]
    fn constant_preserved() {
        let f = DisplacementField::constant(9, 7, 2.5, -1.5);
        let b = gaussian_blur(&f, 1.7).unwrap();
        for (a, e) in b.data().iter().zip(f.data()) {
            assert!((a - e).abs() < 1e-5);
        }
    }

    #[test]
    fn impulse_center_is_kernel_center_squared() {
        // 2-D kernel = outer product, so the center weight is k[r]^2.
        let n = 15;
        let f = DisplacementField::from_fn(n, n, |y, x| if (y, x) == (7, 7) { (1.0, 0.0) } else { (0.0, 0.0) });
        let b = gaussian_blur(&f, 1.0).unwrap();
        let sigma = 1.0f64;
        let w: Vec<f64> = (-3..=3).map(|k: i32| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let sum: f64 = w.iter().sum();
        let c = w[3] / sum;
        assert!((b.dx(7, 7) as f64 - c * c).abs() < 1e-6);
        assert_eq!(gaussian_kernel(1.0).len(), 7);
    }

    proptest! {
        #[test]
        fn blur_preserves_mean_away_from_border(seed in 0u64..200, sigma in 0.3f32..2.0) {
            use rand::Rng;
            let mut rng = crate::rng::from_seed(seed);
            let r = (3.0 * sigma).ceil() as usize;
            let n = 2 * r + 12;
            // Random interior, constant band of width r at the border so that
            // replicate padding adds and removes the same mass.
            let f = DisplacementField::from_fn(n, n, |y, x| {
                if y < r || x < r || y >= n - r || x >= n - r {
                    (0.25, -0.5)
                } else {
                    (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                }
            });
            let b = gaussian_blur(&f, sigma).unwrap();
            for c in 0..2 {
                let m0: f64 = f.data().iter().skip(c).step_by(2).map(|&v| v as f64).sum::<f64>() / (n * n) as f64;
                let m1: f64 = b.data().iter().skip(c).step_by(2).map(|&v| v as f64).sum::<f64>() / (n * n) as f64;
                prop_assert!((m0 - m1).abs() < 1e-6, "{} vs {}", m0, m1);
            }
        }
    }
}
