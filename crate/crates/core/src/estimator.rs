//! Small-displacement estimators.
//!
//! An estimator recovers displacements of at most `mu` pixels between two
//! equally sized images, following the convention `img1(x) ~ img2(x - d(x))`.
//! The recursion in [`crate::pyramid`] only relies on this contract, so any
//! implementation can be plugged in.

use rayon::prelude::*;

use crate::cnn::{Network, Tensor};
use crate::image::{shape_mismatch, DisplacementField, Image};
use crate::{Error, Result};

/// Contract parameters of an estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorSpec {
    /// Largest displacement the estimator detects, in pixels.
    pub mu: f32,
    /// Guaranteed maximum error, at most `mu / 2`.
    pub error_bound: f32,
    /// Smallest input the estimator accepts.
    pub min_height: usize,
    pub min_width: usize,
}

impl EstimatorSpec {
    pub fn new(mu: f32, error_bound: f32, min_height: usize, min_width: usize) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid(format!("mu must be positive, got {mu}")));
        }
        if !(error_bound > 0.0 && error_bound <= mu / 2.0) {
            return Err(Error::invalid(format!(
                "error bound {error_bound} must lie in (0, mu/2 = {}]",
                mu / 2.0
            )));
        }
        if min_height == 0 || min_width == 0 {
            return Err(Error::invalid("minimum input size must be at least 1x1"));
        }
        Ok(Self {
            mu,
            error_bound,
            min_height,
            min_width,
        })
    }

    /// Whether an `h x w` input is large enough.
    pub fn accepts(&self, h: usize, w: usize) -> bool {
        h >= self.min_height && w >= self.min_width
    }
}

/// Restricts estimation to horizontal displacements (rectified stereo).
/// When enabled every produced field has `dy == 0` exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StereoMode {
    pub enabled: bool,
}

impl StereoMode {
    pub const ON: StereoMode = StereoMode { enabled: true };
    pub const OFF: StereoMode = StereoMode { enabled: false };
}

/// A small-displacement estimator.
pub trait Estimator: Send + Sync {
    fn spec(&self) -> EstimatorSpec;

    /// Estimates the displacement from `img2` to `img1`; magnitudes are
    /// bounded by `spec().mu`.
    fn estimate(&self, img1: &Image, img2: &Image, mode: StereoMode) -> Result<DisplacementField>;

    /// Called by the recursion with the coarse field `prior` that
    /// `img2_warped` was warped by. The default ignores it.
    fn estimate_with_prior(
        &self,
        img1: &Image,
        img2_warped: &Image,
        prior: &DisplacementField,
        mode: StereoMode,
    ) -> Result<DisplacementField> {
        let _ = prior;
        self.estimate(img1, img2_warped, mode)
    }
}

fn check_pair(spec: &EstimatorSpec, img1: &Image, img2: &Image) -> Result<()> {
    if img1.shape() != img2.shape() {
        return Err(shape_mismatch(img1.shape(), img2.shape()));
    }
    if img1.channels() != img2.channels() {
        return Err(Error::invalid(format!(
            "channel mismatch: {} vs {}",
            img1.channels(),
            img2.channels()
        )));
    }
    let (h, w) = img1.shape();
    if !spec.accepts(h, w) {
        return Err(Error::invalid(format!(
            "{h}x{w} input is below the estimator minimum {}x{}",
            spec.min_height, spec.min_width
        )));
    }
    Ok(())
}

/// Exhaustive integer block matching: per pixel, the offset in
/// `[-mu, mu]^2` minimizing the sum of squared differences over a
/// `(2r+1)^2` replicate-padded patch.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatchOracle {
    mu: u32,
    patch_radius: usize,
    min_size: usize,
}

impl BlockMatchOracle {
    /// Minimum input size defaults to `2 (r + mu) + 1`, the smallest image
    /// that holds one patch together with its full search range.
    pub fn new(mu: u32, patch_radius: usize) -> Result<Self> {
        if mu == 0 {
            return Err(Error::invalid("oracle mu must be at least 1"));
        }
        if patch_radius == 0 {
            return Err(Error::invalid("patch radius must be at least 1"));
        }
        Ok(Self {
            mu,
            patch_radius,
            min_size: 2 * (patch_radius + mu as usize) + 1,
        })
    }

    /// Overrides the minimum (square) input size.
    pub fn with_min_size(mut self, min_size: usize) -> Self {
        self.min_size = min_size.max(1);
        self
    }

    pub fn mu(&self) -> u32 {
        self.mu
    }

    pub fn patch_radius(&self) -> usize {
        self.patch_radius
    }
}

impl Estimator for BlockMatchOracle {
    fn spec(&self) -> EstimatorSpec {
        EstimatorSpec {
            mu: self.mu as f32,
            // integer quantization
            error_bound: 0.5,
            min_height: self.min_size,
            min_width: self.min_size,
        }
    }

    fn estimate(&self, img1: &Image, img2: &Image, mode: StereoMode) -> Result<DisplacementField> {
        check_pair(&self.spec(), img1, img2)?;
        Ok(match_blocks(img1, img2, self.mu, self.patch_radius, mode))
    }
}

/// Free-function form of [`BlockMatchOracle`], without a minimum size.
pub fn block_match_oracle(
    img1: &Image,
    img2: &Image,
    mu: u32,
    patch_radius: usize,
    mode: StereoMode,
) -> Result<DisplacementField> {
    let oracle = BlockMatchOracle::new(mu, patch_radius)?.with_min_size(1);
    oracle.estimate(img1, img2, mode)
}

/// Candidate offsets in tie-break order: smallest squared length, then
/// smallest `dx`, then smallest `dy`.
fn candidate_offsets(mu: i32, mode: StereoMode) -> Vec<(i32, i32)> {
    let dy_range = if mode.enabled { 0..=0 } else { -mu..=mu };
    let mut offs: Vec<(i32, i32)> = dy_range
        .flat_map(|dy| (-mu..=mu).map(move |dx| (dx, dy)))
        .collect();
    offs.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dx, dy));
    offs
}

fn match_blocks(img1: &Image, img2: &Image, mu: u32, r: usize, mode: StereoMode) -> DisplacementField {
    let (h, w) = img1.shape();
    let c = img1.channels();
    let offsets = candidate_offsets(mu as i32, mode);
    let ri = r as isize;
    let (eh, ew) = (h + 2 * r, w + 2 * r);
    let clampy = |v: isize| v.clamp(0, h as isize - 1) as usize;
    let clampx = |v: isize| v.clamp(0, w as isize - 1) as usize;

    let costs: Vec<Vec<f32>> = offsets
        .par_iter()
        .map(|&(ox, oy)| {
            // Squared differences on the padded domain [-r, h+r) x [-r, w+r).
            let mut diff = vec![0.0f32; eh * ew];
            for ey in 0..eh {
                let qy = ey as isize - ri;
                let y1 = clampy(qy);
                let y2 = clampy(qy - oy as isize);
                for ex in 0..ew {
                    let qx = ex as isize - ri;
                    let a = img1.pixel(y1, clampx(qx));
                    let b = img2.pixel(y2, clampx(qx - ox as isize));
                    let mut s = 0.0f32;
                    for k in 0..c {
                        let d = a[k] - b[k];
                        s += d * d;
                    }
                    diff[ey * ew + ex] = s;
                }
            }
            // Horizontal then vertical window sums.
            let mut horiz = vec![0.0f32; eh * w];
            for ey in 0..eh {
                let row = &diff[ey * ew..(ey + 1) * ew];
                for x in 0..w {
                    horiz[ey * w + x] = row[x..x + 2 * r + 1].iter().sum();
                }
            }
            let mut cost = vec![0.0f32; h * w];
            for y in 0..h {
                for x in 0..w {
                    let mut s = 0.0f32;
                    for ey in y..y + 2 * r + 1 {
                        s += horiz[ey * w + x];
                    }
                    cost[y * w + x] = s;
                }
            }
            cost
        })
        .collect();

    let mut data = Vec::with_capacity(h * w * 2);
    for p in 0..h * w {
        let mut best = 0;
        for (i, cost) in costs.iter().enumerate().skip(1) {
            if cost[p] < costs[best][p] {
                best = i;
            }
        }
        let (dx, dy) = offsets[best];
        data.push(dx as f32);
        data.push(dy as f32);
    }
    DisplacementField::from_raw(h, w, data)
}

/// Estimator backed by a fully convolutional network.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnEstimator {
    network: Network,
    mu: f32,
}

impl CnnEstimator {
    pub fn new(network: Network, mu: f32) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid(format!("mu must be positive, got {mu}")));
        }
        if network.in_channels().is_none() {
            return Err(Error::invalid("network has no convolutions"));
        }
        Ok(Self { network, mu })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn into_network(self) -> Network {
        self.network
    }

    pub fn mu(&self) -> f32 {
        self.mu
    }
}

impl Estimator for CnnEstimator {
    fn spec(&self) -> EstimatorSpec {
        let (min_height, min_width) = self.network.receptive_field();
        EstimatorSpec {
            mu: self.mu,
            error_bound: self.mu / 2.0,
            min_height,
            min_width,
        }
    }

    fn estimate(&self, img1: &Image, img2: &Image, mode: StereoMode) -> Result<DisplacementField> {
        check_pair(&self.spec(), img1, img2)?;
        cnn_estimate(&self.network, img1, img2, mode, self.mu)
    }
}

/// Output rows evaluated per band, bounding im2col memory on large inputs.
const BAND_PIXELS: usize = 1 << 14;

/// Runs `net` on the channel-wise concatenation of the two images, padded so
/// the output has the input's spatial size, and clamps to `[-mu, mu]`.
///
/// In stereo mode the first output channel is `dx` and `dy` is zero;
/// otherwise the network must produce two channels `(dx, dy)`.
pub fn cnn_estimate(
    net: &Network,
    img1: &Image,
    img2: &Image,
    mode: StereoMode,
    mu: f32,
) -> Result<DisplacementField> {
    if img1.shape() != img2.shape() {
        return Err(shape_mismatch(img1.shape(), img2.shape()));
    }
    let net_in = net.in_channels().ok_or_else(|| Error::invalid("network has no convolutions"))?;
    if net_in != img1.channels() + img2.channels() {
        return Err(Error::invalid(format!(
            "network takes {net_in} channels but the image pair has {}",
            img1.channels() + img2.channels()
        )));
    }
    let net_out = net.out_channels().unwrap_or(0);
    if !mode.enabled && net_out < 2 {
        return Err(Error::invalid("2-D estimation needs a network with two output channels"));
    }
    let (h, w) = img1.shape();
    let (top, bottom, left, right) = net.padding();
    let (mh, _) = net.margins();
    let padded = Tensor::from_image(&img1.concat_channels(img2)?).pad_replicate(top, bottom, left, right);

    let band = (BAND_PIXELS / w).max(1);
    let mut data = Vec::with_capacity(h * w * 2);
    let mut y0 = 0;
    while y0 < h {
        let y1 = (y0 + band).min(h);
        let out = net.forward(&padded.rows(y0, y1 + mh))?;
        debug_assert_eq!((out.height, out.width), (y1 - y0, w));
        for px in out.data.chunks_exact(out.channels) {
            let dx = sanitize(px[0], mu);
            let dy = if mode.enabled { 0.0 } else { sanitize(px[1], mu) };
            data.push(dx);
            data.push(dy);
        }
        y0 = y1;
    }
    Ok(DisplacementField::from_raw(h, w, data))
}

fn sanitize(v: f32, mu: f32) -> f32 {
    if v.is_finite() {
        v.clamp(-mu, mu)
    } else {
        0.0
    }
}
