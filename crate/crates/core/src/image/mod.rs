//! Dense rasters, displacement fields and the geometric primitives used by
//! the recursion.
//!
//! All buffers are row-major with interleaved channels: sample `(y, x, c)`
//! of an `H x W x C` raster lives at `(y * W + x) * C + c`.

mod blur;
mod resample;

pub use blur::{gaussian_blur, gaussian_kernel};
pub(crate) use blur::blur_planar;
pub(crate) use resample::bilinear;
pub use resample::{downsample_field_half, downsample_half, sample_bilinear, upsample_double, warp};

use crate::{Error, Result};

/// `H x W x C` floating point image. Color samples are nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "image buffer has {} samples, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image by evaluating `f(y, x, c)` for every sample.
    ///
    /// Panics on zero dimensions or non-finite values.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data).expect("from_fn produced an invalid image")
    }

    /// Internal constructor for buffers already known to be valid.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Pixel `(y, x)` as a channel slice.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Stacks the channels of `self` and `other` pixel by pixel.
    pub fn concat_channels(&self, other: &Image) -> Result<Image> {
        if self.shape() != other.shape() {
            return Err(shape_mismatch(self.shape(), other.shape()));
        }
        let c = self.channels + other.channels;
        let mut data = Vec::with_capacity(self.height * self.width * c);
        for (a, b) in self
            .data
            .chunks_exact(self.channels)
            .zip(other.data.chunks_exact(other.channels))
        {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Ok(Image::from_raw(self.height, self.width, c, data))
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Image> {
        check_crop(self.shape(), y0, x0, height, width)?;
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Ok(Image::from_raw(height, width, c, data))
    }

    /// Left-right mirror.
    pub fn mirror_horizontal(&self) -> Image {
        let c = self.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width * c) {
            for px in row.chunks_exact(c).rev() {
                data.extend_from_slice(px);
            }
        }
        Image::from_raw(self.height, self.width, c, data)
    }

    /// Applies `f` to every sample, replacing non-finite results with 0.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Image {
        let data = self
            .data
            .iter()
            .map(|&v| {
                let r = f(v);
                if r.is_finite() {
                    r
                } else {
                    0.0
                }
            })
            .collect();
        Image::from_raw(self.height, self.width, self.channels, data)
    }
}

/// `H x W` field of `(dx, dy)` displacements in pixels of its own resolution.
///
/// Fields are finite, except ground-truth fields built with
/// [`DisplacementField::with_holes`], where `+inf` marks unknown pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DisplacementField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, 2)?;
        if data.len() != height * width * 2 {
            return Err(Error::invalid(format!(
                "field buffer has {} entries, expected {height}x{width}x2",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite displacement at index {i}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Like [`new`](Self::new) but accepts `+inf` as the hole sentinel.
    pub fn with_holes(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, 2)?;
        if data.len() != height * width * 2 {
            return Err(Error::invalid(format!(
                "field buffer has {} entries, expected {height}x{width}x2",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(v.is_finite() || *v == f32::INFINITY)) {
            return Err(Error::invalid(format!("invalid displacement at index {i}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * 2);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::from_raw(height, width, vec![0.0; height * width * 2])
    }

    pub fn constant(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        let data = std::iter::repeat_n([dx, dy], height * width).flatten().collect();
        Self::from_raw(height, width, data)
    }

    /// Builds a field from separate `dx` and `dy` planes.
    pub fn from_components(height: usize, width: usize, dx: &[f32], dy: &[f32]) -> Result<Self> {
        if dx.len() != height * width || dy.len() != height * width {
            return Err(Error::invalid("component planes do not match the field shape"));
        }
        let data = dx.iter().zip(dy).flat_map(|(&a, &b)| [a, b]).collect();
        Self::new(height, width, data)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut data = Vec::with_capacity(height * width * 2);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = f(y, x);
                data.push(dx);
                data.push(dy);
            }
        }
        Self::new(height, width, data).expect("from_fn produced a non-finite field")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (f32, f32) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    #[inline]
    pub fn dx(&self, y: usize, x: usize) -> f32 {
        self.data[(y * self.width + x) * 2]
    }

    #[inline]
    pub fn dy(&self, y: usize, x: usize) -> f32 {
        self.data[(y * self.width + x) * 2 + 1]
    }

    /// The `dx` plane.
    pub fn dx_plane(&self) -> Vec<f32> {
        self.data.iter().step_by(2).copied().collect()
    }

    /// The `dy` plane.
    pub fn dy_plane(&self) -> Vec<f32> {
        self.data.iter().skip(1).step_by(2).copied().collect()
    }

    pub fn is_hole(&self, y: usize, x: usize) -> bool {
        let (dx, dy) = self.get(y, x);
        !(dx.is_finite() && dy.is_finite())
    }

    pub fn has_holes(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }

    /// Component-wise sum.
    pub fn add(&self, other: &DisplacementField) -> Result<DisplacementField> {
        if self.shape() != other.shape() {
            return Err(shape_mismatch(self.shape(), other.shape()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self::from_raw(self.height, self.width, data))
    }

    /// Component-wise difference `self - other`.
    pub fn sub(&self, other: &DisplacementField) -> Result<DisplacementField> {
        if self.shape() != other.shape() {
            return Err(shape_mismatch(self.shape(), other.shape()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self::from_raw(self.height, self.width, data))
    }

    pub fn scale(&self, factor: f32) -> DisplacementField {
        let data = self.data.iter().map(|v| v * factor).collect();
        Self::from_raw(self.height, self.width, data)
    }

    /// Clamps both components to `[-limit, limit]`.
    pub fn clamp(&self, limit: f32) -> DisplacementField {
        let data = self.data.iter().map(|v| v.clamp(-limit, limit)).collect();
        Self::from_raw(self.height, self.width, data)
    }

    /// Copy with `dy` forced to exactly zero.
    pub fn without_dy(&self) -> DisplacementField {
        let mut data = self.data.clone();
        for pair in data.chunks_exact_mut(2) {
            pair[1] = 0.0;
        }
        Self::from_raw(self.height, self.width, data)
    }

    /// Largest `|dx|` or `|dy|` over finite entries.
    pub fn max_abs(&self) -> f32 {
        self.data
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Largest absolute forward difference of either component along either
    /// axis; the discrete slope of the field.
    pub fn max_gradient(&self) -> f32 {
        let mut g = 0.0f32;
        for y in 0..self.height {
            for x in 0..self.width {
                let (dx, dy) = self.get(y, x);
                if x + 1 < self.width {
                    let (ex, ey) = self.get(y, x + 1);
                    g = g.max((ex - dx).abs()).max((ey - dy).abs());
                }
                if y + 1 < self.height {
                    let (ex, ey) = self.get(y + 1, x);
                    g = g.max((ex - dx).abs()).max((ey - dy).abs());
                }
            }
        }
        g
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<DisplacementField> {
        check_crop(self.shape(), y0, x0, height, width)?;
        let mut data = Vec::with_capacity(height * width * 2);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * 2;
            data.extend_from_slice(&self.data[start..start + width * 2]);
        }
        Ok(Self::from_raw(height, width, data))
    }

    /// Left-right mirror; `dx` changes sign so the field still describes the
    /// mirrored image pair.
    pub fn mirror_horizontal(&self) -> DisplacementField {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width * 2) {
            for px in row.chunks_exact(2).rev() {
                data.push(-px[0]);
                data.push(px[1]);
            }
        }
        Self::from_raw(self.height, self.width, data)
    }
}

/// Single-channel float grid that may contain `+inf` holes, e.g. a ground
/// truth disparity map.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ScalarMap {
    /// Rejects NaN; infinities are kept as holes.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, 1)?;
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "map buffer has {} entries, expected {height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| v.is_nan()) {
            return Err(Error::invalid(format!("NaN at index {i}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn is_hole(&self, y: usize, x: usize) -> bool {
        !self.get(y, x).is_finite()
    }

    /// `dx` plane of a field.
    pub fn from_dx(field: &DisplacementField) -> Self {
        Self {
            height: field.height(),
            width: field.width(),
            data: field.dx_plane(),
        }
    }

    /// `dy` plane of a field.
    pub fn from_dy(field: &DisplacementField) -> Self {
        Self {
            height: field.height(),
            width: field.width(),
            data: field.dy_plane(),
        }
    }

    /// Horizontal disparity field (`dy = 0`); holes stay holes in both
    /// components.
    pub fn to_stereo_field(&self) -> DisplacementField {
        let data = self
            .data
            .iter()
            .flat_map(|&d| {
                if d.is_finite() {
                    [d, 0.0]
                } else {
                    [f32::INFINITY, f32::INFINITY]
                }
            })
            .collect();
        DisplacementField::from_raw(self.height, self.width, data)
    }

    pub fn mirror_horizontal(&self) -> ScalarMap {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        Self {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::invalid(format!(
            "dimensions must be positive, got {height}x{width}x{channels}"
        )));
    }
    Ok(())
}

fn check_crop(shape: (usize, usize), y0: usize, x0: usize, height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || y0 + height > shape.0 || x0 + width > shape.1 {
        return Err(Error::invalid(format!(
            "crop {height}x{width} at ({y0}, {x0}) does not fit in {}x{}",
            shape.0, shape.1
        )));
    }
    Ok(())
}

pub(crate) fn shape_mismatch(a: (usize, usize), b: (usize, usize)) -> Error {
    Error::invalid(format!("shape mismatch: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}
