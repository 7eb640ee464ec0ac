use super::{shape_mismatch, DisplacementField, Image};
use crate::{Error, Result};

/// Halves the resolution with a 2x2 box average.
///
/// Odd heights or widths replicate the last row or column before averaging,
/// so the output is `ceil(h/2) x ceil(w/2)`.
pub fn downsample_half(img: &Image) -> Result<Image> {
    let (h, w) = img.shape();
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("cannot downsample a {h}x{w} image")));
    }
    let c = img.channels();
    let (oh, ow, data) = box_half(img.data(), h, w, c);
    Ok(Image::from_raw(oh, ow, c, data))
}

/// [`downsample_half`] for displacement fields. Values are averaged, not
/// rescaled; a hole anywhere in a 2x2 block makes the output a hole.
pub fn downsample_field_half(field: &DisplacementField) -> Result<DisplacementField> {
    let (h, w) = field.shape();
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("cannot downsample a {h}x{w} field")));
    }
    let (oh, ow, data) = box_half(field.data(), h, w, 2);
    Ok(DisplacementField::from_raw(oh, ow, data))
}

fn box_half(src: &[f32], h: usize, w: usize, c: usize) -> (usize, usize, Vec<f32>) {
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut out = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        let y0 = 2 * oy;
        let y1 = (y0 + 1).min(h - 1);
        for ox in 0..ow {
            let x0 = 2 * ox;
            let x1 = (x0 + 1).min(w - 1);
            for ch in 0..c {
                let s = src[(y0 * w + x0) * c + ch]
                    + src[(y0 * w + x1) * c + ch]
                    + src[(y1 * w + x0) * c + ch]
                    + src[(y1 * w + x1) * c + ch];
                out.push(0.25 * s);
            }
        }
    }
    (oh, ow, out)
}

/// Bilinear upsampling of a field onto a `target_h x target_w` grid with
/// corner-aligned sample positions.
///
/// The target must be the shape the field was downsampled from, i.e.
/// `target_h` in `{2h-1, 2h}` and likewise for the width. Values are not
/// rescaled.
pub fn upsample_double(
    field: &DisplacementField,
    target_h: usize,
    target_w: usize,
) -> Result<DisplacementField> {
    let (h, w) = field.shape();
    let ok = |t: usize, s: usize| t >= (2 * s).saturating_sub(1).max(1) && t <= 2 * s;
    if !ok(target_h, h) || !ok(target_w, w) {
        return Err(Error::invalid(format!(
            "cannot upsample {h}x{w} to {target_h}x{target_w}"
        )));
    }
    let ys = corner_aligned(h, target_h);
    let xs = corner_aligned(w, target_w);
    let mut data = Vec::with_capacity(target_h * target_w * 2);
    for &sy in &ys {
        for &sx in &xs {
            for c in 0..2 {
                data.push(bilinear(field.data(), h, w, 2, c, sy, sx));
            }
        }
    }
    Ok(DisplacementField::from_raw(target_h, target_w, data))
}

fn corner_aligned(src: usize, dst: usize) -> Vec<f32> {
    if dst == 1 || src == 1 {
        return vec![0.0; dst];
    }
    let step = (src - 1) as f64 / (dst - 1) as f64;
    (0..dst).map(|i| (i as f64 * step) as f32).collect()
}

/// Warps `img` by `d`: `out(y, x) = img(y - dy(y, x), x - dx(y, x))`,
/// bilinearly interpolated, with coordinates clamped to the border.
pub fn warp(img: &Image, d: &DisplacementField) -> Result<Image> {
    if img.shape() != d.shape() {
        return Err(shape_mismatch(img.shape(), d.shape()));
    }
    let (h, w) = img.shape();
    let c = img.channels();
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = d.get(y, x);
            let sy = y as f32 - dy;
            let sx = x as f32 - dx;
            for ch in 0..c {
                data.push(bilinear(img.data(), h, w, c, ch, sy, sx));
            }
        }
    }
    Ok(Image::from_raw(h, w, c, data))
}

/// Bilinear sample of channel `c` at fractional `(y, x)`, border-replicated.
pub fn sample_bilinear(img: &Image, y: f32, x: f32, c: usize) -> f32 {
    bilinear(img.data(), img.height(), img.width(), img.channels(), c, y, x)
}

#[inline]
pub(crate) fn bilinear(data: &[f32], h: usize, w: usize, c: usize, ch: usize, y: f32, x: f32) -> f32 {
    let y = if y.is_finite() { y.clamp(0.0, (h - 1) as f32) } else { 0.0 };
    let x = if x.is_finite() { x.clamp(0.0, (w - 1) as f32) } else { 0.0 };
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f32;
    let fx = x - x0 as f32;
    let at = |yy: usize, xx: usize| data[(yy * w + xx) * c + ch];
    let top = lerp(at(y0, x0), at(y0, x1), fx);
    let bottom = lerp(at(y1, x0), at(y1, x1), fx);
    lerp(top, bottom, fy)
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}
