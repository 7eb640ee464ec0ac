use crate::image::{Image, ScalarMap};

/// False-color ramp stops, low to high. Red, green and luminance all
/// increase monotonically; the lowest stop is distinct from the black used
/// for holes.
pub const RAMP: [[f32; 3]; 5] = [
    [0.05, 0.03, 0.30],
    [0.35, 0.10, 0.55],
    [0.75, 0.22, 0.40],
    [0.97, 0.55, 0.15],
    [1.00, 0.95, 0.60],
];

/// Maps disparities to an RGB image: 0 and below at the first stop,
/// `range` and above at the last, linear between stops. Holes are black.
/// `range = None` uses the 99th percentile of the finite values.
pub fn render_disparity(map: &ScalarMap, range: Option<f32>) -> Image {
    let range = range
        .filter(|r| r.is_finite() && *r > 0.0)
        .unwrap_or_else(|| auto_range(map.data()));
    let mut data = Vec::with_capacity(map.data().len() * 3);
    for &d in map.data() {
        if d.is_finite() {
            data.extend_from_slice(&ramp((d / range).clamp(0.0, 1.0)));
        } else {
            data.extend_from_slice(&[0.0; 3]);
        }
    }
    Image::from_raw(map.height(), map.width(), 3, data)
}

fn auto_range(values: &[f32]) -> f32 {
    let mut finite: Vec<f32> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return 1.0;
    }
    finite.sort_by(f32::total_cmp);
    let idx = ((finite.len() - 1) as f32 * 0.99).round() as usize;
    let r = finite[idx];
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

fn ramp(t: f32) -> [f32; 3] {
    let pos = t * (RAMP.len() - 1) as f32;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - i as f32;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * f)
}
