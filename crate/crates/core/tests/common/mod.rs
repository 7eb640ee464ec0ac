#![allow(dead_code)]

use pyrreg::cnn::{Activation, Layer, Network, Tensor};
use pyrreg::estimator::{Estimator, EstimatorSpec, StereoMode};
use pyrreg::image::{DisplacementField, Image};
use pyrreg::training::resample_truth;
use pyrreg::rng::{self, Prng};
use rand::Rng;

/// Relative errors are taken against at least this magnitude; f32
/// backprop resolves gradients to a few 1e-8 absolute.
pub const REL_FLOOR: f64 = 1e-4;

const STEP: f64 = 1e-4;

/// Outcome of comparing backprop against central differences.
#[derive(Debug)]
pub struct GradCheck {
    pub params: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
}

/// A random network of 2 to 4 convolutions with at least 150 parameters.
pub fn random_tiny_net(seed: u64) -> Network {
    let mut r = rng::from_seed(seed);
    loop {
        let cin = r.random_range(1..=3);
        let depth = r.random_range(2..=4);
        let mut b = Network::builder(cin);
        for i in 0..depth {
            let kh = [1, 3][r.random_range(0..2)];
            let kw = [1, 3][r.random_range(0..2)];
            if i + 1 == depth {
                b = b.conv(kh, kw, r.random_range(1..=2), Activation::Linear);
            } else {
                b = b.conv(kh, kw, r.random_range(2..=6), Activation::Relu);
                if r.random_bool(0.3) {
                    b = b.dropout(0.1);
                }
            }
        }
        let mut net = b.build();
        if net.count_parameters() < 150 {
            continue;
        }
        net.init_weights(&mut r);
        for conv in net.conv_layers_mut() {
            for v in conv.bias_mut() {
                *v = r.random_range(-0.1..0.1);
            }
        }
        return net;
    }
}

struct RefLayer {
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
    relu: bool,
}

/// Naive double-precision forward pass over a flat parameter vector laid out
/// as weights then bias per convolution, weight row `(ky*kw+kx)*cin+ci`.
/// Returns `0.5 * sum(out^2)` and the on/off state of every ReLU.
fn reference_loss(layers: &[RefLayer], params: &[f64], input: &Tensor) -> (f64, Vec<bool>) {
    let (mut h, mut w) = (input.height, input.width);
    let mut x: Vec<f64> = input.data.iter().map(|&v| v as f64).collect();
    let mut pattern = Vec::new();
    let mut off = 0;
    for l in layers {
        let nw = l.kh * l.kw * l.cin * l.cout;
        let (wts, bias) = (&params[off..off + nw], &params[off + nw..off + nw + l.cout]);
        off += nw + l.cout;
        let (oh, ow) = (h + 1 - l.kh, w + 1 - l.kw);
        let mut y = vec![0.0f64; oh * ow * l.cout];
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..l.cout {
                    let mut s = bias[co];
                    for ky in 0..l.kh {
                        for kx in 0..l.kw {
                            for ci in 0..l.cin {
                                let v = x[((oy + ky) * w + ox + kx) * l.cin + ci];
                                s += v * wts[((ky * l.kw + kx) * l.cin + ci) * l.cout + co];
                            }
                        }
                    }
                    if l.relu {
                        pattern.push(s > 0.0);
                        s = s.max(0.0);
                    }
                    y[(oy * ow + ox) * l.cout + co] = s;
                }
            }
        }
        x = y;
        (h, w) = (oh, ow);
    }
    (x.iter().map(|v| 0.5 * v * v).sum(), pattern)
}

/// Checks `samples` randomly chosen parameters of `net` on a random input
/// under the loss `0.5 * sum(out^2)`, against central differences of an
/// independent f64 forward pass. Parameters whose step flips a ReLU are
/// replaced by another draw.
pub fn gradient_check(net: &Network, samples: usize, seed: u64) -> GradCheck {
    let mut r = rng::derive(seed, 1);
    let (rh, rw) = net.receptive_field();
    let (h, w) = (rh + r.random_range(0..3), rw + r.random_range(0..3));
    let cin = net.in_channels().unwrap();
    let data = (0..h * w * cin).map(|_| r.random_range(-1.0f32..1.0)).collect();
    let input = Tensor::new(h, w, cin, data).unwrap();

    let cache = net.forward_cached::<Prng>(&input, None).unwrap();
    let grads = net.backward(&cache, cache.output()).unwrap();
    let analytic: Vec<f64> = grads
        .convs
        .iter()
        .flat_map(|g| g.weights.iter().chain(&g.bias).map(|&v| v as f64))
        .collect();

    let mut layers = Vec::new();
    let mut params = Vec::new();
    for layer in net.layers() {
        if let Layer::Conv(c) = layer {
            let (kh, kw) = c.kernel();
            layers.push(RefLayer {
                kh,
                kw,
                cin: c.in_channels(),
                cout: c.out_channels(),
                relu: c.activation() == Activation::Relu,
            });
            params.extend(c.weights().iter().chain(c.bias()).map(|&v| v as f64));
        }
    }
    assert_eq!(params.len(), analytic.len());
    assert_eq!(params.len(), net.count_parameters());
    let (_, base) = reference_loss(&layers, &params, &input);

    let mut order: Vec<usize> = (0..params.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, r.random_range(0..=i));
    }
    let mut checked = 0;
    let mut skipped_kinks = 0;
    let mut max_rel_error = 0.0f64;
    for &idx in &order {
        if checked == samples {
            break;
        }
        let p = params[idx];
        params[idx] = p + STEP;
        let (fp, pp) = reference_loss(&layers, &params, &input);
        params[idx] = p - STEP;
        let (fm, pm) = reference_loss(&layers, &params, &input);
        params[idx] = p;
        if pp != base || pm != base {
            skipped_kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * STEP);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        max_rel_error = max_rel_error.max(rel);
        checked += 1;
    }
    GradCheck { params: params.len(), checked, skipped_kinks, max_rel_error }
}

/// Micro-estimator meeting the error-halving premise exactly: it answers
/// with the true residual rounded to whole pixels and clamped to `mu`.
pub struct TruthQuantizer {
    pub truth: DisplacementField,
    pub spec: EstimatorSpec,
}

impl Estimator for TruthQuantizer {
    fn spec(&self) -> EstimatorSpec {
        self.spec
    }

    fn estimate(&self, img1: &Image, img2: &Image, mode: StereoMode) -> pyrreg::Result<DisplacementField> {
        let (h, w) = img1.shape();
        self.estimate_with_prior(img1, img2, &DisplacementField::zeros(h, w), mode)
    }

    fn estimate_with_prior(
        &self,
        img1: &Image,
        _: &Image,
        prior: &DisplacementField,
        mode: StereoMode,
    ) -> pyrreg::Result<DisplacementField> {
        let t = resample_truth(&self.truth, img1.shape())?;
        let mu = self.spec.mu;
        let (h, w) = img1.shape();
        Ok(DisplacementField::from_fn(h, w, |y, x| {
            let (tx, ty) = t.get(y, x);
            let (px, py) = prior.get(y, x);
            let dx = (tx - px).round().clamp(-mu, mu);
            let dy = if mode.enabled { 0.0 } else { (ty - py).round().clamp(-mu, mu) };
            (dx, dy)
        }))
    }
}
