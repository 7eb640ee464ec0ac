use rayon::prelude::*;

use super::gemm::{gemm, Mat};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Output pixels processed per im2col block. Fixed so that reductions run in
/// the same order regardless of thread count.
const BLOCK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// Valid (unpadded) 2-D convolution with stride 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    kernel_h: usize,
    kernel_w: usize,
    in_channels: usize,
    out_channels: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
    activation: Activation,
}

/// Parameter gradients of one convolution, laid out like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrad {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    /// Zero-initialized layer.
    pub fn new(
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
        activation: Activation,
    ) -> Result<Self> {
        if kernel_h == 0 || kernel_w == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid("convolution dimensions must be positive"));
        }
        Ok(Self {
            kernel_h,
            kernel_w,
            in_channels,
            out_channels,
            weights: vec![0.0; kernel_h * kernel_w * in_channels * out_channels],
            bias: vec![0.0; out_channels],
            activation,
        })
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.kernel_h, self.kernel_w)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }

    /// Spatial output size for an `h x w` input, if the kernel fits.
    pub fn output_shape(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if h >= self.kernel_h && w >= self.kernel_w {
            Some((h - self.kernel_h + 1, w - self.kernel_w + 1))
        } else {
            None
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize)> {
        if input.channels != self.in_channels {
            return Err(Error::invalid(format!(
                "layer expects {} input channels, got {}",
                self.in_channels, input.channels
            )));
        }
        self.output_shape(input.height, input.width).ok_or_else(|| {
            Error::invalid(format!(
                "{}x{} input is smaller than the {}x{} kernel",
                input.height, input.width, self.kernel_h, self.kernel_w
            ))
        })
    }

    /// Copies the receptive fields of output pixels `p0..p1` into `cols`,
    /// one row of `patch_len` values per pixel.
    fn im2col(&self, input: &Tensor, out_w: usize, p0: usize, p1: usize, cols: &mut [f32]) {
        let k = self.patch_len();
        let span = self.kernel_w * self.in_channels;
        for p in p0..p1 {
            let (y, x) = (p / out_w, p % out_w);
            let row = &mut cols[(p - p0) * k..(p - p0 + 1) * k];
            for ky in 0..self.kernel_h {
                let src = ((y + ky) * input.width + x) * self.in_channels;
                row[ky * span..(ky + 1) * span].copy_from_slice(&input.data[src..src + span]);
            }
        }
    }

    /// Forward pass including the activation.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (oh, ow) = self.check_input(input)?;
        let cout = self.out_channels;
        let k = self.patch_len();
        let mut out = Tensor::zeros(oh, ow, cout);
        out.data
            .par_chunks_mut(BLOCK * cout)
            .enumerate()
            .for_each(|(b, chunk)| {
                let p0 = b * BLOCK;
                let n = chunk.len() / cout;
                let mut cols = vec![0.0f32; n * k];
                self.im2col(input, ow, p0, p0 + n, &mut cols);
                for px in chunk.chunks_exact_mut(cout) {
                    px.copy_from_slice(&self.bias);
                }
                gemm(n, k, cout, Mat::new(&cols, k), Mat::new(&self.weights, cout), 1.0, chunk);
                if self.activation == Activation::Relu {
                    for v in chunk.iter_mut() {
                        *v = v.max(0.0);
                    }
                }
            });
        Ok(out)
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the activated output).
    ///
    /// `input` and `output` are the tensors seen and produced by the matching
    /// forward call. Returns parameter gradients and the input gradient.
    pub fn backward(&self, input: &Tensor, output: &Tensor, grad_out: &Tensor) -> Result<(ConvGrad, Tensor)> {
        let (oh, ow) = self.check_input(input)?;
        let cout = self.out_channels;
        if (output.height, output.width, output.channels) != (oh, ow, cout)
            || (grad_out.height, grad_out.width, grad_out.channels) != (oh, ow, cout)
        {
            return Err(Error::invalid("gradient shape does not match the layer output"));
        }
        let k = self.patch_len();
        let dz: Vec<f32> = match self.activation {
            Activation::Linear => grad_out.data.clone(),
            Activation::Relu => grad_out
                .data
                .iter()
                .zip(&output.data)
                .map(|(&g, &o)| if o > 0.0 { g } else { 0.0 })
                .collect(),
        };

        struct Partial {
            dw: Vec<f32>,
            db: Vec<f32>,
            dcols: Vec<f32>,
        }
        let partials: Vec<Partial> = dz
            .par_chunks(BLOCK * cout)
            .enumerate()
            .map(|(b, dz_chunk)| {
                let p0 = b * BLOCK;
                let n = dz_chunk.len() / cout;
                let mut cols = vec![0.0f32; n * k];
                self.im2col(input, ow, p0, p0 + n, &mut cols);
                let mut dw = vec![0.0f32; k * cout];
                gemm(k, n, cout, Mat::t(&cols, k), Mat::new(dz_chunk, cout), 0.0, &mut dw);
                let mut db = vec![0.0f32; cout];
                for px in dz_chunk.chunks_exact(cout) {
                    for (d, g) in db.iter_mut().zip(px) {
                        *d += g;
                    }
                }
                let mut dcols = vec![0.0f32; n * k];
                gemm(n, cout, k, Mat::new(dz_chunk, cout), Mat::t(&self.weights, cout), 0.0, &mut dcols);
                Partial { dw, db, dcols }
            })
            .collect();

        let mut grad = ConvGrad {
            weights: vec![0.0; k * cout],
            bias: vec![0.0; cout],
        };
        let mut grad_in = Tensor::zeros(input.height, input.width, input.channels);
        let span = self.kernel_w * self.in_channels;
        for (b, part) in partials.iter().enumerate() {
            for (g, d) in grad.weights.iter_mut().zip(&part.dw) {
                *g += d;
            }
            for (g, d) in grad.bias.iter_mut().zip(&part.db) {
                *g += d;
            }
            let p0 = b * BLOCK;
            for (i, row) in part.dcols.chunks_exact(k).enumerate() {
                let p = p0 + i;
                let (y, x) = (p / ow, p % ow);
                for ky in 0..self.kernel_h {
                    let dst = ((y + ky) * input.width + x) * self.in_channels;
                    for (g, d) in grad_in.data[dst..dst + span]
                        .iter_mut()
                        .zip(&row[ky * span..(ky + 1) * span])
                    {
                        *g += d;
                    }
                }
            }
        }
        Ok((grad, grad_in))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution.
    fn naive_forward(layer: &ConvLayer, input: &Tensor) -> Tensor {
        let (kh, kw) = layer.kernel();
        let (oh, ow) = layer.output_shape(input.height, input.width).unwrap();
        let cout = layer.out_channels();
        let cin = layer.in_channels();
        let mut out = Tensor::zeros(oh, ow, cout);
        for y in 0..oh {
            for x in 0..ow {
                for co in 0..cout {
                    let mut s = layer.bias()[co];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for ci in 0..cin {
                                let wi = ((ky * kw + kx) * cin + ci) * cout + co;
                                s += layer.weights()[wi] * input.get(y + ky, x + kx, ci);
                            }
                        }
                    }
                    if layer.activation() == Activation::Relu {
                        s = s.max(0.0);
                    }
                    out.data[(y * ow + x) * cout + co] = s;
                }
            }
        }
        out
    }

    fn filled_layer(kh: usize, kw: usize, cin: usize, cout: usize) -> ConvLayer {
        let mut l = ConvLayer::new(kh, kw, cin, cout, Activation::Relu).unwrap();
        for (i, w) in l.weights_mut().iter_mut().enumerate() {
            *w = ((i * 37 % 17) as f32 - 8.0) / 10.0;
        }
        for (i, b) in l.bias_mut().iter_mut().enumerate() {
            *b = (i as f32 - 1.0) * 0.1;
        }
        l
    }

    #[test]
    fn matches_naive_convolution() {
        let layer = filled_layer(3, 2, 3, 4);
        // Large enough to span several im2col blocks.
        let (h, w) = (30, 41);
        let data = (0..h * w * 3).map(|i| ((i * 13 % 29) as f32) / 29.0 - 0.5).collect();
        let input = Tensor::new(h, w, 3, data).unwrap();
        let fast = layer.forward(&input).unwrap();
        let slow = naive_forward(&layer, &input);
        assert_eq!((fast.height, fast.width, fast.channels), (28, 40, 4));
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_underflow() {
        let layer = filled_layer(3, 3, 2, 1);
        assert!(layer.forward(&Tensor::zeros(5, 5, 3)).is_err());
        assert!(layer.forward(&Tensor::zeros(2, 5, 2)).is_err());
    }

    #[test]
    fn linear_single_layer_gradient_closed_form() {
        // 1x1 conv, one input and one output channel: pred = w*x + b.
        // For loss sum (pred - t)^2, dL/dw = sum 2 (pred - t) x.
        let mut layer = ConvLayer::new(1, 1, 1, 1, Activation::Linear).unwrap();
        layer.weights_mut()[0] = 0.5;
        layer.bias_mut()[0] = 0.25;
        let x = Tensor::new(1, 3, 1, vec![1.0, -2.0, 3.0]).unwrap();
        let t = [0.0, 1.0, 2.0];
        let out = layer.forward(&x).unwrap();
        let g: Vec<f32> = out.data.iter().zip(&t).map(|(p, t)| 2.0 * (p - t)).collect();
        let grad_out = Tensor::new(1, 3, 1, g.clone()).unwrap();
        let (grad, grad_in) = layer.backward(&x, &out, &grad_out).unwrap();
        let expect_w: f32 = g.iter().zip(&x.data).map(|(g, x)| g * x).sum();
        let expect_b: f32 = g.iter().sum();
        assert!((grad.weights[0] - expect_w).abs() < 1e-6);
        assert!((grad.bias[0] - expect_b).abs() < 1e-6);
        for (gi, gg) in grad_in.data.iter().zip(&g) {
            assert!((gi - gg * 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let layer = filled_layer(3, 3, 2, 3);
        let input = Tensor::new(5, 6, 2, (0..60).map(|i| i as f32 / 60.0).collect()).unwrap();
        let out = layer.forward(&input).unwrap();
        let zero = Tensor::zeros(out.height, out.width, out.channels);
        let (grad, grad_in) = layer.backward(&input, &out, &zero).unwrap();
        assert!(grad.weights.iter().chain(&grad.bias).chain(&grad_in.data).all(|&v| v == 0.0));
    }
}
