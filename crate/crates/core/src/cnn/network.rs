use rand::Rng;

use super::layer::{Activation, ConvGrad, ConvLayer};
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    /// Inverted dropout with the given drop rate.
    Dropout(f32),
}

/// Ordered stack of convolutions and dropout markers.
///
/// Inference and training differ only in dropout: [`Network::forward`] treats
/// dropout as identity, [`Network::forward_cached`] applies it when given a
/// random source.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Activations recorded by [`Network::forward_cached`], consumed by
/// [`Network::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `activations[i]` is the input of layer `i`; the last entry is the
    /// network output.
    activations: Vec<Tensor>,
    /// Per dropout layer: the multiplier applied to each value.
    masks: Vec<Option<Vec<f32>>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("cache holds at least the input")
    }

    /// The input followed by the output of every layer.
    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }
}

/// Gradients for every convolution (in layer order) and for the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub convs: Vec<ConvGrad>,
    pub input: Tensor,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            convs: net
                .conv_layers()
                .map(|l| ConvGrad {
                    weights: vec![0.0; l.weights().len()],
                    bias: vec![0.0; l.bias().len()],
                })
                .collect(),
            input: Tensor::zeros(0, 0, 0),
        }
    }

    /// Adds the parameter gradients of `other`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

/// One row of a layer table such as the one printed by `inspect`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSummary {
    /// 0 is the input row; layers count from 1.
    pub index: usize,
    pub kind: &'static str,
    pub config: String,
    pub output: (usize, usize, usize),
    pub params: usize,
    pub activation: &'static str,
}

pub struct NetworkBuilder {
    channels: usize,
    layers: Vec<Layer>,
}

impl NetworkBuilder {
    pub fn conv(mut self, kh: usize, kw: usize, out: usize, activation: Activation) -> Self {
        let layer = ConvLayer::new(kh, kw, self.channels, out, activation).expect("positive layer dimensions");
        self.channels = out;
        self.layers.push(Layer::Conv(layer));
        self
    }

    pub fn dropout(mut self, rate: f32) -> Self {
        self.layers.push(Layer::Dropout(rate));
        self
    }

    pub fn build(self) -> Network {
        Network::new(self.layers).expect("builder chains channels consistently")
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let mut channels = None;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    if let Some(prev) = channels {
                        if prev != c.in_channels() {
                            return Err(Error::invalid(format!(
                                "layer {i} expects {} channels but receives {prev}",
                                c.in_channels()
                            )));
                        }
                    }
                    channels = Some(c.out_channels());
                }
                Layer::Dropout(p) => {
                    if !(0.0..1.0).contains(p) {
                        return Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")));
                    }
                }
            }
        }
        Ok(Self { layers })
    }

    pub fn builder(in_channels: usize) -> NetworkBuilder {
        NetworkBuilder {
            channels: in_channels,
            layers: Vec::new(),
        }
    }

    /// The 19x15-window stereo network: 6 input channels (two RGB images),
    /// one output channel. Weights are zero.
    pub fn table1() -> Self {
        use Activation::{Linear, Relu};
        Self::builder(6)
            .conv(3, 3, 12, Relu)
            .conv(3, 3, 24, Relu)
            .conv(3, 3, 32, Relu)
            .dropout(0.1)
            .conv(3, 3, 46, Relu)
            .conv(3, 3, 72, Relu)
            .dropout(0.1)
            .conv(1, 3, 100, Relu)
            .conv(3, 3, 200, Relu)
            .conv(1, 1, 200, Relu)
            .conv(3, 3, 128, Relu)
            .conv(1, 3, 64, Relu)
            .conv(1, 1, 32, Relu)
            .conv(1, 1, 1, Linear)
            .build()
    }

    /// A reduced network in the same layer vocabulary, small enough to train
    /// on a desktop CPU in minutes. Receptive field 9 x 13.
    pub fn compact(in_channels: usize, out_channels: usize) -> Self {
        use Activation::{Linear, Relu};
        Self::builder(in_channels)
            .conv(3, 3, 16, Relu)
            .conv(3, 3, 24, Relu)
            .conv(1, 3, 32, Relu)
            .conv(3, 3, 40, Relu)
            .dropout(0.05)
            .conv(1, 3, 48, Relu)
            .conv(3, 3, 48, Relu)
            .conv(1, 1, 32, Relu)
            .conv(1, 1, out_channels, Linear)
            .build()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            Layer::Dropout(_) => None,
        })
    }

    pub fn conv_layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            Layer::Dropout(_) => None,
        })
    }

    pub fn in_channels(&self) -> Option<usize> {
        self.conv_layers().next().map(|c| c.in_channels())
    }

    pub fn out_channels(&self) -> Option<usize> {
        self.conv_layers().last().map(|c| c.out_channels())
    }

    pub fn count_parameters(&self) -> usize {
        self.conv_layers().map(|c| c.param_count()).sum()
    }

    /// Total `(rows, columns)` lost by the valid convolutions.
    pub fn margins(&self) -> (usize, usize) {
        self.conv_layers().fold((0, 0), |(mh, mw), c| {
            let (kh, kw) = c.kernel();
            (mh + kh - 1, mw + kw - 1)
        })
    }

    /// Input window that produces a single output pixel.
    pub fn receptive_field(&self) -> (usize, usize) {
        let (mh, mw) = self.margins();
        (mh + 1, mw + 1)
    }

    /// Replicate padding `(top, bottom, left, right)` that keeps the output
    /// the size of the input.
    pub fn padding(&self) -> (usize, usize, usize, usize) {
        let (mh, mw) = self.margins();
        (mh / 2, mh - mh / 2, mw / 2, mw - mw / 2)
    }

    /// Per-layer output shapes and parameter counts for an `h x w` input.
    pub fn summary(&self, h: usize, w: usize) -> Result<Vec<LayerSummary>> {
        let c0 = self.in_channels().ok_or_else(|| Error::invalid("network has no convolutions"))?;
        let mut rows = vec![LayerSummary {
            index: 0,
            kind: "Input",
            config: "-".into(),
            output: (h, w, c0),
            params: 0,
            activation: "-",
        }];
        let (mut h, mut w, mut c) = (h, w, c0);
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(conv) => {
                    let (oh, ow) = conv.output_shape(h, w).ok_or_else(|| {
                        Error::invalid(format!("input too small at layer {}", i + 1))
                    })?;
                    let (kh, kw) = conv.kernel();
                    (h, w, c) = (oh, ow, conv.out_channels());
                    rows.push(LayerSummary {
                        index: i + 1,
                        kind: "Conv2D",
                        config: format!("({kh},{kw})"),
                        output: (h, w, c),
                        params: conv.param_count(),
                        activation: match conv.activation() {
                            Activation::Relu => "relu",
                            Activation::Linear => "linear",
                        },
                    });
                }
                Layer::Dropout(p) => rows.push(LayerSummary {
                    index: i + 1,
                    kind: "Dropout",
                    config: format!("{p}"),
                    output: (h, w, c),
                    params: 0,
                    activation: "-",
                }),
            }
        }
        Ok(rows)
    }

    /// He-uniform weights for ReLU layers, Xavier-uniform for linear ones,
    /// zero biases.
    pub fn init_weights<R: Rng>(&mut self, rng: &mut R) {
        for conv in self.conv_layers_mut() {
            let (kh, kw) = conv.kernel();
            let fan_in = (kh * kw * conv.in_channels()) as f32;
            let fan_out = (kh * kw * conv.out_channels()) as f32;
            let limit = match conv.activation() {
                Activation::Relu => (6.0 / fan_in).sqrt(),
                Activation::Linear => (6.0 / (fan_in + fan_out)).sqrt(),
            };
            for w in conv.weights_mut() {
                *w = rng.random_range(-limit..limit);
            }
            conv.bias_mut().fill(0.0);
        }
    }

    /// Inference forward pass (dropout is identity).
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            if let Layer::Conv(conv) = layer {
                x = conv.forward(&x)?;
            }
        }
        Ok(x)
    }

    /// Forward pass that records what [`backward`](Self::backward) needs.
    /// Dropout is applied only when `dropout_rng` is given.
    pub fn forward_cached<R: Rng>(&self, input: &Tensor, mut dropout_rng: Option<&mut R>) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut activations = vec![input.clone()];
        let mut masks = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = activations.last().expect("non-empty");
            match layer {
                Layer::Conv(conv) => {
                    let y = conv.forward(x)?;
                    activations.push(y);
                    masks.push(None);
                }
                Layer::Dropout(p) => match dropout_rng.as_deref_mut() {
                    Some(rng) if *p > 0.0 => {
                        let keep = 1.0 - p;
                        let mask: Vec<f32> = (0..x.data.len())
                            .map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        let mut y = x.clone();
                        for (v, m) in y.data.iter_mut().zip(&mask) {
                            *v *= m;
                        }
                        activations.push(y);
                        masks.push(Some(mask));
                    }
                    _ => {
                        let y = x.clone();
                        activations.push(y);
                        masks.push(None);
                    }
                },
            }
        }
        Ok(ForwardCache { activations, masks })
    }

    /// Exact gradients of the cached forward pass for the given output
    /// gradient. Dropout masks from the forward pass are reused.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Tensor) -> Result<Gradients> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::invalid("forward cache was produced by a different network"));
        }
        let out = cache.output();
        if (out.height, out.width, out.channels)
            != (output_grad.height, output_grad.width, output_grad.channels)
        {
            return Err(Error::invalid("output gradient shape does not match the forward output"));
        }
        let mut grad = output_grad.clone();
        let mut convs = Vec::new();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            match layer {
                Layer::Conv(conv) => {
                    let (g, gin) = conv.backward(&cache.activations[i], &cache.activations[i + 1], &grad)?;
                    convs.push(g);
                    grad = gin;
                }
                Layer::Dropout(_) => {
                    if let Some(mask) = &cache.masks[i] {
                        for (g, m) in grad.data.iter_mut().zip(mask) {
                            *g *= m;
                        }
                    }
                }
            }
        }
        convs.reverse();
        Ok(Gradients { convs, input: grad })
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let c = self.in_channels().ok_or_else(|| Error::invalid("network has no convolutions"))?;
        if input.channels != c {
            return Err(Error::invalid(format!(
                "network expects {c} input channels, got {}",
                input.channels
            )));
        }
        let (rh, rw) = self.receptive_field();
        if input.height < rh || input.width < rw {
            return Err(Error::invalid(format!(
                "{}x{} input is smaller than the {rh}x{rw} receptive field",
                input.height, input.width
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn table1_rows() {
        let net = Network::table1();
        let rows = net.summary(15, 19).unwrap();
        let expect: [((usize, usize, usize), usize); 15] = [
            ((15, 19, 6), 0),
            ((13, 17, 12), 660),
            ((11, 15, 24), 2616),
            ((9, 13, 32), 6944),
            ((9, 13, 32), 0),
            ((7, 11, 46), 13294),
            ((5, 9, 72), 29880),
            ((5, 9, 72), 0),
            ((5, 7, 100), 21700),
            ((3, 5, 200), 180200),
            ((3, 5, 200), 40200),
            ((1, 3, 128), 230528),
            ((1, 1, 64), 24640),
            ((1, 1, 32), 2080),
            ((1, 1, 1), 33),
        ];
        assert_eq!(rows.len(), expect.len());
        for (row, (shape, params)) in rows.iter().zip(expect) {
            assert_eq!(row.output, shape, "layer {}", row.index);
            assert_eq!(row.params, params, "layer {}", row.index);
        }
        assert_eq!(net.receptive_field(), (15, 19));
        assert_eq!(net.padding(), (7, 7, 9, 9));
    }

    #[test]
    fn table1_forward_shapes() {
        let net = Network::table1();
        assert_eq!(net.forward(&Tensor::zeros(15, 19, 6)).unwrap().data, vec![0.0]);
        let out = net.forward(&Tensor::zeros(29, 37, 6)).unwrap();
        assert_eq!((out.height, out.width, out.channels), (15, 19, 1));
        assert!(net.forward(&Tensor::zeros(15, 19, 3)).is_err());
        assert!(net.forward(&Tensor::zeros(14, 19, 6)).is_err());
    }

    #[test]
    fn empty_network_has_no_parameters() {
        assert_eq!(Network::new(vec![]).unwrap().count_parameters(), 0);
    }

    #[test]
    fn rejects_broken_channel_chain() {
        let a = ConvLayer::new(3, 3, 2, 4, Activation::Relu).unwrap();
        let b = ConvLayer::new(1, 1, 5, 1, Activation::Linear).unwrap();
        assert!(Network::new(vec![Layer::Conv(a), Layer::Conv(b)]).is_err());
    }

    #[test]
    fn compact_fits_desk_budget() {
        let net = Network::compact(6, 1);
        assert!(net.count_parameters() <= 50_000, "{}", net.count_parameters());
    }

    #[test]
    fn dropout_identity_without_rng_and_scaled_with() {
        let net = Network::builder(1)
            .conv(1, 1, 4, Activation::Linear)
            .dropout(0.5)
            .conv(1, 1, 1, Activation::Linear)
            .build();
        let mut net = net;
        net.init_weights(&mut rng::from_seed(1));
        let x = Tensor::new(4, 4, 1, (0..16).map(|i| i as f32 / 16.0).collect()).unwrap();
        let infer = net.forward(&x).unwrap();
        let cached = net.forward_cached::<rng::Prng>(&x, None).unwrap();
        assert_eq!(cached.output(), &infer);
        let train = net.forward_cached(&x, Some(&mut rng::from_seed(2))).unwrap();
        let hidden = &train.activations[2].data;
        let pre = &train.activations[1].data;
        for (h, p) in hidden.iter().zip(pre) {
            assert!(*h == 0.0 || (h - 2.0 * p).abs() < 1e-6);
        }
    }
}
