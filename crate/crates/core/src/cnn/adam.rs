use super::network::{Gradients, Network};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m_w: Vec<f32>,
    v_w: Vec<f32>,
    m_b: Vec<f32>,
    v_b: Vec<f32>,
}

/// Adam moment accumulators, one set per convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Moments>,
}

impl AdamState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        let moments = net
            .conv_layers()
            .map(|c| Moments {
                m_w: vec![0.0; c.weights().len()],
                v_w: vec![0.0; c.weights().len()],
                m_b: vec![0.0; c.bias().len()],
                v_b: vec![0.0; c.bias().len()],
            })
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.convs.len() != state.moments.len() || net.conv_layers().count() != state.moments.len() {
        return Err(Error::invalid("gradient/optimizer layout does not match the network"));
    }
    for ((conv, g), m) in net.conv_layers_mut().zip(&grads.convs).zip(&state.moments) {
        if g.weights.len() != conv.weights().len() || m.m_w.len() != conv.weights().len() {
            return Err(Error::invalid("gradient/optimizer layout does not match the network"));
        }
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - (beta1 as f64).powi(t);
    let c2 = 1.0 - (beta2 as f64).powi(t);
    let update = |p: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32]| {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] as f64 / c1;
            let v_hat = v[i] as f64 / c2;
            p[i] -= (lr as f64 * m_hat / (v_hat.sqrt() + eps as f64)) as f32;
        }
    };
    for ((conv, g), m) in net.conv_layers_mut().zip(&grads.convs).zip(state.moments.iter_mut()) {
        update(conv.weights_mut(), &g.weights, &mut m.m_w, &mut m.v_w);
        update(conv.bias_mut(), &g.bias, &mut m.m_b, &mut m.v_b);
    }
    Ok(())
}
