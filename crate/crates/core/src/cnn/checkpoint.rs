//! Binary weight checkpoints.
//!
//! Layout (all integers `u32` and floats `f32`, little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `PYRREGNN`                        |
//! | 8      | 4    | format version (currently 1)            |
//! | 12     | 4    | estimator range `mu` in pixels (`f32`)  |
//! | 16     | 4    | layer count `n`                         |
//! | 20     | 24n  | layer records                           |
//! | ...    |      | parameters                              |
//!
//! A layer record is six 4-byte words. Convolution: `0, kh, kw, cin, cout,
//! act` with `act` 0 = linear, 1 = relu. Dropout: `1, rate (f32), 0, 0, 0, 0`.
//!
//! Parameters follow for each convolution in layer order: the weights
//! (`kh*kw*cin*cout` floats, index `((ky*kw + kx)*cin + ci)*cout + co`) and
//! then the `cout` biases. The file ends right after the last bias.

use super::layer::{Activation, ConvLayer};
use super::network::{Layer, Network};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PYRREGNN";
pub const VERSION: u32 = 1;

/// Network plus the estimator range it was trained for.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub mu: f32,
    pub network: Network,
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let net = &ckpt.network;
    let mut out = Vec::with_capacity(20 + 24 * net.layers().len() + 4 * net.count_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ckpt.mu.to_le_bytes());
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        let words: [[u8; 4]; 6] = match layer {
            Layer::Conv(c) => {
                let (kh, kw) = c.kernel();
                let act = match c.activation() {
                    Activation::Linear => 0u32,
                    Activation::Relu => 1,
                };
                [0, kh as u32, kw as u32, c.in_channels() as u32, c.out_channels() as u32, act]
                    .map(u32::to_le_bytes)
            }
            Layer::Dropout(p) => [1u32.to_le_bytes(), p.to_le_bytes(), [0; 4], [0; 4], [0; 4], [0; 4]],
        };
        for w in words {
            out.extend_from_slice(&w);
        }
    }
    for conv in net.conv_layers() {
        for v in conv.weights().iter().chain(conv.bias()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn word(&mut self, what: &str) -> Result<[u8; 4]> {
        let end = self.pos + 4;
        let w = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format(self.pos as u64, format!("truncated while reading {what}")))?;
        self.pos = end;
        Ok(w.try_into().expect("4 bytes"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.word(what).map(u32::from_le_bytes)
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        self.word(what).map(f32::from_le_bytes)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::format(0, "not a network checkpoint (bad magic)"));
    }
    let mut r = Reader { bytes, pos: 8 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let mu = r.f32("mu")?;
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::format(12, format!("invalid mu {mu}")));
    }
    let n = r.u32("layer count")? as usize;
    if n > 4096 {
        return Err(Error::format(16, format!("implausible layer count {n}")));
    }
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let at = r.pos as u64;
        let kind = r.u32("layer kind")?;
        match kind {
            0 => {
                let kh = r.u32("kernel height")? as usize;
                let kw = r.u32("kernel width")? as usize;
                let cin = r.u32("input channels")? as usize;
                let cout = r.u32("output channels")? as usize;
                let act = match r.u32("activation")? {
                    0 => Activation::Linear,
                    1 => Activation::Relu,
                    a => return Err(Error::format(r.pos as u64 - 4, format!("unknown activation {a}"))),
                };
                if [kh, kw, cin, cout].iter().any(|&d| d == 0 || d > 1 << 16) {
                    return Err(Error::format(at, format!("invalid dimensions in layer {i}")));
                }
                layers.push(Layer::Conv(ConvLayer::new(kh, kw, cin, cout, act)?));
            }
            1 => {
                let p = r.f32("dropout rate")?;
                for _ in 0..4 {
                    r.u32("padding")?;
                }
                layers.push(Layer::Dropout(p));
            }
            k => return Err(Error::format(at, format!("unknown layer kind {k}"))),
        }
    }
    let mut network = Network::new(layers).map_err(|e| Error::format(20, e.to_string()))?;
    let needed = network.count_parameters() * 4;
    if bytes.len() - r.pos != needed {
        return Err(Error::format(
            r.pos as u64,
            format!("expected {needed} parameter bytes, found {}", bytes.len() - r.pos),
        ));
    }
    for conv in network.conv_layers_mut() {
        for v in conv.weights_mut() {
            *v = r.f32("weight")?;
        }
        for v in conv.bias_mut() {
            *v = r.f32("bias")?;
        }
    }
    Ok(Checkpoint { mu, network })
}
