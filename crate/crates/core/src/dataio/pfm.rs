use std::path::Path;

use super::{read_bytes, HeaderCursor};
use crate::image::ScalarMap;
use crate::{Error, Result};

/// Decoded PFM raster, rows top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    /// 1 for `Pf`, 3 for `PF`.
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pfm {
    /// Single-channel map; `+inf` (and `-inf`) entries stay holes.
    pub fn into_scalar_map(self) -> Result<ScalarMap> {
        if self.channels != 1 {
            return Err(Error::Unsupported(format!(
                "expected a grayscale PFM, found {} channels",
                self.channels
            )));
        }
        ScalarMap::new(self.height, self.width, self.data)
    }
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Pfm> {
    decode_pfm(&read_bytes(path.as_ref())?)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Pfm> {
    let mut cur = HeaderCursor::new(bytes);
    let channels = match cur.token("magic")? {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(Error::format(0, format!("bad PFM magic {m:?}"))),
    };
    let width: usize = cur.number("width")?;
    let height: usize = cur.number("height")?;
    if width == 0 || height == 0 {
        return Err(Error::format(cur.pos as u64, format!("empty {width}x{height} raster")));
    }
    let scale_at = cur.pos;
    let scale: f32 = cur.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(scale_at as u64, format!("invalid scale {scale}")));
    }
    let little = scale < 0.0;
    let start = cur.end_header()?;
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::format(start as u64, "raster size overflows"))?;
    let payload = &bytes[start..];
    if payload.len() < count * 4 {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: {} of {} bytes", payload.len(), count * 4),
        ));
    }
    if payload.len() > count * 4 {
        return Err(Error::format(
            (start + count * 4) as u64,
            format!("{} trailing bytes after payload", payload.len() - count * 4),
        ));
    }
    let row = width * channels;
    let mut data = vec![0.0f32; count];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("4 bytes");
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        // file rows are bottom-up
        let (fy, rest) = (i / row, i % row);
        data[(height - 1 - fy) * row + rest] = v;
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

/// Little-endian (scale -1.0) PFM bytes for a top-down raster.
pub fn encode_pfm(height: usize, width: usize, channels: usize, data: &[f32]) -> Result<Vec<u8>> {
    let magic = match channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::Unsupported(format!("PFM cannot hold {c} channels"))),
    };
    if data.len() != height * width * channels {
        return Err(Error::invalid("PFM buffer does not match its dimensions"));
    }
    let mut out = format!("{magic}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(data.len() * 4);
    let row = width * channels;
    for y in (0..height).rev() {
        for v in &data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_pfm(map: &ScalarMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pfm(map.height(), map.width(), 1, map.data())?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
