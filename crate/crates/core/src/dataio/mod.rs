//! File formats and dataset layout.
//!
//! - PFM (`Pf` grayscale, `PF` color): float rasters with a scale line whose
//!   sign gives the byte order (negative = little-endian) and rows stored
//!   bottom to top. `+inf` marks unknown disparities.
//! - PPM `P6` / PGM `P5`: 8-bit binary rasters with maxval 255, mapped to
//!   `[0, 1]` by dividing by 255.
//! - Network checkpoints, see [`crate::cnn::checkpoint`].

mod dataset;
mod pfm;
mod pnm;
mod render;

use std::fs;
use std::path::Path;

pub use dataset::{load_dataset, load_scene, DatasetIndex, Scene, SceneRecord, SkippedScene};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm, Pfm};
pub use pnm::{decode_pnm, encode_pgm, encode_ppm, read_pgm, read_pnm, read_ppm, write_pgm, write_ppm};
pub use render::{render_disparity, RAMP};

use crate::cnn::checkpoint::{self, Checkpoint};
use crate::{Error, Result};

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint::encode(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint::decode(&bytes)
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Whitespace-separated ASCII header tokens, `#` comments skipped.
pub(crate) struct HeaderCursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> HeaderCursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn token(&mut self, what: &str) -> Result<&'a str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start as u64, format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(start as u64, format!("non-ASCII {what}")))
    }

    pub fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.token(what)?;
        let start = self.pos - tok.len();
        tok.parse()
            .map_err(|_| Error::format(start as u64, format!("invalid {what} {tok:?}")))
    }

    /// Consumes the single whitespace byte that separates header and payload.
    pub fn end_header(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::format(self.pos as u64, "header not terminated by whitespace")),
        }
    }
}
