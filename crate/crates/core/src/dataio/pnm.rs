use std::path::Path;

use super::{read_bytes, HeaderCursor};
use crate::image::Image;
use crate::{Error, Result};

/// Decodes binary `P5` (1 channel) or `P6` (3 channels) with maxval 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut cur = HeaderCursor::new(bytes);
    let channels = match cur.token("magic")? {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::format(0, format!("unsupported PNM magic {m:?} (need P5 or P6)"))),
    };
    let width: usize = cur.number("width")?;
    let height: usize = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval: u32 = cur.number("maxval")?;
    if maxval > 255 {
        return Err(Error::Unsupported(format!(
            "16-bit PNM (maxval {maxval}) is not supported, only maxval 255"
        )));
    }
    if maxval != 255 {
        return Err(Error::format(maxval_at as u64, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(maxval_at as u64, format!("empty {width}x{height} image")));
    }
    let start = cur.end_header()?;
    let count = width * height * channels;
    let payload = &bytes[start..];
    if payload.len() < count {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: {} of {count} bytes", payload.len()),
        ));
    }
    let data = payload[..count].iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(height, width, channels, data)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(img: &Image, magic: &str, channels: usize) -> Result<Vec<u8>> {
    if img.channels() != channels {
        return Err(Error::invalid(format!(
            "{magic} needs {channels} channel(s), image has {}",
            img.channels()
        )));
    }
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    encode(img, "P6", 3)
}

pub fn encode_pgm(img: &Image) -> Result<Vec<u8>> {
    encode(img, "P5", 1)
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
    decode_pnm(&read_bytes(path.as_ref())?)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let img = read_pnm(path.as_ref())?;
    if img.channels() != 3 {
        return Err(Error::format(0, "expected a P6 file"));
    }
    Ok(img)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let img = read_pnm(path.as_ref())?;
    if img.channels() != 1 {
        return Err(Error::format(0, "expected a P5 file"));
    }
    Ok(img)
}

pub fn write_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(img)?).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(img)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_pixel_p6_fixture() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.shape(), (1, 2));
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn comments_in_header() {
        let mut bytes = b"P5\n# made by hand\n1 1\n255\n".to_vec();
        bytes.push(51);
        assert_eq!(decode_pnm(&bytes).unwrap().data(), &[0.2]);
    }

    #[test]
    fn sixteen_bit_rejected() {
        let bytes = b"P5\n1 1\n65535\n\0\0".to_vec();
        match decode_pnm(&bytes) {
            Err(Error::Unsupported(msg)) => assert!(msg.contains("16-bit")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_rejected() {
        assert!(decode_pnm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_pnm(b"P5\n1 1\n100\n\0").is_err());
        assert!(matches!(decode_pnm(b"P6\n2 2\n255\n\0\0\0"), Err(Error::Format { .. })));
        assert!(decode_pnm(b"P5\n0 1\n255\n").is_err());
    }

    #[test]
    fn wrong_channel_count_on_write() {
        let img = Image::filled(2, 2, 1, 0.5).unwrap();
        assert!(encode_ppm(&img).is_err());
        assert!(encode_pgm(&img).is_ok());
    }

    proptest! {
        #[test]
        fn ppm_round_trip_within_quantization(h in 1usize..5, w in 1usize..5, seed in 0u64..1000) {
            use rand::Rng;
            let mut rng = crate::rng::from_seed(seed);
            let img = Image::from_fn(h, w, 3, |_, _, _| rng.random::<f32>());
            let back = decode_pnm(&encode_ppm(&img).unwrap()).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
            // 8-bit values survive exactly.
            let again = decode_pnm(&encode_ppm(&back).unwrap()).unwrap();
            prop_assert_eq!(again, back);
        }
    }
}
