//! Binary 8-bit Netpbm: P5 (grayscale, masks) and P6 (RGB).
//!
//! Samples map to floats as `v / 255`; writing rounds half up after
//! clamping to `[0, 1]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image;
use crate::tensor::Tensor;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err(start, "expected a decimal number"));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(start, "number out of range"))
    }
}

/// Decodes a P5 or P6 buffer into a `C×H×W` tensor in `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 {
        return Err(format_err(0, "truncated header"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(format_err(0, "unsupported magic (want P5 or P6)")),
    };
    let mut cur = Cursor {
        data: bytes,
        pos: 2,
    };
    let w = cur.number()?;
    let h = cur.number()?;
    let maxval = cur.number()?;
    if w == 0 || h == 0 {
        return Err(format_err(cur.pos, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(format_err(
            cur.pos,
            format!("maxval {maxval} unsupported (want 255)"),
        ));
    }
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(format_err(cur.pos, "missing whitespace before raster")),
    }
    let need = w * h * channels;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(format_err(
            bytes.len(),
            format!("raster truncated: {} of {need} bytes", raster.len()),
        ));
    }
    let mut data = vec![0.0; need];
    for (i, &v) in raster[..need].iter().enumerate() {
        let (pix, ch) = (i / channels, i % channels);
        data[ch * w * h + pix] = v as f64 / 255.0;
    }
    Tensor::new(vec![channels, h, w], data)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes a 1- or 3-channel image as P5 or P6.
pub fn encode(img: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image::dims(img)?;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::shape("netpbm::encode", img.shape(), &[3, h, w])),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    for pix in 0..h * w {
        for ch in 0..c {
            out.push(quantize(img.data()[ch * h * w + pix]));
        }
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write(path: &Path, img: &Tensor) -> Result<()> {
    let bytes = encode(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_p6_with_comment() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        let img = decode(&bytes).unwrap();
        assert_eq!(img.shape(), &[3, 1, 2]);
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let out = encode(&img).unwrap();
        assert_eq!(out[out.len() - 6..], bytes[bytes.len() - 6..]);
    }

    #[test]
    fn bytes_roundtrip_exactly() {
        let raster: Vec<u8> = (0..=255u8).collect();
        let mut bytes = b"P5\n16 16\n255\n".to_vec();
        bytes.extend_from_slice(&raster);
        let img = decode(&bytes).unwrap();
        assert_eq!(encode(&img).unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            decode(b"P3\n1 1\n255\n"),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            decode(b"P5\n2 2\n255\n\x00"),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            decode(b"P5\n1 1\n65535\n\x00\x00"),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(2.0), 255);
        assert_eq!(quantize(-1.0), 0);
    }
}
