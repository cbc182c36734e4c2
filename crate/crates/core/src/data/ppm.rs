//! Binary P6 PPM, maxval 255.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{format_err, Error, Result};
use crate::tensor::Tensor;

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn header_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut b = [0u8];
        if r.read(&mut b).map_err(|e| format_err!("ppm header: {e}"))? == 0 {
            return Err(format_err!("ppm header truncated"));
        }
        match b[0] {
            b'#' if tok.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)
                    .map_err(|e| format_err!("ppm header: {e}"))?;
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            c => tok.push(c),
        }
    }
    String::from_utf8(tok).map_err(|_| format_err!("ppm header is not ASCII"))
}

fn header_number(r: &mut impl BufRead, what: &str) -> Result<usize> {
    let tok = header_token(r)?;
    tok.parse()
        .map_err(|_| format_err!("ppm {what} {tok:?} is not a number"))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut r = BufReader::new(bytes);
    let magic = header_token(&mut r)?;
    if magic != "P6" {
        return Err(format_err!("expected P6 magic, found {magic:?}"));
    }
    let width = header_number(&mut r, "width")?;
    let height = header_number(&mut r, "height")?;
    let maxval = header_number(&mut r, "maxval")?;
    if maxval != 255 {
        return Err(format_err!("only maxval 255 is supported, found {maxval}"));
    }
    if width == 0 || height == 0 {
        return Err(format_err!("ppm has zero dimension {width}x{height}"));
    }
    let mut pixels = vec![0u8; width * height * 3];
    r.read_exact(&mut pixels)
        .map_err(|_| format_err!("ppm raster shorter than {width}x{height}x3 bytes"))?;
    Ok(RgbImage {
        width,
        height,
        pixels,
    })
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| format_err!("{}: {e}", path.display()))
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_ppm(img)).map_err(|e| Error::io(path, e))
}

impl RgbImage {
    /// `[3, H, W]` planes scaled by 1/255.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        Tensor::from_fn([3, self.height, self.width], |i| {
            let (c, p) = (i / plane, i % plane);
            self.pixels[p * 3 + c] as f64 / 255.0
        })
    }

    /// Rounds `[3, H, W]` values in [0, 1] to 8 bits (values outside are clamped).
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, height, width) = t.chw()?;
        if c != 3 {
            return Err(format_err!("RGB image needs 3 channels, got {c}"));
        }
        let plane = width * height;
        let d = t.data();
        let mut pixels = vec![0u8; plane * 3];
        for p in 0..plane {
            for ch in 0..3 {
                pixels[p * 3 + ch] = quantize_u8(d[ch * plane + p]);
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}

pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_with_comments() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        let t = img.to_tensor();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(encode_ppm(&img)[..11], *b"P6\n2 1\n255\n");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
    }
}
