//! `.dnrv` raw video container.
//!
//! Layout: magic `DNRV1\n`, then `T`, `H`, `W` as little-endian `u32`,
//! then `T·H·W·3` bytes of interleaved RGB, frame after frame, row-major.

use std::path::Path;

use super::ppm::RgbImage;
use crate::error::{format_err, Error, Result};

pub const DNRV_MAGIC: &[u8; 6] = b"DNRV1\n";

pub fn encode_dnrv(frames: &[RgbImage]) -> Result<Vec<u8>> {
    let first = frames
        .first()
        .ok_or_else(|| format_err!("cannot write an empty video"))?;
    let (h, w) = (first.height, first.width);
    let mut out = Vec::with_capacity(18 + frames.len() * h * w * 3);
    out.extend_from_slice(DNRV_MAGIC);
    for v in [frames.len(), h, w] {
        let v = u32::try_from(v).map_err(|_| format_err!("dimension {v} exceeds u32"))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (i, f) in frames.iter().enumerate() {
        if (f.height, f.width) != (h, w) {
            return Err(format_err!(
                "frame {i} is {}x{}, expected {h}x{w}",
                f.height,
                f.width
            ));
        }
        out.extend_from_slice(&f.pixels);
    }
    Ok(out)
}

pub fn decode_dnrv(bytes: &[u8]) -> Result<Vec<RgbImage>> {
    if bytes.len() < 18 || &bytes[..6] != DNRV_MAGIC {
        return Err(format_err!("missing DNRV1 magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
    let (t, h, w) = (word(0), word(1), word(2));
    if t == 0 || h == 0 || w == 0 {
        return Err(format_err!("dnrv header has a zero dimension: T={t} H={h} W={w}"));
    }
    let frame_len = h * w * 3;
    let body = &bytes[18..];
    if body.len() != t * frame_len {
        return Err(format_err!(
            "dnrv body holds {} bytes, header implies {}",
            body.len(),
            t * frame_len
        ));
    }
    Ok(body
        .chunks(frame_len)
        .map(|c| RgbImage {
            width: w,
            height: h,
            pixels: c.to_vec(),
        })
        .collect())
}

pub fn read_dnrv(path: &Path) -> Result<Vec<RgbImage>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dnrv(&bytes).map_err(|e| format_err!("{}: {e}", path.display()))
}

pub fn write_dnrv(path: &Path, frames: &[RgbImage]) -> Result<()> {
    std::fs::write(path, encode_dnrv(frames)?).map_err(|e| Error::io(path, e))
}
