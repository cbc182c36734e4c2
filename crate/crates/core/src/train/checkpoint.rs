//! Checkpoint files: model config, init seed, and every parameter tensor.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      "DNCK1\n"
//! u32        config text length, then the canonical model config text
//! u64        model seed
//! u64        optimizer steps taken
//! u8         value width: 8 (f64) or 4 (f32)
//! u32        tensor count
//! per tensor u16 name length, name, u8 rank, u32 × rank dims, values
//! u32        CRC32 of everything above
//! ```

use std::path::Path;

use super::Precision;
use crate::config::{model_from_text, model_to_text};
use crate::error::{format_err, Error, Result};
use crate::model::DnervModel;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"DNCK1\n";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: DnervModel,
    pub precision: Precision,
    pub steps: u64,
}

pub fn write_checkpoint(model: &DnervModel, precision: Precision, steps: u64) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    let text = model_to_text(&model.config);
    out.extend((text.len() as u32).to_le_bytes());
    out.extend(text.as_bytes());
    out.extend(model.seed.to_le_bytes());
    out.extend(steps.to_le_bytes());
    out.push(match precision {
        Precision::F64 => 8,
        Precision::F32 => 4,
    });
    let entries = model.params.entries();
    out.extend((entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend((e.name.len() as u16).to_le_bytes());
        out.extend(e.name.as_bytes());
        out.push(e.value.shape().len() as u8);
        for &d in e.value.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for &v in e.value.data() {
            match precision {
                Precision::F64 => out.extend(v.to_le_bytes()),
                Precision::F32 => out.extend((v as f32).to_le_bytes()),
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend(crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err!("checkpoint truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("take returns N bytes"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| format_err!("checkpoint string is not UTF-8"))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(format_err!("not a checkpoint (bad magic)"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum {
            record: "checkpoint".into(),
            stored,
            computed,
        });
    }
    let mut r = Reader {
        bytes: body,
        pos: CHECKPOINT_MAGIC.len(),
    };
    let text_len = r.u32()? as usize;
    let config = model_from_text(r.utf8(text_len)?)?;
    let seed = r.u64()?;
    let steps = r.u64()?;
    let precision = match r.u8()? {
        8 => Precision::F64,
        4 => Precision::F32,
        w => return Err(format_err!("checkpoint value width {w} (expected 4 or 8)")),
    };
    let mut model = DnervModel::new(config, seed)?;
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(format_err!(
            "checkpoint has {count} tensors, config implies {}",
            model.params.len()
        ));
    }
    for e in model.params.entries_mut() {
        let name_len = r.u16()? as usize;
        let name = r.utf8(name_len)?;
        if name != e.name {
            return Err(format_err!("checkpoint tensor {name:?} where {:?} was expected", e.name));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != e.value.shape() {
            return Err(format_err!("{name}: stored shape {shape:?}, expected {:?}", e.value.shape()));
        }
        let data = (0..e.value.len())
            .map(|_| match precision {
                Precision::F64 => r.array().map(f64::from_le_bytes),
                Precision::F32 => r.array().map(|b| f32::from_le_bytes(b) as f64),
            })
            .collect::<Result<Vec<_>>>()?;
        e.value = Tensor::new(shape, data)?;
    }
    if r.pos != body.len() {
        return Err(format_err!("{} trailing bytes in checkpoint", body.len() - r.pos));
    }
    Ok(Checkpoint { model, precision, steps })
}

pub fn save_checkpoint(path: &Path, model: &DnervModel, precision: Precision, steps: u64) -> Result<()> {
    std::fs::write(path, write_checkpoint(model, precision, steps)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes).map_err(|e| match e {
        Error::Format(m) => format_err!("{}: {m}", path.display()),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = DnervModel::new(ModelConfig::preset("tiny-64x128").unwrap(), 3).unwrap();
        let bytes = write_checkpoint(&model, Precision::F64, 12);
        let ck = read_checkpoint(&bytes).unwrap();
        assert_eq!(ck.steps, 12);
        assert_eq!(ck.model.params, model.params);
        assert_eq!(write_checkpoint(&ck.model, Precision::F64, 12), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let model = DnervModel::new(ModelConfig::preset("tiny-64x128").unwrap(), 3).unwrap();
        let mut bytes = write_checkpoint(&model, Precision::F32, 0);
        let n = bytes.len();
        bytes[n / 2] ^= 0x10;
        assert!(matches!(read_checkpoint(&bytes), Err(Error::Checksum { .. })));
        assert!(read_checkpoint(b"nope").is_err());
    }
}
