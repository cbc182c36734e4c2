//! The `.dnvc` compressed-representation container. See `docs/dnvc-format.md`.

use std::path::Path;

use super::huffman::{entropy_decode, entropy_encode, stream_len};
use crate::config::{config_hash, model_from_text, model_to_text};
use crate::error::{format_err, Error, Result};
use crate::model::ModelConfig;

pub const DNVC_MAGIC: &[u8; 5] = b"DNVC1";
pub const SECTION_NAMES: [&[u8; 8]; 2] = [b"weights\0", b"embeds\0\0"];

/// One quantized (and possibly pruned) tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// `(scale, offset)` of each quantization group; the groups split the
    /// tensor into equal runs along its first axis.
    pub ranges: Vec<(f64, f64)>,
    /// Survivor mask when the tensor was pruned.
    pub survivors: Option<Vec<bool>>,
    /// Codes of the surviving values, in order.
    pub codes: Vec<u32>,
}

impl TensorRecord {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dequantized values with pruned positions set to zero.
    pub fn values(&self) -> Vec<f64> {
        let run = (self.len() / self.ranges.len().max(1)).max(1);
        let deq = |i: usize, c: u32| {
            let (scale, offset) = self.ranges[i / run];
            super::quant::dequantize_code(c, scale, offset)
        };
        match &self.survivors {
            None => self.codes.iter().enumerate().map(|(i, &c)| deq(i, c)).collect(),
            Some(mask) => {
                let mut codes = self.codes.iter();
                mask.iter()
                    .enumerate()
                    .map(|(i, &keep)| if keep { deq(i, *codes.next().expect("one code per survivor")) } else { 0.0 })
                    .collect()
            }
        }
    }

    fn write(&self, out: &mut Vec<u8>) -> Result<()> {
        let start = out.len();
        out.extend((self.name.len() as u16).to_le_bytes());
        out.extend(self.name.as_bytes());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend((d as u32).to_le_bytes());
        }
        out.extend((self.ranges.len() as u32).to_le_bytes());
        for (scale, offset) in &self.ranges {
            out.extend(scale.to_le_bytes());
            out.extend(offset.to_le_bytes());
        }
        match &self.survivors {
            None => out.push(0),
            Some(mask) => {
                out.push(1);
                let mut bytes = vec![0u8; mask.len().div_ceil(8)];
                for (i, _) in mask.iter().enumerate().filter(|(_, &k)| k) {
                    bytes[i / 8] |= 0x80 >> (i % 8);
                }
                out.extend(bytes);
            }
        }
        out.extend(entropy_encode(&self.codes)?);
        let crc = crc32fast::hash(&out[start..]);
        out.extend(crc.to_le_bytes());
        Ok(())
    }

    fn read(r: &mut Reader) -> Result<Self> {
        let start = r.pos;
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| format_err!("record name is not UTF-8"))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let groups = r.u32()? as usize;
        if groups == 0 || (n > 0 && n % groups != 0) || groups > n.max(1) {
            return Err(format_err!("{name}: {groups} quantization groups for {n} values"));
        }
        let ranges = (0..groups)
            .map(|_| Ok((f64::from_le_bytes(r.array()?), f64::from_le_bytes(r.array()?))))
            .collect::<Result<Vec<_>>>()?;
        let survivors = match r.u8()? {
            0 => None,
            1 => {
                let bytes = r.take(n.div_ceil(8))?;
                Some((0..n).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect::<Vec<_>>())
            }
            f => return Err(format_err!("{name}: bad bitmap flag {f}")),
        };
        let stream = stream_len(&r.bytes[r.pos..])?;
        let stream_bytes = r.take(stream)?;
        let computed = crc32fast::hash(&r.bytes[start..r.pos]);
        let stored = r.u32()?;
        if stored != computed {
            return Err(Error::Checksum {
                record: name,
                stored,
                computed,
            });
        }
        let codes = entropy_decode(stream_bytes)?;
        let expected = survivors.as_ref().map_or(n, |m| m.iter().filter(|&&k| k).count());
        if codes.len() != expected {
            return Err(format_err!("{name}: {} codes for {expected} values", codes.len()));
        }
        Ok(Self {
            name,
            shape,
            ranges,
            survivors,
            codes,
        })
    }
}

/// Decoder/fusion weights plus per-frame embeddings, quantized and coded.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedArtifact {
    pub config: ModelConfig,
    pub height: u32,
    pub width: u32,
    pub frames: u32,
    pub bits: u8,
    pub weights: Vec<TensorRecord>,
    pub embeddings: Vec<TensorRecord>,
}

/// Byte sizes of the parts of a serialized artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectionSizes {
    pub header: usize,
    pub weights: usize,
    pub embeddings: usize,
}

impl SectionSizes {
    pub fn total_bits(&self) -> u64 {
        8 * (self.header + self.weights + self.embeddings) as u64
    }
}

const SECTION_ENTRY: usize = 8 + 8 + 8 + 4;

impl CompressedArtifact {
    pub fn config_hash(&self) -> [u8; 32] {
        config_hash(&self.config)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut sections = Vec::new();
        for records in [&self.weights, &self.embeddings] {
            let mut body = Vec::new();
            for r in records.iter() {
                r.write(&mut body)?;
            }
            sections.push(body);
        }
        let text = model_to_text(&self.config);
        let mut head = DNVC_MAGIC.to_vec();
        head.extend(self.config_hash());
        for v in [self.height, self.width, self.frames] {
            head.extend(v.to_le_bytes());
        }
        head.push(self.bits);
        head.extend((text.len() as u32).to_le_bytes());
        head.extend(text.as_bytes());
        head.extend((sections.len() as u32).to_le_bytes());
        let header_len = head.len() + sections.len() * SECTION_ENTRY + 8 + 4;
        let total_len = header_len + sections.iter().map(Vec::len).sum::<usize>();
        let mut offset = header_len;
        for ((name, body), records) in SECTION_NAMES.iter().zip(&sections).zip([&self.weights, &self.embeddings]) {
            head.extend(name.as_slice());
            head.extend((offset as u64).to_le_bytes());
            head.extend((body.len() as u64).to_le_bytes());
            head.extend((records.len() as u32).to_le_bytes());
            offset += body.len();
        }
        head.extend((8 * total_len as u64).to_le_bytes());
        let crc = crc32fast::hash(&head);
        head.extend(crc.to_le_bytes());
        debug_assert_eq!(head.len(), header_len);
        for body in sections {
            head.extend(body);
        }
        Ok(head)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (artifact, _) = Self::parse(bytes)?;
        Ok(artifact)
    }

    /// Section sizes of a serialized artifact.
    pub fn section_sizes(bytes: &[u8]) -> Result<SectionSizes> {
        Ok(Self::parse(bytes)?.1)
    }

    fn parse(bytes: &[u8]) -> Result<(Self, SectionSizes)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(DNVC_MAGIC.len()).ok() != Some(DNVC_MAGIC.as_slice()) {
            return Err(format_err!("not a .dnvc artifact (bad magic)"));
        }
        let hash: [u8; 32] = r.array()?;
        let (height, width, frames) = (r.u32()?, r.u32()?, r.u32()?);
        let bits = r.u8()?;
        let text_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?).map_err(|_| format_err!("config text is not UTF-8"))?;
        let config = model_from_text(text)?;
        let n_sections = r.u32()? as usize;
        if n_sections != SECTION_NAMES.len() {
            return Err(format_err!("expected {} sections, found {n_sections}", SECTION_NAMES.len()));
        }
        let mut table = Vec::new();
        for name in SECTION_NAMES {
            if r.take(8)? != name.as_slice() {
                return Err(format_err!("unexpected section name in table"));
            }
            table.push((r.u64()? as usize, r.u64()? as usize, r.u32()? as usize));
        }
        let total_bits = r.u64()?;
        let computed = crc32fast::hash(&bytes[..r.pos]);
        let stored = r.u32()?;
        if stored != computed {
            return Err(Error::Checksum {
                record: "header".into(),
                stored,
                computed,
            });
        }
        if hash != config_hash(&config) {
            return Err(format_err!("header config hash does not match the embedded config"));
        }
        if total_bits != 8 * bytes.len() as u64 {
            return Err(format_err!(
                "header records {total_bits} bits but the file has {}",
                8 * bytes.len()
            ));
        }
        let header = r.pos;
        let mut sections = Vec::new();
        for &(offset, len, count) in &table {
            if offset != r.pos {
                return Err(format_err!("section at byte {offset}, expected {}", r.pos));
            }
            let end = r.pos + len;
            let mut records = Vec::with_capacity(count);
            for _ in 0..count {
                records.push(TensorRecord::read(&mut r)?);
            }
            if r.pos != end {
                return Err(format_err!("section length mismatch"));
            }
            sections.push(records);
        }
        if r.pos != bytes.len() {
            return Err(format_err!("{} trailing bytes", bytes.len() - r.pos));
        }
        let embeddings = sections.pop().expect("two sections");
        let weights = sections.pop().expect("two sections");
        let sizes = SectionSizes {
            header,
            weights: table[0].1,
            embeddings: table[1].1,
        };
        Ok((
            Self {
                config,
                height,
                width,
                frames,
                bits,
                weights,
                embeddings,
            },
            sizes,
        ))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| format_err!("artifact truncated at byte {}", self.pos))?;
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("N bytes"))
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
}
