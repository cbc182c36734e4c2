//! Canonical Huffman coding of quantization codes.
//!
//! A coded stream is self-describing:
//!
//! ```text
//! u32  symbol count N
//! u32  table size S (distinct symbols)
//! S ×  (u16 symbol, u8 code length), ascending by symbol
//! u64  payload length in bits
//! ...  payload, MSB-first, zero-padded to a byte
//! u32  CRC32 of all preceding bytes of the stream
//! ```
//!
//! A stream with a single distinct symbol stores code length 0 and an empty
//! payload; N alone recovers it.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::error::{format_err, usage_err, Error, Result};

const MAX_CODE_LEN: u8 = 24;

/// Code length per symbol, ascending by symbol. Deterministic: ties in the
/// merge order are broken by node creation order.
pub fn code_lengths(freqs: &BTreeMap<u32, u64>) -> Vec<(u32, u8)> {
    let symbols: Vec<u32> = freqs.keys().copied().collect();
    if symbols.len() == 1 {
        return vec![(symbols[0], 0)];
    }
    let mut weights: Vec<u64> = freqs.values().copied().collect();
    loop {
        let lengths = huffman_depths(&weights);
        if lengths.iter().all(|&l| l <= MAX_CODE_LEN) {
            return symbols.into_iter().zip(lengths).collect();
        }
        weights.iter_mut().for_each(|w| *w = (*w).div_ceil(2));
    }
}

fn huffman_depths(weights: &[u64]) -> Vec<u8> {
    let n = weights.len();
    // Nodes 0..n are leaves; later nodes are merges. parent[i] links upward.
    let mut parent = vec![usize::MAX; n];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = weights.iter().enumerate().map(|(i, &w)| Reverse((w, i))).collect();
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().expect("len > 1");
        let Reverse((wb, b)) = heap.pop().expect("len > 1");
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((wa + wb, id)));
    }
    (0..n)
        .map(|mut i| {
            let mut depth = 0u8;
            while parent[i] != usize::MAX {
                i = parent[i];
                depth = depth.saturating_add(1);
            }
            depth
        })
        .collect()
}

/// Canonical codes for `(symbol, length)` pairs.
fn canonical_codes(lengths: &[(u32, u8)]) -> BTreeMap<u32, (u32, u8)> {
    let mut order: Vec<(u8, u32)> = lengths.iter().map(|&(s, l)| (l, s)).collect();
    order.sort_unstable();
    let mut codes = BTreeMap::new();
    let mut code = 0u32;
    let mut prev = order.first().map_or(0, |&(l, _)| l);
    for (i, &(len, sym)) in order.iter().enumerate() {
        if i > 0 {
            code = (code + 1) << (len - prev);
        }
        prev = len;
        codes.insert(sym, (code, len));
    }
    codes
}

struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    fn push(&mut self, code: u32, len: u8) {
        for k in (0..len).rev() {
            if self.bits % 8 == 0 {
                self.bytes.push(0);
            }
            if (code >> k) & 1 == 1 {
                *self.bytes.last_mut().expect("pushed above") |= 0x80 >> (self.bits % 8);
            }
            self.bits += 1;
        }
    }
}

/// Encodes `codes` (each < 2^16) into a self-describing stream.
pub fn entropy_encode(codes: &[u32]) -> Result<Vec<u8>> {
    if let Some(c) = codes.iter().find(|&&c| c > u16::MAX as u32) {
        return Err(usage_err!("symbol {c} exceeds 16 bits"));
    }
    let mut freqs = BTreeMap::new();
    for &c in codes {
        *freqs.entry(c).or_insert(0u64) += 1;
    }
    let lengths = code_lengths(&freqs);
    let table = canonical_codes(&lengths);
    let mut out = Vec::new();
    out.extend((codes.len() as u32).to_le_bytes());
    out.extend((lengths.len() as u32).to_le_bytes());
    for &(sym, len) in &lengths {
        out.extend((sym as u16).to_le_bytes());
        out.push(len);
    }
    let mut w = BitWriter { bytes: vec![], bits: 0 };
    if lengths.len() > 1 {
        for c in codes {
            let (code, len) = table[c];
            w.push(code, len);
        }
    }
    out.extend(w.bits.to_le_bytes());
    out.extend(w.bytes);
    let crc = crc32fast::hash(&out);
    out.extend(crc.to_le_bytes());
    Ok(out)
}

/// Length in bytes of the stream starting at `bytes[0]`, without decoding it.
pub fn stream_len(bytes: &[u8]) -> Result<usize> {
    let table = read_u32(bytes, 4)? as usize;
    let bits_at = 8 + 3 * table;
    let bits = u64::from_le_bytes(slice(bytes, bits_at, 8)?.try_into().expect("8 bytes"));
    Ok(bits_at + 8 + bits.div_ceil(8) as usize + 4)
}

fn slice(bytes: &[u8], at: usize, n: usize) -> Result<&[u8]> {
    bytes
        .get(at..at + n)
        .ok_or_else(|| format_err!("entropy stream truncated at byte {at}"))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    Ok(u32::from_le_bytes(slice(bytes, at, 4)?.try_into().expect("4 bytes")))
}

/// Decodes one stream produced by [`entropy_encode`]; `bytes` may extend past it.
pub fn entropy_decode(bytes: &[u8]) -> Result<Vec<u32>> {
    let total = stream_len(bytes)?;
    let body = slice(bytes, 0, total - 4)?;
    let stored = read_u32(bytes, total - 4)?;
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum {
            record: "entropy stream".into(),
            stored,
            computed,
        });
    }
    let count = read_u32(body, 0)? as usize;
    let table_len = read_u32(body, 4)? as usize;
    let lengths: Vec<(u32, u8)> = (0..table_len)
        .map(|i| {
            let e = &body[8 + 3 * i..8 + 3 * i + 3];
            (u16::from_le_bytes([e[0], e[1]]) as u32, e[2])
        })
        .collect();
    let payload_bits = u64::from_le_bytes(body[8 + 3 * table_len..16 + 3 * table_len].try_into().expect("8 bytes"));
    let payload = &body[16 + 3 * table_len..];
    match lengths.len() {
        0 if count == 0 => return Ok(vec![]),
        1 => return Ok(vec![lengths[0].0; count]),
        0 => return Err(format_err!("entropy stream has {count} symbols but an empty table")),
        _ => {}
    }
    if lengths.iter().any(|&(_, l)| l == 0 || l > MAX_CODE_LEN) {
        return Err(format_err!("entropy stream has an invalid code length"));
    }
    let mut by_code: BTreeMap<(u8, u32), u32> = BTreeMap::new();
    for (sym, (code, len)) in canonical_codes(&lengths) {
        by_code.insert((len, code), sym);
    }
    let mut out = Vec::with_capacity(count);
    let (mut code, mut len) = (0u32, 0u8);
    for bit in 0..payload_bits {
        let b = (payload[(bit / 8) as usize] >> (7 - bit % 8)) & 1;
        code = (code << 1) | b as u32;
        len += 1;
        if let Some(&sym) = by_code.get(&(len, code)) {
            out.push(sym);
            code = 0;
            len = 0;
        } else if len >= MAX_CODE_LEN {
            return Err(format_err!("entropy stream contains an invalid code"));
        }
    }
    if out.len() != count || len != 0 {
        return Err(format_err!("entropy stream decoded {} of {count} symbols", out.len()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [0usize, 1, 2, 17, 1000] {
            let codes: Vec<u32> = (0..n).map(|_| rng.gen_range(0..256)).collect();
            let bytes = entropy_encode(&codes).unwrap();
            assert_eq!(entropy_decode(&bytes).unwrap(), codes);
            assert_eq!(stream_len(&bytes).unwrap(), bytes.len());
        }
    }

    #[test]
    fn single_symbol_is_count_only() {
        let bytes = entropy_encode(&[9; 500]).unwrap();
        // count + table size + one entry + bit length + crc, no payload
        assert_eq!(bytes.len(), 4 + 4 + 3 + 8 + 4);
        assert_eq!(entropy_decode(&bytes).unwrap(), vec![9; 500]);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = entropy_encode(&[1, 2, 3, 1, 1, 2]).unwrap();
        let i = bytes.len() - 5;
        bytes[i] ^= 1;
        assert!(matches!(entropy_decode(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn canonical_codes_are_prefix_free() {
        let freqs: BTreeMap<u32, u64> = [(0, 40), (1, 30), (2, 20), (3, 5), (4, 5)].into_iter().collect();
        let lengths = code_lengths(&freqs);
        let kraft: f64 = lengths.iter().map(|&(_, l)| 0.5f64.powi(l as i32)).sum();
        assert!((kraft - 1.0).abs() < 1e-12);
        let codes: Vec<(u32, u8)> = canonical_codes(&lengths).into_values().collect();
        for (i, &(a, la)) in codes.iter().enumerate() {
            for &(b, lb) in &codes[i + 1..] {
                let l = la.min(lb);
                assert_ne!(a >> (la - l), b >> (lb - l));
            }
        }
    }

    #[test]
    fn long_tails_are_length_limited() {
        // Fibonacci frequencies force a maximally skewed tree.
        let mut f = vec![1u64, 1];
        while f.len() < 40 {
            f.push(f[f.len() - 1] + f[f.len() - 2]);
        }
        let freqs: BTreeMap<u32, u64> = f.iter().enumerate().map(|(i, &w)| (i as u32, w)).collect();
        assert!(code_lengths(&freqs).iter().all(|&(_, l)| l <= MAX_CODE_LEN));
    }
}
