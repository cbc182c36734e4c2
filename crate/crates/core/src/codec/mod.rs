//! Compression of a trained representation: magnitude pruning, per-channel
//! affine quantization, canonical Huffman coding, and the `.dnvc` container.

mod container;
pub mod huffman;
pub mod prune;
pub mod quant;

pub use container::{CompressedArtifact, SectionSizes, TensorRecord, DNVC_MAGIC};
pub use huffman::{entropy_decode, entropy_encode};
pub use prune::{magnitude_masks, prune};
pub use quant::{quantize, Quantized};

use crate::config::config_hash;
use crate::error::{config_err, dim_err, usage_err, Result};
use crate::model::{DnervModel, FrameEmbeddings, ModelConfig};
use crate::tensor::Tensor;

/// Seed used to rebuild the (unused) encoders of a decompressed model.
pub const DECOMPRESSED_SEED: u64 = 0;

/// Number of quantization groups for a tensor: one per slice along the first
/// axis (output channel of a conv weight, channel of an embedding), or one for
/// vectors.
pub fn quantization_groups(shape: &[usize]) -> usize {
    match shape {
        [c, _, ..] if *c > 0 => *c,
        _ => 1,
    }
}

fn record(name: String, t: &Tensor, mask: Option<Vec<bool>>, bits: u8) -> Result<TensorRecord> {
    let groups = quantization_groups(t.shape());
    let run = (t.len() / groups).max(1);
    let mut ranges = Vec::with_capacity(groups);
    let mut codes = Vec::with_capacity(t.len());
    for (g, chunk) in t.data().chunks(run).enumerate() {
        let kept: Vec<f64> = match &mask {
            Some(m) => chunk.iter().zip(&m[g * run..]).filter(|(_, &k)| k).map(|(&v, _)| v).collect(),
            None => chunk.to_vec(),
        };
        let q = quantize(&kept, bits)?;
        ranges.push((q.scale, q.offset));
        codes.extend(q.codes);
    }
    if ranges.is_empty() {
        ranges.push((0.0, 0.0));
    }
    Ok(TensorRecord {
        name,
        shape: t.shape().to_vec(),
        ranges,
        survivors: mask,
        codes,
    })
}

pub fn content_record_name(frame: usize) -> String {
    format!("frame{frame:06}.content")
}

pub fn diff_record_name(frame: usize) -> String {
    format!("frame{frame:06}.diff")
}

/// Prunes `ratio` of the decoder and fusion weights, then quantizes those
/// tensors and every embedding at `bits`, with one range per channel.
pub fn compress_model(
    model: &DnervModel,
    embeddings: &[FrameEmbeddings],
    bits: u8,
    prune_ratio: f64,
) -> Result<CompressedArtifact> {
    quant::check_bits(bits)?;
    if embeddings.is_empty() {
        return Err(usage_err!("nothing to compress: no frame embeddings"));
    }
    let mut pruned = model.clone();
    let masks = prune(&mut pruned, prune_ratio)?;
    let mut weights = Vec::new();
    for (e, mask) in pruned.params.entries().iter().zip(masks) {
        if e.group.is_representation() {
            let mask = mask.filter(|m| m.iter().any(|&k| !k));
            weights.push(record(e.name.clone(), &e.value, mask, bits)?);
        }
    }
    weights.sort_by(|a, b| a.name.cmp(&b.name));
    let mut records = Vec::new();
    for (t, emb) in embeddings.iter().enumerate() {
        records.push(record(content_record_name(t), &emb.content, None, bits)?);
        if let Some(d) = &emb.diff {
            records.push(record(diff_record_name(t), d, None, bits)?);
        }
    }
    let cfg = &model.config;
    Ok(CompressedArtifact {
        config: cfg.clone(),
        height: cfg.height as u32,
        width: cfg.width as u32,
        frames: embeddings.len() as u32,
        bits,
        weights,
        embeddings: records,
    })
}

/// Rebuilds the decoder (with quantized, pruned weights) and the embeddings.
/// The encoders are not stored; the returned model carries freshly seeded
/// encoder weights. With `expected` set, the artifact must have been built
/// for exactly that config.
pub fn decompress(
    artifact: &CompressedArtifact,
    expected: Option<&ModelConfig>,
) -> Result<(DnervModel, Vec<FrameEmbeddings>)> {
    if let Some(cfg) = expected {
        if config_hash(cfg) != artifact.config_hash() {
            return Err(config_err!("artifact was compressed for a different model config"));
        }
    }
    let mut model = DnervModel::new(artifact.config.clone(), DECOMPRESSED_SEED)?;
    let mut seen = 0;
    for e in model.params.entries_mut().iter_mut().filter(|e| e.group.is_representation()) {
        let r = artifact
            .weights
            .iter()
            .find(|r| r.name == e.name)
            .ok_or_else(|| dim_err!("artifact lacks tensor {}", e.name))?;
        if r.shape != e.value.shape() {
            return Err(dim_err!("{}: artifact shape {:?}, model {:?}", e.name, r.shape, e.value.shape()));
        }
        e.value = Tensor::new(r.shape.clone(), r.values())?;
        seen += 1;
    }
    if seen != artifact.weights.len() {
        return Err(dim_err!("artifact holds {} weight tensors, model has {seen}", artifact.weights.len()));
    }
    let find = |name: &str| artifact.embeddings.iter().find(|r| r.name == name);
    let embeddings = (0..artifact.frames as usize)
        .map(|t| {
            let c = find(&content_record_name(t)).ok_or_else(|| dim_err!("artifact lacks frame {t} content"))?;
            let d = find(&diff_record_name(t)).map(|r| Tensor::new(r.shape.clone(), r.values())).transpose()?;
            Ok(FrameEmbeddings {
                content: Tensor::new(c.shape.clone(), c.values())?,
                diff: d,
            })
        })
        .collect::<Result<_>>()?;
    Ok((model, embeddings))
}

/// Bits per pixel of a representation of `frames` frames of `height × width`.
pub fn compute_bpp(total_bits: u64, frames: usize, height: usize, width: usize) -> Result<f64> {
    let pixels = frames * height * width;
    if pixels == 0 {
        return Err(usage_err!("bpp over zero pixels (T={frames}, H={height}, W={width})"));
    }
    Ok(total_bits as f64 / pixels as f64)
}

/// Pre-entropy-coding bpp: every weight and embedding value at `bits` bits.
pub fn uncoded_bpp(
    weight_count: usize,
    embedding_values_per_frame: usize,
    bits: u32,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<f64> {
    let total = (weight_count + frames * embedding_values_per_frame) as u64 * bits as u64;
    compute_bpp(total, frames, height, width)
}

/// Embedding values stored per frame for `cfg`.
pub fn embedding_values_per_frame(cfg: &ModelConfig) -> usize {
    let c: usize = cfg.content_embedding_shape().iter().product();
    c + cfg.diff_embedding_shape().map_or(0, |d| d.iter().product())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (DnervModel, Vec<FrameEmbeddings>) {
        let model = DnervModel::new(ModelConfig::preset("tiny-64x128").unwrap(), 5).unwrap();
        let emb = (0..3)
            .map(|t| FrameEmbeddings {
                content: Tensor::from_fn(model.config.content_embedding_shape(), |i| ((i + t) % 7) as f64 * 0.1 - 0.3),
                diff: model.config.diff_embedding_shape().map(|s| Tensor::from_fn(s, |i| ((i * 3 + t) % 5) as f64 * 0.01)),
            })
            .collect();
        (model, emb)
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let (model, emb) = tiny();
        let art = compress_model(&model, &emb, 8, 0.1).unwrap();
        let bytes = art.to_bytes().unwrap();
        let back = CompressedArtifact::from_bytes(&bytes).unwrap();
        assert_eq!(back, art);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let sizes = CompressedArtifact::section_sizes(&bytes).unwrap();
        assert_eq!(sizes.total_bits(), 8 * bytes.len() as u64);
    }

    #[test]
    fn decompressed_weights_are_dequantized_codes() {
        let (model, emb) = tiny();
        let art = compress_model(&model, &emb, 8, 0.0).unwrap();
        let (m2, e2) = decompress(&art, Some(&model.config)).unwrap();
        for e in m2.params.entries().iter().filter(|e| e.group.is_representation()) {
            let orig = model.params.find(&e.name).unwrap();
            let r = art.weights.iter().find(|r| r.name == e.name).unwrap();
            assert_eq!(r.ranges.len(), quantization_groups(e.value.shape()));
            let run = r.len() / r.ranges.len();
            for (i, (a, b)) in e.value.data().iter().zip(orig.value.data()).enumerate() {
                assert!((a - b).abs() <= r.ranges[i / run].0 / 2.0 + 1e-12);
            }
        }
        assert_eq!(e2.len(), 3);
        let other = ModelConfig { c_init: 31, ..model.config.clone() };
        assert!(matches!(decompress(&art, Some(&other)), Err(crate::Error::Config(_))));
    }

    #[test]
    fn bpp_guards_and_scales() {
        assert!(compute_bpp(100, 0, 4, 4).is_err());
        let a = uncoded_bpp(1000, 10, 8, 10, 8, 8).unwrap();
        let b = uncoded_bpp(1000, 10, 8, 20, 8, 8).unwrap();
        assert!(b < a);
    }
}
