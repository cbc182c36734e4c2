//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! preset = tiny-64x128
//! c_init = 40
//! content_strides = 4,2,2,2
//! epochs = 50
//! seed = 7
//! ```
//!
//! Keys mirror the fields of [`ModelConfig`] and [`TrainConfig`]. With a
//! `preset` the remaining keys override it; without one every model key is
//! required. Unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{config_err, Error, Result};
use crate::model::{default_decoder_kernels, DiffVariant, FusionVariant, ModelConfig};
use crate::train::{Loss, Precision, TrainConfig};

pub const MODEL_KEYS: &[&str] = &[
    "height",
    "width",
    "content_strides",
    "diff_strides",
    "content_embed_channels",
    "diff_embed_channels",
    "c_init",
    "reduction",
    "fusion_variant",
    "fusion_stage",
    "diff_variant",
    "ccu_kernel",
    "decoder_kernels",
    "encoder_width",
];

pub const TRAIN_KEYS: &[&str] = &["epochs", "base_lr", "loss", "alpha", "seed", "eval_every", "precision"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err!("line {}: expected key = value, got {raw:?}", n + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k != "preset" && !MODEL_KEYS.contains(&k) && !TRAIN_KEYS.contains(&k) {
            return Err(config_err!("line {}: unknown key {k:?}", n + 1));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(config_err!("line {}: key {k:?} given twice", n + 1));
        }
    }
    Ok(map)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| config_err!("{key}: cannot parse {v:?}"))
}

fn list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Applies model keys from `map` on top of `base`.
fn model_from(map: &BTreeMap<String, String>, base: Option<ModelConfig>) -> Result<ModelConfig> {
    let get = |k: &str| map.get(k).map(String::as_str);
    let mut cfg = match base {
        Some(b) => b,
        None => {
            let missing: Vec<_> = MODEL_KEYS
                .iter()
                .filter(|k| **k != "decoder_kernels" && !map.contains_key(**k))
                .collect();
            if !missing.is_empty() {
                return Err(config_err!("no preset given and model keys missing: {missing:?}"));
            }
            ModelConfig::preset("tiny-64x128")?
        }
    };
    let strides_changed = get("content_strides").is_some();
    for (k, v) in map {
        let v = v.as_str();
        match k.as_str() {
            "height" => cfg.height = num(k, v)?,
            "width" => cfg.width = num(k, v)?,
            "content_strides" => cfg.content_strides = list(k, v)?,
            "diff_strides" => cfg.diff_strides = list(k, v)?,
            "content_embed_channels" => cfg.content_embed_channels = num(k, v)?,
            "diff_embed_channels" => cfg.diff_embed_channels = num(k, v)?,
            "c_init" => cfg.c_init = num(k, v)?,
            "reduction" => cfg.reduction = num(k, v)?,
            "fusion_variant" => cfg.fusion_variant = FusionVariant::parse(v)?,
            "fusion_stage" => cfg.fusion_stage = num(k, v)?,
            "diff_variant" => cfg.diff_variant = DiffVariant::parse(v)?,
            "ccu_kernel" => cfg.ccu_kernel = num(k, v)?,
            "decoder_kernels" => cfg.decoder_kernels = list(k, v)?,
            "encoder_width" => cfg.encoder_width = num(k, v)?,
            _ => {}
        }
    }
    if strides_changed && get("decoder_kernels").is_none() {
        cfg.decoder_kernels = default_decoder_kernels(cfg.content_strides.len());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_from(map: &BTreeMap<String, String>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (k, v) in map {
        let v = v.as_str();
        match k.as_str() {
            "epochs" => cfg.epochs = num(k, v)?,
            "base_lr" => cfg.base_lr = num(k, v)?,
            "loss" => cfg.loss = Loss::parse(v)?,
            "alpha" => cfg.alpha = num(k, v)?,
            "seed" => cfg.seed = num(k, v)?,
            "eval_every" => cfg.eval_every = num(k, v)?,
            "precision" => cfg.precision = Precision::parse(v)?,
            _ => {}
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_pairs(text)?;
        let base = map.get("preset").map(|p| ModelConfig::preset(p)).transpose()?;
        Ok(Self {
            model: model_from(&map, base)?,
            train: train_from(&map)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| config_err!("{}: {e}", path.display()))
    }

    pub fn to_text(&self) -> String {
        let mut s = model_to_text(&self.model);
        s.push_str(&train_to_text(&self.train));
        s
    }
}

/// Canonical text for a model config: every key, fixed order.
pub fn model_to_text(cfg: &ModelConfig) -> String {
    let mut s = String::new();
    let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("writing to a String");
    put("height", cfg.height.to_string());
    put("width", cfg.width.to_string());
    put("content_strides", join(&cfg.content_strides));
    put("diff_strides", join(&cfg.diff_strides));
    put("content_embed_channels", cfg.content_embed_channels.to_string());
    put("diff_embed_channels", cfg.diff_embed_channels.to_string());
    put("c_init", cfg.c_init.to_string());
    put("reduction", format!("{:?}", cfg.reduction));
    put("fusion_variant", cfg.fusion_variant.name().into());
    put("fusion_stage", cfg.fusion_stage.to_string());
    put("diff_variant", cfg.diff_variant.name().into());
    put("ccu_kernel", cfg.ccu_kernel.to_string());
    put("decoder_kernels", join(&cfg.decoder_kernels));
    put("encoder_width", cfg.encoder_width.to_string());
    s
}

pub fn train_to_text(cfg: &TrainConfig) -> String {
    format!(
        "epochs = {}\nbase_lr = {:?}\nloss = {}\nalpha = {:?}\nseed = {}\neval_every = {}\nprecision = {}\n",
        cfg.epochs,
        cfg.base_lr,
        cfg.loss.name(),
        cfg.alpha,
        cfg.seed,
        cfg.eval_every,
        cfg.precision.name()
    )
}

/// Parses the output of [`model_to_text`] (no preset, every key present).
pub fn model_from_text(text: &str) -> Result<ModelConfig> {
    let map = parse_pairs(text)?;
    if let Some(k) = map.keys().find(|k| !MODEL_KEYS.contains(&k.as_str())) {
        return Err(config_err!("model config text contains non-model key {k:?}"));
    }
    model_from(&map, None)
}

/// SHA-256 of the canonical model text.
pub fn config_hash(cfg: &ModelConfig) -> [u8; 32] {
    Sha256::digest(model_to_text(cfg).as_bytes()).into()
}
