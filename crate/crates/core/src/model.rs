//! The two-stream network: content and diff encoders, fusion, and the
//! NeRV-block decoder.
//!
//! The stored representation of a video is its per-frame embeddings plus
//! the decoder and fusion weights. Encoders only exist to produce those
//! embeddings during training and evaluation.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{config_err, dim_err, Result};
use crate::nn::{Bindings, Conv2d, ConvNextStage, ConvSpec, NervBlock, ParamGroup, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionVariant {
    /// `s = b̃ + z`
    Sum,
    /// `s = Conv(b̃) + z`
    Conv,
    /// `s = Conv1x1(concat[b̃, z])`
    Concat,
    /// Gated collaborative content unit.
    Ccu,
    /// No diff branch (hybrid baseline).
    None,
}

/// Which temporal differences feed the diff encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffVariant {
    Backward,
    Forward,
    Central,
    /// `concat[y_t − y_{t−1}, y_{t+1} − y_t]`
    ConcatBf,
    /// `ConcatBf` plus the second difference `y_{t+1} − 2y_t + y_{t−1}`.
    ConcatBfSecond,
    None,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 5] = [Self::Sum, Self::Conv, Self::Concat, Self::Ccu, Self::None];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sum => "sum",
            Self::Conv => "conv",
            Self::Concat => "concat",
            Self::Ccu => "ccu",
            Self::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| config_err!("unknown fusion variant {s:?}"))
    }
}

impl DiffVariant {
    pub const ALL: [DiffVariant; 6] = [
        Self::Backward,
        Self::Forward,
        Self::Central,
        Self::ConcatBf,
        Self::ConcatBfSecond,
        Self::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Backward => "backward",
            Self::Forward => "forward",
            Self::Central => "central",
            Self::ConcatBf => "concat_bf",
            Self::ConcatBfSecond => "concat_bf_second",
            Self::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| config_err!("unknown diff variant {s:?}"))
    }

    /// Channels of the diff-encoder input.
    pub fn channels(self) -> usize {
        match self {
            Self::Backward | Self::Forward | Self::Central => 3,
            Self::ConcatBf => 6,
            Self::ConcatBfSecond => 9,
            Self::None => 0,
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub content_strides: Vec<usize>,
    pub diff_strides: Vec<usize>,
    pub content_embed_channels: usize,
    pub diff_embed_channels: usize,
    pub c_init: usize,
    pub reduction: f64,
    pub fusion_variant: FusionVariant,
    /// Decoder stage (1-based) at whose entry the diff branch is merged.
    pub fusion_stage: usize,
    pub diff_variant: DiffVariant,
    pub ccu_kernel: usize,
    pub decoder_kernels: Vec<usize>,
    /// Channel width of every encoder stage.
    pub encoder_width: usize,
}

pub const PRESET_NAMES: &[&str] = &[
    "tiny-64x128",
    "bunny-640x1280-0.35m",
    "bunny-640x1280-0.75m",
    "bunny-640x1280-1.5m",
    "bunny-640x1280-3m",
    "uvg-480x960",
    "uvg-960x1920",
    "uvg-960x1920-1.58m",
    "uvg-960x1920-diff10x20",
];

/// Kernel ramp `1, 3, 5, 5, …` across decoder stages.
pub fn default_decoder_kernels(stages: usize) -> Vec<usize> {
    (0..stages).map(|i| (1 + 2 * i).min(5)).collect()
}

/// `floor(c / r)`, guarded against `c / r` landing a hair under an integer.
fn reduce_channels(c: usize, r: f64) -> usize {
    (c as f64 / r + 1e-9).floor() as usize
}

impl ModelConfig {
    fn base(
        height: usize,
        width: usize,
        content_strides: &[usize],
        diff_strides: &[usize],
        c_init: usize,
        ccu_kernel: usize,
    ) -> Self {
        Self {
            height,
            width,
            content_strides: content_strides.to_vec(),
            diff_strides: diff_strides.to_vec(),
            content_embed_channels: 16,
            diff_embed_channels: 2,
            c_init,
            reduction: 1.2,
            fusion_variant: FusionVariant::Ccu,
            fusion_stage: 3,
            diff_variant: DiffVariant::ConcatBf,
            ccu_kernel,
            decoder_kernels: default_decoder_kernels(content_strides.len()),
            encoder_width: 64,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let bunny = |c_init| Self::base(640, 1280, &[5, 4, 4, 2, 2], &[2, 2, 2, 2], c_init, 3);
        let uvg = |c_init| Self::base(960, 1920, &[5, 4, 4, 3, 2], &[4, 3, 2], c_init, 1);
        let cfg = match name {
            "tiny-64x128" => Self {
                encoder_width: 32,
                ..Self::base(64, 128, &[4, 2, 2, 2], &[2, 2], 32, 3)
            },
            "bunny-640x1280-0.35m" => bunny(32),
            "bunny-640x1280-0.75m" => bunny(48),
            "bunny-640x1280-1.5m" => bunny(68),
            "bunny-640x1280-3m" => bunny(95),
            "uvg-480x960" => Self::base(480, 960, &[5, 4, 3, 2, 2], &[3, 2, 2], 110, 1),
            "uvg-960x1920" => uvg(92),
            "uvg-960x1920-1.58m" => uvg(68),
            "uvg-960x1920-diff10x20" => Self {
                diff_strides: vec![4, 4, 3, 2],
                fusion_stage: 2,
                ..uvg(92)
            },
            other => {
                return Err(config_err!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESET_NAMES.join(", ")
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The same architecture with the diff stream and fusion removed.
    pub fn baseline(&self) -> Self {
        Self {
            fusion_variant: FusionVariant::None,
            diff_variant: DiffVariant::None,
            ..self.clone()
        }
    }

    pub fn has_diff(&self) -> bool {
        self.diff_variant != DiffVariant::None
    }

    pub fn stages(&self) -> usize {
        self.content_strides.len()
    }

    /// Output channels `[C_1, …, C_n]` of the decoder stages.
    pub fn decoder_channels(&self) -> Vec<usize> {
        let mut c = self.c_init;
        self.content_strides
            .iter()
            .map(|_| {
                c = reduce_channels(c, self.reduction);
                c
            })
            .collect()
    }

    /// Channels entering decoder stage `k` (1-based).
    fn stage_input_channels(&self, k: usize) -> usize {
        if k == 1 {
            self.c_init
        } else {
            self.decoder_channels()[k - 2]
        }
    }

    pub fn content_embedding_shape(&self) -> [usize; 3] {
        let s: usize = self.content_strides.iter().product();
        [self.content_embed_channels, self.height / s, self.width / s]
    }

    pub fn diff_embedding_shape(&self) -> Option<[usize; 3]> {
        self.has_diff().then(|| {
            let s: usize = self.diff_strides.iter().product();
            [self.diff_embed_channels, self.height / s, self.width / s]
        })
    }

    /// `(C, H, W)` after each decoder stage.
    pub fn stage_dims(&self) -> Vec<[usize; 3]> {
        let [_, mut h, mut w] = self.content_embedding_shape();
        self.content_strides
            .iter()
            .zip(self.decoder_channels())
            .map(|(&s, c)| {
                h *= s;
                w *= s;
                [c, h, w]
            })
            .collect()
    }

    /// Shape of the content features entering the fusion stage.
    pub fn fusion_input_dims(&self) -> [usize; 3] {
        let k = self.fusion_stage;
        if k == 1 {
            let [_, h, w] = self.content_embedding_shape();
            [self.c_init, h, w]
        } else {
            self.stage_dims()[k - 2]
        }
    }

    /// Pixel-shuffle factor bringing the diff embedding to the fusion resolution.
    pub fn fusion_shuffle_factor(&self) -> Result<Option<usize>> {
        let Some([_, dh, dw]) = self.diff_embedding_shape() else {
            return Ok(None);
        };
        let [_, h, w] = self.fusion_input_dims();
        if h % dh != 0 || w % dw != 0 || h / dh != w / dw {
            return Err(config_err!(
                "fusion at stage {}: content features are {h}x{w} but the diff embedding is \
                 {dh}x{dw}; the required pixel-shuffle factor {h}/{dh} is not an integer ≥ 1",
                self.fusion_stage
            ));
        }
        Ok(Some(h / dh))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stages();
        if n == 0 || self.content_strides.contains(&0) || self.diff_strides.contains(&0) {
            return Err(config_err!("strides must be non-empty and ≥ 1"));
        }
        for (name, strides) in [("content", &self.content_strides), ("diff", &self.diff_strides)] {
            let p: usize = strides.iter().product();
            if self.height % p != 0 || self.width % p != 0 {
                return Err(config_err!(
                    "{name} strides {strides:?} (product {p}) do not divide {}x{}",
                    self.height,
                    self.width
                ));
            }
        }
        if self.decoder_kernels.len() != n {
            return Err(config_err!(
                "{} decoder kernels for {n} decoder stages",
                self.decoder_kernels.len()
            ));
        }
        if self.decoder_kernels.iter().any(|k| k % 2 == 0) || self.ccu_kernel % 2 == 0 {
            return Err(config_err!("decoder and CCU kernels must be odd"));
        }
        if !(self.reduction >= 1.0) {
            return Err(config_err!("reduction must be ≥ 1, got {}", self.reduction));
        }
        if self.decoder_channels().contains(&0) {
            return Err(config_err!(
                "C_init={} with r={} reduces to zero channels",
                self.c_init,
                self.reduction
            ));
        }
        if self.content_embed_channels == 0 || self.encoder_width == 0 || self.c_init == 0 {
            return Err(config_err!("channel counts must be positive"));
        }
        if (self.fusion_variant == FusionVariant::None) != (self.diff_variant == DiffVariant::None) {
            return Err(config_err!(
                "fusion_variant=none must go together with diff_variant=none (got {} / {})",
                self.fusion_variant.name(),
                self.diff_variant.name()
            ));
        }
        if self.has_diff() {
            if self.diff_embed_channels == 0 {
                return Err(config_err!("diff_embed_channels must be positive"));
            }
            if !(1..=n).contains(&self.fusion_stage) {
                return Err(config_err!(
                    "fusion_stage {} outside 1..={n}",
                    self.fusion_stage
                ));
            }
            self.fusion_shuffle_factor()?;
        }
        Ok(())
    }

    fn fusion_specs(&self) -> Result<Vec<ConvSpec>> {
        let Some(ps) = self.fusion_shuffle_factor()? else {
            return Ok(vec![]);
        };
        let [c, _, _] = self.fusion_input_dims();
        let d = self.diff_embed_channels;
        let k = self.ccu_kernel;
        let align = |out: usize| ConvSpec::same(d, out * ps * ps, 1);
        let no_bias = |s: ConvSpec| ConvSpec { bias: false, ..s };
        Ok(match self.fusion_variant {
            FusionVariant::None => vec![],
            FusionVariant::Sum => vec![align(c)],
            FusionVariant::Conv => vec![align(c), ConvSpec::same(c, c, k)],
            FusionVariant::Concat => vec![align(d), ConvSpec::same(c + d, c, 1)],
            FusionVariant::Ccu => vec![
                align(c),
                ConvSpec::same(c, c, k),
                no_bias(ConvSpec::same(c, c, k)),
                ConvSpec::same(c, c, k),
                no_bias(ConvSpec::same(c, c, k)),
            ],
        })
    }

    fn decoder_specs(&self) -> Vec<ConvSpec> {
        let mut specs = vec![ConvSpec::same(self.content_embed_channels, self.c_init, 1)];
        let channels = self.decoder_channels();
        for (k, (&s, &c_out)) in self.content_strides.iter().zip(&channels).enumerate() {
            specs.push(NervBlock::spec(
                self.stage_input_channels(k + 1),
                c_out,
                s,
                self.decoder_kernels[k],
            ));
        }
        specs.push(ConvSpec::same(*channels.last().expect("≥ 1 stage"), 3, 1));
        specs
    }

    /// Learnable values in decoder + fusion, i.e. the stored network.
    pub fn param_count(&self) -> Result<usize> {
        self.validate()?;
        Ok(self
            .decoder_specs()
            .iter()
            .chain(&self.fusion_specs()?)
            .map(ConvSpec::param_count)
            .sum())
    }

    pub fn shape_table(&self) -> Result<ShapeTable> {
        self.validate()?;
        Ok(ShapeTable {
            resolution: [self.height, self.width],
            content_embedding: self.content_embedding_shape(),
            diff_embedding: self.diff_embedding_shape(),
            channels: self.decoder_channels(),
            stage_dims: self.stage_dims(),
            fusion_stage: self.has_diff().then_some(self.fusion_stage),
            fusion_shuffle: self.fusion_shuffle_factor()?,
            param_count: self.param_count()?,
        })
    }
}

/// Embedding shapes, per-stage dims, channel schedule, and size of a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTable {
    pub resolution: [usize; 2],
    pub content_embedding: [usize; 3],
    pub diff_embedding: Option<[usize; 3]>,
    pub channels: Vec<usize>,
    pub stage_dims: Vec<[usize; 3]>,
    pub fusion_stage: Option<usize>,
    pub fusion_shuffle: Option<usize>,
    pub param_count: usize,
}

fn dims(d: &[usize]) -> String {
    d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("x")
}

impl fmt::Display for ShapeTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "resolution          {}", dims(&self.resolution))?;
        writeln!(f, "content embedding   {}", dims(&self.content_embedding))?;
        match self.diff_embedding {
            Some(d) => writeln!(f, "diff embedding      {}", dims(&d))?,
            None => writeln!(f, "diff embedding      none")?,
        }
        let ch: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        writeln!(f, "channels            [{}]", ch.join(","))?;
        for (i, d) in self.stage_dims.iter().enumerate() {
            writeln!(f, "stage {}             {}", i + 1, dims(d))?;
        }
        if let (Some(k), Some(ps)) = (self.fusion_stage, self.fusion_shuffle) {
            writeln!(f, "fusion              stage {k} entry, shuffle x{ps}")?;
        }
        write!(f, "params (dec+fusion) {}", self.param_count)
    }
}

/// Content (and optional diff) embedding of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbeddings {
    pub content: Tensor,
    pub diff: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub stages: Vec<ConvNextStage>,
    pub projection: Conv2d,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        group: ParamGroup,
        in_channels: usize,
        width: usize,
        strides: &[usize],
        out_channels: usize,
    ) -> Result<Self> {
        let mut stages = Vec::with_capacity(strides.len());
        let mut c = in_channels;
        for (i, &s) in strides.iter().enumerate() {
            stages.push(ConvNextStage::new(store, rng, &format!("{name}.stage{i}"), group, i, c, width, s)?);
            c = width;
        }
        let projection = Conv2d::new(store, rng, &format!("{name}.proj"), group, ConvSpec::same(width, out_channels, 1))?;
        Ok(Self { stages, projection })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bindings, mut x: Var) -> Result<Var> {
        for stage in &self.stages {
            x = stage.forward(g, p, x)?;
        }
        self.projection.forward(g, p, x)
    }
}

/// Gated fusion `s = u ⊙ v + (1 − v) ⊙ b̃` of diff features into content features.
#[derive(Debug, Clone)]
pub struct Ccu {
    pub align: Conv2d,
    pub shuffle: usize,
    pub w_ub: Conv2d,
    pub w_uz: Conv2d,
    pub w_vb: Conv2d,
    pub w_vz: Conv2d,
}

/// Intermediate values of one CCU evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CcuTrace {
    pub z: Var,
    pub u: Var,
    pub v: Var,
    pub s: Var,
}

/// Lifts the diff embedding to the fusion resolution: `GELU(PS(W ∗ b_D))`.
fn align_diff(
    g: &mut Graph,
    p: &Bindings,
    align: &Conv2d,
    shuffle: usize,
    b_diff: Var,
    target: [usize; 2],
) -> Result<Var> {
    let z = align.forward(g, p, b_diff)?;
    let z = g.pixel_shuffle(z, shuffle)?;
    let (_, h, w) = g.value(z).chw()?;
    if [h, w] != target {
        let (_, dh, dw) = g.value(b_diff).chw()?;
        return Err(config_err!(
            "diff features are {h}x{w} after shuffle x{shuffle} but content features are {}x{}; \
             a {dh}x{dw} diff embedding needs shuffle factor {}",
            target[0],
            target[1],
            target[0] as f64 / dh as f64
        ));
    }
    g.gelu(z)
}

impl Ccu {
    pub fn forward(&self, g: &mut Graph, p: &Bindings, b_diff: Var, b_tilde: Var) -> Result<Var> {
        Ok(self.trace(g, p, b_diff, b_tilde)?.s)
    }

    pub fn trace(&self, g: &mut Graph, p: &Bindings, b_diff: Var, b_tilde: Var) -> Result<CcuTrace> {
        let (_, h, w) = g.value(b_tilde).chw()?;
        let z = align_diff(g, p, &self.align, self.shuffle, b_diff, [h, w])?;
        let ub = self.w_ub.forward(g, p, b_tilde)?;
        let uz = self.w_uz.forward(g, p, z)?;
        let u_pre = g.add(ub, uz)?;
        let u = g.tanh(u_pre)?;
        let vb = self.w_vb.forward(g, p, b_tilde)?;
        let vz = self.w_vz.forward(g, p, z)?;
        let v_pre = g.add(vb, vz)?;
        let v = g.sigmoid(v_pre)?;
        let uv = g.mul(u, v)?;
        let keep = g.one_minus(v)?;
        let kept = g.mul(keep, b_tilde)?;
        let s = g.add(uv, kept)?;
        Ok(CcuTrace { z, u, v, s })
    }
}

#[derive(Debug, Clone)]
pub enum Fusion {
    None,
    Sum { align: Conv2d, shuffle: usize },
    Conv { align: Conv2d, shuffle: usize, content: Conv2d },
    Concat { align: Conv2d, shuffle: usize, project: Conv2d },
    Ccu(Ccu),
}

impl Fusion {
    pub fn variant(&self) -> FusionVariant {
        match self {
            Fusion::None => FusionVariant::None,
            Fusion::Sum { .. } => FusionVariant::Sum,
            Fusion::Conv { .. } => FusionVariant::Conv,
            Fusion::Concat { .. } => FusionVariant::Concat,
            Fusion::Ccu(_) => FusionVariant::Ccu,
        }
    }

    /// Merges diff features into the content features `b_content`.
    pub fn forward(&self, g: &mut Graph, p: &Bindings, b_content: Var, b_diff: Option<Var>) -> Result<Var> {
        let (_, h, w) = g.value(b_content).chw()?;
        let need_diff = || config_err!("fusion variant {} needs a diff embedding", self.variant().name());
        match self {
            Fusion::None => Ok(b_content),
            Fusion::Sum { align, shuffle } => {
                let z = align_diff(g, p, align, *shuffle, b_diff.ok_or_else(need_diff)?, [h, w])?;
                g.add(b_content, z)
            }
            Fusion::Conv { align, shuffle, content } => {
                let z = align_diff(g, p, align, *shuffle, b_diff.ok_or_else(need_diff)?, [h, w])?;
                let c = content.forward(g, p, b_content)?;
                g.add(c, z)
            }
            Fusion::Concat { align, shuffle, project } => {
                let z = align_diff(g, p, align, *shuffle, b_diff.ok_or_else(need_diff)?, [h, w])?;
                let cat = g.concat(&[b_content, z])?;
                project.forward(g, p, cat)
            }
            Fusion::Ccu(ccu) => ccu.forward(g, p, b_diff.ok_or_else(need_diff)?, b_content),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub stem: Conv2d,
    pub stages: Vec<NervBlock>,
    pub head: Conv2d,
}

#[derive(Debug, Clone)]
pub struct DnervModel {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: ParamStore,
    pub content_encoder: Encoder,
    pub diff_encoder: Option<Encoder>,
    pub fusion: Fusion,
    pub decoder: Decoder,
}

impl DnervModel {
    /// Builds the network with seeded Kaiming-uniform weights and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = &config;

        let content_encoder = Encoder::new(
            &mut store,
            &mut rng,
            "content_enc",
            ParamGroup::ContentEncoder,
            3,
            cfg.encoder_width,
            &cfg.content_strides,
            cfg.content_embed_channels,
        )?;
        let diff_encoder = if cfg.has_diff() {
            Some(Encoder::new(
                &mut store,
                &mut rng,
                "diff_enc",
                ParamGroup::DiffEncoder,
                cfg.diff_variant.channels(),
                cfg.encoder_width,
                &cfg.diff_strides,
                cfg.diff_embed_channels,
            )?)
        } else {
            None
        };

        let dec = ParamGroup::Decoder;
        let stem = Conv2d::new(&mut store, &mut rng, "dec.stem", dec, ConvSpec::same(cfg.content_embed_channels, cfg.c_init, 1))?;
        let channels = cfg.decoder_channels();
        let mut stages = Vec::with_capacity(cfg.stages());
        for k in 0..cfg.stages() {
            stages.push(NervBlock::new(
                &mut store,
                &mut rng,
                &format!("dec.stage{}", k + 1),
                dec,
                cfg.stage_input_channels(k + 1),
                channels[k],
                cfg.content_strides[k],
                cfg.decoder_kernels[k],
            )?);
        }
        let head = Conv2d::new(&mut store, &mut rng, "dec.head", dec, ConvSpec::same(*channels.last().expect("≥ 1 stage"), 3, 1))?;

        let fusion = Self::build_fusion(cfg, &mut store, &mut rng)?;
        Ok(Self {
            config,
            seed,
            params: store,
            content_encoder,
            diff_encoder,
            fusion,
            decoder: Decoder { stem, stages, head },
        })
    }

    fn build_fusion(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Fusion> {
        let Some(shuffle) = cfg.fusion_shuffle_factor()? else {
            return Ok(Fusion::None);
        };
        let specs = cfg.fusion_specs()?;
        let fu = ParamGroup::Fusion;
        let mut conv = |name: &str, spec: ConvSpec| Conv2d::new(store, rng, &format!("fusion.{name}"), fu, spec);
        Ok(match cfg.fusion_variant {
            FusionVariant::None => Fusion::None,
            FusionVariant::Sum => Fusion::Sum {
                align: conv("align", specs[0])?,
                shuffle,
            },
            FusionVariant::Conv => Fusion::Conv {
                align: conv("align", specs[0])?,
                shuffle,
                content: conv("content", specs[1])?,
            },
            FusionVariant::Concat => Fusion::Concat {
                align: conv("align", specs[0])?,
                shuffle,
                project: conv("project", specs[1])?,
            },
            FusionVariant::Ccu => Fusion::Ccu(Ccu {
                align: conv("align", specs[0])?,
                shuffle,
                w_ub: conv("w_ub", specs[1])?,
                w_uz: conv("w_uz", specs[2])?,
                w_vb: conv("w_vb", specs[3])?,
                w_vz: conv("w_vz", specs[4])?,
            }),
        })
    }

    /// Learnable values of decoder + fusion, counted from the instantiated tensors.
    pub fn representation_param_count(&self) -> usize {
        self.params.count(ParamGroup::is_representation)
    }

    pub fn encoder_param_count(&self) -> usize {
        self.params.count(|g| !g.is_representation())
    }

    fn check_inputs(&self, frame: &Tensor, diff: Option<&Tensor>) -> Result<()> {
        let cfg = &self.config;
        if frame.shape() != [3, cfg.height, cfg.width] {
            return Err(dim_err!(
                "frame shape {:?} does not match model resolution 3x{}x{}",
                frame.shape(),
                cfg.height,
                cfg.width
            ));
        }
        match (cfg.has_diff(), diff) {
            (true, Some(d)) => {
                let want = [cfg.diff_variant.channels(), cfg.height, cfg.width];
                if d.shape() != want {
                    return Err(dim_err!(
                        "diff input shape {:?}, expected {want:?} for variant {}",
                        d.shape(),
                        cfg.diff_variant.name()
                    ));
                }
            }
            (true, None) => return Err(dim_err!("model needs a diff input")),
            (false, _) => {}
        }
        Ok(())
    }

    /// Encodes on the graph; the baseline ignores `diff` entirely.
    pub fn encode_graph(&self, g: &mut Graph, p: &Bindings, frame: Var, diff: Option<Var>) -> Result<(Var, Option<Var>)> {
        self.check_inputs(g.value(frame), diff.map(|d| g.value(d)))?;
        let content = self.content_encoder.forward(g, p, frame)?;
        let diff = match (&self.diff_encoder, diff) {
            (Some(enc), Some(d)) => Some(enc.forward(g, p, d)?),
            _ => None,
        };
        Ok((content, diff))
    }

    pub fn decode_graph(&self, g: &mut Graph, p: &Bindings, content: Var, diff: Option<Var>) -> Result<Var> {
        let want = self.config.content_embedding_shape();
        if g.value(content).shape() != want {
            return Err(dim_err!(
                "content embedding shape {:?}, expected {want:?}",
                g.value(content).shape()
            ));
        }
        if let (Some(d), Some(want)) = (diff, self.config.diff_embedding_shape()) {
            if g.value(d).shape() != want {
                return Err(dim_err!("diff embedding shape {:?}, expected {want:?}", g.value(d).shape()));
            }
        }
        let dec = &self.decoder;
        let x = dec.stem.forward(g, p, content)?;
        let mut x = g.gelu(x)?;
        for (k, stage) in dec.stages.iter().enumerate() {
            if k + 1 == self.config.fusion_stage {
                x = self.fusion.forward(g, p, x, diff)?;
            }
            x = stage.forward(g, p, x)?;
        }
        let y = dec.head.forward(g, p, x)?;
        g.sigmoid(y)
    }

    pub fn forward_graph(&self, g: &mut Graph, p: &Bindings, frame: Var, diff: Option<Var>) -> Result<Var> {
        let (c, d) = self.encode_graph(g, p, frame, diff)?;
        self.decode_graph(g, p, c, d)
    }

    pub fn encode(&self, frame: &Tensor, diff: Option<&Tensor>) -> Result<FrameEmbeddings> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let f = g.constant(frame.clone());
        let d = diff.filter(|_| self.config.has_diff()).map(|d| g.constant(d.clone()));
        let (c, d) = self.encode_graph(&mut g, &p, f, d)?;
        Ok(FrameEmbeddings {
            content: g.value(c).clone(),
            diff: d.map(|d| g.value(d).clone()),
        })
    }

    pub fn decode(&self, emb: &FrameEmbeddings) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let c = g.constant(emb.content.clone());
        let d = match (&emb.diff, self.config.has_diff()) {
            (Some(d), true) => Some(g.constant(d.clone())),
            (None, true) => return Err(dim_err!("model needs a diff embedding")),
            _ => None,
        };
        let y = self.decode_graph(&mut g, &p, c, d)?;
        Ok(g.value(y).clone())
    }

    pub fn forward(&self, frame: &Tensor, diff: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let f = g.constant(frame.clone());
        let d = diff.filter(|_| self.config.has_diff()).map(|d| g.constant(d.clone()));
        let y = self.forward_graph(&mut g, &p, f, d)?;
        Ok(g.value(y).clone())
    }
}
