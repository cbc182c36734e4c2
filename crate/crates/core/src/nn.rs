//! Parameter storage and the composite blocks the model is built from.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    ContentEncoder,
    DiffEncoder,
    Decoder,
    Fusion,
}

impl ParamGroup {
    /// Decoder and fusion weights make up the stored representation;
    /// encoders are training-time machinery.
    pub fn is_representation(self) -> bool {
        matches!(self, ParamGroup::Decoder | ParamGroup::Fusion)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub role: ParamRole,
    pub value: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Flat, ordered list of every learnable tensor in a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

/// Graph handles for every parameter of a store, indexed by [`ParamId`].
pub struct Bindings(Vec<Var>);

impl Bindings {
    /// Handles in store order; used to mix bound and constant parameters.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, role: ParamRole, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            role,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of scalar values in the groups accepted by `filter`.
    pub fn count(&self, filter: impl Fn(ParamGroup) -> bool) -> usize {
        self.entries
            .iter()
            .filter(|e| filter(e.group))
            .map(|e| e.value.len())
            .sum()
    }

    /// Places every parameter on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bindings {
        Bindings(
            self.entries
                .iter()
                .map(|e| g.leaf(e.value.clone(), trainable))
                .collect(),
        )
    }
}

/// Kaiming-uniform bound for a given fan-in.
fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

/// Shape description used to build a [`Conv2d`].
#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride 1, padding `kernel / 2`, one group.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            groups: 1,
            bias: true,
        }
    }

    pub fn param_count(&self) -> usize {
        let w = self.out_channels * (self.in_channels / self.groups) * self.kernel * self.kernel;
        w + if self.bias { self.out_channels } else { 0 }
    }
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: ParamGroup,
        spec: ConvSpec,
    ) -> Result<Self> {
        if spec.groups == 0
            || spec.in_channels % spec.groups != 0
            || spec.out_channels % spec.groups != 0
        {
            return Err(config_err!(
                "{name}: groups={} must divide {} and {}",
                spec.groups,
                spec.in_channels,
                spec.out_channels
            ));
        }
        let cin_g = spec.in_channels / spec.groups;
        let fan_in = cin_g * spec.kernel * spec.kernel;
        let bound = kaiming_bound(fan_in);
        let w = Tensor::uniform(
            [spec.out_channels, cin_g, spec.kernel, spec.kernel],
            -bound,
            bound,
            rng,
        );
        let weight = store.add(format!("{name}.weight"), group, ParamRole::Weight, w);
        let bias = spec.bias.then(|| {
            store.add(
                format!("{name}.bias"),
                group,
                ParamRole::Bias,
                Tensor::zeros([spec.out_channels]),
            )
        });
        Ok(Self {
            weight,
            bias,
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
            groups: spec.groups,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var) -> Result<Var> {
        g.conv2d(
            x,
            p.get(self.weight),
            self.bias.map(|b| p.get(b)),
            self.stride,
            self.padding,
            self.groups,
        )
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, channels: usize) -> Self {
        Self {
            gamma: store.add(
                format!("{name}.gamma"),
                group,
                ParamRole::NormScale,
                Tensor::full([channels], 1.0),
            ),
            beta: store.add(
                format!("{name}.beta"),
                group,
                ParamRole::NormShift,
                Tensor::zeros([channels]),
            ),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var) -> Result<Var> {
        g.layer_norm(x, p.get(self.gamma), p.get(self.beta), self.eps)
    }
}

/// Patchify downsample + norm, followed by one ConvNeXt block
/// (7×7 depthwise, norm, 1×1 expand ×4, GELU, 1×1 project, residual).
#[derive(Debug, Clone)]
pub struct ConvNextStage {
    pub index: usize,
    pub stride: usize,
    pub downsample: Conv2d,
    pub norm: LayerNorm,
    pub dwconv: Conv2d,
    pub block_norm: LayerNorm,
    pub expand: Conv2d,
    pub project: Conv2d,
}

impl ConvNextStage {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: ParamGroup,
        index: usize,
        in_channels: usize,
        channels: usize,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(config_err!("encoder stage {index}: stride must be ≥ 1"));
        }
        let downsample = Conv2d::new(
            store,
            rng,
            &format!("{name}.down"),
            group,
            ConvSpec {
                in_channels,
                out_channels: channels,
                kernel: stride,
                stride,
                padding: 0,
                groups: 1,
                bias: true,
            },
        )?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), group, channels);
        let dwconv = Conv2d::new(
            store,
            rng,
            &format!("{name}.dw"),
            group,
            ConvSpec {
                groups: channels,
                ..ConvSpec::same(channels, channels, 7)
            },
        )?;
        let block_norm = LayerNorm::new(store, &format!("{name}.block_norm"), group, channels);
        let expand = Conv2d::new(
            store,
            rng,
            &format!("{name}.expand"),
            group,
            ConvSpec::same(channels, 4 * channels, 1),
        )?;
        let project = Conv2d::new(
            store,
            rng,
            &format!("{name}.project"),
            group,
            ConvSpec::same(4 * channels, channels, 1),
        )?;
        Ok(Self {
            index,
            stride,
            downsample,
            norm,
            dwconv,
            block_norm,
            expand,
            project,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var) -> Result<Var> {
        let (_, h, w) = g.value(x).chw()?;
        if h % self.stride != 0 || w % self.stride != 0 {
            return Err(config_err!(
                "encoder stage {}: input {h}x{w} not divisible by stride {}",
                self.index,
                self.stride
            ));
        }
        let x = self.downsample.forward(g, p, x)?;
        let x = self.norm.forward(g, p, x)?;
        let y = self.dwconv.forward(g, p, x)?;
        let y = self.block_norm.forward(g, p, y)?;
        let y = self.expand.forward(g, p, y)?;
        let y = g.gelu(y)?;
        let y = self.project.forward(g, p, y)?;
        g.add(x, y)
    }
}

/// k×k conv to `C_out·s²` channels, pixel shuffle by `s`, GELU.
#[derive(Debug, Clone)]
pub struct NervBlock {
    pub conv: Conv2d,
    pub factor: usize,
}

impl NervBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: ParamGroup,
        in_channels: usize,
        out_channels: usize,
        factor: usize,
        kernel: usize,
    ) -> Result<Self> {
        if factor == 0 || kernel % 2 == 0 {
            return Err(config_err!(
                "{name}: need factor ≥ 1 and an odd kernel, got factor {factor}, kernel {kernel}"
            ));
        }
        let conv = Conv2d::new(
            store,
            rng,
            &format!("{name}.conv"),
            group,
            ConvSpec::same(in_channels, out_channels * factor * factor, kernel),
        )?;
        Ok(Self { conv, factor })
    }

    pub fn spec(in_channels: usize, out_channels: usize, factor: usize, kernel: usize) -> ConvSpec {
        ConvSpec::same(in_channels, out_channels * factor * factor, kernel)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var) -> Result<Var> {
        let (c, _, _) = g.value(x).chw()?;
        if c != self.conv.in_channels {
            return Err(config_err!(
                "NeRV block expects {} channels, got {c}",
                self.conv.in_channels
            ));
        }
        let y = self.conv.forward(g, p, x)?;
        let y = g.pixel_shuffle(y, self.factor)?;
        g.gelu(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stage_halves_spatial_dims() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stage = ConvNextStage::new(&mut store, &mut rng, "s", ParamGroup::ContentEncoder, 0, 3, 8, 2).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::uniform([3, 8, 8], 0.0, 1.0, &mut rng));
        let y = stage.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(y).shape(), &[8, 4, 4]);
    }

    #[test]
    fn stage_rejects_indivisible_input() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stage = ConvNextStage::new(&mut store, &mut rng, "s", ParamGroup::ContentEncoder, 3, 3, 4, 2).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::zeros([3, 7, 8]));
        let err = stage.forward(&mut g, &p, x).unwrap_err().to_string();
        assert!(err.contains("stage 3"), "{err}");
    }

    #[test]
    fn zeroed_block_leaves_post_norm_input() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stage = ConvNextStage::new(&mut store, &mut rng, "s", ParamGroup::DiffEncoder, 0, 3, 4, 2).unwrap();
        for conv in [&stage.dwconv, &stage.expand, &stage.project] {
            store.get_mut(conv.weight).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::uniform([3, 8, 8], 0.0, 1.0, &mut rng));
        let out = stage.forward(&mut g, &p, x).unwrap();
        let d = stage.downsample.forward(&mut g, &p, x).unwrap();
        let n = stage.norm.forward(&mut g, &p, d).unwrap();
        assert_eq!(g.value(out), g.value(n));
    }

    #[test]
    fn nerv_block_shape_and_zero_weights() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let block = NervBlock::new(&mut store, &mut rng, "b", ParamGroup::Decoder, 4, 2, 3, 3).unwrap();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::uniform([4, 2, 2], -1.0, 1.0, &mut rng));
        let y = block.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 6, 6]);

        store.get_mut(block.conv.weight).data_mut().fill(0.0);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::uniform([4, 2, 2], -1.0, 1.0, &mut rng));
        let y = block.forward(&mut g, &p, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let wrong = g.constant(Tensor::zeros([3, 2, 2]));
        assert!(matches!(block.forward(&mut g, &p, wrong), Err(crate::Error::Config(_))));
    }

    #[test]
    fn conv_spec_counts_params() {
        assert_eq!(ConvSpec::same(2, 3, 1).param_count(), 9);
    }
}
