//! Central finite-difference checks of the autodiff engine.
//!
//! Every check differentiates `L = Σ r ⊙ f(θ)` for a fixed random `r` and
//! compares each sampled `∂L/∂θᵢ` with `(L(θ + h·eᵢ) − L(θ − h·eᵢ)) / 2h`.
//! The error of one coordinate is `|a − n| / max(|a|, |n|, floor)`; the floor
//! keeps coordinates with vanishing gradient from dividing noise by noise.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::metrics::ssim_graph;
use crate::model::{DiffVariant, DnervModel, FusionVariant, ModelConfig};
use crate::nn::{Bindings, ConvNextStage, NervBlock, ParamGroup, ParamStore};
use crate::tensor::Tensor;
use crate::train::{loss_l1_ssim, loss_l2};

pub const STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

type Build<'a> = dyn Fn(&mut Graph, &Bindings, &[Var]) -> Result<Var> + 'a;

/// Numerical vs analytic gradients of `build` with respect to every store
/// entry and every free input. `samples` limits the coordinates drawn per
/// tensor; `None` checks all of them.
pub fn check(
    name: &str,
    store: &ParamStore,
    inputs: &[Tensor],
    build: &Build,
    samples: Option<usize>,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = store.clone();
    let mut inputs = inputs.to_vec();

    let forward = |store: &ParamStore, inputs: &[Tensor], g: &mut Graph| -> Result<(Bindings, Vec<Var>, Var)> {
        let p = store.bind(g, true);
        let xs: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let y = build(g, &p, &xs)?;
        Ok((p, xs, y))
    };
    let mut g = Graph::new();
    let (p, xs, y) = forward(&store, &inputs, &mut g)?;
    let weights = Tensor::uniform(g.value(y).shape(), -1.0, 1.0, &mut rng);
    let objective = |g: &mut Graph, y: Var| -> Result<Var> {
        let r = g.constant(weights.clone());
        let ry = g.mul(r, y)?;
        Ok(g.sum(ry))
    };
    let loss = objective(&mut g, y)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = p
        .vars()
        .iter()
        .chain(&xs)
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
        .collect();

    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let (_, _, y) = forward(store, inputs, &mut g)?;
        let l = objective(&mut g, y)?;
        Ok(g.value(l).item())
    };
    let mut max_error = 0.0f64;
    let mut checked = 0;
    for (t, grad) in analytic.iter().enumerate() {
        let len = grad.len();
        let coords: Vec<usize> = match samples {
            Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        for i in coords {
            let orig = *coordinate(&mut store, &mut inputs, t, i);
            *coordinate(&mut store, &mut inputs, t, i) = orig + STEP;
            let plus = eval(&store, &inputs)?;
            *coordinate(&mut store, &mut inputs, t, i) = orig - STEP;
            let minus = eval(&store, &inputs)?;
            *coordinate(&mut store, &mut inputs, t, i) = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ERROR_FLOOR);
            max_error = max_error.max(err);
            checked += 1;
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        checked,
        max_error,
        tolerance,
    })
}

/// Element `i` of tensor `t`, counting store entries first, then inputs.
fn coordinate<'a>(store: &'a mut ParamStore, inputs: &'a mut [Tensor], t: usize, i: usize) -> &'a mut f64 {
    let n = store.len();
    if t < n {
        &mut store.entries_mut()[t].value.data_mut()[i]
    } else {
        &mut inputs[t - n].data_mut()[i]
    }
}

fn rand_t(rng: &mut ChaCha8Rng, shape: impl Into<Vec<usize>>, lo: f64, hi: f64) -> Tensor {
    Tensor::uniform(shape, lo, hi, rng)
}

/// Small decoder-with-fusion config used for per-variant checks.
pub fn small_fusion_config(fusion: FusionVariant) -> ModelConfig {
    let mut cfg = ModelConfig::preset("tiny-64x128").expect("built-in preset");
    cfg.height = 16;
    cfg.width = 32;
    cfg.content_strides = vec![2, 2, 2];
    cfg.diff_strides = vec![2, 2];
    cfg.decoder_kernels = vec![1, 3, 5];
    cfg.content_embed_channels = 4;
    cfg.c_init = 8;
    cfg.encoder_width = 8;
    cfg.fusion_variant = fusion;
    if fusion == FusionVariant::None {
        cfg.diff_variant = DiffVariant::None;
    }
    cfg
}

/// Every layer-level check.
pub fn check_layers(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let empty = ParamStore::new();
    let tol = LAYER_TOLERANCE;
    let mut out = Vec::new();
    let mut op = |name: &str, inputs: Vec<Tensor>, build: &Build, rng: &mut ChaCha8Rng| -> Result<()> {
        out.push(check(name, &empty, &inputs, build, None, tol, rng.gen())?);
        Ok(())
    };

    let convs: [(&str, [usize; 3], [usize; 4], usize, usize, usize); 5] = [
        ("conv3x3", [3, 6, 5], [4, 3, 3, 3], 1, 1, 1),
        ("conv_patchify", [3, 8, 8], [5, 3, 4, 4], 4, 0, 1),
        ("conv_grouped", [4, 5, 5], [6, 2, 3, 3], 2, 1, 2),
        ("conv_depthwise7", [3, 8, 9], [3, 1, 7, 7], 1, 3, 3),
        ("conv_pointwise", [5, 4, 4], [3, 5, 1, 1], 1, 0, 1),
    ];
    for (name, x, w, s, pad, groups) in convs {
        let inputs = vec![rand_t(&mut rng, x, -1.0, 1.0), rand_t(&mut rng, w, -1.0, 1.0), rand_t(&mut rng, [w[0]], -1.0, 1.0)];
        op(name, inputs, &|g, _, v| g.conv2d(v[0], v[1], Some(v[2]), s, pad, groups), &mut rng)?;
    }
    op("pixel_shuffle", vec![rand_t(&mut rng, [8, 3, 2], -1.0, 1.0)], &|g, _, v| g.pixel_shuffle(v[0], 2), &mut rng)?;
    op(
        "layer_norm",
        vec![rand_t(&mut rng, [4, 3, 3], -2.0, 2.0), rand_t(&mut rng, [4], 0.5, 1.5), rand_t(&mut rng, [4], -0.5, 0.5)],
        &|g, _, v| g.layer_norm(v[0], v[1], v[2], 1e-6),
        &mut rng,
    )?;
    op("gelu", vec![rand_t(&mut rng, [2, 3, 4], -3.0, 3.0)], &|g, _, v| g.gelu(v[0]), &mut rng)?;
    op("tanh", vec![rand_t(&mut rng, [2, 3, 4], -3.0, 3.0)], &|g, _, v| g.tanh(v[0]), &mut rng)?;
    op("sigmoid", vec![rand_t(&mut rng, [2, 3, 4], -3.0, 3.0)], &|g, _, v| g.sigmoid(v[0]), &mut rng)?;
    op("square", vec![rand_t(&mut rng, [2, 3, 4], -2.0, 2.0)], &|g, _, v| g.square(v[0]), &mut rng)?;
    op("abs", vec![rand_t(&mut rng, [2, 3, 4], 0.1, 2.0).map(|x| if x > 1.0 { x } else { -x })], &|g, _, v| g.abs(v[0]), &mut rng)?;
    op(
        "scale_shift",
        vec![rand_t(&mut rng, [2, 3, 4], -2.0, 2.0)],
        &|g, _, v| {
            let a = g.scale(v[0], -1.7)?;
            let b = g.add_scalar(a, 0.3)?;
            g.one_minus(b)
        },
        &mut rng,
    )?;
    let pair = |rng: &mut ChaCha8Rng| vec![rand_t(rng, [2, 3, 3], -1.0, 1.0), rand_t(rng, [2, 3, 3], 0.5, 2.0)];
    op("add", pair(&mut rng), &|g, _, v| g.add(v[0], v[1]), &mut rng)?;
    op("sub", pair(&mut rng), &|g, _, v| g.sub(v[0], v[1]), &mut rng)?;
    op("mul", pair(&mut rng), &|g, _, v| g.mul(v[0], v[1]), &mut rng)?;
    op("div", pair(&mut rng), &|g, _, v| g.div(v[0], v[1]), &mut rng)?;
    op("mul_shared", vec![rand_t(&mut rng, [2, 2, 2], -1.0, 1.0)], &|g, _, v| g.mul(v[0], v[0]), &mut rng)?;
    op(
        "concat",
        vec![rand_t(&mut rng, [2, 3, 3], -1.0, 1.0), rand_t(&mut rng, [1, 3, 3], -1.0, 1.0)],
        &|g, _, v| g.concat(&[v[0], v[1]]),
        &mut rng,
    )?;
    op("mean", vec![rand_t(&mut rng, [2, 3, 3], -1.0, 1.0)], &|g, _, v| Ok(g.mean(v[0])), &mut rng)?;
    let frames = |rng: &mut ChaCha8Rng| vec![rand_t(rng, [3, 12, 13], 0.0, 1.0), rand_t(rng, [3, 12, 13], 0.0, 1.0)];
    op("ssim", frames(&mut rng), &|g, _, v| ssim_graph(g, v[0], v[1]), &mut rng)?;
    op("loss_l2", frames(&mut rng), &|g, _, v| loss_l2(g, v[0], v[1]), &mut rng)?;
    op("loss_l1_ssim", frames(&mut rng), &|g, _, v| loss_l1_ssim(g, v[0], v[1], 0.7), &mut rng)?;

    let mut store = ParamStore::new();
    let stage = ConvNextStage::new(&mut store, &mut rng, "stage", ParamGroup::ContentEncoder, 0, 3, 4, 2)?;
    let x = vec![rand_t(&mut rng, [3, 8, 8], -1.0, 1.0)];
    out.push(check("convnext_stage", &store, &x, &|g, p, v| stage.forward(g, p, v[0]), Some(12), tol, rng.gen())?);

    let mut store = ParamStore::new();
    let block = NervBlock::new(&mut store, &mut rng, "block", ParamGroup::Decoder, 4, 3, 2, 3)?;
    let x = vec![rand_t(&mut rng, [4, 3, 4], -1.0, 1.0)];
    out.push(check("nerv_block", &store, &x, &|g, p, v| block.forward(g, p, v[0]), None, tol, rng.gen())?);

    for fusion in FusionVariant::ALL {
        let model = DnervModel::new(small_fusion_config(fusion), rng.gen())?;
        let cfg = &model.config;
        let mut inputs = vec![rand_t(&mut rng, cfg.content_embedding_shape(), -1.0, 1.0)];
        if let Some(d) = cfg.diff_embedding_shape() {
            inputs.push(rand_t(&mut rng, d, -1.0, 1.0));
        }
        let decoder_only = decoder_store(&model);
        let build = |g: &mut Graph, p: &Bindings, v: &[Var]| -> Result<Var> {
            let full = rebind_decoder(g, &model, p);
            model.decode_graph(g, &full, v[0], v.get(1).copied())
        };
        out.push(check(
            &format!("decoder_{}", fusion.name()),
            &decoder_only,
            &inputs,
            &build,
            Some(8),
            tol,
            rng.gen(),
        )?);
    }
    Ok(out)
}

/// Decoder and fusion entries of a model's store, in order.
fn decoder_store(model: &DnervModel) -> ParamStore {
    let mut s = ParamStore::new();
    for e in model.params.entries().iter().filter(|e| e.group.is_representation()) {
        s.add(e.name.clone(), e.group, e.role, e.value.clone());
    }
    s
}

/// Full-model bindings in which representation entries come from `sub`
/// (bound as `p`) and encoder entries are constants.
fn rebind_decoder(g: &mut Graph, model: &DnervModel, p: &Bindings) -> Bindings {
    let mut sub_vars = p.vars().iter();
    let vars = model
        .params
        .entries()
        .iter()
        .map(|e| {
            if e.group.is_representation() {
                *sub_vars.next().expect("one var per representation entry")
            } else {
                g.constant(e.value.clone())
            }
        })
        .collect();
    Bindings::from_vars(vars)
}

/// Full-model check on the tiny preset: sampled coordinates of every
/// parameter tensor plus the input frame and diff.
pub fn check_model(config: ModelConfig, seed: u64, samples_per_tensor: usize) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = DnervModel::new(config, rng.gen())?;
    let cfg = &model.config;
    let mut inputs = vec![rand_t(&mut rng, [3, cfg.height, cfg.width], 0.0, 1.0)];
    if cfg.has_diff() {
        inputs.push(rand_t(&mut rng, [cfg.diff_variant.channels(), cfg.height, cfg.width], -0.5, 0.5));
    }
    let build = |g: &mut Graph, p: &Bindings, v: &[Var]| model.forward_graph(g, p, v[0], v.get(1).copied());
    check(
        &format!("model_{}x{}", cfg.height, cfg.width),
        &model.params,
        &inputs,
        &build,
        Some(samples_per_tensor),
        MODEL_TOLERANCE,
        rng.gen(),
    )
}

/// Layer checks followed by the full tiny-preset model.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = check_layers(seed)?;
    out.push(check_model(ModelConfig::preset("tiny-64x128")?, seed, 2)?);
    Ok(out)
}
