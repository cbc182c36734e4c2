//! Losses, the training loop, evaluation protocols, and checkpoints.

mod checkpoint;
mod log;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use log::{epoch_csv, eval_csv, read_csv, write_epoch_csv, write_eval_csv, EPOCH_CSV_HEADER, EVAL_CSV_HEADER};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::data::{apply_mask, diff_inputs, even_odd_indices, MaskSpec, VideoSequence};
use crate::error::{config_err, dim_err, usage_err, Error, Result};
use crate::metrics::{mse, psnr_from_mse, ssim, ssim_graph};
use crate::model::{DnervModel, FrameEmbeddings};
use crate::optim::{adam_step, cosine_lr, AdamState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    L2,
    L1Ssim,
}

impl Loss {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Self::L2),
            "l1_ssim" => Ok(Self::L1Ssim),
            other => Err(config_err!("unknown loss {other:?} (l2|l1_ssim)")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::L2 => "l2",
            Self::L1Ssim => "l1_ssim",
        }
    }
}

/// Storage precision of trained weights. Arithmetic is always 64-bit;
/// `F32` rounds parameters to single precision after every update and in
/// checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(config_err!("unknown precision {other:?} (f32|f64)")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        }
    }

    fn round(self, t: &mut Tensor) {
        if self == Self::F32 {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Interpolation,
    Inpainting,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Self::Regression),
            "interpolation" => Ok(Self::Interpolation),
            "inpainting" => Ok(Self::Inpainting),
            other => Err(usage_err!("unknown task {other:?}")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Regression => "regression",
            Self::Interpolation => "interpolation",
            Self::Inpainting => "inpainting",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub loss: Loss,
    pub alpha: f64,
    pub seed: u64,
    /// Log a row every this many epochs; the last epoch is always logged.
    pub eval_every: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            base_lr: 5e-4,
            loss: Loss::L2,
            alpha: 0.7,
            seed: 0,
            eval_every: 1,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err!("epochs must be ≥ 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(config_err!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(config_err!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.eval_every == 0 {
            return Err(config_err!("eval_every must be ≥ 1"));
        }
        Ok(())
    }
}

/// Mean squared error as a scalar node.
pub fn loss_l2(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let sq = g.square(d)?;
    Ok(g.mean(sq))
}

/// `alpha·MAE + (1 − alpha)·(1 − SSIM)` as a scalar node.
pub fn loss_l1_ssim(g: &mut Graph, pred: Var, target: Var, alpha: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(config_err!("alpha must be in [0, 1], got {alpha}"));
    }
    let d = g.sub(pred, target)?;
    let a = g.abs(d)?;
    let mae = g.mean(a);
    let l1 = g.scale(mae, alpha)?;
    let s = ssim_graph(g, pred, target)?;
    let dissim = g.one_minus(s)?;
    let ss = g.scale(dissim, 1.0 - alpha)?;
    g.add(l1, ss)
}

fn loss_node(g: &mut Graph, pred: Var, target: Var, cfg: &TrainConfig) -> Result<Var> {
    match cfg.loss {
        Loss::L2 => loss_l2(g, pred, target),
        Loss::L1Ssim => loss_l1_ssim(g, pred, target, cfg.alpha),
    }
}

/// Encoder inputs and targets for a set of frames.
#[derive(Debug, Clone)]
pub struct FrameSet {
    /// Index of every frame in the original video.
    pub indices: Vec<usize>,
    pub inputs: Vec<Tensor>,
    pub diffs: Vec<Option<Tensor>>,
    pub targets: Vec<Tensor>,
}

impl FrameSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn from_video(video: &VideoSequence, indices: Vec<usize>, model: &DnervModel) -> Result<Self> {
        Ok(Self {
            diffs: diff_inputs(video, model.config.diff_variant)?,
            inputs: video.frames.clone(),
            targets: video.frames.clone(),
            indices,
        })
    }
}

fn check_resolution(model: &DnervModel, video: &VideoSequence) -> Result<()> {
    let cfg = &model.config;
    if (video.height(), video.width()) != (cfg.height, cfg.width) {
        return Err(dim_err!(
            "video is {}x{}, model expects {}x{}",
            video.height(),
            video.width(),
            cfg.height,
            cfg.width
        ));
    }
    Ok(())
}

/// Frames the model is fitted on: all frames, or the even ones for interpolation.
/// Inpainting models are trained on the unmasked video.
pub fn training_frames(model: &DnervModel, video: &VideoSequence, task: Task) -> Result<FrameSet> {
    check_resolution(model, video)?;
    match task {
        Task::Regression | Task::Inpainting => FrameSet::from_video(video, (0..video.len()).collect(), model),
        Task::Interpolation => {
            let (even, _) = even_odd_indices(video.len());
            if video.len() < 2 {
                return Err(usage_err!("interpolation needs at least 2 frames"));
            }
            FrameSet::from_video(&video.select("even", even.clone())?, even, model)
        }
    }
}

/// Frames scored by [`evaluate`] for `task`.
pub fn evaluation_frames(
    model: &DnervModel,
    video: &VideoSequence,
    task: Task,
    mask: Option<&MaskSpec>,
) -> Result<FrameSet> {
    check_resolution(model, video)?;
    match (task, mask) {
        (Task::Inpainting, None) => return Err(usage_err!("inpainting needs a mask")),
        (Task::Regression | Task::Interpolation, Some(_)) => {
            return Err(usage_err!("masks apply only to inpainting"))
        }
        _ => {}
    }
    match task {
        Task::Regression => training_frames(model, video, task),
        Task::Interpolation => {
            if video.len() < 2 {
                return Err(usage_err!("interpolation needs at least 2 frames"));
            }
            let (_, odd) = even_odd_indices(video.len());
            FrameSet::from_video(&video.select("odd", odd.clone())?, odd, model)
        }
        Task::Inpainting => {
            let mask = mask.expect("checked above");
            let masked = VideoSequence::new(
                "masked",
                video.frames.iter().map(|f| apply_mask(f, mask)).collect::<Result<_>>()?,
            )?;
            let mut set = FrameSet::from_video(&masked, (0..video.len()).collect(), model)?;
            set.targets = video.frames.clone();
            Ok(set)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    pub frame: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub task: Task,
    pub rows: Vec<FrameScore>,
}

impl EvalTable {
    fn mean(&self, f: impl Fn(&FrameScore) -> f64) -> f64 {
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_psnr(&self) -> f64 {
        self.mean(|r| r.psnr_db)
    }

    pub fn mean_ssim(&self) -> f64 {
        self.mean(|r| r.ssim)
    }

    pub fn mean_mse(&self) -> f64 {
        self.mean(|r| r.mse)
    }
}

pub fn score_frame(frame: usize, pred: &Tensor, target: &Tensor) -> Result<FrameScore> {
    let m = mse(pred, target)?;
    Ok(FrameScore {
        frame,
        psnr_db: psnr_from_mse(m),
        ssim: ssim(pred, target)?,
        mse: m,
    })
}

/// Reconstructions of every frame in `set`, paired with original indices.
pub fn reconstruct(model: &DnervModel, set: &FrameSet) -> Result<Vec<(usize, Tensor)>> {
    (0..set.len())
        .map(|i| Ok((set.indices[i], model.forward(&set.inputs[i], set.diffs[i].as_ref())?)))
        .collect()
}

fn score_set(model: &DnervModel, set: &FrameSet, task: Task) -> Result<EvalTable> {
    let rows = reconstruct(model, set)?
        .iter()
        .zip(&set.targets)
        .map(|((i, pred), target)| score_frame(*i, pred, target))
        .collect::<Result<_>>()?;
    Ok(EvalTable { task, rows })
}

/// Scores `task` without touching the weights.
pub fn evaluate(model: &DnervModel, video: &VideoSequence, task: Task, mask: Option<&MaskSpec>) -> Result<EvalTable> {
    let set = evaluation_frames(model, video, task, mask)?;
    score_set(model, &set, task)
}

/// Embeddings of every frame, as stored in a compressed artifact.
pub fn encode_video(model: &DnervModel, video: &VideoSequence) -> Result<Vec<FrameEmbeddings>> {
    let set = training_frames(model, video, Task::Regression)?;
    (0..set.len())
        .map(|i| model.encode(&set.inputs[i], set.diffs[i].as_ref()))
        .collect()
}

/// Regression scores of frames decoded from stored embeddings.
pub fn evaluate_embeddings(model: &DnervModel, embeddings: &[FrameEmbeddings], video: &VideoSequence) -> Result<EvalTable> {
    check_resolution(model, video)?;
    if embeddings.len() != video.len() {
        return Err(dim_err!("{} embeddings for a {}-frame video", embeddings.len(), video.len()));
    }
    let rows = embeddings
        .iter()
        .zip(&video.frames)
        .enumerate()
        .map(|(i, (e, y))| score_frame(i, &model.decode(e)?, y))
        .collect::<Result<_>>()?;
    Ok(EvalTable {
        task: Task::Regression,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub task: Task,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub steps: usize,
}

impl TrainReport {
    pub fn last(&self) -> &EpochLog {
        self.log.last().expect("the final epoch is always logged")
    }
}

/// One forward/backward pass and Adam update; returns the loss.
fn train_step(
    model: &mut DnervModel,
    adam: &mut AdamState,
    set: &FrameSet,
    i: usize,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let x = g.constant(set.inputs[i].clone());
    let d = set.diffs[i].as_ref().map(|d| g.constant(d.clone()));
    let y = model.forward_graph(&mut g, &p, x, d)?;
    let t = g.constant(set.targets[i].clone());
    let loss = loss_node(&mut g, y, t, cfg)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Ok(value);
    }
    g.backward(loss)?;
    let grads: Vec<Tensor> = p
        .vars()
        .iter()
        .zip(model.params.entries())
        .map(|(&v, e)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(e.value.shape())))
        .collect();
    let grad_refs: Vec<&Tensor> = grads.iter().collect();
    let mut params: Vec<&mut Tensor> = model.params.entries_mut().iter_mut().map(|e| &mut e.value).collect();
    adam_step(&mut params, &grad_refs, adam, lr)?;
    for p in params {
        cfg.precision.round(p);
    }
    Ok(value)
}

/// Fits `model` to the training frames of `task`.
pub fn train(model: &mut DnervModel, video: &VideoSequence, task: Task, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with_progress(model, video, task, cfg, |_| {})
}

/// [`train`], calling `progress` after every logged epoch.
pub fn train_with_progress(
    model: &mut DnervModel,
    video: &VideoSequence,
    task: Task,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    let set = training_frames(model, video, task)?;
    for e in model.params.entries_mut() {
        cfg.precision.round(&mut e.value);
    }
    let mut adam = AdamState::new(model.params.entries().iter().map(|e| &e.value));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.epochs * set.len();
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for &i in &order {
            lr = cosine_lr(step, total, cfg.base_lr)?;
            let loss = train_step(model, &mut adam, &set, i, cfg, lr)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            loss_sum += loss;
            step += 1;
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let scores = score_set(model, &set, task)?;
            let entry = EpochLog {
                epoch,
                task,
                psnr_db: scores.mean_psnr(),
                ssim: scores.mean_ssim(),
                loss: loss_sum / set.len() as f64,
                lr,
            };
            progress(&entry);
            log.push(entry);
        }
    }
    Ok(TrainReport { log, steps: step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::SSIM_WINDOW;

    fn scalar_loss(f: impl FnOnce(&mut Graph, Var, Var) -> Result<Var>, p: &Tensor, t: &Tensor) -> f64 {
        let mut g = Graph::new();
        let (vp, vt) = (g.constant(p.clone()), g.constant(t.clone()));
        let l = f(&mut g, vp, vt).unwrap();
        g.value(l).item()
    }

    #[test]
    fn l2_examples() {
        let t = Tensor::full([3, 4, 4], 0.2);
        assert_eq!(scalar_loss(loss_l2, &t, &t), 0.0);
        let p = t.map(|v| v + 0.1);
        assert!((scalar_loss(loss_l2, &p, &t) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn l1_ssim_constant_closed_form() {
        let n = SSIM_WINDOW + 1;
        let t = Tensor::full([3, n, n], 0.5);
        let p = t.map(|v| v + 0.1);
        let c1 = 1e-4;
        let lum = (2.0 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1);
        let expected = 0.7 * 0.1 + 0.3 * (1.0 - lum);
        let got = scalar_loss(|g, a, b| loss_l1_ssim(g, a, b, 0.7), &p, &t);
        assert!((got - expected).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { alpha: 1.5, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
