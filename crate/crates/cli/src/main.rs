//! `dnerv`: train, evaluate, and compress difference-driven video representations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dnerv_core::codec::{self, CompressedArtifact};
use dnerv_core::config::RunConfig;
use dnerv_core::data::{self, make_mask, synth_video, MaskKind, RgbImage, SynthKind, VideoSequence};
use dnerv_core::gradcheck;
use dnerv_core::train::{
    self, evaluate, evaluate_embeddings, evaluation_frames, load_checkpoint, reconstruct, save_checkpoint,
    train_with_progress, write_epoch_csv, write_eval_csv, EvalTable, Task,
};
use dnerv_core::{DnervModel, ModelConfig};

#[derive(Parser)]
#[command(name = "dnerv", version, about = "Difference-driven neural video representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic test video.
    Synth(SynthArgs),
    /// Fit a model to a video.
    Train(TrainArgs),
    /// Score reconstructions of every frame.
    Eval(EvalArgs),
    /// Score held-out odd frames of a model trained on even frames.
    Interpolate(TaskArgs),
    /// Score reconstructions of masked frames against the unmasked video.
    Inpaint(InpaintArgs),
    /// Prune, quantize, and entropy-code a trained model with its embeddings.
    Compress(CompressArgs),
    /// Decode a .dnvc artifact back into frames or a checkpoint.
    Decompress(DecompressArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print embedding shapes, stage dims, channels, and parameter count.
    Shapes {
        /// Named preset.
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        /// Config file.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = ["moving_square", "static_texture", "scene_cut"])]
    kind: String,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    /// Horizontal motion of the square in pixels per frame.
    #[arg(long, default_value_t = 4, allow_negative_numbers = true)]
    velocity: i64,
    #[arg(long)]
    seed: u64,
    /// Output directory of PPM frames, or a .dnrv file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    video: PathBuf,
    /// Seeds weight init and frame order; overrides the config's `seed`.
    #[arg(long)]
    seed: u64,
    /// Interpolation fits the even frames only.
    #[arg(long, default_value = "regression", value_parser = ["regression", "interpolation", "inpainting"])]
    task: String,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct TaskArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    video: PathBuf,
    /// Per-frame metrics CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Directory for reconstructed PPM frames.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, conflicts_with = "artifact", required_unless_present = "artifact")]
    checkpoint: Option<PathBuf>,
    /// Evaluate a compressed artifact instead of a checkpoint.
    #[arg(long)]
    artifact: Option<PathBuf>,
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct InpaintArgs {
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long, value_parser = ["central", "disperse"])]
    mask: String,
    /// Shrink factor for disperse squares; 1 keeps 100 px at 960 rows.
    #[arg(long, default_value_t = 1.0)]
    mask_scale: f64,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Video whose frames are encoded into stored embeddings.
    #[arg(long)]
    video: PathBuf,
    #[arg(long, default_value_t = 8)]
    bits: u8,
    /// Fraction of decoder and fusion weights to prune.
    #[arg(long, default_value_t = 0.0)]
    prune: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecompressArgs {
    #[arg(long)]
    artifact: PathBuf,
    /// Refuse artifacts built for a different model config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reconstructed frames: a PPM directory or a .dnrv file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the dequantized model as a checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn load_video(path: &Path) -> Result<VideoSequence> {
    data::load_video(path).with_context(|| format!("reading video {}", path.display()))
}

fn finish_eval(table: &EvalTable, csv: Option<&Path>) -> Result<()> {
    if let Some(path) = csv {
        write_eval_csv(path, table)?;
    }
    println!(
        "{} over {} frames: PSNR {} dB, SSIM {}",
        table.task.name(),
        table.rows.len(),
        table.mean_psnr(),
        table.mean_ssim()
    );
    Ok(())
}

fn dump_frames(dir: &Path, frames: &[(usize, dnerv_core::Tensor)]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, f) in frames {
        data::ppm::write_ppm(&dir.join(data::frame_file_name(*i)), &RgbImage::from_tensor(f)?)?;
    }
    Ok(())
}

fn run_task(args: &TaskArgs, task: Task, mask: Option<&data::MaskSpec>) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?.model;
    let video = load_video(&args.video)?;
    let table = evaluate(&model, &video, task, mask)?;
    if let Some(dir) = &args.dump {
        let set = evaluation_frames(&model, &video, task, mask)?;
        dump_frames(dir, &reconstruct(&model, &set)?)?;
    }
    finish_eval(&table, args.csv.as_deref())
}

fn print_sizes(bytes: &[u8], artifact: &CompressedArtifact) -> Result<()> {
    let sizes = CompressedArtifact::section_sizes(bytes)?;
    let bits = sizes.total_bits();
    let bpp = codec::compute_bpp(bits, artifact.frames as usize, artifact.height as usize, artifact.width as usize)?;
    println!("header bits     {}", 8 * sizes.header);
    println!("weights bits    {}", 8 * sizes.weights);
    println!("embeddings bits {}", 8 * sizes.embeddings);
    println!("total bits      {bits}");
    println!("bpp             {bpp}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let video = synth_video(SynthKind::parse(&a.kind)?, a.frames, a.height, a.width, a.velocity, a.seed)?;
            data::save_video(&video, &a.out)?;
            println!("wrote {} frames of {}x{} to {}", video.len(), a.height, a.width, a.out.display());
        }
        Command::Train(a) => {
            let mut run = RunConfig::load(&a.config)?;
            run.train.seed = a.seed;
            let task = Task::parse(&a.task)?;
            let video = load_video(&a.video)?;
            let mut model = DnervModel::new(run.model.clone(), a.seed)?;
            let quiet = a.quiet;
            let report = train_with_progress(&mut model, &video, task, &run.train, |e| {
                if !quiet {
                    eprintln!(
                        "epoch {:>5}  loss {:.6e}  lr {:.3e}  PSNR {:.3} dB  SSIM {:.4}",
                        e.epoch, e.loss, e.lr, e.psnr_db, e.ssim
                    );
                }
            })?;
            save_checkpoint(&a.checkpoint, &model, run.train.precision, report.steps as u64)?;
            if let Some(log) = &a.log {
                write_epoch_csv(log, &report.log)?;
            }
            let last = report.last();
            println!("final epoch {}: PSNR {} dB, SSIM {}", last.epoch, last.psnr_db, last.ssim);
        }
        Command::Eval(a) => {
            let video = load_video(&a.video)?;
            if let Some(path) = &a.artifact {
                let artifact = CompressedArtifact::read(path)?;
                let (model, embeddings) = codec::decompress(&artifact, None)?;
                let table = evaluate_embeddings(&model, &embeddings, &video)?;
                if let Some(dir) = &a.dump {
                    let frames: Vec<_> = embeddings
                        .iter()
                        .enumerate()
                        .map(|(i, e)| Ok((i, model.decode(e)?)))
                        .collect::<dnerv_core::Result<_>>()?;
                    dump_frames(dir, &frames)?;
                }
                finish_eval(&table, a.csv.as_deref())?;
            } else {
                let args = TaskArgs {
                    checkpoint: a.checkpoint.expect("clap requires checkpoint or artifact"),
                    video: a.video,
                    csv: a.csv,
                    dump: a.dump,
                };
                run_task(&args, Task::Regression, None)?;
            }
        }
        Command::Interpolate(a) => run_task(&a, Task::Interpolation, None)?,
        Command::Inpaint(a) => {
            let model = load_checkpoint(&a.task.checkpoint)?.model;
            let cfg = &model.config;
            let mask = make_mask(MaskKind::parse(&a.mask)?, cfg.height, cfg.width, a.mask_scale)?;
            run_task(&a.task, Task::Inpainting, Some(&mask))?;
        }
        Command::Compress(a) => {
            let model = load_checkpoint(&a.checkpoint)?.model;
            let video = load_video(&a.video)?;
            let embeddings = train::encode_video(&model, &video)?;
            let artifact = codec::compress_model(&model, &embeddings, a.bits, a.prune)?;
            let bytes = artifact.to_bytes()?;
            std::fs::write(&a.out, &bytes).with_context(|| format!("writing {}", a.out.display()))?;
            print_sizes(&bytes, &artifact)?;
        }
        Command::Decompress(a) => {
            let bytes = std::fs::read(&a.artifact).with_context(|| format!("reading {}", a.artifact.display()))?;
            let artifact = CompressedArtifact::from_bytes(&bytes)?;
            let expected = a.config.as_deref().map(RunConfig::load).transpose()?.map(|r| r.model);
            let (model, embeddings) = codec::decompress(&artifact, expected.as_ref())?;
            print_sizes(&bytes, &artifact)?;
            if let Some(out) = &a.out {
                let frames = embeddings.iter().map(|e| model.decode(e)).collect::<dnerv_core::Result<Vec<_>>>()?;
                data::save_video(&VideoSequence::new("decoded", frames)?, out)?;
            }
            if let Some(path) = &a.checkpoint {
                save_checkpoint(path, &model, train::Precision::F64, 0)?;
            }
        }
        Command::Gradcheck { seed } => {
            let results = gradcheck::run_suite(seed)?;
            let mut failed = 0;
            for r in &results {
                println!(
                    "{:<20} {:>6} coords  max err {:.3e}  tol {:.0e}  {}",
                    r.name,
                    r.checked,
                    r.max_error,
                    r.tolerance,
                    if r.passed() { "ok" } else { "FAIL" }
                );
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                bail!("{failed} gradient checks failed");
            }
        }
        Command::Shapes { preset, config } => {
            let cfg = match (preset, config) {
                (Some(p), _) => ModelConfig::preset(&p)?,
                (None, Some(path)) => RunConfig::load(&path)?.model,
                (None, None) => unreachable!("clap requires one of them"),
            };
            println!("{}", cfg.shape_table()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(e.downcast_ref::<dnerv_core::Error>(), Some(dnerv_core::Error::Usage(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
