use dnerv_core::codec::{self, CompressedArtifact};
use dnerv_core::config::RunConfig;
use dnerv_core::data::{load_video, save_video, synth_video, SynthKind, VideoSequence};
use dnerv_core::train::{
    evaluate, evaluate_embeddings, load_checkpoint, save_checkpoint, train, encode_video, Loss, Precision, Task,
    TrainConfig,
};
use dnerv_core::{DnervModel, FusionVariant, ModelConfig};

fn small(fusion: FusionVariant) -> ModelConfig {
    let mut cfg = ModelConfig::preset("tiny-64x128").unwrap();
    cfg.height = 32;
    cfg.width = 64;
    cfg.fusion_variant = fusion;
    if fusion == FusionVariant::None {
        cfg = cfg.baseline();
    }
    cfg
}

#[test]
fn every_fusion_variant_learns() {
    let video = synth_video(SynthKind::MovingSquare, 3, 32, 64, 4, 2).unwrap();
    for fusion in [FusionVariant::Sum, FusionVariant::Conv, FusionVariant::Concat, FusionVariant::Ccu, FusionVariant::None] {
        let mut model = DnervModel::new(small(fusion), 2).unwrap();
        let before = evaluate(&model, &video, Task::Regression, None).unwrap().mean_psnr();
        let cfg = TrainConfig { epochs: 6, base_lr: 2e-3, seed: 2, ..Default::default() };
        let report = train(&mut model, &video, Task::Regression, &cfg).unwrap();
        assert!(report.last().psnr_db > before + 1.0, "{}: {before} -> {}", fusion.name(), report.last().psnr_db);
        assert_eq!(report.steps, 18);
    }
}

#[test]
fn l1_ssim_training_reduces_loss() {
    let video = synth_video(SynthKind::StaticTexture, 2, 32, 64, 0, 5).unwrap();
    let mut model = DnervModel::new(small(FusionVariant::Ccu), 5).unwrap();
    let cfg = TrainConfig { epochs: 8, base_lr: 2e-3, loss: Loss::L1Ssim, seed: 5, ..Default::default() };
    let report = train(&mut model, &video, Task::Regression, &cfg).unwrap();
    assert!(report.log.last().unwrap().loss < report.log[0].loss);
}

#[test]
fn checkpoint_file_round_trip_preserves_scores() {
    let dir = tempfile::tempdir().unwrap();
    let video = synth_video(SynthKind::SceneCut, 4, 32, 64, 3, 8).unwrap();
    for precision in [Precision::F64, Precision::F32] {
        let mut model = DnervModel::new(small(FusionVariant::Ccu), 8).unwrap();
        let cfg = TrainConfig { epochs: 2, seed: 8, precision, ..Default::default() };
        let report = train(&mut model, &video, Task::Regression, &cfg).unwrap();
        let path = dir.path().join(format!("{}.ck", precision.name()));
        save_checkpoint(&path, &model, precision, report.steps as u64).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.precision, precision);
        assert_eq!(ck.steps, 8);
        let a = evaluate(&model, &video, Task::Regression, None).unwrap();
        let b = evaluate(&ck.model, &video, Task::Regression, None).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.mean_psnr().to_bits(), report.last().psnr_db.to_bits());
        if precision == Precision::F32 {
            let all_f32 = ck.model.params.entries().iter().flat_map(|e| e.value.data()).all(|&v| v as f32 as f64 == v);
            assert!(all_f32);
        }
    }
}

#[test]
fn artifact_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let video = synth_video(SynthKind::MovingSquare, 3, 32, 64, 5, 1).unwrap();
    let model = DnervModel::new(small(FusionVariant::Ccu), 1).unwrap();
    let embeddings = encode_video(&model, &video).unwrap();
    let artifact = codec::compress_model(&model, &embeddings, 10, 0.3).unwrap();
    let path = dir.path().join("a.dnvc");
    artifact.write(&path).unwrap();
    let back = CompressedArtifact::read(&path).unwrap();
    assert_eq!(back, artifact);
    let sizes = CompressedArtifact::section_sizes(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(sizes.total_bits(), 8 * std::fs::metadata(&path).unwrap().len());

    let (decoded, embs) = codec::decompress(&back, Some(&model.config)).unwrap();
    let full = evaluate(&model, &video, Task::Regression, None).unwrap().mean_psnr();
    let coded = evaluate_embeddings(&decoded, &embs, &video).unwrap().mean_psnr();
    assert!((full - coded).abs() < 1.0, "{full} vs {coded}");

    let mut other = model.config.clone();
    other.c_init += 1;
    assert!(codec::decompress(&back, Some(&other)).is_err());
}

#[test]
fn videos_round_trip_through_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let video = synth_video(SynthKind::SceneCut, 5, 16, 32, 2, 4).unwrap();
    let video = VideoSequence::from_images("clip", &video.to_images().unwrap()).unwrap();
    for name in ["frames", "clip.dnrv"] {
        let path = dir.path().join(name);
        save_video(&video, &path).unwrap();
        assert_eq!(load_video(&path).unwrap().frames, video.frames);
    }
}

#[test]
fn run_config_drives_training() {
    let run = RunConfig::parse("preset = tiny-64x128\nheight = 32\nwidth = 64\nepochs = 2\nseed = 3\nloss = l2\n").unwrap();
    assert_eq!(RunConfig::parse(&run.to_text()).unwrap(), run);
    let video = synth_video(SynthKind::MovingSquare, 2, 32, 64, 4, 3).unwrap();
    let mut model = DnervModel::new(run.model.clone(), run.train.seed).unwrap();
    let report = train(&mut model, &video, Task::Interpolation, &run.train).unwrap();
    assert_eq!(report.steps, 2);
    assert!(evaluate(&model, &video, Task::Interpolation, None).unwrap().rows.iter().all(|r| r.frame == 1));
}

#[test]
fn mismatched_resolution_is_rejected() {
    let video = synth_video(SynthKind::MovingSquare, 2, 32, 32, 4, 3).unwrap();
    let model = DnervModel::new(small(FusionVariant::Ccu), 0).unwrap();
    assert!(matches!(
        evaluate(&model, &video, Task::Regression, None),
        Err(dnerv_core::Error::Dimension(_))
    ));
}
