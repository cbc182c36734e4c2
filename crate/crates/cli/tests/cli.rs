use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dnerv_core::train::{read_csv, EPOCH_CSV_HEADER, EVAL_CSV_HEADER};

fn dnerv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnerv")).args(args).output().expect("spawn dnerv")
}

fn ok(args: &[&str]) -> String {
    let out = dnerv(args);
    assert!(
        out.status.success(),
        "dnerv {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Mean PSNR printed by eval-style commands.
fn printed_psnr(stdout: &str) -> f64 {
    let rest = stdout.split("PSNR ").nth(1).expect("PSNR in output");
    rest.split(" dB").next().unwrap().parse().unwrap()
}

fn csv_rows(path: &Path, header: &str) -> Vec<(usize, String, [f64; 4])> {
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().next(), Some(header));
    let (_, rows) = read_csv(&text).unwrap();
    rows
}

struct Trained {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Trained {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn trained(task: &str) -> Trained {
    trained_for(task, 3)
}

fn trained_for(task: &str, epochs: usize) -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let video = root.join("video");
    ok(&["synth", "--kind", "moving_square", "--frames", "4", "--velocity", "5", "--seed", "3", "--out", s(&video)]);
    std::fs::write(root.join("run.cfg"), format!("preset = tiny-64x128\nepochs = {epochs}\neval_every = 2\n")).unwrap();
    ok(&[
        "train",
        "--config",
        s(&root.join("run.cfg")),
        "--video",
        s(&video),
        "--seed",
        "4",
        "--task",
        task,
        "--checkpoint",
        s(&root.join("model.ck")),
        "--log",
        s(&root.join("train.csv")),
        "--quiet",
    ]);
    Trained { _dir: dir, root }
}

#[test]
fn shapes_prints_uvg_golden_rows() {
    let out = ok(&["shapes", "--preset", "uvg-960x1920"]);
    assert!(out.contains("content embedding   16x2x4"));
    assert!(out.contains("diff embedding      2x40x80"));
    assert!(out.contains("channels            [76,63,52,43,35]"));
}

#[test]
fn shapes_reads_config_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "preset = bunny-640x1280-0.35m\n").unwrap();
    let out = ok(&["shapes", "--config", s(&cfg)]);
    assert!(out.contains("channels            [26,21,17,14,11]"));
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    assert_eq!(dnerv(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dnerv(&["synth", "--kind", "moving_square", "--out", "x"]).status.code(), Some(2));
    assert_eq!(dnerv(&["synth", "--kind", "spiral", "--seed", "1", "--out", "x"]).status.code(), Some(2));
    assert_eq!(dnerv(&["shapes"]).status.code(), Some(2));

    let out = dnerv(&["shapes", "--preset", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = dnerv(&["eval", "--checkpoint", s(&missing), "--video", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "preset = tiny-64x128\nc_inti = 3\n").unwrap();
    let out = dnerv(&["shapes", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("c_inti"));
}

#[test]
fn synth_writes_ppm_directory_and_dnrv() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    ok(&["synth", "--kind", "scene_cut", "--frames", "3", "--height", "32", "--width", "48", "--seed", "1", "--out", s(&frames)]);
    let mut names: Vec<_> = std::fs::read_dir(&frames).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["frame_000000.ppm", "frame_000001.ppm", "frame_000002.ppm"]);
    let head = std::fs::read(frames.join("frame_000000.ppm")).unwrap();
    assert!(head.starts_with(b"P6\n48 32\n255\n"));

    let packed = dir.path().join("v.dnrv");
    ok(&["synth", "--kind", "scene_cut", "--frames", "3", "--height", "32", "--width", "48", "--seed", "1", "--out", s(&packed)]);
    let a = dnerv_core::data::load_video(&frames).unwrap();
    let b = dnerv_core::data::load_video(&packed).unwrap();
    assert_eq!(a.frames, b.frames);
}

#[test]
fn eval_reproduces_final_training_row() {
    let t = trained("regression");
    let log = csv_rows(&t.path("train.csv"), EPOCH_CSV_HEADER);
    assert_eq!(log.iter().map(|r| r.0).collect::<Vec<_>>(), [2, 3]);
    let last = log.last().unwrap();

    let out = ok(&["eval", "--checkpoint", s(&t.path("model.ck")), "--video", s(&t.path("video")), "--csv", s(&t.path("eval.csv"))]);
    assert_eq!(printed_psnr(&out).to_bits(), last.2[0].to_bits());

    let rows = csv_rows(&t.path("eval.csv"), EVAL_CSV_HEADER);
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), [0, 1, 2, 3]);
    assert!(rows.iter().all(|r| r.1 == "regression" && r.2[3] == 0.0));
}

#[test]
fn eval_dumps_reconstructions() {
    let t = trained("regression");
    let dump = t.path("dump");
    ok(&["eval", "--checkpoint", s(&t.path("model.ck")), "--video", s(&t.path("video")), "--dump", s(&dump)]);
    let recon = dnerv_core::data::load_video(&dump).unwrap();
    assert_eq!(recon.len(), 4);
    assert_eq!((recon.height(), recon.width()), (64, 128));
}

#[test]
fn interpolation_scores_odd_frames() {
    let t = trained("interpolation");
    let log = csv_rows(&t.path("train.csv"), EPOCH_CSV_HEADER);
    assert!(log.iter().all(|r| r.1 == "interpolation"));
    let csv = t.path("interp.csv");
    ok(&["interpolate", "--checkpoint", s(&t.path("model.ck")), "--video", s(&t.path("video")), "--csv", s(&csv)]);
    let rows = csv_rows(&csv, EVAL_CSV_HEADER);
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), [1, 3]);
}

#[test]
fn inpainting_with_each_mask() {
    let t = trained("inpainting");
    for mask in ["central", "disperse"] {
        let csv = t.path(&format!("{mask}.csv"));
        let out = ok(&[
            "inpaint",
            "--checkpoint",
            s(&t.path("model.ck")),
            "--video",
            s(&t.path("video")),
            "--mask",
            mask,
            "--mask-scale",
            "0.5",
            "--csv",
            s(&csv),
        ]);
        assert!(out.starts_with("inpainting over 4 frames"));
        assert!(csv_rows(&csv, EVAL_CSV_HEADER).iter().all(|r| r.1 == "inpainting"));
    }
    let out = dnerv(&["inpaint", "--checkpoint", s(&t.path("model.ck")), "--video", s(&t.path("video")), "--mask", "diagonal"]);
    assert_eq!(out.status.code(), Some(2));
}

fn reported_bits(stdout: &str, label: &str) -> f64 {
    let line = stdout.lines().find(|l| l.starts_with(label)).unwrap_or_else(|| panic!("{label} in {stdout}"));
    line[label.len()..].trim().parse().unwrap()
}

#[test]
fn compress_decompress_eval_pipeline() {
    let t = trained_for("regression", 40);
    let (ck, video, art) = (t.path("model.ck"), t.path("video"), t.path("model.dnvc"));
    let full = printed_psnr(&ok(&["eval", "--checkpoint", s(&ck), "--video", s(&video)]));

    let out = ok(&["compress", "--checkpoint", s(&ck), "--video", s(&video), "--bits", "8", "--prune", "0.1", "--out", s(&art)]);
    let len = std::fs::metadata(&art).unwrap().len() as f64;
    let total = reported_bits(&out, "total bits");
    assert_eq!(total, 8.0 * len);
    let sections = reported_bits(&out, "header bits") + reported_bits(&out, "weights bits") + reported_bits(&out, "embeddings bits");
    assert_eq!(sections, total);
    assert_eq!(reported_bits(&out, "bpp"), total / (4.0 * 64.0 * 128.0));

    let quant = printed_psnr(&ok(&["eval", "--artifact", s(&art), "--video", s(&video)]));
    assert!(quant <= full, "quantized {quant} vs full {full}");
    assert!(quant > full - 3.0);

    let frames = t.path("decoded");
    let ck2 = t.path("decoded.ck");
    ok(&["decompress", "--artifact", s(&art), "--config", s(&t.path("run.cfg")), "--out", s(&frames), "--checkpoint", s(&ck2)]);
    assert_eq!(dnerv_core::data::load_video(&frames).unwrap().len(), 4);
    assert!(ck2.exists());

    let other = t.path("other.cfg");
    std::fs::write(&other, "preset = tiny-64x128\nc_init = 40\n").unwrap();
    let out = dnerv(&["decompress", "--artifact", s(&art), "--config", s(&other)]);
    assert_eq!(out.status.code(), Some(1));

    let mut bytes = std::fs::read(&art).unwrap();
    let last = bytes.len() - 10;
    bytes[last] ^= 0xff;
    std::fs::write(&art, bytes).unwrap();
    assert_eq!(dnerv(&["eval", "--artifact", s(&art), "--video", s(&video)]).status.code(), Some(1));
}

#[test]
fn train_is_deterministic() {
    let a = trained("regression");
    let b = trained("regression");
    for f in ["model.ck", "train.csv"] {
        assert_eq!(std::fs::read(a.path(f)).unwrap(), std::fs::read(b.path(f)).unwrap(), "{f}");
    }
}

#[test]
fn gradcheck_reports_every_check() {
    let out = ok(&["gradcheck", "--seed", "2"]);
    assert!(out.lines().count() > 20);
    assert!(out.lines().all(|l| l.ends_with(" ok")), "{out}");
}
