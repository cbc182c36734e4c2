//! Deterministic synthetic videos for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::VideoSequence;
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    MovingSquare,
    StaticTexture,
    SceneCut,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [Self::MovingSquare, Self::StaticTexture, Self::SceneCut];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "moving_square" => Ok(Self::MovingSquare),
            "static_texture" => Ok(Self::StaticTexture),
            "scene_cut" => Ok(Self::SceneCut),
            other => Err(config_err!(
                "unknown synthetic kind {other:?} (moving_square|static_texture|scene_cut)"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MovingSquare => "moving_square",
            Self::StaticTexture => "static_texture",
            Self::SceneCut => "scene_cut",
        }
    }
}

const NOISE_CELL: usize = 16;
const TEXTURE_BLOCK: usize = 4;

/// Smooth value noise: random colours on a coarse lattice, bilinearly
/// interpolated, kept within [0.15, 0.85].
fn value_noise(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let gh = height / NOISE_CELL + 2;
    let gw = width / NOISE_CELL + 2;
    let lattice: Vec<f64> = (0..3 * gh * gw).map(|_| rng.gen_range(0.15..0.85)).collect();
    let mut out = Tensor::zeros([3, height, width]);
    let d = out.data_mut();
    for c in 0..3 {
        let g = &lattice[c * gh * gw..(c + 1) * gh * gw];
        for y in 0..height {
            let fy = y as f64 / NOISE_CELL as f64;
            let (y0, ty) = (fy as usize, fy.fract());
            for x in 0..width {
                let fx = x as f64 / NOISE_CELL as f64;
                let (x0, tx) = (fx as usize, fx.fract());
                let top = g[y0 * gw + x0] * (1.0 - tx) + g[y0 * gw + x0 + 1] * tx;
                let bottom = g[(y0 + 1) * gw + x0] * (1.0 - tx) + g[(y0 + 1) * gw + x0 + 1] * tx;
                d[(c * height + y) * width + x] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    out
}

/// Side length of the moving square for an `height × width` frame.
pub fn square_side(height: usize, width: usize) -> usize {
    height.min(width) / 4
}

fn paint_square(frame: &mut Tensor, texture: &[f64], side: usize, top: usize, left: i64) {
    let (_, h, w) = frame.chw().expect("frames are [3, H, W]");
    let d = frame.data_mut();
    for c in 0..3 {
        for sy in 0..side {
            for sx in 0..side {
                let x = (left + sx as i64).rem_euclid(w as i64) as usize;
                d[(c * h + top + sy) * w + x] = texture[(c * side + sy) * side + sx];
            }
        }
    }
}

/// Generates `frames` frames of `kind`. The square (side `min(H,W)/4`)
/// moves `velocity` pixels right per frame and wraps at the right edge.
pub fn synth_video(
    kind: SynthKind,
    frames: usize,
    height: usize,
    width: usize,
    velocity: i64,
    seed: u64,
) -> Result<VideoSequence> {
    if height < 16 || width < 16 {
        return Err(config_err!("synthetic frames must be at least 16x16, got {height}x{width}"));
    }
    if frames == 0 {
        return Err(config_err!("synthetic video needs at least one frame"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = value_noise(height, width, &mut rng);
    let second_background = value_noise(height, width, &mut rng);
    let side = square_side(height, width);
    let blocks = side.div_ceil(TEXTURE_BLOCK);
    let colours: Vec<f64> = (0..3 * blocks * blocks).map(|_| rng.gen_range(0.0..1.0)).collect();
    let texture: Vec<f64> = (0..3 * side * side)
        .map(|i| {
            let (c, sy, sx) = (i / (side * side), (i / side) % side, i % side);
            colours[(c * blocks + sy / TEXTURE_BLOCK) * blocks + sx / TEXTURE_BLOCK]
        })
        .collect();
    let top = (height - side) / 2;
    let left0 = ((width - side) / 4) as i64;

    let out = (0..frames)
        .map(|t| match kind {
            SynthKind::StaticTexture => {
                let mut frame = background.clone();
                frame.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.01..0.01));
                frame
            }
            SynthKind::MovingSquare | SynthKind::SceneCut => {
                let mut frame = if kind == SynthKind::SceneCut && t >= frames / 2 {
                    second_background.clone()
                } else {
                    background.clone()
                };
                paint_square(&mut frame, &texture, side, top, left0 + velocity * t as i64);
                frame
            }
        })
        .collect();
    let mut video = VideoSequence::new(kind.name(), out)?;
    video.fps = Some(30.0);
    Ok(video)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::diff_stream;
    use crate::model::DiffVariant;

    #[test]
    fn still_square_has_zero_diffs() {
        let v = synth_video(SynthKind::MovingSquare, 4, 32, 48, 0, 3).unwrap();
        for t in 1..4 {
            assert_eq!(v.frames[t], v.frames[0]);
        }
    }

    #[test]
    fn seeded_and_in_range() {
        for kind in SynthKind::ALL {
            let a = synth_video(kind, 5, 16, 32, 3, 11).unwrap();
            let b = synth_video(kind, 5, 16, 32, 3, 11).unwrap();
            assert_eq!(a, b);
            assert!(a.frames.iter().all(|f| f.data().iter().all(|v| (0.0..=1.0).contains(v))));
        }
        assert_ne!(
            synth_video(SynthKind::MovingSquare, 2, 16, 16, 1, 1).unwrap(),
            synth_video(SynthKind::MovingSquare, 2, 16, 16, 1, 2).unwrap()
        );
    }

    #[test]
    fn diff_support_is_bounded_by_square_motion() {
        let (h, w, vel) = (32usize, 64usize, 5i64);
        let v = synth_video(SynthKind::MovingSquare, 6, h, w, vel, 7).unwrap();
        let side = square_side(h, w);
        let bound = 2 * (side + vel as usize).pow(2);
        for t in 1..6 {
            let d = diff_stream(&v, t, DiffVariant::Backward).unwrap();
            let support = (0..h * w)
                .filter(|&p| (0..3).any(|c| d.data()[c * h * w + p] != 0.0))
                .count();
            assert!(support > 0 && support <= bound, "t={t}: {support} > {bound}");
        }
    }

    #[test]
    fn scene_cut_changes_background_once() {
        let v = synth_video(SynthKind::SceneCut, 6, 16, 32, 0, 5).unwrap();
        assert_eq!(v.frames[1], v.frames[2]);
        assert_ne!(v.frames[2], v.frames[3]);
        assert_eq!(v.frames[3], v.frames[5]);
    }

    #[test]
    fn rejects_tiny_frames() {
        assert!(synth_video(SynthKind::StaticTexture, 2, 15, 32, 0, 0).is_err());
    }
}
