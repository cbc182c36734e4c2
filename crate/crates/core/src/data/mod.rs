//! Video sequences: ingestion, temporal differences, inpainting masks,
//! interpolation splits, and synthetic test videos.

pub mod container;
pub mod mask;
pub mod ppm;
pub mod synth;

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{format_err, usage_err, Error, Result};
use crate::model::DiffVariant;
use crate::tensor::Tensor;

pub use mask::{apply_mask, make_mask, MaskKind, MaskSpec, Rect};
pub use ppm::RgbImage;
pub use synth::{synth_video, SynthKind};

/// Ordered RGB frames in [0, 1], all of one size.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub name: String,
    pub frames: Vec<Tensor>,
    pub fps: Option<f64>,
}

impl VideoSequence {
    pub fn new(name: impl Into<String>, frames: Vec<Tensor>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| format_err!("a video needs at least one frame"))?;
        let (c, h, w) = first.chw()?;
        if c != 3 {
            return Err(format_err!("frames must have 3 channels, got {c}"));
        }
        if let Some(i) = frames.iter().position(|f| f.shape() != [3, h, w]) {
            return Err(format_err!(
                "frame {i} has shape {:?}, expected [3, {h}, {w}]",
                frames[i].shape()
            ));
        }
        Ok(Self {
            name: name.into(),
            frames,
            fps: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames[0].shape()[2]
    }

    /// Frames `indices` as a new sequence.
    pub fn select(&self, name: impl Into<String>, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let frames = indices.into_iter().map(|i| self.frames[i].clone()).collect();
        Self::new(name, frames)
    }

    pub fn to_images(&self) -> Result<Vec<RgbImage>> {
        self.frames.iter().map(RgbImage::from_tensor).collect()
    }

    pub fn from_images(name: impl Into<String>, images: &[RgbImage]) -> Result<Self> {
        Self::new(name, images.iter().map(RgbImage::to_tensor).collect())
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.ppm")
}

fn parse_frame_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".ppm")?;
    (digits.len() == 6 && digits.bytes().all(|b| b.is_ascii_digit()))
        .then(|| digits.parse().ok())
        .flatten()
}

/// Reads a directory of `frame_%06d.ppm` files or a `.dnrv` container.
pub fn load_video(path: &Path) -> Result<VideoSequence> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into());
    let images = if path.is_dir() {
        let mut found = BTreeMap::new();
        let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            let file = entry.file_name().to_string_lossy().into_owned();
            if let Some(i) = parse_frame_index(&file) {
                found.insert(i, entry.path());
            }
        }
        if found.is_empty() {
            return Err(format_err!("{}: no frame_%06d.ppm files", path.display()));
        }
        for (expected, &i) in found.keys().enumerate() {
            if i != expected {
                return Err(format_err!(
                    "{}: frame index {expected} missing (next present is {i})",
                    path.display()
                ));
            }
        }
        found
            .values()
            .map(|p| ppm::read_ppm(p))
            .collect::<Result<Vec<_>>>()?
    } else {
        container::read_dnrv(path)?
    };
    VideoSequence::from_images(name, &images).map_err(|e| format_err!("{}: {e}", path.display()))
}

/// Writes 8-bit frames as a PPM directory, or as `.dnrv` when `path` ends in `.dnrv`.
pub fn save_video(video: &VideoSequence, path: &Path) -> Result<()> {
    let images = video.to_images()?;
    if path.extension().is_some_and(|e| e == "dnrv") {
        return container::write_dnrv(path, &images);
    }
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    for (i, img) in images.iter().enumerate() {
        ppm::write_ppm(&path.join(frame_file_name(i)), img)?;
    }
    Ok(())
}

/// Temporal difference input for frame `t`. Neighbours outside the video
/// are replicated, so boundary differences are zero.
pub fn diff_stream(video: &VideoSequence, t: usize, variant: DiffVariant) -> Result<Tensor> {
    let n = video.len();
    if t >= n {
        return Err(usage_err!("frame {t} outside a {n}-frame video"));
    }
    let cur = &video.frames[t];
    let prev = &video.frames[t.saturating_sub(1)];
    let next = &video.frames[(t + 1).min(n - 1)];
    let backward = || cur.zip_map(prev, |a, b| a - b);
    let forward = || next.zip_map(cur, |a, b| a - b);
    match variant {
        DiffVariant::Backward => backward(),
        DiffVariant::Forward => forward(),
        DiffVariant::Central => next.zip_map(prev, |a, b| (a - b) / 2.0),
        DiffVariant::ConcatBf => Tensor::concat_channels(&[&backward()?, &forward()?]),
        DiffVariant::ConcatBfSecond => {
            let f = forward()?;
            let b = backward()?;
            let second = f.zip_map(&b, |a, b| a - b)?;
            Tensor::concat_channels(&[&b, &f, &second])
        }
        DiffVariant::None => Err(usage_err!("diff_stream called with variant none")),
    }
}

/// Diff inputs for every frame, or `None`s when the variant is `none`.
pub fn diff_inputs(video: &VideoSequence, variant: DiffVariant) -> Result<Vec<Option<Tensor>>> {
    (0..video.len())
        .map(|t| match variant {
            DiffVariant::None => Ok(None),
            v => diff_stream(video, t, v).map(Some),
        })
        .collect()
}

/// Even-indexed frames for training, odd-indexed frames for testing.
pub fn split_even_odd(video: &VideoSequence) -> Result<(VideoSequence, VideoSequence)> {
    if video.len() < 2 {
        return Err(usage_err!("even/odd split needs at least 2 frames, got {}", video.len()));
    }
    let even = video.select(format!("{}-even", video.name), (0..video.len()).step_by(2))?;
    let odd = video.select(format!("{}-odd", video.name), (1..video.len()).step_by(2))?;
    Ok((even, odd))
}

/// Original indices of the frames in each half of [`split_even_odd`].
pub fn even_odd_indices(len: usize) -> (Vec<usize>, Vec<usize>) {
    ((0..len).step_by(2).collect(), (1..len).step_by(2).collect())
}
