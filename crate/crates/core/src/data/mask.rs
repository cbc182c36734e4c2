//! Occlusion masks for inpainting evaluation.

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// One centred rectangle, a quarter of the frame's height and width.
    Central,
    /// Five squares at the quarter points and the centre.
    Disperse,
}

impl MaskKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "central" => Ok(Self::Central),
            "disperse" => Ok(Self::Disperse),
            other => Err(config_err!("unknown mask kind {other:?} (central|disperse)")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Central => "central",
            Self::Disperse => "disperse",
        }
    }
}

/// Pixel rectangle `(top, left, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.height).contains(&y) && (self.left..self.left + self.width).contains(&x)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    pub kind: Option<MaskKind>,
    pub height: usize,
    pub width: usize,
    pub rects: Vec<Rect>,
}

impl MaskSpec {
    /// A mask that hides nothing.
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            kind: None,
            height,
            width,
            rects: vec![],
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.rects.iter().any(|r| r.contains(y, x))
    }

    /// Number of distinct masked pixels.
    pub fn masked_pixels(&self) -> usize {
        (0..self.height)
            .map(|y| (0..self.width).filter(|&x| self.contains(y, x)).count())
            .sum()
    }
}

/// Builds a mask of `kind` for an `height × width` frame. `scale` shrinks
/// the disperse squares (side `round(100·scale·min(H,W)/960)`); 1 keeps
/// 100-pixel squares on a 960-pixel-high frame.
pub fn make_mask(kind: MaskKind, height: usize, width: usize, scale: f64) -> Result<MaskSpec> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(config_err!("mask scale must be in (0, 1], got {scale}"));
    }
    let rects = match kind {
        MaskKind::Central => {
            let (h, w) = (height / 4, width / 4);
            if h == 0 || w == 0 {
                return Err(config_err!("frame {height}x{width} too small for a central mask"));
            }
            vec![Rect {
                top: (height - h) / 2,
                left: (width - w) / 2,
                height: h,
                width: w,
            }]
        }
        MaskKind::Disperse => {
            let side = (100.0 * scale * height.min(width) as f64 / 960.0).round() as usize;
            if side == 0 {
                return Err(config_err!("disperse squares vanish at scale {scale} on {height}x{width}"));
            }
            let centres = [
                (height / 4, width / 4),
                (height / 4, 3 * width / 4),
                (3 * height / 4, width / 4),
                (3 * height / 4, 3 * width / 4),
                (height / 2, width / 2),
            ];
            centres
                .iter()
                .map(|&(cy, cx)| {
                    let (top, left) = (cy as isize - side as isize / 2, cx as isize - side as isize / 2);
                    if top < 0 || left < 0 || top as usize + side > height || left as usize + side > width {
                        return Err(config_err!(
                            "disperse square of side {side} at ({cy}, {cx}) leaves the {height}x{width} frame"
                        ));
                    }
                    Ok(Rect {
                        top: top as usize,
                        left: left as usize,
                        height: side,
                        width: side,
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(MaskSpec {
        kind: Some(kind),
        height,
        width,
        rects,
    })
}

/// Zeroes masked pixels in every channel of a `[C, H, W]` tensor.
pub fn apply_mask(frame: &Tensor, mask: &MaskSpec) -> Result<Tensor> {
    let (c, h, w) = frame.chw()?;
    if (h, w) != (mask.height, mask.width) {
        return Err(crate::error::dim_err!(
            "mask is {}x{}, frame is {h}x{w}",
            mask.height,
            mask.width
        ));
    }
    let mut out = frame.clone();
    let d = out.data_mut();
    for r in &mask.rects {
        for ch in 0..c {
            for y in r.top..r.top + r.height {
                let row = (ch * h + y) * w;
                d[row + r.left..row + r.left + r.width].fill(0.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_is_one_sixteenth() {
        let m = make_mask(MaskKind::Central, 960, 1920, 1.0).unwrap();
        assert_eq!(m.rects, vec![Rect { top: 360, left: 720, height: 240, width: 480 }]);
        assert_eq!(m.masked_pixels() * 16, 960 * 1920);
        let small = make_mask(MaskKind::Central, 64, 128, 1.0).unwrap();
        assert_eq!((small.rects[0].height, small.rects[0].width), (16, 32));
    }

    #[test]
    fn disperse_has_five_disjoint_squares() {
        let m = make_mask(MaskKind::Disperse, 960, 1920, 1.0).unwrap();
        assert_eq!(m.rects.len(), 5);
        assert!(m.rects.iter().all(|r| r.height == 100 && r.width == 100));
        assert_eq!(m.masked_pixels(), 50_000);
    }

    #[test]
    fn bad_scale_or_tiny_frame_is_config_error() {
        assert!(make_mask(MaskKind::Disperse, 4, 4, 1.0).is_err());
        assert!(make_mask(MaskKind::Disperse, 64, 128, 1.0).is_ok());
        assert!(matches!(
            make_mask(MaskKind::Disperse, 960, 1920, 0.0),
            Err(crate::Error::Config(_))
        ));
        assert!(make_mask(MaskKind::Central, 960, 1920, 1.5).is_err());
    }

    #[test]
    fn application_rules() {
        let f = Tensor::from_fn([3, 8, 8], |i| (i % 7) as f64 / 7.0 + 0.1);
        assert_eq!(apply_mask(&f, &MaskSpec::empty(8, 8)).unwrap(), f);
        let full = MaskSpec {
            kind: None,
            height: 8,
            width: 8,
            rects: vec![Rect { top: 0, left: 0, height: 8, width: 8 }],
        };
        assert!(apply_mask(&f, &full).unwrap().data().iter().all(|&v| v == 0.0));
        let m = make_mask(MaskKind::Central, 8, 8, 1.0).unwrap();
        let once = apply_mask(&f, &m).unwrap();
        assert_eq!(apply_mask(&once, &m).unwrap(), once);
        for ch in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    let i = (ch * 8 + y) * 8 + x;
                    let expected = if m.contains(y, x) { 0.0 } else { f.data()[i] };
                    assert_eq!(once.data()[i].to_bits(), expected.to_bits());
                }
            }
        }
    }
}
