//! Frame quality metrics: PSNR and single-scale SSIM.

use crate::autograd::{Graph, Var};
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// PSNR reported for identical frames.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

pub fn mse(x: &Tensor, y: &Tensor) -> Result<f64> {
    x.expect_same_shape(y, "mse")?;
    let s: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / x.len() as f64)
}

/// `10·log10(1/MSE)` for signals in [0, 1], capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(x: &Tensor, y: &Tensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

fn check_window(shape: &[usize]) -> Result<(usize, usize, usize)> {
    let &[c, h, w] = shape else {
        return Err(crate::error::dim_err!("ssim expects [C, H, W], got {shape:?}"));
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(config_err!(
            "ssim needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        ));
    }
    Ok((c, h, w))
}

/// Valid-region Gaussian filtering of one `h × w` plane.
fn filter_plane(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let wo = w - SSIM_WINDOW + 1;
    let ho = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = taps.iter().enumerate().map(|(k, t)| t * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM over channels and all fully contained 11×11 windows.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    x.expect_same_shape(y, "ssim")?;
    let (c, h, w) = check_window(x.shape())?;
    let taps = gaussian_taps();
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let xs = &x.data()[ch * plane..(ch + 1) * plane];
        let ys = &y.data()[ch * plane..(ch + 1) * plane];
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { xs.iter().zip(ys).map(|(&a, &b)| f(a, b)).collect() };
        let mx = filter_plane(xs, h, w, &taps);
        let my = filter_plane(ys, h, w, &taps);
        let exx = filter_plane(&prod(&|a, _| a * a), h, w, &taps);
        let eyy = filter_plane(&prod(&|_, b| b * b), h, w, &taps);
        let exy = filter_plane(&prod(&|a, b| a * b), h, w, &taps);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            total += ((2.0 * ux * uy + C1) * (2.0 * cxy + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

/// SSIM as a differentiable scalar in `g`, matching [`ssim`].
pub fn ssim_graph(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    g.value(x).expect_same_shape(g.value(y), "ssim")?;
    let (c, _, _) = check_window(g.value(x).shape())?;
    let taps = gaussian_taps();
    let k = SSIM_WINDOW;
    let window = Tensor::from_fn([c, 1, k, k], |i| taps[(i / k) % k] * taps[i % k]);
    let window = g.constant(window);
    let blur = |g: &mut Graph, v: Var| g.conv2d(v, window, None, 1, 0, c);
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let mx = blur(g, x)?;
    let my = blur(g, y)?;
    let exx = blur(g, xx)?;
    let eyy = blur(g, yy)?;
    let exy = blur(g, xy)?;

    let mx2 = g.square(mx)?;
    let my2 = g.square(my)?;
    let mxy = g.mul(mx, my)?;
    let lum_num = g.scale(mxy, 2.0)?;
    let lum_num = g.add_scalar(lum_num, C1)?;
    let lum_den = g.add(mx2, my2)?;
    let lum_den = g.add_scalar(lum_den, C1)?;
    let cov = g.sub(exy, mxy)?;
    let cs_num = g.scale(cov, 2.0)?;
    let cs_num = g.add_scalar(cs_num, C2)?;
    let vx = g.sub(exx, mx2)?;
    let vy = g.sub(eyy, my2)?;
    let cs_den = g.add(vx, vy)?;
    let cs_den = g.add_scalar(cs_den, C2)?;
    let num = g.mul(lum_num, cs_num)?;
    let den = g.mul(lum_den, cs_den)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map))
}
