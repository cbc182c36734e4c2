//! Slice-level kernels behind the autodiff ops.
//!
//! All buffers are row-major `[C, H, W]` with batch size one. Convolutions
//! use im2col followed by a GEMM, except depthwise convolutions, which run
//! direct loops.

use crate::error::{config_err, dim_err, Result};

/// Geometry of one 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(
        input: [usize; 3],
        weight: &[usize],
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        let [c_in, h, w] = input;
        let &[c_out, cin_g, kh, kw] = weight else {
            return Err(dim_err!("conv2d weight must be 4-D, got {weight:?}"));
        };
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(config_err!(
                "conv2d: groups={groups} must divide C_in={c_in} and C_out={c_out}"
            ));
        }
        if cin_g != c_in / groups {
            return Err(dim_err!(
                "conv2d: weight expects {cin_g} input channels per group, input has {}",
                c_in / groups
            ));
        }
        if kh != kw {
            return Err(dim_err!("conv2d: only square kernels supported, got {kh}x{kw}"));
        }
        if stride == 0 {
            return Err(config_err!("conv2d: stride must be at least 1"));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(dim_err!(
                "conv2d: padded input {}x{} smaller than kernel {kh}",
                h + 2 * padding,
                w + 2 * padding
            ));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kernel: kh,
            stride,
            padding,
            groups,
            h_out: (h + 2 * padding - kh) / stride + 1,
            w_out: (w + 2 * padding - kw) / stride + 1,
        })
    }

    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    fn patch(&self) -> usize {
        self.cin_g() * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.h_out * self.w_out
    }

    pub fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }

    /// 1×1, stride 1, no padding: the input already is its own column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn macs(&self) -> usize {
        self.c_out * self.out_plane() * self.patch()
    }
}

/// `c = a · b + beta · c` for row-major matrices, with optional transposes.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_t { (1, k) } else { (n, 1) };
    // SAFETY: lengths checked above; strides describe in-bounds row-major views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output positions `o` in `0..out_len` whose tap `o·stride + offset − pad`
/// lands inside `0..in_len`.
fn valid_outputs(offset: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> std::ops::Range<usize> {
    let start = pad.saturating_sub(offset).div_ceil(stride);
    let end = if in_len + pad <= offset {
        0
    } else {
        ((in_len + pad - offset - 1) / stride + 1).min(out_len)
    };
    start..end.max(start)
}

/// Calls `f(out_start, in_start, len)` for every output row of tap
/// `(ky, kx)` that reads inside the input: output columns
/// `out_start..out_start + len` read input `in_start + j·stride`.
fn for_each_tap_row(g: &ConvGeom, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
    let ys = valid_outputs(ky, g.padding, g.stride, g.h, g.h_out);
    let xs = valid_outputs(kx, g.padding, g.stride, g.w, g.w_out);
    if xs.is_empty() {
        return;
    }
    let ix0 = xs.start * g.stride + kx - g.padding;
    for oy in ys {
        let iy = oy * g.stride + ky - g.padding;
        f(oy * g.w_out + xs.start, iy * g.w + ix0, xs.len());
    }
}

/// Fills the column matrix of one group. `cols` must arrive zeroed; padded
/// taps are left untouched.
fn im2col(g: &ConvGeom, input: &[f64], group: usize, cols: &mut [f64]) {
    let k = g.kernel;
    let plane = g.out_plane();
    let c0 = group * g.cin_g();
    let s = g.stride;
    for ci in 0..g.cin_g() {
        let src = &input[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for_each_tap_row(g, ky, kx, |o, i, n| {
                    if s == 1 {
                        dst[o..o + n].copy_from_slice(&src[i..i + n]);
                    } else {
                        for j in 0..n {
                            dst[o + j] = src[i + j * s];
                        }
                    }
                });
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], group: usize, dinput: &mut [f64]) {
    let k = g.kernel;
    let plane = g.out_plane();
    let c0 = group * g.cin_g();
    let s = g.stride;
    for ci in 0..g.cin_g() {
        let dst = &mut dinput[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for_each_tap_row(g, ky, kx, |o, i, n| {
                    if s == 1 {
                        for (d, v) in dst[i..i + n].iter_mut().zip(&src[o..o + n]) {
                            *d += v;
                        }
                    } else {
                        for j in 0..n {
                            dst[i + j * s] += src[o + j];
                        }
                    }
                });
            }
        }
    }
}

/// Forward convolution. Returns the output and, for non-pointwise
/// non-depthwise geometries, the im2col buffer (all groups, concatenated)
/// so the backward pass can reuse it.
pub fn conv2d_forward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let plane = g.out_plane();
    let mut out = vec![0.0; g.c_out * plane];
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(b[co]);
        }
    }
    if g.is_depthwise() {
        depthwise_forward(g, input, weight, &mut out);
        return (out, None);
    }
    let patch = g.patch();
    let cout_g = g.cout_g();
    let cols = if g.is_pointwise() {
        None
    } else {
        let mut cols = vec![0.0; g.groups * patch * plane];
        for grp in 0..g.groups {
            im2col(g, input, grp, &mut cols[grp * patch * plane..(grp + 1) * patch * plane]);
        }
        Some(cols)
    };
    for grp in 0..g.groups {
        let b_mat = match &cols {
            Some(c) => &c[grp * patch * plane..(grp + 1) * patch * plane],
            None => &input[grp * patch * plane..(grp + 1) * patch * plane],
        };
        gemm(
            cout_g,
            patch,
            plane,
            &weight[grp * cout_g * patch..(grp + 1) * cout_g * patch],
            false,
            b_mat,
            false,
            1.0,
            &mut out[grp * cout_g * plane..(grp + 1) * cout_g * plane],
        );
    }
    (out, cols)
}

/// Accumulates gradients of a convolution into whichever buffers are given.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    cols: Option<&[f64]>,
    dout: &[f64],
    dinput: Option<&mut [f64]>,
    dweight: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
) {
    let plane = g.out_plane();
    if let Some(db) = dbias {
        for (co, chunk) in dout.chunks(plane).enumerate() {
            db[co] += chunk.iter().sum::<f64>();
        }
    }
    if g.is_depthwise() {
        depthwise_backward(g, input, weight, dout, dinput, dweight);
        return;
    }
    let patch = g.patch();
    let cout_g = g.cout_g();
    let mut rebuilt = None;
    let cols: &[f64] = match cols {
        Some(c) => c,
        None if g.is_pointwise() => input,
        None => {
            let mut c = vec![0.0; g.groups * patch * plane];
            for grp in 0..g.groups {
                im2col(g, input, grp, &mut c[grp * patch * plane..(grp + 1) * patch * plane]);
            }
            rebuilt.insert(c).as_slice()
        }
    };
    if let Some(dw) = dweight {
        for grp in 0..g.groups {
            gemm(
                cout_g,
                plane,
                patch,
                &dout[grp * cout_g * plane..(grp + 1) * cout_g * plane],
                false,
                &cols[grp * patch * plane..(grp + 1) * patch * plane],
                true,
                1.0,
                &mut dw[grp * cout_g * patch..(grp + 1) * cout_g * patch],
            );
        }
    }
    if let Some(dx) = dinput {
        let mut dcols = vec![0.0; patch * plane];
        for grp in 0..g.groups {
            let w = &weight[grp * cout_g * patch..(grp + 1) * cout_g * patch];
            let dy = &dout[grp * cout_g * plane..(grp + 1) * cout_g * plane];
            if g.is_pointwise() {
                gemm(
                    patch,
                    cout_g,
                    plane,
                    w,
                    true,
                    dy,
                    false,
                    1.0,
                    &mut dx[grp * patch * plane..(grp + 1) * patch * plane],
                );
            } else {
                gemm(patch, cout_g, plane, w, true, dy, false, 0.0, &mut dcols);
                col2im(g, &dcols, grp, dx);
            }
        }
    }
}

fn depthwise_forward(g: &ConvGeom, input: &[f64], weight: &[f64], out: &mut [f64]) {
    let k = g.kernel;
    let s = g.stride;
    for c in 0..g.c_in {
        let src = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        let ker = &weight[c * k * k..(c + 1) * k * k];
        let dst = &mut out[c * g.out_plane()..(c + 1) * g.out_plane()];
        for ky in 0..k {
            for kx in 0..k {
                let wk = ker[ky * k + kx];
                for_each_tap_row(g, ky, kx, |o, i, n| {
                    if s == 1 {
                        for (d, v) in dst[o..o + n].iter_mut().zip(&src[i..i + n]) {
                            *d += wk * v;
                        }
                    } else {
                        for j in 0..n {
                            dst[o + j] += wk * src[i + j * s];
                        }
                    }
                });
            }
        }
    }
}

fn depthwise_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    dout: &[f64],
    mut dinput: Option<&mut [f64]>,
    mut dweight: Option<&mut [f64]>,
) {
    let k = g.kernel;
    let s = g.stride;
    let hw = g.h * g.w;
    for c in 0..g.c_in {
        let src = &input[c * hw..(c + 1) * hw];
        let ker = &weight[c * k * k..(c + 1) * k * k];
        let dy = &dout[c * g.out_plane()..(c + 1) * g.out_plane()];
        for ky in 0..k {
            for kx in 0..k {
                let wk = ker[ky * k + kx];
                let mut acc = 0.0;
                for_each_tap_row(g, ky, kx, |o, i, n| {
                    let dyr = &dy[o..o + n];
                    if s == 1 {
                        acc += dyr.iter().zip(&src[i..i + n]).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(dx) = dinput.as_deref_mut() {
                            for (d, v) in dx[c * hw + i..c * hw + i + n].iter_mut().zip(dyr) {
                                *d += wk * v;
                            }
                        }
                    } else {
                        for (j, d) in dyr.iter().enumerate() {
                            acc += d * src[i + j * s];
                            if let Some(dx) = dinput.as_deref_mut() {
                                dx[c * hw + i + j * s] += wk * d;
                            }
                        }
                    }
                });
                if let Some(dw) = dweight.as_deref_mut() {
                    dw[c * k * k + ky * k + kx] += acc;
                }
            }
        }
    }
}

/// `[C·s², H, W] → [C, sH, sW]` with `out[c, s·i+a, s·j+b] = in[c·s²+a·s+b, i, j]`.
pub fn pixel_shuffle(input: &[f64], shape: [usize; 3], s: usize) -> Result<(Vec<f64>, [usize; 3])> {
    let [cs, h, w] = shape;
    if s == 0 || cs % (s * s) != 0 {
        return Err(dim_err!(
            "pixel_shuffle: {cs} channels not divisible by factor² = {}",
            s * s
        ));
    }
    let c = cs / (s * s);
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![0.0; input.len()];
    for co in 0..c {
        for a in 0..s {
            for b in 0..s {
                let ci = co * s * s + a * s + b;
                for i in 0..h {
                    for j in 0..w {
                        out[(co * oh + s * i + a) * ow + s * j + b] = input[(ci * h + i) * w + j];
                    }
                }
            }
        }
    }
    Ok((out, [c, oh, ow]))
}

/// Inverse of [`pixel_shuffle`]: `[C, sH, sW] → [C·s², H, W]`.
pub fn pixel_unshuffle(input: &[f64], shape: [usize; 3], s: usize) -> Result<(Vec<f64>, [usize; 3])> {
    let [c, oh, ow] = shape;
    if s == 0 || oh % s != 0 || ow % s != 0 {
        return Err(dim_err!("pixel_unshuffle: {oh}x{ow} not divisible by {s}"));
    }
    let (h, w) = (oh / s, ow / s);
    let mut out = vec![0.0; input.len()];
    for co in 0..c {
        for a in 0..s {
            for b in 0..s {
                let ci = co * s * s + a * s + b;
                for i in 0..h {
                    for j in 0..w {
                        out[(ci * h + i) * w + j] = input[(co * oh + s * i + a) * ow + s * j + b];
                    }
                }
            }
        }
    }
    Ok((out, [c * s * s, h, w]))
}
