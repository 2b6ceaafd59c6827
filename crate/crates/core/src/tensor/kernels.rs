//! Flat-slice numeric kernels behind the tape operations.
//!
//! Convolutions lower to im2col plus a GEMM. Summation order inside each
//! kernel is fixed, so results are bitwise reproducible.

use crate::error::{shape_err, Result};

/// `c[m×n] = op(a)·op(b) + beta·c`, where `op` optionally transposes.
///
/// `a` is stored `[m×k]` (or `[k×m]` when `a_t`), `b` is stored `[k×n]`
/// (or `[n×k]` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly m·k, k·n and m·n elements and the
    // strides above address each of them once in row/column order.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Kernel size, stride and zero padding of a square 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel, stride, padding }
    }

    /// `floor((len + 2·pad − kernel) / stride) + 1`.
    pub fn conv_output(&self, len: usize) -> Result<usize> {
        self.validate()?;
        if len + 2 * self.padding < self.kernel {
            return shape_err(format!(
                "input length {len} with padding {} is smaller than kernel {}",
                self.padding, self.kernel
            ));
        }
        Ok((len + 2 * self.padding - self.kernel) / self.stride + 1)
    }

    /// `(len − 1)·stride − 2·pad + kernel`, the transposed-convolution size.
    pub fn deconv_output(&self, len: usize) -> Result<usize> {
        self.validate()?;
        let grown = (len - 1) * self.stride + self.kernel;
        if grown <= 2 * self.padding {
            return shape_err(format!("transposed convolution of length {len} yields no output"));
        }
        Ok(grown - 2 * self.padding)
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return shape_err("kernel and stride must be at least 1");
        }
        Ok(())
    }
}

/// Plane dimensions shared by a convolution and its im2col buffer.
#[derive(Clone, Copy, Debug)]
struct Planes {
    channels: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

fn im2col(x: &[f64], p: Planes, g: ConvGeometry, cols: &mut [f64]) {
    let k = g.kernel;
    let ohw = p.oh * p.ow;
    for c in 0..p.channels {
        let plane = &x[c * p.h * p.w..(c + 1) * p.h * p.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * ohw;
                for oy in 0..p.oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let dst = &mut cols[row + oy * p.ow..row + (oy + 1) * p.ow];
                    if iy < 0 || iy >= p.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * p.w..(iy as usize + 1) * p.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *d = if ix < 0 || ix >= p.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], p: Planes, g: ConvGeometry, x: &mut [f64]) {
    let k = g.kernel;
    let ohw = p.oh * p.ow;
    for c in 0..p.channels {
        let plane = &mut x[c * p.h * p.w..(c + 1) * p.h * p.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * ohw;
                for oy in 0..p.oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= p.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * p.ow..row + (oy + 1) * p.ow];
                    let dst = &mut plane[iy as usize * p.w..(iy as usize + 1) * p.w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < p.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Batch and channel sizes of a convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
}

/// Cross-correlation. `weight` is `[c_out, c_in, k, k]`; returns the output
/// together with its spatial size.
pub(crate) fn conv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    d: ConvDims,
    g: ConvGeometry,
) -> Result<(Vec<f64>, usize, usize)> {
    let (oh, ow) = (g.conv_output(d.h)?, g.conv_output(d.w)?);
    let planes = Planes { channels: d.c_in, h: d.h, w: d.w, oh, ow };
    let patch = d.c_in * g.kernel * g.kernel;
    let ohw = oh * ow;
    let mut cols = vec![0.0; patch * ohw];
    let mut out = vec![0.0; d.batch * d.c_out * ohw];
    for n in 0..d.batch {
        im2col(&x[n * d.c_in * d.h * d.w..(n + 1) * d.c_in * d.h * d.w], planes, g, &mut cols);
        let dst = &mut out[n * d.c_out * ohw..(n + 1) * d.c_out * ohw];
        gemm(d.c_out, patch, ohw, weight, false, &cols, false, dst, 0.0);
        if let Some(b) = bias {
            for (co, chunk) in dst.chunks_mut(ohw).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[co]);
            }
        }
    }
    Ok((out, oh, ow))
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    d: ConvDims,
    g: ConvGeometry,
    want: [bool; 3],
) -> Result<ConvGrads> {
    let (oh, ow) = (g.conv_output(d.h)?, g.conv_output(d.w)?);
    let planes = Planes { channels: d.c_in, h: d.h, w: d.w, oh, ow };
    let patch = d.c_in * g.kernel * g.kernel;
    let ohw = oh * ow;
    let in_len = d.c_in * d.h * d.w;
    let mut cols = vec![0.0; patch * ohw];
    let mut dx = want[0].then(|| vec![0.0; d.batch * in_len]);
    let mut dw = want[1].then(|| vec![0.0; weight.len()]);
    for n in 0..d.batch {
        let dy = &dout[n * d.c_out * ohw..(n + 1) * d.c_out * ohw];
        if let Some(dw) = dw.as_mut() {
            im2col(&x[n * in_len..(n + 1) * in_len], planes, g, &mut cols);
            gemm(d.c_out, ohw, patch, dy, false, &cols, true, dw, 1.0);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(patch, d.c_out, ohw, weight, true, dy, false, &mut cols, 0.0);
            col2im(&cols, planes, g, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    let db = want[2].then(|| channel_sums(dout, d.batch, d.c_out, ohw));
    Ok(ConvGrads { input: dx, weight: dw, bias: db })
}

/// Transposed convolution, the adjoint of [`conv2d_forward`]. `weight` is
/// `[c_in, c_out, k, k]`.
pub(crate) fn deconv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    d: ConvDims,
    g: ConvGeometry,
) -> Result<(Vec<f64>, usize, usize)> {
    let (oh, ow) = (g.deconv_output(d.h)?, g.deconv_output(d.w)?);
    // The im2col view of the *output* image, whose convolution has size h×w.
    let planes = Planes { channels: d.c_out, h: oh, w: ow, oh: d.h, ow: d.w };
    let patch = d.c_out * g.kernel * g.kernel;
    let hw = d.h * d.w;
    let out_len = d.c_out * oh * ow;
    let mut cols = vec![0.0; patch * hw];
    let mut out = vec![0.0; d.batch * out_len];
    for n in 0..d.batch {
        let xn = &x[n * d.c_in * hw..(n + 1) * d.c_in * hw];
        gemm(patch, d.c_in, hw, weight, true, xn, false, &mut cols, 0.0);
        let dst = &mut out[n * out_len..(n + 1) * out_len];
        col2im(&cols, planes, g, dst);
        if let Some(b) = bias {
            for (co, chunk) in dst.chunks_mut(oh * ow).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[co]);
            }
        }
    }
    Ok((out, oh, ow))
}

pub(crate) fn deconv2d_backward(
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    d: ConvDims,
    g: ConvGeometry,
    want: [bool; 3],
) -> Result<ConvGrads> {
    let (oh, ow) = (g.deconv_output(d.h)?, g.deconv_output(d.w)?);
    let planes = Planes { channels: d.c_out, h: oh, w: ow, oh: d.h, ow: d.w };
    let patch = d.c_out * g.kernel * g.kernel;
    let hw = d.h * d.w;
    let out_len = d.c_out * oh * ow;
    let mut cols = vec![0.0; patch * hw];
    let mut dx = want[0].then(|| vec![0.0; d.batch * d.c_in * hw]);
    let mut dw = want[1].then(|| vec![0.0; weight.len()]);
    if dx.is_some() || dw.is_some() {
        for n in 0..d.batch {
            im2col(&dout[n * out_len..(n + 1) * out_len], planes, g, &mut cols);
            if let Some(dx) = dx.as_mut() {
                let dst = &mut dx[n * d.c_in * hw..(n + 1) * d.c_in * hw];
                gemm(d.c_in, patch, hw, weight, false, &cols, false, dst, 0.0);
            }
            if let Some(dw) = dw.as_mut() {
                let xn = &x[n * d.c_in * hw..(n + 1) * d.c_in * hw];
                gemm(d.c_in, hw, patch, xn, false, &cols, true, dw, 1.0);
            }
        }
    }
    let db = want[2].then(|| channel_sums(dout, d.batch, d.c_out, oh * ow));
    Ok(ConvGrads { input: dx, weight: dw, bias: db })
}

fn channel_sums(data: &[f64], batch: usize, channels: usize, plane: usize) -> Vec<f64> {
    let mut sums = vec![0.0; channels];
    for n in 0..batch {
        for (c, s) in sums.iter_mut().enumerate() {
            let base = (n * channels + c) * plane;
            *s += data[base..base + plane].iter().sum::<f64>();
        }
    }
    sums
}

/// Average pooling over `planes` independent `h×w` planes.
pub(crate) fn avg_pool_forward(
    x: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let scale = 1.0 / (window * window) as f64;
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..window {
                    let row = (oy * stride + ky) * w + ox * stride;
                    acc += src[row..row + window].iter().sum::<f64>();
                }
                out[(p * oh + oy) * ow + ox] = acc * scale;
            }
        }
    }
    (out, oh, ow)
}

pub(crate) fn avg_pool_backward(
    dout: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
) -> Vec<f64> {
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let scale = 1.0 / (window * window) as f64;
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dout[(p * oh + oy) * ow + ox] * scale;
                for ky in 0..window {
                    let row = (oy * stride + ky) * w + ox * stride;
                    dst[row..row + window].iter_mut().for_each(|v| *v += g);
                }
            }
        }
    }
    dx
}

pub(crate) fn upsample_forward(x: &[f64], planes: usize, h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        for oy in 0..oh {
            let src = &x[(p * h + oy / factor) * w..(p * h + oy / factor + 1) * w];
            let dst = &mut out[(p * oh + oy) * ow..(p * oh + oy + 1) * ow];
            for (ox, v) in dst.iter_mut().enumerate() {
                *v = src[ox / factor];
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(dout: &[f64], planes: usize, h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (oh, ow) = (h * factor, w * factor);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        for oy in 0..oh {
            let src = &dout[(p * oh + oy) * ow..(p * oh + oy + 1) * ow];
            let dst = &mut dx[(p * h + oy / factor) * w..(p * h + oy / factor + 1) * w];
            for (ox, &g) in src.iter().enumerate() {
                dst[ox / factor] += g;
            }
        }
    }
    dx
}

/// Per-channel statistics of a `[batch, channels, spatial]` layout.
pub(crate) struct ChannelStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
}

pub(crate) fn channel_stats(x: &[f64], batch: usize, channels: usize, spatial: usize) -> ChannelStats {
    let count = (batch * spatial) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut s = 0.0;
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            s += x[base..base + spatial].iter().sum::<f64>();
        }
        let m = s / count;
        let mut sq = 0.0;
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            sq += x[base..base + spatial].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        mean[c] = m;
        var[c] = sq / count;
    }
    ChannelStats { mean, var }
}

/// `y = gamma·(x − mean)·inv_std + beta`; also returns the normalized input.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_apply(
    x: &[f64],
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    for n in 0..batch {
        for c in 0..channels {
            let base = (n * channels + c) * spatial;
            for i in base..base + spatial {
                let h = (x[i] - mean[c]) * inv_std[c];
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat)
}

/// Gradients of batch-statistics normalization.
///
/// Returns `(dx, dgamma, dbeta)`. With `batch_stats` false the statistics are
/// treated as constants (eval mode).
#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    batch: usize,
    channels: usize,
    spatial: usize,
    batch_stats: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let count = (batch * spatial) as f64;
    let mut dx = vec![0.0; dy.len()];
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for c in 0..channels {
        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            for i in base..base + spatial {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xhat[i];
            }
        }
        dgamma[c] = sum_dy_xhat;
        dbeta[c] = sum_dy;
        let k = gamma[c] * inv_std[c];
        for n in 0..batch {
            let base = (n * channels + c) * spatial;
            for i in base..base + spatial {
                dx[i] = if batch_stats {
                    k * (dy[i] - sum_dy / count - xhat[i] * sum_dy_xhat / count)
                } else {
                    k * dy[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}
