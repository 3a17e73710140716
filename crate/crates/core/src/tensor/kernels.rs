//! Slice-level forward and backward kernels behind the graph ops.
//!
//! All layouts are row-major NCHW. Reductions run in a fixed order so results
//! are bit-reproducible.

use crate::error::{ensure, Result};

/// `c = a·b + beta·c` where `a` is `m×k` and `b` is `k×n` after the optional
/// transposes (`a_t` means `a` is stored as `k×m`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices; `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        ensure!(input.len() == 4, Shape, "conv2d input must be NCHW, got {input:?}");
        ensure!(weight.len() == 4, Shape, "conv2d weight must be KCkhkw, got {weight:?}");
        ensure!(stride >= 1, InvalidArgument, "stride must be at least 1");
        let [batch, in_channels, height, width] = [input[0], input[1], input[2], input[3]];
        let [out_channels, wc, kh, kw] = [weight[0], weight[1], weight[2], weight[3]];
        ensure!(wc == in_channels, Shape, "weight expects {wc} input channels, input has {in_channels}");
        let ph = height + 2 * padding;
        let pw = width + 2 * padding;
        ensure!(kh <= ph && kw <= pw, Shape, "kernel {kh}x{kw} larger than padded input {ph}x{pw}");
        ensure!(
            (ph - kh).is_multiple_of(stride) && (pw - kw).is_multiple_of(stride),
            Shape,
            "output size of {ph}x{pw} input with {kh}x{kw} kernel and stride {stride} is not exact"
        );
        Ok(Self {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kh,
            kw,
            stride,
            padding,
            out_height: (ph - kh) / stride + 1,
            out_width: (pw - kw) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds one image `[C,H,W]` into `[C·kh·kw, H'·W']` columns.
fn im2col(g: &ConvGeometry, image: &[f64], cols: &mut [f64]) {
    let plane = g.out_plane();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let src = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let line = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= g.width as isize { 0.0 } else { src_row[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `image`.
fn col2im(g: &ConvGeometry, cols: &[f64], image: &mut [f64]) {
    let plane = g.out_plane();
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let dst = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_width {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst_row[ix as usize] += src[oy * g.out_width + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(g: &ConvGeometry, input: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let plane = g.out_plane();
    let rows = g.col_rows();
    let in_size = g.in_channels * g.height * g.width;
    let out_size = g.out_channels * plane;
    let mut out = vec![0.0; g.batch * out_size];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; rows * plane] };
    for n in 0..g.batch {
        let x = &input[n * in_size..(n + 1) * in_size];
        let y = &mut out[n * out_size..(n + 1) * out_size];
        if let Some(b) = bias {
            for (k, chunk) in y.chunks_mut(plane).enumerate() {
                chunk.fill(b[k]);
            }
        }
        let cols_ref: &[f64] = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut cols);
            &cols
        };
        gemm(g.out_channels, rows, plane, weight, false, cols_ref, false, 1.0, y);
    }
    out
}

/// Returns `(d_input, d_weight, d_bias)`; `d_input` is only computed when requested.
pub fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    want_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let plane = g.out_plane();
    let rows = g.col_rows();
    let in_size = g.in_channels * g.height * g.width;
    let out_size = g.out_channels * plane;
    let mut d_weight = vec![0.0; weight.len()];
    let mut d_bias = vec![0.0; g.out_channels];
    let mut d_input = want_input.then(|| vec![0.0; input.len()]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; rows * plane] };
    let mut d_cols = vec![0.0; if want_input { rows * plane } else { 0 }];
    for n in 0..g.batch {
        let x = &input[n * in_size..(n + 1) * in_size];
        let dy = &d_out[n * out_size..(n + 1) * out_size];
        for (k, chunk) in dy.chunks(plane).enumerate() {
            d_bias[k] += chunk.iter().sum::<f64>();
        }
        let cols_ref: &[f64] = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut cols);
            &cols
        };
        gemm(g.out_channels, plane, rows, dy, false, cols_ref, true, 1.0, &mut d_weight);
        if let Some(dx_all) = d_input.as_mut() {
            let dx = &mut dx_all[n * in_size..(n + 1) * in_size];
            if g.is_pointwise() {
                gemm(rows, g.out_channels, plane, weight, true, dy, false, 1.0, dx);
            } else {
                gemm(rows, g.out_channels, plane, weight, true, dy, false, 0.0, &mut d_cols);
                col2im(g, &d_cols, dx);
            }
        }
    }
    (d_input, d_weight, d_bias)
}

/// Stride-2, 2×2 transposed convolution. `weight` is `[C,K,2,2]`.
pub fn conv_transpose2x2_forward(
    input: &[f64],
    dims: [usize; 4],
    weight: &[f64],
    out_channels: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let [batch, c, h, w] = dims;
    let hw = h * w;
    let k4 = out_channels * 4;
    let out_w = 2 * w;
    let out_size = out_channels * 4 * hw;
    let mut out = vec![0.0; batch * out_size];
    let mut y = vec![0.0; k4 * hw];
    for n in 0..batch {
        let x = &input[n * c * hw..(n + 1) * c * hw];
        gemm(k4, c, hw, weight, true, x, false, 0.0, &mut y);
        let o = &mut out[n * out_size..(n + 1) * out_size];
        for k in 0..out_channels {
            let b = bias.map_or(0.0, |b| b[k]);
            for a in 0..2 {
                for bb in 0..2 {
                    let src = &y[(k * 4 + a * 2 + bb) * hw..(k * 4 + a * 2 + bb + 1) * hw];
                    for i in 0..h {
                        for j in 0..w {
                            o[k * 4 * hw + (2 * i + a) * out_w + 2 * j + bb] = src[i * w + j] + b;
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose2x2_backward(
    input: &[f64],
    dims: [usize; 4],
    weight: &[f64],
    out_channels: usize,
    d_out: &[f64],
    want_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let [batch, c, h, w] = dims;
    let hw = h * w;
    let k4 = out_channels * 4;
    let out_w = 2 * w;
    let out_size = out_channels * 4 * hw;
    let mut d_weight = vec![0.0; weight.len()];
    let mut d_bias = vec![0.0; out_channels];
    let mut d_input = want_input.then(|| vec![0.0; input.len()]);
    let mut gathered = vec![0.0; k4 * hw];
    for n in 0..batch {
        let dy = &d_out[n * out_size..(n + 1) * out_size];
        for k in 0..out_channels {
            d_bias[k] += dy[k * 4 * hw..(k + 1) * 4 * hw].iter().sum::<f64>();
            for a in 0..2 {
                for bb in 0..2 {
                    let dst = &mut gathered[(k * 4 + a * 2 + bb) * hw..(k * 4 + a * 2 + bb + 1) * hw];
                    for i in 0..h {
                        for j in 0..w {
                            dst[i * w + j] = dy[k * 4 * hw + (2 * i + a) * out_w + 2 * j + bb];
                        }
                    }
                }
            }
        }
        let x = &input[n * c * hw..(n + 1) * c * hw];
        gemm(c, hw, k4, x, false, &gathered, true, 1.0, &mut d_weight);
        if let Some(dx_all) = d_input.as_mut() {
            gemm(c, k4, hw, weight, false, &gathered, false, 0.0, &mut dx_all[n * c * hw..(n + 1) * c * hw]);
        }
    }
    (d_input, d_weight, d_bias)
}

/// 2×2 max pooling. Returns the output and, per output element, the flat
/// input index that won (first maximum in row-major window order).
pub fn max_pool2_forward(input: &[f64], dims: [usize; 4]) -> (Vec<f64>, Vec<usize>) {
    let [batch, c, h, w] = dims;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(batch * c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..batch * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

/// Per-channel statistics for a tensor laid out as `[N, C, S]`.
pub fn channel_moments(input: &[f64], batch: usize, channels: usize, spatial: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (batch * spatial) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for n in 0..batch {
        for (c, mu) in mean.iter_mut().enumerate() {
            let off = (n * channels + c) * spatial;
            *mu += input[off..off + spatial].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for n in 0..batch {
        for c in 0..channels {
            let off = (n * channels + c) * spatial;
            var[c] += input[off..off + spatial].iter().map(|x| (x - mean[c]) * (x - mean[c])).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    (mean, var)
}
