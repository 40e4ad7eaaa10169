//! Raw numeric kernels on contiguous buffers, shared by graph ops and
//! value-level code.

use super::scalar::matmul_into;
use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_height * self.out_width
    }
}

fn im2col<T: Scalar>(input: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (h, w, k) = (g.height as isize, g.width as isize, g.kernel);
    let ncols = g.col_cols();
    for c in 0..g.in_channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    if iy < 0 || iy >= h {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= w { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, out: &mut [T]) {
    let (h, w, k) = (g.height as isize, g.width as isize, g.kernel);
    let ncols = g.col_cols();
    for c in 0..g.in_channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let line = &src[oy * g.out_width..(oy + 1) * g.out_width];
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(input: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let out_plane = g.col_cols();
    let mut out = vec![T::zero(); g.batch * g.out_channels * out_plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * out_plane]
    };
    let in_size = g.in_channels * g.height * g.width;
    for n in 0..g.batch {
        let x = &input[n * in_size..(n + 1) * in_size];
        let y = &mut out[n * g.out_channels * out_plane..(n + 1) * g.out_channels * out_plane];
        if let Some(b) = bias {
            for (o, chunk) in y.chunks_mut(out_plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[o]);
            }
        }
        let rhs: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(x, g, &mut cols);
            &cols
        };
        matmul_into(
            g.out_channels,
            g.col_rows(),
            out_plane,
            weight,
            false,
            rhs,
            false,
            y,
            bias.is_some(),
        );
    }
    out
}

/// Accumulates input, weight and bias gradients of a convolution.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeom,
    mut grad_input: Option<&mut [T]>,
    mut grad_weight: Option<&mut [T]>,
    mut grad_bias: Option<&mut [T]>,
) {
    let out_plane = g.col_cols();
    let in_size = g.in_channels * g.height * g.width;
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.col_rows() * out_plane]
    };
    for n in 0..g.batch {
        let x = &input[n * in_size..(n + 1) * in_size];
        let gy = &grad_out[n * g.out_channels * out_plane..(n + 1) * g.out_channels * out_plane];
        if let Some(gb) = grad_bias.as_deref_mut() {
            for (o, chunk) in gy.chunks(out_plane).enumerate() {
                let mut s = T::zero();
                for &v in chunk {
                    s += v;
                }
                gb[o] += s;
            }
        }
        if let Some(gw) = grad_weight.as_deref_mut() {
            let rhs: &[T] = if g.is_pointwise() {
                x
            } else {
                im2col(x, g, &mut cols);
                &cols
            };
            // gw[O, CKK] += gy[O, P] · cols[CKK, P]^T
            matmul_into(g.out_channels, out_plane, g.col_rows(), gy, false, rhs, true, gw, true);
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            let gx = &mut gi[n * in_size..(n + 1) * in_size];
            if g.is_pointwise() {
                matmul_into(
                    g.in_channels,
                    g.out_channels,
                    out_plane,
                    weight,
                    true,
                    gy,
                    false,
                    gx,
                    true,
                );
            } else {
                matmul_into(
                    g.col_rows(),
                    g.out_channels,
                    out_plane,
                    weight,
                    true,
                    gy,
                    false,
                    &mut cols,
                    false,
                );
                col2im(&cols, g, gx);
            }
        }
    }
}

/// Non-overlapping max pooling over `planes` planes; returns values and the
/// flat source index of every maximum (first in row-major order on ties).
pub(crate) fn maxpool_forward<T: Scalar>(
    input: &[T],
    planes: usize,
    height: usize,
    width: usize,
    kernel: usize,
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (height / kernel, width / kernel);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * height * width;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * kernel * width + ox * kernel;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = base + (oy * kernel + ky) * width + ox * kernel + kx;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Source taps for half-pixel bilinear resampling of one axis.
pub(crate) fn resample_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample_forward<T: Scalar>(
    input: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = resample_taps(h, oh);
    let tx: Vec<(usize, usize, T)> = resample_taps(w, ow)
        .into_iter()
        .map(|(a, b, f)| (a, b, T::lit(f)))
        .collect();
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = r0[x0] + fx * (r0[x1] - r0[x0]);
                let bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                dst[oy * ow + ox] = top + fy * (bot - top);
            }
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Scalar>(
    grad_out: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    grad_in: &mut [T],
) {
    let ty = resample_taps(h, oh);
    let tx = resample_taps(w, ow);
    for p in 0..planes {
        let g = &grad_out[p * oh * ow..(p + 1) * oh * ow];
        let gi = &mut grad_in[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let v = g[oy * ow + ox];
                let one = T::one();
                gi[y0 * w + x0] += v * (one - fy) * (one - fx);
                gi[y0 * w + x1] += v * (one - fy) * fx;
                gi[y1 * w + x0] += v * fy * (one - fx);
                gi[y1 * w + x1] += v * fy * fx;
            }
        }
    }
}

/// Lower tap, upper tap and fraction for sampling coordinate `c` on an axis
/// of `size` pixel centers. The lower tap is clamped so that `c = size-1`
/// lands on the upper tap with fraction 1.
#[inline]
pub(crate) fn axis_taps(c: f64, size: usize) -> (usize, usize, f64) {
    if size == 1 {
        return (0, 0, 0.0);
    }
    let i0 = (c.floor().max(0.0) as usize).min(size - 2);
    (i0, i0 + 1, c - i0 as f64)
}
