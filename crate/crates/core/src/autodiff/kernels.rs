//! Slice-level numeric kernels shared by the forward ops and backward rules.
//! All reductions run left-to-right in row-major order.

use crate::error::{Error, Result};

#[inline]
pub(crate) fn bcast(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

/// Sums a broadcast gradient back down to a one-element operand.
pub(crate) fn reduce_broadcast(g: &[f64], target_len: usize) -> Vec<f64> {
    if target_len == 1 && g.len() != 1 {
        vec![g.iter().sum()]
    } else {
        g.to_vec()
    }
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// `[m,k] x [k,n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for (row, out_row) in out.chunks_mut(n).enumerate() {
        for (i, &aik) in a[row * k..(row + 1) * k].iter().enumerate() {
            let b_row = &b[i * n..(i + 1) * n];
            out_row.iter_mut().zip(b_row).for_each(|(o, &bv)| *o += aik * bv);
        }
    }
    out
}

/// Shapes and index arithmetic for a 2-D cross-correlation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernels: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let &[channels, height, width] = input else {
            return Err(Error::shape(format!("conv2d input must be [C,H,W], got {input:?}")));
        };
        let &[filters, kc, kh, kw] = kernels else {
            return Err(Error::shape(format!(
                "conv2d kernels must be [D,C,k,k], got {kernels:?}"
            )));
        };
        if kc != channels || kh != kw {
            return Err(Error::shape(format!(
                "conv2d kernels {kernels:?} incompatible with input {input:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv2d stride must be positive"));
        }
        let out_h = conv_out_dim(height, kh, stride, padding).ok_or_else(|| {
            Error::config(format!(
                "conv2d kernel {kh} with padding {padding} does not fit height {height}"
            ))
        })?;
        let out_w = conv_out_dim(width, kh, stride, padding).ok_or_else(|| {
            Error::config(format!(
                "conv2d kernel {kh} with padding {padding} does not fit width {width}"
            ))
        })?;
        Ok(Self {
            channels,
            height,
            width,
            filters,
            kernel: kh,
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    /// Input row for output row `oy` and kernel row `ky`, if inside the image.
    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        (iy < self.height).then_some(iy)
    }

    /// Output columns whose tap `kx` lands inside the image.
    #[inline]
    fn out_cols(&self, kx: usize) -> std::ops::Range<usize> {
        let lo = if self.padding > kx {
            (self.padding - kx).div_ceil(self.stride)
        } else {
            0
        };
        let reach = self.width - 1 + self.padding;
        if reach < kx {
            return 0..0;
        }
        let hi = ((reach - kx) / self.stride + 1).min(self.out_w);
        lo.min(hi)..hi
    }

    #[inline]
    fn kidx(&self, d: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((d * self.channels + c) * self.kernel + ky) * self.kernel + kx
    }

    /// Each output starts at its bias and accumulates taps in (c, ky, kx)
    /// order.
    pub fn forward(&self, input: &[f64], kernels: &[f64], bias: &[f64]) -> Vec<f64> {
        let plane_len = self.out_h * self.out_w;
        let mut out = vec![0.0; self.filters * plane_len];
        for (d, plane) in out.chunks_mut(plane_len).enumerate() {
            plane.fill(bias[d]);
            for c in 0..self.channels {
                let in_plane = &input[c * self.height * self.width..(c + 1) * self.height * self.width];
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let w = kernels[self.kidx(d, c, ky, kx)];
                        let cols = self.out_cols(kx);
                        for oy in 0..self.out_h {
                            let Some(iy) = self.in_row(oy, ky) else { continue };
                            let in_row = &in_plane[iy * self.width..(iy + 1) * self.width];
                            let out_row = &mut plane[oy * self.out_w..(oy + 1) * self.out_w];
                            for ox in cols.clone() {
                                out_row[ox] += w * in_row[ox * self.stride + kx - self.padding];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn grad_input(&self, kernels: &[f64], g: &[f64]) -> Vec<f64> {
        let plane_len = self.out_h * self.out_w;
        let mut gin = vec![0.0; self.channels * self.height * self.width];
        for d in 0..self.filters {
            let g_plane = &g[d * plane_len..(d + 1) * plane_len];
            for c in 0..self.channels {
                let gin_plane = &mut gin[c * self.height * self.width..(c + 1) * self.height * self.width];
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let w = kernels[self.kidx(d, c, ky, kx)];
                        let cols = self.out_cols(kx);
                        for oy in 0..self.out_h {
                            let Some(iy) = self.in_row(oy, ky) else { continue };
                            let g_row = &g_plane[oy * self.out_w..(oy + 1) * self.out_w];
                            let gin_row = &mut gin_plane[iy * self.width..(iy + 1) * self.width];
                            for ox in cols.clone() {
                                gin_row[ox * self.stride + kx - self.padding] += w * g_row[ox];
                            }
                        }
                    }
                }
            }
        }
        gin
    }

    pub fn grad_kernels(&self, input: &[f64], g: &[f64]) -> Vec<f64> {
        let plane_len = self.out_h * self.out_w;
        let mut gk = vec![0.0; self.filters * self.channels * self.kernel * self.kernel];
        for d in 0..self.filters {
            let g_plane = &g[d * plane_len..(d + 1) * plane_len];
            for c in 0..self.channels {
                let in_plane = &input[c * self.height * self.width..(c + 1) * self.height * self.width];
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let cols = self.out_cols(kx);
                        let mut acc = 0.0;
                        for oy in 0..self.out_h {
                            let Some(iy) = self.in_row(oy, ky) else { continue };
                            let g_row = &g_plane[oy * self.out_w..(oy + 1) * self.out_w];
                            let in_row = &in_plane[iy * self.width..(iy + 1) * self.width];
                            for ox in cols.clone() {
                                acc += g_row[ox] * in_row[ox * self.stride + kx - self.padding];
                            }
                        }
                        gk[self.kidx(d, c, ky, kx)] = acc;
                    }
                }
            }
        }
        gk
    }

    pub fn grad_bias(&self, g: &[f64]) -> Vec<f64> {
        g.chunks(self.out_h * self.out_w).map(|p| p.iter().sum()).collect()
    }
}

/// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
pub(crate) fn conv_out_dim(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = n + 2 * padding;
    (k <= padded && stride > 0).then(|| (padded - k) / stride + 1)
}

/// Max pooling without padding. Returns the pooled values and, for each
/// output, the flat input index of the first maximum in window order.
pub(crate) fn max_pool(
    input: &[f64],
    (channels, height, width): (usize, usize, usize),
    window: usize,
    stride: usize,
    (out_h, out_w): (usize, usize),
) -> (Vec<f64>, Vec<usize>) {
    let mut values = Vec::with_capacity(channels * out_h * out_w);
    let mut argmax = Vec::with_capacity(values.capacity());
    for c in 0..channels {
        let base = c * height * width;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best_idx = base + oy * stride * width + ox * stride;
                let mut best = input[best_idx];
                for wy in 0..window {
                    for wx in 0..window {
                        let idx = base + (oy * stride + wy) * width + ox * stride + wx;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                values.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (values, argmax)
}
