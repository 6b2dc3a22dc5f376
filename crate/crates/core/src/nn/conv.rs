//! 2-D convolution (cross-correlation) with explicit backward pass.
//!
//! Both passes run through an im2col buffer so the inner loops stream over
//! contiguous rows. Each output element still accumulates its terms in the
//! fixed `(ci, kh, kw)` order, which keeps results deterministic and equal
//! to a naive nested-loop evaluation.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Convolution kernel: `Cout x Cin x K x K` weights plus a per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvKernel {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        assert!(out_channels >= 1 && in_channels >= 1 && kernel >= 1 && stride >= 1);
        ConvKernel {
            weights: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
            out_channels,
            in_channels,
            kernel,
            stride,
            padding,
        }
    }

    #[inline]
    pub fn widx(&self, co: usize, ci: usize, kh: usize, kw: usize) -> usize {
        ((co * self.in_channels + ci) * self.kernel + kh) * self.kernel + kw
    }

    /// Spatial output extents for an `(h, w)` input, or an error when the
    /// configuration yields an empty map.
    pub fn out_extents(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel;
        let p = self.padding;
        if h + 2 * p < k || w + 2 * p < k {
            return Err(Error::Dimension(format!(
                "kernel {k}x{k} (pad {p}) does not fit input {h}x{w}"
            )));
        }
        let oh = (h + 2 * p - k) / self.stride + 1;
        let ow = (w + 2 * p - k) / self.stride + 1;
        if oh == 0 || ow == 0 {
            return Err(Error::Dimension(format!(
                "conv output collapsed to {oh}x{ow} for input {h}x{w}"
            )));
        }
        Ok((oh, ow))
    }
}

/// Output positions whose tap `k_off` lands inside `[0, limit)`:
/// all `o` with `0 <= o*stride + k_off - pad < limit`.
#[inline]
fn valid_out_range(out_len: usize, stride: usize, pad: usize, k_off: usize, limit: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k_off).div_ceil(stride);
    let hi = if limit + pad > k_off {
        (((limit + pad - k_off - 1) / stride) + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfold one sample into the `[ci*k*k][n*oh*ow]` batch buffer, writing the
/// block of columns starting at `col_off` (padding taps become zeros).
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
    col: &mut [f32],
    row_stride: usize,
    col_off: usize,
) {
    let ohw = oh * ow;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_out_range(oh, s, p, ky, h);
            for kx in 0..k {
                let row_k = (ci * k + ky) * k + kx;
                let dst = &mut col[row_k * row_stride + col_off..][..ohw];
                let (ox_lo, ox_hi) = valid_out_range(ow, s, p, kx, w);
                dst[..oy_lo * ow].fill(0.0);
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ky - p;
                    let in_row = &plane[iy * w..(iy + 1) * w];
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    out_row[..ox_lo].fill(0.0);
                    if s == 1 {
                        let ix0 = ox_lo + kx - p;
                        out_row[ox_lo..ox_hi].copy_from_slice(&in_row[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            out_row[ox] = in_row[ox * s + kx - p];
                        }
                    }
                    out_row[ox_hi..].fill(0.0);
                }
                dst[oy_hi * ow..].fill(0.0);
            }
        }
    }
}

/// Forward cross-correlation: `out[n,co,oh,ow] = bias[co] + sum_{ci,kh,kw} x * w`.
pub fn conv2d_forward(input: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    let (n, c, h, w) = input.dims();
    if c != kernel.in_channels {
        return Err(Error::Dimension(format!(
            "input shape {:?} has {c} channels but kernel is {}x{}x{}x{}",
            input.shape(),
            kernel.out_channels,
            kernel.in_channels,
            kernel.kernel,
            kernel.kernel
        )));
    }
    let (oh, ow) = kernel.out_extents(h, w)?;
    let mut out = Tensor::zeros([n, kernel.out_channels, oh, ow]);
    let (k, s, p) = (kernel.kernel, kernel.stride, kernel.padding);
    let ck2 = c * k * k;
    let ohw = oh * ow;
    let nohw = n * ohw;
    let mut col = vec![0.0f32; ck2 * nohw];
    let x = input.data();
    for ni in 0..n {
        im2col(
            &x[ni * c * h * w..(ni + 1) * c * h * w],
            c, h, w, k, s, p, oh, ow,
            &mut col, nohw, ni * ohw,
        );
    }
    let mut acc = vec![0.0f32; nohw];
    let o = out.data_mut();
    for co in 0..kernel.out_channels {
        acc.fill(kernel.bias[co]);
        let w_row = &kernel.weights[co * ck2..(co + 1) * ck2];
        for (kk, &wv) in w_row.iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            let col_row = &col[kk * nohw..(kk + 1) * nohw];
            for (ov, &cv) in acc.iter_mut().zip(col_row) {
                *ov += cv * wv;
            }
        }
        for ni in 0..n {
            o[(ni * kernel.out_channels + co) * ohw..][..ohw]
                .copy_from_slice(&acc[ni * ohw..(ni + 1) * ohw]);
        }
    }
    Ok(out)
}

/// Gradients of a scalar loss w.r.t. conv input, weights and bias given the
/// upstream gradient on the forward output.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &ConvKernel,
    upstream: &Tensor,
) -> Result<(Tensor, ConvKernel, Vec<f32>)> {
    let (n, c, h, w) = input.dims();
    if c != kernel.in_channels {
        return Err(Error::Dimension(format!(
            "input shape {:?} incompatible with kernel Cin {}",
            input.shape(),
            kernel.in_channels
        )));
    }
    let (oh, ow) = kernel.out_extents(h, w)?;
    let expected = [n, kernel.out_channels, oh, ow];
    if upstream.shape() != expected {
        return Err(Error::Dimension(format!(
            "upstream gradient shape {:?} does not match forward output {expected:?}",
            upstream.shape()
        )));
    }
    let mut dinput = Tensor::zeros(input.shape());
    let mut dkernel = ConvKernel::zeros(
        kernel.out_channels,
        kernel.in_channels,
        kernel.kernel,
        kernel.stride,
        kernel.padding,
    );
    let mut dbias = vec![0.0f32; kernel.out_channels];
    let (k, s, p) = (kernel.kernel, kernel.stride, kernel.padding);
    let ck2 = c * k * k;
    let ohw = oh * ow;
    let nohw = n * ohw;
    let mut col = vec![0.0f32; ck2 * nohw];
    let mut dcol = vec![0.0f32; ck2 * nohw];
    let mut g_rows = vec![0.0f32; nohw];
    let x = input.data();
    let g = upstream.data();
    let di = dinput.data_mut();
    for ni in 0..n {
        im2col(
            &x[ni * c * h * w..(ni + 1) * c * h * w],
            c, h, w, k, s, p, oh, ow,
            &mut col, nohw, ni * ohw,
        );
    }
    for co in 0..kernel.out_channels {
        for ni in 0..n {
            g_rows[ni * ohw..(ni + 1) * ohw]
                .copy_from_slice(&g[(ni * kernel.out_channels + co) * ohw..][..ohw]);
        }
        for &gv in &g_rows {
            dbias[co] += gv;
        }
        let w_row = &kernel.weights[co * ck2..(co + 1) * ck2];
        let dw_row = &mut dkernel.weights[co * ck2..(co + 1) * ck2];
        for kk in 0..ck2 {
            let col_row = &col[kk * nohw..(kk + 1) * nohw];
            let mut wacc = 0.0f32;
            for (&gv, &cv) in g_rows.iter().zip(col_row) {
                wacc += gv * cv;
            }
            dw_row[kk] += wacc;
            let wv = w_row[kk];
            if wv == 0.0 {
                continue;
            }
            let dcol_row = &mut dcol[kk * nohw..(kk + 1) * nohw];
            for (dv, &gv) in dcol_row.iter_mut().zip(&g_rows) {
                *dv += gv * wv;
            }
        }
    }
    // col2im: scatter-add the unfolded gradient back onto the input planes
    for ni in 0..n {
        let di_plane = &mut di[ni * c * h * w..(ni + 1) * c * h * w];
        for ci in 0..c {
            let dplane = &mut di_plane[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_out_range(oh, s, p, ky, h);
                for kx in 0..k {
                    let row_k = (ci * k + ky) * k + kx;
                    let src = &dcol[row_k * nohw + ni * ohw..][..ohw];
                    let (ox_lo, ox_hi) = valid_out_range(ow, s, p, kx, w);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let src_row = &src[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let ix0 = ox_lo + kx - p;
                            let drow = &mut dplane[iy * w + ix0..iy * w + ix0 + (ox_hi - ox_lo)];
                            for (dv, &sv) in drow.iter_mut().zip(&src_row[ox_lo..ox_hi]) {
                                *dv += sv;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                dplane[iy * w + ox * s + kx - p] += src_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dinput, dkernel, dbias))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passes_value_through() {
        let x = Tensor::from_vec([1, 1, 1, 1], vec![5.0]).unwrap();
        let mut k = ConvKernel::zeros(1, 1, 1, 1, 0);
        k.weights[0] = 1.0;
        let y = conv2d_forward(&x, &k).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn all_ones_3x3_sums_to_nine() {
        let x = Tensor::from_vec([1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let mut k = ConvKernel::zeros(1, 1, 3, 1, 0);
        k.weights.iter_mut().for_each(|w| *w = 1.0);
        let y = conv2d_forward(&x, &k).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::zeros([1, 2, 3, 3]);
        let k = ConvKernel::zeros(1, 3, 3, 1, 0);
        let err = conv2d_forward(&x, &k).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 3, 3]") && err.contains("1x3x3x3"), "{err}");
    }

    #[test]
    fn padding_and_stride_shapes() {
        let x = Tensor::zeros([2, 3, 16, 16]);
        let k = ConvKernel::zeros(4, 3, 3, 2, 1);
        let y = conv2d_forward(&x, &k).unwrap();
        assert_eq!(y.shape(), [2, 4, 8, 8]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let x = Tensor::from_vec([1, 1, 3, 3], (0..9).map(|i| i as f32).collect()).unwrap();
        let mut k = ConvKernel::zeros(2, 1, 2, 1, 0);
        k.weights.iter_mut().enumerate().for_each(|(i, w)| *w = i as f32 * 0.1);
        let up = Tensor::zeros([1, 2, 2, 2]);
        let (dx, dk, db) = conv2d_backward(&x, &k, &up).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(dk.weights.iter().all(|&v| v == 0.0));
        assert!(db.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        // 1x1 case: d loss / d w = x * upstream.
        let x = Tensor::from_vec([1, 1, 1, 1], vec![3.0]).unwrap();
        let mut k = ConvKernel::zeros(1, 1, 1, 1, 0);
        k.weights[0] = 2.0;
        let up = Tensor::from_vec([1, 1, 1, 1], vec![7.0]).unwrap();
        let (dx, dk, db) = conv2d_backward(&x, &k, &up).unwrap();
        assert_eq!(dk.weights[0], 21.0);
        assert_eq!(dx.data()[0], 14.0);
        assert_eq!(db[0], 7.0);
    }

    #[test]
    fn backward_rejects_wrong_upstream_shape() {
        let x = Tensor::zeros([1, 1, 3, 3]);
        let k = ConvKernel::zeros(1, 1, 3, 1, 0);
        let up = Tensor::zeros([1, 1, 2, 2]);
        assert!(conv2d_backward(&x, &k, &up).is_err());
    }
}
