//! ReLU and average pooling with their backward passes.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Elementwise `max(0, x)`.
pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient passes where the forward input was strictly positive; the
/// subgradient at exactly 0 is taken as 0.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if input.shape() != upstream.shape() {
        return Err(Error::Dimension(format!(
            "relu backward: input {:?} vs upstream {:?}",
            input.shape(),
            upstream.shape()
        )));
    }
    let mut out = upstream.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(out)
}

/// Non-overlapping window mean; the window must divide both spatial extents.
pub fn avg_pool2d(x: &Tensor, window: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims();
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::Dimension(format!(
            "pool window {window} does not divide spatial extents {h}x{w}"
        )));
    }
    let (oh, ow) = (h / window, w / window);
    let norm = (window * window) as f32;
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let xs = x.data();
    let os = out.data_mut();
    for plane in 0..n * c {
        let in_base = plane * h * w;
        let out_base = plane * oh * ow;
        for oy in 0..oh {
            let out_row = &mut os[out_base + oy * ow..out_base + (oy + 1) * ow];
            for ky in 0..window {
                let in_row = &xs[in_base + (oy * window + ky) * w..in_base + (oy * window + ky + 1) * w];
                for (ox, ov) in out_row.iter_mut().enumerate() {
                    for kx in 0..window {
                        *ov += in_row[ox * window + kx];
                    }
                }
            }
            for ov in out_row.iter_mut() {
                *ov /= norm;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2d_backward(input_shape: [usize; 4], window: usize, upstream: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::Dimension(format!(
            "pool window {window} does not divide spatial extents {h}x{w}"
        )));
    }
    if upstream.shape() != [n, c, h / window, w / window] {
        return Err(Error::Dimension(format!(
            "pool backward: upstream {:?} does not match pooled shape",
            upstream.shape()
        )));
    }
    let norm = (window * window) as f32;
    let mut out = Tensor::zeros(input_shape);
    let (ow, us) = (w / window, upstream.data());
    let os = out.data_mut();
    for plane in 0..n * c {
        let up_base = plane * (h / window) * ow;
        let out_base = plane * h * w;
        for y in 0..h {
            let up_row = &us[up_base + (y / window) * ow..up_base + (y / window + 1) * ow];
            let out_row = &mut os[out_base + y * w..out_base + (y + 1) * w];
            for (xi, ov) in out_row.iter_mut().enumerate() {
                *ov = up_row[xi / window] / norm;
            }
        }
    }
    Ok(out)
}

/// Collapse each channel's `HxW` map to its arithmetic mean; output shape `N x C x 1 x 1`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims();
    if h == 0 || w == 0 {
        return Err(Error::Dimension("global pool needs H, W >= 1".into()));
    }
    let norm = (h * w) as f32;
    let mut out = Tensor::zeros([n, c, 1, 1]);
    let xs = x.data();
    for (plane, ov) in out.data_mut().iter_mut().enumerate() {
        let mut acc = 0.0f32;
        for &v in &xs[plane * h * w..(plane + 1) * h * w] {
            acc += v;
        }
        *ov = acc / norm;
    }
    Ok(out)
}

pub fn global_avg_pool_backward(input_shape: [usize; 4], upstream: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    if upstream.shape() != [n, c, 1, 1] {
        return Err(Error::Dimension(format!(
            "global pool backward: upstream {:?} vs expected [{n}, {c}, 1, 1]",
            upstream.shape()
        )));
    }
    let norm = (h * w) as f32;
    let mut out = Tensor::zeros(input_shape);
    let os = out.data_mut();
    for (plane, &gv) in upstream.data().iter().enumerate() {
        os[plane * h * w..(plane + 1) * h * w].fill(gv / norm);
    }
    Ok(out)
}
