//! Shared test oracles, independent of the library's compute paths:
//! a naive f32 convolution (exact-match reference), f64 re-implementations
//! of every op for finite-difference gradient checks, and a structural
//! compaction pass that physically removes masked channels.

#![allow(dead_code)]

use fedscrub::model::{
    build_model, LayerDesc, LayerParams, ModelSpec, PrunableModel,
};
use fedscrub::nn::{ConvKernel, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    fedscrub::seeding::rng_from(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: [usize; 4], lo: f32, hi: f32) -> Tensor {
    let len: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Naive 6-nested-loop cross-correlation, accumulating in f32 with the
/// `(ci, ky, kx)` inner order and skipping padding taps.
pub fn naive_conv2d(input: &Tensor, kernel: &ConvKernel) -> Tensor {
    let (n, c, h, w) = input.dims();
    let k = kernel.kernel;
    let s = kernel.stride;
    let p = kernel.padding as isize;
    let oh = (h + 2 * kernel.padding - k) / s + 1;
    let ow = (w + 2 * kernel.padding - k) / s + 1;
    let mut out = Tensor::zeros([n, kernel.out_channels, oh, ow]);
    for ni in 0..n {
        for co in 0..kernel.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = kernel.bias[co];
                    for ci in 0..c {
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * s + kx) as isize - p;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += input.at(ni, ci, iy as usize, ix as usize)
                                    * kernel.weights[kernel.widx(co, ci, ky, kx)];
                            }
                        }
                    }
                    *out.at_mut(ni, co, oy, ox) = acc;
                }
            }
        }
    }
    out
}

// --- f64 reference ops for finite differences -------------------------------

pub fn conv2d_f64(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    weights: &[f64],
    bias: &[f64],
    (cout, k, s, p): (usize, usize, usize, usize),
) -> (Vec<f64>, (usize, usize, usize, usize)) {
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (w + 2 * p - k) / s + 1;
    let mut out = vec![0.0f64; n * cout * oh * ow];
    let pi = p as isize;
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..c {
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - pi;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * s + kx) as isize - pi;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((ni * c + ci) * h + iy as usize) * w + ix as usize]
                                    * weights[((co * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, (n, cout, oh, ow))
}

pub fn relu_f64(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn avg_pool2d_f64(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    win: usize,
) -> (Vec<f64>, (usize, usize, usize, usize)) {
    let (oh, ow) = (h / win, w / win);
    let mut out = vec![0.0f64; n * c * oh * ow];
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..win {
                    for kx in 0..win {
                        acc += x[plane * h * w + (oy * win + ky) * w + (ox * win + kx)];
                    }
                }
                out[plane * oh * ow + oy * ow + ox] = acc / (win * win) as f64;
            }
        }
    }
    (out, (n, c, oh, ow))
}

pub fn global_avg_pool_f64(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
) -> (Vec<f64>, (usize, usize, usize, usize)) {
    let mut out = vec![0.0f64; n * c];
    for plane in 0..n * c {
        out[plane] = x[plane * h * w..(plane + 1) * h * w].iter().sum::<f64>() / (h * w) as f64;
    }
    (out, (n, c, 1, 1))
}

pub fn dense_f64(x: &[f64], feat: usize, weights: &[f64], bias: &[f64], out_f: usize) -> Vec<f64> {
    let n = x.len() / feat;
    let mut out = vec![0.0f64; n * out_f];
    for ni in 0..n {
        for o in 0..out_f {
            let mut acc = bias[o];
            for i in 0..feat {
                acc += x[ni * feat + i] * weights[o * feat + i];
            }
            out[ni * out_f + o] = acc;
        }
    }
    out
}

pub fn softmax_ce_f64(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    -( (logits[label] - max) - sum.ln() )
}

/// Central difference of `f` at coordinate `i` of `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &mut Vec<f64>, i: usize, h: f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let fp = f(x);
    x[i] = orig - h;
    let fm = f(x);
    x[i] = orig;
    (fp - fm) / (2.0 * h)
}

/// Spec tolerance: relative error < 1e-3 with an absolute floor of 1e-5.
pub fn grad_close(analytic: f32, numeric: f64) -> bool {
    let a = analytic as f64;
    let scale = a.abs().max(numeric.abs());
    (a - numeric).abs() <= (1e-3 * scale).max(1e-5)
}

// --- structural compaction oracle -------------------------------------------

/// Physically remove masked channels: narrower conv layers, dropped input
/// slices, dropped dense columns. Output model has all-kept masks and must
/// be forward-equivalent to the masked input model.
pub fn compact_model(model: &PrunableModel) -> PrunableModel {
    let spec = model.spec();
    let masks = model.masks();
    let mut kept_per_conv: Vec<Vec<usize>> = Vec::new();
    let mut conv_order = 0;
    let mut new_layers = Vec::new();
    for layer in &spec.layers {
        match *layer {
            LayerDesc::Conv { kernel, stride, padding, .. } => {
                let kept: Vec<usize> = (0..masks[conv_order].len())
                    .filter(|&ch| masks[conv_order].is_kept(ch))
                    .collect();
                new_layers.push(LayerDesc::Conv {
                    out_channels: kept.len(),
                    kernel,
                    stride,
                    padding,
                });
                kept_per_conv.push(kept);
                conv_order += 1;
            }
            other => new_layers.push(other),
        }
    }
    let new_spec = ModelSpec {
        input: spec.input,
        num_classes: spec.num_classes,
        layers: new_layers,
    };
    let mut compacted = build_model(&new_spec, 0).unwrap();

    let mut flat = Vec::new();
    let mut conv_order = 0;
    for (li, param) in model.params().iter().enumerate() {
        match param {
            LayerParams::Conv(kern) => {
                let kept_out = &kept_per_conv[conv_order];
                let kept_in: Vec<usize> = if conv_order == 0 {
                    (0..kern.in_channels).collect()
                } else {
                    kept_per_conv[conv_order - 1].clone()
                };
                for &co in kept_out {
                    for &ci in &kept_in {
                        for ky in 0..kern.kernel {
                            for kx in 0..kern.kernel {
                                flat.push(kern.weights[kern.widx(co, ci, ky, kx)]);
                            }
                        }
                    }
                }
                for &co in kept_out {
                    flat.push(kern.bias[co]);
                }
                conv_order += 1;
            }
            LayerParams::Dense(d) => {
                // dense input is channel-blocked by the spatial extent at
                // this point in the stack
                let last_kept = kept_per_conv.last().unwrap();
                let old_channels = masks.last().unwrap().len();
                let block = d.in_features / old_channels;
                for o in 0..d.out_features {
                    for &ch in last_kept {
                        for b in 0..block {
                            flat.push(d.weights[d.widx(o, ch * block + b)]);
                        }
                    }
                }
                flat.extend_from_slice(&d.bias);
                let _ = li;
            }
            LayerParams::Stateless => {}
        }
    }
    compacted.set_flat_params(&flat).unwrap();
    compacted
}

/// Max absolute difference between two models' logits on a batch.
pub fn forward_max_diff(a: &PrunableModel, b: &PrunableModel, x: &Tensor) -> f32 {
    let ya = a.forward(x).unwrap();
    let yb = b.forward(x).unwrap();
    ya.data()
        .iter()
        .zip(yb.data())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0f32, f32::max)
}
