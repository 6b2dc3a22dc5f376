//! Fully-connected layer over flattened features.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Dense layer: `out x in` weight matrix plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub out_features: usize,
    pub in_features: usize,
}

impl DenseLayer {
    pub fn zeros(out_features: usize, in_features: usize) -> Self {
        DenseLayer {
            weights: vec![0.0; out_features * in_features],
            bias: vec![0.0; out_features],
            out_features,
            in_features,
        }
    }

    #[inline]
    pub fn widx(&self, o: usize, i: usize) -> usize {
        o * self.in_features + i
    }
}

/// Forward pass over a batch: flattens each sample's `C*H*W` features.
/// Output shape is `N x out x 1 x 1`.
pub fn dense_forward(x: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    let (n, c, h, w) = x.dims();
    let feat = c * h * w;
    if feat != layer.in_features {
        return Err(Error::Dimension(format!(
            "dense expects {} input features, input shape {:?} flattens to {feat}",
            layer.in_features,
            x.shape()
        )));
    }
    let mut out = Tensor::zeros([n, layer.out_features, 1, 1]);
    let os = out.data_mut();
    for ni in 0..n {
        let xs = &x.data()[ni * feat..(ni + 1) * feat];
        for o in 0..layer.out_features {
            let mut acc = layer.bias[o];
            let row = &layer.weights[o * feat..(o + 1) * feat];
            for (&xv, &wv) in xs.iter().zip(row) {
                acc += xv * wv;
            }
            os[ni * layer.out_features + o] = acc;
        }
    }
    Ok(out)
}

/// Gradients w.r.t. input, weights and bias.
pub fn dense_backward(x: &Tensor, layer: &DenseLayer, upstream: &Tensor) -> Result<(Tensor, DenseLayer)> {
    let (n, c, h, w) = x.dims();
    let feat = c * h * w;
    if feat != layer.in_features {
        return Err(Error::Dimension(format!(
            "dense backward: input flattens to {feat}, layer expects {}",
            layer.in_features
        )));
    }
    if upstream.shape() != [n, layer.out_features, 1, 1] {
        return Err(Error::Dimension(format!(
            "dense backward: upstream {:?} vs expected [{n}, {}, 1, 1]",
            upstream.shape(),
            layer.out_features
        )));
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dlayer = DenseLayer::zeros(layer.out_features, layer.in_features);
    for ni in 0..n {
        let xs = &x.data()[ni * feat..(ni + 1) * feat];
        let dxs = &mut dx.data_mut()[ni * feat..(ni + 1) * feat];
        for o in 0..layer.out_features {
            let g = upstream.data()[ni * layer.out_features + o];
            if g == 0.0 {
                continue;
            }
            dlayer.bias[o] += g;
            let w_row = &layer.weights[o * feat..(o + 1) * feat];
            let dw_row = &mut dlayer.weights[o * feat..(o + 1) * feat];
            for i in 0..feat {
                dw_row[i] += g * xs[i];
                dxs[i] += g * w_row[i];
            }
        }
    }
    Ok((dx, dlayer))
}
