//! Model architecture descriptors (plain VGG-style stacks).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One layer of a plain conv/relu/pool/dense stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerDesc {
    Conv { out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    AvgPool { window: usize },
    GlobalAvgPool,
    Dense { out_features: usize },
}

/// Ordered layer list plus input shape and class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Input shape as (channels, height, width).
    pub input: (usize, usize, usize),
    pub num_classes: usize,
    pub layers: Vec<LayerDesc>,
}

impl ModelSpec {
    /// Input shape of every layer followed by the final output shape.
    /// Errors when adjacent layers do not compose.
    pub fn shape_trace(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let (mut c, mut h, mut w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidModel("input shape has a zero extent".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            shapes.push((c, h, w));
            match *layer {
                LayerDesc::Conv { out_channels, kernel, stride, padding } => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(Error::InvalidModel(format!("layer {i}: degenerate conv")));
                    }
                    if h + 2 * padding < kernel || w + 2 * padding < kernel {
                        return Err(Error::InvalidModel(format!(
                            "layer {i}: kernel {kernel} does not fit {h}x{w} with pad {padding}"
                        )));
                    }
                    h = (h + 2 * padding - kernel) / stride + 1;
                    w = (w + 2 * padding - kernel) / stride + 1;
                    c = out_channels;
                    if h == 0 || w == 0 {
                        return Err(Error::InvalidModel(format!("layer {i}: empty conv output")));
                    }
                }
                LayerDesc::Relu => {}
                LayerDesc::AvgPool { window } => {
                    if window == 0 || h % window != 0 || w % window != 0 {
                        return Err(Error::InvalidModel(format!(
                            "layer {i}: pool window {window} does not divide {h}x{w}"
                        )));
                    }
                    h /= window;
                    w /= window;
                }
                LayerDesc::GlobalAvgPool => {
                    h = 1;
                    w = 1;
                }
                LayerDesc::Dense { out_features } => {
                    if out_features == 0 {
                        return Err(Error::InvalidModel(format!("layer {i}: dense with 0 outputs")));
                    }
                    c = out_features;
                    h = 1;
                    w = 1;
                }
            }
        }
        shapes.push((c, h, w));
        Ok(shapes)
    }

    /// Full structural validation: composing shapes, at least one conv layer,
    /// and a final dense layer producing `num_classes` logits.
    pub fn validate(&self) -> Result<()> {
        let trace = self.shape_trace()?;
        if !self.layers.iter().any(|l| matches!(l, LayerDesc::Conv { .. })) {
            return Err(Error::InvalidModel("model needs at least one conv layer".into()));
        }
        match self.layers.last() {
            Some(LayerDesc::Dense { out_features }) if *out_features == self.num_classes => {}
            Some(LayerDesc::Dense { out_features }) => {
                return Err(Error::InvalidModel(format!(
                    "final dense outputs {out_features}, expected num_classes {}",
                    self.num_classes
                )));
            }
            _ => return Err(Error::InvalidModel("model must end with a dense layer".into())),
        }
        let out = trace.last().unwrap();
        debug_assert_eq!(out.0, self.num_classes);
        Ok(())
    }

    /// Indices (into `layers`) of the conv layers, in order.
    pub fn conv_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerDesc::Conv { .. }))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Three conv blocks (conv/relu/pool x2, conv/relu/globalpool) and a dense head.
/// The default desk-scale classifier.
pub fn three_block_cnn(input: (usize, usize, usize), num_classes: usize, widths: [usize; 3]) -> ModelSpec {
    ModelSpec {
        input,
        num_classes,
        layers: vec![
            LayerDesc::Conv { out_channels: widths[0], kernel: 3, stride: 1, padding: 1 },
            LayerDesc::Relu,
            LayerDesc::AvgPool { window: 2 },
            LayerDesc::Conv { out_channels: widths[1], kernel: 3, stride: 1, padding: 1 },
            LayerDesc::Relu,
            LayerDesc::AvgPool { window: 2 },
            LayerDesc::Conv { out_channels: widths[2], kernel: 3, stride: 1, padding: 1 },
            LayerDesc::Relu,
            LayerDesc::GlobalAvgPool,
            LayerDesc::Dense { out_features: num_classes },
        ],
    }
}

/// Two conv blocks and a dense head, for fast smoke-training tests.
pub fn two_block_cnn(input: (usize, usize, usize), num_classes: usize, widths: [usize; 2]) -> ModelSpec {
    ModelSpec {
        input,
        num_classes,
        layers: vec![
            LayerDesc::Conv { out_channels: widths[0], kernel: 3, stride: 1, padding: 1 },
            LayerDesc::Relu,
            LayerDesc::AvgPool { window: 2 },
            LayerDesc::Conv { out_channels: widths[1], kernel: 3, stride: 1, padding: 1 },
            LayerDesc::Relu,
            LayerDesc::GlobalAvgPool,
            LayerDesc::Dense { out_features: num_classes },
        ],
    }
}
