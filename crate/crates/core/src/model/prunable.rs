//! Prunable CNN: layer parameters plus per-conv-layer channel masks.
//!
//! Pruning is zeroing: a masked-out channel has its filter and bias zeroed,
//! every downstream weight that consumes it zeroed, and its gradients gated
//! to zero on every update, so it stays out of back-propagation for good.

use crate::error::{Error, Result};
use crate::model::spec::{LayerDesc, ModelSpec};
use crate::nn::{
    avg_pool2d, avg_pool2d_backward, conv2d_backward, conv2d_forward, dense_backward,
    dense_forward, global_avg_pool, global_avg_pool_backward, relu_backward, relu_forward,
    sgd_step, softmax_cross_entropy, ConvKernel, DenseLayer, SgdConfig, Tensor,
};
use rand::Rng;

/// Per-conv-layer keep flags (`true` = channel kept).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMask {
    kept: Vec<bool>,
}

impl ChannelMask {
    pub fn all_kept(channels: usize) -> Self {
        ChannelMask { kept: vec![true; channels] }
    }

    pub fn from_kept(kept: Vec<bool>) -> Self {
        ChannelMask { kept }
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn is_kept(&self, channel: usize) -> bool {
        self.kept[channel]
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn kept_flags(&self) -> &[bool] {
        &self.kept
    }

    pub fn masked_channels(&self) -> Vec<usize> {
        self.kept
            .iter()
            .enumerate()
            .filter(|(_, &k)| !k)
            .map(|(c, _)| c)
            .collect()
    }
}

/// Channels selected for removal, per conv layer (indexed by conv order).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PrunePlan {
    /// Requested prune fraction that produced this plan.
    pub ratio: f32,
    /// Sorted channel indices to prune, one list per conv layer.
    pub layers: Vec<Vec<usize>>,
}

impl PrunePlan {
    pub fn empty(num_conv_layers: usize) -> Self {
        PrunePlan { ratio: 0.0, layers: vec![Vec::new(); num_conv_layers] }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(|l| l.is_empty())
    }

    pub fn total_channels(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }
}

/// Parameters of one layer; pool/activation layers carry none.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Conv(ConvKernel),
    Dense(DenseLayer),
    Stateless,
}

/// Gradients mirror the parameter layout.
pub type ModelGrads = Vec<LayerParams>;

/// Layered CNN with pruning masks.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunableModel {
    spec: ModelSpec,
    params: Vec<LayerParams>,
    masks: Vec<ChannelMask>,
    /// Input shape of each layer, from the spec's shape trace.
    layer_inputs: Vec<(usize, usize, usize)>,
}

/// Intermediate state of one forward pass.
pub struct ForwardTrace {
    /// Input tensor to each layer, in layer order.
    pub layer_inputs: Vec<Tensor>,
    /// Raw post-conv feature map `O_l` for each conv layer, in conv order.
    pub conv_outputs: Vec<Tensor>,
    /// Logits, shape `N x num_classes x 1 x 1`.
    pub logits: Tensor,
}

/// Deterministic He-style initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<PrunableModel> {
    spec.validate()?;
    let trace = spec.shape_trace()?;
    let mut rng = crate::seeding::rng_from(seed);
    let mut params = Vec::with_capacity(spec.layers.len());
    let mut masks = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        let (c, h, w) = trace[i];
        match *layer {
            LayerDesc::Conv { out_channels, kernel, stride, padding } => {
                let mut k = ConvKernel::zeros(out_channels, c, kernel, stride, padding);
                let fan_in = (c * kernel * kernel) as f32;
                let bound = (6.0 / fan_in).sqrt();
                for wv in k.weights.iter_mut() {
                    *wv = rng.gen_range(-bound..bound);
                }
                params.push(LayerParams::Conv(k));
                masks.push(ChannelMask::all_kept(out_channels));
            }
            LayerDesc::Dense { out_features } => {
                let in_features = c * h * w;
                let mut d = DenseLayer::zeros(out_features, in_features);
                let bound = (6.0 / in_features as f32).sqrt();
                for wv in d.weights.iter_mut() {
                    *wv = rng.gen_range(-bound..bound);
                }
                params.push(LayerParams::Dense(d));
            }
            _ => params.push(LayerParams::Stateless),
        }
    }
    Ok(PrunableModel { spec: spec.clone(), params, masks, layer_inputs: trace })
}

impl PrunableModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn masks(&self) -> &[ChannelMask] {
        &self.masks
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    /// Output channel count of each conv layer, in conv order.
    pub fn conv_widths(&self) -> Vec<usize> {
        self.masks.iter().map(|m| m.len()).collect()
    }

    pub fn num_conv_layers(&self) -> usize {
        self.masks.len()
    }

    /// Run the network, keeping per-layer inputs and raw conv outputs.
    pub fn forward_trace(&self, x: &Tensor) -> Result<ForwardTrace> {
        let (_, c, h, w) = x.dims();
        if (c, h, w) != self.spec.input {
            return Err(Error::Dimension(format!(
                "model expects input {:?}, got {:?}",
                self.spec.input,
                (c, h, w)
            )));
        }
        let mut layer_inputs = Vec::with_capacity(self.params.len());
        let mut conv_outputs = Vec::new();
        let mut cur = x.clone();
        for (layer, param) in self.spec.layers.iter().zip(&self.params) {
            layer_inputs.push(cur.clone());
            cur = match (layer, param) {
                (LayerDesc::Conv { .. }, LayerParams::Conv(k)) => {
                    let out = conv2d_forward(&cur, k)?;
                    conv_outputs.push(out.clone());
                    out
                }
                (LayerDesc::Relu, _) => relu_forward(&cur),
                (LayerDesc::AvgPool { window }, _) => avg_pool2d(&cur, *window)?,
                (LayerDesc::GlobalAvgPool, _) => global_avg_pool(&cur)?,
                (LayerDesc::Dense { .. }, LayerParams::Dense(d)) => dense_forward(&cur, d)?,
                _ => unreachable!("params out of sync with spec"),
            };
        }
        Ok(ForwardTrace { layer_inputs, conv_outputs, logits: cur })
    }

    /// Logits for a batch, shape `N x num_classes x 1 x 1`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(x)?.logits)
    }

    /// Summed cross-entropy loss and summed parameter gradients over a batch.
    pub fn loss_and_grads(&self, x: &Tensor, labels: &[usize]) -> Result<(f32, ModelGrads)> {
        let (n, _, _, _) = x.dims();
        if labels.len() != n {
            return Err(Error::Dimension(format!("{n} samples but {} labels", labels.len())));
        }
        let trace = self.forward_trace(x)?;
        let u = self.spec.num_classes;
        let mut loss_sum = 0.0f32;
        let mut upstream = Tensor::zeros([n, u, 1, 1]);
        for (ni, &label) in labels.iter().enumerate() {
            let row = &trace.logits.data()[ni * u..(ni + 1) * u];
            let (loss, grad) = softmax_cross_entropy(row, label)?;
            loss_sum += loss;
            upstream.data_mut()[ni * u..(ni + 1) * u].copy_from_slice(&grad);
        }
        let mut grads: ModelGrads = self
            .params
            .iter()
            .map(|p| match p {
                LayerParams::Conv(k) => LayerParams::Conv(ConvKernel::zeros(
                    k.out_channels,
                    k.in_channels,
                    k.kernel,
                    k.stride,
                    k.padding,
                )),
                LayerParams::Dense(d) => {
                    LayerParams::Dense(DenseLayer::zeros(d.out_features, d.in_features))
                }
                LayerParams::Stateless => LayerParams::Stateless,
            })
            .collect();
        let mut grad_out = upstream;
        for i in (0..self.spec.layers.len()).rev() {
            let input = &trace.layer_inputs[i];
            grad_out = match (&self.spec.layers[i], &self.params[i]) {
                (LayerDesc::Conv { .. }, LayerParams::Conv(k)) => {
                    let (dx, dk, db) = conv2d_backward(input, k, &grad_out)?;
                    if let LayerParams::Conv(g) = &mut grads[i] {
                        g.weights = dk.weights;
                        g.bias = db;
                    }
                    dx
                }
                (LayerDesc::Relu, _) => relu_backward(input, &grad_out)?,
                (LayerDesc::AvgPool { window }, _) => {
                    avg_pool2d_backward(input.shape(), *window, &grad_out)?
                }
                (LayerDesc::GlobalAvgPool, _) => {
                    global_avg_pool_backward(input.shape(), &grad_out)?
                }
                (LayerDesc::Dense { .. }, LayerParams::Dense(d)) => {
                    let (dx, dd) = dense_backward(input, d, &grad_out)?;
                    grads[i] = LayerParams::Dense(dd);
                    dx
                }
                _ => unreachable!("params out of sync with spec"),
            };
        }
        Ok((loss_sum, grads))
    }

    /// Zero out every gradient entry belonging to a masked channel: the filter
    /// and bias of the channel itself plus all downstream weights consuming it.
    pub fn gate_grads(&self, grads: &mut ModelGrads) {
        let conv_indices = self.spec.conv_layer_indices();
        for (conv_order, &layer_idx) in conv_indices.iter().enumerate() {
            let masked = self.masks[conv_order].masked_channels();
            if masked.is_empty() {
                continue;
            }
            if let LayerParams::Conv(g) = &mut grads[layer_idx] {
                for &co in &masked {
                    let per = g.in_channels * g.kernel * g.kernel;
                    g.weights[co * per..(co + 1) * per].iter_mut().for_each(|v| *v = 0.0);
                    g.bias[co] = 0.0;
                }
            }
            if let Some(consumer_idx) = self.next_param_layer(layer_idx) {
                match &mut grads[consumer_idx] {
                    LayerParams::Conv(g) => {
                        for &co in &masked {
                            for out_c in 0..g.out_channels {
                                for ky in 0..g.kernel {
                                    for kx in 0..g.kernel {
                                        let idx = g.widx(out_c, co, ky, kx);
                                        g.weights[idx] = 0.0;
                                    }
                                }
                            }
                        }
                    }
                    LayerParams::Dense(g) => {
                        let (_, h, w) = self.layer_inputs[consumer_idx];
                        let block = h * w;
                        for &co in &masked {
                            for o in 0..g.out_features {
                                for f in co * block..(co + 1) * block {
                                    let idx = g.widx(o, f);
                                    g.weights[idx] = 0.0;
                                }
                            }
                        }
                    }
                    LayerParams::Stateless => {}
                }
            }
        }
    }

    /// Gated SGD step: masked gradients are zeroed, then every parameter layer
    /// is updated in place.
    pub fn sgd_update(&mut self, grads: &mut ModelGrads, cfg: SgdConfig) -> Result<()> {
        self.gate_grads(grads);
        for (param, grad) in self.params.iter_mut().zip(grads.iter()) {
            match (param, grad) {
                (LayerParams::Conv(k), LayerParams::Conv(g)) => {
                    sgd_step(&mut k.weights, &g.weights, cfg)?;
                    sgd_step(&mut k.bias, &g.bias, cfg)?;
                }
                (LayerParams::Dense(d), LayerParams::Dense(g)) => {
                    sgd_step(&mut d.weights, &g.weights, cfg)?;
                    sgd_step(&mut d.bias, &g.bias, cfg)?;
                }
                (LayerParams::Stateless, LayerParams::Stateless) => {}
                _ => return Err(Error::Dimension("gradient layout mismatch".into())),
            }
        }
        Ok(())
    }

    /// Spec index of the next conv or dense layer after `layer_idx`, if any.
    fn next_param_layer(&self, layer_idx: usize) -> Option<usize> {
        self.spec.layers[layer_idx + 1..]
            .iter()
            .position(|l| matches!(l, LayerDesc::Conv { .. } | LayerDesc::Dense { .. }))
            .map(|off| layer_idx + 1 + off)
    }

    /// All parameters flattened in declaration order (weights then bias per layer).
    pub fn flat_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.params {
            match p {
                LayerParams::Conv(k) => {
                    out.extend_from_slice(&k.weights);
                    out.extend_from_slice(&k.bias);
                }
                LayerParams::Dense(d) => {
                    out.extend_from_slice(&d.weights);
                    out.extend_from_slice(&d.bias);
                }
                LayerParams::Stateless => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .map(|p| match p {
                LayerParams::Conv(k) => k.weights.len() + k.bias.len(),
                LayerParams::Dense(d) => d.weights.len() + d.bias.len(),
                LayerParams::Stateless => 0,
            })
            .sum()
    }

    pub fn set_flat_params(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "flat parameter vector has {} entries, model has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for p in &mut self.params {
            match p {
                LayerParams::Conv(k) => {
                    let (wn, bn) = (k.weights.len(), k.bias.len());
                    k.weights.copy_from_slice(&flat[off..off + wn]);
                    off += wn;
                    k.bias.copy_from_slice(&flat[off..off + bn]);
                    off += bn;
                }
                LayerParams::Dense(d) => {
                    let (wn, bn) = (d.weights.len(), d.bias.len());
                    d.weights.copy_from_slice(&flat[off..off + wn]);
                    off += wn;
                    d.bias.copy_from_slice(&flat[off..off + bn]);
                    off += bn;
                }
                LayerParams::Stateless => {}
            }
        }
        Ok(())
    }

    /// Add `delta` (same flat layout) to the parameters in place.
    pub fn add_flat(&mut self, delta: &[f32]) -> Result<()> {
        if delta.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "delta has {} entries, model has {}",
                delta.len(),
                self.param_count()
            )));
        }
        let mut flat = self.flat_params();
        for (p, &d) in flat.iter_mut().zip(delta) {
            *p += d;
        }
        self.set_flat_params(&flat)
    }

    /// Replace the mask set. Validates widths and the one-kept-channel floor;
    /// weights are left untouched (checkpoint data already satisfies the
    /// zeroing invariant).
    pub fn set_masks(&mut self, masks: Vec<ChannelMask>) -> Result<()> {
        if masks.len() != self.masks.len() {
            return Err(Error::Dimension(format!(
                "{} masks for {} conv layers",
                masks.len(),
                self.masks.len()
            )));
        }
        for (k, m) in masks.iter().enumerate() {
            if m.len() != self.masks[k].len() {
                return Err(Error::Dimension(format!(
                    "mask {k} has {} flags, layer width is {}",
                    m.len(),
                    self.masks[k].len()
                )));
            }
            if m.kept_count() == 0 {
                return Err(Error::PruneCap(format!("mask {k} keeps no channel")));
            }
        }
        self.masks = masks;
        Ok(())
    }

    /// True when every masked channel's filter, bias and downstream consumer
    /// weights are exactly zero.
    pub fn mask_invariant_holds(&self) -> bool {
        let conv_indices = self.spec.conv_layer_indices();
        for (conv_order, &layer_idx) in conv_indices.iter().enumerate() {
            let masked = self.masks[conv_order].masked_channels();
            if masked.is_empty() {
                continue;
            }
            let k = match &self.params[layer_idx] {
                LayerParams::Conv(k) => k,
                _ => return false,
            };
            for &co in &masked {
                let per = k.in_channels * k.kernel * k.kernel;
                if k.weights[co * per..(co + 1) * per].iter().any(|&v| v != 0.0) {
                    return false;
                }
                if k.bias[co] != 0.0 {
                    return false;
                }
            }
            if let Some(consumer_idx) = self.next_param_layer(layer_idx) {
                match &self.params[consumer_idx] {
                    LayerParams::Conv(nk) => {
                        for &co in &masked {
                            for out_c in 0..nk.out_channels {
                                for ky in 0..nk.kernel {
                                    for kx in 0..nk.kernel {
                                        if nk.weights[nk.widx(out_c, co, ky, kx)] != 0.0 {
                                            return false;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    LayerParams::Dense(d) => {
                        let (_, h, w) = self.layer_inputs[consumer_idx];
                        let block = h * w;
                        for &co in &masked {
                            for o in 0..d.out_features {
                                for f in co * block..(co + 1) * block {
                                    if d.weights[d.widx(o, f)] != 0.0 {
                                        return false;
                                    }
                                }
                            }
                        }
                    }
                    LayerParams::Stateless => {}
                }
            }
        }
        true
    }
}

/// Flatten a gradient set in declaration order (weights then bias per layer).
pub fn flatten_grads(grads: &ModelGrads) -> Vec<f32> {
    let mut out = Vec::new();
    for g in grads {
        match g {
            LayerParams::Conv(k) => {
                out.extend_from_slice(&k.weights);
                out.extend_from_slice(&k.bias);
            }
            LayerParams::Dense(d) => {
                out.extend_from_slice(&d.weights);
                out.extend_from_slice(&d.bias);
            }
            LayerParams::Stateless => {}
        }
    }
    out
}

/// Mask the channels named by `plan` on a copy of the model: keep flags are
/// cleared, filters zeroed, and every downstream consumer weight zeroed.
/// Refuses plans that would empty a layer.
pub fn apply_mask(model: &PrunableModel, plan: &PrunePlan) -> Result<PrunableModel> {
    if plan.layers.len() != model.num_conv_layers() {
        return Err(Error::Dimension(format!(
            "plan covers {} conv layers, model has {}",
            plan.layers.len(),
            model.num_conv_layers()
        )));
    }
    let mut out = model.clone();
    let conv_indices = out.spec.conv_layer_indices();
    for (conv_order, channels) in plan.layers.iter().enumerate() {
        let width = out.masks[conv_order].len();
        let mut kept: Vec<bool> = out.masks[conv_order].kept_flags().to_vec();
        for &c in channels {
            if c >= width {
                return Err(Error::Dimension(format!(
                    "conv layer {conv_order}: channel {c} out of range (width {width})"
                )));
            }
            kept[c] = false;
        }
        if !kept.iter().any(|&k| k) {
            return Err(Error::PruneCap(format!(
                "plan would remove every channel of conv layer {conv_order}"
            )));
        }
        out.masks[conv_order] = ChannelMask::from_kept(kept);

        let layer_idx = conv_indices[conv_order];
        let masked = out.masks[conv_order].masked_channels();
        if let LayerParams::Conv(k) = &mut out.params[layer_idx] {
            for &co in &masked {
                let per = k.in_channels * k.kernel * k.kernel;
                k.weights[co * per..(co + 1) * per].iter_mut().for_each(|v| *v = 0.0);
                k.bias[co] = 0.0;
            }
        }
        if let Some(consumer_idx) = out.next_param_layer(layer_idx) {
            let dense_block = {
                let (_, h, w) = out.layer_inputs[consumer_idx];
                h * w
            };
            match &mut out.params[consumer_idx] {
                LayerParams::Conv(nk) => {
                    for &co in &masked {
                        for out_c in 0..nk.out_channels {
                            for ky in 0..nk.kernel {
                                for kx in 0..nk.kernel {
                                    let idx = nk.widx(out_c, co, ky, kx);
                                    nk.weights[idx] = 0.0;
                                }
                            }
                        }
                    }
                }
                LayerParams::Dense(d) => {
                    for &co in &masked {
                        for o in 0..d.out_features {
                            for f in co * dense_block..(co + 1) * dense_block {
                                let idx = d.widx(o, f);
                                d.weights[idx] = 0.0;
                            }
                        }
                    }
                }
                LayerParams::Stateless => {}
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::three_block_cnn;

    fn small_model(seed: u64) -> PrunableModel {
        build_model(&three_block_cnn((1, 8, 8), 4, [4, 6, 8]), seed).unwrap()
    }

    #[test]
    fn same_spec_and_seed_give_identical_weights() {
        let a = small_model(42);
        let b = small_model(42);
        assert_eq!(a.flat_params(), b.flat_params());
        let c = small_model(43);
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn mismatched_head_is_rejected_at_build() {
        let mut spec = three_block_cnn((1, 8, 8), 4, [4, 6, 8]);
        spec.num_classes = 3;
        assert!(build_model(&spec, 0).is_err());
    }

    #[test]
    fn empty_plan_is_identity() {
        let m = small_model(7);
        let masked = apply_mask(&m, &PrunePlan::empty(3)).unwrap();
        assert_eq!(m, masked);
    }

    #[test]
    fn masking_a_channel_zeroes_its_feature_map() {
        let m = small_model(9);
        let plan = PrunePlan { ratio: 0.25, layers: vec![vec![0], vec![], vec![]] };
        let masked = apply_mask(&m, &plan).unwrap();
        assert!(masked.mask_invariant_holds());
        let mut rng = crate::seeding::rng_from(1);
        let x = Tensor::from_vec(
            [2, 1, 8, 8],
            (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let trace = masked.forward_trace(&x).unwrap();
        let o0 = &trace.conv_outputs[0];
        let (n, _, h, w) = o0.dims();
        for ni in 0..n {
            for y in 0..h {
                for xw in 0..w {
                    assert_eq!(o0.at(ni, 0, y, xw), 0.0);
                }
            }
        }
    }

    #[test]
    fn plan_emptying_a_layer_is_refused() {
        let m = small_model(5);
        let plan = PrunePlan { ratio: 1.0, layers: vec![vec![0, 1, 2, 3], vec![], vec![]] };
        assert!(matches!(apply_mask(&m, &plan), Err(Error::PruneCap(_))));
    }

    #[test]
    fn gated_update_keeps_masked_weights_zero() {
        let m = small_model(11);
        let plan = PrunePlan { ratio: 0.25, layers: vec![vec![1], vec![2, 3], vec![0]] };
        let mut masked = apply_mask(&m, &plan).unwrap();
        let mut rng = crate::seeding::rng_from(2);
        let x = Tensor::from_vec(
            [4, 1, 8, 8],
            (0..256).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let labels = vec![0, 1, 2, 3];
        let cfg = SgdConfig::new(0.1, 0.0).unwrap();
        for _ in 0..5 {
            let (_, mut grads) = masked.loss_and_grads(&x, &labels).unwrap();
            masked.sgd_update(&mut grads, cfg).unwrap();
        }
        assert!(masked.mask_invariant_holds());
    }

    #[test]
    fn forward_is_pure() {
        let m = small_model(3);
        let x = Tensor::from_vec([1, 1, 8, 8], (0..64).map(|i| i as f32 / 64.0).collect()).unwrap();
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        assert_eq!(a, b);
    }
}
