//! Representation extraction oracles: hand-evaluated class means, the
//! union/count-weighted-mean identity, and masked-channel columns.

mod support;

use fedscrub::data::LabeledDataset;
use fedscrub::model::{
    apply_mask, build_model, two_block_cnn, LayerDesc, LayerParams, ModelSpec, PrunePlan,
};
use fedscrub::nn::Tensor;
use fedscrub::repr::{deserialize_repr, extract_local_repr, serialize_repr};
use fedscrub::data::synth_blobs;
use support::*;

/// One conv layer (1x1 kernel, passthrough) + head, so feature maps equal
/// inputs exactly and class means can be hand-computed.
fn passthrough_model(num_classes: usize) -> fedscrub::model::PrunableModel {
    let spec = ModelSpec {
        input: (1, 2, 2),
        num_classes,
        layers: vec![
            LayerDesc::Conv { out_channels: 1, kernel: 1, stride: 1, padding: 0 },
            LayerDesc::Relu,
            LayerDesc::GlobalAvgPool,
            LayerDesc::Dense { out_features: num_classes },
        ],
    };
    let mut model = build_model(&spec, 0).unwrap();
    let mut flat = vec![0.0f32; model.param_count()];
    flat[0] = 1.0; // 1x1 conv weight = identity
    model.set_flat_params(&flat).unwrap();
    model
}

fn dataset_from(values: Vec<(Vec<f32>, usize)>, num_classes: usize) -> LabeledDataset {
    let n = values.len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (img, label) in values {
        data.extend(img);
        labels.push(label);
    }
    LabeledDataset::new(Tensor::from_vec([n, 1, 2, 2], data).unwrap(), labels, num_classes).unwrap()
}

#[test]
fn constant_positive_map_yields_that_constant() {
    let model = passthrough_model(2);
    let ds = dataset_from(vec![(vec![0.7; 4], 0)], 2);
    let repr = extract_local_repr(&model, &ds).unwrap();
    assert!((repr.layers[0].at(0, 0) - 0.7).abs() < 1e-6);
    assert_eq!(repr.class_counts, vec![1, 0]);
}

#[test]
fn all_negative_preactivations_floor_at_zero() {
    let model = passthrough_model(2);
    let ds = dataset_from(vec![(vec![-0.5, -1.0, -2.0, -0.1], 1)], 2);
    let repr = extract_local_repr(&model, &ds).unwrap();
    assert_eq!(repr.layers[0].at(1, 0), 0.0);
}

#[test]
fn two_images_of_one_class_average_their_channel_means() {
    let model = passthrough_model(2);
    let ds = dataset_from(vec![(vec![1.0; 4], 0), (vec![3.0; 4], 0)], 2);
    let repr = extract_local_repr(&model, &ds).unwrap();
    assert!((repr.layers[0].at(0, 0) - 2.0).abs() < 1e-6);
}

#[test]
fn union_equals_count_weighted_mean_of_parts() {
    let model = build_model(&two_block_cnn((1, 8, 8), 3, [4, 6]), 3).unwrap();
    let ds = synth_blobs(3, 30, (1, 8, 8), 17).unwrap();
    let first: Vec<usize> = (0..40).collect();
    let second: Vec<usize> = (40..90).collect();
    let a = extract_local_repr(&model, &ds.subset(&first)).unwrap();
    let b = extract_local_repr(&model, &ds.subset(&second)).unwrap();
    let whole = extract_local_repr(&model, &ds).unwrap();
    for l in 0..whole.layers.len() {
        for class in 0..3 {
            let (ca, cb) = (a.class_counts[class] as f64, b.class_counts[class] as f64);
            for j in 0..whole.layers[l].channels {
                let merged = (a.layers[l].at(class, j) as f64 * ca
                    + b.layers[l].at(class, j) as f64 * cb)
                    / (ca + cb);
                let got = whole.layers[l].at(class, j) as f64;
                assert!(
                    (got - merged).abs() <= 1e-6,
                    "layer {l} class {class} channel {j}: {got} vs {merged}"
                );
            }
        }
    }
}

#[test]
fn masked_channel_column_is_identically_zero() {
    let model = build_model(&two_block_cnn((1, 8, 8), 3, [4, 6]), 4).unwrap();
    let masked =
        apply_mask(&model, &PrunePlan { ratio: 0.25, layers: vec![vec![1], vec![0, 5]] }).unwrap();
    let ds = synth_blobs(3, 10, (1, 8, 8), 19).unwrap();
    let repr = extract_local_repr(&masked, &ds).unwrap();
    for class in 0..3 {
        assert_eq!(repr.layers[0].at(class, 1), 0.0);
        assert_eq!(repr.layers[1].at(class, 0), 0.0);
        assert_eq!(repr.layers[1].at(class, 5), 0.0);
    }
}

#[test]
fn payload_accounting_matches_wire_bytes() {
    let model = build_model(&two_block_cnn((1, 8, 8), 3, [4, 6]), 5).unwrap();
    let ds = synth_blobs(3, 5, (1, 8, 8), 20).unwrap();
    let repr = extract_local_repr(&model, &ds).unwrap();
    let bytes = serialize_repr(&repr);
    // magic+version+count headers plus |U| x Cout floats per layer and counts
    let floats: usize = repr.layers.iter().map(|l| l.values.len()).sum();
    let expected = 12 + repr.layers.len() * 8 + 4 * floats + 4 + 4 * repr.class_counts.len();
    assert_eq!(bytes.len(), expected);
    assert_eq!(repr.payload_bytes(), expected);
    assert_eq!(deserialize_repr(&bytes).unwrap(), repr);
}

#[test]
fn repr_gradient_free_and_model_untouched() {
    let model = build_model(&two_block_cnn((1, 8, 8), 3, [4, 6]), 6).unwrap();
    let before = model.flat_params();
    let ds = synth_blobs(3, 8, (1, 8, 8), 21).unwrap();
    let a = extract_local_repr(&model, &ds).unwrap();
    let b = extract_local_repr(&model, &ds).unwrap();
    assert_eq!(a, b);
    assert_eq!(model.flat_params(), before);
}

#[test]
fn entries_are_non_negative() {
    let mut r = rng(0x77);
    let model = build_model(&two_block_cnn((1, 8, 8), 4, [4, 6]), 7).unwrap();
    let images = random_tensor(&mut r, [12, 1, 8, 8], -1.0, 1.0);
    let labels: Vec<usize> = (0..12).map(|i| i % 4).collect();
    let ds = LabeledDataset::new(images, labels, 4).unwrap();
    let repr = extract_local_repr(&model, &ds).unwrap();
    for layer in &repr.layers {
        assert!(layer.values.iter().all(|&v| v >= 0.0));
    }
}
