//! TF-IDF scoring properties: simplex/bound invariants, log-base invariance
//! of the plan, the text-oracle equivalence, and multi-class staging.

mod support;

use fedscrub::model::ChannelMask;
use fedscrub::repr::ReprMatrix;
use fedscrub::scrub::{
    aggregate_reprs, compute_idf, compute_tf, compute_tfidf, multi_class_prune, score_layers,
    select_prune_channels, text_idf, text_tf, GlobalRepresentation, LayerScores, PresenceRule,
    SelectionMode, TfIdfScores,
};
use proptest::prelude::*;
use rand::Rng;
use support::rng;

fn random_matrix(r: &mut rand_chacha::ChaCha8Rng, classes: usize, channels: usize) -> ReprMatrix {
    let values = (0..classes * channels)
        .map(|_| if r.gen_bool(0.1) { 0.0 } else { r.gen_range(0.0f32..4.0) })
        .collect();
    ReprMatrix { num_classes: classes, channels, values }
}

#[test]
fn tf_is_a_probability_vector_on_nonzero_rows() {
    let mut r = rng(0xA0);
    for _ in 0..200 {
        let m = random_matrix(&mut r, r.gen_range(2..8), r.gen_range(1..24));
        for class in 0..m.num_classes {
            let tf = compute_tf(&m, class).unwrap();
            assert!(tf.iter().all(|&v| v >= 0.0));
            let sum: f64 = tf.iter().map(|&v| v as f64).sum();
            let row_sum: f32 = m.row(class).iter().sum();
            if row_sum > 0.0 {
                assert!((sum - 1.0).abs() <= 1e-6, "TF sums to {sum}");
            } else {
                assert_eq!(sum, 0.0);
            }
        }
    }
}

#[test]
fn idf_stays_in_its_closed_form_bounds() {
    let mut r = rng(0xA1);
    for _ in 0..200 {
        let m = random_matrix(&mut r, r.gen_range(2..10), r.gen_range(1..24));
        let bound = ((1 + m.num_classes) as f32).ln();
        for &v in &compute_idf(&m) {
            assert!((0.0..=bound + 1e-6).contains(&v), "IDF {v} outside [0, {bound}]");
        }
    }
}

/// IDF recomputed in log base 2; rescales every score by 1/ln(2).
fn idf_log2(m: &ReprMatrix) -> Vec<f32> {
    compute_idf(m).iter().map(|&v| v / std::f32::consts::LN_2).collect()
}

#[test]
fn prune_plan_is_invariant_under_log_base_change() {
    let mut r = rng(0xA2);
    for _ in 0..100 {
        let layers: Vec<ReprMatrix> =
            (0..3).map(|_| random_matrix(&mut r, 6, r.gen_range(4..16))).collect();
        let global = GlobalRepresentation { layers };
        let target = r.gen_range(0..6);
        let natural = score_layers(&global, target).unwrap();
        let rescaled = TfIdfScores {
            target,
            layers: global
                .layers
                .iter()
                .map(|m| {
                    let tf = compute_tf(m, target).unwrap();
                    let idf = idf_log2(m);
                    let tfidf = compute_tfidf(&tf, &idf).unwrap();
                    LayerScores { tf, idf, tfidf }
                })
                .collect(),
        };
        for ratio in [0.1f32, 0.3] {
            let a =
                select_prune_channels(&natural, ratio, None, SelectionMode::PerLayerTopFraction)
                    .unwrap();
            let b =
                select_prune_channels(&rescaled, ratio, None, SelectionMode::PerLayerTopFraction)
                    .unwrap();
            assert_eq!(a.layers, b.layers, "plan changed under log base substitution");
        }
    }
}

/// Corpus view of a representation: one document per class, channel `j`
/// becomes the term `"ch{j}"`, zero counts included.
fn corpus_of(m: &ReprMatrix) -> Vec<fedscrub::scrub::TermCounts> {
    (0..m.num_classes)
        .map(|class| {
            m.row(class)
                .iter()
                .enumerate()
                .map(|(j, &v)| (format!("ch{j}"), v as f64))
                .collect()
        })
        .collect()
}

#[test]
fn channel_scorer_matches_text_oracle_under_row_mean_rule() {
    let mut r = rng(0xA3);
    for _ in 0..50 {
        let m = random_matrix(&mut r, r.gen_range(2..8), r.gen_range(2..16));
        let corpus = corpus_of(&m);
        let target = r.gen_range(0..m.num_classes);
        let tf = compute_tf(&m, target).unwrap();
        let idf = compute_idf(&m);
        for j in 0..m.channels {
            let term = format!("ch{j}");
            let text_tf_v = text_tf(&corpus[target], &term);
            assert!(
                (tf[j] as f64 - text_tf_v).abs() <= 1e-6,
                "TF mismatch channel {j}: {} vs {text_tf_v}",
                tf[j]
            );
            let text_idf_v = text_idf(&corpus, &term, PresenceRule::AboveDocMean);
            assert!(
                (idf[j] as f64 - text_idf_v).abs() <= 1e-6,
                "IDF mismatch channel {j}: {} vs {text_idf_v}",
                idf[j]
            );
        }
    }
}

#[test]
fn single_target_multi_class_equals_plain_selection() {
    let mut r = rng(0xA4);
    let layers: Vec<ReprMatrix> = (0..2).map(|_| random_matrix(&mut r, 5, 10)).collect();
    let global = GlobalRepresentation { layers };
    let masks = vec![ChannelMask::all_kept(10), ChannelMask::all_kept(10)];
    let staged =
        multi_class_prune(&global, &[3], 0.2, &masks, SelectionMode::PerLayerTopFraction).unwrap();
    let scores = score_layers(&global, 3).unwrap();
    let plain =
        select_prune_channels(&scores, 0.2, Some(&masks), SelectionMode::PerLayerTopFraction)
            .unwrap();
    assert_eq!(staged.len(), 1);
    assert_eq!(staged[0].layers, plain.layers);
}

#[test]
fn global_threshold_mode_respects_budget_and_caps() {
    let scores = TfIdfScores {
        target: 0,
        layers: vec![
            LayerScores {
                tf: vec![0.0; 4],
                idf: vec![0.0; 4],
                tfidf: vec![10.0, 9.0, 8.0, 7.0], // dominates the pool
            },
            LayerScores { tf: vec![0.0; 4], idf: vec![0.0; 4], tfidf: vec![1.0, 0.5, 0.2, 0.1] },
        ],
    };
    let plan =
        select_prune_channels(&scores, 0.5, None, SelectionMode::GlobalThreshold).unwrap();
    // budget ceil(0.5*8) = 4, but layer 0 can lose at most 3 channels
    assert_eq!(plan.layers[0], vec![0, 1, 2]);
    assert_eq!(plan.layers[1], vec![0]);
}

#[test]
fn duplicate_targets_are_rejected() {
    let global = GlobalRepresentation {
        layers: vec![ReprMatrix { num_classes: 3, channels: 4, values: vec![1.0; 12] }],
    };
    let masks = vec![ChannelMask::all_kept(4)];
    assert!(multi_class_prune(&global, &[1, 1], 0.2, &masks, SelectionMode::PerLayerTopFraction)
        .is_err());
}

#[test]
fn exhausted_layers_make_multi_class_error() {
    let global = GlobalRepresentation {
        layers: vec![ReprMatrix { num_classes: 3, channels: 2, values: vec![1.0; 6] }],
    };
    // one channel already pruned; a pass can no longer prune anything
    let masks = vec![ChannelMask::from_kept(vec![true, false])];
    let err = multi_class_prune(&global, &[0], 0.5, &masks, SelectionMode::PerLayerTopFraction);
    assert!(matches!(err, Err(fedscrub::Error::PruneCap(_))));
}

#[test]
fn aggregation_weighted_flag_uses_class_counts() {
    let mk = |v: f32, counts: Vec<u32>| fedscrub::repr::LocalRepresentation {
        layers: vec![ReprMatrix { num_classes: 1, channels: 1, values: vec![v] }],
        class_counts: counts,
    };
    let reprs = [mk(1.0, vec![3]), mk(5.0, vec![1])];
    let unweighted = aggregate_reprs(&reprs, false).unwrap();
    assert!((unweighted.layers[0].at(0, 0) - 3.0).abs() < 1e-6);
    let weighted = aggregate_reprs(&reprs, true).unwrap();
    assert!((weighted.layers[0].at(0, 0) - 2.0).abs() < 1e-6); // (3*1 + 1*5)/4
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn selection_respects_count_and_sortedness(
        seed in 0u64..10_000,
        channels in 2usize..32,
        ratio in 0.05f32..0.9,
    ) {
        let mut r = rng(seed);
        let m = random_matrix(&mut r, 4, channels);
        let global = GlobalRepresentation { layers: vec![m] };
        let scores = score_layers(&global, 0).unwrap();
        let plan = select_prune_channels(&scores, ratio, None, SelectionMode::PerLayerTopFraction)
            .unwrap();
        let chosen = &plan.layers[0];
        prop_assert!(chosen.windows(2).all(|w| w[0] < w[1]));
        let requested = ((ratio as f64 * channels as f64) - (ratio as f64 * channels as f64 * 1e-6 + 1e-9)).ceil() as usize;
        prop_assert_eq!(chosen.len(), requested.min(channels - 1));
        // every chosen channel scores at least as high as every survivor
        let min_chosen = chosen.iter().map(|&j| scores.layers[0].tfidf[j]).fold(f32::INFINITY, f32::min);
        for j in 0..channels {
            if !chosen.contains(&j) {
                prop_assert!(scores.layers[0].tfidf[j] <= min_chosen);
            }
        }
    }
}
