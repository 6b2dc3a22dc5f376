//! Server-side scrubbing: aggregate uploaded representations, score channels
//! with TF-IDF against the target class, and build the prune plan.
//!
//! The mapping follows the text analogy: a channel is a word, a class's
//! feature activations are a document. TF normalizes the target class's row;
//! IDF discounts channels whose contribution is common across classes
//! (activation at or above the class's own row mean).

pub mod text;

use crate::error::{Error, Result};
use crate::model::{ChannelMask, PrunePlan};
use crate::repr::{LocalRepresentation, ReprMatrix};
use std::io::Write;
use std::path::Path;

pub use text::{text_idf, text_tf, text_tfidf_oracle, PresenceRule, TermCounts};

/// Server-side class/channel matrix per layer; every class row is backed by
/// at least one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalRepresentation {
    pub layers: Vec<ReprMatrix>,
}

impl GlobalRepresentation {
    pub fn num_classes(&self) -> usize {
        self.layers.first().map_or(0, |l| l.num_classes)
    }

    pub fn channel_widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.channels).collect()
    }
}

/// TF, IDF and TF-IDF vectors for one layer and one target class.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerScores {
    pub tf: Vec<f32>,
    pub idf: Vec<f32>,
    pub tfidf: Vec<f32>,
}

/// Channel relevance scores for the target class, per conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfScores {
    pub target: usize,
    pub layers: Vec<LayerScores>,
}

/// How the prune set is cut from the scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SelectionMode {
    /// Top `ceil(R * Cout_l)` channels of every layer (default).
    PerLayerTopFraction,
    /// Top `ceil(R * total_channels)` across all layers under one threshold.
    GlobalThreshold,
}

/// Mean the uploaded representations into the global one. A class row is
/// averaged over the participants that actually observed the class;
/// `weighted` switches from plain participant averaging to sample-count
/// weighting. Errors when some class was observed by nobody.
pub fn aggregate_reprs(
    reprs: &[LocalRepresentation],
    weighted: bool,
) -> Result<GlobalRepresentation> {
    let first = reprs
        .first()
        .ok_or_else(|| Error::Empty("aggregate_reprs needs at least one representation".into()))?;
    let num_classes = first.num_classes();
    let widths: Vec<usize> = first.layers.iter().map(|l| l.channels).collect();
    for (i, r) in reprs.iter().enumerate() {
        if r.num_classes() != num_classes
            || r.layers.len() != widths.len()
            || r.layers.iter().zip(&widths).any(|(l, &w)| l.channels != w || l.num_classes != num_classes)
        {
            return Err(Error::Dimension(format!("representation {i} has a different shape")));
        }
    }
    for class in 0..num_classes {
        if reprs.iter().all(|r| !r.has_class(class)) {
            return Err(Error::ClassUnobserved { class });
        }
    }
    let layers = widths
        .iter()
        .enumerate()
        .map(|(l, &channels)| {
            let mut m = ReprMatrix::zeros(num_classes, channels);
            for class in 0..num_classes {
                let observers: Vec<&LocalRepresentation> =
                    reprs.iter().filter(|r| r.has_class(class)).collect();
                let total: f64 = observers.iter().map(|r| r.class_counts[class] as f64).sum();
                for j in 0..channels {
                    let mut acc = 0.0f64;
                    for r in &observers {
                        let w = if weighted {
                            r.class_counts[class] as f64 / total
                        } else {
                            1.0 / observers.len() as f64
                        };
                        acc += w * r.layers[l].at(class, j) as f64;
                    }
                    *m.at_mut(class, j) = acc as f32;
                }
            }
            m
        })
        .collect();
    Ok(GlobalRepresentation { layers })
}

/// Term frequency of every channel for the target class: the class row
/// normalized to sum 1. A zero row yields all zeros (with a warning) rather
/// than an error; a class a layer never fires on exerts no pruning pressure.
pub fn compute_tf(matrix: &ReprMatrix, target: usize) -> Result<Vec<f32>> {
    if target >= matrix.num_classes {
        return Err(Error::LabelOutOfRange { label: target, num_classes: matrix.num_classes });
    }
    let row = matrix.row(target);
    let sum: f64 = row.iter().map(|&v| v as f64).sum();
    if sum <= 0.0 {
        log::warn!("class {target}: zero activation row, TF set to all zeros");
        return Ok(vec![0.0; matrix.channels]);
    }
    Ok(row.iter().map(|&v| (v as f64 / sum) as f32).collect())
}

/// Inverse document frequency of every channel:
/// `ln((1+|U|) / (1 + #{classes whose activation of the channel is >= that
/// class's own row mean}))`. Natural log; the prune plan is invariant to the
/// log base anyway.
pub fn compute_idf(matrix: &ReprMatrix) -> Vec<f32> {
    let u = matrix.num_classes;
    let row_means: Vec<f64> = (0..u)
        .map(|class| {
            let row = matrix.row(class);
            row.iter().map(|&v| v as f64).sum::<f64>() / matrix.channels as f64
        })
        .collect();
    (0..matrix.channels)
        .map(|j| {
            let common = (0..u)
                .filter(|&class| matrix.at(class, j) as f64 >= row_means[class])
                .count();
            (((1 + u) as f64 / (1 + common) as f64).ln()) as f32
        })
        .collect()
}

/// Elementwise product of matching TF and IDF vectors.
pub fn compute_tfidf(tf: &[f32], idf: &[f32]) -> Result<Vec<f32>> {
    if tf.len() != idf.len() {
        return Err(Error::Dimension(format!("TF has {} entries, IDF {}", tf.len(), idf.len())));
    }
    Ok(tf.iter().zip(idf).map(|(&t, &i)| t * i).collect())
}

/// Full per-layer scoring of the global representation for one target class.
pub fn score_layers(global: &GlobalRepresentation, target: usize) -> Result<TfIdfScores> {
    let layers = global
        .layers
        .iter()
        .map(|m| {
            let tf = compute_tf(m, target)?;
            let idf = compute_idf(m);
            let tfidf = compute_tfidf(&tf, &idf)?;
            Ok(LayerScores { tf, idf, tfidf })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TfIdfScores { target, layers })
}

/// Pick the channels to prune. Per layer the request is `ceil(R * Cout_l)`
/// channels (ties broken toward the lower index), drawn from channels still
/// kept by `masks` and capped so at least one kept channel survives.
pub fn select_prune_channels(
    scores: &TfIdfScores,
    ratio: f32,
    masks: Option<&[ChannelMask]>,
    mode: SelectionMode,
) -> Result<PrunePlan> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("prune ratio must be in (0, 1), got {ratio}")));
    }
    if let Some(masks) = masks {
        if masks.len() != scores.layers.len() {
            return Err(Error::Dimension(format!(
                "{} masks for {} scored layers",
                masks.len(),
                scores.layers.len()
            )));
        }
    }
    let eligible = |l: usize, j: usize| masks.map_or(true, |m| m[l].is_kept(j));
    // ceil of R * width, tolerant of f32->f64 representation error in R
    let requested_count = |width: usize| {
        let exact = ratio as f64 * width as f64;
        (exact - (exact * 1e-6 + 1e-9)).ceil() as usize
    };
    let mut layers: Vec<Vec<usize>> = vec![Vec::new(); scores.layers.len()];
    match mode {
        SelectionMode::PerLayerTopFraction => {
            for (l, layer) in scores.layers.iter().enumerate() {
                let width = layer.tfidf.len();
                let mut candidates: Vec<usize> = (0..width).filter(|&j| eligible(l, j)).collect();
                candidates.sort_by(|&a, &b| {
                    layer.tfidf[b].total_cmp(&layer.tfidf[a]).then(a.cmp(&b))
                });
                let requested = requested_count(width);
                let cap = candidates.len().saturating_sub(1);
                let take = requested.min(cap);
                let mut chosen: Vec<usize> = candidates.into_iter().take(take).collect();
                chosen.sort_unstable();
                layers[l] = chosen;
            }
        }
        SelectionMode::GlobalThreshold => {
            let mut pool: Vec<(usize, usize, f32)> = Vec::new();
            let mut kept_per_layer = vec![0usize; scores.layers.len()];
            for (l, layer) in scores.layers.iter().enumerate() {
                for j in 0..layer.tfidf.len() {
                    if eligible(l, j) {
                        pool.push((l, j, layer.tfidf[j]));
                        kept_per_layer[l] += 1;
                    }
                }
            }
            pool.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
            let total: usize = scores.layers.iter().map(|l| l.tfidf.len()).sum();
            let mut budget = requested_count(total);
            let mut remaining = kept_per_layer;
            for (l, j, _) in pool {
                if budget == 0 {
                    break;
                }
                if remaining[l] <= 1 {
                    continue;
                }
                layers[l].push(j);
                remaining[l] -= 1;
                budget -= 1;
            }
            for chosen in layers.iter_mut() {
                chosen.sort_unstable();
            }
        }
    }
    Ok(PrunePlan { ratio, layers })
}

/// Zero the columns of already-pruned channels, so later passes rescore
/// without them.
fn mask_columns(global: &mut GlobalRepresentation, plan: &PrunePlan) {
    for (layer, channels) in global.layers.iter_mut().zip(&plan.layers) {
        for &j in channels {
            for class in 0..layer.num_classes {
                *layer.at_mut(class, j) = 0.0;
            }
        }
    }
}

/// Sequential multi-class pruning: score on the current (column-masked)
/// representation, select, mask, repeat per target. Already-pruned channels
/// are never re-selected. Errors when a pass cannot prune anything at all.
pub fn multi_class_prune(
    global: &GlobalRepresentation,
    targets: &[usize],
    ratio: f32,
    initial_masks: &[ChannelMask],
    mode: SelectionMode,
) -> Result<Vec<PrunePlan>> {
    if targets.is_empty() {
        return Err(Error::Empty("multi_class_prune needs at least one target".into()));
    }
    let mut seen = std::collections::HashSet::new();
    if !targets.iter().all(|t| seen.insert(t)) {
        return Err(Error::Config("duplicate target classes".into()));
    }
    let mut repr = global.clone();
    let mut masks: Vec<ChannelMask> = initial_masks.to_vec();
    let mut plans = Vec::with_capacity(targets.len());
    for &target in targets {
        let scores = score_layers(&repr, target)?;
        let plan = select_prune_channels(&scores, ratio, Some(&masks), mode)?;
        if plan.is_empty() {
            return Err(Error::PruneCap(format!(
                "target {target}: cumulative cap leaves nothing to prune"
            )));
        }
        mask_columns(&mut repr, &plan);
        masks = masks
            .iter()
            .zip(&plan.layers)
            .map(|(m, pruned)| {
                let mut kept = m.kept_flags().to_vec();
                for &j in pruned {
                    kept[j] = false;
                }
                ChannelMask::from_kept(kept)
            })
            .collect();
        plans.push(plan);
    }
    Ok(plans)
}

/// Dump per-channel scores as `layer,channel,tf,idf,tfidf` CSV.
pub fn write_scores_csv(scores: &TfIdfScores, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "layer,channel,tf,idf,tfidf")?;
    for (l, layer) in scores.layers.iter().enumerate() {
        for j in 0..layer.tf.len() {
            writeln!(f, "{l},{j},{},{},{}", layer.tf[j], layer.idf[j], layer.tfidf[j])?;
        }
    }
    Ok(())
}
