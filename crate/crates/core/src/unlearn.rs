//! End-to-end federated unlearning: collect representations, prune the
//! target class's channels, fine-tune on target-free shards. Also the two
//! baselines it is compared against: full retraining and Fisher unlearning.

use crate::data::{ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::fed::{select_clients, train_loop, FlConfig, RoundResult, StopRule};
use crate::model::{apply_mask, build_model, flatten_grads, ModelSpec, PrunableModel, PrunePlan};
use crate::repr::extract_local_repr;
use crate::scrub::{
    aggregate_reprs, score_layers, select_prune_channels, GlobalRepresentation, SelectionMode,
    TfIdfScores,
};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// A request to forget a set of classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnRequest {
    /// Classes to forget; a non-empty proper subset of the class space.
    pub targets: Vec<usize>,
    /// Per-layer prune fraction, in (0, 1).
    pub ratio: f32,
    /// Fine-tuning round budget.
    pub finetune_budget: usize,
    /// Stop fine-tuning once R-set accuracy (percent) reaches this value;
    /// budget-only when absent.
    pub target_r_accuracy: Option<f64>,
}

impl UnlearnRequest {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::Config("unlearn request needs at least one target".into()));
        }
        if self.targets.len() >= num_classes {
            return Err(Error::Config("cannot forget every class".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &t in &self.targets {
            if t >= num_classes {
                return Err(Error::LabelOutOfRange { label: t, num_classes });
            }
            if !seen.insert(t) {
                return Err(Error::Config(format!("duplicate target class {t}")));
            }
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config(format!("prune ratio must be in (0,1), got {}", self.ratio)));
        }
        Ok(())
    }
}

/// Pipeline stage names, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Raw,
    AfterPruned(usize),
    FineTuned,
    Retrained,
    Fisher,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Raw => write!(f, "raw"),
            Stage::AfterPruned(k) => write!(f, "after-pruned-{k}"),
            Stage::FineTuned => write!(f, "fine-tuned"),
            Stage::Retrained => write!(f, "retrained"),
            Stage::Fisher => write!(f, "fisher"),
        }
    }
}

/// Model state and accuracies at one pipeline stage.
#[derive(Debug, Clone)]
pub struct StageSnapshot {
    pub stage: Stage,
    pub model: PrunableModel,
    pub u_accuracy: Option<f64>,
    pub r_accuracy: Option<f64>,
    /// Training rounds consumed to reach this stage.
    pub rounds: usize,
    pub converged: bool,
}

/// Which clients upload representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReprParticipants {
    /// Every client (needed under extreme bias, where a sampled subset can
    /// miss classes entirely).
    All,
    /// A uniform sample of the given size.
    Sample(usize),
}

/// How scores are refreshed between multi-class pruning passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreRefresh {
    /// Zero the pruned channels' columns and rescore (no extra communication).
    MaskColumns,
    /// Re-run client extraction on the masked model before each pass.
    ReExtract,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnlearnOptions {
    pub repr_participants: ReprParticipants,
    pub score_refresh: ScoreRefresh,
    pub selection_mode: SelectionMode,
    /// Weight the server-side representation mean by per-class sample counts.
    pub weighted_repr: bool,
}

impl Default for UnlearnOptions {
    fn default() -> Self {
        UnlearnOptions {
            repr_participants: ReprParticipants::All,
            score_refresh: ScoreRefresh::MaskColumns,
            selection_mode: SelectionMode::PerLayerTopFraction,
            weighted_repr: false,
        }
    }
}

/// Everything the unlearning pipeline produced.
#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub snapshots: Vec<StageSnapshot>,
    pub finetune_history: Vec<RoundResult>,
    pub scores: Vec<TfIdfScores>,
    pub plans: Vec<PrunePlan>,
    pub converged: bool,
}

fn collect_global_repr(
    model: &PrunableModel,
    train: &LabeledDataset,
    shards: &ClientShard,
    participants: &[usize],
    weighted: bool,
) -> Result<GlobalRepresentation> {
    let mut reprs = Vec::new();
    for &id in participants {
        let shard = shards.client(id);
        if shard.is_empty() {
            continue;
        }
        reprs.push(extract_local_repr(model, &train.subset(shard))?);
    }
    if reprs.is_empty() {
        return Err(Error::Empty("no participant had local data for extraction".into()));
    }
    aggregate_reprs(&reprs, weighted)
}

/// Run the full unlearning pipeline against a trained global model:
/// notify participants, collect and aggregate representations, prune one
/// target class at a time, then fine-tune on target-free shards. Emits a
/// snapshot at every stage; `eval` returns `(u_accuracy, r_accuracy)` against
/// the request's targets.
pub fn federated_unlearn(
    model: &PrunableModel,
    train: &LabeledDataset,
    shards: &ClientShard,
    request: &UnlearnRequest,
    fl: &FlConfig,
    opts: &UnlearnOptions,
    mut eval: impl FnMut(&PrunableModel) -> Result<(Option<f64>, Option<f64>)>,
) -> Result<UnlearnOutcome> {
    request.validate(model.num_classes())?;
    fl.validate()?;

    let mut snapshots = Vec::new();
    let (u, r) = eval(model)?;
    snapshots.push(StageSnapshot {
        stage: Stage::Raw,
        model: model.clone(),
        u_accuracy: u,
        r_accuracy: r,
        rounds: 0,
        converged: true,
    });

    let participants: Vec<usize> = match opts.repr_participants {
        ReprParticipants::All => (0..shards.num_clients()).collect(),
        ReprParticipants::Sample(n) => {
            select_clients(shards.num_clients(), n, usize::MAX, fl.seed)?
        }
    };

    let mut current = model.clone();
    let mut scores_out = Vec::new();
    let mut plans_out = Vec::new();
    let mut global =
        collect_global_repr(&current, train, shards, &participants, opts.weighted_repr)?;
    for (k, &target) in request.targets.iter().enumerate() {
        if k > 0 {
            match opts.score_refresh {
                ScoreRefresh::MaskColumns => {
                    // columns of pruned channels were zeroed after the previous pass
                }
                ScoreRefresh::ReExtract => {
                    global = collect_global_repr(
                        &current,
                        train,
                        shards,
                        &participants,
                        opts.weighted_repr,
                    )?;
                }
            }
        }
        let scores = score_layers(&global, target)?;
        let plan =
            select_prune_channels(&scores, request.ratio, Some(current.masks()), opts.selection_mode)?;
        if !plan.is_empty() {
            current = apply_mask(&current, &plan)?;
        }
        if matches!(opts.score_refresh, ScoreRefresh::MaskColumns) {
            for (layer, channels) in global.layers.iter_mut().zip(&plan.layers) {
                for &j in channels {
                    for class in 0..layer.num_classes {
                        *layer.at_mut(class, j) = 0.0;
                    }
                }
            }
        }
        let (u, r) = eval(&current)?;
        snapshots.push(StageSnapshot {
            stage: Stage::AfterPruned(k),
            model: current.clone(),
            u_accuracy: u,
            r_accuracy: r,
            rounds: 0,
            converged: true,
        });
        scores_out.push(scores);
        plans_out.push(plan);
    }

    let ft_shards = shards.exclude_targets(&train.labels, &request.targets);
    let stop = request
        .target_r_accuracy
        .map(StopRule::RestoredAndForgotten)
        .unwrap_or(StopRule::Budget);
    let (history, converged) = fine_tune(
        &mut current,
        train,
        &ft_shards,
        &request.targets,
        fl,
        request.finetune_budget,
        stop,
        &mut eval,
    )?;
    let (u, r) = eval(&current)?;
    snapshots.push(StageSnapshot {
        stage: Stage::FineTuned,
        model: current,
        u_accuracy: u,
        r_accuracy: r,
        rounds: history.len(),
        converged,
    });
    Ok(UnlearnOutcome {
        snapshots,
        finetune_history: history,
        scores: scores_out,
        plans: plans_out,
        converged,
    })
}

/// Post-prune recovery: ordinary federated training on shards that exclude
/// the targets, with mask gradient-gating active. Returns the per-round
/// history and whether the stop target was reached (0 rounds when the model
/// is already at target).
#[allow(clippy::too_many_arguments)]
pub fn fine_tune(
    model: &mut PrunableModel,
    train: &LabeledDataset,
    shards: &ClientShard,
    targets: &[usize],
    fl: &FlConfig,
    budget: usize,
    stop: StopRule,
    mut eval: impl FnMut(&PrunableModel) -> Result<(Option<f64>, Option<f64>)>,
) -> Result<(Vec<RoundResult>, bool)> {
    for (id, shard) in shards.iter().enumerate() {
        if let Some(&i) = shard.iter().find(|&&i| targets.contains(&train.labels[i])) {
            return Err(Error::Config(format!(
                "client {id} still holds sample {i} of a target class"
            )));
        }
    }
    if !matches!(stop, StopRule::Budget) {
        let (u, r) = eval(model)?;
        if stop.satisfied(u, r) {
            return Ok((Vec::new(), true));
        }
    }
    let mut cfg = *fl;
    cfg.max_rounds = budget;
    let history = train_loop(model, train, shards, &cfg, stop, |m, _| eval(m))?;
    let converged = match stop {
        StopRule::Budget => true,
        _ => history
            .last()
            .map_or(false, |r| stop.satisfied(r.u_accuracy, r.r_accuracy)),
    };
    if !converged {
        log::warn!("fine-tune exhausted its {budget}-round budget before the target");
    }
    Ok((history, converged))
}

/// Baseline: retrain from a fresh initialization on target-free shards.
#[allow(clippy::too_many_arguments)]
pub fn full_retrain_baseline(
    spec: &ModelSpec,
    init_seed: u64,
    train: &LabeledDataset,
    shards: &ClientShard,
    fl: &FlConfig,
    budget: usize,
    stop: StopRule,
    mut eval: impl FnMut(&PrunableModel) -> Result<(Option<f64>, Option<f64>)>,
) -> Result<(PrunableModel, Vec<RoundResult>, bool)> {
    let mut model = build_model(spec, init_seed)?;
    let mut cfg = *fl;
    cfg.max_rounds = budget;
    let history = train_loop(&mut model, train, shards, &cfg, stop, |m, _| eval(m))?;
    let converged = match stop {
        StopRule::Budget => true,
        _ => history
            .last()
            .map_or(false, |r| stop.satisfied(r.u_accuracy, r.r_accuracy)),
    };
    Ok((model, history, converged))
}

/// Fisher unlearning hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherConfig {
    /// Noise magnitude; the corrective step is exact when 0.
    pub sigma: f32,
    /// Added to every diagonal Fisher entry before inversion.
    pub damping: f32,
}

impl Default for FisherConfig {
    fn default() -> Self {
        FisherConfig { sigma: 1e-2, damping: 1e-8 }
    }
}

/// One coordinate of the corrective Newton step with Fisher-scaled noise:
/// `w - delta / (F + damping) + sigma * (F + damping)^(-1/4) * noise`.
pub fn fisher_step(weight: f32, grad: f32, fisher: f32, sigma: f32, damping: f32, noise: f32) -> f32 {
    let f = (fisher + damping) as f64;
    (weight as f64 - grad as f64 / f + sigma as f64 * f.powf(-0.25) * noise as f64) as f32
}

/// Baseline: corrective Newton step with diagonal empirical Fisher and noise
/// injection, both computed on the participants' target-free local data.
/// The caller fine-tunes the result exactly like the pruning path.
pub fn fisher_unlearn_baseline(
    model: &PrunableModel,
    train: &LabeledDataset,
    participant_shards: &[&[usize]],
    cfg: &FisherConfig,
    seed: u64,
) -> Result<PrunableModel> {
    let p = model.param_count();
    let mut grad_sum = vec![0.0f64; p];
    let mut grad_sq_sum = vec![0.0f64; p];
    let mut n = 0usize;
    for shard in participant_shards {
        for &idx in shard.iter() {
            let batch = crate::data::gather(train, &[idx]);
            let (_, grads) = model.loss_and_grads(&batch.images, &batch.labels)?;
            let flat = flatten_grads(&grads);
            for (i, &g) in flat.iter().enumerate() {
                grad_sum[i] += g as f64;
                grad_sq_sum[i] += (g as f64) * (g as f64);
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("fisher baseline needs at least one sample".into()));
    }
    let mut rng = crate::seeding::rng_from(crate::seeding::derive_seed(seed, &[0xf154]));
    let mut flat = model.flat_params();
    let inv_n = 1.0 / n as f64;
    for (i, w) in flat.iter_mut().enumerate() {
        let delta = (grad_sum[i] * inv_n) as f32;
        let fisher = (grad_sq_sum[i] * inv_n) as f32;
        let noise: f32 = if cfg.sigma == 0.0 { 0.0 } else { StandardNormal.sample(&mut rng) };
        *w = fisher_step(*w, delta, fisher, cfg.sigma, cfg.damping, noise);
    }
    let mut out = model.clone();
    out.set_flat_params(&flat)?;
    Ok(out)
}
