//! Federated orchestration: client sampling, local updates (FedSGD/FedAvg)
//! and global aggregation over simulated in-process clients.
//!
//! Clients within a round are independent (each works on its own model
//! replica seeded per `(seed, round, client)`), so execution order cannot
//! change results; aggregation always folds contributions in ascending
//! client-id order to fix the summation.

use crate::data::{batch_indices, gather, ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{LayerParams, ModelGrads, PrunableModel};
use crate::nn::SgdConfig;
use crate::seeding::derive_seed;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlMethod {
    FedSgd,
    FedAvg,
}

/// Federated training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlConfig {
    pub total_clients: usize,
    pub participants_per_round: usize,
    pub method: FlMethod,
    pub local_epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub max_rounds: usize,
    pub seed: u64,
    /// Shuffle mini-batches inside local epochs (FedAvg).
    pub shuffle_batches: bool,
    /// Weight contributions by sample count instead of plain averaging.
    pub weighted_aggregation: bool,
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.participants_per_round == 0 || self.participants_per_round > self.total_clients {
            return Err(Error::Config(format!(
                "participants_per_round {} must be in [1, {}]",
                self.participants_per_round, self.total_clients
            )));
        }
        if self.local_epochs == 0 && matches!(self.method, FlMethod::FedAvg) {
            return Err(Error::Config("FedAvg requires local_epochs >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    fn sgd(&self) -> Result<SgdConfig> {
        SgdConfig::new(self.learning_rate, 0.0)
    }
}

/// Accuracy snapshot taken after one aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    /// Accuracy on the target classes, absent when no targets are tracked.
    pub u_accuracy: Option<f64>,
    /// Accuracy on the remaining classes.
    pub r_accuracy: Option<f64>,
    /// Checkpoint path when the driver persists per-round snapshots.
    pub snapshot: Option<std::path::PathBuf>,
}

/// When to leave the training loop (the round budget always applies).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    Budget,
    /// Stop once R-set accuracy (percent) reaches the target.
    TargetRAccuracy(f64),
    /// Stop once R-set accuracy reaches the target AND the targets are gone
    /// (U-set accuracy exactly 0). Unlearning arms use this so a run never
    /// halts while the model still predicts a forgotten class.
    RestoredAndForgotten(f64),
}

impl StopRule {
    pub(crate) fn satisfied(&self, u_acc: Option<f64>, r_acc: Option<f64>) -> bool {
        match *self {
            StopRule::Budget => false,
            StopRule::TargetRAccuracy(target) => r_acc.map_or(false, |r| r >= target),
            StopRule::RestoredAndForgotten(target) => {
                r_acc.map_or(false, |r| r >= target) && u_acc.map_or(true, |u| u == 0.0)
            }
        }
    }
}

/// Uniform sample of `n` distinct clients, deterministic in `(seed, round)`.
pub fn select_clients(m: usize, n: usize, round: usize, seed: u64) -> Result<Vec<usize>> {
    if n > m {
        return Err(Error::Config(format!("cannot select {n} of {m} clients")));
    }
    let mut rng = crate::seeding::rng_from(derive_seed(seed, &[0x5e1e, round as u64]));
    let mut ids: Vec<usize> = (0..m).collect();
    for i in 0..n {
        let j = rng.gen_range(i..m);
        ids.swap(i, j);
    }
    let mut picked = ids[..n].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

fn add_grads(acc: &mut ModelGrads, other: &ModelGrads) {
    for (a, b) in acc.iter_mut().zip(other) {
        match (a, b) {
            (LayerParams::Conv(ka), LayerParams::Conv(kb)) => {
                for (x, y) in ka.weights.iter_mut().zip(&kb.weights) {
                    *x += y;
                }
                for (x, y) in ka.bias.iter_mut().zip(&kb.bias) {
                    *x += y;
                }
            }
            (LayerParams::Dense(da), LayerParams::Dense(db)) => {
                for (x, y) in da.weights.iter_mut().zip(&db.weights) {
                    *x += y;
                }
                for (x, y) in da.bias.iter_mut().zip(&db.bias) {
                    *x += y;
                }
            }
            _ => {}
        }
    }
}

fn scale_grads(grads: &mut ModelGrads, s: f32) {
    for g in grads.iter_mut() {
        match g {
            LayerParams::Conv(k) => {
                k.weights.iter_mut().for_each(|v| *v *= s);
                k.bias.iter_mut().for_each(|v| *v *= s);
            }
            LayerParams::Dense(d) => {
                d.weights.iter_mut().for_each(|v| *v *= s);
                d.bias.iter_mut().for_each(|v| *v *= s);
            }
            LayerParams::Stateless => {}
        }
    }
}

/// One client's contribution to a round.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// Flat weight-space delta (post-update minus global).
    pub delta: Vec<f32>,
    pub num_samples: usize,
}

/// Compute one client's update on its shard. Returns `None` for an empty
/// shard (the skip-client signal).
///
/// FedSGD: one full pass, delta `= -lr * mean gradient` over the shard.
/// FedAvg: `local_epochs` of mini-batch SGD, delta `= local - global`.
pub fn local_update(
    model: &PrunableModel,
    dataset: &LabeledDataset,
    shard: &[usize],
    cfg: &FlConfig,
    round: usize,
    client_id: usize,
) -> Result<Option<ClientUpdate>> {
    if shard.is_empty() {
        return Ok(None);
    }
    let delta = match cfg.method {
        FlMethod::FedSgd => {
            let mut total: Option<ModelGrads> = None;
            for chunk in shard.chunks(cfg.batch_size) {
                let batch = gather(dataset, chunk);
                let (_, grads) = model.loss_and_grads(&batch.images, &batch.labels)?;
                match &mut total {
                    None => total = Some(grads),
                    Some(t) => add_grads(t, &grads),
                }
            }
            let mut total = total.expect("non-empty shard");
            model.gate_grads(&mut total);
            let n = shard.len() as f32;
            let flat = crate::model::flatten_grads(&total);
            flat.iter().map(|&g| -(cfg.learning_rate * (g / n))).collect()
        }
        FlMethod::FedAvg => {
            let mut local = model.clone();
            let sgd = cfg.sgd()?;
            for epoch in 0..cfg.local_epochs {
                let batch_seed =
                    derive_seed(cfg.seed, &[0xba7c, round as u64, client_id as u64, epoch as u64]);
                for ix in batch_indices(shard, cfg.batch_size, batch_seed, cfg.shuffle_batches)? {
                    let batch = gather(dataset, &ix);
                    let (_, mut grads) = local.loss_and_grads(&batch.images, &batch.labels)?;
                    scale_grads(&mut grads, 1.0 / ix.len() as f32);
                    local.sgd_update(&mut grads, sgd)?;
                }
            }
            let global_flat = model.flat_params();
            local
                .flat_params()
                .iter()
                .zip(&global_flat)
                .map(|(l, g)| l - g)
                .collect()
        }
    };
    Ok(Some(ClientUpdate { client_id, delta, num_samples: shard.len() }))
}

/// Fold client deltas into the global model: arithmetic mean by default,
/// sample-count weighted behind the config flag. Contributions are sorted by
/// client id first, and sums run in f64.
pub fn aggregate(
    model: &mut PrunableModel,
    updates: &[ClientUpdate],
    weighted: bool,
) -> Result<()> {
    if updates.is_empty() {
        return Err(Error::Empty("aggregate needs at least one contribution".into()));
    }
    let p = model.param_count();
    for u in updates {
        if u.delta.len() != p {
            return Err(Error::Dimension(format!(
                "client {} delta has {} entries, model has {p}",
                u.client_id,
                u.delta.len()
            )));
        }
    }
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    let total_samples: usize = order.iter().map(|u| u.num_samples).sum();
    let mut acc = vec![0.0f64; p];
    for u in &order {
        let w = if weighted {
            u.num_samples as f64 / total_samples as f64
        } else {
            1.0 / order.len() as f64
        };
        for (a, &d) in acc.iter_mut().zip(&u.delta) {
            *a += w * d as f64;
        }
    }
    let delta: Vec<f32> = acc.iter().map(|&v| v as f32).collect();
    model.add_flat(&delta)
}

/// Run `select -> local_update -> aggregate -> evaluate` until the budget or
/// stop rule is hit. `eval` returns `(u_accuracy, r_accuracy)` percentages.
pub fn train_loop(
    model: &mut PrunableModel,
    dataset: &LabeledDataset,
    shards: &ClientShard,
    cfg: &FlConfig,
    stop: StopRule,
    mut eval: impl FnMut(&PrunableModel, usize) -> Result<(Option<f64>, Option<f64>)>,
) -> Result<Vec<RoundResult>> {
    cfg.validate()?;
    if shards.num_clients() != cfg.total_clients {
        return Err(Error::Config(format!(
            "{} shards for {} clients",
            shards.num_clients(),
            cfg.total_clients
        )));
    }
    let mut history = Vec::new();
    for round in 0..cfg.max_rounds {
        let participants =
            select_clients(cfg.total_clients, cfg.participants_per_round, round, cfg.seed)?;
        let mut updates = Vec::with_capacity(participants.len());
        for id in participants {
            if let Some(update) = local_update(model, dataset, shards.client(id), cfg, round, id)? {
                updates.push(update);
            }
        }
        if updates.is_empty() {
            return Err(Error::Empty(format!("round {round}: every sampled client was empty")));
        }
        aggregate(model, &updates, cfg.weighted_aggregation)?;
        let (u_acc, r_acc) = eval(model, round)?;
        history.push(RoundResult { round, u_accuracy: u_acc, r_accuracy: r_acc, snapshot: None });
        if stop.satisfied(u_acc, r_acc) {
            break;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selecting_all_clients_returns_everyone() {
        assert_eq!(select_clients(4, 4, 0, 9).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_client_universe() {
        assert_eq!(select_clients(1, 1, 3, 9).unwrap(), vec![0]);
    }

    #[test]
    fn selection_is_deterministic_per_round() {
        assert_eq!(select_clients(30, 7, 5, 1).unwrap(), select_clients(30, 7, 5, 1).unwrap());
        assert_ne!(select_clients(30, 7, 5, 1).unwrap(), select_clients(30, 7, 6, 1).unwrap());
    }

    #[test]
    fn oversampling_is_rejected() {
        assert!(select_clients(3, 4, 0, 0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = FlConfig {
            total_clients: 4,
            participants_per_round: 2,
            method: FlMethod::FedAvg,
            local_epochs: 1,
            learning_rate: 0.1,
            batch_size: 8,
            max_rounds: 10,
            seed: 0,
            shuffle_batches: true,
            weighted_aggregation: false,
        };
        cfg.validate().unwrap();
        cfg.local_epochs = 0;
        assert!(cfg.validate().is_err());
        cfg.local_epochs = 1;
        cfg.participants_per_round = 5;
        assert!(cfg.validate().is_err());
    }
}
