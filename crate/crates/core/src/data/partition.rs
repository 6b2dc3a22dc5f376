//! Non-IID client partitioner.
//!
//! Clients are split into one group per class; a sample with label `m` lands
//! in group `m` with probability `q` and in any other group with probability
//! `(1-q)/(M-1)`. Within a group, samples go to that group's clients
//! round-robin. `q = 1/M` reproduces IID shards.

use crate::data::dataset::LabeledDataset;
use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PartitionConfig {
    pub num_clients: usize,
    /// Own-group assignment probability, in (0, 1].
    pub bias_probability: f64,
    pub num_classes: usize,
    pub seed: u64,
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("partition needs at least one client".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("partition needs at least one class".into()));
        }
        if !(self.bias_probability > 0.0 && self.bias_probability <= 1.0) {
            return Err(Error::Config(format!(
                "bias probability must be in (0, 1], got {}",
                self.bias_probability
            )));
        }
        Ok(())
    }
}

/// Per-client index lists; disjoint, and their union covers the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientShard {
    per_client: Vec<Vec<usize>>,
}

impl ClientShard {
    pub fn num_clients(&self) -> usize {
        self.per_client.len()
    }

    pub fn client(&self, id: usize) -> &[usize] {
        &self.per_client[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.per_client.iter()
    }

    /// Remove all indices whose label is in `targets`, keeping client structure.
    pub fn exclude_targets(&self, labels: &[usize], targets: &[usize]) -> ClientShard {
        ClientShard {
            per_client: self
                .per_client
                .iter()
                .map(|ix| ix.iter().copied().filter(|&i| !targets.contains(&labels[i])).collect())
                .collect(),
        }
    }
}

/// Clients serving group `g`: the round-robin split `i % M == g`, falling back
/// to a single wrapped client when there are fewer clients than classes.
fn clients_in_group(group: usize, num_clients: usize, num_classes: usize) -> Vec<usize> {
    let members: Vec<usize> =
        (0..num_clients).filter(|i| i % num_classes == group).collect();
    if members.is_empty() {
        vec![group % num_clients]
    } else {
        members
    }
}

/// Group assignment only (no client fan-out), for distribution tests.
pub fn assign_groups(labels: &[usize], cfg: &PartitionConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let m = cfg.num_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
        return Err(Error::LabelOutOfRange { label: bad, num_classes: m });
    }
    let mut rng = crate::seeding::rng_from(cfg.seed);
    let mut groups = Vec::with_capacity(labels.len());
    for &label in labels {
        let own = m == 1 || rng.gen::<f64>() < cfg.bias_probability;
        let group = if own {
            label
        } else {
            let k = rng.gen_range(0..m - 1);
            if k >= label {
                k + 1
            } else {
                k
            }
        };
        groups.push(group);
    }
    Ok(groups)
}

/// Full partition: group sampling plus round-robin fan-out to clients.
pub fn partition_noniid(dataset: &LabeledDataset, cfg: &PartitionConfig) -> Result<ClientShard> {
    partition_labels(&dataset.labels, cfg)
}

pub fn partition_labels(labels: &[usize], cfg: &PartitionConfig) -> Result<ClientShard> {
    let groups = assign_groups(labels, cfg)?;
    let mut per_client = vec![Vec::new(); cfg.num_clients];
    let mut counters = vec![0usize; cfg.num_classes];
    for (idx, &group) in groups.iter().enumerate() {
        let members = clients_in_group(group, cfg.num_clients, cfg.num_classes);
        let client = members[counters[group] % members.len()];
        counters[group] += 1;
        per_client[client].push(idx);
    }
    Ok(ClientShard { per_client })
}
