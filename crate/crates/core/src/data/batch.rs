//! Deterministic mini-batch iteration.

use crate::data::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use rand::seq::SliceRandom;

/// One mini-batch of images and labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Split `indices` into batches, optionally after a seeded shuffle.
/// The last partial batch is kept.
pub fn batch_indices(
    indices: &[usize],
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = indices.to_vec();
    if shuffle {
        let mut rng = crate::seeding::rng_from(seed);
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Materialize a batch from dataset rows.
pub fn gather(dataset: &LabeledDataset, indices: &[usize]) -> Batch {
    let sub = dataset.subset(indices);
    Batch { images: sub.images, labels: sub.labels }
}

/// Batches over the whole dataset in (possibly shuffled) index order.
pub fn batch_iter(
    dataset: &LabeledDataset,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Batch>> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    Ok(batch_indices(&all, batch_size, seed, shuffle)?
        .iter()
        .map(|ix| gather(dataset, ix))
        .collect())
}
