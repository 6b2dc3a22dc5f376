//! Dataset ingestion, synthetic data and the non-IID client partitioner.

pub mod batch;
pub mod dataset;
pub mod loaders;
pub mod partition;

pub use batch::{batch_indices, batch_iter, gather, Batch};
pub use dataset::{exclude_class, synth_blobs, LabeledDataset};
pub use loaders::{load_cifar10_binary, load_cifar10_test, load_idx};
pub use partition::{assign_groups, partition_labels, partition_noniid, ClientShard, PartitionConfig};
