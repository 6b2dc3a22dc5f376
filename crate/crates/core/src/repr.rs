//! Client-side representation extraction: per-layer feature maps are passed
//! through ReLU and global average pooling, then averaged class-wise into a
//! `num_classes x Cout` matrix per conv layer.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::PrunableModel;
use crate::nn::{global_avg_pool, relu_forward};

/// Row-major `num_classes x channels` activation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprMatrix {
    pub num_classes: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl ReprMatrix {
    pub fn zeros(num_classes: usize, channels: usize) -> Self {
        ReprMatrix { num_classes, channels, values: vec![0.0; num_classes * channels] }
    }

    #[inline]
    pub fn at(&self, class: usize, channel: usize) -> f32 {
        self.values[class * self.channels + channel]
    }

    #[inline]
    pub fn at_mut(&mut self, class: usize, channel: usize) -> &mut f32 {
        &mut self.values[class * self.channels + channel]
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.values[class * self.channels..(class + 1) * self.channels]
    }
}

/// Per-client class/channel activation means, with per-class sample counts.
/// A class the client never saw keeps count 0 and must not be read as a
/// real zero row.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRepresentation {
    pub layers: Vec<ReprMatrix>,
    pub class_counts: Vec<u32>,
}

impl LocalRepresentation {
    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn has_class(&self, class: usize) -> bool {
        self.class_counts[class] > 0
    }

    /// Serialized payload size in bytes (communication-cost accounting).
    pub fn payload_bytes(&self) -> usize {
        let per_layer: usize = self.layers.iter().map(|l| 8 + 4 * l.values.len()).sum();
        // magic + version + layer count + layers + count vector length + counts
        4 + 4 + 4 + per_layer + 4 + 4 * self.class_counts.len()
    }
}

const EXTRACT_CHUNK: usize = 128;

/// Run the model over the local dataset and build the class/channel means.
///
/// For every conv layer the raw feature map is rectified and globally
/// average-pooled (even when the layer already feeds a ReLU; rectifying
/// twice is idempotent), then the per-sample channel means are averaged
/// within each class.
pub fn extract_local_repr(
    model: &PrunableModel,
    dataset: &LabeledDataset,
) -> Result<LocalRepresentation> {
    if dataset.is_empty() {
        return Err(Error::Empty("cannot extract a representation from an empty dataset".into()));
    }
    let num_classes = model.num_classes();
    if let Some(&bad) = dataset.labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::LabelOutOfRange { label: bad, num_classes });
    }
    let widths = model.conv_widths();
    let mut sums: Vec<Vec<f64>> =
        widths.iter().map(|&c| vec![0.0f64; num_classes * c]).collect();
    let mut counts = vec![0u32; num_classes];

    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(EXTRACT_CHUNK) {
        let batch = crate::data::gather(dataset, chunk);
        let trace = model.forward_trace(&batch.images)?;
        for (l, feature_map) in trace.conv_outputs.iter().enumerate() {
            let pooled = global_avg_pool(&relu_forward(feature_map))?;
            let c = widths[l];
            for (ni, &label) in batch.labels.iter().enumerate() {
                for j in 0..c {
                    sums[l][label * c + j] += pooled.at(ni, j, 0, 0) as f64;
                }
            }
        }
        for &label in &batch.labels {
            counts[label] += 1;
        }
    }

    let layers = widths
        .iter()
        .enumerate()
        .map(|(l, &c)| {
            let mut m = ReprMatrix::zeros(num_classes, c);
            for class in 0..num_classes {
                if counts[class] == 0 {
                    continue;
                }
                for j in 0..c {
                    *m.at_mut(class, j) =
                        (sums[l][class * c + j] / counts[class] as f64) as f32;
                }
            }
            m
        })
        .collect();
    Ok(LocalRepresentation { layers, class_counts: counts })
}

const MAGIC: &[u8; 4] = b"FSRP";
const VERSION: u32 = 1;

/// Wire format: magic `FSRP`, u32 version, u32 layer count, per layer
/// `(u32 num_classes, u32 channels, row-major f32 values)`, then the
/// u32 per-class sample counts (length-prefixed).
pub fn serialize_repr(repr: &LocalRepresentation) -> Vec<u8> {
    let mut out = Vec::with_capacity(repr.payload_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(repr.layers.len() as u32).to_le_bytes());
    for layer in &repr.layers {
        out.extend_from_slice(&(layer.num_classes as u32).to_le_bytes());
        out.extend_from_slice(&(layer.channels as u32).to_le_bytes());
        for v in &layer.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(repr.class_counts.len() as u32).to_le_bytes());
    for &c in &repr.class_counts {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn deserialize_repr(bytes: &[u8]) -> Result<LocalRepresentation> {
    let mut cur = bytes;
    let magic = take(&mut cur, 4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad representation magic {magic:?}")));
    }
    let version = read_u32(&mut cur)?;
    if version != VERSION {
        return Err(Error::VersionMismatch { expected: VERSION, got: version });
    }
    let layer_count = read_u32(&mut cur)? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let num_classes = read_u32(&mut cur)? as usize;
        let channels = read_u32(&mut cur)? as usize;
        let n = num_classes
            .checked_mul(channels)
            .ok_or_else(|| Error::Format("representation matrix overflows".into()))?;
        let raw = take(&mut cur, 4 * n)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        layers.push(ReprMatrix { num_classes, channels, values });
    }
    let count_len = read_u32(&mut cur)? as usize;
    let raw = take(&mut cur, 4 * count_len)?;
    let class_counts = raw
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if !cur.is_empty() {
        return Err(Error::Format("trailing bytes after representation".into()));
    }
    Ok(LocalRepresentation { layers, class_counts })
}

fn take<'a>(cur: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if cur.len() < n {
        return Err(Error::Format("truncated representation payload".into()));
    }
    let (head, tail) = cur.split_at(n);
    *cur = tail;
    Ok(head)
}

fn read_u32(cur: &mut &[u8]) -> Result<u32> {
    let b = take(cur, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}
