//! Labeled image datasets: synthetic generation and class exclusion.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Images in `[0,1]` (NCHW) with integer labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let n = images.shape()[0];
        if labels.len() != n {
            return Err(Error::Dimension(format!("{n} images but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label: bad, num_classes });
        }
        Ok(LabeledDataset { images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (C, H, W) of a single image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Copy out the samples at `indices`, preserving their order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let (c, h, w) = self.image_shape();
        let per = c * h * w;
        let mut images = Tensor::zeros([indices.len(), c, h, w]);
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            images.data_mut()[row * per..(row + 1) * per]
                .copy_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        LabeledDataset { images, labels, num_classes: self.num_classes }
    }

    /// Indices of all samples whose label is in `targets`.
    pub fn indices_of_classes(&self, targets: &[usize]) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| targets.contains(l))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Drop every sample whose label is in `targets`. Remaining samples keep
/// their order and their original labels (no re-indexing), so accuracy
/// against the original head stays measurable.
pub fn exclude_class(dataset: &LabeledDataset, targets: &[usize]) -> LabeledDataset {
    let keep: Vec<usize> = dataset
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| !targets.contains(l))
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        log::warn!("exclude_class removed every sample");
    }
    dataset.subset(&keep)
}

/// Class-conditioned Gaussian-blob images: class `i` lights up a blob at a
/// fixed ring position, with per-sample center jitter and pixel noise. Easy
/// enough for a small CNN, hard enough that training takes real rounds.
///
/// Samples are emitted class-major (`n_per_class` images of class 0, then
/// class 1, ...). Same arguments and seed reproduce the dataset exactly;
/// a different seed draws fresh samples from the same class distributions.
pub fn synth_blobs(
    num_classes: usize,
    n_per_class: usize,
    shape: (usize, usize, usize),
    seed: u64,
) -> Result<LabeledDataset> {
    let (c, h, w) = shape;
    if num_classes == 0 || n_per_class == 0 || c == 0 || h < 4 || w < 4 {
        return Err(Error::Config(format!(
            "synth_blobs: degenerate request ({num_classes} classes, {n_per_class}/class, {shape:?})"
        )));
    }
    let mut rng = crate::seeding::rng_from(seed);
    let noise = Normal::new(0.0f32, 0.08).unwrap();
    let side = h.min(w) as f32;
    let ring = 0.38 * side;
    let sigma = 0.10 * side;
    let jitter = 0.05 * side;
    let n = num_classes * n_per_class;
    let mut images = Tensor::zeros([n, c, h, w]);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for class in 0..num_classes {
        let angle = 2.0 * std::f32::consts::PI * class as f32 / num_classes as f32;
        let base_cy = h as f32 / 2.0 + ring * angle.sin();
        let base_cx = w as f32 / 2.0 + ring * angle.cos();
        for _ in 0..n_per_class {
            let cy = base_cy + rng.gen_range(-jitter..jitter);
            let cx = base_cx + rng.gen_range(-jitter..jitter);
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let dy = y as f32 - cy;
                        let dx = x as f32 - cx;
                        let v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
                            + noise.sample(&mut rng);
                        *images.at_mut(row, ci, y, x) = v.clamp(0.0, 1.0);
                    }
                }
            }
            labels.push(class);
            row += 1;
        }
    }
    LabeledDataset::new(images, labels, num_classes)
}
