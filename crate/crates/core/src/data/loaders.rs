//! CIFAR-10 binary and IDX (MNIST-style) dataset loaders.

use crate::data::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use std::fs;
use std::io::Read;
use std::path::Path;

const CIFAR_RECORD: usize = 3073; // 1 label byte + 3 * 32 * 32 pixels
const CIFAR_CLASSES: usize = 10;

/// Load the CIFAR-10 train split (`data_batch_1..5.bin`) from `dir`.
pub fn load_cifar10_binary(dir: &Path) -> Result<LabeledDataset> {
    let paths: Vec<_> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    load_cifar10_files(&paths)
}

/// Load the CIFAR-10 test split (`test_batch.bin`) from `dir`.
pub fn load_cifar10_test(dir: &Path) -> Result<LabeledDataset> {
    load_cifar10_files(&[dir.join("test_batch.bin")])
}

fn load_cifar10_files(paths: &[std::path::PathBuf]) -> Result<LabeledDataset> {
    let mut records = Vec::new();
    for path in paths {
        let bytes = fs::read(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Format(format!(
                "{}: {} bytes is not a multiple of the {CIFAR_RECORD}-byte record",
                path.display(),
                bytes.len()
            )));
        }
        records.push(bytes);
    }
    let n: usize = records.iter().map(|b| b.len() / CIFAR_RECORD).sum();
    let mut images = Tensor::zeros([n, 3, 32, 32]);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for bytes in &records {
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            let label = rec[0] as usize;
            if label >= CIFAR_CLASSES {
                return Err(Error::Format(format!("record {row}: label byte {label} > 9")));
            }
            labels.push(label);
            let dst = &mut images.data_mut()[row * 3072..(row + 1) * 3072];
            for (d, &s) in dst.iter_mut().zip(&rec[1..]) {
                *d = s as f32 / 255.0;
            }
            row += 1;
        }
    }
    LabeledDataset::new(images, labels, CIFAR_CLASSES)
}

/// Load an IDX image/label file pair (big-endian magic 0x803 / 0x801).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;
    let mut ir = img_bytes.as_slice();
    let magic = read_u32_be(&mut ir, images_path)?;
    if magic != 0x0000_0803 {
        return Err(Error::Format(format!(
            "{}: bad IDX image magic {magic:#010x}",
            images_path.display()
        )));
    }
    let n = read_u32_be(&mut ir, images_path)? as usize;
    let h = read_u32_be(&mut ir, images_path)? as usize;
    let w = read_u32_be(&mut ir, images_path)? as usize;
    if ir.len() != n * h * w {
        return Err(Error::Format(format!(
            "{}: expected {} pixel bytes, found {}",
            images_path.display(),
            n * h * w,
            ir.len()
        )));
    }

    let mut lr = lbl_bytes.as_slice();
    let magic = read_u32_be(&mut lr, labels_path)?;
    if magic != 0x0000_0801 {
        return Err(Error::Format(format!(
            "{}: bad IDX label magic {magic:#010x}",
            labels_path.display()
        )));
    }
    let ln = read_u32_be(&mut lr, labels_path)? as usize;
    if ln != n {
        return Err(Error::Format(format!("{n} images but {ln} labels")));
    }
    if lr.len() != n {
        return Err(Error::Format(format!(
            "{}: expected {n} label bytes, found {}",
            labels_path.display(),
            lr.len()
        )));
    }

    let mut images = Tensor::zeros([n, 1, h, w]);
    for (d, &s) in images.data_mut().iter_mut().zip(ir) {
        *d = s as f32 / 255.0;
    }
    let labels: Vec<usize> = lr.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    LabeledDataset::new(images, labels, num_classes.max(1))
}

fn read_u32_be(r: &mut &[u8], path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("{}: truncated IDX header", path.display())))?;
    Ok(u32::from_be_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_cifar_batch(path: &Path, labels: &[u8]) {
        let mut f = fs::File::create(path).unwrap();
        for (i, &l) in labels.iter().enumerate() {
            let mut rec = vec![l];
            rec.extend(std::iter::repeat((i % 256) as u8).take(3072));
            f.write_all(&rec).unwrap();
        }
    }

    #[test]
    fn cifar_loader_reads_records_and_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        for i in 1..=5 {
            write_cifar_batch(&dir.path().join(format!("data_batch_{i}.bin")), &[i as u8, 9]);
        }
        let ds = load_cifar10_binary(dir.path()).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.image_shape(), (3, 32, 32));
        assert_eq!(ds.labels[0], 1);
        assert_eq!(ds.labels[1], 9);
        assert_eq!(ds.images.at(1, 0, 0, 0), 1.0 / 255.0);
    }

    #[test]
    fn cifar_loader_rejects_partial_records() {
        let dir = tempfile::tempdir().unwrap();
        for i in 1..=5 {
            write_cifar_batch(&dir.path().join(format!("data_batch_{i}.bin")), &[0]);
        }
        fs::write(dir.path().join("data_batch_3.bin"), vec![0u8; 100]).unwrap();
        assert!(matches!(load_cifar10_binary(dir.path()), Err(Error::Format(_))));
    }

    fn write_idx(dir: &Path, n: u32, h: u32, w: u32) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("img.idx");
        let lbl = dir.join("lbl.idx");
        let mut f = fs::File::create(&img).unwrap();
        f.write_all(&0x0000_0803u32.to_be_bytes()).unwrap();
        f.write_all(&n.to_be_bytes()).unwrap();
        f.write_all(&h.to_be_bytes()).unwrap();
        f.write_all(&w.to_be_bytes()).unwrap();
        f.write_all(&vec![128u8; (n * h * w) as usize]).unwrap();
        let mut f = fs::File::create(&lbl).unwrap();
        f.write_all(&0x0000_0801u32.to_be_bytes()).unwrap();
        f.write_all(&n.to_be_bytes()).unwrap();
        f.write_all(&(0..n).map(|i| (i % 3) as u8).collect::<Vec<_>>()).unwrap();
        (img, lbl)
    }

    #[test]
    fn idx_loader_round_trips_counts() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = write_idx(dir.path(), 6, 4, 4);
        let ds = load_idx(&img, &lbl).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.image_shape(), (1, 4, 4));
        assert_eq!(ds.labels, vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn empty_idx_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("empty.idx");
        fs::write(&img, b"").unwrap();
        let (_, lbl) = write_idx(dir.path(), 1, 2, 2);
        assert!(matches!(load_idx(&img, &lbl), Err(Error::Format(_))));
    }
}
