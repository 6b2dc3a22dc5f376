//! Checkpoint persistence.
//!
//! Layout: magic `FSCK`, u32 version, length-prefixed layer descriptor list,
//! per-conv-layer masks as bit arrays, then all weights as little-endian
//! 32-bit floats in declaration order. Round-trips bit-exactly.

use crate::error::{Error, Result};
use crate::model::prunable::{ChannelMask, PrunableModel};
use crate::model::spec::{LayerDesc, ModelSpec};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"FSCK";
const VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_RELU: u8 = 1;
const KIND_AVGPOOL: u8 = 2;
const KIND_GLOBALPOOL: u8 = 3;
const KIND_DENSE: u8 = 4;

/// Byte length of everything before the weight block, for size accounting.
pub fn encoded_header_len(spec: &ModelSpec) -> usize {
    let mut len = 4 + 4; // magic + version
    len += 4 * 4; // input c/h/w + num_classes
    len += 4; // layer count
    for layer in &spec.layers {
        len += 1;
        len += match layer {
            LayerDesc::Conv { .. } => 16,
            LayerDesc::AvgPool { .. } => 4,
            LayerDesc::Dense { .. } => 4,
            LayerDesc::Relu | LayerDesc::GlobalAvgPool => 0,
        };
    }
    len += 4; // mask count
    for layer in &spec.layers {
        if let LayerDesc::Conv { out_channels, .. } = layer {
            len += 4 + out_channels.div_ceil(8);
        }
    }
    len
}

pub fn save_checkpoint(model: &PrunableModel, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    let spec = model.spec();
    write_u32(&mut w, spec.input.0 as u32)?;
    write_u32(&mut w, spec.input.1 as u32)?;
    write_u32(&mut w, spec.input.2 as u32)?;
    write_u32(&mut w, spec.num_classes as u32)?;
    write_u32(&mut w, spec.layers.len() as u32)?;
    for layer in &spec.layers {
        match *layer {
            LayerDesc::Conv { out_channels, kernel, stride, padding } => {
                w.write_all(&[KIND_CONV])?;
                write_u32(&mut w, out_channels as u32)?;
                write_u32(&mut w, kernel as u32)?;
                write_u32(&mut w, stride as u32)?;
                write_u32(&mut w, padding as u32)?;
            }
            LayerDesc::Relu => w.write_all(&[KIND_RELU])?,
            LayerDesc::AvgPool { window } => {
                w.write_all(&[KIND_AVGPOOL])?;
                write_u32(&mut w, window as u32)?;
            }
            LayerDesc::GlobalAvgPool => w.write_all(&[KIND_GLOBALPOOL])?,
            LayerDesc::Dense { out_features } => {
                w.write_all(&[KIND_DENSE])?;
                write_u32(&mut w, out_features as u32)?;
            }
        }
    }
    write_u32(&mut w, model.masks().len() as u32)?;
    for mask in model.masks() {
        write_u32(&mut w, mask.len() as u32)?;
        let mut bits = vec![0u8; mask.len().div_ceil(8)];
        for (c, &kept) in mask.kept_flags().iter().enumerate() {
            if kept {
                bits[c / 8] |= 1 << (c % 8);
            }
        }
        w.write_all(&bits)?;
    }
    for v in model.flat_params() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PrunableModel> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::VersionMismatch { expected: VERSION, got: version });
    }
    let input = (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize, read_u32(&mut r)? as usize);
    let num_classes = read_u32(&mut r)? as usize;
    let layer_count = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let mut kind = [0u8; 1];
        read_exact(&mut r, &mut kind)?;
        layers.push(match kind[0] {
            KIND_CONV => LayerDesc::Conv {
                out_channels: read_u32(&mut r)? as usize,
                kernel: read_u32(&mut r)? as usize,
                stride: read_u32(&mut r)? as usize,
                padding: read_u32(&mut r)? as usize,
            },
            KIND_RELU => LayerDesc::Relu,
            KIND_AVGPOOL => LayerDesc::AvgPool { window: read_u32(&mut r)? as usize },
            KIND_GLOBALPOOL => LayerDesc::GlobalAvgPool,
            KIND_DENSE => LayerDesc::Dense { out_features: read_u32(&mut r)? as usize },
            k => return Err(Error::Format(format!("unknown layer kind {k}"))),
        });
    }
    let spec = ModelSpec { input, num_classes, layers };
    spec.validate().map_err(|e| Error::Format(format!("checkpoint spec invalid: {e}")))?;

    let mask_count = read_u32(&mut r)? as usize;
    if mask_count != spec.conv_layer_indices().len() {
        return Err(Error::Format(format!(
            "checkpoint has {mask_count} masks for {} conv layers",
            spec.conv_layer_indices().len()
        )));
    }
    let mut masks = Vec::with_capacity(mask_count);
    for _ in 0..mask_count {
        let len = read_u32(&mut r)? as usize;
        let mut bits = vec![0u8; len.div_ceil(8)];
        read_exact(&mut r, &mut bits)?;
        let kept: Vec<bool> = (0..len).map(|c| bits[c / 8] & (1 << (c % 8)) != 0).collect();
        masks.push(ChannelMask::from_kept(kept));
    }

    let mut model = crate::model::prunable::build_model(&spec, 0)?;
    let mut flat = vec![0.0f32; model.param_count()];
    let mut buf = [0u8; 4];
    for v in flat.iter_mut() {
        read_exact(&mut r, &mut buf)?;
        *v = f32::from_le_bytes(buf);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after weight block".into()));
    }
    model.set_flat_params(&flat)?;
    model.set_masks(masks)?;
    Ok(model)
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("truncated checkpoint".into())
        } else {
            Error::Io(e)
        }
    })
}
