//! DDTC checkpoint files: model configuration, parameters, and optimizer
//! state in one versioned binary blob.
//!
//! Layout: magic `DDTC`, u32 version (=1), u32 JSON length + UTF-8 JSON
//! metadata (model config, geometry, optional Adam hyperparameters), u32
//! tensor count, then per-tensor records: u16 name length + name, u8 rank,
//! u32 dims, float32 little-endian data. Adam moments ride along as records
//! named `adam.m.<param>` / `adam.v.<param>`.

use crate::error::{Error, Result};
use crate::model::{DuDoTransModel, ModelConfig};
use crate::tomo::ScanGeometry;
use crate::train::{AdamState, Moments};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DDTC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    geometry: ScanGeometry,
    adam: Option<AdamMeta>,
}

fn write_record(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
    if name.len() > u16::MAX as usize {
        return Err(Error::invalid(format!("tensor name too long: {name}")));
    }
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Serialize a model (and, when given, its optimizer state).
pub fn save_checkpoint(path: &Path, model: &DuDoTransModel, adam: Option<&AdamState>) -> Result<()> {
    let meta = CheckpointMeta {
        model: model.config.clone(),
        geometry: model.geometry.clone(),
        adam: adam.map(|a| AdamMeta {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            step: a.step,
        }),
    };
    let meta_json = serde_json::to_vec(&meta).map_err(|e| Error::format(path, e.to_string()))?;

    let param_count = model.store.len();
    let tensor_count = param_count + if adam.is_some() { 2 * param_count } else { 0 };

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    buf.extend_from_slice(&(tensor_count as u32).to_le_bytes());
    for (name, tensor) in model.store.iter() {
        write_record(&mut buf, name, tensor.shape(), tensor.data())?;
    }
    if let Some(adam) = adam {
        for (id, (name, tensor)) in model.store.iter().enumerate() {
            let moments = &adam.moments[id];
            write_record(&mut buf, &format!("adam.m.{name}"), tensor.shape(), &moments.m)?;
            write_record(&mut buf, &format!("adam.v.{name}"), tensor.shape(), &moments.v)?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Record {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn read_records(path: &Path, bytes: &[u8]) -> Result<(CheckpointMeta, Vec<Record>)> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::format(path, "truncated checkpoint"));
        }
        let out = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(out)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::format(path, "bad magic, not a DDTC checkpoint"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let json_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(take(&mut pos, json_len)?)
        .map_err(|e| Error::format(path, format!("bad metadata: {e}")))?;
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(Record { name, shape, data });
    }
    Ok((meta, records))
}

/// Rebuild a model (and optimizer state, when present) from a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(DuDoTransModel, Option<AdamState>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let (meta, records) = read_records(path, &bytes)?;

    let mut model = DuDoTransModel::init(meta.model, meta.geometry)?;
    let mut by_name: std::collections::HashMap<String, Record> =
        records.into_iter().map(|r| (r.name.clone(), r)).collect();

    for id in 0..model.store.len() {
        let name = model.store.name(id).to_string();
        let record = by_name
            .remove(&name)
            .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))?;
        if record.shape != model.store.get(id).shape() {
            return Err(Error::format(
                path,
                format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    record.shape,
                    model.store.get(id).shape()
                ),
            ));
        }
        *model.store.tensor_mut(id).data_mut() = record.data;
    }

    let adam = match meta.adam {
        None => None,
        Some(a) => {
            let mut moments = Vec::with_capacity(model.store.len());
            for id in 0..model.store.len() {
                let name = model.store.name(id);
                let m = by_name
                    .remove(&format!("adam.m.{name}"))
                    .ok_or_else(|| Error::format(path, format!("missing adam.m.{name}")))?;
                let v = by_name
                    .remove(&format!("adam.v.{name}"))
                    .ok_or_else(|| Error::format(path, format!("missing adam.v.{name}")))?;
                if m.data.len() != model.store.get(id).numel() || v.data.len() != m.data.len() {
                    return Err(Error::format(path, format!("adam moments for {name} have wrong size")));
                }
                moments.push(Moments { m: m.data, v: v.data });
            }
            Some(AdamState {
                lr: a.lr,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                step: a.step,
                moments,
            })
        }
    };
    Ok((model, adam))
}
