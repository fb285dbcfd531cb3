//! Self-describing tensor container with a content checksum.
//!
//! Layout: `KSCKPT01`, u64 LE header length, JSON header, raw little-endian
//! tensor data, SHA-256 of everything before it.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tch::{nn, Kind, Tensor};

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"KSCKPT01";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<i64>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

fn dtype_name(kind: Kind) -> Result<&'static str> {
    Ok(match kind {
        Kind::Float => "f32",
        Kind::Double => "f64",
        Kind::Int64 => "i64",
        other => return Err(Error::Config(format!("unsupported tensor kind {other:?}"))),
    })
}

fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.detach().contiguous().view([-1]);
    Ok(match t.kind() {
        Kind::Float => Vec::<f32>::try_from(&flat)?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        Kind::Double => Vec::<f64>::try_from(&flat)?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        Kind::Int64 => Vec::<i64>::try_from(&flat)?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        other => return Err(Error::Config(format!("unsupported tensor kind {other:?}"))),
    })
}

fn tensor_from_bytes(dtype: &str, shape: &[i64], bytes: &[u8]) -> Result<Tensor> {
    let t = match dtype {
        "f32" => Tensor::from_slice(
            &bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<_>>(),
        ),
        "f64" => Tensor::from_slice(
            &bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<_>>(),
        ),
        "i64" => Tensor::from_slice(
            &bytes
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect::<Vec<_>>(),
        ),
        other => return Err(Error::Config(format!("unknown dtype {other}"))),
    };
    Ok(t.reshape(shape))
}

/// Writes `meta` and `tensors` to `path` atomically (temp file + rename).
pub fn save<M: Serialize>(path: &Path, meta: &M, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut data = Vec::new();
    for (name, t) in tensors {
        let bytes = tensor_bytes(t)?;
        entries.push(Entry {
            name: name.clone(),
            dtype: dtype_name(t.kind())?.to_string(),
            shape: t.size(),
            offset: data.len() as u64,
            len: bytes.len() as u64,
        });
        data.extend_from_slice(&bytes);
    }
    let header = serde_json::to_vec(&Header {
        meta: serde_json::to_value(meta)?,
        tensors: entries,
    })?;

    let mut buf = Vec::with_capacity(16 + header.len() + data.len() + DIGEST_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&data);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Loaded container contents.
#[derive(Debug)]
pub struct Contents {
    pub meta: serde_json::Value,
    pub tensors: HashMap<String, Tensor>,
    /// Tensor names in file order.
    pub order: Vec<String>,
}

pub fn load(path: &Path) -> Result<Contents> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Integrity {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    let hlen = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize.checked_add(hlen).filter(|&e| e <= body.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&body[16..header_end])?;
    let data = &body[header_end..];
    let mut tensors = HashMap::new();
    let mut order = Vec::new();
    for e in header.tensors {
        let start = e.offset as usize;
        let end = start.checked_add(e.len as usize).filter(|&x| x <= data.len()).ok_or_else(|| bad("tensor out of range"))?;
        let t = tensor_from_bytes(&e.dtype, &e.shape, &data[start..end])?;
        order.push(e.name.clone());
        tensors.insert(e.name, t);
    }
    Ok(Contents {
        meta: header.meta,
        tensors,
        order,
    })
}

/// All variables of `vs` as `prefix/<name>` entries, sorted by name.
pub fn var_store_entries(prefix: &str, vs: &nn::VarStore) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = vs
        .variables()
        .into_iter()
        .map(|(n, t)| (format!("{prefix}/{n}"), t.detach()))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Copies `prefix/<name>` entries into the variables of `vs`. Every
/// variable must be present with a matching shape.
pub fn restore_var_store(prefix: &str, vs: &nn::VarStore, tensors: &HashMap<String, Tensor>) -> Result<()> {
    for (name, var) in vs.variables() {
        let key = format!("{prefix}/{name}");
        let src = tensors
            .get(&key)
            .ok_or_else(|| Error::Incompatible(format!("checkpoint lacks {key}")))?;
        if src.size() != var.size() {
            return Err(Error::Incompatible(format!(
                "{key}: checkpoint shape {:?}, model shape {:?}",
                src.size(),
                var.size()
            )));
        }
        let mut var = var;
        tch::no_grad(|| var.copy_(&src.to_kind(var.kind())));
    }
    Ok(())
}
