//! Versioned binary container for named parameter tensors plus JSON
//! metadata. Shared by both networks.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic    8 bytes  "HFMCKPT\0"
//! version  u32      1
//! mlen     u32      byte length of the metadata
//! meta     mlen     UTF-8 JSON object (kind, configs, vocabulary, ...)
//! count    u32      number of tensors
//! tensors  repeated `count` times, sorted by name:
//!   nlen   u32      byte length of the name
//!   name   nlen     UTF-8
//!   dtype  u8       0 = f32, 1 = f64
//!   ndim   u32
//!   dims   ndim * u64
//!   data   product(dims) values of the dtype
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 8] = b"HFMCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl StoredTensor {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let dims = t.dims().to_vec();
        let flat = t.flatten_all()?;
        let data = match t.dtype() {
            DType::F64 => TensorData::F64(flat.to_vec1()?),
            _ => TensorData::F32(flat.to_dtype(DType::F32)?.to_vec1()?),
        };
        Ok(Self { dims, data })
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(match &self.data {
            TensorData::F32(v) => Tensor::from_vec(v.clone(), self.dims.as_slice(), device)?,
            TensorData::F64(v) => Tensor::from_vec(v.clone(), self.dims.as_slice(), device)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, StoredTensor>,
}

fn fmt_err(m: impl std::fmt::Display) -> Error {
    Error::Format(format!("checkpoint: {m}"))
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    /// Captures every parameter of `store`.
    pub fn from_params(meta: serde_json::Value, store: &ParamStore) -> Result<Self> {
        let tensors = store
            .vars()
            .into_iter()
            .map(|(n, v)| Ok((n, StoredTensor::from_tensor(v.as_tensor())?)))
            .collect::<Result<_>>()?;
        Ok(Self { meta, tensors })
    }

    /// Loads every stored tensor into `store`, whose parameters must match
    /// by name and shape.
    pub fn load_params(&self, store: &ParamStore) -> Result<()> {
        let tensors = self
            .tensors
            .iter()
            .map(|(n, t)| Ok((n.clone(), t.to_tensor(store.device())?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        store.assign(&tensors)
    }

    pub fn meta_field<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| fmt_err(format!("metadata has no {key:?}")))?;
        serde_json::from_value(v.clone()).map_err(|e| fmt_err(format!("{key}: {e}")))
    }

    pub fn kind(&self) -> Option<&str> {
        self.meta.get("kind").and_then(|v| v.as_str())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == kind => Ok(()),
            other => Err(fmt_err(format!("expected a {kind} checkpoint, found {other:?}"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).map_err(fmt_err)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match t.data {
                TensorData::F32(_) => 0,
                TensorData::F64(_) => 1,
            });
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(fmt_err(format!("unsupported version {version}")));
        }
        let mlen = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(mlen)?).map_err(fmt_err)?;
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(fmt_err)?;
            let dtype = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let dims = (0..ndim).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let data = match dtype {
                0 => TensorData::F32(
                    r.take(n * 4)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => TensorData::F64(
                    r.take(n * 8)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                d => return Err(fmt_err(format!("unknown dtype tag {d}"))),
            };
            tensors.insert(name, StoredTensor { dims, data });
        }
        if !r.buf.is_empty() {
            return Err(fmt_err("trailing bytes"));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Builds a metadata object from `(key, value)` pairs.
pub fn meta_object(kind: &str, fields: &[(&str, &dyn ErasedSerialize)]) -> Result<serde_json::Value> {
    let mut map = serde_json::Map::new();
    map.insert("kind".into(), kind.into());
    for (k, v) in fields {
        map.insert(k.to_string(), v.to_json()?);
    }
    Ok(serde_json::Value::Object(map))
}

/// Object-safe bridge to `serde_json::to_value`.
pub trait ErasedSerialize {
    fn to_json(&self) -> Result<serde_json::Value>;
}

impl<T: Serialize> ErasedSerialize for T {
    fn to_json(&self) -> Result<serde_json::Value> {
        serde_json::to_value(self).map_err(fmt_err)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(fmt_err("truncated"));
        }
        let (h, t) = self.buf.split_at(n);
        self.buf = t;
        Ok(h)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
