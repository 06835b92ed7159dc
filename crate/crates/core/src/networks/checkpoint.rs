//! Self-describing checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SSEGCKPT"
//! version    u32      1
//! role       u8       1 generator, 2 encoder, 3 decoder, 4 discriminator
//! header     u32 length + UTF-8 JSON {role, config, training_meta}
//! count      u32      number of tensors
//! tensor*    u16 name length, name, u8 dtype (1 f32, 2 f64), u8 ndim,
//!            u64 per dimension, raw little-endian payload
//! ```

use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{NetworkConfig, Role};
use crate::binio::{read_file, write_file, Reader};
use crate::nn::{DType, ParamStore, Scalar};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SSEGCKPT";
const VERSION: u32 = 1;

/// Provenance stored next to the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub stage: String,
    pub epochs: usize,
    pub steps: u64,
    pub seed: u64,
    /// Mean training loss of each epoch.
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCheckpoint<T> {
    pub role: Role,
    pub config: NetworkConfig,
    pub params: ParamStore<T>,
    pub training_meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    role: Role,
    config: NetworkConfig,
    training_meta: TrainingMeta,
}

impl<T: Scalar> NetworkCheckpoint<T> {
    pub fn expect_role(&self, role: Role) -> Result<()> {
        if self.role != role {
            return Err(Error::RoleMismatch {
                expected: role.to_string(),
                found: self.role.to_string(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            role: self.role,
            config: self.config.clone(),
            training_meta: self.training_meta.clone(),
        })
        .map_err(|e| Error::Serde(e.to_string()))?;
        let mut out = Vec::with_capacity(64 + header.len() + self.params.num_elements() * T::DTYPE.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.role.tag());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            let name = p.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(T::DTYPE.tag());
            out.push(p.value.ndim() as u8);
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in p.value.iter() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(8, "magic")? != MAGIC {
            return Err(r.error_at(0, "bad magic, not a checkpoint file"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error_at(8, format!("unsupported version {version}")));
        }
        let tag_at = r.offset() as usize;
        let tag = r.u8("role")?;
        let role = Role::from_tag(tag).ok_or_else(|| r.error_at(tag_at, format!("unknown role tag {tag}")))?;
        let header_len = r.u32("header length")? as usize;
        let header_at = r.offset() as usize;
        let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
            .map_err(|e| r.error_at(header_at, format!("malformed header: {e}")))?;
        if header.role != role {
            return Err(r.error_at(header_at, "header role disagrees with role tag"));
        }
        if !header.config.admits(role) {
            return Err(Error::Validation(format!("{role} checkpoint carries a config for another network")));
        }
        let count = r.u32("tensor count")?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u16("tensor name length")? as usize;
            let name = r.string(name_len, "tensor name")?;
            let dtype_at = r.offset() as usize;
            let dtype = DType::from_tag(r.u8("dtype")?)
                .ok_or_else(|| r.error_at(dtype_at, format!("unknown dtype for `{name}`")))?;
            let ndim = r.u8("ndim")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64("dimension")? as usize);
            }
            let n: usize = shape.iter().product();
            let payload = r.take(n * dtype.size(), &format!("payload of `{name}`"))?;
            let data: Vec<T> = match dtype {
                DType::F32 => payload.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
                DType::F64 => payload.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
            };
            let value = ArrayD::from_shape_vec(IxDyn(&shape), data).expect("length checked");
            params.push(name, value);
        }
        r.expect_end()?;
        Ok(Self {
            role,
            config: header.config,
            params,
            training_meta: header.training_meta,
        })
    }
}

pub fn save_checkpoint<T: Scalar>(ckpt: &NetworkCheckpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &ckpt.to_bytes()?)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<NetworkCheckpoint<T>> {
    let path = path.as_ref();
    NetworkCheckpoint::from_bytes(&read_file(path)?, path)
}
