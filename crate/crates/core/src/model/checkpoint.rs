//! Versioned checkpoint files.
//!
//! ```text
//! magic "CHSTCKP\0" | version u32 | meta len u32 | meta JSON
//! | tensor count u32 | per tensor: name len u16, name, rows u32, cols u32, f32 payload
//! | crc32 u32 over everything before it
//! ```
//!
//! Adam moments are stored as tensors named `adam.m/<name>` and
//! `adam.v/<name>`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::linalg::Mat;
use super::params::{ModelDims, ModelParams};
use crate::error::{Error, Result};
use crate::priority::ByteReader;

const MAGIC: &[u8; 8] = b"CHSTCKP\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dims: ModelDims,
    /// Hash of the training configuration that produced the checkpoint.
    pub config_hash: String,
    /// Last completed course.
    pub course: String,
    pub epoch: usize,
    /// Root seed and number of epoch streams consumed so far; together they
    /// determine the next random stream.
    pub rng_seed: u64,
    pub rng_counter: u64,
    pub adam: Option<AdamMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams<f32>,
    pub adam: Option<AdamState<f32>>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut meta = self.meta.clone();
        meta.dims = self.params.dims.clone();
        meta.adam = self.adam.as_ref().map(|a| AdamMeta {
            step: a.step,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            lr: a.lr,
        });
        let json = serde_json::to_vec(&meta)?;
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut tensors: Vec<(String, &Mat<f32>)> = self.params.named();
        if let Some(a) = &self.adam {
            tensors.extend(a.m.named().into_iter().map(|(n, m)| (format!("adam.m/{n}"), m)));
            tensors.extend(a.v.named().into_iter().map(|(n, m)| (format!("adam.v/{n}"), m)));
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, m) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols as u32).to_le_bytes());
            for x in &m.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &out).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Corrupt(m) => Error::Corrupt(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Load and require the given model dimensions.
    pub fn load_expecting(path: &Path, dims: &ModelDims) -> Result<Self> {
        let ck = Self::load(path)?;
        if &ck.meta.dims != dims {
            return Err(Error::Contract(format!(
                "{}: checkpoint dimensions {:?} differ from configured {:?}",
                path.display(),
                ck.meta.dims,
                dims
            )));
        }
        Ok(ck)
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Corrupt(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = ByteReader::new(&body[8..]);
        let t = || corrupt("truncated");
        let version = r.u32().ok_or_else(t)?;
        if version != VERSION {
            return Err(Error::Corrupt(format!("unsupported version {version}")));
        }
        let mlen = r.u32().ok_or_else(t)? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(mlen).ok_or_else(t)?)?;
        meta.dims.validate()?;
        let count = r.u32().ok_or_else(t)? as usize;
        let mut found = std::collections::HashMap::new();
        for _ in 0..count {
            let nlen = r.u16().ok_or_else(t)? as usize;
            let name = String::from_utf8(r.take(nlen).ok_or_else(t)?.to_vec()).map_err(|_| corrupt("bad tensor name"))?;
            let rows = r.u32().ok_or_else(t)? as usize;
            let cols = r.u32().ok_or_else(t)? as usize;
            let raw = r.take(rows * cols * 4).ok_or_else(t)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            found.insert(name, Mat { rows, cols, data });
        }
        if !r.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        let mut fill = |target: &mut ModelParams<f32>, prefix: &str| -> Result<()> {
            for (name, m) in target.named_mut() {
                let key = format!("{prefix}{name}");
                let got = found
                    .remove(&key)
                    .ok_or_else(|| Error::Corrupt(format!("missing tensor {key}")))?;
                if got.shape() != m.shape() {
                    return Err(Error::Contract(format!(
                        "tensor {key}: shape {:?} in file, expected {:?}",
                        got.shape(),
                        m.shape()
                    )));
                }
                *m = got;
            }
            Ok(())
        };
        let mut params = ModelParams::<f32>::zeros(meta.dims.clone());
        fill(&mut params, "")?;
        let adam = match &meta.adam {
            Some(a) => {
                let mut st = AdamState::new(&params, a.lr);
                st.step = a.step;
                st.beta1 = a.beta1;
                st.beta2 = a.beta2;
                st.eps = a.eps;
                fill(&mut st.m, "adam.m/")?;
                fill(&mut st.v, "adam.v/")?;
                Some(st)
            }
            None => None,
        };
        if !found.is_empty() {
            return Err(corrupt("unexpected extra tensors"));
        }
        if !params.all_finite() {
            return Err(Error::NumericFault("checkpoint holds non-finite parameters".into()));
        }
        Ok(Checkpoint { meta, params, adam })
    }
}
