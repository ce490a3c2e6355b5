//! Binary checkpoints.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "TCD1" | version | blob_len | blob (TOML: model config, optimizer, meta)
//!        | tensor_count | tensor*
//! tensor = name_len | name | dtype (0 = f32, 1 = f64) | rank | dims[rank] | data
//! ```
//!
//! Parameters come first in model order, then optimizer moments named
//! `optim.m.<param>`, `optim.v.<param>` and, with amsgrad,
//! `optim.v_max.<param>`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TinyCd};
use crate::tensor::{DType, Element};
use crate::train::{AdamWConfig, OptimizerState};

pub const MAGIC: &[u8; 4] = b"TCD1";
pub const FORMAT_VERSION: u32 = 1;

/// Training progress stored next to the weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Completed epochs.
    pub epoch: usize,
    /// Validation F1 measured when the checkpoint was written.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerHeader {
    #[serde(flatten)]
    config: AdamWConfig,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerHeader>,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Element> {
    pub model: TinyCd<T>,
    pub optimizer: Option<OptimizerState<T>>,
    pub meta: CheckpointMeta,
}

struct RawTensor {
    name: String,
    dims: Vec<usize>,
    values: Vec<f64>,
    dtype: DType,
    bytes: Vec<u8>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit the u32 fields")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor<T: Element>(out: &mut Vec<u8>, name: &str, dims: [usize; 4], data: &[T]) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, T::DTYPE.code() as usize)?;
    put_u32(out, dims.len())?;
    for d in dims {
        put_u32(out, d)?;
    }
    for v in data {
        v.write_le(out);
    }
    Ok(())
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint<T: Element>(
    model: &TinyCd<T>,
    optimizer: Option<&OptimizerState<T>>,
    meta: &CheckpointMeta,
) -> Result<Vec<u8>> {
    if let Some(st) = optimizer {
        st.check_compatible(model.params())?;
    }
    let header = Header {
        model: model.config().clone(),
        optimizer: optimizer.map(|st| OptimizerHeader { config: st.config, step: st.step }),
        meta: *meta,
    };
    let blob = toml::to_string(&header).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize)?;
    put_u32(&mut out, blob.len())?;
    out.extend_from_slice(blob.as_bytes());

    let params: Vec<_> = model.params().iter().collect();
    let mut count = params.len();
    if let Some(st) = optimizer {
        count += 2 * params.len() + if st.config.amsgrad { params.len() } else { 0 };
    }
    put_u32(&mut out, count)?;
    for p in &params {
        put_tensor(&mut out, p.name(), p.shape().dims(), p.value().data())?;
    }
    if let Some(st) = optimizer {
        let mut groups = vec![("m", &st.m), ("v", &st.v)];
        if st.config.amsgrad {
            groups.push(("v_max", &st.v_max));
        }
        for (kind, buffers) in groups {
            for (p, buf) in params.iter().zip(buffers.iter()) {
                put_tensor(&mut out, &format!("optim.{kind}.{}", p.name()), p.shape().dims(), buf)?;
            }
        }
    }
    Ok(out)
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save_checkpoint<T: Element>(
    path: &Path,
    model: &TinyCd<T>,
    optimizer: Option<&OptimizerState<T>>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let bytes = encode_checkpoint(model, optimizer, meta)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
                Error::Format(format!("checkpoint truncated while reading {what} at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

fn read_tensor(r: &mut Reader<'_>) -> Result<RawTensor> {
    let len = r.u32("tensor name length")?;
    let name = std::str::from_utf8(r.take(len, "tensor name")?)
        .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
        .to_string();
    let code = r.u32("dtype")? as u32;
    let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("'{name}': unknown dtype code {code}")))?;
    let rank = r.u32("rank")?;
    if rank > 8 {
        return Err(Error::Format(format!("'{name}': implausible rank {rank}")));
    }
    let dims = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("'{name}': element count overflows")))?;
    let byte_len =
        numel.checked_mul(dtype.size()).ok_or_else(|| Error::Format(format!("'{name}': byte count overflows")))?;
    let bytes = r.take(byte_len, &format!("data of '{name}'"))?.to_vec();
    let values = match dtype {
        DType::F32 => bytes.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect(),
        DType::F64 => bytes.chunks_exact(8).map(f64::read_le).collect(),
    };
    Ok(RawTensor { name, dims, values, dtype, bytes })
}

fn convert<T: Element>(t: &RawTensor) -> Vec<T> {
    if t.dtype == T::DTYPE {
        t.bytes.chunks_exact(T::DTYPE.size()).map(T::read_le).collect()
    } else {
        t.values.iter().map(|&v| T::lit(v)).collect()
    }
}

/// Parses a checkpoint produced by [`encode_checkpoint`]. With `expected`,
/// the stored tensors must match the parameters that config would create.
pub fn decode_checkpoint<T: Element>(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let blob_len = r.u32("header length")?;
    let blob = std::str::from_utf8(r.take(blob_len, "header")?)
        .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
    let header: Header = toml::from_str(blob).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        tensors.push(read_tensor(&mut r)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
    }

    let config = expected.cloned().unwrap_or_else(|| header.model.clone());
    let mut model = TinyCd::<T>::new(config, 0)?;
    let n = model.params().len();
    let mismatches: Vec<String> = model
        .params()
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let want = p.shape().dims().to_vec();
            match tensors.get(i) {
                Some(t) if t.name == p.name() && t.dims == want => None,
                Some(t) => Some(format!("'{}' {:?} (checkpoint has '{}' {:?})", p.name(), want, t.name, t.dims)),
                None => Some(format!("'{}' missing", p.name())),
            }
        })
        .collect();
    if !mismatches.is_empty() {
        return Err(Error::Compatibility(format!(
            "checkpoint does not fit the model config; mismatched tensors: {}",
            mismatches.join(", ")
        )));
    }
    model.params_mut().load_values(tensors[..n].iter().map(convert).collect())?;

    let optimizer = match header.optimizer {
        None => {
            if tensors.len() != n {
                return Err(Error::Format("tensors beyond the parameters but no optimizer header".into()));
            }
            None
        }
        Some(h) => {
            let groups = if h.config.amsgrad { 3 } else { 2 };
            if tensors.len() != n * (1 + groups) {
                return Err(Error::Format(format!(
                    "expected {} optimizer tensors, found {}",
                    n * groups,
                    tensors.len() - n
                )));
            }
            let mut state = OptimizerState::new(h.config, model.params());
            state.step = h.step;
            let names: Vec<String> = model.params().iter().map(|p| p.name().to_string()).collect();
            let kinds: &[&str] = if h.config.amsgrad { &["m", "v", "v_max"] } else { &["m", "v"] };
            for (g, kind) in kinds.iter().enumerate() {
                for (i, name) in names.iter().enumerate() {
                    let t = &tensors[n * (1 + g) + i];
                    let want = format!("optim.{kind}.{name}");
                    if t.name != want {
                        return Err(Error::Format(format!("expected tensor '{want}', found '{}'", t.name)));
                    }
                    let buf = convert(t);
                    match *kind {
                        "m" => state.m[i] = buf,
                        "v" => state.v[i] = buf,
                        _ => state.v_max[i] = buf,
                    }
                }
            }
            state.check_compatible(model.params())?;
            Some(state)
        }
    };
    Ok(Checkpoint { model, optimizer, meta: header.meta })
}

pub fn load_checkpoint<T: Element>(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected)
}

/// Dtype of the parameters stored in a checkpoint file.
pub fn checkpoint_dtype(path: &Path) -> Result<DType> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic".into()));
    }
    r.u32("version")?;
    let blob_len = r.u32("header length")?;
    r.take(blob_len, "header")?;
    if r.u32("tensor count")? == 0 {
        return Ok(DType::F32);
    }
    Ok(read_tensor(&mut r)?.dtype)
}
