//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HDMC" | version u32 | header length u32 | header JSON
//! record count u32 | records... | CRC32 of everything before
//! record = name length u32 | name | dtype u8 | rank u32 | dims u32... | data
//! ```
//!
//! The header holds the model configuration, its hash, the training step
//! and the optimizer kind. Parameter records are named as in
//! [`Model::parameters`]; the template is stored as `buffer.template` and
//! optimizer slots use an `opt.` prefix.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HDMC";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F64: u8 = 0;
const DTYPE_F32: u8 = 1;
const TEMPLATE_RECORD: &str = "buffer.template";
const OPTIMIZER_PREFIX: &str = "opt.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    config_hash: String,
    step: u64,
    optimizer: Option<String>,
}

/// A model with its training progress.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub step: u64,
    pub optimizer: Option<String>,
    /// Optimizer slots keyed by name, without the `opt.` prefix.
    pub optimizer_state: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            step: 0,
            optimizer: None,
            optimizer_state: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.model.config().clone(),
            config_hash: self.model.config().hash(),
            step: self.step,
            optimizer: self.optimizer.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let template = (TEMPLATE_RECORD.to_string(), self.model.template().clone());
        let optimizer = self
            .optimizer_state
            .iter()
            .map(|(n, t)| (format!("{OPTIMIZER_PREFIX}{n}"), t.clone()));
        let records: Vec<(String, Tensor)> = self
            .model
            .parameters()
            .iter()
            .cloned()
            .chain(std::iter::once(template))
            .chain(optimizer)
            .collect();
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, t) in &records {
            write_record(&mut out, name, t);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic or too short)".into()));
        }
        let (body, footer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(footer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Format("checkpoint CRC mismatch (truncated or corrupt file)".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)?;
        if header.config.hash() != header.config_hash {
            return Err(Error::Format("checkpoint config hash does not match its config".into()));
        }
        let count = r.u32()? as usize;
        let mut params = Vec::new();
        let mut template = None;
        let mut optimizer_state = Vec::new();
        for _ in 0..count {
            let (name, t) = r.record()?;
            if name == TEMPLATE_RECORD {
                template = Some(t);
            } else if let Some(slot) = name.strip_prefix(OPTIMIZER_PREFIX) {
                optimizer_state.push((slot.to_string(), t));
            } else {
                params.push((name, t));
            }
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes after checkpoint records".into()));
        }
        let template = template.ok_or_else(|| Error::Format("checkpoint lacks a template record".into()))?;
        let model = Model::from_parts(header.config, params, template)?;
        Ok(Self {
            model,
            step: header.step,
            optimizer: header.optimizer,
            optimizer_state,
        })
    }

    /// Atomically writes the checkpoint to `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and requires the stored configuration to equal `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        let found = ck.model.config();
        if found != expected {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint was built for grid {} / input {} / widths {:?}, expected grid {} / input {} / widths {:?}",
                found.grid_side,
                found.input_side,
                found.widths,
                expected.grid_side,
                expected.input_side,
                expected.widths
            )));
        }
        Ok(ck)
    }
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    Checkpoint::new(model.clone()).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    Ok(Checkpoint::load(path)?.model)
}

fn write_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F64);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint ends inside a record".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn record(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format("record name is not UTF-8".into()))?;
        let dtype = self.take(1)?[0];
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = match dtype {
            DTYPE_F64 => self
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            DTYPE_F32 => self
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            other => return Err(Error::Format(format!("record {name} has unknown dtype {other}"))),
        };
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("record {name}: {e}")))?;
        Ok((name, t))
    }
}
