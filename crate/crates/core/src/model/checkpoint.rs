//! Binary parameter checkpoints.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "IALGCA01" count { name_len name_bytes rank dims[rank] f32_le[numel] }*count
//! ```
//!
//! The model configuration travels in a JSON sidecar next to the checkpoint
//! (`<path>.json`) so a checkpoint can be loaded without restating it.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

use super::{DferModel, ModelConfig};

pub const MAGIC: &[u8; 8] = b"IALGCA01";

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn u32_of(n: usize, path: &Path, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format(path, format!("{what} {n} does not fit in 32 bits")))
}

pub fn save_checkpoint(model: &DferModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&u32_of(model.params.len(), path, "parameter count")?.to_le_bytes());
    for p in model.params.iter() {
        buf.extend_from_slice(&u32_of(p.name.len(), path, "name length")?.to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&u32_of(p.tensor.rank(), path, "rank")?.to_le_bytes());
        for &d in p.tensor.shape() {
            buf.extend_from_slice(&u32_of(d, path, "dimension")?.to_le_bytes());
        }
        for &v in p.tensor.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;

    let cfg = sidecar(path);
    let json = serde_json::to_string_pretty(&model.config).map_err(|e| Error::format(&cfg, e.to_string()))?;
    fs::write(&cfg, json + "\n").map_err(|e| Error::io(&cfg, e))
}

struct Reader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(self.path, "truncated checkpoint")
            } else {
                Error::io(self.path, e)
            }
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Raw `(name, tensor)` entries in file order.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };
    if r.bytes(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let count = r.u32()?;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.bytes(len)?).map_err(|_| Error::format(path, "parameter name is not UTF-8"))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = numel(&shape);
        let raw = r.bytes(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    let mut rest = Vec::new();
    r.inner.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::format(path, format!("{} trailing bytes", rest.len())));
    }
    Ok(entries)
}

impl DferModel {
    /// Overwrite every parameter from checkpoint entries. Names must match the
    /// model exactly and shapes must agree.
    pub fn load_entries(&mut self, entries: Vec<(String, Tensor)>, path: &Path) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(Error::format(
                path,
                format!("checkpoint has {} parameters, model has {}", entries.len(), self.params.len()),
            ));
        }
        let mut seen = vec![false; self.params.len()];
        for (name, tensor) in entries {
            let id = self
                .params
                .id(&name)
                .ok_or_else(|| Error::format(path, format!("unknown parameter {name:?}")))?;
            let p = self.params.get_mut(id);
            if p.tensor.shape() != tensor.shape() {
                return Err(Error::format(
                    path,
                    format!("{name}: stored shape {:?}, model expects {:?}", tensor.shape(), p.tensor.shape()),
                ));
            }
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(Error::format(path, format!("duplicate parameter {name:?}")));
            }
            p.tensor = tensor;
        }
        Ok(())
    }
}

/// Read the sidecar configuration, build the model, and load its parameters.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DferModel> {
    let path = path.as_ref();
    let cfg_path = sidecar(path);
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let config: ModelConfig = serde_json::from_str(&text).map_err(|e| Error::format(&cfg_path, e.to_string()))?;
    let mut model = DferModel::new(config)?;
    let entries = read_checkpoint(path)?;
    model.load_entries(entries, path)?;
    Ok(model)
}
