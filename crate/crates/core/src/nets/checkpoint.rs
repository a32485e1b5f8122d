//! Binary tensor archive used for model checkpoints and training state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "ADVLAB\0\x01"
//! version  u32
//! dtype    u32 length + UTF-8 ("f32" | "f64")
//! meta     u32 length + UTF-8 JSON
//! count    u32
//! repeated count times:
//!   name   u32 length + UTF-8
//!   rank   u32
//!   dims   rank × u64
//!   data   product(dims) values in dtype, little-endian
//! ```

use std::fs;
use std::path::Path;

use advlab_tensor::{DType, Real, Tensor};
use serde::{de::DeserializeOwned, Serialize};
use serde_json::Value;

use super::model::{ArchVariant, Model};
use super::params::ParamStore;
use crate::error::{io_err, CoreError, Result};

const MAGIC: &[u8; 8] = b"ADVLAB\0\x01";
pub const FORMAT_VERSION: u32 = 1;

/// JSON metadata plus named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive<T> {
    pub meta: Value,
    pub tensors: ParamStore<T>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

impl<T: Real> Archive<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, T::DTYPE.as_str());
        put_str(&mut out, &self.meta.to_string());
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.tensors.iter() {
            put_str(&mut out, name);
            out.extend((t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(r.fail("not an archive (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(r.fail(format!("unsupported format version {version}")));
        }
        let dtype: DType = r.string()?.parse().map_err(|e: String| r.fail(e))?;
        if dtype != T::DTYPE {
            return Err(r.fail(format!("stored as {dtype}, requested {}", T::DTYPE)));
        }
        let meta: Value = serde_json::from_str(&r.string()?).map_err(|e| r.fail(format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = ParamStore::new();
        let width = dtype.size_of();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(width).ok_or_else(|| r.fail("tensor too large"))?)?;
            let data = raw.chunks_exact(width).map(T::read_le).collect();
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes"));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn meta_field<V: DeserializeOwned>(&self, key: &str, path: &Path) -> Result<V> {
        let v = self.meta.get(key).cloned().ok_or_else(|| CoreError::Format {
            path: path.to_path_buf(),
            msg: format!("metadata lacks `{key}`"),
        })?;
        serde_json::from_value(v).map_err(|e| CoreError::Format {
            path: path.to_path_buf(),
            msg: format!("metadata `{key}`: {e}"),
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, msg: impl Into<String>) -> CoreError {
        CoreError::Format {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.fail("invalid UTF-8"))
    }
}

fn model_meta(variant: &ArchVariant, extra: Option<Value>) -> Value {
    let mut meta = serde_json::json!({ "kind": "model", "variant": variant });
    if let (Some(Value::Object(extra)), Value::Object(m)) = (extra, &mut meta) {
        m.extend(extra);
    }
    meta
}

impl<T: Real> Model<T> {
    pub fn to_archive(&self, extra: Option<impl Serialize>) -> Archive<T> {
        let extra = extra.map(|e| serde_json::to_value(e).expect("serializable metadata"));
        Archive {
            meta: model_meta(&self.variant, extra),
            tensors: self.params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive(None::<Value>).save(path)
    }

    pub fn from_archive(archive: Archive<T>, path: &Path) -> Result<Self> {
        let variant: ArchVariant = archive.meta_field("variant", path)?;
        Model::from_params(variant, archive.tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(Archive::load(path)?, path)
    }
}

/// Reads only the dtype recorded in an archive header.
pub fn archive_dtype(path: &Path) -> Result<DType> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(8)? != MAGIC {
        return Err(r.fail("not an archive (bad magic)"));
    }
    r.u32()?;
    let s = r.string()?;
    s.parse().map_err(|e: String| r.fail(e))
}
