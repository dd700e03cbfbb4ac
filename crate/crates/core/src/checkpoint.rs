//! Model checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "GMND" | version u16 | count u32
//! count × { blob length u64 | name length u16 | name (UTF-8)
//!           | rank u8 | rank × dim u32 | prod(dims) × f64 }
//! ```
//!
//! The blob length covers everything after itself up to the next blob.

use std::fs;
use std::path::Path;

use crate::bytes::{put_f64s, Reader};
use crate::error::{Error, Result};
use crate::tensor::ParamStore;

pub const MAGIC: &[u8; 4] = b"GMND";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered named tensors, independent of any particular model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub blobs: Vec<Blob>,
}

impl Checkpoint {
    /// Every tensor of `store`, buffers included, in registration order.
    pub fn from_store(store: &ParamStore) -> Self {
        let blobs = store
            .ids()
            .map(|id| Blob {
                name: store.name(id).to_string(),
                shape: store.get(id).shape().to_vec(),
                data: store.get(id).data().to_vec(),
            })
            .collect();
        Checkpoint { blobs }
    }

    pub fn get(&self, name: &str) -> Option<&Blob> {
        self.blobs.iter().find(|b| b.name == name)
    }

    pub fn shape(&self, name: &str) -> Result<&[usize]> {
        self.get(name)
            .map(|b| b.shape.as_slice())
            .ok_or_else(|| Error::format("checkpoint", format!("missing parameter {name}")))
    }

    /// Copies every blob into `store`. The name sets must match exactly and
    /// shapes must agree.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if let Some(id) = store.ids().find(|&id| self.get(store.name(id)).is_none()) {
            return Err(Error::format(
                "checkpoint",
                format!("missing parameter {}", store.name(id)),
            ));
        }
        for b in &self.blobs {
            store.load(&b.name, &b.shape, b.data.clone())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for b in &self.blobs {
            let mut body = Vec::new();
            body.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
            body.extend_from_slice(b.name.as_bytes());
            body.push(b.shape.len() as u8);
            for &d in &b.shape {
                body.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_f64s(&mut body, &b.data);
            out.extend_from_slice(&(body.len() as u64).to_le_bytes());
            out.extend_from_slice(&body);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        if r.take(4)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic, expected GMND"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {version}, expected {VERSION}"),
            ));
        }
        let count = r.u32()? as usize;
        let mut blobs = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u64()? as usize;
            let start = r.position();
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| r.error("parameter name is not UTF-8"))?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let data = r.f64s(shape.iter().product())?;
            if r.position() - start != len {
                return Err(r.error(format!("blob {name} declares {len} bytes")));
            }
            blobs.push(Blob { name, shape, data });
        }
        if r.remaining() != 0 {
            return Err(r.error("trailing bytes after last blob"));
        }
        Ok(Checkpoint { blobs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            other => other,
        })
    }
}
