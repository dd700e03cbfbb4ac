//! Segment cache files.
//!
//! ```text
//! "GMSG" | version u16 | count u32
//! count × { subject u16 | trial u16 | segment u8 | label u8 | 4096 × f64 }
//! ```
//!
//! Segment values are channel-major (`64 channels × 64 samples`), all
//! little-endian.

use std::fs;
use std::path::Path;

use super::trials::{Segment, Task, CHANNELS, SEGMENT_SAMPLES};
use crate::bytes::{put_f64s, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GMSG";
pub const VERSION: u16 = 1;
const VALUES: usize = CHANNELS * SEGMENT_SAMPLES;

pub fn cache_to_bytes(segments: &[Segment]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(10 + segments.len() * (6 + VALUES * 8));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(segments.len()).map_err(|_| Error::Data("too many segments for one cache".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for s in segments {
        if s.data.len() != VALUES {
            return Err(Error::Data(format!(
                "segment {}/{}/{} has {} values, the cache stores {VALUES}",
                s.subject,
                s.trial,
                s.index,
                s.data.len()
            )));
        }
        out.extend_from_slice(&s.subject.to_le_bytes());
        out.extend_from_slice(&s.trial.to_le_bytes());
        out.push(s.index);
        out.push(s.task.index() as u8);
        put_f64s(&mut out, &s.data);
    }
    Ok(out)
}

pub fn cache_from_bytes(bytes: &[u8]) -> Result<Vec<Segment>> {
    let mut r = Reader::new(bytes, "segment cache");
    if r.take(4)? != MAGIC {
        return Err(Error::format("segment cache", "bad magic, expected GMSG"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(
            "segment cache",
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(r.remaining() / (6 + VALUES * 8) + 1));
    for _ in 0..count {
        let subject = r.u16()?;
        let trial = r.u16()?;
        let index = r.u8()?;
        let label = r.u8()?;
        let task = Task::from_index(label as usize).ok_or_else(|| r.error(format!("label {label} out of range")))?;
        let data = r.f64s(VALUES)?;
        out.push(Segment {
            subject,
            trial,
            index,
            task,
            data,
        });
    }
    if r.remaining() != 0 {
        return Err(r.error("trailing bytes after last segment"));
    }
    Ok(out)
}

pub fn write_cache(path: &Path, segments: &[Segment]) -> Result<()> {
    fs::write(path, cache_to_bytes(segments)?).map_err(|e| Error::file(path, e))
}

pub fn read_cache(path: &Path) -> Result<Vec<Segment>> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    cache_from_bytes(&bytes).map_err(|e| match e {
        Error::Format { message, .. } => Error::format(path.display().to_string(), message),
        other => other,
    })
}
