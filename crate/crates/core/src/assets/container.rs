//! Chunked binary container shared by head-model and avatar files.
//!
//! ```text
//! magic      [u8; 8]
//! version    u32
//! metadata   u64 length, JSON bytes, u32 CRC32 of the JSON bytes
//! blob*      u32 name length, name bytes, u8 dtype (0 = f32, 1 = u32),
//!            u64 element count, payload (count × 4 bytes),
//!            u32 CRC32 over name, dtype, count and payload
//! ```
//!
//! Every integer and element is little-endian.

use std::collections::BTreeMap;

use crate::error::{FormatError, Result};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Blob {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

impl Blob {
    fn dtype(&self) -> u8 {
        match self {
            Blob::F32(_) => 0,
            Blob::U32(_) => 1,
        }
    }

    fn len(&self) -> usize {
        match self {
            Blob::F32(v) => v.len(),
            Blob::U32(v) => v.len(),
        }
    }
}

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8], metadata: &serde_json::Value) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let json = serde_json::to_vec(metadata).expect("metadata serializes");
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        buf.extend_from_slice(&crc32fast::hash(&json).to_le_bytes());
        Self { buf }
    }

    pub fn f32(&mut self, name: &str, data: &[f32]) {
        self.header(name, 0, data.len());
        let start = self.buf.len() - 13 - name.len();
        self.buf.reserve(data.len() * 4 + 4);
        for v in data {
            self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        self.finish(start);
    }

    pub fn u32(&mut self, name: &str, data: &[u32]) {
        self.header(name, 1, data.len());
        let start = self.buf.len() - 13 - name.len();
        self.buf.reserve(data.len() * 4 + 4);
        for v in data {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self.finish(start);
    }

    pub fn blob(&mut self, name: &str, blob: &Blob) {
        match blob {
            Blob::F32(v) => self.f32(name, v),
            Blob::U32(v) => self.u32(name, v),
        }
    }

    fn header(&mut self, name: &str, dtype: u8, count: usize) {
        self.buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.push(dtype);
        self.buf.extend_from_slice(&(count as u64).to_le_bytes());
    }

    fn finish(&mut self, start: usize) {
        // the CRC covers everything after the name-length prefix
        let crc = crc32fast::hash(&self.buf[start + 4..]);
        self.buf.extend_from_slice(&crc.to_le_bytes());
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// A fully decoded container.
#[derive(Debug)]
pub struct Container {
    pub metadata: serde_json::Value,
    pub blobs: BTreeMap<String, Blob>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: u64, context: &str) -> Result<&'a [u8], FormatError> {
        let available = (self.bytes.len() - self.pos) as u64;
        if n > available {
            return Err(FormatError::Truncated {
                context: context.to_string(),
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n as usize];
        self.pos += n as usize;
        Ok(s)
    }

    fn u32(&mut self, context: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn u64(&mut self, context: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode(bytes: &[u8], magic: &[u8; 8]) -> Result<Container, FormatError> {
    let mut c = Cursor { bytes, pos: 0 };
    let found = c.take(8, "magic")?;
    if found != magic {
        let mut f = [0u8; 8];
        f.copy_from_slice(found);
        return Err(FormatError::BadMagic {
            expected: *magic,
            found: f,
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let len = c.u64("metadata length")?;
    let json = c.take(len, "metadata")?;
    let crc = c.u32("metadata checksum")?;
    if crc32fast::hash(json) != crc {
        return Err(FormatError::Checksum {
            chunk: "metadata".into(),
        });
    }
    let metadata: serde_json::Value =
        serde_json::from_slice(json).map_err(|e| FormatError::Metadata(e.to_string()))?;

    let mut blobs = BTreeMap::new();
    while !c.done() {
        let name_len = c.u32("blob name length")?;
        let start = c.pos;
        let name_bytes = c.take(name_len as u64, "blob name")?;
        let name = String::from_utf8(name_bytes.to_vec())
            .map_err(|_| FormatError::Metadata("blob name is not UTF-8".into()))?;
        let dtype = c.take(1, &format!("blob {name} dtype"))?[0];
        let count = c.u64(&format!("blob {name} length"))?;
        let payload = c.take(count.saturating_mul(4), &format!("blob {name}"))?;
        let covered = &bytes[start..c.pos];
        let crc = c.u32(&format!("blob {name} checksum"))?;
        if crc32fast::hash(covered) != crc {
            return Err(FormatError::Checksum { chunk: name });
        }
        let words = payload.chunks_exact(4).map(|w| u32::from_le_bytes(w.try_into().unwrap()));
        let blob = match dtype {
            0 => Blob::F32(words.map(f32::from_bits).collect()),
            1 => Blob::U32(words.collect()),
            d => return Err(FormatError::Metadata(format!("blob {name} has unknown dtype {d}"))),
        };
        blobs.insert(name, blob);
    }
    Ok(Container { metadata, blobs })
}

impl Container {
    pub fn take_f32(&mut self, name: &str, len: usize) -> Result<Vec<f32>, FormatError> {
        match self.blobs.remove(name) {
            Some(Blob::F32(v)) if v.len() == len => Ok(v),
            Some(b) if b.len() != len => Err(FormatError::Metadata(format!(
                "blob {name} has {} elements, expected {len}",
                b.len()
            ))),
            Some(b) => Err(FormatError::Metadata(format!(
                "blob {name} has dtype {}, expected f32",
                b.dtype()
            ))),
            None => Err(FormatError::Metadata(format!("missing blob {name}"))),
        }
    }

    pub fn take_u32(&mut self, name: &str, len: usize) -> Result<Vec<u32>, FormatError> {
        match self.blobs.remove(name) {
            Some(Blob::U32(v)) if v.len() == len => Ok(v),
            Some(b) if b.len() != len => Err(FormatError::Metadata(format!(
                "blob {name} has {} elements, expected {len}",
                b.len()
            ))),
            Some(b) => Err(FormatError::Metadata(format!(
                "blob {name} has dtype {}, expected u32",
                b.dtype()
            ))),
            None => Err(FormatError::Metadata(format!("missing blob {name}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"TESTCONT";

    fn sample() -> Vec<u8> {
        let mut w = Writer::new(MAGIC, &serde_json::json!({"k": 1}));
        w.f32("a", &[1.0, f32::NAN, -0.0]);
        w.u32("b", &[7, 8]);
        w.into_bytes()
    }

    #[test]
    fn round_trip_preserves_bits() {
        let mut c = decode(&sample(), MAGIC).unwrap();
        assert_eq!(c.metadata["k"], 1);
        let a = c.take_f32("a", 3).unwrap();
        assert_eq!(a[0], 1.0);
        assert!(a[1].is_nan());
        assert_eq!(a[2].to_bits(), (-0.0f32).to_bits());
        assert_eq!(c.take_u32("b", 2).unwrap(), vec![7, 8]);
    }

    #[test]
    fn corruption_modes_are_distinct() {
        let good = sample();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, MAGIC), Err(FormatError::BadMagic { .. })));
        let mut bad = good.clone();
        bad[8] = 9;
        assert!(matches!(
            decode(&bad, MAGIC),
            Err(FormatError::UnsupportedVersion { found: 9, .. })
        ));
        let bad = &good[..good.len() - 6];
        assert!(matches!(decode(bad, MAGIC), Err(FormatError::Truncated { .. })));
        let mut bad = good.clone();
        let n = bad.len();
        bad[n - 10] ^= 0x40;
        assert!(matches!(decode(&bad, MAGIC), Err(FormatError::Checksum { .. })));
    }

    #[test]
    fn wrong_length_is_reported() {
        let mut c = decode(&sample(), MAGIC).unwrap();
        assert!(matches!(c.take_f32("a", 4), Err(FormatError::Metadata(_))));
    }
}
