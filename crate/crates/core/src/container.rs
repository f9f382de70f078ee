//! Binary file container shared by datasets and checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u32` header length, UTF-8 JSON header, then a sequence
//! of records, each a little-endian `u32` byte length followed by the payload. Numbers inside
//! payloads are little-endian IEEE-754.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const MAGIC: [u8; 8] = *b"GRNLNCH\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a greenlaunch container (bad magic bytes)")]
    BadMagic,
    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("expected a {expected} file, found {found}")]
    WrongKind { expected: String, found: String },
    #[error("file truncated while reading {0}")]
    Truncated(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed header: {0}")]
    Header(String),
}

/// Fields every header carries. Kind-specific fields sit alongside them in the same object.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    kind: String,
}

/// A loaded value plus non-fatal problems found while loading.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

/// Writes a container. `header` must serialize to a JSON object; `format_version` and `kind`
/// are added to it.
pub fn write_container<H: Serialize>(path: &Path, kind: &str, header: &H, records: &[Vec<u8>]) -> Result<(), ContainerError> {
    let prefix = encode_prefix(kind, header)?;
    let io = |source| ContainerError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut file = BufWriter::new(fs::File::create(path).map_err(io)?);
    file.write_all(&prefix).map_err(io)?;
    for r in records {
        file.write_all(&(r.len() as u32).to_le_bytes()).map_err(io)?;
        file.write_all(r).map_err(io)?;
    }
    file.into_inner().map_err(|e| io(e.into_error()))?.sync_all().map_err(io)
}

/// Magic, header length and header.
fn encode_prefix<H: Serialize>(kind: &str, header: &H) -> Result<Vec<u8>, ContainerError> {
    let mut json = serde_json::to_value(header).map_err(|e| ContainerError::Header(e.to_string()))?;
    let obj = json
        .as_object_mut()
        .ok_or_else(|| ContainerError::Header("header must be a JSON object".into()))?;
    obj.insert("format_version".into(), FORMAT_VERSION.into());
    obj.insert("kind".into(), kind.into());
    let header_bytes = serde_json::to_vec(&json).map_err(|e| ContainerError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + header_bytes.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    Ok(out)
}

pub fn encode_container<H: Serialize>(kind: &str, header: &H, records: &[Vec<u8>]) -> Result<Vec<u8>, ContainerError> {
    let mut out = encode_prefix(kind, header)?;
    for r in records {
        out.extend_from_slice(&(r.len() as u32).to_le_bytes());
        out.extend_from_slice(r);
    }
    Ok(out)
}

/// Reads a container of the given kind, returning the parsed header and the raw records.
pub fn read_container<H: DeserializeOwned>(path: &Path, kind: &str) -> Result<(H, Vec<Vec<u8>>), ContainerError> {
    let bytes = fs::read(path).map_err(|source| ContainerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_container(&bytes, kind)
}

pub fn decode_container<H: DeserializeOwned>(bytes: &[u8], kind: &str) -> Result<(H, Vec<Vec<u8>>), ContainerError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < MAGIC.len() {
        return Err(ContainerError::Truncated("magic".into()));
    }
    if cur.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let header_len = cur.u32("header length")? as usize;
    let header_bytes = cur.take(header_len, "header")?;
    let json: serde_json::Value = serde_json::from_slice(header_bytes).map_err(|e| ContainerError::Header(e.to_string()))?;
    let env: Envelope = serde_json::from_value(json.clone()).map_err(|e| ContainerError::Header(e.to_string()))?;
    if env.format_version != FORMAT_VERSION {
        return Err(ContainerError::Version {
            found: env.format_version,
            supported: FORMAT_VERSION,
        });
    }
    if env.kind != kind {
        return Err(ContainerError::WrongKind {
            expected: kind.into(),
            found: env.kind,
        });
    }
    let header: H = serde_json::from_value(json).map_err(|e| ContainerError::Header(e.to_string()))?;
    let mut records = Vec::new();
    while cur.pos < bytes.len() {
        let what = format!("record {}", records.len());
        let len = cur.u32(&what)? as usize;
        records.push(cur.take(len, &what)?.to_vec());
    }
    Ok((header, records))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ContainerError::Truncated(what.into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Little-endian payload builder.
#[derive(Debug, Default)]
pub struct RecordWriter(pub Vec<u8>);

impl RecordWriter {
    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }
    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn f32s(&mut self, vs: &[f32]) -> &mut Self {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        self
    }
    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        self
    }
}

/// Little-endian payload reader; running past the end is a shape error since the record
/// length itself was intact.
pub struct RecordReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: String,
}

impl<'a> RecordReader<'a> {
    pub fn new(bytes: &'a [u8], context: impl Into<String>) -> Self {
        Self {
            bytes,
            pos: 0,
            context: context.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.pos + n > self.bytes.len() {
            return Err(ContainerError::Shape(format!("{} is shorter than its declared shape", self.context)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    pub fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    pub fn f64(&mut self) -> Result<f64, ContainerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, ContainerError> {
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ContainerError> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    /// Errors if bytes remain.
    pub fn finish(self) -> Result<(), ContainerError> {
        if self.pos != self.bytes.len() {
            return Err(ContainerError::Shape(format!(
                "{} has {} bytes beyond its declared shape",
                self.context,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
