//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DCKP" | u32 version | u32 len, config JSON | u32 count
//! count × (u32 len, name | u32 rank | rank × u64 extent | u64 offset)
//! f32 payloads (offsets are absolute file positions)
//! u32 CRC32 of every preceding byte
//! ```
//!
//! The JSON text is kept verbatim so that load → save reproduces the file
//! byte for byte.

use std::fs;
use std::path::Path;

use lgvit_tensor::Tensor;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor<f32>) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Raw JSON metadata (model config, step, optimizer and rng state).
    pub config_json: String,
    pub tensors: Vec<NamedTensor>,
}

/// One row of the tensor table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone)]
pub struct Inspection {
    pub version: u32,
    pub config_json: String,
    pub entries: Vec<TableEntry>,
    pub stored_crc: u32,
    pub computed_crc: u32,
}

impl Inspection {
    pub fn crc_ok(&self) -> bool {
        self.stored_crc == self.computed_crc
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(corrupt(format!("truncated while reading {what}")));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| corrupt(format!("{what} is not UTF-8")))
    }
}

/// Parses everything up to the payloads. `body` excludes the CRC trailer.
fn parse_header(body: &[u8]) -> Result<(u32, String, Vec<TableEntry>, usize)> {
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32("version")?;
    let json = r.string("config")?;
    let count = r.u32("tensor count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let rank = r.u32("rank")? as usize;
        if rank > 16 {
            return Err(corrupt(format!("`{name}` claims rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u64("extent").map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = r.u64("offset")?;
        entries.push(TableEntry { name, shape, offset });
    }
    Ok((version, json, entries, r.pos))
}

fn split_crc(bytes: &[u8]) -> Result<(&[u8], u32)> {
    if bytes.len() < 4 + 4 {
        return Err(corrupt("file too short"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    Ok((body, u32::from_le_bytes(tail.try_into().expect("4 bytes"))))
}

impl Checkpoint {
    pub fn new(meta: &impl Serialize, tensors: Vec<NamedTensor>) -> Result<Self> {
        Ok(Self {
            config_json: serde_json::to_string(meta)?,
            tensors,
        })
    }

    pub fn meta<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_str(&self.config_json)?)
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let table_len: usize = self
            .tensors
            .iter()
            .map(|t| 4 + t.name.len() + 4 + 8 * t.shape.len() + 8)
            .sum();
        let mut offset = (out.len() + table_len) as u64;
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &e in &t.shape {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.data.len() as u64;
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Validates magic, CRC, version and the tensor table.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, stored) = split_crc(bytes)?;
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(corrupt(format!("CRC mismatch (stored {stored:08x}, computed {computed:08x})")));
        }
        let (version, config_json, entries, payload_start) = parse_header(body)?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let mut expected_offset = payload_start as u64;
        let mut tensors = Vec::with_capacity(entries.len());
        for e in entries {
            let numel = e
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| corrupt(format!("`{}` has an overflowing shape", e.name)))?;
            if e.offset != expected_offset {
                return Err(corrupt(format!("`{}` payload offset {} out of sequence", e.name, e.offset)));
            }
            let start = e.offset as usize;
            let end = numel
                .checked_mul(4)
                .and_then(|n| start.checked_add(n))
                .filter(|&end| end <= body.len())
                .ok_or_else(|| corrupt(format!("`{}` payload runs past the end", e.name)))?;
            let data = body[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            expected_offset = end as u64;
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        if expected_offset as usize != body.len() {
            return Err(corrupt("trailing bytes after the last payload"));
        }
        Ok(Self { config_json, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies `prefix + name` tensors into `params`, checking every shape.
    pub fn restore(&self, prefix: &str, params: &[(String, Tensor<f32>)]) -> Result<()> {
        for (name, p) in params {
            let full = format!("{prefix}{name}");
            let stored = self.get(&full).ok_or_else(|| Error::MissingTensor(full.clone()))?;
            if stored.shape != p.shape() {
                return Err(Error::ParamShape {
                    name: full,
                    expected: p.shape().to_vec(),
                    found: stored.shape.clone(),
                });
            }
        }
        for (name, p) in params {
            let stored = self.get(&format!("{prefix}{name}")).expect("checked above");
            p.set_data(&stored.data)?;
        }
        Ok(())
    }
}

/// Reads the header and table without requiring a valid CRC.
pub fn inspect(path: impl AsRef<Path>) -> Result<Inspection> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (body, stored_crc) = split_crc(&bytes)?;
    let (version, config_json, entries, _) = parse_header(body)?;
    Ok(Inspection {
        version,
        config_json,
        entries,
        stored_crc,
        computed_crc: crc32fast::hash(body),
    })
}
