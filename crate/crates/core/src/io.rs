//! Atomic file output and the versioned binary container shared by model,
//! feature-cache and heatmap artifacts.
//!
//! Container layout: `b"LXAICNTR"`, version `u32` LE, header length `u64`
//! LE, UTF-8 JSON header, then each array's elements little-endian in
//! header order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 8] = b"LXAICNTR";
pub const CONTAINER_VERSION: u32 = 1;

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = tmp_path(path);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    F32(Vec<f32>),
}

impl ArrayData {
    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::F32(v) => v.len(),
        }
    }

    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F64(_) => "f64",
            ArrayData::F32(_) => "f32",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn f64(name: &str, shape: &[usize], data: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: ArrayData::F64(data),
        }
    }

    pub fn f32(name: &str, shape: &[usize], data: Vec<f32>) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: ArrayData::F32(data),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawHeader<H> {
    kind: String,
    meta: H,
    arrays: Vec<ArrayEntry>,
}

/// A typed JSON header plus named numeric arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Container<H> {
    pub kind: String,
    pub meta: H,
    pub arrays: Vec<NamedArray>,
}

impl<H: Serialize + DeserializeOwned> Container<H> {
    pub fn new(kind: &str, meta: H) -> Self {
        Self {
            kind: kind.to_string(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, array: NamedArray) {
        self.arrays.push(array);
    }

    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn f64_array(&self, name: &str, path: &Path) -> Result<(&[usize], &[f64])> {
        match self.array(name) {
            Some(NamedArray { shape, data: ArrayData::F64(v), .. }) => Ok((shape, v)),
            Some(_) => Err(Error::format(path, format!("array {name} is not f64"))),
            None => Err(Error::format(path, format!("missing array {name}"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = RawHeader {
            kind: self.kind.clone(),
            meta: &self.meta,
            arrays: self
                .arrays
                .iter()
                .map(|a| ArrayEntry {
                    name: a.name.clone(),
                    dtype: a.data.dtype().to_string(),
                    shape: a.shape.clone(),
                })
                .collect(),
        };
        for a in &self.arrays {
            if a.shape.iter().product::<usize>() != a.data.len() {
                return Err(crate::error::invalid!("array {} has {} elements for shape {:?}", a.name, a.data.len(), a.shape));
            }
        }
        let json = serde_json::to_vec(&header).map_err(|e| crate::error::invalid!("container header: {e}"))?;
        let mut out = Vec::with_capacity(20 + json.len());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.arrays {
            match &a.data {
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(out)
    }

    /// Parses a container; `path` is used only for error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CONTAINER_MAGIC {
            return Err(Error::format(path, "not a container file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CONTAINER_VERSION {
            return Err(Error::Version {
                expected: CONTAINER_VERSION,
                found: version,
            });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| Error::format(path, "truncated header"))?;
        let header: RawHeader<H> = serde_json::from_slice(body).map_err(|e| Error::format(path, e.to_string()))?;
        let mut offset = 20 + hlen;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let n: usize = entry.shape.iter().product();
            let width = match entry.dtype.as_str() {
                "f64" => 8,
                "f32" => 4,
                other => return Err(Error::format(path, format!("unknown dtype {other}"))),
            };
            let raw = bytes
                .get(offset..offset + n * width)
                .ok_or_else(|| Error::format(path, format!("truncated array {}", entry.name)))?;
            offset += n * width;
            let data = if width == 8 {
                ArrayData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect())
            } else {
                ArrayData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect())
            };
            arrays.push(NamedArray {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        if offset != bytes.len() {
            return Err(Error::format(path, "trailing bytes"));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    /// Loads a container and checks its kind tag.
    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let c = Self::from_bytes(&bytes, path)?;
        if c.kind != kind {
            return Err(Error::format(path, format!("expected a {kind} container, found {}", c.kind)));
        }
        Ok(c)
    }
}
