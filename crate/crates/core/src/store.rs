//! On-disk tensors, JSON sidecars and content hashes for run artifacts.
//!
//! Tensor layout (all little endian): the 8-byte magic `CVARTNSR`, a `u8`
//! element tag (1 = f64, 2 = u32), three zero bytes, a `u32` rank, one `u64`
//! per dimension, then the elements in row-major order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vi::{ConvergenceReport, SelectorTable, ValueGrid, ViSolution};

const MAGIC: &[u8; 8] = b"CVARTNSR";
const TAG_F64: u8 = 1;
const TAG_U32: u8 = 2;

pub fn sha256_bytes(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| missing_or_io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

/// Fails with [`Error::HashMismatch`] naming `path` if its content hash differs.
pub fn verify_file(path: &Path, expected: &str) -> Result<()> {
    let found = sha256_file(path)?;
    if found != expected {
        return Err(Error::HashMismatch {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            found,
        });
    }
    Ok(())
}

fn missing_or_io(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingArtifacts(path.display().to_string())
    } else {
        Error::Io(e)
    }
}

/// Writes via a temporary sibling and a rename so readers never see a torn file.
/// Returns the content hash.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<String> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(sha256_bytes(bytes))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| missing_or_io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn encode_header(tag: u8, dims: &[usize], elem_size: usize) -> Vec<u8> {
    let n: usize = dims.iter().product();
    let mut out = Vec::with_capacity(16 + 8 * dims.len() + elem_size * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[tag, 0, 0, 0]);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out
}

pub fn encode_f64(dims: &[usize], values: &[f64]) -> Vec<u8> {
    assert_eq!(dims.iter().product::<usize>(), values.len(), "dims do not match data");
    let mut out = encode_header(TAG_F64, dims, 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_u32(dims: &[usize], values: &[u32]) -> Vec<u8> {
    assert_eq!(dims.iter().product::<usize>(), values.len(), "dims do not match data");
    let mut out = encode_header(TAG_U32, dims, 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses the header and returns `(dims, payload)` after checking the tag and length.
fn decode<'a>(path: &Path, bytes: &'a [u8], tag: u8, elem_size: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let bad = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a tensor file"));
    }
    if bytes[8] != tag {
        return Err(bad("unexpected element type"));
    }
    let rank = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = 16 + 8 * rank;
    if bytes.len() < body {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if bytes.len() != body + n * elem_size {
        return Err(bad("payload length does not match dims"));
    }
    Ok((dims, &bytes[body..]))
}

pub fn read_f64(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| missing_or_io(path, e))?;
    let (dims, payload) = decode(path, &bytes, TAG_F64, 8)?;
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, values))
}

pub fn read_u32(path: &Path) -> Result<(Vec<usize>, Vec<u32>)> {
    let bytes = fs::read(path).map_err(|e| missing_or_io(path, e))?;
    let (dims, payload) = decode(path, &bytes, TAG_U32, 4)?;
    let values = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, values))
}

/// Sidecar describing one stored `(V_t^s, selector)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub s: f64,
    pub t: usize,
    pub model_hash: String,
    pub tol: f64,
    pub value_file: String,
    pub value_hash: String,
    pub selector_file: String,
    pub selector_hash: String,
    pub report: ConvergenceReport,
}

impl GridRecord {
    pub fn converged(&self) -> bool {
        self.report.converged
    }
}

/// Writes `{stem}.value.bin`, `{stem}.selector.bin` and the sidecar `{stem}.json`
/// under `dir`. Returns the record and the sidecar's hash.
pub fn save_solution(dir: &Path, stem: &str, sol: &ViSolution, model_hash: &str, tol: f64) -> Result<(GridRecord, String)> {
    let value_file = format!("{stem}.value.bin");
    let selector_file = format!("{stem}.selector.bin");
    let dims = [sol.value.n_states(), sol.value.nz()];
    let value_hash = write_atomic(&dir.join(&value_file), &encode_f64(&dims, sol.value.values()))?;
    let selector_hash = write_atomic(&dir.join(&selector_file), &encode_u32(&dims, sol.selector.indices()))?;
    let record = GridRecord {
        s: sol.value.s(),
        t: sol.value.t(),
        model_hash: model_hash.to_string(),
        tol,
        value_file,
        value_hash,
        selector_file,
        selector_hash,
        report: sol.report.clone(),
    };
    let hash = write_json(&dir.join(format!("{stem}.json")), &record)?;
    Ok((record, hash))
}

/// Reads a stored solution back, verifying both content hashes.
pub fn load_solution(dir: &Path, record: &GridRecord) -> Result<ViSolution> {
    let vpath = dir.join(&record.value_file);
    let spath = dir.join(&record.selector_file);
    verify_file(&vpath, &record.value_hash)?;
    verify_file(&spath, &record.selector_hash)?;
    let (vdims, values) = read_f64(&vpath)?;
    let (sdims, sel) = read_u32(&spath)?;
    if vdims.len() != 2 || vdims != sdims {
        return Err(Error::Format {
            path: spath,
            message: format!("selector dims {sdims:?} do not match value dims {vdims:?}"),
        });
    }
    Ok(ViSolution {
        value: ValueGrid::from_values(values, vdims[0], vdims[1], record.s, record.t)?,
        selector: SelectorTable::from_indices(sel, vdims[0], vdims[1], record.s)?,
        report: record.report.clone(),
    })
}
