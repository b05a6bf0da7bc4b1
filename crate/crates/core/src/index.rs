//! Exact inner-product top-k search.
//!
//! Every query scans every entry, so results are exact. Hits are ordered
//! by descending score with ties going to the entry inserted first.
//!
//! # File format
//!
//! ```text
//! magic    8 bytes  "OMGMIDX" followed by the version byte '1'
//! dims     u64 LE
//! count    u64 LE
//! entries  count × { id_len u32 LE, id bytes (UTF-8), dims × f64 LE }
//! meta     u32 LE length, then JSON-encoded IndexMetadata
//! ```
//!
//! Floats are stored bit-for-bit, so a reloaded index scores every query
//! exactly as the original did.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::par::Exec;
use crate::provider::{dot, DenseVector};

const MAGIC_PREFIX: &[u8; 7] = b"OMGMIDX";
pub const FORMAT_VERSION: u8 = b'1';
/// Entries scored per parallel work unit.
const SCAN_CHUNK: usize = 2048;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot build an empty index")]
    Empty,
    #[error("dims mismatch: expected {expected}, got {got} (entry {id:?})")]
    DimsMismatch {
        expected: usize,
        got: usize,
        id: String,
    },
    #[error("query has {got} dims, index has {expected}")]
    QueryDims { expected: usize, got: usize },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("zero-norm vector for {0:?} cannot be normalized")]
    ZeroNorm(String),
    #[error("unsupported index version {found:?} (expected {expected:?})")]
    Version { found: char, expected: char },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub record_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexMetadata {
    pub provider_id: String,
    /// Seconds since the Unix epoch.
    pub built_at: u64,
    /// Entries (and queries) are L2-normalized, so scores are cosines.
    pub normalized: bool,
    /// Records whose text was truncated by the provider before embedding.
    #[serde(default)]
    pub truncated: Vec<String>,
    /// Provenance blob from the caller, stored verbatim.
    #[serde(default)]
    pub run_config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexOptions {
    pub normalize: bool,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self { normalize: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dims: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    positions: HashMap<String, usize>,
    meta: IndexMetadata,
    exec: Exec,
}

pub fn build_index(entries: Vec<(String, DenseVector)>) -> Result<VectorIndex, IndexError> {
    VectorIndex::build(entries, IndexOptions::default(), IndexMetadata::default())
}

impl VectorIndex {
    pub fn build(
        entries: Vec<(String, DenseVector)>,
        options: IndexOptions,
        mut meta: IndexMetadata,
    ) -> Result<Self, IndexError> {
        let dims = entries.first().ok_or(IndexError::Empty)?.1.dims();
        let mut ids = Vec::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len() * dims);
        let mut positions = HashMap::with_capacity(entries.len());
        for (id, v) in entries {
            if v.dims() != dims {
                return Err(IndexError::DimsMismatch {
                    expected: dims,
                    got: v.dims(),
                    id,
                });
            }
            if positions.insert(id.clone(), ids.len()).is_some() {
                return Err(IndexError::DuplicateId(id));
            }
            let v = if options.normalize {
                v.to_unit().ok_or_else(|| IndexError::ZeroNorm(id.clone()))?
            } else {
                v
            };
            data.extend_from_slice(v.values());
            ids.push(id);
        }
        meta.normalized = options.normalize;
        Ok(Self {
            dims,
            ids,
            data,
            positions,
            meta,
            exec: Exec::default(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn metadata(&self) -> &IndexMetadata {
        &self.meta
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.positions
            .get(id)
            .map(|&i| &self.data[i * self.dims..(i + 1) * self.dims])
    }

    fn prepare_query<'a>(&self, query: &'a DenseVector) -> Result<std::borrow::Cow<'a, [f64]>, IndexError> {
        if query.dims() != self.dims {
            return Err(IndexError::QueryDims {
                expected: self.dims,
                got: query.dims(),
            });
        }
        if self.meta.normalized && !query.is_normalized() {
            let unit = query.to_unit().ok_or_else(|| IndexError::ZeroNorm("query".into()))?;
            return Ok(std::borrow::Cow::Owned(unit.into_values()));
        }
        Ok(std::borrow::Cow::Borrowed(query.values()))
    }

    /// Inner product of `query` against every entry, in insertion order.
    pub fn scores(&self, query: &DenseVector) -> Result<Vec<f64>, IndexError> {
        self.scores_with(query, self.exec)
    }

    fn scores_with(&self, query: &DenseVector, exec: Exec) -> Result<Vec<f64>, IndexError> {
        let q = self.prepare_query(query)?;
        let mut out = vec![0.0; self.len()];
        let exec = if self.len() >= 2 * SCAN_CHUNK { exec } else { Exec::Sequential };
        exec.fill_chunked(&mut out, SCAN_CHUNK, |i| {
            dot(&q, &self.data[i * self.dims..(i + 1) * self.dims])
        });
        Ok(out)
    }

    pub fn search(&self, query: &DenseVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.search_with(query, k, self.exec)
    }

    fn search_with(&self, query: &DenseVector, k: usize, exec: Exec) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let scores = self.scores_with(query, exec)?;
        Ok(top_k(&scores, k)
            .into_iter()
            .map(|i| SearchHit {
                record_id: self.ids[i].clone(),
                score: scores[i],
            })
            .collect())
    }

    /// Searches many queries, one work item per query; each scan is
    /// sequential.
    pub fn search_batch(&self, queries: &[DenseVector], k: usize) -> Result<Vec<Vec<SearchHit>>, IndexError> {
        self.exec
            .try_map(queries, |q| self.search_with(q, k, Exec::Sequential))
    }

    pub fn persist(&self, path: &Path) -> Result<(), IndexError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC_PREFIX)?;
        w.write_all(&[FORMAT_VERSION])?;
        w.write_all(&(self.dims as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (i, id) in self.ids.iter().enumerate() {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for v in &self.data[i * self.dims..(i + 1) * self.dims] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        let meta = serde_json::to_vec(&self.meta).map_err(io::Error::other)?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let file = File::open(path)?;
        let file_len = file.metadata()?.len();
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic[..7] != MAGIC_PREFIX {
            return Err(IndexError::Corrupt("bad magic".into()));
        }
        if magic[7] != FORMAT_VERSION {
            return Err(IndexError::Version {
                found: magic[7] as char,
                expected: FORMAT_VERSION as char,
            });
        }
        let dims = read_u64(&mut r, "dims")? as usize;
        let count = read_u64(&mut r, "count")? as usize;
        if dims == 0 || count == 0 {
            return Err(IndexError::Corrupt(format!("dims={dims} count={count}")));
        }
        let min_len = (count as u128) * (4 + dims as u128 * 8) + 24;
        if min_len > file_len as u128 {
            return Err(IndexError::Corrupt(format!(
                "file is {file_len} bytes, header promises at least {min_len}"
            )));
        }
        let mut entries = Vec::with_capacity(count);
        let mut buf = vec![0u8; dims * 8];
        for n in 0..count {
            let id_len = read_u32(&mut r, "id length")? as usize;
            if id_len as u64 > file_len {
                return Err(IndexError::Corrupt(format!("entry {n}: id length {id_len}")));
            }
            let mut id = vec![0u8; id_len];
            read_exact(&mut r, &mut id, "record id")?;
            let id = String::from_utf8(id).map_err(|_| IndexError::Corrupt(format!("entry {n}: id is not UTF-8")))?;
            read_exact(&mut r, &mut buf, "vector")?;
            let values = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            entries.push((id, DenseVector::new(values)));
        }
        let meta_len = read_u32(&mut r, "metadata length")? as usize;
        if meta_len as u64 > file_len {
            return Err(IndexError::Corrupt(format!("metadata length {meta_len}")));
        }
        let mut meta = vec![0u8; meta_len];
        read_exact(&mut r, &mut meta, "metadata")?;
        let meta: IndexMetadata =
            serde_json::from_slice(&meta).map_err(|e| IndexError::Corrupt(format!("metadata: {e}")))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(IndexError::Corrupt("trailing bytes after metadata".into()));
        }
        // Stored vectors are already in final form; skip renormalization so
        // reloaded scores are bit-identical.
        let normalized = meta.normalized;
        let mut index = Self::build(entries, IndexOptions { normalize: false }, meta)?;
        index.meta.normalized = normalized;
        Ok(index)
    }
}

pub fn load_index(path: &Path) -> Result<VectorIndex, IndexError> {
    VectorIndex::load(path)
}

/// Indices of the `k` best scores: descending score, ascending position on
/// ties.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| -> Ordering { scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)) };
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), IndexError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => IndexError::Corrupt(format!("truncated while reading {what}")),
        _ => IndexError::Io(e),
    })
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64, IndexError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, IndexError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}
