//! JSON-lines helpers shared by the corpus, results and pairs files.
//!
//! Output files written by the command-line front end may begin with a
//! provenance header line of the form `{"_meta": {...}}`. Readers skip it.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub const META_KEY: &str = "_meta";

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

/// Returns true for a provenance header line.
pub fn is_meta_line(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with("{\"_meta\"")
}

/// Reads every record of a JSONL file. Blank lines and `_meta` header lines
/// are skipped; line numbers in errors are 1-based.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, JsonlError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| JsonlError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| JsonlError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() || is_meta_line(&line) {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| JsonlError::Parse {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// Streaming JSONL writer.
pub struct JsonlWriter<W: Write> {
    inner: BufWriter<W>,
}

impl JsonlWriter<File> {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self::new(File::create(path)?))
    }
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(w: W) -> Self {
        Self {
            inner: BufWriter::new(w),
        }
    }

    pub fn write_meta<M: Serialize>(&mut self, meta: &M) -> io::Result<()> {
        let mut map = serde_json::Map::new();
        map.insert(META_KEY.to_string(), serde_json::to_value(meta)?);
        self.write(&serde_json::Value::Object(map))
    }

    pub fn write<T: Serialize>(&mut self, rec: &T) -> io::Result<()> {
        serde_json::to_writer(&mut self.inner, rec)?;
        self.inner.write_all(b"\n")
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.inner.flush()
    }
}
