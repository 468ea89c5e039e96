//! Request traces as CSV: `step,cache_id,content_id`, one request per row.
//!
//! The header row is optional, `#` starts a comment line, and rows may come
//! in any step order (rows of the same step keep their file order).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use comcache_core::workload::{RequestSource, Trace};
use comcache_core::ContentId;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const HEADER: [&str; 3] = ["step", "cache_id", "content_id"];

/// Shape a trace must fit: `cache_id < caches`, `content_id < library_size`,
/// `step < horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceBounds {
    pub caches: usize,
    pub library_size: usize,
    pub horizon: u64,
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut out = BufWriter::new(file);
    write_trace_to(&mut out, trace).map_err(Error::io(path))?;
    out.flush().map_err(Error::io(path))
}

pub fn write_trace_to<W: Write>(out: &mut W, trace: &Trace) -> std::io::Result<()> {
    writeln!(out, "{}", HEADER.join(","))?;
    for (t, cache, content) in trace.rows() {
        writeln!(out, "{t},{cache},{content}")?;
    }
    Ok(())
}

pub fn read_trace(path: &Path, bounds: TraceBounds) -> Result<Trace> {
    let file = File::open(path).map_err(Error::io(path))?;
    parse_trace(BufReader::new(file), path, bounds)
}

/// Parses trace CSV from `input`; `path` only labels error messages.
pub fn parse_trace<R: Read>(input: R, path: &Path, bounds: TraceBounds) -> Result<Trace> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let fail = |line: u64, msg: String| Error::Trace {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rows = Vec::new();
    let mut first = true;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            fail(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if first {
            first = false;
            if record.iter().eq(HEADER.iter().copied()) {
                continue;
            }
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(fail(line, format!("expected 3 fields (step,cache_id,content_id), found {}", record.len())));
        }
        let field = |i: usize| -> Result<u64> {
            record[i]
                .parse::<u64>()
                .map_err(|_| fail(line, format!("{} `{}` is not a non-negative integer", HEADER[i], &record[i])))
        };
        let (step, cache, content) = (field(0)?, field(1)?, field(2)?);
        if step >= bounds.horizon {
            return Err(fail(line, format!("step {step} is beyond the horizon {}", bounds.horizon)));
        }
        if cache >= bounds.caches as u64 {
            return Err(fail(line, format!("cache_id {cache} out of range (network has {} caches)", bounds.caches)));
        }
        if content >= bounds.library_size as u64 {
            return Err(fail(
                line,
                format!("content_id {content} out of range (library has {} contents)", bounds.library_size),
            ));
        }
        rows.push((step, cache as usize, content as ContentId));
    }
    Ok(Trace::from_rows(bounds.caches, bounds.horizon, rows)?)
}

/// Short content hash of a trace, identical for equal request sequences
/// however they were produced.
pub fn trace_hash(trace: &Trace) -> String {
    let mut h = Sha256::new();
    h.update((trace.cache_count() as u64).to_le_bytes());
    h.update(trace.horizon().to_le_bytes());
    for (t, cache, content) in trace.rows() {
        h.update(t.to_le_bytes());
        h.update((cache as u32).to_le_bytes());
        h.update(content.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}
