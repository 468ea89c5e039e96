//! Binary checkpoints of one (config, seed, policy) run.
//!
//! Layout, little-endian: the magic `CMCK`, a `u32` format version, the
//! identity of the run (config hash, seed, policy label, trace hash), the
//! next step, every cache's contents, each agent's policy state in agent
//! order and finally the metrics accumulated so far.

use std::path::Path;

use comcache_core::codec::{Reader, Writer};
use comcache_core::engine::{CacheNode, Simulation};
use comcache_core::metrics::RunMetrics;

use crate::error::{Error, Result};
use crate::results::write_atomic;

pub const MAGIC: [u8; 4] = *b"CMCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunIdentity {
    pub config_hash: String,
    pub seed: u64,
    pub policy: String,
    pub trace_hash: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub identity: RunIdentity,
    pub next_step: u64,
    caches: Vec<CacheNode>,
    /// Policy states followed by the metrics, decoded on restore.
    state: Vec<u8>,
}

pub fn encode(identity: &RunIdentity, sim: &Simulation, metrics: &RunMetrics) -> Vec<u8> {
    let mut w = Writer::new();
    for b in MAGIC {
        w.u8(b);
    }
    w.u32(FORMAT_VERSION);
    w.bytes(identity.config_hash.as_bytes());
    w.u64(identity.seed);
    w.bytes(identity.policy.as_bytes());
    w.bytes(identity.trace_hash.as_bytes());
    w.u64(sim.next_step());
    w.len(sim.caches().len());
    for c in sim.caches() {
        w.len(c.capacity);
        w.ids(c.contents());
    }
    let mut state = Writer::new();
    for p in sim.policies() {
        p.save(&mut state);
    }
    metrics.save(&mut state);
    w.bytes(&state.into_bytes());
    w.into_bytes()
}

pub fn save(path: &Path, identity: &RunIdentity, sim: &Simulation, metrics: &RunMetrics) -> Result<()> {
    write_atomic(path, &encode(identity, sim, metrics))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode(&bytes).map_err(|msg| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    })
}

fn text(r: &mut Reader<'_>) -> Result<String, String> {
    let b = r.bytes().map_err(|e| e.to_string())?;
    String::from_utf8(b.to_vec()).map_err(|_| "identity field is not UTF-8".to_string())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, String> {
    if bytes.len() < 8 || bytes[..4] != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let mut r = Reader::new(&bytes[4..]);
    let e = |e: comcache_core::Error| e.to_string();
    let version = r.u32().map_err(e)?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version} (this build reads {FORMAT_VERSION})"));
    }
    let identity = RunIdentity {
        config_hash: text(&mut r)?,
        seed: r.u64().map_err(e)?,
        policy: text(&mut r)?,
        trace_hash: text(&mut r)?,
    };
    let next_step = r.u64().map_err(e)?;
    let n = r.len().map_err(e)?;
    let mut caches = Vec::with_capacity(n);
    for id in 0..n {
        let capacity = r.u64().map_err(e)? as usize;
        let contents = r.ids().map_err(e)?;
        caches.push(CacheNode::with_contents(id, capacity, contents).map_err(e)?);
    }
    let state = r.bytes().map_err(e)?.to_vec();
    if !r.is_empty() {
        return Err("trailing bytes after the checkpoint body".into());
    }
    Ok(Checkpoint {
        identity,
        next_step,
        caches,
        state,
    })
}

impl Checkpoint {
    /// Loads caches and policy states into `sim` (built fresh from the same
    /// config and seed) and returns the metrics to continue with.
    pub fn restore(&self, sim: &mut Simulation) -> Result<RunMetrics> {
        sim.restore(self.caches.clone(), self.next_step)?;
        let mut r = Reader::new(&self.state);
        for p in sim.policies_mut() {
            p.load(&mut r)?;
        }
        let metrics = RunMetrics::load(&mut r)?;
        if !r.is_empty() {
            return Err(comcache_core::Error::Malformed("trailing policy state".into()).into());
        }
        Ok(metrics)
    }
}
