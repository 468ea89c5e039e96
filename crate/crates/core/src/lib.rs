//! Simulation core for cooperative placement in networks of capacity-limited
//! edge caches.
//!
//! The crate is `no_std` (it needs `alloc`) and contains no IO: everything
//! here is a deterministic function of its inputs and seeds. File formats,
//! configuration and the command-line driver live in the `comcache` crate.
//!
//! Module map:
//!
//! - [`topology`]: cache nodes, local links and grid construction.
//! - [`workload`]: IRM/Zipf and shot-noise request generators, recorded traces.
//! - [`engine`]: per-step serving (local, neighbor, server), rewards, placement.
//! - [`policies`]: the placement interface plus LRU, windowed LFU and
//!   independent Q-learning.
//! - [`marl`]: the neighbor-scoped joint-action learner (CoM-Cache).
//! - [`metrics`]: hit ratio, individual hit ratio, normalized delay, server load.
//! - [`bounds`]: the influence-optimistic upper bound on block partitions.

#![no_std]
#![deny(unsafe_code)]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod codec;
pub mod engine;
pub mod error;
pub mod marl;
pub mod metrics;
pub mod policies;
pub mod rng;
pub mod topology;
pub mod workload;

pub use error::{Error, Result};

/// Identifier of a content item in the library.
pub type ContentId = u32;

/// Deterministic hash map used throughout the core (no per-process seeds, so
/// iteration order is reproducible).
pub type FxHashMap<K, V> =
    hashbrown::HashMap<K, V, core::hash::BuildHasherDefault<rustc_hash::FxHasher>>;
