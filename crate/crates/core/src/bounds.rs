//! Influence-optimistic upper bound on the hit ratio.
//!
//! The network is cut into small blocks (2×2 on grids). Every link between
//! blocks is removed and each of its endpoints receives the other endpoint's
//! capacity, which over-compensates for the lost cooperation. Each block is
//! then solved on its own by an omniscient placer: for every window of the
//! recorded trace it picks the contents that maximize the window's block-local
//! hits, with neighbor serving inside the block free of bandwidth limits.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::topology::Topology;
use crate::workload::{RequestSource, Trace};
use crate::{ContentId, FxHashMap};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
    /// Indices (into `Topology::links`) of links that cross blocks.
    removed: Vec<usize>,
    inflated: Vec<usize>,
    /// For each block, the closed intra-block serving neighborhood of every
    /// member, as positions within the block.
    reach: Vec<Vec<Vec<usize>>>,
    /// Some block is smaller than the target size.
    ragged: bool,
}

impl Partition {
    /// Any covering of the nodes by disjoint blocks.
    pub fn from_blocks(topo: &Topology, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let k = topo.node_count();
        let mut block_of = vec![usize::MAX; k];
        for (b, members) in blocks.iter().enumerate() {
            if members.is_empty() {
                return Err(invalid(format!("block {b} is empty")));
            }
            for &n in members {
                if n >= k {
                    return Err(Error::NodeOutOfRange { node: n, count: k });
                }
                if block_of[n] != usize::MAX {
                    return Err(invalid(format!("node {n} is in two blocks")));
                }
                block_of[n] = b;
            }
        }
        if let Some(n) = block_of.iter().position(|&b| b == usize::MAX) {
            return Err(invalid(format!("node {n} is in no block")));
        }
        let mut removed = Vec::new();
        let mut inflated = topo.capacities().to_vec();
        for (idx, link) in topo.links().iter().enumerate() {
            if block_of[link.a] != block_of[link.b] {
                removed.push(idx);
                inflated[link.a] += topo.capacity(link.b);
                inflated[link.b] += topo.capacity(link.a);
            }
        }
        let reach = blocks
            .iter()
            .map(|members| {
                members
                    .iter()
                    .map(|&i| {
                        members
                            .iter()
                            .enumerate()
                            .filter(|&(_, &j)| {
                                j == i
                                    || topo
                                        .link_between(i, j)
                                        .is_some_and(|l| topo.link(l).bandwidth > 0)
                            })
                            .map(|(pos, _)| pos)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let target = blocks.iter().map(Vec::len).max().unwrap_or(0);
        let ragged = blocks.iter().any(|b| b.len() < target);
        Ok(Self {
            blocks,
            block_of,
            removed,
            inflated,
            reach,
            ragged,
        })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block_of(&self, node: usize) -> usize {
        self.block_of[node]
    }

    pub fn removed_links(&self) -> &[usize] {
        &self.removed
    }

    /// `M'_i = M_i + Σ_{removed (i,j)} M_j`.
    pub fn inflated_capacities(&self) -> &[usize] {
        &self.inflated
    }

    /// True when the tiling needed blocks smaller than the rest.
    pub fn is_ragged(&self) -> bool {
        self.ragged
    }

    pub fn node_count(&self) -> usize {
        self.block_of.len()
    }
}

/// Row-major 2×2 tiling of a grid; odd dimensions leave smaller edge blocks
/// (see [`Partition::is_ragged`]).
pub fn partition_grid(topo: &Topology) -> Result<Partition> {
    let shape = topo
        .grid_shape()
        .ok_or_else(|| invalid("grid partition needs a grid topology; pass explicit blocks instead"))?;
    let mut blocks = Vec::new();
    for br in (0..shape.rows).step_by(2) {
        for bc in (0..shape.cols).step_by(2) {
            let mut b = Vec::new();
            for r in br..(br + 2).min(shape.rows) {
                for c in bc..(bc + 2).min(shape.cols) {
                    b.push(r * shape.cols + c);
                }
            }
            blocks.push(b);
        }
    }
    Partition::from_blocks(topo, blocks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConfig {
    /// Length of each omniscient placement window.
    pub window: u64,
    /// First step evaluated (the burn-in of the schemes being compared).
    pub start: u64,
    /// Windows with at most this many distinct contents are solved exactly
    /// when the search fits `exact_budget`.
    pub exact_footprint: usize,
    pub exact_budget: u64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            window: 1000,
            start: 0,
            exact_footprint: 20,
            exact_budget: 4_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockWindow {
    pub block: usize,
    pub window: u64,
    pub requests: u64,
    pub hits: u64,
    pub exact: bool,
}

impl BlockWindow {
    pub fn hit_ratio(&self) -> Option<f64> {
        (self.requests > 0).then(|| self.hits as f64 / self.requests as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub details: Vec<BlockWindow>,
    pub requests: u64,
    pub hits: u64,
}

impl BoundReport {
    /// Request-weighted over all blocks and windows.
    pub fn hit_ratio(&self) -> Option<f64> {
        (self.requests > 0).then(|| self.hits as f64 / self.requests as f64)
    }
}

/// Requests of one block in one window: per distinct content, counts per
/// member position.
#[derive(Debug, Clone, Default)]
struct Demand {
    index: FxHashMap<ContentId, usize>,
    contents: Vec<ContentId>,
    counts: Vec<Vec<u64>>,
}

impl Demand {
    fn add(&mut self, content: ContentId, pos: usize, members: usize) {
        let idx = *self.index.entry(content).or_insert_with(|| {
            self.contents.push(content);
            self.counts.push(vec![0; members]);
            self.contents.len() - 1
        });
        self.counts[idx][pos] += 1;
    }

    fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Hits of a placement: `holders[c]` is the set of member positions (bitmask)
/// holding content `c`.
fn hits_of(demand: &Demand, reach: &[Vec<usize>], holders: &[u32]) -> u64 {
    demand
        .counts
        .iter()
        .zip(holders)
        .map(|(counts, &mask)| {
            counts
                .iter()
                .enumerate()
                .filter(|&(i, _)| reach[i].iter().any(|&j| mask & (1 << j) != 0))
                .map(|(_, &n)| n)
                .sum::<u64>()
        })
        .sum()
}

/// Greedy marginal-gain placement; ties go to the lowest (member, content).
fn greedy(demand: &Demand, reach: &[Vec<usize>], caps: &[usize]) -> u64 {
    let b = caps.len();
    let f = demand.contents.len();
    // order content indices by id so ties do not depend on arrival order
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_unstable_by_key(|&c| demand.contents[c]);
    let mut left = caps.to_vec();
    let mut holders = vec![0u32; f];
    let mut covered = vec![vec![false; b]; f];
    loop {
        let mut best: Option<(u64, usize, usize)> = None;
        for (j, &room) in left.iter().enumerate() {
            if room == 0 {
                continue;
            }
            for &c in &order {
                if holders[c] & (1 << j) != 0 {
                    continue;
                }
                // members that would newly reach c through j
                let gain: u64 = (0..b)
                    .filter(|&i| !covered[c][i] && reach[i].contains(&j))
                    .map(|i| demand.counts[c][i])
                    .sum();
                if gain > 0 && best.map_or(true, |(g, _, _)| gain > g) {
                    best = Some((gain, j, c));
                }
            }
        }
        let Some((_, j, c)) = best else { break };
        holders[c] |= 1 << j;
        left[j] -= 1;
        for i in 0..b {
            if reach[i].contains(&j) {
                covered[c][i] = true;
            }
        }
    }
    hits_of(demand, reach, &holders)
}

/// Exact optimum by dynamic programming over contents and remaining
/// capacities; `None` if the search exceeds `budget` steps.
fn exact(demand: &Demand, reach: &[Vec<usize>], caps: &[usize], budget: u64) -> Option<u64> {
    let b = caps.len();
    let f = demand.contents.len();
    let caps: Vec<usize> = caps.iter().map(|&m| m.min(f)).collect();
    let states: u64 = caps.iter().map(|&m| m as u64 + 1).product();
    let subsets = 1u64 << b;
    if states.saturating_mul(subsets).saturating_mul(f as u64) > budget {
        return None;
    }
    let mut radix = vec![1usize; b];
    for i in 1..b {
        radix[i] = radix[i - 1] * (caps[i - 1] + 1);
    }
    let value = |c: usize, mask: u32| -> u64 {
        (0..b)
            .filter(|&i| reach[i].iter().any(|&j| mask & (1 << j) != 0))
            .map(|i| demand.counts[c][i])
            .sum()
    };
    // dp[s] = best hits with remaining capacities encoded by s
    let full: usize = (0..b).map(|i| caps[i] * radix[i]).sum();
    let mut dp = vec![None::<u64>; states as usize];
    dp[full] = Some(0);
    for c in 0..f {
        let vals: Vec<u64> = (0..subsets as u32).map(|m| value(c, m)).collect();
        let mut next = vec![None::<u64>; states as usize];
        for (s, slot) in dp.iter().enumerate() {
            let Some(base) = *slot else { continue };
            let rem: Vec<usize> = (0..b).map(|i| (s / radix[i]) % (caps[i] + 1)).collect();
            for mask in 0..subsets as u32 {
                if (0..b).any(|i| mask & (1 << i) != 0 && rem[i] == 0) {
                    continue;
                }
                let t = s - (0..b).filter(|&i| mask & (1 << i) != 0).map(|i| radix[i]).sum::<usize>();
                let v = base + vals[mask as usize];
                if next[t].map_or(true, |cur| v > cur) {
                    next[t] = Some(v);
                }
            }
        }
        dp = next;
    }
    dp.into_iter().flatten().max()
}

/// Evaluates the bound over the trace steps `[cfg.start, horizon)`.
pub fn oub_hit_ratio(partition: &Partition, trace: &Trace, cfg: &BoundConfig) -> Result<BoundReport> {
    if trace.cache_count() != partition.node_count() {
        return Err(Error::TraceMismatch(format!(
            "trace has {} caches, partition covers {}",
            trace.cache_count(),
            partition.node_count()
        )));
    }
    if cfg.window == 0 {
        return Err(invalid("bound window must be at least one step"));
    }
    let position: Vec<usize> = (0..partition.node_count())
        .map(|n| {
            partition.blocks[partition.block_of[n]]
                .iter()
                .position(|&m| m == n)
                .expect("node is a member of its block")
        })
        .collect();
    let mut report = BoundReport {
        details: Vec::new(),
        requests: 0,
        hits: 0,
    };
    let mut t = cfg.start;
    let mut window = 0;
    while t < trace.horizon() {
        let end = (t + cfg.window).min(trace.horizon());
        let mut demand: Vec<Demand> = vec![Demand::default(); partition.blocks.len()];
        for step in t..end {
            let batch = trace.batch(step);
            for (cache, reqs) in batch.requests.iter().enumerate() {
                let b = partition.block_of[cache];
                for &c in reqs {
                    demand[b].add(c, position[cache], partition.blocks[b].len());
                }
            }
        }
        for (b, d) in demand.iter().enumerate() {
            let caps: Vec<usize> = partition.blocks[b].iter().map(|&n| partition.inflated[n]).collect();
            let reach = &partition.reach[b];
            let solved = if d.contents.len() <= cfg.exact_footprint {
                exact(d, reach, &caps, cfg.exact_budget)
            } else {
                None
            };
            let (hits, is_exact) = match solved {
                Some(h) => (h, true),
                None => (greedy(d, reach, &caps), false),
            };
            let requests = d.total();
            report.requests += requests;
            report.hits += hits;
            report.details.push(BlockWindow {
                block: b,
                window,
                requests,
                hits,
                exact: is_exact,
            });
        }
        t = end;
        window += 1;
    }
    Ok(report)
}
