//! The per-step simulation core.
//!
//! A step runs in a fixed order: take the batch, serve it (local copy, then
//! the cheapest neighbor with link budget left, then the server), score every
//! agent, let every policy observe the same snapshot and choose its next
//! placement, validate and apply the placements, and emit a [`StepRecord`].

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::policies::{AgentView, NeighborView, PlacementPolicy};
use crate::topology::{Topology, SERVER_COST};
use crate::workload::{RequestBatch, RequestSource};
use crate::ContentId;

/// Which cost the delay term of the reward charges for neighbor-served
/// requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkPricing {
    /// Neighbor transfers are free inside the reward ("variant I").
    Free,
    /// Neighbor transfers cost the link's delay ("variant II").
    #[default]
    Costed,
}

/// `r = w_hit·H − w_delay·D + w_coop·C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub w_hit: f64,
    pub w_delay: f64,
    pub w_coop: f64,
    pub pricing: LinkPricing,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_hit: 1.0,
            w_delay: 0.5,
            w_coop: 0.5,
            pricing: LinkPricing::Costed,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_hit, self.w_delay, self.w_coop];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(invalid("reward weights must be finite and non-negative"));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(invalid("reward weights must not all be zero"));
        }
        Ok(())
    }

    /// The same weights without the cooperation term.
    pub fn selfish(self) -> Self {
        Self { w_coop: 0.0, ..self }
    }

    pub fn min_reward(&self) -> f64 {
        -self.w_delay
    }

    pub fn max_reward(&self) -> f64 {
        self.w_hit + self.w_coop
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Local,
    Neighbor(usize),
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Served {
    pub cache: usize,
    pub content: ContentId,
    pub source: Source,
    pub delay: f64,
}

/// Per-cache counts for one step (or, summed, for a run).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CacheTally {
    pub requests: u64,
    pub own_hits: u64,
    pub neighbor_hits: u64,
    pub server_misses: u64,
    pub delay_sum: f64,
    /// Part of `delay_sum` paid on neighbor links.
    pub neighbor_delay_sum: f64,
    /// Neighbors' requests this cache served.
    pub served_for_neighbors: u64,
    /// Neighbors' local misses that could have been served over a usable
    /// link to this cache.
    pub neighbor_requests_reached: u64,
}

impl CacheTally {
    pub fn merge(&mut self, other: &CacheTally) {
        self.requests += other.requests;
        self.own_hits += other.own_hits;
        self.neighbor_hits += other.neighbor_hits;
        self.server_misses += other.server_misses;
        self.delay_sum += other.delay_sum;
        self.neighbor_delay_sum += other.neighbor_delay_sum;
        self.served_for_neighbors += other.served_for_neighbors;
        self.neighbor_requests_reached += other.neighbor_requests_reached;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ServeOutcome {
    /// One entry per request, in processing order.
    pub served: Vec<Served>,
    /// Units moved over each link (indexed like `Topology::links`).
    pub link_usage: Vec<u32>,
    pub per_cache: Vec<CacheTally>,
}

/// A cache and its current contents `φ` (kept sorted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheNode {
    pub id: usize,
    pub capacity: usize,
    contents: Vec<ContentId>,
}

impl CacheNode {
    pub fn new(id: usize, capacity: usize) -> Self {
        Self {
            id,
            capacity,
            contents: Vec::new(),
        }
    }

    pub fn with_contents(id: usize, capacity: usize, mut contents: Vec<ContentId>) -> Result<Self> {
        contents.sort_unstable();
        contents.dedup();
        if contents.len() > capacity {
            return Err(invalid(format!(
                "cache {id}: {} contents exceed capacity {capacity}",
                contents.len()
            )));
        }
        Ok(Self {
            id,
            capacity,
            contents,
        })
    }

    pub fn contents(&self) -> &[ContentId] {
        &self.contents
    }

    pub fn contains(&self, content: ContentId) -> bool {
        self.contents.binary_search(&content).is_ok()
    }
}

pub fn empty_caches(topo: &Topology) -> Vec<CacheNode> {
    topo.capacities()
        .iter()
        .enumerate()
        .map(|(i, &m)| CacheNode::new(i, m))
        .collect()
}

/// Serves a batch without touching any cache contents.
///
/// Requests are processed by ascending cache id, then batch position. A local
/// miss at `i` counts as having reached every neighbor `j` over a link with
/// positive bandwidth; it is served by the first such neighbor (cheapest link,
/// then lowest id) that holds the content and still has link budget.
pub fn serve(
    batch: &RequestBatch,
    caches: &[CacheNode],
    topo: &Topology,
    local_hit_delay: f64,
) -> Result<ServeOutcome> {
    let k = topo.node_count();
    if batch.requests.len() != k || caches.len() != k {
        return Err(Error::TraceMismatch(format!(
            "batch covers {} caches, state covers {}, network has {k}",
            batch.requests.len(),
            caches.len()
        )));
    }
    let mut out = ServeOutcome {
        served: Vec::with_capacity(batch.total()),
        link_usage: vec![0; topo.links().len()],
        per_cache: vec![CacheTally::default(); k],
    };
    for (i, reqs) in batch.requests.iter().enumerate() {
        for &content in reqs {
            let (source, delay) = if caches[i].contains(content) {
                (Source::Local, local_hit_delay)
            } else {
                let mut found = None;
                for &l in topo.serving_order(i) {
                    let link = topo.link(l);
                    let j = link.other(i);
                    out.per_cache[j].neighbor_requests_reached += 1;
                    if found.is_none() && out.link_usage[l] < link.bandwidth && caches[j].contains(content) {
                        found = Some((l, j));
                    }
                }
                match found {
                    Some((l, j)) => {
                        out.link_usage[l] += 1;
                        out.per_cache[j].served_for_neighbors += 1;
                        (Source::Neighbor(j), topo.link(l).cost)
                    }
                    None => (Source::Server, SERVER_COST),
                }
            };
            let tally = &mut out.per_cache[i];
            tally.requests += 1;
            tally.delay_sum += delay;
            match source {
                Source::Local => tally.own_hits += 1,
                Source::Neighbor(_) => {
                    tally.neighbor_hits += 1;
                    tally.neighbor_delay_sum += delay;
                }
                Source::Server => tally.server_misses += 1,
            }
            out.served.push(Served {
                cache: i,
                content,
                source,
                delay,
            });
        }
    }
    Ok(out)
}

/// Reward of cache `i` for one step's outcome.
///
/// `H` is the share of own requests served without the server, `D` the mean
/// delay of own requests (neighbor delay excluded under [`LinkPricing::Free`]),
/// `C` the share of reaching neighbor requests this cache served.
pub fn reward(outcome: &ServeOutcome, i: usize, weights: &RewardWeights) -> f64 {
    reward_from_tally(&outcome.per_cache[i], weights)
}

pub fn reward_from_tally(t: &CacheTally, weights: &RewardWeights) -> f64 {
    let own = t.requests.max(1) as f64;
    let hits = (t.own_hits + t.neighbor_hits) as f64 / own;
    let delay_sum = match weights.pricing {
        LinkPricing::Costed => t.delay_sum,
        LinkPricing::Free => t.delay_sum - t.neighbor_delay_sum,
    };
    let delay = if t.requests == 0 { 0.0 } else { delay_sum / t.requests as f64 };
    let coop = t.served_for_neighbors as f64 / t.neighbor_requests_reached.max(1) as f64;
    weights.w_hit * hits - weights.w_delay * delay + weights.w_coop * coop
}

/// Checks that `action ⊆ φ ∪ q`, has no duplicates and fits the capacity.
pub fn check_action(
    agent: usize,
    cache: &CacheNode,
    requests: &[ContentId],
    action: &[ContentId],
) -> Result<()> {
    let fault = |reason: alloc::string::String| Error::PolicyFault { agent, reason };
    if action.len() > cache.capacity {
        return Err(fault(format!(
            "action of {} contents exceeds capacity {}",
            action.len(),
            cache.capacity
        )));
    }
    let mut sorted = action.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(fault(format!("action {action:?} repeats a content")));
    }
    if let Some(c) = action
        .iter()
        .find(|c| !cache.contains(**c) && !requests.contains(c))
    {
        return Err(fault(format!("content {c} is neither cached nor requested")));
    }
    Ok(())
}

/// Validates and applies every agent's action: `φ_i ← a_i`.
pub fn apply_actions(
    caches: &mut [CacheNode],
    requests: &[Vec<ContentId>],
    actions: Vec<Vec<ContentId>>,
) -> Result<()> {
    for (i, action) in actions.iter().enumerate() {
        check_action(i, &caches[i], &requests[i], action)?;
    }
    for (cache, mut action) in caches.iter_mut().zip(actions) {
        action.sort_unstable();
        cache.contents = action;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Delay charged for a local hit, `d_local_hit`.
    pub local_hit_delay: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { local_hit_delay: 0.0 }
    }
}

/// Everything that happened at one step: `φ^t`, `q^t`, `a^t`, the outcome
/// and every agent's reward.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub contents: Vec<Vec<ContentId>>,
    pub requests: Vec<Vec<ContentId>>,
    pub actions: Vec<Vec<ContentId>>,
    pub outcome: ServeOutcome,
    pub rewards: Vec<f64>,
}

/// One sequential run: a topology, its caches and one policy per cache.
#[derive(Debug)]
pub struct Simulation {
    topo: Topology,
    caches: Vec<CacheNode>,
    policies: Vec<Box<dyn PlacementPolicy>>,
    /// Neighbors each agent observes: those over links with bandwidth.
    scopes: Vec<Vec<usize>>,
    config: EngineConfig,
    next_step: u64,
}

impl Simulation {
    pub fn new(topo: Topology, policies: Vec<Box<dyn PlacementPolicy>>, config: EngineConfig) -> Result<Self> {
        if policies.len() != topo.node_count() {
            return Err(invalid(format!(
                "{} policies for {} caches",
                policies.len(),
                topo.node_count()
            )));
        }
        if !(0.0..=1.0).contains(&config.local_hit_delay) {
            return Err(invalid("local hit delay must lie in [0, 1]"));
        }
        for p in &policies {
            p.reward_weights().validate()?;
        }
        let scopes = (0..topo.node_count())
            .map(|i| topo.serving_neighbors(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            caches: empty_caches(&topo),
            topo,
            policies,
            scopes,
            config,
            next_step: 0,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn caches(&self) -> &[CacheNode] {
        &self.caches
    }

    pub fn policies(&self) -> &[Box<dyn PlacementPolicy>] {
        &self.policies
    }

    pub fn policies_mut(&mut self) -> &mut [Box<dyn PlacementPolicy>] {
        &mut self.policies
    }

    pub fn next_step(&self) -> u64 {
        self.next_step
    }

    /// Replaces cache contents and the step counter (checkpoint restore).
    pub fn restore(&mut self, caches: Vec<CacheNode>, next_step: u64) -> Result<()> {
        if caches.len() != self.caches.len() {
            return Err(invalid("checkpoint cache count does not match the topology"));
        }
        for (c, expected) in caches.iter().zip(&self.caches) {
            if c.capacity != expected.capacity || c.contents.len() > c.capacity {
                return Err(invalid(format!("checkpoint cache {} is inconsistent", c.id)));
            }
        }
        self.caches = caches;
        self.next_step = next_step;
        Ok(())
    }

    pub fn step(&mut self, batch: &RequestBatch) -> Result<StepRecord> {
        let outcome = serve(batch, &self.caches, &self.topo, self.config.local_hit_delay)?;
        let rewards: Vec<f64> = self
            .policies
            .iter()
            .enumerate()
            .map(|(i, p)| reward(&outcome, i, &p.reward_weights()))
            .collect();

        // Every agent reads the same pre-action snapshot.
        let mut actions = Vec::with_capacity(self.caches.len());
        for (i, policy) in self.policies.iter_mut().enumerate() {
            let neighbors: Vec<NeighborView<'_>> = self.scopes[i]
                .iter()
                .map(|&j| NeighborView {
                    id: j,
                    capacity: self.caches[j].capacity,
                    contents: &self.caches[j].contents,
                    requests: &batch.requests[j],
                })
                .collect();
            let view = AgentView {
                agent: i,
                step: batch.step,
                capacity: self.caches[i].capacity,
                contents: &self.caches[i].contents,
                requests: &batch.requests[i],
                reward: rewards[i],
                neighbors: &neighbors,
            };
            policy.observe(&view)?;
            actions.push(policy.decide(&view)?);
        }

        let contents: Vec<Vec<ContentId>> = self.caches.iter().map(|c| c.contents.clone()).collect();
        apply_actions(&mut self.caches, &batch.requests, actions)?;
        let actions = self.caches.iter().map(|c| c.contents.clone()).collect();
        self.next_step = batch.step + 1;
        Ok(StepRecord {
            step: batch.step,
            contents,
            requests: batch.requests.clone(),
            actions,
            outcome,
            rewards,
        })
    }

    /// Runs steps `next_step..horizon`, handing every record to `sink`.
    pub fn run<S, F>(&mut self, source: &S, horizon: u64, mut sink: F) -> Result<()>
    where
        S: RequestSource + ?Sized,
        F: FnMut(&StepRecord),
    {
        if source.cache_count() != self.caches.len() {
            return Err(Error::TraceMismatch(format!(
                "request source has {} caches, network has {}",
                source.cache_count(),
                self.caches.len()
            )));
        }
        for t in self.next_step..horizon {
            let record = self.step(&source.batch(t))?;
            sink(&record);
        }
        Ok(())
    }
}
