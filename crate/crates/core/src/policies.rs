//! Placement policies.
//!
//! Every policy sees, once per step, an [`AgentView`] of its own cache and of
//! the neighbors it can exchange content with, and answers with the contents
//! to hold for the next step. The answer must be a subset of `φ ∪ q` that
//! fits the capacity.

use alloc::boxed::Box;
use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use crate::codec::{Reader, Writer};
use crate::engine::RewardWeights;
use crate::error::{invalid, Error, Result};
use crate::marl::{ComCache, LearnerConfig, Scope, TabularLearner};
use crate::topology::Topology;
use crate::{ContentId, FxHashMap};

/// What a neighbor exposes to an agent: its current contents and requests.
#[derive(Debug, Clone, Copy)]
pub struct NeighborView<'a> {
    pub id: usize,
    pub capacity: usize,
    pub contents: &'a [ContentId],
    pub requests: &'a [ContentId],
}

/// One agent's observation at a step.
#[derive(Debug, Clone, Copy)]
pub struct AgentView<'a> {
    pub agent: usize,
    pub step: u64,
    pub capacity: usize,
    /// `φ_i^t`, sorted.
    pub contents: &'a [ContentId],
    /// `q_i^t` in processing order, duplicates included.
    pub requests: &'a [ContentId],
    /// Reward of this step's serving, i.e. of the previous action.
    pub reward: f64,
    /// Neighbors over usable links, ascending id.
    pub neighbors: &'a [NeighborView<'a>],
}

pub trait PlacementPolicy: core::fmt::Debug + Send {
    fn name(&self) -> &'static str;

    /// Weights the engine uses to score this agent.
    fn reward_weights(&self) -> RewardWeights {
        RewardWeights::default()
    }

    fn observe(&mut self, view: &AgentView<'_>) -> Result<()>;

    fn decide(&mut self, view: &AgentView<'_>) -> Result<Vec<ContentId>>;

    fn save(&self, w: &mut Writer);

    fn load(&mut self, r: &mut Reader<'_>) -> Result<()>;

    fn learner(&self) -> Option<&TabularLearner> {
        None
    }
}

/// Least recently used: requests are touched in order, misses inserted, and
/// the stalest entries evicted on overflow.
#[derive(Debug, Clone)]
pub struct Lru {
    capacity: usize,
    /// Cached ids, least recently used first.
    order: VecDeque<ContentId>,
}

impl Lru {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            order: VecDeque::new(),
        }
    }

    /// Seeds the recency order (oldest first).
    pub fn with_order(capacity: usize, order: &[ContentId]) -> Self {
        Self {
            capacity,
            order: order.iter().copied().collect(),
        }
    }

    /// Keeps the recency list aligned with the engine's view of `φ`.
    fn sync(&mut self, contents: &[ContentId]) {
        self.order.retain(|c| contents.binary_search(c).is_ok());
        for &c in contents {
            if !self.order.contains(&c) {
                self.order.push_front(c);
            }
        }
    }

    pub fn touch(&mut self, content: ContentId) {
        if let Some(pos) = self.order.iter().position(|&c| c == content) {
            self.order.remove(pos);
        }
        self.order.push_back(content);
        while self.order.len() > self.capacity {
            self.order.pop_front();
        }
    }

    pub fn order(&self) -> impl Iterator<Item = &ContentId> {
        self.order.iter()
    }
}

impl PlacementPolicy for Lru {
    fn name(&self) -> &'static str {
        "lru"
    }

    fn observe(&mut self, view: &AgentView<'_>) -> Result<()> {
        self.sync(view.contents);
        Ok(())
    }

    fn decide(&mut self, view: &AgentView<'_>) -> Result<Vec<ContentId>> {
        for &c in view.requests {
            self.touch(c);
        }
        Ok(self.order.iter().copied().collect())
    }

    fn save(&self, w: &mut Writer) {
        let order: Vec<ContentId> = self.order.iter().copied().collect();
        w.ids(&order);
    }

    fn load(&mut self, r: &mut Reader<'_>) -> Result<()> {
        self.order = r.ids()?.into_iter().collect();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LfuMode {
    /// Exact counts over the last `window` steps.
    Exact,
    /// Counts decayed by `1 − 1/window` per step; O(1) memory per content.
    Decay,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LfuConfig {
    pub window: u64,
    pub mode: LfuMode,
}

impl Default for LfuConfig {
    fn default() -> Self {
        Self {
            window: 1_000_000,
            mode: LfuMode::Exact,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Usage {
    count: f64,
    /// Step of the last decay update (decay mode).
    as_of: u64,
    /// Global access sequence number of the latest access.
    last_access: u64,
}

/// Windowed least frequently used: keeps the most requested contents of
/// `φ ∪ q` over the trailing window, ties to the most recent access, then the
/// lowest id.
#[derive(Debug, Clone)]
pub struct Lfu {
    capacity: usize,
    config: LfuConfig,
    usage: FxHashMap<ContentId, Usage>,
    /// Requests of the steps in the window, oldest first (exact mode).
    window: VecDeque<ContentId>,
    step_lengths: VecDeque<(u64, u32)>,
    accesses: u64,
}

impl Lfu {
    pub fn new(capacity: usize, config: LfuConfig) -> Result<Self> {
        if config.window == 0 {
            return Err(invalid("LFU window must be at least one step"));
        }
        Ok(Self {
            capacity,
            config,
            usage: FxHashMap::default(),
            window: VecDeque::new(),
            step_lengths: VecDeque::new(),
            accesses: 0,
        })
    }

    fn decay_factor(&self) -> f64 {
        1.0 - 1.0 / self.config.window as f64
    }

    /// Windowed count of `content` as of `step`.
    pub fn count(&self, content: ContentId, step: u64) -> f64 {
        self.usage.get(&content).map_or(0.0, |u| match self.config.mode {
            LfuMode::Exact => u.count,
            LfuMode::Decay => u.count * libm::pow(self.decay_factor(), (step - u.as_of) as f64),
        })
    }

    /// Adds one step's requests and drops what fell out of the window.
    pub fn record(&mut self, step: u64, requests: &[ContentId]) {
        let factor = self.decay_factor();
        for &c in requests {
            self.accesses += 1;
            let u = self.usage.entry(c).or_default();
            if self.config.mode == LfuMode::Decay {
                u.count *= libm::pow(factor, (step - u.as_of) as f64);
                u.as_of = step;
            }
            u.count += 1.0;
            u.last_access = self.accesses;
        }
        if self.config.mode == LfuMode::Exact {
            self.window.extend(requests.iter().copied());
            self.step_lengths.push_back((step, requests.len() as u32));
            while let Some(&(oldest, len)) = self.step_lengths.front() {
                if oldest + self.config.window > step {
                    break;
                }
                self.step_lengths.pop_front();
                for _ in 0..len {
                    let c = self.window.pop_front().expect("window holds every counted request");
                    if let Some(u) = self.usage.get_mut(&c) {
                        u.count -= 1.0;
                    }
                }
            }
        }
    }

    /// The `min(M, |candidates|)` best candidates.
    pub fn rank(&self, candidates: &[ContentId], step: u64) -> Vec<ContentId> {
        let mut scored: Vec<(f64, u64, ContentId)> = candidates
            .iter()
            .map(|&c| {
                let last = self.usage.get(&c).map_or(0, |u| u.last_access);
                (self.count(c, step), last, c)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.cmp(&a.1))
                .then(a.2.cmp(&b.2))
        });
        scored.truncate(self.capacity);
        scored.into_iter().map(|s| s.2).collect()
    }
}

impl PlacementPolicy for Lfu {
    fn name(&self) -> &'static str {
        "lfu"
    }

    fn observe(&mut self, view: &AgentView<'_>) -> Result<()> {
        self.record(view.step, view.requests);
        Ok(())
    }

    fn decide(&mut self, view: &AgentView<'_>) -> Result<Vec<ContentId>> {
        let mut candidates: Vec<ContentId> = view.contents.iter().chain(view.requests).copied().collect();
        candidates.sort_unstable();
        candidates.dedup();
        Ok(self.rank(&candidates, view.step))
    }

    fn save(&self, w: &mut Writer) {
        let mut keys: Vec<&ContentId> = self.usage.keys().collect();
        keys.sort_unstable();
        w.len(keys.len());
        for k in keys {
            let u = &self.usage[k];
            w.u32(*k);
            w.f64(u.count);
            w.u64(u.as_of);
            w.u64(u.last_access);
        }
        let window: Vec<ContentId> = self.window.iter().copied().collect();
        w.ids(&window);
        w.len(self.step_lengths.len());
        for &(s, n) in &self.step_lengths {
            w.u64(s);
            w.u32(n);
        }
        w.u64(self.accesses);
    }

    fn load(&mut self, r: &mut Reader<'_>) -> Result<()> {
        let mut usage = FxHashMap::default();
        for _ in 0..r.len()? {
            let k = r.u32()?;
            usage.insert(
                k,
                Usage {
                    count: r.f64()?,
                    as_of: r.u64()?,
                    last_access: r.u64()?,
                },
            );
        }
        let window = r.ids()?.into_iter().collect();
        let mut lengths = VecDeque::new();
        for _ in 0..r.len()? {
            lengths.push_back((r.u64()?, r.u32()?));
        }
        self.usage = usage;
        self.window = window;
        self.step_lengths = lengths;
        self.accesses = r.u64()?;
        Ok(())
    }
}

/// Independent Q-learning: the same tabular learner as CoM-Cache, keyed on
/// the agent's own state and action only, rewarded without the cooperation
/// term.
#[derive(Debug, Clone)]
pub struct Iql {
    learner: TabularLearner,
    weights: RewardWeights,
}

impl Iql {
    pub fn new(capacity: usize, config: LearnerConfig, weights: RewardWeights, seed: u64, stream: u64) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            learner: TabularLearner::new(Scope::Independent, capacity, config, seed, stream)?,
            weights,
        })
    }
}

impl PlacementPolicy for Iql {
    fn name(&self) -> &'static str {
        "iql"
    }

    fn reward_weights(&self) -> RewardWeights {
        self.weights
    }

    fn observe(&mut self, view: &AgentView<'_>) -> Result<()> {
        self.learner.observe(view)
    }

    fn decide(&mut self, view: &AgentView<'_>) -> Result<Vec<ContentId>> {
        self.learner.decide(view)
    }

    fn save(&self, w: &mut Writer) {
        self.learner.save(w);
    }

    fn load(&mut self, r: &mut Reader<'_>) -> Result<()> {
        self.learner.load(r)
    }

    fn learner(&self) -> Option<&TabularLearner> {
        Some(&self.learner)
    }
}

/// Hyperparameters shared by the two learning policies.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LearnerSpec {
    pub config: LearnerConfig,
    /// CoM-Cache uses these as given; IQL drops the cooperation term.
    pub weights: RewardWeights,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    Lru,
    Lfu(LfuConfig),
    Iql(LearnerSpec),
    ComCache(LearnerSpec),
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Lru => "lru",
            PolicyKind::Lfu(_) => "lfu",
            PolicyKind::Iql(_) => "iql",
            PolicyKind::ComCache(_) => "comcache",
        }
    }
}

/// One policy instance; `stream` picks the learner's random streams.
pub fn build_policy(kind: &PolicyKind, capacity: usize, seed: u64, stream: u64) -> Result<Box<dyn PlacementPolicy>> {
    Ok(match *kind {
        PolicyKind::Lru => Box::new(Lru::new(capacity)),
        PolicyKind::Lfu(cfg) => Box::new(Lfu::new(capacity, cfg)?),
        PolicyKind::Iql(spec) => Box::new(Iql::new(capacity, spec.config, spec.weights.selfish(), seed, stream)?),
        PolicyKind::ComCache(spec) => Box::new(ComCache::new(capacity, spec.config, spec.weights, seed, stream)?),
    })
}

/// One policy per cache, agent `i` on stream `i`.
pub fn build_policies(topo: &Topology, kind: &PolicyKind, seed: u64) -> Result<Vec<Box<dyn PlacementPolicy>>> {
    (0..topo.node_count())
        .map(|i| build_policy(kind, topo.capacity(i), seed, i as u64))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::InvalidArgument(m) => invalid(format!("policy {}: {m}", kind.name())),
            other => other,
        })
}
