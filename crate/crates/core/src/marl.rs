//! Neighbor-scoped joint-action Q-learning (CoM-Cache).
//!
//! Agent `i` keeps a sparse table over `([s_i, s_Ni], [a_i, a_Ni])`, where
//! `N_i` are the neighbors it can exchange content with, and an empirical
//! model `Γ` of what its neighbors do in each joint local state:
//!
//! ```text
//! Γ(s, a_N)   = f(s, a_N) / Σ_b f(s, b)            (uniform before any visit)
//! Θ(s)        = max_{a_i} Σ_{a_N} Q(s, a_i, a_N) · Γ(s, a_N)
//! Q(s, a)    ← (1 − α) Q(s, a) + α (r + γ Θ(s'))
//! ```
//!
//! and acts ε-greedily on the inner sum of `Θ`. The learner is driven one
//! step late: at step `t+1` it receives `r^t`, the new joint local state and
//! the neighbors' executed actions `a_N^t` (their current contents), updates
//! the entry for `(s^t, a^t)`, then picks `a^{t+1}`.
//!
//! Tables are keyed by digests rather than full encodings:
//!
//! - joint local states by a 128-bit xxh3 of their canonical encoding;
//! - own actions by their exact lexicographic rank among the legal actions of
//!   the state (the state fixes the legal set, so the rank is lossless);
//! - neighbor joint actions by a 64-bit xxh3 of their encoding.
//!
//! [`JointKey`] provides the canonical, decodable encoding the digests are
//! taken over.
//!
//! Action selection never materializes the action set: actions without a
//! table entry all score 0, so the argmax is either a scored entry or a
//! uniformly drawn unscored rank, unranked directly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use smallvec::SmallVec;
use xxhash_rust::xxh3::{xxh3_128, xxh3_64};

use crate::codec::{Reader, Writer};
use crate::engine::{LinkPricing, RewardWeights};
use crate::error::{invalid, Error, Result};
use crate::policies::{AgentView, PlacementPolicy};
use crate::rng::{stream_rng, streams, StreamRng};
use crate::{ContentId, FxHashMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub alpha0: f64,
    pub omega: f64,
    pub epsilon0: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    /// Distinct requested ids kept in `q` for state keys and action pools.
    pub state_q_cap: usize,
    /// Largest action set [`enumerate_actions`] will materialize.
    pub action_cap: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            alpha0: 0.5,
            omega: 0.85,
            epsilon0: 0.2,
            epsilon_decay: 1.0 - 1e-5,
            epsilon_min: 0.01,
            state_q_cap: 8,
            action_cap: 100_000,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma must lie in (0, 1)"));
        }
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return Err(invalid("alpha0 must lie in (0, 1]"));
        }
        if !(self.omega > 0.5 && self.omega <= 1.0) {
            return Err(invalid("omega must lie in (0.5, 1]"));
        }
        if !(0.0..=1.0).contains(&self.epsilon0) || !(0.0..=1.0).contains(&self.epsilon_min) {
            return Err(invalid("epsilon values must lie in [0, 1]"));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return Err(invalid("epsilon decay must lie in (0, 1]"));
        }
        if self.state_q_cap == 0 {
            return Err(invalid("state_q_cap must be at least 1"));
        }
        Ok(())
    }

    /// Step size for an entry already updated `visits` times.
    pub fn alpha(&self, visits: u32) -> f64 {
        self.alpha0 / libm::pow(1.0 + f64::from(visits), self.omega)
    }

    pub fn epsilon(&self, step: u64) -> f64 {
        let decayed = self.epsilon0 * libm::pow(self.epsilon_decay, step as f64);
        decayed.max(self.epsilon_min)
    }
}

/// The `state_q_cap` most requested distinct ids (ties to the lower id),
/// returned in ascending order.
pub fn capped_requests(requests: &[ContentId], cap: usize) -> Vec<ContentId> {
    let mut sorted = requests.to_vec();
    sorted.sort_unstable();
    let mut counted: Vec<(u32, ContentId)> = Vec::new();
    for c in sorted {
        match counted.last_mut() {
            Some((n, last)) if *last == c => *n += 1,
            _ => counted.push((1, c)),
        }
    }
    if counted.len() > cap {
        counted.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        counted.truncate(cap);
    }
    let mut ids: Vec<ContentId> = counted.into_iter().map(|(_, c)| c).collect();
    ids.sort_unstable();
    ids
}

/// `[φ, q]` with both parts sorted and `q` distinct and capped.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LocalState {
    pub contents: Vec<ContentId>,
    pub requests: Vec<ContentId>,
}

impl LocalState {
    pub fn observe(contents: &[ContentId], requests: &[ContentId], cap: usize) -> Self {
        let mut contents = contents.to_vec();
        contents.sort_unstable();
        Self {
            contents,
            requests: capped_requests(requests, cap),
        }
    }

    /// `φ ∪ q`, sorted.
    pub fn pool(&self) -> Vec<ContentId> {
        let mut pool = Vec::with_capacity(self.contents.len() + self.requests.len());
        let (mut a, mut b) = (0, 0);
        while a < self.contents.len() || b < self.requests.len() {
            let x = self.contents.get(a).copied().unwrap_or(ContentId::MAX);
            let y = self.requests.get(b).copied().unwrap_or(ContentId::MAX);
            if a < self.contents.len() && (b == self.requests.len() || x <= y) {
                pool.push(x);
                a += 1;
                if x == y {
                    b += 1;
                }
            } else {
                pool.push(y);
                b += 1;
            }
        }
        pool
    }

    fn encode_into(&self, out: &mut Vec<u32>) {
        out.push(self.contents.len() as u32);
        out.extend_from_slice(&self.contents);
        out.push(self.requests.len() as u32);
        out.extend_from_slice(&self.requests);
    }
}

/// Canonical encoding of `([s_i, s_N], [a_i, a_N])`: own entry first, then
/// neighbors by ascending id. Every list is length-prefixed, so the encoding
/// is injective and decodes exactly. Words are little-endian `u32`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct JointKey {
    pub states: Vec<LocalState>,
    pub actions: Vec<Vec<ContentId>>,
}

fn words_to_bytes(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

fn encode_states(states: &[LocalState]) -> Vec<u32> {
    let mut words = vec![states.len() as u32];
    for s in states {
        s.encode_into(&mut words);
    }
    words
}

fn encode_actions<A: AsRef<[ContentId]>>(actions: &[A]) -> Vec<u32> {
    let mut words = vec![actions.len() as u32];
    for a in actions {
        words.push(a.as_ref().len() as u32);
        words.extend_from_slice(a.as_ref());
    }
    words
}

impl JointKey {
    pub fn encode(&self) -> Vec<u8> {
        let mut words = encode_states(&self.states);
        words.extend(encode_actions(&self.actions));
        words_to_bytes(&words)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 4 != 0 {
            return Err(Error::Malformed("key length is not a multiple of 4".into()));
        }
        let words: Vec<u32> = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut pos = 0;
        let mut list = |n: Option<usize>| -> Result<Vec<u32>> {
            let len = match n {
                Some(n) => n,
                None => {
                    let w = *words
                        .get(pos)
                        .ok_or_else(|| Error::Malformed(format!("truncated key at word {pos}")))?;
                    pos += 1;
                    w as usize
                }
            };
            let s = words
                .get(pos..pos + len)
                .ok_or_else(|| Error::Malformed(format!("truncated key at word {pos}")))?;
            pos += len;
            Ok(s.to_vec())
        };
        let n_states = list(Some(1))?[0] as usize;
        let mut states = Vec::new();
        for _ in 0..n_states {
            let contents = list(None)?;
            let requests = list(None)?;
            states.push(LocalState { contents, requests });
        }
        let n_actions = list(Some(1))?[0] as usize;
        let mut actions = Vec::new();
        for _ in 0..n_actions {
            actions.push(list(None)?);
        }
        if list(Some(1)).is_ok() {
            return Err(Error::Malformed("trailing words after key".into()));
        }
        Ok(Self { states, actions })
    }
}

pub fn state_digest(states: &[LocalState]) -> u128 {
    xxh3_128(&words_to_bytes(&encode_states(states)))
}

pub fn action_digest<A: AsRef<[ContentId]>>(actions: &[A]) -> u64 {
    xxh3_64(&words_to_bytes(&encode_actions(actions)))
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact at every step: acc is C(n - k + i, i) before the update
        acc = match acc.checked_mul((n - k + i + 1) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// The legal actions of one state: subsets of the sorted pool `φ ∪ q` of
/// size `min(M, |pool|)`, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    pool: Vec<ContentId>,
    size: usize,
}

impl ActionSpace {
    pub fn new(pool: Vec<ContentId>, capacity: usize) -> Self {
        let size = capacity.min(pool.len());
        Self { pool, size }
    }

    pub fn for_state(state: &LocalState, capacity: usize) -> Self {
        Self::new(state.pool(), capacity)
    }

    pub fn pool(&self) -> &[ContentId] {
        &self.pool
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn count(&self) -> u128 {
        binomial(self.pool.len(), self.size)
    }

    /// The action at lexicographic position `rank`.
    pub fn unrank(&self, mut rank: u128) -> Vec<ContentId> {
        let n = self.pool.len();
        let mut out = Vec::with_capacity(self.size);
        let mut x = 0;
        while out.len() < self.size {
            let rest = self.size - out.len() - 1;
            let with_x = binomial(n - x - 1, rest);
            if rank < with_x {
                out.push(self.pool[x]);
            } else {
                rank -= with_x;
            }
            x += 1;
        }
        out
    }

    /// Inverse of [`ActionSpace::unrank`]; `None` if `action` is not legal.
    pub fn rank(&self, action: &[ContentId]) -> Option<u128> {
        if action.len() != self.size {
            return None;
        }
        let mut sorted = action.to_vec();
        sorted.sort_unstable();
        let n = self.pool.len();
        let mut rank = 0;
        let mut x = 0;
        for (chosen, c) in sorted.iter().enumerate() {
            let idx = self.pool.binary_search(c).ok()?;
            if idx < x {
                return None;
            }
            while x < idx {
                rank += binomial(n - x - 1, self.size - chosen - 1);
                x += 1;
            }
            x += 1;
        }
        Some(rank)
    }

    pub fn enumerate(&self, cap: u64) -> Result<Vec<Vec<ContentId>>> {
        let count = self.count();
        if count > u128::from(cap) {
            return Err(Error::ActionExplosion {
                pool: self.pool.len(),
                size: self.size,
                count,
                cap,
            });
        }
        Ok((0..count).map(|r| self.unrank(r)).collect())
    }
}

/// All legal actions from `φ ∪ q` under capacity `M`, lexicographically.
pub fn enumerate_actions(
    contents: &[ContentId],
    requests: &[ContentId],
    capacity: usize,
    cap: u64,
) -> Result<Vec<Vec<ContentId>>> {
    let state = LocalState {
        contents: {
            let mut c = contents.to_vec();
            c.sort_unstable();
            c.dedup();
            c
        },
        requests: {
            let mut q = requests.to_vec();
            q.sort_unstable();
            q.dedup();
            q
        },
    };
    ActionSpace::for_state(&state, capacity).enumerate(cap)
}

#[derive(Debug, Clone, PartialEq, Default)]
struct GammaRow {
    total: u64,
    counts: SmallVec<[(u64, u32); 1]>,
}

/// Observation counts `f(s, a_N)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GammaCounts {
    rows: FxHashMap<u128, GammaRow>,
}

impl GammaCounts {
    pub fn observe(&mut self, state: u128, neighbor_action: u64) {
        let row = self.rows.entry(state).or_default();
        row.total += 1;
        match row.counts.iter_mut().find(|(a, _)| *a == neighbor_action) {
            Some((_, n)) => *n += 1,
            None => row.counts.push((neighbor_action, 1)),
        }
    }

    pub fn total(&self, state: u128) -> u64 {
        self.rows.get(&state).map_or(0, |r| r.total)
    }

    pub fn count(&self, state: u128, neighbor_action: u64) -> u64 {
        self.rows.get(&state).map_or(0, |r| {
            r.counts
                .iter()
                .find(|(a, _)| *a == neighbor_action)
                .map_or(0, |&(_, n)| u64::from(n))
        })
    }

    /// Observed `(a_N, f)` pairs of a state.
    pub fn support(&self, state: u128) -> &[(u64, u32)] {
        self.rows.get(&state).map_or(&[], |r| &r.counts)
    }

    pub fn state_count(&self) -> usize {
        self.rows.len()
    }

    fn save(&self, w: &mut Writer) {
        let mut keys: Vec<&u128> = self.rows.keys().collect();
        keys.sort_unstable();
        w.len(keys.len());
        for k in keys {
            let row = &self.rows[k];
            w.u128(*k);
            w.u64(row.total);
            w.len(row.counts.len());
            for &(a, n) in &row.counts {
                w.u64(a);
                w.u32(n);
            }
        }
    }

    fn load(r: &mut Reader<'_>) -> Result<Self> {
        let mut out = Self::default();
        for _ in 0..r.len()? {
            let key = r.u128()?;
            let total = r.u64()?;
            let mut counts = SmallVec::new();
            for _ in 0..r.len()? {
                counts.push((r.u64()?, r.u32()?));
            }
            out.rows.insert(key, GammaRow { total, counts });
        }
        Ok(out)
    }
}

/// `Γ(s, a_N)`; for a never-visited state, the uniform prior over
/// `prior_support` neighbor joint actions.
pub fn gamma_prob(counts: &GammaCounts, state: u128, neighbor_action: u64, prior_support: u128) -> f64 {
    let total = counts.total(state);
    if total == 0 {
        if prior_support == 0 {
            0.0
        } else {
            1.0 / prior_support as f64
        }
    } else {
        counts.count(state, neighbor_action) as f64 / total as f64
    }
}

/// One table entry: own action rank, neighbor action digest, value, updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QCell {
    pub own: u64,
    pub neighbors: u64,
    pub value: f64,
    pub visits: u32,
}

/// Sparse `Q`, zero for absent entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QTable {
    rows: FxHashMap<u128, SmallVec<[QCell; 1]>>,
}

impl QTable {
    pub fn get(&self, state: u128, own: u64, neighbors: u64) -> f64 {
        self.cell(state, own, neighbors).map_or(0.0, |c| c.value)
    }

    pub fn cell(&self, state: u128, own: u64, neighbors: u64) -> Option<&QCell> {
        self.cells(state)
            .iter()
            .find(|c| c.own == own && c.neighbors == neighbors)
    }

    pub fn cells(&self, state: u128) -> &[QCell] {
        self.rows.get(&state).map_or(&[], |r| r)
    }

    /// Sets a value directly (tests and checkpoint tooling).
    pub fn set(&mut self, state: u128, own: u64, neighbors: u64, value: f64) {
        let cell = self.cell_mut(state, own, neighbors);
        cell.value = value;
    }

    fn cell_mut(&mut self, state: u128, own: u64, neighbors: u64) -> &mut QCell {
        let row = self.rows.entry(state).or_default();
        let idx = match row.iter().position(|c| c.own == own && c.neighbors == neighbors) {
            Some(i) => i,
            None => {
                row.push(QCell {
                    own,
                    neighbors,
                    value: 0.0,
                    visits: 0,
                });
                row.len() - 1
            }
        };
        &mut row[idx]
    }

    pub fn state_count(&self) -> usize {
        self.rows.len()
    }

    pub fn entry_count(&self) -> usize {
        self.rows.values().map(|r| r.len()).sum()
    }

    /// All entries as `(state, cell)`, in unspecified order.
    pub fn entries(&self) -> impl Iterator<Item = (u128, &QCell)> {
        self.rows
            .iter()
            .flat_map(|(s, row)| row.iter().map(move |c| (*s, c)))
    }

    fn save(&self, w: &mut Writer) {
        let mut keys: Vec<&u128> = self.rows.keys().collect();
        keys.sort_unstable();
        w.len(keys.len());
        for k in keys {
            let row = &self.rows[k];
            w.u128(*k);
            w.len(row.len());
            for c in row {
                w.u64(c.own);
                w.u64(c.neighbors);
                w.f64(c.value);
                w.u32(c.visits);
            }
        }
    }

    fn load(r: &mut Reader<'_>) -> Result<Self> {
        let mut out = Self::default();
        for _ in 0..r.len()? {
            let key = r.u128()?;
            let mut row = SmallVec::new();
            for _ in 0..r.len()? {
                let cell = QCell {
                    own: r.u64()?,
                    neighbors: r.u64()?,
                    value: r.f64()?,
                    visits: r.u32()?,
                };
                if !cell.value.is_finite() {
                    return Err(Error::NonFinite);
                }
                row.push(cell);
            }
            out.rows.insert(key, row);
        }
        Ok(out)
    }
}

/// `Σ_{a_N} Q(s, a_i, a_N) Γ(s, a_N)` for every own action with an entry,
/// sorted by own rank.
fn scored_actions(q: &QTable, counts: &GammaCounts, state: u128) -> SmallVec<[(u64, f64); 4]> {
    let mut scores: SmallVec<[(u64, f64); 4]> = SmallVec::new();
    let cells = q.cells(state);
    if cells.is_empty() {
        return scores;
    }
    let total = counts.total(state) as f64;
    for c in cells {
        let weight = if total == 0.0 {
            0.0
        } else {
            counts.count(state, c.neighbors) as f64 / total
        };
        let term = c.value * weight;
        match scores.iter_mut().find(|(own, _)| *own == c.own) {
            Some((_, s)) => *s += term,
            None => scores.push((c.own, term)),
        }
    }
    scores.sort_unstable_by_key(|s| s.0);
    scores
}

/// `Θ(s)`: the best Γ-weighted value over own actions. Own actions without
/// entries score 0; `legal_count` tells whether any such action exists.
pub fn theta(q: &QTable, counts: &GammaCounts, state: u128, legal_count: u128) -> f64 {
    let scores = scored_actions(q, counts, state);
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    if (scores.len() as u128) < legal_count {
        best.max(0.0)
    } else if scores.is_empty() {
        0.0
    } else {
        best
    }
}

/// `(1 − α) Q_old + α (r + γ Θ')`.
pub fn q_update(q_old: f64, reward: f64, theta_next: f64, alpha: f64, gamma: f64) -> Result<f64> {
    if !(q_old.is_finite() && reward.is_finite() && theta_next.is_finite() && alpha.is_finite() && gamma.is_finite()) {
        return Err(Error::NonFinite);
    }
    if !(alpha > 0.0 && alpha <= 1.0) || !(0.0..1.0).contains(&gamma) {
        return Err(invalid(format!("alpha {alpha} or gamma {gamma} out of range")));
    }
    Ok((1.0 - alpha) * q_old + alpha * (reward + gamma * theta_next))
}

/// Applies [`q_update`] to one entry of the table and bumps its visit count.
#[allow(clippy::too_many_arguments)]
pub fn update_entry(
    q: &mut QTable,
    state: u128,
    own: u64,
    neighbors: u64,
    reward: f64,
    theta_next: f64,
    config: &LearnerConfig,
) -> Result<f64> {
    let cell = q.cell_mut(state, own, neighbors);
    let value = q_update(cell.value, reward, theta_next, config.alpha(cell.visits), config.gamma)?;
    cell.value = value;
    cell.visits = cell.visits.saturating_add(1);
    Ok(value)
}

/// How an action was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Explore,
    /// Greedy in a state with at least one table entry.
    Informed,
    /// Greedy in a state without entries: a uniform tie-break.
    Blind,
}

/// ε-greedy selection over the legal actions of `space`; returns the rank.
///
/// Draws `η` uniform on `[0, 1)` from `explore`; `η ≤ 1 − ε` acts greedily,
/// otherwise a uniformly random rank is drawn from `explore`. Greedy ties
/// are broken uniformly with one draw from `tie`.
pub fn select_action(
    q: &QTable,
    counts: &GammaCounts,
    state: u128,
    space: &ActionSpace,
    epsilon: f64,
    explore: &mut StreamRng,
    tie: &mut StreamRng,
) -> (u128, Choice) {
    choose(|| scored_actions(q, counts, state), space, epsilon, explore, tie)
}

fn choose<F>(scores: F, space: &ActionSpace, epsilon: f64, explore: &mut StreamRng, tie: &mut StreamRng) -> (u128, Choice)
where
    F: FnOnce() -> SmallVec<[(u64, f64); 4]>,
{
    let count = space.count();
    let eta: f64 = explore.random();
    if eta > 1.0 - epsilon {
        return (explore.random_range(0..count), Choice::Explore);
    }
    let scores = scores();
    let unscored = count - scores.len() as u128;
    let mut best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    if unscored > 0 {
        best = best.max(0.0);
    }
    let tied: SmallVec<[u64; 4]> = scores.iter().filter(|s| s.1 == best).map(|s| s.0).collect();
    let free = if best == 0.0 { unscored } else { 0 };
    let pick = tie.random_range(0..tied.len() as u128 + free);
    let choice = if scores.is_empty() { Choice::Blind } else { Choice::Informed };
    if pick < tied.len() as u128 {
        return (u128::from(tied[pick as usize]), choice);
    }
    // the m-th rank not taken by a scored action
    let mut rank = pick - tied.len() as u128;
    for &(own, _) in &scores {
        if u128::from(own) <= rank {
            rank += 1;
        } else {
            break;
        }
    }
    (rank, choice)
}

/// Whether a learner conditions on its neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Own state and action only (independent Q-learning).
    Independent,
    /// Own and neighbor states and actions (CoM-Cache).
    Neighbors,
}

/// Counters describing how often the table actually informed decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LearnerStats {
    pub updates: u64,
    pub explored: u64,
    pub informed: u64,
    pub blind: u64,
}

impl LearnerStats {
    pub fn merge(&mut self, other: &LearnerStats) {
        self.updates += other.updates;
        self.explored += other.explored;
        self.informed += other.informed;
        self.blind += other.blind;
    }

    /// Share of greedy decisions taken in a state with table entries.
    pub fn informed_share(&self) -> Option<f64> {
        let greedy = self.informed + self.blind;
        (greedy > 0).then(|| self.informed as f64 / greedy as f64)
    }
}

#[derive(Debug, Clone)]
struct Current {
    state: u128,
    space: ActionSpace,
}

/// The tabular learner behind both [`ComCache`] and the independent
/// Q-learning baseline.
#[derive(Debug, Clone)]
pub struct TabularLearner {
    scope: Scope,
    capacity: usize,
    config: LearnerConfig,
    q: QTable,
    counts: GammaCounts,
    explore: StreamRng,
    tie: StreamRng,
    current: Option<Current>,
    /// `(s^t, rank of a^t)` awaiting its reward.
    pending: Option<(u128, u64)>,
    stats: LearnerStats,
}

/// Digest of the empty neighbor action, used when no neighbor is in scope.
fn no_neighbors() -> u64 {
    action_digest::<&[ContentId]>(&[])
}

impl TabularLearner {
    /// `stream` selects the agent's random streams; it is normally the agent id.
    pub fn new(scope: Scope, capacity: usize, config: LearnerConfig, seed: u64, stream: u64) -> Result<Self> {
        config.validate()?;
        if capacity == 0 {
            return Err(invalid("capacity must be positive"));
        }
        Ok(Self {
            scope,
            capacity,
            config,
            q: QTable::default(),
            counts: GammaCounts::default(),
            explore: stream_rng(seed, streams::EXPLORE | stream),
            tie: stream_rng(seed, streams::TIE_BREAK | stream),
            current: None,
            pending: None,
            stats: LearnerStats::default(),
        })
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn q_table(&self) -> &QTable {
        &self.q
    }

    pub fn gamma_counts(&self) -> &GammaCounts {
        &self.counts
    }

    pub fn stats(&self) -> LearnerStats {
        self.stats
    }

    fn joint_state(&self, view: &AgentView<'_>) -> Vec<LocalState> {
        let cap = self.config.state_q_cap;
        let mut states = vec![LocalState::observe(view.contents, view.requests, cap)];
        if self.scope == Scope::Neighbors {
            states.extend(
                view.neighbors
                    .iter()
                    .map(|n| LocalState::observe(n.contents, n.requests, cap)),
            );
        }
        states
    }

    /// Credits the pending `(s^t, a^t)` with `view.reward` and records the new
    /// state. Neighbors' current contents are their executed actions `a_N^t`.
    pub fn observe(&mut self, view: &AgentView<'_>) -> Result<()> {
        let states = self.joint_state(view);
        let state = state_digest(&states);
        let space = ActionSpace::for_state(&states[0], self.capacity);
        if let Some((prev, own)) = self.pending.take() {
            let neighbors = match self.scope {
                Scope::Independent => no_neighbors(),
                Scope::Neighbors => {
                    let acts: Vec<&[ContentId]> = view.neighbors.iter().map(|n| n.contents).collect();
                    action_digest(&acts)
                }
            };
            if self.scope == Scope::Neighbors {
                self.counts.observe(prev, neighbors);
            }
            let next = match self.scope {
                Scope::Neighbors => theta(&self.q, &self.counts, state, space.count()),
                Scope::Independent => theta_independent(&self.q, state, space.count()),
            };
            update_entry(&mut self.q, prev, own, neighbors, view.reward, next, &self.config)
                .map_err(|e| Error::PolicyFault {
                    agent: view.agent,
                    reason: format!("{e}"),
                })?;
            self.stats.updates += 1;
        }
        self.current = Some(Current { state, space });
        Ok(())
    }

    pub fn decide(&mut self, view: &AgentView<'_>) -> Result<Vec<ContentId>> {
        let Current { state, space } = self.current.take().ok_or_else(|| Error::PolicyFault {
            agent: view.agent,
            reason: "decide called without observe".into(),
        })?;
        let epsilon = self.config.epsilon(view.step);
        let (rank, choice) = match self.scope {
            Scope::Neighbors => select_action(&self.q, &self.counts, state, &space, epsilon, &mut self.explore, &mut self.tie),
            Scope::Independent => {
                select_independent(&self.q, state, &space, epsilon, &mut self.explore, &mut self.tie)
            }
        };
        match choice {
            Choice::Explore => self.stats.explored += 1,
            Choice::Informed => self.stats.informed += 1,
            Choice::Blind => self.stats.blind += 1,
        }
        let rank = u64::try_from(rank).map_err(|_| Error::ActionExplosion {
            pool: space.pool().len(),
            size: space.size(),
            count: space.count(),
            cap: u64::MAX,
        })?;
        self.pending = Some((state, rank));
        Ok(space.unrank(u128::from(rank)))
    }

    /// Greedy readout for a state, without exploration or learning.
    pub fn greedy(&self, view: &AgentView<'_>) -> Vec<ContentId> {
        let states = self.joint_state(view);
        let state = state_digest(&states);
        let space = ActionSpace::for_state(&states[0], self.capacity);
        let scores = match self.scope {
            Scope::Neighbors => scored_actions(&self.q, &self.counts, state),
            Scope::Independent => scored_independent(&self.q, state),
        };
        let unscored = space.count() > scores.len() as u128;
        let best = scores
            .iter()
            .copied()
            .fold(None::<(u64, f64)>, |acc, s| match acc {
                Some(a) if a.1 >= s.1 => Some(a),
                _ => Some(s),
            });
        match best {
            Some((own, v)) if v > 0.0 || !unscored => space.unrank(u128::from(own)),
            // every scored action is ≤ 0: the first unscored rank
            _ => {
                let mut rank = 0u128;
                for &(own, _) in &scores {
                    if u128::from(own) == rank {
                        rank += 1;
                    }
                }
                space.unrank(rank)
            }
        }
    }

    pub fn save(&self, w: &mut Writer) {
        w.u8(match self.scope {
            Scope::Independent => 0,
            Scope::Neighbors => 1,
        });
        w.len(self.capacity);
        self.q.save(w);
        self.counts.save(w);
        w.rng(&self.explore);
        w.rng(&self.tie);
        match self.pending {
            Some((s, a)) => {
                w.u8(1);
                w.u128(s);
                w.u64(a);
            }
            None => w.u8(0),
        }
        w.u64(self.stats.updates);
        w.u64(self.stats.explored);
        w.u64(self.stats.informed);
        w.u64(self.stats.blind);
    }

    pub fn load(&mut self, r: &mut Reader<'_>) -> Result<()> {
        let scope = match r.u8()? {
            0 => Scope::Independent,
            1 => Scope::Neighbors,
            x => return Err(Error::Malformed(format!("unknown learner scope {x}"))),
        };
        if scope != self.scope {
            return Err(Error::Malformed("checkpoint learner scope differs".into()));
        }
        let capacity = r.u64()? as usize;
        if capacity != self.capacity {
            return Err(Error::Malformed("checkpoint capacity differs".into()));
        }
        self.q = QTable::load(r)?;
        self.counts = GammaCounts::load(r)?;
        self.explore = r.rng()?;
        self.tie = r.rng()?;
        self.pending = match r.u8()? {
            0 => None,
            1 => Some((r.u128()?, r.u64()?)),
            x => return Err(Error::Malformed(format!("bad pending flag {x}"))),
        };
        self.stats = LearnerStats {
            updates: r.u64()?,
            explored: r.u64()?,
            informed: r.u64()?,
            blind: r.u64()?,
        };
        self.current = None;
        Ok(())
    }
}

// Independent learners skip Γ: every entry carries the empty neighbor action
// with weight 1, which is exactly what the scoped path computes when the
// neighbor set is empty.
fn scored_independent(q: &QTable, state: u128) -> SmallVec<[(u64, f64); 4]> {
    let mut scores: SmallVec<[(u64, f64); 4]> = q.cells(state).iter().map(|c| (c.own, c.value)).collect();
    scores.sort_unstable_by_key(|s| s.0);
    scores
}

fn theta_independent(q: &QTable, state: u128, legal_count: u128) -> f64 {
    let scores = scored_independent(q, state);
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    if (scores.len() as u128) < legal_count {
        best.max(0.0)
    } else if scores.is_empty() {
        0.0
    } else {
        best
    }
}

fn select_independent(
    q: &QTable,
    state: u128,
    space: &ActionSpace,
    epsilon: f64,
    explore: &mut StreamRng,
    tie: &mut StreamRng,
) -> (u128, Choice) {
    choose(|| scored_independent(q, state), space, epsilon, explore, tie)
}

/// The CoM-Cache placement policy for one agent.
#[derive(Debug, Clone)]
pub struct ComCache {
    learner: TabularLearner,
    weights: RewardWeights,
}

impl ComCache {
    pub fn new(capacity: usize, config: LearnerConfig, weights: RewardWeights, seed: u64, stream: u64) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            learner: TabularLearner::new(Scope::Neighbors, capacity, config, seed, stream)?,
            weights,
        })
    }

    pub fn learner(&self) -> &TabularLearner {
        &self.learner
    }
}

impl PlacementPolicy for ComCache {
    fn name(&self) -> &'static str {
        match self.weights.pricing {
            LinkPricing::Free => "comcache-i",
            LinkPricing::Costed => "comcache",
        }
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
