//! Request generation.
//!
//! Two models are provided:
//!
//! * **IRM**: every cache draws i.i.d. content ids from a Zipf law
//!   `p_n ∝ n^-β`. No temporal or spatial correlation.
//! * **Shot noise (SNM)**: demand is a superposition of "shots". A shot of
//!   content `n` released at `τ` with volume `V` and lifetime `ℓ` has
//!   intensity `λ(t) = V/ℓ · exp(-(t-τ)/ℓ)` for `t ≥ τ`. Caches are
//!   partitioned into groups; every group draws its own shot sequence and all
//!   members of a group share it, so requests are correlated in time (bursts
//!   after `τ`) and in space (within a group), and independent across groups.
//!
//! All generators are pure functions of `(seed, step, stream)`; see
//! [`crate::rng`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::error::{invalid, Error, Result};
use crate::rng::{step_rng, stream_rng, streams};
use crate::topology::Topology;
use crate::ContentId;

/// `p_n = n^-β / Σ_{m=1..N} m^-β` for ranks `n = 1..N` (index 0 is rank 1).
pub fn zipf_pmf(library_size: usize, beta: f64) -> Result<Vec<f64>> {
    if library_size == 0 {
        return Err(invalid("library size must be positive"));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(invalid(format!("zipf exponent {beta} must be finite and >= 0")));
    }
    let weights: Vec<f64> = (1..=library_size)
        .map(|n| libm::pow(n as f64, -beta))
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Inverse-CDF sampler over a probability vector.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    cdf: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(library_size: usize, beta: f64) -> Result<Self> {
        Ok(Self::from_pmf(&zipf_pmf(library_size, beta)?))
    }

    pub fn from_pmf(pmf: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Self { cdf }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ContentId {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1) as ContentId
    }
}

/// How many requests an IRM cache issues per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RequestCount {
    Fixed(u32),
    /// Poisson with the given mean.
    Poisson(f64),
}

/// Shot-noise parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnmParams {
    pub lifetime_min: f64,
    pub lifetime_max: f64,
    /// Volume of the rank-1 content; rank `n` gets `volume_scale / n`.
    pub volume_scale: f64,
    /// New shots per step per group, on top of the initial release of the
    /// whole library at `t = 0`.
    pub content_arrival_rate: f64,
    pub group_size: usize,
}

impl Default for SnmParams {
    fn default() -> Self {
        Self {
            lifetime_min: 10.0,
            lifetime_max: 1000.0,
            volume_scale: 400.0,
            content_arrival_rate: 0.2,
            group_size: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorkloadModel {
    Irm { zipf_beta: f64 },
    Snm(SnmParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadSpec {
    pub library_size: usize,
    pub model: WorkloadModel,
    /// IRM only.
    pub requests: RequestCount,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn irm(library_size: usize, zipf_beta: f64, seed: u64) -> Self {
        Self {
            library_size,
            model: WorkloadModel::Irm { zipf_beta },
            requests: RequestCount::Fixed(1),
            seed,
        }
    }

    pub fn snm(library_size: usize, params: SnmParams, seed: u64) -> Self {
        Self {
            library_size,
            model: WorkloadModel::Snm(params),
            requests: RequestCount::Fixed(1),
            seed,
        }
    }

    /// Checks parameter ranges and that no cache can hold the whole library.
    pub fn validate(&self, max_capacity: usize) -> Result<()> {
        if self.library_size == 0 {
            return Err(invalid("library size must be positive"));
        }
        if self.library_size > u32::MAX as usize {
            return Err(invalid("library size exceeds the content id range"));
        }
        if max_capacity >= self.library_size {
            return Err(invalid(format!(
                "cache capacity {max_capacity} must be smaller than the library size {}",
                self.library_size
            )));
        }
        match self.requests {
            RequestCount::Fixed(_) => {}
            RequestCount::Poisson(mean) if mean >= 0.0 && mean.is_finite() => {}
            RequestCount::Poisson(mean) => {
                return Err(invalid(format!("poisson request mean {mean} must be >= 0")))
            }
        }
        match self.model {
            WorkloadModel::Irm { zipf_beta } => {
                if !(zipf_beta >= 0.0 && zipf_beta.is_finite()) {
                    return Err(invalid(format!("zipf exponent {zipf_beta} must be >= 0")));
                }
            }
            WorkloadModel::Snm(p) => {
                if !(p.lifetime_min > 0.0 && p.lifetime_min <= p.lifetime_max && p.lifetime_max.is_finite()) {
                    return Err(invalid(format!(
                        "lifetime range [{}, {}] must satisfy 0 < min <= max",
                        p.lifetime_min, p.lifetime_max
                    )));
                }
                if !(p.volume_scale > 0.0 && p.volume_scale.is_finite()) {
                    return Err(invalid("volume scale must be positive"));
                }
                if !(p.content_arrival_rate >= 0.0 && p.content_arrival_rate.is_finite()) {
                    return Err(invalid("content arrival rate must be >= 0"));
                }
                if p.group_size == 0 {
                    return Err(invalid("group size must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

/// The requests issued at one step: `requests[i]` is the multiset `q_i` of
/// cache `i`, in processing order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RequestBatch {
    pub step: u64,
    pub requests: Vec<Vec<ContentId>>,
}

impl RequestBatch {
    pub fn empty(step: u64, caches: usize) -> Self {
        Self {
            step,
            requests: vec![Vec::new(); caches],
        }
    }

    pub fn total(&self) -> usize {
        self.requests.iter().map(Vec::len).sum()
    }
}

/// Anything that can produce the batch for a given step.
pub trait RequestSource {
    fn cache_count(&self) -> usize;
    fn batch(&self, step: u64) -> RequestBatch;
}

/// IRM generator. Cache `i` at step `t` draws from stream `(seed, IRM | i, t)`.
#[derive(Debug, Clone)]
pub struct IrmGenerator {
    sampler: ZipfSampler,
    requests: RequestCount,
    caches: usize,
    seed: u64,
}

impl IrmGenerator {
    pub fn new(spec: &WorkloadSpec, caches: usize) -> Result<Self> {
        let WorkloadModel::Irm { zipf_beta } = spec.model else {
            return Err(invalid("IRM generator needs an IRM workload"));
        };
        Ok(Self {
            sampler: ZipfSampler::new(spec.library_size, zipf_beta)?,
            requests: spec.requests,
            caches,
            seed: spec.seed,
        })
    }

    /// Requests of one cache at one step.
    pub fn cache_requests(&self, cache: usize, step: u64) -> Vec<ContentId> {
        let mut rng = step_rng(self.seed, streams::IRM | cache as u64, step);
        let count = match self.requests {
            RequestCount::Fixed(k) => k as usize,
            RequestCount::Poisson(mean) if mean > 0.0 => {
                Poisson::new(mean).map(|d| d.sample(&mut rng) as usize).unwrap_or(0)
            }
            RequestCount::Poisson(_) => 0,
        };
        (0..count).map(|_| self.sampler.sample(&mut rng)).collect()
    }
}

impl RequestSource for IrmGenerator {
    fn cache_count(&self) -> usize {
        self.caches
    }

    fn batch(&self, step: u64) -> RequestBatch {
        RequestBatch {
            step,
            requests: (0..self.caches)
                .map(|i| self.cache_requests(i, step))
                .collect(),
        }
    }
}

/// One shot of the shot-noise model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnmContent {
    pub content: ContentId,
    /// Release time `τ`.
    pub arrival: f64,
    /// Expected total number of requests `V`.
    pub volume: f64,
    /// Lifetime `ℓ`.
    pub lifetime: f64,
}

impl SnmContent {
    /// `λ(t)`: zero before release, then `V/ℓ · exp(-(t-τ)/ℓ)`.
    pub fn intensity(&self, t: f64) -> f64 {
        if t < self.arrival {
            0.0
        } else {
            self.volume / self.lifetime * libm::exp(-(t - self.arrival) / self.lifetime)
        }
    }

    /// `∫_a^b λ(t) dt`.
    pub fn expected_requests(&self, a: f64, b: f64) -> f64 {
        let lo = a.max(self.arrival);
        if b <= lo {
            return 0.0;
        }
        let tail = |t: f64| libm::exp(-(t - self.arrival) / self.lifetime);
        self.volume * (tail(lo) - tail(b))
    }
}

/// Partition of the caches into spatial-correlation groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    group_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl GroupAssignment {
    /// Explicit groups; every node must appear in exactly one.
    pub fn from_groups(groups: Vec<Vec<usize>>, node_count: usize) -> Result<Self> {
        let mut group_of = vec![usize::MAX; node_count];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(invalid(format!("group {g} is empty")));
            }
            for &n in members {
                if n >= node_count {
                    return Err(Error::NodeOutOfRange {
                        node: n,
                        count: node_count,
                    });
                }
                if group_of[n] != usize::MAX {
                    return Err(invalid(format!("node {n} assigned to two groups")));
                }
                group_of[n] = g;
            }
        }
        if let Some(n) = group_of.iter().position(|&g| g == usize::MAX) {
            return Err(invalid(format!("node {n} is not in any group")));
        }
        Ok(Self {
            group_of,
            members: groups,
        })
    }

    /// Default grouping: square `s x s` blocks on grids when `group_size = s²`,
    /// otherwise consecutive runs of node ids.
    pub fn for_topology(topo: &Topology, group_size: usize) -> Result<Self> {
        if group_size == 0 {
            return Err(invalid("group size must be at least 1"));
        }
        let n = topo.node_count();
        let side = libm::sqrt(group_size as f64) as usize;
        let groups = match topo.grid_shape() {
            Some(shape) if side * side == group_size => {
                let mut groups = Vec::new();
                for br in (0..shape.rows).step_by(side) {
                    for bc in (0..shape.cols).step_by(side) {
                        let mut g = Vec::new();
                        for r in br..(br + side).min(shape.rows) {
                            for c in bc..(bc + side).min(shape.cols) {
                                g.push(r * shape.cols + c);
                            }
                        }
                        groups.push(g);
                    }
                }
                groups
            }
            _ => (0..n)
                .collect::<Vec<_>>()
                .chunks(group_size)
                .map(<[usize]>::to_vec)
                .collect(),
        };
        Self::from_groups(groups, n)
    }

    pub fn group_count(&self) -> usize {
        self.members.len()
    }

    pub fn group_of(&self, node: usize) -> usize {
        self.group_of[node]
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    pub fn node_count(&self) -> usize {
        self.group_of.len()
    }
}

/// Shot realizations, one independent sequence per group.
#[derive(Debug, Clone, PartialEq)]
pub struct SnmCatalog {
    pub groups: Vec<Vec<SnmContent>>,
}

impl SnmCatalog {
    pub fn shot_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

fn snm_params(spec: &WorkloadSpec) -> Result<SnmParams> {
    match spec.model {
        WorkloadModel::Snm(p) => Ok(p),
        WorkloadModel::Irm { .. } => Err(invalid("shot-noise generation needs an SNM workload")),
    }
}

/// Draws every group's shot sequence over `[0, horizon]`.
///
/// Each group starts with one shot per library content released at `t = 0`,
/// then receives new shots as a Poisson process of rate
/// `content_arrival_rate`, each for a uniformly chosen content. Lifetimes are
/// uniform on `[lifetime_min, lifetime_max]`; the volume of a shot of the
/// rank-`n` content (id `n - 1`) is `volume_scale / n`, independent of the
/// lifetime, so within any lifetime band more popular contents carry larger
/// volumes.
pub fn spawn_contents(spec: &WorkloadSpec, group_count: usize, horizon: u64) -> Result<SnmCatalog> {
    let p = snm_params(spec)?;
    let n = spec.library_size;
    let lifetime = |rng: &mut crate::rng::StreamRng| {
        if p.lifetime_max > p.lifetime_min {
            rng.random_range(p.lifetime_min..=p.lifetime_max)
        } else {
            p.lifetime_min
        }
    };
    let volume = |content: usize| p.volume_scale / (content + 1) as f64;
    let groups = (0..group_count)
        .map(|g| {
            let mut rng = stream_rng(spec.seed, streams::SNM_CATALOG | g as u64);
            let mut shots: Vec<SnmContent> = (0..n)
                .map(|c| SnmContent {
                    content: c as ContentId,
                    arrival: 0.0,
                    volume: volume(c),
                    lifetime: lifetime(&mut rng),
                })
                .collect();
            if p.content_arrival_rate > 0.0 {
                let gap = Exp::new(p.content_arrival_rate).expect("positive rate");
                let mut t = 0.0;
                loop {
                    t += gap.sample(&mut rng);
                    if t > horizon as f64 {
                        break;
                    }
                    let c = rng.random_range(0..n);
                    shots.push(SnmContent {
                        content: c as ContentId,
                        arrival: t,
                        volume: volume(c),
                        lifetime: lifetime(&mut rng),
                    });
                }
            }
            shots
        })
        .collect();
    Ok(SnmCatalog { groups })
}

/// A fully materialized request sequence over `[0, horizon)`.
///
/// Requests are stored sorted by step; within a step each cache's requests
/// keep their generation (or file) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    caches: usize,
    horizon: u64,
    /// `(cache, content)` pairs ordered by step.
    events: Vec<(u32, ContentId)>,
    /// `offsets[t]..offsets[t + 1]` indexes the events of step `t`.
    offsets: Vec<usize>,
}

impl Trace {
    /// Builds a trace from `(step, cache, content)` rows. Rows may arrive in
    /// any step order; the relative order of rows within a step is kept.
    pub fn from_rows<I>(caches: usize, horizon: u64, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, usize, ContentId)>,
    {
        let mut rows: Vec<(u64, usize, ContentId)> = rows.into_iter().collect();
        for &(step, cache, _) in &rows {
            if cache >= caches {
                return Err(Error::TraceMismatch(format!(
                    "cache id {cache} out of range (network has {caches} caches)"
                )));
            }
            if step >= horizon {
                return Err(Error::TraceMismatch(format!(
                    "step {step} beyond the horizon {horizon}"
                )));
            }
        }
        rows.sort_by_key(|r| r.0);
        let mut offsets = Vec::with_capacity(horizon as usize + 1);
        let mut events = Vec::with_capacity(rows.len());
        let mut cursor = 0;
        for t in 0..horizon {
            offsets.push(events.len());
            while cursor < rows.len() && rows[cursor].0 == t {
                events.push((rows[cursor].1 as u32, rows[cursor].2));
                cursor += 1;
            }
        }
        offsets.push(events.len());
        Ok(Self {
            caches,
            horizon,
            events,
            offsets,
        })
    }

    /// Materializes `source` over `[0, horizon)`.
    pub fn record<S: RequestSource + ?Sized>(source: &S, horizon: u64) -> Self {
        let mut events = Vec::new();
        let mut offsets = Vec::with_capacity(horizon as usize + 1);
        for t in 0..horizon {
            offsets.push(events.len());
            let batch = source.batch(t);
            for (cache, reqs) in batch.requests.iter().enumerate() {
                events.extend(reqs.iter().map(|&c| (cache as u32, c)));
            }
        }
        offsets.push(events.len());
        Self {
            caches: source.cache_count(),
            horizon,
            events,
            offsets,
        }
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn request_count(&self) -> usize {
        self.events.len()
    }

    /// Largest content id referenced, if any.
    pub fn max_content(&self) -> Option<ContentId> {
        self.events.iter().map(|e| e.1).max()
    }

    /// All requests as `(step, cache, content)` rows in canonical order.
    pub fn rows(&self) -> impl Iterator<Item = (u64, usize, ContentId)> + '_ {
        (0..self.horizon).flat_map(move |t| {
            let (lo, hi) = (self.offsets[t as usize], self.offsets[t as usize + 1]);
            self.events[lo..hi]
                .iter()
                .map(move |&(cache, content)| (t, cache as usize, content))
        })
    }

    /// Requests of cache `i` only, renumbered as cache 0 of a one-cache trace.
    pub fn single_cache(&self, cache: usize) -> Trace {
        let rows = self
            .rows()
            .filter(|r| r.1 == cache)
            .map(|(t, _, c)| (t, 0, c));
        Trace::from_rows(1, self.horizon, rows).expect("rows come from a valid trace")
    }

    /// Requests of a subset of caches, renumbered by position in `caches`.
    pub fn restrict(&self, caches: &[usize]) -> Trace {
        let rows = self.rows().filter_map(|(t, i, c)| {
            caches.iter().position(|&x| x == i).map(|pos| (t, pos, c))
        });
        Trace::from_rows(caches.len(), self.horizon, rows).expect("rows come from a valid trace")
    }
}

impl RequestSource for Trace {
    fn cache_count(&self) -> usize {
        self.caches
    }

    fn batch(&self, step: u64) -> RequestBatch {
        let mut batch = RequestBatch::empty(step, self.caches);
        if step < self.horizon {
            let (lo, hi) = (self.offsets[step as usize], self.offsets[step as usize + 1]);
            for &(cache, content) in &self.events[lo..hi] {
                batch.requests[cache as usize].push(content);
            }
        }
        batch
    }
}

/// Shot-noise request source.
///
/// Each shot's requests form an inhomogeneous Poisson process with intensity
/// `λ(t)`. They are realized shot by shot: the total is Poisson(`V`) and each
/// request time is `τ + Exp(1/ℓ)`, which yields per-step counts that are
/// independent Poisson with mean `∫_t^{t+1} λ`. Every request goes to a member
/// of the shot's group chosen uniformly at random. Shot `k` of group `g`
/// draws from stream `(seed, SNM_SHOT | g, k)`, so the realization depends
/// only on the catalog and the seed.
#[derive(Debug, Clone)]
pub struct SnmGenerator {
    trace: Trace,
}

impl SnmGenerator {
    pub fn new(
        spec: &WorkloadSpec,
        catalog: &SnmCatalog,
        groups: &GroupAssignment,
        horizon: u64,
    ) -> Result<Self> {
        snm_params(spec)?;
        if catalog.groups.len() != groups.group_count() {
            return Err(invalid(format!(
                "catalog has {} groups, assignment has {}",
                catalog.groups.len(),
                groups.group_count()
            )));
        }
        let mut rows: Vec<(u64, usize, ContentId)> = Vec::new();
        for (g, shots) in catalog.groups.iter().enumerate() {
            let members = groups.members(g);
            for (k, shot) in shots.iter().enumerate() {
                if shot.content as usize >= spec.library_size {
                    return Err(invalid(format!("shot content {} outside library", shot.content)));
                }
                let mut rng = step_rng(spec.seed, streams::SNM_SHOT | g as u64, k as u64);
                let total = Poisson::new(shot.volume)
                    .map(|d| d.sample(&mut rng) as u64)
                    .unwrap_or(0);
                let age = Exp::new(1.0 / shot.lifetime).expect("positive lifetime");
                for _ in 0..total {
                    let at = shot.arrival + age.sample(&mut rng);
                    let cache = members[rng.random_range(0..members.len())];
                    if at < horizon as f64 {
                        rows.push((libm::floor(at) as u64, cache, shot.content));
                    }
                }
            }
        }
        Ok(Self {
            trace: Trace::from_rows(groups.node_count(), horizon, rows)?,
        })
    }

    /// Convenience: spawn the catalog and realize it in one call.
    pub fn build(spec: &WorkloadSpec, groups: &GroupAssignment, horizon: u64) -> Result<Self> {
        let catalog = spawn_contents(spec, groups.group_count(), horizon)?;
        Self::new(spec, &catalog, groups, horizon)
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }
}

impl RequestSource for SnmGenerator {
    fn cache_count(&self) -> usize {
        self.trace.cache_count()
    }

    fn batch(&self, step: u64) -> RequestBatch {
        self.trace.batch(step)
    }
}

/// Generates the full trace for a workload on a topology.
pub fn generate_trace(spec: &WorkloadSpec, topo: &Topology, horizon: u64) -> Result<Trace> {
    generate_trace_with_groups(spec, topo, None, horizon)
}

/// As [`generate_trace`], with an explicit SNM group assignment.
pub fn generate_trace_with_groups(
    spec: &WorkloadSpec,
    topo: &Topology,
    groups: Option<&GroupAssignment>,
    horizon: u64,
) -> Result<Trace> {
    spec.validate(topo.max_capacity())?;
    match spec.model {
        WorkloadModel::Irm { .. } => {
            Ok(Trace::record(&IrmGenerator::new(spec, topo.node_count())?, horizon))
        }
        WorkloadModel::Snm(p) => {
            let owned;
            let groups = match groups {
                Some(g) => g,
                None => {
                    owned = GroupAssignment::for_topology(topo, p.group_size)?;
                    &owned
                }
            };
            Ok(SnmGenerator::build(spec, groups, horizon)?.into_trace())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn zipf_two_items() {
        let p = zipf_pmf(2, 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zipf_uniform_when_beta_zero() {
        let p = zipf_pmf(100, 0.0).unwrap();
        assert!(p.iter().all(|&x| (x - 0.01).abs() < 1e-15));
    }

    #[test]
    fn zipf_matches_direct_summation() {
        // oracle: std powf and a plain left-to-right sum
        let mut denom = 0.0f64;
        for m in 1..=100 {
            denom += (m as f64).powf(-0.6);
        }
        let p = zipf_pmf(100, 0.6).unwrap();
        assert!((p[0] - 1.0 / denom).abs() < 1e-12);
        for n in 1..=100usize {
            assert!((p[n - 1] - (n as f64).powf(-0.6) / denom).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn zipf_rejects_bad_input() {
        assert!(zipf_pmf(0, 1.0).is_err());
        assert!(zipf_pmf(10, -0.1).is_err());
    }

    fn irm_counts(n: usize, beta: f64, draws: usize, seed: u64) -> Vec<u64> {
        let spec = WorkloadSpec {
            requests: RequestCount::Fixed(draws as u32),
            ..WorkloadSpec::irm(n, beta, seed)
        };
        let gen = IrmGenerator::new(&spec, 1).unwrap();
        let mut counts = vec![0u64; n];
        for c in gen.cache_requests(0, 0) {
            counts[c as usize] += 1;
        }
        counts
    }

    #[test]
    fn irm_uniform_frequencies() {
        let counts = irm_counts(4, 0.0, 1_000_000, 11);
        for c in counts {
            assert!((c as f64 / 1e6 - 0.25).abs() < 0.002, "{c}");
        }
    }

    #[test]
    fn irm_head_frequency_within_three_standard_errors() {
        let p1 = zipf_pmf(100, 0.6).unwrap()[0];
        let counts = irm_counts(100, 0.6, 1_000_000, 5);
        let freq = counts[0] as f64 / 1e6;
        let se = (p1 * (1.0 - p1) / 1e6).sqrt();
        assert!((freq - p1).abs() < 3.0 * se, "freq {freq} p1 {p1}");
    }

    #[test]
    fn irm_chi_square_passes_at_one_in_a_thousand() {
        let pmf = zipf_pmf(100, 0.6).unwrap();
        let counts = irm_counts(100, 0.6, 1_000_000, 99);
        let stat: f64 = counts
            .iter()
            .zip(&pmf)
            .map(|(&o, &p)| {
                let e = p * 1e6;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let critical = ChiSquared::new(99.0).unwrap().inverse_cdf(0.999);
        assert!(stat < critical, "chi2 {stat} >= {critical}");
    }

    #[test]
    fn irm_batches_are_deterministic() {
        let spec = WorkloadSpec::irm(100, 0.6, 42);
        let gen = IrmGenerator::new(&spec, 16).unwrap();
        assert_eq!(gen.batch(17), gen.batch(17));
        let other = IrmGenerator::new(&spec, 16).unwrap();
        assert_eq!(gen.batch(3), other.batch(3));
        assert_ne!(gen.batch(3), gen.batch(4));
    }

    #[test]
    fn irm_poisson_request_count() {
        let spec = WorkloadSpec {
            requests: RequestCount::Poisson(2.0),
            ..WorkloadSpec::irm(50, 0.6, 3)
        };
        let gen = IrmGenerator::new(&spec, 1).unwrap();
        let total: usize = (0..20_000).map(|t| gen.cache_requests(0, t).len()).sum();
        let mean = total as f64 / 20_000.0;
        assert!((mean - 2.0).abs() < 0.05, "{mean}");
    }

    fn shot(arrival: f64, volume: f64, lifetime: f64) -> SnmContent {
        SnmContent {
            content: 0,
            arrival,
            volume,
            lifetime,
        }
    }

    #[test]
    fn intensity_profile() {
        let s = shot(10.0, 100.0, 50.0);
        assert_eq!(s.intensity(9.999), 0.0);
        assert!((s.intensity(10.0) - 2.0).abs() < 1e-15);
        assert!((s.intensity(60.0) - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((s.intensity(60.0) - 0.7358).abs() < 1e-4);
    }

    #[test]
    fn intensity_integrates_to_volume() {
        // midpoint-rule quadrature oracle on [τ, τ + 40ℓ]
        let s = shot(3.0, 120.0, 25.0);
        let h = 0.01;
        let steps = (40.0 * 25.0 / h) as usize;
        let quad: f64 = (0..steps)
            .map(|k| s.intensity(3.0 + (k as f64 + 0.5) * h) * h)
            .sum();
        assert!((quad - 120.0).abs() < 1e-3, "{quad}");
        assert!((s.expected_requests(0.0, 1e9) - 120.0).abs() < 1e-9);
        assert!((s.expected_requests(3.0, 28.0) - 120.0 * (1.0 - (-1.0f64).exp())).abs() < 1e-9);
        assert_eq!(s.expected_requests(0.0, 3.0), 0.0);
    }

    fn one_group(nodes: usize) -> GroupAssignment {
        GroupAssignment::from_groups(vec![(0..nodes).collect()], nodes).unwrap()
    }

    #[test]
    fn nothing_released_means_empty_batches() {
        let spec = WorkloadSpec::snm(10, SnmParams::default(), 1);
        let catalog = SnmCatalog {
            groups: vec![vec![SnmContent {
                content: 3,
                arrival: 50.0,
                volume: 30.0,
                lifetime: 10.0,
            }]],
        };
        let gen = SnmGenerator::new(&spec, &catalog, &one_group(2), 100).unwrap();
        for t in 0..50 {
            assert_eq!(gen.batch(t).total(), 0);
        }
        assert!((50..100).map(|t| gen.batch(t).total()).sum::<usize>() > 0);
    }

    #[test]
    fn single_shot_total_has_mean_volume() {
        let volume = 40.0;
        let seeds = 400u64;
        let mut sum = 0usize;
        for seed in 0..seeds {
            let spec = WorkloadSpec::snm(10, SnmParams::default(), seed);
            let catalog = SnmCatalog {
                groups: vec![vec![SnmContent {
                    content: 0,
                    arrival: 5.0,
                    volume,
                    lifetime: 20.0,
                }]],
            };
            let gen = SnmGenerator::new(&spec, &catalog, &one_group(1), 2000).unwrap();
            sum += gen.trace.request_count();
        }
        let mean = sum as f64 / seeds as f64;
        let sigma = (volume / seeds as f64).sqrt();
        assert!((mean - volume).abs() < 3.0 * sigma, "mean {mean}");
    }

    fn correlation(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn spatial_correlation_within_but_not_across_groups() {
        let params = SnmParams {
            volume_scale: 200.0,
            content_arrival_rate: 0.05,
            lifetime_min: 10.0,
            lifetime_max: 200.0,
            group_size: 2,
        };
        let spec = WorkloadSpec::snm(20, params, 8);
        let groups = GroupAssignment::from_groups(vec![vec![0, 1], vec![2, 3]], 4).unwrap();
        let horizon = 12_000;
        let gen = SnmGenerator::build(&spec, &groups, horizon).unwrap();
        // Per-content request counts per 50-step window at each cache; the
        // initial release, which every group shares at t = 0, is dropped.
        // Correlations are averaged over contents to tame burst noise.
        let windows = (horizon as usize - 2000) / 50;
        let mut series = vec![vec![vec![0.0; windows]; 4]; 20];
        for (t, cache, content) in gen.trace.rows() {
            if t >= 2000 {
                series[content as usize][cache][(t as usize - 2000) / 50] += 1.0;
            }
        }
        let mean = |f: &dyn Fn(&Vec<Vec<f64>>) -> f64| series.iter().map(f).sum::<f64>() / 20.0;
        let within = mean(&|s| correlation(&s[0], &s[1]));
        let across = mean(&|s| correlation(&s[0], &s[2]));
        assert!(within > 0.3, "within {within}");
        assert!(across.abs() < 0.1, "across {across}");
    }

    #[test]
    fn catalog_without_arrivals_is_the_initial_release() {
        let params = SnmParams {
            content_arrival_rate: 0.0,
            ..SnmParams::default()
        };
        let spec = WorkloadSpec::snm(100, params, 4);
        let catalog = spawn_contents(&spec, 3, 10_000).unwrap();
        for shots in &catalog.groups {
            assert_eq!(shots.len(), 100);
            assert!(shots.iter().all(|s| s.arrival == 0.0));
        }
    }

    #[test]
    fn degenerate_lifetime_range() {
        let params = SnmParams {
            lifetime_min: 77.0,
            lifetime_max: 77.0,
            ..SnmParams::default()
        };
        let spec = WorkloadSpec::snm(30, params, 4);
        let catalog = spawn_contents(&spec, 2, 1000).unwrap();
        assert!(catalog.groups.iter().flatten().all(|s| s.lifetime == 77.0));
    }

    #[test]
    fn volumes_follow_inverse_rank() {
        let spec = WorkloadSpec::snm(100, SnmParams::default(), 4);
        let catalog = spawn_contents(&spec, 1, 1000).unwrap();
        let v = |c: ContentId| catalog.groups[0].iter().find(|s| s.content == c).unwrap().volume;
        assert!((v(0) / v(1) - 2.0).abs() < 1e-12);
        for s in &catalog.groups[0] {
            assert!(s.lifetime >= 10.0 && s.lifetime <= 1000.0);
            assert!((s.volume - 400.0 / (s.content + 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn arrivals_follow_the_configured_rate() {
        let params = SnmParams {
            content_arrival_rate: 0.2,
            ..SnmParams::default()
        };
        let spec = WorkloadSpec::snm(100, params, 12);
        let catalog = spawn_contents(&spec, 4, 50_000).unwrap();
        for shots in &catalog.groups {
            let arrivals = shots.len() - 100;
            // Poisson(10_000): 5 sigma is 500
            assert!((arrivals as f64 - 10_000.0).abs() < 500.0, "{arrivals}");
        }
    }

    #[test]
    fn grid_blocks_grouping() {
        let topo = Topology::grid(4, 4, 10, 1, 0.2).unwrap();
        let g = GroupAssignment::for_topology(&topo, 4).unwrap();
        assert_eq!(g.group_count(), 4);
        assert_eq!(g.members(0), &[0, 1, 4, 5]);
        assert_eq!(g.members(3), &[10, 11, 14, 15]);
        let odd = Topology::grid(3, 3, 1, 1, 0.2).unwrap();
        let g = GroupAssignment::for_topology(&odd, 4).unwrap();
        assert_eq!(g.group_count(), 4);
        assert_eq!(g.members(3), &[8]);
        assert!(GroupAssignment::from_groups(vec![vec![0, 1], vec![1]], 2).is_err());
        assert!(GroupAssignment::from_groups(vec![vec![0]], 2).is_err());
    }

    #[test]
    fn trace_round_trip_and_restriction() {
        let rows = vec![(2, 1, 5), (0, 0, 1), (2, 1, 3), (0, 1, 2)];
        let trace = Trace::from_rows(2, 4, rows).unwrap();
        assert_eq!(trace.batch(0).requests, vec![vec![1], vec![2]]);
        assert_eq!(trace.batch(2).requests, vec![vec![], vec![5, 3]]);
        assert_eq!(trace.batch(3).total(), 0);
        let again = Trace::from_rows(2, 4, trace.rows().collect::<Vec<_>>()).unwrap();
        assert_eq!(trace, again);
        let solo = trace.single_cache(1);
        assert_eq!(solo.batch(2).requests, vec![vec![5, 3]]);
        assert!(Trace::from_rows(2, 4, vec![(0, 2, 1)]).is_err());
        assert!(Trace::from_rows(2, 4, vec![(4, 0, 1)]).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(WorkloadSpec::irm(100, 0.6, 0).validate(10).is_ok());
        assert!(WorkloadSpec::irm(100, 0.6, 0).validate(100).is_err());
        assert!(WorkloadSpec::irm(100, -1.0, 0).validate(10).is_err());
        let bad = SnmParams {
            lifetime_min: 20.0,
            lifetime_max: 10.0,
            ..SnmParams::default()
        };
        assert!(WorkloadSpec::snm(100, bad, 0).validate(10).is_err());
        let bad = SnmParams {
            group_size: 0,
            ..SnmParams::default()
        };
        assert!(WorkloadSpec::snm(100, bad, 0).validate(10).is_err());
    }
}
