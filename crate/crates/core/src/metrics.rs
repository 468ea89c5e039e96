//! Evaluation quantities.
//!
//! Ratios with an empty denominator are `None` rather than 0, so they never
//! silently drag an average down.

use alloc::vec;
use alloc::vec::Vec;

use crate::codec::{Reader, Writer};
use crate::engine::{CacheTally, ServeOutcome, StepRecord};
use crate::error::{invalid, Error, Result};

/// Running counts, globally and per cache. Merging is associative and
/// commutative, so runs can be combined in any order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsAccumulator {
    per_cache: Vec<CacheTally>,
    reward_sum: f64,
    reward_count: u64,
    steps: u64,
}

fn ratio(num: f64, den: u64) -> Option<f64> {
    (den > 0).then(|| num / den as f64)
}

impl MetricsAccumulator {
    pub fn new(caches: usize) -> Self {
        Self {
            per_cache: vec![CacheTally::default(); caches],
            ..Self::default()
        }
    }

    pub fn add_outcome(&mut self, outcome: &ServeOutcome) {
        if self.per_cache.len() < outcome.per_cache.len() {
            self.per_cache.resize(outcome.per_cache.len(), CacheTally::default());
        }
        for (acc, t) in self.per_cache.iter_mut().zip(&outcome.per_cache) {
            acc.merge(t);
        }
        self.steps += 1;
    }

    pub fn add_record(&mut self, record: &StepRecord) {
        self.add_outcome(&record.outcome);
        self.reward_sum += record.rewards.iter().sum::<f64>();
        self.reward_count += record.rewards.len() as u64;
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        if self.per_cache.len() < other.per_cache.len() {
            self.per_cache.resize(other.per_cache.len(), CacheTally::default());
        }
        for (acc, t) in self.per_cache.iter_mut().zip(&other.per_cache) {
            acc.merge(t);
        }
        self.reward_sum += other.reward_sum;
        self.reward_count += other.reward_count;
        self.steps += other.steps;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn cache(&self, i: usize) -> &CacheTally {
        &self.per_cache[i]
    }

    pub fn cache_count(&self) -> usize {
        self.per_cache.len()
    }

    pub fn totals(&self) -> CacheTally {
        let mut t = CacheTally::default();
        for c in &self.per_cache {
            t.merge(c);
        }
        t
    }

    pub fn requests(&self) -> u64 {
        self.per_cache.iter().map(|c| c.requests).sum()
    }

    /// Share of requests served without the server.
    pub fn hit_ratio(&self) -> Option<f64> {
        let t = self.totals();
        ratio((t.own_hits + t.neighbor_hits) as f64, t.requests)
    }

    pub fn cache_hit_ratio(&self, i: usize) -> Option<f64> {
        let t = &self.per_cache[i];
        ratio((t.own_hits + t.neighbor_hits) as f64, t.requests)
    }

    /// Share of cache `i`'s requests served from its own storage.
    pub fn individual_hit_ratio(&self, i: usize) -> Option<f64> {
        let t = &self.per_cache[i];
        ratio(t.own_hits as f64, t.requests)
    }

    /// Unweighted mean of the defined per-cache individual hit ratios.
    pub fn mean_individual_hit_ratio(&self) -> Option<f64> {
        let defined: Vec<f64> = (0..self.per_cache.len())
            .filter_map(|i| self.individual_hit_ratio(i))
            .collect();
        ratio(defined.iter().sum(), defined.len() as u64)
    }

    /// Mean delay per request, in units of the server delay.
    pub fn normalized_delay(&self) -> Option<f64> {
        let t = self.totals();
        ratio(t.delay_sum, t.requests)
    }

    /// Share of requests sent over the shared server link.
    pub fn shared_link_rate(&self) -> Option<f64> {
        let t = self.totals();
        ratio(t.server_misses as f64, t.requests)
    }

    pub fn save(&self, w: &mut Writer) {
        w.len(self.per_cache.len());
        for t in &self.per_cache {
            for v in [t.requests, t.own_hits, t.neighbor_hits, t.server_misses] {
                w.u64(v);
            }
            w.f64(t.delay_sum);
            w.f64(t.neighbor_delay_sum);
            w.u64(t.served_for_neighbors);
            w.u64(t.neighbor_requests_reached);
        }
        w.f64(self.reward_sum);
        w.u64(self.reward_count);
        w.u64(self.steps);
    }

    pub fn load(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.len()?;
        let mut per_cache = Vec::with_capacity(n);
        for _ in 0..n {
            per_cache.push(CacheTally {
                requests: r.u64()?,
                own_hits: r.u64()?,
                neighbor_hits: r.u64()?,
                server_misses: r.u64()?,
                delay_sum: r.f64()?,
                neighbor_delay_sum: r.f64()?,
                served_for_neighbors: r.u64()?,
                neighbor_requests_reached: r.u64()?,
            });
        }
        Ok(Self {
            per_cache,
            reward_sum: r.f64()?,
            reward_count: r.u64()?,
            steps: r.u64()?,
        })
    }

    /// Mean per-agent reward per step.
    pub fn mean_reward(&self) -> Option<f64> {
        ratio(self.reward_sum, self.reward_count)
    }
}

/// `scheme / bound`. Values above 1 mean the bound was not an upper bound
/// for this instance; callers should report them.
pub fn effectiveness(scheme_hit_ratio: f64, bound_hit_ratio: f64) -> Result<f64> {
    if bound_hit_ratio.is_nan() || bound_hit_ratio <= 0.0 {
        return Err(invalid("effectiveness needs a positive bound"));
    }
    Ok(scheme_hit_ratio / bound_hit_ratio)
}

/// One row of the time series, covering steps `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub start: u64,
    pub end: u64,
    pub requests: u64,
    pub hit_ratio: Option<f64>,
    pub individual_hit_ratio_mean: Option<f64>,
    pub normalized_delay: Option<f64>,
    pub shared_link_rate: Option<f64>,
}

impl WindowRow {
    fn from_acc(start: u64, end: u64, acc: &MetricsAccumulator) -> Self {
        Self {
            start,
            end,
            requests: acc.requests(),
            hit_ratio: acc.hit_ratio(),
            individual_hit_ratio_mean: acc.mean_individual_hit_ratio(),
            normalized_delay: acc.normalized_delay(),
            shared_link_rate: acc.shared_link_rate(),
        }
    }
}

/// Summary after burn-in plus a fixed-window time series over every step.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    burn_in: u64,
    window: u64,
    caches: usize,
    summary: MetricsAccumulator,
    current: MetricsAccumulator,
    current_start: u64,
    next_step: u64,
    rows: Vec<WindowRow>,
}

/// Default burn-in: the first tenth of the horizon.
pub fn default_burn_in(horizon: u64) -> u64 {
    horizon / 10
}

impl RunMetrics {
    pub fn new(caches: usize, burn_in: u64, window: u64) -> Result<Self> {
        if window == 0 {
            return Err(invalid("time-series window must be at least one step"));
        }
        Ok(Self {
            burn_in,
            window,
            caches,
            summary: MetricsAccumulator::new(caches),
            current: MetricsAccumulator::new(caches),
            current_start: 0,
            next_step: 0,
            rows: Vec::new(),
        })
    }

    /// Resumes a series at `step` (after a checkpoint restore).
    pub fn starting_at(mut self, step: u64) -> Self {
        self.current_start = step - step % self.window;
        self.next_step = step;
        self
    }

    pub fn record(&mut self, rec: &StepRecord) {
        while rec.step >= self.current_start + self.window {
            self.flush(self.current_start + self.window);
        }
        self.current.add_record(rec);
        if rec.step >= self.burn_in {
            self.summary.add_record(rec);
        }
        self.next_step = rec.step + 1;
    }

    fn flush(&mut self, end: u64) {
        let acc = core::mem::replace(&mut self.current, MetricsAccumulator::new(self.caches));
        if end > self.current_start {
            self.rows.push(WindowRow::from_acc(self.current_start, end, &acc));
        }
        self.current_start = end;
    }

    /// Closes the last (possibly partial) window at `horizon`.
    pub fn finish(mut self, horizon: u64) -> (MetricsAccumulator, Vec<WindowRow>) {
        while self.current_start < horizon {
            let end = (self.current_start + self.window).min(horizon);
            self.flush(end);
        }
        (self.summary, self.rows)
    }

    pub fn summary(&self) -> &MetricsAccumulator {
        &self.summary
    }

    pub fn save(&self, w: &mut Writer) {
        w.u64(self.burn_in);
        w.u64(self.window);
        w.len(self.caches);
        self.summary.save(w);
        self.current.save(w);
        w.u64(self.current_start);
        w.u64(self.next_step);
        w.len(self.rows.len());
        for row in &self.rows {
            w.u64(row.start);
            w.u64(row.end);
            w.u64(row.requests);
            for v in [row.hit_ratio, row.individual_hit_ratio_mean, row.normalized_delay, row.shared_link_rate] {
                match v {
                    Some(x) => {
                        w.u8(1);
                        w.f64(x);
                    }
                    None => w.u8(0),
                }
            }
        }
    }

    pub fn load(r: &mut Reader<'_>) -> Result<Self> {
        let burn_in = r.u64()?;
        let window = r.u64()?;
        let caches = r.u64()? as usize;
        let summary = MetricsAccumulator::load(r)?;
        let current = MetricsAccumulator::load(r)?;
        let current_start = r.u64()?;
        let next_step = r.u64()?;
        let n = r.len()?;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let (start, end, requests) = (r.u64()?, r.u64()?, r.u64()?);
            let mut opt = || -> Result<Option<f64>> {
                match r.u8()? {
                    0 => Ok(None),
                    1 => Ok(Some(r.f64()?)),
                    x => Err(Error::Malformed(alloc::format!("bad option tag {x}"))),
                }
            };
            rows.push(WindowRow {
                start,
                end,
                requests,
                hit_ratio: opt()?,
                individual_hit_ratio_mean: opt()?,
                normalized_delay: opt()?,
                shared_link_rate: opt()?,
            });
        }
        if window == 0 {
            return Err(Error::Malformed("zero time-series window".into()));
        }
        Ok(Self {
            burn_in,
            window,
            caches,
            summary,
            current,
            current_start,
            next_step,
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn acc(tallies: &[(u64, u64, u64, u64, f64)]) -> MetricsAccumulator {
        let outcome = ServeOutcome {
            served: Vec::new(),
            link_usage: Vec::new(),
            per_cache: tallies
                .iter()
                .map(|&(r, o, n, s, d)| CacheTally {
                    requests: r,
                    own_hits: o,
                    neighbor_hits: n,
                    server_misses: s,
                    delay_sum: d,
                    ..CacheTally::default()
                })
                .collect(),
        };
        let mut a = MetricsAccumulator::new(tallies.len());
        a.add_outcome(&outcome);
        a
    }

    #[test]
    fn hit_ratio_examples() {
        assert_eq!(acc(&[(4, 4, 0, 0, 0.0)]).hit_ratio(), Some(1.0));
        assert_eq!(acc(&[(4, 0, 0, 4, 4.0)]).hit_ratio(), Some(0.0));
        let a = acc(&[(10, 5, 2, 3, 3.4)]);
        assert!((a.hit_ratio().unwrap() - 0.7).abs() < 1e-12);
        assert!((a.shared_link_rate().unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(acc(&[(0, 0, 0, 0, 0.0)]).hit_ratio(), None);
    }

    #[test]
    fn individual_hit_ratio_split() {
        let a = acc(&[(4, 0, 4, 0, 0.8), (2, 1, 0, 1, 1.0)]);
        assert_eq!(a.individual_hit_ratio(0), Some(0.0));
        assert_eq!(a.cache_hit_ratio(0), Some(1.0));
        assert_eq!(a.individual_hit_ratio(1), Some(0.5));
        assert_eq!(a.mean_individual_hit_ratio(), Some(0.25));
        let isolated = acc(&[(5, 3, 0, 2, 2.0)]);
        assert_eq!(isolated.individual_hit_ratio(0), isolated.cache_hit_ratio(0));
    }

    #[test]
    fn delay_examples() {
        assert_eq!(acc(&[(3, 0, 0, 3, 3.0)]).normalized_delay(), Some(1.0));
        assert_eq!(acc(&[(3, 3, 0, 0, 0.0)]).normalized_delay(), Some(0.0));
        let half = acc(&[(4, 0, 2, 2, 2.0 + 2.0 * 0.2)]);
        assert!((half.normalized_delay().unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn effectiveness_examples() {
        assert_eq!(effectiveness(0.5, 0.5).unwrap(), 1.0);
        assert!((effectiveness(0.4, 0.5).unwrap() - 0.8).abs() < 1e-12);
        assert!(effectiveness(0.4, 0.0).is_err());
    }

    fn record(step: u64, own: u64, server: u64) -> StepRecord {
        StepRecord {
            step,
            contents: Vec::new(),
            requests: Vec::new(),
            actions: Vec::new(),
            outcome: ServeOutcome {
                per_cache: vec![CacheTally {
                    requests: own + server,
                    own_hits: own,
                    server_misses: server,
                    delay_sum: server as f64,
                    ..CacheTally::default()
                }],
                ..ServeOutcome::default()
            },
            rewards: vec![0.0],
        }
    }

    #[test]
    fn windows_partition_the_horizon() {
        let mut m = RunMetrics::new(1, 3, 4).unwrap();
        for t in 0..10 {
            m.record(&record(t, 1, t % 2));
        }
        let (summary, rows) = m.finish(10);
        let bounds: Vec<(u64, u64)> = rows.iter().map(|r| (r.start, r.end)).collect();
        assert_eq!(bounds, vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(summary.steps(), 7);
        assert_eq!(rows[0].requests, 6);
    }

    #[test]
    fn metrics_survive_a_checkpoint() {
        let mut m = RunMetrics::new(1, 2, 3).unwrap();
        for t in 0..5 {
            m.record(&record(t, 1, 1));
        }
        let mut w = Writer::new();
        m.save(&mut w);
        let bytes = w.into_bytes();
        let mut restored = RunMetrics::load(&mut Reader::new(&bytes)).unwrap();
        for t in 5..8 {
            m.record(&record(t, 0, 1));
            restored.record(&record(t, 0, 1));
        }
        let (a, ra) = m.finish(8);
        let (b, rb) = restored.finish(8);
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn empty_run_has_empty_markers() {
        let (summary, rows) = RunMetrics::new(2, 0, 5).unwrap().finish(0);
        assert!(rows.is_empty());
        assert_eq!(summary.hit_ratio(), None);
        assert_eq!(summary.normalized_delay(), None);
        assert_eq!(summary.mean_individual_hit_ratio(), None);
    }

    fn tally() -> impl Strategy<Value = (u64, u64, u64, u64, f64)> {
        (0u64..50, 0u64..50, 0u64..50).prop_map(|(o, n, s)| (o + n + s, o, n, s, n as f64 * 0.2 + s as f64))
    }

    proptest! {
        #[test]
        fn complements_and_weighting(ts in proptest::collection::vec(tally(), 1..6)) {
            let a = acc(&ts);
            if let (Some(h), Some(s)) = (a.hit_ratio(), a.shared_link_rate()) {
                prop_assert!((h + s - 1.0).abs() < 1e-12);
                let weighted: f64 = (0..ts.len())
                    .filter_map(|i| a.cache_hit_ratio(i).map(|r| r * a.cache(i).requests as f64))
                    .sum::<f64>() / a.requests() as f64;
                prop_assert!((weighted - h).abs() < 1e-12);
            }
        }

        #[test]
        fn merge_is_order_free(x in proptest::collection::vec(tally(), 3), y in proptest::collection::vec(tally(), 3)) {
            let (a, b) = (acc(&x), acc(&y));
            let mut ab = a.clone();
            ab.merge(&b);
            let mut ba = b.clone();
            ba.merge(&a);
            prop_assert_eq!(ab.totals().requests, ba.totals().requests);
            prop_assert_eq!(ab.hit_ratio(), ba.hit_ratio());
        }

        #[test]
        fn delay_falls_with_local_hits(o in 0u64..20, n in 0u64..20, s in 1u64..20) {
            let before = acc(&[(o + n + s, o, n, s, n as f64 * 0.2 + s as f64)]);
            // one server miss becomes a local hit
            let after = acc(&[(o + n + s, o + 1, n, s - 1, n as f64 * 0.2 + (s - 1) as f64)]);
            prop_assert!(after.normalized_delay() <= before.normalized_delay());
        }
    }
}
