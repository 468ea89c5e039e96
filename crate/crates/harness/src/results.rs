//! Result CSVs. Every row starts with the same provenance columns so any row
//! can be traced back to its config, seed, policy, build and request trace.
//! Undefined ratios (empty denominators) are written as `NA`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use comcache_core::bounds::BoundReport;
use comcache_core::metrics::WindowRow;

use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const NA: &str = "NA";

const PROVENANCE: [&str; 5] = ["config_hash", "seed", "policy", "version", "trace_hash"];

pub const SUMMARY_COLUMNS: [&str; 14] = [
    "horizon",
    "burn_in",
    "requests",
    "hit_ratio",
    "individual_hit_ratio_mean",
    "normalized_delay",
    "shared_link_rate",
    "mean_reward",
    "informed_share",
    "q_states",
    "q_entries",
    "bound_hit_ratio",
    "effectiveness",
    "effectiveness_warning",
];

pub const TIMESERIES_COLUMNS: [&str; 7] = [
    "step_window",
    "window_end",
    "requests",
    "hit_ratio",
    "individual_hit_ratio_mean",
    "normalized_delay",
    "shared_link_rate",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub policy: String,
    pub trace_hash: String,
}

impl Provenance {
    fn fields(&self) -> [String; 5] {
        [
            self.config_hash.clone(),
            self.seed.to_string(),
            self.policy.clone(),
            VERSION.to_string(),
            self.trace_hash.clone(),
        ]
    }
}

/// Post-burn-in figures of one (config, seed, policy) run.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub provenance: Provenance,
    pub horizon: u64,
    pub burn_in: u64,
    pub requests: u64,
    pub hit_ratio: Option<f64>,
    pub individual_hit_ratio_mean: Option<f64>,
    pub normalized_delay: Option<f64>,
    pub shared_link_rate: Option<f64>,
    pub mean_reward: Option<f64>,
    /// Learners only: share of greedy decisions that had a scored action.
    pub informed_share: Option<f64>,
    pub q_states: Option<u64>,
    pub q_entries: Option<u64>,
    pub bound_hit_ratio: Option<f64>,
    pub effectiveness: Option<f64>,
}

impl SummaryRow {
    fn record(&self) -> Vec<String> {
        let mut r: Vec<String> = self.provenance.fields().into();
        r.extend([
            self.horizon.to_string(),
            self.burn_in.to_string(),
            self.requests.to_string(),
            num(self.hit_ratio),
            num(self.individual_hit_ratio_mean),
            num(self.normalized_delay),
            num(self.shared_link_rate),
            num(self.mean_reward),
            num(self.informed_share),
            int(self.q_states),
            int(self.q_entries),
            num(self.bound_hit_ratio),
            num(self.effectiveness),
            // A ratio above 1 means the bound was not optimistic enough for
            // this instance.
            match self.effectiveness {
                Some(e) if e > 1.0 => "bound_exceeded".into(),
                Some(_) => "none".into(),
                None => NA.into(),
            },
        ]);
        r
    }
}

pub fn num(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn int(v: Option<u64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(Error::io(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(Error::io(path))
}

fn header(extra: &[&str]) -> Vec<String> {
    PROVENANCE.iter().chain(extra).map(|s| s.to_string()).collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(header(&SUMMARY_COLUMNS))?;
    for row in rows {
        w.write_record(row.record())?;
    }
    finish(w, path)
}

/// Summary rows of a sweep, each prefixed by the name of its cell.
pub fn write_sweep(path: &Path, rows: &[(String, SummaryRow)]) -> Result<()> {
    let mut w = create(path)?;
    let mut head = vec!["cell".to_string()];
    head.extend(header(&SUMMARY_COLUMNS));
    w.write_record(head)?;
    for (cell, row) in rows {
        let mut r = vec![cell.clone()];
        r.extend(row.record());
        w.write_record(r)?;
    }
    finish(w, path)
}

pub fn write_timeseries(path: &Path, provenance: &Provenance, rows: &[WindowRow]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(header(&TIMESERIES_COLUMNS))?;
    for row in rows {
        let mut r: Vec<String> = provenance.fields().into();
        r.extend([
            row.start.to_string(),
            row.end.to_string(),
            row.requests.to_string(),
            num(row.hit_ratio),
            num(row.individual_hit_ratio_mean),
            num(row.normalized_delay),
            num(row.shared_link_rate),
        ]);
        w.write_record(r)?;
    }
    finish(w, path)
}

/// Per-block, per-window detail of the upper bound, plus one `all` row with
/// the request-weighted total.
pub fn write_bound(path: &Path, provenance: &Provenance, report: &BoundReport) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(header(&["block_id", "window", "requests", "hits", "hit_ratio", "exact"]))?;
    let prefix: Vec<String> = provenance.fields().into();
    for d in &report.details {
        let mut r = prefix.clone();
        r.extend([
            d.block.to_string(),
            d.window.to_string(),
            d.requests.to_string(),
            d.hits.to_string(),
            num(d.hit_ratio()),
            d.exact.to_string(),
        ]);
        w.write_record(r)?;
    }
    let mut r = prefix;
    r.extend([
        "all".into(),
        "all".into(),
        report.requests.to_string(),
        report.hits.to_string(),
        num(report.hit_ratio()),
        report.details.iter().all(|d| d.exact).to_string(),
    ]);
    w.write_record(r)?;
    finish(w, path)
}

pub fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Means over seeds, one row per (config, policy) in first-seen order. The
/// `seeds` column counts the runs averaged.
pub fn write_means(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let k = (r.provenance.config_hash.as_str(), r.provenance.policy.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut w = create(path)?;
    w.write_record([
        "config_hash",
        "policy",
        "version",
        "seeds",
        "hit_ratio",
        "individual_hit_ratio_mean",
        "normalized_delay",
        "shared_link_rate",
        "mean_reward",
        "effectiveness",
    ])?;
    for (hash, policy) in keys {
        let group: Vec<&SummaryRow> = rows
            .iter()
            .filter(|r| r.provenance.config_hash == hash && r.provenance.policy == policy)
            .collect();
        let m = |f: fn(&SummaryRow) -> Option<f64>| num(mean(group.iter().map(|r| f(r))));
        w.write_record([
            hash.to_string(),
            policy.to_string(),
            VERSION.to_string(),
            group.len().to_string(),
            m(|r| r.hit_ratio),
            m(|r| r.individual_hit_ratio_mean),
            m(|r| r.normalized_delay),
            m(|r| r.shared_link_rate),
            m(|r| r.mean_reward),
            m(|r| r.effectiveness),
        ])?;
    }
    finish(w, path)
}

/// Writes `bytes` through a temporary sibling and a rename, so a crash never
/// leaves a half-written file under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(Error::io(&tmp))?;
    f.write_all(bytes).map_err(Error::io(&tmp))?;
    f.sync_all().map_err(Error::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(Error::io(path))
}
