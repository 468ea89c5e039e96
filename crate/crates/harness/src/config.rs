//! Experiment configuration: a strict TOML grammar, default resolution and
//! validation. The grammar is documented in the repository README.
//!
//! A config goes through three forms: the raw file ([`ConfigFile`], every
//! field optional), the resolved file (same type, every default written out)
//! and the typed [`ExperimentConfig`] the runner consumes. The resolved form
//! is what gets emitted next to results and hashed.

use std::path::{Path, PathBuf};

use comcache_core::bounds::BoundConfig;
use comcache_core::engine::{EngineConfig, LinkPricing, RewardWeights};
use comcache_core::marl::LearnerConfig;
use comcache_core::metrics::default_burn_in;
use comcache_core::policies::{LearnerSpec, LfuConfig, LfuMode, PolicyKind};
use comcache_core::topology::{Link, Topology};
use comcache_core::workload::{GroupAssignment, RequestCount, SnmParams, WorkloadModel, WorkloadSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_HORIZON: u64 = 200_000;
pub const DEFAULT_OUTPUT: &str = "results";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeseries_window: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_hit_delay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<OneOrMany>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learner: Option<LearnerFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lfu: Option<LfuFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bw: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacities: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<LinkFile>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkFile {
    pub a: usize,
    pub b: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bw: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub library_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zipf_beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requests_per_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request_distribution: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<usize>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snm: Option<SnmFile>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnmFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lifetime_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lifetime_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub volume_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub content_arrival_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_size: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_hit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_delay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_coop: Option<f64>,
    /// `"i"`: neighbor transfers are free in the reward; `"ii"`: they cost
    /// the link delay.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_q_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_cap: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LfuFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_footprint: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_budget: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<Vec<usize>>>,
}

/// One policy column of an experiment: the label used in outputs plus the
/// fully parameterized kind.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub label: String,
    pub kind: PolicyKind,
}

#[derive(Debug, Clone)]
pub struct BoundSpec {
    pub config: BoundConfig,
    pub blocks: Vec<Vec<usize>>,
}

/// A validated experiment with every default materialized.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub resolved: ConfigFile,
    /// Hash of the resolved config without `seeds` and `output`, so that a
    /// (config, seed) cell has the same identity however it was launched.
    pub hash: String,
    pub horizon: u64,
    pub burn_in: u64,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub window: u64,
    pub engine: EngineConfig,
    pub topology: Topology,
    /// Seed-free workload; [`ExperimentConfig::workload_for`] adds the seed.
    pub workload: WorkloadSpec,
    pub groups: Option<GroupAssignment>,
    pub policies: Vec<PolicySpec>,
    pub bound: Option<BoundSpec>,
}

impl ExperimentConfig {
    pub fn workload_for(&self, seed: u64) -> WorkloadSpec {
        WorkloadSpec { seed, ..self.workload }
    }

    pub fn resolved_toml(&self) -> String {
        to_toml(&self.resolved)
    }

    /// The configured bound, or the default one when the config leaves it
    /// disabled (used by the stand-alone `bound` command).
    pub fn bound_or_default(&self) -> Result<BoundSpec> {
        match &self.bound {
            Some(b) => Ok(b.clone()),
            None => {
                let file = BoundFile {
                    enabled: Some(true),
                    ..BoundFile::default()
                };
                let (_, spec) = resolve_bound(file, &self.topology, self.burn_in)?;
                Ok(spec.expect("enabled bound resolves to a spec"))
            }
        }
    }
}

/// Parses and validates a config text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_with_overrides(text, &[])
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    load_with_overrides(path, &[])
}

pub fn load_with_overrides(path: &Path, overrides: &[Override]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    parse_with_overrides(&text, overrides)
        .map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
}

/// A dotted-path assignment applied to the raw config before resolution,
/// e.g. `topology.capacity = 20`.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: String,
    pub value: toml::Value,
}

impl Override {
    pub fn new(path: &str, value: toml::Value) -> Self {
        Self {
            path: path.to_string(),
            value,
        }
    }
}

/// Parses one `key=value` item; the value is read as a TOML literal and
/// falls back to a bare string.
pub fn parse_value(text: &str) -> toml::Value {
    let text = text.trim();
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

/// Splits `path=v1,v2,...` into the path and its values.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<toml::Value>)> {
    let (path, list) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("sweep parameter `{spec}` must look like path=v1,v2,...")))?;
    let path = path.trim();
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::config(format!("bad sweep path `{path}`")));
    }
    let values: Vec<toml::Value> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(parse_value)
        .collect();
    if values.is_empty() {
        return Err(Error::config(format!("sweep parameter `{path}` has no values")));
    }
    Ok((path.to_string(), values))
}

/// Parses `--seeds`: a comma list whose items are seeds or `a..b` ranges.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || Error::config(format!("bad seed `{item}`"));
        if let Some((a, b)) = item.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if a >= b {
                return Err(bad());
            }
            seeds.extend(a..b);
        } else {
            seeds.push(item.parse().map_err(|_| bad())?);
        }
    }
    Ok(seeds)
}

pub fn parse_with_overrides(text: &str, overrides: &[Override]) -> Result<ExperimentConfig> {
    // Parse the text as written first, so syntax and unknown-key errors
    // carry the file's line and column.
    let raw: ConfigFile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    if overrides.is_empty() {
        return resolve(raw);
    }
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    for o in overrides {
        set_path(&mut table, &o.path, o.value.clone())?;
    }
    let raw: ConfigFile = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(format!("after overrides: {}", e.message())))?;
    resolve(raw)
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::config("empty override path"))?;
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override path `{path}`: `{part}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

pub fn to_toml(file: &ConfigFile) -> String {
    toml::to_string(file).expect("config values are representable in TOML")
}

fn config_hash(resolved: &ConfigFile) -> String {
    let identity = ConfigFile {
        seeds: None,
        output: None,
        ..resolved.clone()
    };
    let digest = Sha256::digest(to_toml(&identity).as_bytes());
    hex::encode(&digest[..8])
}

fn positive(name: &str, v: u64) -> Result<u64> {
    if v == 0 {
        return Err(Error::config(format!("{name} must be at least 1")));
    }
    Ok(v)
}

/// Fills defaults, validates every invariant and builds the typed config.
pub fn resolve(raw: ConfigFile) -> Result<ExperimentConfig> {
    let cfg = |e: comcache_core::Error| Error::config(e.to_string());

    let horizon = positive("horizon", raw.horizon.unwrap_or(DEFAULT_HORIZON))?;
    let burn_in = raw.burn_in.unwrap_or_else(|| default_burn_in(horizon));
    if burn_in >= horizon {
        return Err(Error::config(format!("burn_in {burn_in} must be smaller than the horizon {horizon}")));
    }
    let seeds = raw.seeds.clone().unwrap_or_else(|| vec![0]);
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let mut seen = seeds.clone();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("seeds must be distinct"));
    }
    let output = raw.output.clone().unwrap_or_else(|| DEFAULT_OUTPUT.to_string());
    let window = positive("timeseries_window", raw.timeseries_window.unwrap_or(1000))?;
    let local_hit_delay = raw.local_hit_delay.unwrap_or(0.0);
    if !(0.0..=1.0).contains(&local_hit_delay) {
        return Err(Error::config("local_hit_delay must lie in [0, 1]"));
    }

    let (workload_file, workload) = resolve_workload(raw.workload.clone().unwrap_or_default())?;
    let (topology_file, topology) = resolve_topology(raw.topology.clone().unwrap_or_default(), workload.library_size)?;
    workload.validate(topology.max_capacity()).map_err(cfg)?;
    let groups = match &workload_file.groups {
        Some(g) => Some(GroupAssignment::from_groups(g.clone(), topology.node_count()).map_err(cfg)?),
        None => match workload.model {
            WorkloadModel::Snm(p) => Some(GroupAssignment::for_topology(&topology, p.group_size).map_err(cfg)?),
            WorkloadModel::Irm { .. } => None,
        },
    };

    let (reward_file, weights) = resolve_reward(raw.reward.clone().unwrap_or_default())?;
    let (learner_file, learner) = resolve_learner(raw.learner.clone().unwrap_or_default())?;
    let (lfu_file, lfu) = resolve_lfu(raw.lfu.clone().unwrap_or_default())?;

    let names = match raw.policy.clone() {
        None => return Err(Error::config("no policy given; set policy = \"lru\" or a list")),
        Some(OneOrMany::One(p)) => vec![p],
        Some(OneOrMany::Many(ps)) => ps,
    };
    if names.is_empty() {
        return Err(Error::config("policy list is empty"));
    }
    let mut policies = Vec::with_capacity(names.len());
    for name in &names {
        if policies.iter().any(|p: &PolicySpec| &p.label == name) {
            return Err(Error::config(format!("policy `{name}` listed twice")));
        }
        let spec = |pricing| LearnerSpec {
            config: learner,
            weights: RewardWeights { pricing, ..weights },
        };
        let kind = match name.as_str() {
            "lru" => PolicyKind::Lru,
            "lfu" => PolicyKind::Lfu(lfu),
            "iql" => PolicyKind::Iql(spec(weights.pricing)),
            "comcache" => PolicyKind::ComCache(spec(weights.pricing)),
            "comcache-i" => PolicyKind::ComCache(spec(LinkPricing::Free)),
            "comcache-ii" => PolicyKind::ComCache(spec(LinkPricing::Costed)),
            other => {
                return Err(Error::config(format!(
                    "unknown policy `{other}` (expected lru, lfu, iql, comcache, comcache-i or comcache-ii)"
                )))
            }
        };
        policies.push(PolicySpec {
            label: name.clone(),
            kind,
        });
    }

    let (bound_file, bound) = resolve_bound(raw.bound.clone().unwrap_or_default(), &topology, burn_in)?;

    let resolved = ConfigFile {
        horizon: Some(horizon),
        burn_in: Some(burn_in),
        seeds: Some(seeds.clone()),
        output: Some(output.clone()),
        timeseries_window: Some(window),
        local_hit_delay: Some(local_hit_delay),
        policy: Some(OneOrMany::Many(names)),
        topology: Some(topology_file),
        workload: Some(workload_file),
        reward: Some(reward_file),
        learner: Some(learner_file),
        lfu: Some(lfu_file),
        bound: Some(bound_file),
    };
    Ok(ExperimentConfig {
        hash: config_hash(&resolved),
        resolved,
        horizon,
        burn_in,
        seeds,
        output: PathBuf::from(output),
        window,
        engine: EngineConfig { local_hit_delay },
        topology,
        workload,
        groups,
        policies,
        bound,
    })
}

/// Default link bandwidth: a tenth of the cache capacity, at least 1.
fn default_bw(capacity: usize) -> u32 {
    (capacity / 10).max(1) as u32
}

fn resolve_topology(t: TopologyFile, library_size: usize) -> Result<(TopologyFile, Topology)> {
    let cfg = |e: comcache_core::Error| Error::config(format!("topology: {e}"));
    let link_cost = t.link_cost.unwrap_or(0.2);
    match t.kind.as_deref().unwrap_or("grid") {
        "grid" => {
            if t.capacities.is_some() || t.links.is_some() {
                return Err(Error::config("topology: capacities/links need kind = \"explicit\""));
            }
            let rows = t.rows.unwrap_or(4);
            let cols = t.cols.unwrap_or(4);
            let capacity = t.capacity.unwrap_or((library_size / 10).max(1));
            let bw = t.bw.unwrap_or_else(|| default_bw(capacity));
            let topo = Topology::grid(rows, cols, capacity, bw, link_cost).map_err(cfg)?;
            let file = TopologyFile {
                kind: Some("grid".into()),
                rows: Some(rows),
                cols: Some(cols),
                capacity: Some(capacity),
                bw: Some(bw),
                link_cost: Some(link_cost),
                capacities: None,
                links: None,
            };
            Ok((file, topo))
        }
        "explicit" => {
            if t.rows.is_some() || t.cols.is_some() {
                return Err(Error::config("topology: rows/cols only apply to kind = \"grid\""));
            }
            let capacities = match (t.capacities, t.capacity) {
                (Some(_), Some(_)) => {
                    return Err(Error::config("topology: give either capacities or capacity, not both"))
                }
                (Some(c), None) => c,
                (None, _) => return Err(Error::config("topology: explicit topologies need a capacities list")),
            };
            let max_cap = capacities.iter().copied().max().unwrap_or(0);
            let bw = t.bw.unwrap_or_else(|| default_bw(max_cap));
            let links: Vec<LinkFile> = t
                .links
                .unwrap_or_default()
                .into_iter()
                .map(|l| LinkFile {
                    bw: Some(l.bw.unwrap_or(bw)),
                    cost: Some(l.cost.unwrap_or(link_cost)),
                    ..l
                })
                .collect();
            let topo = Topology::new(
                capacities.clone(),
                links
                    .iter()
                    .map(|l| Link::new(l.a, l.b, l.bw.unwrap_or(bw), l.cost.unwrap_or(link_cost)))
                    .collect(),
            )
            .map_err(cfg)?;
            let file = TopologyFile {
                kind: Some("explicit".into()),
                capacities: Some(capacities),
                links: Some(links),
                ..TopologyFile::default()
            };
            Ok((file, topo))
        }
        other => Err(Error::config(format!(
            "topology: unknown kind `{other}` (expected grid or explicit)"
        ))),
    }
}

fn resolve_workload(w: WorkloadFile) -> Result<(WorkloadFile, WorkloadSpec)> {
    let library_size = w.library_size.unwrap_or(100);
    match w.model.as_deref().unwrap_or("irm") {
        "irm" => {
            if w.snm.is_some() || w.groups.is_some() {
                return Err(Error::config("workload: snm settings and groups need model = \"snm\""));
            }
            let zipf_beta = w.zipf_beta.unwrap_or(0.6);
            let per_step = w.requests_per_step.unwrap_or(1.0);
            let dist = w.request_distribution.unwrap_or_else(|| "fixed".into());
            let requests = match dist.as_str() {
                "fixed" => {
                    if !(per_step >= 0.0 && per_step.fract() == 0.0 && per_step <= u32::MAX as f64) {
                        return Err(Error::config(format!(
                            "workload: requests_per_step {per_step} must be a whole number for a fixed distribution"
                        )));
                    }
                    RequestCount::Fixed(per_step as u32)
                }
                "poisson" => RequestCount::Poisson(per_step),
                other => {
                    return Err(Error::config(format!(
                        "workload: unknown request_distribution `{other}` (expected fixed or poisson)"
                    )))
                }
            };
            let spec = WorkloadSpec {
                requests,
                ..WorkloadSpec::irm(library_size, zipf_beta, 0)
            };
            let file = WorkloadFile {
                model: Some("irm".into()),
                library_size: Some(library_size),
                zipf_beta: Some(zipf_beta),
                requests_per_step: Some(per_step),
                request_distribution: Some(dist),
                groups: None,
                snm: None,
            };
            Ok((file, spec))
        }
        "snm" => {
            if w.zipf_beta.is_some() || w.requests_per_step.is_some() || w.request_distribution.is_some() {
                return Err(Error::config(
                    "workload: zipf_beta and request settings only apply to model = \"irm\"",
                ));
            }
            let s = w.snm.unwrap_or_default();
            let d = SnmParams::default();
            let params = SnmParams {
                lifetime_min: s.lifetime_min.unwrap_or(d.lifetime_min),
                lifetime_max: s.lifetime_max.unwrap_or(d.lifetime_max),
                volume_scale: s.volume_scale.unwrap_or(d.volume_scale),
                content_arrival_rate: s.content_arrival_rate.unwrap_or(d.content_arrival_rate),
                group_size: s.group_size.unwrap_or(d.group_size),
            };
            let file = WorkloadFile {
                model: Some("snm".into()),
                library_size: Some(library_size),
                groups: w.groups,
                snm: Some(SnmFile {
                    lifetime_min: Some(params.lifetime_min),
                    lifetime_max: Some(params.lifetime_max),
                    volume_scale: Some(params.volume_scale),
                    content_arrival_rate: Some(params.content_arrival_rate),
                    group_size: Some(params.group_size),
                }),
                ..WorkloadFile::default()
            };
            Ok((file, WorkloadSpec::snm(library_size, params, 0)))
        }
        other => Err(Error::config(format!("workload: unknown model `{other}` (expected irm or snm)"))),
    }
}

fn resolve_reward(r: RewardFile) -> Result<(RewardFile, RewardWeights)> {
    let d = RewardWeights::default();
    let variant = r.variant.unwrap_or_else(|| "ii".into());
    let pricing = match variant.as_str() {
        "i" => LinkPricing::Free,
        "ii" => LinkPricing::Costed,
        other => return Err(Error::config(format!("reward: unknown variant `{other}` (expected i or ii)"))),
    };
    let weights = RewardWeights {
        w_hit: r.w_hit.unwrap_or(d.w_hit),
        w_delay: r.w_delay.unwrap_or(d.w_delay),
        w_coop: r.w_coop.unwrap_or(d.w_coop),
        pricing,
    };
    weights.validate().map_err(|e| Error::config(format!("reward: {e}")))?;
    let file = RewardFile {
        w_hit: Some(weights.w_hit),
        w_delay: Some(weights.w_delay),
        w_coop: Some(weights.w_coop),
        variant: Some(variant),
    };
    Ok((file, weights))
}

fn resolve_learner(l: LearnerFile) -> Result<(LearnerFile, LearnerConfig)> {
    let d = LearnerConfig::default();
    let c = LearnerConfig {
        gamma: l.gamma.unwrap_or(d.gamma),
        alpha0: l.alpha0.unwrap_or(d.alpha0),
        omega: l.omega.unwrap_or(d.omega),
        epsilon0: l.epsilon0.unwrap_or(d.epsilon0),
        epsilon_decay: l.epsilon_decay.unwrap_or(d.epsilon_decay),
        epsilon_min: l.epsilon_min.unwrap_or(d.epsilon_min),
        state_q_cap: l.state_q_cap.unwrap_or(d.state_q_cap),
        action_cap: l.action_cap.unwrap_or(d.action_cap),
    };
    c.validate().map_err(|e| Error::config(format!("learner: {e}")))?;
    let file = LearnerFile {
        gamma: Some(c.gamma),
        alpha0: Some(c.alpha0),
        omega: Some(c.omega),
        epsilon0: Some(c.epsilon0),
        epsilon_decay: Some(c.epsilon_decay),
        epsilon_min: Some(c.epsilon_min),
        state_q_cap: Some(c.state_q_cap),
        action_cap: Some(c.action_cap),
    };
    Ok((file, c))
}

fn resolve_lfu(l: LfuFile) -> Result<(LfuFile, LfuConfig)> {
    let d = LfuConfig::default();
    let window = positive("lfu.window", l.window.unwrap_or(d.window))?;
    let mode_name = l.mode.unwrap_or_else(|| "exact".into());
    let mode = match mode_name.as_str() {
        "exact" => LfuMode::Exact,
        "decay" => LfuMode::Decay,
        other => return Err(Error::config(format!("lfu: unknown mode `{other}` (expected exact or decay)"))),
    };
    let file = LfuFile {
        window: Some(window),
        mode: Some(mode_name),
    };
    Ok((file, LfuConfig { window, mode }))
}

fn resolve_bound(b: BoundFile, topo: &Topology, burn_in: u64) -> Result<(BoundFile, Option<BoundSpec>)> {
    let enabled = b.enabled.unwrap_or(false);
    if !enabled {
        return Ok((
            BoundFile {
                enabled: Some(false),
                ..BoundFile::default()
            },
            None,
        ));
    }
    let d = BoundConfig::default();
    let config = BoundConfig {
        window: positive("bound.window", b.window.unwrap_or(d.window))?,
        start: b.start.unwrap_or(burn_in),
        exact_footprint: b.exact_footprint.unwrap_or(d.exact_footprint),
        exact_budget: b.exact_budget.unwrap_or(d.exact_budget),
    };
    let blocks = match b.blocks {
        Some(blocks) => blocks,
        None => {
            let partition = comcache_core::bounds::partition_grid(topo)
                .map_err(|e| Error::config(format!("bound: {e}; give explicit blocks")))?;
            partition.blocks().to_vec()
        }
    };
    comcache_core::bounds::Partition::from_blocks(topo, blocks.clone())
        .map_err(|e| Error::config(format!("bound: {e}")))?;
    let file = BoundFile {
        enabled: Some(true),
        window: Some(config.window),
        start: Some(config.start),
        exact_footprint: Some(config.exact_footprint),
        exact_budget: Some(config.exact_budget),
        blocks: Some(blocks.clone()),
    };
    Ok((file, Some(BoundSpec { config, blocks })))
}
