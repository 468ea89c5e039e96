//! Running experiments: one trace per (config, seed) cell, every configured
//! policy on that same trace, per-cell result files and combined summaries.
//!
//! Output layout under the output directory:
//!
//! ```text
//! config.resolved.toml
//! summary.csv                  all (seed, policy) rows
//! summary_mean.csv             means over seeds
//! seed-<s>/summary_<policy>.csv
//! seed-<s>/timeseries_<policy>.csv
//! seed-<s>/bound.csv           when the bound is enabled
//! seed-<s>/trace.csv           with --save-trace
//! seed-<s>/checkpoint_<policy>.bin   with --checkpoint-every
//! seed-<s>/FAILED              error message, only when the cell failed
//! ```

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use comcache_core::bounds::{oub_hit_ratio, BoundReport, Partition};
use comcache_core::engine::Simulation;
use comcache_core::marl::LearnerStats;
use comcache_core::metrics::{effectiveness, RunMetrics, WindowRow};
use comcache_core::policies::build_policies;
use comcache_core::workload::{generate_trace_with_groups, RequestSource, Trace};

use crate::checkpoint::{self, Checkpoint, RunIdentity};
use crate::config::{load_with_overrides, BoundSpec, ExperimentConfig, Override, PolicySpec};
use crate::error::{Error, Result};
use crate::results::{self, Provenance, SummaryRow};
use crate::trace_io::{self, TraceBounds};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Concurrent cells; 0 means one.
    pub jobs: usize,
    pub overwrite: bool,
    pub quiet: bool,
    pub checkpoint_every: Option<u64>,
    pub save_trace: bool,
    /// A checkpoint file, or a directory searched for checkpoint files.
    pub resume: Option<PathBuf>,
}

/// Where the requests come from.
#[derive(Debug, Clone)]
pub enum TraceInput {
    Generate,
    /// A recorded trace, replayed for every seed.
    File(PathBuf),
}

/// Results of one policy on one trace, before any file is written.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub summary: SummaryRow,
    pub series: Vec<WindowRow>,
    pub stats: Option<LearnerStats>,
}

/// Everything one (config, seed) cell produced.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub seed: u64,
    pub trace_hash: String,
    pub runs: Vec<PolicyRun>,
    pub bound: Option<BoundReport>,
}

impl CellResult {
    pub fn run(&self, label: &str) -> Option<&PolicyRun> {
        self.runs.iter().find(|r| r.summary.provenance.policy == label)
    }

    pub fn hit_ratio(&self, label: &str) -> Option<f64> {
        self.run(label).and_then(|r| r.summary.hit_ratio)
    }
}

/// Hooks for one policy run: where to checkpoint and what to resume from.
#[derive(Debug, Default)]
struct RunControl<'a> {
    checkpoint: Option<(PathBuf, u64)>,
    resume: Option<&'a Checkpoint>,
}

pub fn load_trace(cfg: &ExperimentConfig, seed: u64, input: &TraceInput) -> Result<Trace> {
    match input {
        TraceInput::Generate => Ok(generate_trace_with_groups(
            &cfg.workload_for(seed),
            &cfg.topology,
            cfg.groups.as_ref(),
            cfg.horizon,
        )?),
        TraceInput::File(path) => trace_io::read_trace(
            path,
            TraceBounds {
                caches: cfg.topology.node_count(),
                library_size: cfg.workload.library_size,
                horizon: cfg.horizon,
            },
        ),
    }
}

pub fn compute_bound(cfg: &ExperimentConfig, spec: &BoundSpec, trace: &Trace) -> Result<BoundReport> {
    let partition = Partition::from_blocks(&cfg.topology, spec.blocks.clone())?;
    Ok(oub_hit_ratio(&partition, trace, &spec.config)?)
}

/// Runs one policy over `trace` from step 0, or from a checkpoint.
fn run_policy(
    cfg: &ExperimentConfig,
    policy: &PolicySpec,
    seed: u64,
    trace: &Trace,
    trace_hash: &str,
    control: RunControl<'_>,
) -> Result<PolicyRun> {
    if trace.cache_count() != cfg.topology.node_count() {
        return Err(comcache_core::Error::TraceMismatch(format!(
            "trace has {} caches, topology has {}",
            trace.cache_count(),
            cfg.topology.node_count()
        ))
        .into());
    }
    let identity = RunIdentity {
        config_hash: cfg.hash.clone(),
        seed,
        policy: policy.label.clone(),
        trace_hash: trace_hash.to_string(),
    };
    let policies = build_policies(&cfg.topology, &policy.kind, seed)?;
    let mut sim = Simulation::new(cfg.topology.clone(), policies, cfg.engine)?;
    let caches = cfg.topology.node_count();
    let mut metrics = match control.resume {
        Some(cp) => {
            if cp.identity != identity {
                return Err(Error::Checkpoint {
                    path: PathBuf::new(),
                    msg: format!("checkpoint is for {:?}, not {:?}", cp.identity, identity),
                });
            }
            cp.restore(&mut sim)?
        }
        None => RunMetrics::new(caches, cfg.burn_in, cfg.window)?,
    };
    for t in sim.next_step()..cfg.horizon {
        let record = sim.step(&trace.batch(t))?;
        metrics.record(&record);
        if let Some((path, every)) = &control.checkpoint {
            let done = t + 1;
            if done % every == 0 && done < cfg.horizon {
                checkpoint::save(path, &identity, &sim, &metrics)?;
            }
        }
    }
    let (acc, series) = metrics.finish(cfg.horizon);

    let mut stats: Option<LearnerStats> = None;
    let (mut q_states, mut q_entries) = (0u64, 0u64);
    for p in sim.policies() {
        if let Some(l) = p.learner() {
            stats.get_or_insert_with(LearnerStats::default).merge(&l.stats());
            q_states += l.q_table().state_count() as u64;
            q_entries += l.q_table().entry_count() as u64;
        }
    }
    let summary = SummaryRow {
        provenance: Provenance {
            config_hash: cfg.hash.clone(),
            seed,
            policy: policy.label.clone(),
            trace_hash: trace_hash.to_string(),
        },
        horizon: cfg.horizon,
        burn_in: cfg.burn_in,
        requests: acc.requests(),
        hit_ratio: acc.hit_ratio(),
        individual_hit_ratio_mean: acc.mean_individual_hit_ratio(),
        normalized_delay: acc.normalized_delay(),
        shared_link_rate: acc.shared_link_rate(),
        mean_reward: acc.mean_reward(),
        informed_share: stats.and_then(|s| s.informed_share()),
        q_states: stats.map(|_| q_states),
        q_entries: stats.map(|_| q_entries),
        bound_hit_ratio: None,
        effectiveness: None,
    };
    Ok(PolicyRun { summary, series, stats })
}

fn attach_bound(run: &mut PolicyRun, bound: &BoundReport) {
    let b = bound.hit_ratio();
    run.summary.bound_hit_ratio = b;
    run.summary.effectiveness = match (run.summary.hit_ratio, b) {
        (Some(h), Some(b)) => effectiveness(h, b).ok(),
        _ => None,
    };
}

/// Runs one (config, seed) cell in memory: one trace, every policy, and the
/// bound if enabled. Nothing is written.
pub fn run_cell(cfg: &ExperimentConfig, seed: u64, input: &TraceInput) -> Result<CellResult> {
    let trace = load_trace(cfg, seed, input)?;
    run_cell_on(cfg, seed, &trace)
}

pub fn run_cell_on(cfg: &ExperimentConfig, seed: u64, trace: &Trace) -> Result<CellResult> {
    let trace_hash = trace_io::trace_hash(trace);
    let bound = cfg.bound.as_ref().map(|b| compute_bound(cfg, b, trace)).transpose()?;
    let mut runs = Vec::with_capacity(cfg.policies.len());
    for p in &cfg.policies {
        let mut run = run_policy(cfg, p, seed, trace, &trace_hash, RunControl::default())?;
        if let Some(b) = &bound {
            attach_bound(&mut run, b);
        }
        runs.push(run);
    }
    Ok(CellResult {
        seed,
        trace_hash,
        runs,
        bound,
    })
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn checkpoint_path(dir: &Path, label: &str) -> PathBuf {
    dir.join(format!("checkpoint_{label}.bin"))
}

/// Runs a cell and writes its files into `seed-<s>/`.
fn run_seed_to_disk(
    cfg: &ExperimentConfig,
    seed: u64,
    input: &TraceInput,
    opts: &RunOptions,
    resume: &[Checkpoint],
) -> Result<Vec<SummaryRow>> {
    let dir = seed_dir(&cfg.output, seed);
    std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    let trace = load_trace(cfg, seed, input)?;
    let trace_hash = trace_io::trace_hash(&trace);
    if opts.save_trace {
        trace_io::write_trace(&dir.join("trace.csv"), &trace)?;
    }
    let bound = cfg.bound.as_ref().map(|b| compute_bound(cfg, b, &trace)).transpose()?;
    let mut rows = Vec::with_capacity(cfg.policies.len());
    for p in &cfg.policies {
        let control = RunControl {
            checkpoint: opts
                .checkpoint_every
                .filter(|&n| n > 0)
                .map(|n| (checkpoint_path(&dir, &p.label), n)),
            resume: resume.iter().find(|cp| {
                cp.identity.config_hash == cfg.hash && cp.identity.seed == seed && cp.identity.policy == p.label
            }),
        };
        if let Some(cp) = control.resume {
            if cp.identity.trace_hash != trace_hash {
                return Err(Error::Checkpoint {
                    path: checkpoint_path(&dir, &p.label),
                    msg: "checkpoint was taken on a different request trace".into(),
                });
            }
            note(opts, format!("seed {seed} {}: resuming at step {}", p.label, cp.next_step));
        }
        let mut run = run_policy(cfg, p, seed, &trace, &trace_hash, control)?;
        if let Some(b) = &bound {
            attach_bound(&mut run, b);
            if let Some(e) = run.summary.effectiveness.filter(|&e| e > 1.0) {
                eprintln!(
                    "warning: seed {seed} {}: effectiveness {e:.4} exceeds 1; the bound is not an upper bound here",
                    p.label
                );
            }
        }
        results::write_summary(&dir.join(format!("summary_{}.csv", p.label)), std::slice::from_ref(&run.summary))?;
        results::write_timeseries(
            &dir.join(format!("timeseries_{}.csv", p.label)),
            &run.summary.provenance,
            &run.series,
        )?;
        note(
            opts,
            format!(
                "seed {seed} {}: hit ratio {}, shared-link rate {}",
                p.label,
                results::num(run.summary.hit_ratio),
                results::num(run.summary.shared_link_rate)
            ),
        );
        rows.push(run.summary);
    }
    if let Some(b) = &bound {
        let prov = Provenance {
            config_hash: cfg.hash.clone(),
            seed,
            policy: "io-ub".into(),
            trace_hash: trace_hash.clone(),
        };
        results::write_bound(&dir.join("bound.csv"), &prov, b)?;
    }
    Ok(rows)
}

fn note(opts: &RunOptions, msg: String) {
    if !opts.quiet {
        eprintln!("{msg}");
    }
}

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = jobs.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no worker panicked holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked holding the lock")
        .into_iter()
        .map(|r| r.expect("every item was processed"))
        .collect()
}

/// Files the runner may create directly under an output directory.
const TOP_LEVEL_OUTPUTS: [&str; 4] = ["config.resolved.toml", "summary.csv", "summary_mean.csv", "sweep.csv"];

fn is_known_cell_file(name: &str) -> bool {
    name == "FAILED"
        || name == "trace.csv"
        || name == "bound.csv"
        || (name.starts_with("summary_") && name.ends_with(".csv"))
        || (name.starts_with("timeseries_") && name.ends_with(".csv"))
        || (name.starts_with("checkpoint_") && (name.ends_with(".bin") || name.ends_with(".tmp")))
}

fn is_seed_dir(name: &str) -> bool {
    name.strip_prefix("seed-").is_some_and(|s| s.parse::<u64>().is_ok())
}

/// Known result files under `out` (not recursing into unknown directories).
fn known_outputs(out: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let entries = match std::fs::read_dir(out) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(found),
        Err(e) => return Err(Error::io(out)(e)),
    };
    for entry in entries {
        let entry = entry.map_err(Error::io(out))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let path = entry.path();
        if TOP_LEVEL_OUTPUTS.contains(&name.as_str()) {
            found.push(path);
        } else if path.is_dir() && is_seed_dir(&name) {
            for inner in std::fs::read_dir(&path).map_err(Error::io(&path))? {
                let inner = inner.map_err(Error::io(&path))?;
                if is_known_cell_file(&inner.file_name().to_string_lossy()) {
                    found.push(inner.path());
                }
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Makes sure `out` holds no earlier results, deleting them if allowed.
/// Only files this tool writes are touched.
pub fn prepare_output(out: &Path, overwrite: bool) -> Result<()> {
    let existing = known_outputs(out)?;
    if !existing.is_empty() && !overwrite {
        return Err(Error::Output(format!(
            "{} already holds results (e.g. {}); pass --overwrite to replace them",
            out.display(),
            existing[0].display()
        )));
    }
    for f in &existing {
        std::fs::remove_file(f).map_err(Error::io(f))?;
    }
    // Seed directories left empty are ours too.
    if let Ok(entries) = std::fs::read_dir(out) {
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() && is_seed_dir(&entry.file_name().to_string_lossy()) {
                let _ = std::fs::remove_dir(&path);
            }
        }
    }
    std::fs::create_dir_all(out).map_err(Error::io(out))
}

/// Collects checkpoints from a file or every `checkpoint_*.bin` below a
/// directory.
pub fn collect_checkpoints(path: &Path) -> Result<Vec<Checkpoint>> {
    if path.is_file() {
        return Ok(vec![checkpoint::load(path)?]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(Error::io(path))? {
        let entry = entry.map_err(Error::io(path))?;
        if entry.path().is_dir() {
            for inner in std::fs::read_dir(entry.path()).map_err(Error::io(&entry.path()))? {
                let p = inner.map_err(Error::io(path))?.path();
                let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
                if name.starts_with("checkpoint_") && name.ends_with(".bin") {
                    files.push(p);
                }
            }
        }
    }
    files.sort();
    files.iter().map(|f| checkpoint::load(f)).collect()
}

/// Outcome of a whole experiment: rows of the cells that succeeded, in
/// seed order, plus the seeds that failed.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub rows: Vec<SummaryRow>,
    pub failed: Vec<(u64, String)>,
}

/// Runs every seed of `cfg` and writes all result files.
pub fn run_experiment(cfg: &ExperimentConfig, input: &TraceInput, opts: &RunOptions) -> Result<ExperimentOutcome> {
    let mut outcomes = run_many(std::slice::from_ref(cfg), input, opts)?;
    let outcome = outcomes.pop().expect("one config in, one outcome out");
    if !outcome.failed.is_empty() {
        return Err(Error::RunsFailed {
            failed: outcome.failed.len(),
            total: cfg.seeds.len(),
            out: cfg.output.clone(),
        });
    }
    Ok(outcome)
}

/// Runs several configs (sweep cells) with all their seeds sharing one job
/// pool. Each config writes into its own output directory.
pub fn run_many(cfgs: &[ExperimentConfig], input: &TraceInput, opts: &RunOptions) -> Result<Vec<ExperimentOutcome>> {
    // Read checkpoints before cleaning: they usually live in the output tree.
    let resume = match &opts.resume {
        Some(p) => collect_checkpoints(p)?,
        None => Vec::new(),
    };
    for cfg in cfgs {
        prepare_output(&cfg.output, opts.overwrite || opts.resume.is_some())?;
        let path = cfg.output.join("config.resolved.toml");
        std::fs::write(&path, cfg.resolved_toml()).map_err(Error::io(&path))?;
    }
    let jobs: Vec<(usize, u64)> = cfgs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results = parallel_map(&jobs, opts.jobs, |&(i, seed)| {
        let cfg = &cfgs[i];
        let r = run_seed_to_disk(cfg, seed, input, opts, &resume);
        if let Err(e) = &r {
            let dir = seed_dir(&cfg.output, seed);
            let _ = std::fs::create_dir_all(&dir);
            let _ = std::fs::write(dir.join("FAILED"), format!("{e}\n"));
            eprintln!("error: seed {seed}: {e}");
        }
        r
    });

    let mut outcomes: Vec<ExperimentOutcome> = cfgs.iter().map(|_| ExperimentOutcome::default()).collect();
    for (&(i, seed), r) in jobs.iter().zip(results) {
        match r {
            Ok(rows) => outcomes[i].rows.extend(rows),
            Err(e) => outcomes[i].failed.push((seed, e.to_string())),
        }
    }
    for (cfg, outcome) in cfgs.iter().zip(&outcomes) {
        results::write_summary(&cfg.output.join("summary.csv"), &outcome.rows)?;
        results::write_means(&cfg.output.join("summary_mean.csv"), &outcome.rows)?;
    }
    Ok(outcomes)
}

/// One sweep cell: a name like `topology.capacity=20` and its config.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub name: String,
    pub config: ExperimentConfig,
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Expands the cartesian product of `params` over the config at `path`.
/// Cells write under `<output>/<cell name>/`.
pub fn sweep_cells(
    path: &Path,
    base: &[Override],
    params: &[(String, Vec<toml::Value>)],
) -> Result<(PathBuf, Vec<SweepCell>)> {
    let root = load_with_overrides(path, base)?.output;
    let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for (key, values) in params {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let mut cells = Vec::with_capacity(combos.len());
    for combo in combos {
        let name = combo
            .iter()
            .map(|(k, v)| format!("{k}={}", value_label(v)))
            .collect::<Vec<_>>()
            .join(",");
        let mut overrides = base.to_vec();
        overrides.extend(combo.iter().map(|(k, v)| Override::new(k, v.clone())));
        overrides.push(Override::new(
            "output",
            toml::Value::String(root.join(&name).to_string_lossy().into_owned()),
        ));
        let config = load_with_overrides(path, &overrides)
            .map_err(|e| Error::config(format!("sweep cell {name}: {e}")))?;
        cells.push(SweepCell { name, config });
    }
    Ok((root, cells))
}

/// Runs every sweep cell and writes `<root>/sweep.csv` with all rows.
pub fn run_sweep(root: &Path, cells: &[SweepCell], input: &TraceInput, opts: &RunOptions) -> Result<Vec<ExperimentOutcome>> {
    prepare_output(root, opts.overwrite || opts.resume.is_some())?;
    let cfgs: Vec<ExperimentConfig> = cells.iter().map(|c| c.config.clone()).collect();
    let outcomes = run_many(&cfgs, input, opts)?;
    let rows: Vec<(String, SummaryRow)> = cells
        .iter()
        .zip(&outcomes)
        .flat_map(|(c, o)| o.rows.iter().map(move |r| (c.name.clone(), r.clone())))
        .collect();
    results::write_sweep(&root.join("sweep.csv"), &rows)?;
    let failed: usize = outcomes.iter().map(|o| o.failed.len()).sum();
    if failed > 0 {
        return Err(Error::RunsFailed {
            failed,
            total: cfgs.iter().map(|c| c.seeds.len()).sum(),
            out: root.to_path_buf(),
        });
    }
    Ok(outcomes)
}
