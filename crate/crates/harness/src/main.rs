use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use comcache::checkpoint;
use comcache::config::{load_with_overrides, parse_seeds, parse_sweep, ExperimentConfig, Override};
use comcache::experiment::{self, RunOptions, TraceInput};
use comcache::results::{self, Provenance};
use comcache::trace_io;
use comcache::{Error, Result};
use comcache_core::engine::Simulation;
use comcache_core::policies::build_policies;

#[derive(Parser, Debug)]
#[command(name = "comcache", version, about = "Cooperative edge-cache placement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a trace per seed and run every configured policy on it.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run every configured policy on a recorded trace (once per seed).
    Replay {
        trace: PathBuf,
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compute the upper bound on a recorded trace.
    Bound {
        trace: PathBuf,
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Check a config and print it with every default filled in.
    Validate { config: PathBuf },
    /// Run a grid of configs, e.g. `--param topology.capacity=10,20,30`.
    Sweep {
        config: PathBuf,
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the largest learned values of a checkpoint as CSV.
    DumpQ {
        checkpoint: PathBuf,
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Seeds to run, e.g. `0..5` or `1,4,9`; replaces the config's list.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory; replaces the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace results already present in the output directory.
    #[arg(long)]
    overwrite: bool,
    /// Continue from a checkpoint file, or from every checkpoint in a directory.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
    /// Cells run concurrently.
    #[arg(long, env = "COMCACHE_JOBS")]
    jobs: Option<usize>,
    /// Write a checkpoint every N steps.
    #[arg(long, value_name = "N")]
    checkpoint_every: Option<u64>,
    /// Also write each seed's request trace.
    #[arg(long)]
    save_trace: bool,
}

impl Common {
    fn overrides(&self) -> Result<Vec<Override>> {
        let mut o = Vec::new();
        if let Some(s) = &self.seeds {
            let seeds = parse_seeds(s)?;
            o.push(Override::new(
                "seeds",
                toml::Value::Array(seeds.into_iter().map(|s| toml::Value::Integer(s as i64)).collect()),
            ));
        }
        if let Some(out) = &self.out {
            o.push(Override::new("output", toml::Value::String(out.to_string_lossy().into_owned())));
        }
        Ok(o)
    }

    fn options(&self) -> RunOptions {
        let jobs = self
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        RunOptions {
            jobs,
            overwrite: self.overwrite,
            quiet: self.quiet,
            checkpoint_every: self.checkpoint_every,
            save_trace: self.save_trace,
            resume: self.resume.clone(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, common } => {
            let cfg = load_with_overrides(&config, &common.overrides()?)?;
            experiment::run_experiment(&cfg, &TraceInput::Generate, &common.options())?;
            Ok(())
        }
        Command::Replay { trace, config, common } => {
            let cfg = load_with_overrides(&config, &common.overrides()?)?;
            experiment::run_experiment(&cfg, &TraceInput::File(trace), &common.options())?;
            Ok(())
        }
        Command::Bound {
            trace,
            config,
            out,
            overwrite,
            quiet,
        } => bound(&trace, &config, out, overwrite, quiet),
        Command::Validate { config } => {
            let cfg = load_with_overrides(&config, &[])?;
            print!("{}", cfg.resolved_toml());
            Ok(())
        }
        Command::Sweep { config, params, common } => {
            let params = params.iter().map(|p| parse_sweep(p)).collect::<Result<Vec<_>>>()?;
            let (root, cells) = experiment::sweep_cells(&config, &common.overrides()?, &params)?;
            experiment::run_sweep(&root, &cells, &TraceInput::Generate, &common.options())?;
            Ok(())
        }
        Command::DumpQ { checkpoint, config, top } => dump_q(&checkpoint, &config, top),
    }
}

fn bound(trace: &Path, config: &Path, out: Option<PathBuf>, overwrite: bool, quiet: bool) -> Result<()> {
    let mut overrides = Vec::new();
    if let Some(out) = &out {
        overrides.push(Override::new("output", toml::Value::String(out.to_string_lossy().into_owned())));
    }
    let cfg = load_with_overrides(config, &overrides)?;
    let spec = cfg.bound_or_default()?;
    let trace = experiment::load_trace(&cfg, cfg.seeds[0], &TraceInput::File(trace.to_path_buf()))?;
    let report = experiment::compute_bound(&cfg, &spec, &trace)?;
    let path = cfg.output.join("bound.csv");
    if path.exists() && !overwrite {
        return Err(Error::Output(format!(
            "{} exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::Io {
        path: cfg.output.clone(),
        source: e,
    })?;
    let prov = Provenance {
        config_hash: cfg.hash.clone(),
        seed: cfg.seeds[0],
        policy: "io-ub".into(),
        trace_hash: trace_io::trace_hash(&trace),
    };
    results::write_bound(&path, &prov, &report)?;
    if !quiet {
        eprintln!("wrote {}", path.display());
    }
    println!("{}", results::num(report.hit_ratio()));
    Ok(())
}

fn dump_q(path: &Path, config: &Path, top: usize) -> Result<()> {
    let cfg: ExperimentConfig = load_with_overrides(config, &[])?;
    let cp = checkpoint::load(path)?;
    if cp.identity.config_hash != cfg.hash {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!("taken under config {}, not {}", cp.identity.config_hash, cfg.hash),
        });
    }
    let spec = cfg
        .policies
        .iter()
        .find(|p| p.label == cp.identity.policy)
        .ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!("policy `{}` is not in the config", cp.identity.policy),
        })?;
    let policies = build_policies(&cfg.topology, &spec.kind, cp.identity.seed)?;
    let mut sim = Simulation::new(cfg.topology.clone(), policies, cfg.engine)?;
    cp.restore(&mut sim)?;

    let mut entries = Vec::new();
    for (agent, p) in sim.policies().iter().enumerate() {
        if let Some(l) = p.learner() {
            entries.extend(l.q_table().entries().map(|(s, c)| (agent, s, *c)));
        }
    }
    entries.sort_by(|a, b| {
        b.2.value
            .abs()
            .total_cmp(&a.2.value.abs())
            .then((a.0, a.1, a.2.own, a.2.neighbors).cmp(&(b.0, b.1, b.2.own, b.2.neighbors)))
    });
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let io = |e: std::io::Error| Error::Output(e.to_string());
    writeln!(out, "agent,state_key,action_key,q_value,visits").map_err(io)?;
    for (agent, state, cell) in entries.into_iter().take(top) {
        writeln!(
            out,
            "{agent},{state:032x},{}:{:016x},{},{}",
            cell.own, cell.neighbors, cell.value, cell.visits
        )
        .map_err(io)?;
    }
    Ok(())
}
