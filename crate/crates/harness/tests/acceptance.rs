//! End-to-end acceptance checks. Each test prints one verdict line:
//!
//! ```text
//! cargo test -p comcache --test acceptance -- --nocapture --test-threads 1
//! ```
//!
//! The desk-scale experiments are shared through `OnceLock`s, so the first
//! test touching them pays for the runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use comcache::config::{parse_config, ExperimentConfig};
use comcache::experiment::{parallel_map, run_cell, CellResult, TraceInput};
use comcache_core::codec::{Reader, Writer};
use comcache_core::engine::{reward, serve, CacheNode, EngineConfig, RewardWeights, Simulation, StepRecord};
use comcache_core::marl::{gamma_prob, q_update, select_action, theta, ActionSpace, GammaCounts, QTable, TabularLearner};
use comcache_core::policies::{
    build_policies, build_policy, AgentView, LearnerSpec, Lfu, LfuConfig, LfuMode, Lru, PlacementPolicy, PolicyKind,
};
use comcache_core::rng::stream_rng;
use comcache_core::topology::Topology;
use comcache_core::workload::{
    zipf_pmf, GroupAssignment, IrmGenerator, RequestBatch, SnmGenerator, SnmParams, Trace, WorkloadSpec,
};
use comcache_core::{ContentId, Result as CoreResult};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const ALL: [&str; 4] = ["comcache", "iql", "lru", "lfu"];

fn verdict(n: u32, ok: bool, details: String) {
    println!("criterion {n:>2}: {} — {details}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n}: {details}");
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn desk_config(rows: usize, cols: usize, capacity: usize, model: &str, policies: &[&str], horizon: u64, bound: bool) -> ExperimentConfig {
    let list = policies.iter().map(|p| format!("\"{p}\"")).collect::<Vec<_>>().join(", ");
    let text = format!(
        r#"
policy = [{list}]
horizon = {horizon}
seeds = [0, 1, 2, 3, 4]

[topology]
rows = {rows}
cols = {cols}
capacity = {capacity}

[workload]
model = "{model}"
library_size = 100

[bound]
enabled = {bound}
"#
    );
    parse_config(&text).expect("desk config parses")
}

fn run_seeds(cfg: &ExperimentConfig) -> Vec<CellResult> {
    parallel_map(&SEEDS, jobs(), |&s| run_cell(cfg, s, &TraceInput::Generate).expect("cell runs"))
}

/// 4×4 grid, N = 100, M = 10, BW = 1, shot-noise, 2·10⁵ steps, with the bound.
fn desk_snm() -> &'static [CellResult] {
    static R: OnceLock<Vec<CellResult>> = OnceLock::new();
    R.get_or_init(|| run_seeds(&desk_config(4, 4, 10, "snm", &ALL, 200_000, true)))
}

fn desk_irm() -> &'static [CellResult] {
    static R: OnceLock<Vec<CellResult>> = OnceLock::new();
    R.get_or_init(|| run_seeds(&desk_config(4, 4, 10, "irm", &["comcache", "iql"], 200_000, false)))
}

fn small_snm() -> &'static [CellResult] {
    static R: OnceLock<Vec<CellResult>> = OnceLock::new();
    R.get_or_init(|| run_seeds(&desk_config(2, 2, 10, "snm", &ALL, 200_000, true)))
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn hit(cells: &[CellResult], label: &str) -> Vec<f64> {
    cells.iter().map(|c| c.hit_ratio(label).expect("post-burn-in requests")).collect()
}

fn fmt(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}

#[test]
fn criterion_01_policy_ordering() {
    let cells = desk_snm();
    let m: Vec<f64> = ALL.iter().map(|p| mean(hit(cells, p))).collect();
    let ordered = m[0] > m[1] && m[1] > m[2] && m[2] > m[3];
    let margin = m[0] - m[1];
    verdict(
        1,
        ordered && margin >= 0.05,
        format!(
            "mean hit ratio comcache {:.4}, iql {:.4}, lru {:.4}, lfu {:.4}; comcache − iql = {:+.4} (need > iql > lru > lfu and ≥ 0.05)",
            m[0], m[1], m[2], m[3], margin
        ),
    );
}

#[test]
fn criterion_02_server_load() {
    let rates: Vec<f64> = desk_snm()
        .iter()
        .map(|c| c.run("comcache").unwrap().summary.shared_link_rate.unwrap())
        .collect();
    let good = rates.iter().filter(|&&r| r <= 0.60).count();
    verdict(
        2,
        good >= 4,
        format!("comcache shared-link rate per seed [{}]; {good}/5 seeds ≤ 0.60 (need ≥ 4)", fmt(&rates)),
    );
}

#[test]
fn criterion_03_gap_larger_under_shot_noise() {
    let gap = |cells: &[CellResult]| -> Vec<f64> {
        hit(cells, "comcache").iter().zip(hit(cells, "iql")).map(|(a, b)| a - b).collect()
    };
    let snm = gap(desk_snm());
    let irm = gap(desk_irm());
    let wins = snm.iter().zip(&irm).filter(|(s, i)| s > i).count();
    // one-sided sign test: 5 of 5 gives p = 1/32
    verdict(
        3,
        wins == SEEDS.len(),
        format!(
            "comcache − iql gap per seed: snm [{}], irm [{}]; snm larger in {wins}/5 (need 5/5)",
            fmt(&snm),
            fmt(&irm)
        ),
    );
}

#[test]
fn criterion_04_capacity_monotonicity() {
    let caps = [10usize, 20, 30, 40, 50];
    let results: Vec<Vec<CellResult>> = caps
        .iter()
        .map(|&m| run_seeds(&desk_config(4, 4, m, "snm", &ALL, 50_000, false)))
        .collect();
    let mut ok = true;
    let mut lines = Vec::new();
    for p in ALL {
        let h: Vec<f64> = results.iter().map(|r| mean(hit(r, p))).collect();
        let d: Vec<f64> = results
            .iter()
            .map(|r| mean(r.iter().map(|c| c.run(p).unwrap().summary.normalized_delay.unwrap())))
            .collect();
        let mono = h.windows(2).all(|w| w[1] >= w[0] - 0.01) && d.windows(2).all(|w| w[1] <= w[0] + 0.01);
        ok &= mono;
        lines.push(format!("{p} hit [{}] delay [{}]", fmt(&h), fmt(&d)));
    }
    verdict(
        4,
        ok,
        format!("capacity 10..50 at 5·10⁴ steps, 5 seeds: {}", lines.join("; ")),
    );
}

fn records<S: comcache_core::workload::RequestSource>(mut sim: Simulation, source: &S, horizon: u64) -> Vec<StepRecord> {
    let mut out = Vec::new();
    sim.run(source, horizon, |r| out.push(r.clone())).unwrap();
    out
}

#[test]
fn criterion_05_isolation_equivalence() {
    let horizon = 20_000;
    let topo = Topology::grid(2, 2, 3, 0, 0.2).unwrap();
    let spec = WorkloadSpec::irm(20, 0.8, 11);
    let trace = Trace::record(&IrmGenerator::new(&spec, 4).unwrap(), horizon);
    let spec = LearnerSpec::default();
    let kinds = [PolicyKind::ComCache(spec), PolicyKind::Iql(spec)];
    let seed = 5;
    let runs: Vec<Vec<StepRecord>> = kinds
        .iter()
        .map(|k| {
            let sim = Simulation::new(topo.clone(), build_policies(&topo, k, seed).unwrap(), EngineConfig::default()).unwrap();
            records(sim, &trace, horizon)
        })
        .collect();
    let joint_equal = runs[0] == runs[1];

    let mut single_equal = true;
    for kind in &kinds {
        for i in 0..4 {
            let one = Topology::grid(1, 1, 3, 0, 0.2).unwrap();
            let policy = build_policy(kind, 3, seed, i as u64).unwrap();
            let sim = Simulation::new(one, vec![policy], EngineConfig::default()).unwrap();
            let solo = records(sim, &trace.single_cache(i), horizon);
            single_equal &= solo.iter().zip(&runs[0]).all(|(s, j)| {
                s.contents[0] == j.contents[i]
                    && s.actions[0] == j.actions[i]
                    && s.rewards[0].to_bits() == j.rewards[i].to_bits()
                    && s.outcome.per_cache[0] == j.outcome.per_cache[i]
            });
        }
    }
    let changed = runs[0].windows(2).filter(|w| w[0].actions != w[1].actions).count();
    verdict(
        5,
        joint_equal && single_equal,
        format!(
            "bw = 0, 2×2, {horizon} steps ({changed} placement changes): comcache ≡ iql {joint_equal}, each ≡ 4 single-cache runs {single_equal}"
        ),
    );
}

/// Greedy readout of a trained learner: no exploration, no updates.
#[derive(Debug)]
struct Greedy {
    learner: TabularLearner,
    weights: RewardWeights,
}

impl PlacementPolicy for Greedy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn reward_weights(&self) -> RewardWeights {
        self.weights
    }

    fn observe(&mut self, _: &AgentView<'_>) -> CoreResult<()> {
        Ok(())
    }

    fn decide(&mut self, view: &AgentView<'_>) -> CoreResult<Vec<ContentId>> {
        Ok(self.learner.greedy(view))
    }

    fn save(&self, _: &mut Writer) {}

    fn load(&mut self, _: &mut Reader<'_>) -> CoreResult<()> {
        Ok(())
    }
}

/// Two caches that swap two contents every step.
fn tiny_requests(step: u64) -> Vec<Vec<ContentId>> {
    if step % 2 == 0 {
        vec![vec![0], vec![1]]
    } else {
        vec![vec![1], vec![0]]
    }
}

type TinyState = (Vec<ContentId>, Vec<ContentId>, u64);

fn tiny_reward(topo: &Topology, s: &TinyState, w: &RewardWeights) -> f64 {
    let caches = vec![
        CacheNode::with_contents(0, 1, s.0.clone()).unwrap(),
        CacheNode::with_contents(1, 1, s.1.clone()).unwrap(),
    ];
    let batch = RequestBatch {
        step: s.2,
        requests: tiny_requests(s.2),
    };
    let out = serve(&batch, &caches, topo, 0.0).unwrap();
    (reward(&out, 0, w) + reward(&out, 1, w)) / 2.0
}

/// Placements of one cache with capacity 1: any single content of `φ ∪ q`.
fn singles(contents: &[ContentId], requests: &[ContentId]) -> Vec<Vec<ContentId>> {
    let mut pool: Vec<ContentId> = contents.iter().chain(requests).copied().collect();
    pool.sort_unstable();
    pool.dedup();
    if pool.is_empty() {
        vec![Vec::new()]
    } else {
        pool.into_iter().map(|c| vec![c]).collect()
    }
}

fn tiny_successors(s: &TinyState) -> Vec<TinyState> {
    let q = tiny_requests(s.2);
    let mut out = Vec::new();
    for a in singles(&s.0, &q[0]) {
        for b in singles(&s.1, &q[1]) {
            out.push((a.clone(), b, 1 - s.2));
        }
    }
    out
}

/// Every stationary deterministic joint policy, followed from `path`'s last
/// state, ends in a cycle; returns the best cycle mean and how many policies
/// (distinct lassos) were evaluated.
fn best_lasso(path: &mut Vec<TinyState>, value: &dyn Fn(&TinyState) -> f64) -> (f64, u64) {
    let mut best = f64::NEG_INFINITY;
    let mut count = 0;
    for next in tiny_successors(path.last().unwrap()) {
        if let Some(pos) = path.iter().position(|s| *s == next) {
            let cycle = &path[pos..];
            best = best.max(cycle.iter().map(value).sum::<f64>() / cycle.len() as f64);
            count += 1;
        } else {
            path.push(next);
            let (b, c) = best_lasso(path, value);
            path.pop();
            best = best.max(b);
            count += c;
        }
    }
    (best, count)
}

#[test]
fn criterion_06_tiny_dec_mdp() {
    let started = std::time::Instant::now();
    let topo = Topology::grid(1, 2, 1, 1, 0.2).unwrap();
    let weights = RewardWeights::default();
    let (optimum, lassos) = best_lasso(&mut vec![(vec![], vec![], 0)], &|s| tiny_reward(&topo, s, &weights));

    let (train, settle, readout) = (100_000u64, 100u64, 1_000u64);
    let end = train + settle + readout;
    let rows = (0..end).flat_map(|t| {
        let q = tiny_requests(t);
        [(t, 0, q[0][0]), (t, 1, q[1][0])]
    });
    let trace = Trace::from_rows(2, end, rows).unwrap();
    let kind = PolicyKind::ComCache(LearnerSpec {
        weights,
        ..LearnerSpec::default()
    });
    let mut sim = Simulation::new(topo.clone(), build_policies(&topo, &kind, 0).unwrap(), EngineConfig::default()).unwrap();
    sim.run(&trace, train, |_| {}).unwrap();

    let greedy: Vec<Box<dyn PlacementPolicy>> = sim
        .policies()
        .iter()
        .map(|p| {
            Box::new(Greedy {
                learner: p.learner().expect("learning policy").clone(),
                weights,
            }) as Box<dyn PlacementPolicy>
        })
        .collect();
    let mut probe = Simulation::new(topo, greedy, EngineConfig::default()).unwrap();
    probe.restore(sim.caches().to_vec(), train).unwrap();
    let mut total = 0.0;
    let mut last = Vec::new();
    probe
        .run(&trace, end, |r| {
            if r.step >= train + settle {
                total += r.rewards.iter().sum::<f64>() / 2.0;
                last = r.actions.clone();
            }
        })
        .unwrap();
    let achieved = total / readout as f64;
    let secs = started.elapsed().as_secs_f64();
    verdict(
        6,
        achieved >= 0.95 * optimum && secs < 30.0,
        format!(
            "optimal average reward {optimum:.4} over {lassos} stationary joint policies; greedy readout after {train} steps {achieved:.4} ({:.1}%), final placement {last:?}, {secs:.1} s",
            100.0 * achieved / optimum
        ),
    );
}

#[test]
fn criterion_07_workload_statistics() {
    // Zipf against a direct summation
    let mut zipf_err: f64 = 0.0;
    for n in [1usize, 2, 100, 1000] {
        for beta in [0.0, 0.6, 1.0, 1.7] {
            let norm: f64 = (1..=n).map(|m| (m as f64).powf(-beta)).sum();
            for (i, p) in zipf_pmf(n, beta).unwrap().iter().enumerate() {
                zipf_err = zipf_err.max((p - ((i + 1) as f64).powf(-beta) / norm).abs());
            }
        }
    }
    let two = zipf_pmf(2, 1.0).unwrap();
    let zipf_ok = zipf_err <= 1e-12 && (two[0] - 2.0 / 3.0).abs() <= 1e-12;

    // IRM frequencies, Pearson chi-square at the 0.001 level
    let (n, draws) = (100usize, 1_000_000u64);
    let generator = IrmGenerator::new(&WorkloadSpec::irm(n, 0.6, 2024), 1).unwrap();
    let mut counts = vec![0u64; n];
    for t in 0..draws {
        for c in generator.cache_requests(0, t) {
            counts[c as usize] += 1;
        }
    }
    let pmf = zipf_pmf(n, 0.6).unwrap();
    let chi2: f64 = counts
        .iter()
        .zip(&pmf)
        .map(|(&o, p)| {
            let e = p * draws as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new((n - 1) as f64).unwrap().inverse_cdf(0.999);
    let chi_ok = chi2 < critical;

    // Shot-noise totals: one cache, every content released once at t = 0
    let (library, runs, horizon) = (10usize, 30u64, 20_000u64);
    let params = SnmParams {
        content_arrival_rate: 0.0,
        group_size: 1,
        ..SnmParams::default()
    };
    let groups = GroupAssignment::from_groups(vec![vec![0]], 1).unwrap();
    let mut totals = vec![0u64; library];
    for seed in 0..runs {
        let spec = WorkloadSpec::snm(library, params, seed);
        let trace = SnmGenerator::build(&spec, &groups, horizon).unwrap().into_trace();
        for (_, _, c) in trace.rows() {
            totals[c as usize] += 1;
        }
    }
    let worst_z = totals
        .iter()
        .enumerate()
        .map(|(i, &got)| {
            let expected = runs as f64 * params.volume_scale / (i + 1) as f64;
            (got as f64 - expected).abs() / expected.sqrt()
        })
        .fold(0.0, f64::max);
    let snm_ok = worst_z <= 3.0;

    verdict(
        7,
        zipf_ok && chi_ok && snm_ok,
        format!(
            "zipf max error {zipf_err:.1e}; irm chi-square {chi2:.1} < {critical:.1} (df 99, 10⁶ draws) {chi_ok}; snm worst |z| over {library} contents × {runs} seeds {worst_z:.2} ≤ 3"
        ),
    );
}

/// Runs `policies` on a one-row network without usable links and returns
/// every step's placements.
fn placements(policies: Vec<Box<dyn PlacementPolicy>>, capacity: usize, steps: &[Vec<Vec<ContentId>>]) -> Vec<Vec<Vec<ContentId>>> {
    let k = policies.len();
    let topo = Topology::grid(1, k, capacity, 0, 0.2).unwrap();
    let rows = steps.iter().enumerate().flat_map(|(t, per_cache)| {
        per_cache
            .iter()
            .enumerate()
            .flat_map(move |(i, reqs)| reqs.iter().map(move |&c| (t as u64, i, c)))
    });
    let trace = Trace::from_rows(k, steps.len() as u64, rows).unwrap();
    let sim = Simulation::new(topo, policies, EngineConfig::default()).unwrap();
    records(sim, &trace, steps.len() as u64).into_iter().map(|r| r.actions).collect()
}

fn one_cache(reqs: &[&[ContentId]]) -> Vec<Vec<Vec<ContentId>>> {
    reqs.iter().map(|r| vec![r.to_vec()]).collect()
}

fn expect_one(sets: &[&[ContentId]]) -> Vec<Vec<Vec<ContentId>>> {
    sets.iter().map(|s| vec![s.to_vec()]).collect()
}

fn lfu(capacity: usize, window: u64) -> Box<dyn PlacementPolicy> {
    Box::new(
        Lfu::new(
            capacity,
            LfuConfig {
                window,
                mode: LfuMode::Exact,
            },
        )
        .unwrap(),
    )
}

#[test]
fn criterion_08_baseline_goldens() {
    let mut failures = Vec::new();
    let mut check = |name: &str, got: Vec<Vec<Vec<ContentId>>>, want: Vec<Vec<Vec<ContentId>>>| {
        if got != want {
            failures.push(format!("{name}: got {got:?}"));
        }
    };

    // LRU, one request per step, M = 2
    let trace = one_cache(&[&[1], &[2], &[1], &[3], &[2], &[4], &[1], &[1], &[5], &[2]]);
    check(
        "lru-single",
        placements(vec![Box::new(Lru::new(2))], 2, &trace),
        expect_one(&[&[1], &[1, 2], &[1, 2], &[1, 3], &[2, 3], &[2, 4], &[1, 4], &[1, 4], &[1, 5], &[2, 5]]),
    );

    // LRU, bursts processed in order, M = 3
    let trace = one_cache(&[&[1, 2, 3, 4], &[], &[2], &[5, 3], &[4, 4], &[1], &[3, 2], &[], &[6, 7, 8, 1], &[7]]);
    check(
        "lru-bursts",
        placements(vec![Box::new(Lru::new(3))], 3, &trace),
        expect_one(&[
            &[2, 3, 4],
            &[2, 3, 4],
            &[2, 3, 4],
            &[2, 3, 5],
            &[3, 4, 5],
            &[1, 3, 4],
            &[1, 2, 3],
            &[1, 2, 3],
            &[1, 7, 8],
            &[1, 7, 8],
        ]),
    );

    // LRU on two caches at once, M = 2 each
    let c0: [&[ContentId]; 10] = [&[5], &[6], &[5], &[7], &[], &[6, 5], &[8], &[5], &[], &[9]];
    let c1: [&[ContentId]; 10] = [&[1, 1], &[2], &[], &[3], &[2], &[], &[1], &[3], &[2], &[1]];
    let trace: Vec<Vec<Vec<ContentId>>> = c0.iter().zip(&c1).map(|(a, b)| vec![a.to_vec(), b.to_vec()]).collect();
    let w0: [&[ContentId]; 10] = [&[5], &[5, 6], &[5, 6], &[5, 7], &[5, 7], &[5, 6], &[5, 8], &[5, 8], &[5, 8], &[5, 9]];
    let w1: [&[ContentId]; 10] = [&[1], &[1, 2], &[1, 2], &[2, 3], &[2, 3], &[2, 3], &[1, 2], &[1, 3], &[2, 3], &[1, 2]];
    check(
        "lru-pair",
        placements(vec![Box::new(Lru::new(2)), Box::new(Lru::new(2))], 2, &trace),
        w0.iter().zip(&w1).map(|(a, b)| vec![a.to_vec(), b.to_vec()]).collect(),
    );

    // LFU, long window: counts, then recency among equal counts
    let trace = one_cache(&[&[1], &[1], &[2], &[3], &[3], &[3], &[2], &[2], &[4], &[1]]);
    check(
        "lfu-counts",
        placements(vec![lfu(2, 1000)], 2, &trace),
        expect_one(&[&[1], &[1], &[1, 2], &[1, 3], &[1, 3], &[1, 3], &[2, 3], &[2, 3], &[2, 3], &[1, 2]]),
    );

    // LFU pollution: content 1 dominates early, then goes quiet
    let trace = one_cache(&[&[1], &[1], &[1], &[1], &[2], &[3], &[2], &[3], &[1], &[2]]);
    check(
        "lfu-window-3",
        placements(vec![lfu(2, 3)], 2, &trace),
        expect_one(&[&[1], &[1], &[1], &[1], &[1, 2], &[2, 3], &[2, 3], &[2, 3], &[1, 3], &[1, 2]]),
    );
    // without a short window the stale content is kept
    check(
        "lfu-window-1000",
        placements(vec![lfu(2, 1000)], 2, &trace),
        expect_one(&[&[1], &[1], &[1], &[1], &[1, 2], &[1, 3], &[1, 2], &[1, 3], &[1, 3], &[1, 2]]),
    );

    // LFU, repeated ids within a step and a two-step window
    let trace = one_cache(&[&[4, 5, 4], &[6, 6], &[5], &[], &[7], &[6], &[4, 4], &[5], &[6, 5], &[]]);
    check(
        "lfu-window-2",
        placements(vec![lfu(2, 2)], 2, &trace),
        expect_one(&[&[4, 5], &[4, 6], &[5, 6], &[5, 6], &[5, 7], &[6, 7], &[4, 6], &[4, 5], &[5, 6], &[5, 6]]),
    );

    verdict(
        8,
        failures.is_empty(),
        if failures.is_empty() {
            "3 LRU and 3 LFU ten-step traces reproduce the hand-computed placements (plus the long-window contrast)".into()
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn criterion_09_learning_arithmetic() {
    const S: u128 = 42;
    const X: u64 = 7;
    const Y: u64 = 8;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut ok = Vec::new();

    let mut g = GammaCounts::default();
    g.observe(S, X);
    ok.push(("gamma single", close(gamma_prob(&g, S, X, 3), 1.0)));
    for _ in 0..2 {
        g.observe(S, X);
    }
    g.observe(S, Y);
    ok.push((
        "gamma 3:1",
        close(gamma_prob(&g, S, X, 3), 0.75) && close(gamma_prob(&g, S, Y, 3), 0.25),
    ));
    ok.push((
        "gamma prior",
        (0..4).all(|a| close(gamma_prob(&GammaCounts::default(), S, a, 4), 0.25)),
    ));

    ok.push(("theta empty", close(theta(&QTable::default(), &GammaCounts::default(), S, 3), 0.0)));
    let mut q = QTable::default();
    q.set(S, 0, X, 2.0);
    let mut one = GammaCounts::default();
    one.observe(S, X);
    ok.push(("theta single", close(theta(&q, &one, S, 1), 2.0)));
    // a1 = rank 0: {x: 1, y: 3}; a2 = rank 1: {x: 2, y: 2}; Γ = {x: .75, y: .25}
    let mut q = QTable::default();
    q.set(S, 0, X, 1.0);
    q.set(S, 0, Y, 3.0);
    q.set(S, 1, X, 2.0);
    q.set(S, 1, Y, 2.0);
    let value = |own: u64| [X, Y].iter().map(|&a| q.get(S, own, a) * gamma_prob(&g, S, a, 2)).sum::<f64>();
    ok.push((
        "theta two actions",
        close(value(0), 1.5) && close(value(1), 2.0) && close(theta(&q, &g, S, 2), 2.0),
    ));

    ok.push(("q-update basic", close(q_update(0.0, 1.0, 0.0, 0.5, 0.9).unwrap(), 0.5)));
    ok.push(("q-update overwrite", close(q_update(-3.0, 0.7, 1.5, 1.0, 0.9).unwrap(), 0.7 + 0.9 * 1.5)));
    let mut v = 0.0;
    for _ in 0..2_000 {
        v = q_update(v, 1.0, v, 0.5, 0.9).unwrap();
    }
    ok.push(("q-update fixed point", close(v, 1.0 / (1.0 - 0.9))));

    let mut explore = stream_rng(9, 0);
    let mut tie = stream_rng(9, 1);
    let space = ActionSpace::new(vec![10, 20], 1);
    let picks: Vec<Vec<ContentId>> = (0..50)
        .map(|_| space.unrank(select_action(&q, &g, S, &space, 0.0, &mut explore, &mut tie).0))
        .collect();
    ok.push(("select greedy", picks.iter().all(|a| a == &[20])));
    for eps in [1.0, 0.0] {
        let three = ActionSpace::new(vec![1, 2, 3], 2);
        let mut seen = [0u32; 3];
        for _ in 0..30_000 {
            let (rank, _) = select_action(&QTable::default(), &GammaCounts::default(), S, &three, eps, &mut explore, &mut tie);
            seen[rank as usize] += 1;
        }
        // 3 standard deviations of a binomial(30000, 1/3) count is about 245
        ok.push((
            if eps == 1.0 { "select explore" } else { "select cold start" },
            seen.iter().all(|&n| (f64::from(n) - 10_000.0).abs() < 245.0),
        ));
    }

    let failed: Vec<&str> = ok.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        9,
        failed.is_empty(),
        format!("{} worked examples for Γ, Θ, the Q update and action selection; failed: {failed:?}", ok.len()),
    );
}

#[test]
fn criterion_10_bound_effectiveness() {
    let eff = |cells: &[CellResult]| -> Vec<f64> {
        cells
            .iter()
            .map(|c| c.run("comcache").unwrap().summary.effectiveness.expect("bound present"))
            .collect()
    };
    let dominated = |cells: &[CellResult]| {
        cells.iter().all(|c| {
            let b = c.bound.as_ref().unwrap().hit_ratio().unwrap();
            ALL.iter().all(|p| c.hit_ratio(p).unwrap() <= b)
        })
    };
    let big = eff(desk_snm());
    let small = eff(small_snm());
    let (mb, ms) = (mean(big.iter().copied()), mean(small.iter().copied()));
    let bounds: Vec<f64> = desk_snm().iter().map(|c| c.bound.as_ref().unwrap().hit_ratio().unwrap()).collect();
    let dom = dominated(desk_snm()) && dominated(small_snm());
    verdict(
        10,
        (0.6..=1.0).contains(&mb) && dom && ms >= mb,
        format!(
            "4×4 bound [{}], comcache effectiveness [{}] mean {mb:.4} (need in [0.6, 1]); 2×2 effectiveness [{}] mean {ms:.4} (need ≥ 4×4); bound ≥ every scheme on every seed {dom}",
            fmt(&bounds),
            fmt(&big),
            fmt(&small)
        ),
    );
}

fn csv_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_11_determinism() {
    let config = r#"
policy = ["comcache", "comcache-i", "iql", "lru", "lfu"]
horizon = 4000
seeds = [3, 8]
timeseries_window = 500

[topology]
rows = 2
cols = 3
capacity = 4

[workload]
model = "snm"
library_size = 40

[bound]
enabled = true
"#;
    let outputs: Vec<Vec<(PathBuf, Vec<u8>)>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = dir.path().join("exp.toml");
            fs::write(&cfg, config).unwrap();
            let status = Command::new(env!("CARGO_BIN_EXE_comcache"))
                .args(["run", "exp.toml", "--out", "out", "--quiet", "--jobs", "2"])
                .current_dir(dir.path())
                .status()
                .unwrap();
            assert!(status.success());
            csv_files(&dir.path().join("out"))
        })
        .collect();
    let identical = outputs[0] == outputs[1];
    verdict(
        11,
        identical && outputs[0].len() >= 20,
        format!("two runs wrote {} CSV files each; byte-identical {identical}", outputs[0].len()),
    );
}
