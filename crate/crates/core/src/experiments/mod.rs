//! Experiment drivers behind the CLI.
//!
//! Every experiment writes one CSV (`<experiment>_<seed>.csv`) and returns
//! short summary lines for the console. Trials derive their seeds from the
//! run seed with [`child_seed`] and run in parallel, except for sweeps whose
//! timings are reported, which run sequentially.

pub mod acceptance;
pub mod config;
pub mod fit;
pub mod runs;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack_confidentiality::AttackOptions;
use crate::cost_model::{
    format_size, k_max, mem_footprints, t_fly, t_pre, HardwareProfile, MODEL_ZOO,
};
use crate::ff::{child_seed, seeded_rng, FieldModulus};
use crate::linalg::{random_matrix, rank_deficiency_probability};
use crate::victim_soter::SoterConfig;
use crate::victim_tlg::TlgConfig;

pub use config::{ConfigError, Experiment, ExperimentConfig};
pub use runs::RunError;
use runs::{ms, sampling, soter_config, tlg_config};

pub const SUBSET_SIZES: [usize; 4] = [2, 3, 5, 8];
pub const SWEEP_KS: [usize; 4] = [4, 8, 16, 32];
pub const SWEEP_DIMS: [usize; 4] = [64, 128, 256, 512];
/// Timed sweeps repeat every trial this many times and keep the fastest.
pub const TIMING_ROUNDS: usize = 3;
const MAX_SOTER_BATCHES: usize = 5000;

/// One trial of an attack experiment. Columns that do not apply are empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub variant: String,
    pub trial: usize,
    pub seed: u64,
    pub d: usize,
    pub d_model: Option<usize>,
    pub k: usize,
    pub t: Option<usize>,
    pub delta: Option<usize>,
    pub batch_size: Option<usize>,
    pub modulus: u64,
    pub stage1_budget: Option<usize>,
    pub k_discovered: Option<usize>,
    pub success: u8,
    pub stage1_queries: Option<usize>,
    pub stage2_queries: Option<usize>,
    pub total_queries: Option<usize>,
    /// Queries or batches consumed, depending on the victim.
    pub samples: Option<usize>,
    pub rank: Option<usize>,
    pub detections: Option<usize>,
    pub classification_errors: Option<usize>,
    pub wall_ms: f64,
}

impl ResultRow {
    fn base(c: &ExperimentConfig, variant: &str, trial: usize, seed: u64) -> Self {
        Self {
            experiment: c.experiment.to_string(),
            variant: variant.to_string(),
            trial,
            seed,
            d: c.d,
            k: c.k,
            t: c.t,
            modulus: c.modulus,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub model: String,
    pub profile: String,
    pub d_in: u64,
    pub d_out: u64,
    pub layers: u64,
    pub k: u64,
    pub mem_fly_bytes: u64,
    pub mem_fly: String,
    pub mem_pre_bytes: u64,
    pub mem_pre: String,
    pub mem_ratio: f64,
    pub t_fly_ms: f64,
    pub t_pre_ms: f64,
    pub k0: Option<u64>,
    pub k1: Option<u64>,
    pub k_max: Option<u64>,
    pub k0_raw: f64,
    pub feasible: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankProbRow {
    pub p: u64,
    pub k: usize,
    pub exact: String,
    pub value: f64,
    pub trials: usize,
    pub singular: Option<usize>,
    pub empirical: Option<f64>,
    /// Binomial standard error of `empirical` under `value`.
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    Trials(Vec<ResultRow>),
    Cost(Vec<CostRow>),
    RankProb(Vec<RankProbRow>),
}

impl Output {
    pub fn len(&self) -> usize {
        match self {
            Output::Trials(r) => r.len(),
            Output::Cost(r) => r.len(),
            Output::RankProb(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct RunSummary {
    pub path: PathBuf,
    pub output: Output,
    pub lines: Vec<String>,
}

/// Runs one experiment and writes its CSV.
pub fn run(c: &ExperimentConfig) -> Result<RunSummary, RunError> {
    let mut c = c.clone();
    if c.full_scale {
        c.full_scale_shape();
    }
    c.validate()?;
    let output = compute(&c)?;
    std::fs::create_dir_all(&c.out)?;
    let path = c.csv_path();
    write_csv(&path, &output)?;
    let lines = summarize(&output);
    Ok(RunSummary {
        path,
        output,
        lines,
    })
}

pub fn compute(c: &ExperimentConfig) -> Result<Output, RunError> {
    Ok(match c.experiment {
        Experiment::DiscoverKTlg => Output::Trials(discover_tlg(c)?),
        Experiment::DiscoverKSoter => Output::Trials(discover_soter(c)?),
        Experiment::Threshold => Output::Trials(threshold(c)?),
        Experiment::AttackTlg => Output::Trials(attack_tlg(c)?),
        Experiment::AttackSoter => Output::Trials(attack_soter(c)?),
        Experiment::SubsetSweep => Output::Trials(subset_sweep(c)?),
        Experiment::KSweep => Output::Trials(k_sweep(c)?),
        Experiment::DimSweep => Output::Trials(dim_sweep(c)?),
        Experiment::CostTable => Output::Cost(cost_table(c.k as u64)),
        Experiment::RankProb => Output::RankProb(rank_prob(c)?),
    })
}

fn write_csv(path: &std::path::Path, output: &Output) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    match output {
        Output::Trials(rows) => rows.iter().try_for_each(|r| w.serialize(r))?,
        Output::Cost(rows) => rows.iter().try_for_each(|r| w.serialize(r))?,
        Output::RankProb(rows) => rows.iter().try_for_each(|r| w.serialize(r))?,
    }
    w.flush()?;
    Ok(())
}

fn par_trials<T, F>(c: &ExperimentConfig, salt: u64, f: F) -> Result<Vec<T>, RunError>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T, RunError> + Sync,
{
    let base = child_seed(c.seed, salt);
    (0..c.trials)
        .into_par_iter()
        .map(|i| f(i, child_seed(base, i as u64)))
        .collect()
}

fn discover_tlg(c: &ExperimentConfig) -> Result<Vec<ResultRow>, RunError> {
    let tc = tlg_config(c, false)?;
    let max_queries = 4 * c.d + c.window;
    let mut traces = Vec::new();
    let mut rows = Vec::new();
    for (row, trace) in par_trials(c, 0, |i, seed| {
        let r = runs::tlg_discover_trial(tc, c.window, max_queries, seed)?;
        let mut row = ResultRow {
            d_model: Some(c.d_model),
            wall_ms: ms(r.elapsed),
            ..ResultRow::base(c, "trial", i, seed)
        };
        let trace = match &r.outcome {
            Ok(kd) => {
                row.k_discovered = Some(kd.k);
                row.success = u8::from(kd.k == c.k);
                row.samples = Some(kd.queries);
                row.rank = Some(kd.k);
                kd.trace.clone()
            }
            Err(_) => Vec::new(),
        };
        Ok((row, trace))
    })? {
        rows.push(row);
        traces.push(trace);
    }
    rows.extend(trace_rows(c, &traces[0]).into_iter().map(|r| ResultRow {
        d_model: Some(c.d_model),
        ..r
    }));
    Ok(rows)
}

/// Rank after each sample of the first trial, for plotting.
fn trace_rows(c: &ExperimentConfig, trace: &[usize]) -> Vec<ResultRow> {
    let seed = child_seed(child_seed(c.seed, 0), 0);
    trace
        .iter()
        .enumerate()
        .map(|(i, &r)| ResultRow {
            samples: Some(i + 1),
            rank: Some(r),
            success: 1,
            ..ResultRow::base(c, "trace", 0, seed)
        })
        .collect()
}

fn discover_soter(c: &ExperimentConfig) -> Result<Vec<ResultRow>, RunError> {
    let sc = soter_config(c)?;
    let mut traces = Vec::new();
    let mut rows = Vec::new();
    for (row, trace) in par_trials(c, 0, |i, seed| {
        let r = runs::soter_discover_trial(sc, c.window, MAX_SOTER_BATCHES, seed)?;
        let mut row = ResultRow {
            batch_size: Some(c.batch_size),
            wall_ms: ms(r.elapsed),
            ..ResultRow::base(c, "trial", i, seed)
        };
        let trace = match &r.outcome {
            Ok(h) => {
                row.k_discovered = Some(h.k);
                row.success = u8::from(h.k == c.k);
                row.samples = Some(h.batches);
                row.rank = h.trace.last().copied();
                h.trace.clone()
            }
            Err(_) => Vec::new(),
        };
        Ok((row, trace))
    })? {
        rows.push(row);
        traces.push(trace);
    }
    rows.extend(trace_rows(c, &traces[0]).into_iter().map(|r| ResultRow {
        batch_size: Some(c.batch_size),
        ..r
    }));
    Ok(rows)
}

/// Stage-1 budgets from 0 to `K + δ`, `trials` victims each.
pub fn threshold(c: &ExperimentConfig) -> Result<Vec<ResultRow>, RunError> {
    let tc = tlg_config(c, false)?;
    let mut rows = Vec::new();
    for budget in 0..=c.k + c.delta {
        let opts = AttackOptions {
            k_known: Some(c.k),
            stage1_budget: Some(budget),
            ..AttackOptions::default()
        };
        rows.extend(par_trials(c, budget as u64, |i, seed| {
            let tr = runs::tlg_attack_trial(tc, &opts, 0, seed)?;
            let rho = &tr.report.rho;
            Ok(ResultRow {
                d_model: Some(c.d_model),
                delta: Some(c.delta),
                stage1_budget: Some(budget),
                success: u8::from(tr.success()),
                stage1_queries: Some(rho.stage1_queries),
                stage2_queries: Some(rho.stage2_queries),
                total_queries: Some(rho.attack_queries()),
                samples: Some(budget),
                wall_ms: ms(tr.report.total_time()),
                ..ResultRow::base(c, "budget", i, seed)
            })
        })?);
    }
    Ok(rows)
}

fn attack_tlg(c: &ExperimentConfig) -> Result<Vec<ResultRow>, RunError> {
    // Full-size layers skip the attention block and the forward checks:
    // its weights alone would need several gigabytes.
    let (with_block, checks) = if c.full_scale { (false, 0) } else { (true, 10) };
    let tc = tlg_config(c, with_block)?;
    let opts = AttackOptions {
        k_known: c.full_scale.then_some(c.k),
        delta: c.delta,
        window: c.window,
        ..AttackOptions::default()
    };
    let per_trial = par_trials(c, 0, |i, seed| {
        let tr = runs::tlg_attack_trial(tc, &opts, checks, seed)?;
        let success = u8::from(tr.success());
        let rows =
            [("rho", &tr.report.rho), ("pi_next", &tr.report.pi_next)].map(|(name, t)| ResultRow {
                d: t.dim,
                d_model: Some(c.d_model),
                delta: Some(c.delta),
                k_discovered: Some(t.k_discovered),
                success,
                stage1_queries: Some(t.stage1_queries),
                stage2_queries: Some(t.stage2_queries),
                total_queries: Some(t.discovery_queries + t.attack_queries()),
                samples: Some(t.stage1_queries),
                wall_ms: ms(t.discovery_time + t.attack_time()),
                ..ResultRow::base(c, name, i, seed)
            });
        Ok(rows)
    })?;
    Ok(per_trial.into_iter().flatten().collect())
}

fn attack_soter(c: &ExperimentConfig) -> Result<Vec<ResultRow>, RunError> {
    let sc = soter_config(c)?;
    let per_trial = par_trials(c, 0, |i, seed| {
        let plan = runs::SoterTrialPlan {
            delta: c.delta,
            bypass_batches: c.bypass_batches,
            control: true,
            labeled_batches: 10,
            corrupt_intersection: false,
        };
        let tr = runs::soter_attack_trial(sc, plan, seed)?;
        let base = ResultRow {
            delta: Some(c.delta),
            batch_size: Some(c.batch_size),
            samples: Some(tr.report.batches_observed),
            rank: Some(tr.report.filter_dim),
            classification_errors: Some(tr.classification_errors),
            wall_ms: ms(tr.recovery_time),
            ..ResultRow::base(c, "bypass", i, seed)
        };
        let control = tr.control.expect("requested");
        Ok([
            ResultRow {
                success: u8::from(tr.exact && tr.bypass.detections == 0),
                detections: Some(tr.bypass.detections),
                ..base.clone()
            },
            ResultRow {
                variant: "control".into(),
                success: u8::from(control.detections == c.bypass_batches),
                detections: Some(control.detections),
                ..base
            },
        ])
    })?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Subset sizes `T` no larger than `K`, plus `T = K` when it is not listed.
fn subset_sizes(k: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = SUBSET_SIZES.iter().copied().filter(|&t| t <= k).collect();
    if !ts.contains(&k) {
        ts.push(k);
    }
    ts
}

/// Samples to learn the secret under subset sampling, both victims.
pub fn subset_sweep(c: &ExperimentConfig) -> Result<Vec<ResultRow>, RunError> {
    let mut rows = Vec::new();
    for t in subset_sizes(c.k) {
        let tc = TlgConfig {
            sampling: sampling(Some(t)),
            ..tlg_config(c, false)?
        };
        let sc = SoterConfig {
            sampling: sampling(Some(t)),
            ..soter_config(c)?
        };
        let salt = t as u64;
        let tlg = par_trials(c, salt, |i, seed| {
            let s = runs::tlg_adaptive_trial(tc, 8 * c.d, seed)?;
            Ok(sample_row(c, "tlg", Some(t), i, seed, &s))
        })?;
        let soter = par_trials(c, salt + 1000, |i, seed| {
            let s = runs::soter_adaptive_trial(sc, MAX_SOTER_BATCHES, seed)?;
            Ok(ResultRow {
                batch_size: Some(c.batch_size),
                ..sample_row(c, "soter", Some(t), i, seed, &s)
            })
        })?;
        rows.extend(tlg);
        rows.extend(soter);
    }
    Ok(rows)
}

fn sample_row(
    c: &ExperimentConfig,
    variant: &str,
    t: Option<usize>,
    trial: usize,
    seed: u64,
    s: &runs::SampleTrial,
) -> ResultRow {
    ResultRow {
        t,
        success: u8::from(s.success),
        samples: Some(s.samples),
        rank: Some(s.rank),
        wall_ms: ms(s.elapsed),
        ..ResultRow::base(c, variant, trial, seed)
    }
}

/// Runs `trial` for every (point, trial index) pair `TIMING_ROUNDS` times,
/// interleaving points, and keeps each trial's fastest run.
fn timed_sweep<P: Copy>(
    c: &ExperimentConfig,
    points: &[P],
    salt: impl Fn(P) -> u64,
    trial: impl Fn(P, u64) -> Result<runs::SampleTrial, RunError>,
) -> Result<Vec<Vec<(u64, runs::SampleTrial)>>, RunError> {
    let mut best: Vec<Vec<Option<(u64, runs::SampleTrial)>>> =
        vec![vec![None; c.trials]; points.len()];
    for _ in 0..TIMING_ROUNDS {
        for (pi, &p) in points.iter().enumerate() {
            let base = child_seed(c.seed, salt(p));
            for (i, slot) in best[pi].iter_mut().enumerate() {
                let seed = child_seed(base, i as u64);
                let s = trial(p, seed)?;
                match slot {
                    Some((_, b)) if b.elapsed <= s.elapsed => {}
                    _ => *slot = Some((seed, s)),
                }
            }
        }
    }
    Ok(best
        .into_iter()
        .map(|v| {
            v.into_iter()
                .map(|s| s.expect("at least one round"))
                .collect()
        })
        .collect())
}

/// Attack time and success against `K`, with `K` known to both attacks.
pub fn k_sweep(c: &ExperimentConfig) -> Result<Vec<ResultRow>, RunError> {
    let ks: Vec<usize> = SWEEP_KS
        .iter()
        .copied()
        .filter(|&k| k <= c.d.min(c.d_model))
        .collect();
    let mut rows = Vec::new();
    let tlg = timed_sweep(
        c,
        &ks,
        |k| k as u64,
        |k, seed| {
            let tc = TlgConfig {
                k,
                ..tlg_config(c, false)?
            };
            tlg_known_k_trial(tc, c.delta, seed)
        },
    )?;
    let soter = timed_sweep(
        c,
        &ks,
        |k| 1000 + k as u64,
        |k, seed| {
            let sc = SoterConfig {
                k,
                ..soter_config(c)?
            };
            runs::soter_adaptive_trial(sc, MAX_SOTER_BATCHES, seed)
        },
    )?;
    for (ki, &k) in ks.iter().enumerate() {
        for (i, (seed, s)) in tlg[ki].iter().enumerate() {
            rows.push(ResultRow {
                k,
                d_model: Some(c.d_model),
                delta: Some(c.delta),
                ..sample_row(c, "tlg", c.t, i, *seed, s)
            });
        }
        for (i, (seed, s)) in soter[ki].iter().enumerate() {
            rows.push(ResultRow {
                k,
                batch_size: Some(c.batch_size),
                ..sample_row(c, "soter", c.t, i, *seed, s)
            });
        }
    }
    Ok(rows)
}

/// Stage 1 with `K + δ` queries and stage 2 for `ρ`, timed together.
fn tlg_known_k_trial(
    tc: TlgConfig,
    delta: usize,
    seed: u64,
) -> Result<runs::SampleTrial, RunError> {
    use crate::attack_confidentiality::{learn_noise_subspace, recover_permutation, EncryptOracle};
    let (mut session, truth) = crate::victim_tlg::setup(tc, &mut seeded_rng(seed))?;
    let t = std::time::Instant::now();
    let mut oracle = EncryptOracle(&mut session);
    let outcome = learn_noise_subspace(&mut oracle, tc.k, delta)
        .and_then(|p| recover_permutation(&mut oracle, &p).and_then(|r| r.permutation()));
    let elapsed = t.elapsed();
    Ok(runs::SampleTrial {
        success: outcome.as_ref().is_ok_and(|rho| *rho == truth.secrets.rho),
        samples: tc.k + delta + tc.d_ffn,
        rank: tc.k,
        elapsed,
    })
}

/// Attack time and success against the attacked dimension at fixed `K`.
pub fn dim_sweep(c: &ExperimentConfig) -> Result<Vec<ResultRow>, RunError> {
    let ds: Vec<usize> = SWEEP_DIMS
        .iter()
        .copied()
        .filter(|&d| d > c.k + 1)
        .collect();
    let mut rows = Vec::new();
    let tlg = timed_sweep(
        c,
        &ds,
        |d| d as u64,
        |d, seed| {
            let tc = TlgConfig {
                d_ffn: d,
                d_model: c.d_model.max(c.k),
                ..tlg_config(c, false)?
            };
            tlg_known_k_trial(tc, c.delta, seed)
        },
    )?;
    let soter = timed_sweep(
        c,
        &ds,
        |d| 1000 + d as u64,
        |d, seed| {
            let sc = SoterConfig {
                d,
                d_out: d,
                ..soter_config(c)?
            };
            soter_planned_trial(sc, c.delta.min(1), seed)
        },
    )?;
    for (di, &d) in ds.iter().enumerate() {
        for (i, (seed, s)) in tlg[di].iter().enumerate() {
            rows.push(ResultRow {
                d,
                delta: Some(c.delta),
                ..sample_row(c, "tlg", c.t, i, *seed, s)
            });
        }
        for (i, (seed, s)) in soter[di].iter().enumerate() {
            rows.push(ResultRow {
                d,
                batch_size: Some(c.batch_size),
                delta: Some(c.delta.min(1)),
                ..sample_row(c, "soter", c.t, i, *seed, s)
            });
        }
    }
    Ok(rows)
}

/// Planned collection and intersection, timed, with `K` known.
fn soter_planned_trial(
    sc: SoterConfig,
    delta: usize,
    seed: u64,
) -> Result<runs::SampleTrial, RunError> {
    let plan = runs::SoterTrialPlan {
        delta,
        ..runs::SoterTrialPlan::default()
    };
    let tr = runs::soter_attack_trial(sc, plan, seed)?;
    Ok(runs::SampleTrial {
        success: tr.exact,
        samples: tr.report.batches_observed,
        rank: tr.report.filter_dim,
        elapsed: tr.recovery_time,
    })
}

pub fn cost_profiles() -> [HardwareProfile; 3] {
    [
        HardwareProfile::sgx_client(),
        HardwareProfile::server_512mb(),
        HardwareProfile::trustzone_16mb(),
    ]
}

pub fn cost_table(k: u64) -> Vec<CostRow> {
    let mut rows = Vec::new();
    for hw in cost_profiles() {
        for shape in MODEL_ZOO {
            let mem = mem_footprints(&shape, k);
            let bounds = k_max(&shape, &hw);
            let (k0, k1, kmax, k0_raw) = match &bounds {
                Ok(b) => (Some(b.k0), Some(b.k1), Some(b.k_max), b.k0_raw),
                Err(crate::cost_model::CostError::Infeasible { k0_raw, .. }) => {
                    (None, None, None, *k0_raw)
                }
            };
            rows.push(CostRow {
                model: shape.name.to_string(),
                profile: hw.name.to_string(),
                d_in: shape.d_in,
                d_out: shape.d_out,
                layers: shape.layers,
                k,
                mem_fly_bytes: mem.mem_fly,
                mem_fly: format_size(mem.mem_fly),
                mem_pre_bytes: mem.mem_pre,
                mem_pre: format_size(mem.mem_pre),
                mem_ratio: mem.ratio,
                t_fly_ms: t_fly(&shape, &hw) * 1e3,
                t_pre_ms: t_pre(&shape, &hw, k) * 1e3,
                k0,
                k1,
                k_max: kmax,
                k0_raw,
                feasible: u8::from(bounds.is_ok()),
            });
        }
    }
    rows
}

/// Singular-matrix count over `trials` uniform `k × k` matrices.
pub fn count_singular(p: u64, k: usize, trials: usize, seed: u64) -> Result<usize, RunError> {
    let m = FieldModulus::new(p)?;
    const CHUNK: usize = 1000;
    let chunks = trials.div_ceil(CHUNK);
    Ok((0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = seeded_rng(child_seed(seed, ci as u64));
            let n = CHUNK.min(trials - ci * CHUNK);
            (0..n)
                .filter(|_| random_matrix(m, k, k, &mut rng).rank() < k)
                .count()
        })
        .sum())
}

pub fn rank_prob(c: &ExperimentConfig) -> Result<Vec<RankProbRow>, RunError> {
    let rd = rank_deficiency_probability(c.k, c.modulus)?;
    let mut row = RankProbRow {
        p: c.modulus,
        k: c.k,
        exact: rd.exact.as_ref().map_or(String::new(), ToString::to_string),
        value: rd.value,
        trials: c.trials,
        singular: None,
        empirical: None,
        sigma: None,
    };
    if c.trials > 0 {
        let s = count_singular(c.modulus, c.k, c.trials, c.seed)?;
        row.singular = Some(s);
        row.empirical = Some(s as f64 / c.trials as f64);
        row.sigma = Some((rd.value * (1.0 - rd.value) / c.trials as f64).sqrt());
    }
    Ok(vec![row])
}

/// One line per parameter point: success count and means.
pub fn summarize(output: &Output) -> Vec<String> {
    match output {
        Output::Trials(rows) => {
            #[derive(Default)]
            struct Acc {
                n: usize,
                ok: usize,
                samples: f64,
                ms: f64,
            }
            type Key = (String, usize, usize, Option<usize>, Option<usize>);
            let mut groups: BTreeMap<Key, Acc> = BTreeMap::new();
            for r in rows.iter().filter(|r| r.variant != "trace") {
                let key = (r.variant.clone(), r.d, r.k, r.t, r.stage1_budget);
                let a = groups.entry(key).or_default();
                a.n += 1;
                a.ok += r.success as usize;
                a.samples += r.samples.unwrap_or(0) as f64;
                a.ms += r.wall_ms;
            }
            groups
                .into_iter()
                .map(|((v, d, k, t, b), a)| {
                    let n = a.n as f64;
                    let opt = |o: Option<usize>| o.map_or("-".to_string(), |v| v.to_string());
                    let (t, b) = (opt(t), opt(b));
                    format!(
                        "{v:<8} d={d:<5} K={k:<3} T={t:<3} budget={b:<3} success {}/{}  mean samples {:.2}  mean {:.3} ms",
                        a.ok,
                        a.n,
                        a.samples / n,
                        a.ms / n
                    )
                })
                .collect()
        }
        Output::Cost(rows) => rows
            .iter()
            .map(|r| {
                let kmax = r.k_max.map_or("infeasible".to_string(), |k| k.to_string());
                format!(
                    "{:<15} {:<21} Mem_fly {:>8}  Mem_pre {:>8}  T_fly {:.2} ms  T_pre {:.4} ms  K_max {}",
                    r.profile, r.model, r.mem_fly, r.mem_pre, r.t_fly_ms, r.t_pre_ms, kmax
                )
            })
            .collect(),
        Output::RankProb(rows) => rows
            .iter()
            .map(|r| match r.empirical {
                Some(e) => format!(
                    "p={} K={} exact {} = {:.6e}  empirical {:.6e} ({} trials)",
                    r.p, r.k, r.exact, r.value, e, r.trials
                ),
                None => format!("p={} K={} exact {} = {:.6e}", r.p, r.k, r.exact, r.value),
            })
            .collect(),
    }
}
