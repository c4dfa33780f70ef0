//! Evaluation campaigns: seeded trials of one planner, metrics sampled at
//! fixed mission times.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ipp3d_core::baselines::{mcts_plan, random_policy, CoveragePlanner, MctsConfig};
use ipp3d_core::belief::GpHyperparams;
use ipp3d_core::groundtruth::generate_field;
use ipp3d_core::roadmap::build_roadmap_with;
use ipp3d_core::sensor::SensorConfig;
use ipp3d_core::simenv::{EnvContext, IppEnv, MetricSample};
use ipp3d_core::GridSpec;
use ipp3d_learn::diffmath::Tensor;
use ipp3d_learn::policynet::{pe_tensor, PolicyInput, PolicyParams};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Planner};
use crate::stats::{summarize, SummaryRow};
use crate::{HarnessError, Result};

pub const METRIC_HEADER: [&str; 6] =
    ["trial", "planner", "time_s", "uncertainty_reduction_pct", "rmse_reduction_pct", "decision_runtime_s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub trial: usize,
    pub planner: Planner,
    pub time_s: f64,
    pub uncertainty_reduction_pct: f64,
    pub rmse_reduction_pct: f64,
    /// Mean wall time of one planner call over the trial.
    pub decision_runtime_s: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
    /// Planner calls per trial.
    pub decisions: Vec<usize>,
}

impl EvalReport {
    /// Writes `metrics_<planner>.csv` and `summary_<planner>.csv` into `dir`.
    pub fn write(&self, dir: &Path, planner: Planner) -> Result<[PathBuf; 2]> {
        std::fs::create_dir_all(dir)?;
        let metrics = dir.join(format!("metrics_{}.csv", planner.name()));
        write_metrics(&metrics, &self.rows)?;
        let summary = dir.join(format!("summary_{}.csv", planner.name()));
        let mut w = csv::Writer::from_path(&summary)?;
        for row in &self.summary {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok([metrics, summary])
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(METRIC_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRIC_HEADER {
        return Err(HarnessError::Format(format!("{}: unexpected columns {header:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

/// Seeds of trial `trial`: field, sensor noise, planner.
pub fn trial_seeds(seed_base: u64, trial: usize) -> [u64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_base);
    rng.set_stream(trial as u64);
    [rng.next_u64(), rng.next_u64(), rng.next_u64()]
}

enum Runner {
    Random(ChaCha8Rng),
    Coverage(CoveragePlanner),
    Mcts(MctsConfig, ChaCha8Rng),
    Policy(Arc<PolicyParams>, Arc<Tensor>),
}

impl Runner {
    fn decide(&mut self, env: &IppEnv) -> Result<usize> {
        Ok(match self {
            Self::Random(rng) => random_policy(&env.observe()?, rng)?,
            Self::Coverage(plan) => plan.next_action(env)?,
            Self::Mcts(cfg, rng) => mcts_plan(env, cfg, rng)?,
            Self::Policy(params, pe) => {
                let obs = env.observe()?;
                let input = PolicyInput::from_observation(&obs, Arc::clone(pe))?;
                let eval = params.act(&input)?;
                input.neighbors[greedy(&eval.probs)]
            }
        })
    }
}

/// Index of the largest probability; the first one wins ties.
pub fn greedy(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Shared, read-only pieces of a campaign.
struct Campaign {
    ctx: Arc<EnvContext>,
    policy: Option<(Arc<PolicyParams>, Arc<Tensor>)>,
}

impl Campaign {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let grid = GridSpec::new(cfg.map_size, cfg.map_size, cfg.resolution)?;
        let policy = match (cfg.planner, &cfg.checkpoint) {
            (Planner::Policy, Some(path)) => Some(PolicyParams::load(path)?),
            _ => None,
        };
        let mut roadmap_cfg = cfg.roadmap.clone();
        if let Some(p) = &policy {
            roadmap_cfg.k_pe = p.cfg.k_pe;
        }
        let roadmap = Arc::new(build_roadmap_with(grid, &roadmap_cfg)?);
        let policy = match policy {
            Some(p) => Some((Arc::new(p), Arc::new(pe_tensor(&roadmap)?))),
            None => None,
        };
        let ctx = EnvContext::new(roadmap, SensorConfig::default(), GpHyperparams::default(), cfg.env_config())?;
        Ok(Self { ctx, policy })
    }

    fn runner(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Runner> {
        Ok(match cfg.planner {
            Planner::Random => Runner::Random(ChaCha8Rng::seed_from_u64(seed)),
            Planner::Coverage => {
                let lowest = self.ctx.roadmap.altitude_levels.iter().copied().fold(f64::INFINITY, f64::min);
                Runner::Coverage(CoveragePlanner::new(&self.ctx.roadmap, lowest)?)
            }
            Planner::Mcts => Runner::Mcts(cfg.mcts, ChaCha8Rng::seed_from_u64(seed)),
            Planner::Policy => {
                let (p, pe) = self.policy.as_ref().expect("loaded for the policy planner");
                Runner::Policy(Arc::clone(p), Arc::clone(pe))
            }
        })
    }

    /// Plays one trial to the end of its budget.
    fn trial(&self, cfg: &ExperimentConfig, trial: usize) -> Result<(Vec<MetricRow>, usize)> {
        let [field_seed, env_seed, planner_seed] = trial_seeds(cfg.seed_base, trial);
        let truth =
            generate_field(cfg.map_size, cfg.map_size, cfg.resolution, field_seed, &cfg.field)?;
        let mut env = IppEnv::reset(Arc::clone(&self.ctx), Arc::new(truth), env_seed)?;
        let mut runner = self.runner(cfg, planner_seed)?;
        let mut spent = 0.0;
        let mut decisions = 0usize;
        while !env.is_done() {
            let t = Instant::now();
            let action = runner.decide(&env)?;
            spent += t.elapsed().as_secs_f64();
            decisions += 1;
            env.step(action)?;
        }
        let runtime = if cfg.record_runtime && decisions > 0 { spent / decisions as f64 } else { 0.0 };

        let log = &env.state().metrics_log;
        let tr0 = env.eval_roi_prior_trace();
        let rows = std::iter::once(0.0)
            .chain(cfg.eval_times.iter().copied().filter(|&t| t > 0.0))
            .map(|time_s| {
                let s = sample_at(log, time_s);
                MetricRow {
                    trial,
                    planner: cfg.planner,
                    time_s,
                    uncertainty_reduction_pct: percent_drop(tr0, s.roi_trace),
                    rmse_reduction_pct: percent_drop(s.rmse_prior, s.rmse),
                    decision_runtime_s: runtime,
                }
            })
            .collect();
        Ok((rows, decisions))
    }
}

/// Latest sample taken at or before `time_s`.
fn sample_at(log: &[MetricSample], time_s: f64) -> &MetricSample {
    let i = log.partition_point(|s| s.time_s <= time_s + 1e-9);
    &log[i.saturating_sub(1)]
}

/// `(before − after) / before · 100`; zero when there was nothing to reduce.
pub fn percent_drop(before: f64, after: f64) -> f64 {
    if before > 0.0 {
        (before - after) / before * 100.0
    } else {
        0.0
    }
}

/// Runs every trial of `cfg` and aggregates per-time statistics. Trials
/// are spread over `cfg.workers` threads; results are ordered by trial.
pub fn run_eval(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let campaign = Campaign::new(cfg)?;
    let workers = cfg.workers.min(cfg.trials);
    let mut per_trial: Vec<Option<Result<(Vec<MetricRow>, usize)>>> = (0..cfg.trials).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let campaign = &campaign;
                s.spawn(move || {
                    (w..cfg.trials).step_by(workers).map(|t| (t, campaign.trial(cfg, t))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (t, r) in h.join().expect("trial worker panicked") {
                per_trial[t] = Some(r);
            }
        }
    });
    let mut rows = Vec::new();
    let mut decisions = Vec::with_capacity(cfg.trials);
    for r in per_trial {
        let (r, d) = r.expect("every trial ran")?;
        rows.extend(r);
        decisions.push(d);
    }
    let summary = summarize(&rows);
    Ok(EvalReport { rows, summary, decisions })
}
