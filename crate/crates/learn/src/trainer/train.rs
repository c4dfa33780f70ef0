use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{read_params, write_params};
use crate::policynet::{NetConfig, PolicyParams};
use crate::{LearnError, Result};

use super::{collect_rollouts, episode_seed, ppo_gradients, Adam, EnvFactory, LossStats, PpoConfig, StepRecord};

pub const LOG_FILE: &str = "train_log.csv";

const SHUFFLE_STREAM: u64 = 0x5eed_5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Episode count to reach, including episodes of a resumed checkpoint.
    pub total_episodes: usize,
    pub checkpoint_dir: PathBuf,
    /// Save every this many episodes (rounded up to whole collection rounds).
    pub checkpoint_interval: usize,
    pub resume: Option<PathBuf>,
    pub seed: u64,
}

/// One row per training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    pub wall_time_s: f64,
    /// Undiscounted return of this episode.
    pub mean_return: f64,
    /// Round averages of the update that followed the episode.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: Vec<LogRow>,
    pub checkpoints: Vec<PathBuf>,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub adam: Adam,
    pub episodes: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunState {
    episodes: usize,
    seed: u64,
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn save_checkpoint(dir: &Path, ck: &Checkpoint) -> Result<PathBuf> {
    let path = dir.join(format!("policy_{:06}.params", ck.episodes));
    ck.params.save(&path)?;
    let mut out = BufWriter::new(File::create(sidecar(&path, ".optim"))?);
    write_params(&mut out, &ck.adam.to_named(&ck.params))?;
    out.flush()?;
    let state = toml::to_string(&RunState { episodes: ck.episodes, seed: ck.seed })
        .map_err(|e| LearnError::Format(e.to_string()))?;
    fs::write(sidecar(&path, ".state"), state)?;
    Ok(path)
}

pub fn load_checkpoint(path: &Path, cfg: &PpoConfig) -> Result<Checkpoint> {
    let params = PolicyParams::load(path)?;
    let optim = read_params(BufReader::new(File::open(sidecar(path, ".optim"))?))?;
    let adam = Adam::from_named(&params, cfg, optim)?;
    let text = fs::read_to_string(sidecar(path, ".state"))?;
    let state: RunState = toml::from_str(&text).map_err(|e| LearnError::Format(e.to_string()))?;
    Ok(Checkpoint { params, adam, episodes: state.episodes, seed: state.seed })
}

fn open_log(path: &Path) -> Result<csv::Writer<File>> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(["episode", "wall_time_s", "mean_return", "policy_loss", "value_loss", "entropy"])
            .map_err(csv_err)?;
    }
    Ok(w)
}

fn csv_err(e: csv::Error) -> LearnError {
    LearnError::Format(e.to_string())
}

/// `ppo_iters` epochs of shuffled minibatch steps over `records`.
fn update(
    params: &mut PolicyParams,
    adam: &mut Adam,
    records: &[&StepRecord],
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossStats> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut total = LossStats::default();
    let mut steps = 0usize;
    for _ in 0..cfg.ppo_iters {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&StepRecord> = chunk.iter().map(|&i| records[i]).collect();
            let (stats, grads) = ppo_gradients(params, &batch, cfg)?;
            adam.step(params, &grads, cfg.lr)?;
            params.check_finite()?;
            total.loss += stats.loss;
            total.policy_loss += stats.policy_loss;
            total.value_loss += stats.value_loss;
            total.entropy += stats.entropy;
            steps += 1;
        }
    }
    let n = steps.max(1) as f64;
    Ok(LossStats {
        loss: total.loss / n,
        policy_loss: total.policy_loss / n,
        value_loss: total.value_loss / n,
        entropy: total.entropy / n,
    })
}

/// Collect-then-update loop. Checkpoints land in `opts.checkpoint_dir` as
/// `policy_<episodes>.params` (plus manifest, optimizer and run-state
/// sidecars) and the log is appended to [`LOG_FILE`] there. If the
/// parameters stop being finite the run halts with a numerical error and
/// the previous checkpoint stays the latest one on disk.
pub fn train(cfg: &PpoConfig, net: &NetConfig, factory: &dyn EnvFactory, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    net.validate()?;
    if opts.checkpoint_interval == 0 {
        return Err(LearnError::Config("checkpoint_interval must be positive".into()));
    }
    fs::create_dir_all(&opts.checkpoint_dir)?;

    let mut ck = match &opts.resume {
        Some(path) => {
            let ck = load_checkpoint(path, cfg)?;
            if ck.params.cfg != *net {
                return Err(LearnError::Config(format!(
                    "checkpoint network {:?} differs from the requested {net:?}",
                    ck.params.cfg
                )));
            }
            ck
        }
        None => {
            let params = PolicyParams::init(*net, opts.seed)?;
            let adam = Adam::new(&params, cfg);
            Checkpoint { params, adam, episodes: 0, seed: opts.seed }
        }
    };

    let mut log_out = open_log(&opts.checkpoint_dir.join(LOG_FILE))?;
    let clock = Instant::now();
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let mut last_saved = opts.resume.clone();

    while ck.episodes < opts.total_episodes {
        let first = ck.episodes;
        let n = cfg.workers.min(opts.total_episodes - first);
        let seeds: Vec<u64> = (first..first + n).map(|e| episode_seed(ck.seed, e as u64)).collect();
        let buffer = collect_rollouts(&ck.params, factory, &seeds, cfg.workers, cfg.gamma)?;
        let records: Vec<&StepRecord> = buffer.records().collect();

        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(ck.seed ^ SHUFFLE_STREAM, first as u64));
        let stats = if records.is_empty() {
            LossStats::default()
        } else {
            update(&mut ck.params, &mut ck.adam, &records, cfg, &mut rng).map_err(|e| match e {
                LearnError::Numerical(msg) => LearnError::Numerical(format!(
                    "{msg}; halted after episode {first}, last good checkpoint: {}",
                    last_saved.as_ref().map_or("none".to_string(), |p| p.display().to_string())
                )),
                other => other,
            })?
        };

        let wall = clock.elapsed().as_secs_f64();
        for (i, ep) in buffer.episodes.iter().enumerate() {
            let row = LogRow {
                episode: first + i + 1,
                wall_time_s: wall,
                mean_return: ep.total_reward(),
                policy_loss: stats.policy_loss,
                value_loss: stats.value_loss,
                entropy: stats.entropy,
            };
            log_out.serialize(&row).map_err(csv_err)?;
            log.push(row);
        }
        log_out.flush()?;
        log::info!(
            "episodes {}..{}: mean return {:.3}, loss {:.4}",
            first + 1,
            first + n,
            buffer.episodes.iter().map(|e| e.total_reward()).sum::<f64>() / n as f64,
            stats.loss
        );

        ck.episodes = first + n;
        let crossed = ck.episodes / opts.checkpoint_interval > first / opts.checkpoint_interval;
        if crossed || ck.episodes == opts.total_episodes {
            let path = save_checkpoint(&opts.checkpoint_dir, &ck)?;
            last_saved = Some(path.clone());
            checkpoints.push(path);
        }
    }
    Ok(TrainOutcome { params: ck.params, log, checkpoints })
}
