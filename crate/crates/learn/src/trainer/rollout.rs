use std::sync::Arc;

use ipp3d_core::belief::GpHyperparams;
use ipp3d_core::groundtruth::{generate_field, FieldGenConfig};
use ipp3d_core::roadmap::{build_roadmap_with, RoadmapConfig};
use ipp3d_core::sensor::SensorConfig;
use ipp3d_core::simenv::{EnvConfig, EnvContext, IppEnv};
use ipp3d_core::GridSpec;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffmath::Tensor;
use crate::policynet::{pe_tensor, PolicyInput, PolicyParams};
use crate::{LearnError, Result};

use super::{compute_advantage, discounted_returns};

/// Source of training episodes: one fresh environment per seed.
pub trait EnvFactory: Sync {
    fn make(&self, seed: u64) -> Result<IppEnv>;
    /// Positional encodings of the roadmap every episode runs on.
    fn pe(&self) -> Arc<Tensor>;
}

/// Square maps with a new random hotspot field for every episode.
#[derive(Debug, Clone)]
pub struct RandomFieldEnvs {
    ctx: Arc<EnvContext>,
    pe: Arc<Tensor>,
    field: FieldGenConfig,
}

impl RandomFieldEnvs {
    pub fn new(
        side: usize,
        resolution: f64,
        roadmap: &RoadmapConfig,
        env: EnvConfig,
        field: FieldGenConfig,
    ) -> Result<Self> {
        let grid = GridSpec::new(side, side, resolution)?;
        let roadmap = Arc::new(build_roadmap_with(grid, roadmap)?);
        let pe = Arc::new(pe_tensor(&roadmap)?);
        let ctx = EnvContext::new(roadmap, SensorConfig::default(), GpHyperparams::default(), env)?;
        Ok(Self { ctx, pe, field })
    }

    pub fn context(&self) -> &Arc<EnvContext> {
        &self.ctx
    }

    pub fn field_config(&self) -> &FieldGenConfig {
        &self.field
    }
}

impl EnvFactory for RandomFieldEnvs {
    fn make(&self, seed: u64) -> Result<IppEnv> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = self.ctx.roadmap.grid;
        let truth = generate_field(grid.width, grid.height, grid.resolution, rng.next_u64(), &self.field)?;
        Ok(IppEnv::reset(Arc::clone(&self.ctx), Arc::new(truth), rng.next_u64())?)
    }

    fn pe(&self) -> Arc<Tensor> {
        Arc::clone(&self.pe)
    }
}

/// Seed of the `episode`-th training episode of a run seeded with `base`.
pub fn episode_seed(base: u64, episode: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(episode);
    rng.next_u64()
}

/// One decision as seen at collection time.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub input: PolicyInput,
    /// Index into `input.neighbors`.
    pub action: usize,
    pub old_log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub seed: u64,
    pub records: Vec<StepRecord>,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    /// Fills advantages and returns from the stored rewards and values.
    pub fn finish(&mut self, gamma: f64) -> Result<()> {
        let rewards: Vec<f64> = self.records.iter().map(|r| r.reward).collect();
        let values: Vec<f64> = self.records.iter().map(|r| r.value).collect();
        let dones: Vec<bool> = self.records.iter().map(|r| r.done).collect();
        let adv = compute_advantage(&rewards, &values, &dones, gamma);
        let ret = discounted_returns(&rewards, &dones, gamma);
        for ((r, a), g) in self.records.iter_mut().zip(adv).zip(ret) {
            if !a.is_finite() {
                return Err(LearnError::Numerical(format!("advantage {a} in episode {}", self.seed)));
            }
            r.advantage = a;
            r.ret = g;
        }
        Ok(())
    }
}

/// Episodes in worker order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub episodes: Vec<Episode>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.episodes.iter().map(|e| e.records.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = &StepRecord> {
        self.episodes.iter().flat_map(|e| e.records.iter())
    }
}

/// Plays one episode with actions sampled from `params`.
pub fn run_episode(params: &PolicyParams, factory: &dyn EnvFactory, seed: u64, gamma: f64) -> Result<Episode> {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut env = factory.make(seeds.next_u64())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.next_u64());
    let pe = factory.pe();
    let mut records = Vec::new();
    while !env.is_done() {
        let obs = env.observe()?;
        let input = PolicyInput::from_observation(&obs, Arc::clone(&pe))?;
        let eval = params.act(&input)?;
        let dist = WeightedIndex::new(&eval.probs)
            .map_err(|e| LearnError::Numerical(format!("bad action distribution {:?}: {e}", eval.probs)))?;
        let action = dist.sample(&mut rng);
        let step = env.step(input.neighbors[action])?;
        records.push(StepRecord {
            old_log_prob: eval.log_probs[action],
            value: eval.value,
            input,
            action,
            reward: step.reward,
            done: step.done,
            advantage: 0.0,
            ret: 0.0,
        });
    }
    let mut ep = Episode { seed, records };
    ep.finish(gamma)?;
    Ok(ep)
}

/// Runs one episode per seed on up to `workers` threads. The result is
/// ordered by seed position regardless of scheduling.
pub fn collect_rollouts(
    params: &PolicyParams,
    factory: &dyn EnvFactory,
    seeds: &[u64],
    workers: usize,
    gamma: f64,
) -> Result<RolloutBuffer> {
    if workers == 0 {
        return Err(LearnError::Config("need at least one worker".into()));
    }
    let workers = workers.min(seeds.len()).max(1);
    let results: Vec<Vec<Result<Episode>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    let mut out = Vec::new();
                    for &seed in seeds.iter().skip(w).step_by(workers) {
                        let ep = run_episode(params, factory, seed, gamma);
                        let failed = ep.is_err();
                        out.push(ep);
                        if failed {
                            break;
                        }
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
    });

    let mut slots: Vec<Option<Episode>> = vec![None; seeds.len()];
    for (w, eps) in results.into_iter().enumerate() {
        let mut done = 0;
        for (j, ep) in eps.into_iter().enumerate() {
            match ep {
                Ok(ep) => {
                    slots[w + j * workers] = Some(ep);
                    done += 1;
                }
                Err(e) => return Err(LearnError::Worker { worker: w, episodes: done, source: Box::new(e) }),
            }
        }
    }
    Ok(RolloutBuffer { episodes: slots.into_iter().map(|e| e.expect("every seed ran")).collect() })
}
