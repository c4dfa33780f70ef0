use ipp3d_learn::trainer::{train, RandomFieldEnvs, TrainOptions, TrainOutcome};

use crate::config::TrainConfig;
use crate::Result;

/// Builds the training environment from `cfg` and runs the trainer.
pub fn run_train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let envs = RandomFieldEnvs::new(cfg.map_size, cfg.resolution, &cfg.roadmap, cfg.env.clone(), cfg.field.clone())?;
    let opts = TrainOptions {
        total_episodes: cfg.episodes,
        checkpoint_dir: cfg.checkpoint_dir.clone(),
        checkpoint_interval: cfg.checkpoint_interval,
        resume: cfg.resume.clone(),
        seed: cfg.seed,
    };
    Ok(train(&cfg.ppo, &cfg.net, &envs, &opts)?)
}
