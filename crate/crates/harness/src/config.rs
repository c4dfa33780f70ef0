//! One TOML file drives every subcommand: `[eval]` for evaluation
//! campaigns and `[train]` for training runs. Every field has a default, so
//! an empty file is valid.

use std::path::{Path, PathBuf};

use ipp3d_core::baselines::MctsConfig;
use ipp3d_core::groundtruth::FieldGenConfig;
use ipp3d_core::roadmap::RoadmapConfig;
use ipp3d_core::simenv::EnvConfig;
use ipp3d_learn::policynet::NetConfig;
use ipp3d_learn::trainer::PpoConfig;
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planner {
    Policy,
    Random,
    Coverage,
    Mcts,
}

impl Planner {
    pub fn name(self) -> &'static str {
        match self {
            Self::Policy => "policy",
            Self::Random => "random",
            Self::Coverage => "coverage",
            Self::Mcts => "mcts",
        }
    }
}

impl std::str::FromStr for Planner {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "policy" => Ok(Self::Policy),
            "random" => Ok(Self::Random),
            "coverage" => Ok(Self::Coverage),
            "mcts" => Ok(Self::Mcts),
            other => Err(HarnessError::Config(format!("unknown planner {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Cells per side of the square map.
    pub map_size: usize,
    pub resolution: f64,
    pub trials: usize,
    /// Mission time in seconds.
    pub budget: f64,
    pub planner: Planner,
    /// Parameter file; required for the policy planner.
    pub checkpoint: Option<PathBuf>,
    /// Seconds at which the metrics are read off each trial.
    pub eval_times: Vec<f64>,
    pub seed_base: u64,
    /// Trials run concurrently.
    pub workers: usize,
    /// Write measured decision times; when off the column holds zeros so
    /// that repeated runs produce identical files.
    pub record_runtime: bool,
    pub env: EnvConfig,
    pub roadmap: RoadmapConfig,
    pub field: FieldGenConfig,
    pub mcts: MctsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            map_size: 15,
            resolution: 2.5,
            trials: 4,
            budget: 200.0,
            planner: Planner::Random,
            checkpoint: None,
            eval_times: vec![50.0, 100.0, 150.0, 200.0],
            seed_base: 0,
            workers: 1,
            record_runtime: true,
            env: EnvConfig::default(),
            roadmap: RoadmapConfig::default(),
            field: FieldGenConfig::default(),
            mcts: MctsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.map_size < 2 || !(self.resolution > 0.0) {
            return bad(format!("map_size {} / resolution {} out of range", self.map_size, self.resolution));
        }
        if self.trials == 0 || self.workers == 0 {
            return bad("trials and workers must be positive".into());
        }
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return bad(format!("budget {} must be finite and non-negative", self.budget));
        }
        if self.eval_times.windows(2).any(|w| !(w[0] < w[1])) {
            return bad(format!("eval_times {:?} must be strictly ascending", self.eval_times));
        }
        if self.eval_times.iter().any(|&t| !(t >= 0.0 && t <= self.budget)) {
            return bad(format!("eval_times {:?} must lie in [0, budget = {}]", self.eval_times, self.budget));
        }
        if self.planner == Planner::Policy {
            match &self.checkpoint {
                None => return bad("the policy planner needs a checkpoint".into()),
                Some(p) if !p.is_file() => return bad(format!("checkpoint {} does not exist", p.display())),
                Some(_) => {}
            }
        }
        self.mcts.validate()?;
        Ok(())
    }

    /// Environment settings with this experiment's budget.
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig { budget: self.budget, ..self.env.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub map_size: usize,
    pub resolution: f64,
    /// Episode count to reach.
    pub episodes: usize,
    pub checkpoint_dir: PathBuf,
    pub checkpoint_interval: usize,
    pub resume: Option<PathBuf>,
    pub seed: u64,
    pub env: EnvConfig,
    pub roadmap: RoadmapConfig,
    pub field: FieldGenConfig,
    pub ppo: PpoConfig,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            map_size: 10,
            resolution: 2.5,
            episodes: 50,
            checkpoint_dir: PathBuf::from("runs/train"),
            checkpoint_interval: 50,
            resume: None,
            seed: 0,
            env: EnvConfig::default(),
            roadmap: RoadmapConfig::default(),
            field: FieldGenConfig::default(),
            ppo: PpoConfig::default(),
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.map_size < 2 || !(self.resolution > 0.0) {
            return Err(HarnessError::Config(format!(
                "map_size {} / resolution {} out of range",
                self.map_size, self.resolution
            )));
        }
        if self.roadmap.k_pe != self.net.k_pe {
            return Err(HarnessError::Config(format!(
                "roadmap k_pe {} differs from the network's {}",
                self.roadmap.k_pe, self.net.k_pe
            )));
        }
        self.ppo.validate()?;
        self.net.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub eval: ExperimentConfig,
    pub train: TrainConfig,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}
