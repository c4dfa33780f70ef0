//! The sequential decision process over the roadmap.
//!
//! An action moves the UAV in a straight line to an adjacent node. Travel
//! time is deducted from the budget, the sensor fires every
//! `measurement_interval` normalized units along the segment and once more
//! on arrival, and each reading is fused into the belief. The reward is the
//! relative drop of region-of-interest uncertainty over the step, times 10.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{init_prior, BeliefState, GpHyperparams, MeasurementBatch};
use crate::groundtruth::{rmse_in_roi, roi_mask, GroundTruthField, RoiConfig};
use crate::roadmap::{augment_with, normalize_coords, AugmentedGraph, FootprintIndex, NodeStat, Roadmap};
use crate::sensor::{footprint_cells, noise_variance, take_measurement, SensorConfig};
use crate::{IppError, Position, Result};

const REWARD_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Seconds.
    pub budget: f64,
    /// Meters per second.
    pub speed: f64,
    /// Normalized units (longer map side = 1).
    pub measurement_interval: f64,
    pub start_position: Position,
    /// Start from a uniformly random node instead of `start_position`.
    pub randomize_start: bool,
    pub roi: RoiConfig,
    pub node_stat: NodeStat,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            budget: 150.0,
            speed: 2.0,
            measurement_interval: 0.2,
            start_position: [2.0, 2.0, 14.0],
            randomize_start: false,
            roi: RoiConfig::default(),
            node_stat: NodeStat::MeanStd,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget >= 0.0 && self.speed > 0.0 && self.measurement_interval > 0.0) {
            return Err(IppError::Config(format!(
                "need budget >= 0, speed > 0, interval > 0: {self:?}"
            )));
        }
        self.roi.validate()
    }
}

/// Everything about an episode that does not change between resets on the
/// same map size. Shared read-only across workers.
#[derive(Debug)]
pub struct EnvContext {
    pub roadmap: Arc<Roadmap>,
    pub footprints: FootprintIndex,
    pub coords: Arc<Vec<Position>>,
    pub prior: BeliefState,
    pub sensor: SensorConfig,
    pub gp: GpHyperparams,
    pub cfg: EnvConfig,
}

impl EnvContext {
    pub fn new(roadmap: Arc<Roadmap>, sensor: SensorConfig, gp: GpHyperparams, cfg: EnvConfig) -> Result<Arc<Self>> {
        sensor.validate()?;
        gp.validate()?;
        cfg.validate()?;
        let footprints = FootprintIndex::new(&roadmap, &sensor)?;
        let coords = Arc::new(normalize_coords(&roadmap.nodes));
        let prior = init_prior(roadmap.grid, &gp);
        Ok(Arc::new(Self { roadmap, footprints, coords, prior, sensor, gp, cfg }))
    }

    /// Node matching the configured start: same altitude level, and the
    /// nearest site within one cell's half-diagonal of the start point.
    pub fn start_node(&self) -> Result<usize> {
        let [x, y, z] = self.cfg.start_position;
        let r = &self.roadmap;
        let level = r
            .level_index(z)
            .ok_or_else(|| IppError::Config(format!("start altitude {z} is not a roadmap level")))?;
        let best = (0..r.len())
            .filter(|&i| r.level[i] == level)
            .min_by(|&a, &b| {
                let da = (r.nodes[a][0] - x).hypot(r.nodes[a][1] - y);
                let db = (r.nodes[b][0] - x).hypot(r.nodes[b][1] - y);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .ok_or_else(|| IppError::Config("roadmap has no nodes".into()))?;
        let d = (r.nodes[best][0] - x).hypot(r.nodes[best][1] - y);
        if d > r.grid.resolution * std::f64::consts::FRAC_1_SQRT_2 + 1e-9 {
            return Err(IppError::Config(format!("start ({x}, {y}, {z}) is not on the roadmap")));
        }
        Ok(best)
    }

    pub fn edge_time(&self, a: usize, b: usize) -> f64 {
        self.roadmap.distance(a, b) / self.cfg.speed
    }
}

/// Where measurement values come from.
#[derive(Debug, Clone)]
pub enum Observer {
    /// Noisy readings of the hidden field.
    Truth { field: Arc<GroundTruthField>, rng: ChaCha8Rng },
    /// Readings equal to the current belief mean: only the covariance
    /// changes. Used by planners that must not look at the hidden field.
    Expected,
}

/// Metrics recorded after every fused measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSample {
    pub time_s: f64,
    /// Full-map covariance trace.
    pub trace: f64,
    /// Trace over the true regions of interest.
    pub roi_trace: f64,
    /// RMSE of the clamped mean over the belief's current region of interest.
    pub rmse: f64,
    /// RMSE of the prior mean over that same region.
    pub rmse_prior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub current_node: usize,
    pub remaining_budget: f64,
    pub elapsed: f64,
    pub belief: BeliefState,
    pub trajectory: Vec<usize>,
    pub distance_since_measurement: f64,
    pub metrics_log: Vec<MetricSample>,
    pub measurements: usize,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub graph: AugmentedGraph,
    pub current_node: usize,
    pub neighbors: Vec<usize>,
    /// Parallel to `neighbors`: whether the edge fits in the remaining budget.
    pub affordable: Vec<bool>,
    pub remaining_budget: f64,
}

impl Observation {
    pub fn affordable_neighbors(&self) -> Vec<usize> {
        self.neighbors.iter().zip(&self.affordable).filter(|(_, &a)| a).map(|(&n, _)| n).collect()
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    /// Fused measurements during the step, arrival included.
    pub measurements: usize,
}

#[derive(Debug, Clone)]
pub struct IppEnv {
    ctx: Arc<EnvContext>,
    observer: Observer,
    /// Cells with true value at or above the threshold (metrics only).
    eval_roi: Vec<usize>,
    eval_roi_prior_trace: f64,
    state: EpisodeState,
}

impl IppEnv {
    /// Fresh episode on `truth` with the prior belief. `seed` drives the
    /// sensor noise and, if enabled, the random start.
    pub fn reset(ctx: Arc<EnvContext>, truth: Arc<GroundTruthField>, seed: u64) -> Result<Self> {
        if truth.grid() != ctx.roadmap.grid {
            return Err(IppError::Dimension("field and roadmap grids differ".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = if ctx.cfg.randomize_start {
            rng.random_range(0..ctx.roadmap.len())
        } else {
            ctx.start_node()?
        };
        let mut eval_roi: Vec<usize> =
            (0..truth.values().len()).filter(|&i| truth.value(i) >= ctx.cfg.roi.mu_th).collect();
        if eval_roi.is_empty() {
            eval_roi = (0..truth.values().len()).collect();
        }
        let eval_roi_prior_trace = ctx.prior.trace_over(&eval_roi)?;
        let state = EpisodeState {
            current_node: start,
            remaining_budget: ctx.cfg.budget,
            elapsed: 0.0,
            belief: ctx.prior.clone(),
            trajectory: vec![start],
            distance_since_measurement: 0.0,
            metrics_log: Vec::new(),
            measurements: 0,
            done: false,
        };
        let mut env = Self { ctx, observer: Observer::Truth { field: truth, rng }, eval_roi, eval_roi_prior_trace, state };
        env.record_metrics();
        env.state.done = env.no_affordable_move();
        Ok(env)
    }

    /// A copy whose future measurements are expected values, for lookahead.
    pub fn planning_clone(&self) -> Self {
        Self {
            ctx: Arc::clone(&self.ctx),
            observer: Observer::Expected,
            eval_roi: Vec::new(),
            eval_roi_prior_trace: 0.0,
            state: EpisodeState { metrics_log: Vec::new(), ..self.state.clone() },
        }
    }

    /// A planning environment resumed from a saved state.
    pub fn from_snapshot(ctx: Arc<EnvContext>, state: EpisodeState) -> Result<Self> {
        if state.current_node >= ctx.roadmap.len() || state.belief.len() != ctx.prior.len() {
            return Err(IppError::Dimension("snapshot does not match the context".into()));
        }
        Ok(Self { ctx, observer: Observer::Expected, eval_roi: Vec::new(), eval_roi_prior_trace: 0.0, state })
    }

    pub fn context(&self) -> &Arc<EnvContext> {
        &self.ctx
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn roadmap(&self) -> &Roadmap {
        &self.ctx.roadmap
    }

    pub fn is_done(&self) -> bool {
        self.state.done
    }

    pub fn eval_roi_prior_trace(&self) -> f64 {
        self.eval_roi_prior_trace
    }

    pub fn is_affordable(&self, to: usize) -> bool {
        self.ctx.edge_time(self.state.current_node, to) <= self.state.remaining_budget
    }

    pub fn affordable_neighbors(&self) -> Vec<usize> {
        let cur = self.state.current_node;
        self.ctx.roadmap.neighbors(cur).iter().copied().filter(|&n| self.is_affordable(n)).collect()
    }

    fn no_affordable_move(&self) -> bool {
        self.state.remaining_budget <= 0.0 || self.affordable_neighbors().is_empty()
    }

    pub fn observe(&self) -> Result<Observation> {
        let graph = augment_with(
            &self.ctx.roadmap,
            &self.state.belief,
            &self.ctx.footprints,
            &self.ctx.coords,
            self.ctx.cfg.node_stat,
        )?;
        let cur = self.state.current_node;
        let neighbors = self.ctx.roadmap.neighbors(cur).to_vec();
        let affordable = neighbors.iter().map(|&n| self.is_affordable(n)).collect();
        Ok(Observation {
            graph,
            current_node: cur,
            neighbors,
            affordable,
            remaining_budget: self.state.remaining_budget,
        })
    }

    /// Region of interest of the current belief (clamped mean), or every
    /// cell when it is empty.
    pub fn belief_roi(&self) -> Vec<usize> {
        let b = &self.state.belief;
        let roi = roi_mask(&b.clamped_mean(), &b.std_devs(), &self.ctx.cfg.roi).expect("same length");
        if roi.is_empty() {
            log::debug!("empty region of interest, using the full map");
            (0..b.len()).collect()
        } else {
            roi
        }
    }

    /// Moves to the adjacent node `action`.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.state.done {
            return Err(IppError::State("episode is already done".into()));
        }
        let from = self.state.current_node;
        if !self.ctx.roadmap.is_adjacent(from, action) {
            return Err(IppError::InvalidAction { action, current: from });
        }
        let cost = self.ctx.edge_time(from, action);
        if cost > self.state.remaining_budget {
            return Err(IppError::State(format!(
                "edge to {action} takes {cost:.3} s, only {:.3} s left",
                self.state.remaining_budget
            )));
        }

        let roi = self.belief_roi();
        let trace_before = self.state.belief.trace_over(&roi)?;

        let p0 = self.ctx.roadmap.nodes[from];
        let p1 = self.ctx.roadmap.nodes[action];
        let unit = self.ctx.roadmap.grid.unit_length();
        let length = self.ctx.roadmap.distance(from, action) / unit;
        let interval = self.ctx.cfg.measurement_interval;
        let carried = self.state.distance_since_measurement;
        let crossings = ((carried + length) / interval).floor() as usize;
        let start_time = self.state.elapsed;
        for j in 1..=crossings {
            let s = j as f64 * interval - carried;
            let t = if length > 0.0 { (s / length).clamp(0.0, 1.0) } else { 1.0 };
            let pos = lerp(p0, p1, t);
            self.measure(pos, start_time + s * unit / self.ctx.cfg.speed)?;
        }
        self.measure(p1, start_time + cost)?;

        let st = &mut self.state;
        st.distance_since_measurement = 0.0;
        st.remaining_budget = (st.remaining_budget - cost).max(0.0);
        st.elapsed += cost;
        st.current_node = action;
        st.trajectory.push(action);

        let trace_after = self.state.belief.trace_over(&roi)?;
        let reward = compute_reward(trace_before, trace_after);
        self.state.done = self.no_affordable_move();
        Ok(StepOutcome { reward, done: self.state.done, measurements: crossings + 1 })
    }

    fn measure(&mut self, pos: Position, time_s: f64) -> Result<()> {
        let batch = match &mut self.observer {
            Observer::Truth { field, rng } => take_measurement(pos, field, &self.ctx.sensor, rng)?,
            Observer::Expected => {
                let cells = footprint_cells(pos, &self.ctx.roadmap.grid, &self.ctx.sensor)?;
                let var = noise_variance(pos[2], &self.ctx.sensor)?;
                let values = cells.iter().map(|&c| self.state.belief.mu[c]).collect();
                let n = cells.len();
                MeasurementBatch { cell_indices: cells, values, variances: vec![var; n] }
            }
        };
        self.state.belief.kalman_update_in_place(&batch)?;
        self.state.measurements += 1;
        if matches!(self.observer, Observer::Truth { .. }) {
            self.record_metrics_at(time_s);
        }
        Ok(())
    }

    fn record_metrics(&mut self) {
        let t = self.state.elapsed;
        self.record_metrics_at(t);
    }

    fn record_metrics_at(&mut self, time_s: f64) {
        let Observer::Truth { field, .. } = &self.observer else { return };
        let b = &self.state.belief;
        let roi = self.belief_roi();
        let prior_mu = vec![self.ctx.gp.prior_mean.clamp(0.0, 1.0); b.len()];
        let sample = MetricSample {
            time_s,
            trace: b.trace(),
            roi_trace: b.trace_over(&self.eval_roi).expect("valid cells"),
            rmse: rmse_in_roi(&b.clamped_mean(), field, &roi),
            rmse_prior: rmse_in_roi(&prior_mu, field, &roi),
        };
        self.state.metrics_log.push(sample);
    }
}

fn lerp(a: Position, b: Position, t: f64) -> Position {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// `10 · (Tr⁻ − Tr⁺) / Tr⁻`; zero when there was no uncertainty to reduce.
pub fn compute_reward(trace_before: f64, trace_after: f64) -> f64 {
    if trace_before <= 0.0 {
        return 0.0;
    }
    (trace_before - trace_after) / trace_before * REWARD_SCALE
}
