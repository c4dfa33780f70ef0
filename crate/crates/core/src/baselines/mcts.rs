use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::simenv::IppEnv;
use crate::{IppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MctsConfig {
    pub iterations: usize,
    /// UCB1 exploration constant, applied to returns normalized to [0, 1].
    pub ucb_c: f64,
    /// A node with `N` visits may hold at most `ceil(pw_c * N^pw_alpha)` children.
    pub pw_c: f64,
    pub pw_alpha: f64,
    pub rollout_depth: usize,
    pub gamma: f64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self { iterations: 300, ucb_c: 1.4, pw_c: 2.0, pw_alpha: 0.5, rollout_depth: 6, gamma: 0.99 }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.iterations >= 1
            && self.ucb_c >= 0.0
            && self.pw_c > 0.0
            && self.pw_alpha > 0.0
            && self.pw_alpha < 1.0
            && self.gamma > 0.0
            && self.gamma <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(IppError::Config(format!("invalid MCTS config {self:?}")))
        }
    }

    fn child_cap(&self, visits: u32) -> usize {
        ((self.pw_c * (visits as f64).powf(self.pw_alpha)).ceil() as usize).max(1)
    }
}

/// Root statistics after a search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSummary {
    pub action: usize,
    pub root_visits: u32,
    /// `(action, visits, mean return)` for every expanded root child.
    pub children: Vec<(usize, u32, f64)>,
}

#[derive(Debug)]
struct TreeNode {
    visits: u32,
    value_sum: f64,
    children: Vec<usize>,
    /// Not yet expanded actions, best heuristic score first.
    untried: Option<Vec<usize>>,
    action: usize,
}

impl TreeNode {
    fn new(action: usize) -> Self {
        Self { visits: 0, value_sum: 0.0, children: Vec::new(), untried: None, action }
    }

    fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }
}

/// Chooses the next node from the current state of `env`. Lookahead runs on
/// a planning copy whose measurements are expected values, so the hidden
/// field is never read.
pub fn mcts_plan<R: Rng + ?Sized>(env: &IppEnv, cfg: &MctsConfig, rng: &mut R) -> Result<usize> {
    Ok(mcts_search(env, cfg, rng)?.action)
}

pub fn mcts_search<R: Rng + ?Sized>(env: &IppEnv, cfg: &MctsConfig, rng: &mut R) -> Result<SearchSummary> {
    cfg.validate()?;
    if env.is_done() || env.affordable_neighbors().is_empty() {
        return Err(IppError::State("no affordable neighbor".into()));
    }
    let root_env = env.planning_clone();
    let mut tree = vec![TreeNode::new(root_env.state().current_node)];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);

    for _ in 0..cfg.iterations {
        let mut sim = root_env.clone();
        let mut path = vec![0usize];
        let mut rewards = Vec::new();
        loop {
            let id = *path.last().expect("non-empty");
            if sim.is_done() {
                break;
            }
            if tree[id].untried.is_none() {
                tree[id].untried = Some(ranked_actions(&sim, rng));
            }
            let can_widen = tree[id].children.len() < cfg.child_cap(tree[id].visits)
                && !tree[id].untried.as_ref().expect("set").is_empty();
            if can_widen {
                let action = tree[id].untried.as_mut().expect("set").remove(0);
                rewards.push(sim.step(action)?.reward);
                tree.push(TreeNode::new(action));
                let child = tree.len() - 1;
                tree[id].children.push(child);
                path.push(child);
                break;
            }
            if tree[id].children.is_empty() {
                break;
            }
            let parent_visits = tree[id].visits.max(1) as f64;
            let span = if hi > lo { hi - lo } else { 1.0 };
            let child = *tree[id]
                .children
                .iter()
                .max_by(|&&a, &&b| {
                    let score = |c: usize| {
                        let n = &tree[c];
                        if n.visits == 0 {
                            return f64::INFINITY;
                        }
                        let q = if hi > lo { (n.mean() - lo) / span } else { 0.5 };
                        q + cfg.ucb_c * (parent_visits.ln() / n.visits as f64).sqrt()
                    };
                    score(a).total_cmp(&score(b)).then(b.cmp(&a))
                })
                .expect("non-empty");
            rewards.push(sim.step(tree[child].action)?.reward);
            path.push(child);
        }

        let mut ret = rollout(&mut sim, cfg, rng)?;
        tree[path[0]].visits += 1;
        for (k, &id) in path.iter().enumerate().skip(1).rev() {
            ret = rewards[k - 1] + cfg.gamma * ret;
            tree[id].visits += 1;
            tree[id].value_sum += ret;
            lo = lo.min(ret);
            hi = hi.max(ret);
        }
    }

    let root = &tree[0];
    let children: Vec<(usize, u32, f64)> =
        root.children.iter().map(|&c| (tree[c].action, tree[c].visits, tree[c].mean())).collect();
    let action = children
        .iter()
        .max_by(|a, b| a.2.total_cmp(&b.2).then(a.1.cmp(&b.1)).then(b.0.cmp(&a.0)))
        .map(|c| c.0)
        .expect("at least one child after one iteration");
    Ok(SearchSummary { action, root_visits: root.visits, children })
}

/// Affordable neighbors by descending heuristic score; equal scores are
/// ordered at random.
fn ranked_actions<R: Rng + ?Sized>(env: &IppEnv, rng: &mut R) -> Vec<usize> {
    let mut actions = env.affordable_neighbors();
    actions.shuffle(rng);
    let roi = roi_flags(env);
    let mut scored: Vec<(usize, f64)> = actions.into_iter().map(|a| (a, heuristic(env, &roi, a))).collect();
    scored.sort_by(|x, y| y.1.total_cmp(&x.1));
    scored.into_iter().map(|(a, _)| a).collect()
}

fn roi_flags(env: &IppEnv) -> Vec<bool> {
    let mut flags = vec![false; env.state().belief.len()];
    for c in env.belief_roi() {
        flags[c] = true;
    }
    flags
}

/// Expected ROI variance removed by the arrival reading at `to`, treating
/// cells as independent, per second of travel.
fn heuristic(env: &IppEnv, roi: &[bool], to: usize) -> f64 {
    let ctx = env.context();
    let h = ctx.roadmap.nodes[to][2];
    let noise = crate::sensor::noise_variance(h, &ctx.sensor).unwrap_or(f64::INFINITY);
    let cov = &env.state().belief.cov;
    let gain: f64 = ctx.footprints.cells[to]
        .iter()
        .filter(|&&c| roi[c])
        .map(|&c| {
            let p = cov[(c, c)];
            p * p / (p + noise)
        })
        .sum();
    gain / ctx.edge_time(env.state().current_node, to).max(1e-3)
}

fn rollout<R: Rng + ?Sized>(env: &mut IppEnv, cfg: &MctsConfig, rng: &mut R) -> Result<f64> {
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..cfg.rollout_depth {
        if env.is_done() {
            break;
        }
        let Some(&action) = ranked_actions(env, rng).first() else { break };
        total += discount * env.step(action)?.reward;
        discount *= cfg.gamma;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{GpHyperparams, MeasurementBatch};
    use crate::groundtruth::{generate_field, FieldGenConfig};
    use crate::roadmap::{build_roadmap, Roadmap};
    use crate::sensor::SensorConfig;
    use crate::simenv::{EnvConfig, EnvContext};
    use crate::GridSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn lattice_env(side: usize, seed: u64) -> IppEnv {
        let g = GridSpec::new(side, side, 2.5).unwrap();
        let roadmap = Arc::new(build_roadmap(g, &[8.0, 14.0], 20).unwrap());
        let ctx = EnvContext::new(roadmap, SensorConfig::default(), GpHyperparams::default(), EnvConfig::default())
            .unwrap();
        let truth = Arc::new(generate_field(side, side, 2.5, seed, &FieldGenConfig::default()).unwrap());
        IppEnv::reset(ctx, truth, seed).unwrap()
    }

    #[test]
    fn single_iteration_returns_affordable_neighbor() {
        let env = lattice_env(6, 1);
        let cfg = MctsConfig { iterations: 1, ..Default::default() };
        let a = mcts_plan(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(env.affordable_neighbors().contains(&a));
    }

    #[test]
    fn widening_caps_root_children() {
        let env = lattice_env(6, 2);
        for iterations in [1, 2, 5, 17, 60] {
            let cfg = MctsConfig { iterations, ..Default::default() };
            let s = mcts_search(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert_eq!(s.root_visits as usize, iterations);
            let cap = (cfg.pw_c * (iterations as f64).powf(cfg.pw_alpha)).ceil() as usize;
            assert!(s.children.len() <= cap, "{} > {cap}", s.children.len());
            assert_eq!(s.children.iter().map(|c| c.1 as usize).sum::<usize>(), iterations);
        }
    }

    #[test]
    fn search_leaves_env_untouched_and_is_seeded() {
        let env = lattice_env(6, 4);
        let before = env.state().clone();
        let cfg = MctsConfig { iterations: 40, ..Default::default() };
        let a = mcts_search(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = mcts_search(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(env.state(), &before);
    }

    #[test]
    fn config_ranges() {
        assert!(MctsConfig::default().validate().is_ok());
        for bad in [
            MctsConfig { iterations: 0, ..Default::default() },
            MctsConfig { pw_alpha: 1.0, ..Default::default() },
            MctsConfig { pw_alpha: 0.0, ..Default::default() },
            MctsConfig { gamma: 0.0, ..Default::default() },
            MctsConfig { gamma: 1.5, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn root_values_finite_for_any_budget() {
        let env = lattice_env(5, 8);
        for iterations in 1..12 {
            let cfg = MctsConfig { iterations, ..Default::default() };
            let s = mcts_search(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(iterations as u64)).unwrap();
            assert!(s.children.iter().all(|c| c.2.is_finite()));
        }
    }

    #[test]
    fn rejects_finished_episode() {
        let g = GridSpec::new(4, 4, 2.5).unwrap();
        let roadmap = Arc::new(build_roadmap(g, &[8.0, 14.0], 4).unwrap());
        let cfg = EnvConfig { budget: 0.0, ..Default::default() };
        let ctx = EnvContext::new(roadmap, SensorConfig::default(), GpHyperparams::default(), cfg).unwrap();
        let truth = Arc::new(generate_field(4, 4, 2.5, 0, &FieldGenConfig::default()).unwrap());
        let env = IppEnv::reset(ctx, truth, 0).unwrap();
        assert!(mcts_plan(&env, &MctsConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    /// Start between two candidate waypoints with budget for one move; the
    /// right half of the map has already been observed closely, the left
    /// half has not.
    #[test]
    fn prefers_the_uncertain_side() {
        let grid = GridSpec::new(6, 2, 2.5).unwrap();
        let nodes = vec![[7.5, 2.5, 8.0], [2.5, 2.5, 8.0], [12.5, 2.5, 8.0]];
        let roadmap = Roadmap {
            grid,
            nodes,
            altitude_levels: vec![8.0],
            level: vec![0; 3],
            edges: vec![vec![1, 2], vec![0, 2], vec![0, 1]],
            pe: Vec::new(),
            k: 2,
        };
        let cfg = EnvConfig { budget: 3.0, start_position: [7.5, 2.5, 8.0], ..Default::default() };
        let ctx = EnvContext::new(Arc::new(roadmap), SensorConfig::default(), GpHyperparams::default(), cfg).unwrap();
        let right: Vec<usize> = (0..grid.len()).filter(|&i| grid.coords(i).0 >= 3).collect();
        let n = right.len();
        let batch = MeasurementBatch::new(right, vec![0.5; n], vec![1e-3; n]).unwrap();
        let truth = Arc::new(generate_field(6, 2, 2.5, 0, &FieldGenConfig::default()).unwrap());
        let env = IppEnv::reset(ctx.clone(), truth, 0).unwrap();
        let mut state = env.state().clone();
        state.current_node = 0;
        state.belief.kalman_update_in_place(&batch).unwrap();
        let env = IppEnv::from_snapshot(ctx, state).unwrap();

        let cfg = MctsConfig { iterations: 200, ..Default::default() };
        let hits = (0..50)
            .filter(|&s| mcts_plan(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(s)).unwrap() == 1)
            .count();
        assert!(hits >= 45, "{hits}/50");
    }
}
