use std::sync::Arc;

use ipp3d_core::groundtruth::FieldGenConfig;
use ipp3d_core::roadmap::RoadmapConfig;
use ipp3d_core::simenv::EnvConfig;
use proptest::prelude::*;

use super::*;
use crate::diffmath::{check_gradients, Tape, FD_REL_TOL, FD_STEP};
use crate::policynet::{BoundParams, NetConfig, PolicyParams};

fn tiny_net() -> NetConfig {
    NetConfig { embed_dim: 4, heads: 2, k_pe: 3, logit_clip: 10.0, ff_hidden: 4 }
}

fn factory(budget: f64) -> RandomFieldEnvs {
    let roadmap = RoadmapConfig { k_pe: 3, ..Default::default() };
    let env = EnvConfig { budget, ..Default::default() };
    RandomFieldEnvs::new(4, 2.5, &roadmap, env, FieldGenConfig::default()).unwrap()
}

fn quick_ppo() -> PpoConfig {
    PpoConfig { workers: 2, batch_size: 8, ppo_iters: 2, lr: 1e-3, ..Default::default() }
}

fn sample_records(n: usize) -> (PolicyParams, Vec<StepRecord>) {
    let params = PolicyParams::init(tiny_net(), 3).unwrap();
    let ep = run_episode(&params, &factory(40.0), 11, 0.99).unwrap();
    assert!(ep.records.len() >= n, "episode too short: {}", ep.records.len());
    (params, ep.records.into_iter().take(n).collect())
}

#[test]
fn advantage_with_zero_values_is_the_reward() {
    let r = [0.5, 1.0, 2.0];
    for gamma in [0.3, 0.99, 1.0] {
        assert_eq!(compute_advantage(&r, &[0.0; 3], &[false, false, true], gamma), r.to_vec());
    }
}

#[test]
fn advantage_hand_example() {
    let adv = compute_advantage(&[1.0, 0.0], &[2.0, 3.0], &[false, true], 0.99);
    assert!((adv[0] - 1.97).abs() < 1e-12);
}

#[test]
fn terminal_step_does_not_bootstrap() {
    let adv = compute_advantage(&[1.5, 4.0], &[0.25, 7.0], &[true, false], 0.9);
    assert_eq!(adv[0], 1.5 - 0.25);
    assert_eq!(adv[1], 4.0 - 7.0);
}

#[test]
fn returns_are_discounted_reward_to_go() {
    let g = discounted_returns(&[1.0, 2.0, 3.0, 5.0], &[false, false, true, true], 0.5);
    assert_eq!(g, vec![2.75, 3.5, 3.0, 5.0]);
}

#[test]
fn clip_examples() {
    assert!((clipped_objective(2.0, 1.0, 0.2) - 1.2).abs() < 1e-15);
    assert_eq!(clipped_objective(1.0, -0.7, 0.2), -0.7);
    for r in [0.1, 0.9, 1.0, 1.7, 3.0] {
        assert_eq!(clipped_objective(r, 0.0, 0.2), 0.0);
    }
    assert!((clipped_objective(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
}

proptest! {
    #[test]
    fn clipped_never_beats_unclipped(r in 0.0f64..5.0, adv in 0.0f64..10.0, eps in 0.01f64..0.99) {
        prop_assert!(clipped_objective(r, adv, eps) <= r * adv);
    }
}

#[test]
fn config_ranges() {
    PpoConfig::default().validate().unwrap();
    for bad in [
        PpoConfig { clip_eps: 0.0, ..Default::default() },
        PpoConfig { clip_eps: 1.0, ..Default::default() },
        PpoConfig { gamma: 0.0, ..Default::default() },
        PpoConfig { gamma: 1.01, ..Default::default() },
        PpoConfig { workers: 0, ..Default::default() },
        PpoConfig { lr: f64::NAN, ..Default::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    assert!(PpoConfig { gamma: 1.0, ..Default::default() }.validate().is_ok());
}

fn loss_values(params: &PolicyParams, batch: &[&StepRecord], cfg: &PpoConfig) -> (f64, f64, f64, f64) {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let t = ppo_loss(&mut tape, &bound, batch, &params.cfg, cfg).unwrap();
    let v = |x| tape.value(x).item().unwrap();
    (v(t.loss), v(t.surrogate), v(t.value_loss), v(t.entropy))
}

#[test]
fn unchanged_policy_gives_mean_advantage() {
    let (params, mut recs) = sample_records(4);
    for (i, r) in recs.iter_mut().enumerate() {
        r.advantage = [0.5, -1.0, 2.0, 0.25][i];
    }
    let batch: Vec<&StepRecord> = recs.iter().collect();
    let (_, surr, _, _) = loss_values(&params, &batch, &PpoConfig::default());
    assert!((surr - 0.4375).abs() < 1e-12, "{surr}");
}

#[test]
fn doubled_ratio_is_clipped() {
    let (params, mut recs) = sample_records(1);
    recs[0].old_log_prob -= 2f64.ln();
    recs[0].advantage = 1.0;
    let (_, surr, _, _) = loss_values(&params, &[&recs[0]], &PpoConfig::default());
    assert!((surr - 1.2).abs() < 1e-12, "{surr}");
}

#[test]
fn zero_advantage_zero_surrogate() {
    let (params, mut recs) = sample_records(3);
    for (r, shift) in recs.iter_mut().zip([0.3, -0.5, 1.2]) {
        r.advantage = 0.0;
        r.old_log_prob += shift;
    }
    let batch: Vec<&StepRecord> = recs.iter().collect();
    let (_, surr, _, _) = loss_values(&params, &batch, &PpoConfig::default());
    assert_eq!(surr, 0.0);
}

#[test]
fn loss_combines_its_terms() {
    let (params, recs) = sample_records(3);
    let batch: Vec<&StepRecord> = recs.iter().collect();
    let cfg = PpoConfig { value_coef: 0.7, entropy_coef: 0.05, ..Default::default() };
    let (loss, surr, vl, ent) = loss_values(&params, &batch, &cfg);
    assert!((loss - (-surr + 0.7 * vl - 0.05 * ent)).abs() < 1e-12);
    assert!(ent > 0.0);

    // Entropy over affordable moves, and value error, recomputed by hand.
    let mut h = 0.0;
    let mut v = 0.0;
    for r in &recs {
        let e = params.act(&r.input).unwrap();
        h -= e.probs.iter().zip(&e.log_probs).filter(|(p, _)| **p > 0.0).map(|(p, l)| p * l).sum::<f64>();
        v += (e.value - r.ret).powi(2);
    }
    assert!((ent - h / 3.0).abs() < 1e-12);
    assert!((vl - v / 3.0).abs() < 1e-12);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let (params, mut recs) = sample_records(2);
    recs[0].old_log_prob -= 0.1;
    recs[0].advantage = 0.8;
    recs[1].old_log_prob += 0.05;
    recs[1].advantage = -0.6;
    let batch: Vec<&StepRecord> = recs.iter().collect();
    let net = params.cfg;
    let cfg = PpoConfig::default();
    let inputs: Vec<_> = params.tensors.iter().map(|(_, t)| t.clone()).collect();
    let report = check_gradients(
        &inputs,
        |tape, vars| Ok(ppo_loss(tape, &BoundParams { vars: vars.to_vec() }, &batch, &net, &cfg)?.loss),
        FD_STEP,
        FD_REL_TOL,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.checked > 100);
}

#[test]
fn accumulated_gradients_equal_the_batch_graph() {
    let (params, mut recs) = sample_records(5);
    for (i, r) in recs.iter_mut().enumerate() {
        r.advantage = 0.3 * i as f64 - 0.5;
        r.old_log_prob += 0.02 * i as f64;
    }
    let batch: Vec<&StepRecord> = recs.iter().collect();
    let cfg = PpoConfig::default();
    let (stats, grads) = ppo_gradients(&params, &batch, &cfg).unwrap();

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let t = ppo_loss(&mut tape, &bound, &batch, &params.cfg, &cfg).unwrap();
    assert!((stats.loss - tape.value(t.loss).item().unwrap()).abs() < 1e-12);
    tape.backward(t.loss).unwrap();
    for (g, v) in grads.iter().zip(&bound.vars) {
        let whole = tape.grad(*v).unwrap();
        for (a, b) in g.data().iter().zip(whole) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn stored_log_probs_reproduce() {
    let params = PolicyParams::init(tiny_net(), 8).unwrap();
    let buf = collect_rollouts(&params, &factory(40.0), &[1, 2], 2, 0.99).unwrap();
    assert!(!buf.is_empty());
    for r in buf.records() {
        let e = params.act(&r.input).unwrap();
        assert!((e.log_probs[r.action] - r.old_log_prob).abs() <= 1e-9);
        assert!((e.value - r.value).abs() <= 1e-9);
        assert!(r.old_log_prob.exp() > 0.0);
        assert!(r.input.affordable[r.action]);
        assert!(r.advantage.is_finite() && r.ret.is_finite());
    }
}

#[test]
fn episodes_end_with_a_terminal_step() {
    let params = PolicyParams::init(tiny_net(), 8).unwrap();
    let buf = collect_rollouts(&params, &factory(40.0), &[4, 5, 6], 1, 0.99).unwrap();
    for ep in &buf.episodes {
        let dones: Vec<bool> = ep.records.iter().map(|r| r.done).collect();
        assert_eq!(dones.iter().filter(|&&d| d).count(), 1);
        assert!(*dones.last().unwrap());
        for r in &ep.records {
            assert!((0.0..=10.0).contains(&r.reward));
        }
    }
}

#[test]
fn single_worker_is_deterministic() {
    let params = PolicyParams::init(tiny_net(), 8).unwrap();
    let f = factory(40.0);
    let a = collect_rollouts(&params, &f, &[9, 10], 1, 0.99).unwrap();
    let b = collect_rollouts(&params, &f, &[9, 10], 1, 0.99).unwrap();
    assert_eq!(a, b);
}

#[test]
fn parallel_buffer_equals_sequential_runs() {
    let params = PolicyParams::init(tiny_net(), 8).unwrap();
    let f = factory(40.0);
    let seeds = [21, 22, 23, 24, 25];
    let par = collect_rollouts(&params, &f, &seeds, 5, 0.99).unwrap();
    let seq: Vec<Episode> =
        seeds.iter().flat_map(|&s| collect_rollouts(&params, &f, &[s], 1, 0.99).unwrap().episodes).collect();
    assert_eq!(par.episodes, seq);
    assert_eq!(par.episodes.iter().map(|e| e.seed).collect::<Vec<_>>(), seeds);
}

#[test]
fn episode_seeds_are_distinct_and_stable() {
    let s: Vec<u64> = (0..50).map(|e| episode_seed(7, e)).collect();
    let mut u = s.clone();
    u.sort();
    u.dedup();
    assert_eq!(u.len(), 50);
    assert_eq!(s[3], episode_seed(7, 3));
    assert_ne!(episode_seed(7, 0), episode_seed(8, 0));
}

struct Broken;

impl EnvFactory for Broken {
    fn make(&self, _seed: u64) -> crate::Result<ipp3d_core::simenv::IppEnv> {
        Err(crate::LearnError::State("no map".into()))
    }
    fn pe(&self) -> Arc<crate::diffmath::Tensor> {
        Arc::new(crate::diffmath::Tensor::zeros(1, 1))
    }
}

#[test]
fn worker_failure_is_reported() {
    let params = PolicyParams::init(tiny_net(), 8).unwrap();
    let err = collect_rollouts(&params, &Broken, &[1, 2, 3], 2, 0.99).unwrap_err();
    assert!(matches!(err, crate::LearnError::Worker { worker: 0, episodes: 0, .. }), "{err}");
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut params = PolicyParams::init(tiny_net(), 1).unwrap();
    let before = params.clone();
    let cfg = PpoConfig::default();
    let mut adam = Adam::new(&params, &cfg);
    let grads: Vec<_> = params
        .tensors
        .iter()
        .map(|(_, t)| {
            let data = (0..t.len()).map(|i| if i % 2 == 0 { 0.5 } else { -3.0 }).collect();
            crate::diffmath::Tensor::new(t.rows(), t.cols(), data).unwrap()
        })
        .collect();
    adam.step(&mut params, &grads, 0.01).unwrap();
    for ((_, a), (_, b)) in params.tensors.iter().zip(&before.tensors) {
        for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
            let g: f64 = if i % 2 == 0 { 0.5 } else { -3.0 };
            let expected = y - 0.01 * g / (g.abs() + 1e-8);
            assert!((x - expected).abs() < 1e-15, "{x} vs {expected}");
        }
    }
    assert_eq!(adam.steps(), 1);
}

#[test]
fn zero_learning_rate_leaves_params_bit_identical() {
    let (mut params, recs) = sample_records(4);
    let before = params.clone();
    let batch: Vec<&StepRecord> = recs.iter().collect();
    let cfg = PpoConfig { lr: 0.0, ..Default::default() };
    let mut adam = Adam::new(&params, &cfg);
    for _ in 0..3 {
        let (_, grads) = ppo_gradients(&params, &batch, &cfg).unwrap();
        adam.step(&mut params, &grads, cfg.lr).unwrap();
    }
    for ((_, a), (_, b)) in params.tensors.iter().zip(&before.tensors) {
        let bits = |t: &crate::diffmath::Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn adam_state_roundtrips() {
    let (mut params, recs) = sample_records(2);
    let cfg = PpoConfig::default();
    let mut adam = Adam::new(&params, &cfg);
    let batch: Vec<&StepRecord> = recs.iter().collect();
    let (_, grads) = ppo_gradients(&params, &batch, &cfg).unwrap();
    adam.step(&mut params, &grads, 1e-3).unwrap();
    let back = Adam::from_named(&params, &cfg, adam.to_named(&params)).unwrap();
    assert_eq!(back, adam);
    let mut named = adam.to_named(&params);
    named.swap(1, 2);
    assert!(Adam::from_named(&params, &cfg, named).is_err());
}

fn opts(dir: &std::path::Path, total: usize, interval: usize, resume: Option<std::path::PathBuf>) -> TrainOptions {
    TrainOptions { total_episodes: total, checkpoint_dir: dir.to_path_buf(), checkpoint_interval: interval, resume, seed: 5 }
}

fn checkpoint_files(dir: &std::path::Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".params"))
        .collect();
    v.sort();
    v
}

#[test]
fn one_episode_one_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&quick_ppo(), &tiny_net(), &factory(30.0), &opts(dir.path(), 1, 10, None)).unwrap();
    assert_eq!(out.checkpoints.len(), 1);
    assert_eq!(checkpoint_files(dir.path()), vec!["policy_000001.params"]);
    assert_eq!(out.log.len(), 1);
    let text = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("episode,wall_time_s,mean_return,policy_loss,value_loss,entropy"));
    assert_eq!(lines.count(), 1);
}

#[test]
fn resumed_run_continues_and_matches_a_straight_run() {
    let f = factory(30.0);
    let straight = tempfile::tempdir().unwrap();
    let a = train(&quick_ppo(), &tiny_net(), &f, &opts(straight.path(), 4, 2, None)).unwrap();
    assert_eq!(checkpoint_files(straight.path()), vec!["policy_000002.params", "policy_000004.params"]);

    let split = tempfile::tempdir().unwrap();
    train(&quick_ppo(), &tiny_net(), &f, &opts(split.path(), 2, 2, None)).unwrap();
    let resume = split.path().join("policy_000002.params");
    let b = train(&quick_ppo(), &tiny_net(), &f, &opts(split.path(), 4, 2, Some(resume))).unwrap();
    assert_eq!(b.log.first().unwrap().episode, 3);
    assert_eq!(b.log.len(), 2);
    let rows = std::fs::read_to_string(split.path().join(LOG_FILE)).unwrap().lines().count();
    assert_eq!(rows, 1 + 4);

    assert_eq!(a.params, b.params);
    let bytes = |d: &std::path::Path| std::fs::read(d.join("policy_000004.params")).unwrap();
    assert_eq!(bytes(straight.path()), bytes(split.path()));
}

#[test]
fn identical_seeds_identical_checkpoints() {
    let f = factory(30.0);
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    train(&quick_ppo(), &tiny_net(), &f, &opts(d1.path(), 3, 3, None)).unwrap();
    train(&quick_ppo(), &tiny_net(), &f, &opts(d2.path(), 3, 3, None)).unwrap();
    for ext in ["", ".manifest", ".optim", ".state"] {
        let name = format!("policy_000003.params{ext}");
        assert_eq!(std::fs::read(d1.path().join(&name)).unwrap(), std::fs::read(d2.path().join(&name)).unwrap());
    }
}

#[test]
fn divergence_halts_and_keeps_the_last_checkpoint() {
    let f = factory(30.0);
    let dir = tempfile::tempdir().unwrap();
    train(&quick_ppo(), &tiny_net(), &f, &opts(dir.path(), 2, 2, None)).unwrap();
    let good = std::fs::read(dir.path().join("policy_000002.params")).unwrap();
    let wild = PpoConfig { lr: 1e300, batch_size: 2, ..quick_ppo() };
    let resume = Some(dir.path().join("policy_000002.params"));
    let err = train(&wild, &tiny_net(), &f, &opts(dir.path(), 6, 2, resume)).unwrap_err();
    assert!(matches!(err, crate::LearnError::Numerical(_)), "{err}");
    assert!(err.to_string().contains("policy_000002.params"), "{err}");
    assert_eq!(checkpoint_files(dir.path()), vec!["policy_000002.params"]);
    assert_eq!(std::fs::read(dir.path().join("policy_000002.params")).unwrap(), good);
}

#[test]
fn resume_rejects_a_different_network() {
    let f = factory(30.0);
    let dir = tempfile::tempdir().unwrap();
    train(&quick_ppo(), &tiny_net(), &f, &opts(dir.path(), 1, 1, None)).unwrap();
    let other = NetConfig { embed_dim: 8, ..tiny_net() };
    let resume = Some(dir.path().join("policy_000001.params"));
    assert!(train(&quick_ppo(), &other, &f, &opts(dir.path(), 2, 1, resume)).is_err());
}
