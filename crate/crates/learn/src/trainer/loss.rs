use crate::diffmath::{Tape, Tensor, Var};
use crate::policynet::{forward, BoundParams, NetConfig, PolicyParams};
use crate::{LearnError, Result};

use super::{PpoConfig, StepRecord};

/// Scalar nodes of a batch loss. `surrogate`, `value_loss` and `entropy`
/// are batch means; `loss = −surrogate + c_v·value_loss − c_e·entropy`.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub loss: Var,
    pub surrogate: Var,
    pub value_loss: Var,
    pub entropy: Var,
}

/// Batch means of the loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// `min(r·Â, clip(r, 1−ε, 1+ε)·Â)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage)
}

/// Builds the PPO loss of `batch` on `tape` with a fresh forward pass per
/// record.
pub fn ppo_loss(
    tape: &mut Tape,
    p: &BoundParams,
    batch: &[&StepRecord],
    net: &NetConfig,
    cfg: &PpoConfig,
) -> Result<LossTerms> {
    if batch.is_empty() {
        return Err(LearnError::Shape("empty batch".into()));
    }
    let mut surr = Vec::with_capacity(batch.len());
    let mut vloss = Vec::with_capacity(batch.len());
    let mut ent = Vec::with_capacity(batch.len());
    for rec in batch {
        let out = forward(tape, p, &rec.input, net)?;
        let lp = tape.slice_cols(out.log_probs, rec.action, 1)?;
        let diff = tape.add_scalar(lp, -rec.old_log_prob);
        let ratio = tape.exp(diff);
        let unclipped = tape.scale(ratio, rec.advantage);
        let clipped = tape.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        let clipped = tape.scale(clipped, rec.advantage);
        surr.push(tape.minimum(unclipped, clipped)?);

        let err = tape.add_scalar(out.value, -rec.ret);
        vloss.push(tape.mul(err, err)?);

        let probs = tape.exp(out.log_probs);
        let blocked: Vec<bool> = rec.input.affordable.iter().map(|a| !a).collect();
        let finite_lp = tape.masked_fill(out.log_probs, &blocked, 0.0)?;
        let plogp = tape.mul(probs, finite_lp)?;
        let neg_h = tape.sum(plogp);
        ent.push(tape.scale(neg_h, -1.0));
    }
    let mean_of = |tape: &mut Tape, parts: &[Var]| -> Result<Var> {
        let stacked = tape.concat_rows(parts)?;
        tape.mean(stacked)
    };
    let surrogate = mean_of(tape, &surr)?;
    let value_loss = mean_of(tape, &vloss)?;
    let entropy = mean_of(tape, &ent)?;
    let a = tape.scale(surrogate, -1.0);
    let b = tape.scale(value_loss, cfg.value_coef);
    let c = tape.scale(entropy, -cfg.entropy_coef);
    let ab = tape.add(a, b)?;
    let loss = tape.add(ab, c)?;
    Ok(LossTerms { loss, surrogate, value_loss, entropy })
}

/// Gradient of the mean batch loss, accumulated one record at a time so
/// that only one forward graph is alive at once.
pub fn ppo_gradients(params: &PolicyParams, batch: &[&StepRecord], cfg: &PpoConfig) -> Result<(LossStats, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(LearnError::Shape("empty batch".into()));
    }
    let w = 1.0 / batch.len() as f64;
    let mut grads: Vec<Tensor> = params.tensors.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
    let mut stats = LossStats::default();
    for (i, rec) in batch.iter().enumerate() {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let terms = ppo_loss(&mut tape, &bound, &[rec], &params.cfg, cfg)?;
        let loss = tape.value(terms.loss).item()?;
        if !loss.is_finite() {
            return Err(LearnError::Numerical(format!(
                "non-finite loss {loss} at batch entry {i}: action {} of {}, old log-prob {}, advantage {}, return {}, \
                 stored value {}, surrogate {}, value loss {}, entropy {}",
                rec.action,
                rec.input.neighbors.len(),
                rec.old_log_prob,
                rec.advantage,
                rec.ret,
                rec.value,
                tape.value(terms.surrogate).item()?,
                tape.value(terms.value_loss).item()?,
                tape.value(terms.entropy).item()?,
            )));
        }
        stats.loss += w * loss;
        stats.policy_loss -= w * tape.value(terms.surrogate).item()?;
        stats.value_loss += w * tape.value(terms.value_loss).item()?;
        stats.entropy += w * tape.value(terms.entropy).item()?;
        tape.backward(terms.loss)?;
        for (g, v) in grads.iter_mut().zip(&bound.vars) {
            if let Some(gv) = tape.grad(*v) {
                for (a, b) in g.data_mut().iter_mut().zip(gv) {
                    *a += w * b;
                }
            }
        }
    }
    Ok((stats, grads))
}
