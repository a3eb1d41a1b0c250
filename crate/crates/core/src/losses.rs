//! Training objectives: the actor-critic loss on fresh unrolls, n-step
//! Q-learning for the control tasks, reward-prediction cross-entropy,
//! value replay, and their weighted combination.
//!
//! Targets (returns, Q bootstraps, advantages) are computed numerically
//! from tape values and fed back as constants, so no gradient ever flows
//! through them; that realizes both the advantage gradient-stop and the
//! target-parameter convention (snapshot at unroll start).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::replay::RewardClass;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub gamma: f64,
    /// Discount for the pixel-control task; shorter horizon than the base task.
    pub gamma_pc: f64,
    pub entropy_alpha: f64,
    pub lambda_vr: f64,
    pub lambda_pc: f64,
    pub lambda_rp: f64,
    pub unroll_n: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: 0.99,
            gamma_pc: 0.9,
            entropy_alpha: 0.001,
            lambda_vr: 1.0,
            lambda_pc: 0.05,
            lambda_rp: 1.0,
            unroll_n: 20,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..1.0).contains(&self.gamma) {
            problems.push(format!("loss.gamma must be in [0,1), got {}", self.gamma));
        }
        if !(0.0..1.0).contains(&self.gamma_pc) {
            problems.push(format!("loss.gamma_pc must be in [0,1), got {}", self.gamma_pc));
        }
        for (name, v) in [
            ("loss.entropy_alpha", self.entropy_alpha),
            ("loss.lambda_vr", self.lambda_vr),
            ("loss.lambda_pc", self.lambda_pc),
            ("loss.lambda_rp", self.lambda_rp),
        ] {
            if v < 0.0 {
                problems.push(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if self.unroll_n == 0 {
            problems.push("loss.unroll_n must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(problems.join("; ")))
        }
    }
}

/// Backward recursion R_i = r_i + gamma * R_{i+1}, seeded with the
/// bootstrap value after the last step (0 at terminals).
pub fn n_step_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (slot, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *slot = acc;
    }
    out
}

/// Per-step tape handles and targets for one on-policy unroll.
pub struct A3cStep {
    pub policy_logits: Var,
    /// Shape [1].
    pub value: Var,
    pub action: usize,
    /// n-step return target R_t.
    pub ret: f64,
}

/// Policy gradient term with a constant advantage (no gradient through the
/// value estimate there), 0.5-weighted value regression, and entropy bonus.
pub fn a3c_loss(tape: &mut Tape, steps: &[A3cStep], entropy_alpha: f64) -> Result<Var> {
    if steps.is_empty() {
        return Err(Error::InsufficientData { what: "a3c unroll" });
    }
    let mut total: Option<Var> = None;
    let add = |tape: &mut Tape, total: &mut Option<Var>, v: Var| -> Result<()> {
        *total = Some(match *total {
            Some(t) => tape.add(t, v)?,
            None => v,
        });
        Ok(())
    };

    for step in steps {
        let advantage = step.ret - tape.scalar_value(step.value);

        let logp = tape.log_softmax(step.policy_logits)?;
        let logp_a = tape.index(logp, step.action)?;
        let policy_term = tape.scale(logp_a, -advantage)?;
        add(tape, &mut total, policy_term)?;

        let ret = tape.constant_scalar(step.ret);
        let diff = tape.sub(ret, step.value)?;
        let sq = tape.mul(diff, diff)?;
        let value_term = tape.scale(sq, 0.5)?;
        add(tape, &mut total, value_term)?;

        if entropy_alpha != 0.0 {
            let p = tape.softmax(step.policy_logits)?;
            let plogp = tape.mul(p, logp)?;
            let neg_entropy = tape.sum(plogp)?;
            // loss includes -alpha * H = +alpha * sum(p log p)
            let ent_term = tape.scale(neg_entropy, entropy_alpha)?;
            add(tape, &mut total, ent_term)?;
        }
    }
    Ok(total.expect("at least one step"))
}

/// Extra value regression on a replayed window: squared error between the
/// replayed n-step returns (bootstrap gradient-stopped) and V(s_t).
pub fn value_replay_loss(tape: &mut Tape, values: &[Var], rewards: &[f64], bootstrap: f64, gamma: f64) -> Result<Var> {
    if values.len() != rewards.len() || values.is_empty() {
        return Err(Error::shape("value_replay_loss", rewards.len(), values.len()));
    }
    let returns = n_step_returns(rewards, bootstrap, gamma);
    let mut total: Option<Var> = None;
    for (v, ret) in values.iter().zip(returns) {
        let r = tape.constant_scalar(ret);
        let diff = tape.sub(r, *v)?;
        let sq = tape.mul(diff, diff)?;
        total = Some(match total {
            Some(t) => tape.add(t, sq)?,
            None => sq,
        });
    }
    Ok(total.expect("nonempty window"))
}

/// n-step Q-learning loss shared by the pixel-control and feature-control
/// tasks. `q_steps[t]` is the predicted Q tensor [n_act, m] (flattened
/// spatial cells or channels) at transition t, `pseudo_rewards[t]` the m
/// task rewards of that transition, and `bootstrap_max` the gradient-stopped
/// max_a Q at the step after the window (zeros at terminals).
pub fn n_step_q_loss(
    tape: &mut Tape,
    q_steps: &[Var],
    actions: &[usize],
    pseudo_rewards: &[Vec<f64>],
    bootstrap_max: &[f64],
    gamma: f64,
) -> Result<Var> {
    if q_steps.is_empty() || q_steps.len() != actions.len() || q_steps.len() != pseudo_rewards.len() {
        return Err(Error::InsufficientData { what: "q-learning window" });
    }
    let m = bootstrap_max.len();
    for pr in pseudo_rewards {
        if pr.len() != m {
            return Err(Error::shape("n_step_q_loss", m, pr.len()));
        }
    }

    // backward recursion per cell: T_t = r_t + gamma * T_{t+1}
    let mut target = bootstrap_max.to_vec();
    let mut targets_rev: Vec<Vec<f64>> = Vec::with_capacity(q_steps.len());
    for pr in pseudo_rewards.iter().rev() {
        for (t, &r) in target.iter_mut().zip(pr) {
            *t = r + gamma * *t;
        }
        targets_rev.push(target.clone());
    }

    let mut total: Option<Var> = None;
    for (t, (&q, &a)) in q_steps.iter().zip(actions).enumerate() {
        let tgt = &targets_rev[q_steps.len() - 1 - t];
        let qa = tape.slice(q, a * m, &[m])?;
        let tgt_c = tape.constant(&[m], tgt.clone())?;
        let diff = tape.sub(qa, tgt_c)?;
        let sq = tape.mul(diff, diff)?;
        let s = tape.sum(sq)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    Ok(total.expect("nonempty window"))
}

/// Three-class cross-entropy against the observed reward sign.
pub fn reward_prediction_loss(tape: &mut Tape, class_logits: Var, class: RewardClass) -> Result<Var> {
    if tape.value(class_logits).len() != 3 {
        return Err(Error::shape("reward_prediction_loss", 3usize, tape.value(class_logits).len()));
    }
    let logp = tape.log_softmax(class_logits)?;
    let lp = tape.index(logp, class as usize)?;
    tape.scale(lp, -1.0)
}

/// Weighted combination; absent components contribute nothing, and zero
/// weights are skipped outright so ablations match the pure loss exactly.
pub fn unreal_loss(
    tape: &mut Tape,
    a3c: Var,
    vr: Option<Var>,
    pc: Option<Var>,
    fc: Option<Var>,
    rp: Option<Var>,
    weights: &LossWeights,
) -> Result<Var> {
    let mut total = a3c;
    let add_weighted = |tape: &mut Tape, total: &mut Var, term: Option<Var>, lambda: f64| -> Result<()> {
        if lambda == 0.0 {
            return Ok(());
        }
        if let Some(t) = term {
            let scaled = tape.scale(t, lambda)?;
            *total = tape.add(*total, scaled)?;
        }
        Ok(())
    };
    add_weighted(tape, &mut total, vr, weights.lambda_vr)?;
    add_weighted(tape, &mut total, pc, weights.lambda_pc)?;
    add_weighted(tape, &mut total, fc, weights.lambda_pc)?;
    add_weighted(tape, &mut total, rp, weights.lambda_rp)?;
    Ok(total)
}
