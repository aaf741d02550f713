//! Training objectives, each returning the scalar loss to minimize plus its
//! exact parameter gradient.
//!
//! Conventions shared by every objective:
//! - log-probabilities are sequence sums at temperature 1;
//! - importance ratios compare the current policy against the snapshot that
//!   generated the batch (`old_logprob`), never the init anchor;
//! - losses are minimized, so gradients already carry the descent sign.
//!
//! The clipped-surrogate losses are anchored by the theta-independent
//! constant `(old_logprob - 1) * advantage` per episode, which leaves every
//! gradient untouched but makes their on-policy loss value coincide exactly
//! with the plain REINFORCE-leave-one-out loss.

use crate::error::{Error, Result};
use crate::policy::{grad_logprob_weighted, ParamBlock, PolicyParams, TokenSeq};
use serde::{Deserialize, Serialize};

/// One generated episode with everything the losses need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub prompt: TokenSeq,
    pub completion: TokenSeq,
    /// Shaped sequence-level reward (task reward after eos shaping and, for
    /// the ratio-based losses, KL shaping).
    pub shaped_reward: f64,
    /// Sum log-probability under the generating snapshot at temperature 1.
    pub old_logprob: Option<f64>,
    /// Per-token log-probabilities under the generating snapshot.
    pub old_logprobs_tok: Option<Vec<f64>>,
}

/// A contiguous batch of episodes, `group_size` completions per prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBatch {
    pub episodes: Vec<Episode>,
    pub group_size: usize,
    pub gen_version: u64,
}

impl EpisodeBatch {
    pub fn validate(&self) -> Result<()> {
        if self.episodes.is_empty() {
            return Err(Error::InvalidBatch("empty episode batch".into()));
        }
        if self.group_size < 1 || self.episodes.len() % self.group_size != 0 {
            return Err(Error::InvalidBatch(format!(
                "{} episodes not divisible into groups of {}",
                self.episodes.len(),
                self.group_size
            )));
        }
        if self.episodes.iter().any(|e| !e.shaped_reward.is_finite()) {
            return Err(Error::InvalidBatch("non-finite shaped reward".into()));
        }
        Ok(())
    }

    fn old_logprob(&self, idx: usize) -> Result<f64> {
        self.episodes[idx]
            .old_logprob
            .ok_or_else(|| Error::InvalidBatch("missing old_logprobs".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RatioLevel {
    /// Importance ratio of summed sequence log-probabilities.
    #[default]
    Sequence,
    /// Per-token ratios, surrogate averaged over completion tokens.
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub beta_kl: f64,
    pub clip_epsilon: f64,
    pub dpo_beta: f64,
    pub rloo_k: usize,
    #[serde(default)]
    pub ppo_ratio_level: RatioLevel,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta_kl: 0.05,
            clip_epsilon: 0.2,
            dpo_beta: 0.1,
            rloo_k: 2,
            ppo_ratio_level: RatioLevel::Sequence,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_kl >= 0.0) {
            return Err(Error::InvalidConfig("beta_kl must be >= 0".into()));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::InvalidConfig("clip_epsilon must be in (0, 1)".into()));
        }
        if !(self.dpo_beta > 0.0) {
            return Err(Error::InvalidConfig("dpo_beta must be > 0".into()));
        }
        if self.rloo_k < 2 {
            return Err(Error::InvalidConfig("rloo_k must be >= 2".into()));
        }
        Ok(())
    }
}

/// Scalar diagnostics attached to every loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Diagnostics {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub mean_advantage: f64,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: ParamBlock,
    pub diagnostics: Diagnostics,
}

impl LossOutput {
    pub fn validate_finite(&self) -> Result<()> {
        if !self.loss.is_finite() || !self.grad.is_finite() {
            return Err(Error::NonFiniteLoss(format!("loss {}", self.loss)));
        }
        let d = &self.diagnostics;
        if ![d.mean_ratio, d.clip_fraction, d.mean_advantage].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteLoss("non-finite diagnostics".into()));
        }
        Ok(())
    }
}

/// Sequence-level KL-penalized reward shaping:
/// `reward - beta_kl * (policy_logp - init_logp)`.
pub fn kl_shaped_reward(reward: f64, policy_logp: f64, init_logp: f64, beta_kl: f64) -> f64 {
    reward - beta_kl * (policy_logp - init_logp)
}

/// Leave-one-out advantages: each reward minus the mean of the others in its
/// group. For k = 2 this is the pairwise reward difference.
pub fn rloo_advantage(rewards: &[f64]) -> Result<Vec<f64>> {
    let k = rewards.len();
    if k < 2 {
        return Err(Error::InvalidBatch(format!("advantage group of size {k} (need >= 2)")));
    }
    let total: f64 = rewards.iter().sum();
    Ok(rewards
        .iter()
        .map(|&r| r - (total - r) / (k - 1) as f64)
        .collect())
}

fn grouped_advantages(batch: &EpisodeBatch, expected_k: usize) -> Result<Vec<f64>> {
    if batch.group_size != expected_k {
        return Err(Error::InvalidBatch(format!(
            "batch groups of {} but loss configured for k = {expected_k}",
            batch.group_size
        )));
    }
    let mut advantages = Vec::with_capacity(batch.episodes.len());
    for group in batch.episodes.chunks_exact(batch.group_size) {
        let rewards: Vec<f64> = group.iter().map(|e| e.shaped_reward).collect();
        advantages.extend(rloo_advantage(&rewards)?);
    }
    Ok(advantages)
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

/// REINFORCE with the leave-one-out baseline:
/// `loss = -mean(logprob * advantage)`.
pub fn rloo_loss(
    params: &PolicyParams,
    batch: &EpisodeBatch,
    config: &LossConfig,
) -> Result<LossOutput> {
    batch.validate()?;
    config.validate()?;
    let advantages = grouped_advantages(batch, config.rloo_k)?;
    let b = batch.episodes.len() as f64;

    let mut grad = ParamBlock::zeros(&params.dims, params.out_dim());
    let mut loss = 0.0;
    let mut ratio_sum = 0.0;
    for (ep, &adv) in batch.episodes.iter().zip(advantages.iter()) {
        let weights = vec![-adv / b; ep.completion.len()];
        let (per_tok, g) = grad_logprob_weighted(params, &ep.prompt, &ep.completion, &weights)?;
        let lp: f64 = per_tok.iter().sum();
        loss += -lp * adv / b;
        grad.axpy(1.0, &g);
        ratio_sum += ep.old_logprob.map(|o| (lp - o).exp()).unwrap_or(1.0);
    }

    let out = LossOutput {
        loss,
        grad,
        diagnostics: Diagnostics {
            mean_ratio: ratio_sum / b,
            clip_fraction: 0.0,
            mean_advantage: mean(advantages.iter().copied(), advantages.len()),
        },
    };
    out.validate_finite()?;
    Ok(out)
}

/// Log-ratio-weighted advantage objective:
/// `loss = -mean((logprob - old_logprob) * advantage)`.
///
/// Differs from [`rloo_loss`] by the theta-independent constant
/// `mean(advantage * old_logprob)`, so the gradients coincide exactly.
pub fn copg_loss(
    params: &PolicyParams,
    batch: &EpisodeBatch,
    config: &LossConfig,
) -> Result<LossOutput> {
    batch.validate()?;
    config.validate()?;
    let advantages = grouped_advantages(batch, config.rloo_k)?;
    let b = batch.episodes.len() as f64;

    let mut grad = ParamBlock::zeros(&params.dims, params.out_dim());
    let mut loss = 0.0;
    let mut ratio_sum = 0.0;
    for (i, (ep, &adv)) in batch.episodes.iter().zip(advantages.iter()).enumerate() {
        let old = batch.old_logprob(i)?;
        let weights = vec![-adv / b; ep.completion.len()];
        let (per_tok, g) = grad_logprob_weighted(params, &ep.prompt, &ep.completion, &weights)?;
        let lp: f64 = per_tok.iter().sum();
        loss += -(lp - old) * adv / b;
        grad.axpy(1.0, &g);
        ratio_sum += (lp - old).exp();
    }

    let out = LossOutput {
        loss,
        grad,
        diagnostics: Diagnostics {
            mean_ratio: ratio_sum / b,
            clip_fraction: 0.0,
            mean_advantage: mean(advantages.iter().copied(), advantages.len()),
        },
    };
    out.validate_finite()?;
    Ok(out)
}

/// Shared clipped-surrogate core over sequence-level importance ratios.
fn clipped_sequence_surrogate(
    params: &PolicyParams,
    batch: &EpisodeBatch,
    advantages: &[f64],
    epsilon: f64,
) -> Result<LossOutput> {
    let b = batch.episodes.len() as f64;
    let mut grad = ParamBlock::zeros(&params.dims, params.out_dim());
    let mut loss = 0.0;
    let mut ratio_sum = 0.0;
    let mut clipped = 0usize;

    for (i, (ep, &adv)) in batch.episodes.iter().zip(advantages.iter()).enumerate() {
        let old = batch.old_logprob(i)?;
        let (_, lp) = crate::policy::logprob(params, &ep.prompt, &ep.completion)?;
        let ratio = (lp - old).exp();
        ratio_sum += ratio;

        let clipped_ratio = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
        let surrogate = (ratio * adv).min(clipped_ratio * adv);
        // Anchor so the on-policy loss value equals the RLOO loss value.
        loss += -(surrogate + (old - 1.0) * adv) / b;

        let unclipped = if adv >= 0.0 { ratio <= 1.0 + epsilon } else { ratio >= 1.0 - epsilon };
        if unclipped {
            let w = -ratio * adv / b;
            if w != 0.0 {
                let weights = vec![w; ep.completion.len()];
                let (_, g) =
                    grad_logprob_weighted(params, &ep.prompt, &ep.completion, &weights)?;
                grad.axpy(1.0, &g);
            }
        } else {
            clipped += 1;
        }
    }

    let out = LossOutput {
        loss,
        grad,
        diagnostics: Diagnostics {
            mean_ratio: ratio_sum / b,
            clip_fraction: clipped as f64 / b,
            mean_advantage: mean(advantages.iter().copied(), advantages.len()),
        },
    };
    out.validate_finite()?;
    Ok(out)
}

/// Importance-sampled RLOO with PPO-style pessimistic clipping:
/// `surrogate = min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)` with
/// the sequence-level ratio to the generating snapshot, maximized
/// (implemented as the negated loss).
pub fn proximal_rloo_loss(
    params: &PolicyParams,
    batch: &EpisodeBatch,
    config: &LossConfig,
) -> Result<LossOutput> {
    batch.validate()?;
    config.validate()?;
    let advantages = grouped_advantages(batch, config.rloo_k)?;
    clipped_sequence_surrogate(params, batch, &advantages, config.clip_epsilon)
}

/// Baseline used by [`ppo_loss`] in place of a learned critic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Mean reward of the other completions in the prompt group; for
    /// k = 2 this reduces the advantage to the leave-one-out difference.
    #[default]
    GroupMean,
    /// A fixed value estimate for every prompt.
    Constant(f64),
}

/// Clipped-surrogate policy gradient on baselined advantages. With the
/// default group-mean baseline and sequence-level ratios this is exactly
/// [`proximal_rloo_loss`]; token-level ratios average the clipped surrogate
/// over completion tokens instead.
pub fn ppo_loss(
    params: &PolicyParams,
    batch: &EpisodeBatch,
    config: &LossConfig,
    baseline: Baseline,
) -> Result<LossOutput> {
    batch.validate()?;
    config.validate()?;
    let advantages: Vec<f64> = match baseline {
        Baseline::GroupMean => grouped_advantages(batch, batch.group_size.max(2))?,
        Baseline::Constant(v) => batch.episodes.iter().map(|e| e.shaped_reward - v).collect(),
    };

    match config.ppo_ratio_level {
        RatioLevel::Sequence => {
            clipped_sequence_surrogate(params, batch, &advantages, config.clip_epsilon)
        }
        RatioLevel::Token => token_clipped_surrogate(params, batch, &advantages, config.clip_epsilon),
    }
}

fn token_clipped_surrogate(
    params: &PolicyParams,
    batch: &EpisodeBatch,
    advantages: &[f64],
    epsilon: f64,
) -> Result<LossOutput> {
    let b = batch.episodes.len() as f64;
    let mut grad = ParamBlock::zeros(&params.dims, params.out_dim());
    let mut loss = 0.0;
    let mut ratio_sum = 0.0;
    let mut tokens = 0usize;
    let mut clipped = 0usize;

    for (_i, (ep, &adv)) in batch.episodes.iter().zip(advantages.iter()).enumerate() {
        let old_tok = ep
            .old_logprobs_tok
            .as_ref()
            .ok_or_else(|| Error::InvalidBatch("missing per-token old_logprobs".into()))?;
        if old_tok.len() != ep.completion.len() {
            return Err(Error::InvalidBatch("old_logprobs length mismatch".into()));
        }
        let (per_tok, _) = crate::policy::logprob(params, &ep.prompt, &ep.completion)?;
        let len = ep.completion.len() as f64;
        let mut weights = vec![0.0; per_tok.len()];
        for (t, (&lp, &old)) in per_tok.iter().zip(old_tok.iter()).enumerate() {
            let ratio = (lp - old).exp();
            ratio_sum += ratio;
            tokens += 1;
            let clipped_ratio = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
            loss += -(ratio * adv).min(clipped_ratio * adv) / (len * b);
            let unclipped =
                if adv >= 0.0 { ratio <= 1.0 + epsilon } else { ratio >= 1.0 - epsilon };
            if unclipped {
                weights[t] = -ratio * adv / (len * b);
            } else {
                clipped += 1;
            }
        }
        let (_, g) = grad_logprob_weighted(params, &ep.prompt, &ep.completion, &weights)?;
        grad.axpy(1.0, &g);
    }

    let out = LossOutput {
        loss,
        grad,
        diagnostics: Diagnostics {
            mean_ratio: ratio_sum / tokens.max(1) as f64,
            clip_fraction: clipped as f64 / tokens.max(1) as f64,
            mean_advantage: mean(advantages.iter().copied(), advantages.len()),
        },
    };
    out.validate_finite()?;
    Ok(out)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A reward-ranked completion pair for online DPO.
#[derive(Debug, Clone, PartialEq)]
pub struct DpoPair {
    pub prompt: TokenSeq,
    pub y_plus: TokenSeq,
    pub y_minus: TokenSeq,
}

/// Online DPO on one reward-ranked pair:
/// `loss = -log sigmoid(beta * [(logp(y+) - logp_init(y+)) - (logp(y-) - logp_init(y-))])`
/// with sequence-sum log-probabilities.
pub fn online_dpo_loss(
    params: &PolicyParams,
    init_params: &PolicyParams,
    prompt: &TokenSeq,
    y_plus: &TokenSeq,
    y_minus: &TokenSeq,
    config: &LossConfig,
) -> Result<LossOutput> {
    config.validate()?;
    let pair = DpoPair {
        prompt: prompt.clone(),
        y_plus: y_plus.clone(),
        y_minus: y_minus.clone(),
    };
    online_dpo_batch_loss(params, init_params, std::slice::from_ref(&pair), config)
}

/// Mean online DPO loss over a batch of pairs.
pub fn online_dpo_batch_loss(
    params: &PolicyParams,
    init_params: &PolicyParams,
    pairs: &[DpoPair],
    config: &LossConfig,
) -> Result<LossOutput> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidBatch("no DPO pairs".into()));
    }
    let beta = config.dpo_beta;
    let n = pairs.len() as f64;
    let mut grad = ParamBlock::zeros(&params.dims, params.out_dim());
    let mut loss = 0.0;
    let mut margin_sum = 0.0;

    for pair in pairs {
        if pair.y_plus == pair.y_minus {
            return Err(Error::InvalidBatch("DPO pair with identical completions".into()));
        }
        let (_, lp_plus) = crate::policy::logprob(params, &pair.prompt, &pair.y_plus)?;
        let (_, lp_minus) = crate::policy::logprob(params, &pair.prompt, &pair.y_minus)?;
        let (_, init_plus) = crate::policy::logprob(init_params, &pair.prompt, &pair.y_plus)?;
        let (_, init_minus) = crate::policy::logprob(init_params, &pair.prompt, &pair.y_minus)?;
        let margin = (lp_plus - init_plus) - (lp_minus - init_minus);
        margin_sum += margin;
        loss += softplus(-beta * margin) / n;

        // d/d theta of -log sigmoid(beta * m) = -beta * sigmoid(-beta * m) * dm.
        let coef = -beta * sigmoid(-beta * margin) / n;
        let w_plus = vec![coef; pair.y_plus.len()];
        let (_, g_plus) = grad_logprob_weighted(params, &pair.prompt, &pair.y_plus, &w_plus)?;
        grad.axpy(1.0, &g_plus);
        let w_minus = vec![-coef; pair.y_minus.len()];
        let (_, g_minus) = grad_logprob_weighted(params, &pair.prompt, &pair.y_minus, &w_minus)?;
        grad.axpy(1.0, &g_minus);
    }

    let out = LossOutput {
        loss,
        grad,
        diagnostics: Diagnostics {
            mean_ratio: 1.0,
            clip_fraction: 0.0,
            mean_advantage: margin_sum / n,
        },
    };
    out.validate_finite()?;
    Ok(out)
}

/// Index of the highest-reward completion, ties toward the lowest index.
pub fn argmax_reward(rewards: &[f64]) -> usize {
    let mut best = 0;
    for (i, &r) in rewards.iter().enumerate().skip(1) {
        if r > rewards[best] {
            best = i;
        }
    }
    best
}

/// Supervised finetuning on the highest-reward completion of the group:
/// sequence negative log-likelihood of the winner.
pub fn best_of_k_sft_loss(
    params: &PolicyParams,
    prompt: &TokenSeq,
    completions: &[TokenSeq],
    rewards: &[f64],
) -> Result<LossOutput> {
    if completions.len() < 2 || completions.len() != rewards.len() {
        return Err(Error::InvalidBatch(format!(
            "best-of-k needs >= 2 completions with matching rewards, got {} and {}",
            completions.len(),
            rewards.len()
        )));
    }
    let winner = argmax_reward(rewards);
    let completion = &completions[winner];
    let weights = vec![-1.0; completion.len()];
    let (per_tok, grad) = grad_logprob_weighted(params, prompt, completion, &weights)?;
    let loss = -per_tok.iter().sum::<f64>();
    let out = LossOutput {
        loss,
        grad,
        diagnostics: Diagnostics {
            mean_ratio: 1.0,
            clip_fraction: 0.0,
            mean_advantage: rewards[winner],
        },
    };
    out.validate_finite()?;
    Ok(out)
}

/// Mean best-of-k loss over prompt groups.
pub fn best_of_k_sft_batch_loss(
    params: &PolicyParams,
    groups: &[(TokenSeq, Vec<TokenSeq>, Vec<f64>)],
) -> Result<LossOutput> {
    if groups.is_empty() {
        return Err(Error::InvalidBatch("no best-of-k groups".into()));
    }
    let n = groups.len() as f64;
    let mut grad = ParamBlock::zeros(&params.dims, params.out_dim());
    let mut loss = 0.0;
    let mut adv = 0.0;
    for (prompt, completions, rewards) in groups {
        let out = best_of_k_sft_loss(params, prompt, completions, rewards)?;
        loss += out.loss / n;
        grad.axpy(1.0 / n, &out.grad);
        adv += out.diagnostics.mean_advantage / n;
    }
    let out = LossOutput {
        loss,
        grad,
        diagnostics: Diagnostics { mean_ratio: 1.0, clip_fraction: 0.0, mean_advantage: adv },
    };
    out.validate_finite()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::policy::{grad_logprob, logprob, sample, ModelDims, PolicyParams, SamplerConfig};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            embed_dim: 4,
            hidden_dim: 6,
            window: 4,
            ..ModelDims::default()
        }
    }

    fn sampler() -> SamplerConfig {
        SamplerConfig { temperature: 1.0, max_new_tokens: 6, context_window: 4 }
    }

    /// Builds a batch by sampling from `gen_params` and rewarding with a
    /// simple token-sum score, grouped k per prompt.
    fn make_batch(gen_params: &PolicyParams, k: usize, prompts: usize, seed: u64) -> EpisodeBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut episodes = Vec::new();
        for _ in 0..prompts {
            let prompt = TokenSeq::prompt(vec![
                rng.gen_range(2..30u32),
                rng.gen_range(2..30u32),
            ]);
            for _ in 0..k {
                let gen = sample(gen_params, &prompt, &sampler(), rng.gen()).unwrap();
                let (per_tok, old) = logprob(gen_params, &prompt, &gen.completion).unwrap();
                let reward =
                    gen.completion.tokens.iter().map(|&t| t as f64).sum::<f64>() / 40.0;
                episodes.push(Episode {
                    prompt: prompt.clone(),
                    completion: gen.completion,
                    shaped_reward: reward,
                    old_logprob: Some(old),
                    old_logprobs_tok: Some(per_tok),
                });
            }
        }
        EpisodeBatch { episodes, group_size: k, gen_version: gen_params.version }
    }

    #[test]
    fn kl_shaping_examples() {
        assert_eq!(kl_shaped_reward(0.7, -3.0, -3.0, 0.05), 0.7);
        assert_eq!(kl_shaped_reward(0.7, -2.0, -9.0, 0.0), 0.7);
        let shaped = kl_shaped_reward(1.0, -1.0, -3.0, 0.05);
        assert!((shaped - 0.9).abs() < 1e-15);
    }

    #[test]
    fn rloo_advantage_examples() {
        let a = rloo_advantage(&[0.8, 0.3]).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-15 && (a[1] + 0.5).abs() < 1e-15);

        let b = rloo_advantage(&[0.4, 0.4, 0.4]).unwrap();
        assert!(b.iter().all(|&x| x.abs() < 1e-15));

        let c = rloo_advantage(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-15);
        for &x in &c[1..] {
            assert!((x + 1.0 / 3.0).abs() < 1e-15);
        }

        assert!(rloo_advantage(&[1.0]).is_err());
    }

    #[test]
    fn advantage_groups_sum_to_zero_for_k2() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let r: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = rloo_advantage(&r).unwrap();
            assert!((a[0] + a[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn rloo_zero_advantages_give_zero_gradient() {
        let params = PolicyParams::random(dims(), 1, 0.5);
        let mut batch = make_batch(&params, 2, 3, 10);
        for ep in &mut batch.episodes {
            ep.shaped_reward = 0.25;
        }
        let out = rloo_loss(&params, &batch, &LossConfig::default()).unwrap();
        assert!(out.grad.l2_norm() < 1e-14);
        assert!(out.loss.abs() < 1e-14);
    }

    #[test]
    fn rloo_single_pair_gradient_is_half_logprob_grad_difference() {
        let params = PolicyParams::random(dims(), 2, 0.5);
        let batch = {
            let mut b = make_batch(&params, 2, 1, 11);
            b.episodes[0].shaped_reward = 1.0;
            b.episodes[1].shaped_reward = 0.0;
            b
        };
        // Advantages are (1, -1); the descent gradient of the loss is
        // -(g1 - g2) / 2.
        let out = rloo_loss(&params, &batch, &LossConfig::default()).unwrap();
        let g1 = grad_logprob(&params, &batch.episodes[0].prompt, &batch.episodes[0].completion)
            .unwrap();
        let g2 = grad_logprob(&params, &batch.episodes[1].prompt, &batch.episodes[1].completion)
            .unwrap();
        let mut expect = ParamBlock::zeros(&params.dims, params.out_dim());
        expect.axpy(-0.5, &g1);
        expect.axpy(0.5, &g2);
        assert!(out.grad.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn rloo_gradient_matches_finite_differences() {
        let params = PolicyParams::random(dims(), 4, 0.6);
        let batch = make_batch(&params, 2, 3, 12);
        let config = LossConfig::default();
        let out = rloo_loss(&params, &batch, &config).unwrap();
        let report = gradcheck::check_gradient(
            &params.block,
            |block| {
                let p = PolicyParams { dims: params.dims, block: block.clone(), version: 0 };
                rloo_loss(&p, &batch, &config).unwrap().loss
            },
            &out.grad,
            50,
            77,
        );
        assert!(report.max_rel_err < 1e-4, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn copg_gradient_equals_rloo_gradient_exactly() {
        // Off-policy batch: evaluate at params different from the generator.
        let gen_params = PolicyParams::random(dims(), 5, 0.5);
        let batch = make_batch(&gen_params, 2, 4, 13);
        let params = PolicyParams::random(dims(), 6, 0.5);
        let config = LossConfig::default();
        let rloo = rloo_loss(&params, &batch, &config).unwrap();
        let copg = copg_loss(&params, &batch, &config).unwrap();
        assert!(copg.grad.max_abs_diff(&rloo.grad) < 1e-12);

        // Loss offset is mean(advantage * old_logprob), independent of theta.
        let advantages = grouped_advantages(&batch, 2).unwrap();
        let offset = batch
            .episodes
            .iter()
            .zip(advantages.iter())
            .map(|(e, &a)| a * e.old_logprob.unwrap())
            .sum::<f64>()
            / batch.episodes.len() as f64;
        assert!((copg.loss - rloo.loss - offset).abs() < 1e-12);

        let params2 = PolicyParams::random(dims(), 7, 0.5);
        let rloo2 = rloo_loss(&params2, &batch, &config).unwrap();
        let copg2 = copg_loss(&params2, &batch, &config).unwrap();
        assert!((copg2.loss - rloo2.loss - offset).abs() < 1e-12, "offset depends on theta");
    }

    #[test]
    fn copg_on_policy_loss_is_zero() {
        let params = PolicyParams::random(dims(), 8, 0.5);
        let batch = make_batch(&params, 2, 3, 14);
        let out = copg_loss(&params, &batch, &LossConfig::default()).unwrap();
        assert!(out.loss.abs() < 1e-12);
    }

    #[test]
    fn proximal_rloo_reduces_to_rloo_on_policy() {
        let params = PolicyParams::random(dims(), 9, 0.5);
        let batch = make_batch(&params, 2, 4, 15);
        let config = LossConfig::default();
        let prox = proximal_rloo_loss(&params, &batch, &config).unwrap();
        let rloo = rloo_loss(&params, &batch, &config).unwrap();
        assert!((prox.loss - rloo.loss).abs() < 1e-10, "{} vs {}", prox.loss, rloo.loss);
        assert!(prox.grad.max_abs_diff(&rloo.grad) < 1e-10);
        assert_eq!(prox.diagnostics.clip_fraction, 0.0);
    }

    #[test]
    fn proximal_rloo_clip_saturation_zeroes_gradient() {
        let params = PolicyParams::random(dims(), 10, 0.5);
        let mut batch = make_batch(&params, 2, 1, 16);
        // Positive advantage for episode 0, ratio forced to 1.5.
        batch.episodes[0].shaped_reward = 1.0;
        batch.episodes[1].shaped_reward = 0.0;
        let (_, lp0) = logprob(&params, &batch.episodes[0].prompt, &batch.episodes[0].completion)
            .unwrap();
        batch.episodes[0].old_logprob = Some(lp0 - 1.5f64.ln());
        // Episode 1 has negative advantage; force its ratio below 1 - eps so
        // it is clipped too and the whole gradient vanishes.
        let (_, lp1) = logprob(&params, &batch.episodes[1].prompt, &batch.episodes[1].completion)
            .unwrap();
        batch.episodes[1].old_logprob = Some(lp1 - 0.5f64.ln());

        let out = proximal_rloo_loss(&params, &batch, &LossConfig::default()).unwrap();
        assert_eq!(out.diagnostics.clip_fraction, 1.0);
        assert!(out.grad.l2_norm() < 1e-14);
    }

    #[test]
    fn proximal_rloo_unclipped_gradient_is_ratio_weighted_policy_gradient() {
        let gen_params = PolicyParams::random(dims(), 11, 0.4);
        let batch = {
            let mut b = make_batch(&gen_params, 2, 1, 17);
            b.episodes[0].shaped_reward = 0.9;
            b.episodes[1].shaped_reward = 0.1;
            b
        };
        // Mildly off-policy evaluation point keeping both ratios unclipped.
        let mut params = gen_params.clone();
        params.block.b2[4] += 0.01;
        let out = proximal_rloo_loss(&params, &batch, &LossConfig::default()).unwrap();
        assert_eq!(out.diagnostics.clip_fraction, 0.0);

        let advantages = grouped_advantages(&batch, 2).unwrap();
        let mut expect = ParamBlock::zeros(&params.dims, params.out_dim());
        for (ep, &adv) in batch.episodes.iter().zip(advantages.iter()) {
            let (_, lp) = logprob(&params, &ep.prompt, &ep.completion).unwrap();
            let ratio = (lp - ep.old_logprob.unwrap()).exp();
            let g = grad_logprob(&params, &ep.prompt, &ep.completion).unwrap();
            expect.axpy(-ratio * adv / batch.episodes.len() as f64, &g);
        }
        assert!(out.grad.max_abs_diff(&expect) < 1e-6);
    }

    #[test]
    fn proximal_rloo_gradient_matches_finite_differences_off_policy() {
        let gen_params = PolicyParams::random(dims(), 12, 0.4);
        let batch = make_batch(&gen_params, 2, 3, 18);
        let mut params = gen_params.clone();
        params.block.b1[2] += 0.05;
        let config = LossConfig::default();
        let out = proximal_rloo_loss(&params, &batch, &config).unwrap();
        let report = gradcheck::check_gradient(
            &params.block,
            |block| {
                let p = PolicyParams { dims: params.dims, block: block.clone(), version: 0 };
                proximal_rloo_loss(&p, &batch, &config).unwrap().loss
            },
            &out.grad,
            50,
            78,
        );
        assert!(report.max_rel_err < 1e-4, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn ppo_with_group_mean_at_k2_equals_proximal_rloo() {
        let gen_params = PolicyParams::random(dims(), 13, 0.4);
        let batch = make_batch(&gen_params, 2, 4, 19);
        let mut params = gen_params.clone();
        params.block.b2[7] -= 0.04;
        let config = LossConfig::default();
        let ppo = ppo_loss(&params, &batch, &config, Baseline::GroupMean).unwrap();
        let prox = proximal_rloo_loss(&params, &batch, &config).unwrap();
        assert!((ppo.loss - prox.loss).abs() < 1e-10);
        assert!(ppo.grad.max_abs_diff(&prox.grad) < 1e-10);
    }

    #[test]
    fn ppo_on_policy_zero_advantages_zero_gradient() {
        let params = PolicyParams::random(dims(), 14, 0.4);
        let mut batch = make_batch(&params, 2, 3, 20);
        for ep in &mut batch.episodes {
            ep.shaped_reward = -0.5;
        }
        let out = ppo_loss(&params, &batch, &LossConfig::default(), Baseline::GroupMean).unwrap();
        assert!(out.grad.l2_norm() < 1e-14);
        let clip = out.diagnostics.clip_fraction;
        assert!((0.0..=1.0).contains(&clip));
    }

    #[test]
    fn ppo_token_level_gradient_matches_finite_differences() {
        let gen_params = PolicyParams::random(dims(), 15, 0.4);
        let batch = make_batch(&gen_params, 2, 3, 21);
        let mut params = gen_params.clone();
        params.block.w2[5] += 0.03;
        let config = LossConfig { ppo_ratio_level: RatioLevel::Token, ..LossConfig::default() };
        let out = ppo_loss(&params, &batch, &config, Baseline::GroupMean).unwrap();
        let report = gradcheck::check_gradient(
            &params.block,
            |block| {
                let p = PolicyParams { dims: params.dims, block: block.clone(), version: 0 };
                ppo_loss(&p, &batch, &config, Baseline::GroupMean).unwrap().loss
            },
            &out.grad,
            50,
            79,
        );
        assert!(report.max_rel_err < 1e-4, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn dpo_loss_at_init_is_ln2() {
        let params = PolicyParams::random(dims(), 16, 0.5);
        let prompt = TokenSeq::prompt(vec![3, 4]);
        let y_plus = TokenSeq::completion(vec![5, 6, 1]);
        let y_minus = TokenSeq::completion(vec![7, 1]);
        let out =
            online_dpo_loss(&params, &params, &prompt, &y_plus, &y_minus, &LossConfig::default())
                .unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn dpo_swap_negates_margin() {
        let params = PolicyParams::random(dims(), 17, 0.5);
        let init = PolicyParams::random(dims(), 18, 0.5);
        let prompt = TokenSeq::prompt(vec![8, 9]);
        let y_plus = TokenSeq::completion(vec![10, 11, 1]);
        let y_minus = TokenSeq::completion(vec![12, 1]);
        let config = LossConfig::default();
        let fwd = online_dpo_loss(&params, &init, &prompt, &y_plus, &y_minus, &config).unwrap();
        let swapped = online_dpo_loss(&params, &init, &prompt, &y_minus, &y_plus, &config).unwrap();
        let m = fwd.diagnostics.mean_advantage;
        assert!((swapped.diagnostics.mean_advantage + m).abs() < 1e-12);
        assert!((swapped.loss - softplus(config.dpo_beta * m)).abs() < 1e-12);
    }

    #[test]
    fn dpo_gradient_matches_finite_differences() {
        let params = PolicyParams::random(dims(), 19, 0.5);
        let init = PolicyParams::random(dims(), 20, 0.5);
        let prompt = TokenSeq::prompt(vec![2, 3]);
        let y_plus = TokenSeq::completion(vec![4, 5, 1]);
        let y_minus = TokenSeq::completion(vec![6, 7, 8, 1]);
        let config = LossConfig::default();
        let out = online_dpo_loss(&params, &init, &prompt, &y_plus, &y_minus, &config).unwrap();
        let report = gradcheck::check_gradient(
            &params.block,
            |block| {
                let p = PolicyParams { dims: params.dims, block: block.clone(), version: 0 };
                online_dpo_loss(&p, &init, &prompt, &y_plus, &y_minus, &config).unwrap().loss
            },
            &out.grad,
            50,
            80,
        );
        assert!(report.max_rel_err < 1e-4, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn dpo_rejects_identical_pair() {
        let params = PolicyParams::random(dims(), 21, 0.5);
        let prompt = TokenSeq::prompt(vec![2]);
        let y = TokenSeq::completion(vec![4, 1]);
        assert!(online_dpo_loss(&params, &params, &prompt, &y, &y, &LossConfig::default())
            .is_err());
    }

    #[test]
    fn best_of_k_picks_argmax_with_tie_toward_first() {
        let params = PolicyParams::random(dims(), 22, 0.5);
        let prompt = TokenSeq::prompt(vec![2, 3]);
        let c1 = TokenSeq::completion(vec![4, 1]);
        let c2 = TokenSeq::completion(vec![5, 6, 1]);

        let out =
            best_of_k_sft_loss(&params, &prompt, &[c1.clone(), c2.clone()], &[0.2, 0.9]).unwrap();
        let (_, lp2) = logprob(&params, &prompt, &c2).unwrap();
        assert!((out.loss + lp2).abs() < 1e-12);

        let tie =
            best_of_k_sft_loss(&params, &prompt, &[c1.clone(), c2.clone()], &[0.4, 0.4]).unwrap();
        let (_, lp1) = logprob(&params, &prompt, &c1).unwrap();
        assert!((tie.loss + lp1).abs() < 1e-12);

        assert!(best_of_k_sft_loss(&params, &prompt, &[c1], &[0.4]).is_err());
    }

    #[test]
    fn best_of_k_under_uniform_policy_costs_l_log_v() {
        let params = PolicyParams::zeros(ModelDims::default());
        let prompt = TokenSeq::prompt(vec![2]);
        let winner = TokenSeq::completion(vec![3, 4, 5, 1]);
        let loser = TokenSeq::completion(vec![6, 1]);
        let out = best_of_k_sft_loss(&params, &prompt, &[winner, loser], &[1.0, 0.0]).unwrap();
        let expect = 4.0 * (32.0f64).ln();
        assert!((out.loss - expect).abs() < 1e-12);
    }

    #[test]
    fn best_of_k_gradient_matches_finite_differences() {
        let params = PolicyParams::random(dims(), 23, 0.5);
        let prompt = TokenSeq::prompt(vec![2, 9]);
        let completions =
            vec![TokenSeq::completion(vec![4, 5, 1]), TokenSeq::completion(vec![6, 1])];
        let rewards = vec![0.3, 0.8];
        let out = best_of_k_sft_loss(&params, &prompt, &completions, &rewards).unwrap();
        let report = gradcheck::check_gradient(
            &params.block,
            |block| {
                let p = PolicyParams { dims: params.dims, block: block.clone(), version: 0 };
                best_of_k_sft_loss(&p, &prompt, &completions, &rewards).unwrap().loss
            },
            &out.grad,
            50,
            81,
        );
        assert!(report.max_rel_err < 1e-4, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn missing_old_logprobs_is_an_error() {
        let params = PolicyParams::random(dims(), 24, 0.5);
        let mut batch = make_batch(&params, 2, 2, 25);
        for ep in &mut batch.episodes {
            ep.old_logprob = None;
            ep.old_logprobs_tok = None;
        }
        assert!(proximal_rloo_loss(&params, &batch, &LossConfig::default()).is_err());
        assert!(copg_loss(&params, &batch, &LossConfig::default()).is_err());
        // Plain RLOO never needs them.
        assert!(rloo_loss(&params, &batch, &LossConfig::default()).is_ok());
    }

    #[test]
    fn mismatched_group_size_is_an_error() {
        let params = PolicyParams::random(dims(), 26, 0.5);
        let batch = make_batch(&params, 3, 2, 27);
        let config = LossConfig::default(); // rloo_k = 2
        assert!(rloo_loss(&params, &batch, &config).is_err());
    }
}
