//! Proxy reward model trained from gold-labelled preference pairs, plus the
//! pair-labelling and reward-shaping utilities around it.
//!
//! The model reuses the policy backbone with a scalar head: a completion's
//! score is the mean of the head output over its token positions, where each
//! position sees the last `window` tokens of prompt-plus-completion ending at
//! that token. Training minimizes the pairwise logistic loss
//! `-log sigmoid(s(chosen) - s(rejected))`. The trainer only ever sees the
//! chosen/rejected labels, never the gold metadata behind them, so a weak
//! proxy can be gamed by the policy.

use crate::error::{Error, Result};
use crate::policy::{
    backward_window, forward_window, ModelDims, ParamBlock, PolicyParams, TokenSeq, Workspace,
};
use crate::tasks::{gold_score, PromptRecord, TaskSpec};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A gold-labelled preference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: TokenSeq,
    pub chosen: TokenSeq,
    pub rejected: TokenSeq,
}

/// Reward-model weights: policy-shaped backbone, scalar head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub dims: ModelDims,
    pub block: ParamBlock,
    pub version: u64,
}

impl RewardParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self { dims, block: ParamBlock::zeros(&dims, 1), version: 0 }
    }

    /// Random backbone with a zero head, so an untrained model scores every
    /// completion exactly 0 while still having gradient flow to learn.
    pub fn random_backbone(dims: ModelDims, seed: u64, scale: f64) -> Self {
        let mut block = ParamBlock::random(&dims, 1, seed, scale);
        block.w2.fill(0.0);
        block.b2.fill(0.0);
        Self { dims, block, version: 0 }
    }

    /// Copies a trained policy backbone (embedding and hidden layer) and
    /// zero-initializes the scalar head. Requires matching backbone shapes.
    pub fn from_policy_backbone(policy: &PolicyParams) -> Self {
        let mut rm = Self::zeros(policy.dims);
        rm.block.embed.copy_from_slice(&policy.block.embed);
        rm.block.w1.copy_from_slice(&policy.block.w1);
        rm.block.b1.copy_from_slice(&policy.block.b1);
        rm
    }

    pub fn validate_finite(&self) -> Result<()> {
        if !self.block.is_finite() {
            return Err(Error::NonFiniteParams(format!(
                "reward params at version {}",
                self.version
            )));
        }
        Ok(())
    }
}

/// Labels a completion pair with the gold scorer: chosen is the higher gold
/// score, ties break toward `y1`.
pub fn label_pair(
    spec: &TaskSpec,
    record: &PromptRecord,
    y1: &TokenSeq,
    y2: &TokenSeq,
) -> Result<PreferencePair> {
    if y1 == y2 {
        return Err(Error::InvalidBatch("cannot label identical completions".into()));
    }
    let s1 = gold_score(spec, record, y1);
    let s2 = gold_score(spec, record, y2);
    let (chosen, rejected) = if s1 >= s2 { (y1, y2) } else { (y2, y1) };
    Ok(PreferencePair {
        prompt: record.prompt.clone(),
        chosen: chosen.clone(),
        rejected: rejected.clone(),
    })
}

/// Scalar reward for a (prompt, completion) pair. Deterministic; zero weights
/// give exactly 0.
pub fn proxy_reward(params: &RewardParams, prompt: &TokenSeq, completion: &TokenSeq) -> f64 {
    let mut ws = Workspace::new(&params.dims, 1);
    score_completion(params, prompt, completion, &mut ws)
}

fn score_completion(
    params: &RewardParams,
    prompt: &TokenSeq,
    completion: &TokenSeq,
    ws: &mut Workspace,
) -> f64 {
    if completion.is_empty() {
        return 0.0;
    }
    let dims = &params.dims;
    let mut ctx = prompt.tokens.clone();
    let mut total = 0.0;
    for &tok in &completion.tokens {
        ctx.push(tok);
        ws.fill_window(dims, &ctx);
        forward_window(dims, &params.block, ws);
        total += ws.logits[0];
    }
    total / completion.len() as f64
}

/// Accumulates `coef * d score / d params` into `grad`.
fn score_backward(
    params: &RewardParams,
    prompt: &TokenSeq,
    completion: &TokenSeq,
    coef: f64,
    ws: &mut Workspace,
    grad: &mut ParamBlock,
) {
    let dims = &params.dims;
    let per_pos = coef / completion.len() as f64;
    let mut ctx = prompt.tokens.clone();
    for &tok in &completion.tokens {
        ctx.push(tok);
        ws.fill_window(dims, &ctx);
        forward_window(dims, &params.block, ws);
        ws.set_dlogits(&[per_pos]);
        backward_window(dims, &params.block, ws, grad);
    }
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

/// Mean Bradley-Terry loss over pairs: `-log sigmoid(s(chosen) - s(rejected))`.
pub fn bt_loss(params: &RewardParams, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidBatch("no preference pairs".into()));
    }
    params.validate_finite()?;
    let mut ws = Workspace::new(&params.dims, 1);
    let mut total = 0.0;
    for p in pairs {
        let margin = score_completion(params, &p.prompt, &p.chosen, &mut ws)
            - score_completion(params, &p.prompt, &p.rejected, &mut ws);
        total += softplus(-margin);
    }
    Ok(total / pairs.len() as f64)
}

/// Mean Bradley-Terry loss and its gradient.
pub fn bt_loss_and_grad(
    params: &RewardParams,
    pairs: &[PreferencePair],
) -> Result<(f64, ParamBlock)> {
    if pairs.is_empty() {
        return Err(Error::InvalidBatch("no preference pairs".into()));
    }
    params.validate_finite()?;
    let mut ws = Workspace::new(&params.dims, 1);
    let mut grad = ParamBlock::zeros(&params.dims, 1);
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for p in pairs {
        let margin = score_completion(params, &p.prompt, &p.chosen, &mut ws)
            - score_completion(params, &p.prompt, &p.rejected, &mut ws);
        total += softplus(-margin);
        // d/dm of -log sigmoid(m) is -sigmoid(-m).
        let dmargin = -sigmoid(-margin) * scale;
        score_backward(params, &p.prompt, &p.chosen, dmargin, &mut ws, &mut grad);
        score_backward(params, &p.prompt, &p.rejected, -dmargin, &mut ws, &mut grad);
    }
    Ok((total * scale, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardTrainConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    /// Fraction of pairs held out for the accuracy report.
    pub holdout_frac: f64,
    pub seed: u64,
    /// Hidden-width multiplier standing in for reward-model capacity.
    #[serde(default = "default_capacity")]
    pub hidden_multiplier: usize,
}

fn default_capacity() -> usize {
    1
}

impl Default for RewardTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            minibatch: 32,
            learning_rate: 0.5,
            holdout_frac: 0.1,
            seed: 0,
            hidden_multiplier: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTrainReport {
    pub holdout_accuracy: f64,
    pub final_train_loss: f64,
    pub train_pairs: usize,
    pub holdout_pairs: usize,
}

/// Trains a reward model with minibatch gradient descent on the pairwise
/// logistic loss. When `init` is given and its backbone shape matches the
/// requested capacity, training starts from that backbone with a fresh zero
/// head; otherwise from a seeded random backbone.
pub fn train_reward_model(
    pairs: &[PreferencePair],
    config: &RewardTrainConfig,
    init: Option<&PolicyParams>,
) -> Result<(RewardParams, RewardTrainReport)> {
    if pairs.is_empty() {
        return Err(Error::InvalidBatch("need at least one preference pair".into()));
    }
    if config.minibatch == 0 || config.hidden_multiplier == 0 {
        return Err(Error::InvalidConfig("minibatch and hidden_multiplier must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&config.holdout_frac) {
        return Err(Error::InvalidConfig("holdout_frac must be in [0, 1)".into()));
    }

    let base_dims = init.map(|p| p.dims).unwrap_or_default();
    let dims = ModelDims {
        hidden_dim: base_dims.hidden_dim * config.hidden_multiplier,
        ..base_dims
    };
    let mut params = match init {
        Some(policy) if config.hidden_multiplier == 1 => RewardParams::from_policy_backbone(policy),
        _ => RewardParams::random_backbone(dims, config.seed, 0.2),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut shuffled: Vec<PreferencePair> = pairs.to_vec();
    shuffled.shuffle(&mut rng);
    let holdout_n = ((shuffled.len() as f64) * config.holdout_frac).floor() as usize;
    let (holdout, train) = shuffled.split_at(holdout_n);
    let train = if train.is_empty() { holdout } else { train };

    let mut final_loss = f64::NAN;
    for _epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.minibatch) {
            let batch: Vec<PreferencePair> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, grad) = bt_loss_and_grad(&params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "reward model loss became non-finite at version {}",
                    params.version
                )));
            }
            final_loss = loss;
            params.block.axpy(-config.learning_rate, &grad);
            params.version += 1;
            if !params.block.is_finite() {
                return Err(Error::Diverged(format!(
                    "reward model weights became non-finite at version {}",
                    params.version
                )));
            }
        }
    }

    let eval_set = if holdout.is_empty() { train } else { holdout };
    let mut correct = 0.0;
    for p in eval_set {
        let margin = proxy_reward(&params, &p.prompt, &p.chosen)
            - proxy_reward(&params, &p.prompt, &p.rejected);
        if margin > 0.0 {
            correct += 1.0;
        } else if margin == 0.0 {
            correct += 0.5;
        }
    }
    let report = RewardTrainReport {
        holdout_accuracy: correct / eval_set.len() as f64,
        final_train_loss: final_loss,
        train_pairs: train.len(),
        holdout_pairs: holdout.len(),
    };
    Ok((params, report))
}

/// Replaces the reward with `penalty` when the completion never emitted eos.
pub fn eos_shaping(
    vocab: &crate::policy::Vocab,
    completion: &TokenSeq,
    raw_reward: f64,
    penalty: f64,
) -> f64 {
    if completion.has_eos(vocab) {
        raw_reward
    } else {
        penalty
    }
}
