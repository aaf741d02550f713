//! Supervised finetuning on reference completions.
//!
//! Produces the initial policy each RL run anchors to: the reward models and
//! the KL proxy both treat the SFT checkpoint as the init model.

use crate::error::Result;
use crate::policy::{grad_logprob_weighted, ParamBlock, PolicyParams};
use crate::tasks::PromptRecord;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftConfig {
    pub steps: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self { steps: 1500, minibatch: 16, learning_rate: 0.6, seed: 0 }
    }
}

/// Minibatch NLL descent on (prompt -> reference) pairs. The returned
/// checkpoint has its version reset to zero: it is the init model RL runs
/// start from.
pub fn train_sft(
    mut params: PolicyParams,
    records: &[PromptRecord],
    config: &SftConfig,
) -> Result<PolicyParams> {
    if records.is_empty() {
        return Err(crate::error::Error::InvalidConfig("sft needs records".into()));
    }
    if config.minibatch == 0 {
        return Err(crate::error::Error::InvalidConfig("sft minibatch must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.steps {
        let mut grad = ParamBlock::zeros(&params.dims, params.out_dim());
        let scale = -1.0 / config.minibatch as f64;
        for _ in 0..config.minibatch {
            let r = &records[rng.gen_range(0..records.len())];
            let weights = vec![scale; r.reference.len()];
            let (_, g) = grad_logprob_weighted(&params, &r.prompt, &r.reference, &weights)?;
            grad.axpy(1.0, &g);
        }
        crate::policy::sgd_step(&mut params, &grad, config.learning_rate, None)?;
    }
    params.version = 0;
    Ok(params)
}

/// Mean reference NLL per token, the quantity SFT descends.
pub fn reference_nll(params: &PolicyParams, records: &[PromptRecord]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for r in records {
        let (_, lp) = crate::policy::logprob(params, &r.prompt, &r.reference)?;
        total -= lp;
        tokens += r.reference.len();
    }
    Ok(total / tokens.max(1) as f64)
}
