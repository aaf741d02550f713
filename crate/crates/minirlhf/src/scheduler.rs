//! Off-policyness and sample-budget control: how many mini-batches each
//! generation round produces, how many updates each mini-batch receives, how
//! many completions are drawn per prompt, and the staleness bookkeeping that
//! results.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Shape of one training run's data consumption.
///
/// `total_episodes` counts trained episodes; extra generated completions
/// beyond the trained pair (best/worst-of-K selection) multiply generation
/// cost only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationPlan {
    /// N: mini-batches generated per round before any update.
    pub n_minibatches: usize,
    /// T: optimizer updates applied to each mini-batch.
    pub updates_per_batch: usize,
    /// K: completions sampled per prompt.
    pub samples_per_prompt: usize,
    /// Trained episodes per mini-batch.
    pub minibatch_size: usize,
    pub total_episodes: usize,
}

impl Default for IterationPlan {
    fn default() -> Self {
        Self {
            n_minibatches: 1,
            updates_per_batch: 1,
            samples_per_prompt: 2,
            minibatch_size: 32,
            total_episodes: 20_480,
        }
    }
}

impl IterationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_minibatches < 1 || self.updates_per_batch < 1 || self.minibatch_size < 1 {
            return Err(Error::InvalidPlan("plan fields must be >= 1".into()));
        }
        if self.samples_per_prompt < 2 {
            return Err(Error::InvalidPlan("samples_per_prompt must be >= 2".into()));
        }
        if self.total_episodes % self.minibatch_size != 0 {
            return Err(Error::InvalidPlan(format!(
                "total_episodes {} not divisible by minibatch_size {}",
                self.total_episodes, self.minibatch_size
            )));
        }
        let per_round = self.n_minibatches * self.minibatch_size;
        if self.total_episodes % per_round != 0 {
            return Err(Error::InvalidPlan(format!(
                "total_episodes {} not divisible by round size {per_round}",
                self.total_episodes
            )));
        }
        Ok(())
    }

    pub fn rounds(&self) -> usize {
        self.total_episodes / (self.n_minibatches * self.minibatch_size)
    }

    pub fn updates_total(&self) -> usize {
        self.rounds() * self.n_minibatches * self.updates_per_batch
    }
}

/// Bookkeeping for one trained mini-batch: which parameter version generated
/// it and which version its first update started from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StalenessRecord {
    pub batch_index: u64,
    pub gen_version: u64,
    pub train_version: u64,
}

impl StalenessRecord {
    pub fn staleness(&self) -> u64 {
        self.train_version - self.gen_version
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_version < self.gen_version {
            return Err(Error::InvalidPlan(format!(
                "train_version {} < gen_version {}",
                self.train_version, self.gen_version
            )));
        }
        Ok(())
    }
}

/// One entry of the generate/train schedule produced by [`plan_rounds`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Generate { round: usize, minibatches: usize },
    Train {
        round: usize,
        minibatch: usize,
        update: usize,
        /// Optimizer steps taken since this round's generation event.
        staleness: u64,
    },
}

/// Expands a plan into its synchronous event schedule: each round is one
/// generation event producing N mini-batches followed by N*T updates. The
/// first update of every round is fully on-policy (staleness 0).
pub fn plan_rounds(plan: &IterationPlan) -> Result<Vec<Event>> {
    plan.validate()?;
    let n = plan.n_minibatches;
    let t = plan.updates_per_batch;
    let mut events = Vec::with_capacity(plan.rounds() * (1 + n * t));
    for round in 0..plan.rounds() {
        events.push(Event::Generate { round, minibatches: n });
        for j in 0..n * t {
            events.push(Event::Train {
                round,
                minibatch: j / t,
                update: j % t,
                staleness: j as u64,
            });
        }
    }
    Ok(events)
}

/// Indices of the best and worst rewarded completion, ties toward the lowest
/// index. A group with all-equal rewards is degenerate: it carries no
/// preference signal and is skipped from DPO batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtremePair {
    pub best: usize,
    pub worst: usize,
    pub degenerate: bool,
}

pub fn select_extreme_pair<T>(completions: &[T], rewards: &[f64], k: usize) -> Result<ExtremePair> {
    if k < 2 {
        return Err(Error::InvalidBatch(format!("extreme pair needs K >= 2, got {k}")));
    }
    if completions.len() != k || rewards.len() != k {
        return Err(Error::InvalidBatch(format!(
            "expected {k} completions and rewards, got {} and {}",
            completions.len(),
            rewards.len()
        )));
    }
    let mut best = 0;
    let mut worst = 0;
    for (i, &r) in rewards.iter().enumerate().skip(1) {
        if r > rewards[best] {
            best = i;
        }
        if r < rewards[worst] {
            worst = i;
        }
    }
    let degenerate = rewards[best] == rewards[worst];
    if degenerate {
        return Ok(ExtremePair { best: 0, worst: 0, degenerate: true });
    }
    Ok(ExtremePair { best, worst, degenerate: false })
}

/// Reward spread of a K-sample group: max - min.
pub fn reward_margin<T>(completions: &[T], rewards: &[f64], k: usize) -> Result<f64> {
    if k < 2 || completions.len() != k || rewards.len() != k {
        return Err(Error::InvalidBatch(format!("margin needs K >= 2 matching groups, got {k}")));
    }
    let max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}
