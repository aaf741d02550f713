//! The synchronous and asynchronous training loops.
//!
//! Synchronous mode alternates strictly: generate a round of mini-batches
//! with the current snapshot, train on them, repeat. Asynchronous mode runs a
//! generator worker and a learner worker concurrently: while the learner
//! trains on batch `i-1`, the generator produces batch `i` with the snapshot
//! published after batch `i-2` finished training, so after the priming batch
//! every trained batch is exactly one learner-iteration stale.
//!
//! Both workers communicate over depth-1 blocking channels (completed batches
//! one way, parameter snapshots the other) and the learner publishes exactly
//! the snapshots the generator will consume, so the sequence of batch
//! contents and parameter versions is a pure function of the seeds:
//! concurrency can only change wall-clock, never data. `AsyncLockstep`
//! executes the identical dataflow on one thread and reproduces the
//! concurrent run bit for bit. An injected-delay harness sleeps inside the
//! worker loops to emulate slow generation or training.

use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, EvalReport};
use crate::losses::{
    best_of_k_sft_batch_loss, copg_loss, kl_shaped_reward, online_dpo_batch_loss, ppo_loss,
    proximal_rloo_loss, rloo_loss, Baseline, DpoPair, Episode, EpisodeBatch, LossConfig,
    LossOutput,
};
use crate::policy::{
    logprob, sample, sgd_step, ModelDims, OptimConfig, PolicyParams, SamplerConfig, TokenSeq,
};
use crate::reward::{eos_shaping, label_pair, proxy_reward, train_reward_model, RewardParams,
    RewardTrainConfig};
use crate::scheduler::{IterationPlan, StalenessRecord};
use crate::sft::{train_sft, SftConfig};
use crate::tasks::{gold_score, make_dataset, split_dataset, PromptRecord, TaskSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::mpsc::{Receiver, SyncSender};
use std::sync::Arc;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Sync,
    Async,
    AsyncLockstep,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunMode::Sync => write!(f, "sync"),
            RunMode::Async => write!(f, "async"),
            RunMode::AsyncLockstep => write!(f, "async_lockstep"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ppo,
    Rloo,
    ProximalRloo,
    Copg,
    OnlineDpo,
    BestOfKSft,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LossKind::Ppo => "ppo",
            LossKind::Rloo => "rloo",
            LossKind::ProximalRloo => "proximal_rloo",
            LossKind::Copg => "copg",
            LossKind::OnlineDpo => "online_dpo",
            LossKind::BestOfKSft => "best_of_k_sft",
        };
        write!(f, "{s}")
    }
}

impl LossKind {
    /// Whether the loss accounts for the generating snapshot and therefore
    /// tolerates training on stale batches. Plain REINFORCE does not.
    pub fn tolerates_staleness(&self) -> bool {
        !matches!(self, LossKind::Rloo)
    }

    /// Trained episodes per prompt group. Pairwise losses train the ranked
    /// pair regardless of how many completions were sampled; the others
    /// train every completion.
    pub fn trained_per_prompt(&self, samples_per_prompt: usize) -> usize {
        match self {
            LossKind::OnlineDpo | LossKind::BestOfKSft => 2,
            _ => samples_per_prompt,
        }
    }

    /// Whether rewards get the sequence-level KL penalty before entering the
    /// loss. The DPO and best-of-k objectives regularize through their own
    /// anchors instead.
    pub fn uses_kl_shaping(&self) -> bool {
        matches!(self, LossKind::Ppo | LossKind::Rloo | LossKind::ProximalRloo | LossKind::Copg)
    }
}

/// Where training rewards come from. Gold and Verifier both call the task's
/// programmatic scorer (the latter names the binary exact-match setting);
/// Proxy first trains a reward model on gold-labelled pairs sampled from the
/// init policy and then optimizes that model's scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RewardSourceKind {
    Gold,
    Verifier,
    Proxy {
        /// Completion pairs to label per training prompt.
        pairs_per_prompt: usize,
        train: RewardTrainConfig,
    },
}

/// Backbone shape without the vocab (taken from the task).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub window: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self { embed_dim: 16, hidden_dim: 32, window: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_eval: usize,
    /// Evaluate every this many optimizer steps; 0 means initial and final
    /// evaluation only.
    pub eval_every: usize,
    pub eval_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_eval: 192, eval_every: 0, eval_seed: 17 }
    }
}

/// Injected worker delays in milliseconds: generation sleeps per mini-batch
/// produced, training sleeps per optimizer update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    pub gen_ms: f64,
    pub train_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub label: String,
    pub task: TaskSpec,
    pub n_prompts: usize,
    pub model: ModelShape,
    pub loss: LossKind,
    pub loss_cfg: LossConfig,
    pub plan: IterationPlan,
    pub sampler: SamplerConfig,
    pub optim: OptimConfig,
    pub reward_source: RewardSourceKind,
    /// Reward assigned to completions that never emitted eos; absent
    /// disables the shaping.
    #[serde(default)]
    pub eos_penalty: Option<f64>,
    #[serde(default)]
    pub sft: Option<SftConfig>,
    pub eval: EvalConfig,
    pub mode: RunMode,
    /// Seed of the generation stream (prompt picks and sampling).
    pub seed: u64,
    /// Seed of the initial weights.
    pub model_seed: u64,
    #[serde(default)]
    pub delays: Option<DelayConfig>,
}

impl RunConfig {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab: self.task.vocab,
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            window: self.model.window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.dims().validate()?;
        self.plan.validate()?;
        self.loss_cfg.validate()?;
        self.optim.validate()?;
        self.sampler.validate(&self.dims())?;
        if self.n_prompts < 2 {
            return Err(Error::InvalidConfig("n_prompts must be >= 2".into()));
        }
        if self.eval.n_eval < 1 {
            return Err(Error::InvalidConfig("n_eval must be >= 1".into()));
        }
        let k = self.plan.samples_per_prompt;
        let per_prompt = self.loss.trained_per_prompt(k);
        if self.plan.minibatch_size % per_prompt != 0 {
            return Err(Error::InvalidConfig(format!(
                "minibatch_size {} not divisible by {per_prompt} trained episodes per prompt",
                self.plan.minibatch_size
            )));
        }
        if self.loss.uses_kl_shaping() && self.loss_cfg.rloo_k != k {
            return Err(Error::InvalidConfig(format!(
                "loss_cfg.rloo_k = {} must match plan.samples_per_prompt = {k}",
                self.loss_cfg.rloo_k
            )));
        }
        if matches!(self.mode, RunMode::Async | RunMode::AsyncLockstep)
            && !self.loss.tolerates_staleness()
        {
            return Err(Error::InvalidConfig(format!(
                "loss {} does not tolerate staleness >= 1 required by async mode",
                self.loss
            )));
        }
        if let RewardSourceKind::Proxy { pairs_per_prompt, .. } = &self.reward_source {
            if *pairs_per_prompt < 1 {
                return Err(Error::InvalidConfig("pairs_per_prompt must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn prompts_per_minibatch(&self) -> usize {
        self.plan.minibatch_size / self.loss.trained_per_prompt(self.plan.samples_per_prompt)
    }
}

/// One line of the run log. These eight fields are exactly the documented
/// file schema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub episodes: u64,
    pub reward_mean: f64,
    pub gold_winrate: f64,
    pub kl_ppl: f64,
    pub staleness: u64,
    pub wallclock_s: f64,
    pub clip_frac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub episodes: u64,
    pub winrate: f64,
    pub kl_ppl: f64,
    pub mean_gold: f64,
    /// Seconds since run start; excluded from determinism fingerprints.
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub task: String,
    pub loss: String,
    pub mode: String,
    pub n_minibatches: usize,
    pub updates_per_batch: usize,
    pub samples_per_prompt: usize,
    pub minibatch_size: usize,
    pub total_episodes: usize,
    pub seed: u64,
    pub steps: u64,
    pub episodes_seen: u64,
    pub final_winrate: f64,
    pub final_kl_ppl: f64,
    pub final_mean_gold: f64,
    pub baseline_winrate: f64,
    pub baseline_mean_gold: f64,
    pub total_wallclock_s: f64,
    pub delays: Option<DelayConfig>,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
    /// Per-update losses; kept out of the file schema but used by the
    /// determinism checks.
    pub losses: Vec<f64>,
    pub staleness: Vec<StalenessRecord>,
    pub evals: Vec<EvalRecord>,
    pub summary: RunSummary,
}

impl RunLog {
    /// FNV-1a hash over every data field except wall-clock times, which are
    /// the only values concurrency is allowed to change.
    pub fn data_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bits: u64| {
            for b in bits.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        };
        for r in &self.records {
            eat(r.step);
            eat(r.episodes);
            eat(r.reward_mean.to_bits());
            eat(r.gold_winrate.to_bits());
            eat(r.kl_ppl.to_bits());
            eat(r.staleness);
            eat(r.clip_frac.to_bits());
        }
        for l in &self.losses {
            eat(l.to_bits());
        }
        for s in &self.staleness {
            eat(s.batch_index);
            eat(s.gen_version);
            eat(s.train_version);
        }
        for e in &self.evals {
            eat(e.step);
            eat(e.episodes);
            eat(e.winrate.to_bits());
            eat(e.kl_ppl.to_bits());
            eat(e.mean_gold.to_bits());
        }
        eat(self.summary.episodes_seen);
        eat(self.summary.final_winrate.to_bits());
        eat(self.summary.final_kl_ppl.to_bits());
        eat(self.summary.aborted.is_some() as u64);
        h
    }

    /// Writes the per-step records as line-delimited JSON with exactly the
    /// documented columns, plus the evaluation history and the summary.
    /// Each file lands atomically via a temporary-then-rename.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let write_atomic = |name: &str, content: &[u8]| -> Result<()> {
            let tmp = dir.join(format!("{name}.tmp"));
            std::fs::write(&tmp, content)?;
            std::fs::rename(&tmp, dir.join(name))?;
            Ok(())
        };
        let mut records = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut records, r)?;
            records.write_all(b"\n")?;
        }
        write_atomic("runlog.jsonl", &records)?;
        let mut evals = Vec::new();
        for r in &self.evals {
            serde_json::to_writer(&mut evals, r)?;
            evals.write_all(b"\n")?;
        }
        write_atomic("evals.jsonl", &evals)?;
        write_atomic("summary.json", serde_json::to_string_pretty(&self.summary)?.as_bytes())?;
        Ok(())
    }
}

/// Everything deterministic prepared before the training loop starts:
/// dataset split, the SFT init checkpoint, and (for proxy runs) the trained
/// reward model.
pub struct PreparedRun {
    pub config: RunConfig,
    pub train_records: Arc<Vec<PromptRecord>>,
    pub eval_records: Arc<Vec<PromptRecord>>,
    pub init: Arc<PolicyParams>,
    pub reward_model: Option<Arc<RewardParams>>,
}

pub fn prepare(config: &RunConfig) -> Result<PreparedRun> {
    config.validate()?;
    let records = make_dataset(&config.task, config.n_prompts)?;
    let (train, eval) = split_dataset(&records);
    let dims = config.dims();
    let raw = PolicyParams::random(dims, config.model_seed, 0.1);
    let init = match &config.sft {
        Some(sft_cfg) => train_sft(raw, &train, sft_cfg)?,
        None => raw,
    };

    let reward_model = match &config.reward_source {
        RewardSourceKind::Proxy { pairs_per_prompt, train: rm_cfg } => {
            let pairs = build_preference_pairs(
                &config.task,
                &train,
                &init,
                &config.sampler,
                *pairs_per_prompt,
                config.seed ^ PROXY_PAIR_SEED_SALT,
            )?;
            let (rm, _report) = train_reward_model(&pairs, rm_cfg, Some(&init))?;
            Some(Arc::new(rm))
        }
        _ => None,
    };

    Ok(PreparedRun {
        config: config.clone(),
        train_records: Arc::new(train),
        eval_records: Arc::new(eval),
        init: Arc::new(init),
        reward_model,
    })
}

fn build_preference_pairs(
    spec: &TaskSpec,
    records: &[PromptRecord],
    policy: &PolicyParams,
    sampler: &SamplerConfig,
    pairs_per_prompt: usize,
    seed: u64,
) -> Result<Vec<crate::reward::PreferencePair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for record in records {
        for _ in 0..pairs_per_prompt {
            let a = sample(policy, &record.prompt, sampler, rng.gen())?;
            let b = sample(policy, &record.prompt, sampler, rng.gen())?;
            if a.completion == b.completion {
                continue;
            }
            pairs.push(label_pair(spec, record, &a.completion, &b.completion)?);
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("proxy reward sampling produced no distinct pairs".into()));
    }
    Ok(pairs)
}

/// Keeps proxy-pair sampling on its own stream, apart from the run stream.
const PROXY_PAIR_SEED_SALT: u64 = 0x7072_6f78_7900;

/// One generated episode with everything the learner will need.
#[derive(Debug, Clone)]
struct GenEpisode {
    completion: TokenSeq,
    /// Sequence log-probability under the generating snapshot, temperature 1.
    old_logprob: f64,
    old_logprobs_tok: Vec<f64>,
    /// Sequence log-probability under the init model.
    init_logprob: f64,
    /// Task or proxy reward after eos shaping.
    base_reward: f64,
}

#[derive(Debug, Clone)]
struct GenGroup {
    record_idx: usize,
    episodes: Vec<GenEpisode>,
}

#[derive(Debug, Clone)]
struct Minibatch {
    groups: Vec<GenGroup>,
    gen_version: u64,
}

/// Immutable context shared by both workers.
struct RunEnv {
    config: RunConfig,
    train_records: Arc<Vec<PromptRecord>>,
    eval_records: Arc<Vec<PromptRecord>>,
    init: Arc<PolicyParams>,
    reward_model: Option<Arc<RewardParams>>,
}

impl RunEnv {
    fn reward_for(&self, record: &PromptRecord, completion: &TokenSeq) -> f64 {
        let raw = match (&self.config.reward_source, &self.reward_model) {
            (RewardSourceKind::Proxy { .. }, Some(rm)) => {
                proxy_reward(rm, &record.prompt, completion)
            }
            _ => gold_score(&self.config.task, record, completion),
        };
        match self.config.eos_penalty {
            Some(penalty) => eos_shaping(&self.config.task.vocab, completion, raw, penalty),
            None => raw,
        }
    }

    fn generate_minibatch(
        &self,
        params: &PolicyParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<Minibatch> {
        let prompts = self.config.prompts_per_minibatch();
        let k = self.config.plan.samples_per_prompt;
        let mut groups = Vec::with_capacity(prompts);
        for _ in 0..prompts {
            let record_idx = rng.gen_range(0..self.train_records.len());
            let record = &self.train_records[record_idx];
            let mut episodes = Vec::with_capacity(k);
            for _ in 0..k {
                let gen = sample(params, &record.prompt, &self.config.sampler, rng.gen())?;
                let (old_tok, old) = logprob(params, &record.prompt, &gen.completion)?;
                let (_, init_lp) = logprob(&self.init, &record.prompt, &gen.completion)?;
                let base_reward = self.reward_for(record, &gen.completion);
                episodes.push(GenEpisode {
                    completion: gen.completion,
                    old_logprob: old,
                    old_logprobs_tok: old_tok,
                    init_logprob: init_lp,
                    base_reward,
                });
            }
            groups.push(GenGroup { record_idx, episodes });
        }
        Ok(Minibatch { groups, gen_version: params.version })
    }

    /// One generator iteration: N mini-batches plus the injected delay.
    fn generate_iteration(
        &self,
        params: &PolicyParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Minibatch>> {
        let mut out = Vec::with_capacity(self.config.plan.n_minibatches);
        for _ in 0..self.config.plan.n_minibatches {
            let mb = self.generate_minibatch(params, rng)?;
            if let Some(delays) = &self.config.delays {
                spin_sleep(delays.gen_ms);
            }
            out.push(mb);
        }
        Ok(out)
    }
}

fn spin_sleep(ms: f64) {
    if ms > 0.0 {
        std::thread::sleep(Duration::from_secs_f64(ms / 1000.0));
    }
}

/// Mutable learner-side state threaded through every mode.
struct Learner {
    env: Arc<RunEnv>,
    params: PolicyParams,
    step: u64,
    episodes: u64,
    minibatch_counter: u64,
    start: Instant,
    records: Vec<StepRecord>,
    losses: Vec<f64>,
    staleness: Vec<StalenessRecord>,
    evals: Vec<EvalRecord>,
    last_eval: EvalReport,
    baseline: EvalReport,
    aborted: Option<String>,
}

impl Learner {
    fn new(env: Arc<RunEnv>) -> Result<Self> {
        let start = Instant::now();
        let params = (*env.init).clone();
        let baseline = evaluate_policy(
            &env.config.task,
            &env.eval_records,
            &params,
            &env.init,
            &env.config.sampler,
            env.config.eval.n_eval,
            env.config.eval.eval_seed,
        )?;
        Ok(Self {
            env,
            params,
            step: 0,
            episodes: 0,
            minibatch_counter: 0,
            records: Vec::new(),
            losses: Vec::new(),
            staleness: Vec::new(),
            evals: vec![EvalRecord {
                step: 0,
                episodes: 0,
                winrate: baseline.winrate,
                kl_ppl: baseline.kl_ppl,
                mean_gold: baseline.mean_gold,
                wallclock_s: start.elapsed().as_secs_f64(),
            }],
            start,
            last_eval: baseline,
            baseline,
            aborted: None,
        })
    }

    fn loss_for(&self, minibatch: &Minibatch) -> Result<LossOutput> {
        let cfg = &self.env.config;
        match cfg.loss {
            LossKind::OnlineDpo => {
                let mut pairs = Vec::new();
                for group in &minibatch.groups {
                    let record = &self.env.train_records[group.record_idx];
                    let rewards: Vec<f64> =
                        group.episodes.iter().map(|e| e.base_reward).collect();
                    let pick = crate::scheduler::select_extreme_pair(
                        &group.episodes,
                        &rewards,
                        rewards.len(),
                    )?;
                    if pick.degenerate {
                        continue;
                    }
                    pairs.push(DpoPair {
                        prompt: record.prompt.clone(),
                        y_plus: group.episodes[pick.best].completion.clone(),
                        y_minus: group.episodes[pick.worst].completion.clone(),
                    });
                }
                if pairs.is_empty() {
                    // All groups were reward ties: nothing to prefer, take a
                    // zero-gradient step to keep versions aligned.
                    return Ok(LossOutput {
                        loss: 0.0,
                        grad: crate::policy::ParamBlock::zeros(
                            &self.params.dims,
                            self.params.out_dim(),
                        ),
                        diagnostics: Default::default(),
                    });
                }
                online_dpo_batch_loss(&self.params, &self.env.init, &pairs, &cfg.loss_cfg)
            }
            LossKind::BestOfKSft => {
                let groups: Vec<(TokenSeq, Vec<TokenSeq>, Vec<f64>)> = minibatch
                    .groups
                    .iter()
                    .map(|g| {
                        let record = &self.env.train_records[g.record_idx];
                        (
                            record.prompt.clone(),
                            g.episodes.iter().map(|e| e.completion.clone()).collect(),
                            g.episodes.iter().map(|e| e.base_reward).collect(),
                        )
                    })
                    .collect();
                best_of_k_sft_batch_loss(&self.params, &groups)
            }
            _ => {
                let beta = cfg.loss_cfg.beta_kl;
                let mut episodes = Vec::with_capacity(minibatch.groups.len());
                for group in &minibatch.groups {
                    let record = &self.env.train_records[group.record_idx];
                    for ep in &group.episodes {
                        let shaped = kl_shaped_reward(
                            ep.base_reward,
                            ep.old_logprob,
                            ep.init_logprob,
                            beta,
                        );
                        episodes.push(Episode {
                            prompt: record.prompt.clone(),
                            completion: ep.completion.clone(),
                            shaped_reward: shaped,
                            old_logprob: Some(ep.old_logprob),
                            old_logprobs_tok: Some(ep.old_logprobs_tok.clone()),
                        });
                    }
                }
                let batch = EpisodeBatch {
                    episodes,
                    group_size: cfg.plan.samples_per_prompt,
                    gen_version: minibatch.gen_version,
                };
                match cfg.loss {
                    LossKind::Ppo => {
                        ppo_loss(&self.params, &batch, &cfg.loss_cfg, Baseline::GroupMean)
                    }
                    LossKind::Rloo => rloo_loss(&self.params, &batch, &cfg.loss_cfg),
                    LossKind::ProximalRloo => {
                        proximal_rloo_loss(&self.params, &batch, &cfg.loss_cfg)
                    }
                    LossKind::Copg => copg_loss(&self.params, &batch, &cfg.loss_cfg),
                    _ => unreachable!(),
                }
            }
        }
    }

    fn batch_reward_mean(&self, minibatch: &Minibatch) -> f64 {
        let cfg = &self.env.config;
        let mut total = 0.0;
        let mut n = 0usize;
        for group in &minibatch.groups {
            for ep in &group.episodes {
                total += if cfg.loss.uses_kl_shaping() {
                    kl_shaped_reward(
                        ep.base_reward,
                        ep.old_logprob,
                        ep.init_logprob,
                        cfg.loss_cfg.beta_kl,
                    )
                } else {
                    ep.base_reward
                };
                n += 1;
            }
        }
        total / n.max(1) as f64
    }

    fn batch_kl_ppl(&self, minibatch: &Minibatch) -> f64 {
        let mut lp = 0.0;
        let mut tokens = 0usize;
        for group in &minibatch.groups {
            for ep in &group.episodes {
                lp += ep.init_logprob;
                tokens += ep.completion.len();
            }
        }
        (-lp / tokens.max(1) as f64).exp()
    }

    fn maybe_eval(&mut self) -> Result<()> {
        let every = self.env.config.eval.eval_every;
        if every == 0 || self.step % every as u64 != 0 {
            return Ok(());
        }
        self.run_eval()
    }

    fn run_eval(&mut self) -> Result<()> {
        let cfg = &self.env.config;
        let report = evaluate_policy(
            &cfg.task,
            &self.env.eval_records,
            &self.params,
            &self.env.init,
            &cfg.sampler,
            cfg.eval.n_eval,
            cfg.eval.eval_seed.wrapping_add(self.step),
        )?;
        self.last_eval = report;
        self.evals.push(EvalRecord {
            step: self.step,
            episodes: self.episodes,
            winrate: report.winrate,
            kl_ppl: report.kl_ppl,
            mean_gold: report.mean_gold,
            wallclock_s: self.start.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    /// One learner iteration: N*T updates over the round's minibatches.
    fn train_iteration(&mut self, minibatches: &[Minibatch]) -> Result<()> {
        let cfg = self.env.config.clone();
        let total_updates = cfg.plan.updates_total() as u64;
        for mb in minibatches {
            self.staleness.push(StalenessRecord {
                batch_index: self.minibatch_counter,
                gen_version: mb.gen_version,
                train_version: self.params.version,
            });
            self.minibatch_counter += 1;
            self.episodes += cfg.plan.minibatch_size as u64;
            let reward_mean = self.batch_reward_mean(mb);
            let kl_ppl = self.batch_kl_ppl(mb);
            for _ in 0..cfg.plan.updates_per_batch {
                let staleness = self.params.version - mb.gen_version;
                let out = self.loss_for(mb)?;
                out.validate_finite()?;
                let lr = cfg.optim.lr_at(self.step, total_updates);
                sgd_step(&mut self.params, &out.grad, lr, cfg.optim.grad_clip)?;
                self.step += 1;
                if let Some(delays) = &cfg.delays {
                    spin_sleep(delays.train_ms);
                }
                self.losses.push(out.loss);
                self.records.push(StepRecord {
                    step: self.step,
                    episodes: self.episodes,
                    reward_mean,
                    gold_winrate: self.last_eval.winrate,
                    kl_ppl,
                    staleness,
                    wallclock_s: self.start.elapsed().as_secs_f64(),
                    clip_frac: out.diagnostics.clip_fraction,
                });
                self.maybe_eval()?;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> (RunLog, PolicyParams) {
        if self.aborted.is_none() {
            if let Err(e) = self.run_eval() {
                self.aborted = Some(format!("final evaluation failed: {e}"));
            }
        }
        let cfg = &self.env.config;
        let summary = RunSummary {
            label: cfg.label.clone(),
            task: cfg.task.name.to_string(),
            loss: cfg.loss.to_string(),
            mode: cfg.mode.to_string(),
            n_minibatches: cfg.plan.n_minibatches,
            updates_per_batch: cfg.plan.updates_per_batch,
            samples_per_prompt: cfg.plan.samples_per_prompt,
            minibatch_size: cfg.plan.minibatch_size,
            total_episodes: cfg.plan.total_episodes,
            seed: cfg.seed,
            steps: self.step,
            episodes_seen: self.episodes,
            final_winrate: self.last_eval.winrate,
            final_kl_ppl: self.last_eval.kl_ppl,
            final_mean_gold: self.last_eval.mean_gold,
            baseline_winrate: self.baseline.winrate,
            baseline_mean_gold: self.baseline.mean_gold,
            total_wallclock_s: self.start.elapsed().as_secs_f64(),
            delays: cfg.delays,
            aborted: self.aborted,
        };
        let log = RunLog {
            records: self.records,
            losses: self.losses,
            staleness: self.staleness,
            evals: self.evals,
            summary,
        };
        (log, self.params)
    }
}

fn make_env(prepared: &PreparedRun, mode: RunMode) -> Arc<RunEnv> {
    let mut config = prepared.config.clone();
    config.mode = mode;
    Arc::new(RunEnv {
        config,
        train_records: prepared.train_records.clone(),
        eval_records: prepared.eval_records.clone(),
        init: prepared.init.clone(),
        reward_model: prepared.reward_model.clone(),
    })
}

/// Strict alternation: generate round i with the current parameters, train,
/// repeat.
pub fn run_sync(config: &RunConfig) -> Result<RunLog> {
    let prepared = prepare(config)?;
    run_sync_prepared(&prepared)
}

pub fn run_sync_prepared(prepared: &PreparedRun) -> Result<RunLog> {
    Ok(run_sync_with_params(prepared)?.0)
}

pub fn run_sync_with_params(prepared: &PreparedRun) -> Result<(RunLog, PolicyParams)> {
    let env = make_env(prepared, RunMode::Sync);
    let mut learner = Learner::new(env.clone())?;
    let mut gen_rng = ChaCha8Rng::seed_from_u64(env.config.seed);
    for _round in 0..env.config.plan.rounds() {
        let snapshot = learner.params.clone();
        let minibatches = match env.generate_iteration(&snapshot, &mut gen_rng) {
            Ok(m) => m,
            Err(e) => {
                learner.aborted = Some(format!("generation failed: {e}"));
                break;
            }
        };
        if let Err(e) = learner.train_iteration(&minibatches) {
            learner.aborted = Some(format!("training aborted: {e}"));
            break;
        }
    }
    Ok(learner.finish())
}

/// The asynchronous dataflow executed on one thread in the exact interleaving
/// the concurrent mode reproduces: batch 0 and 1 are generated from the init
/// snapshot, batch i >= 2 from the parameters left by training batch i-2.
pub fn run_async_lockstep(config: &RunConfig) -> Result<RunLog> {
    let prepared = prepare(config)?;
    run_async_lockstep_prepared(&prepared)
}

pub fn run_async_lockstep_prepared(prepared: &PreparedRun) -> Result<RunLog> {
    Ok(run_async_lockstep_with_params(prepared)?.0)
}

pub fn run_async_lockstep_with_params(prepared: &PreparedRun) -> Result<(RunLog, PolicyParams)> {
    let env = make_env(prepared, RunMode::AsyncLockstep);
    let mut learner = Learner::new(env.clone())?;
    let mut gen_rng = ChaCha8Rng::seed_from_u64(env.config.seed);
    let rounds = env.config.plan.rounds();
    let mut queue: std::collections::VecDeque<Vec<Minibatch>> = Default::default();

    let prime = |learner: &Learner, rng: &mut ChaCha8Rng| -> Result<Vec<Minibatch>> {
        env.generate_iteration(&learner.params, rng)
    };
    match prime(&learner, &mut gen_rng) {
        Ok(b) => queue.push_back(b),
        Err(e) => {
            learner.aborted = Some(format!("generation failed: {e}"));
            return Ok(learner.finish());
        }
    }
    if rounds >= 2 && learner.aborted.is_none() {
        match prime(&learner, &mut gen_rng) {
            Ok(b) => queue.push_back(b),
            Err(e) => {
                learner.aborted = Some(format!("generation failed: {e}"));
                return Ok(learner.finish());
            }
        }
    }

    for j in 0..rounds {
        let batch = queue.pop_front().expect("queue discipline");
        if let Err(e) = learner.train_iteration(&batch) {
            learner.aborted = Some(format!("training aborted: {e}"));
            break;
        }
        if j + 2 < rounds {
            match env.generate_iteration(&learner.params, &mut gen_rng) {
                Ok(b) => queue.push_back(b),
                Err(e) => {
                    learner.aborted = Some(format!("generation failed: {e}"));
                    break;
                }
            }
        }
    }
    Ok(learner.finish())
}

enum GeneratorExit {
    Done,
    PeerClosed,
    Failed(String),
}

fn generator_worker(
    env: &RunEnv,
    init: &PolicyParams,
    rounds: usize,
    batch_tx: SyncSender<Vec<Minibatch>>,
    param_rx: Receiver<PolicyParams>,
) -> GeneratorExit {
    let mut gen_rng = ChaCha8Rng::seed_from_u64(env.config.seed);
    let mut current = init.clone();
    for i in 0..rounds {
        if i >= 2 {
            current = match param_rx.recv() {
                Ok(p) => p,
                Err(_) => return GeneratorExit::PeerClosed,
            };
        }
        let batch = match env.generate_iteration(&current, &mut gen_rng) {
            Ok(b) => b,
            Err(e) => return GeneratorExit::Failed(format!("generation failed: {e}")),
        };
        if batch_tx.send(batch).is_err() {
            return GeneratorExit::PeerClosed;
        }
    }
    GeneratorExit::Done
}

/// Concurrent generator/learner pair. Data order matches
/// [`run_async_lockstep`] exactly; only wall-clock differs.
pub fn run_async(config: &RunConfig) -> Result<RunLog> {
    let prepared = prepare(config)?;
    run_async_prepared(&prepared)
}

pub fn run_async_prepared(prepared: &PreparedRun) -> Result<RunLog> {
    Ok(run_async_with_params(prepared)?.0)
}

pub fn run_async_with_params(prepared: &PreparedRun) -> Result<(RunLog, PolicyParams)> {
    let env = make_env(prepared, RunMode::Async);
    let mut learner = Learner::new(env.clone())?;
    let rounds = env.config.plan.rounds();
    // Depth-1 blocking handoffs: completed batches one way, parameter
    // snapshots the other. The learner publishes exactly the rounds - 2
    // snapshots the generator will consume, in order, so the i-th batch is
    // always generated by the parameters left after training batch i-2.
    let (batch_tx, batch_rx) = std::sync::mpsc::sync_channel::<Vec<Minibatch>>(1);
    let (param_tx, param_rx) = std::sync::mpsc::sync_channel::<PolicyParams>(1);

    let gen_exit = std::thread::scope(|scope| {
        let gen_env = env.clone();
        let gen_init = (*env.init).clone();
        let handle = scope.spawn(move || {
            generator_worker(&gen_env, &gen_init, rounds, batch_tx, param_rx)
        });

        for j in 0..rounds {
            let batch = match batch_rx.recv() {
                Ok(b) => b,
                Err(_) => {
                    if learner.aborted.is_none() {
                        learner.aborted = Some("generator shut down".into());
                    }
                    break;
                }
            };
            if let Err(e) = learner.train_iteration(&batch) {
                learner.aborted = Some(format!("training aborted: {e}"));
                break;
            }
            if j + 2 < rounds && param_tx.send(learner.params.clone()).is_err() {
                learner.aborted = Some("generator shut down".into());
                break;
            }
        }
        // Dropping the receiver unblocks a generator stuck in send.
        drop(batch_rx);
        drop(param_tx);
        handle.join()
    });

    match gen_exit {
        Ok(GeneratorExit::Failed(msg)) => {
            if learner.aborted.is_none() {
                learner.aborted = Some(msg);
            }
        }
        Ok(_) => {}
        Err(_) => {
            if learner.aborted.is_none() {
                learner.aborted = Some("generator worker panicked".into());
            }
        }
    }
    Ok(learner.finish())
}

/// Dispatches on the configured mode.
pub fn run(config: &RunConfig) -> Result<RunLog> {
    Ok(run_with_params(config)?.0)
}

/// As [`run`], but also returns the final trained parameters.
pub fn run_with_params(config: &RunConfig) -> Result<(RunLog, PolicyParams)> {
    let prepared = prepare(config)?;
    match config.mode {
        RunMode::Sync => run_sync_with_params(&prepared),
        RunMode::Async => run_async_with_params(&prepared),
        RunMode::AsyncLockstep => run_async_lockstep_with_params(&prepared),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub sync_wallclock_s: f64,
    pub async_wallclock_s: f64,
    /// sync time / async time.
    pub speedup: f64,
    pub winrate_delta: f64,
    pub kl_ppl_rel_delta: f64,
    /// Estimated seconds the generating unit idles in the sync run.
    pub sync_gen_idle_s: f64,
    /// Estimated seconds the training unit idles in the sync run.
    pub sync_train_idle_s: f64,
    /// Estimated idle seconds of the faster worker in the async run.
    pub async_idle_s: f64,
}

/// Compares a sync and an async run of the same experiment. Errors unless
/// task, loss, plan, and injected delays all match.
pub fn throughput_report(sync_log: &RunLog, async_log: &RunLog) -> Result<ThroughputReport> {
    let s = &sync_log.summary;
    let a = &async_log.summary;
    let comparable = s.task == a.task
        && s.loss == a.loss
        && s.n_minibatches == a.n_minibatches
        && s.updates_per_batch == a.updates_per_batch
        && s.samples_per_prompt == a.samples_per_prompt
        && s.minibatch_size == a.minibatch_size
        && s.total_episodes == a.total_episodes
        && s.delays == a.delays;
    if !comparable {
        return Err(Error::InvalidConfig("throughput report over mismatched configs".into()));
    }
    if s.mode != "sync" || a.mode == "sync" {
        return Err(Error::InvalidConfig("expected one sync and one async run".into()));
    }

    let rounds = (s.total_episodes / (s.n_minibatches * s.minibatch_size)) as f64;
    let (sync_gen_idle, sync_train_idle, async_idle) = match s.delays {
        Some(d) => {
            let gen_round = s.n_minibatches as f64 * d.gen_ms / 1000.0;
            let train_round =
                (s.n_minibatches * s.updates_per_batch) as f64 * d.train_ms / 1000.0;
            (
                rounds * train_round,
                rounds * gen_round,
                rounds * (gen_round - train_round).abs(),
            )
        }
        None => (0.0, 0.0, 0.0),
    };

    Ok(ThroughputReport {
        sync_wallclock_s: s.total_wallclock_s,
        async_wallclock_s: a.total_wallclock_s,
        speedup: s.total_wallclock_s / a.total_wallclock_s,
        winrate_delta: a.final_winrate - s.final_winrate,
        kl_ppl_rel_delta: (a.final_kl_ppl - s.final_kl_ppl) / s.final_kl_ppl,
        sync_gen_idle_s: sync_gen_idle,
        sync_train_idle_s: sync_train_idle,
        async_idle_s: async_idle,
    })
}
