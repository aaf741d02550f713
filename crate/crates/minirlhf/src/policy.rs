//! Small autoregressive token policy with exact sampling, log-probability
//! evaluation, and hand-derived analytic gradients.
//!
//! The model is a fixed-window feedforward network: the last `window` tokens
//! of the context are embedded, concatenated, passed through one tanh hidden
//! layer, and projected to vocabulary logits. Short contexts are left-padded
//! with `pad_id`. Log-probabilities are always evaluated at temperature 1;
//! the sampler temperature reshapes only the generating distribution.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Token space with reserved padding and end-of-sequence ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocab {
    pub size: u32,
    pub eos_id: u32,
    pub pad_id: u32,
}

impl Default for Vocab {
    fn default() -> Self {
        Self { size: 32, eos_id: 1, pad_id: 0 }
    }
}

impl Vocab {
    pub fn new(size: u32, eos_id: u32, pad_id: u32) -> Result<Self> {
        let v = Self { size, eos_id, pad_id };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 3 {
            return Err(Error::InvalidVocab(format!("size {} < 3", self.size)));
        }
        if self.eos_id == self.pad_id {
            return Err(Error::InvalidVocab("eos_id == pad_id".into()));
        }
        if self.eos_id >= self.size || self.pad_id >= self.size {
            return Err(Error::InvalidVocab("eos_id/pad_id out of range".into()));
        }
        Ok(())
    }

    /// Ids that are neither padding nor end-of-sequence.
    pub fn content_tokens(&self) -> Vec<u32> {
        (0..self.size).filter(|&t| t != self.eos_id && t != self.pad_id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqKind {
    Prompt,
    Completion,
}

/// A prompt or completion as raw token indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<u32>,
    pub kind: SeqKind,
}

impl TokenSeq {
    pub fn prompt(tokens: Vec<u32>) -> Self {
        Self { tokens, kind: SeqKind::Prompt }
    }

    pub fn completion(tokens: Vec<u32>) -> Self {
        Self { tokens, kind: SeqKind::Completion }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        for &t in &self.tokens {
            if t >= vocab.size {
                return Err(Error::InvalidSequence(format!(
                    "token {t} out of range for vocab size {}",
                    vocab.size
                )));
            }
        }
        Ok(())
    }

    /// Tokens up to (excluding) the first eos.
    pub fn content<'a>(&'a self, vocab: &Vocab) -> &'a [u32] {
        match self.tokens.iter().position(|&t| t == vocab.eos_id) {
            Some(i) => &self.tokens[..i],
            None => &self.tokens,
        }
    }

    /// Whether the sequence contains an eos token.
    pub fn has_eos(&self, vocab: &Vocab) -> bool {
        self.tokens.iter().any(|&t| t == vocab.eos_id)
    }
}

/// Network shape. `window` is the fixed context width consumed per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub vocab: Vocab,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub window: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { vocab: Vocab::default(), embed_dim: 16, hidden_dim: 32, window: 8 }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.window == 0 {
            return Err(Error::InvalidConfig("model dims must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.window * self.embed_dim
    }
}

/// Flat parameter (or gradient) storage for the backbone plus an output head
/// of `out_dim` columns. The policy uses `out_dim == vocab.size`; the reward
/// model reuses the same layout with a scalar head.
///
/// Layout: `embed` is `vocab.size x embed_dim` row-major, `w1` is
/// `hidden_dim x (window*embed_dim)` row-major, `w2` is `out_dim x hidden_dim`
/// row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub embed: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ParamBlock {
    pub fn zeros(dims: &ModelDims, out_dim: usize) -> Self {
        Self {
            embed: vec![0.0; dims.vocab.size as usize * dims.embed_dim],
            w1: vec![0.0; dims.hidden_dim * dims.input_dim()],
            b1: vec![0.0; dims.hidden_dim],
            w2: vec![0.0; out_dim * dims.hidden_dim],
            b2: vec![0.0; out_dim],
        }
    }

    /// Uniform(-scale, scale) initialization from a fixed seed.
    pub fn random(dims: &ModelDims, out_dim: usize, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut block = Self::zeros(dims, out_dim);
        for field in block.fields_mut() {
            for v in field.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
        block
    }

    fn fields(&self) -> [&[f64]; 5] {
        [&self.embed, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn fields_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [&mut self.embed, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn flat_len(&self) -> usize {
        self.fields().iter().map(|f| f.len()).sum()
    }

    pub fn flat_get(&self, idx: usize) -> f64 {
        let mut i = idx;
        for f in self.fields() {
            if i < f.len() {
                return f[i];
            }
            i -= f.len();
        }
        panic!("flat index {idx} out of range");
    }

    pub fn flat_set(&mut self, idx: usize, value: f64) {
        let mut i = idx;
        for f in self.fields_mut() {
            if i < f.len() {
                f[i] = value;
                return;
            }
            i -= f.len();
        }
        panic!("flat index {idx} out of range");
    }

    /// self += a * other
    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (dst, src) in self.fields_mut().into_iter().zip(other.fields()) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += a * s;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for f in self.fields_mut() {
            for v in f.iter_mut() {
                *v *= a;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.fields().iter().flat_map(|f| f.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|f| f.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.fields()
            .iter()
            .zip(other.fields().iter())
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Versioned policy weights. The version increases by one on every optimizer
/// step; published snapshots are immutable values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub dims: ModelDims,
    pub block: ParamBlock,
    pub version: u64,
}

impl PolicyParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let block = ParamBlock::zeros(&dims, dims.vocab.size as usize);
        Self { dims, block, version: 0 }
    }

    pub fn random(dims: ModelDims, seed: u64, scale: f64) -> Self {
        let block = ParamBlock::random(&dims, dims.vocab.size as usize, seed, scale);
        Self { dims, block, version: 0 }
    }

    pub fn validate_finite(&self) -> Result<()> {
        if !self.block.is_finite() {
            return Err(Error::NonFiniteParams(format!(
                "policy params at version {}",
                self.version
            )));
        }
        Ok(())
    }

    pub fn out_dim(&self) -> usize {
        self.dims.vocab.size as usize
    }
}

/// Generation-time sampling knobs. `context_window` must match the model's
/// window; it is carried here so run configs read as one unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub context_window: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { temperature: 0.7, max_new_tokens: 16, context_window: 8 }
    }
}

impl SamplerConfig {
    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be >= 1".into()));
        }
        if self.context_window != dims.window {
            return Err(Error::InvalidConfig(format!(
                "sampler context_window {} != model window {}",
                self.context_window, dims.window
            )));
        }
        Ok(())
    }
}

/// A sampled completion with the log-probabilities it was drawn with and the
/// version of the generating snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub completion: TokenSeq,
    pub logprobs: Vec<f64>,
    pub gen_version: u64,
}

/// Scratch buffers for one forward/backward step.
pub(crate) struct Workspace {
    pub window: Vec<u32>,
    pub x: Vec<f64>,
    pub act: Vec<f64>,
    pub logits: Vec<f64>,
    dlogits: Vec<f64>,
    dact: Vec<f64>,
    dx: Vec<f64>,
}

impl Workspace {
    pub fn new(dims: &ModelDims, out_dim: usize) -> Self {
        Self {
            window: vec![dims.vocab.pad_id; dims.window],
            x: vec![0.0; dims.input_dim()],
            act: vec![0.0; dims.hidden_dim],
            logits: vec![0.0; out_dim],
            dlogits: vec![0.0; out_dim],
            dact: vec![0.0; dims.hidden_dim],
            dx: vec![0.0; dims.input_dim()],
        }
    }

    /// Sets the gradient seed with respect to the logits for the next
    /// `backward_window` call.
    pub fn set_dlogits(&mut self, values: &[f64]) {
        self.dlogits.copy_from_slice(values);
    }

    /// Copies the last `window` tokens of `context`, left-padding with pad_id.
    pub fn fill_window(&mut self, dims: &ModelDims, context: &[u32]) {
        let w = dims.window;
        let n = context.len().min(w);
        let pad = w - n;
        self.window[..pad].fill(dims.vocab.pad_id);
        self.window[pad..].copy_from_slice(&context[context.len() - n..]);
    }
}

/// Forward pass for the current window; fills `ws.x`, `ws.act`, `ws.logits`.
pub(crate) fn forward_window(dims: &ModelDims, block: &ParamBlock, ws: &mut Workspace) {
    let d = dims.embed_dim;
    let input = dims.input_dim();
    for (slot, &tok) in ws.window.iter().enumerate() {
        let row = tok as usize * d;
        ws.x[slot * d..(slot + 1) * d].copy_from_slice(&block.embed[row..row + d]);
    }
    for (j, (row, b)) in block.w1.chunks_exact(input).zip(block.b1.iter()).enumerate() {
        let z: f64 = b + row.iter().zip(ws.x.iter()).map(|(w, x)| w * x).sum::<f64>();
        ws.act[j] = z.tanh();
    }
    let h = dims.hidden_dim;
    for (o, (row, b)) in block.w2.chunks_exact(h).zip(block.b2.iter()).enumerate() {
        ws.logits[o] = b + row.iter().zip(ws.act.iter()).map(|(w, a)| w * a).sum::<f64>();
    }
}

/// Backward pass matching the last `forward_window` call: accumulates the
/// gradient of `dlogits . logits` into `grad`.
pub(crate) fn backward_window(
    dims: &ModelDims,
    block: &ParamBlock,
    ws: &mut Workspace,
    grad: &mut ParamBlock,
) {
    let d = dims.embed_dim;
    let h = dims.hidden_dim;
    let input = dims.input_dim();

    ws.dact.fill(0.0);
    for (o, row) in block.w2.chunks_exact(h).enumerate() {
        let dl = ws.dlogits[o];
        if dl == 0.0 {
            continue;
        }
        grad.b2[o] += dl;
        let grow = &mut grad.w2[o * h..(o + 1) * h];
        for j in 0..h {
            grow[j] += dl * ws.act[j];
            ws.dact[j] += dl * row[j];
        }
    }

    ws.dx.fill(0.0);
    for j in 0..h {
        let dpre = (1.0 - ws.act[j] * ws.act[j]) * ws.dact[j];
        if dpre == 0.0 {
            continue;
        }
        grad.b1[j] += dpre;
        let wrow = &block.w1[j * input..(j + 1) * input];
        let grow = &mut grad.w1[j * input..(j + 1) * input];
        for i in 0..input {
            grow[i] += dpre * ws.x[i];
            ws.dx[i] += dpre * wrow[i];
        }
    }

    for (slot, &tok) in ws.window.iter().enumerate() {
        let row = tok as usize * d;
        let dslice = &ws.dx[slot * d..(slot + 1) * d];
        let erow = &mut grad.embed[row..row + d];
        for (e, dv) in erow.iter_mut().zip(dslice.iter()) {
            *e += dv;
        }
    }
}

fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[target] - max - lse
}

/// Logits over the vocabulary for a single context.
///
/// The context is left-padded with `pad_id` to the model window; non-finite
/// weights are rejected with a diagnostic.
pub fn forward_logits(params: &PolicyParams, context: &TokenSeq) -> Result<Vec<f64>> {
    if context.is_empty() {
        return Err(Error::InvalidSequence("empty context".into()));
    }
    context.validate(&params.dims.vocab)?;
    params.validate_finite()?;
    let mut ws = Workspace::new(&params.dims, params.out_dim());
    ws.fill_window(&params.dims, &context.tokens);
    forward_window(&params.dims, &params.block, &mut ws);
    Ok(ws.logits)
}

/// Draws a completion autoregressively from softmax(logits/temperature),
/// stopping at eos or `max_new_tokens`. Deterministic in (params, prompt,
/// config, seed). Recorded log-probabilities are those of the generating
/// (temperature-scaled) distribution.
pub fn sample(
    params: &PolicyParams,
    prompt: &TokenSeq,
    config: &SamplerConfig,
    rng_seed: u64,
) -> Result<Generation> {
    if prompt.is_empty() {
        return Err(Error::InvalidSequence("empty prompt".into()));
    }
    prompt.validate(&params.dims.vocab)?;
    config.validate(&params.dims)?;
    params.validate_finite()?;

    let dims = &params.dims;
    let vocab = dims.vocab;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut ws = Workspace::new(dims, params.out_dim());
    let mut ctx = prompt.tokens.clone();
    let mut tokens = Vec::with_capacity(config.max_new_tokens);
    let mut logprobs = Vec::with_capacity(config.max_new_tokens);
    let mut probs = vec![0.0f64; params.out_dim()];

    for _ in 0..config.max_new_tokens {
        ws.fill_window(dims, &ctx);
        forward_window(dims, &params.block, &mut ws);

        let max = ws.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (p, &l) in probs.iter_mut().zip(ws.logits.iter()) {
            *p = ((l - max) / config.temperature).exp();
            total += *p;
        }

        let dart = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = probs.len() - 1;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if dart < acc {
                chosen = i;
                break;
            }
        }

        logprobs.push((probs[chosen] / total).ln());
        tokens.push(chosen as u32);
        ctx.push(chosen as u32);
        if chosen as u32 == vocab.eos_id {
            break;
        }
    }

    Ok(Generation {
        completion: TokenSeq::completion(tokens),
        logprobs,
        gen_version: params.version,
    })
}

/// Per-token and summed log-probability of `completion` given `prompt`,
/// teacher-forced at temperature 1.
pub fn logprob(
    params: &PolicyParams,
    prompt: &TokenSeq,
    completion: &TokenSeq,
) -> Result<(Vec<f64>, f64)> {
    if completion.is_empty() {
        return Err(Error::EmptyCompletion);
    }
    if prompt.is_empty() {
        return Err(Error::InvalidSequence("empty prompt".into()));
    }
    prompt.validate(&params.dims.vocab)?;
    completion.validate(&params.dims.vocab)?;
    params.validate_finite()?;

    let dims = &params.dims;
    let mut ws = Workspace::new(dims, params.out_dim());
    let mut ctx = prompt.tokens.clone();
    let mut per_token = Vec::with_capacity(completion.len());
    for &tok in &completion.tokens {
        ws.fill_window(dims, &ctx);
        forward_window(dims, &params.block, &mut ws);
        per_token.push(log_softmax_at(&ws.logits, tok as usize));
        ctx.push(tok);
    }
    let sum = per_token.iter().sum();
    Ok((per_token, sum))
}

/// Gradient of `sum_t weights[t] * log pi(y_t | context_t)` with respect to
/// the parameters, together with the per-token log-probabilities.
pub fn grad_logprob_weighted(
    params: &PolicyParams,
    prompt: &TokenSeq,
    completion: &TokenSeq,
    weights: &[f64],
) -> Result<(Vec<f64>, ParamBlock)> {
    if completion.is_empty() {
        return Err(Error::EmptyCompletion);
    }
    if prompt.is_empty() {
        return Err(Error::InvalidSequence("empty prompt".into()));
    }
    if weights.len() != completion.len() {
        return Err(Error::InvalidBatch(format!(
            "{} weights for {} completion tokens",
            weights.len(),
            completion.len()
        )));
    }
    prompt.validate(&params.dims.vocab)?;
    completion.validate(&params.dims.vocab)?;
    params.validate_finite()?;

    let dims = &params.dims;
    let out = params.out_dim();
    let mut ws = Workspace::new(dims, out);
    let mut grad = ParamBlock::zeros(dims, out);
    let mut ctx = prompt.tokens.clone();
    let mut per_token = Vec::with_capacity(completion.len());

    for (&tok, &wt) in completion.tokens.iter().zip(weights.iter()) {
        ws.fill_window(dims, &ctx);
        forward_window(dims, &params.block, &mut ws);

        let max = ws.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (dl, &l) in ws.dlogits.iter_mut().zip(ws.logits.iter()) {
            *dl = (l - max).exp();
            total += *dl;
        }
        per_token.push((ws.dlogits[tok as usize] / total).ln());

        if wt != 0.0 {
            // d logp[tok] / d logits = onehot(tok) - softmax(logits)
            for dl in ws.dlogits.iter_mut() {
                *dl *= -wt / total;
            }
            ws.dlogits[tok as usize] += wt;
            backward_window(dims, &params.block, &mut ws, &mut grad);
        }

        ctx.push(tok);
    }
    Ok((per_token, grad))
}

/// Gradient of the summed log-probability of `completion` given `prompt`.
pub fn grad_logprob(
    params: &PolicyParams,
    prompt: &TokenSeq,
    completion: &TokenSeq,
) -> Result<ParamBlock> {
    let weights = vec![1.0; completion.len()];
    let (_, grad) = grad_logprob_weighted(params, prompt, completion, &weights)?;
    Ok(grad)
}

/// Corpus-level per-token perplexity: exp(-sum logp / sum tokens).
pub fn perplexity(params: &PolicyParams, episodes: &[(TokenSeq, TokenSeq)]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::Eval("perplexity over zero episodes".into()));
    }
    let mut total_lp = 0.0;
    let mut total_tokens = 0usize;
    for (prompt, completion) in episodes {
        let (_, lp) = logprob(params, prompt, completion)?;
        total_lp += lp;
        total_tokens += completion.len();
    }
    if total_tokens == 0 {
        return Err(Error::Eval("perplexity over zero tokens".into()));
    }
    Ok((-total_lp / total_tokens as f64).exp())
}

/// Optimizer hyperparameters. The linear schedule decays the rate to zero
/// over the planned number of steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    /// Optional global-norm gradient clipping; disabled when absent.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Linear,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig("grad_clip must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64, total_steps: u64) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Linear => {
                let total = total_steps.max(1) as f64;
                let remaining = (total - step.min(total_steps) as f64).max(1.0);
                self.learning_rate * remaining / total
            }
        }
    }
}

/// One SGD step on a loss gradient: `theta <- theta - lr * grad`, bumping the
/// version. Returns the applied update's global norm for diagnostics.
pub fn sgd_step(
    params: &mut PolicyParams,
    grad: &ParamBlock,
    lr: f64,
    grad_clip: Option<f64>,
) -> Result<f64> {
    if !grad.is_finite() {
        return Err(Error::NonFiniteLoss("gradient has non-finite entries".into()));
    }
    let norm = grad.l2_norm();
    let scale = match grad_clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    params.block.axpy(-lr * scale, grad);
    params.version += 1;
    params.validate_finite()?;
    Ok(norm * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    fn small_dims() -> ModelDims {
        ModelDims {
            vocab: Vocab::new(5, 1, 0).unwrap(),
            embed_dim: 3,
            hidden_dim: 4,
            window: 2,
        }
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let params = PolicyParams::zeros(ModelDims::default());
        let logits = forward_logits(&params, &TokenSeq::prompt(vec![2, 3, 4])).unwrap();
        assert!(logits.iter().all(|&l| l == 0.0));
        assert_eq!(logits.len(), 32);
    }

    #[test]
    fn forward_is_deterministic() {
        let params = PolicyParams::random(ModelDims::default(), 3, 0.5);
        let ctx = TokenSeq::prompt(vec![5, 9, 2, 2, 7]);
        let a = forward_logits(&params, &ctx).unwrap();
        let b = forward_logits(&params, &ctx).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_normalizes_within_1e12() {
        for seed in 0..100 {
            let params = PolicyParams::random(ModelDims::default(), seed, 1.0);
            let ctx = TokenSeq::prompt(vec![(seed % 30 + 2) as u32, 4, 17]);
            let logits = forward_logits(&params, &ctx).unwrap();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let sum: f64 = logits.iter().map(|l| ((l - max).exp()) / total).sum();
            assert!((sum - 1.0).abs() < 1e-12, "softmax sum {sum}");
        }
    }

    #[test]
    fn near_zero_temperature_is_greedy() {
        let params = PolicyParams::random(ModelDims::default(), 11, 1.0);
        let prompt = TokenSeq::prompt(vec![3, 4, 5]);
        let config = SamplerConfig { temperature: 1e-6, max_new_tokens: 6, context_window: 8 };
        let gen = sample(&params, &prompt, &config, 99).unwrap();

        // Replay greedily with argmax over raw logits.
        let mut ctx = prompt.tokens.clone();
        for &tok in &gen.completion.tokens {
            let logits = forward_logits(&params, &TokenSeq::prompt(ctx.clone())).unwrap();
            let argmax = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0 as u32;
            assert_eq!(tok, argmax);
            ctx.push(tok);
        }
    }

    #[test]
    fn zero_params_sample_uniformly() {
        // 1e5 single-token draws from the uniform logits, checked per-bin at
        // 3 sigma and with a chi-square bound vs the uniform distribution.
        let params = PolicyParams::zeros(ModelDims::default());
        let prompt = TokenSeq::prompt(vec![2]);
        let config = SamplerConfig { temperature: 1.0, max_new_tokens: 1, context_window: 8 };
        let n = 100_000usize;
        let mut counts = [0u64; 32];
        for seed in 0..n {
            let gen = sample(&params, &prompt, &config, seed as u64).unwrap();
            counts[gen.completion.tokens[0] as usize] += 1;
        }
        let p = 1.0 / 32.0;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let mut chi2 = 0.0;
        for &c in &counts {
            assert!(
                (c as f64 - mean).abs() <= 3.0 * sigma,
                "bin count {c} outside 3 sigma of {mean}"
            );
            chi2 += (c as f64 - mean).powi(2) / mean;
        }
        // chi-square with 31 dof: mean 31, sd sqrt(62); 3 sigma above mean.
        assert!(chi2 < 31.0 + 3.0 * (62.0f64).sqrt(), "chi2 {chi2}");
    }

    #[test]
    fn same_seed_same_generation() {
        let params = PolicyParams::random(ModelDims::default(), 5, 0.7);
        let prompt = TokenSeq::prompt(vec![2, 9]);
        let config = SamplerConfig::default();
        let a = sample(&params, &prompt, &config, 1234).unwrap();
        let b = sample(&params, &prompt, &config, 1234).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.gen_version, params.version);
        assert!(a.logprobs.iter().all(|&lp| lp <= 0.0));
    }

    #[test]
    fn uniform_logprob_is_minus_l_log_v() {
        let params = PolicyParams::zeros(ModelDims::default());
        let prompt = TokenSeq::prompt(vec![2, 3]);
        let completion = TokenSeq::completion(vec![4, 5, 6, 1]);
        let (per, sum) = logprob(&params, &prompt, &completion).unwrap();
        let expect = -(4.0) * (32.0f64).ln();
        assert!((sum - expect).abs() < 1e-12);
        assert!((sum - per.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn sampler_logprobs_match_scoring_at_temperature_one() {
        let params = PolicyParams::random(ModelDims::default(), 21, 0.8);
        let prompt = TokenSeq::prompt(vec![7, 8, 9]);
        let config = SamplerConfig { temperature: 1.0, max_new_tokens: 12, context_window: 8 };
        let gen = sample(&params, &prompt, &config, 77).unwrap();
        let (per, _) = logprob(&params, &prompt, &gen.completion).unwrap();
        assert_eq!(per.len(), gen.logprobs.len());
        for (a, b) in per.iter().zip(gen.logprobs.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    /// Independent chain-rule oracle: naive per-step softmax with its own
    /// matrix code, no shared helpers.
    fn naive_logprob(params: &PolicyParams, prompt: &[u32], completion: &[u32]) -> f64 {
        let dims = &params.dims;
        let (w, d, h) = (dims.window, dims.embed_dim, dims.hidden_dim);
        let v = dims.vocab.size as usize;
        let mut ctx: Vec<u32> = prompt.to_vec();
        let mut total = 0.0;
        for &target in completion {
            let mut window = vec![dims.vocab.pad_id; w];
            let n = ctx.len().min(w);
            for i in 0..n {
                window[w - n + i] = ctx[ctx.len() - n + i];
            }
            let mut x = vec![0.0; w * d];
            for s in 0..w {
                for k in 0..d {
                    x[s * d + k] = params.block.embed[window[s] as usize * d + k];
                }
            }
            let mut act = vec![0.0; h];
            for j in 0..h {
                let mut z = params.block.b1[j];
                for i in 0..w * d {
                    z += params.block.w1[j * (w * d) + i] * x[i];
                }
                act[j] = z.tanh();
            }
            let mut logits = vec![0.0; v];
            for o in 0..v {
                let mut z = params.block.b2[o];
                for j in 0..h {
                    z += params.block.w2[o * h + j] * act[j];
                }
                logits[o] = z;
            }
            let denom: f64 = logits.iter().map(|l| l.exp()).sum();
            total += (logits[target as usize].exp() / denom).ln();
            ctx.push(target);
        }
        total
    }

    #[test]
    fn logprob_matches_naive_oracle() {
        let dims = small_dims();
        for seed in 0..20 {
            let params = PolicyParams::random(dims, seed, 1.2);
            let prompt = vec![2 + (seed % 3) as u32, 3];
            let completion = vec![4, 2, 3, 1];
            let (_, fast) = logprob(
                &params,
                &TokenSeq::prompt(prompt.clone()),
                &TokenSeq::completion(completion.clone()),
            )
            .unwrap();
            let slow = naive_logprob(&params, &prompt, &completion);
            assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let dims = ModelDims::default();
        let prompt = TokenSeq::prompt(vec![4, 17, 9]);
        let completion = TokenSeq::completion(vec![6, 2, 30, 1]);
        for seed in 0..5 {
            let params = PolicyParams::random(dims, seed, 0.8);
            let grad = grad_logprob(&params, &prompt, &completion).unwrap();
            let report = gradcheck::check_gradient(
                &params.block,
                |block| {
                    let p = PolicyParams { dims, block: block.clone(), version: 0 };
                    logprob(&p, &prompt, &completion).unwrap().1
                },
                &grad,
                50,
                seed + 1000,
            );
            assert!(
                report.max_rel_err < 1e-4,
                "seed {seed}: max rel err {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn single_token_grad_has_onehot_minus_softmax_head() {
        // 3-token vocab, zero weights: the head bias gradient is exactly
        // onehot(y) - uniform; every other tensor gets zero gradient.
        let dims = ModelDims {
            vocab: Vocab::new(3, 1, 0).unwrap(),
            embed_dim: 2,
            hidden_dim: 2,
            window: 2,
        };
        let params = PolicyParams::zeros(dims);
        let grad = grad_logprob(
            &params,
            &TokenSeq::prompt(vec![2]),
            &TokenSeq::completion(vec![2]),
        )
        .unwrap();
        let third = 1.0 / 3.0;
        assert!((grad.b2[0] - (-third)).abs() < 1e-15);
        assert!((grad.b2[1] - (-third)).abs() < 1e-15);
        assert!((grad.b2[2] - (1.0 - third)).abs() < 1e-15);
        assert!(grad.w2.iter().all(|&g| g == 0.0));
        assert!(grad.w1.iter().all(|&g| g == 0.0));
        assert!(grad.embed.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn grad_is_additive_over_tokens() {
        let dims = small_dims();
        let params = PolicyParams::random(dims, 8, 1.0);
        let prompt = TokenSeq::prompt(vec![2, 3]);
        let completion = TokenSeq::completion(vec![4, 3, 2, 1]);
        let full = grad_logprob(&params, &prompt, &completion).unwrap();
        let mut acc = ParamBlock::zeros(&dims, dims.vocab.size as usize);
        for t in 0..completion.len() {
            let mut weights = vec![0.0; completion.len()];
            weights[t] = 1.0;
            let (_, g) = grad_logprob_weighted(&params, &prompt, &completion, &weights).unwrap();
            acc.axpy(1.0, &g);
        }
        assert!(full.max_abs_diff(&acc) < 1e-10);
    }

    #[test]
    fn perplexity_of_uniform_model_is_vocab_size() {
        let params = PolicyParams::zeros(ModelDims::default());
        let eps = vec![
            (TokenSeq::prompt(vec![2]), TokenSeq::completion(vec![3, 4, 1])),
            (TokenSeq::prompt(vec![5]), TokenSeq::completion(vec![6, 1])),
        ];
        let ppl = perplexity(&params, &eps).unwrap();
        assert!((ppl - 32.0).abs() < 1e-9, "ppl {ppl}");
    }

    #[test]
    fn near_deterministic_policy_has_unit_perplexity_on_its_outputs() {
        // A huge bias on one content token makes the policy near-greedy.
        let dims = ModelDims::default();
        let mut params = PolicyParams::zeros(dims);
        params.block.b2[7] = 60.0;
        let prompt = TokenSeq::prompt(vec![2, 3]);
        let config = SamplerConfig { temperature: 1.0, max_new_tokens: 8, context_window: 8 };
        let gen = sample(&params, &prompt, &config, 5).unwrap();
        let ppl = perplexity(&params, &[(prompt, gen.completion)]).unwrap();
        assert!((ppl - 1.0).abs() < 1e-6, "ppl {ppl}");
    }

    #[test]
    fn sgd_step_bumps_version_and_leaves_snapshots_alone() {
        let mut params = PolicyParams::random(ModelDims::default(), 2, 0.1);
        let snapshot = params.clone();
        let mut grad = ParamBlock::zeros(&params.dims, params.out_dim());
        grad.b2[3] = 1.0;
        sgd_step(&mut params, &grad, 0.5, None).unwrap();
        assert_eq!(params.version, snapshot.version + 1);
        assert!((params.block.b2[3] - (snapshot.block.b2[3] - 0.5)).abs() < 1e-15);
        assert_eq!(snapshot.block.b2[3], snapshot.clone().block.b2[3]);
    }

    #[test]
    fn grad_clip_rescales_to_requested_norm() {
        let mut params = PolicyParams::zeros(ModelDims::default());
        let mut grad = ParamBlock::zeros(&params.dims, params.out_dim());
        grad.b2[0] = 3.0;
        grad.b2[1] = 4.0; // norm 5
        let applied = sgd_step(&mut params, &grad, 1.0, Some(1.0)).unwrap();
        assert!((applied - 1.0).abs() < 1e-12);
        assert!((params.block.b2[0] + 0.6).abs() < 1e-12);
    }

    #[test]
    fn error_paths() {
        let params = PolicyParams::zeros(ModelDims::default());
        let prompt = TokenSeq::prompt(vec![2]);
        assert!(matches!(
            logprob(&params, &prompt, &TokenSeq::completion(vec![])),
            Err(Error::EmptyCompletion)
        ));
        assert!(forward_logits(&params, &TokenSeq::prompt(vec![])).is_err());
        assert!(forward_logits(&params, &TokenSeq::prompt(vec![99])).is_err());

        let mut bad = PolicyParams::zeros(ModelDims::default());
        bad.block.w1[0] = f64::NAN;
        assert!(matches!(
            forward_logits(&bad, &prompt),
            Err(Error::NonFiniteParams(_))
        ));

        assert!(Vocab::new(2, 1, 0).is_err());
        assert!(Vocab::new(8, 3, 3).is_err());
        assert!(Vocab::new(8, 9, 0).is_err());
    }

    #[test]
    fn linear_schedule_decays_to_final_step() {
        let cfg = OptimConfig {
            learning_rate: 1.0,
            schedule: LrSchedule::Linear,
            grad_clip: None,
        };
        assert!((cfg.lr_at(0, 10) - 1.0).abs() < 1e-12);
        assert!((cfg.lr_at(5, 10) - 0.5).abs() < 1e-12);
        assert!((cfg.lr_at(9, 10) - 0.1).abs() < 1e-12);
    }
}
