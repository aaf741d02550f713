//! Synthetic environments: prompts, reference completions, and ground-truth
//! ("gold") scoring.
//!
//! `tldr_toy` is a summarization analog: the hidden target for each prompt is
//! the prompt cycled out to the full generation budget, the gold score mixes
//! positional overlap with a capped length bonus (the deliberately hackable
//! component), and references deliberately cover only a prefix of the target
//! so a trained policy has headroom to beat them. `math_toy` is two-digit
//! addition scored by exact answer match, the binary-verifier analog.

use crate::error::{Error, Result};
use crate::policy::{TokenSeq, Vocab};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Hidden-target length and the cap for the tldr length bonus, matched to the
/// default generation budget.
pub const TLDR_TARGET_LEN: usize = 16;
/// Weight of the hackable length bonus inside the tldr gold score.
pub const TLDR_LENGTH_BONUS_WEIGHT: f64 = 0.25;
/// References cover a prefix of the hidden target with a length drawn from
/// this inclusive range, keeping them beatable but clearly above chance.
pub const TLDR_REFERENCE_LEN_RANGE: (usize, usize) = (8, 12);

/// First digit token id; digits 0-9 map to ids 2..=11, '+' to 12.
const DIGIT_BASE: u32 = 2;
const PLUS_TOKEN: u32 = 12;
const MATH_PROMPT_LEN: usize = 5;


#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    TldrToy,
    MathToy,
}

impl std::fmt::Display for TaskName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskName::TldrToy => write!(f, "tldr_toy"),
            TaskName::MathToy => write!(f, "math_toy"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: TaskName,
    pub vocab: Vocab,
    pub prompt_len: usize,
    pub dataset_seed: u64,
}

impl TaskSpec {
    pub fn tldr_toy(dataset_seed: u64) -> Self {
        Self { name: TaskName::TldrToy, vocab: Vocab::default(), prompt_len: 8, dataset_seed }
    }

    pub fn math_toy(dataset_seed: u64) -> Self {
        Self {
            name: TaskName::MathToy,
            vocab: Vocab::default(),
            prompt_len: MATH_PROMPT_LEN,
            dataset_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vocab.validate()?;
        if self.prompt_len < 1 {
            return Err(Error::InvalidConfig("prompt_len must be >= 1".into()));
        }
        match self.name {
            TaskName::TldrToy => {
                if self.vocab.content_tokens().len() < 2 {
                    return Err(Error::InvalidConfig("tldr_toy needs >= 2 content tokens".into()));
                }
            }
            TaskName::MathToy => {
                if self.vocab.size <= PLUS_TOKEN {
                    return Err(Error::InvalidConfig(format!(
                        "math_toy needs vocab size > {PLUS_TOKEN} for digit tokens"
                    )));
                }
                if self.vocab.eos_id >= DIGIT_BASE && self.vocab.eos_id <= PLUS_TOKEN {
                    return Err(Error::InvalidConfig("math_toy digit ids collide with eos".into()));
                }
                if self.vocab.pad_id >= DIGIT_BASE && self.vocab.pad_id <= PLUS_TOKEN {
                    return Err(Error::InvalidConfig("math_toy digit ids collide with pad".into()));
                }
                if self.prompt_len != MATH_PROMPT_LEN {
                    return Err(Error::InvalidConfig(format!(
                        "math_toy prompts are fixed at {MATH_PROMPT_LEN} tokens"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Task-specific ground-truth payload attached to each prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldMeta {
    /// Hidden target pattern the tldr gold score measures overlap against.
    TldrTarget { target: Vec<u32> },
    /// Digit tokens of the correct sum, most significant first.
    MathAnswer { answer: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt: TokenSeq,
    pub reference: TokenSeq,
    pub gold_meta: GoldMeta,
}

impl PromptRecord {
    pub fn validate(&self, spec: &TaskSpec) -> Result<()> {
        self.prompt.validate(&spec.vocab)?;
        self.reference.validate(&spec.vocab)?;
        if self.reference.tokens.last() != Some(&spec.vocab.eos_id) {
            return Err(Error::InvalidSequence("reference must end with eos".into()));
        }
        Ok(())
    }
}

/// Builds a deterministic dataset of `n_prompts` records.
pub fn make_dataset(spec: &TaskSpec, n_prompts: usize) -> Result<Vec<PromptRecord>> {
    spec.validate()?;
    if n_prompts < 1 {
        return Err(Error::InvalidConfig("n_prompts must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.dataset_seed);
    match spec.name {
        TaskName::TldrToy => {
            let map = tldr_token_map(spec, &mut rng);
            Ok((0..n_prompts).map(|_| tldr_record(spec, &map, &mut rng)).collect())
        }
        TaskName::MathToy => {
            // Distinct (a, b) pairs, shuffled by the dataset seed.
            let total = 100 * 100;
            if n_prompts > total {
                return Err(Error::InvalidConfig(format!(
                    "math_toy has only {total} distinct problems"
                )));
            }
            let mut pairs: Vec<(u32, u32)> =
                (0..100u32).flat_map(|a| (0..100u32).map(move |b| (a, b))).collect();
            pairs.shuffle(&mut rng);
            Ok(pairs[..n_prompts].iter().map(|&(a, b)| math_record(spec, a, b)).collect())
        }
    }
}

/// Dataset-wide content-token permutation: the "summary vocabulary" each
/// hidden target is written in. One fixed map per dataset seed.
fn tldr_token_map(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let content = spec.vocab.content_tokens();
    let mut shuffled = content.clone();
    shuffled.shuffle(rng);
    let mut map: Vec<u32> = (0..spec.vocab.size).collect();
    for (src, dst) in content.iter().zip(shuffled.iter()) {
        map[*src as usize] = *dst;
    }
    map
}

/// Zipf-like draw over the content alphabet: token frequencies in documents
/// follow 1/(rank+1), so rare-token mappings keep the learning curve long.
fn zipf_content_token(content: &[u32], rng: &mut ChaCha8Rng) -> u32 {
    let total: f64 = (0..content.len()).map(|i| 1.0 / (i + 1) as f64).sum();
    let mut dart = rng.gen_range(0.0..total);
    for (i, &tok) in content.iter().enumerate() {
        dart -= 1.0 / (i + 1) as f64;
        if dart <= 0.0 {
            return tok;
        }
    }
    content[content.len() - 1]
}

fn tldr_record(spec: &TaskSpec, map: &[u32], rng: &mut ChaCha8Rng) -> PromptRecord {
    let content = spec.vocab.content_tokens();
    let prompt: Vec<u32> =
        (0..spec.prompt_len).map(|_| zipf_content_token(&content, rng)).collect();
    let target: Vec<u32> =
        (0..TLDR_TARGET_LEN).map(|i| map[prompt[i % prompt.len()] as usize]).collect();
    let (lo, hi) = TLDR_REFERENCE_LEN_RANGE;
    let ref_len = rng.gen_range(lo..=hi).min(target.len());
    let mut reference: Vec<u32> = target[..ref_len].to_vec();
    reference.push(spec.vocab.eos_id);
    PromptRecord {
        prompt: TokenSeq::prompt(prompt),
        reference: TokenSeq::completion(reference),
        gold_meta: GoldMeta::TldrTarget { target },
    }
}

fn math_record(spec: &TaskSpec, a: u32, b: u32) -> PromptRecord {
    let digit = |d: u32| DIGIT_BASE + d;
    let prompt = vec![digit(a / 10), digit(a % 10), PLUS_TOKEN, digit(b / 10), digit(b % 10)];
    let s = a + b;
    let answer = vec![digit(s / 100), digit((s / 10) % 10), digit(s % 10)];
    let mut reference = answer.clone();
    reference.push(spec.vocab.eos_id);
    PromptRecord {
        prompt: TokenSeq::prompt(prompt),
        reference: TokenSeq::completion(reference),
        gold_meta: GoldMeta::MathAnswer { answer },
    }
}

/// Ground-truth score of a completion. Pure and deterministic.
///
/// `math_toy` returns exactly 1.0 when the tokens before eos match the answer
/// digits and 0.0 otherwise. `tldr_toy` returns positional overlap with the
/// hidden target plus a capped length bonus, clamped to [-1, 1]; a completion
/// identical to the hidden target scores exactly 1.0.
pub fn gold_score(spec: &TaskSpec, record: &PromptRecord, completion: &TokenSeq) -> f64 {
    let content = completion.content(&spec.vocab);
    match &record.gold_meta {
        GoldMeta::TldrTarget { target } => {
            let cap = TLDR_TARGET_LEN;
            let matches = content
                .iter()
                .take(cap)
                .zip(target.iter())
                .filter(|(c, t)| c == t)
                .count();
            let overlap = matches as f64 / cap as f64;
            let len_bonus =
                TLDR_LENGTH_BONUS_WEIGHT * (content.len().min(cap) as f64 / cap as f64);
            (overlap + len_bonus).clamp(-1.0, 1.0)
        }
        GoldMeta::MathAnswer { answer } => {
            if content == answer.as_slice() {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Train/eval split: every tenth record (by index) is held out.
pub fn split_dataset(records: &[PromptRecord]) -> (Vec<PromptRecord>, Vec<PromptRecord>) {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if i % 10 == 9 {
            eval.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    if eval.is_empty() {
        eval.push(records[records.len() - 1].clone());
    }
    (train, eval)
}

/// Writes a dataset as line-delimited JSON: a `TaskSpec` header line followed
/// by one record per line.
pub fn export_dataset(path: &Path, spec: &TaskSpec, records: &[PromptRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut file, spec)?;
    file.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut file, r)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a dataset written by [`export_dataset`], validating every record.
pub fn import_dataset(path: &Path) -> Result<(TaskSpec, Vec<PromptRecord>)> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig("empty dataset file".into()))??;
    let spec: TaskSpec = serde_json::from_str(&header)?;
    spec.validate()?;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PromptRecord = serde_json::from_str(&line)?;
        record.validate(&spec)?;
        records.push(record);
    }
    Ok((spec, records))
}
