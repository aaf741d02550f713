//! Two-axis evaluation: gold win-rate against references and drift from the
//! init model measured as the init model's perplexity on the policy's own
//! outputs, plus pareto-frontier reporting over (win-rate, kl) points.

use crate::error::{Error, Result};
use crate::policy::{sample, PolicyParams, SamplerConfig, TokenSeq};
use crate::tasks::{gold_score, PromptRecord, TaskSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One run's final position on the win-rate / drift plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub winrate: f64,
    pub kl_ppl: f64,
    pub label: String,
    pub episodes: u64,
}

impl EvalPoint {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.winrate) {
            return Err(Error::Eval(format!("winrate {} outside [0, 1]", self.winrate)));
        }
        if !(self.kl_ppl >= 1.0) {
            return Err(Error::Eval(format!("kl_ppl {} below 1", self.kl_ppl)));
        }
        Ok(())
    }
}

/// Win-rate from paired score lists: wins count 1, ties 0.5.
pub fn winrate_from_scores(policy_scores: &[f64], reference_scores: &[f64]) -> f64 {
    assert_eq!(policy_scores.len(), reference_scores.len());
    let mut w = 0.0;
    for (&p, &r) in policy_scores.iter().zip(reference_scores.iter()) {
        if p > r {
            w += 1.0;
        } else if p == r {
            w += 0.5;
        }
    }
    w / policy_scores.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub winrate: f64,
    /// Init-model perplexity on the evaluation completions.
    pub kl_ppl: f64,
    /// Mean gold score of the evaluation completions; for binary tasks this
    /// is the exact-match rate.
    pub mean_gold: f64,
}

/// Samples one completion per evaluation prompt (cycling through `records`)
/// and scores the whole set: win-rate vs references, init perplexity, and
/// mean gold score. Deterministic in the seed and side-effect free.
pub fn evaluate_policy(
    spec: &TaskSpec,
    records: &[PromptRecord],
    policy: &PolicyParams,
    init: &PolicyParams,
    sampler: &SamplerConfig,
    n_eval: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_eval < 1 {
        return Err(Error::Eval("n_eval must be >= 1".into()));
    }
    if records.is_empty() {
        return Err(Error::Eval("no evaluation records".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy_scores = Vec::with_capacity(n_eval);
    let mut ref_scores = Vec::with_capacity(n_eval);
    let mut episodes: Vec<(TokenSeq, TokenSeq)> = Vec::with_capacity(n_eval);
    for i in 0..n_eval {
        let record = &records[i % records.len()];
        let gen = sample(policy, &record.prompt, sampler, rng.gen())?;
        policy_scores.push(gold_score(spec, record, &gen.completion));
        ref_scores.push(gold_score(spec, record, &record.reference));
        episodes.push((record.prompt.clone(), gen.completion));
    }
    let winrate = winrate_from_scores(&policy_scores, &ref_scores);
    let kl_ppl = crate::policy::perplexity(init, &episodes)?;
    let mean_gold = policy_scores.iter().sum::<f64>() / policy_scores.len() as f64;
    Ok(EvalReport { winrate, kl_ppl, mean_gold })
}

/// Fraction of evaluation prompts where the policy's sampled completion
/// out-scores the reference under the gold scorer; ties count one half.
pub fn gold_winrate(
    spec: &TaskSpec,
    policy: &PolicyParams,
    records: &[PromptRecord],
    sampler: &SamplerConfig,
    n_eval: usize,
    seed: u64,
) -> Result<f64> {
    Ok(evaluate_policy(spec, records, policy, policy, sampler, n_eval, seed)?.winrate)
}

/// Init-model perplexity on a set of policy completions.
pub fn kl_proxy(init: &PolicyParams, episodes: &[(TokenSeq, TokenSeq)]) -> Result<f64> {
    crate::policy::perplexity(init, episodes)
}

/// Points not dominated by any other (higher-or-equal winrate with
/// lower-or-equal kl, at least one strict). Exact duplicates keep their first
/// occurrence; input order is preserved.
pub fn pareto_frontier(points: &[EvalPoint]) -> Vec<EvalPoint> {
    let mut out: Vec<EvalPoint> = Vec::new();
    'candidates: for (i, p) in points.iter().enumerate() {
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let dominated = q.winrate >= p.winrate
                && q.kl_ppl <= p.kl_ppl
                && (q.winrate > p.winrate || q.kl_ppl < p.kl_ppl);
            if dominated {
                continue 'candidates;
            }
        }
        if out.iter().any(|kept| kept.winrate == p.winrate && kept.kl_ppl == p.kl_ppl) {
            continue;
        }
        out.push(p.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ModelDims;
    use crate::tasks::{make_dataset, TaskSpec};

    fn pt(winrate: f64, kl: f64, label: &str) -> EvalPoint {
        EvalPoint { winrate, kl_ppl: kl, label: label.into(), episodes: 0 }
    }

    #[test]
    fn tie_rule_gives_half() {
        assert_eq!(winrate_from_scores(&[1.0, 1.0], &[1.0, 1.0]), 0.5);
        assert_eq!(winrate_from_scores(&[1.0, 1.0], &[0.0, 0.0]), 1.0);
        assert_eq!(winrate_from_scores(&[0.0], &[1.0]), 0.0);
    }

    #[test]
    fn winrate_antisymmetry_under_role_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.gen_range(1..20usize);
            let a: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..5) as f64) / 4.0).collect();
            let b: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..5) as f64) / 4.0).collect();
            let w = winrate_from_scores(&a, &b);
            let w_swapped = winrate_from_scores(&b, &a);
            assert!((w + w_swapped - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&w));
        }
    }

    #[test]
    fn evaluation_is_seed_deterministic() {
        let spec = TaskSpec::tldr_toy(5);
        let records = make_dataset(&spec, 20).unwrap();
        let policy = PolicyParams::random(ModelDims::default(), 3, 0.2);
        let sampler = SamplerConfig::default();
        let a = evaluate_policy(&spec, &records, &policy, &policy, &sampler, 40, 9).unwrap();
        let b = evaluate_policy(&spec, &records, &policy, &policy, &sampler, 40, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.kl_ppl >= 1.0);
    }

    #[test]
    fn untrained_policy_perplexity_on_own_samples_is_near_vocab_size() {
        // Monte-Carlo estimate: an all-zero policy is exactly uniform, so its
        // perplexity on its own temperature-1 samples is the vocab size.
        let spec = TaskSpec::tldr_toy(6);
        let records = make_dataset(&spec, 20).unwrap();
        let policy = PolicyParams::zeros(ModelDims::default());
        let sampler = SamplerConfig { temperature: 1.0, ..SamplerConfig::default() };
        let report =
            evaluate_policy(&spec, &records, &policy, &policy, &sampler, 200, 11).unwrap();
        assert!((report.kl_ppl - 32.0).abs() < 1e-9, "ppl {}", report.kl_ppl);
    }

    #[test]
    fn pareto_single_point_is_itself() {
        let points = vec![pt(0.5, 2.0, "a")];
        assert_eq!(pareto_frontier(&points), points);
    }

    #[test]
    fn pareto_drops_dominated_points() {
        let points = vec![pt(0.6, 2.0, "a"), pt(0.7, 1.8, "b")];
        let front = pareto_frontier(&points);
        assert_eq!(front.len(), 1);
        assert_eq!(front[0].label, "b");
    }

    #[test]
    fn pareto_keeps_one_duplicate_representative() {
        let points = vec![pt(0.6, 2.0, "first"), pt(0.6, 2.0, "second")];
        let front = pareto_frontier(&points);
        assert_eq!(front.len(), 1);
        assert_eq!(front[0].label, "first");
    }

    #[test]
    fn pareto_output_is_mutually_non_dominating() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let n = rng.gen_range(1..15usize);
            let points: Vec<EvalPoint> = (0..n)
                .map(|i| {
                    pt(
                        (rng.gen_range(0..10) as f64) / 10.0,
                        1.0 + (rng.gen_range(0..10) as f64) / 5.0,
                        &format!("p{i}"),
                    )
                })
                .collect();
            let front = pareto_frontier(&points);
            assert!(!front.is_empty());
            for a in &front {
                for b in &front {
                    if a.label == b.label {
                        continue;
                    }
                    let dominates = a.winrate >= b.winrate
                        && a.kl_ppl <= b.kl_ppl
                        && (a.winrate > b.winrate || a.kl_ppl < b.kl_ppl);
                    assert!(!dominates, "{} dominates {}", a.label, b.label);
                }
            }
        }
    }
}
