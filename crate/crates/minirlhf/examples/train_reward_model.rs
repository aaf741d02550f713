//! Train a proxy reward model from gold-labelled preference pairs and check
//! how well its scores track the gold scorer.
//!
//! Run with: cargo run --release --example train_reward_model

use minirlhf::policy::{sample, ModelDims, PolicyParams, SamplerConfig};
use minirlhf::reward::{label_pair, proxy_reward, train_reward_model, RewardTrainConfig};
use minirlhf::tasks::{gold_score, make_dataset, split_dataset, TaskSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let spec = TaskSpec::tldr_toy(3);
    let records = make_dataset(&spec, 300)?;
    let (train, eval) = split_dataset(&records);
    let policy = PolicyParams::random(ModelDims::default(), 5, 0.2);
    let sampler = SamplerConfig::default();

    // Label sampled completion pairs with the gold scorer.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pairs = Vec::new();
    for record in &train {
        for _ in 0..2 {
            let a = sample(&policy, &record.prompt, &sampler, rng.gen())?;
            let b = sample(&policy, &record.prompt, &sampler, rng.gen())?;
            if a.completion != b.completion {
                pairs.push(label_pair(&spec, record, &a.completion, &b.completion)?);
            }
        }
    }
    println!("labelled {} pairs", pairs.len());

    let config = RewardTrainConfig::default();
    let (rm, report) = train_reward_model(&pairs, &config, Some(&policy))?;
    println!(
        "held-out pair accuracy {:.3} (train loss {:.4}, {} train / {} holdout pairs)",
        report.holdout_accuracy, report.final_train_loss, report.train_pairs, report.holdout_pairs
    );

    // Rank correlation between proxy and gold on held-out completions.
    let mut proxy_scores = Vec::new();
    let mut gold_scores = Vec::new();
    for record in &eval {
        for s in 0..4u64 {
            let gen = sample(&policy, &record.prompt, &sampler, 900 + s)?;
            proxy_scores.push(proxy_reward(&rm, &record.prompt, &gen.completion));
            gold_scores.push(gold_score(&spec, record, &gen.completion));
        }
    }
    println!("spearman(proxy, gold) = {:.3}", spearman(&proxy_scores, &gold_scores));
    Ok(())
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut ranks = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let ra = rank(a);
    let rb = rank(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}
