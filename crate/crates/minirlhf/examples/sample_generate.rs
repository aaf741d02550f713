//! Build a tiny policy, sample completions, and inspect log-probabilities.
//!
//! Run with: cargo run --release --example sample_generate

use minirlhf::policy::{
    forward_logits, logprob, sample, ModelDims, PolicyParams, SamplerConfig, TokenSeq,
};

fn main() -> anyhow::Result<()> {
    let dims = ModelDims::default();
    let params = PolicyParams::random(dims, 42, 0.3);
    let prompt = TokenSeq::prompt(vec![5, 9, 12, 3]);

    let config = SamplerConfig::default();
    for seed in 0..3 {
        let gen = sample(&params, &prompt, &config, seed)?;
        let (per_token, total) = logprob(&params, &prompt, &gen.completion)?;
        println!(
            "seed {seed}: tokens {:?}  sampler logp {:.3}  temp-1 logp {:.3} ({} tokens)",
            gen.completion.tokens,
            gen.logprobs.iter().sum::<f64>(),
            total,
            per_token.len(),
        );
    }

    // Temperature -> 0 reduces to greedy argmax decoding.
    let greedy = SamplerConfig { temperature: 1e-6, ..config };
    let gen = sample(&params, &prompt, &greedy, 0)?;
    let logits = forward_logits(&params, &prompt)?;
    let argmax = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    println!("greedy first token {} == argmax {}", gen.completion.tokens[0], argmax);
    Ok(())
}
