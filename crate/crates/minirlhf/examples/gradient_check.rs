//! Check every analytic gradient against central finite differences.
//!
//! Run with: cargo run --release --example gradient_check

use minirlhf::gradcheck;
use minirlhf::losses::{
    best_of_k_sft_loss, online_dpo_loss, proximal_rloo_loss, rloo_loss, Episode, EpisodeBatch,
    LossConfig,
};
use minirlhf::policy::{logprob, sample, ModelDims, PolicyParams, SamplerConfig, TokenSeq};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn batch(params: &PolicyParams, prompts: usize, seed: u64) -> EpisodeBatch {
    let sampler = SamplerConfig { temperature: 1.0, max_new_tokens: 8, context_window: 8 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::new();
    for _ in 0..prompts {
        let prompt = TokenSeq::prompt(vec![rng.gen_range(2..30), rng.gen_range(2..30)]);
        for _ in 0..2 {
            let gen = sample(params, &prompt, &sampler, rng.gen()).unwrap();
            let (tok, old) = logprob(params, &prompt, &gen.completion).unwrap();
            episodes.push(Episode {
                prompt: prompt.clone(),
                completion: gen.completion,
                shaped_reward: rng.gen_range(-1.0..1.0),
                old_logprob: Some(old),
                old_logprobs_tok: Some(tok),
            });
        }
    }
    EpisodeBatch { episodes, group_size: 2, gen_version: params.version }
}

fn main() -> anyhow::Result<()> {
    let dims = ModelDims::default();
    let params = PolicyParams::random(dims, 7, 0.4);
    let config = LossConfig::default();
    let b = batch(&params, 3, 11);

    let checks: Vec<(&str, f64, minirlhf::policy::ParamBlock)> = vec![
        {
            let out = rloo_loss(&params, &b, &config)?;
            ("rloo", out.loss, out.grad)
        },
        {
            let out = proximal_rloo_loss(&params, &b, &config)?;
            ("proximal_rloo", out.loss, out.grad)
        },
        {
            let prompt = TokenSeq::prompt(vec![4, 5]);
            let plus = TokenSeq::completion(vec![6, 7, 1]);
            let minus = TokenSeq::completion(vec![8, 1]);
            let out = online_dpo_loss(&params, &params, &prompt, &plus, &minus, &config)?;
            ("online_dpo", out.loss, out.grad)
        },
        {
            let prompt = TokenSeq::prompt(vec![9]);
            let cs = vec![TokenSeq::completion(vec![10, 1]), TokenSeq::completion(vec![11, 1])];
            let out = best_of_k_sft_loss(&params, &prompt, &cs, &[0.2, 0.7])?;
            ("best_of_k_sft", out.loss, out.grad)
        },
    ];

    for (name, _, grad) in &checks {
        let report = gradcheck::check_gradient(
            &params.block,
            |block| {
                let p = PolicyParams { dims, block: block.clone(), version: 0 };
                match *name {
                    "rloo" => rloo_loss(&p, &b, &config).unwrap().loss,
                    "proximal_rloo" => proximal_rloo_loss(&p, &b, &config).unwrap().loss,
                    "online_dpo" => {
                        let prompt = TokenSeq::prompt(vec![4, 5]);
                        let plus = TokenSeq::completion(vec![6, 7, 1]);
                        let minus = TokenSeq::completion(vec![8, 1]);
                        online_dpo_loss(&p, &params, &prompt, &plus, &minus, &config)
                            .unwrap()
                            .loss
                    }
                    _ => {
                        let prompt = TokenSeq::prompt(vec![9]);
                        let cs = vec![
                            TokenSeq::completion(vec![10, 1]),
                            TokenSeq::completion(vec![11, 1]),
                        ];
                        best_of_k_sft_loss(&p, &prompt, &cs, &[0.2, 0.7]).unwrap().loss
                    }
                }
            },
            grad,
            60,
            99,
        );
        println!("{name:<16} max relative error {:.2e} over {} coords", report.max_rel_err, report.checked);
    }
    Ok(())
}
