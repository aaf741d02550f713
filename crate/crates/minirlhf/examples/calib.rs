//! Scratch calibration harness (development only).

use minirlhf::cli::presets;
use minirlhf::runtime::{run, LossKind, RunMode};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "sft".into());
    match which.as_str() {
        "sft" => sft_probe(),
        "ppo_lr" => ppo_lr_scan(),
        "ppo_n" => ppo_n_scan(),
        "dpo" => dpo_probe(),
        "math" => math_probe(),
        "grid" => ppo_lr_n_grid(),
        "tk" => t_and_k_probe(),
        "tk2" => t_and_k_probe2(),
        "crit56" => crit56_probe(),
        "k_proxy" => k_proxy_probe(),
        other => eprintln!("unknown probe {other}"),
    }
}

fn sft_probe() {
    let base = presets::tldr_base();
    let prepared = minirlhf::runtime::prepare(&base).unwrap();
    let report = minirlhf::eval::evaluate_policy(
        &base.task,
        &prepared.eval_records,
        &prepared.init,
        &prepared.init,
        &base.sampler,
        400,
        7,
    )
    .unwrap();
    println!(
        "SFT init: winrate={:.3} kl_ppl={:.3} mean_gold={:.3}",
        report.winrate, report.kl_ppl, report.mean_gold
    );
    // Show a few samples vs references.
    for i in 0..4 {
        let r = &prepared.eval_records[i];
        let gen = minirlhf::policy::sample(&prepared.init, &r.prompt, &base.sampler, 1000 + i as u64)
            .unwrap();
        println!(
            "prompt={:?}\n  ref={:?} (gold {:.3})\n  gen={:?} (gold {:.3})",
            r.prompt.tokens,
            r.reference.tokens,
            minirlhf::tasks::gold_score(&base.task, r, &r.reference),
            gen.completion.tokens,
            minirlhf::tasks::gold_score(&base.task, r, &gen.completion),
        );
    }
}

fn ppo_lr_scan() {
    for lr in [0.02, 0.05, 0.08, 0.15, 0.3] {
        let mut c = presets::tldr_base();
        c.optim.learning_rate = lr;
        c.label = format!("lr{lr}");
        let log = run(&c).unwrap();
        println!(
            "ppo N=1 lr={lr}: base_wr={:.3} final_wr={:.3} kl={:.3} gold={:.3} aborted={:?} wall={:.1}s",
            log.summary.baseline_winrate,
            log.summary.final_winrate,
            log.summary.final_kl_ppl,
            log.summary.final_mean_gold,
            log.summary.aborted,
            log.summary.total_wallclock_s,
        );
    }
}

fn ppo_n_scan() {
    let lr: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.08);
    for n in [1usize, 16, 64] {
        for seed in [1u64, 2, 3] {
            let mut c = presets::tldr_base();
            c.optim.learning_rate = lr;
            c.plan.n_minibatches = n;
            c.seed = seed;
            c.label = format!("N{n}s{seed}");
            let log = run(&c).unwrap();
            println!(
                "ppo N={n} seed={seed}: final_wr={:.3} kl={:.3} clip_frac_last={:.3} wall={:.1}s",
                log.summary.final_winrate,
                log.summary.final_kl_ppl,
                log.records.last().map(|r| r.clip_frac).unwrap_or(f64::NAN),
                log.summary.total_wallclock_s,
            );
        }
    }
}

fn dpo_probe() {
    for n in [1usize, 16] {
        for seed in [1u64, 2, 3] {
            let mut c = presets::tldr_base();
            c.loss = LossKind::OnlineDpo;
            c.plan.n_minibatches = n;
            c.seed = seed;
            c.label = format!("dpoN{n}s{seed}");
            let log = run(&c).unwrap();
            println!(
                "dpo N={n} seed={seed}: final_wr={:.3} kl={:.3} wall={:.1}s",
                log.summary.final_winrate, log.summary.final_kl_ppl, log.summary.total_wallclock_s,
            );
        }
    }
    // Async parity probe.
    for mode in [RunMode::Sync, RunMode::Async] {
        for seed in [1u64, 2, 3] {
            let mut c = presets::tldr_base();
            c.loss = LossKind::OnlineDpo;
            c.mode = mode;
            c.seed = seed;
            c.label = format!("dpo{mode}s{seed}");
            let log = run(&c).unwrap();
            println!(
                "dpo mode={mode} seed={seed}: final_wr={:.3} kl={:.3}",
                log.summary.final_winrate, log.summary.final_kl_ppl,
            );
        }
    }
}

fn math_probe() {
    let mut c = presets::math_base();
    c.label = "math".into();
    let prepared = minirlhf::runtime::prepare(&c).unwrap();
    let greedy = minirlhf::policy::SamplerConfig { temperature: 1e-6, ..c.sampler };
    let base_em = minirlhf::eval::evaluate_policy(
        &c.task,
        &prepared.eval_records,
        &prepared.init,
        &prepared.init,
        &greedy,
        200,
        7,
    )
    .unwrap();
    println!("math SFT init: exact_match={:.3} winrate={:.3}", base_em.mean_gold, base_em.winrate);
    for loss in [LossKind::ProximalRloo, LossKind::OnlineDpo] {
        for mode in [RunMode::Sync, RunMode::Async] {
            let mut c2 = c.clone();
            c2.loss = loss;
            c2.mode = mode;
            c2.label = format!("math-{loss}-{mode}");
            let (log, final_params) = minirlhf::runtime::run_with_params(&c2).unwrap();
            let em = minirlhf::eval::evaluate_policy(
                &c2.task,
                &prepared.eval_records,
                &final_params,
                &prepared.init,
                &greedy,
                200,
                7,
            )
            .unwrap();
            println!(
                "math {loss} {mode}: greedy_em={:.3} (temp0.7 gold={:.3}) kl={:.3} wall={:.1}s aborted={:?}",
                em.mean_gold,
                log.summary.final_mean_gold,
                log.summary.final_kl_ppl,
                log.summary.total_wallclock_s,
                log.summary.aborted,
            );
        }
    }
}

// Probe: lr sensitivity of the N spread.
pub fn ppo_lr_n_grid() {
    let hidden: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(32);
    let embed: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(16);
    let clip: f64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(0.2);
    let vocab: u32 = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(32);
    let mb: usize = std::env::args().nth(6).and_then(|s| s.parse().ok()).unwrap_or(32);
    let sft_steps: usize = std::env::args().nth(7).and_then(|s| s.parse().ok()).unwrap_or(400);
    for lr in [0.05, 0.1] {
        for n in [1usize, 16, 64] {
            let mut c = presets::tldr_base();
            c.task.vocab.size = vocab;
            c.plan.minibatch_size = mb;
            c.sft = Some(minirlhf::sft::SftConfig {
                steps: sft_steps,
                minibatch: 16,
                learning_rate: if sft_steps > 200 { 0.25 } else { 0.2 },
                seed: 0,
            });
            c.model.hidden_dim = hidden;
            c.model.embed_dim = embed;
            c.loss_cfg.clip_epsilon = clip;
            c.optim.learning_rate = lr;
            c.plan.n_minibatches = n;
            c.label = format!("lr{lr}N{n}");
            let log = run(&c).unwrap();
            let curve: Vec<String> = log
                .evals
                .iter()
                .step_by(2)
                .map(|e| format!("{:.2}@{}k", e.winrate, e.episodes / 1000))
                .collect();
            let mean_clip: f64 = log.records.iter().map(|r| r.clip_frac).sum::<f64>()
                / log.records.len() as f64;
            println!(
                "lr={lr} N={n}: final={:.3} kl={:.3} mean_clip={:.3} curve=[{}]",
                log.summary.final_winrate,
                log.summary.final_kl_ppl,
                mean_clip,
                curve.join(" ")
            );
        }
    }
}


fn t_and_k_probe() {
    // T epochs: sample efficiency and drift.
    for t in [1usize, 3] {
        for seed in [1u64, 2, 3] {
            let mut c = presets::tldr_base();
            c.loss = LossKind::OnlineDpo;
            c.plan.updates_per_batch = t;
            c.eval = minirlhf::runtime::EvalConfig { n_eval: 256, eval_every: 40, eval_seed: 17 };
            c.seed = seed;
            c.label = format!("T{t}s{seed}");
            let log = run(&c).unwrap();
            let curve: Vec<String> = log
                .evals
                .iter()
                .step_by(4)
                .map(|e| format!("{:.2}@{}", e.winrate, e.episodes))
                .collect();
            println!(
                "T={t} seed={seed}: final_wr={:.3} kl={:.3} curve=[{}]",
                log.summary.final_winrate,
                log.summary.final_kl_ppl,
                curve.join(" ")
            );
        }
    }
    // K=2 vs K=4 with halved budget and lr.
    for (k, half) in [(2usize, false), (4, true)] {
        for seed in [1u64, 2, 3] {
            let mut c = presets::tldr_base();
            c.loss = LossKind::OnlineDpo;
            c.plan.samples_per_prompt = k;
            if half {
                c.plan.total_episodes /= 2;
                c.optim.learning_rate /= 2.0;
            }
            c.seed = seed;
            c.label = format!("K{k}s{seed}");
            let log = run(&c).unwrap();
            println!(
                "K={k} half={half} seed={seed}: final_wr={:.3} kl={:.3} episodes={}",
                log.summary.final_winrate, log.summary.final_kl_ppl, log.summary.episodes_seen
            );
        }
    }
}


fn t_and_k_probe2() {
    let sft_steps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(400);
    let sft_lr: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    // T epochs with a sharper SFT init.
    for t in [1usize, 3] {
        for seed in [1u64, 2, 3] {
            let mut c = presets::tldr_base();
            c.sft = Some(minirlhf::sft::SftConfig {
                steps: sft_steps,
                minibatch: 16,
                learning_rate: sft_lr,
                seed: 0,
            });
            c.loss = LossKind::OnlineDpo;
            c.plan.updates_per_batch = t;
            c.eval = minirlhf::runtime::EvalConfig { n_eval: 512, eval_every: 80, eval_seed: 17 };
            c.seed = seed;
            c.label = format!("T{t}s{seed}");
            let log = run(&c).unwrap();
            let first_cross = |thresh: f64| {
                log.evals.iter().find(|e| e.winrate >= thresh).map(|e| e.episodes as i64).unwrap_or(-1)
            };
            println!(
                "sft{sft_steps} T={t} seed={seed}: base={:.3} final_wr={:.3} kl={:.3} cross0.5@{} cross0.6@{}",
                log.summary.baseline_winrate,
                log.summary.final_winrate,
                log.summary.final_kl_ppl,
                first_cross(0.5),
                first_cross(0.6),
            );
        }
    }
    // K=2 at the base budget vs K=4 with halved steps and lr.
    for (k, episodes, lr) in [(2usize, 40_960usize, 0.05f64), (4, 20_480, 0.05), (4, 20_480, 0.0375), (2, 20_480, 0.05)] {
        for seed in [1u64, 2, 3] {
            let mut c = presets::tldr_base();
            c.sft = Some(minirlhf::sft::SftConfig {
                steps: sft_steps,
                minibatch: 16,
                learning_rate: sft_lr,
                seed: 0,
            });
            c.loss = LossKind::OnlineDpo;
            c.plan.samples_per_prompt = k;
            c.plan.total_episodes = episodes;
            c.optim.learning_rate = lr;
            c.seed = seed;
            c.label = format!("K{k}s{seed}");
            let log = run(&c).unwrap();
            println!(
                "K={k} episodes={episodes} seed={seed}: final_wr={:.3} kl={:.3}",
                log.summary.final_winrate, log.summary.final_kl_ppl
            );
        }
    }
}


fn offpolicy_base() -> minirlhf::runtime::RunConfig {
    let mut c = presets::tldr_base();
    c.plan.minibatch_size = 64;
    c.sft = Some(minirlhf::sft::SftConfig { steps: 120, minibatch: 16, learning_rate: 0.2, seed: 0 });
    c
}

fn crit56_probe() {
    let mut finals: std::collections::BTreeMap<(String, usize), Vec<f64>> = Default::default();
    for loss in [LossKind::Ppo, LossKind::OnlineDpo] {
        for n in [1usize, 16, 64] {
            if loss == LossKind::OnlineDpo && n == 64 {
                continue;
            }
            for seed in [1u64, 2, 3] {
                let mut c = offpolicy_base();
                c.loss = loss;
                c.plan.n_minibatches = n;
                c.seed = seed;
                c.label = format!("{loss}N{n}s{seed}");
                let log = run(&c).unwrap();
                println!(
                    "{loss} N={n} seed={seed}: final={:.4} kl={:.3}",
                    log.summary.final_winrate, log.summary.final_kl_ppl
                );
                finals.entry((loss.to_string(), n)).or_default().push(log.summary.final_winrate);
            }
        }
    }
    let median = |v: &Vec<f64>| {
        let mut s = v.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s[s.len() / 2]
    };
    let m1 = median(&finals[&("ppo".to_string(), 1)]);
    let m16 = median(&finals[&("ppo".to_string(), 16)]);
    let m64 = median(&finals[&("ppo".to_string(), 64)]);
    println!("criterion5: medians {m1:.4} > {m16:.4} > {m64:.4}, gap {:.4}", m1 - m64);
    for seed in 0..3 {
        let ppo_ret = finals[&("ppo".to_string(), 16)][seed] / finals[&("ppo".to_string(), 1)][seed];
        let dpo_ret = finals[&("online_dpo".to_string(), 16)][seed]
            / finals[&("online_dpo".to_string(), 1)][seed];
        println!("criterion6 seed{}: dpo_ret={dpo_ret:.4} ppo_ret={ppo_ret:.4}", seed + 1);
    }
}


fn k_proxy_probe() {
    let pairs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let epochs: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(30);
    for (k, episodes, lr) in
        [(2usize, 40_960usize, 0.05f64), (4, 20_480, 0.025), (4, 20_480, 0.05)]
    {
        for seed in [1u64, 2, 3] {
            let mut c = presets::tldr_base();
            c.reward_source = minirlhf::runtime::RewardSourceKind::Proxy {
                pairs_per_prompt: pairs,
                train: minirlhf::reward::RewardTrainConfig {
                    epochs,
                    minibatch: 32,
                    learning_rate: 0.5,
                    holdout_frac: 0.1,
                    seed: 0,
                    hidden_multiplier: 1,
                },
            };
            c.loss = LossKind::OnlineDpo;
            c.plan.samples_per_prompt = k;
            c.plan.total_episodes = episodes;
            c.optim.learning_rate = lr;
            c.seed = seed;
            c.label = format!("Kp{k}s{seed}");
            let log = run(&c).unwrap();
            println!(
                "proxy K={k} lr={lr} episodes={episodes} seed={seed}: final_wr={:.3} kl={:.3} gold={:.3}",
                log.summary.final_winrate, log.summary.final_kl_ppl, log.summary.final_mean_gold
            );
        }
    }
}
