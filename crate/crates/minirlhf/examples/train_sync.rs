//! A small synchronous training run end to end, printing the evaluation
//! trajectory and the final summary.
//!
//! Run with: cargo run --release --example train_sync

use minirlhf::cli::presets;
use minirlhf::runtime::{run_sync, LossKind};

fn main() -> anyhow::Result<()> {
    let mut config = presets::tldr_base();
    config.loss = LossKind::OnlineDpo;
    config.plan.total_episodes = 5120;
    config.eval.eval_every = 40;
    config.label = "train_sync_demo".into();

    let log = run_sync(&config)?;
    println!("step  episodes  winrate  kl_ppl");
    for e in &log.evals {
        println!("{:>4}  {:>8}  {:>7.3}  {:>6.3}", e.step, e.episodes, e.winrate, e.kl_ppl);
    }
    let s = &log.summary;
    println!(
        "final: winrate {:.3} (baseline {:.3}), kl_ppl {:.3}, {} episodes in {:.1}s",
        s.final_winrate, s.baseline_winrate, s.final_kl_ppl, s.episodes_seen, s.total_wallclock_s
    );
    Ok(())
}
