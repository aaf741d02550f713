//! The concurrent generator/learner pair versus its single-threaded lockstep
//! replay: identical training data, identical losses, different wall-clock.
//!
//! Run with: cargo run --release --example train_async

use minirlhf::cli::presets;
use minirlhf::runtime::{run_async, run_async_lockstep, LossKind, RunMode};

fn main() -> anyhow::Result<()> {
    let mut config = presets::tldr_base();
    config.loss = LossKind::OnlineDpo;
    config.plan.total_episodes = 2560;
    config.label = "train_async_demo".into();

    config.mode = RunMode::Async;
    let concurrent = run_async(&config)?;
    config.mode = RunMode::AsyncLockstep;
    let lockstep = run_async_lockstep(&config)?;

    println!(
        "concurrent fingerprint {:016x}\nlockstep   fingerprint {:016x}",
        concurrent.data_fingerprint(),
        lockstep.data_fingerprint()
    );
    assert_eq!(concurrent.losses, lockstep.losses, "per-step losses must match exactly");

    let stale: Vec<u64> = concurrent.staleness.iter().map(|s| s.staleness()).collect();
    println!("staleness per batch (priming first): {:?}...", &stale[..stale.len().min(8)]);
    println!(
        "final winrate {:.3} vs lockstep {:.3}; wall {:.2}s vs {:.2}s",
        concurrent.summary.final_winrate,
        lockstep.summary.final_winrate,
        concurrent.summary.total_wallclock_s,
        lockstep.summary.total_wallclock_s,
    );
    Ok(())
}
