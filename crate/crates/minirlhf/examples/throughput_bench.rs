//! Injected-delay throughput harness: synchronous alternation pays the sum
//! of generation and training time per step, the asynchronous pipeline pays
//! only the slower of the two.
//!
//! Run with: cargo run --release --example throughput_bench

use minirlhf::cli::presets;
use minirlhf::runtime::{run, throughput_report};

fn main() -> anyhow::Result<()> {
    // 21 ms generation, 33 ms training, 233 steps.
    let cells = presets::throughput_delays();
    let sync_log = run(&cells[0])?;
    let async_log = run(&cells[1])?;

    let delays = cells[0].delays.unwrap();
    let steps = cells[0].plan.total_episodes / cells[0].plan.minibatch_size;
    let sync_ideal = steps as f64 * (delays.gen_ms + delays.train_ms) / 1000.0;
    let async_ideal =
        (steps as f64 * delays.train_ms.max(delays.gen_ms) + delays.gen_ms.min(delays.train_ms))
            / 1000.0;

    println!(
        "sync : {:.2}s measured vs {:.2}s ideal alternation",
        sync_log.summary.total_wallclock_s, sync_ideal
    );
    println!(
        "async: {:.2}s measured vs {:.2}s ideal pipeline",
        async_log.summary.total_wallclock_s, async_ideal
    );

    let report = throughput_report(&sync_log, &async_log)?;
    println!(
        "speedup {:.2}x, winrate delta {:+.3}, kl delta {:+.2}%",
        report.speedup,
        report.winrate_delta,
        100.0 * report.kl_ppl_rel_delta
    );
    println!(
        "idle estimates: sync gen {:.1}s, sync train {:.1}s, async faster-worker {:.1}s",
        report.sync_gen_idle_s, report.sync_train_idle_s, report.async_idle_s
    );
    Ok(())
}
