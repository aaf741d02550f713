//! A miniature off-policyness sweep: PPO and online DPO across N mini-batches
//! per generation round, with the aggregated table and pareto frontier.
//!
//! Run with: cargo run --release --example offpolicy_sweep
//! (set MINIRLHF_WORKERS to bound the worker pool)

use minirlhf::cli::{presets, run_cells, run_label};
use minirlhf::runtime::LossKind;

fn main() -> anyhow::Result<()> {
    let mut cells = Vec::new();
    for loss in [LossKind::Ppo, LossKind::OnlineDpo] {
        for n in [1usize, 16] {
            let mut c = presets::tldr_offpolicy_base();
            c.loss = loss;
            c.plan.n_minibatches = n;
            c.plan.total_episodes = 10_240;
            c.label = run_label(&c);
            cells.push(c);
        }
    }

    let out = std::env::temp_dir().join("minirlhf_offpolicy_sweep");
    let outcome = run_cells(&cells, &out)?;
    println!("label                                         N   winrate  kl_ppl");
    for row in &outcome.rows {
        println!("{:<45} {:>2}   {:>7.3}  {:>6.3}", row.label, row.n, row.winrate, row.kl_ppl);
    }
    println!("tables under {}", outcome.out_dir.display());
    let frontier = std::fs::read_to_string(out.join("frontier.csv"))?;
    println!("frontier:\n{frontier}");
    Ok(())
}
