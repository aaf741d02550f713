//! Desk-scale laboratory for synchronous and asynchronous RLHF training.
//!
//! A tiny fixed-window token policy is finetuned against programmatic or
//! learned rewards with the usual RLHF objectives (PPO-style clipped
//! surrogates, REINFORCE leave-one-out, log-ratio variants, online DPO,
//! best-of-K supervised finetuning). Training runs either strictly
//! synchronously or as a concurrent generator/learner pair that trains on
//! one-step-stale batches; a deterministic lockstep replay of the
//! asynchronous dataflow makes the concurrency auditable, and an injected
//! delay harness makes throughput claims testable on any machine.
//!
//! Start with the runnable programs under `examples/`.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod policy;
pub mod reward;
pub mod runtime;
pub mod scheduler;
pub mod sft;
pub mod tasks;

pub use error::{Error, Result};
