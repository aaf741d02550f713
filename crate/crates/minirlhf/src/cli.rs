//! Experiment runner behind the `train`, `sweep`, and `report` subcommands:
//! declarative TOML experiment files, named sweep presets, a bounded worker
//! pool for sweep cells, and report generation from run logs.

use crate::error::{Error, Result};
use crate::eval::{pareto_frontier, EvalPoint};
use crate::runtime::{
    run, throughput_report, EvalRecord, LossKind, RunConfig, RunLog, RunMode, RunSummary,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

/// Environment variable bounding the sweep worker pool.
pub const WORKERS_ENV: &str = "MINIRLHF_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Train,
    Sweep,
}

/// A declarative experiment description: exactly one run, or a sweep grid.
/// Unknown keys are rejected during parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub run: Option<RunConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Expands to a named preset cell list; grid axes are ignored when set.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub base: Option<RunConfig>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub losses: Vec<LossKind>,
    #[serde(default)]
    pub n_minibatches: Vec<usize>,
    #[serde(default)]
    pub updates_per_batch: Vec<usize>,
    #[serde(default)]
    pub samples_per_prompt: Vec<usize>,
    #[serde(default)]
    pub modes: Vec<RunMode>,
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("experiment file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("serialize experiment: {e}")))
    }
}

/// Command-line overrides applied on top of the experiment file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<RunMode>,
}

fn apply_overrides(config: &mut RunConfig, overrides: &Overrides) {
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(mode) = overrides.mode {
        config.mode = mode;
    }
}

pub fn run_label(config: &RunConfig) -> String {
    format!(
        "{}_{}_N{}_T{}_K{}_{}_s{}",
        config.task.name,
        config.loss,
        config.plan.n_minibatches,
        config.plan.updates_per_batch,
        config.plan.samples_per_prompt,
        config.mode,
        config.seed
    )
}

/// Executes the experiment file's single run and writes its logs under
/// `<out>/<label>/`. Returns the run summary.
pub fn cmd_train(config_path: &Path, overrides: &Overrides) -> Result<RunSummary> {
    let file = ExperimentFile::load(config_path)?;
    if file.kind != ExperimentKind::Train {
        return Err(Error::InvalidConfig("kind must be \"train\" for cmd_train".into()));
    }
    let mut config =
        file.run.ok_or_else(|| Error::InvalidConfig("missing [run] table".into()))?;
    apply_overrides(&mut config, overrides);
    if config.label.is_empty() {
        config.label = run_label(&config);
    }
    config.validate()?;
    let out = overrides
        .out
        .clone()
        .or(file.out_dir)
        .unwrap_or_else(|| PathBuf::from("minirlhf_out"));
    let (log, final_params) = crate::runtime::run_with_params(&config)?;
    let run_dir = out.join(&config.label);
    log.write(&run_dir)?;
    crate::checkpoint::save_policy(&run_dir.join("policy.bin"), &final_params)?;
    Ok(log.summary)
}

/// Expands a sweep into its cell configs, preset or grid.
pub fn expand_sweep(sweep: &SweepConfig) -> Result<Vec<RunConfig>> {
    if let Some(name) = &sweep.preset {
        let mut cells = presets::cells(name)?;
        if !sweep.seeds.is_empty() {
            cells = cells
                .iter()
                .flat_map(|c| {
                    sweep.seeds.iter().map(move |&s| {
                        let mut c = c.clone();
                        c.seed = s;
                        c
                    })
                })
                .collect();
        }
        for c in &mut cells {
            c.label = run_label(c);
        }
        return Ok(cells);
    }

    let base = sweep
        .base
        .clone()
        .ok_or_else(|| Error::InvalidConfig("sweep needs a [sweep.base] or preset".into()))?;
    let one = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
    let losses = if sweep.losses.is_empty() { vec![base.loss] } else { sweep.losses.clone() };
    let modes = if sweep.modes.is_empty() { vec![base.mode] } else { sweep.modes.clone() };
    let seeds = if sweep.seeds.is_empty() { vec![base.seed] } else { sweep.seeds.clone() };
    let ns = one(&sweep.n_minibatches, base.plan.n_minibatches);
    let ts = one(&sweep.updates_per_batch, base.plan.updates_per_batch);
    let ks = one(&sweep.samples_per_prompt, base.plan.samples_per_prompt);

    let mut cells = Vec::new();
    for &loss in &losses {
        for &n in &ns {
            for &t in &ts {
                for &k in &ks {
                    for &mode in &modes {
                        for &seed in &seeds {
                            let mut c = base.clone();
                            c.loss = loss;
                            c.plan.n_minibatches = n;
                            c.plan.updates_per_batch = t;
                            c.plan.samples_per_prompt = k;
                            c.mode = mode;
                            c.seed = seed;
                            if c.loss.uses_kl_shaping() {
                                c.loss_cfg.rloo_k = k;
                            }
                            c.label = run_label(&c);
                            cells.push(c);
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub loss: String,
    pub winrate: f64,
    pub kl_ppl: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<(String, String)>,
    pub out_dir: PathBuf,
}

fn worker_pool_size(cells: usize) -> usize {
    let default = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let requested = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(default);
    requested.clamp(1, cells.max(1))
}

/// Runs every cell of the sweep (bounded worker pool, size from
/// `MINIRLHF_WORKERS`), writes per-cell logs, and aggregates final points
/// into `sweep_table.csv` and the non-dominated subset into `frontier.csv`.
/// Cell failures are recorded in `failures.csv` and the sweep continues.
pub fn cmd_sweep(config_path: &Path, overrides: &Overrides) -> Result<SweepOutcome> {
    let file = ExperimentFile::load(config_path)?;
    if file.kind != ExperimentKind::Sweep {
        return Err(Error::InvalidConfig("kind must be \"sweep\" for cmd_sweep".into()));
    }
    let sweep =
        file.sweep.ok_or_else(|| Error::InvalidConfig("missing [sweep] table".into()))?;
    let mut cells = expand_sweep(&sweep)?;
    for c in &mut cells {
        apply_overrides(c, overrides);
        c.label = run_label(c);
        c.validate()?;
    }
    let out = overrides
        .out
        .clone()
        .or(file.out_dir)
        .unwrap_or_else(|| PathBuf::from("minirlhf_out"));
    run_cells(&cells, &out)
}

/// Shared sweep executor, also used directly by the examples.
pub fn run_cells(cells: &[RunConfig], out: &Path) -> Result<SweepOutcome> {
    std::fs::create_dir_all(out)?;
    let workers = worker_pool_size(cells.len());
    let queue =
        std::sync::Mutex::new((0..cells.len()).collect::<std::collections::VecDeque<_>>());
    let results: Vec<std::sync::Mutex<Option<std::result::Result<RunLog, String>>>> =
        (0..cells.len()).map(|_| std::sync::Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = match queue.lock().unwrap().pop_front() {
                    Some(i) => i,
                    None => break,
                };
                let outcome = run(&cells[idx]).map_err(|e| e.to_string());
                *results[idx].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut points = Vec::new();
    for (cell, slot) in cells.iter().zip(results.iter()) {
        let outcome = slot.lock().unwrap().take().expect("worker finished");
        match outcome {
            Ok(log) => {
                log.write(&out.join(&cell.label))?;
                if let Some(reason) = &log.summary.aborted {
                    failures.push((cell.label.clone(), reason.clone()));
                    continue;
                }
                let s = &log.summary;
                rows.push(SweepRow {
                    label: cell.label.clone(),
                    n: s.n_minibatches,
                    t: s.updates_per_batch,
                    k: s.samples_per_prompt,
                    loss: s.loss.clone(),
                    winrate: s.final_winrate,
                    kl_ppl: s.final_kl_ppl,
                    wallclock_s: s.total_wallclock_s,
                });
                points.push(EvalPoint {
                    winrate: s.final_winrate,
                    kl_ppl: s.final_kl_ppl,
                    label: cell.label.clone(),
                    episodes: s.episodes_seen,
                });
            }
            Err(e) => failures.push((cell.label.clone(), e)),
        }
    }

    write_table(&out.join("sweep_table.csv"), &rows)?;
    let frontier = pareto_frontier(&points);
    let frontier_rows: Vec<SweepRow> = rows
        .iter()
        .filter(|r| frontier.iter().any(|p| p.label == r.label))
        .cloned()
        .collect();
    write_table(&out.join("frontier.csv"), &frontier_rows)?;
    if !failures.is_empty() {
        let mut text = String::from("label,error\n");
        for (label, err) in &failures {
            text.push_str(&format!("{label},{}\n", err.replace(',', ";")));
        }
        std::fs::write(out.join("failures.csv"), text)?;
    }
    Ok(SweepOutcome { rows, failures, out_dir: out.to_path_buf() })
}

fn write_table(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut text = String::from("label,N,T,K,loss,winrate,kl_ppl,wallclock_s\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.label, r.n, r.t, r.k, r.loss, r.winrate, r.kl_ppl, r.wallclock_s
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub runs: usize,
    pub corrupt_lines: usize,
    pub throughput_pairs: usize,
    pub out_dir: PathBuf,
}

struct LoadedRun {
    summary: RunSummary,
    evals: Vec<EvalRecord>,
}

fn load_run(dir: &Path, corrupt: &mut usize) -> Option<LoadedRun> {
    let text = std::fs::read_to_string(dir.join("summary.json")).ok()?;
    let summary: RunSummary = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(_) => {
            *corrupt += 1;
            return None;
        }
    };
    let mut evals = Vec::new();
    if let Ok(file) = std::fs::File::open(dir.join("evals.jsonl")) {
        for line in std::io::BufReader::new(file).lines() {
            let Ok(line) = line else {
                *corrupt += 1;
                continue;
            };
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<EvalRecord>(&line) {
                Ok(r) => evals.push(r),
                Err(_) => *corrupt += 1,
            }
        }
    }
    Some(LoadedRun { summary, evals })
}

fn summary_only_log(summary: RunSummary) -> RunLog {
    RunLog {
        records: Vec::new(),
        losses: Vec::new(),
        staleness: Vec::new(),
        evals: Vec::new(),
        summary,
    }
}

/// Builds plot-ready series and summary tables from every run found under
/// `log_dir`: win-rate versus episodes, drift, and wall-clock, the final
/// pareto frontier, and a throughput comparison for every sync/async pair of
/// runs with matching configurations. Corrupt log lines are skipped and
/// counted.
pub fn cmd_report(log_dir: &Path, out: Option<&Path>) -> Result<ReportSummary> {
    if !log_dir.is_dir() {
        return Err(Error::InvalidConfig(format!("{} is not a directory", log_dir.display())));
    }
    let mut corrupt = 0usize;
    let mut runs = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(log_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.insert(0, log_dir.to_path_buf());
    for dir in &dirs {
        if let Some(run) = load_run(dir, &mut corrupt) {
            runs.push(run);
        }
    }
    if runs.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no run logs found under {}",
            log_dir.display()
        )));
    }

    let out = out.map(Path::to_path_buf).unwrap_or_else(|| log_dir.join("report"));
    std::fs::create_dir_all(&out)?;

    let mut by_episodes = String::from("label,episodes,winrate\n");
    let mut by_kl = String::from("label,kl_ppl,winrate\n");
    let mut by_clock = String::from("label,wallclock_s,winrate\n");
    for run in &runs {
        for e in &run.evals {
            by_episodes
                .push_str(&format!("{},{},{}\n", run.summary.label, e.episodes, e.winrate));
            by_kl.push_str(&format!("{},{},{}\n", run.summary.label, e.kl_ppl, e.winrate));
            by_clock
                .push_str(&format!("{},{},{}\n", run.summary.label, e.wallclock_s, e.winrate));
        }
    }
    std::fs::write(out.join("winrate_vs_episodes.csv"), by_episodes)?;
    std::fs::write(out.join("winrate_vs_kl.csv"), by_kl)?;
    std::fs::write(out.join("winrate_vs_wallclock.csv"), by_clock)?;

    let points: Vec<EvalPoint> = runs
        .iter()
        .filter(|r| r.summary.aborted.is_none())
        .map(|r| EvalPoint {
            winrate: r.summary.final_winrate,
            kl_ppl: r.summary.final_kl_ppl,
            label: r.summary.label.clone(),
            episodes: r.summary.episodes_seen,
        })
        .collect();
    let frontier = pareto_frontier(&points);
    let mut frontier_csv = String::from("label,winrate,kl_ppl,episodes\n");
    for p in &frontier {
        frontier_csv
            .push_str(&format!("{},{},{},{}\n", p.label, p.winrate, p.kl_ppl, p.episodes));
    }
    std::fs::write(out.join("frontier.csv"), frontier_csv)?;

    // Pair sync and async runs of the same experiment for throughput summaries.
    let key = |s: &RunSummary| {
        format!(
            "{}|{}|{}|{}|{}|{}|{}|{:?}",
            s.task,
            s.loss,
            s.n_minibatches,
            s.updates_per_batch,
            s.samples_per_prompt,
            s.minibatch_size,
            s.total_episodes,
            s.delays
        )
    };
    let mut groups: BTreeMap<String, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, r) in runs.iter().enumerate() {
        let entry = groups.entry(key(&r.summary)).or_default();
        if r.summary.mode == "sync" {
            entry.0.push(i);
        } else {
            entry.1.push(i);
        }
    }
    let mut throughput = Vec::new();
    for (_, (syncs, asyncs)) in groups {
        for &si in &syncs {
            for &ai in &asyncs {
                let sync_log = summary_only_log(runs[si].summary.clone());
                let async_log = summary_only_log(runs[ai].summary.clone());
                if let Ok(rep) = throughput_report(&sync_log, &async_log) {
                    throughput.push(serde_json::json!({
                        "sync": runs[si].summary.label,
                        "async": runs[ai].summary.label,
                        "report": rep,
                    }));
                }
            }
        }
    }
    let pairs = throughput.len();
    std::fs::write(out.join("throughput.json"), serde_json::to_string_pretty(&throughput)?)?;

    let report =
        ReportSummary { runs: runs.len(), corrupt_lines: corrupt, throughput_pairs: pairs, out_dir: out };
    std::fs::write(
        report.out_dir.join("report_summary.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

/// Named experiment presets, one per study the laboratory reproduces.
pub mod presets {
    use super::*;
    use crate::losses::LossConfig;
    use crate::policy::{LrSchedule, OptimConfig, SamplerConfig};
    use crate::runtime::{DelayConfig, EvalConfig, ModelShape, RewardSourceKind};
    use crate::scheduler::IterationPlan;
    use crate::sft::SftConfig;
    use crate::tasks::TaskSpec;

    pub const NAMES: &[&str] = &[
        "fig3_ppo",
        "fig4_losses",
        "fig7_epochs",
        "fig8_topk",
        "alg1_parity",
        "throughput_delays",
        "math_verifier",
    ];

    const SEEDS: [u64; 3] = [1, 2, 3];

    /// Shared tldr_toy base: gold-scored reward, SFT init, linear decay.
    ///
    /// The off-policy studies need the run to end while the policy is still
    /// learning, so the base uses the wide content alphabet (vocab 64) and a
    /// tight trust region; both are run-config choices, not type defaults.
    pub fn tldr_base() -> RunConfig {
        let mut task = TaskSpec::tldr_toy(11);
        task.vocab.size = 64;
        RunConfig {
            label: String::new(),
            task,
            n_prompts: 400,
            model: ModelShape::default(),
            loss: LossKind::Ppo,
            loss_cfg: LossConfig { clip_epsilon: 0.05, ..LossConfig::default() },
            plan: IterationPlan {
                n_minibatches: 1,
                updates_per_batch: 1,
                samples_per_prompt: 2,
                minibatch_size: 32,
                total_episodes: 20_480,
            },
            sampler: SamplerConfig::default(),
            optim: OptimConfig {
                learning_rate: 0.05,
                schedule: LrSchedule::Linear,
                grad_clip: Some(10.0),
            },
            reward_source: RewardSourceKind::Gold,
            eos_penalty: None,
            // Deliberately light SFT: the init should imitate references
            // imperfectly so RL has headroom, like the SFT baselines the
            // trained runs are compared against.
            sft: Some(SftConfig { steps: 400, minibatch: 16, learning_rate: 0.25, seed: 0 }),
            eval: EvalConfig { n_eval: 1024, eval_every: 320, eval_seed: 17 },
            mode: RunMode::Sync,
            seed: 1,
            model_seed: 7,
            delays: None,
        }
    }

    /// Off-policy study base (fig3/fig4): a lighter SFT init and larger
    /// mini-batches leave each generation round's data refreshed rarely
    /// enough that staleness costs show up within the episode budget.
    pub fn tldr_offpolicy_base() -> RunConfig {
        let mut base = tldr_base();
        base.plan.minibatch_size = 64;
        base.sft = Some(SftConfig { steps: 120, minibatch: 16, learning_rate: 0.2, seed: 0 });
        base
    }

    /// Verifier-scored digit addition base.
    pub fn math_base() -> RunConfig {
        let mut base = tldr_base();
        base.task = TaskSpec::math_toy(23);
        base.n_prompts = 2000;
        base.model = ModelShape { embed_dim: 16, hidden_dim: 64, window: 8 };
        base.loss = LossKind::ProximalRloo;
        base.reward_source = RewardSourceKind::Verifier;
        base.eos_penalty = Some(-1.0);
        base.plan.total_episodes = 49_920;
        base.plan.minibatch_size = 32;
        base.sft = Some(SftConfig { steps: 1200, minibatch: 16, learning_rate: 0.45, seed: 0 });
        base
    }

    fn with_n(base: &RunConfig, loss: LossKind, n: usize, seed: u64) -> RunConfig {
        let mut c = base.clone();
        c.loss = loss;
        c.plan.n_minibatches = n;
        c.seed = seed;
        c.label = run_label(&c);
        c
    }

    /// Off-policy degradation of PPO: N from fully on-policy to very
    /// off-policy, three seeds each.
    fn fig3_ppo() -> Vec<RunConfig> {
        let base = tldr_offpolicy_base();
        let mut cells = Vec::new();
        for &n in &[1usize, 2, 4, 8, 16, 32, 64] {
            for &seed in &SEEDS {
                cells.push(with_n(&base, LossKind::Ppo, n, seed));
            }
        }
        cells
    }

    /// Loss robustness comparison across off-policyness levels.
    fn fig4_losses() -> Vec<RunConfig> {
        let base = tldr_offpolicy_base();
        let mut cells = Vec::new();
        for &loss in
            &[LossKind::Ppo, LossKind::ProximalRloo, LossKind::OnlineDpo, LossKind::BestOfKSft]
        {
            for &n in &[1usize, 2, 4, 8, 16] {
                for &seed in &SEEDS {
                    cells.push(with_n(&base, loss, n, seed));
                }
            }
        }
        cells
    }

    /// Multiple updates per generated batch.
    fn fig7_epochs() -> Vec<RunConfig> {
        let base = tldr_base();
        let mut cells = Vec::new();
        for &t in &[1usize, 2, 3] {
            for &seed in &SEEDS {
                let mut c = base.clone();
                c.loss = LossKind::OnlineDpo;
                c.eval = EvalConfig { n_eval: 512, eval_every: 80, eval_seed: 17 };
                c.plan.updates_per_batch = t;
                c.seed = seed;
                c.label = run_label(&c);
                cells.push(c);
            }
        }
        cells
    }

    /// Best/worst-of-K pairing against the proxy reward model: K = 4 trains
    /// for half the steps of the K = 2 cells. Proxy scoring (rather than
    /// gold) is what gives extreme-pair selection something to overoptimize.
    fn fig8_topk() -> Vec<RunConfig> {
        let mut base = tldr_base();
        base.loss = LossKind::OnlineDpo;
        base.plan.total_episodes = 40_960;
        base.reward_source = RewardSourceKind::Proxy {
            pairs_per_prompt: 1,
            train: crate::reward::RewardTrainConfig {
                epochs: 8,
                minibatch: 32,
                learning_rate: 0.5,
                holdout_frac: 0.1,
                seed: 0,
                hidden_multiplier: 1,
            },
        };
        let mut cells = Vec::new();
        for &seed in &SEEDS {
            let mut k2 = base.clone();
            k2.seed = seed;
            k2.label = run_label(&k2);
            cells.push(k2);

            let mut k4 = base.clone();
            k4.plan.samples_per_prompt = 4;
            k4.plan.total_episodes = base.plan.total_episodes / 2;
            k4.seed = seed;
            k4.label = run_label(&k4);
            cells.push(k4);
        }
        cells
    }

    /// One-step async vs sync vs lockstep replay at matched config.
    fn alg1_parity() -> Vec<RunConfig> {
        let base = tldr_base();
        let mut cells = Vec::new();
        for &mode in &[RunMode::Sync, RunMode::Async, RunMode::AsyncLockstep] {
            for &seed in &SEEDS {
                let mut c = base.clone();
                c.loss = LossKind::OnlineDpo;
                c.mode = mode;
                c.seed = seed;
                c.label = run_label(&c);
                cells.push(c);
            }
        }
        cells
    }

    /// Injected-delay throughput harness: 233 steps at 21 ms generation and
    /// 33 ms training per step, sync vs async.
    pub fn throughput_delays() -> Vec<RunConfig> {
        let mut base = tldr_base();
        base.loss = LossKind::OnlineDpo;
        base.sft = None;
        base.n_prompts = 40;
        base.plan = IterationPlan {
            n_minibatches: 1,
            updates_per_batch: 1,
            samples_per_prompt: 2,
            minibatch_size: 2,
            total_episodes: 466, // 233 steps
        };
        base.eval = EvalConfig { n_eval: 16, eval_every: 0, eval_seed: 17 };
        base.delays = Some(DelayConfig { gen_ms: 21.0, train_ms: 33.0 });
        let mut sync = base.clone();
        sync.mode = RunMode::Sync;
        sync.label = run_label(&sync);
        let mut asynchronous = base;
        asynchronous.mode = RunMode::Async;
        asynchronous.label = run_label(&asynchronous);
        vec![sync, asynchronous]
    }

    /// Verifier-reward training, sync and async.
    fn math_verifier() -> Vec<RunConfig> {
        let base = math_base();
        let mut cells = Vec::new();
        for &mode in &[RunMode::Sync, RunMode::Async] {
            for &seed in &SEEDS {
                let mut c = base.clone();
                c.mode = mode;
                c.seed = seed;
                c.label = run_label(&c);
                cells.push(c);
            }
        }
        cells
    }

    pub fn cells(name: &str) -> Result<Vec<RunConfig>> {
        match name {
            "fig3_ppo" => Ok(fig3_ppo()),
            "fig4_losses" => Ok(fig4_losses()),
            "fig7_epochs" => Ok(fig7_epochs()),
            "fig8_topk" => Ok(fig8_topk()),
            "alg1_parity" => Ok(alg1_parity()),
            "throughput_delays" => Ok(throughput_delays()),
            "math_verifier" => Ok(math_verifier()),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset \"{other}\" (known: {})",
                NAMES.join(", ")
            ))),
        }
    }
}
