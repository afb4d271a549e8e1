//! `wmdagger`: command-line front end exposing each pipeline stage and the
//! full experiment.
//!
//! Every run reads one TOML config (defaults apply when none is given),
//! honors `--seed`, `--out`, repeated `--override key=value`, and `--jobs`,
//! and writes an effective-config snapshot into the run directory. Exit
//! codes: 0 success, 1 stage failure, 2 invalid configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wmdagger_core::config::{Config, ConfigError};
use wmdagger_core::envsim::{self, Renderer};
use wmdagger_core::filtering::{filter_batch, FilterCandidate, HandcraftedEmbedder};
use wmdagger_core::harness;
use wmdagger_core::policy;
use wmdagger_core::rng::derive_seed;
use wmdagger_core::storage::{self, CheckpointKind, DatasetMeta};
use wmdagger_core::synthesis::{synthesize_batch, SynthesisConfig};
use wmdagger_core::trajectory::{Provenance, TimeStep, Trajectory};
use wmdagger_core::worldmodel::{FlowNet, FlowWm, OracleWm, Tokenizer, WorldModel};

#[derive(Parser)]
#[command(
    name = "wmdagger",
    about = "World-model recovery-data aggregation for eye-in-hand imitation learning",
    version
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory; defaults to $WMDAGGER_RUN_DIR or ./wmdagger-run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Dotted-path config override, e.g. synthesis.episodes=200 (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Cap on parallel workers.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect expert demonstrations and play data into the run directory.
    Collect {
        /// Number of demonstrations; defaults to the largest method demand.
        #[arg(long)]
        demos: Option<usize>,
    },
    /// Train the learned (rectified-flow) world model on collected data.
    TrainWm,
    /// Synthesize corrective recovery episodes through the world model.
    Synthesize,
    /// Score synthesized episodes against expert anchors and keep the
    /// above-average half.
    Filter,
    /// Train the action-chunking policy on expert plus retained data.
    TrainPolicy {
        /// Train on demonstrations only, ignoring retained synthesized data.
        #[arg(long)]
        bc_only: bool,
    },
    /// Evaluate a trained policy over seeded scenes.
    Eval,
    /// Run the full multi-method experiment and emit reports.
    Experiment,
    /// Re-emit report.csv and figures from an existing report.json.
    Report {
        /// Directory holding report.json; defaults to the run directory.
        #[arg(long)]
        from: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum AppError {
    Config(ConfigError),
    Stage(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for AppError {
    fn from(e: E) -> AppError {
        AppError::Stage(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(AppError::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, ConfigError> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("master_seed={seed}"));
    }
    match &cli.config {
        Some(path) => Config::load_with_overrides(path, &overrides),
        None => Config::from_toml_with_overrides("", &overrides),
    }
}

fn run_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("WMDAGGER_RUN_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("wmdagger-run"))
}

fn run(cli: Cli) -> Result<(), AppError> {
    let cfg = load_config(&cli).map_err(AppError::Config)?;
    #[cfg(feature = "parallel")]
    if let Some(jobs) = cli.jobs {
        // Ignore the error when a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cli.jobs;

    let out = run_dir(&cli);
    std::fs::create_dir_all(&out)
        .map_err(|e| anyhow::anyhow!("cannot create run directory {}: {e}", out.display()))?;
    std::fs::write(out.join("config.effective.toml"), cfg.to_toml_string())
        .map_err(|e| anyhow::anyhow!("cannot write effective config: {e}"))?;

    match cli.command {
        Command::Collect { demos } => collect(&cfg, &out, demos)?,
        Command::TrainWm => train_wm(&cfg, &out)?,
        Command::Synthesize => synthesize(&cfg, &out)?,
        Command::Filter => filter(&cfg, &out)?,
        Command::TrainPolicy { bc_only } => train_policy(&cfg, &out, bc_only)?,
        Command::Eval => eval(&cfg, &out)?,
        Command::Experiment => experiment(&cfg, &out)?,
        Command::Report { from } => report(&out, from)?,
    }
    Ok(())
}

fn dataset_meta(cfg: &Config) -> DatasetMeta {
    DatasetMeta {
        task: cfg.env.task.clone(),
        global_seed: cfg.master_seed,
        config_hash: cfg.hash(),
    }
}

fn collect(cfg: &Config, out: &Path, demos: Option<usize>) -> anyhow::Result<()> {
    let task = cfg.task().map_err(|e| anyhow::anyhow!("{e}"))?;
    let params = cfg.sim_params().map_err(|e| anyhow::anyhow!("{e}"))?;
    let renderer = Renderer::new(params.intrinsics, params.calib);
    let n = demos
        .or_else(|| cfg.harness.methods.iter().map(|m| m.n_demos).max())
        .unwrap_or(5);

    harness::expert_gate(
        task,
        cfg.harness.expert_gate_scenes.min(20),
        cfg.master_seed,
        &params,
        &renderer,
    )?;
    let demos = harness::collect_demos(task, n, cfg.master_seed, 0, &params, &renderer)?;
    storage::save_dataset(&demos, &out.join("datasets/demos"), &dataset_meta(cfg))?;

    let play = envsim::collect_play_data(
        cfg.harness.play_steps,
        derive_seed(cfg.master_seed, "play", 0),
        task,
        &params,
        &renderer,
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    storage::save_dataset(&play, &out.join("datasets/play"), &dataset_meta(cfg))?;
    println!(
        "collected {} demos ({} steps) and {} play episodes",
        demos.len(),
        demos.iter().map(Trajectory::len).sum::<usize>(),
        play.len()
    );
    Ok(())
}

fn load_required(dir: &Path) -> anyhow::Result<Vec<Trajectory>> {
    let (trajs, _manifest) = storage::load_dataset(dir)?;
    Ok(trajs)
}

fn flow_net_from_config(cfg: &Config) -> (Tokenizer, usize, usize) {
    let tokenizer = Tokenizer::new(cfg.wm.latent_stride);
    let res = cfg.env.resolution as usize;
    let (lh, lw) = tokenizer.latent_dims(res, res);
    (tokenizer, lh, lw)
}

fn train_wm(cfg: &Config, out: &Path) -> anyhow::Result<()> {
    let params = cfg.sim_params().map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut corpus = load_required(&out.join("datasets/demos"))?;
    corpus.extend(load_required(&out.join("datasets/play"))?);
    let (wm, report) = harness::train_flow_wm(cfg, &params, &corpus, 0)?;
    storage::save_checkpoint(
        &out.join("checkpoints/flow_wm.ckpt"),
        CheckpointKind::FlowWm,
        wm.net.config_hash(),
        &wm.net.mlp.params,
    )?;
    std::fs::write(
        out.join("flow_train.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    println!(
        "flow world model trained ({} params, converged: {})",
        wm.net.mlp.n_params(),
        report.converged
    );
    Ok(())
}

fn build_wm(cfg: &Config, out: &Path) -> anyhow::Result<Box<dyn WorldModel>> {
    let params = cfg.sim_params().map_err(|e| anyhow::anyhow!("{e}"))?;
    match cfg.wm.variant.as_str() {
        "oracle" => {
            let hallucination = cfg.wm.hallucination.to_config();
            Ok(Box::new(OracleWm::new(params, hallucination)))
        }
        "flow" => {
            let (tokenizer, lh, lw) = flow_net_from_config(cfg);
            let mut rng = wmdagger_core::rng::stream(cfg.master_seed, "flow-init", 0);
            let mut net = FlowNet::init(lh, lw, cfg.wm.history, &cfg.flow.hidden, &mut rng);
            let params_vec = storage::load_checkpoint(
                &out.join("checkpoints/flow_wm.ckpt"),
                CheckpointKind::FlowWm,
                net.config_hash(),
            )?;
            anyhow::ensure!(
                params_vec.len() == net.mlp.n_params(),
                "checkpoint parameter count mismatch"
            );
            net.mlp.params = params_vec;
            Ok(Box::new(FlowWm {
                net,
                tokenizer,
                sample_steps: cfg.wm.sample_steps,
                seed: derive_seed(cfg.master_seed, "flow-sample-seed", 0),
                intrinsics: params.intrinsics,
                calib: params.calib,
            }))
        }
        other => anyhow::bail!("wm.variant `{other}`"),
    }
}

fn synthesize(cfg: &Config, out: &Path) -> anyhow::Result<()> {
    let params = cfg.sim_params().map_err(|e| anyhow::anyhow!("{e}"))?;
    let demos = load_required(&out.join("datasets/demos"))?;
    let wm = build_wm(cfg, out)?;
    let syn_cfg = SynthesisConfig {
        deviation_horizon: cfg.synthesis.deviation_horizon,
        angular_threshold_deg: cfg.synthesis.angular_threshold_deg,
        pivot_margin: cfg.synthesis.pivot_margin.max(cfg.wm.history),
        episodes: cfg.synthesis.episodes,
        seed: derive_seed(cfg.master_seed, "synthesis", 0),
        enforce_direction: true,
    };
    let (episodes, stats) = synthesize_batch(&demos, wm.as_ref(), &syn_cfg, cfg.wm.history, &params)?;

    // Recovery trajectories feed training; terminal frames are stored
    // separately for the filtering stage and never enter a training set.
    let recoveries: Vec<Trajectory> = episodes.iter().map(|e| e.recovery.clone()).collect();
    let terminals: Vec<Trajectory> = episodes
        .iter()
        .map(|e| {
            let anchor_pose = e.recovery.steps.last().expect("k >= 1").action;
            let mut t = Trajectory::new(
                e.recovery.id,
                Provenance::Synthesized,
                vec![TimeStep {
                    observed_pose: anchor_pose,
                    action: anchor_pose,
                    frame: e.terminal_frame.clone(),
                }],
            );
            t.pivot = Some(e.pivot);
            t.source_id = Some(e.source_id);
            t
        })
        .collect();
    storage::save_dataset(&recoveries, &out.join("datasets/synthesized"), &dataset_meta(cfg))?;
    storage::save_dataset(
        &terminals,
        &out.join("datasets/synthesized_terminals"),
        &dataset_meta(cfg),
    )?;
    println!(
        "synthesized {} recovery episodes (direction acceptance {:.3}, {} failed)",
        recoveries.len(),
        stats.acceptance_rate(),
        stats.failed_episodes
    );
    Ok(())
}

fn filter(cfg: &Config, out: &Path) -> anyhow::Result<()> {
    let demos = load_required(&out.join("datasets/demos"))?;
    let recoveries = load_required(&out.join("datasets/synthesized"))?;
    let terminals = load_required(&out.join("datasets/synthesized_terminals"))?;
    anyhow::ensure!(
        recoveries.len() == terminals.len(),
        "synthesized and terminal datasets disagree"
    );
    let res = cfg.env.resolution as usize;
    let embedder = HandcraftedEmbedder::new(res, res);
    let candidates: Vec<FilterCandidate> = recoveries
        .iter()
        .zip(&terminals)
        .map(|(r, t)| {
            let demo = demos
                .iter()
                .find(|d| Some(d.id) == r.source_id)
                .ok_or_else(|| anyhow::anyhow!("source demo {:?} missing", r.source_id))?;
            Ok(FilterCandidate {
                id: r.id,
                terminal: &t.steps[0].frame,
                anchor: &demo.steps[r.pivot.unwrap() as usize].frame,
            })
        })
        .collect::<anyhow::Result<_>>()?;
    let report = filter_batch(&embedder, &candidates, &format!("{}:cli", cfg.env.task))?;
    let keep: std::collections::HashSet<u64> = report.retained.iter().copied().collect();
    let retained: Vec<Trajectory> = recoveries
        .into_iter()
        .filter(|r| keep.contains(&r.id))
        .collect();
    storage::save_dataset(&retained, &out.join("datasets/retained"), &dataset_meta(cfg))?;
    std::fs::write(
        out.join("filter_report.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    println!(
        "retained {}/{} episodes (threshold {:.4})",
        report.retained.len(),
        report.scores.len(),
        report.threshold
    );
    Ok(())
}

fn policy_cfg(cfg: &Config) -> policy::PolicyTrainConfig {
    policy::PolicyTrainConfig {
        chunk_horizon: cfg.policy.chunk_horizon,
        execution_stride: cfg.policy.execution_stride,
        obs_size: cfg.policy.obs_size,
        hidden: cfg.policy.hidden.clone(),
        activation: cfg.policy.activation,
        steps: cfg.policy.steps,
        batch_size: cfg.policy.batch_size,
        learning_rate: cfg.policy.learning_rate,
        seed: derive_seed(cfg.master_seed, "train:cli", 0),
        heldout_frac: cfg.policy.heldout_frac,
        eval_every: 200,
    }
}

fn train_policy(cfg: &Config, out: &Path, bc_only: bool) -> anyhow::Result<()> {
    let mut training = load_required(&out.join("datasets/demos"))?;
    if !bc_only {
        let retained_dir = out.join("datasets/retained");
        if retained_dir.join("manifest.json").exists() {
            training.extend(load_required(&retained_dir)?);
        }
    }
    let dataset = policy::make_chunks(&training, cfg.policy.chunk_horizon, cfg.policy.obs_size)?;
    let res = cfg.env.resolution as usize;
    let (net, report) = policy::train_policy(&dataset, &policy_cfg(cfg), res, res)?;
    storage::save_checkpoint(
        &out.join("checkpoints/policy.ckpt"),
        CheckpointKind::Policy,
        net.config_hash(),
        &net.mlp.params,
    )?;
    std::fs::write(
        out.join("policy_train.json"),
        serde_json::to_vec_pretty(&report)?,
    )?;
    println!(
        "policy trained on {} pairs ({} expert, {} synthesized); converged: {}",
        dataset.len(),
        dataset.count_by(Provenance::Expert),
        dataset.count_by(Provenance::Synthesized),
        report.converged
    );
    Ok(())
}

fn load_policy(cfg: &Config, out: &Path) -> anyhow::Result<policy::PolicyNet> {
    let res = cfg.env.resolution as usize;
    let mut rng = wmdagger_core::rng::stream(0, "policy-shape", 0);
    let mut net = policy::PolicyNet::init(&policy_cfg(cfg), res, res, &mut rng);
    let params = storage::load_checkpoint(
        &out.join("checkpoints/policy.ckpt"),
        CheckpointKind::Policy,
        net.config_hash(),
    )?;
    anyhow::ensure!(
        params.len() == net.mlp.n_params(),
        "checkpoint parameter count mismatch"
    );
    net.mlp.params = params;
    Ok(net)
}

fn eval(cfg: &Config, out: &Path) -> anyhow::Result<()> {
    let task = cfg.task().map_err(|e| anyhow::anyhow!("{e}"))?;
    let params = cfg.sim_params().map_err(|e| anyhow::anyhow!("{e}"))?;
    let net = load_policy(cfg, out)?;
    let (successes, flags) = policy::evaluate(
        &net,
        task,
        cfg.harness.eval_trials,
        derive_seed(cfg.master_seed, "eval", 0),
        cfg.harness.eval_max_steps,
        cfg.policy.execution_stride,
        &params,
    )?;
    let rate = f64::from(successes) / flags.len().max(1) as f64;
    let (lo, hi) = wmdagger_core::stats::wilson_interval(successes, flags.len() as u32);
    let record = serde_json::json!({
        "task": cfg.env.task,
        "trials": flags.len(),
        "successes": successes,
        "success_rate": rate,
        "ci95": [lo, hi],
        "outcomes": flags,
    });
    std::fs::write(out.join("eval.json"), serde_json::to_vec_pretty(&record)?)?;
    println!("success rate {successes}/{} = {rate:.3} (95% CI [{lo:.3}, {hi:.3}])", flags.len());
    Ok(())
}

fn experiment(cfg: &Config, out: &Path) -> anyhow::Result<()> {
    let report = harness::run_experiment(cfg, out)?;
    for s in &report.summaries {
        println!(
            "{}: {}/{} = {:.3} [{:.3}, {:.3}]",
            s.label, s.successes, s.trials, s.success_rate, s.ci_low, s.ci_high
        );
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn report(out: &Path, from: Option<PathBuf>) -> anyhow::Result<()> {
    let src = from.unwrap_or_else(|| out.to_path_buf()).join("report.json");
    anyhow::ensure!(src.exists(), "missing report: {}", src.display());
    let report: harness::ExperimentReport = serde_json::from_slice(&std::fs::read(&src)?)?;
    harness::emit_report(&report, out)?;
    println!("re-emitted report files into {}", out.display());
    Ok(())
}
