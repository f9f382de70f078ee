use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use greenlaunch::agents::{
    train, ActionMode, ActorCritic, AgentConfig, Algo, CheckpointMeta, EvalPoint, Filter, LearnedPolicy, Telemetry, TrainHooks,
};
use greenlaunch::dataset::Dataset;
use greenlaunch::eval::{action_agreement, evaluate, generate_mixed_dataset, run_experiment, ExperimentSpec};
use greenlaunch::heuristics::HeuristicKind;
use greenlaunch::par;
use greenlaunch::policy::{NoOpPolicy, Policy, RandomPolicy};
use greenlaunch::sim::{ObservationShape, SimConfig, SCHEMA_VERSION};

const THREADS_VAR: &str = "GREENLAUNCH_THREADS";

#[derive(Parser)]
#[command(name = "greenlaunch", version, about = "Green-datacenter job scheduling: data generation, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out heuristics and save their transitions as a dataset.
    GenerateData(GenerateArgs),
    /// Train an agent and save a checkpoint.
    Train(TrainArgs),
    /// Mean total job value of a checkpoint or a fixed policy.
    Evaluate(EvaluateArgs),
    /// Fraction of steps where a checkpoint picks the heuristic's action.
    Agreement(AgreementArgs),
    /// Run an experiment suite from a spec file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimArgs {
    /// Config file with a `[sim]` table (and optionally `[agent]`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of resources; overrides the config file.
    #[arg(long)]
    resources: Option<usize>,
}

impl SimArgs {
    fn load(&self) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(p) => SimConfig::load(p)?,
            None => SimConfig::with_resources(self.resources.unwrap_or(10)),
        };
        if let Some(r) = self.resources {
            cfg.r_max = r;
        }
        cfg.resolve_power()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Heuristic name, several joined by commas for an equal mix, or `combo` for all four.
    #[arg(long)]
    policy: String,
    #[arg(long, default_value_t = 80)]
    rollouts: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterArg {
    Uniform,
    Binary,
    Exp,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_algo)]
    algo: Algo,
    /// Advantage filter; behavior cloning always uses `uniform`.
    #[arg(long, value_enum)]
    filter: Option<FilterArg>,
    /// Temperature of the `exp` filter.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Weight cap of the `exp` filter.
    #[arg(long, default_value_t = 20.0)]
    w_max: f64,
    /// Dataset file; required by every algorithm except `online`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Gradient steps of the main phase (offline steps, online steps, or fine-tuning steps).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Telemetry CSV.
    #[arg(long)]
    telemetry: Option<PathBuf>,
    /// Directory for periodic checkpoints.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Evaluate the greedy policy every N steps (recorded in telemetry).
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long, default_value_t = 3)]
    eval_rollouts: usize,
    /// Use the step budgets of the original large-scale runs.
    #[arg(long)]
    paper_scale: bool,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint to evaluate greedily.
    #[arg(long, conflicts_with = "policy", required_unless_present = "policy")]
    checkpoint: Option<PathBuf>,
    /// Fixed policy instead of a checkpoint: a heuristic name, `random` or `noop`.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long, default_value_t = 10)]
    rollouts: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also measure agreement with these heuristics (comma separated).
    #[arg(long, value_delimiter = ',')]
    agreement_with: Vec<HeuristicKind>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct AgreementArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Reference heuristics (comma separated); all four by default.
    #[arg(long, value_delimiter = ',')]
    heuristic: Vec<HeuristicKind>,
    #[arg(long, default_value_t = 10)]
    rollouts: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the spec's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// 100k-step rollouts, a 100-resource run and the long training budgets.
    #[arg(long)]
    paper_scale: bool,
}

fn parse_algo(s: &str) -> Result<Algo, String> {
    s.parse()
}

/// Failure classes, mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Partial(usize),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

#[derive(Deserialize)]
struct AgentFile {
    schema_version: u32,
    #[serde(default)]
    agent: Option<AgentConfig>,
}

fn agent_config(path: Option<&Path>) -> Result<AgentConfig> {
    let Some(path) = path else {
        return Ok(AgentConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: AgentFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if file.schema_version != SCHEMA_VERSION {
        bail!("{}: unsupported schema_version {} (expected {SCHEMA_VERSION})", path.display(), file.schema_version);
    }
    Ok(file.agent.unwrap_or_default())
}

fn parse_mix(policy: &str) -> Result<Vec<(HeuristicKind, f64)>> {
    let kinds: Vec<HeuristicKind> = if policy == "combo" {
        HeuristicKind::ALL.to_vec()
    } else {
        policy.split(',').map(|p| p.trim().parse().map_err(|e: String| anyhow!(e))).collect::<Result<_>>()?
    };
    Ok(kinds.into_iter().map(|k| (k, 1.0)).collect())
}

fn load_checkpoint(path: &Path, sim: &SimConfig) -> Result<ActorCritic<f32>> {
    let loaded = ActorCritic::<f32>::load(path, Some(ObservationShape::of(sim)), Some(&sim.config_hash()))
        .with_context(|| format!("loading {}", path.display()))?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    Ok(loaded.value.0)
}

fn generate(args: GenerateArgs) -> Result<()> {
    let sim = args.sim.load()?;
    let mix = parse_mix(&args.policy)?;
    let data = generate_mixed_dataset(&mix, &sim, args.rollouts, args.steps, args.seed)?;
    data.save(&args.out)?;
    log::info!("wrote {} transitions to {}", data.len(), args.out.display());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let sim = args.sim.load()?;
    let mut cfg = agent_config(args.sim.config.as_deref())?;
    if args.paper_scale {
        let p = AgentConfig::paper_scale();
        cfg.offline_steps = p.offline_steps;
        cfg.online_steps = p.online_steps;
        cfg.pretrain_steps = p.pretrain_steps;
        cfg.finetune_steps = p.finetune_steps;
    }
    if let Some(f) = args.filter {
        cfg.filter = match f {
            FilterArg::Uniform => Filter::Uniform,
            FilterArg::Binary => Filter::Binary,
            FilterArg::Exp => Filter::Exp {
                beta: args.beta,
                w_max: args.w_max,
            },
        };
        if args.algo == Algo::Bc && cfg.filter != Filter::Uniform {
            log::warn!("behavior cloning ignores --filter and weights every sample equally");
        }
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.steps {
        match args.algo {
            Algo::Bc | Algo::Offline => cfg.offline_steps = n,
            Algo::Online => cfg.online_steps = n,
            Algo::OfflineOnline => cfg.finetune_steps = n,
        }
    }
    if let Some(e) = args.eval_every {
        cfg.eval_every = e;
    }
    cfg.validate()?;

    let data = match &args.data {
        Some(p) => {
            let loaded = Dataset::load(p, Some(&sim.config_hash())).with_context(|| format!("loading {}", p.display()))?;
            for w in &loaded.warnings {
                log::warn!("{w}");
            }
            Some(loaded.value)
        }
        None if args.algo.needs_dataset() => bail!("--algo {} needs --data", args.algo),
        None => None,
    };

    let mut telemetry = match &args.telemetry {
        Some(p) => Telemetry::to_file(p)?,
        None => Telemetry::in_memory(),
    };
    let (rollouts, steps) = (args.eval_rollouts.max(1), sim.episode_len);
    let mut evaluator = |_: usize, model: &ActorCritic<f32>| {
        let policy = LearnedPolicy::new("eval", model, ActionMode::Greedy);
        let r = evaluate(&policy, &sim, rollouts, steps, cfg.seed)?;
        Ok(EvalPoint {
            eval_value: Some(r.mean),
            agreement: None,
        })
    };
    let mut hooks = TrainHooks {
        telemetry: Some(&mut telemetry),
        checkpoint_dir: args.checkpoint_dir.clone(),
        meta: CheckpointMeta {
            config_hash: Some(sim.config_hash()),
            agent: Some(cfg.clone()),
        },
        ..Default::default()
    };
    if cfg.eval_every > 0 {
        hooks.evaluator = Some(&mut evaluator);
    }
    let model = train(args.algo, &cfg, data.as_ref(), Some(&sim), &mut hooks)?;
    drop(hooks);
    model.save(
        &args.out,
        &CheckpointMeta {
            config_hash: Some(sim.config_hash()),
            agent: Some(cfg.clone()),
        },
    )?;
    log::info!("trained {} for {} updates, checkpoint at {}", args.algo, model.steps(), args.out.display());
    Ok(())
}

fn fixed_policy(name: &str) -> Result<Box<dyn Policy>> {
    Ok(match name {
        "random" => Box::new(RandomPolicy),
        "noop" => Box::new(NoOpPolicy),
        h => Box::new(h.parse::<HeuristicKind>().map_err(|e| anyhow!("{e} (or random, noop)"))?),
    })
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let sim = args.sim.load()?;
    let model;
    let policy: Box<dyn Policy + '_> = match (&args.checkpoint, &args.policy) {
        (Some(p), _) => {
            model = load_checkpoint(p, &sim)?;
            Box::new(LearnedPolicy::new(p.display().to_string(), &model, ActionMode::Greedy))
        }
        (None, Some(name)) => fixed_policy(name)?,
        (None, None) => bail!("give --checkpoint or --policy"),
    };
    let mut report = evaluate(policy.as_ref(), &sim, args.rollouts, args.steps, args.seed)?;
    for h in &args.agreement_with {
        let a = action_agreement(policy.as_ref(), *h, &sim, args.rollouts, args.steps, args.seed)?;
        report.agreement.insert(h.name().to_string(), a);
    }
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(p) => std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    log::info!("{}: mean total job value {:.1} +- {:.1}", policy.name(), report.mean, report.ci95);
    Ok(())
}

fn agreement_cmd(args: AgreementArgs) -> Result<()> {
    let sim = args.sim.load()?;
    let model = load_checkpoint(&args.checkpoint, &sim)?;
    let policy = LearnedPolicy::new("checkpoint", &model, ActionMode::Greedy);
    let heuristics = if args.heuristic.is_empty() {
        HeuristicKind::ALL.to_vec()
    } else {
        args.heuristic.clone()
    };
    println!("heuristic,agreement");
    for h in heuristics {
        let a = action_agreement(&policy, h, &sim, args.rollouts, args.steps, args.seed)?;
        println!("{},{a}", h.name());
    }
    Ok(())
}

fn experiment_cmd(args: ExperimentArgs) -> Result<(), Failure> {
    let mut spec = ExperimentSpec::load(&args.spec).with_context(|| format!("loading {}", args.spec.display()))?;
    if let Some(d) = args.output_dir {
        spec.output_dir = d;
    }
    if args.paper_scale {
        spec.apply_paper_scale();
    }
    let outcome = run_experiment(&spec).map_err(anyhow::Error::from)?;
    log::info!("{} rows written to {}", outcome.rows.len(), spec.output_dir.join("results.csv").display());
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        for f in &outcome.failures {
            log::error!("cell {} r={} seed={} failed: {}", f.agent, f.resources, f.seed, f.error);
        }
        Err(Failure::Partial(outcome.failures.len()))
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| anyhow!("{THREADS_VAR} must be a positive integer, got {v:?}"))?;
    if !par::init_threads(n) && par::is_parallel() {
        log::warn!("worker pool already initialized; {THREADS_VAR} ignored");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    match cli.command {
        Command::GenerateData(a) => generate(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Evaluate(a) => evaluate_cmd(a)?,
        Command::Agreement(a) => agreement_cmd(a)?,
        Command::Experiment(a) => experiment_cmd(a)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Partial(n)) => {
            eprintln!("error: {n} experiment cell(s) failed; see failures.csv");
            ExitCode::from(2)
        }
    }
}
