//! Experiment suites: dataset recipes, agent grids over resource sizes and seeds, and the
//! long-format `results.csv` they produce.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::plot::{bar_chart_svg, line_chart_svg, Series};
use super::{action_agreement, evaluate, mean_ci};
use crate::agents::{
    train, train_online, ActionMode, ActorCritic, AgentConfig, AgentError, Algo, EvalPoint, Filter, LearnedPolicy, SimEnv,
    TrainHooks, WarmStart,
};
use crate::dataset::{collect_rollouts, Dataset, DatasetError};
use crate::heuristics::HeuristicKind;
use crate::par::{self, derive_seed};
use crate::policy::Policy;
use crate::sim::{PowerModel, SimConfig, SimError, SCHEMA_VERSION};

pub const RESULTS_HEADER: &str = "experiment,agent,resources,seed,metric,value";
pub const CURVES_HEADER: &str = "experiment,agent,resources,seed,step,eval_value";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    BcQuality,
    OfflineVsBc,
    OnlineScaling,
    Launchpad,
    Agreement,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::BcQuality,
        ExperimentId::OfflineVsBc,
        ExperimentId::OnlineScaling,
        ExperimentId::Launchpad,
        ExperimentId::Agreement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::BcQuality => "bc_quality",
            ExperimentId::OfflineVsBc => "offline_vs_bc",
            ExperimentId::OnlineScaling => "online_scaling",
            ExperimentId::Launchpad => "launchpad",
            ExperimentId::Agreement => "agreement",
        }
    }

    /// Agent grid used when a spec lists none.
    pub fn default_agents(self) -> Vec<AgentEntry> {
        let learned = |algo: AgentKind, data: &str| AgentEntry {
            name: format!("{}_{data}", algo.name().replace('-', "_")),
            algo,
            data: Some(data.into()),
            heuristic: None,
            filter: None,
        };
        let online = || AgentEntry {
            name: "online".into(),
            algo: AgentKind::Online,
            data: None,
            heuristic: None,
            filter: None,
        };
        let heuristic = |h: HeuristicKind| AgentEntry {
            name: h.name().into(),
            algo: AgentKind::Heuristic,
            data: None,
            heuristic: Some(h),
            filter: None,
        };
        match self {
            ExperimentId::BcQuality => vec![
                heuristic(HeuristicKind::Hvf),
                heuristic(HeuristicKind::Qos),
                learned(AgentKind::Bc, "hvf"),
                learned(AgentKind::Bc, "qos"),
                learned(AgentKind::Bc, "qos_sjf"),
                learned(AgentKind::Bc, "combo"),
            ],
            ExperimentId::OfflineVsBc => vec![learned(AgentKind::Bc, "combo"), learned(AgentKind::Offline, "combo")],
            ExperimentId::OnlineScaling => vec![online(), learned(AgentKind::Bc, "qos"), learned(AgentKind::Offline, "combo")],
            ExperimentId::Launchpad => vec![learned(AgentKind::Offline, "qos"), online(), learned(AgentKind::OfflineOnline, "qos")],
            ExperimentId::Agreement => ["qos", "sjf_qos", "combo"]
                .into_iter()
                .flat_map(|d| [AgentKind::Bc, AgentKind::Offline, AgentKind::OfflineOnline].map(|a| learned(a, d)))
                .collect(),
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Bc,
    Offline,
    Online,
    OfflineOnline,
    /// A fixed heuristic, evaluated for reference.
    Heuristic,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Bc => "bc",
            AgentKind::Offline => "offline",
            AgentKind::Online => "online",
            AgentKind::OfflineOnline => "offline-online",
            AgentKind::Heuristic => "heuristic",
        }
    }

    fn algo(self) -> Option<Algo> {
        match self {
            AgentKind::Bc => Some(Algo::Bc),
            AgentKind::Offline => Some(Algo::Offline),
            AgentKind::Online => Some(Algo::Online),
            AgentKind::OfflineOnline => Some(Algo::OfflineOnline),
            AgentKind::Heuristic => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub name: String,
    pub algo: AgentKind,
    /// Dataset recipe for the agents that learn from data.
    #[serde(default)]
    pub data: Option<String>,
    #[serde(default)]
    pub heuristic: Option<HeuristicKind>,
    #[serde(default)]
    pub filter: Option<Filter>,
}

/// A named dataset: either an existing file or a mix of heuristic rollouts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecipe {
    /// File to load; `{resources}` is replaced by the resource count.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Heuristic name to fraction of the rollouts.
    #[serde(default)]
    pub mix: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSettings {
    /// Rollouts per generated dataset, split across the recipe's heuristics.
    pub rollouts: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            rollouts: 80,
            steps: 2_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub rollouts: usize,
    pub steps: usize,
    /// Rollouts per point of a training curve.
    pub curve_rollouts: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            rollouts: 10,
            steps: 2_000,
            curve_rollouts: 3,
            seed: 1_000,
        }
    }
}

fn default_resources() -> Vec<usize> {
    vec![10, 20, 50]
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub experiment: ExperimentId,
    #[serde(default = "default_resources")]
    pub resources: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetRecipe>,
    /// Base simulator config; `r_max` is replaced by each entry of `resources`.
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub agents: Vec<AgentEntry>,
}

impl ExperimentSpec {
    pub fn new(experiment: ExperimentId) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment,
            resources: default_resources(),
            seeds: default_seeds(),
            output_dir: default_output(),
            data: DataSettings::default(),
            eval: EvalSettings::default(),
            datasets: BTreeMap::new(),
            sim: SimConfig::default(),
            agent: AgentConfig::default(),
            agents: Vec::new(),
        }
    }

    /// Switches to the original large-scale setting: 100k-step rollouts, 100 resources added
    /// to the sweep, and the long training budgets.
    pub fn apply_paper_scale(&mut self) {
        self.eval.steps = 100_000;
        self.data.steps = 100_000;
        if !self.resources.contains(&100) {
            self.resources.push(100);
        }
        let base = AgentConfig::paper_scale();
        self.agent.offline_steps = base.offline_steps;
        self.agent.online_steps = base.online_steps;
        self.agent.pretrain_steps = base.pretrain_steps;
        self.agent.finetune_steps = base.finetune_steps;
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let spec: Self = toml::from_str(text).map_err(|e| ExperimentError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec file. Relative paths inside it resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut spec = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut spec.output_dir);
        for r in spec.datasets.values_mut() {
            if let Some(p) = &mut r.path {
                rebase(p);
            }
        }
        if let PowerModel::File { path, .. } = &mut spec.sim.power {
            rebase(path);
        }
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// The configured agents, or the experiment's default grid.
    pub fn agent_entries(&self) -> Vec<AgentEntry> {
        if self.agents.is_empty() {
            self.experiment.default_agents()
        } else {
            self.agents.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Spec(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.resources.is_empty() || self.resources.contains(&0) {
            return bad("resources must be a non-empty list of positive sizes".into());
        }
        if self.eval.rollouts == 0 || self.eval.steps == 0 {
            return bad("eval.rollouts and eval.steps must be positive".into());
        }
        if self.data.rollouts == 0 || self.data.steps == 0 {
            return bad("data.rollouts and data.steps must be positive".into());
        }
        self.agent.validate().map_err(|e| ExperimentError::Spec(e.to_string()))?;
        let agents = self.agent_entries();
        let mut names = std::collections::BTreeSet::new();
        for a in &agents {
            if !names.insert(a.name.as_str()) {
                return bad(format!("duplicate agent name {:?}", a.name));
            }
            if a.name.contains(',') {
                return bad(format!("agent name {:?} contains a comma", a.name));
            }
            match a.algo {
                AgentKind::Heuristic if a.heuristic.is_none() => return bad(format!("agent {:?} needs a heuristic", a.name)),
                AgentKind::Bc | AgentKind::Offline | AgentKind::OfflineOnline => {
                    let Some(d) = &a.data else {
                        return bad(format!("agent {:?} needs a dataset", a.name));
                    };
                    self.recipe(d)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Resolves a dataset name: an explicit recipe, `combo` (all four heuristics), a
    /// heuristic name, or heuristic names joined by `_` (equal shares).
    pub fn recipe(&self, name: &str) -> Result<DatasetRecipe, ExperimentError> {
        if let Some(r) = self.datasets.get(name) {
            if r.path.is_none() && r.mix.is_empty() {
                return Err(ExperimentError::Spec(format!("dataset {name:?} needs a path or a mix")));
            }
            for (h, f) in &r.mix {
                h.parse::<HeuristicKind>().map_err(ExperimentError::Spec)?;
                if !(f.is_finite() && *f > 0.0) {
                    return Err(ExperimentError::Spec(format!("dataset {name:?}: share of {h} must be positive")));
                }
            }
            return Ok(r.clone());
        }
        let parts: Vec<HeuristicKind> = if name == "combo" {
            HeuristicKind::ALL.to_vec()
        } else {
            name.split('_')
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| ExperimentError::Spec(format!("dataset {name:?}: {e}")))?
        };
        let share = 1.0 / parts.len() as f64;
        Ok(DatasetRecipe {
            path: None,
            mix: parts.into_iter().map(|h| (h.name().to_string(), share)).collect(),
        })
    }

    fn sim_for(&self, resources: usize) -> Result<SimConfig, ExperimentError> {
        let mut cfg = self.sim.clone();
        cfg.r_max = resources;
        cfg.episode_len = self.eval.steps;
        cfg.resolve_power()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One line of `results.csv`. Summary rows across seeds carry `seed = None`, written `all`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub agent: String,
    pub resources: usize,
    pub seed: Option<u64>,
    pub metric: String,
    pub value: f64,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        let seed = self.seed.map_or_else(|| "all".to_string(), |s| s.to_string());
        format!("{},{},{},{},{},{}", self.experiment, self.agent, self.resources, seed, self.metric, self.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub agent: String,
    pub resources: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
    /// Every file written, in creation order.
    pub files: Vec<PathBuf>,
}

impl ExperimentOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Default)]
struct CellResult {
    metrics: Vec<(String, f64)>,
    /// `(online step, eval value)` for agents trained online.
    curve: Vec<(usize, f64)>,
}

struct Cell<'a> {
    agent: &'a AgentEntry,
    resources: usize,
    seed: u64,
}

fn dataset_file(spec: &ExperimentSpec, name: &str, resources: usize) -> PathBuf {
    spec.output_dir.join("datasets").join(format!("{name}_r{resources}.dataset"))
}

/// Builds or loads one dataset. Component heuristics get seeds that depend only on the
/// heuristic and the resource count, so the `qos` part of `combo` replays the `qos` dataset.
fn build_dataset(spec: &ExperimentSpec, name: &str, resources: usize) -> Result<(Dataset, Option<PathBuf>), ExperimentError> {
    let recipe = spec.recipe(name)?;
    let sim = spec.sim_for(resources)?;
    if let Some(p) = &recipe.path {
        let path = PathBuf::from(p.to_string_lossy().replace("{resources}", &resources.to_string()));
        let loaded = Dataset::load(&path, Some(&sim.config_hash()))?;
        for w in &loaded.warnings {
            log::warn!("dataset {name}: {w}");
        }
        return Ok((loaded.value, None));
    }
    let mix: Vec<(HeuristicKind, f64)> = recipe.mix.iter().map(|(h, f)| (h.parse().expect("validated"), *f)).collect();
    let out = generate_mixed_dataset(&mix, &sim, spec.data.rollouts, spec.data.steps, derive_seed(spec.data.seed, resources as u64))?;
    let path = dataset_file(spec, name, resources);
    out.save(&path)?;
    Ok((out, Some(path)))
}

/// Heuristic rollouts split across `mix` by share (normalized to sum to one), concatenated
/// and shuffled. Each heuristic's rollouts depend only on `seed` and the heuristic, so the
/// same component replays identically inside different mixes.
pub fn generate_mixed_dataset(
    mix: &[(HeuristicKind, f64)],
    sim: &SimConfig,
    rollouts: usize,
    steps: usize,
    seed: u64,
) -> Result<Dataset, ExperimentError> {
    let total: f64 = mix.iter().map(|m| m.1).sum();
    if mix.is_empty() || !(total > 0.0 && total.is_finite()) || mix.iter().any(|m| !(m.1 >= 0.0)) {
        return Err(ExperimentError::Spec(format!("invalid dataset mix {mix:?}")));
    }
    let shares: Vec<f64> = mix.iter().map(|m| m.1 / total).collect();
    let counts = crate::dataset::apportion(&shares, rollouts);
    let mut out = Dataset::new(crate::sim::ObservationShape::of(sim), Some(sim.config_hash()));
    for ((k, _), n) in mix.iter().zip(counts) {
        if n > 0 {
            out.transitions.extend(collect_rollouts(k, sim, n, steps, derive_seed(seed, *k as u64))?.transitions);
        }
    }
    if mix.len() > 1 {
        out.transitions.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 99)));
    }
    Ok(out)
}

fn heuristics_in(spec: &ExperimentSpec, data: &str) -> Vec<HeuristicKind> {
    spec.recipe(data)
        .map(|r| r.mix.keys().filter_map(|h| h.parse().ok()).collect())
        .unwrap_or_default()
}

fn agent_config(spec: &ExperimentSpec, entry: &AgentEntry, seed: u64, launchpad: bool) -> AgentConfig {
    let mut cfg = spec.agent.clone();
    cfg.seed = seed;
    if let Some(f) = entry.filter {
        cfg.filter = f;
    }
    if launchpad && cfg.eval_every == 0 {
        let online = match entry.algo {
            AgentKind::OfflineOnline => cfg.finetune_steps,
            _ => cfg.online_steps,
        };
        cfg.eval_every = (online / 10).max(1);
    }
    cfg
}

fn run_cell(spec: &ExperimentSpec, data: &BTreeMap<(String, usize), Dataset>, cell: &Cell) -> Result<CellResult, String> {
    let sim = spec.sim_for(cell.resources).map_err(|e| e.to_string())?;
    let eval_seed = derive_seed(spec.eval.seed, cell.seed);
    let mut result = CellResult::default();
    let record_value = |result: &mut CellResult, policy: &dyn Policy| -> Result<(), String> {
        let report = evaluate(policy, &sim, spec.eval.rollouts, spec.eval.steps, eval_seed).map_err(|e| e.to_string())?;
        result.metrics.push(("value".into(), report.mean));
        result.metrics.push(("value_ci95".into(), report.ci95));
        Ok(())
    };
    let Some(algo) = cell.agent.algo.algo() else {
        let h = cell.agent.heuristic.expect("validated");
        record_value(&mut result, &h)?;
        return Ok(result);
    };

    let dataset = cell.agent.data.as_ref().map(|d| &data[&(d.clone(), cell.resources)]);
    let online_kind = matches!(algo, Algo::Online | Algo::OfflineOnline);
    let cfg = agent_config(spec, cell.agent, cell.seed, spec.experiment == ExperimentId::Launchpad && online_kind);
    let offset = if algo == Algo::OfflineOnline { cfg.pretrain_steps } else { 0 };
    let mut curve = Vec::new();
    let curve_seed = derive_seed(eval_seed, 1);
    let mut evaluator = |step: usize, model: &ActorCritic<f32>| -> Result<EvalPoint, AgentError> {
        if step < offset || !online_kind {
            return Ok(EvalPoint::default());
        }
        // The last pretraining step and the first online step evaluate the same weights.
        if let Some(&(last, v)) = curve.last() {
            if last == step - offset {
                return Ok(EvalPoint {
                    eval_value: Some(v),
                    agreement: None,
                });
            }
        }
        let p = LearnedPolicy::new("curve", model, ActionMode::Greedy);
        let r = evaluate(&p, &sim, spec.eval.curve_rollouts.max(1), spec.eval.steps, curve_seed)?;
        curve.push((step - offset, r.mean));
        Ok(EvalPoint {
            eval_value: Some(r.mean),
            agreement: None,
        })
    };
    let mut hooks = TrainHooks::default();
    if online_kind && cfg.eval_every > 0 {
        hooks.evaluator = Some(&mut evaluator);
    }
    let model = match algo {
        Algo::Online => {
            let mut env = SimEnv::new(&sim, derive_seed(cfg.seed, 303)).map_err(|e| e.to_string())?;
            train_online(&mut env, &cfg, WarmStart::default(), &mut hooks)
        }
        _ => train(algo, &cfg, dataset, Some(&sim), &mut hooks),
    }
    .map_err(|e| e.to_string())?;
    drop(hooks);
    result.curve = curve;

    let policy = LearnedPolicy::new(cell.agent.name.clone(), &model, ActionMode::Greedy);
    record_value(&mut result, &policy)?;
    if let Some(d) = &cell.agent.data {
        let mut best: f64 = 0.0;
        for h in heuristics_in(spec, d) {
            let a = action_agreement(&policy, h, &sim, spec.eval.rollouts, spec.eval.steps, eval_seed).map_err(|e| e.to_string())?;
            result.metrics.push((format!("agreement_{}", h.name()), a));
            best = best.max(a);
        }
        result.metrics.push(("agreement".into(), best));
    }
    Ok(result)
}

fn write_lines(path: &Path, header: &str, lines: impl IntoIterator<Item = String>) -> Result<(), ExperimentError> {
    let mut text = String::from(header);
    text.push('\n');
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Runs every (agent, resources, seed) cell of `spec`, writing `results.csv`, `curves.csv`
/// when any agent trained online, `failures.csv` when a cell failed, and SVG summaries.
/// A failing cell is recorded and the run continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome, ExperimentError> {
    spec.validate()?;
    let out_dir = &spec.output_dir;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut files = Vec::new();
    let spec_path = out_dir.join("spec.toml");
    fs::write(&spec_path, spec.to_toml_string()).map_err(io_err(&spec_path))?;
    files.push(spec_path);

    let agents = spec.agent_entries();
    let mut needed: Vec<(String, usize)> = Vec::new();
    for &r in &spec.resources {
        for a in &agents {
            if let Some(d) = &a.data {
                if !needed.contains(&(d.clone(), r)) {
                    needed.push((d.clone(), r));
                }
            }
        }
    }
    let built = par::map_slice(&needed, |(name, r)| build_dataset(spec, name, *r));
    let mut data = BTreeMap::new();
    let mut data_errors = BTreeMap::new();
    for (key, res) in needed.into_iter().zip(built) {
        match res {
            Ok((d, path)) => {
                files.extend(path);
                data.insert(key, d);
            }
            Err(e) => {
                log::error!("dataset {} at {} resources: {e}", key.0, key.1);
                data_errors.insert(key, e.to_string());
            }
        }
    }

    let cells: Vec<Cell> = spec
        .resources
        .iter()
        .flat_map(|&resources| {
            agents
                .iter()
                .flat_map(move |agent| spec.seeds.iter().map(move |&seed| Cell { agent, resources, seed }))
        })
        .collect();
    let results = par::map_slice(&cells, |cell| {
        if let Some(err) = cell.agent.data.as_ref().and_then(|d| data_errors.get(&(d.clone(), cell.resources))) {
            return Err(format!("dataset unavailable: {err}"));
        }
        log::info!("{} r={} seed={}: start", cell.agent.name, cell.resources, cell.seed);
        run_cell(spec, &data, cell)
    });

    let exp = spec.experiment.name().to_string();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut curves: Vec<(String, usize, u64, Vec<(usize, f64)>)> = Vec::new();
    for (cell, res) in cells.iter().zip(results) {
        let row = |metric: &str, value: f64| ResultRow {
            experiment: exp.clone(),
            agent: cell.agent.name.clone(),
            resources: cell.resources,
            seed: Some(cell.seed),
            metric: metric.to_string(),
            value,
        };
        match res {
            Ok(r) => {
                rows.extend(r.metrics.iter().map(|(m, v)| row(m, *v)));
                if !r.curve.is_empty() {
                    curves.push((cell.agent.name.clone(), cell.resources, cell.seed, r.curve));
                }
            }
            Err(error) => {
                log::error!("{} r={} seed={}: {error}", cell.agent.name, cell.resources, cell.seed);
                rows.push(row("failed", 1.0));
                failures.push(CellFailure {
                    agent: cell.agent.name.clone(),
                    resources: cell.resources,
                    seed: cell.seed,
                    error,
                });
            }
        }
    }
    if spec.experiment == ExperimentId::Launchpad {
        rows.extend(launchpad_rows(&exp, &agents, &rows, &curves, spec));
    }
    rows.extend(summary_rows(&rows));

    let results_path = out_dir.join("results.csv");
    write_lines(&results_path, RESULTS_HEADER, rows.iter().map(ResultRow::to_csv_line))?;
    files.push(results_path);
    if !curves.is_empty() {
        let path = out_dir.join("curves.csv");
        let exp = &exp;
        let lines = curves
            .iter()
            .flat_map(|(a, r, s, c)| c.iter().map(move |(step, v)| format!("{exp},{a},{r},{s},{step},{v}")));
        write_lines(&path, CURVES_HEADER, lines)?;
        files.push(path);
    }
    if !failures.is_empty() {
        let path = out_dir.join("failures.csv");
        let lines = failures
            .iter()
            .map(|f| format!("{},{},{},{}", f.agent, f.resources, f.seed, f.error.replace(['\n', ','], " ")));
        write_lines(&path, "agent,resources,seed,error", lines)?;
        files.push(path);
    }
    files.extend(write_plots(spec, &agents, &rows, &curves)?);
    Ok(ExperimentOutcome { rows, failures, files })
}

/// Online steps each online-trained agent needs to match the offline-only agent's value at
/// the same resources and seed. Agents that never get there within their budget report the
/// budget with `target_reached = 0`.
fn launchpad_rows(
    exp: &str,
    agents: &[AgentEntry],
    rows: &[ResultRow],
    curves: &[(String, usize, u64, Vec<(usize, f64)>)],
    spec: &ExperimentSpec,
) -> Vec<ResultRow> {
    let Some(reference) = agents.iter().find(|a| a.algo == AgentKind::Offline) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (agent, resources, seed, curve) in curves {
        let target = rows
            .iter()
            .find(|r| r.agent == reference.name && r.resources == *resources && r.seed == Some(*seed) && r.metric == "value");
        let Some(target) = target else { continue };
        let entry = agents.iter().find(|a| &a.name == agent).expect("curve of a known agent");
        let budget = match entry.algo {
            AgentKind::OfflineOnline => spec.agent.finetune_steps,
            _ => spec.agent.online_steps,
        };
        let hit = steps_to_reach(curve, target.value);
        let row = |metric: &str, value: f64| ResultRow {
            experiment: exp.to_string(),
            agent: agent.clone(),
            resources: *resources,
            seed: Some(*seed),
            metric: metric.into(),
            value,
        };
        out.push(row("target_value", target.value));
        out.push(row("steps_to_target", hit.unwrap_or(budget) as f64));
        out.push(row("target_reached", hit.is_some() as u8 as f64));
    }
    out
}

/// First online step after the start whose evaluation reaches `target`. The step-0 point is
/// excluded: a warm-started agent would otherwise "reach" its own pretrained value for free.
pub fn steps_to_reach(curve: &[(usize, f64)], target: f64) -> Option<usize> {
    curve.iter().find(|(step, v)| *step > 0 && *v >= target).map(|(s, _)| *s)
}

/// Mean and 95% half-width over seeds of every per-seed metric.
fn summary_rows(rows: &[ResultRow]) -> Vec<ResultRow> {
    let mut groups: Vec<((String, usize, String), Vec<f64>)> = Vec::new();
    for r in rows.iter().filter(|r| r.seed.is_some()) {
        let key = (r.agent.clone(), r.resources, r.metric.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.value),
            None => groups.push((key, vec![r.value])),
        }
    }
    let exp = rows.first().map(|r| r.experiment.clone()).unwrap_or_default();
    groups
        .into_iter()
        .flat_map(|((agent, resources, metric), values)| {
            let (m, ci) = mean_ci(&values);
            [("mean", m), ("ci95", ci)].map(|(suffix, value)| ResultRow {
                experiment: exp.clone(),
                agent: agent.clone(),
                resources,
                seed: None,
                metric: format!("{metric}_{suffix}"),
                value,
            })
        })
        .collect()
}

fn summary(rows: &[ResultRow], agent: &str, resources: usize, metric: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.seed.is_none() && r.agent == agent && r.resources == resources && r.metric == format!("{metric}_mean"))
        .map(|r| r.value)
}

fn write_plots(
    spec: &ExperimentSpec,
    agents: &[AgentEntry],
    rows: &[ResultRow],
    curves: &[(String, usize, u64, Vec<(usize, f64)>)],
) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut files = Vec::new();
    let mut write = |name: &str, svg: String| -> Result<(), ExperimentError> {
        let path = spec.output_dir.join(name);
        fs::write(&path, svg).map_err(io_err(&path))?;
        files.push(path);
        Ok(())
    };
    let series: Vec<Series> = agents
        .iter()
        .map(|a| Series {
            label: a.name.clone(),
            points: spec
                .resources
                .iter()
                .filter_map(|&r| summary(rows, &a.name, r, "value").map(|v| (r as f64, v)))
                .collect(),
        })
        .collect();
    write(
        "value_vs_resources.svg",
        line_chart_svg(&format!("{}: total job value", spec.experiment), "resources", "mean total job value", &series),
    )?;

    let r0 = spec.resources[0];
    let bars: Vec<(String, f64)> = agents
        .iter()
        .filter_map(|a| summary(rows, &a.name, r0, "agreement").map(|v| (a.name.clone(), v)))
        .collect();
    if !bars.is_empty() {
        write("agreement.svg", bar_chart_svg(&format!("action agreement, {r0} resources"), "agreement", &bars))?;
    }

    if !curves.is_empty() {
        let mut series = Vec::new();
        for a in agents {
            let runs: Vec<&Vec<(usize, f64)>> = curves.iter().filter(|c| c.0 == a.name && c.1 == r0).map(|c| &c.3).collect();
            if runs.is_empty() {
                continue;
            }
            let mut by_step: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for run in runs {
                for &(s, v) in run {
                    by_step.entry(s).or_default().push(v);
                }
            }
            series.push(Series {
                label: a.name.clone(),
                points: by_step.into_iter().map(|(s, v)| (s as f64, mean_ci(&v).0)).collect(),
            });
        }
        write(
            "curves.svg",
            line_chart_svg(&format!("eval value during online training, {r0} resources"), "online steps", "mean total job value", &series),
        )?;
    }
    Ok(files)
}
