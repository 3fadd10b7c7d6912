//! Experiment configuration, orchestration and persistence.
//!
//! A run is a grid of cells, one per `(seed, agent)`. Each cell trains its
//! agent on the source domain and evaluates the final greedy policy on every
//! target, single-threaded; cells run in parallel on a rayon pool. All
//! randomness flows through [`StreamKey`]s, so rows depend only on the
//! config and the cell, never on scheduling.
//!
//! Output layout under `--out`:
//!
//! ```text
//! results.csv      seed,agent,env,target_param,mean_reward,std_reward,ave_subopt,est_error,thm1_bound,seconds
//! summary.json     per-(agent, target) aggregates across seeds
//! manifest.json    config echo, version, timings
//! cells/           per-cell checkpoints (sweep)
//! policies/ logs/  trained artifacts (train)
//! oracle/          value tables (oracle)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentConfig, AgentKind, BetaRecipe, ClipRule};
use crate::envs::{
    build_put_option, build_simulated_mdp, perturb_target, random_tabular_mdp, PutOptionParams, SimulatedMdpParams,
};
use crate::error::{Error, Result};
use crate::oracle::{
    average_suboptimality, estimation_error_increment, monte_carlo_return, robust_policy_evaluation,
    robust_value_iteration, rollout, regret_bound_rhs, value_iteration, EpisodeRecord, RobustValueTable, RunLog,
    StepRecord,
};
use crate::rng::{RunKind, StreamKey};
use crate::types::{FiniteMdp, LinearMdpSpec, UncertaintyLevels};

pub const CSV_HEADER: [&str; 10] = [
    "seed",
    "agent",
    "env",
    "target_param",
    "mean_reward",
    "std_reward",
    "ave_subopt",
    "est_error",
    "thm1_bound",
    "seconds",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatedConfig {
    pub delta: f64,
    /// Equal coordinates summing to this value; ignored when `xi` is given.
    pub xi_norm: f64,
    pub xi: Option<[f64; 4]>,
    pub p: f64,
}

impl Default for SimulatedConfig {
    fn default() -> Self {
        Self { delta: 0.3, xi_norm: 0.1, xi: None, p: 0.001 }
    }
}

impl SimulatedConfig {
    pub fn params(&self) -> SimulatedMdpParams {
        match self.xi {
            Some(xi) => SimulatedMdpParams { delta: self.delta, xi, p: self.p },
            None => SimulatedMdpParams::with_xi_norm(self.delta, self.xi_norm, self.p),
        }
    }
}

/// Tabular targets mix every factor toward the uniform distribution:
/// `(1 - q) μ + q · uniform`, at TV distance at most `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularConfig {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub instance_seed: u64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self { states: 4, actions: 3, horizon: 3, instance_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvConfig {
    Simulated(SimulatedConfig),
    PutOption(PutOptionParams),
    Tabular(TabularConfig),
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Simulated(_) => "simulated",
            EnvConfig::PutOption(_) => "put_option",
            EnvConfig::Tabular(_) => "tabular",
        }
    }
}

/// Uncertainty levels as written in a config. Sparse entries use 1-based
/// `[step, factor, rho]` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoConfig {
    Uniform(f64),
    Sparse(Vec<(usize, usize, f64)>),
    Matrix(Vec<Vec<f64>>),
}

impl Default for RhoConfig {
    fn default() -> Self {
        RhoConfig::Uniform(0.0)
    }
}

impl RhoConfig {
    pub fn resolve(&self, horizon: usize, dim: usize) -> Result<UncertaintyLevels> {
        let levels = match self {
            RhoConfig::Uniform(r) => UncertaintyLevels::homogeneous(horizon, dim, *r),
            RhoConfig::Sparse(entries) => {
                let mut zero_based = Vec::with_capacity(entries.len());
                for &(h, i, r) in entries {
                    if h == 0 || i == 0 {
                        return Err(Error::Config("sparse rho entries are 1-based".into()));
                    }
                    zero_based.push((h - 1, i - 1, r));
                }
                UncertaintyLevels::sparse(horizon, dim, &zero_based)
            }
            RhoConfig::Matrix(rows) => {
                if rows.len() != horizon || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::Config(format!("rho matrix must be {horizon}x{dim}")));
                }
                UncertaintyLevels::new(rows.clone())
            }
        };
        levels.map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentBlock {
    pub beta: BetaRecipe,
    pub lambda: f64,
    pub rho: RhoConfig,
    pub baseline_clip: ClipRule,
}

impl Default for AgentBlock {
    fn default() -> Self {
        Self { beta: BetaRecipe::default(), lambda: 1.0, rho: RhoConfig::default(), baseline_clip: ClipRule::default() }
    }
}

fn default_agents() -> Vec<AgentKind> {
    vec![AgentKind::Robust, AgentKind::Nominal]
}

fn default_eval_episodes() -> usize {
    100
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: AgentBlock,
    #[serde(default = "default_agents")]
    pub agents: Vec<AgentKind>,
    /// Training episodes K.
    pub episodes: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// `q` values for the simulated and tabular environments, `p_u` values
    /// for the put option.
    #[serde(default)]
    pub targets: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub master_seed: u64,
    /// Fills the `seconds` column; off by default since timings are not reproducible.
    #[serde(default)]
    pub record_wall_clock: bool,
    /// Evaluates every executed policy with the robust oracle (needed for AveSubopt).
    #[serde(default = "default_true")]
    pub track_robust_values: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes (K) must be at least 1".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.agents.is_empty() {
            return Err(Error::Config("agent list is empty".into()));
        }
        if !(self.agent.lambda > 0.0 && self.agent.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda = {} must be positive", self.agent.lambda)));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seed list contains duplicates".into()));
        }
        match &self.env {
            EnvConfig::Simulated(c) => {
                c.params().check()?;
                check_range(&self.targets, "q", |q| (0.0..=1.0).contains(&q))?;
            }
            EnvConfig::PutOption(p) => {
                p.check()?;
                check_range(&self.targets, "p_u", |q| q > 0.0 && q < 1.0)?;
            }
            EnvConfig::Tabular(t) => {
                if t.states == 0 || t.actions == 0 || t.horizon == 0 {
                    return Err(Error::Config("tabular sizes must be positive".into()));
                }
                check_range(&self.targets, "q", |q| (0.0..=1.0).contains(&q))?;
            }
        }
        let env = Environment::build(&self.env, self.master_seed)?;
        self.agent.rho.resolve(env.source.horizon, env.source.dim())?;
        self.agent.beta.resolve(env.source.dim(), env.source.horizon, self.episodes)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Result<Self> {
        self.seeds = seeds;
        self.validate()?;
        Ok(self)
    }
}

fn check_range(values: &[f64], name: &str, ok: impl Fn(f64) -> bool) -> Result<()> {
    for &v in values {
        if !v.is_finite() || !ok(v) {
            return Err(Error::Config(format!("target {name} = {v} out of range")));
        }
    }
    Ok(())
}

/// A built environment: the explicit source MDP, its factored form when the
/// environment is a true linear MDP, and a recipe for targets.
#[derive(Debug, Clone)]
pub struct Environment {
    pub config: EnvConfig,
    pub source: FiniteMdp,
    pub source_spec: Option<LinearMdpSpec>,
}

impl Environment {
    pub fn build(config: &EnvConfig, master_seed: u64) -> Result<Self> {
        let (source, source_spec) = match config {
            EnvConfig::Simulated(c) => {
                let spec = build_simulated_mdp(&c.params())?;
                (spec.to_finite(), Some(spec))
            }
            EnvConfig::PutOption(p) => (build_put_option(p)?.mdp, None),
            EnvConfig::Tabular(t) => {
                let mut rng = StreamKey::new(master_seed, RunKind::Generate, t.instance_seed, 0, 0).rng();
                let spec = random_tabular_mdp(t.states, t.actions, t.horizon, &mut rng)?;
                (spec.to_finite(), Some(spec))
            }
        };
        Ok(Self { config: config.clone(), source, source_spec })
    }

    pub fn name(&self) -> &'static str {
        self.config.name()
    }

    /// Target domain for one sweep value, with its factored form when available.
    pub fn target(&self, param: f64) -> Result<(FiniteMdp, Option<LinearMdpSpec>)> {
        match &self.config {
            EnvConfig::Simulated(_) => {
                let spec = perturb_target(self.source_spec.as_ref().expect("simulated spec"), param)?;
                Ok((spec.to_finite(), Some(spec)))
            }
            EnvConfig::PutOption(p) => {
                let put = build_put_option(&PutOptionParams { p_up: param, ..*p })?;
                Ok((put.mdp, None))
            }
            EnvConfig::Tabular(_) => {
                let mut spec = self.source_spec.clone().expect("tabular spec");
                let n = spec.num_states() as f64;
                for step in spec.mu.iter_mut() {
                    for dist in step.iter_mut() {
                        for m in dist.iter_mut() {
                            *m = (1.0 - param) * *m + param / n;
                        }
                    }
                }
                Ok((spec.to_finite(), Some(spec)))
            }
        }
    }
}

/// Everything a cell learns on the source domain.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub kind: AgentKind,
    pub seed: u64,
    pub beta: f64,
    pub policy: Vec<Vec<usize>>,
    pub log: RunLog,
    pub est_error: f64,
    pub ave_subopt: Option<f64>,
    pub thm1_bound: Option<f64>,
    pub seconds: f64,
}

pub fn agent_config(cfg: &ExperimentConfig, env: &Environment, kind: AgentKind) -> Result<AgentConfig> {
    let (hz, d) = (env.source.horizon, env.source.dim());
    let beta = cfg.agent.beta.resolve(d, hz, cfg.episodes)?;
    let rho = match kind {
        AgentKind::Robust => cfg.agent.rho.resolve(hz, d)?,
        AgentKind::Nominal => UncertaintyLevels::zeros(hz, d),
    };
    Ok(AgentConfig { kind, beta, lambda: cfg.agent.lambda, rho, baseline_clip: cfg.agent.baseline_clip })
}

/// Runs `K` episodes of plan / act / observe on the source domain.
pub fn train(cfg: &ExperimentConfig, env: &Environment, kind: AgentKind, seed: u64) -> Result<TrainOutcome> {
    let start = Instant::now();
    let acfg = agent_config(cfg, env, kind)?;
    let beta = acfg.beta;
    let rho = acfg.rho.clone();
    let mut agent = Agent::new(acfg, &env.source)?;

    let spec = if cfg.track_robust_values { env.source_spec.as_ref() } else { None };
    let oracle = spec.map(|s| robust_value_iteration(s, &rho)).transpose()?;

    let mut log = RunLog::default();
    for k in 0..cfg.episodes {
        let params = agent.plan()?;
        let episode = rollout(
            &env.source,
            |h, s| params.act(h, s),
            |step| StreamKey::new(cfg.master_seed, RunKind::Train, seed, k as u64, step as u64).rng(),
        );
        let bonus_sum = estimation_error_increment(agent.grams(), &episode);
        let initial_state = episode[0].state;
        let robust_value = match spec {
            Some(s) => Some(robust_policy_evaluation(s, &params.greedy_policy(), &rho)?[0][initial_state]),
            None => None,
        };
        for t in &episode {
            agent.observe(t)?;
        }
        log.episodes.push(EpisodeRecord {
            episode: k + 1,
            initial_state,
            trajectory: episode
                .iter()
                .map(|t| StepRecord { state: t.state, action: t.action, reward: t.reward })
                .collect(),
            realized_return: episode.iter().map(|t| t.reward).sum(),
            bonus_sum,
            robust_value,
        });
    }
    let policy = agent.plan()?.greedy_policy();
    let est_error = log.estimation_error();
    let ave_subopt = oracle.as_ref().map(|o| average_suboptimality(&log, o)).transpose()?;
    let thm1_bound = match (kind, cfg.agent.beta.confidence()) {
        (AgentKind::Robust, Some(p)) if env.source.certifiable() => {
            Some(regret_bound_rhs(cfg.episodes, env.source.horizon, p, beta, est_error))
        }
        _ => None,
    };
    Ok(TrainOutcome {
        kind,
        seed,
        beta,
        policy,
        log,
        est_error,
        ave_subopt,
        thm1_bound,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub agent: String,
    pub env: String,
    pub target_param: f64,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub ave_subopt: Option<f64>,
    pub est_error: f64,
    pub thm1_bound: Option<f64>,
    pub seconds: Option<f64>,
}

/// Monte Carlo evaluation of a policy on every target. Evaluation streams
/// depend on the seed and target but not on the agent, so agents are
/// compared on common random numbers.
pub fn evaluate(
    cfg: &ExperimentConfig,
    env: &Environment,
    outcome: &TrainOutcome,
) -> Result<Vec<ResultRow>> {
    cfg.targets
        .iter()
        .enumerate()
        .map(|(ti, &param)| {
            let start = Instant::now();
            let (target, _) = env.target(param)?;
            if target.num_states != outcome.policy.first().map_or(0, |r| r.len()) {
                return Err(Error::Coverage(format!(
                    "policy covers {} states, target has {}",
                    outcome.policy.first().map_or(0, |r| r.len()),
                    target.num_states
                )));
            }
            let (mean, std) = monte_carlo_return(&target, &outcome.policy, cfg.eval_episodes, |e, step| {
                StreamKey::new(cfg.master_seed, RunKind::Evaluate, outcome.seed, ((ti as u64) << 32) | e, step).rng()
            })?;
            let seconds = cfg.record_wall_clock.then(|| start.elapsed().as_secs_f64() + outcome.seconds);
            Ok(ResultRow {
                seed: outcome.seed,
                agent: outcome.kind.as_str().to_string(),
                env: env.name().to_string(),
                target_param: param,
                mean_reward: mean,
                std_reward: std,
                ave_subopt: outcome.ave_subopt,
                est_error: outcome.est_error,
                thm1_bound: outcome.thm1_bound,
                seconds,
            })
        })
        .collect()
}

/// Aggregate of one `(agent, target)` pair across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub agent: String,
    pub target_param: f64,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// Per-agent statistics over the target sweep of the per-target means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub agent: String,
    pub std_across_targets: f64,
    pub worst_case: f64,
    pub best_case: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub env: String,
    pub aggregates: Vec<Aggregate>,
    pub curves: Vec<CurveStats>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

pub fn summarize(env: &str, agents: &[AgentKind], targets: &[f64], rows: &[ResultRow]) -> Summary {
    let mut aggregates = Vec::new();
    let mut curves = Vec::new();
    for kind in agents {
        let name = kind.as_str();
        let mut means = Vec::new();
        for &t in targets {
            let xs: Vec<f64> =
                rows.iter().filter(|r| r.agent == name && r.target_param == t).map(|r| r.mean_reward).collect();
            if xs.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&xs);
            means.push(mean);
            aggregates.push(Aggregate { agent: name.to_string(), target_param: t, n: xs.len(), mean, std });
        }
        if !means.is_empty() {
            let (_, std) = mean_std(&means);
            curves.push(CurveStats {
                agent: name.to_string(),
                std_across_targets: std,
                worst_case: means.iter().copied().fold(f64::INFINITY, f64::min),
                best_case: means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    Summary { env: env.to_string(), aggregates, curves }
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::InvalidInput(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Numerical(format!("thread pool: {e}")))
}

fn cells(cfg: &ExperimentConfig) -> Vec<(u64, AgentKind)> {
    cfg.seeds.iter().flat_map(|&s| cfg.agents.iter().map(move |&k| (s, k))).collect()
}

fn cell_name(seed: u64, kind: AgentKind) -> String {
    format!("seed{seed}_{}.json", kind.as_str())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellCheckpoint {
    fingerprint: String,
    seed: u64,
    agent: AgentKind,
    beta: f64,
    seconds: f64,
    rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellTiming {
    seed: u64,
    agent: AgentKind,
    seconds: f64,
    resumed: bool,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a ExperimentConfig,
    jobs: Option<usize>,
    started_unix: u64,
    finished_unix: u64,
    wall_seconds: f64,
    cells: Vec<CellTiming>,
}

fn fingerprint(cfg: &ExperimentConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.seeds.clear();
    Ok(serde_json::to_string(&c)?)
}

fn write_manifest(out: &Path, command: &str, cfg: &ExperimentConfig, jobs: Option<usize>, started: (u64, Instant), cells: Vec<CellTiming>) -> Result<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        jobs,
        started_unix: started.0,
        finished_unix: unix_now(),
        wall_seconds: started.1.elapsed().as_secs_f64(),
        cells,
    };
    write_atomic(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

/// What a sweep produced.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
}

/// Train and evaluate every `(seed, agent)` cell, reusing checkpoints from
/// an interrupted run with the same config.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, jobs: Option<usize>) -> Result<SweepOutput> {
    let started = (unix_now(), Instant::now());
    let env = Environment::build(&cfg.env, cfg.master_seed)?;
    let print = fingerprint(cfg)?;
    let cell_dir = out.join("cells");
    fs::create_dir_all(&cell_dir)?;

    let results: Vec<(CellCheckpoint, bool)> = pool(jobs)?.install(|| {
        cells(cfg)
            .into_par_iter()
            .map(|(seed, kind)| {
                let path = cell_dir.join(cell_name(seed, kind));
                if let Ok(text) = fs::read_to_string(&path) {
                    if let Ok(cp) = serde_json::from_str::<CellCheckpoint>(&text) {
                        if cp.fingerprint == print && cp.seed == seed && cp.agent == kind {
                            return Ok((cp, true));
                        }
                    }
                }
                let outcome = train(cfg, &env, kind, seed)?;
                let rows = evaluate(cfg, &env, &outcome)?;
                let cp = CellCheckpoint {
                    fingerprint: print.clone(),
                    seed,
                    agent: kind,
                    beta: outcome.beta,
                    seconds: outcome.seconds,
                    rows,
                };
                write_atomic(&path, serde_json::to_string(&cp)?.as_bytes())?;
                Ok((cp, false))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let rows: Vec<ResultRow> = results.iter().flat_map(|(cp, _)| cp.rows.iter().cloned()).collect();
    write_atomic(&out.join("results.csv"), &rows_to_csv(&rows)?)?;
    let summary = summarize(env.name(), &cfg.agents, &cfg.targets, &rows);
    write_atomic(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let timings = results
        .iter()
        .map(|(cp, resumed)| CellTiming { seed: cp.seed, agent: cp.agent, seconds: cp.seconds, resumed: *resumed })
        .collect();
    write_manifest(out, "sweep", cfg, jobs, started, timings)?;
    Ok(SweepOutput { rows, summary })
}

/// Persisted result of `train` for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArtifact {
    pub seed: u64,
    pub agent: AgentKind,
    pub env: String,
    pub beta: f64,
    pub est_error: f64,
    pub ave_subopt: Option<f64>,
    pub thm1_bound: Option<f64>,
    /// `policy[h][s]` is the action id taken at step `h` in state `s`.
    pub policy: Vec<Vec<usize>>,
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, jobs: Option<usize>) -> Result<Vec<PolicyArtifact>> {
    let started = (unix_now(), Instant::now());
    let env = Environment::build(&cfg.env, cfg.master_seed)?;
    let outcomes: Vec<TrainOutcome> = pool(jobs)?.install(|| {
        cells(cfg).into_par_iter().map(|(seed, kind)| train(cfg, &env, kind, seed)).collect::<Result<Vec<_>>>()
    })?;
    let mut artifacts = Vec::new();
    let mut timings = Vec::new();
    for o in outcomes {
        let name = cell_name(o.seed, o.kind);
        let artifact = PolicyArtifact {
            seed: o.seed,
            agent: o.kind,
            env: env.name().to_string(),
            beta: o.beta,
            est_error: o.est_error,
            ave_subopt: o.ave_subopt,
            thm1_bound: o.thm1_bound,
            policy: o.policy,
        };
        write_atomic(&out.join("policies").join(&name), serde_json::to_string(&artifact)?.as_bytes())?;
        write_atomic(&out.join("logs").join(&name), serde_json::to_string(&o.log)?.as_bytes())?;
        timings.push(CellTiming { seed: o.seed, agent: o.kind, seconds: o.seconds, resumed: false });
        artifacts.push(artifact);
    }
    write_manifest(out, "train", cfg, jobs, started, timings)?;
    Ok(artifacts)
}

/// Evaluates the policies written by [`cmd_train`] on the target sweep.
pub fn cmd_evaluate(cfg: &ExperimentConfig, out: &Path, jobs: Option<usize>) -> Result<Vec<ResultRow>> {
    let started = (unix_now(), Instant::now());
    let env = Environment::build(&cfg.env, cfg.master_seed)?;
    let rows: Vec<Vec<ResultRow>> = pool(jobs)?.install(|| {
        cells(cfg)
            .into_par_iter()
            .map(|(seed, kind)| {
                let path = out.join("policies").join(cell_name(seed, kind));
                let text = fs::read_to_string(&path).map_err(|e| {
                    Error::MissingOracle(format!("no trained policy at {} ({e}); run train first", path.display()))
                })?;
                let art: PolicyArtifact = serde_json::from_str(&text)?;
                if art.env != env.name() {
                    return Err(Error::Coverage(format!("policy trained on {}, config targets {}", art.env, env.name())));
                }
                let outcome = TrainOutcome {
                    kind,
                    seed,
                    beta: art.beta,
                    policy: art.policy,
                    log: RunLog::default(),
                    est_error: art.est_error,
                    ave_subopt: art.ave_subopt,
                    thm1_bound: art.thm1_bound,
                    seconds: 0.0,
                };
                evaluate(cfg, &env, &outcome)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<ResultRow> = rows.into_iter().flatten().collect();
    write_atomic(&out.join("results.csv"), &rows_to_csv(&rows)?)?;
    write_manifest(out, "evaluate", cfg, jobs, started, Vec::new())?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDocument {
    /// `None` for the source domain.
    pub target_param: Option<f64>,
    /// `E_{s_1}[V_1(s_1)]`.
    pub initial_value: f64,
    pub table: RobustValueTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleIndexEntry {
    pub file: String,
    pub target_param: Option<f64>,
    pub robust: bool,
    pub initial_value: f64,
    /// Optimal first-step actions of the support states of the initial distribution.
    pub first_actions: Vec<usize>,
}

/// Exact value tables: robust (with the config's `rho`) and nominal for the
/// source, nominal for each target. The put option gets nominal tables only.
pub fn cmd_oracle(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<OracleIndexEntry>> {
    let started = (unix_now(), Instant::now());
    let env = Environment::build(&cfg.env, cfg.master_seed)?;
    let dir = out.join("oracle");
    let mut index = Vec::new();
    let mut emit = |file: String, target: Option<f64>, robust: bool, mdp: &FiniteMdp, table: RobustValueTable| -> Result<()> {
        let doc = OracleDocument { target_param: target, initial_value: table.initial_value(&mdp.initial), table };
        write_atomic(&dir.join(&file), serde_json::to_string(&doc)?.as_bytes())?;
        index.push(OracleIndexEntry {
            file,
            target_param: target,
            robust,
            initial_value: doc.initial_value,
            first_actions: mdp.initial.iter().map(|&(s, _)| doc.table.policy[0][s]).collect(),
        });
        Ok(())
    };

    if let Some(spec) = &env.source_spec {
        let rho = cfg.agent.rho.resolve(spec.horizon, spec.dim())?;
        emit("source_robust.json".into(), None, true, &env.source, robust_value_iteration(spec, &rho)?)?;
    }
    emit("source_nominal.json".into(), None, false, &env.source, value_iteration(&env.source))?;
    for (i, &param) in cfg.targets.iter().enumerate() {
        let (mdp, _) = env.target(param)?;
        emit(format!("target_{i:03}.json"), Some(param), false, &mdp, value_iteration(&mdp))?;
    }
    write_atomic(&dir.join("index.json"), serde_json::to_string_pretty(&index)?.as_bytes())?;
    write_manifest(out, "oracle", cfg, None, started, Vec::new())?;
    Ok(index)
}

/// Groups rows by agent name, preserving order.
pub fn rows_by_agent(rows: &[ResultRow]) -> BTreeMap<String, Vec<&ResultRow>> {
    let mut map: BTreeMap<String, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        map.entry(r.agent.clone()).or_default().push(r);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "env": {"name": "simulated", "delta": 0.3, "xi_norm": 0.1, "p": 0.001},
                "agent": {"beta": 0.1, "rho": {"sparse": [[1, 4, 0.5]]}},
                "episodes": 5,
                "eval_episodes": 10,
                "targets": [0.0, 0.5],
                "seeds": [1, 2]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn config_parsing_and_defaults() {
        let cfg = small();
        assert_eq!(cfg.agents, vec![AgentKind::Robust, AgentKind::Nominal]);
        assert_eq!(cfg.agent.lambda, 1.0);
        let rho = cfg.agent.rho.resolve(3, 4).unwrap();
        assert_eq!(rho.get(0, 3), 0.5);
        assert_eq!(rho.rows().iter().flatten().filter(|&&r| r != 0.0).count(), 1);
        let theo: ExperimentConfig = ExperimentConfig::from_json(
            r#"{"env": {"name": "tabular"}, "agent": {"beta": {"c": 1.0, "p": 0.05}}, "episodes": 3}"#,
        )
        .unwrap();
        assert_eq!(theo.agent.beta, BetaRecipe::Theoretical { c: 1.0, p: 0.05 });
        assert_eq!(theo.seeds.len(), 10);
    }

    #[test]
    fn config_rejections() {
        let bad = [
            r#"{"env": {"name": "simulated"}, "episodes": 0}"#,
            r#"{"env": {"name": "simulated"}, "episodes": 3, "seeds": []}"#,
            r#"{"env": {"name": "simulated"}, "episodes": 3, "targets": [1.5]}"#,
            r#"{"env": {"name": "put_option"}, "episodes": 3, "targets": [1.0]}"#,
            r#"{"env": {"name": "simulated"}, "episodes": 3, "agent": {"rho": {"sparse": [[0, 4, 0.5]]}}}"#,
            r#"{"env": {"name": "simulated"}, "episodes": 3, "agent": {"rho": {"uniform": 2.0}}}"#,
            r#"{"env": {"name": "simulated"}, "episodes": 3, "bogus": 1}"#,
            r#"{"env": {"name": "moon"}, "episodes": 3}"#,
        ];
        for text in bad {
            let err = ExperimentConfig::from_json(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }

    #[test]
    fn training_log_bookkeeping() {
        let cfg = small();
        let env = Environment::build(&cfg.env, 0).unwrap();
        let o = train(&cfg, &env, AgentKind::Robust, 1).unwrap();
        assert_eq!(o.log.len(), 5);
        assert!(o.log.episodes.iter().all(|e| e.trajectory.len() == 3 && e.robust_value.is_some()));
        assert!(o.ave_subopt.unwrap() >= -1e-10);
        // constant β has no confidence level, so no bound is certified
        assert!(o.thm1_bound.is_none());
        assert!((o.est_error - o.log.estimation_error()).abs() < 1e-15);
        assert!((o.log.episodes[0].bonus_sum - 3.0).abs() < 1e-12);
        let rows = evaluate(&cfg, &env, &o).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].seconds, None);
    }

    #[test]
    fn csv_roundtrip_and_header() {
        let rows = vec![ResultRow {
            seed: 3,
            agent: "robust".into(),
            env: "simulated".into(),
            target_param: 0.1,
            mean_reward: 1.25,
            std_reward: 0.5,
            ave_subopt: None,
            est_error: 2.0,
            thm1_bound: Some(4.5),
            seconds: None,
        }];
        let bytes = rows_to_csv(&rows).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("seed,agent,env,target_param,mean_reward,std_reward,ave_subopt,est_error,thm1_bound,seconds\n"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        fs::write(&path, bytes).unwrap();
        assert_eq!(read_results(&path).unwrap(), rows);
    }

    #[test]
    fn summary_statistics() {
        let row = |agent: &str, t: f64, m: f64| ResultRow {
            seed: 0,
            agent: agent.into(),
            env: "e".into(),
            target_param: t,
            mean_reward: m,
            std_reward: 0.0,
            ave_subopt: None,
            est_error: 0.0,
            thm1_bound: None,
            seconds: None,
        };
        let rows = vec![row("robust", 0.0, 1.0), row("robust", 0.0, 3.0), row("robust", 1.0, 2.0)];
        let s = summarize("e", &[AgentKind::Robust, AgentKind::Nominal], &[0.0, 1.0], &rows);
        assert_eq!(s.aggregates.len(), 2);
        assert_eq!(s.aggregates[0].n, 2);
        assert_eq!(s.aggregates[0].mean, 2.0);
        assert!((s.aggregates[0].std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.aggregates[1].std, 0.0);
        assert_eq!(s.curves.len(), 1);
        assert_eq!(s.curves[0].worst_case, 2.0);
        assert_eq!(s.curves[0].std_across_targets, 0.0);
    }

    #[test]
    fn tabular_targets_stay_within_radius() {
        let env = Environment::build(&EnvConfig::Tabular(TabularConfig::default()), 0).unwrap();
        let (_, spec) = env.target(0.3).unwrap();
        let spec = spec.unwrap();
        assert!(spec.validate().is_ok());
        let src = env.source_spec.as_ref().unwrap();
        for h in 0..3 {
            for i in 0..spec.dim() {
                let tv: f64 = 0.5 * spec.mu[h][i].iter().zip(&src.mu[h][i]).map(|(a, b)| (a - b).abs()).sum::<f64>();
                assert!(tv <= 0.3 + 1e-12);
            }
        }
    }
}
