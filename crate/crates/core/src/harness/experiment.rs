//! Plan-driven pipeline: train, build the catalog, profile, evaluate every
//! method, then write artifacts and tables.

use std::error::Error as StdError;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::report::{
    emit_heatmap, emit_table, improvement_pct, mean_std, HeatmapCell, HeatmapGrid, ReportError,
    ResultTable, ENSEMBLE_METHOD,
};
use crate::agents::{save_agent, train_q_learning, AgentConfig, TrainedAgent};
use crate::combiners::{CombinerKind, CombinerOptions};
use crate::gateway::LlmGateway;
use crate::mdp::{lookup, EnvSpec};
use crate::profile::{profile_agent, RewardDistribution, SegmentRecord};
use crate::runtime::{
    run_combiner_episode, run_llm_ens_episode, run_single_agent_episode, CategorizerKind,
    EnsembleConfig, OnCategorizerFailure, RunResult, RuntimeError,
};
use crate::situations::{
    generate_situations, oracle_catalog, CategorizerConfig, LlmCategorizer, OracleCategorizer,
    SituationCatalog, SituationId, TemplateOptions,
};

pub const RESULTS_FORMAT_VERSION: u32 = 1;
pub const PLAN_FILE: &str = "plan.json";
pub const RESULTS_FILE: &str = "results.json";
pub const CATALOG_FILE: &str = "catalog.json";
/// Training-seed offset between rounds when agents are retrained per evaluation seed.
pub const RETRAIN_SEED_STRIDE: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Plan,
    Train,
    Situations,
    Profile,
    Evaluate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Plan => "plan",
            Stage::Train => "train",
            Stage::Situations => "situations",
            Stage::Profile => "profile",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn StdError + Send + Sync>,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn at<E: Into<Box<dyn StdError + Send + Sync>>>(stage: Stage) -> impl FnOnce(E) -> ExperimentError {
    move |e| ExperimentError::Stage {
        stage,
        source: e.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    BestSingle,
    LlmEns,
    Combiner(CombinerKind),
}

impl Method {
    pub fn all() -> Vec<Method> {
        let mut methods = vec![Method::BestSingle, Method::LlmEns];
        methods.extend(CombinerKind::ALL.iter().map(|k| Method::Combiner(*k)));
        methods
    }

    pub fn token(self) -> &'static str {
        match self {
            Method::BestSingle => "best-single",
            Method::LlmEns => ENSEMBLE_METHOD,
            Method::Combiner(kind) => kind.token(),
        }
    }

    pub fn is_ensemble(self) -> bool {
        !matches!(self, Method::BestSingle)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "best-single" => Ok(Method::BestSingle),
            ENSEMBLE_METHOD => Ok(Method::LlmEns),
            other => other
                .parse()
                .map(Method::Combiner)
                .map_err(|_| format!("unknown method `{other}`")),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Method> for String {
    fn from(method: Method) -> Self {
        method.token().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    LearningRate,
    TrainingEpisodes,
}

impl SweepParameter {
    fn token(self) -> &'static str {
        match self {
            SweepParameter::LearningRate => "learning_rate",
            SweepParameter::TrainingEpisodes => "training_episodes",
        }
    }

    fn apply(self, base: &AgentConfig, value: f64) -> AgentConfig {
        let mut config = base.clone();
        match self {
            SweepParameter::LearningRate => config.learning_rate = value,
            SweepParameter::TrainingEpisodes => config.training_episodes = value as u32,
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

fn default_eval_episodes() -> u32 {
    5
}

fn default_k() -> u32 {
    30
}

fn default_profile_episodes() -> u32 {
    5
}

fn default_profile_seed_base() -> u64 {
    100_000
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub env_name: String,
    /// FourRoomsForage hazard switch; the registered default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hazard: Option<bool>,
    #[serde(default)]
    pub agent_seeds: Vec<u64>,
    /// Hand-built agents that always play the given action, used instead of
    /// trained agents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_action_agents: Option<Vec<usize>>,
    #[serde(default)]
    pub agent_config: AgentConfig,
    /// Heatmap mode: two agents per value, one LLM-Ens cell per value pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_hyperparam_grid: Option<SweepPlan>,
    pub methods: Vec<Method>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: u32,
    #[serde(default)]
    pub eval_seed_base: u64,
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default)]
    pub categorizer: CategorizerKind,
    #[serde(default = "default_profile_episodes")]
    pub profile_episodes: u32,
    #[serde(default = "default_profile_seed_base")]
    pub profile_seed_base: u64,
    #[serde(default = "default_temperature")]
    pub combiner_temperature: f64,
    #[serde(default)]
    pub sample_addition: bool,
    #[serde(default)]
    pub on_categorizer_failure: OnCategorizerFailure,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_situation: Option<SituationId>,
    /// Pre-built catalog for the LLM categorizer; generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub retrain_per_seed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentPlan {
    pub fn new(env_name: &str, agent_seeds: Vec<u64>, methods: Vec<Method>) -> Self {
        ExperimentPlan {
            env_name: env_name.to_string(),
            hazard: None,
            agent_seeds,
            fixed_action_agents: None,
            agent_config: AgentConfig::default(),
            agent_hyperparam_grid: None,
            methods,
            eval_episodes: default_eval_episodes(),
            eval_seed_base: 0,
            k: default_k(),
            categorizer: CategorizerKind::Oracle,
            profile_episodes: default_profile_episodes(),
            profile_seed_base: default_profile_seed_base(),
            combiner_temperature: default_temperature(),
            sample_addition: false,
            on_categorizer_failure: OnCategorizerFailure::Abort,
            fallback_situation: None,
            catalog: None,
            retrain_per_seed: false,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::InvalidPlan(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn spec(&self) -> Result<EnvSpec, ExperimentError> {
        let spec =
            lookup(&self.env_name).map_err(|e| ExperimentError::InvalidPlan(e.to_string()))?;
        Ok(match self.hazard {
            Some(h) => spec.with_hazard(h),
            None => spec,
        })
    }

    fn agent_count(&self) -> usize {
        match &self.fixed_action_agents {
            Some(actions) => actions.len(),
            None => self.agent_seeds.len(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::InvalidPlan(msg));
        let spec = self.spec()?;
        self.agent_config
            .validate()
            .map_err(|e| ExperimentError::InvalidPlan(e.to_string()))?;
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1".into());
        }
        if !(self.combiner_temperature > 0.0 && self.combiner_temperature.is_finite()) {
            return bad("combiner_temperature must be positive".into());
        }
        if self.catalog.is_some() && self.categorizer == CategorizerKind::Oracle {
            return bad("a catalog file applies only to the llm categorizer".into());
        }
        if let Some(actions) = &self.fixed_action_agents {
            if let Some(a) = actions.iter().find(|a| **a >= spec.action_count) {
                return bad(format!(
                    "fixed action {a} out of range for {} actions",
                    spec.action_count
                ));
            }
        }
        if let Some(grid) = &self.agent_hyperparam_grid {
            if self.fixed_action_agents.is_some() {
                return bad("heatmap mode trains its own agents".into());
            }
            if self.agent_seeds.len() < 2 {
                return bad("heatmap mode needs two agent seeds".into());
            }
            if grid.values.is_empty() {
                return bad("heatmap grid has no values".into());
            }
            for &v in &grid.values {
                let config = grid.parameter.apply(&self.agent_config, v);
                let integral = grid.parameter != SweepParameter::TrainingEpisodes
                    || (v >= 1.0 && v.fract() == 0.0);
                if !integral || config.validate().is_err() {
                    return bad(format!(
                        "{} value {v} is not usable",
                        grid.parameter.token()
                    ));
                }
            }
            return Ok(());
        }
        if self.methods.is_empty() {
            return bad("no methods".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return bad(format!("method `{m}` listed twice"));
            }
        }
        if self.agent_count() == 0 {
            return bad("no agents".into());
        }
        if self.methods.iter().any(|m| m.is_ensemble()) && self.agent_count() < 2 {
            return bad("ensemble methods need at least two agents".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub returns: Vec<f64>,
    pub trace_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleResult {
    pub agent_id: String,
    pub mean: f64,
    pub trace_file: String,
}

/// Agents and profile of one training round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub agents: Vec<String>,
    pub profile_file: String,
    pub eval_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCellSource {
    pub x: f64,
    pub y: f64,
    pub agents: Vec<String>,
    pub trace_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRecord {
    pub grid: HeatmapGrid,
    pub cells: Vec<HeatmapCellSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub format_version: u32,
    pub env_name: String,
    pub k: u32,
    pub catalog_hash: String,
    pub rounds: Vec<RoundRecord>,
    /// Per-agent greedy evaluations; in retrain mode one entry per agent
    /// slot, named by its first-round agent.
    pub singles: Vec<SingleResult>,
    pub best_single_agent: Option<String>,
    pub rows: Vec<MethodResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<HeatmapRecord>,
}

impl ExperimentResults {
    pub fn table(&self, methods: &[String]) -> ResultTable {
        let mut table = ResultTable::new(methods.to_vec());
        for row in &self.rows {
            table.insert(
                &self.env_name,
                &row.method,
                super::report::Summary {
                    mean: row.mean,
                    std: row.std,
                    n: row.n,
                },
            );
        }
        table
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub table: ResultTable,
    pub heatmap: Option<HeatmapGrid>,
    pub results: ExperimentResults,
    pub output_dir: PathBuf,
}

struct Writer {
    root: PathBuf,
}

impl Writer {
    fn new(root: &Path) -> Result<Self, ExperimentError> {
        fs::create_dir_all(root).map_err(|source| ExperimentError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Writer {
            root: root.to_path_buf(),
        })
    }

    fn write(&self, relative: &str, text: &str) -> Result<(), ExperimentError> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| ExperimentError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(&path, text).map_err(|source| ExperimentError::Io { path, source })
    }

    fn write_runs(&self, relative: &str, runs: &[RunResult]) -> Result<(), ExperimentError> {
        self.write(relative, &runs_to_jsonl(runs))
    }
}

pub fn runs_to_jsonl(runs: &[RunResult]) -> String {
    let mut out = String::new();
    for run in runs {
        out.push_str(&serde_json::to_string(run).expect("run serializes"));
        out.push('\n');
    }
    out
}

pub fn runs_from_jsonl(text: &str) -> Result<Vec<RunResult>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

fn fixed_agent_id(spec: &EnvSpec, action: usize) -> String {
    format!("always-{}", spec.action_names[action].to_lowercase())
}

fn train_all(
    spec: &EnvSpec,
    jobs: &[(String, AgentConfig, u64)],
) -> Result<Vec<TrainedAgent>, ExperimentError> {
    jobs.par_iter()
        .map(|(id, config, seed)| {
            let mut agent = train_q_learning(spec, config, *seed)?;
            agent.agent_id = id.clone();
            Ok(agent)
        })
        .collect::<Result<Vec<_>, crate::agents::AgentError>>()
        .map_err(at(Stage::Train))
}

struct Context<'a> {
    plan: &'a ExperimentPlan,
    spec: EnvSpec,
    catalog: SituationCatalog,
    gateway: Option<&'a LlmGateway>,
    writer: Writer,
}

impl Context<'_> {
    fn categorizer_config(&self) -> CategorizerConfig {
        CategorizerConfig {
            cadence: self.plan.k,
            fallback_situation: self.plan.fallback_situation,
        }
    }

    fn llm_categorizer(&self) -> Result<LlmCategorizer<'_>, ExperimentError> {
        let gateway = self.gateway.ok_or_else(|| {
            ExperimentError::InvalidPlan("the llm categorizer needs a gateway".into())
        })?;
        LlmCategorizer::new(
            gateway,
            &self.spec,
            self.catalog.clone(),
            self.plan.fallback_situation,
            TemplateOptions::default(),
        )
        .map_err(at(Stage::Profile))
    }

    fn profile(&self, agents: &[TrainedAgent]) -> Result<RewardDistribution, ExperimentError> {
        let config = self.categorizer_config();
        let (episodes, seed) = (self.plan.profile_episodes, self.plan.profile_seed_base);
        let records: Vec<Vec<SegmentRecord>> = match self.plan.categorizer {
            CategorizerKind::Oracle => agents
                .par_iter()
                .map(|a| {
                    profile_agent(
                        a,
                        &self.spec,
                        &mut OracleCategorizer,
                        &config,
                        episodes,
                        seed,
                    )
                })
                .collect::<Result<_, _>>()
                .map_err(at(Stage::Profile))?,
            CategorizerKind::Llm => {
                let mut categorizer = self.llm_categorizer()?;
                agents
                    .iter()
                    .map(|a| {
                        profile_agent(a, &self.spec, &mut categorizer, &config, episodes, seed)
                    })
                    .collect::<Result<_, _>>()
                    .map_err(at(Stage::Profile))?
            }
        };
        Ok(RewardDistribution::from_records(records.iter().flatten()))
    }

    fn run_ensemble(
        &self,
        agents: &[TrainedAgent],
        dist: &RewardDistribution,
        seeds: &[u64],
    ) -> Result<Vec<RunResult>, RuntimeError> {
        let config = |seed| EnsembleConfig {
            cadence: self.plan.k,
            categorizer: self.plan.categorizer,
            combiner_temperature: self.plan.combiner_temperature,
            rng_seed: seed,
            on_failure: self.plan.on_categorizer_failure,
        };
        match self.plan.categorizer {
            CategorizerKind::Oracle => seeds
                .par_iter()
                .map(|&s| {
                    run_llm_ens_episode(
                        agents,
                        dist,
                        &mut OracleCategorizer,
                        &self.spec,
                        &config(s),
                    )
                })
                .collect(),
            CategorizerKind::Llm => {
                let mut categorizer = self
                    .llm_categorizer()
                    .map_err(|e| RuntimeError::InvalidConfig(e.to_string()))?;
                seeds
                    .iter()
                    .map(|&s| {
                        run_llm_ens_episode(agents, dist, &mut categorizer, &self.spec, &config(s))
                    })
                    .collect()
            }
        }
    }

    fn run_combiner(
        &self,
        agents: &[TrainedAgent],
        kind: CombinerKind,
        seeds: &[u64],
    ) -> Result<Vec<RunResult>, RuntimeError> {
        let options = CombinerOptions {
            sample_addition: self.plan.sample_addition,
        };
        seeds
            .par_iter()
            .map(|&s| {
                run_combiner_episode(
                    agents,
                    kind,
                    options,
                    &self.spec,
                    s,
                    self.plan.combiner_temperature,
                )
            })
            .collect()
    }

    fn run_singles(
        &self,
        agents: &[TrainedAgent],
        seeds: &[u64],
    ) -> Result<Vec<Vec<RunResult>>, RuntimeError> {
        agents
            .par_iter()
            .map(|a| {
                seeds
                    .iter()
                    .map(|&s| run_single_agent_episode(a, &self.spec, s))
                    .collect()
            })
            .collect()
    }

    fn save_agents(&self, agents: &[TrainedAgent]) -> Result<(), ExperimentError> {
        for agent in agents {
            self.writer.write(
                &format!("agents/{}.json", agent.agent_id),
                &save_agent(agent),
            )?;
        }
        Ok(())
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn returns(runs: &[RunResult]) -> Vec<f64> {
    runs.iter().map(|r| r.episode_return).collect()
}

/// Highest mean wins; ties go to the lexicographically smallest id.
pub fn pick_best_single(singles: &[SingleResult]) -> Option<&SingleResult> {
    singles
        .iter()
        .fold(None, |best: Option<&SingleResult>, s| match best {
            Some(b) if s.mean < b.mean || (s.mean == b.mean && s.agent_id >= b.agent_id) => Some(b),
            _ => Some(s),
        })
}

fn load_catalog(
    plan: &ExperimentPlan,
    spec: &EnvSpec,
    gateway: Option<&LlmGateway>,
) -> Result<SituationCatalog, ExperimentError> {
    let catalog = match (plan.categorizer, &plan.catalog) {
        (CategorizerKind::Oracle, _) => oracle_catalog(spec),
        (CategorizerKind::Llm, Some(path)) => {
            let text = fs::read_to_string(path).map_err(at(Stage::Situations))?;
            SituationCatalog::from_json(&text).map_err(at(Stage::Situations))?
        }
        (CategorizerKind::Llm, None) => {
            let gateway = gateway.ok_or_else(|| {
                ExperimentError::InvalidPlan("the llm categorizer needs a gateway".into())
            })?;
            generate_situations(gateway, spec).map_err(at(Stage::Situations))?
        }
    };
    if catalog.env_name != spec.name {
        return Err(at(Stage::Situations)(format!(
            "catalog is for `{}`, not `{}`",
            catalog.env_name, spec.name
        )));
    }
    Ok(catalog)
}

/// Runs `plan` end to end, writing every artifact under its output dir.
pub fn run_experiment(
    plan: &ExperimentPlan,
    gateway: Option<&LlmGateway>,
) -> Result<ExperimentOutcome, ExperimentError> {
    plan.validate()?;
    let output_dir = plan
        .output_dir
        .clone()
        .ok_or_else(|| ExperimentError::InvalidPlan("no output_dir".into()))?;
    let spec = plan.spec()?;
    let writer = Writer::new(&output_dir)?;
    let mut plan_copy = plan.clone();
    plan_copy.output_dir = None;
    writer.write(PLAN_FILE, &plan_copy.to_json())?;

    let catalog = load_catalog(plan, &spec, gateway)?;
    writer.write(CATALOG_FILE, &catalog.to_json())?;
    let ctx = Context {
        plan,
        spec,
        catalog,
        gateway,
        writer,
    };

    let (results, table, heatmap) = match &plan.agent_hyperparam_grid {
        Some(grid) => {
            let (results, heatmap) = run_heatmap(&ctx, grid)?;
            (results, None, Some(heatmap))
        }
        None => {
            let results = run_methods(&ctx)?;
            let table = results.table(
                &plan
                    .methods
                    .iter()
                    .map(|m| m.token().to_string())
                    .collect::<Vec<_>>(),
            );
            (results, Some(table), None)
        }
    };
    ctx.writer.write(
        RESULTS_FILE,
        &serde_json::to_string_pretty(&results).expect("results serialize"),
    )?;
    let report_err = |e: ReportError| at(Stage::Report)(e);
    if let Some(table) = &table {
        emit_table(table, &output_dir).map_err(report_err)?;
    }
    if let Some(grid) = &heatmap {
        emit_heatmap(grid, &output_dir).map_err(report_err)?;
    }
    Ok(ExperimentOutcome {
        table: table.unwrap_or_default(),
        heatmap,
        results,
        output_dir,
    })
}

fn round_agents(ctx: &Context<'_>, round: u64) -> Result<Vec<TrainedAgent>, ExperimentError> {
    let plan = ctx.plan;
    if let Some(actions) = &plan.fixed_action_agents {
        return Ok(actions
            .iter()
            .map(|&a| TrainedAgent::fixed_action(fixed_agent_id(&ctx.spec, a), &ctx.spec, a))
            .collect());
    }
    let jobs: Vec<(String, AgentConfig, u64)> = plan
        .agent_seeds
        .iter()
        .map(|s| {
            let seed = s.wrapping_add(round * RETRAIN_SEED_STRIDE);
            (format!("q-seed{seed}"), plan.agent_config.clone(), seed)
        })
        .collect();
    train_all(&ctx.spec, &jobs)
}

fn run_methods(ctx: &Context<'_>) -> Result<ExperimentResults, ExperimentError> {
    let plan = ctx.plan;
    let all_seeds: Vec<u64> = (0..plan.eval_episodes)
        .map(|e| plan.eval_seed_base.wrapping_add(u64::from(e)))
        .collect();
    let schedule: Vec<(u64, Vec<u64>)> = if plan.retrain_per_seed {
        all_seeds
            .iter()
            .enumerate()
            .map(|(r, s)| (r as u64, vec![*s]))
            .collect()
    } else {
        vec![(0, all_seeds)]
    };

    let mut rounds = Vec::new();
    let mut method_runs: Vec<Vec<RunResult>> = vec![Vec::new(); plan.methods.len()];
    let mut slot_ids: Vec<String> = Vec::new();
    let mut slot_runs: Vec<Vec<RunResult>> = Vec::new();
    for (round, seeds) in &schedule {
        let agents = round_agents(ctx, *round)?;
        ctx.save_agents(&agents)?;
        let dist = ctx.profile(&agents)?;
        let profile_file = if plan.retrain_per_seed {
            format!("profiles/round-{round}.json")
        } else {
            "profile.json".into()
        };
        ctx.writer
            .write(&profile_file, &dist.to_json(&ctx.catalog.content_hash()))?;
        rounds.push(RoundRecord {
            agents: agents.iter().map(|a| a.agent_id.clone()).collect(),
            profile_file,
            eval_seeds: seeds.clone(),
        });

        let singles = ctx
            .run_singles(&agents, seeds)
            .map_err(at(Stage::Evaluate))?;
        if slot_ids.is_empty() {
            slot_ids = agents.iter().map(|a| a.agent_id.clone()).collect();
            slot_runs = vec![Vec::new(); agents.len()];
        }
        for (slot, runs) in slot_runs.iter_mut().zip(singles) {
            slot.extend(runs);
        }
        for (method, sink) in plan.methods.iter().zip(method_runs.iter_mut()) {
            let runs = match method {
                Method::BestSingle => continue,
                Method::LlmEns => ctx.run_ensemble(&agents, &dist, seeds),
                Method::Combiner(kind) => ctx.run_combiner(&agents, *kind, seeds),
            };
            sink.extend(runs.map_err(at(Stage::Evaluate))?);
        }
    }

    let mut singles = Vec::new();
    for (id, runs) in slot_ids.iter().zip(&slot_runs) {
        let trace_file = format!("traces/single-{id}.jsonl");
        ctx.writer.write_runs(&trace_file, runs)?;
        singles.push(SingleResult {
            agent_id: id.clone(),
            mean: mean(&returns(runs)),
            trace_file,
        });
    }
    let best = pick_best_single(&singles).map(|s| s.agent_id.clone());
    let mut rows = Vec::new();
    for (method, mut runs) in plan.methods.iter().zip(method_runs) {
        if *method == Method::BestSingle {
            let slot = slot_ids
                .iter()
                .position(|id| Some(id) == best.as_ref())
                .expect("best slot exists");
            runs = slot_runs[slot].clone();
        }
        let trace_file = format!("traces/{}.jsonl", method.token());
        ctx.writer.write_runs(&trace_file, &runs)?;
        let values = returns(&runs);
        let summary = mean_std(&values).map_err(at(Stage::Report))?;
        rows.push(MethodResult {
            method: method.token().to_string(),
            mean: summary.mean,
            std: summary.std,
            n: summary.n,
            returns: values,
            trace_file,
        });
    }
    Ok(ExperimentResults {
        format_version: RESULTS_FORMAT_VERSION,
        env_name: plan.env_name.clone(),
        k: plan.k,
        catalog_hash: ctx.catalog.content_hash(),
        rounds,
        singles,
        best_single_agent: best,
        rows,
        heatmap: None,
    })
}

fn run_heatmap(
    ctx: &Context<'_>,
    grid: &SweepPlan,
) -> Result<(ExperimentResults, HeatmapGrid), ExperimentError> {
    let plan = ctx.plan;
    let seeds: Vec<u64> = (0..plan.eval_episodes)
        .map(|e| plan.eval_seed_base.wrapping_add(u64::from(e)))
        .collect();
    let name = grid.parameter.token();
    let mut jobs = Vec::new();
    for &value in &grid.values {
        for &seed in &plan.agent_seeds[..2] {
            jobs.push((
                format!("{name}-{value}-seed{seed}"),
                grid.parameter.apply(&plan.agent_config, value),
                seed,
            ));
        }
    }
    let agents = train_all(&ctx.spec, &jobs)?;
    ctx.save_agents(&agents)?;
    let dist = ctx.profile(&agents)?;
    ctx.writer
        .write("profile.json", &dist.to_json(&ctx.catalog.content_hash()))?;

    let single_runs = ctx
        .run_singles(&agents, &seeds)
        .map_err(at(Stage::Evaluate))?;
    let mut singles = Vec::new();
    for (agent, runs) in agents.iter().zip(&single_runs) {
        let trace_file = format!("traces/single-{}.jsonl", agent.agent_id);
        ctx.writer.write_runs(&trace_file, runs)?;
        singles.push(SingleResult {
            agent_id: agent.agent_id.clone(),
            mean: mean(&returns(runs)),
            trace_file,
        });
    }

    let mut cells = Vec::new();
    let mut sources = Vec::new();
    for (i, &x) in grid.values.iter().enumerate() {
        for (j, &y) in grid.values.iter().enumerate() {
            let mut members: Vec<usize> = vec![2 * i, 2 * i + 1, 2 * j, 2 * j + 1];
            members.sort_unstable();
            members.dedup();
            let group: Vec<TrainedAgent> = members.iter().map(|&m| agents[m].clone()).collect();
            let runs = ctx
                .run_ensemble(&group, &dist, &seeds)
                .map_err(at(Stage::Evaluate))?;
            let trace_file = format!("traces/heatmap/cell-{i}-{j}.jsonl");
            ctx.writer.write_runs(&trace_file, &runs)?;
            let ensemble_mean = mean(&returns(&runs));
            let baseline_mean = members
                .iter()
                .map(|&m| singles[m].mean)
                .fold(f64::NEG_INFINITY, f64::max);
            cells.push(HeatmapCell {
                x,
                y,
                ensemble_mean,
                baseline_mean,
                improvement_pct: improvement_pct(ensemble_mean, baseline_mean),
            });
            sources.push(HeatmapCellSource {
                x,
                y,
                agents: group.iter().map(|a| a.agent_id.clone()).collect(),
                trace_file,
            });
        }
    }
    let heatmap = HeatmapGrid {
        parameter: name.to_string(),
        axis_x: grid.values.clone(),
        axis_y: grid.values.clone(),
        cells,
    };
    let results = ExperimentResults {
        format_version: RESULTS_FORMAT_VERSION,
        env_name: plan.env_name.clone(),
        k: plan.k,
        catalog_hash: ctx.catalog.content_hash(),
        rounds: vec![RoundRecord {
            agents: agents.iter().map(|a| a.agent_id.clone()).collect(),
            profile_file: "profile.json".into(),
            eval_seeds: seeds,
        }],
        singles,
        best_single_agent: None,
        rows: Vec::new(),
        heatmap: Some(HeatmapRecord {
            grid: heatmap.clone(),
            cells: sources,
        }),
    };
    Ok((results, heatmap))
}
