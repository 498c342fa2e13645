//! Episode execution under situation-based agent selection, a baseline
//! combiner, or a single agent.
//!
//! All three modes draw tie-breaks and combiner samples from the policy
//! stream of the episode seed, so a one-agent ensemble reproduces the
//! single-agent run exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::TrainedAgent;
use crate::combiners::{combine, CombinerError, CombinerInput, CombinerKind, CombinerOptions};
use crate::mdp::{EnvSpec, Environment, EpisodeTrace, MdpError};
use crate::profile::{check_agent_env, ProfileError, RewardDistribution};
use crate::seeding::{stream_rng, POLICY_STREAM};
use crate::situations::{should_categorize, Categorizer, SituationError, SituationId};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("ensemble needs at least one agent")]
    NoAgents,
    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),
    #[error("categorizer failed at step {step}: {source}")]
    Categorizer {
        step: u32,
        #[source]
        source: SituationError,
    },
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Combiner(#[from] CombinerError),
    #[error(transparent)]
    Env(#[from] MdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CategorizerKind {
    #[default]
    Oracle,
    Llm,
}

/// What to do when the categorizer fails after its own retries and fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnCategorizerFailure {
    #[default]
    Abort,
    HoldPrevious,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub cadence: u32,
    pub categorizer: CategorizerKind,
    pub combiner_temperature: f64,
    pub rng_seed: u64,
    #[serde(default)]
    pub on_failure: OnCategorizerFailure,
}

impl EnsembleConfig {
    pub fn new(cadence: u32, rng_seed: u64) -> Self {
        EnsembleConfig {
            cadence,
            categorizer: CategorizerKind::Oracle,
            combiner_temperature: 1.0,
            rng_seed,
            on_failure: OnCategorizerFailure::Abort,
        }
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.cadence == 0 {
            return Err(RuntimeError::InvalidConfig(
                "cadence must be at least 1".into(),
            ));
        }
        if !(self.combiner_temperature > 0.0 && self.combiner_temperature.is_finite()) {
            return Err(RuntimeError::InvalidConfig(
                "combiner_temperature must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub episode_return: f64,
    pub trace: EpisodeTrace,
    pub situation_timeline: Vec<(u32, SituationId)>,
    pub selection_timeline: Vec<(u32, String)>,
    pub categorizer_call_count: u64,
}

impl RunResult {
    fn finish(seed: u64, trace: EpisodeTrace) -> Self {
        RunResult {
            seed,
            episode_return: trace.total_return,
            trace,
            situation_timeline: Vec::new(),
            selection_timeline: Vec::new(),
            categorizer_call_count: 0,
        }
    }
}

fn check_agents(agents: &[TrainedAgent], spec: &EnvSpec) -> Result<(), RuntimeError> {
    if agents.is_empty() {
        return Err(RuntimeError::NoAgents);
    }
    for agent in agents {
        check_agent_env(agent, spec)?;
    }
    Ok(())
}

/// Re-categorizes every `cadence` steps and lets the profile's best agent
/// for that situation act greedily until the next categorization.
pub fn run_llm_ens_episode(
    agents: &[TrainedAgent],
    dist: &RewardDistribution,
    categorizer: &mut dyn Categorizer,
    spec: &EnvSpec,
    config: &EnsembleConfig,
) -> Result<RunResult, RuntimeError> {
    config.validate()?;
    check_agents(agents, spec)?;
    let ids: Vec<String> = agents.iter().map(|a| a.agent_id.clone()).collect();
    let mut env = Environment::reset(spec, config.rng_seed)?;
    let mut ties = stream_rng(config.rng_seed, POLICY_STREAM);
    let mut trace = EpisodeTrace::default();
    let mut situations = Vec::new();
    let mut selections = Vec::new();
    let mut current: Option<(SituationId, usize)> = None;
    while !env.observation().done {
        let obs = env.observation();
        if should_categorize(obs.step_index, config.cadence) {
            let situation = match (categorizer.categorize(&env), config.on_failure, current) {
                (Ok(id), _, _) => id,
                (Err(_), OnCategorizerFailure::HoldPrevious, Some((previous, _))) => previous,
                (Err(source), _, _) => {
                    return Err(RuntimeError::Categorizer {
                        step: obs.step_index,
                        source,
                    })
                }
            };
            let best = dist.best_agent_for(situation, &ids)?;
            let index = ids
                .iter()
                .position(|id| *id == best)
                .expect("best agent is one of the candidates");
            situations.push((obs.step_index, situation));
            selections.push((obs.step_index, best));
            current = Some((situation, index));
        }
        let (_, active) = current.expect("step 0 always categorizes");
        let action = agents[active].act_greedy(obs.state_id, &mut ties);
        let step = env.step(action)?;
        trace.push(obs, action, step.reward);
    }
    let mut result = RunResult::finish(config.rng_seed, trace);
    result.categorizer_call_count = situations.len() as u64;
    result.situation_timeline = situations;
    result.selection_timeline = selections;
    Ok(result)
}

/// Fuses all agents' Q rows with `kind` at every step.
pub fn run_combiner_episode(
    agents: &[TrainedAgent],
    kind: CombinerKind,
    options: CombinerOptions,
    spec: &EnvSpec,
    seed: u64,
    temperature: f64,
) -> Result<RunResult, RuntimeError> {
    check_agents(agents, spec)?;
    let mut env = Environment::reset(spec, seed)?;
    let mut rng = stream_rng(seed, POLICY_STREAM);
    let mut trace = EpisodeTrace::default();
    while !env.observation().done {
        let obs = env.observation();
        let input = CombinerInput::from_agents(agents, obs.state_id, temperature)?;
        let action = combine(kind, &input, options, &mut rng).chosen_action;
        let step = env.step(action)?;
        trace.push(obs, action, step.reward);
    }
    Ok(RunResult::finish(seed, trace))
}

pub fn run_single_agent_episode(
    agent: &TrainedAgent,
    spec: &EnvSpec,
    seed: u64,
) -> Result<RunResult, RuntimeError> {
    check_agents(std::slice::from_ref(agent), spec)?;
    let mut env = Environment::reset(spec, seed)?;
    let mut ties = stream_rng(seed, POLICY_STREAM);
    let mut trace = EpisodeTrace::default();
    while !env.observation().done {
        let obs = env.observation();
        let action = agent.act_greedy(obs.state_id, &mut ties);
        let step = env.step(action)?;
        trace.push(obs, action, step.reward);
    }
    let mut result = RunResult::finish(seed, trace);
    result.selection_timeline.push((0, agent.agent_id.clone()));
    Ok(result)
}

/// Runs seeds `seed_base .. seed_base + episodes` in order.
pub fn evaluate_runs<E>(
    mut run: impl FnMut(u64) -> Result<RunResult, E>,
    episodes: u32,
    seed_base: u64,
) -> Result<Vec<RunResult>, E> {
    (0..episodes)
        .map(|e| run(seed_base.wrapping_add(u64::from(e))))
        .collect()
}

/// Parallel [`evaluate_runs`] for pure run functions; output order is seed order.
pub fn evaluate_runs_parallel<E: Send>(
    run: impl Fn(u64) -> Result<RunResult, E> + Sync,
    episodes: u32,
    seed_base: u64,
) -> Result<Vec<RunResult>, E> {
    (0..episodes)
        .into_par_iter()
        .map(|e| run(seed_base.wrapping_add(u64::from(e))))
        .collect()
}

pub fn evaluate<E>(
    run: impl FnMut(u64) -> Result<RunResult, E>,
    episodes: u32,
    seed_base: u64,
) -> Result<Vec<f64>, E> {
    Ok(evaluate_runs(run, episodes, seed_base)?
        .iter()
        .map(|r| r.episode_return)
        .collect())
}
