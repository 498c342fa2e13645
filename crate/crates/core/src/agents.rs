//! Tabular Q-learning agents.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{self, ActionIndex, EnvSpec, Environment, MdpError};
use crate::seeding::{stream_rng, EXPLORE_STREAM, SCHEDULE_STREAM};

pub const AGENT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("malformed agent record: {0}")]
    Malformed(String),
    #[error("agent record version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Env(#[from] MdpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub epsilon_decay_per_step: f64,
    pub training_episodes: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            learning_rate: 0.1,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_min: 0.1,
            epsilon_decay_per_step: 0.99999,
            training_episodes: 5000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: &str| Err(AgentError::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0 <= self.epsilon_min
            && self.epsilon_min <= self.epsilon_start
            && self.epsilon_start <= 1.0)
        {
            return bad("need 0 <= epsilon_min <= epsilon_start <= 1");
        }
        if !(self.epsilon_decay_per_step > 0.0 && self.epsilon_decay_per_step <= 1.0) {
            return bad("epsilon_decay_per_step must lie in (0, 1]");
        }
        Ok(())
    }
}

/// A Q-table plus provenance. Rows absent from the table read as all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedAgent {
    pub agent_id: String,
    pub env_name: String,
    pub train_seed: u64,
    pub config: AgentConfig,
    pub action_count: usize,
    pub q_table: BTreeMap<u64, Vec<f64>>,
}

impl TrainedAgent {
    pub fn new(
        agent_id: impl Into<String>,
        spec: &EnvSpec,
        config: AgentConfig,
        train_seed: u64,
    ) -> Self {
        TrainedAgent {
            agent_id: agent_id.into(),
            env_name: spec.name.clone(),
            train_seed,
            config,
            action_count: spec.action_count,
            q_table: BTreeMap::new(),
        }
    }

    /// An agent that prefers `action` by a margin of 1 in every state.
    pub fn fixed_action(agent_id: impl Into<String>, spec: &EnvSpec, action: ActionIndex) -> Self {
        let mut agent = TrainedAgent::new(
            agent_id,
            spec,
            AgentConfig {
                training_episodes: 0,
                ..Default::default()
            },
            0,
        );
        let mut row = vec![0.0; spec.action_count];
        row[action] = 1.0;
        for state in 0..spec.state_count {
            agent.q_table.insert(state, row.clone());
        }
        agent
    }

    pub fn q_row(&self, state_id: u64) -> Vec<f64> {
        self.q_table
            .get(&state_id)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.action_count])
    }

    fn row_mut(&mut self, state_id: u64) -> &mut Vec<f64> {
        let n = self.action_count;
        self.q_table.entry(state_id).or_insert_with(|| vec![0.0; n])
    }

    pub fn act_greedy<R: Rng + ?Sized>(&self, state_id: u64, rng: &mut R) -> ActionIndex {
        pick_uniform(&tied_argmax(&self.q_row(state_id)), rng)
    }

    pub fn action_probabilities(
        &self,
        state_id: u64,
        temperature: f64,
    ) -> Result<Vec<f64>, AgentError> {
        boltzmann(&self.q_row(state_id), temperature)
    }
}

/// Indices attaining the row maximum.
pub fn tied_argmax(values: &[f64]) -> Vec<usize> {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v == best)
        .map(|(i, _)| i)
        .collect()
}

/// Uniform draw from a non-empty tie set; a single candidate consumes no randomness.
pub fn pick_uniform<R: Rng + ?Sized>(candidates: &[usize], rng: &mut R) -> usize {
    match candidates {
        [only] => *only,
        _ => candidates[rng.gen_range(0..candidates.len())],
    }
}

/// Max-shifted softmax of `values / temperature`.
pub fn boltzmann(values: &[f64], temperature: f64) -> Result<Vec<f64>, AgentError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(AgentError::InvalidTemperature(temperature));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = values
        .iter()
        .map(|v| ((v - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// One-step Q-learning with epsilon-greedy exploration and per-step
/// multiplicative epsilon decay. Deterministic in `seed`.
pub fn train_q_learning(
    spec: &EnvSpec,
    config: &AgentConfig,
    seed: u64,
) -> Result<TrainedAgent, AgentError> {
    config.validate()?;
    spec.validate()?;
    let mut agent = TrainedAgent::new(format!("q-seed{seed}"), spec, config.clone(), seed);
    let mut schedule = stream_rng(seed, SCHEDULE_STREAM);
    let mut explore = stream_rng(seed, EXPLORE_STREAM);
    let mut epsilon = config.epsilon_start;

    for _ in 0..config.training_episodes {
        let mut env = Environment::reset(spec, schedule.next_u64())?;
        let mut obs = env.observation();
        while !obs.done {
            let action = if explore.gen::<f64>() < epsilon {
                explore.gen_range(0..spec.action_count)
            } else {
                agent.act_greedy(obs.state_id, &mut explore)
            };
            let step = env.step(action)?;
            let bootstrap = if step.done && !step.truncated {
                0.0
            } else {
                agent
                    .q_row(step.next_state.state_id)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            let target = step.reward + config.gamma * bootstrap;
            let q = &mut agent.row_mut(obs.state_id)[action];
            *q += config.learning_rate * (target - *q);
            epsilon = (epsilon * config.epsilon_decay_per_step).max(config.epsilon_min);
            obs = step.next_state;
        }
    }
    Ok(agent)
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentRecord {
    format_version: u32,
    agent_id: String,
    env_name: String,
    train_seed: u64,
    config: AgentConfig,
    action_count: usize,
    /// Sparse `(state, action, value)` triples.
    q_table: Vec<(u64, usize, f64)>,
}

/// Result of [`load_agent`]: the agent plus whether its environment is unknown
/// to this build.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedAgent {
    pub agent: TrainedAgent,
    pub unknown_env: bool,
}

pub fn save_agent(agent: &TrainedAgent) -> String {
    let q_table = agent
        .q_table
        .iter()
        .flat_map(|(state, row)| row.iter().enumerate().map(move |(a, v)| (*state, a, *v)))
        .collect();
    let record = AgentRecord {
        format_version: AGENT_FORMAT_VERSION,
        agent_id: agent.agent_id.clone(),
        env_name: agent.env_name.clone(),
        train_seed: agent.train_seed,
        config: agent.config.clone(),
        action_count: agent.action_count,
        q_table,
    };
    serde_json::to_string_pretty(&record).expect("agent record serializes")
}

pub fn load_agent(text: &str) -> Result<LoadedAgent, AgentError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| AgentError::Malformed(e.to_string()))?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| AgentError::Malformed("missing format_version".into()))?;
    if found != u64::from(AGENT_FORMAT_VERSION) {
        return Err(AgentError::VersionMismatch {
            found: found as u32,
            expected: AGENT_FORMAT_VERSION,
        });
    }
    let record: AgentRecord =
        serde_json::from_value(value).map_err(|e| AgentError::Malformed(e.to_string()))?;
    if record.action_count == 0 {
        return Err(AgentError::Malformed(
            "action_count must be positive".into(),
        ));
    }
    let mut q_table: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (state, action, v) in record.q_table {
        if action >= record.action_count || !v.is_finite() {
            return Err(AgentError::Malformed(format!(
                "bad q entry ({state}, {action}, {v})"
            )));
        }
        q_table
            .entry(state)
            .or_insert_with(|| vec![0.0; record.action_count])[action] = v;
    }
    let unknown_env = mdp::lookup(&record.env_name).is_err();
    Ok(LoadedAgent {
        agent: TrainedAgent {
            agent_id: record.agent_id,
            env_name: record.env_name,
            train_seed: record.train_seed,
            config: record.config,
            action_count: record.action_count,
            q_table,
        },
        unknown_env,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{corridor, lookup};
    use crate::seeding::{stream_rng, POLICY_STREAM};
    use proptest::prelude::*;

    fn corridor_spec() -> EnvSpec {
        lookup(corridor::NAME).unwrap()
    }

    fn with_row(row: Vec<f64>) -> TrainedAgent {
        let spec = lookup(crate::mdp::forage::NAME).unwrap();
        let mut agent = TrainedAgent::new("t", &spec, AgentConfig::default(), 0);
        agent.action_count = row.len();
        agent.q_table.insert(0, row);
        agent
    }

    #[test]
    fn greedy_strict_and_tied() {
        let mut rng = stream_rng(1, POLICY_STREAM);
        assert_eq!(with_row(vec![0.5, 0.2]).act_greedy(0, &mut rng), 0);

        let agent = with_row(vec![0.3, 0.3]);
        let zeros = (0..10_000)
            .filter(|_| agent.act_greedy(0, &mut rng) == 0)
            .count();
        let freq = zeros as f64 / 10_000.0;
        assert!((freq - 0.5).abs() <= 0.05, "{freq}");

        let agent = with_row(vec![0.0; 4]);
        let mut counts = [0usize; 4];
        for _ in 0..8000 {
            counts[agent.act_greedy(99, &mut rng)] += 1;
        }
        assert!(
            counts
                .iter()
                .all(|&c| (c as f64 / 8000.0 - 0.25).abs() < 0.03),
            "{counts:?}"
        );
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(boltzmann(&[0.0, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
        let p = boltzmann(&[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4);
        assert!(boltzmann(&[1.0, 0.0], 0.01).unwrap()[0] > 0.999);
        assert!(matches!(
            boltzmann(&[1.0], 0.0),
            Err(AgentError::InvalidTemperature(_))
        ));
        assert!(matches!(
            boltzmann(&[1.0], -2.0),
            Err(AgentError::InvalidTemperature(_))
        ));
    }

    #[test]
    fn zero_episodes_leaves_table_empty() {
        let config = AgentConfig {
            training_episodes: 0,
            ..Default::default()
        };
        let agent = train_q_learning(&corridor_spec(), &config, 0).unwrap();
        assert!(agent.q_table.is_empty());
        assert_eq!(tied_argmax(&agent.q_row(4)), vec![0, 1]);
    }

    #[test]
    fn training_is_deterministic() {
        let config = AgentConfig {
            training_episodes: 300,
            ..Default::default()
        };
        let spec = lookup(crate::mdp::forage::NAME).unwrap();
        let a = train_q_learning(&spec, &config, 9).unwrap();
        let b = train_q_learning(&spec, &config, 9).unwrap();
        assert_eq!(save_agent(&a), save_agent(&b));
        let c = train_q_learning(&spec, &config, 10).unwrap();
        assert_ne!(a.q_table, c.q_table);
    }

    #[test]
    fn invalid_configs() {
        for config in [
            AgentConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            AgentConfig {
                gamma: 1.1,
                ..Default::default()
            },
            AgentConfig {
                epsilon_min: 0.5,
                epsilon_start: 0.4,
                ..Default::default()
            },
            AgentConfig {
                epsilon_decay_per_step: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                train_q_learning(&corridor_spec(), &config, 0),
                Err(AgentError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn save_load_round_trip_and_errors() {
        let config = AgentConfig {
            training_episodes: 50,
            ..Default::default()
        };
        let agent = train_q_learning(&corridor_spec(), &config, 3).unwrap();
        let text = save_agent(&agent);
        let loaded = load_agent(&text).unwrap();
        assert_eq!(loaded.agent, agent);
        assert!(!loaded.unknown_env);

        assert!(matches!(
            load_agent(&text[..text.len() / 2]),
            Err(AgentError::Malformed(_))
        ));

        let renamed = text.replace("two-zone-corridor", "mystery-maze");
        let loaded = load_agent(&renamed).unwrap();
        assert!(loaded.unknown_env);
        assert_eq!(loaded.agent.env_name, "mystery-maze");

        let bumped = text.replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(
            load_agent(&bumped),
            Err(AgentError::VersionMismatch {
                found: 2,
                expected: 1
            })
        ));
    }

    proptest! {
        #[test]
        fn softmax_is_distribution_and_shift_invariant(
            row in prop::collection::vec(-50.0f64..50.0, 1..6),
            tau in 1e-3f64..1e6,
            shift in -100.0f64..100.0,
        ) {
            let p = boltzmann(&row, tau).unwrap();
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
            let q = boltzmann(&shifted, tau).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn greedy_invariant_under_increasing_affine(
            row in prop::collection::vec(-5i32..5, 2..5),
            scale in 0.01f64..100.0,
            offset in -100.0f64..100.0,
        ) {
            let base: Vec<f64> = row.iter().map(|v| f64::from(*v)).collect();
            let mapped: Vec<f64> = base.iter().map(|v| scale * v + offset).collect();
            prop_assert_eq!(tied_argmax(&base), tied_argmax(&mapped));
        }
    }
}
