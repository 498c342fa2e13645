//! Discrete MDPs with text-renderable states.
//!
//! Two desk-scale environments are registered: a 12-cell corridor whose two
//! zones reward different actions, and a four-room gridworld with pellets and
//! a roaming hazard. Both expose a fixed start state and a dedicated world RNG
//! stream derived from the episode seed.

pub mod corridor;
pub mod dp;
pub mod forage;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dp::dp_optimal_return;

pub type ActionIndex = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("cannot step an episode that is already done")]
    EpisodeDone,
    #[error("action {action} out of range for {action_count} actions")]
    ActionOutOfRange {
        action: ActionIndex,
        action_count: usize,
    },
    #[error("exact DP unavailable: {0}")]
    StochasticDynamics(String),
    #[error("discount {0} outside [0, 1]")]
    InvalidDiscount(f64),
    #[error("malformed trace line {line}: {reason}")]
    MalformedTrace { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    TwoZoneCorridor,
    FourRoomsForage { hazard: bool },
}

/// Static description of one environment, including the strings that fill
/// the task-description prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    /// Registry key, e.g. `two-zone-corridor`.
    pub name: String,
    /// Name used inside prompts, e.g. `TwoZoneCorridor`.
    pub display_name: String,
    pub kind: EnvKind,
    pub action_count: usize,
    pub action_names: Vec<String>,
    pub task_details: String,
    pub action_details: String,
    pub reward_details: String,
    pub end_conditions: String,
    pub goal_details: String,
    pub max_steps: u32,
    pub oracle_situation_count: u32,
    /// Upper bound (exclusive) on observation state ids.
    pub state_count: u64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), MdpError> {
        if self.action_count == 0 {
            return Err(MdpError::InvalidSpec(
                "action_count must be positive".into(),
            ));
        }
        if self.action_count != self.action_names.len() {
            return Err(MdpError::InvalidSpec(format!(
                "action_count {} does not match {} action names",
                self.action_count,
                self.action_names.len()
            )));
        }
        if self.max_steps == 0 {
            return Err(MdpError::InvalidSpec("max_steps must be at least 1".into()));
        }
        if self.oracle_situation_count == 0 {
            return Err(MdpError::InvalidSpec(
                "oracle_situation_count must be positive".into(),
            ));
        }
        for (field, value) in self.placeholder_fields() {
            if value.trim().is_empty() {
                return Err(MdpError::InvalidSpec(format!("{field} is empty")));
            }
        }
        Ok(())
    }

    pub fn placeholder_fields(&self) -> [(&'static str, &str); 5] {
        [
            ("task_details", &self.task_details),
            ("action_details", &self.action_details),
            ("reward_details", &self.reward_details),
            ("end_conditions", &self.end_conditions),
            ("goal_details", &self.goal_details),
        ]
    }

    /// Same environment with the hazard switched on or off. No-op for the
    /// corridor.
    pub fn with_hazard(mut self, enabled: bool) -> Self {
        if let EnvKind::FourRoomsForage { hazard } = &mut self.kind {
            *hazard = enabled;
        }
        self
    }
}

pub const REGISTERED_ENVS: [&str; 2] = [corridor::NAME, forage::NAME];

pub fn lookup(name: &str) -> Result<EnvSpec, MdpError> {
    match name {
        corridor::NAME => Ok(corridor::spec()),
        forage::NAME => Ok(forage::spec()),
        other => Err(MdpError::UnknownEnvironment(other.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateObs {
    pub state_id: u64,
    pub step_index: u32,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub next_state: StateObs,
    pub reward: f64,
    pub done: bool,
    /// Episode ended by the step limit rather than by reaching a terminal state.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
enum World {
    Corridor { position: u32 },
    Forage(forage::ForageWorld),
}

/// A live episode of one registered environment.
#[derive(Debug, Clone)]
pub struct Environment {
    spec: EnvSpec,
    world: World,
    obs: StateObs,
}

impl Environment {
    /// Starts an episode. The start state is fixed; `seed` keys the world RNG.
    pub fn reset(spec: &EnvSpec, seed: u64) -> Result<Self, MdpError> {
        let registered = lookup(&spec.name)?;
        if std::mem::discriminant(&registered.kind) != std::mem::discriminant(&spec.kind) {
            return Err(MdpError::UnknownEnvironment(spec.name.clone()));
        }
        spec.validate()?;
        let world = match spec.kind {
            EnvKind::TwoZoneCorridor => World::Corridor { position: 0 },
            EnvKind::FourRoomsForage { hazard } => {
                World::Forage(forage::ForageWorld::new(seed, hazard))
            }
        };
        let mut env = Environment {
            spec: spec.clone(),
            world,
            obs: StateObs {
                state_id: 0,
                step_index: 0,
                done: false,
            },
        };
        env.obs.state_id = env.encode();
        Ok(env)
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn observation(&self) -> StateObs {
        self.obs
    }

    pub fn step(&mut self, action: ActionIndex) -> Result<StepResult, MdpError> {
        if self.obs.done {
            return Err(MdpError::EpisodeDone);
        }
        if action >= self.spec.action_count {
            return Err(MdpError::ActionOutOfRange {
                action,
                action_count: self.spec.action_count,
            });
        }
        let (reward, terminal) = match &mut self.world {
            World::Corridor { position } => {
                let reward = corridor::reward(*position, action);
                *position += 1;
                (reward, *position == corridor::TERMINAL)
            }
            World::Forage(world) => (world.step(action), false),
        };
        self.obs.step_index += 1;
        let truncated = !terminal && self.obs.step_index >= self.spec.max_steps;
        self.obs.done = terminal || truncated;
        self.obs.state_id = self.encode();
        Ok(StepResult {
            next_state: self.obs,
            reward,
            done: self.obs.done,
            truncated,
        })
    }

    /// Deterministic text rendering of the current state.
    pub fn render(&self) -> String {
        match &self.world {
            World::Corridor { position } => {
                corridor::render(*position, self.obs.step_index, self.spec.max_steps)
            }
            World::Forage(world) => world.render(self.obs.step_index, self.spec.max_steps),
        }
    }

    fn encode(&self) -> u64 {
        match &self.world {
            World::Corridor { position } => u64::from(*position),
            World::Forage(world) => world.encode(),
        }
    }

    /// Agent cell for the gridworld, `None` for the corridor.
    pub fn agent_cell(&self) -> Option<forage::Cell> {
        match &self.world {
            World::Corridor { .. } => None,
            World::Forage(world) => Some(world.agent()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub state: StateObs,
    pub action: ActionIndex,
    pub reward: f64,
}

/// Ordered record of one episode. `total_return` is undiscounted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub total_return: f64,
}

impl EpisodeTrace {
    pub fn push(&mut self, state: StateObs, action: ActionIndex, reward: f64) {
        self.steps.push(TraceStep {
            state,
            action,
            reward,
        });
        self.total_return += reward;
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.steps
            .iter()
            .rev()
            .fold(0.0, |acc, step| step.reward + gamma * acc)
    }

    /// One `state_id,action,reward` line per step.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{}",
                step.state.state_id, step.action, step.reward
            );
        }
        out
    }

    /// Inverse of [`EpisodeTrace::to_lines`]. Step indices are reconstructed
    /// from line order.
    pub fn from_lines(text: &str) -> Result<Self, MdpError> {
        let mut trace = EpisodeTrace::default();
        for (index, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let bad = |reason: &str| MdpError::MalformedTrace {
                line: index + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(bad("expected 3 comma-separated fields"));
            }
            let state_id = fields[0].parse().map_err(|_| bad("state_id"))?;
            let action = fields[1].parse().map_err(|_| bad("action"))?;
            let reward: f64 = fields[2].parse().map_err(|_| bad("reward"))?;
            if !reward.is_finite() {
                return Err(bad("reward not finite"));
            }
            let state = StateObs {
                state_id,
                step_index: trace.steps.len() as u32,
                done: false,
            };
            trace.push(state, action, reward);
        }
        Ok(trace)
    }
}
