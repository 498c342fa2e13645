//! Per-agent, per-situation reward profiles.
//!
//! An occurrence is one K-step segment: the run of steps between two
//! categorization points, labelled with the situation seen at its first step.
//! The profile keeps a running `(reward_sum, count)` per `(agent, situation)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::TrainedAgent;
use crate::mdp::{EnvSpec, Environment, MdpError};
use crate::seeding::{stream_rng, POLICY_STREAM};
use crate::situations::{
    should_categorize, Categorizer, CategorizerConfig, SituationError, SituationId,
};

pub const PROFILE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("agent `{agent}` was trained on `{agent_env}`, not `{env}`")]
    AgentEnvMismatch {
        agent: String,
        agent_env: String,
        env: String,
    },
    #[error("no agents to choose from")]
    NoAgents,
    #[error("categorizer failed: {0}")]
    Categorizer(#[source] SituationError),
    #[error("profile was built against catalog {found}, current catalog is {expected}")]
    StaleCatalog { expected: String, found: String },
    #[error("profile version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed profile: {0}")]
    Malformed(String),
    #[error(transparent)]
    Env(#[from] MdpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub agent_id: String,
    pub situation_id: SituationId,
    pub segment_index: u32,
    pub episode_index: u32,
    pub accumulated_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardCell {
    pub reward_sum: f64,
    pub count: u64,
}

impl RewardCell {
    pub fn mean(&self) -> f64 {
        self.reward_sum / self.count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardDistribution {
    cells: BTreeMap<(String, SituationId), RewardCell>,
}

impl RewardDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a SegmentRecord>) -> Self {
        let mut dist = Self::new();
        for record in records {
            dist.update(record);
        }
        dist
    }

    pub fn update(&mut self, record: &SegmentRecord) {
        let cell = self
            .cells
            .entry((record.agent_id.clone(), record.situation_id))
            .or_default();
        cell.reward_sum += record.accumulated_reward;
        cell.count += 1;
    }

    pub fn cell(&self, agent_id: &str, situation_id: SituationId) -> Option<RewardCell> {
        self.cells
            .get(&(agent_id.to_string(), situation_id))
            .copied()
    }

    /// Mean segment reward, `None` when the pair was never observed.
    pub fn average(&self, agent_id: &str, situation_id: SituationId) -> Option<f64> {
        self.cell(agent_id, situation_id).map(|c| c.mean())
    }

    /// Mean over all of an agent's segments regardless of situation.
    pub fn pooled_mean(&self, agent_id: &str) -> Option<f64> {
        let (sum, count) = self
            .cells
            .iter()
            .filter(|((a, _), _)| a == agent_id)
            .fold((0.0, 0u64), |(s, n), (_, c)| {
                (s + c.reward_sum, n + c.count)
            });
        (count > 0).then(|| sum / count as f64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, SituationId, RewardCell)> {
        self.cells.iter().map(|((a, s), c)| (a.as_str(), *s, *c))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Agent with the highest mean in `situation_id`; ties go to the
    /// lexicographically smallest id. Falls back to the highest pooled mean
    /// when no listed agent has observed the situation.
    pub fn best_agent_for(
        &self,
        situation_id: SituationId,
        agent_ids: &[String],
    ) -> Result<String, ProfileError> {
        let mut sorted: Vec<&String> = agent_ids.iter().collect();
        sorted.sort();
        sorted.dedup();
        let first = *sorted.first().ok_or(ProfileError::NoAgents)?;
        let argmax = |score: &dyn Fn(&str) -> Option<f64>| {
            sorted
                .iter()
                .filter_map(|a| score(a).map(|v| (*a, v)))
                .fold(None, |best: Option<(&String, f64)>, (a, v)| match best {
                    Some((_, b)) if v <= b => best,
                    _ => Some((a, v)),
                })
        };
        let chosen = argmax(&|a| self.average(a, situation_id))
            .or_else(|| argmax(&|a| self.pooled_mean(a)))
            .map_or(first, |(a, _)| a);
        Ok(chosen.clone())
    }

    pub fn merge(&self, other: &RewardDistribution) -> RewardDistribution {
        let mut merged = self.clone();
        for (key, cell) in &other.cells {
            let slot = merged.cells.entry(key.clone()).or_default();
            slot.reward_sum += cell.reward_sum;
            slot.count += cell.count;
        }
        merged
    }

    pub fn to_json(&self, catalog_hash: &str) -> String {
        let file = ProfileFile {
            format_version: PROFILE_FORMAT_VERSION,
            catalog_hash: catalog_hash.to_string(),
            rows: self
                .iter()
                .map(|(agent_id, situation_id, c)| ProfileRow {
                    agent_id: agent_id.to_string(),
                    situation_id,
                    reward_sum: c.reward_sum,
                    count: c.count,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("profile serializes")
    }

    /// Loads a profile, rejecting it when `expected_catalog_hash` is given and
    /// differs from the stored hash.
    pub fn from_json(
        text: &str,
        expected_catalog_hash: Option<&str>,
    ) -> Result<Self, ProfileError> {
        let file: ProfileFile =
            serde_json::from_str(text).map_err(|e| ProfileError::Malformed(e.to_string()))?;
        if file.format_version != PROFILE_FORMAT_VERSION {
            return Err(ProfileError::VersionMismatch {
                found: file.format_version,
                expected: PROFILE_FORMAT_VERSION,
            });
        }
        if let Some(expected) = expected_catalog_hash {
            if expected != file.catalog_hash {
                return Err(ProfileError::StaleCatalog {
                    expected: expected.to_string(),
                    found: file.catalog_hash,
                });
            }
        }
        let mut dist = RewardDistribution::new();
        for row in file.rows {
            if row.count == 0 || !row.reward_sum.is_finite() {
                return Err(ProfileError::Malformed(format!(
                    "bad row for ({}, {})",
                    row.agent_id, row.situation_id
                )));
            }
            let cell = RewardCell {
                reward_sum: row.reward_sum,
                count: row.count,
            };
            if dist
                .cells
                .insert((row.agent_id.clone(), row.situation_id), cell)
                .is_some()
            {
                return Err(ProfileError::Malformed(format!(
                    "duplicate row ({}, {})",
                    row.agent_id, row.situation_id
                )));
            }
        }
        Ok(dist)
    }

    pub fn catalog_hash_of(text: &str) -> Result<String, ProfileError> {
        let file: ProfileFile =
            serde_json::from_str(text).map_err(|e| ProfileError::Malformed(e.to_string()))?;
        Ok(file.catalog_hash)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileFile {
    format_version: u32,
    catalog_hash: String,
    rows: Vec<ProfileRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRow {
    agent_id: String,
    situation_id: SituationId,
    reward_sum: f64,
    count: u64,
}

pub fn check_agent_env(agent: &TrainedAgent, spec: &EnvSpec) -> Result<(), ProfileError> {
    if agent.env_name != spec.name || agent.action_count != spec.action_count {
        return Err(ProfileError::AgentEnvMismatch {
            agent: agent.agent_id.clone(),
            agent_env: agent.env_name.clone(),
            env: spec.name.clone(),
        });
    }
    Ok(())
}

/// Greedy rollouts of `agent` over episodes seeded `seed, seed + 1, ...`,
/// emitting one record per K-step segment.
pub fn profile_agent(
    agent: &TrainedAgent,
    spec: &EnvSpec,
    categorizer: &mut dyn Categorizer,
    config: &CategorizerConfig,
    episodes: u32,
    seed: u64,
) -> Result<Vec<SegmentRecord>, ProfileError> {
    check_agent_env(agent, spec)?;
    config.validate().map_err(ProfileError::Categorizer)?;
    let mut records = Vec::new();
    for episode_index in 0..episodes {
        let episode_seed = seed.wrapping_add(u64::from(episode_index));
        let mut env = Environment::reset(spec, episode_seed)?;
        let mut ties = stream_rng(episode_seed, POLICY_STREAM);
        let mut open: Option<SegmentRecord> = None;
        let mut segment_index = 0;
        while !env.observation().done {
            let obs = env.observation();
            if should_categorize(obs.step_index, config.cadence) {
                let situation_id = match categorizer.categorize(&env) {
                    Ok(id) => id,
                    Err(e) => config
                        .fallback_situation
                        .ok_or(ProfileError::Categorizer(e))?,
                };
                records.extend(open.take());
                open = Some(SegmentRecord {
                    agent_id: agent.agent_id.clone(),
                    situation_id,
                    segment_index,
                    episode_index,
                    accumulated_reward: 0.0,
                });
                segment_index += 1;
            }
            let action = agent.act_greedy(obs.state_id, &mut ties);
            let step = env.step(action)?;
            if let Some(segment) = open.as_mut() {
                segment.accumulated_reward += step.reward;
            }
        }
        records.extend(open.take());
    }
    Ok(records)
}
