//! Rule-based ensemble combiners: majority vote, Borda rank vote, probability
//! aggregation, and Boltzmann addition / multiplication.
//!
//! Every combiner is a pure function of the per-agent rows plus the caller's
//! RNG, which is the only source of tie-breaks and samples.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{boltzmann, pick_uniform, tied_argmax, AgentError, TrainedAgent};
use crate::mdp::ActionIndex;

#[derive(Debug, Error)]
pub enum CombinerError {
    #[error("ensemble has no agents")]
    EmptyEnsemble,
    #[error("agent {agent} row has length {len}, expected {action_count}")]
    LengthMismatch {
        agent: usize,
        len: usize,
        action_count: usize,
    },
    #[error("agent {0} probabilities are not a valid distribution")]
    InvalidDistribution(usize),
    #[error("agent {0} preferences are not finite")]
    NonFinitePreferences(usize),
    #[error("unknown combiner `{0}`")]
    UnknownCombiner(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombinerKind {
    #[serde(rename = "majority")]
    Majority,
    #[serde(rename = "rank")]
    Rank,
    #[serde(rename = "aggregate")]
    Aggregate,
    BoltzmannAdd,
    BoltzmannMul,
}

impl CombinerKind {
    pub const ALL: [CombinerKind; 5] = [
        CombinerKind::Majority,
        CombinerKind::Rank,
        CombinerKind::Aggregate,
        CombinerKind::BoltzmannAdd,
        CombinerKind::BoltzmannMul,
    ];

    pub fn token(self) -> &'static str {
        match self {
            CombinerKind::Majority => "majority",
            CombinerKind::Rank => "rank",
            CombinerKind::Aggregate => "aggregate",
            CombinerKind::BoltzmannAdd => "boltzmann-add",
            CombinerKind::BoltzmannMul => "boltzmann-mul",
        }
    }
}

impl fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for CombinerKind {
    type Err = CombinerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CombinerKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| CombinerError::UnknownCombiner(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinerOptions {
    /// Sample from the Boltzmann-addition distribution instead of taking its argmax.
    pub sample_addition: bool,
}

/// Per-agent raw Q rows and their Boltzmann distributions at a shared temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerInput {
    pub preferences: Vec<Vec<f64>>,
    pub probabilities: Vec<Vec<f64>>,
    pub action_count: usize,
    pub temperature: f64,
}

impl CombinerInput {
    pub fn from_preferences(
        preferences: Vec<Vec<f64>>,
        temperature: f64,
    ) -> Result<Self, CombinerError> {
        let action_count = preferences
            .first()
            .map(Vec::len)
            .ok_or(CombinerError::EmptyEnsemble)?;
        let probabilities = preferences
            .iter()
            .map(|row| boltzmann(row, temperature))
            .collect::<Result<_, _>>()?;
        let input = CombinerInput {
            preferences,
            probabilities,
            action_count,
            temperature,
        };
        input.validate()?;
        Ok(input)
    }

    pub fn from_agents(
        agents: &[TrainedAgent],
        state_id: u64,
        temperature: f64,
    ) -> Result<Self, CombinerError> {
        Self::from_preferences(
            agents.iter().map(|a| a.q_row(state_id)).collect(),
            temperature,
        )
    }

    pub fn validate(&self) -> Result<(), CombinerError> {
        if self.preferences.is_empty() || self.probabilities.len() != self.preferences.len() {
            return Err(CombinerError::EmptyEnsemble);
        }
        for (agent, (prefs, probs)) in self.preferences.iter().zip(&self.probabilities).enumerate()
        {
            for row in [prefs, probs] {
                if row.len() != self.action_count {
                    return Err(CombinerError::LengthMismatch {
                        agent,
                        len: row.len(),
                        action_count: self.action_count,
                    });
                }
            }
            if prefs.iter().any(|v| !v.is_finite()) {
                return Err(CombinerError::NonFinitePreferences(agent));
            }
            if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return Err(CombinerError::InvalidDistribution(agent));
            }
        }
        Ok(())
    }

    pub fn agent_count(&self) -> usize {
        self.preferences.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinerOutput {
    pub chosen_action: ActionIndex,
    pub fused_distribution: Option<Vec<f64>>,
}

pub fn combine<R: Rng + ?Sized>(
    kind: CombinerKind,
    input: &CombinerInput,
    options: CombinerOptions,
    rng: &mut R,
) -> CombinerOutput {
    match kind {
        CombinerKind::Majority => majority_vote(input, rng),
        CombinerKind::Rank => rank_vote(input, rng),
        CombinerKind::Aggregate => aggregate(input, rng),
        CombinerKind::BoltzmannAdd => boltzmann_addition(input, options.sample_addition, rng),
        CombinerKind::BoltzmannMul => boltzmann_multiplication(input, rng),
    }
}

/// Plurality over each agent's greedy action.
pub fn majority_vote<R: Rng + ?Sized>(input: &CombinerInput, rng: &mut R) -> CombinerOutput {
    let mut votes = vec![0.0; input.action_count];
    for row in &input.preferences {
        votes[pick_uniform(&tied_argmax(row), rng)] += 1.0;
    }
    CombinerOutput {
        chosen_action: pick_uniform(&tied_argmax(&votes), rng),
        fused_distribution: None,
    }
}

/// Borda scores for one row: position `j` in descending order earns
/// `n - 1 - j`; tied values share the mean of their positions' scores.
pub fn borda_scores(row: &[f64]) -> Vec<f64> {
    let n = row.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    let mut scores = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && row[order[end]] == row[order[start]] {
            end += 1;
        }
        // Mean of (n-1-j) for j in start..end.
        let shared = (n - 1) as f64 - (start + end - 1) as f64 / 2.0;
        for &action in &order[start..end] {
            scores[action] = shared;
        }
        start = end;
    }
    scores
}

pub fn rank_vote<R: Rng + ?Sized>(input: &CombinerInput, rng: &mut R) -> CombinerOutput {
    let mut totals = vec![0.0; input.action_count];
    for row in &input.preferences {
        for (total, score) in totals.iter_mut().zip(borda_scores(row)) {
            *total += score;
        }
    }
    CombinerOutput {
        chosen_action: pick_uniform(&tied_argmax(&totals), rng),
        fused_distribution: None,
    }
}

fn summed_probabilities(input: &CombinerInput) -> Vec<f64> {
    let mut sum = vec![0.0; input.action_count];
    for row in &input.probabilities {
        for (s, p) in sum.iter_mut().zip(row) {
            *s += p;
        }
    }
    sum
}

/// Argmax of the summed probabilities; reports the per-agent mean.
pub fn aggregate<R: Rng + ?Sized>(input: &CombinerInput, rng: &mut R) -> CombinerOutput {
    let sum = summed_probabilities(input);
    let chosen_action = pick_uniform(&tied_argmax(&sum), rng);
    let n = input.agent_count() as f64;
    CombinerOutput {
        chosen_action,
        fused_distribution: Some(sum.iter().map(|s| s / n).collect()),
    }
}

pub fn boltzmann_addition<R: Rng + ?Sized>(
    input: &CombinerInput,
    sample: bool,
    rng: &mut R,
) -> CombinerOutput {
    let sum = summed_probabilities(input);
    let total: f64 = sum.iter().sum();
    let fused: Vec<f64> = sum.iter().map(|s| s / total).collect();
    let chosen_action = if sample {
        sample_index(&fused, rng)
    } else {
        pick_uniform(&tied_argmax(&fused), rng)
    };
    CombinerOutput {
        chosen_action,
        fused_distribution: Some(fused),
    }
}

/// Normalized product of the agents' distributions, computed in log space.
/// The chosen action is sampled.
pub fn boltzmann_multiplication<R: Rng + ?Sized>(
    input: &CombinerInput,
    rng: &mut R,
) -> CombinerOutput {
    let mut logs = vec![0.0; input.action_count];
    for row in &input.probabilities {
        for (l, p) in logs.iter_mut().zip(row) {
            *l += p.ln();
        }
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let fused = if max == f64::NEG_INFINITY {
        // Every product underflowed; the product of softmaxes is the softmax of summed preferences.
        let mut summed = vec![0.0; input.action_count];
        for row in &input.preferences {
            for (s, q) in summed.iter_mut().zip(row) {
                *s += q;
            }
        }
        boltzmann(&summed, input.temperature).expect("temperature validated at construction")
    } else {
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    };
    let chosen_action = sample_index(&fused, rng);
    CombinerOutput {
        chosen_action,
        fused_distribution: Some(fused),
    }
}

/// Inverse-CDF draw from a distribution.
pub fn sample_index<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, p) in dist.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    dist.iter()
        .rposition(|p| *p > 0.0)
        .unwrap_or(dist.len() - 1)
}
