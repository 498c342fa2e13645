//! Situation-aware model ensembles for tabular reinforcement-learning agents.
//!
//! The pipeline classifies environment states into a small catalog of
//! situations, profiles how much reward each agent earns per situation, and
//! at run time hands control to the agent with the best profile for the
//! current situation. Five rule-based combiners serve as baselines.

pub mod agents;
pub mod combiners;
pub mod gateway;
pub mod harness;
pub mod mdp;
pub mod profile;
pub mod runtime;
pub mod seeding;
pub mod situations;
