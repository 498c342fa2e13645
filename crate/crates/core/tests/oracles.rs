use std::collections::HashMap;

use llm_ens::agents::{train_q_learning, AgentConfig};
use llm_ens::mdp::{corridor, dp_optimal_return, forage, lookup, Environment};
use llm_ens::runtime::run_single_agent_episode;

/// Undiscounted optimum by exhaustive forward search over cloned episodes,
/// memoized on the rendered frame (which shows the step, agent and pellets).
fn forward_search(env: &Environment, memo: &mut HashMap<String, f64>) -> f64 {
    if env.observation().done {
        return 0.0;
    }
    let key = env.render();
    if let Some(v) = memo.get(&key) {
        return *v;
    }
    let best = (0..env.spec().action_count)
        .map(|a| {
            let mut next = env.clone();
            let step = next.step(a).unwrap();
            step.reward + forward_search(&next, memo)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    memo.insert(key, best);
    best
}

#[test]
fn pinned_forage_optima() {
    let spec = lookup(forage::NAME).unwrap().with_hazard(false);
    let pinned = [35.0, 39.0, 30.0, 26.0];
    for (seed, expected) in pinned.iter().enumerate() {
        assert_eq!(dp_optimal_return(&spec, 1.0, seed as u64).unwrap(), *expected, "seed {seed}");
    }
}

#[test]
fn forward_search_agrees_with_dp() {
    let spec = lookup(forage::NAME).unwrap().with_hazard(false);
    let env = Environment::reset(&spec, 3).unwrap();
    assert_eq!(forward_search(&env, &mut HashMap::new()), dp_optimal_return(&spec, 1.0, 3).unwrap());

    let corridor = lookup(corridor::NAME).unwrap();
    let env = Environment::reset(&corridor, 0).unwrap();
    assert_eq!(forward_search(&env, &mut HashMap::new()), 11.0);
}

#[test]
fn trained_agent_never_beats_dp() {
    let spec = lookup(forage::NAME).unwrap().with_hazard(false);
    let config = AgentConfig { training_episodes: 500, ..AgentConfig::default() };
    for seed in 0..3 {
        let agent = train_q_learning(&spec, &config, seed).unwrap();
        let optimum = dp_optimal_return(&spec, 1.0, seed).unwrap();
        let achieved = run_single_agent_episode(&agent, &spec, seed).unwrap().episode_return;
        assert!(achieved <= optimum, "seed {seed}: {achieved} > {optimum}");
    }
}
