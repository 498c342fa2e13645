//! Exact finite-horizon dynamic programming over the deterministic fragment
//! of each environment.

use super::corridor;
use super::forage::{self, Cell, Layout};
use super::{EnvKind, EnvSpec, MdpError};

/// Optimal return from the start state under discount `gamma`, by backward
/// induction over `max_steps` stages. `seed` selects the gridworld layout and
/// is ignored by the corridor.
pub fn dp_optimal_return(spec: &EnvSpec, gamma: f64, seed: u64) -> Result<f64, MdpError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(MdpError::InvalidDiscount(gamma));
    }
    match spec.kind {
        EnvKind::TwoZoneCorridor => Ok(corridor_value(spec, gamma)),
        EnvKind::FourRoomsForage { hazard: true } => Err(MdpError::StochasticDynamics(
            "the hazard random walk has no exact DP solution here; disable it first".into(),
        )),
        EnvKind::FourRoomsForage { hazard: false } => {
            Ok(forage_value(spec, gamma, &Layout::from_seed(seed)))
        }
    }
}

fn corridor_value(spec: &EnvSpec, gamma: f64) -> f64 {
    let states = corridor::TERMINAL as usize + 1;
    // value[s] = optimal value with the remaining horizon.
    let mut value = vec![0.0; states];
    for _ in 0..spec.max_steps {
        let mut next = vec![0.0; states];
        for (s, v) in next.iter_mut().enumerate().take(states - 1) {
            *v = (0..spec.action_count)
                .map(|a| corridor::reward(s as u32, a) + gamma * value[s + 1])
                .fold(f64::NEG_INFINITY, f64::max);
        }
        value = next;
    }
    value[0]
}

fn forage_value(spec: &EnvSpec, gamma: f64, layout: &Layout) -> f64 {
    let cells = (forage::SIZE as usize).pow(2);
    let masks = 256;
    let free: Vec<Cell> = forage::free_cells();
    let at = |cell: Cell, mask: u8| cell.index() as usize * masks + usize::from(mask);
    let mut value = vec![0.0; cells * masks];
    for _ in 0..spec.max_steps {
        let mut next = vec![0.0; cells * masks];
        for &cell in &free {
            for mask in 0..=255u8 {
                next[at(cell, mask)] = (0..spec.action_count)
                    .map(|a| {
                        let (to, after, reward) = forage::transition(layout, cell, mask, a);
                        reward + gamma * value[at(to, after)]
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
        value = next;
    }
    value[at(forage::START, layout.initial_pellets())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::lookup;

    #[test]
    fn corridor_optimum() {
        let spec = lookup(corridor::NAME).unwrap();
        assert_eq!(dp_optimal_return(&spec, 1.0, 0).unwrap(), 11.0);
        assert_eq!(dp_optimal_return(&spec, 0.0, 0).unwrap(), 1.0);
        let half = dp_optimal_return(&spec, 0.5, 0).unwrap();
        let expected: f64 = (0..11).map(|k| 0.5f64.powi(k)).sum();
        assert!((half - expected).abs() < 1e-12);
    }

    #[test]
    fn hazard_and_bad_gamma_rejected() {
        let spec = lookup(forage::NAME).unwrap();
        assert!(matches!(
            dp_optimal_return(&spec, 1.0, 0),
            Err(MdpError::StochasticDynamics(_))
        ));
        assert!(matches!(
            dp_optimal_return(&spec, 1.5, 0),
            Err(MdpError::InvalidDiscount(_))
        ));
    }
}
