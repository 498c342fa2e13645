//! TwoZoneCorridor: states 0..=11, Zone A = 0..=5, Zone B = 6..=10, 11 terminal.
//! Both actions advance one cell; FORWARD pays in Zone A, JUMP pays in Zone B.

use super::{ActionIndex, EnvKind, EnvSpec};

pub const NAME: &str = "two-zone-corridor";
pub const FORWARD: ActionIndex = 0;
pub const JUMP: ActionIndex = 1;
pub const TERMINAL: u32 = 11;
pub const ZONE_A_LAST: u32 = 5;
pub const MAX_STEPS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zone {
    A,
    B,
    Exit,
}

pub fn zone(position: u32) -> Zone {
    match position {
        p if p <= ZONE_A_LAST => Zone::A,
        p if p < TERMINAL => Zone::B,
        _ => Zone::Exit,
    }
}

pub fn reward(position: u32, action: ActionIndex) -> f64 {
    match (zone(position), action) {
        (Zone::A, FORWARD) | (Zone::B, JUMP) => 1.0,
        _ => 0.0,
    }
}

pub fn spec() -> EnvSpec {
    EnvSpec {
        name: NAME.to_string(),
        display_name: "TwoZoneCorridor".to_string(),
        kind: EnvKind::TwoZoneCorridor,
        action_count: 2,
        action_names: vec!["FORWARD".to_string(), "JUMP".to_string()],
        task_details: "walks along a one-dimensional corridor of 12 positions numbered 0 to 11, starting at \
                       position 0, where positions 0 to 5 form Zone A and positions 6 to 10 form Zone B"
            .to_string(),
        action_details: "two discrete actions, FORWARD (0) and JUMP (1), each of which moves the agent one \
                         position ahead"
            .to_string(),
        reward_details: "+1 for choosing FORWARD while in Zone A or JUMP while in Zone B, and 0 otherwise"
            .to_string(),
        end_conditions: "the agent reaches position 11 or 30 steps have elapsed".to_string(),
        goal_details: "collect as much reward as possible by matching the action to the current zone"
            .to_string(),
        max_steps: MAX_STEPS,
        oracle_situation_count: 2,
        state_count: u64::from(TERMINAL) + 1,
    }
}

pub fn render(position: u32, step_index: u32, max_steps: u32) -> String {
    let place = match zone(position) {
        Zone::A => format!("The agent is in Zone A, position {position}."),
        Zone::B => format!("The agent is in Zone B, position {position}."),
        Zone::Exit => format!("The agent has reached the exit, position {position}."),
    };
    let strip: String = (0..=TERMINAL)
        .map(|p| {
            let glyph = if p == position {
                '@'
            } else {
                match zone(p) {
                    Zone::A => 'a',
                    Zone::B => 'b',
                    Zone::Exit => 'E',
                }
            };
            match p {
                6 | 11 => format!("|{glyph}"),
                _ => glyph.to_string(),
            }
        })
        .collect();
    format!(
        "TwoZoneCorridor, step {step_index} of at most {max_steps}.\n{place}\nCorridor: {strip}\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_names_zone_and_position() {
        let text = render(3, 3, MAX_STEPS);
        assert!(text.contains("Zone A"));
        assert!(text.contains("position 3"));
        assert!(render(8, 8, MAX_STEPS).contains("Zone B"));
        assert!(text.contains("Corridor: aaa@aa|bbbbb|E"));
    }

    #[test]
    fn zone_boundaries() {
        assert_eq!(zone(5), Zone::A);
        assert_eq!(zone(6), Zone::B);
        assert_eq!(zone(10), Zone::B);
        assert_eq!(zone(11), Zone::Exit);
    }
}
