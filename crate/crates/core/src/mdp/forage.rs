//! FourRoomsForage: a 9x9 walled grid split into four 3x3 rooms joined by
//! doorways at (4,2), (2,4), (4,6) and (6,4).
//!
//! Rooms are numbered 1 (top-left), 2 (top-right), 3 (bottom-left) and
//! 4 (bottom-right). Doorway cells belong to the room above or to the left.
//! Each room owns two seeded pellet sites; every room starts with a pellet on
//! its first site. Eating a pellet moves it to a free site of the diagonally
//! opposite room, so the pellet count stays at four. A hazard random-walks over
//! rooms 3 and 4 and costs -1 on contact.

use std::collections::VecDeque;
use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::Rng;

use super::{ActionIndex, EnvKind, EnvSpec};
use crate::seeding::{stream_rng, SeededRng, WORLD_STREAM};

pub const NAME: &str = "four-rooms-forage";
pub const SIZE: u8 = 9;
pub const MAX_STEPS: u32 = 100;
pub const DOORWAYS: [Cell; 4] = [
    Cell::new(4, 2),
    Cell::new(2, 4),
    Cell::new(4, 6),
    Cell::new(6, 4),
];
pub const START: Cell = Cell::new(1, 1);

pub const UP: ActionIndex = 0;
pub const DOWN: ActionIndex = 1;
pub const LEFT: ActionIndex = 2;
pub const RIGHT: ActionIndex = 3;

const CELLS: u64 = (SIZE as u64) * (SIZE as u64);
const FREE_CELLS: u64 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: u8,
    pub col: u8,
}

impl Cell {
    pub const fn new(row: u8, col: u8) -> Self {
        Cell { row, col }
    }

    pub fn index(self) -> u64 {
        u64::from(self.row) * u64::from(SIZE) + u64::from(self.col)
    }

    pub fn from_index(index: u64) -> Self {
        Cell::new(
            (index / u64::from(SIZE)) as u8,
            (index % u64::from(SIZE)) as u8,
        )
    }

    fn manhattan(self, other: Cell) -> u32 {
        u32::from(self.row.abs_diff(other.row)) + u32::from(self.col.abs_diff(other.col))
    }

    fn offset(self, action: ActionIndex) -> Cell {
        match action {
            UP => Cell::new(self.row.saturating_sub(1), self.col),
            DOWN => Cell::new(self.row + 1, self.col),
            LEFT => Cell::new(self.row, self.col.saturating_sub(1)),
            RIGHT => Cell::new(self.row, self.col + 1),
            _ => self,
        }
    }
}

pub fn is_wall(cell: Cell) -> bool {
    let Cell { row, col } = cell;
    if row == 0 || col == 0 || row >= SIZE - 1 || col >= SIZE - 1 {
        return true;
    }
    (row == 4 || col == 4) && !DOORWAYS.contains(&cell)
}

/// Room index 1..=4 for any cell; meaningful for free cells.
pub fn room_of(cell: Cell) -> u8 {
    1 + if cell.row > 4 { 2 } else { 0 } + if cell.col > 4 { 1 } else { 0 }
}

fn room_origin(room: u8) -> Cell {
    let row = if room >= 3 { 5 } else { 1 };
    let col = if room % 2 == 0 { 5 } else { 1 };
    Cell::new(row, col)
}

/// The nine interior cells of a room, row-major.
pub fn room_interior(room: u8) -> Vec<Cell> {
    let origin = room_origin(room);
    (0..3)
        .flat_map(|dr| (0..3).map(move |dc| Cell::new(origin.row + dr, origin.col + dc)))
        .collect()
}

fn opposite_room(room: u8) -> u8 {
    5 - room
}

pub fn hazard_region() -> Vec<Cell> {
    free_cells()
        .into_iter()
        .filter(|c| room_of(*c) >= 3)
        .collect()
}

pub fn free_cells() -> Vec<Cell> {
    (0..SIZE)
        .flat_map(|r| (0..SIZE).map(move |c| Cell::new(r, c)))
        .filter(|c| !is_wall(*c))
        .collect()
}

struct Geometry {
    /// Row-major rank of each free cell; walls map to `u8::MAX`.
    free_rank: [u8; CELLS as usize],
    /// Shortest walking distance between cells, `u8::MAX` when unreachable.
    distances: Vec<[u8; CELLS as usize]>,
}

fn geometry() -> &'static Geometry {
    static GEOMETRY: OnceLock<Geometry> = OnceLock::new();
    GEOMETRY.get_or_init(|| {
        let mut free_rank = [u8::MAX; CELLS as usize];
        for (rank, cell) in free_cells().into_iter().enumerate() {
            free_rank[cell.index() as usize] = rank as u8;
        }
        let distances = (0..CELLS).map(|i| walking_distances(Cell::from_index(i))).collect();
        Geometry { free_rank, distances }
    })
}

fn walking_distances(source: Cell) -> [u8; CELLS as usize] {
    let mut dist = [u8::MAX; CELLS as usize];
    if is_wall(source) {
        return dist;
    }
    dist[source.index() as usize] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(cell) = queue.pop_front() {
        for action in [UP, DOWN, LEFT, RIGHT] {
            let next = cell.offset(action);
            if !is_wall(next) && dist[next.index() as usize] == u8::MAX {
                dist[next.index() as usize] = dist[cell.index() as usize] + 1;
                queue.push_back(next);
            }
        }
    }
    dist
}

/// Seeded pellet sites: `sites[room - 1] = [first, second]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub sites: [[Cell; 2]; 4],
}

impl Layout {
    fn generate(rng: &mut SeededRng) -> Self {
        let mut sites = [[START; 2]; 4];
        for room in 1..=4u8 {
            let candidates: Vec<Cell> = room_interior(room)
                .into_iter()
                .filter(|c| *c != START)
                .collect();
            let picked = sample(rng, candidates.len(), 2);
            sites[usize::from(room - 1)] =
                [candidates[picked.index(0)], candidates[picked.index(1)]];
        }
        Layout { sites }
    }

    /// The layout an episode with this seed would use.
    pub fn from_seed(seed: u64) -> Self {
        Layout::generate(&mut stream_rng(seed, WORLD_STREAM))
    }

    pub fn site(&self, bit: usize) -> Cell {
        self.sites[bit / 2][bit % 2]
    }

    /// Occupancy mask with a pellet on every room's first site.
    pub fn initial_pellets(&self) -> u8 {
        0b0101_0101
    }

    pub fn pellet_cells(&self, pellets: u8) -> impl Iterator<Item = Cell> + '_ {
        (0..8)
            .filter(move |bit| pellets & (1 << bit) != 0)
            .map(|bit| self.site(bit))
    }
}

/// Hazard-free dynamics: agent move plus pellet consumption and respawn.
pub fn transition(
    layout: &Layout,
    agent: Cell,
    pellets: u8,
    action: ActionIndex,
) -> (Cell, u8, f64) {
    let target = agent.offset(action);
    let agent = if is_wall(target) { agent } else { target };
    let Some(bit) = (0..8).find(|&bit| pellets & (1 << bit) != 0 && layout.site(bit) == agent)
    else {
        return (agent, pellets, 0.0);
    };
    let mut pellets = pellets & !(1 << bit);
    let dest = usize::from(opposite_room(room_of(agent)) - 1) * 2;
    // The opposite room holds at most one pellet here, so one site is free.
    let respawn = if pellets & (1 << (dest + 1)) == 0 {
        dest + 1
    } else {
        dest
    };
    pellets |= 1 << respawn;
    (agent, pellets, 1.0)
}

pub fn spec() -> EnvSpec {
    EnvSpec {
        name: NAME.to_string(),
        display_name: "FourRoomsForage".to_string(),
        kind: EnvKind::FourRoomsForage { hazard: true },
        action_count: 4,
        action_names: ["UP", "DOWN", "LEFT", "RIGHT"].iter().map(|s| s.to_string()).collect(),
        task_details: "moves through a 9 by 9 grid made of four 3 by 3 rooms (1 top-left, 2 top-right, \
                       3 bottom-left, 4 bottom-right) connected by single-cell doorways, collecting pellets \
                       while a hazard wanders through the two bottom rooms"
            .to_string(),
        action_details: "four discrete actions, UP (0), DOWN (1), LEFT (2) and RIGHT (3); moving into a wall \
                         leaves the agent in place"
            .to_string(),
        reward_details: "+1 for each pellet eaten, after which the pellet reappears in the diagonally opposite \
                         room, and -1 whenever the hazard touches the agent"
            .to_string(),
        end_conditions: "100 steps have elapsed".to_string(),
        goal_details: "eat as many pellets as possible while avoiding the hazard".to_string(),
        max_steps: MAX_STEPS,
        oracle_situation_count: 4,
        state_count: CELLS * FREE_CELLS * 2,
    }
}

/// Agent cell encoded in an observation id.
pub fn decode_agent(state_id: u64) -> Cell {
    Cell::from_index(state_id % CELLS)
}

#[derive(Debug, Clone)]
pub struct ForageWorld {
    layout: Layout,
    agent: Cell,
    pellets: u8,
    hazard: Option<Cell>,
    rng: SeededRng,
}

impl ForageWorld {
    pub fn new(seed: u64, hazard_enabled: bool) -> Self {
        let mut rng = stream_rng(seed, WORLD_STREAM);
        let layout = Layout::generate(&mut rng);
        let pellets = layout.initial_pellets();
        let hazard = hazard_enabled.then(|| {
            let occupied: Vec<Cell> = layout.pellet_cells(pellets).collect();
            let spots: Vec<Cell> = hazard_region()
                .into_iter()
                .filter(|c| !occupied.contains(c))
                .collect();
            spots[rng.gen_range(0..spots.len())]
        });
        ForageWorld {
            layout,
            agent: START,
            pellets,
            hazard,
            rng,
        }
    }

    pub fn agent(&self) -> Cell {
        self.agent
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn hazard(&self) -> Option<Cell> {
        self.hazard
    }

    pub fn step(&mut self, action: ActionIndex) -> f64 {
        let (agent, pellets, mut reward) =
            transition(&self.layout, self.agent, self.pellets, action);
        self.agent = agent;
        self.pellets = pellets;
        if let Some(before) = self.hazard {
            let moves = [None, Some(UP), Some(DOWN), Some(LEFT), Some(RIGHT)];
            let after = match moves[self.rng.gen_range(0..moves.len())] {
                Some(dir) => {
                    let next = before.offset(dir);
                    if is_wall(next) || room_of(next) < 3 {
                        before
                    } else {
                        next
                    }
                }
                None => before,
            };
            self.hazard = Some(after);
            if agent == before || agent == after {
                reward -= 1.0;
            }
        }
        reward
    }

    /// Observation id: agent cell, the nearest pellet by walking distance
    /// (as a rank among free cells) and whether the hazard is within one cell.
    pub fn encode(&self) -> u64 {
        let geometry = geometry();
        let from = geometry.distances[self.agent.index() as usize];
        let nearest = self
            .layout
            .pellet_cells(self.pellets)
            .min_by_key(|c| (from[c.index() as usize], *c))
            .expect("four pellets are always present");
        let pellet_code = u64::from(geometry.free_rank[nearest.index() as usize]);
        let hazard_near = self.hazard.is_some_and(|h| h.manhattan(self.agent) <= 1);
        self.agent.index() + CELLS * (pellet_code + FREE_CELLS * u64::from(hazard_near))
    }

    pub fn render(&self, step_index: u32, max_steps: u32) -> String {
        let pellets: Vec<Cell> = self.layout.pellet_cells(self.pellets).collect();
        let mut out = format!("FourRoomsForage, step {step_index} of {max_steps}.\n");
        for row in 0..SIZE {
            for col in 0..SIZE {
                let cell = Cell::new(row, col);
                let glyph = if cell == self.agent {
                    'A'
                } else if self.hazard == Some(cell) {
                    'H'
                } else if pellets.contains(&cell) {
                    'o'
                } else if is_wall(cell) {
                    '#'
                } else {
                    '.'
                };
                out.push(glyph);
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "Agent at row {}, column {}.\n",
            self.agent.row, self.agent.col
        ));
        out.push_str("Legend: A agent, o pellet, H hazard, # wall, . floor.\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Environment;

    #[test]
    fn wall_layout() {
        assert_eq!(free_cells().len(), 40);
        for door in DOORWAYS {
            assert!(!is_wall(door));
        }
        assert!(is_wall(Cell::new(4, 4)));
        assert!(is_wall(Cell::new(4, 1)));
        assert_eq!(room_of(Cell::new(7, 7)), 4);
        assert_eq!(room_of(Cell::new(1, 1)), 1);
        assert_eq!(room_of(Cell::new(6, 4)), 3);
        assert_eq!(room_of(Cell::new(4, 6)), 2);
    }

    #[test]
    fn seed_three_start_state() {
        // Recorded from the seeded layout generator.
        let env = Environment::reset(&spec(), 3).unwrap();
        let obs = env.observation();
        assert_eq!(decode_agent(obs.state_id), START);
        assert_eq!(obs.step_index, 0);
        let layout = Layout::from_seed(3);
        assert_eq!(layout, Layout::from_seed(3));
        let world = ForageWorld::new(3, true);
        assert_eq!(world.layout(), &layout);
        assert!(layout
            .sites
            .iter()
            .all(|[a, b]| a != b && *a != START && *b != START));
    }

    #[test]
    fn start_render_has_one_agent_and_four_pellets() {
        for seed in 0..20 {
            let text = Environment::reset(&spec(), seed).unwrap().render();
            let grid: Vec<&str> = text.lines().skip(1).take(9).collect();
            assert!(grid.iter().all(|l| l.len() == 9));
            let count = |g: char| grid.iter().map(|l| l.matches(g).count()).sum::<usize>();
            assert_eq!(count('A'), 1);
            assert_eq!(count('o'), 4);
            assert_eq!(count('H'), 1);
        }
    }

    #[test]
    fn pellet_respawns_opposite() {
        let layout = Layout::from_seed(0);
        let pellets = layout.initial_pellets();
        let site = layout.sites[0][0];
        // Step onto the room-1 pellet from a neighbouring free cell.
        let (from, action) = [(UP, 1i8, 0i8), (DOWN, -1, 0), (LEFT, 0, 1), (RIGHT, 0, -1)]
            .iter()
            .map(|&(a, dr, dc)| {
                (
                    Cell::new((site.row as i8 + dr) as u8, (site.col as i8 + dc) as u8),
                    a,
                )
            })
            .find(|(c, _)| !is_wall(*c) && room_of(*c) == 1)
            .unwrap();
        let (agent, after, reward) = transition(&layout, from, pellets, action);
        assert_eq!((agent, reward), (site, 1.0));
        assert_eq!(after.count_ones(), 4);
        assert_eq!(after & 0b11, 0);
        assert_eq!(after & (0b11 << 6), 0b11 << 6);
    }

    #[test]
    fn encoding_tracks_nearest_pellet() {
        let geometry = geometry();
        assert_eq!(geometry.distances[START.index() as usize][Cell::new(1, 2).index() as usize], 1);
        // Via the (2,4) doorway.
        assert_eq!(geometry.distances[START.index() as usize][Cell::new(1, 7).index() as usize], 8);
        let world = ForageWorld::new(3, false);
        let id = world.encode();
        assert_eq!(decode_agent(id), START);
        assert!(id < spec().state_count);
        let code = (id / CELLS) % FREE_CELLS;
        let target = free_cells()[code as usize];
        assert!(world.layout().pellet_cells(world.pellets).any(|c| c == target));
        let best = world
            .layout()
            .pellet_cells(world.pellets)
            .map(|c| geometry.distances[START.index() as usize][c.index() as usize])
            .min()
            .unwrap();
        assert_eq!(geometry.distances[START.index() as usize][target.index() as usize], best);
    }

    #[test]
    fn hazard_stays_in_bottom_rooms() {
        let mut env = Environment::reset(&spec(), 11).unwrap();
        let mut world = ForageWorld::new(11, true);
        for t in 0..100 {
            let r = env.step(t % 4).unwrap();
            world.step(t % 4);
            assert!([-1.0, 0.0, 1.0].contains(&r.reward));
            let h = world.hazard().unwrap();
            assert!(room_of(h) >= 3 && !is_wall(h));
        }
        assert!(env.observation().done);
    }
}
