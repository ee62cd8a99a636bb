//! Low-level planning: shortest paths on the free-space graph, per-step
//! motion commands, and randomized start/goal generation.
//!
//! All search is 4-connected breadth-first search with a fixed neighbor order
//! (North, East, South, West) so that results are deterministic.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{Cell, Direction, GridMap};

#[derive(Debug, Error)]
pub enum NavError {
    #[error("no path from {0} to the goal set")]
    Unreachable(Cell),
    #[error("path has no remaining waypoint to steer toward")]
    PathExhausted,
    #[error("no free cell pair with separation >= {0} found")]
    NoQualifyingPair(usize),
}

/// An ordered sequence of 4-adjacent free cells ending in a goal cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    waypoints: VecDeque<Cell>,
}

impl Path {
    pub fn from_waypoints(waypoints: Vec<Cell>) -> Self {
        Path {
            waypoints: waypoints.into(),
        }
    }

    pub fn waypoints(&self) -> impl Iterator<Item = Cell> + '_ {
        self.waypoints.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Number of steps along the path (waypoints minus one).
    pub fn steps(&self) -> usize {
        self.waypoints.len().saturating_sub(1)
    }

    pub fn first(&self) -> Option<Cell> {
        self.waypoints.front().copied()
    }

    pub fn last(&self) -> Option<Cell> {
        self.waypoints.back().copied()
    }

    /// Drops the first waypoint. A single-waypoint path is left unchanged.
    pub fn truncate(&mut self) {
        if self.waypoints.len() >= 2 {
            self.waypoints.pop_front();
        }
    }
}

/// Direction of the single step from `a` to a 4-adjacent cell `b`.
fn direction_between(a: Cell, b: Cell) -> Option<Direction> {
    let dr = b.row as i64 - a.row as i64;
    let dc = b.col as i64 - a.col as i64;
    match (dr, dc) {
        (-1, 0) => Some(Direction::North),
        (0, 1) => Some(Direction::East),
        (1, 0) => Some(Direction::South),
        (0, -1) => Some(Direction::West),
        _ => None,
    }
}

struct BfsResult {
    dist: Vec<u32>,
    parent: Vec<u32>,
    reached: Option<Cell>,
}

const UNVISITED: u32 = u32::MAX;

/// BFS over free cells from `from`, stopping at the first goal dequeued.
/// When `goals` is empty the whole component is explored.
fn bfs(map: &GridMap, from: Cell, goals: &[Cell]) -> BfsResult {
    let size = map.width() * map.height();
    let mut dist = vec![UNVISITED; size];
    let mut parent = vec![UNVISITED; size];
    let idx = |c: Cell| c.row * map.width() + c.col;

    let mut queue = VecDeque::new();
    dist[idx(from)] = 0;
    queue.push_back(from);
    let mut reached = None;
    if goals.contains(&from) {
        reached = Some(from);
    }
    while let Some(cell) = queue.pop_front() {
        if reached.is_some() {
            break;
        }
        for dir in Direction::ALL {
            let Some(next) = map.offset(cell, dir) else {
                continue;
            };
            if !map.is_free(next) || dist[idx(next)] != UNVISITED {
                continue;
            }
            dist[idx(next)] = dist[idx(cell)] + 1;
            parent[idx(next)] = idx(cell) as u32;
            if goals.contains(&next) {
                reached = Some(next);
                break;
            }
            queue.push_back(next);
        }
    }
    BfsResult {
        dist,
        parent,
        reached,
    }
}

/// Minimum-step 4-connected obstacle-free path from `from` to the nearest
/// cell in `goals`.
pub fn shortest_path(map: &GridMap, from: Cell, goals: &[Cell]) -> Result<Path, NavError> {
    debug_assert!(map.is_free(from));
    let r = bfs(map, from, goals);
    let Some(goal) = r.reached else {
        return Err(NavError::Unreachable(from));
    };
    let mut waypoints = vec![goal];
    let mut at = goal.row * map.width() + goal.col;
    while r.parent[at] != UNVISITED {
        at = r.parent[at] as usize;
        waypoints.push(Cell::new(at / map.width(), at % map.width()));
    }
    waypoints.reverse();
    Ok(Path::from_waypoints(waypoints))
}

/// BFS step distance from `from` to the nearest cell in `goals`, if reachable.
pub fn bfs_distance(map: &GridMap, from: Cell, goals: &[Cell]) -> Option<usize> {
    let r = bfs(map, from, goals);
    r.reached
        .map(|g| r.dist[g.row * map.width() + g.col] as usize)
}

/// Motion command steering the belief mean toward the path's next waypoint.
///
/// The next waypoint is `waypoints[1]`; waypoints the mean has already
/// reached are dropped first (implicit truncation). When the mean is not
/// adjacent to the next waypoint, the command is the first step of a BFS
/// path from the mean to it.
pub fn next_command(path: &mut Path, map: &GridMap, mean: Cell) -> Result<Direction, NavError> {
    let target = loop {
        if path.len() < 2 {
            return Err(NavError::PathExhausted);
        }
        let target = path.waypoints[1];
        if mean == target {
            path.waypoints.pop_front();
            continue;
        }
        break target;
    };
    if let Some(dir) = direction_between(mean, target) {
        return Ok(dir);
    }
    let detour = shortest_path(map, mean, &[target])?;
    let mut cells = detour.waypoints();
    let first = cells.next();
    let second = cells.next();
    match (first, second) {
        (Some(a), Some(b)) => Ok(direction_between(a, b).expect("BFS steps are adjacent")),
        _ => Err(NavError::Unreachable(mean)),
    }
}

/// Uniformly samples a (start, goal) pair of distinct free cells whose BFS
/// distance is at least `min_separation`. Rejection sampling with a bounded
/// retry budget.
pub fn random_start_goal(
    map: &GridMap,
    min_separation: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Cell, Cell), NavError> {
    let free: Vec<Cell> = map.free_cells().collect();
    if free.len() < 2 {
        return Err(NavError::NoQualifyingPair(min_separation));
    }
    for _ in 0..10_000 {
        let a = free[rng.random_range(0..free.len())];
        let b = free[rng.random_range(0..free.len())];
        if a == b {
            continue;
        }
        if let Some(d) = bfs_distance(map, a, &[b]) {
            if d >= min_separation {
                return Ok((a, b));
            }
        }
    }
    Err(NavError::NoQualifyingPair(min_separation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_map;
    use crate::seeded_rng;

    #[test]
    fn path_to_adjacent_goal() {
        let map = load_map("SG.\n...\n...").unwrap();
        let path = shortest_path(&map, map.start(), map.goal()).unwrap();
        let wps: Vec<Cell> = path.waypoints().collect();
        assert_eq!(wps, vec![Cell::new(0, 0), Cell::new(0, 1)]);
        assert_eq!(path.steps(), 1);
    }

    #[test]
    fn path_from_goal_is_single_waypoint() {
        let map = load_map("SG.\n...\n...").unwrap();
        let path = shortest_path(&map, Cell::new(0, 1), map.goal()).unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(path.steps(), 0);
    }

    #[test]
    fn unreachable_goal_is_an_error() {
        let map = load_map("S#G").unwrap();
        assert!(matches!(
            shortest_path(&map, map.start(), map.goal()),
            Err(NavError::Unreachable(_))
        ));
        assert_eq!(bfs_distance(&map, map.start(), map.goal()), None);
    }

    #[test]
    fn path_routes_around_obstacles() {
        let map = load_map("S#G\n...\n...").unwrap();
        let path = shortest_path(&map, map.start(), map.goal()).unwrap();
        assert_eq!(path.steps(), 4);
        // Consecutive waypoints are adjacent and free.
        let wps: Vec<Cell> = path.waypoints().collect();
        for pair in wps.windows(2) {
            assert!(direction_between(pair[0], pair[1]).is_some());
            assert!(map.is_free(pair[1]));
        }
        assert_eq!(wps.last(), Some(&Cell::new(0, 2)));
    }

    #[test]
    fn command_toward_adjacent_waypoint() {
        let map = load_map("....\n.S..\n...G").unwrap();
        let mut path = Path::from_waypoints(vec![Cell::new(1, 1), Cell::new(1, 2)]);
        let dir = next_command(&mut path, &map, Cell::new(1, 1)).unwrap();
        assert_eq!(dir, Direction::East);
    }

    #[test]
    fn command_via_bfs_when_mean_off_path() {
        // Mean two cells north of the next waypoint: first BFS step is South.
        let map = load_map("S...\n....\n....\n...G").unwrap();
        let mut path = Path::from_waypoints(vec![Cell::new(2, 2), Cell::new(3, 2)]);
        let dir = next_command(&mut path, &map, Cell::new(1, 2)).unwrap();
        assert_eq!(dir, Direction::South);
    }

    #[test]
    fn implicit_truncation_when_mean_reached_waypoint() {
        let map = load_map("S...\n....\n....\n...G").unwrap();
        let mut path = Path::from_waypoints(vec![
            Cell::new(0, 0),
            Cell::new(0, 1),
            Cell::new(0, 2),
        ]);
        let dir = next_command(&mut path, &map, Cell::new(0, 1)).unwrap();
        assert_eq!(dir, Direction::East);
        assert_eq!(path.len(), 2); // [b, c]
    }

    #[test]
    fn exhausted_path_is_an_error() {
        let map = load_map("SG").unwrap();
        let mut path = Path::from_waypoints(vec![Cell::new(0, 1)]);
        assert!(matches!(
            next_command(&mut path, &map, Cell::new(0, 1)),
            Err(NavError::PathExhausted)
        ));
        // Two waypoints but the mean already sits on the last one.
        let mut path = Path::from_waypoints(vec![Cell::new(0, 0), Cell::new(0, 1)]);
        assert!(matches!(
            next_command(&mut path, &map, Cell::new(0, 1)),
            Err(NavError::PathExhausted)
        ));
    }

    #[test]
    fn truncate_drops_front_only_when_long_enough() {
        let a = Cell::new(0, 0);
        let b = Cell::new(0, 1);
        let c = Cell::new(0, 2);
        let mut path = Path::from_waypoints(vec![a, b, c]);
        path.truncate();
        assert_eq!(path.waypoints().collect::<Vec<_>>(), vec![b, c]);
        path.truncate();
        assert_eq!(path.waypoints().collect::<Vec<_>>(), vec![c]);
        path.truncate();
        assert_eq!(path.waypoints().collect::<Vec<_>>(), vec![c]);
    }

    #[test]
    fn random_pair_respects_separation() {
        let mut text = String::new();
        for row in 0..30 {
            for col in 0..30 {
                text.push(match (row, col) {
                    (0, 0) => 'S',
                    (29, 29) => 'G',
                    _ => '.',
                });
            }
            text.push('\n');
        }
        let map = load_map(&text).unwrap();
        let mut rng = seeded_rng(9, 0);
        for _ in 0..20 {
            let (a, b) = random_start_goal(&map, 25, &mut rng).unwrap();
            assert!(bfs_distance(&map, a, &[b]).unwrap() >= 25);
        }
        // min_separation = 0 accepts any distinct free pair.
        let (a, b) = random_start_goal(&map, 0, &mut rng).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn impossible_separation_is_a_configuration_error() {
        let map = load_map("S.G").unwrap();
        let mut rng = seeded_rng(10, 0);
        assert!(matches!(
            random_start_goal(&map, 50, &mut rng),
            Err(NavError::NoQualifyingPair(50))
        ));
    }
}
