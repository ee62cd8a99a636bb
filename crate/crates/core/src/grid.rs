//! Grid environment: deterministic map, stochastic motion, noisy pose sensing.
//!
//! The map is fully known; uncertainty enters through the categorical motion
//! model (the robot drifts laterally with some probability) and through the
//! 3x3 pose-observation kernel. Moving off the map is equivalent to hitting
//! an obstacle.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const PROB_SUM_TOL: f64 = 1e-9;

/// A grid position (row 0 is the top row).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terrain {
    Free,
    Obstacle,
}

/// One of the four cardinal motion directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    /// (row delta, col delta) of one step in this direction.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Direction::North => (-1, 0),
            Direction::East => (0, 1),
            Direction::South => (1, 0),
            Direction::West => (0, -1),
        }
    }

    pub fn left(self) -> Direction {
        match self {
            Direction::North => Direction::West,
            Direction::West => Direction::South,
            Direction::South => Direction::East,
            Direction::East => Direction::North,
        }
    }

    pub fn right(self) -> Direction {
        self.left().left().left()
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Direction::North => "N",
            Direction::East => "E",
            Direction::South => "S",
            Direction::West => "W",
        };
        f.write_str(s)
    }
}

/// Categorical motion noise: the commanded step lands forward, or drifts to
/// the laterally adjacent cell on either side of the current cell.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TransitionNoise {
    pub p_forward: f64,
    pub p_left: f64,
    pub p_right: f64,
}

impl TransitionNoise {
    pub fn new(p_forward: f64, p_left: f64, p_right: f64) -> Result<Self, MapError> {
        let probs = [p_forward, p_left, p_right];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p) || !p.is_finite()) {
            return Err(MapError::BadProbability);
        }
        if (p_forward + p_left + p_right - 1.0).abs() > PROB_SUM_TOL {
            return Err(MapError::BadProbability);
        }
        Ok(TransitionNoise {
            p_forward,
            p_left,
            p_right,
        })
    }

    /// Splits the non-forward mass evenly between the two drift sides.
    pub fn with_forward(p_forward: f64) -> Result<Self, MapError> {
        let side = (1.0 - p_forward) / 2.0;
        TransitionNoise::new(p_forward, side, side)
    }

    pub fn deterministic() -> Self {
        TransitionNoise {
            p_forward: 1.0,
            p_left: 0.0,
            p_right: 0.0,
        }
    }
}

impl Default for TransitionNoise {
    fn default() -> Self {
        TransitionNoise {
            p_forward: 0.8,
            p_left: 0.1,
            p_right: 0.1,
        }
    }
}

/// 3x3 pose-observation kernel centered on the true cell. `kernel[1][1]` is
/// the probability of observing the true position.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ObservationNoise {
    pub kernel: [[f64; 3]; 3],
}

impl ObservationNoise {
    pub fn new(kernel: [[f64; 3]; 3]) -> Result<Self, MapError> {
        let mut sum = 0.0;
        for row in &kernel {
            for &p in row {
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    return Err(MapError::BadProbability);
                }
                sum += p;
            }
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(MapError::BadProbability);
        }
        Ok(ObservationNoise { kernel })
    }

    /// Kernel with `center` mass on the true cell and the remainder split
    /// evenly over the eight neighbors.
    pub fn peaked(center: f64) -> Result<Self, MapError> {
        if !(0.0..=1.0).contains(&center) {
            return Err(MapError::BadProbability);
        }
        let side = (1.0 - center) / 8.0;
        let mut kernel = [[side; 3]; 3];
        kernel[1][1] = center;
        ObservationNoise::new(kernel)
    }

    /// The identity kernel: always observe the true position.
    pub fn noiseless() -> Self {
        let mut kernel = [[0.0; 3]; 3];
        kernel[1][1] = 1.0;
        ObservationNoise { kernel }
    }

    /// Likelihood of observing `obs` from true position `pose` (unnormalized
    /// at map borders; zero outside the 3x3 support).
    pub fn likelihood(&self, pose: Cell, obs: Cell) -> f64 {
        let dr = obs.row as i64 - pose.row as i64;
        let dc = obs.col as i64 - pose.col as i64;
        if dr.abs() > 1 || dc.abs() > 1 {
            return 0.0;
        }
        self.kernel[(dr + 1) as usize][(dc + 1) as usize]
    }
}

impl Default for ObservationNoise {
    fn default() -> Self {
        ObservationNoise::peaked(0.68).expect("default kernel is valid")
    }
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("map has no rows")]
    Empty,
    #[error("line {line}: row length {found} differs from first row length {expected}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {col}: unexpected character {ch:?}")]
    BadCharacter { line: usize, col: usize, ch: char },
    #[error("line {line}, column {col}: duplicate start cell")]
    DuplicateStart { line: usize, col: usize },
    #[error("no start cell")]
    NoStart,
    #[error("no goal cell")]
    NoGoal,
    #[error("probability out of range or components do not sum to 1")]
    BadProbability,
    #[error("cell {0} is not a free cell")]
    NotFree(Cell),
}

/// Occupancy grid with a start cell and a goal region.
#[derive(Clone, Debug)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<Terrain>,
    start: Cell,
    goal: Vec<Cell>,
}

impl GridMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn goal(&self) -> &[Cell] {
        &self.goal
    }

    pub fn in_bounds(&self, row: i64, col: i64) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    pub fn terrain(&self, cell: Cell) -> Terrain {
        self.cells[cell.row * self.width + cell.col]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.terrain(cell) == Terrain::Free
    }

    pub fn is_goal(&self, cell: Cell) -> bool {
        self.goal.contains(&cell)
    }

    /// The cell one step from `from` in `dir`, or `None` when the step leaves
    /// the map (off-map is treated as an obstacle by callers).
    pub fn offset(&self, from: Cell, dir: Direction) -> Option<Cell> {
        let (dr, dc) = dir.delta();
        let row = from.row as i64 + dr;
        let col = from.col as i64 + dc;
        if self.in_bounds(row, col) {
            Some(Cell::new(row as usize, col as usize))
        } else {
            None
        }
    }

    /// Iterates all free cells in row-major order.
    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |row| {
            (0..self.width)
                .map(move |col| Cell::new(row, col))
                .filter(|&c| self.is_free(c))
        })
    }

    /// Default episode step cap: 4 * (width + height).
    pub fn default_step_cap(&self) -> u32 {
        4 * (self.width + self.height) as u32
    }

    /// Copy of this map with a different start cell and single-cell goal.
    /// Used by campaigns that randomize endpoints per episode.
    pub fn with_endpoints(&self, start: Cell, goal: Cell) -> Result<GridMap, MapError> {
        if !self.is_free(start) {
            return Err(MapError::NotFree(start));
        }
        if !self.is_free(goal) {
            return Err(MapError::NotFree(goal));
        }
        let mut map = self.clone();
        map.start = start;
        map.goal = vec![goal];
        Ok(map)
    }
}

/// Episode status of the true robot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Active,
    ReachedGoal,
    Failed,
}

/// True state of the robot within one episode.
#[derive(Clone, Copy, Debug)]
pub struct EnvState {
    pub true_pose: Cell,
    pub status: Status,
    pub steps_taken: u32,
    pub step_cap: u32,
}

impl EnvState {
    /// Fresh state at the map's start cell with the map's default step cap.
    pub fn new(map: &GridMap) -> Self {
        EnvState::with_cap(map, map.default_step_cap())
    }

    pub fn with_cap(map: &GridMap, step_cap: u32) -> Self {
        EnvState {
            true_pose: map.start(),
            status: Status::Active,
            steps_taken: 0,
            step_cap,
        }
    }
}

/// Samples the realized motion direction for a commanded direction.
pub fn sample_motion(dir: Direction, noise: &TransitionNoise, rng: &mut ChaCha8Rng) -> Direction {
    let u: f64 = rng.random();
    if u < noise.p_forward {
        dir
    } else if u < noise.p_forward + noise.p_left {
        dir.left()
    } else {
        dir.right()
    }
}

/// Executes one motion command on the true state.
///
/// The realized step is forward with `p_forward`, into the left lateral
/// neighbor with `p_left`, and into the right lateral neighbor with `p_right`.
/// Landing on an obstacle or off the map fails the episode; landing on a goal
/// cell ends it successfully. Exceeding the step cap fails the episode.
pub fn step_move(
    state: EnvState,
    map: &GridMap,
    dir: Direction,
    noise: &TransitionNoise,
    rng: &mut ChaCha8Rng,
) -> EnvState {
    debug_assert_eq!(state.status, Status::Active);
    let mut next = state;
    next.steps_taken += 1;
    let realized = sample_motion(dir, noise, rng);
    match map.offset(state.true_pose, realized) {
        Some(cell) if map.is_free(cell) => {
            next.true_pose = cell;
            if map.is_goal(cell) {
                next.status = Status::ReachedGoal;
            } else if next.steps_taken > next.step_cap {
                next.status = Status::Failed;
            }
        }
        _ => {
            next.status = Status::Failed;
        }
    }
    next
}

/// Draws a noisy pose observation from the 3x3 kernel centered on the true
/// pose, renormalized over in-bounds cells.
pub fn observe_pose(
    state: &EnvState,
    noise: &ObservationNoise,
    map: &GridMap,
    rng: &mut ChaCha8Rng,
) -> Cell {
    debug_assert_eq!(state.status, Status::Active);
    let pose = state.true_pose;
    let mut support: Vec<(Cell, f64)> = Vec::with_capacity(9);
    let mut total = 0.0;
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            let p = noise.kernel[(dr + 1) as usize][(dc + 1) as usize];
            if p <= 0.0 {
                continue;
            }
            let row = pose.row as i64 + dr;
            let col = pose.col as i64 + dc;
            if map.in_bounds(row, col) {
                support.push((Cell::new(row as usize, col as usize), p));
                total += p;
            }
        }
    }
    debug_assert!(total > 0.0, "kernel support must intersect the map");
    let mut u: f64 = rng.random::<f64>() * total;
    for &(cell, p) in &support {
        if u < p {
            return cell;
        }
        u -= p;
    }
    support.last().expect("nonempty support").0
}

/// Parses the ASCII map format: `#` obstacle, `.` free, `S` start (exactly
/// one), `G` goal (one or more); all rows equal length.
pub fn load_map(text: &str) -> Result<GridMap, MapError> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(MapError::Empty);
    }
    let width = lines[0].chars().count();
    let height = lines.len();
    if width == 0 {
        return Err(MapError::Empty);
    }

    let mut cells = vec![Terrain::Free; width * height];
    let mut start = None;
    let mut goal = Vec::new();
    for (row, line) in lines.iter().enumerate() {
        let line = line.trim_end_matches('\r');
        let count = line.chars().count();
        if count != width {
            return Err(MapError::RaggedRow {
                line: row + 1,
                expected: width,
                found: count,
            });
        }
        for (col, ch) in line.chars().enumerate() {
            let cell = Cell::new(row, col);
            match ch {
                '#' => cells[row * width + col] = Terrain::Obstacle,
                '.' => {}
                'S' => {
                    if start.is_some() {
                        return Err(MapError::DuplicateStart {
                            line: row + 1,
                            col: col + 1,
                        });
                    }
                    start = Some(cell);
                }
                'G' => goal.push(cell),
                _ => {
                    return Err(MapError::BadCharacter {
                        line: row + 1,
                        col: col + 1,
                        ch,
                    })
                }
            }
        }
    }

    let start = start.ok_or(MapError::NoStart)?;
    if goal.is_empty() {
        return Err(MapError::NoGoal);
    }
    Ok(GridMap {
        width,
        height,
        cells,
        start,
        goal,
    })
}

/// Renders a map back to the ASCII format accepted by [`load_map`].
pub fn serialize_map(map: &GridMap) -> String {
    let mut out = String::with_capacity((map.width + 1) * map.height);
    for row in 0..map.height {
        for col in 0..map.width {
            let cell = Cell::new(row, col);
            let ch = if cell == map.start {
                'S'
            } else if map.is_goal(cell) {
                'G'
            } else if map.is_free(cell) {
                '.'
            } else {
                '#'
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}
