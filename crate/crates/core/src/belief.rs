//! Particle-filter belief over the robot's cell.
//!
//! The filter reuses the environment's categorical motion sampler for
//! propagation. A particle whose draw lands on an obstacle (or off the map)
//! keeps its pose and is flagged collided; the collided fraction is the
//! planner's risk signal. Observation updates reweight by the 3x3 kernel
//! likelihood, resample systematically, and clear all collided flags.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{sample_motion, Cell, Direction, GridMap, ObservationNoise, TransitionNoise};
use crate::nav;

/// Default particle count.
pub const DEFAULT_PARTICLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Particle {
    pub pose: Cell,
    pub collided: bool,
}

/// Fixed-size particle set.
#[derive(Clone, Debug)]
pub struct Belief {
    particles: Vec<Particle>,
}

/// The 2-D observation fed to every high-level planner: predicted collision
/// probability and step distance from the belief mean to the goal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerObservation {
    pub p_hat: f64,
    pub d_hat: usize,
}

impl Belief {
    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn collided_count(&self) -> usize {
        self.particles.iter().filter(|p| p.collided).count()
    }

    pub fn collided_fraction(&self) -> f64 {
        self.collided_count() as f64 / self.particles.len() as f64
    }
}

/// All `n` particles at `start`, none collided.
pub fn init_belief(start: Cell, n: usize) -> Belief {
    assert!(n >= 1, "a belief needs at least one particle");
    Belief {
        particles: vec![
            Particle {
                pose: start,
                collided: false,
            };
            n
        ],
    }
}

/// Advances every non-collided particle by one independent draw of the
/// motion model. Draws that land on an obstacle or off-map leave the pose in
/// place and set the collided flag; collided particles do not move.
pub fn propagate(
    b: &Belief,
    map: &GridMap,
    dir: Direction,
    noise: &TransitionNoise,
    rng: &mut ChaCha8Rng,
) -> Belief {
    let particles = b
        .particles
        .iter()
        .map(|p| {
            if p.collided {
                return *p;
            }
            let realized = sample_motion(dir, noise, rng);
            match map.offset(p.pose, realized) {
                Some(cell) if map.is_free(cell) => Particle {
                    pose: cell,
                    collided: false,
                },
                _ => Particle {
                    pose: p.pose,
                    collided: true,
                },
            }
        })
        .collect();
    Belief { particles }
}

/// Observation update: weight non-collided particles by the kernel
/// likelihood of `obs`, systematically resample back to the original count,
/// and clear all collided flags. If every weight is zero the belief
/// reinitializes at the observation.
pub fn update(
    b: &Belief,
    obs: Cell,
    noise: &ObservationNoise,
    rng: &mut ChaCha8Rng,
) -> Belief {
    let n = b.particles.len();
    let weights: Vec<f64> = b
        .particles
        .iter()
        .map(|p| {
            if p.collided {
                0.0
            } else {
                noise.likelihood(p.pose, obs)
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        // Depletion: the observation is the only consistent information left.
        return init_belief(obs, n);
    }

    let selected = systematic_resample(&weights, total, n, rng);
    let particles = selected
        .into_iter()
        .map(|i| Particle {
            pose: b.particles[i].pose,
            collided: false,
        })
        .collect();
    Belief { particles }
}

/// Systematic resampling: one uniform offset, `n` evenly spaced positions
/// over the cumulative weights. Returns the selected source indices.
pub fn systematic_resample(
    weights: &[f64],
    total: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let offset: f64 = rng.random();
    let step = total / n as f64;
    let mut selected = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut i = 0usize;
    for k in 0..n {
        let position = (k as f64 + offset) * step;
        while position >= cumulative && i + 1 < weights.len() {
            i += 1;
            cumulative += weights[i];
        }
        selected.push(i);
    }
    selected
}

/// Arithmetic mean of the non-collided particles (all particles when every
/// one has collided), rounded half-up per axis, then snapped to the nearest
/// free cell when the rounded cell is an obstacle.
pub fn belief_mean(b: &Belief, map: &GridMap) -> Cell {
    let live: Vec<Cell> = b
        .particles
        .iter()
        .filter(|p| !p.collided)
        .map(|p| p.pose)
        .collect();
    let poses: Vec<Cell> = if live.is_empty() {
        b.particles.iter().map(|p| p.pose).collect()
    } else {
        live
    };
    let n = poses.len() as f64;
    let mean_row: f64 = poses.iter().map(|c| c.row as f64).sum::<f64>() / n;
    let mean_col: f64 = poses.iter().map(|c| c.col as f64).sum::<f64>() / n;
    // f64::round is half-away-from-zero, which is half-up for nonnegative
    // coordinates.
    let rounded = Cell::new(mean_row.round() as usize, mean_col.round() as usize);
    snap_to_free(map, rounded)
}

/// Nearest free cell by 4-connected BFS over the whole grid (obstacles are
/// traversable for the search). Expansion order North, East, South, West.
fn snap_to_free(map: &GridMap, from: Cell) -> Cell {
    if map.is_free(from) {
        return from;
    }
    let mut visited = vec![false; map.width() * map.height()];
    let idx = |c: Cell| c.row * map.width() + c.col;
    let mut queue = std::collections::VecDeque::new();
    visited[idx(from)] = true;
    queue.push_back(from);
    while let Some(cell) = queue.pop_front() {
        for dir in Direction::ALL {
            let Some(next) = map.offset(cell, dir) else {
                continue;
            };
            if visited[idx(next)] {
                continue;
            }
            if map.is_free(next) {
                return next;
            }
            visited[idx(next)] = true;
            queue.push_back(next);
        }
    }
    // A map with no free cell cannot be constructed (start is free).
    unreachable!("grid maps always contain a free cell")
}

/// Computes the planner observation: collided fraction and BFS step distance
/// from the snapped belief mean to the nearest goal cell. A mean that is
/// disconnected from the goal reports the sentinel distance width x height.
pub fn planner_observation(b: &Belief, map: &GridMap) -> PlannerObservation {
    let p_hat = b.collided_fraction();
    let mean = belief_mean(b, map);
    let d_hat = nav::bfs_distance(map, mean, map.goal())
        .unwrap_or(map.width() * map.height());
    PlannerObservation { p_hat, d_hat }
}
