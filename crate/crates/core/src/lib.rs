//! Risk-bounded active localization for grid navigation.
//!
//! A robot follows a path through a noisy grid world and must decide at each
//! step whether to execute the next motion command or to localize. Localizing
//! is expensive, so the high-level planner minimizes localization actions
//! while keeping the probability of failure (collision or never reaching the
//! goal) below a configurable bound.
//!
//! The pieces:
//! - [`grid`]: the environment (map, stochastic motion, noisy pose sensing)
//! - [`belief`]: particle-filter state estimation over the robot's cell
//! - [`nav`]: BFS path planning and per-step motion commands
//! - [`policy`]: the move/localize planner interface and non-learned baselines
//! - [`nn`]: a small tape-based autodiff substrate (MLP, LSTM, Adam)
//! - [`sac`]: recurrent discrete soft actor-critic on top of [`nn`]
//! - [`risk`]: the chance-constraint machinery and primal-dual training loop
//! - [`harness`]: episode execution, evaluation campaigns, sweeps, heatmaps

pub mod belief;
pub mod config;
pub mod grid;
pub mod harness;
pub mod nav;
pub mod nn;
pub mod policy;
pub mod risk;
pub mod sac;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for a (seed, stream) pair.
///
/// Every stochastic component draws from its own stream so that campaigns are
/// reproducible regardless of how many draws other components consume.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
