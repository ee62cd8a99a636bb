//! High-level planner interface (move vs. localize) and the non-learned
//! baselines: static cycles and the collision-probability threshold rule.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::PlannerObservation;

/// The two high-level actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HighLevelAction {
    Move,
    Localize,
}

impl HighLevelAction {
    pub fn index(self) -> usize {
        match self {
            HighLevelAction::Move => 0,
            HighLevelAction::Localize => 1,
        }
    }

    pub fn from_index(i: usize) -> HighLevelAction {
        match i {
            0 => HighLevelAction::Move,
            1 => HighLevelAction::Localize,
            _ => panic!("action index out of range: {i}"),
        }
    }

    pub fn one_hot(self) -> [f64; 2] {
        match self {
            HighLevelAction::Move => [1.0, 0.0],
            HighLevelAction::Localize => [0.0, 1.0],
        }
    }
}

impl std::fmt::Display for HighLevelAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HighLevelAction::Move => f.write_str("move"),
            HighLevelAction::Localize => f.write_str("localize"),
        }
    }
}

/// What every planner sees at a decision point. The previous action of the
/// first step is `Move` by convention.
#[derive(Clone, Copy, Debug)]
pub struct PlannerInput {
    pub obs: PlannerObservation,
    pub prev_action: HighLevelAction,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid planner parameter: {0}")]
    InvalidParameter(String),
    #[error("planner produced non-finite logits")]
    NonFiniteLogits,
}

/// The common move/localize decision interface. Planners may carry internal
/// state (cycle counters, recurrent state); `reset` is called at episode
/// start.
pub trait Planner {
    fn name(&self) -> String;
    fn reset(&mut self);
    fn decide(
        &mut self,
        input: &PlannerInput,
        rng: &mut ChaCha8Rng,
    ) -> Result<HighLevelAction, PolicyError>;
}

/// Emits `k` moves then one localize, cyclically.
pub struct StaticPolicy {
    k: u32,
    counter: u32,
}

/// Builds a static (M k-times, L) planner. `k = 0` is rejected: it would
/// never move.
pub fn make_static(k: u32) -> Result<StaticPolicy, PolicyError> {
    if k == 0 {
        return Err(PolicyError::InvalidParameter(
            "static planner needs k >= 1".into(),
        ));
    }
    Ok(StaticPolicy { k, counter: 0 })
}

impl Planner for StaticPolicy {
    fn name(&self) -> String {
        format!("static:{}", self.k)
    }

    fn reset(&mut self) {
        self.counter = 0;
    }

    fn decide(
        &mut self,
        _input: &PlannerInput,
        _rng: &mut ChaCha8Rng,
    ) -> Result<HighLevelAction, PolicyError> {
        let action = if self.counter < self.k {
            HighLevelAction::Move
        } else {
            HighLevelAction::Localize
        };
        self.counter = (self.counter + 1) % (self.k + 1);
        Ok(action)
    }
}

/// Localizes whenever the predicted collision probability strictly exceeds
/// the threshold. Stateless.
pub struct ThresholdPolicy {
    tau: f64,
}

pub fn make_threshold(tau: f64) -> Result<ThresholdPolicy, PolicyError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(PolicyError::InvalidParameter(format!(
            "threshold must be in [0,1], got {tau}"
        )));
    }
    Ok(ThresholdPolicy { tau })
}

impl Planner for ThresholdPolicy {
    fn name(&self) -> String {
        format!("threshold:{}", self.tau)
    }

    fn reset(&mut self) {}

    fn decide(
        &mut self,
        input: &PlannerInput,
        _rng: &mut ChaCha8Rng,
    ) -> Result<HighLevelAction, PolicyError> {
        if input.obs.p_hat > self.tau {
            Ok(HighLevelAction::Localize)
        } else {
            Ok(HighLevelAction::Move)
        }
    }
}

/// Never localizes. Useful as a degenerate baseline and in tests.
pub struct MoveOnly;

impl Planner for MoveOnly {
    fn name(&self) -> String {
        "move-only".into()
    }

    fn reset(&mut self) {}

    fn decide(
        &mut self,
        _input: &PlannerInput,
        _rng: &mut ChaCha8Rng,
    ) -> Result<HighLevelAction, PolicyError> {
        Ok(HighLevelAction::Move)
    }
}

/// Never moves; exhausts the episode cap by construction.
pub struct LocalizeOnly;

impl Planner for LocalizeOnly {
    fn name(&self) -> String {
        "localize-only".into()
    }

    fn reset(&mut self) {}

    fn decide(
        &mut self,
        _input: &PlannerInput,
        _rng: &mut ChaCha8Rng,
    ) -> Result<HighLevelAction, PolicyError> {
        Ok(HighLevelAction::Localize)
    }
}
