//! Chance-constraint machinery: the risk-adjusted threshold, reward shaping
//! with the Lagrange multiplier, the rollout constraint estimate, the
//! projected dual update, and the primal-dual training loop.
//!
//! Two threshold formulas are selectable. `Complement` (the default) reads
//! the constraint as discounted safety mass of at least (1 - c_hat) of the
//! full horizon mass: c = (1 - c_hat) * (1 - gamma^(T+1)) / (1 - gamma).
//! `TailAdjusted` keeps the alternative closed form
//! c = (1 - c_hat * gamma^T * (1 - gamma)) / (1 - gamma), retained for
//! fidelity comparisons; it is insensitive to c_hat at long horizons.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::PlannerObservation;
use crate::nn::NnError;
use crate::policy::{HighLevelAction, Planner, PlannerInput};
use crate::sac::{
    self, update_step, EpisodeRecord, Mode, Networks, Outcome, ReplayBuffer, RlPlanner, SacHyper,
    Transition,
};
use crate::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    Complement,
    TailAdjusted,
}

/// Parameters of the failure-probability constraint.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskConfig {
    /// Allowed failure probability, in [0,1].
    pub c_hat: f64,
    /// Discount used by the constraint accounting.
    pub gamma: f64,
    /// Horizon (step count) feeding the threshold formula.
    pub horizon: u32,
    /// Dual step size.
    pub lambda_lr: f64,
    pub mode: ThresholdMode,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            c_hat: 0.4,
            gamma: 0.9,
            horizon: 96,
            lambda_lr: 0.01,
            mode: ThresholdMode::Complement,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = (0.0..=1.0).contains(&self.c_hat)
            && self.gamma > 0.0
            && self.gamma < 1.0
            && self.horizon >= 1
            && self.lambda_lr > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(format!(
                "invalid risk configuration: {self:?}"
            )))
        }
    }
}

/// The Lagrange multiplier and the fixed risk-adjusted threshold.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: f64,
    pub threshold: f64,
}

impl DualState {
    /// Constrained training starts at lambda = 1.
    pub fn new(cfg: &RiskConfig) -> Self {
        DualState {
            lambda: 1.0,
            threshold: compute_threshold(cfg),
        }
    }

    /// Risk-unaware training: lambda pinned at zero.
    pub fn frozen(cfg: &RiskConfig) -> Self {
        DualState {
            lambda: 0.0,
            threshold: compute_threshold(cfg),
        }
    }
}

/// The risk-adjusted threshold c that the discounted safety mass must meet.
pub fn compute_threshold(cfg: &RiskConfig) -> f64 {
    let g = cfg.gamma;
    let t = cfg.horizon as i32;
    match cfg.mode {
        ThresholdMode::Complement => (1.0 - cfg.c_hat) * (1.0 - g.powi(t + 1)) / (1.0 - g),
        ThresholdMode::TailAdjusted => (1.0 - cfg.c_hat * g.powi(t) * (1.0 - g)) / (1.0 - g),
    }
}

/// Constraint-shaped reward:
/// r̂ = r + λ · (I(not failed) − c · (1 − γ)).
pub fn shaped_reward(t: &Transition, lambda: f64, cfg: &RiskConfig) -> f64 {
    debug_assert!(lambda >= 0.0);
    let safe = if t.safe { 1.0 } else { 0.0 };
    let c = compute_threshold(cfg);
    t.base_reward + lambda * (safe - c * (1.0 - cfg.gamma))
}

/// Rollout estimate of the accumulated discounted safety mass:
/// U = Σ_t γ^t · I(step t not failed).
pub fn constraint_estimate(ep: &EpisodeRecord, cfg: &RiskConfig) -> f64 {
    let mut u = 0.0;
    let mut discount = 1.0;
    for t in &ep.transitions {
        if t.safe {
            u += discount;
        }
        discount *= cfg.gamma;
    }
    u
}

/// Projected dual ascent step: λ ← max(0, λ − η·(U − c)).
pub fn dual_update(d: &DualState, u_est: f64, cfg: &RiskConfig) -> DualState {
    DualState {
        lambda: (d.lambda - cfg.lambda_lr * (u_est - d.threshold)).max(0.0),
        threshold: d.threshold,
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("rollout failed: {0}")]
    Rollout(String),
    #[error("{0}")]
    InvalidConfig(String),
}

/// Primal update rule. `Sac` is the default; `ScoreFunction` is an
/// on-policy REINFORCE estimator on the shaped reward, kept selectable for
/// fidelity experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimalMode {
    Sac,
    ScoreFunction,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub episodes: usize,
    /// When false the multiplier is pinned at zero (risk-unaware training).
    pub constrained: bool,
    /// Running-mean window (in episodes) for the dual gradient estimate.
    pub dual_window: usize,
    pub primal: PrimalMode,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(episodes: usize, seed: u64) -> Self {
        TrainConfig {
            episodes,
            constrained: true,
            dual_window: 10,
            primal: PrimalMode::Sac,
            seed,
        }
    }
}

/// Per-episode training curve point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpisodePoint {
    pub episode: usize,
    pub success: bool,
    pub n_localize: usize,
    pub lambda: f64,
    pub u_estimate: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
}

pub struct TrainOutput {
    pub nets: Networks,
    pub dual: DualState,
    pub curves: Vec<EpisodePoint>,
    pub buffer_episodes: usize,
}

/// Primal-dual training loop. Per episode: roll out the stochastic policy,
/// store the episode, run the primal update with the current multiplier,
/// then step the dual variable on a running mean of the constraint
/// estimate. `rollout` is called with a sample-mode planner wrapping the
/// current actor and an episode-specific RNG.
pub fn train<F>(
    mut rollout: F,
    hyper: SacHyper,
    risk: RiskConfig,
    tc: &TrainConfig,
) -> Result<TrainOutput, TrainError>
where
    F: FnMut(&mut RlPlanner, &mut ChaCha8Rng) -> Result<EpisodeRecord, TrainError>,
{
    risk.validate()?;
    hyper.validate()?;
    let mut init_rng = seeded_rng(tc.seed, 0);
    let mut nets = Networks::new(hyper.clone(), &mut init_rng)?;
    let mut dual = if tc.constrained {
        DualState::new(&risk)
    } else {
        DualState::frozen(&risk)
    };
    let mut buffer = ReplayBuffer::new(hyper.buffer_capacity);
    let mut recent_u: VecDeque<f64> = VecDeque::new();
    let mut curves = Vec::with_capacity(tc.episodes);

    for episode in 0..tc.episodes {
        let mut planner = RlPlanner::new("train", nets.actor.clone(), hyper.clone(), Mode::Sample);
        let mut ep_rng = seeded_rng(tc.seed, 2 * episode as u64 + 1);
        let record = rollout(&mut planner, &mut ep_rng)?;
        debug_assert!(!record.transitions.is_empty());

        let mut up_rng = seeded_rng(tc.seed, 2 * episode as u64 + 2);
        let mut diag = sac::UpdateDiagnostics::default();
        buffer.push(record.clone());
        match tc.primal {
            PrimalMode::Sac => {
                for _ in 0..hyper.updates_per_episode {
                    let d = update_step(&mut nets, &buffer, dual.lambda, &risk, &mut up_rng)?;
                    if d.updated {
                        diag = d;
                    }
                }
            }
            PrimalMode::ScoreFunction => {
                diag = sac::score_function_update(&mut nets, &record, dual.lambda, &risk)?;
            }
        }

        let u = constraint_estimate(&record, &risk);
        recent_u.push_back(u);
        if recent_u.len() > tc.dual_window {
            recent_u.pop_front();
        }
        if tc.constrained {
            let u_mean = recent_u.iter().sum::<f64>() / recent_u.len() as f64;
            dual = dual_update(&dual, u_mean, &risk);
        }

        curves.push(EpisodePoint {
            episode,
            success: record.succeeded(),
            n_localize: record.localization_count(),
            lambda: dual.lambda,
            u_estimate: u,
            actor_loss: diag.actor_loss,
            critic_loss: diag.critic_loss,
        });
    }

    Ok(TrainOutput {
        nets,
        dual,
        curves,
        buffer_episodes: buffer.len(),
    })
}

/// Synthetic one-decision constrained task for diagnosing the training
/// loop: Move fails with probability `p_fail` (reward 0), Localize never
/// fails (reward -1); the episode ends after one decision either way.
pub struct BanditEnv {
    pub p_fail: f64,
}

impl BanditEnv {
    pub fn input() -> PlannerInput {
        PlannerInput {
            obs: PlannerObservation { p_hat: 0.0, d_hat: 1 },
            prev_action: HighLevelAction::Move,
        }
    }

    pub fn rollout(
        &self,
        planner: &mut RlPlanner,
        rng: &mut ChaCha8Rng,
    ) -> Result<EpisodeRecord, TrainError> {
        planner.reset();
        let input = BanditEnv::input();
        let action = planner
            .decide(&input, rng)
            .map_err(|e| TrainError::Rollout(e.to_string()))?;
        let (base_reward, safe) = match action {
            HighLevelAction::Move => (0.0, rng.random::<f64>() >= self.p_fail),
            HighLevelAction::Localize => (-1.0, true),
        };
        Ok(EpisodeRecord {
            transitions: vec![Transition {
                obs: input.obs,
                prev_action: input.prev_action,
                action,
                base_reward,
                safe,
                done: true,
            }],
            outcome: if safe {
                Outcome::ReachedGoal
            } else {
                Outcome::Failed
            },
        })
    }

    /// Risk configuration matching the bandit's one-step accounting: a short
    /// horizon and a near-zero discount make the threshold c ≈ 1 - c_hat,
    /// the scale realized by single-transition episodes.
    pub fn risk_config(c_hat: f64) -> RiskConfig {
        RiskConfig {
            c_hat,
            gamma: 1e-3,
            horizon: 1,
            lambda_lr: 0.01,
            mode: ThresholdMode::Complement,
        }
    }
}
