//! Episode execution and evaluation campaigns.
//!
//! `run_episode` drives the move/localize loop: the planner decides from the
//! particle filter's observation; a move computes a motion command from the
//! belief mean, steps the true state and propagates the belief; a localize
//! draws a pose observation, updates the filter and replans from the new
//! belief mean. Campaign operations (`evaluate`, `sweep`, `heatmap`,
//! `compare`) aggregate episodes into metrics tables.

use std::io::Write;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief;
use crate::grid::{
    self, Cell, EnvState, GridMap, MapError, ObservationNoise, Status, TransitionNoise,
};
use crate::nav::{self, NavError, Path};
use crate::nn::NnError;
use crate::policy::{
    make_static, make_threshold, HighLevelAction, LocalizeOnly, MoveOnly, Planner, PlannerInput,
    PolicyError,
};
use crate::risk::{RiskConfig, TrainError};
use crate::sac::{load_checkpoint, EpisodeRecord, Mode, Outcome, RlPlanner, Transition};
use crate::seeded_rng;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-action environment rewards.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub goal: f64,
    pub step: f64,
    pub localize: f64,
    pub fail: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig::risk_aware()
    }
}

impl RewardConfig {
    /// Risk-aware setting: only localizing is penalized; failure is priced
    /// by the constraint, not the reward.
    pub fn risk_aware() -> Self {
        RewardConfig {
            goal: 0.0,
            step: 0.0,
            localize: -1.0,
            fail: 0.0,
        }
    }

    /// Risk-unaware setting: failure carries a large flat penalty.
    pub fn risk_unaware() -> Self {
        RewardConfig {
            goal: 0.0,
            step: 0.0,
            localize: -1.0,
            fail: -256.0,
        }
    }
}

/// Everything an episode or campaign needs besides the planner.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub map: GridMap,
    pub transition: TransitionNoise,
    /// Ambient pose-observation kernel of the environment model.
    pub observation: ObservationNoise,
    /// Kernel used when the planner chooses to localize. Noiseless by
    /// default; override to study localization under observation noise.
    pub localize_observation: ObservationNoise,
    pub rewards: RewardConfig,
    pub risk: RiskConfig,
    pub particles: usize,
    pub episodes: usize,
    pub seed: u64,
    pub randomize_endpoints: bool,
    pub min_separation: usize,
    /// Decision cap; defaults to 4 * (width + height).
    pub step_cap: Option<u32>,
}

impl RunConfig {
    pub fn new(map: GridMap) -> Self {
        let risk = RiskConfig {
            horizon: map.default_step_cap(),
            ..RiskConfig::default()
        };
        RunConfig {
            map,
            transition: TransitionNoise::default(),
            observation: ObservationNoise::default(),
            localize_observation: ObservationNoise::noiseless(),
            rewards: RewardConfig::risk_aware(),
            risk,
            particles: belief::DEFAULT_PARTICLES,
            episodes: 100,
            seed: 0,
            randomize_endpoints: false,
            min_separation: 50,
            step_cap: None,
        }
    }

    pub fn cap(&self) -> u32 {
        self.step_cap.unwrap_or_else(|| self.map.default_step_cap())
    }
}

/// One line of the episode trace.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceStep {
    pub step: usize,
    pub action: HighLevelAction,
    pub true_pose: Cell,
    /// Belief mean at decision time (the agent's estimated location).
    pub belief_mean: Cell,
    pub p_hat: f64,
    pub d_hat: usize,
    pub reward: f64,
}

/// An episode's record plus bookkeeping for metrics.
pub struct EpisodeStats {
    pub record: EpisodeRecord,
    pub trace: Vec<TraceStep>,
    pub decide_nanos: u128,
    pub decisions: usize,
}

/// Picks the motion command toward the path's next waypoint, replanning
/// from the belief mean when the path is exhausted or unreachable. `None`
/// means the agent believes it has arrived and holds position.
fn move_command(path: &mut Path, map: &GridMap, mean: Cell) -> Option<grid::Direction> {
    match nav::next_command(path, map, mean) {
        Ok(dir) => Some(dir),
        Err(_) => {
            *path = nav::shortest_path(map, mean, map.goal()).ok()?;
            nav::next_command(path, map, mean).ok()
        }
    }
}

/// Runs one episode of the move/localize loop.
///
/// Termination: the true robot reaches the goal, collides, or the decision
/// count reaches the cap (scored as failure). Returns the full record, a
/// per-decision trace, and decide-call timing.
pub fn run_episode(
    cfg: &RunConfig,
    planner: &mut dyn Planner,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeStats, HarnessError> {
    let map = &cfg.map;
    if map.is_goal(map.start()) {
        return Err(HarnessError::Config(
            "start cell lies inside the goal region".into(),
        ));
    }
    let mut path = nav::shortest_path(map, map.start(), map.goal()).map_err(|_| {
        HarnessError::Config("start is disconnected from the goal region".into())
    })?;

    let cap = cfg.cap();
    let mut env = EnvState::with_cap(map, cap);
    let mut bel = belief::init_belief(map.start(), cfg.particles);
    planner.reset();

    let mut prev_action = HighLevelAction::Move;
    let mut obs = belief::planner_observation(&bel, map);
    let mut transitions = Vec::new();
    let mut trace = Vec::new();
    let mut decide_nanos: u128 = 0;
    let mut decisions = 0usize;

    while env.status == Status::Active {
        let input = PlannerInput { obs, prev_action };
        let started = Instant::now();
        let action = planner.decide(&input, rng)?;
        decide_nanos += started.elapsed().as_nanos();
        decisions += 1;

        let mean = belief::belief_mean(&bel, map);
        match action {
            HighLevelAction::Move => {
                if let Some(dir) = move_command(&mut path, map, mean) {
                    env = grid::step_move(env, map, dir, &cfg.transition, rng);
                    bel = belief::propagate(&bel, map, dir, &cfg.transition, rng);
                    path.truncate();
                }
                // No command: the agent believes it is at the goal. It holds
                // position; the decision still counts against the cap.
            }
            HighLevelAction::Localize => {
                let pose_obs = grid::observe_pose(&env, &cfg.localize_observation, map, rng);
                bel = belief::update(&bel, pose_obs, &cfg.localize_observation, rng);
                let new_mean = belief::belief_mean(&bel, map);
                if let Ok(replanned) = nav::shortest_path(map, new_mean, map.goal()) {
                    path = replanned;
                }
            }
        }

        if env.status == Status::Active && decisions >= cap as usize {
            env.status = Status::Failed;
        }

        let failed = env.status == Status::Failed;
        let mut base_reward = match action {
            HighLevelAction::Move => cfg.rewards.step,
            HighLevelAction::Localize => cfg.rewards.localize,
        };
        if failed {
            base_reward += cfg.rewards.fail;
        }
        if env.status == Status::ReachedGoal {
            base_reward += cfg.rewards.goal;
        }
        let done = env.status != Status::Active;
        transitions.push(Transition {
            obs: input.obs,
            prev_action,
            action,
            base_reward,
            safe: !failed,
            done,
        });
        trace.push(TraceStep {
            step: decisions - 1,
            action,
            true_pose: env.true_pose,
            belief_mean: mean,
            p_hat: input.obs.p_hat,
            d_hat: input.obs.d_hat,
            reward: base_reward,
        });

        prev_action = action;
        obs = belief::planner_observation(&bel, map);
    }

    let outcome = if env.status == Status::ReachedGoal {
        Outcome::ReachedGoal
    } else {
        Outcome::Failed
    };
    Ok(EpisodeStats {
        record: EpisodeRecord {
            transitions,
            outcome,
        },
        trace,
        decide_nanos,
        decisions,
    })
}

/// Campaign summary over a set of episodes.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricsSummary {
    pub n_runs: usize,
    pub success_rate: f64,
    pub failure_rate: f64,
    pub mean_localizations: f64,
    pub mean_steps: f64,
    pub mean_inference_ms: f64,
}

pub fn summarize(runs: &[EpisodeStats]) -> MetricsSummary {
    let n = runs.len();
    let successes = runs.iter().filter(|r| r.record.succeeded()).count();
    let total_localize: usize = runs.iter().map(|r| r.record.localization_count()).sum();
    let total_steps: usize = runs.iter().map(|r| r.decisions).sum();
    let total_nanos: u128 = runs.iter().map(|r| r.decide_nanos).sum();
    let success_rate = successes as f64 / n as f64;
    MetricsSummary {
        n_runs: n,
        success_rate,
        failure_rate: 1.0 - success_rate,
        mean_localizations: total_localize as f64 / n as f64,
        mean_steps: total_steps as f64 / n as f64,
        mean_inference_ms: if total_steps == 0 {
            0.0
        } else {
            total_nanos as f64 / total_steps as f64 / 1e6
        },
    }
}

/// Runs `cfg.episodes` episodes, randomizing start/goal per episode when
/// configured, and aggregates the metrics.
pub fn evaluate(
    cfg: &RunConfig,
    planner: &mut dyn Planner,
) -> Result<(MetricsSummary, Vec<EpisodeStats>), HarnessError> {
    let mut runs = Vec::with_capacity(cfg.episodes);
    for i in 0..cfg.episodes {
        let mut rng = seeded_rng(cfg.seed, i as u64);
        let stats = if cfg.randomize_endpoints {
            let (start, goal) = nav::random_start_goal(&cfg.map, cfg.min_separation, &mut rng)?;
            let episode_cfg = RunConfig {
                map: cfg.map.with_endpoints(start, goal)?,
                ..cfg.clone()
            };
            run_episode(&episode_cfg, planner, &mut rng)?
        } else {
            run_episode(cfg, planner, &mut rng)?
        };
        runs.push(stats);
    }
    Ok((summarize(&runs), runs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Values are forward-motion masses; drift splits the remainder evenly.
    TransitionNoise,
    /// Values are center masses of the localize-observation kernel.
    ObservationNoise,
    /// Values are allowed failure probabilities; the planner is rebuilt
    /// (typically retrained) per value.
    Risk,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<SweepAxis, HarnessError> {
        match s {
            "transition" => Ok(SweepAxis::TransitionNoise),
            "observation" => Ok(SweepAxis::ObservationNoise),
            "risk" => Ok(SweepAxis::Risk),
            other => Err(HarnessError::Config(format!(
                "unknown sweep axis {other:?} (expected transition|observation|risk)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub metrics: MetricsSummary,
}

/// Applies `value` along `axis` to a copy of the base configuration.
pub fn apply_axis(cfg: &RunConfig, axis: SweepAxis, value: f64) -> Result<RunConfig, HarnessError> {
    let mut out = cfg.clone();
    match axis {
        SweepAxis::TransitionNoise => {
            out.transition = TransitionNoise::with_forward(value)?;
        }
        SweepAxis::ObservationNoise => {
            out.localize_observation = ObservationNoise::peaked(value)?;
        }
        SweepAxis::Risk => {
            out.risk.c_hat = value;
        }
    }
    Ok(out)
}

/// One evaluation per axis value, sharing the base seed across values so
/// that comparisons are variance-paired. The factory builds the planner for
/// each value's configuration.
pub fn sweep(
    cfg: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    planner_factory: &mut dyn FnMut(&RunConfig) -> Result<Box<dyn Planner>, HarnessError>,
) -> Result<Vec<SweepPoint>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }
    let mut out = Vec::with_capacity(values.len());
    for &value in values {
        let point_cfg = apply_axis(cfg, axis, value)?;
        let mut planner = planner_factory(&point_cfg)?;
        let (metrics, _) = evaluate(&point_cfg, planner.as_mut())?;
        out.push(SweepPoint { value, metrics });
    }
    Ok(out)
}

pub fn write_sweep_csv(points: &[SweepPoint], mut w: impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "value,n_runs,success_rate,failure_rate,mean_localizations,mean_steps,mean_inference_ms"
    )?;
    for p in points {
        let m = &p.metrics;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            p.value,
            m.n_runs,
            m.success_rate,
            m.failure_rate,
            m.mean_localizations,
            m.mean_steps,
            m.mean_inference_ms
        )?;
    }
    Ok(())
}

/// Per-cell localize and visit counts keyed by the belief mean at decision
/// time.
#[derive(Clone, Debug)]
pub struct HeatmapGrid {
    width: usize,
    height: usize,
    visits: Vec<u64>,
    localizes: Vec<u64>,
}

impl HeatmapGrid {
    fn new(map: &GridMap) -> Self {
        HeatmapGrid {
            width: map.width(),
            height: map.height(),
            visits: vec![0; map.width() * map.height()],
            localizes: vec![0; map.width() * map.height()],
        }
    }

    pub fn visits(&self, cell: Cell) -> u64 {
        self.visits[cell.row * self.width + cell.col]
    }

    pub fn localizes(&self, cell: Cell) -> u64 {
        self.localizes[cell.row * self.width + cell.col]
    }

    /// Localize probability at a cell; `None` for unvisited cells.
    pub fn rate(&self, cell: Cell) -> Option<f64> {
        let v = self.visits(cell);
        if v == 0 {
            None
        } else {
            Some(self.localizes(cell) as f64 / v as f64)
        }
    }

    /// Iterates visited cells only.
    pub fn visited_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |row| {
            (0..self.width)
                .map(move |col| Cell::new(row, col))
                .filter(|&c| self.visits(c) > 0)
        })
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "row,col,visits,localizes,p_localize")?;
        for cell in self.visited_cells() {
            writeln!(
                w,
                "{},{},{},{},{}",
                cell.row,
                cell.col,
                self.visits(cell),
                self.localizes(cell),
                self.rate(cell).unwrap()
            )?;
        }
        Ok(())
    }
}

/// Aggregates where the planner localizes as a function of its estimated
/// location, over `runs` episodes on the fixed (non-randomized) path.
pub fn heatmap(
    cfg: &RunConfig,
    planner: &mut dyn Planner,
    runs: usize,
) -> Result<HeatmapGrid, HarnessError> {
    if cfg.randomize_endpoints {
        return Err(HarnessError::Config(
            "heatmaps require a predefined start/goal".into(),
        ));
    }
    let mut grid = HeatmapGrid::new(&cfg.map);
    for i in 0..runs {
        let mut rng = seeded_rng(cfg.seed, i as u64);
        let stats = run_episode(cfg, planner, &mut rng)?;
        for step in &stats.trace {
            let idx = step.belief_mean.row * grid.width + step.belief_mean.col;
            grid.visits[idx] += 1;
            if step.action == HighLevelAction::Localize {
                grid.localizes[idx] += 1;
            }
        }
    }
    Ok(grid)
}

/// Evaluates several planners under identical seeds and returns one metrics
/// row per planner.
pub fn compare(
    cfg: &RunConfig,
    planners: &mut [Box<dyn Planner>],
) -> Result<Vec<(String, MetricsSummary)>, HarnessError> {
    let mut rows = Vec::with_capacity(planners.len());
    for planner in planners.iter_mut() {
        let (metrics, _) = evaluate(cfg, planner.as_mut())?;
        rows.push((planner.name(), metrics));
    }
    Ok(rows)
}

pub fn write_comparison_csv(
    rows: &[(String, MetricsSummary)],
    mut w: impl Write,
) -> std::io::Result<()> {
    writeln!(
        w,
        "planner,n_runs,success_rate,failure_rate,mean_localizations,mean_steps,mean_inference_ms"
    )?;
    for (name, m) in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            name,
            m.n_runs,
            m.success_rate,
            m.failure_rate,
            m.mean_localizations,
            m.mean_steps,
            m.mean_inference_ms
        )?;
    }
    Ok(())
}

/// Builds a planner from its spec string:
/// `static:<k>`, `threshold:<tau>`, `riskrl:<ckpt>`, `baserl:<ckpt>`,
/// `move-only`, or `localize-only`.
pub fn make_planner(spec: &str) -> Result<Box<dyn Planner>, HarnessError> {
    match spec {
        "move-only" => return Ok(Box::new(MoveOnly)),
        "localize-only" => return Ok(Box::new(LocalizeOnly)),
        _ => {}
    }
    let (kind, arg) = spec.split_once(':').ok_or_else(|| {
        HarnessError::Config(format!(
            "planner spec {spec:?} is not of the form kind:argument"
        ))
    })?;
    match kind {
        "static" => {
            let k: u32 = arg
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad move count {arg:?}")))?;
            Ok(Box::new(make_static(k)?))
        }
        "threshold" => {
            let tau: f64 = arg
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad threshold {arg:?}")))?;
            Ok(Box::new(make_threshold(tau)?))
        }
        // RL planners evaluate the stochastic policy: constrained optima mix
        // actions, so collapsing to the argmax would discard the very
        // randomization that satisfies the constraint. A -greedy suffix
        // selects the argmax policy instead.
        "riskrl" | "baserl" | "riskrl-greedy" | "baserl-greedy" => {
            let (nets, meta) = load_checkpoint(std::path::Path::new(arg))?;
            let mode = if kind.ends_with("-greedy") {
                Mode::Greedy
            } else {
                Mode::Sample
            };
            Ok(Box::new(RlPlanner::new(
                &meta.planner_kind,
                nets.actor,
                meta.hyper,
                mode,
            )))
        }
        other => Err(HarnessError::Config(format!(
            "unknown planner kind {other:?}"
        ))),
    }
}

/// Trains an RL planner (`riskrl` constrained, `baserl` risk-unaware) by
/// rolling episodes through [`run_episode`] on the configured environment.
/// Rewards follow the planner kind; the dual update runs only for `riskrl`.
pub fn train_planner(
    cfg: &RunConfig,
    kind: &str,
    hyper: crate::sac::SacHyper,
    train_episodes: usize,
    primal: crate::risk::PrimalMode,
) -> Result<(crate::risk::TrainOutput, crate::sac::CheckpointMeta), HarnessError> {
    if kind != "riskrl" && kind != "baserl" {
        return Err(HarnessError::Config(format!(
            "trainable planners are riskrl and baserl, got {kind:?}"
        )));
    }
    let constrained = kind == "riskrl";
    let mut rollout_cfg = cfg.clone();
    rollout_cfg.rewards = if constrained {
        RewardConfig::risk_aware()
    } else {
        RewardConfig::risk_unaware()
    };
    let mut tc = crate::risk::TrainConfig::new(train_episodes, cfg.seed);
    tc.constrained = constrained;
    tc.primal = primal;

    let risk = rollout_cfg.risk;
    let out = crate::risk::train(
        |planner, rng| {
            run_episode(&rollout_cfg, planner, rng)
                .map(|stats| stats.record)
                .map_err(|e| TrainError::Rollout(e.to_string()))
        },
        hyper.clone(),
        risk,
        &tc,
    )?;
    let meta = crate::sac::CheckpointMeta {
        planner_kind: kind.to_string(),
        hyper,
        risk,
        lambda: out.dual.lambda,
        train_episodes,
        buffer_episodes: out.buffer_episodes,
    };
    Ok((out, meta))
}

/// Writes the episode trace as line-delimited JSON records.
pub fn write_trace(trace: &[TraceStep], mut w: impl Write) -> std::io::Result<()> {
    for step in trace {
        serde_json::to_writer(&mut w, step)?;
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_map;

    fn corridor() -> GridMap {
        load_map("S........G").unwrap()
    }

    fn corridor_cfg() -> RunConfig {
        let mut cfg = RunConfig::new(corridor());
        cfg.transition = TransitionNoise::deterministic();
        cfg
    }

    #[test]
    fn noiseless_move_only_reaches_goal_in_path_length_steps() {
        let cfg = corridor_cfg();
        let mut planner = MoveOnly;
        let mut rng = seeded_rng(60, 0);
        let stats = run_episode(&cfg, &mut planner, &mut rng).unwrap();
        assert!(stats.record.succeeded());
        assert_eq!(stats.decisions, 9);
        assert_eq!(stats.record.localization_count(), 0);
        // Exactly the last transition is done.
        let dones: Vec<bool> = stats.record.transitions.iter().map(|t| t.done).collect();
        assert_eq!(dones.iter().filter(|d| **d).count(), 1);
        assert!(dones.last().unwrap());
    }

    #[test]
    fn static_policy_localization_count_matches_closed_form() {
        let cfg = corridor_cfg();
        let mut planner = make_static(2).unwrap();
        let mut rng = seeded_rng(61, 0);
        let stats = run_episode(&cfg, &mut planner, &mut rng).unwrap();
        assert!(stats.record.succeeded());
        assert_eq!(stats.record.localization_count(), stats.decisions / 3);
    }

    #[test]
    fn localize_only_hits_the_cap_and_fails() {
        let cfg = corridor_cfg();
        let mut planner = LocalizeOnly;
        let mut rng = seeded_rng(62, 0);
        let stats = run_episode(&cfg, &mut planner, &mut rng).unwrap();
        assert!(!stats.record.succeeded());
        assert_eq!(stats.decisions, cfg.cap() as usize);
        // A localize action never changed the true pose.
        assert!(stats.trace.iter().all(|t| t.true_pose == cfg.map.start()));
        let (metrics, _) = evaluate(
            &RunConfig {
                episodes: 5,
                ..cfg.clone()
            },
            &mut LocalizeOnly,
        )
        .unwrap();
        assert_eq!(metrics.success_rate, 0.0);
    }

    #[test]
    fn disconnected_or_degenerate_configs_are_errors() {
        let map = load_map("S#G").unwrap();
        let cfg = RunConfig::new(map);
        let mut planner = MoveOnly;
        let mut rng = seeded_rng(63, 0);
        assert!(matches!(
            run_episode(&cfg, &mut planner, &mut rng),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn fixed_seed_reproduces_identical_campaigns() {
        let mut cfg = corridor_cfg();
        cfg.transition = TransitionNoise::default();
        cfg.episodes = 20;
        cfg.seed = 77;
        let run = || {
            let mut planner = make_static(2).unwrap();
            let (m, runs) = evaluate(&cfg, &mut planner).unwrap();
            let sig: Vec<(usize, bool)> = runs
                .iter()
                .map(|r| (r.decisions, r.record.succeeded()))
                .collect();
            (m.success_rate, m.mean_localizations, m.mean_steps, sig)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rewards_follow_configuration() {
        let mut cfg = corridor_cfg();
        cfg.rewards = RewardConfig::risk_unaware();
        // Force failure by capping decisions at 3 on a 9-step corridor.
        cfg.step_cap = Some(3);
        let mut planner = make_static(1).unwrap();
        let mut rng = seeded_rng(64, 0);
        let stats = run_episode(&cfg, &mut planner, &mut rng).unwrap();
        assert!(!stats.record.succeeded());
        let last = stats.record.transitions.last().unwrap();
        assert!(!last.safe);
        // The capped decision was a move; it carries the failure penalty.
        assert_eq!(last.base_reward, cfg.rewards.fail + cfg.rewards.step);
        // Steps before that: moves are free, localizes cost 1.
        for t in &stats.record.transitions[..stats.record.transitions.len() - 1] {
            let expect = match t.action {
                HighLevelAction::Move => 0.0,
                HighLevelAction::Localize => -1.0,
            };
            assert_eq!(t.base_reward, expect);
            assert!(t.safe);
        }
    }

    #[test]
    fn base_rewards_binary_for_risk_aware_config() {
        let mut cfg = corridor_cfg();
        cfg.transition = TransitionNoise::default();
        cfg.episodes = 10;
        let mut planner = make_static(2).unwrap();
        let (_, runs) = evaluate(&cfg, &mut planner).unwrap();
        for run in &runs {
            for t in &run.record.transitions {
                assert!(t.base_reward == 0.0 || t.base_reward == -1.0);
            }
        }
    }

    #[test]
    fn heatmap_never_localize_is_all_zero() {
        let cfg = corridor_cfg();
        let mut planner = MoveOnly;
        let grid = heatmap(&cfg, &mut planner, 5).unwrap();
        for cell in grid.visited_cells() {
            assert_eq!(grid.rate(cell), Some(0.0));
        }
        // Unvisited cells report no rate at all.
        assert_eq!(grid.rate(Cell::new(0, 9)), None);
    }

    #[test]
    fn heatmap_alternating_policy_rate_near_half() {
        let cfg = corridor_cfg();
        let mut planner = make_static(1).unwrap();
        let grid = heatmap(&cfg, &mut planner, 10).unwrap();
        // The alternating policy localizes on every other decision, so
        // corridor cells it occupies for two decisions rate one half.
        let mut halves = 0;
        for cell in grid.visited_cells() {
            let rate = grid.rate(cell).unwrap();
            assert!(grid.localizes(cell) <= grid.visits(cell));
            if (rate - 0.5).abs() < 1e-9 {
                halves += 1;
            }
        }
        assert!(halves >= 4, "expected several 0.5-rate cells");
    }

    #[test]
    fn compare_identical_planners_produce_identical_rows() {
        let mut cfg = corridor_cfg();
        cfg.transition = TransitionNoise::default();
        cfg.episodes = 15;
        let mut planners: Vec<Box<dyn Planner>> = vec![
            Box::new(make_static(2).unwrap()),
            Box::new(make_static(2).unwrap()),
            Box::new(make_static(3).unwrap()),
        ];
        let rows = compare(&cfg, &mut planners).unwrap();
        assert_eq!(rows[0].1.success_rate, rows[1].1.success_rate);
        assert_eq!(rows[0].1.mean_localizations, rows[1].1.mean_localizations);
        assert_eq!(rows[0].1.mean_steps, rows[1].1.mean_steps);
    }

    #[test]
    fn randomized_campaign_respects_min_separation() {
        let mut text = String::new();
        for row in 0..20 {
            for col in 0..20 {
                text.push(match (row, col) {
                    (0, 0) => 'S',
                    (19, 19) => 'G',
                    _ => '.',
                });
            }
            text.push('\n');
        }
        let mut cfg = RunConfig::new(load_map(&text).unwrap());
        cfg.transition = TransitionNoise::deterministic();
        cfg.randomize_endpoints = true;
        cfg.min_separation = 15;
        cfg.episodes = 8;
        let mut planner = make_static(3).unwrap();
        let (_, runs) = evaluate(&cfg, &mut planner).unwrap();
        for run in &runs {
            // First trace step distance reflects the sampled endpoints.
            assert!(run.trace[0].d_hat >= 15);
        }
    }

    #[test]
    fn sweep_transition_axis_sets_noise() {
        let mut cfg = corridor_cfg();
        cfg.episodes = 5;
        let out = sweep(&cfg, SweepAxis::TransitionNoise, &[1.0, 0.8], &mut |_cfg| {
            Ok(Box::new(make_static(2).unwrap()))
        })
        .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].metrics.success_rate, 1.0);
    }

    #[test]
    fn planner_factory_parses_specs() {
        assert!(make_planner("static:2").is_ok());
        assert!(make_planner("threshold:0.4").is_ok());
        assert!(make_planner("move-only").is_ok());
        assert!(make_planner("localize-only").is_ok());
        assert!(make_planner("static:0").is_err());
        assert!(make_planner("unknown:1").is_err());
        assert!(make_planner("static").is_err());
    }
}
