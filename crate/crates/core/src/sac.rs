//! Recurrent discrete soft actor-critic.
//!
//! Actor and critics share the same trunk shape: one-layer MLP embeddings of
//! the planner observation and the previous action, concatenated into an
//! LSTM cell, followed by an MLP head. The twin critics share one trunk with
//! two Q-heads; target networks are soft-updated copies of the critic store.
//!
//! Updates sample whole episodes from the replay buffer and unroll the
//! recurrences from each episode's start, so hidden state never crosses an
//! episode boundary. Losses use the expectation form of discrete SAC: sums
//! over both actions weighted by the actor distribution.

use std::collections::VecDeque;
use std::path::Path as FsPath;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::PlannerObservation;
use crate::nn::{
    adam_step, lstm_step, mlp_forward, Activation, LstmState, NnError, NumArray, ParameterStore,
    Tape, Var,
};
use crate::policy::{HighLevelAction, Planner, PlannerInput, PolicyError};
use crate::risk::{shaped_reward, RiskConfig};

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

/// SAC hyperparameters. The two presets mirror the configurations used for
/// the risk-aware and risk-unaware planners.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SacHyper {
    pub lr: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub tau_soft: f64,
    pub dqn_layers: Vec<usize>,
    pub policy_layers: Vec<usize>,
    pub obs_emb: usize,
    pub act_emb: usize,
    pub lstm_hidden: usize,
    pub batch_episodes: usize,
    pub buffer_capacity: usize,
    pub updates_per_episode: usize,
}

impl Default for SacHyper {
    fn default() -> Self {
        SacHyper::riskrl()
    }
}

impl SacHyper {
    /// Configuration for the risk-aware planner.
    pub fn riskrl() -> Self {
        SacHyper {
            lr: 0.0001,
            gamma: 0.9,
            alpha: 0.5,
            tau_soft: 0.005,
            dqn_layers: vec![128, 128],
            policy_layers: vec![128, 128],
            obs_emb: 32,
            act_emb: 8,
            lstm_hidden: 64,
            batch_episodes: 8,
            buffer_capacity: 512,
            updates_per_episode: 1,
        }
    }

    /// Configuration for the risk-unaware planner.
    pub fn baserl() -> Self {
        SacHyper {
            lr: 0.00012,
            gamma: 0.95,
            alpha: 0.25,
            dqn_layers: vec![64, 64],
            policy_layers: vec![64, 64],
            ..SacHyper::riskrl()
        }
    }

    /// Shrunken copy for fast tests: same architecture, small widths.
    pub fn tiny() -> Self {
        SacHyper {
            dqn_layers: vec![8, 8],
            policy_layers: vec![8, 8],
            obs_emb: 6,
            act_emb: 3,
            lstm_hidden: 8,
            ..SacHyper::riskrl()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.gamma > 0.0
            && self.gamma < 1.0
            && self.tau_soft > 0.0
            && self.tau_soft <= 1.0
            && self.alpha >= 0.0
            && self.lr > 0.0
            && self.batch_episodes >= 1
            && self.buffer_capacity >= self.batch_episodes;
        if ok {
            Ok(())
        } else {
            Err(NnError::NonFinite("invalid SAC hyperparameters".into()))
        }
    }

    fn policy_head_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.lstm_hidden];
        dims.extend(&self.policy_layers);
        dims.push(2);
        dims
    }

    fn q_head_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.lstm_hidden];
        dims.extend(&self.dqn_layers);
        dims.push(2);
        dims
    }
}

/// One decision step as stored for learning. `base_reward` is the
/// environment reward before constraint shaping; `safe` is false only when
/// the step ended in failure.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Transition {
    pub obs: PlannerObservation,
    pub prev_action: HighLevelAction,
    pub action: HighLevelAction,
    pub base_reward: f64,
    pub safe: bool,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    ReachedGoal,
    Failed,
}

/// A full episode; exactly the last transition has `done = true`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub transitions: Vec<Transition>,
    pub outcome: Outcome,
}

impl EpisodeRecord {
    pub fn localization_count(&self) -> usize {
        self.transitions
            .iter()
            .filter(|t| t.action == HighLevelAction::Localize)
            .count()
    }

    pub fn succeeded(&self) -> bool {
        self.outcome == Outcome::ReachedGoal
    }
}

/// Bounded FIFO of episodes with uniform sampling.
pub struct ReplayBuffer {
    episodes: VecDeque<EpisodeRecord>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            episodes: VecDeque::new(),
            capacity,
        }
    }

    pub fn push(&mut self, ep: EpisodeRecord) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(ep);
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<&EpisodeRecord> {
        debug_assert!(n <= self.episodes.len());
        rand::seq::index::sample(rng, self.episodes.len(), n)
            .iter()
            .map(|i| &self.episodes[i])
            .collect()
    }
}

/// Actor, online critic (shared trunk, twin heads) and target critic.
pub struct Networks {
    pub actor: ParameterStore,
    pub critic: ParameterStore,
    pub target: ParameterStore,
    pub hyper: SacHyper,
}

impl Networks {
    pub fn new(hyper: SacHyper, rng: &mut ChaCha8Rng) -> Result<Networks, NnError> {
        hyper.validate()?;
        let mut actor = ParameterStore::new();
        add_trunk(&mut actor, &hyper, rng)?;
        actor.add_mlp("head", &hyper.policy_head_dims(), rng)?;

        let mut critic = ParameterStore::new();
        add_trunk(&mut critic, &hyper, rng)?;
        critic.add_mlp("q1", &hyper.q_head_dims(), rng)?;
        critic.add_mlp("q2", &hyper.q_head_dims(), rng)?;

        let target = critic.clone();
        Ok(Networks {
            actor,
            critic,
            target,
            hyper,
        })
    }
}

fn add_trunk(
    store: &mut ParameterStore,
    hyper: &SacHyper,
    rng: &mut ChaCha8Rng,
) -> Result<(), NnError> {
    store.add_mlp("obs_emb", &[2, hyper.obs_emb], rng)?;
    store.add_mlp("act_emb", &[2, hyper.act_emb], rng)?;
    store.add_lstm("lstm", hyper.obs_emb + hyper.act_emb, hyper.lstm_hidden, rng)?;
    Ok(())
}

/// Input encoding for the networks: collision probability as-is, distance
/// squashed with log1p so that unseen larger maps stay in range.
pub fn obs_features(obs: &PlannerObservation) -> [f64; 2] {
    [obs.p_hat, (1.0 + obs.d_hat as f64).ln()]
}

/// Embeddings + LSTM step shared by actor and critics. Returns the new
/// recurrent state; the hidden half feeds the heads.
fn trunk_step(
    tape: &mut Tape,
    store: &ParameterStore,
    hyper: &SacHyper,
    obs: &PlannerObservation,
    prev_action: HighLevelAction,
    state: (Var, Var),
) -> Result<(Var, Var), NnError> {
    let feats = tape.constant_vec(&obs_features(obs));
    let eo = mlp_forward(tape, store, "obs_emb", &[2, hyper.obs_emb], Activation::Relu, feats)?;
    let eo = tape.relu(eo);
    let pa = tape.constant_vec(&prev_action.one_hot());
    let ea = mlp_forward(tape, store, "act_emb", &[2, hyper.act_emb], Activation::Relu, pa)?;
    let ea = tape.relu(ea);
    let x = tape.concat(eo, ea);
    lstm_step(tape, store, "lstm", x, state)
}

fn zero_state(tape: &mut Tape, hyper: &SacHyper) -> (Var, Var) {
    let h = tape.constant(NumArray::zeros(&[hyper.lstm_hidden]));
    let c = tape.constant(NumArray::zeros(&[hyper.lstm_hidden]));
    (h, c)
}

fn two(arr: &NumArray) -> [f64; 2] {
    [arr.data()[0], arr.data()[1]]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Sample,
    Greedy,
}

/// One actor decision. Computes the two-way categorical over actions from
/// the advanced recurrent state; `Sample` draws, `Greedy` takes the argmax.
/// Returns the action, the new recurrent state, and the log-probability of
/// the chosen action.
pub fn select_action(
    actor: &ParameterStore,
    hyper: &SacHyper,
    state: &LstmState,
    input: &PlannerInput,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(HighLevelAction, LstmState, f64), NnError> {
    let mut tape = Tape::new();
    let h = tape.constant(state.hidden.clone());
    let c = tape.constant(state.cell.clone());
    let (hn, cn) = trunk_step(&mut tape, actor, hyper, &input.obs, input.prev_action, (h, c))?;
    let logits = mlp_forward(
        &mut tape,
        actor,
        "head",
        &hyper.policy_head_dims(),
        Activation::Relu,
        hn,
    )?;
    let lp = tape.log_softmax(logits);
    let lpv = two(tape.value(lp));
    if !lpv.iter().all(|v| v.is_finite()) {
        return Err(NnError::NonFinite("actor logits".into()));
    }
    let idx = match mode {
        Mode::Greedy => usize::from(lpv[1] > lpv[0]),
        Mode::Sample => usize::from(rng.random::<f64>() >= lpv[0].exp()),
    };
    let next = LstmState {
        hidden: tape.value(hn).clone(),
        cell: tape.value(cn).clone(),
    };
    Ok((HighLevelAction::from_index(idx), next, lpv[idx]))
}

/// A trained (or training) actor exposed through the planner interface.
pub struct RlPlanner {
    label: String,
    actor: ParameterStore,
    hyper: SacHyper,
    state: LstmState,
    mode: Mode,
}

impl RlPlanner {
    pub fn new(label: &str, actor: ParameterStore, hyper: SacHyper, mode: Mode) -> Self {
        let state = LstmState::zeros(hyper.lstm_hidden);
        RlPlanner {
            label: label.to_string(),
            actor,
            hyper,
            state,
            mode,
        }
    }

    pub fn actor(&self) -> &ParameterStore {
        &self.actor
    }

    /// Probability of localizing for a given input at the current recurrent
    /// state, without advancing the state.
    pub fn localize_probability(&self, input: &PlannerInput) -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let h = tape.constant(self.state.hidden.clone());
        let c = tape.constant(self.state.cell.clone());
        let (hn, _) = trunk_step(
            &mut tape,
            &self.actor,
            &self.hyper,
            &input.obs,
            input.prev_action,
            (h, c),
        )?;
        let logits = mlp_forward(
            &mut tape,
            &self.actor,
            "head",
            &self.hyper.policy_head_dims(),
            Activation::Relu,
            hn,
        )?;
        let lp = tape.log_softmax(logits);
        Ok(tape.value(lp).data()[1].exp())
    }
}

impl Planner for RlPlanner {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn reset(&mut self) {
        self.state = LstmState::zeros(self.hyper.lstm_hidden);
    }

    fn decide(
        &mut self,
        input: &PlannerInput,
        rng: &mut ChaCha8Rng,
    ) -> Result<HighLevelAction, PolicyError> {
        let (action, next, _) =
            select_action(&self.actor, &self.hyper, &self.state, input, self.mode, rng)
                .map_err(|_| PolicyError::NonFiniteLogits)?;
        self.state = next;
        Ok(action)
    }
}

/// target <- (1 - tau) * target + tau * online, elementwise.
pub fn soft_update(
    online: &ParameterStore,
    target: &mut ParameterStore,
    tau: f64,
) -> Result<(), NnError> {
    target.apply_pairwise(online, |t, o| (1.0 - tau) * t + tau * o)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UpdateDiagnostics {
    pub updated: bool,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// Per-step soft targets for one episode, computed without gradients:
/// y_t = r̂_t + γ · Σ_a π(a|s_{t+1}) · (min(Q'₁, Q'₂)(s_{t+1}, a) − α·log π(a|s_{t+1}))
/// with the bootstrap term dropped on terminal steps.
fn compute_targets(
    nets: &Networks,
    ep: &EpisodeRecord,
    lambda_now: f64,
    risk: &RiskConfig,
) -> Result<Vec<f64>, NnError> {
    let hyper = &nets.hyper;
    let len = ep.transitions.len();

    let mut tape = Tape::new();
    let mut state = zero_state(&mut tape, hyper);
    let mut q1t = Vec::with_capacity(len);
    let mut q2t = Vec::with_capacity(len);
    for tr in &ep.transitions {
        state = trunk_step(&mut tape, &nets.target, hyper, &tr.obs, tr.prev_action, state)?;
        let q1 = mlp_forward(&mut tape, &nets.target, "q1", &hyper.q_head_dims(), Activation::Relu, state.0)?;
        let q2 = mlp_forward(&mut tape, &nets.target, "q2", &hyper.q_head_dims(), Activation::Relu, state.0)?;
        q1t.push(two(tape.value(q1)));
        q2t.push(two(tape.value(q2)));
    }

    let mut tape = Tape::new();
    let mut state = zero_state(&mut tape, hyper);
    let mut logp = Vec::with_capacity(len);
    for tr in &ep.transitions {
        state = trunk_step(&mut tape, &nets.actor, hyper, &tr.obs, tr.prev_action, state)?;
        let logits = mlp_forward(&mut tape, &nets.actor, "head", &hyper.policy_head_dims(), Activation::Relu, state.0)?;
        let lp = tape.log_softmax(logits);
        logp.push(two(tape.value(lp)));
    }

    let mut targets = Vec::with_capacity(len);
    for (t, tr) in ep.transitions.iter().enumerate() {
        let mut y = shaped_reward(tr, lambda_now, risk);
        if !tr.done && t + 1 < len {
            let mut v_next = 0.0;
            for a in 0..2 {
                let min_q = q1t[t + 1][a].min(q2t[t + 1][a]);
                let pi = logp[t + 1][a].exp();
                v_next += pi * (min_q - hyper.alpha * logp[t + 1][a]);
            }
            y += hyper.gamma * v_next;
        }
        if !y.is_finite() {
            return Err(NnError::NonFinite("critic target".into()));
        }
        targets.push(y);
    }
    Ok(targets)
}

/// Online critic Q values (both actions, twin minimum) for one episode,
/// computed without gradients.
fn critic_min_q(nets: &Networks, ep: &EpisodeRecord) -> Result<Vec<[f64; 2]>, NnError> {
    let hyper = &nets.hyper;
    let mut tape = Tape::new();
    let mut state = zero_state(&mut tape, hyper);
    let mut out = Vec::with_capacity(ep.transitions.len());
    for tr in &ep.transitions {
        state = trunk_step(&mut tape, &nets.critic, hyper, &tr.obs, tr.prev_action, state)?;
        let q1 = mlp_forward(&mut tape, &nets.critic, "q1", &hyper.q_head_dims(), Activation::Relu, state.0)?;
        let q2 = mlp_forward(&mut tape, &nets.critic, "q2", &hyper.q_head_dims(), Activation::Relu, state.0)?;
        let (q1, q2) = (two(tape.value(q1)), two(tape.value(q2)));
        out.push([q1[0].min(q2[0]), q1[1].min(q2[1])]);
    }
    Ok(out)
}

fn tree_sum(tape: &mut Tape, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    acc
}

/// One gradient update: sample a batch of episodes, regress both critics on
/// soft twin-min targets of shaped rewards, step the actor against the
/// updated critics, then soft-update the targets.
pub fn update_step(
    nets: &mut Networks,
    buffer: &ReplayBuffer,
    lambda_now: f64,
    risk: &RiskConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateDiagnostics, NnError> {
    let hyper = nets.hyper.clone();
    if buffer.len() < hyper.batch_episodes {
        return Ok(UpdateDiagnostics::default());
    }
    let batch: Vec<&EpisodeRecord> = buffer
        .sample(hyper.batch_episodes, rng)
        .into_iter()
        .filter(|ep| !ep.transitions.is_empty())
        .collect();
    if batch.is_empty() {
        return Ok(UpdateDiagnostics::default());
    }
    let n_trans: usize = batch.iter().map(|ep| ep.transitions.len()).sum();

    let targets: Vec<Vec<f64>> = batch
        .iter()
        .map(|ep| compute_targets(nets, ep, lambda_now, risk))
        .collect::<Result<_, _>>()?;

    // Critic regression on gathered Q(s_t, a_t).
    let mut tape = Tape::new();
    let mut terms = Vec::with_capacity(2 * n_trans);
    for (ep, ys) in batch.iter().zip(&targets) {
        let mut state = zero_state(&mut tape, &hyper);
        for (tr, &y) in ep.transitions.iter().zip(ys) {
            state = trunk_step(&mut tape, &nets.critic, &hyper, &tr.obs, tr.prev_action, state)?;
            let yv = tape.constant(NumArray::scalar(y));
            for head in ["q1", "q2"] {
                let q = mlp_forward(&mut tape, &nets.critic, head, &hyper.q_head_dims(), Activation::Relu, state.0)?;
                let qa = tape.gather(q, tr.action.index());
                let diff = tape.sub(qa, yv);
                terms.push(tape.mul(diff, diff));
            }
        }
    }
    let total = tree_sum(&mut tape, &terms);
    let critic_loss = tape.scale(total, 1.0 / n_trans as f64);
    let critic_loss_val = tape.value(critic_loss).item();
    if !critic_loss_val.is_finite() {
        return Err(NnError::NonFinite("critic loss".into()));
    }
    tape.backward(critic_loss, &mut nets.critic)?;
    adam_step(&mut nets.critic, hyper.lr, ADAM_BETAS, ADAM_EPS);

    // Actor step against the freshly updated critics.
    let min_q: Vec<Vec<[f64; 2]>> = batch
        .iter()
        .map(|ep| critic_min_q(nets, ep))
        .collect::<Result<_, _>>()?;

    let mut tape = Tape::new();
    let mut terms = Vec::with_capacity(n_trans);
    for (ep, qs) in batch.iter().zip(&min_q) {
        let mut state = zero_state(&mut tape, &hyper);
        for (tr, q) in ep.transitions.iter().zip(qs) {
            state = trunk_step(&mut tape, &nets.actor, &hyper, &tr.obs, tr.prev_action, state)?;
            let logits = mlp_forward(&mut tape, &nets.actor, "head", &hyper.policy_head_dims(), Activation::Relu, state.0)?;
            let lp = tape.log_softmax(logits);
            let pi = tape.exp(lp);
            let scaled = tape.scale(lp, hyper.alpha);
            let qv = tape.constant_vec(q);
            let inner = tape.sub(scaled, qv);
            let weighted = tape.mul(pi, inner);
            terms.push(tape.sum(weighted));
        }
    }
    let total = tree_sum(&mut tape, &terms);
    let actor_loss = tape.scale(total, 1.0 / n_trans as f64);
    let actor_loss_val = tape.value(actor_loss).item();
    if !actor_loss_val.is_finite() {
        return Err(NnError::NonFinite("actor loss".into()));
    }
    tape.backward(actor_loss, &mut nets.actor)?;
    adam_step(&mut nets.actor, hyper.lr, ADAM_BETAS, ADAM_EPS);

    soft_update(&nets.critic, &mut nets.target, hyper.tau_soft)?;

    Ok(UpdateDiagnostics {
        updated: true,
        critic_loss: critic_loss_val,
        actor_loss: actor_loss_val,
    })
}

/// On-policy score-function primal step on one freshly collected episode:
/// minimizes −(1/L) Σ_t G_t · log π(a_t | h_t) where G_t are discounted
/// returns of the shaped rewards. Leaves the critics untouched.
pub fn score_function_update(
    nets: &mut Networks,
    ep: &EpisodeRecord,
    lambda_now: f64,
    risk: &RiskConfig,
) -> Result<UpdateDiagnostics, NnError> {
    let hyper = nets.hyper.clone();
    if ep.transitions.is_empty() {
        return Ok(UpdateDiagnostics::default());
    }
    let mut returns = vec![0.0; ep.transitions.len()];
    let mut acc = 0.0;
    for (t, tr) in ep.transitions.iter().enumerate().rev() {
        acc = shaped_reward(tr, lambda_now, risk) + hyper.gamma * acc;
        returns[t] = acc;
    }

    let mut tape = Tape::new();
    let mut state = zero_state(&mut tape, &hyper);
    let mut terms = Vec::with_capacity(ep.transitions.len());
    for (tr, &g) in ep.transitions.iter().zip(&returns) {
        state = trunk_step(&mut tape, &nets.actor, &hyper, &tr.obs, tr.prev_action, state)?;
        let logits = mlp_forward(&mut tape, &nets.actor, "head", &hyper.policy_head_dims(), Activation::Relu, state.0)?;
        let lp = tape.log_softmax(logits);
        let lpa = tape.gather(lp, tr.action.index());
        terms.push(tape.scale(lpa, -g));
    }
    let total = tree_sum(&mut tape, &terms);
    let loss = tape.scale(total, 1.0 / ep.transitions.len() as f64);
    let loss_val = tape.value(loss).item();
    if !loss_val.is_finite() {
        return Err(NnError::NonFinite("score-function loss".into()));
    }
    tape.backward(loss, &mut nets.actor)?;
    adam_step(&mut nets.actor, hyper.lr, ADAM_BETAS, ADAM_EPS);
    Ok(UpdateDiagnostics {
        updated: true,
        critic_loss: 0.0,
        actor_loss: loss_val,
    })
}

/// Checkpoint metadata: enough to rebuild the planner and resume analysis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub planner_kind: String,
    pub hyper: SacHyper,
    pub risk: RiskConfig,
    pub lambda: f64,
    pub train_episodes: usize,
    pub buffer_episodes: usize,
}

pub fn save_checkpoint(
    path: &FsPath,
    nets: &Networks,
    meta: &CheckpointMeta,
) -> std::io::Result<()> {
    let mut stores = std::collections::BTreeMap::new();
    stores.insert("actor".to_string(), nets.actor.to_data());
    stores.insert("critic".to_string(), nets.critic.to_data());
    stores.insert("target".to_string(), nets.target.to_data());
    let ckpt = crate::nn::Checkpoint {
        stores,
        meta: serde_json::to_value(meta).expect("metadata serializes"),
    };
    ckpt.save(path)
}

pub fn load_checkpoint(path: &FsPath) -> Result<(Networks, CheckpointMeta), NnError> {
    let ckpt = crate::nn::Checkpoint::load(path)
        .map_err(|e| NnError::NonFinite(format!("checkpoint read failed: {e}")))?;
    let meta: CheckpointMeta = serde_json::from_value(ckpt.meta.clone())
        .map_err(|e| NnError::NonFinite(format!("checkpoint metadata invalid: {e}")))?;
    let get = |name: &str| -> Result<ParameterStore, NnError> {
        let data = ckpt
            .stores
            .get(name)
            .ok_or_else(|| NnError::UnknownParam(format!("checkpoint store {name}")))?;
        ParameterStore::from_data(data)
    };
    Ok((
        Networks {
            actor: get("actor")?,
            critic: get("critic")?,
            target: get("target")?,
            hyper: meta.hyper.clone(),
        },
        meta,
    ))
}
