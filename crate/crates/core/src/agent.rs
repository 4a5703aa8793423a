//! Tabular SARSA controller for the gateway flushing rates.
//!
//! The state is the vector of per-queue threshold labels (2^N states). An
//! action nudges a single queue's rate up or down, or holds. Bandwidth
//! taken from or given to a queue always comes from the other queues, so
//! the link budget is conserved by construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, QueueLabel, StepReport};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GlobalState {
    pub labels: Vec<QueueLabel>,
}

impl GlobalState {
    pub fn observe(gateway: &Gateway) -> Self {
        Self { labels: gateway.labels() }
    }

    /// Bit `q` of the index is set when queue `q` is above threshold.
    pub fn index(&self) -> usize {
        self.labels.iter().enumerate().filter(|(_, l)| l.is_above()).fold(0, |acc, (q, _)| acc | (1 << q))
    }

    pub fn from_index(queues: usize, index: usize) -> Self {
        let labels = (0..queues)
            .map(|q| if index & (1 << q) != 0 { QueueLabel::AboveThreshold } else { QueueLabel::BelowThreshold })
            .collect();
        Self { labels }
    }

    pub fn all_below(&self) -> bool {
        self.labels.iter().all(|l| !l.is_above())
    }

    pub fn space_size(queues: usize) -> usize {
        1 << queues
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Hold,
    Increase(usize),
    Decrease(usize),
}

impl Action {
    /// 2N + 1 actions for N queues.
    pub fn count(queues: usize) -> usize {
        2 * queues + 1
    }

    /// Canonical order: Hold, (0, Inc), (0, Dec), (1, Inc), ...
    pub fn index(self) -> usize {
        match self {
            Action::Hold => 0,
            Action::Increase(q) => 1 + 2 * q,
            Action::Decrease(q) => 2 + 2 * q,
        }
    }

    pub fn from_index(index: usize) -> Self {
        match index {
            0 => Action::Hold,
            i if i % 2 == 1 => Action::Increase((i - 1) / 2),
            i => Action::Decrease((i - 2) / 2),
        }
    }

    pub fn all(queues: usize) -> impl Iterator<Item = Action> {
        (0..Self::count(queues)).map(Action::from_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    queues: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(queues: usize) -> Self {
        assert!(queues < usize::BITS as usize - 1, "too many queues for a dense table");
        Self { queues, values: vec![0.0; GlobalState::space_size(queues) * Action::count(queues)] }
    }

    pub fn queues(&self) -> usize {
        self.queues
    }

    pub fn states(&self) -> usize {
        GlobalState::space_size(self.queues)
    }

    pub fn actions(&self) -> usize {
        Action::count(self.queues)
    }

    fn slot(&self, state: usize, action: usize) -> usize {
        assert!(state < self.states() && action < self.actions(), "({state}, {action}) out of range");
        state * self.actions() + action
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[self.slot(state, action)]
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        let i = self.slot(state, action);
        self.values[i] = value;
    }

    pub fn row(&self, state: usize) -> &[f64] {
        let start = self.slot(state, 0);
        &self.values[start..start + self.actions()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// What the adjustment fraction is a fraction of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustBase {
    CurrentRate,
    #[default]
    LinkCapacity,
}

/// Which actions the policy may choose in a given state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSet {
    /// Every action in every state.
    All,
    /// Hold, plus Increase/Decrease of queues that are above threshold.
    #[default]
    AboveThreshold,
}

impl ActionSet {
    pub fn allows(self, state: &GlobalState, action: Action) -> bool {
        match (self, action) {
            (ActionSet::All, _) | (_, Action::Hold) => true,
            (ActionSet::AboveThreshold, Action::Increase(q) | Action::Decrease(q)) => state.labels[q].is_above(),
        }
    }

    /// Allowed action indices in canonical order; never empty.
    pub fn allowed(self, state: &GlobalState) -> Vec<usize> {
        Action::all(state.labels.len()).filter(|a| self.allows(state, *a)).map(Action::index).collect()
    }
}

/// How an executed (state, action) pair and its outcome are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Weighted +1/-1 label sum of the resulting state; see [`reward`].
    LabelScore,
    /// [`penalty_reward`] of the resulting state alone.
    Penalty,
    /// [`penalty_reward`] of the resulting state plus [`action_bonus`].
    #[default]
    Shaped,
}

impl RewardKind {
    pub fn score(self, state: &GlobalState, action: Action, next_state: &GlobalState, weights: &[f64]) -> f64 {
        match self {
            RewardKind::LabelScore => reward(next_state, weights),
            RewardKind::Penalty => penalty_reward(next_state, weights),
            RewardKind::Shaped => penalty_reward(next_state, weights) + action_bonus(state, action, weights),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub adjust_fraction: f64,
    pub adjust_base: AdjustBase,
    pub actions: ActionSet,
    pub max_attempts: usize,
    pub priority_weights: Vec<f64>,
    pub reward: RewardKind,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.08,
            alpha: 0.20,
            gamma: 0.80,
            adjust_fraction: 0.10,
            adjust_base: AdjustBase::LinkCapacity,
            actions: ActionSet::AboveThreshold,
            max_attempts: 500,
            priority_weights: vec![3.0, 2.0, 1.0],
            reward: RewardKind::Shaped,
        }
    }
}

impl AgentConfig {
    pub fn violations(&self, queues: usize) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            out.push(("epsilon", format!("{} not in (0, 1]", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            out.push(("alpha", format!("{} not in (0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            out.push(("gamma", format!("{} not in [0, 1)", self.gamma)));
        }
        if !(self.adjust_fraction > 0.0 && self.adjust_fraction < 1.0) {
            out.push(("adjust_fraction", format!("{} not in (0, 1)", self.adjust_fraction)));
        }
        if self.max_attempts == 0 {
            out.push(("max_attempts", "must be at least 1".to_string()));
        }
        if self.priority_weights.len() != queues {
            out.push(("priority_weights", format!("{} weights for {} queues", self.priority_weights.len(), queues)));
        }
        if self.priority_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            out.push(("priority_weights", "every weight must be positive".to_string()));
        }
        out
    }
}

/// Index of the greedy action; ties go to the lowest index.
pub fn greedy_action(qtable: &QTable, state: &GlobalState) -> Action {
    let row = qtable.row(state.index());
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    Action::from_index(best)
}

/// Greedy over a subset of action indices; ties go to the first listed.
pub fn greedy_among(qtable: &QTable, state: &GlobalState, allowed: &[usize]) -> Action {
    let row = qtable.row(state.index());
    let mut best = allowed[0];
    for &i in &allowed[1..] {
        if row[i] > row[best] {
            best = i;
        }
    }
    Action::from_index(best)
}

/// Epsilon-greedy restricted to the actions `set` allows in `state`.
pub fn select_allowed<R: Rng + ?Sized>(
    qtable: &QTable,
    state: &GlobalState,
    set: ActionSet,
    epsilon: f64,
    rng: &mut R,
) -> Action {
    let allowed = set.allowed(state);
    if rng.gen::<f64>() < epsilon {
        Action::from_index(allowed[rng.gen_range(0..allowed.len())])
    } else {
        greedy_among(qtable, state, &allowed)
    }
}

/// Epsilon-greedy choice: uniformly random with probability `epsilon`.
pub fn select_action<R: Rng + ?Sized>(qtable: &QTable, state: &GlobalState, epsilon: f64, rng: &mut R) -> Action {
    if rng.gen::<f64>() < epsilon {
        Action::from_index(rng.gen_range(0..qtable.actions()))
    } else {
        greedy_action(qtable, state)
    }
}

/// Rate vector after applying `action`. Increases are funded by the other
/// queues in proportion to their rates, each donor stopping at `min_rate`;
/// decreases stop at `min_rate` and hand the freed bandwidth back in
/// proportion to the other rates. Infeasible requests shrink, possibly to a
/// no-op.
pub fn redistribute(rates: &[f64], link_capacity: f64, min_rate: f64, action: Action, amount: f64) -> Vec<f64> {
    let mut next = rates.to_vec();
    let (target, increase) = match action {
        Action::Hold => return next,
        Action::Increase(q) => (q, true),
        Action::Decrease(q) => (q, false),
    };
    assert!(target < rates.len(), "action targets queue {target} of {}", rates.len());
    let others: f64 = rates.iter().enumerate().filter(|(i, _)| *i != target).map(|(_, r)| r).sum();
    if !(amount > 0.0) || !(others > 0.0) {
        return next;
    }

    if increase {
        let mut gained = 0.0;
        for (i, r) in next.iter_mut().enumerate() {
            if i == target {
                continue;
            }
            let wanted = amount * rates[i] / others;
            let headroom = (rates[i] - min_rate).max(0.0);
            if wanted >= headroom {
                gained += headroom;
                if headroom > 0.0 {
                    *r = min_rate;
                }
            } else {
                gained += wanted;
                *r -= wanted;
            }
        }
        if gained <= 0.0 {
            return rates.to_vec();
        }
        next[target] += gained;
    } else {
        let lowered = (rates[target] - amount).max(min_rate);
        let freed = rates[target] - lowered;
        if freed <= 0.0 {
            return next;
        }
        next[target] = lowered;
        for (i, r) in next.iter_mut().enumerate() {
            if i != target {
                *r += freed * rates[i] / others;
            }
        }
    }

    // Absorb rounding in the largest rate, which is never near its floor.
    let largest = (0..next.len()).max_by(|&a, &b| next[a].total_cmp(&next[b]).then(b.cmp(&a))).expect("non-empty");
    let rest: f64 = next.iter().enumerate().filter(|(i, _)| *i != largest).map(|(_, r)| r).sum();
    next[largest] = link_capacity - rest;
    next
}

/// New rate vector for `action` on the gateway's current allocation.
pub fn apply_action(gateway: &Gateway, action: Action, adjust_fraction: f64, base: AdjustBase) -> Vec<f64> {
    let rates = gateway.flush_rates();
    let amount = match action {
        Action::Hold => 0.0,
        Action::Increase(q) | Action::Decrease(q) => match base {
            AdjustBase::CurrentRate => adjust_fraction * rates[q],
            AdjustBase::LinkCapacity => adjust_fraction * gateway.link_capacity,
        },
    };
    redistribute(&rates, gateway.link_capacity, gateway.min_rate, action, amount)
}

/// Priority-weighted label score in [-1, 1]: +1 per weight for a queue below
/// threshold, -1 per weight above, normalised by the total weight.
pub fn reward(next_state: &GlobalState, priority_weights: &[f64]) -> f64 {
    assert_eq!(next_state.labels.len(), priority_weights.len(), "one weight per queue");
    let total: f64 = priority_weights.iter().sum();
    let score: f64 =
        next_state.labels.iter().zip(priority_weights).map(|(l, w)| if l.is_above() { -w } else { *w }).sum();
    score / total
}

/// +1 when every queue is below threshold, otherwise
/// `-(sum of weights of queues above) / (sum of all weights)`, so any state
/// short of the goal scores at most 0.
pub fn penalty_reward(next_state: &GlobalState, priority_weights: &[f64]) -> f64 {
    assert_eq!(next_state.labels.len(), priority_weights.len(), "one weight per queue");
    if next_state.all_below() {
        return 1.0;
    }
    let total: f64 = priority_weights.iter().sum();
    let above: f64 = next_state.labels.iter().zip(priority_weights).filter(|(l, _)| l.is_above()).map(|(_, w)| w).sum();
    -above / total
}

/// Credit for acting on a queue that was above threshold: `+w_q / W` for
/// raising its rate, `-w_q / W` for lowering it, 0 for anything else.
pub fn action_bonus(state: &GlobalState, action: Action, priority_weights: &[f64]) -> f64 {
    let total: f64 = priority_weights.iter().sum();
    match action {
        Action::Increase(q) if state.labels[q].is_above() => priority_weights[q] / total,
        Action::Decrease(q) if state.labels[q].is_above() => -priority_weights[q] / total,
        _ => 0.0,
    }
}

/// Q(s,a) += alpha * (r + gamma * Q(s',a') - Q(s,a)).
#[allow(clippy::too_many_arguments)]
pub fn sarsa_update(
    qtable: &mut QTable,
    state: usize,
    action: usize,
    reward: f64,
    next_state: usize,
    next_action: usize,
    alpha: f64,
    gamma: f64,
) {
    let current = qtable.get(state, action);
    let target = reward + gamma * qtable.get(next_state, next_action);
    qtable.set(state, action, current + alpha * (target - current));
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeOutcome {
    pub attempts: usize,
    pub final_state: Vec<QueueLabel>,
    pub converged: bool,
}

/// What the live environment supplies while an episode steps the gateway.
pub trait EpisodeDriver {
    /// Offered load for the step about to run.
    fn arrival_rates(&mut self) -> Vec<f64>;

    /// Called after every attempt's gateway step.
    fn after_step(&mut self, _gateway: &Gateway, _report: &StepReport, _attempt: usize) {}
}

/// Constant offered load, nothing recorded.
#[derive(Debug, Clone)]
pub struct FixedLoad(pub Vec<f64>);

impl EpisodeDriver for FixedLoad {
    fn arrival_rates(&mut self) -> Vec<f64> {
        self.0.clone()
    }
}

/// Agent with a Q-table that persists across episodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SarsaAgent {
    pub config: AgentConfig,
    pub qtable: QTable,
}

impl SarsaAgent {
    pub fn new(config: AgentConfig, queues: usize) -> Self {
        Self { config, qtable: QTable::new(queues) }
    }

    /// Runs one control episode on the live gateway, one `dt` per attempt,
    /// stopping once every queue is below threshold or after
    /// `min(max_attempts, attempt_cap)` attempts.
    pub fn control_episode<R: Rng + ?Sized, D: EpisodeDriver>(
        &mut self,
        gateway: &mut Gateway,
        dt: f64,
        rng: &mut R,
        driver: &mut D,
        attempt_cap: usize,
    ) -> EpisodeOutcome {
        let limit = self.config.max_attempts.min(attempt_cap);
        let mut state = GlobalState::observe(gateway);
        if state.all_below() {
            return EpisodeOutcome { attempts: 0, final_state: state.labels, converged: true };
        }

        let set = self.config.actions;
        let mut action = select_allowed(&self.qtable, &state, set, self.config.epsilon, rng);
        let mut attempts = 0;
        while attempts < limit {
            attempts += 1;
            let rates = apply_action(gateway, action, self.config.adjust_fraction, self.config.adjust_base);
            gateway.set_flush_rates(&rates).expect("redistribution keeps the budget and floors");
            let report = gateway.step(dt, &driver.arrival_rates(), rng);

            let next_state = GlobalState::observe(gateway);
            let r = self.config.reward.score(&state, action, &next_state, &self.config.priority_weights);
            let next_action = select_allowed(&self.qtable, &next_state, set, self.config.epsilon, rng);
            sarsa_update(
                &mut self.qtable,
                state.index(),
                action.index(),
                r,
                next_state.index(),
                next_action.index(),
                self.config.alpha,
                self.config.gamma,
            );
            driver.after_step(gateway, &report, attempts);

            state = next_state;
            action = next_action;
            if state.all_below() {
                break;
            }
        }
        let converged = state.all_below();
        EpisodeOutcome { attempts, final_state: state.labels, converged }
    }
}
