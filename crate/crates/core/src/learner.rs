//! Average-reward Q-learning with relative value iteration semantics: each
//! update subtracts `f(Q) = max_u Q(s_ref, u)` for a fixed reference state,
//! which anchors the table and makes `f(Q)` converge to the optimal average
//! reward per slot.
//!
//! One agent trains per microgrid, fully independently: its Q-table, its
//! exploration stream and its environment are private, and the only shared
//! signal is the global price sequence (identical per-trainer process
//! clones, see [`crate::env`]). Action indices follow the canonical
//! enumeration order of [`crate::domain::enumerate_actions`], so tables,
//! policies and the exact solver all speak the same indexing.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::domain::{DomainError, JointAction, MicrogridState, Money, StateInterner, Variant};
use crate::env::{AgentEnv, PriceProcess};
use crate::processes::{stream, uniform01, uniform_below};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("state index {0} has no allocated row")]
    UnknownState(u32),
    #[error("action index {index} out of range for state with {n_actions} actions")]
    BadAction { index: usize, n_actions: usize },
    #[error("cannot select from an empty feasible set")]
    EmptyFeasible,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Step-size policy. The harmonic default `c0 / (c1 + visits(s,a))`
/// satisfies the usual stochastic-approximation conditions per state-action
/// pair (Σα = ∞, Σα² < ∞).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlphaSchedule {
    Constant(f64),
    Harmonic { c0: f64, c1: f64 },
}

impl AlphaSchedule {
    /// Step size for an update whose pair has been visited `visits` times
    /// before this one.
    pub fn alpha(&self, visits: u64) -> f64 {
        match *self {
            AlphaSchedule::Constant(a) => a,
            AlphaSchedule::Harmonic { c0, c1 } => c0 / (c1 + visits as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningSchedule {
    pub alpha: AlphaSchedule,
    pub epsilon: f64,
}

impl LearningSchedule {
    pub fn from_scenario(scenario: &ScenarioConfig) -> Self {
        Self {
            alpha: AlphaSchedule::Harmonic {
                c0: scenario.training.alpha_c0,
                c1: scenario.training.alpha_c1,
            },
            epsilon: scenario.training.epsilon,
        }
    }
}

/// Dense Q-values and visit counts per interned state, allocated lazily on
/// first visit. All entries start at zero. The reference state is fixed the
/// first time it is set and anchors every update.
#[derive(Debug, Clone, Default)]
pub struct QTable {
    values: Vec<Option<Vec<f64>>>,
    visits: Vec<Option<Vec<u64>>>,
    reference_state: Option<u32>,
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocates the zero row for a state if absent.
    pub fn ensure_row(&mut self, state: u32, n_actions: usize) {
        let idx = state as usize;
        if idx >= self.values.len() {
            self.values.resize(idx + 1, None);
            self.visits.resize(idx + 1, None);
        }
        if self.values[idx].is_none() {
            self.values[idx] = Some(vec![0.0; n_actions]);
            self.visits[idx] = Some(vec![0; n_actions]);
        }
    }

    /// Fixes the reference state on first call; later calls are no-ops.
    pub fn anchor(&mut self, state: u32) {
        self.reference_state.get_or_insert(state);
    }

    pub fn reference_state(&self) -> Option<u32> {
        self.reference_state
    }

    pub fn row(&self, state: u32) -> Option<&[f64]> {
        self.values.get(state as usize).and_then(|r| r.as_deref())
    }

    pub fn value(&self, state: u32, action: usize) -> f64 {
        self.row(state).map_or(0.0, |r| r[action])
    }

    pub fn pair_visits(&self, state: u32, action: usize) -> u64 {
        self.visits
            .get(state as usize)
            .and_then(|r| r.as_deref())
            .map_or(0, |r| r[action])
    }

    /// Total visits across all actions of a state.
    pub fn state_visits(&self, state: u32) -> u64 {
        self.visits
            .get(state as usize)
            .and_then(|r| r.as_deref())
            .map_or(0, |r| r.iter().sum())
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    /// Greedy value of a state: `max_u Q(state, u)`.
    pub fn q_max(&self, state: u32) -> Result<f64, LearnerError> {
        let row = self.row(state).ok_or(LearnerError::UnknownState(state))?;
        Ok(row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Greedy action index with ties broken by lowest index.
    pub fn argmax(&self, state: u32) -> Result<usize, LearnerError> {
        let row = self.row(state).ok_or(LearnerError::UnknownState(state))?;
        if row.is_empty() {
            return Err(LearnerError::EmptyFeasible);
        }
        let mut best = 0;
        for (i, &q) in row.iter().enumerate().skip(1) {
            if q > row[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// The anchored table value `f(Q) = max_u Q(s_ref, u)`; the quantity
    /// that converges to the optimal average reward.
    pub fn f_of_q(&self) -> Result<f64, LearnerError> {
        let s_ref = self
            .reference_state
            .ok_or(LearnerError::UnknownState(u32::MAX))?;
        self.q_max(s_ref)
    }

    /// Order-stable FNV-1a digest of all values and visit counts; used to
    /// assert tables are frozen across evaluation.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (values, visits) in self.values.iter().zip(&self.visits) {
            match (values, visits) {
                (Some(v), Some(n)) => {
                    mix(v.len() as u64);
                    for &q in v {
                        mix(q.to_bits());
                    }
                    for &c in n {
                        mix(c);
                    }
                }
                _ => mix(u64::MAX),
            }
        }
        mix(self.reference_state.map_or(u64::MAX, u64::from));
        h
    }
}

/// One relative Q-learning update:
/// `Q(s,a) += α · (g + max_u Q(s_next,u) − f(Q) − Q(s,a))`.
///
/// The step size is taken from the pair's pre-update visit count, which is
/// then incremented. Exactly one table entry changes.
pub fn q_update(
    table: &mut QTable,
    s: u32,
    a: usize,
    gain: Money,
    s_next: u32,
    schedule: &LearningSchedule,
) -> Result<(), LearnerError> {
    let next_max = table.q_max(s_next)?;
    let anchor = table.f_of_q()?;
    let row = table
        .values
        .get(s as usize)
        .and_then(|r| r.as_ref())
        .ok_or(LearnerError::UnknownState(s))?;
    if a >= row.len() {
        return Err(LearnerError::BadAction {
            index: a,
            n_actions: row.len(),
        });
    }
    let visits = table.visits[s as usize].as_ref().expect("row allocated")[a];
    let alpha = schedule.alpha.alpha(visits);
    let current = row[a];
    let target = gain as f64 + next_max - anchor;
    let updated = current + alpha * (target - current);
    table.values[s as usize].as_mut().expect("row allocated")[a] = updated;
    table.visits[s as usize].as_mut().expect("row allocated")[a] = visits + 1;
    Ok(())
}

/// ε-greedy selection over the dense feasible action indices `0..n_actions`
/// (every enumerated action is feasible by construction). Exploits via
/// [`QTable::argmax`], explores uniformly.
pub fn select_action(
    table: &QTable,
    state: u32,
    n_actions: usize,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<usize, LearnerError> {
    if n_actions == 0 {
        return Err(LearnerError::EmptyFeasible);
    }
    if epsilon > 0.0 && uniform01(rng) < epsilon {
        return Ok(uniform_below(rng, n_actions as u64) as usize);
    }
    table.argmax(state)
}

/// The greedy policy over every allocated row; `None` for states the table
/// never visited.
pub fn extract_policy(table: &QTable) -> Vec<Option<usize>> {
    (0..table.n_states() as u32)
        .map(|s| {
            table
                .row(s)
                .map(|_| table.argmax(s).expect("allocated row"))
        })
        .collect()
}

/// One subsampled point of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u64,
    pub f_of_q: f64,
    pub cumulative_mean_reward: f64,
}

/// Everything training one agent produces: the table, the state space it
/// discovered, the per-state action lists (canonical order), the anchored
/// convergence trace and the reference state.
#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub agent: usize,
    pub variant: Variant,
    pub penalty: Money,
    pub table: QTable,
    pub interner: StateInterner,
    pub actions: Vec<Vec<JointAction>>,
    pub trace: Vec<TracePoint>,
}

impl TrainedAgent {
    /// Greedy action for a state. States never seen in training fall back
    /// to the no-trade action (empty subset, trade clamped to the feasible
    /// interval) rather than an arbitrary table row.
    pub fn greedy_action(
        &self,
        state: &MicrogridState,
        env: &AgentEnv,
    ) -> Result<JointAction, LearnerError> {
        if let Some(idx) = self.interner.lookup(state) {
            if self.table.row(idx).is_some() {
                let a = self.table.argmax(idx)?;
                return Ok(self.actions[idx as usize][a]);
            }
        }
        let (lo, hi) =
            crate::domain::feasible_trade_interval(state, env.params(), 0, env.variant());
        Ok(JointAction {
            trade: 0.clamp(lo, hi),
            subset: 0,
        })
    }
}

/// Trains one microgrid's agent for `cycles` environment steps and records
/// the convergence trace every `trace_stride` iterations.
///
/// Deterministic: all randomness comes from labeled streams under the
/// scenario's master seed, so identical inputs give bit-identical tables.
pub fn train(
    scenario: &ScenarioConfig,
    agent: usize,
    variant: Variant,
    penalty: Money,
    cycles: u64,
) -> Result<TrainedAgent, LearnerError> {
    let schedule = LearningSchedule::from_scenario(scenario);
    let mut price = PriceProcess::new(scenario, "train")?;
    let initial_price = price.draw();
    let mut env = AgentEnv::new(scenario, agent, penalty, variant, "train", initial_price)?;
    let mut explore = stream(scenario.master_seed, &format!("train/explore/{agent}"));

    let mut table = QTable::new();
    let mut interner = StateInterner::new();
    let mut actions: Vec<Vec<JointAction>> = Vec::new();
    let mut trace = Vec::new();
    let mut total_reward: i64 = 0;

    // interns a state and caches its action list and table row; owns a
    // params clone so the closure does not borrow `env` across steps
    let params = env.params().clone();
    let admit = |state: &MicrogridState,
                 table: &mut QTable,
                 interner: &mut StateInterner,
                 actions: &mut Vec<Vec<JointAction>>|
     -> Result<u32, LearnerError> {
        let idx = interner.intern(state);
        if idx as usize == actions.len() {
            actions.push(crate::domain::enumerate_actions(state, &params, variant)?);
        }
        table.ensure_row(idx, actions[idx as usize].len());
        Ok(idx)
    };

    let mut s = admit(env.state(), &mut table, &mut interner, &mut actions)?;
    table.anchor(s);

    for iter in 0..cycles {
        let n_actions = actions[s as usize].len();
        let a = select_action(&table, s, n_actions, schedule.epsilon, &mut explore)?;
        let action = actions[s as usize][a];
        let next_price = price.draw();
        let gain = env.step(&action, next_price)?;
        let s_next = admit(env.state(), &mut table, &mut interner, &mut actions)?;
        q_update(&mut table, s, a, gain, s_next, &schedule)?;
        total_reward += gain;
        s = s_next;

        let done = iter + 1;
        if done % scenario.training.trace_stride == 0 || done == cycles {
            trace.push(TracePoint {
                iteration: done,
                f_of_q: table.f_of_q()?,
                cumulative_mean_reward: total_reward as f64 / done as f64,
            });
        }
    }

    Ok(TrainedAgent {
        agent,
        variant,
        penalty,
        table,
        interner,
        actions,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use rand_core::SeedableRng;

    fn constant_schedule(alpha: f64) -> LearningSchedule {
        LearningSchedule {
            alpha: AlphaSchedule::Constant(alpha),
            epsilon: 0.0,
        }
    }

    /// A two-state table with one action each, anchored at state 0.
    fn two_state_table() -> QTable {
        let mut t = QTable::new();
        t.ensure_row(0, 1);
        t.ensure_row(1, 1);
        t.anchor(0);
        t
    }

    #[test]
    fn zero_gain_keeps_zero_table() {
        let mut t = two_state_table();
        q_update(&mut t, 0, 0, 0, 1, &constant_schedule(0.5)).unwrap();
        assert_eq!(t.value(0, 0), 0.0);
        assert_eq!(t.pair_visits(0, 0), 1);
    }

    #[test]
    fn single_update_scales_by_alpha() {
        let mut t = two_state_table();
        q_update(&mut t, 0, 0, 10, 1, &constant_schedule(0.5)).unwrap();
        assert_eq!(t.value(0, 0), 5.0);
        assert_eq!(t.value(1, 0), 0.0, "only one entry per update");
    }

    #[test]
    fn harmonic_alpha_decays_per_pair() {
        let sched = AlphaSchedule::Harmonic { c0: 1.0, c1: 10.0 };
        assert_eq!(sched.alpha(0), 0.1);
        assert!((sched.alpha(90) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn two_state_cycle_converges_to_exact_gain() {
        // deterministic cycle: state 0 pays 0 into state 1, state 1 pays 10
        // back into state 0; the optimal (only) average reward is 5
        let mut t = two_state_table();
        let sched = constant_schedule(0.1);
        let mut s = 0u32;
        for _ in 0..10_000 {
            let gain = if s == 0 { 0 } else { 10 };
            let s_next = 1 - s;
            q_update(&mut t, s, 0, gain, s_next, &sched).unwrap();
            s = s_next;
        }
        assert!((t.f_of_q().unwrap() - 5.0).abs() < 1e-3);
        assert!((t.value(0, 0) - 5.0).abs() < 1e-3);
        assert!((t.value(1, 0) - 10.0).abs() < 1e-3);
    }

    #[test]
    fn epsilon_one_explores_uniformly() {
        let mut t = QTable::new();
        t.ensure_row(0, 4);
        t.anchor(0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0u64; 4];
        let draws = 100_000;
        for _ in 0..draws {
            counts[select_action(&t, 0, 4, 1.0, &mut rng).unwrap()] += 1;
        }
        let expected = draws as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 99.9th percentile of χ² with 3 degrees of freedom
        assert!(chi2 < 16.27, "χ² = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn epsilon_zero_takes_argmax_with_low_tie_break() {
        let mut t = QTable::new();
        t.ensure_row(0, 3);
        t.anchor(0);
        t.values[0].as_mut().unwrap()[1] = 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_action(&t, 0, 3, 0.0, &mut rng).unwrap(), 1);
        // equal values: lowest index wins
        t.values[0].as_mut().unwrap()[1] = 0.0;
        assert_eq!(select_action(&t, 0, 3, 0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn empty_feasible_set_rejected() {
        let t = QTable::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            select_action(&t, 0, 0, 0.5, &mut rng),
            Err(LearnerError::EmptyFeasible)
        ));
    }

    #[test]
    fn policy_invariant_under_constant_shift() {
        let mut t = QTable::new();
        t.ensure_row(0, 3);
        t.ensure_row(1, 2);
        t.anchor(0);
        t.values[0]
            .as_mut()
            .unwrap()
            .copy_from_slice(&[1.0, 3.0, 2.0]);
        t.values[1].as_mut().unwrap().copy_from_slice(&[-1.0, -2.0]);
        let before = extract_policy(&t);
        for row in t.values.iter_mut().flatten() {
            for q in row {
                *q += 123.456;
            }
        }
        assert_eq!(extract_policy(&t), before);
        assert_eq!(before, vec![Some(1), Some(0)]);
    }

    #[test]
    fn all_zero_table_extracts_lowest_index() {
        let mut t = QTable::new();
        t.ensure_row(0, 5);
        assert_eq!(extract_policy(&t), vec![Some(0)]);
    }

    #[test]
    fn zero_cycles_trains_nothing() {
        let scenario = Preset::Tiny.scenario();
        let out = train(&scenario, 0, Variant::AdlSharing, 5, 0).unwrap();
        assert!(out.trace.is_empty());
        // only the initial state is admitted, nothing is visited
        assert_eq!(out.interner.len(), 1);
        assert_eq!(out.table.state_visits(0), 0);
    }

    #[test]
    fn training_is_deterministic() {
        let scenario = Preset::Tiny.scenario();
        let a = train(&scenario, 0, Variant::AdlSharing, 5, 3_000).unwrap();
        let b = train(&scenario, 0, Variant::AdlSharing, 5, 3_000).unwrap();
        assert_eq!(a.table.checksum(), b.table.checksum());
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.interner.len(), b.interner.len());
    }

    #[test]
    fn zero_price_zero_penalty_keeps_table_zero() {
        // with a degenerate price alphabet {0} and c = 0 every reward is 0,
        // so the all-zero table is a fixed point of training
        let mut scenario = Preset::Tiny.scenario();
        scenario.price.alphabet = vec![0];
        scenario.penalties = vec![0];
        let out = train(&scenario, 0, Variant::AdlSharing, 0, 5_000).unwrap();
        for s in 0..out.table.n_states() as u32 {
            if let Some(row) = out.table.row(s) {
                assert!(row.iter().all(|&q| q == 0.0));
            }
        }
        assert_eq!(out.table.f_of_q().unwrap(), 0.0);
    }

    #[test]
    fn visit_counts_sum_to_cycles() {
        let scenario = Preset::Tiny.scenario();
        let cycles = 4_000;
        let out = train(&scenario, 0, Variant::AdlSharing, 5, cycles).unwrap();
        let total: u64 = (0..out.table.n_states() as u32)
            .map(|s| out.table.state_visits(s))
            .sum();
        assert_eq!(total, cycles);
    }

    #[test]
    fn trace_is_subsampled_on_stride() {
        let mut scenario = Preset::Tiny.scenario();
        scenario.training.trace_stride = 500;
        let out = train(&scenario, 0, Variant::AdlSharing, 5, 2_100).unwrap();
        let iterations: Vec<u64> = out.trace.iter().map(|p| p.iteration).collect();
        assert_eq!(iterations, vec![500, 1000, 1500, 2000, 2100]);
    }

    #[test]
    fn checksum_tracks_content() {
        let mut t = two_state_table();
        let before = t.checksum();
        assert_eq!(before, t.clone().checksum());
        q_update(&mut t, 0, 0, 3, 1, &constant_schedule(0.5)).unwrap();
        assert_ne!(t.checksum(), before);
    }
}
