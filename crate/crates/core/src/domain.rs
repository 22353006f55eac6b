//! The microgrid MDP: states, joint actions, feasibility intervals,
//! single-stage rewards and the one-slot transition.
//!
//! Everything here is a pure function of its inputs. All energies, demands,
//! trades and prices are integer units; rewards are integer currency.
//!
//! Sign conventions: a positive trade sells, a negative trade buys. The
//! deferrable-load component `v` of a joint action is the negated energy of
//! the scheduled job subset and is never positive.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer energy units.
pub type Units = i64;
/// Integer currency.
pub type Money = i64;

/// Hard cap on concurrently pending deferrable jobs, so power sets stay
/// enumerable (2^16 subsets at most).
pub const MAX_JOBS: usize = 16;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("{count} pending jobs exceed the enumeration cap of {cap}")]
    TooManyJobs { count: usize, cap: usize },
    #[error(
        "trade {trade} with subset energy {subset_energy} outside feasible interval [{lo}, {hi}]"
    )]
    InfeasibleAction {
        trade: Units,
        subset_energy: Units,
        lo: Units,
        hi: Units,
    },
    #[error("subset mask {mask:#x} addresses more jobs than the {count} pending")]
    BadSubsetMask { mask: u32, count: usize },
    #[error("job arrivals are only issued at slot 1, got {count} new jobs entering slot {slot}")]
    ArrivalOutsideSlotOne { slot: u32, count: usize },
    #[error("job energy must be at least 1, got {energy}")]
    BadJobEnergy { energy: Units },
}

/// A deferrable load: energy still required and the number of future slots
/// in which it can be scheduled without penalty. A job whose deadline is 0
/// must be scheduled in the current slot or it is penalized and dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AdlJob {
    pub energy: Units,
    pub deadline: u32,
}

impl AdlJob {
    pub fn new(energy: Units, deadline: u32) -> Result<Self, DomainError> {
        if energy < 1 {
            return Err(DomainError::BadJobEnergy { energy });
        }
        Ok(Self { energy, deadline })
    }
}

/// Pending jobs in canonical order (energy, then deadline), so that equal
/// job collections compare and hash equal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JobSet(Vec<AdlJob>);

impl JobSet {
    pub fn new(mut jobs: Vec<AdlJob>) -> Self {
        jobs.sort_unstable();
        Self(jobs)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn jobs(&self) -> &[AdlJob] {
        &self.0
    }

    /// Sum of all pending energies: the largest subset total.
    pub fn max_subset_energy(&self) -> Units {
        self.0.iter().map(|j| j.energy).sum()
    }
}

/// The agent-visible state: slot of day, net demand, price and pending jobs.
///
/// Net demand folds renewable generation, battery charge and inflexible
/// demand into a single number; the simulator tracks the battery split
/// internally in [`EnvSnapshot`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MicrogridState {
    pub slot: u32,
    pub net_demand: Units,
    pub price: Money,
    pub jobs: JobSet,
}

/// A joint decision: the trade quantity (positive sells, negative buys) and
/// the bitmask of pending jobs scheduled this slot, in the canonical job
/// order of the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointAction {
    pub trade: Units,
    pub subset: u32,
}

impl JointAction {
    /// Energy of the scheduled subset; the load component is its negation.
    pub fn subset_energy(&self, jobs: &JobSet) -> Result<Units, DomainError> {
        let n = jobs.len();
        if self.subset >= (1u32 << n) {
            return Err(DomainError::BadSubsetMask {
                mask: self.subset,
                count: n,
            });
        }
        let mut total = 0;
        for (k, job) in jobs.jobs().iter().enumerate() {
            if self.subset & (1 << k) != 0 {
                total += job.energy;
            }
        }
        Ok(total)
    }
}

/// Which feasibility rule governs trades, and how deferrable load is modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Full model: flexible job scheduling, trade bounded so the battery can
    /// be filled or the surplus sold.
    AdlSharing,
    /// Surplus may be sold only after the battery is full.
    GreedyAdl,
    /// Jobs are folded into slot-1 inflexible demand; no scheduling choice.
    NonAdl,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::AdlSharing => "adl-sharing",
            Variant::GreedyAdl => "greedy-adl",
            Variant::NonAdl => "non-adl",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adl-sharing" => Ok(Variant::AdlSharing),
            "greedy-adl" => Ok(Variant::GreedyAdl),
            "non-adl" => Ok(Variant::NonAdl),
            other => Err(format!(
                "unknown variant `{other}` (expected adl-sharing, greedy-adl or non-adl)"
            )),
        }
    }
}

/// Static per-microgrid parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub battery_capacity: Units,
    pub max_grid_buy: Units,
    pub penalty: Money,
    pub slots_per_day: u32,
    pub daily_jobs: Vec<AdlJob>,
    /// Literal reading of the expiry penalty: charge every job whose
    /// deadline hit 0 this slot, even if the action schedules it.
    pub penalize_scheduled_at_deadline: bool,
}

impl GridParams {
    pub fn daily_job_energy(&self) -> Units {
        self.daily_jobs.iter().map(|j| j.energy).sum()
    }
}

/// Full environment state: the agent-visible state plus the battery split
/// that net demand hides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub state: MicrogridState,
    pub battery: Units,
    pub renewable: Units,
    pub non_adl_demand: Units,
}

/// All `2^n` subsets of the pending jobs with their total energies, bitmask
/// ascending. The empty subset is always first.
pub fn enumerate_adl_subsets(jobs: &JobSet) -> Result<Vec<(u32, Units)>, DomainError> {
    let n = jobs.len();
    if n > MAX_JOBS {
        return Err(DomainError::TooManyJobs {
            count: n,
            cap: MAX_JOBS,
        });
    }
    let energies: Vec<Units> = jobs.jobs().iter().map(|j| j.energy).collect();
    let mut subsets = Vec::with_capacity(1 << n);
    subsets.push((0u32, 0));
    for mask in 1u32..(1 << n) {
        let low = mask.trailing_zeros() as usize;
        let rest = subsets[(mask & (mask - 1)) as usize].1;
        subsets.push((mask, rest + energies[low]));
    }
    Ok(subsets)
}

/// The feasible interval for the trade quantity, given the energy of the
/// chosen job subset.
///
/// The underlying bound constrains `trade + v` where `v` is the negated
/// subset energy: the lower end lets the grid buy enough to serve demand,
/// meet the chosen jobs and fill the battery (capped by the main-grid
/// limit), the upper end lets it sell its surplus. Under [`Variant::GreedyAdl`]
/// surplus may be sold only once the battery is full.
pub fn feasible_trade_interval(
    state: &MicrogridState,
    params: &GridParams,
    chosen_energy: Units,
    variant: Variant,
) -> (Units, Units) {
    let nd = state.net_demand;
    let max_a = state.jobs.max_subset_energy();
    let lo = -std::cmp::min(params.max_grid_buy, params.battery_capacity - nd + max_a);
    let hi = match variant {
        Variant::AdlSharing | Variant::NonAdl => nd.max(0),
        Variant::GreedyAdl => (nd - params.battery_capacity).max(0),
    };
    (lo + chosen_energy, hi + chosen_energy)
}

/// Every feasible joint action of a state: subsets in bitmask order, trades
/// ascending within each subset. This enumeration order defines the action
/// indices used by the learner and the exact solver.
pub fn enumerate_actions(
    state: &MicrogridState,
    params: &GridParams,
    variant: Variant,
) -> Result<Vec<JointAction>, DomainError> {
    let subsets = enumerate_adl_subsets(&state.jobs)?;
    let mut actions = Vec::new();
    for (mask, energy) in subsets {
        let (lo, hi) = feasible_trade_interval(state, params, energy, variant);
        for trade in lo..=hi {
            actions.push(JointAction {
                trade,
                subset: mask,
            });
        }
    }
    Ok(actions)
}

fn check_feasible(
    state: &MicrogridState,
    action: &JointAction,
    params: &GridParams,
    variant: Variant,
) -> Result<Units, DomainError> {
    let subset_energy = action.subset_energy(&state.jobs)?;
    let (lo, hi) = feasible_trade_interval(state, params, subset_energy, variant);
    if action.trade < lo || action.trade > hi {
        return Err(DomainError::InfeasibleAction {
            trade: action.trade,
            subset_energy,
            lo,
            hi,
        });
    }
    Ok(subset_energy)
}

/// The reward formula without the feasibility gate: sale revenue minus
/// purchase cost on `trade + v`, the shortfall penalty on inflexible
/// demand, and the expiry penalty on jobs whose deadline is 0 and which
/// the action leaves unscheduled.
pub fn stage_reward(
    state: &MicrogridState,
    action: &JointAction,
    params: &GridParams,
) -> Result<Money, DomainError> {
    let v = -action.subset_energy(&state.jobs)?;
    let trade_term = state.price * (action.trade + v);
    let shortfall = params.penalty * (state.net_demand - action.trade).min(0);
    let mut expired = 0;
    for (k, job) in state.jobs.jobs().iter().enumerate() {
        if job.deadline == 0 {
            let scheduled = action.subset & (1 << k) != 0;
            if !scheduled || params.penalize_scheduled_at_deadline {
                expired += job.energy;
            }
        }
    }
    Ok(trade_term + shortfall - params.penalty * expired)
}

/// Single-stage reward of a feasible action; rejects actions outside the
/// variant's feasible interval.
pub fn reward(
    state: &MicrogridState,
    action: &JointAction,
    params: &GridParams,
    variant: Variant,
) -> Result<Money, DomainError> {
    check_feasible(state, action, params, variant)?;
    stage_reward(state, action, params)
}

/// Advances one slot: computes the reward, charges the battery with unsold
/// surplus (clipped at capacity, overflow wasted), carries unscheduled jobs
/// with decremented deadlines, and assembles the next snapshot from the
/// supplied exogenous draws.
#[allow(clippy::too_many_arguments)]
pub fn step(
    snapshot: &EnvSnapshot,
    action: &JointAction,
    next_renewable: Units,
    next_demand: Units,
    next_price: Money,
    new_jobs: &[AdlJob],
    params: &GridParams,
    variant: Variant,
) -> Result<(EnvSnapshot, Money), DomainError> {
    let state = &snapshot.state;
    let gain = reward(state, action, params, variant)?;

    let next_slot = state.slot % params.slots_per_day + 1;
    if next_slot != 1 && !new_jobs.is_empty() {
        return Err(DomainError::ArrivalOutsideSlotOne {
            slot: next_slot,
            count: new_jobs.len(),
        });
    }

    let battery = (state.net_demand - action.trade)
        .max(0)
        .min(params.battery_capacity);

    let mut carried: Vec<AdlJob> = state
        .jobs
        .jobs()
        .iter()
        .enumerate()
        .filter(|(k, job)| action.subset & (1 << k) == 0 && job.deadline > 0)
        .map(|(_, job)| AdlJob {
            energy: job.energy,
            deadline: job.deadline - 1,
        })
        .collect();
    carried.extend_from_slice(new_jobs);

    let next = EnvSnapshot {
        state: MicrogridState {
            slot: next_slot,
            net_demand: next_renewable + battery - next_demand,
            price: next_price,
            jobs: JobSet::new(carried),
        },
        battery,
        renewable: next_renewable,
        non_adl_demand: next_demand,
    };
    Ok((next, gain))
}

/// Interns states into dense indices. Two semantically equal states always
/// map to the same index; indices are assigned in first-seen order.
#[derive(Debug, Default, Clone)]
pub struct StateInterner {
    indices: HashMap<MicrogridState, u32>,
    states: Vec<MicrogridState>,
}

impl StateInterner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, state: &MicrogridState) -> u32 {
        if let Some(&idx) = self.indices.get(state) {
            return idx;
        }
        let idx = self.states.len() as u32;
        self.states.push(state.clone());
        self.indices.insert(state.clone(), idx);
        idx
    }

    pub fn lookup(&self, state: &MicrogridState) -> Option<u32> {
        self.indices.get(state).copied()
    }

    pub fn resolve(&self, index: u32) -> &MicrogridState {
        &self.states[index as usize]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[MicrogridState] {
        &self.states
    }
}
