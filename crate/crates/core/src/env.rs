//! Simulation plumbing shared by the trainer and the evaluator: one
//! [`AgentEnv`] per microgrid drives the slot-by-slot dynamics against its
//! own demand chain and renewable source, while the global price is fed in
//! from the outside.
//!
//! During training each trainer owns an identical clone of the price
//! process (same seed, same labeled stream), so all agents observe the same
//! price sequence without sharing state across threads. During evaluation a
//! [`NetworkEnv`] holds a single price process and steps every agent in
//! lockstep, which is what the settlement ledger needs.
//!
//! Stream labels are namespaced by phase (`train`/`eval`) so evaluation
//! never replays the training draws, and by agent so microgrids are
//! independent. Variants and penalty levels reuse the same labels on
//! purpose: sweeping a scenario across model variants under common random
//! numbers makes their profit gaps directly comparable.

use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, ScenarioConfig};
use crate::domain::{
    self, AdlJob, DomainError, EnvSnapshot, GridParams, JobSet, JointAction, MicrogridState, Money,
    Units, Variant,
};
use crate::processes::{stream, FiniteMarkovChain, RenewableSource};

/// The global electricity price as a self-contained process. Two instances
/// built from the same scenario and phase produce identical sequences.
#[derive(Debug, Clone)]
pub struct PriceProcess {
    chain: FiniteMarkovChain,
    rng: ChaCha8Rng,
}

impl PriceProcess {
    pub fn new(scenario: &ScenarioConfig, phase: &str) -> Result<Self, ConfigError> {
        Ok(Self {
            chain: scenario.price_chain()?,
            rng: stream(scenario.master_seed, &format!("{phase}/price-steps")),
        })
    }

    /// Advances the chain one slot and returns the new price.
    pub fn draw(&mut self) -> Money {
        self.chain.sample(&mut self.rng)
    }
}

/// One microgrid's environment: its exogenous processes, static parameters
/// and the current full snapshot. Prices are supplied by the caller.
#[derive(Debug, Clone)]
pub struct AgentEnv {
    agent: usize,
    variant: Variant,
    params: GridParams,
    demand: FiniteMarkovChain,
    demand_rng: ChaCha8Rng,
    renewable: RenewableSource,
    renewable_rng: ChaCha8Rng,
    snapshot: EnvSnapshot,
}

impl AgentEnv {
    /// Builds the environment and starts its first run at the given price.
    pub fn new(
        scenario: &ScenarioConfig,
        agent: usize,
        penalty: Money,
        variant: Variant,
        phase: &str,
        initial_price: Money,
    ) -> Result<Self, ConfigError> {
        let master = scenario.master_seed;
        let mut env = Self {
            agent,
            variant,
            params: scenario.grid_params(agent, penalty),
            demand: scenario.demand_chain(agent)?,
            demand_rng: stream(master, &format!("{phase}/demand-steps/{agent}")),
            renewable: scenario.renewable_source(agent)?,
            renewable_rng: stream(master, &format!("{phase}/renewable/{agent}")),
            snapshot: EnvSnapshot {
                state: MicrogridState {
                    slot: 1,
                    net_demand: 0,
                    price: initial_price,
                    jobs: JobSet::empty(),
                },
                battery: 0,
                renewable: 0,
                non_adl_demand: 0,
            },
        };
        env.begin_run(initial_price);
        Ok(env)
    }

    /// Starts a fresh run: empty battery, slot 1, the daily jobs pending,
    /// and freshly sampled renewable and demand. The exogenous chains are
    /// not rewound, so consecutive runs see fresh draws.
    pub fn begin_run(&mut self, price: Money) {
        let renewable = self.renewable.sample(1, &mut self.renewable_rng);
        let demand = self.effective_demand(1);
        self.snapshot = EnvSnapshot {
            state: MicrogridState {
                slot: 1,
                net_demand: renewable - demand,
                price,
                jobs: self.slot_one_jobs(),
            },
            battery: 0,
            renewable,
            non_adl_demand: demand,
        };
    }

    /// Inflexible demand for a slot: the chain draw, plus the folded daily
    /// deferrable energy at slot 1 under the non-ADL variant.
    fn effective_demand(&mut self, slot: u32) -> Units {
        let mut demand = self.demand.sample(&mut self.demand_rng);
        if self.variant == Variant::NonAdl && slot == 1 {
            demand += self.params.daily_job_energy();
        }
        demand
    }

    fn slot_one_jobs(&self) -> JobSet {
        match self.variant {
            Variant::NonAdl => JobSet::empty(),
            _ => JobSet::new(self.params.daily_jobs.clone()),
        }
    }

    /// Applies a feasible action and advances one slot, drawing the next
    /// renewable and demand internally. The next price must come from the
    /// shared price process.
    pub fn step(&mut self, action: &JointAction, next_price: Money) -> Result<Money, DomainError> {
        let next_slot = self.snapshot.state.slot % self.params.slots_per_day + 1;
        let next_renewable = self.renewable.sample(next_slot, &mut self.renewable_rng);
        let next_demand = self.effective_demand(next_slot);
        let arrivals: Vec<AdlJob> = if next_slot == 1 {
            self.slot_one_jobs().jobs().to_vec()
        } else {
            Vec::new()
        };
        let (next, gain) = domain::step(
            &self.snapshot,
            action,
            next_renewable,
            next_demand,
            next_price,
            &arrivals,
            &self.params,
            self.variant,
        )?;
        self.snapshot = next;
        Ok(gain)
    }

    /// Reward of a feasible action in the current state, without advancing.
    /// Used for the final slot of an evaluation run, whose successor state
    /// is never visited.
    pub fn peek_reward(&self, action: &JointAction) -> Result<Money, DomainError> {
        domain::reward(&self.snapshot.state, action, &self.params, self.variant)
    }

    /// Feasible joint actions of the current state, in canonical order.
    pub fn actions(&self) -> Result<Vec<JointAction>, DomainError> {
        domain::enumerate_actions(&self.snapshot.state, &self.params, self.variant)
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn params(&self) -> &GridParams {
        &self.params
    }

    pub fn state(&self) -> &MicrogridState {
        &self.snapshot.state
    }

    pub fn snapshot(&self) -> &EnvSnapshot {
        &self.snapshot
    }
}

/// Per-action bookkeeping used by the evaluator: energy sent to or drawn
/// from the trading network, scheduled deferrable energy, and the energy of
/// jobs that expired unscheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionAccounting {
    /// `trade + v`: what the network settles, positive when selling.
    pub net_trade: Units,
    pub scheduled_energy: Units,
    pub expired_energy: Units,
}

pub fn account(
    state: &MicrogridState,
    action: &JointAction,
) -> Result<ActionAccounting, DomainError> {
    let scheduled = action.subset_energy(&state.jobs)?;
    let mut expired = 0;
    for (k, job) in state.jobs.jobs().iter().enumerate() {
        if job.deadline == 0 && action.subset & (1 << k) == 0 {
            expired += job.energy;
        }
    }
    Ok(ActionAccounting {
        net_trade: action.trade - scheduled,
        scheduled_energy: scheduled,
        expired_energy: expired,
    })
}

/// All microgrids stepping in lockstep under one shared price process; the
/// evaluator's view of the network.
#[derive(Debug, Clone)]
pub struct NetworkEnv {
    agents: Vec<AgentEnv>,
    price: PriceProcess,
    current_price: Money,
}

impl NetworkEnv {
    pub fn new(
        scenario: &ScenarioConfig,
        penalty: Money,
        variant: Variant,
        phase: &str,
    ) -> Result<Self, ConfigError> {
        let mut price = PriceProcess::new(scenario, phase)?;
        let current_price = price.draw();
        let agents = (0..scenario.n_agents())
            .map(|agent| AgentEnv::new(scenario, agent, penalty, variant, phase, current_price))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            agents,
            price,
            current_price,
        })
    }

    /// Starts a fresh run for every agent at a freshly drawn price.
    pub fn begin_run(&mut self) {
        self.current_price = self.price.draw();
        for agent in &mut self.agents {
            agent.begin_run(self.current_price);
        }
    }

    /// Advances every agent by one slot under a single new price draw.
    /// Actions are indexed by agent; returns per-agent rewards.
    pub fn step(&mut self, actions: &[JointAction]) -> Result<Vec<Money>, DomainError> {
        assert_eq!(actions.len(), self.agents.len(), "one action per agent");
        let next_price = self.price.draw();
        let rewards = self
            .agents
            .iter_mut()
            .zip(actions)
            .map(|(agent, action)| agent.step(action, next_price))
            .collect::<Result<Vec<_>, _>>()?;
        self.current_price = next_price;
        Ok(rewards)
    }

    pub fn price(&self) -> Money {
        self.current_price
    }

    pub fn slot(&self) -> u32 {
        self.agents[0].state().slot
    }

    pub fn agents(&self) -> &[AgentEnv] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [AgentEnv] {
        &mut self.agents
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    fn scenario() -> ScenarioConfig {
        Preset::Default.scenario()
    }

    /// An arbitrary feasible action: the empty subset with the smallest
    /// feasible trade.
    fn first_action(env: &AgentEnv) -> JointAction {
        env.actions().unwrap()[0]
    }

    #[test]
    fn begin_run_issues_daily_jobs_and_empty_battery() {
        let s = scenario();
        let env = AgentEnv::new(&s, 0, 0, Variant::AdlSharing, "test", 10).unwrap();
        assert_eq!(env.state().slot, 1);
        assert_eq!(env.snapshot().battery, 0);
        assert_eq!(env.state().jobs.len(), 3);
        assert_eq!(env.state().price, 10);
        assert_eq!(
            env.state().net_demand,
            env.snapshot().renewable - env.snapshot().non_adl_demand
        );
    }

    #[test]
    fn non_adl_folds_jobs_into_slot_one_demand() {
        let s = scenario();
        let adl = AgentEnv::new(&s, 0, 0, Variant::NonAdl, "test", 10).unwrap();
        let with_jobs = AgentEnv::new(&s, 0, 0, Variant::AdlSharing, "test", 10).unwrap();
        assert!(adl.state().jobs.is_empty());
        // identical streams, so the only difference is the folded 4 units
        assert_eq!(
            adl.snapshot().non_adl_demand,
            with_jobs.snapshot().non_adl_demand + 4
        );
        assert_eq!(adl.state().net_demand, with_jobs.state().net_demand - 4);
    }

    #[test]
    fn step_cycles_slots_and_reissues_jobs_daily() {
        let s = scenario();
        let mut env = AgentEnv::new(&s, 0, 5, Variant::AdlSharing, "test", 10).unwrap();
        // schedule nothing all day; by slot 1 of day 2 the expired (1,2)…
        // jobs are gone and three fresh jobs have arrived
        for expected_slot in [2, 3, 4, 1] {
            let action = first_action(&env);
            env.step(&action, 10).unwrap();
            assert_eq!(env.state().slot, expected_slot);
        }
        // slot-1 arrivals plus the carried (2,4) job, now at deadline 1;
        // the (1,2) and (1,3) jobs (deadlines 0,1,2 meanwhile) survive too
        assert!(env.state().jobs.len() >= 3);
        assert!(env.state().jobs.jobs().contains(&AdlJob {
            energy: 2,
            deadline: 4
        }));
    }

    #[test]
    fn deterministic_given_phase_and_divergent_across_phases() {
        let s = scenario();
        let run = |phase: &str| {
            let mut env = AgentEnv::new(&s, 0, 0, Variant::AdlSharing, phase, 10).unwrap();
            let mut trace = Vec::new();
            for _ in 0..50 {
                let action = first_action(&env);
                let gain = env.step(&action, 10).unwrap();
                trace.push((env.state().clone(), gain));
            }
            trace
        };
        assert_eq!(run("train"), run("train"));
        assert_ne!(run("train"), run("eval"));
    }

    #[test]
    fn agents_have_independent_draws() {
        let s = scenario();
        let a = AgentEnv::new(&s, 0, 0, Variant::AdlSharing, "test", 10).unwrap();
        let b = AgentEnv::new(&s, 1, 0, Variant::AdlSharing, "test", 10).unwrap();
        // same price and slot, but demand chains and renewable streams differ
        let mut distinct = a.snapshot().non_adl_demand != b.snapshot().non_adl_demand
            || a.snapshot().renewable != b.snapshot().renewable;
        // extremely unlikely to collide for 20 more slots if independent
        let (mut a, mut b) = (a, b);
        for _ in 0..20 {
            a.step(&first_action(&a), 10).unwrap();
            b.step(&first_action(&b), 10).unwrap();
            distinct |= a.snapshot().non_adl_demand != b.snapshot().non_adl_demand
                || a.snapshot().renewable != b.snapshot().renewable;
        }
        assert!(distinct);
    }

    #[test]
    fn price_process_clones_agree() {
        let s = scenario();
        let mut p1 = PriceProcess::new(&s, "train").unwrap();
        let mut p2 = PriceProcess::new(&s, "train").unwrap();
        let seq1: Vec<Money> = (0..100).map(|_| p1.draw()).collect();
        let seq2: Vec<Money> = (0..100).map(|_| p2.draw()).collect();
        assert_eq!(seq1, seq2);
        assert!(seq1.iter().all(|p| [5, 10, 15].contains(p)));
        // a chain over three prices mixes within 100 draws
        assert!(seq1.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn network_env_shares_price_across_agents() {
        let s = scenario();
        let mut net = NetworkEnv::new(&s, 0, Variant::AdlSharing, "eval").unwrap();
        for _ in 0..3 {
            net.begin_run();
            for _ in 0..s.slots_per_day {
                let actions: Vec<JointAction> = net.agents().iter().map(first_action).collect();
                net.step(&actions).unwrap();
                let prices: Vec<Money> = net.agents().iter().map(|a| a.state().price).collect();
                assert!(prices.windows(2).all(|w| w[0] == w[1]));
                assert_eq!(prices[0], net.price());
            }
        }
    }

    #[test]
    fn network_begin_run_resets_batteries() {
        let s = scenario();
        let mut net = NetworkEnv::new(&s, 0, Variant::AdlSharing, "eval").unwrap();
        let actions: Vec<JointAction> = net.agents().iter().map(first_action).collect();
        net.step(&actions).unwrap();
        net.begin_run();
        for agent in net.agents() {
            assert_eq!(agent.snapshot().battery, 0);
            assert_eq!(agent.state().slot, 1);
        }
    }

    #[test]
    fn accounting_splits_trade_and_jobs() {
        let state = MicrogridState {
            slot: 2,
            net_demand: 3,
            price: 10,
            jobs: JobSet::new(vec![
                AdlJob {
                    energy: 1,
                    deadline: 0,
                },
                AdlJob {
                    energy: 2,
                    deadline: 0,
                },
            ]),
        };
        // schedule the 1-unit job, leave the 2-unit job to expire
        let action = JointAction {
            trade: 2,
            subset: 1,
        };
        let acct = account(&state, &action).unwrap();
        assert_eq!(acct.net_trade, 1);
        assert_eq!(acct.scheduled_energy, 1);
        assert_eq!(acct.expired_energy, 2);
    }

    #[test]
    fn peek_reward_matches_step_reward() {
        let s = scenario();
        let mut env = AgentEnv::new(&s, 0, 5, Variant::AdlSharing, "test", 10).unwrap();
        for _ in 0..10 {
            let action = first_action(&env);
            let peeked = env.peek_reward(&action).unwrap();
            let stepped = env.step(&action, 10).unwrap();
            assert_eq!(peeked, stepped);
        }
    }
}
