//! Experiment orchestration: trains every agent of every (variant, penalty)
//! cell, evaluates the frozen greedy policies over many independent runs,
//! optionally cross-checks agents against the exact solver, and emits the
//! CSV/JSON outputs.
//!
//! Everything is deterministic given the scenario's master seed: cells may
//! train in parallel worker threads, but each cell's randomness comes from
//! its own labeled streams and results are assembled in declaration order,
//! so repeated runs produce byte-identical files.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::domain::{
    self, DomainError, EnvSnapshot, GridParams, JobSet, JointAction, MicrogridState, Money, Units,
    Variant,
};
use crate::env::{account, NetworkEnv};
use crate::learner::{train, LearnerError, TrainedAgent};
use crate::market::{settle, SettlementRecord};
use crate::oracle::{enumerate_mdp, relative_value_iteration, OracleError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("agent {agent}: Q-table changed during evaluation")]
    FrozenTableChanged { agent: usize },
}

/// One experiment cell: a model variant at one penalty level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunCell {
    pub variant: Variant,
    pub penalty: Money,
}

/// Evaluation outcome of one agent in one cell. Profits are per slot.
#[derive(Debug, Clone, Serialize)]
pub struct AgentEvaluation {
    pub agent: usize,
    pub mean_profit: f64,
    pub std_error: f64,
    pub runs: u64,
    /// Per-run mean profit per slot; the mean above is exactly the
    /// arithmetic mean of this vector.
    pub per_run: Vec<f64>,
}

/// One slot's settlement with its evaluation-run coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct SettlementEvent {
    pub run: u64,
    pub day: u32,
    pub record: SettlementRecord,
}

/// Agreement between a trained agent and the exact solver on its instance.
#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub agent: usize,
    pub oracle_gain: f64,
    pub f_of_q: f64,
    pub relative_error: f64,
    /// States compared (training visits at or above the threshold).
    pub checked_states: usize,
    /// States whose greedy action lies in the oracle's optimal tie set.
    pub matched_states: usize,
    pub policy_match: bool,
    pub rvi_converged: bool,
}

/// Everything one cell produces.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: RunCell,
    pub trained: Vec<TrainedAgent>,
    pub evaluations: Vec<AgentEvaluation>,
    pub settlements: Vec<SettlementEvent>,
    pub oracle_checks: Option<Vec<OracleCheck>>,
}

/// Trains all agents of one cell and evaluates their frozen greedy policies
/// with exploration off. Runs oracle checks when the scenario enables them,
/// propagating size errors.
pub fn run_cell(scenario: &ScenarioConfig, cell: RunCell) -> Result<CellResult, HarnessError> {
    let trained: Vec<TrainedAgent> = (0..scenario.n_agents())
        .into_par_iter()
        .map(|agent| {
            train(
                scenario,
                agent,
                cell.variant,
                cell.penalty,
                scenario.training.cycles,
            )
        })
        .collect::<Result<_, _>>()?;

    let checksums: Vec<u64> = trained.iter().map(|t| t.table.checksum()).collect();
    let (evaluations, settlements) = evaluate(scenario, cell, &trained)?;
    for (agent, t) in trained.iter().enumerate() {
        if t.table.checksum() != checksums[agent] {
            return Err(HarnessError::FrozenTableChanged { agent });
        }
    }

    let oracle_checks = if scenario.oracle.enabled {
        Some(
            trained
                .iter()
                .map(|t| oracle_check(scenario, t, 100))
                .collect::<Result<Vec<_>, _>>()?,
        )
    } else {
        None
    };

    Ok(CellResult {
        cell,
        trained,
        evaluations,
        settlements,
        oracle_checks,
    })
}

/// Evaluates frozen policies: `runs` independent runs of `run_days` days,
/// all agents stepping under one shared price process, settled per slot
/// when enabled.
fn evaluate(
    scenario: &ScenarioConfig,
    cell: RunCell,
    trained: &[TrainedAgent],
) -> Result<(Vec<AgentEvaluation>, Vec<SettlementEvent>), HarnessError> {
    let n = scenario.n_agents();
    let slots = scenario.slots_per_day as u64 * scenario.evaluation.run_days as u64;
    let mut net = NetworkEnv::new(scenario, cell.penalty, cell.variant, "eval")?;
    let mut per_run: Vec<Vec<f64>> = vec![Vec::with_capacity(scenario.evaluation.runs as usize); n];
    let mut settlements = Vec::new();

    for run in 0..scenario.evaluation.runs {
        net.begin_run();
        let mut totals = vec![0i64; n];
        for t in 0..slots {
            let actions: Vec<JointAction> = net
                .agents()
                .iter()
                .enumerate()
                .map(|(i, env)| trained[i].greedy_action(env.state(), env))
                .collect::<Result<_, _>>()?;

            if scenario.evaluation.settlement {
                let net_trades: Vec<Units> = net
                    .agents()
                    .iter()
                    .zip(&actions)
                    .map(|(env, a)| account(env.state(), a).map(|acct| acct.net_trade))
                    .collect::<Result<_, _>>()?;
                settlements.push(SettlementEvent {
                    run,
                    day: (t / scenario.slots_per_day as u64) as u32 + 1,
                    record: settle(&net_trades, net.slot(), net.price()),
                });
            }

            if t + 1 < slots {
                for (total, gain) in totals.iter_mut().zip(net.step(&actions)?) {
                    *total += gain;
                }
            } else {
                // the final slot of a run has no successor; score the action
                // without advancing the exogenous chains into a dead slot
                for (i, (total, action)) in totals.iter_mut().zip(&actions).enumerate() {
                    *total += net.agents()[i].peek_reward(action)?;
                }
            }
        }
        for (agent, &total) in totals.iter().enumerate() {
            per_run[agent].push(total as f64 / slots as f64);
        }
    }

    let evaluations = per_run
        .into_iter()
        .enumerate()
        .map(|(agent, runs)| {
            let n_runs = runs.len() as f64;
            let mean = if runs.is_empty() {
                0.0
            } else {
                runs.iter().sum::<f64>() / n_runs
            };
            let var = if runs.len() > 1 {
                runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n_runs - 1.0)
            } else {
                0.0
            };
            AgentEvaluation {
                agent,
                mean_profit: mean,
                std_error: (var / n_runs).sqrt(),
                runs: runs.len() as u64,
                per_run: runs,
            }
        })
        .collect();

    Ok((evaluations, settlements))
}

/// Compares one trained agent against the exact solver: gain error of
/// `f(Q)` and greedy-policy membership in the oracle's optimal tie sets on
/// all states visited at least `visit_threshold` times.
pub fn oracle_check(
    scenario: &ScenarioConfig,
    trained: &TrainedAgent,
    visit_threshold: u64,
) -> Result<OracleCheck, HarnessError> {
    let mdp = enumerate_mdp(scenario, trained.agent, trained.variant, trained.penalty)?;
    let rvi = relative_value_iteration(&mdp, scenario.oracle.tolerance);
    let f_of_q = trained.table.f_of_q().unwrap_or(0.0);
    let relative_error = (f_of_q - rvi.gain).abs() / rvi.gain.abs().max(f64::MIN_POSITIVE);

    // two actions whose exact values differ by less than this are
    // interchangeable at the optimum (symmetric trades produce such ties)
    let slack = 1e-6 * (1.0 + rvi.gain.abs());
    let mut checked = 0;
    let mut matched = 0;
    for s in 0..trained.interner.len() as u32 {
        if trained.table.state_visits(s) < visit_threshold {
            continue;
        }
        checked += 1;
        let state = trained.interner.resolve(s);
        let Some(oracle_idx) = mdp.interner.lookup(state) else {
            continue; // unreachable under exact dynamics: counts as mismatch
        };
        debug_assert_eq!(
            mdp.actions[oracle_idx as usize], trained.actions[s as usize],
            "learner and oracle enumerate identical action lists"
        );
        let greedy = trained.table.argmax(s)?;
        if rvi.tie_set(oracle_idx, slack).contains(&greedy) {
            matched += 1;
        }
    }

    Ok(OracleCheck {
        agent: trained.agent,
        oracle_gain: rvi.gain,
        f_of_q,
        relative_error,
        checked_states: checked,
        matched_states: matched,
        policy_match: checked > 0 && matched == checked,
        rvi_converged: rvi.converged,
    })
}

/// Per-agent summary embedded in the report.
#[derive(Debug, Clone, Serialize)]
pub struct AgentSummary {
    pub agent: usize,
    pub mean_profit: f64,
    pub std_error: f64,
    pub runs: u64,
}

/// Per-cell summary embedded in the report.
#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub variant: Variant,
    pub penalty: Money,
    pub agents: Vec<AgentSummary>,
    pub peer_volume: Units,
    pub main_grid_volume: Units,
    pub oracle: Option<Vec<OracleCheck>>,
}

/// The experiment report: metadata plus the per-variant, per-penalty matrix
/// of evaluated profits and settlement totals.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub master_seed: u64,
    pub build: String,
    pub training_cycles: u64,
    pub evaluation_runs: u64,
    pub cells: Vec<CellSummary>,
}

pub fn build_id() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

/// Runs every (variant, penalty) cell of the scenario, writes the CSV and
/// report outputs into `out_dir` when given, and returns the report.
/// `parallel` caps the worker threads (default: all cores).
pub fn run_experiment(
    scenario: &ScenarioConfig,
    out_dir: Option<&Path>,
    parallel: Option<usize>,
) -> Result<ExperimentReport, HarnessError> {
    scenario.validate()?;
    let cells: Vec<RunCell> = scenario
        .variants
        .iter()
        .flat_map(|&variant| {
            scenario
                .penalties
                .iter()
                .map(move |&penalty| RunCell { variant, penalty })
        })
        .collect();

    let results = in_pool(parallel, || {
        cells
            .par_iter()
            .map(|&cell| run_cell(scenario, cell))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let report = ExperimentReport {
        scenario: scenario.name.clone(),
        master_seed: scenario.master_seed,
        build: build_id(),
        training_cycles: scenario.training.cycles,
        evaluation_runs: scenario.evaluation.runs,
        cells: results.iter().map(summarize_cell).collect(),
    };

    if let Some(dir) = out_dir {
        write_outputs(&results, &report, dir)?;
    }
    Ok(report)
}

fn summarize_cell(result: &CellResult) -> CellSummary {
    CellSummary {
        variant: result.cell.variant,
        penalty: result.cell.penalty,
        agents: result
            .evaluations
            .iter()
            .map(|e| AgentSummary {
                agent: e.agent,
                mean_profit: e.mean_profit,
                std_error: e.std_error,
                runs: e.runs,
            })
            .collect(),
        peer_volume: result
            .settlements
            .iter()
            .map(|s| s.record.peer_volume())
            .sum(),
        main_grid_volume: result
            .settlements
            .iter()
            .map(|s| s.record.main_grid_volume())
            .sum(),
        oracle: result.oracle_checks.clone(),
    }
}

fn in_pool<T: Send>(parallel: Option<usize>, work: impl FnOnce() -> T + Send) -> T {
    match parallel {
        Some(threads) if threads > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("worker pool")
            .install(work),
        _ => work(),
    }
}

#[derive(Serialize)]
struct ConvergenceRow<'a> {
    variant: &'a str,
    c: Money,
    agent: usize,
    iteration: u64,
    f_of_q: f64,
    cumulative_mean_reward: f64,
}

#[derive(Serialize)]
struct ProfitRow<'a> {
    variant: &'a str,
    c: Money,
    agent: usize,
    mean_profit: f64,
    std_error: f64,
    runs: u64,
}

#[derive(Serialize)]
struct RunRow<'a> {
    variant: &'a str,
    c: Money,
    agent: usize,
    run: u64,
    profit_per_slot: f64,
}

#[derive(Serialize)]
struct FlowRow<'a> {
    variant: &'a str,
    c: Money,
    run: u64,
    day: u32,
    slot: u32,
    seller: String,
    buyer: String,
    units: Units,
    price: Money,
}

/// Writes `convergence.csv`, `profits.csv`, `runs.csv`, `flows.csv` and
/// `report.json` into the directory, creating it if needed.
pub fn write_outputs(
    results: &[CellResult],
    report: &ExperimentReport,
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("convergence.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in results {
        for t in &r.trained {
            for p in &t.trace {
                w.serialize(ConvergenceRow {
                    variant: r.cell.variant.as_str(),
                    c: r.cell.penalty,
                    agent: t.agent,
                    iteration: p.iteration,
                    f_of_q: p.f_of_q,
                    cumulative_mean_reward: p.cumulative_mean_reward,
                })?;
            }
        }
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("profits.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in results {
        for e in &r.evaluations {
            w.serialize(ProfitRow {
                variant: r.cell.variant.as_str(),
                c: r.cell.penalty,
                agent: e.agent,
                mean_profit: e.mean_profit,
                std_error: e.std_error,
                runs: e.runs,
            })?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("runs.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in results {
        for e in &r.evaluations {
            for (run, &profit) in e.per_run.iter().enumerate() {
                w.serialize(RunRow {
                    variant: r.cell.variant.as_str(),
                    c: r.cell.penalty,
                    agent: e.agent,
                    run: run as u64,
                    profit_per_slot: profit,
                })?;
            }
        }
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("flows.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in results {
        for event in &r.settlements {
            for flow in &event.record.flows {
                w.serialize(FlowRow {
                    variant: r.cell.variant.as_str(),
                    c: r.cell.penalty,
                    run: event.run,
                    day: event.day,
                    slot: event.record.slot,
                    seller: flow.seller.to_string(),
                    buyer: flow.buyer.to_string(),
                    units: flow.units,
                    price: event.record.price,
                })?;
            }
        }
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("report.json");
    let mut file = std::fs::File::create(&path)?;
    serde_json::to_writer_pretty(&mut file, report).map_err(std::io::Error::other)?;
    file.write_all(b"\n")?;
    written.push(path);

    Ok(written)
}

// ---------------------------------------------------------------------------
// Two-interval storage regression
// ---------------------------------------------------------------------------

/// Outcome of the deterministic two-interval, three-microgrid storage
/// example.
#[derive(Debug, Clone, Serialize)]
pub struct Table1Outcome {
    /// MG-1 profit when it sells its interval-1 surplus cheap and buys back
    /// dear in interval 2.
    pub sell_early_profit: Money,
    /// MG-1 profit when it stores the surplus for its own interval-2 use.
    pub store_profit: Money,
    /// (microgrid, interval, units) of unmet demand with no sharing and no
    /// storage.
    pub isolated_unmet: Vec<(usize, u32, Units)>,
    /// Energy absorbed by the main grid across the sharing scenarios
    /// (expected 0: peers cover each other exactly).
    pub main_grid_volume: Units,
    pub pass: bool,
}

/// Deterministic supply/demand profiles of the three microgrids over two
/// intervals: (demand, supply) per interval.
const PROFILES: [[(Units, Units); 2]; 3] = [[(1, 2), (1, 0)], [(1, 0), (1, 1)], [(1, 2), (1, 1)]];
const EARLY_PRICE: Money = 5;
const LATE_PRICE: Money = 10;

/// Replays the two-interval example with three hand-written policies and
/// checks the expected outcomes:
///
/// * isolated microgrids (no trading, no storage) leave exactly one unit of
///   demand unmet at MG-2 in interval 1 and MG-1 in interval 2;
/// * with trading, MG-1 selling early and buying back later loses money,
///   while storing its surplus for interval 2 breaks even — strictly
///   better;
/// * peers always cover each other, so nothing touches the main grid even
///   though prices rise in interval 2.
///
/// The isolated case is plain profile accounting: the trading model always
/// lets surplus be sold or stored, so "no sharing, no battery" lies outside
/// its feasible actions by design.
pub fn table1_regression() -> Table1Outcome {
    // no sharing, no storage: unmet demand is just the per-interval deficit
    let mut isolated_unmet = Vec::new();
    for (mg, intervals) in PROFILES.iter().enumerate() {
        for (t, &(demand, supply)) in intervals.iter().enumerate() {
            let deficit = (demand - supply).max(0);
            if deficit > 0 {
                isolated_unmet.push((mg, t as u32 + 1, deficit));
            }
        }
    }

    // trades per microgrid and interval for the two sharing policies:
    // selling early (surplus sold in interval 1, bought back in interval 2)
    // versus storing (MG-1 keeps its surplus in the battery)
    let sell_early = [[1, -1], [-1, 0], [0, 1]];
    let store = [[0, 0], [-1, 0], [1, 0]];

    let (sell_profits, sell_main) = play(&sell_early);
    let (store_profits, store_main) = play(&store);

    let pass = store_profits[0] > sell_profits[0]
        && isolated_unmet == vec![(0, 2, 1), (1, 1, 1)]
        && sell_main + store_main == 0;

    Table1Outcome {
        sell_early_profit: sell_profits[0],
        store_profit: store_profits[0],
        isolated_unmet,
        main_grid_volume: sell_main + store_main,
        pass,
    }
}

/// Plays one two-interval policy through the real dynamics and settlement,
/// returning per-microgrid profits and the total main-grid volume.
fn play(trades: &[[Units; 2]; 3]) -> (Vec<Money>, Units) {
    let params = GridParams {
        battery_capacity: 8,
        max_grid_buy: 14,
        penalty: 5,
        slots_per_day: 2,
        daily_jobs: vec![],
        penalize_scheduled_at_deadline: false,
    };
    let prices = [EARLY_PRICE, LATE_PRICE];
    let mut profits = vec![0; 3];
    let mut main_grid = 0;

    let mut snapshots: Vec<EnvSnapshot> = PROFILES
        .iter()
        .map(|intervals| {
            let (demand, supply) = intervals[0];
            EnvSnapshot {
                state: MicrogridState {
                    slot: 1,
                    net_demand: supply - demand,
                    price: prices[0],
                    jobs: JobSet::empty(),
                },
                battery: 0,
                renewable: supply,
                non_adl_demand: demand,
            }
        })
        .collect();

    for t in 0..2 {
        let actions: Vec<JointAction> = (0..3)
            .map(|mg| JointAction {
                trade: trades[mg][t],
                subset: 0,
            })
            .collect();
        let net_trades: Vec<Units> = actions.iter().map(|a| a.trade).collect();
        main_grid += settle(&net_trades, t as u32 + 1, prices[t]).main_grid_volume();

        for mg in 0..3 {
            profits[mg] += domain::reward(
                &snapshots[mg].state,
                &actions[mg],
                &params,
                Variant::AdlSharing,
            )
            .expect("hand-written trades are feasible");
            if t == 0 {
                let (demand, supply) = PROFILES[mg][1];
                let (next, _) = domain::step(
                    &snapshots[mg],
                    &actions[mg],
                    supply,
                    demand,
                    prices[1],
                    &[],
                    &params,
                    Variant::AdlSharing,
                )
                .expect("hand-written trades are feasible");
                snapshots[mg] = next;
            }
        }
    }
    (profits, main_grid)
}

// ---------------------------------------------------------------------------
// Cross-variant comparison
// ---------------------------------------------------------------------------

/// Profit gap statistics for one microgrid at one penalty level, across
/// master seeds.
#[derive(Debug, Clone, Serialize)]
pub struct GapStat {
    pub agent: usize,
    pub penalty: Money,
    pub gap_vs_non_adl: f64,
    pub gap_vs_non_adl_se: f64,
    pub gap_vs_greedy: f64,
    pub gap_vs_greedy_se: f64,
}

/// Cross-variant comparison over several master seeds.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub scenario: String,
    pub seeds: Vec<u64>,
    /// Raw evaluated profits, indexed `[seed][variant][penalty][agent]` with
    /// variants in the fixed order full sharing, greedy battery, no
    /// deferrable loads.
    pub profits: Vec<Vec<Vec<Vec<f64>>>>,
    pub gaps: Vec<GapStat>,
    /// Per microgrid: does full sharing beat the greedy battery rule at the
    /// lowest penalty in a majority of seeds?
    pub ordering_verdicts: Vec<Verdict>,
    /// Per microgrid: does the sharing-vs-no-deferral gap grow from the
    /// lowest to the highest penalty?
    pub growth_verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Flag,
}

/// Trains and evaluates all three variants across `comparison.seeds` master
/// seeds (base seed, base+1, …) and reports per-penalty profit gaps of full
/// sharing versus the other two variants, with pass/flag verdicts on the
/// expected orderings. Violations flag rather than fail: they are data for
/// review, not errors.
pub fn compare_models(
    scenario: &ScenarioConfig,
    out_dir: Option<&Path>,
    parallel: Option<usize>,
) -> Result<CompareReport, HarnessError> {
    scenario.validate()?;
    let seeds: Vec<u64> = (0..scenario.comparison.seeds as u64)
        .map(|k| scenario.master_seed + k)
        .collect();
    let variants = [Variant::AdlSharing, Variant::GreedyAdl, Variant::NonAdl];
    let n = scenario.n_agents();

    // profits[seed][variant][penalty][agent]
    let profits: Vec<Vec<Vec<Vec<f64>>>> = in_pool(parallel, || {
        seeds
            .par_iter()
            .map(|&seed| {
                let mut seeded = scenario.clone();
                seeded.master_seed = seed;
                variants
                    .iter()
                    .map(|&variant| {
                        seeded
                            .penalties
                            .iter()
                            .map(|&penalty| {
                                let cell = RunCell { variant, penalty };
                                let result = run_cell(&seeded, cell)?;
                                Ok(result
                                    .evaluations
                                    .iter()
                                    .map(|e| e.mean_profit)
                                    .collect::<Vec<f64>>())
                            })
                            .collect::<Result<Vec<_>, HarnessError>>()
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mean_se = |samples: &[f64]| -> (f64, f64) {
        let count = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / count;
        let var = if samples.len() > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (count - 1.0)
        } else {
            0.0
        };
        (mean, (var / count).sqrt())
    };

    let mut gaps = Vec::new();
    // `agent` selects the innermost axis of the [seed][variant][penalty][agent]
    // array, so an enumerate over the outer axis would index the wrong thing
    #[allow(clippy::needless_range_loop)]
    for agent in 0..n {
        for (ci, &penalty) in scenario.penalties.iter().enumerate() {
            let vs_non: Vec<f64> = (0..seeds.len())
                .map(|s| profits[s][0][ci][agent] - profits[s][2][ci][agent])
                .collect();
            let vs_greedy: Vec<f64> = (0..seeds.len())
                .map(|s| profits[s][0][ci][agent] - profits[s][1][ci][agent])
                .collect();
            let (gap_vs_non_adl, gap_vs_non_adl_se) = mean_se(&vs_non);
            let (gap_vs_greedy, gap_vs_greedy_se) = mean_se(&vs_greedy);
            gaps.push(GapStat {
                agent,
                penalty,
                gap_vs_non_adl,
                gap_vs_non_adl_se,
                gap_vs_greedy,
                gap_vs_greedy_se,
            });
        }
    }

    // ordering at the lowest penalty: sharing beats greedy per seed, majority
    let lowest = 0;
    let ordering_verdicts = (0..n)
        .map(|agent| {
            let wins = (0..seeds.len())
                .filter(|&s| profits[s][0][lowest][agent] > profits[s][1][lowest][agent])
                .count();
            if wins * 2 > seeds.len() {
                Verdict::Pass
            } else {
                Verdict::Flag
            }
        })
        .collect();

    // gap growth from the lowest to the highest penalty, on seed averages
    let highest = scenario.penalties.len() - 1;
    let growth_verdicts = (0..n)
        .map(|agent| {
            let gap_at = |ci: usize| -> f64 {
                (0..seeds.len())
                    .map(|s| profits[s][0][ci][agent] - profits[s][2][ci][agent])
                    .sum::<f64>()
                    / seeds.len() as f64
            };
            if highest == lowest || gap_at(highest) > gap_at(lowest) {
                Verdict::Pass
            } else {
                Verdict::Flag
            }
        })
        .collect();

    let report = CompareReport {
        scenario: scenario.name.clone(),
        seeds,
        profits,
        gaps,
        ordering_verdicts,
        growth_verdicts,
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("gaps.csv");
        let mut w = csv::Writer::from_path(path)?;
        for g in &report.gaps {
            w.serialize(g)?;
        }
        w.flush()?;
    }
    Ok(report)
}
