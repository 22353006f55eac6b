//! Scenario configuration: one TOML file describes the network, the
//! exogenous processes, the model variants and penalty grid to sweep, and
//! every schedule knob. All randomness descends from a single master seed
//! through labeled streams (see [`crate::processes::derive_seed`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AdlJob, GridParams, Money, Units, Variant, MAX_JOBS};
use crate::processes::{
    derive_seed, FiniteMarkovChain, ProcessError, RenewableKind, RenewableSource,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("failed to parse scenario")]
    Parse(#[from] toml::de::Error),
    #[error("process construction failed")]
    Process(#[from] ProcessError),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

/// How the demand chain's transition matrix is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ChainMode {
    /// Independent random rows: a genuine Markov chain.
    #[default]
    Markov,
    /// One random row replicated: an i.i.d. process. Required by the exact
    /// solver for processes that are not visible in the agent state.
    Iid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandConfig {
    pub alphabet: Vec<Units>,
    #[serde(default)]
    pub mode: ChainMode,
    /// Transition-matrix seed; derived from the master seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceConfig {
    pub alphabet: Vec<Money>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewableConfig {
    pub kind: RenewableKind,
    pub cap: Units,
    /// Per-slot Poisson rates; defaults depend on the kind (see
    /// [`default_rates`]).
    #[serde(default)]
    pub rates: Option<Vec<f64>>,
}

/// Built-in rate profiles: solar peaks after midday, wind is flat. Defined
/// only for the 4-slot day; other horizons must state rates explicitly.
pub fn default_rates(kind: RenewableKind, slots_per_day: u32) -> Option<Vec<f64>> {
    match kind {
        RenewableKind::None => Some(vec![0.0; slots_per_day as usize]),
        RenewableKind::Solar if slots_per_day == 4 => Some(vec![0.5, 4.0, 6.0, 1.0]),
        RenewableKind::Wind if slots_per_day == 4 => Some(vec![3.0; 4]),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridConfig {
    pub battery_capacity: Units,
    pub max_grid_buy: Units,
    pub renewable: RenewableConfig,
    /// Jobs issued at slot 1 of every day as `[energy, deadline]` pairs.
    pub daily_jobs: Vec<[i64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub cycles: u64,
    pub epsilon: f64,
    pub alpha_c0: f64,
    pub alpha_c1: f64,
    /// Convergence-trace subsampling stride in iterations.
    pub trace_stride: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            cycles: 1_000_000,
            epsilon: 0.1,
            alpha_c0: 1.0,
            alpha_c1: 10.0,
            trace_stride: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    /// Number of evaluation runs; each run is `run_days` simulated days
    /// under the frozen greedy policy.
    pub runs: u64,
    pub run_days: u32,
    /// Record peer/main-grid settlement flows during evaluation.
    pub settlement: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            runs: 1000,
            run_days: 1,
            settlement: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    /// Number of master seeds the model comparison averages over.
    pub seeds: u32,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self { seeds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Run the exact solver against every trained agent and embed the
    /// comparison in the report. Errors out on instances past the bound.
    pub enabled: bool,
    /// Enumeration bound in state-action pairs.
    pub max_state_actions: u64,
    /// Span-seminorm stopping tolerance for relative value iteration.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            max_state_actions: 2_000_000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub slots_per_day: u32,
    pub master_seed: u64,
    pub variants: Vec<Variant>,
    /// Penalty-per-unit grid (`c` values) to sweep.
    pub penalties: Vec<Money>,
    pub demand: DemandConfig,
    pub price: PriceConfig,
    pub microgrids: Vec<MicrogridConfig>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub comparison: ComparisonConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    /// Literal reading of the expiry penalty (see
    /// [`GridParams::penalize_scheduled_at_deadline`]).
    #[serde(default)]
    pub penalize_scheduled_at_deadline: bool,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.slots_per_day < 1 {
            return Err(invalid("slots_per_day", "must be at least 1"));
        }
        if self.variants.is_empty() {
            return Err(invalid("variants", "must list at least one variant"));
        }
        if self.penalties.is_empty() {
            return Err(invalid("penalties", "must list at least one c value"));
        }
        for (i, &c) in self.penalties.iter().enumerate() {
            if c < 0 {
                return Err(invalid(format!("penalties[{i}]"), "penalty must be >= 0"));
            }
        }
        if self.demand.alphabet.is_empty() {
            return Err(invalid("demand.alphabet", "must be non-empty"));
        }
        if self.price.alphabet.is_empty() {
            return Err(invalid("price.alphabet", "must be non-empty"));
        }
        if self.microgrids.is_empty() {
            return Err(invalid("microgrids", "must list at least one microgrid"));
        }
        if !(0.0..=1.0).contains(&self.training.epsilon) {
            return Err(invalid("training.epsilon", "must lie in [0, 1]"));
        }
        if self.training.alpha_c0 <= 0.0 || self.training.alpha_c1 < 0.0 {
            return Err(invalid(
                "training.alpha_c0",
                "step-size constants must satisfy c0 > 0, c1 >= 0",
            ));
        }
        if self.training.trace_stride == 0 {
            return Err(invalid("training.trace_stride", "must be at least 1"));
        }
        if self.evaluation.run_days == 0 {
            return Err(invalid("evaluation.run_days", "must be at least 1"));
        }
        if self.comparison.seeds == 0 {
            return Err(invalid("comparison.seeds", "must be at least 1"));
        }
        for (i, mg) in self.microgrids.iter().enumerate() {
            let at = |field: &str| format!("microgrids[{i}].{field}");
            if mg.battery_capacity < 0 {
                return Err(invalid(at("battery_capacity"), "must be >= 0"));
            }
            if mg.max_grid_buy < 0 {
                return Err(invalid(at("max_grid_buy"), "must be >= 0"));
            }
            if mg.renewable.cap < 0 {
                return Err(invalid(at("renewable.cap"), "must be >= 0"));
            }
            let rates = match &mg.renewable.rates {
                Some(r) => r.clone(),
                None => default_rates(mg.renewable.kind, self.slots_per_day).ok_or_else(|| {
                    invalid(
                        at("renewable.rates"),
                        format!(
                            "no default rate profile for this kind at {} slots per day; state rates explicitly",
                            self.slots_per_day
                        ),
                    )
                })?,
            };
            if rates.len() != self.slots_per_day as usize {
                return Err(invalid(
                    at("renewable.rates"),
                    format!(
                        "expected {} per-slot rates, got {}",
                        self.slots_per_day,
                        rates.len()
                    ),
                ));
            }
            if rates.iter().any(|&r| r < 0.0) {
                return Err(invalid(at("renewable.rates"), "rates must be >= 0"));
            }
            if mg.daily_jobs.len() > MAX_JOBS {
                return Err(invalid(
                    at("daily_jobs"),
                    format!("at most {MAX_JOBS} jobs are supported"),
                ));
            }
            for (j, &[energy, deadline]) in mg.daily_jobs.iter().enumerate() {
                if energy < 1 {
                    return Err(invalid(
                        at(&format!("daily_jobs[{j}]")),
                        "job energy must be >= 1",
                    ));
                }
                if deadline < 0 {
                    return Err(invalid(
                        at(&format!("daily_jobs[{j}]")),
                        "job deadline must be >= 0",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.microgrids.len()
    }

    /// The daily job templates of one microgrid.
    pub fn daily_jobs(&self, agent: usize) -> Vec<AdlJob> {
        self.microgrids[agent]
            .daily_jobs
            .iter()
            .map(|&[energy, deadline]| AdlJob {
                energy,
                deadline: deadline as u32,
            })
            .collect()
    }

    /// Static parameters of one microgrid under penalty `c`.
    pub fn grid_params(&self, agent: usize, penalty: Money) -> GridParams {
        GridParams {
            battery_capacity: self.microgrids[agent].battery_capacity,
            max_grid_buy: self.microgrids[agent].max_grid_buy,
            penalty,
            slots_per_day: self.slots_per_day,
            daily_jobs: self.daily_jobs(agent),
            penalize_scheduled_at_deadline: self.penalize_scheduled_at_deadline,
        }
    }

    /// Demand chain of one microgrid; the matrix seed is per-microgrid.
    pub fn demand_chain(&self, agent: usize) -> Result<FiniteMarkovChain, ConfigError> {
        let seed = self
            .demand
            .seed
            .unwrap_or_else(|| derive_seed(self.master_seed, "demand-matrix"))
            .wrapping_add(agent as u64);
        let chain = match self.demand.mode {
            ChainMode::Markov => FiniteMarkovChain::random(self.demand.alphabet.clone(), seed)?,
            ChainMode::Iid => FiniteMarkovChain::iid_random(self.demand.alphabet.clone(), seed)?,
        };
        Ok(chain)
    }

    /// The global price chain, shared by every microgrid.
    pub fn price_chain(&self) -> Result<FiniteMarkovChain, ConfigError> {
        let seed = self
            .price
            .seed
            .unwrap_or_else(|| derive_seed(self.master_seed, "price-matrix"));
        Ok(FiniteMarkovChain::random(
            self.price.alphabet.clone(),
            seed,
        )?)
    }

    pub fn renewable_source(&self, agent: usize) -> Result<RenewableSource, ConfigError> {
        let mg = &self.microgrids[agent];
        let rates = match &mg.renewable.rates {
            Some(r) => r.clone(),
            None => default_rates(mg.renewable.kind, self.slots_per_day)
                .expect("validated config has default rates"),
        };
        Ok(RenewableSource::new(
            mg.renewable.kind,
            rates,
            mg.renewable.cap,
        )?)
    }

    /// Total daily deferrable energy of an agent, added to slot-1 demand
    /// under the non-ADL variant.
    pub fn adl_energy(&self, agent: usize) -> Units {
        self.daily_jobs(agent).iter().map(|j| j.energy).sum()
    }
}

/// Built-in scenario presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Three microgrids (two solar, one wind) with the standard constants:
    /// 4 slots, demand {2,4,6}, prices {5,10,15}, battery 8, grid limit 14,
    /// three daily jobs, penalty grid {0,5,10,30}.
    Default,
    /// Five microgrids: two solar, two wind, one without renewables.
    Five,
    /// Single microgrid small enough for the exact solver: 2 slots, demand
    /// {2,4} i.i.d., prices {5,10}, battery 2, grid limit 4, one (1,1) job,
    /// c = 5.
    Tiny,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(Preset::Default),
            "five" => Ok(Preset::Five),
            "tiny" => Ok(Preset::Tiny),
            other => Err(format!(
                "unknown preset `{other}` (expected default, five or tiny)"
            )),
        }
    }
}

fn standard_microgrid(kind: RenewableKind) -> MicrogridConfig {
    MicrogridConfig {
        battery_capacity: 8,
        max_grid_buy: 14,
        renewable: RenewableConfig {
            kind,
            cap: 8,
            rates: None,
        },
        daily_jobs: vec![[1, 2], [1, 3], [2, 4]],
    }
}

impl Preset {
    pub fn scenario(self) -> ScenarioConfig {
        match self {
            Preset::Default => ScenarioConfig {
                name: "three-microgrids".into(),
                slots_per_day: 4,
                master_seed: 2024,
                variants: vec![Variant::AdlSharing, Variant::GreedyAdl, Variant::NonAdl],
                penalties: vec![0, 5, 10, 30],
                demand: DemandConfig {
                    alphabet: vec![2, 4, 6],
                    mode: ChainMode::Markov,
                    seed: None,
                },
                price: PriceConfig {
                    alphabet: vec![5, 10, 15],
                    seed: None,
                },
                microgrids: vec![
                    standard_microgrid(RenewableKind::Solar),
                    standard_microgrid(RenewableKind::Solar),
                    standard_microgrid(RenewableKind::Wind),
                ],
                training: TrainingConfig::default(),
                evaluation: EvaluationConfig::default(),
                comparison: ComparisonConfig::default(),
                oracle: OracleConfig::default(),
                penalize_scheduled_at_deadline: false,
            },
            Preset::Five => {
                let mut scenario = Preset::Default.scenario();
                scenario.name = "five-microgrids".into();
                scenario.microgrids = vec![
                    standard_microgrid(RenewableKind::Solar),
                    standard_microgrid(RenewableKind::Solar),
                    standard_microgrid(RenewableKind::Wind),
                    standard_microgrid(RenewableKind::Wind),
                    standard_microgrid(RenewableKind::None),
                ];
                scenario
            }
            Preset::Tiny => ScenarioConfig {
                name: "tiny-oracle".into(),
                slots_per_day: 2,
                // this seed draws well-balanced demand and price rows; badly
                // skewed rows (e.g. a 0.94/0.06 demand split) starve rare
                // states of visits and make oracle comparisons meaningless
                master_seed: 2026,
                variants: vec![Variant::AdlSharing],
                penalties: vec![5],
                demand: DemandConfig {
                    alphabet: vec![2, 4],
                    mode: ChainMode::Iid,
                    seed: None,
                },
                price: PriceConfig {
                    alphabet: vec![5, 10],
                    seed: None,
                },
                microgrids: vec![MicrogridConfig {
                    battery_capacity: 2,
                    max_grid_buy: 4,
                    renewable: RenewableConfig {
                        kind: RenewableKind::Solar,
                        cap: 2,
                        rates: Some(vec![0.5, 1.5]),
                    },
                    daily_jobs: vec![[1, 1]],
                }],
                training: TrainingConfig {
                    // the instance has ~40 states with ~20 actions each;
                    // heavy exploration gives every alternative action
                    // enough samples to rank against the oracle
                    epsilon: 0.5,
                    ..TrainingConfig::default()
                },
                evaluation: EvaluationConfig::default(),
                comparison: ComparisonConfig::default(),
                oracle: OracleConfig {
                    enabled: true,
                    ..OracleConfig::default()
                },
                penalize_scheduled_at_deadline: false,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for preset in [Preset::Default, Preset::Five, Preset::Tiny] {
            let scenario = preset.scenario();
            scenario.validate().unwrap();
            let text = scenario.to_toml();
            let parsed = ScenarioConfig::from_toml(&text).unwrap();
            assert_eq!(parsed, scenario);
        }
    }

    #[test]
    fn invalid_fields_report_paths() {
        let mut scenario = Preset::Default.scenario();
        scenario.penalties = vec![0, -3];
        let err = scenario.validate().unwrap_err().to_string();
        assert!(err.contains("penalties[1]"), "got: {err}");

        let mut scenario = Preset::Default.scenario();
        scenario.microgrids[1].battery_capacity = -1;
        let err = scenario.validate().unwrap_err().to_string();
        assert!(err.contains("microgrids[1].battery_capacity"), "got: {err}");

        let mut scenario = Preset::Default.scenario();
        scenario.microgrids[0].daily_jobs = vec![[0, 2]];
        let err = scenario.validate().unwrap_err().to_string();
        assert!(err.contains("daily_jobs[0]"), "got: {err}");
    }

    #[test]
    fn rates_must_exist_for_nonstandard_horizon() {
        let mut scenario = Preset::Default.scenario();
        scenario.slots_per_day = 6;
        let err = scenario.validate().unwrap_err().to_string();
        assert!(err.contains("renewable.rates"), "got: {err}");
    }

    #[test]
    fn chains_derive_deterministically() {
        let scenario = Preset::Default.scenario();
        assert_eq!(
            scenario.demand_chain(0).unwrap(),
            scenario.demand_chain(0).unwrap()
        );
        assert_ne!(
            scenario.demand_chain(0).unwrap(),
            scenario.demand_chain(1).unwrap()
        );
        assert_eq!(
            scenario.price_chain().unwrap(),
            scenario.price_chain().unwrap()
        );
    }

    #[test]
    fn tiny_preset_demand_is_iid() {
        let scenario = Preset::Tiny.scenario();
        assert!(scenario.demand_chain(0).unwrap().is_iid());
        assert_eq!(scenario.adl_energy(0), 1);
    }

    #[test]
    fn unknown_variant_string_rejected() {
        let err = ScenarioConfig::from_toml("variants = [\"bogus\"]").unwrap_err();
        let ConfigError::Parse(detail) = err else {
            panic!("expected a parse error, got {err}");
        };
        let text = detail.to_string();
        assert!(text.contains("bogus") || text.contains("variant"), "{text}");
    }
}
