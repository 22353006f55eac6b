//! Simulation and learning library for networks of microgrids that trade
//! energy and schedule deferrable loads.
//!
//! Each microgrid runs an independent average-reward Q-learning agent over a
//! compact state (slot of day, net demand, price, pending deferrable jobs).
//! The library provides the environment dynamics ([`domain`], [`env`]), the
//! exogenous stochastic processes ([`processes`]), the learner ([`learner`]),
//! an exact small-instance solver for validation ([`oracle`]), peer-to-peer
//! trade settlement ([`market`]), and an experiment harness with CSV/JSON
//! reporting ([`harness`]). Scenarios are described in TOML ([`config`]).
//!
//! All randomness is deterministic given the scenario's master seed: every
//! consumer draws from its own labeled stream, so results are reproducible
//! bit-for-bit regardless of thread scheduling.

pub mod config;
pub mod domain;
pub mod env;
pub mod harness;
pub mod learner;
pub mod market;
pub mod oracle;
pub mod processes;
