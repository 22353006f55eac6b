//! Seeded exogenous stochastic processes: finite Markov chains for demand
//! and price, and Poisson renewable generation clipped at a hardware cap.
//!
//! Every process is driven by a [`ChaCha8Rng`] stream derived from a master
//! seed and a string label, so identical seeds reproduce identical sample
//! paths on every platform. Each process also exposes its exact one-step
//! probabilities so the exact solver can be built on the same numbers the
//! simulator draws from.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Units;

/// Row-sum tolerance for validating stochastic matrices.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ProcessError {
    #[error("stochastic matrix must have at least one state")]
    EmptyMatrix,
    #[error("transition matrix row {row} sums to {sum}, expected 1")]
    RowNotStochastic { row: usize, sum: f64 },
    #[error("transition matrix row {row} has a negative entry")]
    NegativeEntry { row: usize },
    #[error("transition matrix has {rows} rows for an alphabet of {alphabet} values")]
    ShapeMismatch { rows: usize, alphabet: usize },
    #[error("alphabet values must be distinct")]
    DuplicateAlphabet,
    #[error("renewable rate for slot {slot} is negative")]
    NegativeRate { slot: usize },
    #[error("renewable source of kind `none` must have all-zero rates")]
    NonZeroRateForNone,
    #[error("expected {expected} per-slot rates, got {got}")]
    RateCountMismatch { expected: usize, got: usize },
}

// ---------------------------------------------------------------------------
// Deterministic stream derivation
// ---------------------------------------------------------------------------

/// 64-bit FNV-1a over a byte string.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// SplitMix64 finalizer, used to decorrelate derived seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a stream seed from a master seed and a label.
///
/// The scheme is `splitmix64(master XOR fnv1a64(label))`: stable across
/// platforms and documented so runs can be reproduced outside this crate.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    splitmix64(master ^ fnv1a64(label.as_bytes()))
}

/// Creates the ChaCha8 stream identified by `(master, label)`.
pub fn stream(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label))
}

/// Uniform draw in [0, 1) with 53 random bits.
pub fn uniform01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Unbiased uniform draw in [0, n) by rejection.
pub fn uniform_below(rng: &mut impl RngCore, n: u64) -> u64 {
    assert!(n > 0, "uniform_below requires n > 0");
    let bound = u64::MAX - u64::MAX % n;
    loop {
        let x = rng.next_u64();
        if x < bound {
            return x % n;
        }
    }
}

// ---------------------------------------------------------------------------
// Finite Markov chains
// ---------------------------------------------------------------------------

/// Generates an `n x n` row-stochastic matrix by normalizing uniform(0,1)
/// draws row by row. Deterministic given the seed.
pub fn random_stochastic_matrix(n: usize, seed: u64) -> Result<Vec<Vec<f64>>, ProcessError> {
    if n == 0 {
        return Err(ProcessError::EmptyMatrix);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let draws: Vec<f64> = (0..n).map(|_| uniform01(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        rows.push(draws.into_iter().map(|d| d / total).collect());
    }
    Ok(rows)
}

/// A finite-alphabet Markov chain over integer values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMarkovChain {
    alphabet: Vec<i64>,
    transition: Vec<Vec<f64>>,
    current: usize,
}

impl FiniteMarkovChain {
    pub fn new(alphabet: Vec<i64>, transition: Vec<Vec<f64>>) -> Result<Self, ProcessError> {
        if alphabet.is_empty() {
            return Err(ProcessError::EmptyMatrix);
        }
        if transition.len() != alphabet.len() {
            return Err(ProcessError::ShapeMismatch {
                rows: transition.len(),
                alphabet: alphabet.len(),
            });
        }
        let mut sorted = alphabet.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != alphabet.len() {
            return Err(ProcessError::DuplicateAlphabet);
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != alphabet.len() {
                return Err(ProcessError::ShapeMismatch {
                    rows: row.len(),
                    alphabet: alphabet.len(),
                });
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(ProcessError::NegativeEntry { row: i });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(ProcessError::RowNotStochastic { row: i, sum });
            }
        }
        Ok(Self {
            alphabet,
            transition,
            current: 0,
        })
    }

    /// Chain with a randomly generated transition matrix.
    pub fn random(alphabet: Vec<i64>, seed: u64) -> Result<Self, ProcessError> {
        let transition = random_stochastic_matrix(alphabet.len(), seed)?;
        Self::new(alphabet, transition)
    }

    /// Chain whose rows are all equal to one random row, i.e. an i.i.d.
    /// process with a random marginal. This is the form the exact solver
    /// requires for processes that are not part of the agent state.
    pub fn iid_random(alphabet: Vec<i64>, seed: u64) -> Result<Self, ProcessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<f64> = (0..alphabet.len()).map(|_| uniform01(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let marginal: Vec<f64> = draws.into_iter().map(|d| d / total).collect();
        let transition = vec![marginal; alphabet.len()];
        Self::new(alphabet, transition)
    }

    pub fn len(&self) -> usize {
        self.alphabet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphabet.is_empty()
    }

    pub fn alphabet(&self) -> &[i64] {
        &self.alphabet
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.transition[state]
    }

    pub fn current_index(&self) -> usize {
        self.current
    }

    pub fn current_value(&self) -> i64 {
        self.alphabet[self.current]
    }

    pub fn index_of(&self, value: i64) -> Option<usize> {
        self.alphabet.iter().position(|&v| v == value)
    }

    /// True when every row equals the first row, i.e. the next value does
    /// not depend on the current one.
    pub fn is_iid(&self) -> bool {
        let first = &self.transition[0];
        self.transition.iter().all(|row| {
            row.iter()
                .zip(first.iter())
                .all(|(a, b)| (a - b).abs() <= ROW_SUM_TOL)
        })
    }

    /// Advances the chain one transition and returns the new value.
    pub fn sample(&mut self, rng: &mut impl RngCore) -> i64 {
        let u = uniform01(rng);
        let row = &self.transition[self.current];
        let mut acc = 0.0;
        let mut next = row.len() - 1;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = j;
                break;
            }
        }
        self.current = next;
        self.alphabet[next]
    }
}

// ---------------------------------------------------------------------------
// Renewable generation
// ---------------------------------------------------------------------------

/// Clipped-Poisson probability masses `P(min(K, cap) = k)` for `k = 0..=cap`,
/// `K ~ Poisson(lambda)`. All mass above the cap concentrates at the cap.
pub fn poisson_clipped_pmf(lambda: f64, cap: Units) -> Vec<f64> {
    let cap = cap.max(0) as usize;
    let mut pmf = vec![0.0; cap + 1];
    if lambda <= 0.0 {
        pmf[0] = 1.0;
        return pmf;
    }
    let mut p = (-lambda).exp();
    let mut below = 0.0;
    for (k, slot) in pmf.iter_mut().enumerate().take(cap) {
        *slot = p;
        below += p;
        p *= lambda / (k + 1) as f64;
    }
    pmf[cap] = (1.0 - below).max(0.0);
    pmf
}

/// Inversion sample of `min(K, cap)`, `K ~ Poisson(lambda)`, using a single
/// uniform draw: walk the CDF until it exceeds `u` or the cap is reached.
pub fn sample_poisson_clipped(lambda: f64, cap: Units, rng: &mut impl RngCore) -> Units {
    if lambda <= 0.0 || cap <= 0 {
        return 0;
    }
    let u = uniform01(rng);
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let mut k: Units = 0;
    while u >= cdf && k < cap {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k
}

/// Kind of renewable source attached to a microgrid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenewableKind {
    Solar,
    Wind,
    None,
}

/// A per-slot Poisson generator with a hard output cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewableSource {
    pub kind: RenewableKind,
    slot_rates: Vec<f64>,
    cap: Units,
}

impl RenewableSource {
    pub fn new(
        kind: RenewableKind,
        slot_rates: Vec<f64>,
        cap: Units,
    ) -> Result<Self, ProcessError> {
        for (slot, &r) in slot_rates.iter().enumerate() {
            if r < 0.0 {
                return Err(ProcessError::NegativeRate { slot });
            }
        }
        if kind == RenewableKind::None && slot_rates.iter().any(|&r| r != 0.0) {
            return Err(ProcessError::NonZeroRateForNone);
        }
        Ok(Self {
            kind,
            slot_rates,
            cap: cap.max(0),
        })
    }

    /// Source that never generates, for grids without renewables.
    pub fn none(slots_per_day: usize) -> Self {
        Self {
            kind: RenewableKind::None,
            slot_rates: vec![0.0; slots_per_day],
            cap: 0,
        }
    }

    pub fn cap(&self) -> Units {
        self.cap
    }

    pub fn slots(&self) -> usize {
        self.slot_rates.len()
    }

    pub fn rate(&self, slot: u32) -> f64 {
        self.slot_rates[(slot as usize - 1) % self.slot_rates.len()]
    }

    /// Draws generation for the given 1-based slot.
    pub fn sample(&self, slot: u32, rng: &mut impl RngCore) -> Units {
        sample_poisson_clipped(self.rate(slot), self.cap, rng)
    }

    /// Exact clipped masses for the given slot, for the exact solver.
    pub fn clipped_pmf(&self, slot: u32) -> Vec<f64> {
        poisson_clipped_pmf(self.rate(slot), self.cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_state_matrix_is_identity() {
        let m = random_stochastic_matrix(1, 7).unwrap();
        assert_eq!(m, vec![vec![1.0]]);
    }

    #[test]
    fn zero_state_matrix_rejected() {
        assert!(matches!(
            random_stochastic_matrix(0, 7),
            Err(ProcessError::EmptyMatrix)
        ));
    }

    #[test]
    fn matrix_deterministic_given_seed() {
        let a = random_stochastic_matrix(4, 99).unwrap();
        let b = random_stochastic_matrix(4, 99).unwrap();
        assert_eq!(a, b);
        let c = random_stochastic_matrix(4, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn matrix_rows_normalized() {
        let m = random_stochastic_matrix(3, 11).unwrap();
        for row in &m {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= ROW_SUM_TOL, "row sums to {sum}");
        }
    }

    #[test]
    fn absorbing_state_never_changes() {
        let mut chain =
            FiniteMarkovChain::new(vec![5, 10], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut rng = stream(1, "absorbing");
        for _ in 0..100 {
            assert_eq!(chain.sample(&mut rng), 5);
        }
    }

    #[test]
    fn deterministic_row_moves_to_target() {
        let mut chain = FiniteMarkovChain::new(
            vec![2, 4, 6],
            vec![
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![1.0, 0.0, 0.0],
            ],
        )
        .unwrap();
        let mut rng = stream(2, "cycle");
        assert_eq!(chain.sample(&mut rng), 4);
        assert_eq!(chain.sample(&mut rng), 6);
        assert_eq!(chain.sample(&mut rng), 2);
    }

    #[test]
    fn uniform_row_frequencies_match() {
        let third = 1.0 / 3.0;
        let mut chain = FiniteMarkovChain::new(vec![0, 1, 2], vec![vec![third; 3]; 3]).unwrap();
        let mut rng = stream(3, "uniform-freq");
        let n = 1_000_000;
        let mut counts = [0u64; 3];
        for _ in 0..n {
            let v = chain.sample(&mut rng);
            counts[v as usize] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / n as f64;
            assert!((freq - third).abs() < 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn invalid_rows_rejected() {
        let bad_sum = FiniteMarkovChain::new(vec![1, 2], vec![vec![0.6, 0.6], vec![0.5, 0.5]]);
        assert!(matches!(
            bad_sum,
            Err(ProcessError::RowNotStochastic { row: 0, .. })
        ));
        let negative = FiniteMarkovChain::new(vec![1, 2], vec![vec![1.5, -0.5], vec![0.5, 0.5]]);
        assert!(matches!(
            negative,
            Err(ProcessError::NegativeEntry { row: 0 })
        ));
        let dup = FiniteMarkovChain::new(vec![1, 1], vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert!(matches!(dup, Err(ProcessError::DuplicateAlphabet)));
    }

    #[test]
    fn iid_random_has_identical_rows() {
        let chain = FiniteMarkovChain::iid_random(vec![2, 4], 13).unwrap();
        assert!(chain.is_iid());
        let markov = FiniteMarkovChain::random(vec![2, 4, 6], 13).unwrap();
        assert!(!markov.is_iid());
    }

    #[test]
    fn none_source_always_zero() {
        let src = RenewableSource::none(4);
        let mut rng = stream(4, "none");
        for slot in 1..=4 {
            assert_eq!(src.sample(slot, &mut rng), 0);
        }
    }

    #[test]
    fn zero_rate_always_zero() {
        let src = RenewableSource::new(RenewableKind::Solar, vec![0.0, 0.0], 8).unwrap();
        let mut rng = stream(5, "zero-rate");
        for _ in 0..100 {
            assert_eq!(src.sample(1, &mut rng), 0);
        }
    }

    #[test]
    fn clipped_mean_matches_exact_series() {
        let lambda = 3.0;
        let cap = 8;
        let pmf = poisson_clipped_pmf(lambda, cap);
        let exact_mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        let src = RenewableSource::new(RenewableKind::Wind, vec![lambda], cap).unwrap();
        let mut rng = stream(6, "clipped-mean");
        let n = 1_000_000;
        let mut total: i64 = 0;
        for _ in 0..n {
            total += src.sample(1, &mut rng);
        }
        let empirical = total as f64 / n as f64;
        assert!(
            (empirical - exact_mean).abs() < 0.02,
            "empirical {empirical} vs exact {exact_mean}"
        );
    }

    #[test]
    fn clipped_pmf_sums_to_one() {
        for &(lambda, cap) in &[(0.0, 5), (0.5, 2), (3.0, 8), (6.0, 8), (10.0, 3)] {
            let pmf = poisson_clipped_pmf(lambda, cap);
            let sum: f64 = pmf.iter().sum();
            assert!(
                (sum - 1.0).abs() < 1e-12,
                "lambda={lambda} cap={cap} sum={sum}"
            );
            assert!(pmf.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn streams_reproducible_and_label_separated() {
        let mut a = stream(42, "demand/0");
        let mut b = stream(42, "demand/0");
        let mut c = stream(42, "demand/1");
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn uniform_below_unbiased_small_range() {
        let mut rng = stream(7, "below");
        let mut counts = [0u64; 5];
        for _ in 0..100_000 {
            counts[uniform_below(&mut rng, 5) as usize] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / 100_000.0;
            assert!((freq - 0.2).abs() < 0.01);
        }
    }
}
