//! Online linear minimization over the simplex: strategies, cost vectors,
//! seeded randomness and regret accounting.
//!
//! Everything here is value-like. Learners own their strategies and the
//! harness owns one [`RngStream`] per replica, so independent replicas can be
//! moved across threads freely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Absolute tolerance used for the sum-to-one and flow constraints.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A probability vector over `A` actions.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexStrategy {
    probs: Vec<f64>,
}

impl SimplexStrategy {
    /// Validates and wraps a probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_simplex(&probs)?;
        Ok(Self { probs })
    }

    pub fn uniform(actions: usize) -> Self {
        assert!(actions > 0, "simplex needs at least one action");
        Self {
            probs: vec![1.0 / actions as f64; actions],
        }
    }

    pub fn point_mass(actions: usize, action: usize) -> Self {
        let mut probs = vec![0.0; actions];
        probs[action] = 1.0;
        Self { probs }
    }

    /// Wraps a vector known to be a valid strategy. Used on hot paths where the
    /// invariant holds by construction (normalized exponentials, convex mixes).
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        debug_assert!(validate_simplex(&probs).is_ok(), "{probs:?}");
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.probs
    }

    /// Smallest entry, the comparator margin δ when this is a comparator.
    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn dot(&self, costs: &[f64]) -> f64 {
        dot(&self.probs, costs)
    }
}

/// Checks nonnegativity and sum-to-one within [`SIMPLEX_TOL`].
pub fn validate_simplex(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidSimplex("empty".into()));
    }
    if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidSimplex(format!("entry {i} = {p}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidSimplex(format!("sum = {sum}")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A cost vector over `A` actions, bounded by a declared `bound`.
///
/// True costs use `bound = 1`; importance-weighted estimates may exceed it.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVector {
    costs: Vec<f64>,
}

impl CostVector {
    pub fn new(costs: Vec<f64>, bound: f64) -> Result<Self> {
        for (i, &c) in costs.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::InvalidCost(format!("entry {i} not finite")));
            }
            if c < 0.0 || c > bound {
                return Err(Error::InvalidCost(format!("entry {i} = {c} outside [0, {bound}]")));
            }
        }
        Ok(Self { costs })
    }

    pub fn zeros(actions: usize) -> Self {
        Self {
            costs: vec![0.0; actions],
        }
    }

    pub(crate) fn from_raw(costs: Vec<f64>) -> Self {
        Self { costs }
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn max_entry(&self) -> f64 {
        self.costs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn add_assign(&mut self, other: &CostVector) {
        for (a, b) in self.costs.iter_mut().zip(&other.costs) {
            *a += b;
        }
    }
}

/// Deterministic random stream. Identical seeds give identical draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A new independent stream whose seed is derived from this one's seed.
    pub fn derive(&self, salt: u64) -> Self {
        Self::new(splitmix(self.seed ^ splitmix(salt)))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Inverse-CDF sampling over the stored order with one uniform draw.
pub fn sample_index(probs: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `u` beyond the accumulated mass: take the last supported action.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("distribution has positive mass")
}

pub fn sample_from_simplex(strategy: &SimplexStrategy, rng: &mut RngStream) -> Result<usize> {
    validate_simplex(strategy.probs())?;
    Ok(sample_index(strategy.probs(), rng))
}

/// `alpha * inner + (1 - alpha) * comparator`.
pub fn mix(alpha: f64, inner: &SimplexStrategy, comparator: &SimplexStrategy) -> Result<SimplexStrategy> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} not in (0, 1]")));
    }
    if inner.len() != comparator.len() {
        return Err(Error::Dimension {
            expected: inner.len(),
            got: comparator.len(),
        });
    }
    if alpha == 1.0 {
        return Ok(inner.clone());
    }
    let probs = inner
        .probs
        .iter()
        .zip(&comparator.probs)
        .map(|(p, q)| alpha * p + (1.0 - alpha) * q)
        .collect();
    Ok(SimplexStrategy::from_normalized(probs))
}

/// Smallest entry and its lowest-index minimizer.
pub fn linear_extreme_over_simplex(cum_costs: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (i, &c) in cum_costs.iter().enumerate() {
        if c < best.0 {
            best = (c, i);
        }
    }
    best
}

/// `max_{μ∈Δ} ⟨q, μ^c − μ⟩`, computed in O(A).
pub fn comparator_gap(cum_costs: &[f64], comparator: &SimplexStrategy) -> f64 {
    comparator.dot(cum_costs) - linear_extreme_over_simplex(cum_costs).0
}

/// Cumulative expected costs of the played strategy, the comparator, and
/// every pure action, fed with the full true cost vector each round.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretLedger {
    pub cum_played_expected: f64,
    pub cum_comparator_expected: f64,
    pub cum_cost_by_action: Vec<f64>,
    pub rounds: usize,
}

impl RegretLedger {
    pub fn new(actions: usize) -> Self {
        Self {
            cum_played_expected: 0.0,
            cum_comparator_expected: 0.0,
            cum_cost_by_action: vec![0.0; actions],
            rounds: 0,
        }
    }

    pub fn comparator_regret(&self) -> f64 {
        self.cum_played_expected - self.cum_comparator_expected
    }

    pub fn worst_case_regret(&self) -> f64 {
        self.cum_played_expected - linear_extreme_over_simplex(&self.cum_cost_by_action).0
    }
}

pub fn record_round(
    ledger: &mut RegretLedger,
    played: &SimplexStrategy,
    comparator: &SimplexStrategy,
    true_costs: &CostVector,
) -> Result<()> {
    let n = ledger.cum_cost_by_action.len();
    for len in [played.len(), comparator.len(), true_costs.len()] {
        if len != n {
            return Err(Error::Dimension { expected: n, got: len });
        }
    }
    ledger.cum_played_expected += played.dot(true_costs.costs());
    ledger.cum_comparator_expected += comparator.dot(true_costs.costs());
    for (acc, c) in ledger.cum_cost_by_action.iter_mut().zip(true_costs.costs()) {
        *acc += c;
    }
    ledger.rounds += 1;
    Ok(())
}
