//! Bandit learners over the simplex: importance-weighted OMD (Exp3), phased
//! aggression toward a comparator, and a conservative algorithm for
//! stochastic costs.

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Relation};
use crate::nfg::{fix_sum, normalized};
use crate::olm::{linear_extreme_over_simplex, mix, CostVector, SimplexStrategy};

/// A learner that plays a simplex strategy and sees only its realized cost.
pub trait SimplexLearner {
    /// Strategy for the coming round.
    fn strategy(&self) -> &SimplexStrategy;
    /// Feeds back the action sampled from [`Self::strategy`] and its cost in `[0, 1]`.
    fn observe(&mut self, action: usize, cost: f64) -> Result<()>;
    fn phase(&self) -> usize {
        0
    }
    fn alpha(&self) -> f64 {
        1.0
    }
    /// Estimator summary of the last update, for learners that mix toward a comparator.
    fn telemetry(&self) -> Option<EstimateTelemetry> {
        None
    }
    /// Upper bound on the number of phases, when the learner has phases.
    fn max_phases(&self) -> Option<usize> {
        None
    }
}

/// Largest estimator entry of one update, the mixing weight it was drawn
/// under, and the comparator margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateTelemetry {
    pub alpha_before: f64,
    pub max_estimate: f64,
    pub delta: f64,
}

/// Smallest power of two that is `≥ x` (and at least 1).
pub fn next_power_of_two(x: f64) -> f64 {
    let mut r = 1.0;
    while r < x {
        r *= 2.0;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NfgHyperparams {
    pub rounds: usize,
    pub actions: usize,
    pub delta: f64,
    pub regret_bound: f64,
    pub eta: f64,
    pub tau: f64,
}

impl NfgHyperparams {
    pub fn new(rounds: usize, actions: usize, delta: f64) -> Result<Self> {
        if rounds == 0 {
            return Err(Error::InvalidParameter("rounds must be ≥ 1".into()));
        }
        if actions < 2 {
            return Err(Error::InvalidParameter("need at least two actions".into()));
        }
        if !(delta > 0.0 && delta <= 1.0 / actions as f64 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "delta = {delta} not in (0, 1/{actions}]"
            )));
        }
        let t = rounds as f64;
        let log_a = (actions as f64).ln();
        Ok(Self {
            rounds,
            actions,
            delta,
            regret_bound: next_power_of_two((2.0 * t * log_a).sqrt() / delta),
            eta: (delta * delta * log_a / (2.0 * t)).sqrt(),
            tau: (2.0 * log_a / (actions as f64 * t)).sqrt(),
        })
    }

    /// `1 + ⌈log₂ R⌉`.
    pub fn max_phases(&self) -> usize {
        1 + self.regret_bound.log2().ceil() as usize
    }
}

/// `ĉ(a) = cost / μ(a)` at the played action, zero elsewhere.
pub fn importance_estimator_nfg(
    played_action: usize,
    observed_cost: f64,
    mu_t: &SimplexStrategy,
) -> Result<CostVector> {
    let n = mu_t.len();
    if played_action >= n {
        return Err(Error::ActionOutOfRange {
            action: played_action,
            count: n,
        });
    }
    if !observed_cost.is_finite() || !(0.0..=1.0).contains(&observed_cost) {
        return Err(Error::InvalidCost(format!("observed cost {observed_cost}")));
    }
    let p = mu_t.probs()[played_action];
    if p <= 0.0 {
        return Err(Error::ZeroProbability(played_action));
    }
    let mut est = vec![0.0; n];
    est[played_action] = observed_cost / p;
    Ok(CostVector::from_raw(est))
}

/// Multiplicative-weights closed form of the entropic mirror step.
pub fn omd_kl_step(inner: &SimplexStrategy, est: &CostVector, rate: f64) -> Result<SimplexStrategy> {
    if !(rate > 0.0) {
        return Err(Error::InvalidParameter(format!("rate = {rate}")));
    }
    if inner.len() != est.len() {
        return Err(Error::Dimension {
            expected: inner.len(),
            got: est.len(),
        });
    }
    let logits: Vec<f64> = inner
        .probs()
        .iter()
        .zip(est.costs())
        .map(|(p, c)| p.ln() - rate * c)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("mirror step exponent"));
    }
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let out: Vec<f64> = w.iter().map(|x| x / total).collect();
    if out.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::NonFinite("mirror step weights"));
    }
    Ok(SimplexStrategy::from_normalized(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasedState {
    pub k: usize,
    pub alpha: f64,
    pub start: usize,
    pub inner: SimplexStrategy,
    pub cum_est: CostVector,
    pub cum_est_comp: f64,
}

impl PhasedState {
    pub fn new(actions: usize, regret_bound: f64) -> Self {
        Self {
            k: 1,
            alpha: phase_alpha(1, regret_bound),
            start: 1,
            inner: SimplexStrategy::uniform(actions),
            cum_est: CostVector::zeros(actions),
            cum_est_comp: 0.0,
        }
    }
}

/// `min(2^{k-1} / R, 1)`.
pub fn phase_alpha(k: usize, regret_bound: f64) -> f64 {
    (2f64.powi(k as i32 - 1) / regret_bound).min(1.0)
}

pub fn phase_trigger_nfg(state: &PhasedState, _comparator: &SimplexStrategy, regret_bound: f64) -> bool {
    let (min, _) = linear_extreme_over_simplex(state.cum_est.costs());
    state.alpha < 1.0 && state.cum_est_comp - min > 2.0 * regret_bound
}

/// Outcome of one phased round, for telemetry and invariant checks.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasedRound {
    pub estimate: CostVector,
    pub alpha_before: f64,
    pub triggered: bool,
}

/// One round of phased aggression: estimate, test, then restart or step.
pub fn phased_aggression_nfg_round(
    state: &mut PhasedState,
    hyper: &NfgHyperparams,
    comparator: &SimplexStrategy,
    played: &SimplexStrategy,
    t: usize,
    observed: (usize, f64),
) -> Result<(PhasedRound, SimplexStrategy)> {
    let est = importance_estimator_nfg(observed.0, observed.1, played)?;
    state.cum_est.add_assign(&est);
    state.cum_est_comp += comparator.dot(est.costs());
    let alpha_before = state.alpha;
    let triggered = phase_trigger_nfg(state, comparator, hyper.regret_bound);
    if triggered {
        state.k += 1;
        state.alpha = phase_alpha(state.k, hyper.regret_bound);
        state.start = t + 1;
        state.inner = SimplexStrategy::uniform(comparator.len());
        state.cum_est = CostVector::zeros(comparator.len());
        state.cum_est_comp = 0.0;
    } else {
        let rate = if state.alpha < 1.0 { hyper.eta } else { hyper.tau };
        state.inner = omd_kl_step(&state.inner, &est, rate)?;
    }
    let next = mix(state.alpha, &state.inner, comparator)?;
    Ok((
        PhasedRound {
            estimate: est,
            alpha_before,
            triggered,
        },
        next,
    ))
}

/// Phased aggression over the simplex with importance-weighted estimates.
#[derive(Debug, Clone)]
pub struct PhasedAggression {
    pub hyper: NfgHyperparams,
    comparator: SimplexStrategy,
    state: PhasedState,
    play: SimplexStrategy,
    t: usize,
    last: Option<PhasedRound>,
}

impl PhasedAggression {
    pub fn new(hyper: NfgHyperparams, comparator: SimplexStrategy) -> Result<Self> {
        if comparator.len() != hyper.actions {
            return Err(Error::Dimension {
                expected: hyper.actions,
                got: comparator.len(),
            });
        }
        if comparator.min_prob() < hyper.delta - 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "comparator margin {} below delta {}",
                comparator.min_prob(),
                hyper.delta
            )));
        }
        let state = PhasedState::new(hyper.actions, hyper.regret_bound);
        let play = mix(state.alpha, &state.inner, &comparator)?;
        Ok(Self {
            hyper,
            comparator,
            state,
            play,
            t: 1,
            last: None,
        })
    }

    /// Builds the learner with `δ` measured from the comparator.
    pub fn for_comparator(rounds: usize, comparator: SimplexStrategy) -> Result<Self> {
        let hyper = NfgHyperparams::new(rounds, comparator.len(), comparator.min_prob())?;
        Self::new(hyper, comparator)
    }

    pub fn state(&self) -> &PhasedState {
        &self.state
    }

    pub fn last_round(&self) -> Option<&PhasedRound> {
        self.last.as_ref()
    }

    pub fn comparator(&self) -> &SimplexStrategy {
        &self.comparator
    }
}

impl SimplexLearner for PhasedAggression {
    fn strategy(&self) -> &SimplexStrategy {
        &self.play
    }

    fn observe(&mut self, action: usize, cost: f64) -> Result<()> {
        let (round, next) = phased_aggression_nfg_round(
            &mut self.state,
            &self.hyper,
            &self.comparator,
            &self.play,
            self.t,
            (action, cost),
        )?;
        self.play = next;
        self.last = Some(round);
        self.t += 1;
        Ok(())
    }

    fn phase(&self) -> usize {
        self.state.k
    }

    fn alpha(&self) -> f64 {
        self.state.alpha
    }

    fn telemetry(&self) -> Option<EstimateTelemetry> {
        self.last.as_ref().map(|r| EstimateTelemetry {
            alpha_before: r.alpha_before,
            max_estimate: r.estimate.max_entry(),
            delta: self.hyper.delta,
        })
    }

    fn max_phases(&self) -> Option<usize> {
        Some(self.hyper.max_phases())
    }
}

/// Exp3: importance-weighted multiplicative weights from uniform.
#[derive(Debug, Clone)]
pub struct Exp3 {
    rate: f64,
    play: SimplexStrategy,
}

impl Exp3 {
    pub fn new(actions: usize, rate: f64) -> Result<Self> {
        if !(rate > 0.0) || actions == 0 {
            return Err(Error::InvalidParameter(format!("rate = {rate}, actions = {actions}")));
        }
        Ok(Self {
            rate,
            play: SimplexStrategy::uniform(actions),
        })
    }

    /// Exp3 at rate `√(2 log A / (A T))`.
    pub fn tuned(actions: usize, rounds: usize) -> Result<Self> {
        let a = actions as f64;
        Self::new(actions, (2.0 * a.ln() / (a * rounds as f64)).sqrt())
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl SimplexLearner for Exp3 {
    fn strategy(&self) -> &SimplexStrategy {
        &self.play
    }

    fn observe(&mut self, action: usize, cost: f64) -> Result<()> {
        let est = importance_estimator_nfg(action, cost, &self.play)?;
        self.play = omd_kl_step(&self.play, &est, self.rate)?;
        Ok(())
    }
}

/// A fixed strategy that never learns.
#[derive(Debug, Clone)]
pub struct FixedSimplex {
    play: SimplexStrategy,
    pub alpha: f64,
}

impl FixedSimplex {
    pub fn new(play: SimplexStrategy) -> Self {
        Self { play, alpha: 1.0 }
    }
}

impl SimplexLearner for FixedSimplex {
    fn strategy(&self) -> &SimplexStrategy {
        &self.play
    }

    fn observe(&mut self, _action: usize, _cost: f64) -> Result<()> {
        Ok(())
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceState {
    pub n: Vec<usize>,
    pub mean_hat: Vec<f64>,
    pub b: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mu_current: SimplexStrategy,
    pub zeta: f64,
    pub rounds: usize,
}

impl ConfidenceState {
    pub fn new(comparator: SimplexStrategy, rounds: usize) -> Self {
        let a = comparator.len();
        Self {
            n: vec![0; a],
            mean_hat: vec![0.0; a],
            b: vec![f64::INFINITY; a],
            lower: vec![f64::NEG_INFINITY; a],
            upper: vec![f64::INFINITY; a],
            mu_current: comparator,
            zeta: 1.0 / (2.0 * rounds as f64),
            rounds,
        }
    }

    pub fn half_width(&self, pulls: usize) -> f64 {
        if pulls == 0 {
            return f64::INFINITY;
        }
        let t = self.rounds as f64;
        let a = self.n.len() as f64;
        2.0 * (2.0 * (t * t * a / self.zeta).ln() / pulls as f64).sqrt()
    }

    fn record(&mut self, action: usize, reward: f64) {
        self.n[action] += 1;
        let n = self.n[action] as f64;
        self.mean_hat[action] += (reward - self.mean_hat[action]) / n;
        self.b[action] = self.half_width(self.n[action]);
        self.lower[action] = self.mean_hat[action] - self.b[action];
        self.upper[action] = self.mean_hat[action] + self.b[action];
    }

    /// True when every interval contains the corresponding true mean.
    pub fn covers(&self, means: &[f64]) -> bool {
        means
            .iter()
            .enumerate()
            .all(|(a, m)| self.lower[a] <= *m && *m <= self.upper[a])
    }
}

/// `Σ_a min over the box of (μ_a − μᵗ_a)·m̃_a`.
pub fn robust_improvement(mu: &[f64], current: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let mut total = 0.0;
    for a in 0..mu.len() {
        let d = mu[a] - current[a];
        if d == 0.0 {
            continue;
        }
        total += if d > 0.0 { d * lower[a] } else { d * upper[a] };
    }
    total
}

const IMPROVEMENT_FLOOR: f64 = 1e-12;

/// Solves `argmax_μ min_{m̃ ∈ box} ⟨μ − μᵗ, m̃⟩` as a linear program.
pub fn robust_step_lp(current: &SimplexStrategy, lower: &[f64], upper: &[f64]) -> Result<(SimplexStrategy, f64)> {
    let a = current.len();
    // Variables: μ_0..μ_{A-1}, then t_0..t_{A-1} (free).
    let mut lp = LinearProgram::new(2 * a);
    for i in 0..a {
        lp.objective[a + i] = 1.0;
        lp.free[a + i] = true;
    }
    let ones: Vec<(usize, f64)> = (0..a).map(|i| (i, 1.0)).collect();
    lp.add_sparse_row(&ones, Relation::Eq, 1.0);
    let cur = current.probs();
    for i in 0..a {
        if lower[i].is_finite() && upper[i].is_finite() {
            for bound in [lower[i], upper[i]] {
                lp.add_sparse_row(&[(a + i, 1.0), (i, -bound)], Relation::Le, -cur[i] * bound);
            }
        } else {
            lp.add_sparse_row(&[(i, 1.0)], Relation::Eq, cur[i]);
            lp.add_sparse_row(&[(a + i, 1.0)], Relation::Le, 0.0);
        }
    }
    let sol = lp.solve()?;
    if sol.value <= IMPROVEMENT_FLOOR {
        return Ok((current.clone(), 0.0));
    }
    let mut mu: Vec<f64> = sol.x[..a].iter().map(|p| p.max(0.0)).collect();
    mu = normalized(&mu);
    fix_sum(&mut mu);
    let value = robust_improvement(&mu, cur, lower, upper);
    Ok((SimplexStrategy::new(mu)?, value))
}

/// Closed-form optimum of the same program: shift the mass of every action
/// whose upper bound is below the best lower bound onto that action.
pub fn robust_step_greedy(current: &SimplexStrategy, lower: &[f64], upper: &[f64]) -> (SimplexStrategy, f64) {
    let (best_lower, target) =
        lower.iter().enumerate().fold(
            (f64::NEG_INFINITY, 0),
            |acc, (i, &l)| if l > acc.0 { (l, i) } else { acc },
        );
    if !best_lower.is_finite() {
        return (current.clone(), 0.0);
    }
    let mut mu = current.probs().to_vec();
    let mut gain = 0.0;
    for i in 0..mu.len() {
        if i != target && upper[i] < best_lower {
            gain += mu[i] * (best_lower - upper[i]);
            mu[target] += mu[i];
            mu[i] = 0.0;
        }
    }
    if gain <= IMPROVEMENT_FLOOR {
        return (current.clone(), 0.0);
    }
    fix_sum(&mut mu);
    (SimplexStrategy::from_normalized(mu), gain)
}

/// One round of the conservative stochastic learner. `reward = 1 − cost`.
pub fn conservative_stochastic_round(
    state: &mut ConfidenceState,
    observed: (usize, f64),
) -> Result<(SimplexStrategy, f64)> {
    let (action, reward) = observed;
    if action >= state.n.len() {
        return Err(Error::ActionOutOfRange {
            action,
            count: state.n.len(),
        });
    }
    if !(0.0..=1.0).contains(&reward) {
        return Err(Error::InvalidCost(format!("reward {reward}")));
    }
    state.record(action, reward);
    let (next, value) = robust_step_lp(&state.mu_current, &state.lower, &state.upper)?;
    state.mu_current = next.clone();
    Ok((next, value))
}

#[derive(Debug, Clone)]
pub struct ConservativeStochastic {
    state: ConfidenceState,
}

impl ConservativeStochastic {
    pub fn new(comparator: SimplexStrategy, rounds: usize) -> Self {
        Self {
            state: ConfidenceState::new(comparator, rounds),
        }
    }

    pub fn state(&self) -> &ConfidenceState {
        &self.state
    }
}

impl SimplexLearner for ConservativeStochastic {
    fn strategy(&self) -> &SimplexStrategy {
        &self.state.mu_current
    }

    fn observe(&mut self, action: usize, cost: f64) -> Result<()> {
        conservative_stochastic_round(&mut self.state, (action, 1.0 - cost)).map(|_| ())
    }
}

/// Drops zero-weight actions of a comparator. Returns the surviving action
/// indices, the comparator on them, and its margin.
pub fn restrict_simplex_support(comparator: &SimplexStrategy, tol: f64) -> Result<(Vec<usize>, SimplexStrategy, f64)> {
    let keep: Vec<usize> = (0..comparator.len()).filter(|&a| comparator.probs()[a] > tol).collect();
    if keep.is_empty() {
        return Err(Error::InvalidParameter("comparator has no support".into()));
    }
    let restricted = SimplexStrategy::new(normalized(
        &keep.iter().map(|&a| comparator.probs()[a]).collect::<Vec<_>>(),
    ))?;
    let delta = restricted.min_prob();
    Ok((keep, restricted, delta))
}
