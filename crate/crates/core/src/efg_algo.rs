//! Treeplex learners: importance-weighted trajectory estimates, closed-form
//! dilated mirror steps (unbalanced and balanced), phased aggression, and
//! equilibrium computation for extensive-form games.

use crate::efg::{
    best_response_value, efg_exploitability, policy_to_treeplex, raw_cost_vector, treeplex_to_policy,
    validate_treeplex, BalancedStrategies, EfgSpec, Game, Outcome, Player, PlayerTree, PlayerView, Policy, StateSpec,
    TreeplexStrategy,
};
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Relation};
use crate::nfg_algo::{next_power_of_two, phase_alpha, EstimateTelemetry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfgHyperparams {
    pub rounds: usize,
    pub delta: f64,
    pub infosets: usize,
    pub depth: usize,
    pub actions: usize,
    pub regret_bound: f64,
    pub eta: f64,
    pub tau: f64,
}

impl EfgHyperparams {
    pub fn new(rounds: usize, delta: f64, tree: &PlayerTree) -> Result<Self> {
        if rounds == 0 {
            return Err(Error::InvalidParameter("rounds must be ≥ 1".into()));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidParameter(format!("delta = {delta}")));
        }
        let x = tree.num_infosets() as f64;
        let h = tree.max_depth() as f64;
        let a = tree.max_actions().max(2) as f64;
        let t = rounds as f64;
        let log_a = a.ln();
        Ok(Self {
            rounds,
            delta,
            infosets: tree.num_infosets(),
            depth: tree.max_depth(),
            actions: a as usize,
            regret_bound: next_power_of_two((8.0 * x * h.powi(3) * log_a * t).sqrt() / delta),
            eta: (delta * delta * x * log_a / (8.0 * h * h * t)).sqrt(),
            tau: (x * a * log_a / (h.powi(3) * t)).sqrt(),
        })
    }

    pub fn max_phases(&self) -> usize {
        1 + self.regret_bound.log2().ceil() as usize
    }
}

/// One visited `(infoset, action)` pair and its estimated cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEntry {
    pub infoset: usize,
    pub action: usize,
    pub sequence: usize,
    pub value: f64,
}

/// Trajectory-sparse cost estimate, ordered from the root down.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEstimate {
    pub path: Vec<PathEntry>,
}

impl PathEstimate {
    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for e in &self.path {
            v[e.sequence] += e.value;
        }
        v
    }

    pub fn max_entry(&self) -> f64 {
        self.path.iter().map(|e| e.value).fold(0.0, f64::max)
    }
}

/// `ĉ(x_h, a) = u_h / μ(x_h, a)` on the visited pairs.
pub fn importance_estimator_efg(view: &PlayerView, mu_t: &TreeplexStrategy) -> Result<PathEstimate> {
    let mut path = Vec::with_capacity(view.steps.len());
    for step in &view.steps {
        let w = *mu_t.weights().get(step.sequence).ok_or(Error::ActionOutOfRange {
            action: step.sequence,
            count: mu_t.weights().len(),
        })?;
        if w <= 0.0 {
            return Err(Error::ZeroProbability(step.sequence));
        }
        if !(step.cost.is_finite() && step.cost >= -1e-12) {
            return Err(Error::InvalidCost(format!("step cost {}", step.cost)));
        }
        path.push(PathEntry {
            infoset: step.infoset,
            action: step.action,
            sequence: step.sequence,
            value: step.cost.max(0.0) / w,
        });
    }
    Ok(PathEstimate { path })
}

/// A strictly positive policy stored as per-infoset log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPolicy {
    pub logp: Vec<f64>,
}

impl LogPolicy {
    pub fn uniform(tree: &PlayerTree) -> Self {
        Self::from_policy(&Policy::uniform(tree))
    }

    pub fn from_policy(policy: &Policy) -> Self {
        Self {
            logp: policy.probs().iter().map(|p| p.ln()).collect(),
        }
    }

    pub fn to_policy(&self, tree: &PlayerTree) -> Policy {
        let mut probs: Vec<f64> = self.logp.iter().map(|l| l.exp()).collect();
        for x in 0..tree.num_infosets() {
            crate::nfg::fix_sum(&mut probs[tree.sequences(x)]);
        }
        Policy::new(tree, probs).expect("normalized log policy")
    }

    pub fn to_treeplex(&self, tree: &PlayerTree) -> TreeplexStrategy {
        policy_to_treeplex(tree, &self.to_policy(tree))
    }
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-infoset inverse weights `μ^{bal,h(x)}(x, ·)` of the balanced divergence.
pub fn balanced_inverse_weights(tree: &PlayerTree, balanced: &BalancedStrategies) -> Vec<f64> {
    (0..tree.num_infosets())
        .map(|x| balanced.at(tree.depth[x]).weights()[tree.offset[x]])
        .collect()
}

/// Per-step normalizers of one path update: `log Z_h` and `Ξ_h = log Z_h / β_h`
/// with `β_h = rate · inv_w(x_h)`. Beyond the path `Z = 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DilatedUpdateScratch {
    pub log_z: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Closed-form dilated step along the sampled path, backwards from the deepest entry.
///
/// `inv_w[x]` scales the divergence at infoset `x` by `1 / inv_w[x]`; `None`
/// is the unbalanced divergence.
pub fn path_step(
    tree: &PlayerTree,
    policy: &mut LogPolicy,
    est: &PathEstimate,
    rate: f64,
    inv_w: Option<&[f64]>,
) -> Result<DilatedUpdateScratch> {
    if !(rate > 0.0) {
        return Err(Error::InvalidParameter(format!("rate = {rate}")));
    }
    let w = |x: usize| inv_w.map_or(1.0, |v| v[x]);
    let n = est.path.len();
    let mut log_z = vec![0.0; n + 1];
    for h in (0..n).rev() {
        let e = est.path[h];
        let ratio = if h + 1 < n {
            w(e.infoset) / w(est.path[h + 1].infoset)
        } else {
            0.0
        };
        let expo = -rate * w(e.infoset) * e.value + ratio * log_z[h + 1];
        let seqs = tree.sequences(e.infoset);
        let others = logsumexp(seqs.clone().filter(|&s| s != e.sequence).map(|s| policy.logp[s]));
        let lz = logsumexp([others, policy.logp[e.sequence] + expo].into_iter());
        if !lz.is_finite() {
            return Err(Error::NonFinite("normalizer Z"));
        }
        for s in seqs {
            policy.logp[s] -= lz;
        }
        policy.logp[e.sequence] += expo;
        log_z[h] = lz;
    }
    log_z.truncate(n);
    let xi = log_z
        .iter()
        .zip(&est.path)
        .map(|(lz, e)| lz / (rate * w(e.infoset)))
        .collect();
    Ok(DilatedUpdateScratch { log_z, xi })
}

/// Unbalanced dilated step on a treeplex iterate.
pub fn dilated_omd_step(
    tree: &PlayerTree,
    inner: &TreeplexStrategy,
    est: &PathEstimate,
    eta: f64,
) -> Result<TreeplexStrategy> {
    let mut pol = LogPolicy::from_policy(&treeplex_to_policy(tree, inner));
    path_step(tree, &mut pol, est, eta, None)?;
    Ok(pol.to_treeplex(tree))
}

/// Balanced dilated step on a treeplex iterate.
pub fn balanced_omd_step(
    tree: &PlayerTree,
    inner: &TreeplexStrategy,
    est: &PathEstimate,
    tau: f64,
    balanced: &BalancedStrategies,
) -> Result<TreeplexStrategy> {
    let mut pol = LogPolicy::from_policy(&treeplex_to_policy(tree, inner));
    let inv_w = balanced_inverse_weights(tree, balanced);
    path_step(tree, &mut pol, est, tau, Some(&inv_w))?;
    Ok(pol.to_treeplex(tree))
}

/// Full-information dilated step for a dense cost vector, bottom-up.
pub fn dense_dilated_step(tree: &PlayerTree, policy: &mut LogPolicy, costs: &[f64], rate: f64, inv_w: Option<&[f64]>) {
    let w = |x: usize| inv_w.map_or(1.0, |v| v[x]);
    let mut log_z = vec![0.0; tree.num_infosets()];
    for &x in tree.order.iter().rev() {
        let mut expo = Vec::with_capacity(tree.num_actions[x]);
        for s in tree.sequences(x) {
            let below: f64 = tree.children[s].iter().map(|&c| (w(x) / w(c)) * log_z[c]).sum();
            expo.push(-rate * w(x) * costs[s] + below);
        }
        let seqs = tree.sequences(x);
        let lz = logsumexp(seqs.clone().zip(&expo).map(|(s, e)| policy.logp[s] + e));
        for (s, e) in seqs.zip(&expo) {
            policy.logp[s] += e - lz;
        }
        log_z[x] = lz;
    }
}

/// A learner over one player's treeplex under trajectory feedback.
pub trait TreeplexLearner {
    fn strategy(&self) -> &TreeplexStrategy;
    fn policy(&self) -> &Policy;
    fn observe(&mut self, view: &PlayerView) -> Result<()>;
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

pub fn phase_trigger_efg(
    tree: &PlayerTree,
    cum_est: &[f64],
    alpha: f64,
    comparator: &TreeplexStrategy,
    regret_bound: f64,
) -> bool {
    if alpha >= 1.0 {
        return false;
    }
    let (best, _) = best_response_value(tree, cum_est);
    comparator.dot(cum_est) - best > 2.0 * regret_bound
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfgPhasedState {
    pub k: usize,
    pub alpha: f64,
    pub start: usize,
    pub inner: LogPolicy,
    pub cum_est: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfgPhasedRound {
    pub estimate: PathEstimate,
    pub alpha_before: f64,
    pub triggered: bool,
}

/// Phased aggression over a treeplex.
#[derive(Debug, Clone)]
pub struct EfgPhasedAggression {
    pub hyper: EfgHyperparams,
    tree: PlayerTree,
    comparator: TreeplexStrategy,
    inv_w: Vec<f64>,
    unbalanced_final: bool,
    state: EfgPhasedState,
    play: TreeplexStrategy,
    play_policy: Policy,
    t: usize,
    last: Option<EfgPhasedRound>,
}

impl EfgPhasedAggression {
    pub fn new(
        tree: PlayerTree,
        comparator: TreeplexStrategy,
        hyper: EfgHyperparams,
        unbalanced_final: bool,
    ) -> Result<Self> {
        validate_treeplex(&tree, comparator.weights())?;
        let balanced = BalancedStrategies::new(&tree);
        let inv_w = balanced_inverse_weights(&tree, &balanced);
        let alpha = phase_alpha(1, hyper.regret_bound);
        let inner = LogPolicy::uniform(&tree);
        let play = inner.to_treeplex(&tree).mix(alpha, &comparator);
        let play_policy = treeplex_to_policy(&tree, &play);
        Ok(Self {
            hyper,
            state: EfgPhasedState {
                k: 1,
                alpha,
                start: 1,
                inner,
                cum_est: vec![0.0; tree.num_sequences],
            },
            tree,
            comparator,
            inv_w,
            unbalanced_final,
            play,
            play_policy,
            t: 1,
            last: None,
        })
    }

    /// Builds the learner with `δ` measured as the comparator's smallest weight.
    pub fn for_comparator(
        tree: PlayerTree,
        comparator: TreeplexStrategy,
        rounds: usize,
        unbalanced_final: bool,
    ) -> Result<Self> {
        let delta = comparator.min_weight();
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(
                "comparator has zero-weight sequences; restrict its support first".into(),
            ));
        }
        let hyper = EfgHyperparams::new(rounds, delta, &tree)?;
        Self::new(tree, comparator, hyper, unbalanced_final)
    }

    pub fn state(&self) -> &EfgPhasedState {
        &self.state
    }

    pub fn last_round(&self) -> Option<&EfgPhasedRound> {
        self.last.as_ref()
    }

    pub fn tree(&self) -> &PlayerTree {
        &self.tree
    }

    pub fn comparator(&self) -> &TreeplexStrategy {
        &self.comparator
    }

    /// Estimator, trigger test, then restart or closed-form step; returns the next play.
    pub fn phased_aggression_efg_round(&mut self, view: &PlayerView) -> Result<&TreeplexStrategy> {
        let est = importance_estimator_efg(view, &self.play)?;
        for e in &est.path {
            self.state.cum_est[e.sequence] += e.value;
        }
        let alpha_before = self.state.alpha;
        let triggered = phase_trigger_efg(
            &self.tree,
            &self.state.cum_est,
            self.state.alpha,
            &self.comparator,
            self.hyper.regret_bound,
        );
        if triggered {
            self.state.k += 1;
            self.state.alpha = phase_alpha(self.state.k, self.hyper.regret_bound);
            self.state.start = self.t + 1;
            self.state.inner = LogPolicy::uniform(&self.tree);
            self.state.cum_est.iter_mut().for_each(|c| *c = 0.0);
        } else if self.state.alpha < 1.0 || self.unbalanced_final {
            let rate = if self.state.alpha < 1.0 {
                self.hyper.eta
            } else {
                self.hyper.tau
            };
            path_step(&self.tree, &mut self.state.inner, &est, rate, None)?;
        } else {
            path_step(
                &self.tree,
                &mut self.state.inner,
                &est,
                self.hyper.tau,
                Some(&self.inv_w),
            )?;
        }
        self.play = self
            .state
            .inner
            .to_treeplex(&self.tree)
            .mix(self.state.alpha, &self.comparator);
        self.play_policy = treeplex_to_policy(&self.tree, &self.play);
        self.last = Some(EfgPhasedRound {
            estimate: est,
            alpha_before,
            triggered,
        });
        self.t += 1;
        Ok(&self.play)
    }
}

impl TreeplexLearner for EfgPhasedAggression {
    fn strategy(&self) -> &TreeplexStrategy {
        &self.play
    }

    fn policy(&self) -> &Policy {
        &self.play_policy
    }

    fn observe(&mut self, view: &PlayerView) -> Result<()> {
        self.phased_aggression_efg_round(view).map(|_| ())
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

/// Importance-weighted unbalanced dilated OMD from the uniform policy.
#[derive(Debug, Clone)]
pub struct EfgOmd {
    tree: PlayerTree,
    rate: f64,
    inner: LogPolicy,
    play: TreeplexStrategy,
    play_policy: Policy,
}

impl EfgOmd {
    pub fn new(tree: PlayerTree, rate: f64) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(Error::InvalidParameter(format!("rate = {rate}")));
        }
        let inner = LogPolicy::uniform(&tree);
        let play_policy = inner.to_policy(&tree);
        let play = policy_to_treeplex(&tree, &play_policy);
        Ok(Self {
            tree,
            rate,
            inner,
            play,
            play_policy,
        })
    }

    /// Rate `√(X A log A / (H³ T))`.
    pub fn tuned(tree: PlayerTree, rounds: usize) -> Result<Self> {
        let rate = EfgHyperparams::new(rounds, 1.0, &tree)?.tau;
        Self::new(tree, rate)
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl TreeplexLearner for EfgOmd {
    fn strategy(&self) -> &TreeplexStrategy {
        &self.play
    }

    fn policy(&self) -> &Policy {
        &self.play_policy
    }

    fn observe(&mut self, view: &PlayerView) -> Result<()> {
        let est = importance_estimator_efg(view, &self.play)?;
        path_step(&self.tree, &mut self.inner, &est, self.rate, None)?;
        self.play_policy = self.inner.to_policy(&self.tree);
        self.play = policy_to_treeplex(&self.tree, &self.play_policy);
        Ok(())
    }
}

/// A fixed treeplex strategy.
#[derive(Debug, Clone)]
pub struct FixedTreeplex {
    play: TreeplexStrategy,
    play_policy: Policy,
    pub alpha: f64,
}

impl FixedTreeplex {
    pub fn new(tree: &PlayerTree, play: TreeplexStrategy) -> Self {
        let play_policy = treeplex_to_policy(tree, &play);
        Self {
            play,
            play_policy,
            alpha: 1.0,
        }
    }
}

impl TreeplexLearner for FixedTreeplex {
    fn strategy(&self) -> &TreeplexStrategy {
        &self.play
    }

    fn policy(&self) -> &Policy {
        &self.play_policy
    }

    fn observe(&mut self, _view: &PlayerView) -> Result<()> {
        Ok(())
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// A game with one player's zero-comparator actions removed.
#[derive(Debug, Clone)]
pub struct Restriction {
    pub player: Player,
    pub spec: EfgSpec,
    pub game: Game,
    pub comparator: TreeplexStrategy,
    pub delta: f64,
    /// Original sequence of each restricted sequence.
    pub sequence_map: Vec<usize>,
    /// Original infoset of each restricted infoset.
    pub infoset_map: Vec<usize>,
    original_sequences: usize,
    restricted_of: Vec<Option<(usize, usize)>>,
}

impl Restriction {
    pub fn tree(&self) -> &PlayerTree {
        self.game.tree(self.player)
    }

    /// Zero-pads a restricted treeplex point to the original sequences.
    pub fn lift(&self, mu: &TreeplexStrategy) -> TreeplexStrategy {
        let mut w = vec![0.0; self.original_sequences];
        for (r, &o) in self.sequence_map.iter().enumerate() {
            w[o] = mu.weights()[r];
        }
        TreeplexStrategy::from_valid(w)
    }

    /// Maps an original-game view onto restricted infosets and sequences.
    pub fn lower(&self, view: &PlayerView) -> Result<PlayerView> {
        let mut out = view.clone();
        for step in &mut out.steps {
            let (r, j) = self.restricted_of[step.sequence].ok_or_else(|| {
                Error::Invariant(format!("sequence {} outside the restricted support", step.sequence))
            })?;
            step.infoset = r;
            step.action = j;
            step.sequence = self.tree().offset[r] + j;
        }
        Ok(out)
    }
}

/// Removes `player`'s sequences with comparator weight `≤ tol` and everything below them.
pub fn support_restriction(
    game: &Game,
    player: Player,
    comparator: &TreeplexStrategy,
    tol: f64,
) -> Result<Restriction> {
    let tree = game.tree(player);
    validate_treeplex(tree, comparator.weights())?;
    if tree
        .roots
        .iter()
        .all(|&x| tree.sequences(x).all(|s| comparator.weights()[s] <= tol))
    {
        return Err(Error::InvalidParameter("comparator has no mass at the root".into()));
    }
    let spec = game.spec();
    let keep = |seq: usize| comparator.weights()[seq] > tol;

    let mut out = EfgSpec {
        states: Vec::new(),
        p0: Vec::new(),
        alice_infosets: 0,
        bob_infosets: 0,
    };
    let mut info_new: [Vec<Option<usize>>; 2] = [vec![None; spec.alice_infosets], vec![None; spec.bob_infosets]];
    let mut counts = [0usize; 2];
    let mut infoset_map = Vec::new();
    let mut kept_actions: Vec<Option<Vec<usize>>> = vec![None; tree.num_infosets()];

    // Iterative depth-first copy; each frame is (original state, slot to patch).
    enum Slot {
        Init(usize),
        Next(usize, usize, usize),
    }
    let mut stack: Vec<(usize, Slot)> = spec
        .p0
        .iter()
        .enumerate()
        .rev()
        .map(|(i, &(_, s))| (s, Slot::Init(i)))
        .collect();
    out.p0 = spec.p0.clone();
    while let Some((orig, slot)) = stack.pop() {
        let s = &spec.states[orig];
        let id = out.states.len();
        match slot {
            Slot::Init(i) => out.p0[i].1 = id,
            Slot::Next(parent, o, k) => out.states[parent].outcomes[o].next[k].1 = id,
        }
        let mut ids = [None, None];
        for p in [Player::Alice, Player::Bob] {
            if let Some(x) = s.infoset(p) {
                let slot = &mut info_new[p.index()][x];
                if slot.is_none() {
                    *slot = Some(counts[p.index()]);
                    counts[p.index()] += 1;
                    if p == player {
                        infoset_map.push(x);
                    }
                }
                ids[p.index()] = *slot;
            }
        }
        let acts = match s.infoset(player) {
            Some(x) => kept_actions[x]
                .get_or_insert_with(|| (0..tree.num_actions[x]).filter(|&a| keep(tree.offset[x] + a)).collect())
                .clone(),
            None => vec![0],
        };
        let (alice_acts, bob_acts): (Vec<usize>, Vec<usize>) = match player {
            Player::Alice => (acts, (0..s.bob_actions).collect()),
            Player::Bob => ((0..s.alice_actions).collect(), acts),
        };
        let mut outcomes = Vec::with_capacity(alice_acts.len() * bob_acts.len());
        let mut children = Vec::new();
        for &a in &alice_acts {
            for &b in &bob_acts {
                let o = s.outcome(a, b);
                let idx = outcomes.len();
                for (k, &(_, j)) in o.next.iter().enumerate() {
                    children.push((j, Slot::Next(id, idx, k)));
                }
                outcomes.push(Outcome {
                    cost: o.cost,
                    noise: o.noise,
                    next: o.next.clone(),
                });
            }
        }
        out.states.push(StateSpec {
            stage: s.stage,
            alice: ids[0],
            bob: ids[1],
            alice_actions: alice_acts.len(),
            bob_actions: bob_acts.len(),
            outcomes,
        });
        for c in children.into_iter().rev() {
            stack.push(c);
        }
    }
    out.alice_infosets = counts[0];
    out.bob_infosets = counts[1];
    let restricted = Game::new(out.clone())?;

    let rtree = restricted.tree(player);
    let mut sequence_map = vec![0; rtree.num_sequences];
    let mut restricted_of = vec![None; tree.num_sequences];
    for (r, &x) in infoset_map.iter().enumerate() {
        let acts = kept_actions[x].as_ref().expect("visited infoset");
        for (j, &a) in acts.iter().enumerate() {
            sequence_map[rtree.offset[r] + j] = tree.offset[x] + a;
            restricted_of[tree.offset[x] + a] = Some((r, j));
        }
    }
    let weights: Vec<f64> = sequence_map.iter().map(|&o| comparator.weights()[o]).collect();
    let restricted_comparator = TreeplexStrategy::new(rtree, weights)?;
    let delta = restricted_comparator.min_weight();
    Ok(Restriction {
        player,
        spec: out,
        game: restricted,
        comparator: restricted_comparator,
        delta,
        sequence_map,
        infoset_map,
        original_sequences: tree.num_sequences,
        restricted_of,
    })
}

/// A learner living on a restricted treeplex, presented in original coordinates.
pub struct RestrictedLearner<L> {
    pub restriction: Restriction,
    pub inner: L,
    play: TreeplexStrategy,
    play_policy: Policy,
    original_tree: PlayerTree,
}

impl<L: TreeplexLearner> RestrictedLearner<L> {
    pub fn new(restriction: Restriction, original_tree: PlayerTree, inner: L) -> Self {
        let play = restriction.lift(inner.strategy());
        let play_policy = treeplex_to_policy(&original_tree, &play);
        Self {
            restriction,
            inner,
            play,
            play_policy,
            original_tree,
        }
    }
}

impl<L: TreeplexLearner> TreeplexLearner for RestrictedLearner<L> {
    fn strategy(&self) -> &TreeplexStrategy {
        &self.play
    }

    fn policy(&self) -> &Policy {
        &self.play_policy
    }

    fn observe(&mut self, view: &PlayerView) -> Result<()> {
        let lowered = self.restriction.lower(view)?;
        self.inner.observe(&lowered)?;
        self.play = self.restriction.lift(self.inner.strategy());
        self.play_policy = treeplex_to_policy(&self.original_tree, &self.play);
        Ok(())
    }

    fn phase(&self) -> usize {
        self.inner.phase()
    }

    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    fn telemetry(&self) -> Option<EstimateTelemetry> {
        self.inner.telemetry()
    }

    fn max_phases(&self) -> Option<usize> {
        self.inner.max_phases()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfgEquilibrium {
    pub alice: TreeplexStrategy,
    pub bob: TreeplexStrategy,
    pub value: f64,
    pub exploitability: f64,
    pub iterations: usize,
}

/// Equilibrium by full-information optimistic dilated OMD self-play with
/// averaged realization weights, certified by best-response DP.
pub fn solve_minmax_efg(game: &Game, epsilon: f64, budget: usize) -> Result<EfgEquilibrium> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon}")));
    }
    let rate = 1.0;
    let trees = [game.tree(Player::Alice), game.tree(Player::Bob)];
    let mut pol = [LogPolicy::uniform(trees[0]), LogPolicy::uniform(trees[1])];
    let mut cur = [pol[0].to_treeplex(trees[0]), pol[1].to_treeplex(trees[1])];
    let mut prev: [Option<Vec<f64>>; 2] = [None, None];
    let mut sums = [vec![0.0; trees[0].num_sequences], vec![0.0; trees[1].num_sequences]];
    let mut best_gap = f64::INFINITY;
    for it in 1..=budget {
        let grads = [
            raw_cost_vector(game, Player::Alice, &cur[1]).costs,
            raw_cost_vector(game, Player::Bob, &cur[0]).costs,
        ];
        for p in 0..2 {
            let g: Vec<f64> = match &prev[p] {
                Some(old) => grads[p].iter().zip(old).map(|(a, b)| 2.0 * a - b).collect(),
                None => grads[p].clone(),
            };
            dense_dilated_step(trees[p], &mut pol[p], &g, rate, None);
        }
        prev = [Some(grads[0].clone()), Some(grads[1].clone())];
        for p in 0..2 {
            cur[p] = pol[p].to_treeplex(trees[p]);
            for (s, w) in sums[p].iter_mut().zip(cur[p].weights()) {
                *s += w;
            }
        }
        if it % 100 == 0 || it == budget {
            let avg: Vec<TreeplexStrategy> = (0..2)
                .map(|p| TreeplexStrategy::from_valid(sums[p].iter().map(|s| s / it as f64).collect()))
                .collect();
            let (value, gap) = efg_exploitability(game, &avg[0], &avg[1]);
            best_gap = best_gap.min(gap);
            if gap <= epsilon {
                return Ok(EfgEquilibrium {
                    alice: avg[0].clone(),
                    bob: avg[1].clone(),
                    value,
                    exploitability: gap,
                    iterations: it,
                });
            }
        }
    }
    Err(Error::NoConvergence {
        gap: best_gap,
        iterations: budget,
    })
}

/// Sequence-form linear program for `player`'s min-max strategy. The simplex
/// method returns a vertex of the optimal face.
pub fn minmax_strategy_lp(game: &Game, player: Player) -> Result<(TreeplexStrategy, f64)> {
    let me = game.tree(player);
    let them = game.tree(player.other());
    let spec = game.spec();
    // pay[i][j]: player's raw cost; index 0 is the empty sequence.
    let mut pay = vec![vec![0.0; them.num_sequences + 1]; me.num_sequences + 1];
    for (i, s) in spec.states.iter().enumerate() {
        let reach = game.chance_reach(i);
        for a in 0..s.alice_actions {
            for b in 0..s.bob_actions {
                let (mine, theirs) = if player == Player::Alice { (a, b) } else { (b, a) };
                let u = player.sign() * s.outcome(a, b).cost;
                if u == 0.0 {
                    continue;
                }
                let r = game.sequence_at(player, i, mine).map_or(0, |q| q + 1);
                let c = game.sequence_at(player.other(), i, theirs).map_or(0, |q| q + 1);
                pay[r][c] += reach * u;
            }
        }
    }
    // Variables: my sequences, then opponent duals v_0 and v_y (free).
    let nm = me.num_sequences;
    let ny = them.num_infosets();
    let mut lp = LinearProgram::new(nm + 1 + ny);
    for k in nm..nm + 1 + ny {
        lp.free[k] = true;
    }
    lp.objective[nm] = -1.0;
    let v = |y: usize| nm + 1 + y;
    // Opponent empty sequence: v_0 − Σ_roots v_y ≥ cost attributed to it.
    {
        let mut terms = vec![(nm, 1.0)];
        for &y in &them.roots {
            terms.push((v(y), -1.0));
        }
        for i in 0..nm {
            terms.push((i, -pay[i + 1][0]));
        }
        lp.add_sparse_row(&terms, Relation::Ge, pay[0][0]);
    }
    // Since the opponent maximizes my cost, each of its sequences yields a ≥ row.
    for y in 0..ny {
        for s in them.sequences(y) {
            let mut terms = vec![(v(y), 1.0)];
            for &c in &them.children[s] {
                terms.push((v(c), -1.0));
            }
            for i in 0..nm {
                terms.push((i, -pay[i + 1][s + 1]));
            }
            lp.add_sparse_row(&terms, Relation::Ge, pay[0][s + 1]);
        }
    }
    for x in 0..me.num_infosets() {
        let mut terms: Vec<(usize, f64)> = me.sequences(x).map(|s| (s, 1.0)).collect();
        match me.parent[x] {
            Some(p) => {
                terms.push((p, -1.0));
                lp.add_sparse_row(&terms, Relation::Eq, 0.0);
            }
            None => lp.add_sparse_row(&terms, Relation::Eq, 1.0),
        }
    }
    let sol = lp.solve()?;
    let mut w: Vec<f64> = sol.x[..nm]
        .iter()
        .map(|x| if x.abs() < 1e-12 { 0.0 } else { x.max(0.0) })
        .collect();
    // Re-impose exact flow from the root down.
    let pol = treeplex_to_policy(me, &TreeplexStrategy::from_valid(w.clone()));
    w = policy_to_treeplex(me, &pol).into_inner();
    Ok((TreeplexStrategy::new(me, w)?, -sol.value))
}

/// Equilibrium from both players' sequence-form programs, certified by best responses.
pub fn solve_minmax_efg_lp(game: &Game) -> Result<EfgEquilibrium> {
    let (alice, _) = minmax_strategy_lp(game, Player::Alice)?;
    let (bob, _) = minmax_strategy_lp(game, Player::Bob)?;
    let (value, gap) = efg_exploitability(game, &alice, &bob);
    Ok(EfgEquilibrium {
        alice,
        bob,
        value,
        exploitability: gap,
        iterations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efg::gen::{random_efg, random_policy};
    use crate::efg::{cost_vector_from_opponent, flow_residual, sample_trajectory, Step};
    use crate::nfg_algo::{importance_estimator_nfg, omd_kl_step, phase_trigger_nfg, PhasedState};
    use crate::olm::{CostVector, RngStream, SimplexStrategy};
    use proptest::prelude::*;

    fn random_path(tree: &PlayerTree, rng: &mut RngStream) -> PathEstimate {
        let mut path = Vec::new();
        let mut x = tree.roots[rng.below(tree.roots.len())];
        loop {
            let a = rng.below(tree.num_actions[x]);
            let seq = tree.offset[x] + a;
            path.push(PathEntry {
                infoset: x,
                action: a,
                sequence: seq,
                value: 3.0 * rng.uniform(),
            });
            let kids = &tree.children[seq];
            if kids.is_empty() {
                break;
            }
            x = kids[rng.below(kids.len())];
        }
        PathEstimate { path }
    }

    fn depth_one_game(actions: usize) -> Game {
        Game::new(EfgSpec {
            states: vec![StateSpec {
                stage: 1,
                alice: Some(0),
                bob: None,
                alice_actions: actions,
                bob_actions: 1,
                outcomes: (0..actions).map(|a| Outcome::terminal(0.1 * a as f64)).collect(),
            }],
            p0: vec![(1.0, 0)],
            alice_infosets: 1,
            bob_infosets: 0,
        })
        .unwrap()
    }

    #[test]
    fn hyperparams_follow_formulas() {
        let g = depth_one_game(3);
        let tree = g.tree(Player::Alice);
        let h = EfgHyperparams::new(1000, 0.2, tree).unwrap();
        let raw = (8.0 * 3f64.ln() * 1000.0).sqrt() / 0.2;
        assert!(h.regret_bound >= raw && h.regret_bound < 2.0 * raw);
        assert!((h.eta - (0.04 * 3f64.ln() / 8000.0).sqrt()).abs() < 1e-15);
        assert!((h.tau - (3.0 * 3f64.ln() / 1000.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_costs_give_zero_estimate_and_identity_steps() {
        let mut rng = RngStream::new(1);
        let g = Game::new(random_efg(&mut rng, 2, 3, false)).unwrap();
        let tree = g.tree(Player::Alice);
        let mu = policy_to_treeplex(tree, &random_policy(tree, &mut rng));
        let mut path = random_path(tree, &mut rng);
        for e in &mut path.path {
            e.value = 0.0;
        }
        let view = PlayerView {
            steps: path
                .path
                .iter()
                .map(|e| Step {
                    infoset: e.infoset,
                    action: e.action,
                    sequence: e.sequence,
                    cost: 0.0,
                })
                .collect(),
            root_cost: 0.0,
        };
        let est = importance_estimator_efg(&view, &mu).unwrap();
        assert!(est.path.iter().all(|e| e.value == 0.0));
        let bal = BalancedStrategies::new(tree);
        for out in [
            dilated_omd_step(tree, &mu, &est, 0.5).unwrap(),
            balanced_omd_step(tree, &mu, &est, 0.5, &bal).unwrap(),
        ] {
            for (a, b) in out.weights().iter().zip(mu.weights()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depth_one_matches_simplex_forms() {
        let g = depth_one_game(3);
        let tree = g.tree(Player::Alice);
        let inner = SimplexStrategy::new(vec![0.2, 0.5, 0.3]).unwrap();
        let mu = TreeplexStrategy::new(tree, inner.probs().to_vec()).unwrap();
        let view = PlayerView {
            steps: vec![Step {
                infoset: 0,
                action: 1,
                sequence: 1,
                cost: 0.7,
            }],
            root_cost: 0.0,
        };
        let est = importance_estimator_efg(&view, &mu).unwrap();
        let nfg_est = importance_estimator_nfg(1, 0.7, &inner).unwrap();
        assert_eq!(est.to_dense(3), nfg_est.costs());

        let simplex = omd_kl_step(&inner, &nfg_est, 0.4).unwrap();
        let tree_out = dilated_omd_step(tree, &mu, &est, 0.4).unwrap();
        for (a, b) in tree_out.weights().iter().zip(simplex.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
        let bal = BalancedStrategies::new(tree);
        let simplex = omd_kl_step(&inner, &nfg_est, 0.4 / 3.0).unwrap();
        let tree_out = balanced_omd_step(tree, &mu, &est, 0.4, &bal).unwrap();
        for (a, b) in tree_out.weights().iter().zip(simplex.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn depth_one_trigger_matches_simplex_trigger() {
        let g = depth_one_game(3);
        let tree = g.tree(Player::Alice);
        let comp = SimplexStrategy::new(vec![0.5, 0.3, 0.2]).unwrap();
        let comp_t = TreeplexStrategy::new(tree, comp.probs().to_vec()).unwrap();
        let mut rng = RngStream::new(6);
        for _ in 0..200 {
            let cum: Vec<f64> = (0..3).map(|_| 10.0 * rng.uniform()).collect();
            let r = 1.0 + 3.0 * rng.uniform();
            let alpha = if rng.bernoulli(0.2) { 1.0 } else { 0.25 };
            let mut s = PhasedState::new(3, 4.0);
            s.cum_est = CostVector::from_raw(cum.clone());
            s.cum_est_comp = comp.dot(&cum);
            s.alpha = alpha;
            assert_eq!(
                phase_trigger_nfg(&s, &comp, r),
                phase_trigger_efg(tree, &cum, alpha, &comp_t, r)
            );
        }
        assert!(!phase_trigger_efg(tree, &[0.0; 3], 0.5, &comp_t, 1.0));
    }

    #[test]
    fn sparse_path_step_equals_dense_step() {
        let mut rng = RngStream::new(9);
        for _ in 0..50 {
            let g = Game::new(random_efg(&mut rng, 3, 3, true)).unwrap();
            let tree = g.tree(Player::Alice);
            let pol = LogPolicy::from_policy(&random_policy(tree, &mut rng));
            let path = random_path(tree, &mut rng);
            let bal = BalancedStrategies::new(tree);
            let inv_w = balanced_inverse_weights(tree, &bal);
            for w in [None, Some(inv_w.as_slice())] {
                let mut sparse = pol.clone();
                path_step(tree, &mut sparse, &path, 0.3, w).unwrap();
                let mut dense = pol.clone();
                dense_dilated_step(tree, &mut dense, &path.to_dense(tree.num_sequences), 0.3, w);
                for (a, b) in sparse.logp.iter().zip(&dense.logp) {
                    assert!((a - b).abs() < 1e-12);
                }
                // Off-path infosets are untouched bit for bit.
                let on_path: Vec<usize> = path.path.iter().map(|e| e.infoset).collect();
                for x in 0..tree.num_infosets() {
                    if !on_path.contains(&x) {
                        for s in tree.sequences(x) {
                            assert_eq!(sparse.logp[s], pol.logp[s]);
                        }
                    }
                }
            }
        }
    }

    fn weighted_divergence(
        tree: &PlayerTree,
        mu: &TreeplexStrategy,
        p: &LogPolicy,
        q: &LogPolicy,
        inv_w: &[f64],
    ) -> f64 {
        (0..tree.num_sequences)
            .map(|s| mu.weights()[s] / inv_w[tree.infoset_of(s)] * (p.logp[s] - q.logp[s]))
            .sum()
    }

    #[test]
    fn divergence_change_equals_linear_term_plus_normalizer() {
        let mut rng = RngStream::new(31);
        for _ in 0..40 {
            let g = Game::new(random_efg(&mut rng, 3, 3, true)).unwrap();
            let tree = g.tree(Player::Alice);
            let before = LogPolicy::from_policy(&random_policy(tree, &mut rng));
            let mu = policy_to_treeplex(tree, &random_policy(tree, &mut rng));
            let own = LogPolicy::from_policy(&treeplex_to_policy(tree, &mu));
            let path = random_path(tree, &mut rng);
            let dense = path.to_dense(tree.num_sequences);
            let bal = BalancedStrategies::new(tree);
            let unit = vec![1.0; tree.num_infosets()];
            let inv_bal = balanced_inverse_weights(tree, &bal);
            for inv_w in [&unit, &inv_bal] {
                let rate = 0.2;
                let mut after = before.clone();
                let scratch = path_step(tree, &mut after, &path, rate, Some(inv_w)).unwrap();
                let lhs = weighted_divergence(tree, &mu, &own, &after, inv_w)
                    - weighted_divergence(tree, &mu, &own, &before, inv_w);
                let rhs = rate * mu.dot(&dense) + rate * scratch.xi[0];
                assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
                assert!(scratch.log_z.iter().all(|z| *z <= 1e-15));
            }
        }
    }

    #[test]
    fn estimator_is_unbiased_on_random_game() {
        let mut rng = RngStream::new(14);
        let g = Game::new(random_efg(&mut rng, 2, 3, true)).unwrap();
        let ta = g.tree(Player::Alice);
        let tb = g.tree(Player::Bob);
        let pa = random_policy(ta, &mut rng);
        let pb = random_policy(tb, &mut rng);
        let mu = policy_to_treeplex(ta, &pa);
        let nu = policy_to_treeplex(tb, &pb);
        let truth = cost_vector_from_opponent(&g, Player::Alice, &nu);
        let n = 100_000;
        let mut sum = vec![0.0; ta.num_sequences];
        let mut sq = vec![0.0; ta.num_sequences];
        let mut srng = RngStream::new(3);
        for _ in 0..n {
            let play = sample_trajectory(&g, &pa, &pb, &mut srng);
            let est = importance_estimator_efg(&play.alice, &mu).unwrap();
            for e in &est.path {
                sum[e.sequence] += e.value;
                sq[e.sequence] += e.value * e.value;
            }
        }
        for s in 0..ta.num_sequences {
            let mean = sum[s] / n as f64;
            let se = ((sq[s] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!(
                (mean - truth.costs[s]).abs() <= 3.0 * se + 1e-12,
                "seq {s}: {mean} vs {}",
                truth.costs[s]
            );
        }
    }

    #[test]
    fn restriction_identity_for_full_support() {
        let mut rng = RngStream::new(4);
        let g = Game::new(random_efg(&mut rng, 2, 3, true)).unwrap();
        let tree = g.tree(Player::Alice);
        let comp = policy_to_treeplex(tree, &random_policy(tree, &mut rng));
        let r = support_restriction(&g, Player::Alice, &comp, 1e-12).unwrap();
        assert_eq!(r.tree().num_sequences, tree.num_sequences);
        assert!((r.delta - comp.min_weight()).abs() < 1e-15);
        assert_eq!(r.lift(&r.comparator).weights(), comp.weights());
    }

    #[test]
    fn restriction_of_sparse_comparator_is_valid() {
        let mut rng = RngStream::new(8);
        for _ in 0..30 {
            let g = Game::new(random_efg(&mut rng, 2, 3, true)).unwrap();
            let tree = g.tree(Player::Alice);
            let mut probs = random_policy(tree, &mut rng).into_inner();
            for x in 0..tree.num_infosets() {
                // Zero one action per infoset half of the time.
                if rng.bernoulli(0.5) {
                    let s = tree.offset[x] + rng.below(tree.num_actions[x]);
                    probs[s] = 0.0;
                    let row = &mut probs[tree.sequences(x)];
                    let total: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= total);
                }
            }
            let comp = policy_to_treeplex(tree, &Policy::new(tree, probs).unwrap());
            let r = support_restriction(&g, Player::Alice, &comp, 1e-12).unwrap();
            assert!(crate::efg::validate_efg(&r.spec).is_valid());
            assert!(r.delta > 0.0);
            assert!(r.comparator.weights().iter().all(|w| *w > 1e-12));
            let lifted = r.lift(&r.comparator);
            for (a, b) in lifted.weights().iter().zip(comp.weights()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn restriction_rejects_empty_root() {
        let g = depth_one_game(2);
        let zero = TreeplexStrategy::from_valid(vec![0.0, 0.0]);
        assert!(support_restriction(&g, Player::Alice, &zero, 1e-12).is_err());
    }

    #[test]
    fn self_play_and_lp_certify_on_random_games() {
        let mut rng = RngStream::new(70);
        for _ in 0..5 {
            let g = Game::new(random_efg(&mut rng, 2, 2, true)).unwrap();
            let eq = solve_minmax_efg(&g, 1e-3, 200_000).unwrap();
            assert!(eq.exploitability <= 1e-3);
            let lp = solve_minmax_efg_lp(&g).unwrap();
            assert!(lp.exploitability <= 1e-9, "{}", lp.exploitability);
            assert!((lp.value - eq.value).abs() <= 2e-3);
        }
    }

    #[test]
    fn first_round_mixes_uniform_into_comparator() {
        let mut rng = RngStream::new(2);
        let g = Game::new(random_efg(&mut rng, 2, 3, false)).unwrap();
        let tree = g.tree(Player::Alice).clone();
        let comp = policy_to_treeplex(&tree, &random_policy(&tree, &mut rng));
        let learner = EfgPhasedAggression::for_comparator(tree.clone(), comp.clone(), 500, false).unwrap();
        let r = learner.hyper.regret_bound;
        let uniform = policy_to_treeplex(&tree, &Policy::uniform(&tree));
        let expect = uniform.mix(1.0 / r, &comp);
        assert_eq!(learner.strategy(), &expect);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn phased_runs_keep_invariants(seed in 0u64..10_000, unbalanced in any::<bool>()) {
            let mut rng = RngStream::new(seed);
            let g = Game::new(random_efg(&mut rng, 2, 3, true)).unwrap();
            let tree = g.tree(Player::Alice).clone();
            let comp = policy_to_treeplex(&tree, &random_policy(&tree, &mut rng));
            let delta = comp.min_weight();
            let mut hyper = EfgHyperparams::new(300, delta, &tree).unwrap();
            // A small bound makes phases turn over within the run.
            hyper.regret_bound = 4.0;
            let mut learner = EfgPhasedAggression::new(tree.clone(), comp, hyper, unbalanced).unwrap();
            let bob = random_policy(g.tree(Player::Bob), &mut rng);
            let mut last_alpha = learner.alpha();
            for _ in 0..300 {
                let play = sample_trajectory(&g, learner.policy(), &bob, &mut rng);
                learner.observe(&play.alice).unwrap();
                let round = learner.last_round().unwrap();
                if round.alpha_before <= 0.5 {
                    prop_assert!(round.estimate.max_entry() <= 2.0 / delta + 1e-9);
                }
                prop_assert!(flow_residual(&tree, learner.strategy().weights()) < 1e-9);
                prop_assert!(learner.state().inner.logp.iter().all(|l| l.is_finite()));
                prop_assert!(learner.alpha() >= last_alpha);
                last_alpha = learner.alpha();
                prop_assert!(learner.phase() <= learner.hyper.max_phases());
            }
        }
    }
}
