//! Two-player zero-sum extensive-form games with chance folded into the
//! transition kernel.
//!
//! A game is a forest of states. Each state belongs to a stage, may host a
//! decision of Alice, of Bob, or of both, and lists one [`Outcome`] per joint
//! action. Costs are Alice's (Bob pays the negation). Sequences of a player
//! are `(infoset, action)` pairs, numbered densely per player.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::olm::{sample_index, RngStream, SimplexStrategy, SIMPLEX_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Player {
    Alice,
    Bob,
}

impl Player {
    pub fn index(self) -> usize {
        match self {
            Player::Alice => 0,
            Player::Bob => 1,
        }
    }

    pub fn other(self) -> Player {
        match self {
            Player::Alice => Player::Bob,
            Player::Bob => Player::Alice,
        }
    }

    /// Sign applied to Alice's raw cost to get this player's cost.
    pub fn sign(self) -> f64 {
        match self {
            Player::Alice => 1.0,
            Player::Bob => -1.0,
        }
    }
}

/// Distribution of a realized raw cost around its mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    Deterministic,
    /// Takes `low` or `high` with the probabilities that match the mean.
    TwoPoint {
        low: f64,
        high: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Mean raw cost to Alice, in `[-1, 1]`.
    pub cost: f64,
    pub noise: Noise,
    /// Successor distribution; empty for a terminal outcome.
    pub next: Vec<(f64, usize)>,
}

impl Outcome {
    pub fn terminal(cost: f64) -> Self {
        Self {
            cost,
            noise: Noise::Deterministic,
            next: Vec::new(),
        }
    }

    pub fn to(next: Vec<(f64, usize)>) -> Self {
        Self {
            cost: 0.0,
            noise: Noise::Deterministic,
            next,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.next.is_empty()
    }

    fn cost_range(&self) -> (f64, f64) {
        match self.noise {
            Noise::Deterministic => (self.cost, self.cost),
            Noise::TwoPoint { low, high } => (low, high),
        }
    }

    fn realize(&self, rng: &mut RngStream) -> f64 {
        match self.noise {
            Noise::Deterministic => self.cost,
            Noise::TwoPoint { low, high } => {
                let p_high = if high > low {
                    (self.cost - low) / (high - low)
                } else {
                    0.0
                };
                if rng.bernoulli(p_high) {
                    high
                } else {
                    low
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpec {
    pub stage: usize,
    pub alice: Option<usize>,
    pub bob: Option<usize>,
    pub alice_actions: usize,
    pub bob_actions: usize,
    /// Indexed `a * bob_actions + b`.
    pub outcomes: Vec<Outcome>,
}

impl StateSpec {
    pub fn outcome(&self, a: usize, b: usize) -> &Outcome {
        &self.outcomes[a * self.bob_actions + b]
    }

    pub fn infoset(&self, p: Player) -> Option<usize> {
        match p {
            Player::Alice => self.alice,
            Player::Bob => self.bob,
        }
    }

    pub fn actions(&self, p: Player) -> usize {
        match p {
            Player::Alice => self.alice_actions,
            Player::Bob => self.bob_actions,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfgSpec {
    pub states: Vec<StateSpec>,
    pub p0: Vec<(f64, usize)>,
    pub alice_infosets: usize,
    pub bob_infosets: usize,
}

impl EfgSpec {
    pub fn infosets(&self, p: Player) -> usize {
        match p {
            Player::Alice => self.alice_infosets,
            Player::Bob => self.bob_infosets,
        }
    }

    pub fn horizon(&self) -> usize {
        self.states.iter().map(|s| s.stage).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Shape,
    Probability,
    Stage,
    TreeStructure,
    PerfectRecall,
    CostRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Offending state, and a second state when the violation is relational.
    pub witness: (usize, Option<usize>),
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, witness: (usize, Option<usize>), message: String) {
        self.violations.push(Violation { kind, witness, message });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            match v.witness {
                (s, Some(t)) => writeln!(f, "{:?} at states {s},{t}: {}", v.kind, v.message)?,
                (s, None) => writeln!(f, "{:?} at state {s}: {}", v.kind, v.message)?,
            }
        }
        Ok(())
    }
}

fn prob_ok(list: &[(f64, usize)]) -> bool {
    let total: f64 = list.iter().map(|(p, _)| p).sum();
    list.iter().all(|(p, _)| p.is_finite() && *p > 0.0) && (total - 1.0).abs() <= SIMPLEX_TOL
}

/// Checks shapes, probabilities, stages, the tree assumption, perfect recall
/// for both players, and cost ranges.
pub fn validate_efg(spec: &EfgSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = spec.states.len();
    if n == 0 || spec.p0.is_empty() {
        report.push(ViolationKind::Shape, (0, None), "game has no states".into());
        return report;
    }

    for (i, s) in spec.states.iter().enumerate() {
        for p in [Player::Alice, Player::Bob] {
            let k = s.actions(p);
            match s.infoset(p) {
                Some(x) if x >= spec.infosets(p) => report.push(
                    ViolationKind::Shape,
                    (i, None),
                    format!("{p:?} infoset {x} out of range"),
                ),
                Some(_) if k == 0 => report.push(ViolationKind::Shape, (i, None), format!("{p:?} has no actions")),
                None if k != 1 => report.push(
                    ViolationKind::Shape,
                    (i, None),
                    format!("{p:?} does not act but has {k} actions"),
                ),
                _ => {}
            }
        }
        if s.outcomes.len() != s.alice_actions * s.bob_actions {
            report.push(ViolationKind::Shape, (i, None), "outcome table has wrong size".into());
            continue;
        }
        for o in &s.outcomes {
            if !o.next.is_empty() && !prob_ok(&o.next) {
                report.push(
                    ViolationKind::Probability,
                    (i, None),
                    "transition row is not a distribution".into(),
                );
            }
            for &(_, j) in &o.next {
                if j >= n {
                    report.push(ViolationKind::Shape, (i, None), format!("successor {j} out of range"));
                } else if spec.states[j].stage != s.stage + 1 {
                    report.push(
                        ViolationKind::Stage,
                        (i, Some(j)),
                        format!("stage {} follows stage {}", spec.states[j].stage, s.stage),
                    );
                }
            }
            let (lo, hi) = o.cost_range();
            let ok = lo.is_finite() && hi.is_finite() && -1.0 <= lo && lo <= o.cost && o.cost <= hi && hi <= 1.0;
            if !ok {
                report.push(
                    ViolationKind::CostRange,
                    (i, None),
                    format!("cost {} outside [-1, 1]", o.cost),
                );
            }
            if !o.is_terminal() && lo < 0.0 {
                report.push(
                    ViolationKind::CostRange,
                    (i, None),
                    "non-terminal costs must be nonnegative".into(),
                );
            }
        }
    }
    if !report.is_valid() {
        return report;
    }
    if !prob_ok(&spec.p0) {
        report.push(
            ViolationKind::Probability,
            (spec.p0[0].1, None),
            "initial distribution".into(),
        );
    }

    // Tree structure: every state has exactly one way in.
    let mut preds: Vec<Vec<Option<(usize, usize, usize)>>> = vec![Vec::new(); n];
    for &(_, j) in &spec.p0 {
        if j >= n {
            report.push(
                ViolationKind::Shape,
                (0, None),
                format!("initial state {j} out of range"),
            );
            return report;
        }
        preds[j].push(None);
        if spec.states[j].stage != 1 {
            report.push(ViolationKind::Stage, (j, None), "initial state not at stage 1".into());
        }
    }
    for (i, s) in spec.states.iter().enumerate() {
        for a in 0..s.alice_actions {
            for b in 0..s.bob_actions {
                for &(_, j) in &s.outcome(a, b).next {
                    preds[j].push(Some((i, a, b)));
                }
            }
        }
    }
    for (j, p) in preds.iter().enumerate() {
        match p.len() {
            1 => {}
            0 => report.push(ViolationKind::TreeStructure, (j, None), "unreachable state".into()),
            _ => {
                let other = p.iter().flatten().map(|x| x.0).next();
                report.push(
                    ViolationKind::TreeStructure,
                    (j, other),
                    "state has several predecessors".into(),
                );
            }
        }
    }
    if !report.is_valid() {
        return report;
    }

    // Own histories, then perfect recall.
    let order = topological_states(spec);
    let mut hist: [Vec<Vec<(usize, usize)>>; 2] = [vec![Vec::new(); n], vec![Vec::new(); n]];
    for &i in &order {
        if let Some((parent, a, b)) = preds[i][0] {
            let ps = &spec.states[parent];
            for p in [Player::Alice, Player::Bob] {
                let mut h = hist[p.index()][parent].clone();
                if let Some(x) = ps.infoset(p) {
                    h.push((x, if p == Player::Alice { a } else { b }));
                }
                hist[p.index()][i] = h;
            }
        }
    }
    for p in [Player::Alice, Player::Bob] {
        let mut seen: HashMap<usize, usize> = HashMap::new();
        for &i in &order {
            let s = &spec.states[i];
            let Some(x) = s.infoset(p) else { continue };
            match seen.get(&x) {
                None => {
                    seen.insert(x, i);
                }
                Some(&first) => {
                    let f = &spec.states[first];
                    if f.stage != s.stage {
                        report.push(
                            ViolationKind::PerfectRecall,
                            (first, Some(i)),
                            format!("{p:?} infoset {x} spans stages"),
                        );
                    } else if f.actions(p) != s.actions(p) {
                        report.push(
                            ViolationKind::PerfectRecall,
                            (first, Some(i)),
                            format!("{p:?} infoset {x} has inconsistent action counts"),
                        );
                    } else if hist[p.index()][first] != hist[p.index()][i] {
                        report.push(
                            ViolationKind::PerfectRecall,
                            (first, Some(i)),
                            format!("{p:?} infoset {x} mixes different own histories"),
                        );
                    }
                }
            }
        }
        if seen.len() != spec.infosets(p) {
            report.push(
                ViolationKind::Shape,
                (0, None),
                format!("{p:?} declares {} infosets but uses {}", spec.infosets(p), seen.len()),
            );
        }
    }

    // Realized path totals stay within [-1, 1].
    let mut range = vec![(0.0f64, 0.0f64); n];
    for &i in order.iter().rev() {
        let s = &spec.states[i];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for o in &s.outcomes {
            let (cl, ch) = o.cost_range();
            let (nl, nh) = o.next.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, &(_, j)| {
                (acc.0.min(range[j].0), acc.1.max(range[j].1))
            });
            let (nl, nh) = if o.next.is_empty() { (0.0, 0.0) } else { (nl, nh) };
            lo = lo.min(cl + nl);
            hi = hi.max(ch + nh);
        }
        range[i] = (lo, hi);
    }
    for &(_, j) in &spec.p0 {
        let (lo, hi) = range[j];
        if lo < -1.0 - 1e-12 || hi > 1.0 + 1e-12 {
            report.push(
                ViolationKind::CostRange,
                (j, None),
                format!("path totals span [{lo}, {hi}]"),
            );
        }
    }
    report
}

/// States ordered so that every state follows its predecessor.
fn topological_states(spec: &EfgSpec) -> Vec<usize> {
    let mut order = Vec::with_capacity(spec.states.len());
    let mut stack: Vec<usize> = spec.p0.iter().rev().map(|&(_, j)| j).collect();
    while let Some(i) = stack.pop() {
        order.push(i);
        let s = &spec.states[i];
        for o in s.outcomes.iter().rev() {
            for &(_, j) in o.next.iter().rev() {
                stack.push(j);
            }
        }
    }
    order
}

/// One player's sequence-form structure.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerTree {
    pub num_actions: Vec<usize>,
    pub offset: Vec<usize>,
    /// Sequence leading to each infoset (`None` at roots).
    pub parent: Vec<Option<usize>>,
    /// Own decision depth, starting at 1.
    pub depth: Vec<usize>,
    /// Infosets directly below each sequence.
    pub children: Vec<Vec<usize>>,
    pub roots: Vec<usize>,
    /// Infosets with parents first.
    pub order: Vec<usize>,
    pub num_sequences: usize,
}

impl PlayerTree {
    pub fn num_infosets(&self) -> usize {
        self.num_actions.len()
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn max_actions(&self) -> usize {
        self.num_actions.iter().copied().max().unwrap_or(1)
    }

    pub fn sequences(&self, x: usize) -> std::ops::Range<usize> {
        self.offset[x]..self.offset[x] + self.num_actions[x]
    }

    /// Infoset owning sequence `seq`.
    pub fn infoset_of(&self, seq: usize) -> usize {
        match self.offset.binary_search(&seq) {
            Ok(x) => x,
            Err(x) => x - 1,
        }
    }

    /// Builds a tree from `(num_actions, parent sequence)` per infoset.
    pub fn from_parents(spec: &[(usize, Option<usize>)]) -> Result<Self> {
        let mut offset = Vec::with_capacity(spec.len());
        let mut next = 0;
        for &(k, _) in spec {
            if k == 0 {
                return Err(Error::InvalidGame("infoset without actions".into()));
            }
            offset.push(next);
            next += k;
        }
        let num_sequences = next;
        let mut tree = PlayerTree {
            num_actions: spec.iter().map(|s| s.0).collect(),
            offset,
            parent: spec.iter().map(|s| s.1).collect(),
            depth: vec![0; spec.len()],
            children: vec![Vec::new(); num_sequences],
            roots: Vec::new(),
            order: Vec::new(),
            num_sequences,
        };
        for x in 0..spec.len() {
            match tree.parent[x] {
                None => tree.roots.push(x),
                Some(seq) => {
                    if seq >= num_sequences {
                        return Err(Error::InvalidGame(format!("parent sequence {seq} out of range")));
                    }
                    tree.children[seq].push(x);
                }
            }
        }
        let mut stack: Vec<(usize, usize)> = tree.roots.iter().rev().map(|&x| (x, 1)).collect();
        while let Some((x, d)) = stack.pop() {
            tree.depth[x] = d;
            tree.order.push(x);
            for seq in tree.sequences(x).rev() {
                for &c in tree.children[seq].iter().rev() {
                    stack.push((c, d + 1));
                }
            }
        }
        if tree.order.len() != spec.len() {
            return Err(Error::InvalidGame("infoset parents form a cycle".into()));
        }
        Ok(tree)
    }
}

/// Realization weights over one player's sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeplexStrategy {
    weights: Vec<f64>,
}

impl TreeplexStrategy {
    pub fn new(tree: &PlayerTree, weights: Vec<f64>) -> Result<Self> {
        validate_treeplex(tree, &weights)?;
        Ok(Self { weights })
    }

    pub(crate) fn from_valid(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.weights
    }

    pub fn dot(&self, c: &[f64]) -> f64 {
        crate::olm::dot(&self.weights, c)
    }

    /// Smallest weight, the comparator margin.
    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, alpha: f64, other: &TreeplexStrategy) -> TreeplexStrategy {
        if alpha == 1.0 {
            return self.clone();
        }
        TreeplexStrategy {
            weights: self
                .weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect(),
        }
    }
}

/// Largest absolute flow residual of a weight vector.
pub fn flow_residual(tree: &PlayerTree, w: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for x in 0..tree.num_infosets() {
        let total: f64 = tree.sequences(x).map(|s| w[s]).sum();
        let parent = tree.parent[x].map_or(1.0, |s| w[s]);
        worst = worst.max((total - parent).abs());
    }
    worst
}

pub fn validate_treeplex(tree: &PlayerTree, w: &[f64]) -> Result<()> {
    if w.len() != tree.num_sequences {
        return Err(Error::Dimension {
            expected: tree.num_sequences,
            got: w.len(),
        });
    }
    if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidTreeplex(format!("sequence {i} = {v}")));
    }
    let r = flow_residual(tree, w);
    if r > SIMPLEX_TOL {
        return Err(Error::InvalidTreeplex(format!("flow residual {r:e}")));
    }
    Ok(())
}

/// Behavioral policy: one simplex row per infoset, stored flat by sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(tree: &PlayerTree, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != tree.num_sequences {
            return Err(Error::Dimension {
                expected: tree.num_sequences,
                got: probs.len(),
            });
        }
        for x in 0..tree.num_infosets() {
            crate::olm::validate_simplex(&probs[tree.sequences(x)])?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(tree: &PlayerTree) -> Self {
        let mut probs = vec![0.0; tree.num_sequences];
        for x in 0..tree.num_infosets() {
            let k = tree.num_actions[x] as f64;
            for s in tree.sequences(x) {
                probs[s] = 1.0 / k;
            }
        }
        Self { probs }
    }

    pub(crate) fn from_valid(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, tree: &PlayerTree, x: usize) -> &[f64] {
        &self.probs[tree.sequences(x)]
    }

    pub fn row_strategy(&self, tree: &PlayerTree, x: usize) -> SimplexStrategy {
        SimplexStrategy::from_normalized(self.row(tree, x).to_vec())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.probs
    }
}

/// Path products `μ(x, a) = μ(parent(x)) · π(a | x)`.
pub fn policy_to_treeplex(tree: &PlayerTree, policy: &Policy) -> TreeplexStrategy {
    let mut w = vec![0.0; tree.num_sequences];
    for &x in &tree.order {
        let reach = tree.parent[x].map_or(1.0, |s| w[s]);
        for s in tree.sequences(x) {
            w[s] = reach * policy.probs[s];
        }
    }
    TreeplexStrategy { weights: w }
}

/// Normalizes each infoset row; zero-mass rows become uniform.
pub fn treeplex_to_policy(tree: &PlayerTree, mu: &TreeplexStrategy) -> Policy {
    let mut probs = vec![0.0; tree.num_sequences];
    for x in 0..tree.num_infosets() {
        let range = tree.sequences(x);
        let total: f64 = mu.weights[range.clone()].iter().sum();
        let k = tree.num_actions[x] as f64;
        for s in range {
            probs[s] = if total > 0.0 { mu.weights[s] / total } else { 1.0 / k };
        }
        if total > 0.0 {
            crate::nfg::fix_sum(&mut probs[tree.sequences(x)]);
        }
    }
    Policy { probs }
}

/// `min_μ ⟨cum, μ⟩` over the treeplex by bottom-up dynamic programming, with
/// a pure minimizer (lowest action on ties).
pub fn best_response_value(tree: &PlayerTree, cum: &[f64]) -> (f64, TreeplexStrategy) {
    let mut value = vec![0.0; tree.num_infosets()];
    let mut choice = vec![0usize; tree.num_infosets()];
    for &x in tree.order.iter().rev() {
        let mut best = (f64::INFINITY, 0);
        for (a, s) in tree.sequences(x).enumerate() {
            let v = cum[s] + tree.children[s].iter().map(|&c| value[c]).sum::<f64>();
            if v < best.0 {
                best = (v, a);
            }
        }
        value[x] = best.0;
        choice[x] = best.1;
    }
    let total = tree.roots.iter().map(|&x| value[x]).sum();
    let mut w = vec![0.0; tree.num_sequences];
    for &x in &tree.order {
        let reach = tree.parent[x].map_or(1.0, |s| w[s]);
        w[tree.offset[x] + choice[x]] = reach;
    }
    (total, TreeplexStrategy { weights: w })
}

/// Per-stage balanced exploration strategies `μ^{bal,h}`, `h = 1..=H`.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedStrategies {
    pub by_depth: Vec<TreeplexStrategy>,
}

impl BalancedStrategies {
    pub fn new(tree: &PlayerTree) -> Self {
        let h_max = tree.max_depth();
        // counts[h-1][seq] = number of depth-h infosets below sequence `seq`.
        let mut counts = vec![vec![0usize; tree.num_sequences]; h_max];
        for &x in tree.order.iter().rev() {
            for s in tree.sequences(x) {
                for &c in &tree.children[s] {
                    for h in 1..=h_max {
                        let below: usize = tree.sequences(c).map(|cs| counts[h - 1][cs]).sum();
                        counts[h - 1][s] += below + usize::from(tree.depth[c] == h);
                    }
                }
            }
        }
        let by_depth = (1..=h_max)
            .map(|h| policy_to_treeplex(tree, &balanced_policy(tree, &counts[h - 1], h)))
            .collect();
        Self { by_depth }
    }

    /// `μ^{bal,h}` with `h` starting at 1.
    pub fn at(&self, h: usize) -> &TreeplexStrategy {
        &self.by_depth[h - 1]
    }
}

fn balanced_policy(tree: &PlayerTree, counts: &[usize], h: usize) -> Policy {
    let mut probs = vec![0.0; tree.num_sequences];
    for x in 0..tree.num_infosets() {
        let k = tree.num_actions[x] as f64;
        let total: usize = tree.sequences(x).map(|s| counts[s]).sum();
        for s in tree.sequences(x) {
            probs[s] = if tree.depth[x] < h && total > 0 {
                counts[s] as f64 / total as f64
            } else {
                1.0 / k
            };
        }
    }
    Policy { probs }
}

pub fn balanced_exploration_strategy(tree: &PlayerTree, h: usize) -> Result<TreeplexStrategy> {
    if h == 0 || h > tree.max_depth() {
        return Err(Error::InvalidParameter(format!(
            "stage {h} outside 1..={}",
            tree.max_depth()
        )));
    }
    Ok(BalancedStrategies::new(tree).at(h).clone())
}

/// A validated game with both players' sequence-form trees.
#[derive(Debug, Clone)]
pub struct Game {
    spec: EfgSpec,
    trees: [PlayerTree; 2],
    /// Chance-only probability of reaching each state.
    chance_reach: Vec<f64>,
    /// Each player's latest sequence before reaching each state.
    prev_seq: [Vec<Option<usize>>; 2],
    order: Vec<usize>,
}

impl Game {
    pub fn new(spec: EfgSpec) -> Result<Self> {
        let report = validate_efg(&spec);
        if !report.is_valid() {
            return Err(Error::InvalidGame(report.to_string().trim_end().to_string()));
        }
        let order = topological_states(&spec);
        let n = spec.states.len();
        let mut chance_reach = vec![0.0; n];
        for &(p, j) in &spec.p0 {
            chance_reach[j] = p;
        }
        let mut prev_seq: [Vec<Option<usize>>; 2] = [vec![None; n], vec![None; n]];
        let mut info_parent: [Vec<Option<Option<(usize, usize)>>>; 2] =
            [vec![None; spec.alice_infosets], vec![None; spec.bob_infosets]];
        let mut info_actions: [Vec<usize>; 2] = [vec![0; spec.alice_infosets], vec![0; spec.bob_infosets]];
        // First pass: parents as (infoset, action) pairs.
        let mut prev_pair: [Vec<Option<(usize, usize)>>; 2] = [vec![None; n], vec![None; n]];
        for &i in &order {
            let s = &spec.states[i];
            for p in [Player::Alice, Player::Bob] {
                if let Some(x) = s.infoset(p) {
                    info_parent[p.index()][x] = Some(prev_pair[p.index()][i]);
                    info_actions[p.index()][x] = s.actions(p);
                }
            }
            for a in 0..s.alice_actions {
                for b in 0..s.bob_actions {
                    for &(q, j) in &s.outcome(a, b).next {
                        chance_reach[j] = chance_reach[i] * q;
                        for p in [Player::Alice, Player::Bob] {
                            let act = if p == Player::Alice { a } else { b };
                            prev_pair[p.index()][j] = match s.infoset(p) {
                                Some(x) => Some((x, act)),
                                None => prev_pair[p.index()][i],
                            };
                        }
                    }
                }
            }
        }
        let mut trees = Vec::with_capacity(2);
        for p in [Player::Alice, Player::Bob] {
            let count = spec.infosets(p);
            // Offsets in infoset-id order; parents referenced by sequence.
            let mut offsets = vec![0; count];
            let mut next = 0;
            for x in 0..count {
                offsets[x] = next;
                next += info_actions[p.index()][x];
            }
            let mut list = Vec::with_capacity(count);
            for x in 0..count {
                let parent = info_parent[p.index()][x]
                    .expect("validated infoset is used")
                    .map(|(px, pa)| offsets[px] + pa);
                list.push((info_actions[p.index()][x], parent));
            }
            trees.push(PlayerTree::from_parents(&list)?);
            let tree = trees.last().expect("just pushed");
            for i in 0..n {
                prev_seq[p.index()][i] = prev_pair[p.index()][i].map(|(x, a)| tree.offset[x] + a);
            }
        }
        let bob_tree = trees.pop().expect("two trees");
        let alice_tree = trees.pop().expect("two trees");
        Ok(Self {
            spec,
            trees: [alice_tree, bob_tree],
            chance_reach,
            prev_seq,
            order,
        })
    }

    pub fn spec(&self) -> &EfgSpec {
        &self.spec
    }

    pub fn tree(&self, p: Player) -> &PlayerTree {
        &self.trees[p.index()]
    }

    pub fn chance_reach(&self, state: usize) -> f64 {
        self.chance_reach[state]
    }

    /// The player's sequence after acting `action` at `state`, or its latest
    /// earlier sequence when it does not act there.
    pub fn sequence_at(&self, p: Player, state: usize, action: usize) -> Option<usize> {
        match self.spec.states[state].infoset(p) {
            Some(x) => Some(self.trees[p.index()].offset[x] + action),
            None => self.prev_seq[p.index()][state],
        }
    }

    pub fn prev_sequence(&self, p: Player, state: usize) -> Option<usize> {
        self.prev_seq[p.index()][state]
    }

    pub fn states_in_order(&self) -> &[usize] {
        &self.order
    }

    fn weight(w: &[f64], seq: Option<usize>) -> f64 {
        seq.map_or(1.0, |s| w[s])
    }

    /// Sums `f(u, terminal)` over outcomes weighted by chance and the opponent,
    /// attributed to `p`'s sequences (`root` collects costs before `p` acts).
    fn attributed_costs(&self, p: Player, opponent: &[f64], f: impl Fn(f64, bool) -> f64) -> (Vec<f64>, f64) {
        let q = p.other();
        let mut c = vec![0.0; self.trees[p.index()].num_sequences];
        let mut root = 0.0;
        for (i, s) in self.spec.states.iter().enumerate() {
            let reach = self.chance_reach[i];
            for a in 0..s.alice_actions {
                for b in 0..s.bob_actions {
                    let (mine, theirs) = if p == Player::Alice { (a, b) } else { (b, a) };
                    let o = s.outcome(a, b);
                    let v = f(o.cost, o.is_terminal());
                    if v == 0.0 {
                        continue;
                    }
                    let wq = Self::weight(opponent, self.sequence_at(q, i, theirs));
                    let term = reach * wq * v;
                    match self.sequence_at(p, i, mine) {
                        Some(seq) => c[seq] += term,
                        None => root += term,
                    }
                }
            }
        }
        (c, root)
    }

    /// Exact raw value `V(μ, ν)` for Alice.
    pub fn expected_value(&self, mu: &TreeplexStrategy, nu: &TreeplexStrategy) -> f64 {
        let (c, root) = self.attributed_costs(Player::Alice, nu.weights(), |u, _| u);
        mu.dot(&c) + root
    }
}

/// Learner-unit cost of a raw Alice cost for player `p`.
pub fn learner_cost(p: Player, raw: f64, terminal: bool) -> f64 {
    (p.sign() * raw + if terminal { 1.0 } else { 0.0 }) / 2.0
}

/// Learner-unit cost vector faced by `p` against a fixed opponent, plus the
/// part of the cost incurred before `p`'s first decision.
#[derive(Debug, Clone, PartialEq)]
pub struct EfgCostVector {
    pub costs: Vec<f64>,
    pub root: f64,
}

impl EfgCostVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            costs: vec![0.0; n],
            root: 0.0,
        }
    }

    pub fn value(&self, mu: &TreeplexStrategy) -> f64 {
        mu.dot(&self.costs) + self.root
    }
}

pub fn cost_vector_from_opponent(game: &Game, p: Player, opponent: &TreeplexStrategy) -> EfgCostVector {
    let (costs, root) = game.attributed_costs(p, opponent.weights(), |u, t| learner_cost(p, u, t));
    EfgCostVector { costs, root }
}

/// Raw cost vector for `p` (Alice's cost, negated for Bob).
pub fn raw_cost_vector(game: &Game, p: Player, opponent: &TreeplexStrategy) -> EfgCostVector {
    let (costs, root) = game.attributed_costs(p, opponent.weights(), |u, _| p.sign() * u);
    EfgCostVector { costs, root }
}

pub fn expected_value_efg(game: &Game, mu: &TreeplexStrategy, nu: &TreeplexStrategy) -> f64 {
    game.expected_value(mu, nu)
}

/// Value and exploitability of a profile in raw units, certified by exact
/// best responses on both sides.
pub fn efg_exploitability(game: &Game, mu: &TreeplexStrategy, nu: &TreeplexStrategy) -> (f64, f64) {
    let value = game.expected_value(mu, nu);
    let alice = raw_cost_vector(game, Player::Alice, nu);
    let (alice_best, _) = best_response_value(game.tree(Player::Alice), &alice.costs);
    let bob = raw_cost_vector(game, Player::Bob, mu);
    let (bob_best, _) = best_response_value(game.tree(Player::Bob), &bob.costs);
    let bob_best_value = -(bob_best + bob.root);
    let alice_best_value = alice_best + alice.root;
    (value, (bob_best_value - value).max(value - alice_best_value).max(0.0))
}

/// One decision of a player along a sampled trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub infoset: usize,
    pub action: usize,
    pub sequence: usize,
    /// Learner-unit cost attributed to this sequence.
    pub cost: f64,
}

/// What one player observes of a sampled play.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlayerView {
    pub steps: Vec<Step>,
    pub root_cost: f64,
}

impl PlayerView {
    pub fn total_cost(&self) -> f64 {
        self.root_cost + self.steps.iter().map(|s| s.cost).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledPlay {
    pub alice: PlayerView,
    pub bob: PlayerView,
    /// Realized raw cost to Alice.
    pub raw_total: f64,
    pub states: Vec<usize>,
}

impl SampledPlay {
    pub fn view(&self, p: Player) -> &PlayerView {
        match p {
            Player::Alice => &self.alice,
            Player::Bob => &self.bob,
        }
    }
}

/// Samples one play: initial state, then per state Alice's action, Bob's
/// action, the realized cost, and the successor, in that order.
pub fn sample_trajectory(game: &Game, alice: &Policy, bob: &Policy, rng: &mut RngStream) -> SampledPlay {
    let spec = &game.spec;
    let p0: Vec<f64> = spec.p0.iter().map(|x| x.0).collect();
    let mut state = Some(spec.p0[sample_index(&p0, rng)].1);
    let mut views = [PlayerView::default(), PlayerView::default()];
    let mut raw_total = 0.0;
    let mut states = Vec::new();
    while let Some(i) = state {
        states.push(i);
        let s = &spec.states[i];
        let mut acts = [0usize; 2];
        for (p, pol) in [(Player::Alice, alice), (Player::Bob, bob)] {
            if let Some(x) = s.infoset(p) {
                let tree = game.tree(p);
                let a = sample_index(pol.row(tree, x), rng);
                acts[p.index()] = a;
                views[p.index()].steps.push(Step {
                    infoset: x,
                    action: a,
                    sequence: tree.offset[x] + a,
                    cost: 0.0,
                });
            }
        }
        let o = s.outcome(acts[0], acts[1]);
        let u = o.realize(rng);
        raw_total += u;
        for p in [Player::Alice, Player::Bob] {
            let c = learner_cost(p, u, o.is_terminal());
            let view = &mut views[p.index()];
            match view.steps.last_mut() {
                Some(step) => step.cost += c,
                None => view.root_cost += c,
            }
        }
        state = if o.next.is_empty() {
            None
        } else {
            let probs: Vec<f64> = o.next.iter().map(|x| x.0).collect();
            Some(o.next[sample_index(&probs, rng)].1)
        };
    }
    let [alice_view, bob_view] = views;
    SampledPlay {
        alice: alice_view,
        bob: bob_view,
        raw_total,
        states,
    }
}

/// Plain-text dump: one `state` line per state followed by its outcome lines.
pub fn dump_efg(spec: &EfgSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "infosets {} {}", spec.alice_infosets, spec.bob_infosets);
    let init: Vec<String> = spec.p0.iter().map(|(p, s)| format!("{p}:{s}")).collect();
    let _ = writeln!(out, "init {}", init.join(" "));
    for (i, s) in spec.states.iter().enumerate() {
        let opt = |x: Option<usize>| x.map_or("-".to_string(), |v| v.to_string());
        let _ = writeln!(
            out,
            "state {i} stage {} alice {} bob {} actions {} {}",
            s.stage,
            opt(s.alice),
            opt(s.bob),
            s.alice_actions,
            s.bob_actions
        );
        for a in 0..s.alice_actions {
            for b in 0..s.bob_actions {
                let o = s.outcome(a, b);
                let noise = match o.noise {
                    Noise::Deterministic => "det".to_string(),
                    Noise::TwoPoint { low, high } => format!("tp {low} {high}"),
                };
                let next: Vec<String> = o.next.iter().map(|(p, j)| format!("{p}:{j}")).collect();
                let _ = writeln!(
                    out,
                    "  out {a} {b} cost {} noise {noise} next {}",
                    o.cost,
                    if next.is_empty() {
                        "-".to_string()
                    } else {
                        next.join(" ")
                    }
                );
            }
        }
    }
    out
}

/// Parses the format written by [`dump_efg`].
pub fn parse_efg(text: &str) -> Result<EfgSpec> {
    let perr = |line: usize, msg: &str| Error::Parse {
        line,
        msg: msg.to_string(),
    };
    let num = |line: usize, t: Option<&str>| -> Result<f64> {
        t.ok_or_else(|| perr(line, "missing number"))?
            .parse::<f64>()
            .map_err(|e| perr(line, &e.to_string()))
    };
    let int = |line: usize, t: Option<&str>| -> Result<usize> {
        t.ok_or_else(|| perr(line, "missing integer"))?
            .parse::<usize>()
            .map_err(|e| perr(line, &e.to_string()))
    };
    let opt = |line: usize, t: Option<&str>| -> Result<Option<usize>> {
        match t {
            Some("-") => Ok(None),
            other => int(line, other).map(Some),
        }
    };
    let pairs = |line: usize, toks: &[&str]| -> Result<Vec<(f64, usize)>> {
        if toks == ["-"] {
            return Ok(Vec::new());
        }
        toks.iter()
            .map(|t| {
                let (p, s) = t.split_once(':').ok_or_else(|| perr(line, "expected p:state"))?;
                Ok((num(line, Some(p))?, int(line, Some(s))?))
            })
            .collect()
    };
    let expect = |line: usize, got: Option<&str>, want: &str| -> Result<()> {
        if got == Some(want) {
            Ok(())
        } else {
            Err(perr(line, &format!("expected `{want}`")))
        }
    };

    let mut spec = EfgSpec {
        states: Vec::new(),
        p0: Vec::new(),
        alice_infosets: 0,
        bob_infosets: 0,
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        let Some(&head) = toks.first() else { continue };
        let mut it = toks.iter().copied().skip(1);
        match head {
            "infosets" => {
                spec.alice_infosets = int(line, it.next())?;
                spec.bob_infosets = int(line, it.next())?;
            }
            "init" => spec.p0 = pairs(line, &toks[1..])?,
            "state" => {
                let id = int(line, it.next())?;
                if id != spec.states.len() {
                    return Err(perr(line, "states must be listed in order"));
                }
                expect(line, it.next(), "stage")?;
                let stage = int(line, it.next())?;
                expect(line, it.next(), "alice")?;
                let alice = opt(line, it.next())?;
                expect(line, it.next(), "bob")?;
                let bob = opt(line, it.next())?;
                expect(line, it.next(), "actions")?;
                let alice_actions = int(line, it.next())?;
                let bob_actions = int(line, it.next())?;
                spec.states.push(StateSpec {
                    stage,
                    alice,
                    bob,
                    alice_actions,
                    bob_actions,
                    outcomes: Vec::new(),
                });
            }
            "out" => {
                let state = spec
                    .states
                    .last_mut()
                    .ok_or_else(|| perr(line, "outcome before state"))?;
                let a = int(line, it.next())?;
                let b = int(line, it.next())?;
                if a * state.bob_actions + b != state.outcomes.len() {
                    return Err(perr(line, "outcomes must be listed in order"));
                }
                expect(line, it.next(), "cost")?;
                let cost = num(line, it.next())?;
                expect(line, it.next(), "noise")?;
                let noise = match it.next() {
                    Some("det") => Noise::Deterministic,
                    Some("tp") => Noise::TwoPoint {
                        low: num(line, it.next())?,
                        high: num(line, it.next())?,
                    },
                    _ => return Err(perr(line, "unknown noise")),
                };
                expect(line, it.next(), "next")?;
                let rest: Vec<&str> = it.collect();
                state.outcomes.push(Outcome {
                    cost,
                    noise,
                    next: pairs(line, &rest)?,
                });
            }
            _ => return Err(perr(line, &format!("unknown record `{head}`"))),
        }
    }
    Ok(spec)
}

/// Random test games.
pub mod gen {
    use super::*;

    /// A random game in which Alice's infosets depend on her own history and
    /// Bob's actions but not on a hidden chance type that Bob observes.
    /// Alice acts at every stage up to `max_depth` and has at most
    /// `max_actions` actions per infoset.
    pub fn random_efg(rng: &mut RngStream, max_depth: usize, max_actions: usize, with_bob: bool) -> EfgSpec {
        let types = 1 + rng.below(2);
        let mut b = Builder {
            spec: EfgSpec {
                states: Vec::new(),
                p0: Vec::new(),
                alice_infosets: 0,
                bob_infosets: 0,
            },
            alice: HashMap::new(),
            bob: HashMap::new(),
            max_depth,
            max_actions,
            with_bob,
        };
        let raw: Vec<f64> = (0..types).map(|_| 0.2 + rng.uniform()).collect();
        let total: f64 = raw.iter().sum();
        let mut p0 = Vec::new();
        for (ty, w) in raw.iter().enumerate() {
            let s = b.node(rng, ty, 1, Vec::new());
            p0.push((w / total, s));
        }
        let rest: f64 = p0[1..].iter().map(|x| x.0).sum();
        p0[0].0 = 1.0 - rest;
        b.spec.p0 = p0;
        b.spec
    }

    struct Builder {
        spec: EfgSpec,
        alice: HashMap<Vec<usize>, (usize, usize)>,
        bob: HashMap<(usize, Vec<usize>), (usize, usize)>,
        max_depth: usize,
        max_actions: usize,
        with_bob: bool,
    }

    impl Builder {
        fn node(&mut self, rng: &mut RngStream, ty: usize, stage: usize, history: Vec<usize>) -> usize {
            let next_alice = self.alice.len();
            let max_actions = self.max_actions;
            let (x, na) = *self
                .alice
                .entry(history.clone())
                .or_insert_with(|| (next_alice, 2 + rng.below(max_actions.max(2) - 1)));
            let (bob, nb) = if self.with_bob {
                let next_bob = self.bob.len();
                let (y, k) = *self
                    .bob
                    .entry((ty, history.clone()))
                    .or_insert_with(|| (next_bob, 1 + rng.below(2)));
                (Some(y), k)
            } else {
                (None, 1)
            };
            self.spec.alice_infosets = self.alice.len();
            self.spec.bob_infosets = self.bob.len();
            let id = self.spec.states.len();
            self.spec.states.push(StateSpec {
                stage,
                alice: Some(x),
                bob,
                alice_actions: na,
                bob_actions: nb,
                outcomes: Vec::new(),
            });
            let mut outcomes = Vec::with_capacity(na * nb);
            for a in 0..na {
                for bb in 0..nb {
                    let deeper = stage < self.max_depth && rng.uniform() < 0.7;
                    if deeper {
                        let mut h = history.clone();
                        h.push(a);
                        h.push(bb);
                        let child = self.node(rng, ty, stage + 1, h);
                        outcomes.push(Outcome::to(vec![(1.0, child)]));
                    } else {
                        let cost = 2.0 * rng.uniform() - 1.0;
                        let noise = if rng.bernoulli(0.5) {
                            Noise::TwoPoint { low: -1.0, high: 1.0 }
                        } else {
                            Noise::Deterministic
                        };
                        outcomes.push(Outcome {
                            cost,
                            noise,
                            next: Vec::new(),
                        });
                    }
                }
            }
            self.spec.states[id].outcomes = outcomes;
            id
        }
    }

    /// A random strictly positive policy.
    pub fn random_policy(tree: &PlayerTree, rng: &mut RngStream) -> Policy {
        let mut probs = vec![0.0; tree.num_sequences];
        for x in 0..tree.num_infosets() {
            let raw: Vec<f64> = tree.sequences(x).map(|_| 0.05 + rng.uniform()).collect();
            let norm = crate::nfg::normalized(&raw);
            for (s, p) in tree.sequences(x).zip(norm) {
                probs[s] = p;
            }
        }
        Policy::from_valid(probs)
    }
}
