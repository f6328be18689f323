//! Concrete environments: matrix-game fixtures, Kuhn poker with scripted
//! opponents, and lower-bound constructions.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::efg::{
    policy_to_treeplex, treeplex_to_policy, EfgSpec, Game, Noise, Outcome, Player, PlayerTree, PlayerView, Policy,
    StateSpec, TreeplexStrategy,
};
use crate::efg_algo::{solve_minmax_efg_lp, EfgEquilibrium, TreeplexLearner};
use crate::error::{Error, Result};
use crate::nfg::GameMatrix;
use crate::olm::{CostVector, RngStream, SimplexStrategy};

pub fn rock_paper_scissors() -> GameMatrix {
    GameMatrix::new(vec![vec![0.0, 1.0, -1.0], vec![-1.0, 0.0, 1.0], vec![1.0, -1.0, 0.0]]).expect("valid matrix")
}

pub fn matching_pennies() -> GameMatrix {
    GameMatrix::new(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).expect("valid matrix")
}

/// Looks up a matrix game by name.
pub fn nfg_by_name(name: &str) -> Option<GameMatrix> {
    match name {
        "rps" => Some(rock_paper_scissors()),
        "pennies" => Some(matching_pennies()),
        _ => None,
    }
}

pub const JACK: u8 = 0;
pub const QUEEN: u8 = 1;
pub const KING: u8 = 2;

/// Raw cost unit: one chip is half a unit so that totals stay in `[-1, 1]`.
pub const KUHN_CHIPS_PER_UNIT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Seat {
    First,
    Second,
}

/// Decision points. At `Open` and `FacingCheck` action 1 bets; at
/// `CheckBet` and `FacingBet` action 1 calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KuhnNode {
    Open,
    FacingCheck,
    FacingBet,
    CheckBet,
}

impl KuhnNode {
    pub fn is_betting(self) -> bool {
        matches!(self, KuhnNode::Open | KuhnNode::FacingCheck)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KuhnInfoset {
    pub seat: Seat,
    pub card: u8,
    pub node: KuhnNode,
}

impl fmt::Display for KuhnInfoset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seat = match self.seat {
            Seat::First => "first",
            Seat::Second => "second",
        };
        let card = ["J", "Q", "K"][self.card as usize];
        let node = match self.node {
            KuhnNode::Open => "open",
            KuhnNode::FacingCheck => "facing-check",
            KuhnNode::FacingBet => "facing-bet",
            KuhnNode::CheckBet => "check-bet",
        };
        write!(f, "{seat} {card} {node}")
    }
}

#[derive(Debug, Clone)]
pub struct KuhnSpec {
    pub spec: EfgSpec,
    pub symmetrized: bool,
    /// Meaning of each infoset, indexed by player then infoset id.
    pub labels: [Vec<KuhnInfoset>; 2],
}

impl KuhnSpec {
    pub fn game(&self) -> Game {
        Game::new(self.spec.clone()).expect("kuhn spec is valid")
    }

    pub fn label(&self, p: Player, x: usize) -> KuhnInfoset {
        self.labels[p.index()][x]
    }
}

struct KuhnBuilder {
    states: Vec<StateSpec>,
    ids: [HashMap<KuhnInfoset, usize>; 2],
    labels: [Vec<KuhnInfoset>; 2],
}

impl KuhnBuilder {
    fn infoset(&mut self, p: Player, label: KuhnInfoset) -> usize {
        let ids = &mut self.ids[p.index()];
        let next = ids.len();
        *ids.entry(label).or_insert_with(|| {
            self.labels[p.index()].push(label);
            next
        })
    }

    fn push(&mut self, state: StateSpec) -> usize {
        self.states.push(state);
        self.states.len() - 1
    }

    /// A state where `actor` picks between two actions with the given outcomes.
    fn decision(&mut self, stage: usize, actor: Player, x: usize, outcomes: Vec<Outcome>) -> usize {
        let (alice, bob, na, nb) = match actor {
            Player::Alice => (Some(x), None, 2, 1),
            Player::Bob => (None, Some(x), 1, 2),
        };
        self.push(StateSpec {
            stage,
            alice,
            bob,
            alice_actions: na,
            bob_actions: nb,
            outcomes,
        })
    }

    /// One deal: `first` holds `c1` and acts first, the other player holds `c2`.
    /// Returns the root state.
    fn deal(&mut self, first: Player, c1: u8, c2: u8) -> usize {
        let second = first.other();
        // Raw cost to Alice of `chips` won by the first player.
        let cost = |chips: f64| -first.sign() * chips / KUHN_CHIPS_PER_UNIT;
        let showdown = if c1 > c2 { 1.0 } else { -1.0 };
        let label = |seat, card, node| KuhnInfoset { seat, card, node };

        let x_cb = self.infoset(first, label(Seat::First, c1, KuhnNode::CheckBet));
        let cb = self.decision(
            3,
            first,
            x_cb,
            vec![Outcome::terminal(cost(-1.0)), Outcome::terminal(cost(2.0 * showdown))],
        );
        let x_fc = self.infoset(second, label(Seat::Second, c2, KuhnNode::FacingCheck));
        let fc = self.decision(
            2,
            second,
            x_fc,
            vec![Outcome::terminal(cost(showdown)), Outcome::to(vec![(1.0, cb)])],
        );
        let x_fb = self.infoset(second, label(Seat::Second, c2, KuhnNode::FacingBet));
        let fb = self.decision(
            2,
            second,
            x_fb,
            vec![Outcome::terminal(cost(1.0)), Outcome::terminal(cost(2.0 * showdown))],
        );
        let x_open = self.infoset(first, label(Seat::First, c1, KuhnNode::Open));
        self.decision(
            1,
            first,
            x_open,
            vec![Outcome::to(vec![(1.0, fc)]), Outcome::to(vec![(1.0, fb)])],
        )
    }
}

/// Three-card Kuhn poker with one-chip antes and one-chip bets. With
/// `symmetrize`, a fair coin in the initial distribution decides who acts first.
pub fn build_kuhn(symmetrize: bool) -> KuhnSpec {
    let mut b = KuhnBuilder {
        states: Vec::new(),
        ids: [HashMap::new(), HashMap::new()],
        labels: [Vec::new(), Vec::new()],
    };
    let firsts: &[Player] = if symmetrize {
        &[Player::Alice, Player::Bob]
    } else {
        &[Player::Alice]
    };
    let mut roots = Vec::new();
    for &first in firsts {
        for c1 in 0..3u8 {
            for c2 in (0..3u8).filter(|&c| c != c1) {
                roots.push(b.deal(first, c1, c2));
            }
        }
    }
    let p = 1.0 / roots.len() as f64;
    let spec = EfgSpec {
        alice_infosets: b.labels[0].len(),
        bob_infosets: b.labels[1].len(),
        states: b.states,
        p0: roots.into_iter().map(|r| (p, r)).collect(),
    };
    KuhnSpec {
        spec,
        symmetrized: symmetrize,
        labels: b.labels,
    }
}

/// Kuhn min-max equilibrium for both players, certified by best responses.
///
/// Each side comes from its sequence-form program, so it is a vertex of the
/// optimal face rather than an interior mixture.
pub fn kuhn_minmax(kuhn: &KuhnSpec, epsilon: f64) -> Result<EfgEquilibrium> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {epsilon}")));
    }
    let game = kuhn.game();
    let eq = solve_minmax_efg_lp(&game)?;
    if eq.exploitability > epsilon {
        return Err(Error::NoConvergence {
            gap: eq.exploitability,
            iterations: 0,
        });
    }
    Ok(eq)
}

/// One policy line per infoset: label and action probabilities.
pub fn format_kuhn_policy(kuhn: &KuhnSpec, p: Player, tree: &PlayerTree, policy: &Policy) -> String {
    let mut out = String::new();
    for x in 0..tree.num_infosets() {
        let row = policy.row(tree, x);
        let probs: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&format!("{} {}\n", kuhn.label(p, x), probs.join(" ")));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpponentKind {
    BluffJ,
    RaiseKQ,
    RaiseK,
    RandMinMax(f64),
    MinMax,
}

impl FromStr for OpponentKind {
    type Err = Error;

    /// `bluffj`, `raisekq`, `raisek`, `minmax`, `randminmax` (α = 0.2) or `randminmax:α`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "bluffj" => return Ok(OpponentKind::BluffJ),
            "raisekq" => return Ok(OpponentKind::RaiseKQ),
            "raisek" => return Ok(OpponentKind::RaiseK),
            "minmax" => return Ok(OpponentKind::MinMax),
            "randminmax" => return Ok(OpponentKind::RandMinMax(0.2)),
            _ => {}
        }
        if let Some(rest) = lower.strip_prefix("randminmax:") {
            let alpha: f64 = rest.parse().map_err(|_| Error::Unknown(format!("opponent `{s}`")))?;
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::InvalidParameter(format!("randminmax α = {alpha}")));
            }
            return Ok(OpponentKind::RandMinMax(alpha));
        }
        Err(Error::Unknown(format!("opponent `{s}`")))
    }
}

impl fmt::Display for OpponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpponentKind::BluffJ => write!(f, "bluffj"),
            OpponentKind::RaiseKQ => write!(f, "raisekq"),
            OpponentKind::RaiseK => write!(f, "raisek"),
            OpponentKind::RandMinMax(a) => write!(f, "randminmax:{a}"),
            OpponentKind::MinMax => write!(f, "minmax"),
        }
    }
}

/// A scripted Kuhn opponent. `RandMinMax(α)` redraws between uniform and
/// equilibrium play once per round.
#[derive(Debug, Clone)]
pub struct OpponentStrategy {
    pub kind: OpponentKind,
    base: (TreeplexStrategy, Policy),
    uniform: (TreeplexStrategy, Policy),
    uniform_now: bool,
    rng: RngStream,
}

impl OpponentStrategy {
    fn draw(&mut self) {
        if let OpponentKind::RandMinMax(alpha) = self.kind {
            self.uniform_now = alpha > 0.0 && self.rng.bernoulli(alpha);
        }
    }

    fn current(&self) -> &(TreeplexStrategy, Policy) {
        if self.uniform_now {
            &self.uniform
        } else {
            &self.base
        }
    }

    pub fn base_policy(&self) -> &Policy {
        &self.base.1
    }
}

impl TreeplexLearner for OpponentStrategy {
    fn strategy(&self) -> &TreeplexStrategy {
        &self.current().0
    }

    fn policy(&self) -> &Policy {
        &self.current().1
    }

    fn observe(&mut self, _view: &PlayerView) -> Result<()> {
        self.draw();
        Ok(())
    }
}

/// Builds an opponent for `player` from that player's equilibrium policy.
pub fn make_opponent(
    kind: OpponentKind,
    kuhn: &KuhnSpec,
    tree: &PlayerTree,
    player: Player,
    equilibrium: &Policy,
    rng: RngStream,
) -> Result<OpponentStrategy> {
    let mut probs = equilibrium.probs().to_vec();
    if probs.len() != tree.num_sequences {
        return Err(Error::Dimension {
            expected: tree.num_sequences,
            got: probs.len(),
        });
    }
    let plays_aggressive = |card: u8| match kind {
        OpponentKind::RaiseKQ => Some(card >= QUEEN),
        OpponentKind::RaiseK => Some(card == KING),
        _ => None,
    };
    for x in 0..tree.num_infosets() {
        let label = kuhn.label(player, x);
        let row = &mut probs[tree.sequences(x)];
        match kind {
            OpponentKind::BluffJ if label.card == JACK && label.node.is_betting() => {
                row.copy_from_slice(&[0.0, 1.0]);
            }
            OpponentKind::RaiseKQ | OpponentKind::RaiseK => {
                let aggressive = plays_aggressive(label.card).expect("card-conditioned kind");
                row.copy_from_slice(if aggressive { &[0.0, 1.0] } else { &[1.0, 0.0] });
            }
            _ => {}
        }
    }
    let policy = Policy::new(tree, probs)?;
    let uniform = Policy::uniform(tree);
    let mut out = OpponentStrategy {
        kind,
        base: (policy_to_treeplex(tree, &policy), policy),
        uniform: (policy_to_treeplex(tree, &uniform), uniform),
        uniform_now: false,
        rng,
    };
    out.draw();
    Ok(out)
}

/// Two-action bandit environment that makes constant comparator regret cost
/// `√T` worst-case regret.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBoundEnv {
    pub delta: f64,
    pub gamma: f64,
    /// `+1` or `-1`.
    pub sign: f64,
    pub rounds: usize,
    pub actions: usize,
}

impl LowerBoundEnv {
    /// `γ = c·δ^{-1/2}` with `c = 0.1`, capped so the parameter stays in `(0.01, 0.99)`.
    pub fn default_gamma(delta: f64, rounds: usize) -> f64 {
        (0.1 / delta.sqrt()).min(0.48 * (rounds as f64).sqrt())
    }

    pub fn new(delta: f64, gamma: Option<f64>, sign: f64, rounds: usize, actions: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta = {delta}")));
        }
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::InvalidParameter(format!("sign = {sign}")));
        }
        if rounds == 0 || actions < 2 {
            return Err(Error::InvalidParameter("need rounds ≥ 1 and actions ≥ 2".into()));
        }
        let env = Self {
            delta,
            gamma: gamma.unwrap_or_else(|| Self::default_gamma(delta, rounds)),
            sign,
            rounds,
            actions,
        };
        let p = env.bernoulli_parameter();
        if !(p > 0.0 && p < 1.0) || env.gamma < 0.0 {
            return Err(Error::InvalidParameter(format!("Bernoulli parameter {p}")));
        }
        Ok(env)
    }

    pub fn bernoulli_parameter(&self) -> f64 {
        0.5 + self.sign * self.gamma / (self.rounds as f64).sqrt()
    }

    /// Expected cost per action: `1/2` everywhere except action 1.
    pub fn means(&self) -> Vec<f64> {
        let mut m = vec![0.5; self.actions];
        m[1] = self.bernoulli_parameter();
        m
    }

    /// `(1 − δ, δ)`, padded with zeros for extra actions.
    pub fn comparator(&self) -> SimplexStrategy {
        let mut c = vec![0.0; self.actions];
        c[0] = 1.0 - self.delta;
        c[1] = self.delta;
        SimplexStrategy::new(c).expect("valid comparator")
    }

    pub fn best_action(&self) -> usize {
        if self.sign < 0.0 {
            1
        } else {
            0
        }
    }
}

pub fn lower_bound_env_round(env: &LowerBoundEnv, rng: &mut RngStream) -> Result<CostVector> {
    let p = env.bernoulli_parameter();
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("Bernoulli parameter {p}")));
    }
    let mut c = vec![0.5; env.actions];
    c[1] = if rng.bernoulli(p) { 1.0 } else { 0.0 };
    CostVector::new(c, 1.0)
}

/// Tree version of the lower bound: an `A`-ary single-player tree of depth
/// `H`, one Alice infoset per node.
#[derive(Debug, Clone)]
pub struct LowerBoundTree {
    pub spec: EfgSpec,
    /// Designated leaf `(infoset, action)`, reached by always playing action 1.
    pub designated: (usize, usize),
    pub comparator: TreeplexStrategy,
    pub tree: PlayerTree,
}

pub fn lower_bound_env_efg(env: &LowerBoundEnv, depth: usize) -> Result<LowerBoundTree> {
    let a = env.actions;
    if depth == 0 {
        return Err(Error::InvalidParameter("depth must be ≥ 1".into()));
    }
    let leaves = (a as f64).powi(depth as i32);
    if leaves > 4096.0 {
        return Err(Error::InvalidParameter(format!("{a}^{depth} leaves exceed 4096")));
    }
    if env.delta > 1.0 / leaves + 1e-15 {
        return Err(Error::InvalidParameter(format!(
            "delta {} above A^-H = {}",
            env.delta,
            1.0 / leaves
        )));
    }
    let p = env.bernoulli_parameter();
    // Raw cost u ∈ {-1, 1} realizes a learner cost (u + 1)/2 ∈ {0, 1}.
    let designated_outcome = Outcome {
        cost: 2.0 * p - 1.0,
        noise: Noise::TwoPoint { low: -1.0, high: 1.0 },
        next: Vec::new(),
    };
    let mut states: Vec<StateSpec> = Vec::new();
    let mut designated = (0, 1);
    // Node build order is breadth-first so infoset ids follow state ids.
    let mut frontier = vec![(0usize, true)];
    states.push(StateSpec {
        stage: 1,
        alice: Some(0),
        bob: None,
        alice_actions: a,
        bob_actions: 1,
        outcomes: Vec::new(),
    });
    for h in 1..=depth {
        let mut next_frontier = Vec::new();
        for &(node, on_path) in &frontier {
            let mut outcomes = Vec::with_capacity(a);
            for act in 0..a {
                if h == depth {
                    if on_path && act == 1 {
                        designated = (node, 1);
                        outcomes.push(designated_outcome.clone());
                    } else {
                        outcomes.push(Outcome::terminal(0.0));
                    }
                } else {
                    let child = states.len();
                    states.push(StateSpec {
                        stage: h + 1,
                        alice: Some(child),
                        bob: None,
                        alice_actions: a,
                        bob_actions: 1,
                        outcomes: Vec::new(),
                    });
                    outcomes.push(Outcome::to(vec![(1.0, child)]));
                    next_frontier.push((child, on_path && act == 1));
                }
            }
            states[node].outcomes = outcomes;
        }
        frontier = next_frontier;
    }
    let spec = EfgSpec {
        alice_infosets: states.len(),
        bob_infosets: 0,
        states,
        p0: vec![(1.0, 0)],
    };
    let game = Game::new(spec.clone())?;
    let tree = game.tree(Player::Alice).clone();
    let q = env.delta.powf(1.0 / depth as f64);
    let mut probs = vec![q; tree.num_sequences];
    for x in 0..tree.num_infosets() {
        probs[tree.offset[x]] = 1.0 - (a as f64 - 1.0) * q;
    }
    let policy = Policy::new(&tree, probs)?;
    let comparator = policy_to_treeplex(&tree, &policy);
    Ok(LowerBoundTree {
        spec,
        designated,
        comparator,
        tree,
    })
}

/// Policy view of a treeplex strategy, for logging.
pub fn describe_policy(kuhn: &KuhnSpec, p: Player, tree: &PlayerTree, mu: &TreeplexStrategy) -> String {
    format_kuhn_policy(kuhn, p, tree, &treeplex_to_policy(tree, mu))
}
