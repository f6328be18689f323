//! Match runner with exact expected-value accounting, replication,
//! regret summaries and CSV output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::efg::{
    best_response_value, cost_vector_from_opponent, policy_to_treeplex, sample_trajectory, treeplex_to_policy,
    validate_treeplex, Game, Player, PlayerTree, Policy, TreeplexStrategy,
};
use crate::efg_algo::{
    support_restriction, EfgOmd, EfgPhasedAggression, FixedTreeplex, RestrictedLearner, TreeplexLearner,
};
use crate::error::{Error, Result};
use crate::games::{
    build_kuhn, kuhn_minmax, lower_bound_env_efg, lower_bound_env_round, make_opponent, nfg_by_name, KuhnSpec,
    LowerBoundEnv, OpponentKind,
};
use crate::nfg::GameMatrix;
use crate::nfg_algo::{
    restrict_simplex_support, ConservativeStochastic, EstimateTelemetry, Exp3, FixedSimplex, PhasedAggression,
    SimplexLearner,
};
use crate::olm::{linear_extreme_over_simplex, sample_index, validate_simplex, CostVector, RngStream, SimplexStrategy};

pub const CSV_HEADER: &str = "rep,t,realized,expected,cum_expected,phase,alpha";
pub const REGRET_HEADER: &str = "rep,t,comparator_regret,worst_case_regret,phase";

#[derive(Debug, Clone, PartialEq)]
pub enum GameId {
    /// A named matrix game (`rps`, `pennies`).
    Matrix(String),
    Kuhn {
        symmetrized: bool,
    },
    /// The lower-bound environment; depth 1 is the bandit version.
    LowerBound,
    /// Independent Bernoulli costs with the given means.
    Bernoulli(Vec<f64>),
}

impl FromStr for GameId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kuhn" => Ok(GameId::Kuhn { symmetrized: true }),
            "kuhn-unsym" => Ok(GameId::Kuhn { symmetrized: false }),
            "lowerbound" => Ok(GameId::LowerBound),
            _ if nfg_by_name(s).is_some() => Ok(GameId::Matrix(s.to_string())),
            _ => {
                let Some(rest) = s.strip_prefix("bernoulli:") else {
                    return Err(Error::Unknown(format!("game `{s}`")));
                };
                let means = rest
                    .split(',')
                    .map(|m| m.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Unknown(format!("game `{s}`")))?;
                if means.len() < 2 || means.iter().any(|m| !(0.0..=1.0).contains(m)) {
                    return Err(Error::InvalidParameter(format!("bernoulli means in `{s}`")));
                }
                Ok(GameId::Bernoulli(means))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentId {
    MinMax,
    Omd,
    Phased,
    Exp3,
    Stochastic,
}

impl FromStr for AgentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(AgentId::MinMax),
            "omd" => Ok(AgentId::Omd),
            "phased" => Ok(AgentId::Phased),
            "exp3" => Ok(AgentId::Exp3),
            "stochastic" => Ok(AgentId::Stochastic),
            _ => Err(Error::Unknown(format!("algorithm `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BobId {
    Agent(AgentId),
    Opponent(OpponentKind),
    /// A fixed pure action in a matrix game.
    Action(usize),
    /// No opponent: costs come from the environment.
    Env,
}

impl FromStr for BobId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        if let Ok(a) = lower.parse() {
            return Ok(BobId::Agent(a));
        }
        if let Ok(k) = lower.parse() {
            return Ok(BobId::Opponent(k));
        }
        match lower.as_str() {
            "env" => return Ok(BobId::Env),
            "rock" => return Ok(BobId::Action(0)),
            "paper" => return Ok(BobId::Action(1)),
            "scissors" => return Ok(BobId::Action(2)),
            _ => {}
        }
        if let Some(k) = lower.strip_prefix("action:") {
            return k
                .parse()
                .map(BobId::Action)
                .map_err(|_| Error::Unknown(format!("opponent `{s}`")));
        }
        Err(Error::Unknown(format!("opponent `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    pub game: GameId,
    pub alice: AgentId,
    pub bob: BobId,
    pub rounds: usize,
    pub reps: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Comparator margin override.
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    /// Certification tolerance for equilibria.
    pub epsilon: f64,
    /// Lower-bound sign, `-1` or `+1`.
    pub sign: f64,
    /// Lower-bound tree depth.
    pub depth: usize,
    pub actions: usize,
    /// Keep the unbalanced divergence in the last phase.
    pub unbalanced_final: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            game: GameId::Kuhn { symmetrized: true },
            alice: AgentId::Phased,
            bob: BobId::Agent(AgentId::MinMax),
            rounds: 1000,
            reps: 5,
            seed: 0,
            out: None,
            delta: None,
            gamma: None,
            epsilon: 1e-3,
            sign: -1.0,
            depth: 1,
            actions: 2,
            unbalanced_final: false,
        }
    }
}

impl MatchConfig {
    /// Applies one `key = value` setting; keys match the command-line flag names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidParameter(format!("{key} = `{value}`: {what}"));
        match key {
            "game" => self.game = value.parse()?,
            "alice" => self.alice = value.parse()?,
            "bob" => self.bob = value.parse()?,
            "rounds" => self.rounds = value.parse().map_err(|_| bad("not an integer"))?,
            "reps" => self.reps = value.parse().map_err(|_| bad("not an integer"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("not an integer"))?,
            "out" => self.out = Some(PathBuf::from(value)),
            "delta" => self.delta = Some(value.parse().map_err(|_| bad("not a number"))?),
            "gamma" => self.gamma = Some(value.parse().map_err(|_| bad("not a number"))?),
            "epsilon" => self.epsilon = value.parse().map_err(|_| bad("not a number"))?,
            "sign" => {
                self.sign = match value {
                    "-" | "-1" | "minus" => -1.0,
                    "+" | "1" | "+1" | "plus" => 1.0,
                    _ => return Err(bad("expected + or -")),
                }
            }
            "depth" => self.depth = value.parse().map_err(|_| bad("not an integer"))?,
            "actions" => self.actions = value.parse().map_err(|_| bad("not an integer"))?,
            "unbalanced-final" => self.unbalanced_final = value.parse().map_err(|_| bad("expected true or false"))?,
            _ => return Err(Error::Unknown(format!("config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.reps == 0 {
            return Err(Error::InvalidParameter("rounds and reps must be ≥ 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon = {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Parses flat `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got `{line}`"),
            });
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    pub rep: usize,
    pub t: usize,
    /// Realized raw cost to Alice.
    pub realized: f64,
    /// Exact expected raw cost `V(μ^t, ν^t)`.
    pub expected: f64,
    /// Cumulative expected Alice gain, `−Σ expected`.
    pub cum_expected: f64,
    pub phase: usize,
    pub alpha: f64,
}

/// Per-side estimator check over a rep.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimateCheck {
    /// Largest entry seen while `α < 1`, relative to `2/δ`.
    pub worst_ratio: f64,
    pub rounds_checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepSummary {
    pub rep: usize,
    pub rounds: usize,
    /// Regrets in learner units (costs in `[0, 1]`).
    pub comparator_regret: f64,
    pub worst_case_regret: f64,
    /// Final cumulative expected raw cost.
    pub loss: f64,
    pub phases: [usize; 2],
    pub max_phases: [Option<usize>; 2],
    pub estimates: [EstimateCheck; 2],
    /// `(t, comparator regret, worst-case regret, phase)` at `t = 1, 2, 4, …` and `T`.
    pub checkpoints: Vec<(usize, f64, f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchOutput {
    pub records: Vec<MatchRecord>,
    pub reps: Vec<RepSummary>,
}

fn is_checkpoint(t: usize, rounds: usize) -> bool {
    t.is_power_of_two() || t == rounds
}

fn track_estimate(check: &mut EstimateCheck, tel: Option<EstimateTelemetry>) {
    if let Some(tel) = tel {
        if tel.alpha_before < 1.0 {
            check.worst_ratio = check.worst_ratio.max(tel.max_estimate * tel.delta / 2.0);
            check.rounds_checked += 1;
        }
    }
}

fn acting(strategy: &SimplexStrategy) -> Result<()> {
    validate_simplex(strategy.probs()).map_err(|e| Error::Invariant(format!("emitted strategy: {e}")))
}

/// A simplex learner confined to a subset of actions.
struct RestrictedSimplex<L> {
    keep: Vec<usize>,
    actions: usize,
    inner: L,
    play: SimplexStrategy,
}

impl<L: SimplexLearner> RestrictedSimplex<L> {
    fn new(keep: Vec<usize>, actions: usize, inner: L) -> Self {
        let play = Self::lift(&keep, actions, inner.strategy());
        Self {
            keep,
            actions,
            inner,
            play,
        }
    }

    fn lift(keep: &[usize], actions: usize, s: &SimplexStrategy) -> SimplexStrategy {
        let mut p = vec![0.0; actions];
        for (j, &a) in keep.iter().enumerate() {
            p[a] = s.probs()[j];
        }
        SimplexStrategy::new(p).expect("lifted strategy")
    }
}

impl<L: SimplexLearner> SimplexLearner for RestrictedSimplex<L> {
    fn strategy(&self) -> &SimplexStrategy {
        &self.play
    }

    fn observe(&mut self, action: usize, cost: f64) -> Result<()> {
        let j = self
            .keep
            .iter()
            .position(|&a| a == action)
            .ok_or(Error::ActionOutOfRange {
                action,
                count: self.actions,
            })?;
        self.inner.observe(j, cost)?;
        self.play = Self::lift(&self.keep, self.actions, self.inner.strategy());
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

fn phased_simplex(comparator: &SimplexStrategy, cfg: &MatchConfig) -> Result<Box<dyn SimplexLearner>> {
    let (keep, restricted, measured) = restrict_simplex_support(comparator, 1e-12)?;
    let delta = cfg.delta.unwrap_or(measured);
    let hyper = crate::nfg_algo::NfgHyperparams::new(cfg.rounds, keep.len(), delta)?;
    let learner = PhasedAggression::new(hyper, restricted)?;
    if keep.len() == comparator.len() {
        Ok(Box::new(learner))
    } else {
        Ok(Box::new(RestrictedSimplex::new(keep, comparator.len(), learner)))
    }
}

fn simplex_agent(id: AgentId, comparator: &SimplexStrategy, cfg: &MatchConfig) -> Result<Box<dyn SimplexLearner>> {
    let a = comparator.len();
    Ok(match id {
        AgentId::MinMax => Box::new(FixedSimplex::new(comparator.clone())),
        AgentId::Omd | AgentId::Exp3 => Box::new(Exp3::tuned(a, cfg.rounds)?),
        AgentId::Phased => phased_simplex(comparator, cfg)?,
        AgentId::Stochastic => Box::new(ConservativeStochastic::new(comparator.clone(), cfg.rounds)),
    })
}

fn treeplex_agent(
    id: AgentId,
    game: &Game,
    player: Player,
    comparator: &TreeplexStrategy,
    cfg: &MatchConfig,
) -> Result<Box<dyn TreeplexLearner>> {
    let tree = game.tree(player).clone();
    Ok(match id {
        AgentId::MinMax => Box::new(FixedTreeplex::new(&tree, comparator.clone())),
        AgentId::Omd => Box::new(EfgOmd::tuned(tree, cfg.rounds)?),
        AgentId::Phased => {
            let r = support_restriction(game, player, comparator, 1e-12)?;
            let delta = cfg.delta.unwrap_or(r.delta);
            if delta > r.delta + 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "delta {delta} above the comparator margin {}",
                    r.delta
                )));
            }
            let hyper = crate::efg_algo::EfgHyperparams::new(cfg.rounds, delta, r.tree())?;
            let inner = EfgPhasedAggression::new(r.tree().clone(), r.comparator.clone(), hyper, cfg.unbalanced_final)?;
            Box::new(RestrictedLearner::new(r, tree, inner))
        }
        AgentId::Exp3 | AgentId::Stochastic => {
            return Err(Error::InvalidParameter(format!(
                "{id:?} plays only on normal-form games"
            )))
        }
    })
}

/// Equilibrium of a named symmetric matrix game: uniform play.
pub fn nfg_equilibrium(game: &GameMatrix) -> (SimplexStrategy, SimplexStrategy) {
    (
        SimplexStrategy::uniform(game.rows()),
        SimplexStrategy::uniform(game.cols()),
    )
}

enum Setup {
    Matrix {
        game: GameMatrix,
        bob_game: GameMatrix,
        comparators: (SimplexStrategy, SimplexStrategy),
    },
    Costs {
        means: Vec<f64>,
        env: Option<LowerBoundEnv>,
        comparator: SimplexStrategy,
    },
    Tree {
        game: Game,
        kuhn: Option<KuhnSpec>,
        comparators: (TreeplexStrategy, TreeplexStrategy),
    },
}

fn setup(cfg: &MatchConfig) -> Result<Setup> {
    cfg.validate()?;
    match &cfg.game {
        GameId::Matrix(name) => {
            let game = nfg_by_name(name).ok_or_else(|| Error::Unknown(format!("game `{name}`")))?;
            if let BobId::Action(a) = cfg.bob {
                if a >= game.cols() {
                    return Err(Error::ActionOutOfRange {
                        action: a,
                        count: game.cols(),
                    });
                }
            }
            if matches!(cfg.bob, BobId::Opponent(_) | BobId::Env) {
                return Err(Error::InvalidParameter(format!(
                    "opponent {:?} needs another game",
                    cfg.bob
                )));
            }
            let comparators = nfg_equilibrium(&game);
            Ok(Setup::Matrix {
                bob_game: game.transpose_negated(),
                game,
                comparators,
            })
        }
        GameId::Bernoulli(means) => {
            let delta = cfg
                .delta
                .ok_or_else(|| Error::InvalidParameter("bernoulli games need delta".into()))?;
            // Comparator (1 − δ, δ) on the first two actions.
            let mut c = vec![0.0; means.len()];
            c[0] = 1.0 - delta;
            c[1] = delta;
            Ok(Setup::Costs {
                means: means.clone(),
                env: None,
                comparator: SimplexStrategy::new(c)?,
            })
        }
        GameId::LowerBound => {
            let delta = cfg.delta.unwrap_or(0.1);
            let env = LowerBoundEnv::new(delta, cfg.gamma, cfg.sign, cfg.rounds, cfg.actions)?;
            if cfg.depth <= 1 {
                Ok(Setup::Costs {
                    means: env.means(),
                    env: Some(env),
                    comparator: env.comparator(),
                })
            } else {
                let lb = lower_bound_env_efg(&env, cfg.depth)?;
                let game = Game::new(lb.spec)?;
                Ok(Setup::Tree {
                    comparators: (lb.comparator, TreeplexStrategy::new(game.tree(Player::Bob), vec![])?),
                    game,
                    kuhn: None,
                })
            }
        }
        GameId::Kuhn { symmetrized } => {
            let kuhn = build_kuhn(*symmetrized);
            let eq = kuhn_minmax(&kuhn, cfg.epsilon)?;
            Ok(Setup::Tree {
                game: kuhn.game(),
                kuhn: Some(kuhn),
                comparators: (eq.alice, eq.bob),
            })
        }
    }
}

fn rep_streams(seed: u64, rep: usize) -> (RngStream, RngStream, RngStream) {
    let base = RngStream::new(seed ^ rep as u64);
    (base.derive(1), base.derive(2), base.derive(3))
}

fn push_record(
    records: &mut Vec<MatchRecord>,
    rep: usize,
    t: usize,
    realized: f64,
    expected: f64,
    phase: usize,
    alpha: f64,
) {
    let prev = records.last().map_or(0.0, |r| r.cum_expected);
    records.push(MatchRecord {
        rep,
        t,
        realized,
        expected,
        cum_expected: prev - expected,
        phase,
        alpha,
    });
}

fn run_simplex_rep(cfg: &MatchConfig, s: &Setup, rep: usize) -> Result<(Vec<MatchRecord>, RepSummary)> {
    let (mut rng, _opp_rng, mut env_rng) = rep_streams(cfg.seed, rep);
    let t_max = cfg.rounds;
    let mut records = Vec::with_capacity(t_max);
    let mut summary = RepSummary {
        rep,
        rounds: t_max,
        comparator_regret: 0.0,
        worst_case_regret: 0.0,
        loss: 0.0,
        phases: [0; 2],
        max_phases: [None; 2],
        estimates: Default::default(),
        checkpoints: Vec::new(),
    };
    let (comparator, actions) = match s {
        Setup::Matrix { comparators, .. } => (comparators.0.clone(), comparators.0.len()),
        Setup::Costs { comparator, .. } => (comparator.clone(), comparator.len()),
        Setup::Tree { .. } => unreachable!("tree setups use the treeplex loop"),
    };
    let mut alice = simplex_agent(cfg.alice, &comparator, cfg)?;
    let mut bob: Option<Box<dyn SimplexLearner>> = match (s, cfg.bob) {
        (Setup::Matrix { comparators, .. }, BobId::Agent(id)) => Some(simplex_agent(id, &comparators.1, cfg)?),
        (Setup::Matrix { game, .. }, BobId::Action(a)) => {
            Some(Box::new(FixedSimplex::new(SimplexStrategy::point_mass(game.cols(), a))))
        }
        (Setup::Costs { .. }, BobId::Env) | (Setup::Costs { .. }, BobId::Agent(AgentId::MinMax)) => None,
        (Setup::Costs { .. }, other) => {
            return Err(Error::InvalidParameter(format!(
                "{other:?} cannot play a cost environment"
            )))
        }
        (_, other) => return Err(Error::InvalidParameter(format!("{other:?} cannot play this game"))),
    };
    let mut cum_costs = vec![0.0; actions];
    let (mut played, mut comp) = (0.0, 0.0);
    for t in 1..=t_max {
        let mu = alice.strategy().clone();
        acting(&mu)?;
        let (truth, expected, realized, alice_cost, bob_obs) = match s {
            Setup::Matrix { game, bob_game, .. } => {
                let bob = bob.as_ref().expect("matrix games have an opponent");
                let nu = bob.strategy().clone();
                acting(&nu)?;
                let truth = game.cost_against(&nu);
                let expected = crate::nfg::expected_value_nfg(game, &mu, &nu)?;
                let a = sample_index(mu.probs(), &mut rng);
                let b = sample_index(nu.probs(), &mut rng);
                (
                    truth,
                    expected,
                    game.raw(a, b),
                    (a, game.rescaled(a, b)),
                    Some((b, bob_game.rescaled(b, a))),
                )
            }
            Setup::Costs { means, env, .. } => {
                let a = sample_index(mu.probs(), &mut rng);
                let draw = match env {
                    Some(env) => lower_bound_env_round(env, &mut env_rng)?,
                    None => CostVector::new(
                        means
                            .iter()
                            .map(|&m| f64::from(u8::from(env_rng.bernoulli(m))))
                            .collect(),
                        1.0,
                    )?,
                };
                let truth = CostVector::new(means.clone(), 1.0)?;
                let expected = mu.dot(means);
                (truth, expected, draw.costs()[a], (a, draw.costs()[a]), None)
            }
            Setup::Tree { .. } => unreachable!(),
        };
        played += mu.dot(truth.costs());
        comp += comparator.dot(truth.costs());
        for (c, v) in cum_costs.iter_mut().zip(truth.costs()) {
            *c += v;
        }
        alice.observe(alice_cost.0, alice_cost.1)?;
        track_estimate(&mut summary.estimates[0], alice.telemetry());
        if let (Some(bob), Some((b, c))) = (bob.as_mut(), bob_obs) {
            bob.observe(b, c)?;
            track_estimate(&mut summary.estimates[1], bob.telemetry());
        }
        push_record(&mut records, rep, t, realized, expected, alice.phase(), alice.alpha());
        if is_checkpoint(t, t_max) {
            let worst = played - linear_extreme_over_simplex(&cum_costs).0;
            summary.checkpoints.push((t, played - comp, worst, alice.phase()));
        }
    }
    let &(_, cr, wr, _) = summary.checkpoints.last().expect("at least one round");
    summary.comparator_regret = cr;
    summary.worst_case_regret = wr;
    summary.loss = -records.last().expect("at least one round").cum_expected;
    summary.phases = [alice.phase(), bob.as_ref().map_or(0, |b| b.phase())];
    summary.max_phases = [alice.max_phases(), bob.as_ref().and_then(|b| b.max_phases())];
    Ok((records, summary))
}

fn treeplex_bob(
    cfg: &MatchConfig,
    game: &Game,
    kuhn: Option<&KuhnSpec>,
    comparator: &TreeplexStrategy,
    rng: RngStream,
) -> Result<Box<dyn TreeplexLearner>> {
    let tree = game.tree(Player::Bob);
    match (cfg.bob, kuhn) {
        (BobId::Agent(id), _) if tree.num_sequences > 0 => treeplex_agent(id, game, Player::Bob, comparator, cfg),
        (BobId::Opponent(kind), Some(k)) => {
            let pol = treeplex_to_policy(tree, comparator);
            Ok(Box::new(make_opponent(kind, k, tree, Player::Bob, &pol, rng)?))
        }
        (BobId::Env, _) | (BobId::Agent(AgentId::MinMax), _) if tree.num_sequences == 0 => {
            Ok(Box::new(FixedTreeplex::new(tree, comparator.clone())))
        }
        (other, _) => Err(Error::InvalidParameter(format!("{other:?} cannot play this game"))),
    }
}

fn check_treeplex(tree: &PlayerTree, mu: &TreeplexStrategy) -> Result<()> {
    validate_treeplex(tree, mu.weights()).map_err(|e| Error::Invariant(format!("emitted strategy: {e}")))
}

fn run_tree_rep(cfg: &MatchConfig, s: &Setup, rep: usize) -> Result<(Vec<MatchRecord>, RepSummary)> {
    let Setup::Tree {
        game,
        kuhn,
        comparators,
    } = s
    else {
        unreachable!("simplex setups use the simplex loop")
    };
    let (mut rng, opp_rng, _) = rep_streams(cfg.seed, rep);
    let t_max = cfg.rounds;
    let mut alice = treeplex_agent(cfg.alice, game, Player::Alice, &comparators.0, cfg)?;
    let mut bob = treeplex_bob(cfg, game, kuhn.as_ref(), &comparators.1, opp_rng)?;
    let ta = game.tree(Player::Alice);
    let tb = game.tree(Player::Bob);
    let mut records = Vec::with_capacity(t_max);
    let mut summary = RepSummary {
        rep,
        rounds: t_max,
        comparator_regret: 0.0,
        worst_case_regret: 0.0,
        loss: 0.0,
        phases: [0; 2],
        max_phases: [alice.max_phases(), bob.max_phases()],
        estimates: Default::default(),
        checkpoints: Vec::new(),
    };
    let mut cum = vec![0.0; ta.num_sequences];
    let (mut played, mut comp, mut root) = (0.0, 0.0, 0.0);
    for t in 1..=t_max {
        let mu = alice.strategy();
        let nu = bob.strategy();
        check_treeplex(ta, mu)?;
        check_treeplex(tb, nu)?;
        let expected = game.expected_value(mu, nu);
        let truth = cost_vector_from_opponent(game, Player::Alice, nu);
        played += truth.value(mu);
        comp += truth.value(&comparators.0);
        root += truth.root;
        for (c, v) in cum.iter_mut().zip(&truth.costs) {
            *c += v;
        }
        let play = sample_trajectory(game, alice.policy(), bob.policy(), &mut rng);
        alice.observe(&play.alice)?;
        track_estimate(&mut summary.estimates[0], alice.telemetry());
        bob.observe(&play.bob)?;
        track_estimate(&mut summary.estimates[1], bob.telemetry());
        push_record(
            &mut records,
            rep,
            t,
            play.raw_total,
            expected,
            alice.phase(),
            alice.alpha(),
        );
        if is_checkpoint(t, t_max) {
            let worst = played - (best_response_value(ta, &cum).0 + root);
            summary.checkpoints.push((t, played - comp, worst, alice.phase()));
        }
    }
    let &(_, cr, wr, _) = summary.checkpoints.last().expect("at least one round");
    summary.comparator_regret = cr;
    summary.worst_case_regret = wr;
    summary.loss = -records.last().expect("at least one round").cum_expected;
    summary.phases = [alice.phase(), bob.phase()];
    Ok((records, summary))
}

/// Runs every rep (in parallel) and concatenates the records in rep order.
pub fn run_match(cfg: &MatchConfig) -> Result<MatchOutput> {
    let s = setup(cfg)?;
    let run = |rep: usize| match s {
        Setup::Tree { .. } => run_tree_rep(cfg, &s, rep),
        _ => run_simplex_rep(cfg, &s, rep),
    };
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(cfg.reps);
    let mut results: Vec<Option<Result<(Vec<MatchRecord>, RepSummary)>>> = (0..cfg.reps).map(|_| None).collect();
    std::thread::scope(|scope| {
        let run = &run;
        let chunks: Vec<_> = results.chunks_mut(cfg.reps.div_ceil(threads)).enumerate().collect();
        let size = cfg.reps.div_ceil(threads);
        for (c, chunk) in chunks {
            scope.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run(c * size + i));
                }
            });
        }
    });
    let mut out = MatchOutput::default();
    for r in results {
        let (records, summary) = r.expect("every rep ran")?;
        out.records.extend(records);
        out.reps.push(summary);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateRow {
    pub t: usize,
    pub mean: f64,
    /// Sample standard deviation across reps; zero for a single rep.
    pub sd: f64,
    pub n: usize,
}

/// Per-round mean and standard deviation of the cumulative gain across reps.
pub fn aggregate_reps(records: &[MatchRecord]) -> Vec<AggregateRow> {
    let t_max = records.iter().map(|r| r.t).max().unwrap_or(0);
    let mut by_t: Vec<Vec<f64>> = vec![Vec::new(); t_max + 1];
    for r in records {
        by_t[r.t].push(r.cum_expected);
    }
    by_t.into_iter()
        .enumerate()
        .skip(1)
        .filter(|(_, v)| !v.is_empty())
        .map(|(t, v)| {
            let (mean, sd) = mean_sd(&v);
            AggregateRow {
                t,
                mean,
                sd,
                n: v.len(),
            }
        })
        .collect()
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let (m, sd) = mean_sd(v);
    (m, sd / (v.len() as f64).sqrt())
}

/// Least-squares slope of `log y` against `log x`; `None` when fewer than two
/// points or any value is non-positive.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub reps: usize,
    pub comparator_regret: (f64, f64),
    pub worst_case_regret: (f64, f64),
    pub max_phase: usize,
    /// Slope of mean worst-case regret over the checkpoints with `t ≥ 16`.
    pub slope: Option<f64>,
}

/// Summarizes rep regrets as mean and standard error.
pub fn regret_report(reps: &[RepSummary]) -> Result<RegretReport> {
    if reps.is_empty() {
        return Err(Error::InvalidParameter("no reps to report".into()));
    }
    let cr: Vec<f64> = reps.iter().map(|r| r.comparator_regret).collect();
    let wr: Vec<f64> = reps.iter().map(|r| r.worst_case_regret).collect();
    let mut points = Vec::new();
    for (i, &(t, ..)) in reps[0].checkpoints.iter().enumerate() {
        if t < 16 {
            continue;
        }
        let vals: Vec<f64> = reps.iter().filter_map(|r| r.checkpoints.get(i).map(|c| c.2)).collect();
        points.push((t as f64, mean_sd(&vals).0));
    }
    Ok(RegretReport {
        reps: reps.len(),
        comparator_regret: mean_se(&cr),
        worst_case_regret: mean_se(&wr),
        max_phase: reps.iter().map(|r| r.phases[0]).max().unwrap_or(0),
        slope: loglog_slope(&points),
    })
}

impl std::fmt::Display for RegretReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "reps                {}", self.reps)?;
        writeln!(
            f,
            "comparator regret   {:.6} ± {:.6}",
            self.comparator_regret.0, self.comparator_regret.1
        )?;
        writeln!(
            f,
            "worst-case regret   {:.6} ± {:.6}",
            self.worst_case_regret.0, self.worst_case_regret.1
        )?;
        writeln!(f, "max phase           {}", self.max_phase)?;
        match self.slope {
            Some(s) => writeln!(f, "log-log slope       {s:.4}"),
            None => writeln!(f, "log-log slope       n/a"),
        }
    }
}

/// Checks that every rep starts at `t = 1`, counts up by one, and carries an
/// exact running sum of `−expected`.
pub fn validate_records(records: &[MatchRecord]) -> Result<()> {
    let mut prev: Option<&MatchRecord> = None;
    for r in records {
        let (t_expect, base) = match prev {
            Some(p) if p.rep == r.rep => (p.t + 1, p.cum_expected),
            _ => (1, 0.0),
        };
        if r.t != t_expect {
            return Err(Error::Invariant(format!("rep {} jumps to t = {}", r.rep, r.t)));
        }
        if r.cum_expected != base - r.expected {
            return Err(Error::Invariant(format!(
                "rep {} t {}: cumulative column is not a running sum",
                r.rep, r.t
            )));
        }
        prev = Some(r);
    }
    Ok(())
}

pub fn records_to_csv(records: &[MatchRecord]) -> Result<String> {
    validate_records(records)?;
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.rep, r.t, r.realized, r.expected, r.cum_expected, r.phase, r.alpha
        );
    }
    Ok(s)
}

fn field<T: FromStr>(cols: &[&str], i: usize, line: usize) -> Result<T> {
    cols.get(i)
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            line,
            msg: format!("bad column {}", i + 1),
        })
}

pub fn parse_records_csv(text: &str) -> Result<Vec<MatchRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{CSV_HEADER}`"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let n = i + 1;
        if cols.len() != 7 {
            return Err(Error::Parse {
                line: n,
                msg: format!("expected 7 columns, got {}", cols.len()),
            });
        }
        out.push(MatchRecord {
            rep: field(&cols, 0, n)?,
            t: field(&cols, 1, n)?,
            realized: field(&cols, 2, n)?,
            expected: field(&cols, 3, n)?,
            cum_expected: field(&cols, 4, n)?,
            phase: field(&cols, 5, n)?,
            alpha: field(&cols, 6, n)?,
        });
    }
    validate_records(&out)?;
    Ok(out)
}

pub fn regret_to_csv(reps: &[RepSummary]) -> String {
    let mut s = String::new();
    s.push_str(REGRET_HEADER);
    s.push('\n');
    for r in reps {
        for &(t, cr, wr, k) in &r.checkpoints {
            let _ = writeln!(s, "{},{t},{cr},{wr},{k}", r.rep);
        }
    }
    s
}

/// Rebuilds rep summaries (regrets and checkpoints only) from a regret file.
pub fn parse_regret_csv(text: &str) -> Result<Vec<RepSummary>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == REGRET_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{REGRET_HEADER}`"),
            })
        }
    }
    let mut reps: Vec<RepSummary> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let n = i + 1;
        let rep: usize = field(&cols, 0, n)?;
        let cp = (
            field(&cols, 1, n)?,
            field(&cols, 2, n)?,
            field(&cols, 3, n)?,
            field(&cols, 4, n)?,
        );
        if reps.last().is_none_or(|r| r.rep != rep) {
            reps.push(RepSummary {
                rep,
                rounds: 0,
                comparator_regret: 0.0,
                worst_case_regret: 0.0,
                loss: 0.0,
                phases: [0; 2],
                max_phases: [None; 2],
                estimates: Default::default(),
                checkpoints: Vec::new(),
            });
        }
        let r = reps.last_mut().expect("just pushed");
        r.rounds = cp.0;
        r.comparator_regret = cp.1;
        r.worst_case_regret = cp.2;
        r.phases[0] = cp.3;
        r.checkpoints.push(cp);
    }
    Ok(reps)
}

/// Path of the regret file written next to a record file.
pub fn regret_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".regret.csv");
    out.with_file_name(name)
}

/// Writes the record CSV and its regret file.
pub fn write_outputs(out: &Path, output: &MatchOutput) -> Result<()> {
    std::fs::write(out, records_to_csv(&output.records)?)?;
    std::fs::write(regret_path(out), regret_to_csv(&output.reps))?;
    Ok(())
}

/// Policy of a treeplex point, for printing equilibria.
pub fn policy_of(tree: &PlayerTree, mu: &TreeplexStrategy) -> Policy {
    treeplex_to_policy(tree, mu)
}

/// The uniform policy's treeplex point.
pub fn uniform_treeplex(tree: &PlayerTree) -> TreeplexStrategy {
    policy_to_treeplex(tree, &Policy::uniform(tree))
}
