//! Fixtures shared by the benchmarks.

use safe_olm::efg::sample_trajectory;
use safe_olm::efg_algo::{support_restriction, RestrictedLearner};
use safe_olm::games::{kuhn_minmax, rock_paper_scissors};
use safe_olm::harness::policy_of;
use safe_olm::olm::sample_index;
use safe_olm::{
    build_kuhn, EfgHyperparams, EfgPhasedAggression, Game, GameMatrix, PhasedAggression, Player, Policy, RngStream,
    SimplexLearner, SimplexStrategy, TreeplexLearner,
};

/// Phased learner on rock-paper-scissors facing a uniform opponent.
pub struct MatrixFixture {
    pub game: GameMatrix,
    pub learner: PhasedAggression,
    pub rng: RngStream,
}

impl MatrixFixture {
    pub fn new(rounds: usize) -> Self {
        let learner = PhasedAggression::for_comparator(rounds, SimplexStrategy::uniform(3)).expect("valid comparator");
        Self {
            game: rock_paper_scissors(),
            learner,
            rng: RngStream::new(1),
        }
    }

    pub fn round(&mut self) {
        let a = sample_index(self.learner.strategy().probs(), &mut self.rng);
        let b = self.rng.below(3);
        self.learner
            .observe(a, self.game.rescaled(a, b))
            .expect("valid feedback");
    }
}

/// Support-restricted phased learner on symmetrized Kuhn poker against the
/// equilibrium opponent.
pub struct KuhnFixture {
    pub game: Game,
    pub learner: RestrictedLearner<EfgPhasedAggression>,
    pub opponent: Policy,
    pub rng: RngStream,
}

impl KuhnFixture {
    pub fn new(rounds: usize) -> Self {
        let kuhn = build_kuhn(true);
        let game = kuhn.game();
        let eq = kuhn_minmax(&kuhn, 1e-9).expect("Kuhn equilibrium");
        let r = support_restriction(&game, Player::Alice, &eq.alice, 1e-12).expect("restriction");
        let hyper = EfgHyperparams::new(rounds, r.delta, r.tree()).expect("hyperparameters");
        let inner = EfgPhasedAggression::new(r.tree().clone(), r.comparator.clone(), hyper, false).expect("learner");
        let learner = RestrictedLearner::new(r, game.tree(Player::Alice).clone(), inner);
        let opponent = policy_of(game.tree(Player::Bob), &eq.bob);
        Self {
            game,
            learner,
            opponent,
            rng: RngStream::new(2),
        }
    }

    pub fn round(&mut self) {
        let play = sample_trajectory(&self.game, self.learner.policy(), &self.opponent, &mut self.rng);
        self.learner.observe(&play.alice).expect("valid feedback");
    }
}
