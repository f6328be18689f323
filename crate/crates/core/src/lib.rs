//! Safe online learning in zero-sum games under bandit feedback: learners
//! that keep constant regret to a designated comparator while exploiting
//! weak opponents, for normal-form and extensive-form games.

pub mod efg;
pub mod efg_algo;
pub mod error;
pub mod games;
pub mod harness;
pub mod lp;
pub mod nfg;
pub mod nfg_algo;
pub mod olm;

pub use efg::{EfgSpec, Game, Player, PlayerTree, PlayerView, Policy, TreeplexStrategy};
pub use efg_algo::{EfgHyperparams, EfgOmd, EfgPhasedAggression, TreeplexLearner};
pub use error::{Error, Result};
pub use games::{build_kuhn, KuhnSpec, LowerBoundEnv, OpponentKind};
pub use harness::{run_match, MatchConfig, MatchOutput, MatchRecord};
pub use nfg::GameMatrix;
pub use nfg_algo::{ConservativeStochastic, Exp3, NfgHyperparams, PhasedAggression, SimplexLearner};
pub use olm::{CostVector, RngStream, SimplexStrategy};
