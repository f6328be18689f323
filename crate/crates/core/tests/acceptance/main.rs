//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any of them fails.

mod oracle;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use safe_olm::efg::gen::{random_efg, random_policy};
use safe_olm::efg::{
    cost_vector_from_opponent, learner_cost, policy_to_treeplex, sample_trajectory, BalancedStrategies,
};
use safe_olm::efg_algo::{
    balanced_inverse_weights, importance_estimator_efg, path_step, solve_minmax_efg, LogPolicy, PathEntry, PathEstimate,
};
use safe_olm::harness::{loglog_slope, mean_se, RepSummary};
use safe_olm::nfg::{expected_value_nfg, solve_minmax_nfg};
use safe_olm::nfg_algo::omd_kl_step;
use safe_olm::olm::sample_index;
use safe_olm::{
    build_kuhn, games, run_match, ConservativeStochastic, CostVector, Game, GameMatrix, MatchConfig, MatchOutput,
    NfgHyperparams, Player, PlayerTree, Policy, RngStream, SimplexLearner, SimplexStrategy, TreeplexStrategy,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn config(pairs: &[(&str, &str)]) -> MatchConfig {
    let mut cfg = MatchConfig::default();
    for (k, v) in pairs {
        cfg.set(k, v).unwrap_or_else(|e| panic!("bad setting {k}={v}: {e}"));
    }
    cfg
}

fn run(pairs: &[(&str, &str)]) -> (MatchConfig, MatchOutput) {
    let cfg = config(pairs);
    let out = run_match(&cfg).unwrap_or_else(|e| panic!("match {pairs:?} failed: {e}"));
    (cfg, out)
}

fn stat(reps: &[RepSummary], f: impl Fn(&RepSummary) -> f64) -> (f64, f64) {
    mean_se(&reps.iter().map(f).collect::<Vec<_>>())
}

fn kuhn_vs(bob: &str) -> Vec<(&'static str, String)> {
    vec![
        ("game", "kuhn".into()),
        ("alice", "phased".into()),
        ("bob", bob.into()),
        ("rounds", "1000".into()),
        ("reps", "20".into()),
        ("seed", "11".into()),
    ]
}

fn run_owned(pairs: &[(&'static str, String)]) -> (MatchConfig, MatchOutput) {
    let borrowed: Vec<(&str, &str)> = pairs.iter().map(|(k, v)| (*k, v.as_str())).collect();
    run(&borrowed)
}

const KUHN_OPPONENTS: [&str; 6] = ["minmax", "omd", "bluffj", "raisekq", "raisek", "randminmax:0.2"];

fn criterion_safety_kuhn() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for bob in KUHN_OPPONENTS {
        let (_, out) = run_owned(&kuhn_vs(bob));
        let (loss, loss_se) = stat(&out.reps, |r| r.loss);
        let (cr, cr_se) = stat(&out.reps, |r| r.comparator_regret);
        let ok = loss <= 1.0 + 3.0 * loss_se && cr <= 1.0 + 3.0 * cr_se;
        pass &= ok;
        parts.push(format!("{bob}: loss {loss:.4}±{loss_se:.4} regret {cr:.4}±{cr_se:.4}"));
    }
    parts.push(format!("{:.1?}", start.elapsed()));
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn criterion_safety_rps() -> Outcome {
    let hyper = NfgHyperparams::new(10_000, 3, 1.0 / 3.0).expect("valid hyperparameters");
    let r = hyper.regret_bound;
    let envelope = 2.0 * (1.0 + r.log2().ceil()) * (2.0 * r + 2.0);
    let mut pass = true;
    let mut parts = vec![format!("R {r}, envelope {envelope:.0}")];
    for bob in ["rock", "exp3"] {
        let (_, out) = run(&[
            ("game", "rps"),
            ("alice", "phased"),
            ("bob", bob),
            ("rounds", "10000"),
            ("reps", "20"),
            ("seed", "5"),
        ]);
        let (cr, se) = stat(&out.reps, |r| r.comparator_regret);
        let worst = out
            .reps
            .iter()
            .map(|r| r.worst_case_regret)
            .fold(f64::NEG_INFINITY, f64::max);
        let ok = cr <= 1.0 + 3.0 * se && worst <= envelope;
        pass &= ok;
        parts.push(format!("{bob}: regret {cr:.2}±{se:.2}, max worst-case {worst:.1}"));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn criterion_exploits_weak_opponent() -> Outcome {
    let (_, bluff) = run_owned(&kuhn_vs("bluffj"));
    let (_, minmax) = run_owned(&kuhn_vs("minmax"));
    let (g_bluff, se_bluff) = stat(&bluff.reps, |r| -r.loss);
    let (g_mm, se_mm) = stat(&minmax.reps, |r| -r.loss);
    let mm_flat = g_mm.abs() <= 3.0 * se_mm + 1e-9;
    let pass = g_bluff > 0.0 && g_bluff >= 5.0 * g_mm.abs() && mm_flat;
    Outcome {
        pass,
        detail: format!("gain vs bluffj {g_bluff:.5}±{se_bluff:.5}, vs minmax {g_mm:.2e}±{se_mm:.2e}"),
    }
}

fn criterion_baseline_unsafe() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for bob in ["minmax", "phased"] {
        let (_, out) = run(&[
            ("game", "kuhn"),
            ("alice", "omd"),
            ("bob", bob),
            ("rounds", "1000"),
            ("reps", "5"),
            ("seed", "23"),
        ]);
        let (gain, se) = stat(&out.reps, |r| -r.loss);
        pass &= gain + 3.0 * se < 0.0;
        parts.push(format!("omd vs {bob}: gain {gain:.2}±{se:.2}"));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn lower_bound_config(rounds: usize) -> Vec<(&'static str, String)> {
    vec![
        ("game", "lowerbound".into()),
        ("alice", "phased".into()),
        ("bob", "env".into()),
        ("delta", "0.1".into()),
        ("rounds", rounds.to_string()),
        ("reps", "10".into()),
        ("seed", "3".into()),
    ]
}

fn criterion_lower_bound_rate() -> Outcome {
    let start = Instant::now();
    let mut points = Vec::new();
    let mut parts = Vec::new();
    for t in [1_000, 10_000, 100_000] {
        let (_, out) = run_owned(&lower_bound_config(t));
        let (w, se) = stat(&out.reps, |r| r.worst_case_regret);
        points.push((t as f64, w));
        parts.push(format!("T={t}: {w:.2}±{se:.2}"));
    }
    let elapsed = start.elapsed();
    let slope = loglog_slope(&points).unwrap_or(f64::NAN);
    let pass = (0.35..=0.65).contains(&slope) && elapsed < Duration::from_secs(300);
    parts.push(format!("slope {slope:.3}, {elapsed:.1?}"));
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

/// A random root-to-leaf path with random costs.
fn random_path(tree: &PlayerTree, rng: &mut RngStream) -> PathEstimate {
    let mut path = Vec::new();
    let mut x = tree.roots[rng.below(tree.roots.len())];
    loop {
        let action = rng.below(tree.num_actions[x]);
        let sequence = tree.offset[x] + action;
        path.push(PathEntry {
            infoset: x,
            action,
            sequence,
            value: 3.0 * rng.uniform(),
        });
        let kids = &tree.children[sequence];
        if kids.is_empty() {
            break;
        }
        x = kids[rng.below(kids.len())];
    }
    PathEstimate { path }
}

fn criterion_closed_form_update() -> Outcome {
    let mut rng = RngStream::new(606);
    let mut worst = 0.0f64;
    let mut instances = 0;
    while instances < 100 {
        let with_bob = rng.bernoulli(0.5);
        let spec = random_efg(&mut rng, 2, 3, with_bob);
        let game = Game::new(spec).expect("random game is valid");
        let tree = game.tree(Player::Alice);
        let prior = random_policy(tree, &mut rng);
        let est = random_path(tree, &mut rng);
        let rate = 0.05 + 1.95 * rng.uniform();
        let balanced = BalancedStrategies::new(tree);
        for inv_w in [
            vec![1.0; tree.num_infosets()],
            balanced_inverse_weights(tree, &balanced),
        ] {
            let mut pol = LogPolicy::from_policy(&prior);
            path_step(tree, &mut pol, &est, rate, Some(&inv_w)).expect("finite update");
            let closed = pol.to_treeplex(tree);
            let problem = oracle::Problem {
                tree,
                prior: prior.probs().to_vec(),
                cost: est.to_dense(tree.num_sequences),
                rate,
                weight: inv_w.iter().map(|w| 1.0 / w).collect(),
            };
            let numeric = problem.solve();
            for (a, b) in closed.weights().iter().zip(&numeric) {
                worst = worst.max((a - b).abs());
            }
        }
        instances += 1;
    }
    // Single-infoset trees against the simplex step.
    let mut flat = 0.0f64;
    for _ in 0..50 {
        let actions = 2 + rng.below(4);
        let tree = PlayerTree::from_parents(&[(actions, None)]).expect("single infoset");
        let prior = random_policy(&tree, &mut rng);
        let a = rng.below(actions);
        let value = 5.0 * rng.uniform();
        let est = PathEstimate {
            path: vec![PathEntry {
                infoset: 0,
                action: a,
                sequence: a,
                value,
            }],
        };
        let rate = 0.05 + 1.95 * rng.uniform();
        let mut pol = LogPolicy::from_policy(&prior);
        path_step(&tree, &mut pol, &est, rate, None).expect("finite update");
        let simplex = omd_kl_step(
            &SimplexStrategy::new(prior.probs().to_vec()).expect("row is a distribution"),
            &CostVector::new(est.to_dense(actions), f64::INFINITY).expect("finite costs"),
            rate,
        )
        .expect("finite update");
        for (p, q) in pol.to_policy(&tree).probs().iter().zip(simplex.probs()) {
            flat = flat.max((p - q).abs());
        }
    }
    Outcome {
        pass: worst <= 1e-6 && flat <= 1e-15,
        detail: format!("{instances} trees, max deviation {worst:.2e}; single infoset {flat:.2e}"),
    }
}

/// Alice's expected learner cost per sequence, by forward propagation of
/// chance and Bob's behavior policy.
fn propagated_costs(game: &Game, bob: &Policy) -> (Vec<f64>, f64) {
    let spec = game.spec();
    let ta = game.tree(Player::Alice);
    let tb = game.tree(Player::Bob);
    let n = spec.states.len();
    let mut reach = vec![0.0; n];
    let mut last: Vec<Option<usize>> = vec![None; n];
    for &(p, s) in &spec.p0 {
        reach[s] += p;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| spec.states[i].stage);
    let mut costs = vec![0.0; ta.num_sequences];
    let mut root = 0.0;
    for i in order {
        let st = &spec.states[i];
        for a in 0..st.alice_actions {
            let seq = match st.alice {
                Some(x) => Some(ta.offset[x] + a),
                None => last[i],
            };
            for b in 0..st.bob_actions {
                let pb = st.bob.map_or(1.0, |y| bob.probs()[tb.offset[y] + b]);
                let w = reach[i] * pb;
                let o = st.outcome(a, b);
                let c = w * learner_cost(Player::Alice, o.cost, o.is_terminal());
                match seq {
                    Some(s) => costs[s] += c,
                    None => root += c,
                }
                for &(p, j) in &o.next {
                    reach[j] += w * p;
                    last[j] = seq;
                }
            }
        }
    }
    (costs, root)
}

fn criterion_estimator_unbiased() -> Outcome {
    let kuhn = build_kuhn(true);
    let game = kuhn.game();
    let ta = game.tree(Player::Alice);
    let tb = game.tree(Player::Bob);
    let mut rng = RngStream::new(78);
    let samples = 100_000;
    let mut misses = 0;
    let mut library_gap = 0.0f64;
    let (mut z_sq, mut z_n) = (0.0, 0);
    for _ in 0..10 {
        let pa = random_policy(ta, &mut rng);
        let pb = random_policy(tb, &mut rng);
        let mu = policy_to_treeplex(ta, &pa);
        let nu = policy_to_treeplex(tb, &pb);
        let (truth, _) = propagated_costs(&game, &pb);
        let lib = cost_vector_from_opponent(&game, Player::Alice, &nu);
        for (a, b) in truth.iter().zip(&lib.costs) {
            library_gap = library_gap.max((a - b).abs());
        }
        let mut sum = vec![0.0; ta.num_sequences];
        let mut sq = vec![0.0; ta.num_sequences];
        let mut srng = rng.derive(9);
        for _ in 0..samples {
            let play = sample_trajectory(&game, &pa, &pb, &mut srng);
            let est = importance_estimator_efg(&play.alice, &mu).expect("positive reach");
            for e in &est.path {
                sum[e.sequence] += e.value;
                sq[e.sequence] += e.value * e.value;
            }
        }
        for s in 0..ta.num_sequences {
            let mean = sum[s] / samples as f64;
            let se = ((sq[s] / samples as f64 - mean * mean).max(0.0) / samples as f64).sqrt();
            if se > 0.0 {
                let z = (mean - truth[s]) / se;
                z_sq += z * z;
                z_n += 1;
            }
            if (mean - truth[s]).abs() > 3.0 * se + 1e-12 {
                misses += 1;
            }
        }
    }
    let coords = 10 * ta.num_sequences;
    Outcome {
        pass: misses == 0,
        detail: format!(
            "{misses}/{coords} coordinates outside 3 SE, mean z^2 {:.2}; library cost vector gap {library_gap:.1e}",
            z_sq / z_n.max(1) as f64
        ),
    }
}

fn criterion_runtime_invariants() -> Outcome {
    let mut configs: Vec<Vec<(&'static str, String)>> = KUHN_OPPONENTS.iter().map(|b| kuhn_vs(b)).collect();
    for bob in ["rock", "exp3"] {
        configs.push(vec![
            ("game", "rps".into()),
            ("alice", "phased".into()),
            ("bob", bob.into()),
            ("rounds", "10000".into()),
            ("reps", "20".into()),
            ("seed", "5".into()),
        ]);
    }
    for bob in ["minmax", "phased"] {
        configs.push(vec![
            ("game", "kuhn".into()),
            ("alice", "omd".into()),
            ("bob", bob.into()),
            ("rounds", "1000".into()),
            ("reps", "5".into()),
            ("seed", "23".into()),
        ]);
    }
    configs.push(lower_bound_config(10_000));
    let mut pass = true;
    let mut worst_ratio = 0.0f64;
    let mut notes = Vec::new();
    for pairs in &configs {
        let (cfg, out) = run_owned(pairs);
        for r in &out.reps {
            for side in 0..2 {
                worst_ratio = worst_ratio.max(r.estimates[side].worst_ratio);
                if let Some(k) = r.max_phases[side] {
                    if r.phases[side] > k {
                        pass = false;
                        notes.push(format!("{pairs:?}: {} phases > {k}", r.phases[side]));
                    }
                }
            }
        }
        let mut again = cfg.clone();
        again.reps = 2.min(cfg.reps);
        let replay = run_match(&again).expect("replay runs");
        let first: Vec<_> = out.records.iter().filter(|r| r.rep < again.reps).cloned().collect();
        if replay.records != first {
            pass = false;
            notes.push(format!("{pairs:?}: replay differs"));
        }
    }
    pass &= worst_ratio <= 1.0 + 1e-9;
    notes.insert(
        0,
        format!(
            "{} configs replayed, worst estimate ratio {worst_ratio:.3}",
            configs.len()
        ),
    );
    Outcome {
        pass,
        detail: notes.join("; "),
    }
}

fn criterion_stochastic_safe() -> Outcome {
    let delta = 0.2;
    let rounds = 10_000;
    let mut pass = true;
    let mut parts = Vec::new();
    for rewards in [[0.9, 0.1], [0.1, 0.9]] {
        let best = if rewards[0] > rewards[1] { 0 } else { 1 };
        let costs: Vec<f64> = rewards.iter().map(|r| 1.0 - r).collect();
        let comparator = SimplexStrategy::new(vec![1.0 - delta, delta]).expect("valid comparator");
        let comp_cost = comparator.dot(&costs);
        let mut regrets = Vec::new();
        let (mut good_reps, mut violations) = (0, 0);
        for rep in 0..20u64 {
            let mut rng = RngStream::new(900 ^ rep);
            let mut learner = ConservativeStochastic::new(comparator.clone(), rounds);
            let mut regret = 0.0;
            let mut covered = true;
            let mut local = 0;
            for _ in 0..rounds {
                let mu = learner.strategy().clone();
                regret += mu.dot(&costs) - comp_cost;
                let a = sample_index(mu.probs(), &mut rng);
                let cost = if rng.bernoulli(rewards[a]) { 0.0 } else { 1.0 };
                learner.observe(a, cost).expect("update succeeds");
                covered &= learner.state().covers(&rewards);
                if covered {
                    let next = learner.strategy().probs();
                    let gain: f64 = (0..2).map(|i| (next[i] - mu.probs()[i]) * rewards[i]).sum();
                    if gain < -1e-12 || next[best] < delta - 1e-12 {
                        local += 1;
                    }
                }
            }
            if covered {
                good_reps += 1;
                violations += local;
            }
            regrets.push(regret);
        }
        let (cr, se) = mean_se(&regrets);
        pass &= cr <= 1.0 + 3.0 * se && violations == 0;
        parts.push(format!(
            "rewards {rewards:?}: regret {cr:.1}±{se:.1}, {good_reps}/20 reps covered, {violations} monotonicity violations"
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

/// Worst pure-strategy deviation gap for a matrix profile.
fn matrix_gap(game: &GameMatrix, mu: &SimplexStrategy, nu: &SimplexStrategy) -> f64 {
    let v = expected_value_nfg(game, mu, nu).expect("matching sizes");
    let alice_best = (0..game.rows())
        .map(|a| (0..game.cols()).map(|b| nu.probs()[b] * game.raw(a, b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let bob_best = (0..game.cols())
        .map(|b| (0..game.rows()).map(|a| mu.probs()[a] * game.raw(a, b)).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    (bob_best - v).max(v - alice_best)
}

fn pure_strategies(tree: &PlayerTree) -> Vec<TreeplexStrategy> {
    let n = tree.num_infosets();
    let choices: usize = tree.num_actions.iter().product();
    (0..choices)
        .map(|mut code| {
            let mut probs = vec![0.0; tree.num_sequences];
            for x in 0..n {
                let k = tree.num_actions[x];
                probs[tree.offset[x] + code % k] = 1.0;
                code /= k;
            }
            policy_to_treeplex(tree, &Policy::new(tree, probs).expect("pure rows"))
        })
        .collect()
}

fn criterion_equilibria() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, game) in [
        ("rps", games::rock_paper_scissors()),
        ("pennies", games::matching_pennies()),
    ] {
        match solve_minmax_nfg(&game, 1e-3) {
            Ok(eq) => {
                let gap = matrix_gap(&game, &eq.alice, &eq.bob);
                pass &= gap <= 1e-3;
                parts.push(format!("{name}: gap {gap:.1e}"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    let kuhn = build_kuhn(true);
    let game = kuhn.game();
    match solve_minmax_efg(&game, 1e-3, 200_000) {
        Ok(eq) => {
            let v = game.expected_value(&eq.alice, &eq.bob);
            let best_dev_bob = pure_strategies(game.tree(Player::Bob))
                .iter()
                .map(|nu| game.expected_value(&eq.alice, nu))
                .fold(f64::NEG_INFINITY, f64::max);
            let best_dev_alice = pure_strategies(game.tree(Player::Alice))
                .iter()
                .map(|mu| game.expected_value(mu, &eq.bob))
                .fold(f64::INFINITY, f64::min);
            let gap = (best_dev_bob - v).max(v - best_dev_alice);
            pass &= gap <= 1e-3;
            parts.push(format!(
                "kuhn: value {v:.5}, gap {gap:.1e}, {} iterations",
                eq.iterations
            ));
        }
        Err(e) => {
            pass = false;
            parts.push(format!("kuhn: {e}"));
        }
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("safety against Kuhn opponents", criterion_safety_kuhn),
        ("safety and envelope on rock-paper-scissors", criterion_safety_rps),
        ("exploits a weak Kuhn opponent", criterion_exploits_weak_opponent),
        ("plain mirror descent is exploitable", criterion_baseline_unsafe),
        ("lower-bound regret grows as sqrt(T)", criterion_lower_bound_rate),
        (
            "closed-form update matches numeric minimizer",
            criterion_closed_form_update,
        ),
        ("trajectory estimator is unbiased", criterion_estimator_unbiased),
        ("runtime invariants and replay", criterion_runtime_invariants),
        ("stochastic learner stays safe", criterion_stochastic_safe),
        ("equilibrium solvers certify", criterion_equilibria),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        if !out.pass {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {verdict} ({}) [{:.1?}]",
            i + 1,
            out.detail,
            start.elapsed()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
