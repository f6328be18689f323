use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use safe_olm::efg::efg_exploitability;
use safe_olm::efg_algo::solve_minmax_efg;
use safe_olm::games::{format_kuhn_policy, nfg_by_name};
use safe_olm::harness::{
    aggregate_reps, parse_key_values, parse_records_csv, parse_regret_csv, regret_path, regret_report,
    validate_records, write_outputs,
};
use safe_olm::nfg::{nfg_exploitability, solve_minmax_nfg};
use safe_olm::{build_kuhn, run_match, MatchConfig, MatchOutput, Player};

#[derive(Parser)]
#[command(name = "safe-olm", version, about = "Safe bandit learners for zero-sum games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play repeated matches and write per-round records.
    Run(RunArgs),
    /// Compute an equilibrium and print its certificate.
    Solve(SolveArgs),
    /// Run a learner on the lower-bound environment.
    Lowerbound(LowerBoundArgs),
    /// Summarize a record file written by `run`.
    Report(ReportArgs),
}

#[derive(Args, Default)]
struct Common {
    /// Flat `key = value` file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    /// Direction of the biased arm, `+` or `-`.
    #[arg(long, allow_hyphen_values = true)]
    sign: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    #[arg(long)]
    actions: Option<String>,
    /// Use the unbalanced divergence in the final phase.
    #[arg(long)]
    unbalanced_final: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    game: Option<String>,
    #[arg(long)]
    alice: Option<String>,
    #[arg(long)]
    bob: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct LowerBoundArgs {
    /// Defaults to `phased`.
    #[arg(long)]
    alice: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SolveArgs {
    /// `rps`, `pennies`, `kuhn` or `kuhn-unsym`.
    game: String,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Iteration budget for the extensive-form solver.
    #[arg(long, default_value_t = 1_000_000)]
    budget: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Record CSV; the regret file next to it is read when present.
    csv: PathBuf,
    /// Print per-round mean and SD of the cumulative gain.
    #[arg(long)]
    aggregate: bool,
}

fn build_config(base: &[(&str, &str)], named: &[(&str, &Option<String>)], common: &Common) -> Result<MatchConfig> {
    let mut cfg = MatchConfig::default();
    for (k, v) in base {
        cfg.set(k, v)?;
    }
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (k, v) in parse_key_values(&text)? {
            cfg.set(&k, &v).with_context(|| format!("in {}", path.display()))?;
        }
    }
    let flags = [
        ("rounds", &common.rounds),
        ("reps", &common.reps),
        ("seed", &common.seed),
        ("out", &common.out),
        ("delta", &common.delta),
        ("gamma", &common.gamma),
        ("epsilon", &common.epsilon),
        ("sign", &common.sign),
        ("depth", &common.depth),
        ("actions", &common.actions),
    ];
    for (k, v) in named.iter().copied().chain(flags) {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    if common.unbalanced_final {
        cfg.unbalanced_final = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish_match(cfg: &MatchConfig) -> Result<()> {
    let output: MatchOutput = run_match(cfg)?;
    if let Some(out) = &cfg.out {
        write_outputs(out, &output).with_context(|| format!("writing {}", out.display()))?;
        println!("wrote {} and {}", out.display(), regret_path(out).display());
    }
    let gains: Vec<f64> = output.reps.iter().map(|r| -r.loss).collect();
    let (mean, se) = safe_olm::harness::mean_se(&gains);
    println!("expected gain       {mean:.6} ± {se:.6}");
    print!("{}", regret_report(&output.reps)?);
    Ok(())
}

fn solve(args: &SolveArgs) -> Result<()> {
    if let Some(game) = nfg_by_name(&args.game) {
        let eq = solve_minmax_nfg(&game, args.epsilon)?;
        let (value, gap) = nfg_exploitability(&game, &eq.alice, &eq.bob)?;
        println!("alice  {:?}", eq.alice.probs());
        println!("bob    {:?}", eq.bob.probs());
        println!("value          {value:.6}");
        println!("exploitability {gap:.3e}");
        return Ok(());
    }
    let kuhn = match args.game.as_str() {
        "kuhn" => build_kuhn(true),
        "kuhn-unsym" => build_kuhn(false),
        other => bail!("unknown game `{other}`"),
    };
    let game = kuhn.game();
    let eq = solve_minmax_efg(&game, args.epsilon, args.budget)?;
    let (value, gap) = efg_exploitability(&game, &eq.alice, &eq.bob);
    for p in [Player::Alice, Player::Bob] {
        let tree = game.tree(p);
        let mu = if p == Player::Alice { &eq.alice } else { &eq.bob };
        println!("# {p:?}");
        print!(
            "{}",
            format_kuhn_policy(&kuhn, p, tree, &safe_olm::harness::policy_of(tree, mu))
        );
    }
    println!("value          {value:.6}");
    println!("exploitability {gap:.3e}");
    println!("iterations     {}", eq.iterations);
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.csv).with_context(|| format!("reading {}", args.csv.display()))?;
    let records = parse_records_csv(&text)?;
    validate_records(&records)?;
    let rows = aggregate_reps(&records);
    if args.aggregate {
        println!("t,mean,sd,n");
        for r in &rows {
            println!("{},{},{},{}", r.t, r.mean, r.sd, r.n);
        }
    }
    if let Some(last) = rows.last() {
        println!("final t             {}", last.t);
        println!("cumulative gain     {:.6} (sd {:.6}, n {})", last.mean, last.sd, last.n);
    }
    let sidecar = regret_path(&args.csv);
    if Path::new(&sidecar).exists() {
        let text = std::fs::read_to_string(&sidecar)?;
        print!("{}", regret_report(&parse_regret_csv(&text)?)?);
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let named = [("game", &a.game), ("alice", &a.alice), ("bob", &a.bob)];
            finish_match(&build_config(&[], &named, &a.common)?)
        }
        Command::Lowerbound(a) => {
            let base = [
                ("game", "lowerbound"),
                ("alice", "phased"),
                ("bob", "env"),
                ("delta", "0.1"),
            ];
            finish_match(&build_config(&base, &[("alice", &a.alice)], &a.common)?)
        }
        Command::Solve(a) => solve(&a),
        Command::Report(a) => report(&a),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
