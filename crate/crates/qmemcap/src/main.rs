use clap::{Args, Parser, Subcommand};

use qmemcap::cli::{run, RunConfig};

/// Numerical laboratory for the classical capacity of quantum channels with
/// long-term memory.
#[derive(Parser)]
#[command(name = "qmemcap", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Holevo capacity of a single memoryless channel.
    Capacity(CommonArgs),
    /// Maximin product-state capacity of a branch mixture.
    Maximin(CommonArgs),
    /// Per-m branch-identification sweep (CSV: m, branch, exact_success,
    /// lemma_bound, f).
    Discriminate(CommonArgs),
    /// Typical-subspace sweep (CSV: n, epsilon, mass, log2_dim, bound).
    Typicality(CommonArgs),
    /// Greedy maximal-code packing at block length n.
    Pack(CommonArgs),
    /// Weak-converse report for a serialized code bundle.
    Converse(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Channel or mixture spec JSON.
    #[arg(long)]
    config: String,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<String>,
    /// Output format (json for reports, csv for sweeps).
    #[arg(long)]
    format: Option<String>,
    /// Seed for every stochastic component.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for proposal evaluation (results are identical for any
    /// value).
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Error parameter / typicality width, command-specific.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Block length or sweep limit, command-specific.
    #[arg(long)]
    n: Option<usize>,
    /// Preamble copy count or sweep limit, command-specific.
    #[arg(long)]
    m: Option<usize>,
    /// Monte-Carlo trial count where applicable.
    #[arg(long)]
    trials: Option<usize>,
    /// Identification failure target for preamble sizing.
    #[arg(long)]
    delta: Option<f64>,
    /// Code bundle to evaluate (converse).
    #[arg(long)]
    code: Option<String>,
    /// Where to write the packed code bundle (pack).
    #[arg(long)]
    code_out: Option<String>,
    /// Optimizer: objective improvement below this counts as stagnation.
    #[arg(long)]
    tol: Option<f64>,
    /// Optimizer: stagnant rounds before convergence is declared.
    #[arg(long)]
    patience: Option<u32>,
    /// Optimizer: hard cap on search rounds.
    #[arg(long)]
    max_iterations: Option<u32>,
    /// Optimizer: max ensemble support size (default d^2).
    #[arg(long)]
    support_cap: Option<usize>,
}

fn to_run_config(name: &str, args: CommonArgs) -> RunConfig {
    let mut cfg = RunConfig::new(name, &args.config);
    cfg.out = args.out;
    cfg.format = args.format.unwrap_or_default();
    cfg.seed = args.seed;
    cfg.threads = args.threads;
    cfg.epsilon = args.epsilon;
    cfg.n = args.n;
    cfg.m = args.m;
    cfg.trials = args.trials;
    cfg.delta = args.delta;
    cfg.code = args.code;
    cfg.code_out = args.code_out;
    cfg.tol = args.tol;
    cfg.patience = args.patience;
    cfg.max_iterations = args.max_iterations;
    cfg.support_cap = args.support_cap;
    cfg
}

fn main() {
    let cli = Cli::parse();
    let cfg = match cli.command {
        Command::Capacity(a) => to_run_config("capacity", a),
        Command::Maximin(a) => to_run_config("maximin", a),
        Command::Discriminate(a) => to_run_config("discriminate", a),
        Command::Typicality(a) => to_run_config("typicality", a),
        Command::Pack(a) => to_run_config("pack", a),
        Command::Converse(a) => to_run_config("converse", a),
    };
    if let Err(e) = run(&cfg) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
