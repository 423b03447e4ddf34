use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "mpaging",
    version,
    about = "Paging experiments under Markov-chain request models",
    args_override_self = true
)]
pub struct Cli {
    /// TOML file of default flag values. Top-level keys apply to every
    /// subcommand, a `[<subcommand>]` table to that one only. Flags given on
    /// the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "MPAGING_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pairwise next-request probabilities alpha(p<q|s) of a chain.
    Alpha(AlphaArgs),
    /// Monte Carlo or exact expected misses of eviction policies.
    Simulate(SimulateArgs),
    /// Exact optimal online expected misses by dynamic programming.
    Opt(OptArgs),
    /// Cost ratios of policies against a baseline.
    Ratio(RatioArgs),
    /// Charging-scheme audits of a policy against a reference.
    Audit(AuditArgs),
    /// Closed-form costs on the three-page lower-bound instance.
    Lowerbound(LowerboundArgs),
    /// Estimate a chain from a trace and run the dominating policy on it.
    Learn(LearnArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Alpha(_) => "alpha",
            Command::Simulate(_) => "simulate",
            Command::Opt(_) => "opt",
            Command::Ratio(_) => "ratio",
            Command::Audit(_) => "audit",
            Command::Lowerbound(_) => "lowerbound",
            Command::Learn(_) => "learn",
        }
    }
}

pub const SUBCOMMANDS: [&str; 7] = [
    "alpha",
    "simulate",
    "opt",
    "ratio",
    "audit",
    "lowerbound",
    "learn",
];

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builder {
    /// Three pages, i.i.d. row [1-eps, eps1, eps-eps1].
    Lb,
    /// The lower-bound chain with eps1 = eps/2.
    Warmup,
    /// Random chain with --n pages and entries at least --floor.
    Random,
    /// i.i.d. requests with the distribution given by --row.
    Iid,
}

#[derive(Args, Debug, Clone)]
pub struct ChainArgs {
    /// Chain file: JSON with `n`, `transition`, optional `init` and `page_names`.
    #[arg(long, value_name = "FILE", conflicts_with = "builder")]
    pub chain: Option<PathBuf>,

    /// Built-in chain to use instead of a file.
    #[arg(long, value_enum)]
    pub builder: Option<Builder>,

    /// Page count of the random builder; given alone it selects that builder.
    #[arg(long)]
    pub n: Option<usize>,

    /// eps of the lb and warmup builders.
    #[arg(long)]
    pub eps: Option<f64>,

    /// eps1 of the lb builder as a fraction of eps.
    #[arg(long)]
    pub eps1_frac: Option<f64>,

    /// Smallest transition probability of the random builder.
    #[arg(long, default_value_t = 0.01)]
    pub floor: f64,

    /// Seed of the random builder; defaults to --seed.
    #[arg(long)]
    pub chain_seed: Option<u64>,

    /// Request distribution of the iid builder, comma separated.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub row: Vec<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct CacheArgs {
    /// Cache size.
    #[arg(long)]
    pub k: Option<usize>,

    /// Horizon (number of requests); accepts forms like 1e4.
    #[arg(long = "T", value_parser = parse_count)]
    pub horizon: Option<u64>,

    /// Initial cache pages, comma separated; defaults to 0..k.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub init_cache: Vec<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct OutArgs {
    /// Write the CSV here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AlphaArgs {
    #[command(flatten)]
    pub chain: ChainArgs,

    /// Seed for the random builder.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Also save the table as JSON for reuse.
    #[arg(long, value_name = "FILE")]
    pub save_table: Option<PathBuf>,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub chain: ChainArgs,

    #[command(flatten)]
    pub cache: CacheArgs,

    /// Policies, comma separated: dominating, dominating-adversarial:<page>,
    /// median, fif, lru, fifo, random, opt-dp, pinned:<page>.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "dominating")]
    pub policies: Vec<String>,

    /// Monte Carlo trials.
    #[arg(long, default_value_t = 1000, value_parser = parse_count_usize)]
    pub trials: usize,

    /// Required.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Evolve the exact state distribution instead of sampling. Only for
    /// policies whose evictions depend on the cache and request alone.
    #[arg(long)]
    pub exact: bool,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct OptArgs {
    #[command(flatten)]
    pub chain: ChainArgs,

    #[command(flatten)]
    pub cache: CacheArgs,

    /// Seed for the random builder.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Largest n * C(n,k) * T the DP may visit.
    #[arg(long, value_parser = parse_count)]
    pub budget: Option<u64>,

    /// Save the action table (binary) for later replay.
    #[arg(long, value_name = "FILE")]
    pub dump: Option<PathBuf>,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct RatioArgs {
    #[command(flatten)]
    pub chain: ChainArgs,

    #[command(flatten)]
    pub cache: CacheArgs,

    /// Policies, comma separated (see `simulate --help`).
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "dominating")]
    pub policies: Vec<String>,

    /// opt-dp for the exact optimum, or any policy name.
    #[arg(long, default_value = "opt-dp")]
    pub baseline: String,

    #[arg(long, default_value_t = 1000, value_parser = parse_count_usize)]
    pub trials: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeArg {
    Original,
    Updated,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultArg {
    /// Never clear charges; the ledger invariants must catch it.
    SkipClearing,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[command(flatten)]
    pub chain: ChainArgs,

    #[command(flatten)]
    pub cache: CacheArgs,

    #[arg(long, value_enum, default_value = "updated")]
    pub scheme: SchemeArg,

    /// Audited runs, each on its own sampled sequence.
    #[arg(long, default_value_t = 100, value_parser = parse_count_usize)]
    pub trials: usize,

    /// Required.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Sequences run to T times this to resolve late charges.
    #[arg(long, default_value_t = 10)]
    pub ext_mult: usize,

    /// The audited algorithm.
    #[arg(long, default_value = "dominating")]
    pub policy: String,

    /// The reference it is charged against.
    #[arg(long, default_value = "opt-dp")]
    pub reference: String,

    /// Write the per-step trace of one run here.
    #[arg(long, value_name = "FILE")]
    pub trace_out: Option<PathBuf>,

    /// Run whose trace --trace-out writes.
    #[arg(long, default_value_t = 0)]
    pub trace_run: usize,

    /// Treat a negative potential as a failed check.
    #[arg(long)]
    pub strict_potential: bool,

    /// Deliberately break the ledger, to exercise the failure path.
    #[arg(long, value_enum)]
    pub inject_fault: Option<FaultArg>,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct LowerboundArgs {
    /// eps values, comma separated.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, required = true)]
    pub eps: Vec<f64>,

    /// eps1 / eps values, comma separated; each must lie in (1/2, 1).
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub eps1_frac: Vec<f64>,

    /// Horizons, comma separated; accepts forms like 1e8.
    #[arg(long = "T", value_delimiter = ',', action = ArgAction::Set, value_parser = parse_count)]
    pub horizons: Vec<u64>,

    /// Equal-split instance (eps1 = eps/2); without --T, reports the limit.
    #[arg(long)]
    pub warmup: bool,

    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct LearnArgs {
    /// The true chain; needed to sample traces and to measure errors.
    #[command(flatten)]
    pub chain: ChainArgs,

    #[command(flatten)]
    pub cache: CacheArgs,

    /// Trace file of newline-separated page indices, instead of sampling.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,

    /// Trace lengths to sample from the true chain, comma separated.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, value_parser = parse_count)]
    pub samples: Vec<u64>,

    /// Pseudo-count added to every transition.
    #[arg(long, default_value_t = 1.0)]
    pub smoothing: f64,

    /// Assumed ||M_hat - M||_inf when the true chain is not given.
    #[arg(long)]
    pub delta_inf: Option<f64>,

    /// Trials for the measured ratio against the exact optimum.
    #[arg(long, default_value_t = 1000, value_parser = parse_count_usize)]
    pub trials: usize,

    /// Required.
    #[arg(long)]
    pub seed: Option<u64>,

    #[command(flatten)]
    pub out: OutArgs,
}

/// Non-negative integer, also written as `1e8` or `1_000`.
pub fn parse_count(s: &str) -> Result<u64, String> {
    let clean = s.trim().replace('_', "");
    if let Ok(v) = clean.parse::<u64>() {
        return Ok(v);
    }
    match clean.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 => Ok(v as u64),
        _ => Err(format!("`{s}` is not a non-negative integer")),
    }
}

fn parse_count_usize(s: &str) -> Result<usize, String> {
    parse_count(s).map(|v| v as usize)
}
