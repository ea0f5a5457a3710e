use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fot_core::cache::CacheTier;
use fot_core::runtime::Strategy;

#[derive(Debug, Parser)]
#[command(name = "fot", version, about = "Run, benchmark and tune dynamic reasoning schemes")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Replay,
    Http,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value = "mock")]
    pub backend: BackendKind,
    #[arg(long, global = true, default_value = "none", value_parser = parse_tier)]
    pub cache: CacheTier,
    #[arg(long, global = true, default_value = ".fot-cache")]
    pub cache_dir: PathBuf,
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub concurrency: u64,
    #[arg(long, global = true, default_value = "fifo", value_parser = parse_strategy)]
    pub strategy: Strategy,
    /// Advance a simulated clock by backend latency instead of sleeping.
    #[arg(long, global = true)]
    pub virtual_clock: bool,
    /// Exchange log: appended to by mock/http, read by replay.
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
    /// JSON {"input_per_million", "output_per_million"} in USD.
    #[arg(long, global = true)]
    pub price_table: Option<PathBuf>,
    /// Simulated latency per mock request.
    #[arg(long, global = true, default_value_t = 100)]
    pub mock_latency_ms: u64,
    /// Per-sample corruption probability of the sorting mock.
    #[arg(long, global = true)]
    pub mock_noise: Option<f64>,
    #[arg(long, global = true, default_value = "https://api.openai.com/v1")]
    pub base_url: String,
    #[arg(long, global = true, default_value = "gpt-4o")]
    pub model: String,
    #[arg(long, global = true, default_value = "FOT_API_KEY")]
    pub api_key_env: String,
}

fn parse_tier(s: &str) -> Result<CacheTier, String> {
    s.parse()
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run a scheme over a dataset.
    Run(RunArgs),
    /// Compare sequential/parallel execution across cache tiers.
    Bench(BenchArgs),
    /// Tune scheme hyperparameters from a study file.
    Optimize(OptimizeArgs),
    /// Inspect or maintain the persistent cache.
    #[command(subcommand)]
    Cache(CacheCmd),
    /// Write a graph as Graphviz DOT.
    ExportDot(ExportDotArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Workload {
    #[arg(long)]
    pub scheme: String,
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON object merged over the scheme's default hyperparameters.
    #[arg(long)]
    pub hp: Option<String>,
    /// Use only the first N instances.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub work: Workload,
    #[arg(long, default_value = "fot-out")]
    pub out: PathBuf,
    /// Also write one DOT file per instance.
    #[arg(long)]
    pub export_dot: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub work: Workload,
    #[arg(long, default_value = "fot-bench")]
    pub out: PathBuf,
    /// Comma-separated `S|P:none|process|persistent` pairs; all six by default.
    #[arg(long, value_delimiter = ',')]
    pub configs: Option<Vec<String>>,
    /// Concurrency of the parallel rows.
    #[arg(long, default_value_t = 16)]
    pub parallel: usize,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub study: PathBuf,
    #[arg(long, default_value = "fot-study")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum CacheCmd {
    Stats,
    /// Delete entries older than a duration such as `3600`, `90m`, `12h` or `7d`.
    Gc {
        #[arg(long, value_parser = parse_age)]
        older_than: u64,
    },
    /// Re-hash every entry; exits 1 if any is corrupt.
    Verify,
}

#[derive(Debug, Args)]
pub struct ExportDotArgs {
    /// A graph JSON written by `run`.
    #[arg(long, conflicts_with_all = ["scheme", "dataset"])]
    pub graph: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    pub scheme: Option<String>,
    #[arg(long, requires = "scheme")]
    pub dataset: Option<PathBuf>,
    /// Instance id; the first instance by default.
    #[arg(long)]
    pub id: Option<String>,
    /// Execute the scheme first and export the final graph.
    #[arg(long)]
    pub execute: bool,
    /// Output file; stdout by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Seconds, with an optional s/m/h/d suffix.
pub fn parse_age(s: &str) -> Result<u64, String> {
    let (num, mult) = match s.chars().last() {
        Some('s') => (&s[..s.len() - 1], 1),
        Some('m') => (&s[..s.len() - 1], 60),
        Some('h') => (&s[..s.len() - 1], 3600),
        Some('d') => (&s[..s.len() - 1], 86_400),
        _ => (s, 1),
    };
    num.parse::<u64>().map(|n| n * mult).map_err(|_| format!("invalid duration `{s}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ages() {
        assert_eq!(parse_age("90"), Ok(90));
        assert_eq!(parse_age("90m"), Ok(5400));
        assert_eq!(parse_age("2d"), Ok(172_800));
        assert!(parse_age("soon").is_err());
    }

    #[test]
    fn globals_after_subcommand() {
        let cli = Cli::try_parse_from(["fot", "cache", "stats", "--cache-dir", "x", "--seed", "3"]).unwrap();
        assert_eq!(cli.global.seed, 3);
        assert_eq!(cli.global.cache_dir, PathBuf::from("x"));
    }

    #[test]
    fn zero_concurrency_rejected() {
        assert!(Cli::try_parse_from(["fot", "--concurrency", "0", "cache", "stats"]).is_err());
    }
}
