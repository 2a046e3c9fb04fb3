//! The `rpdi` command: gateway server, offline replay and sweeps, corpus
//! analytics, synthetic traces and trace validation.

pub mod commands;
pub mod error;
pub mod settings;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rpdi_core::{TailPolicy, Variant};

pub use commands::run;
pub use error::CliError;
pub use settings::{Overrides, Settings};

/// Seed used by `synth` unless `--seed` is given.
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Parser)]
#[command(name = "rpdi", version, about = "Entropy-deviation early exit for reasoning models")]
pub struct Cli {
    /// TOML settings file (defaults to $RPDI_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for sweeps and analytics (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Seed for synthetic data.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

/// Policy fields shared by every subcommand that runs the monitor.
#[derive(Debug, Clone, Default, Args)]
pub struct BaseFlags {
    /// Total token budget.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Tokens reserved for the answer when thinking exhausts the budget.
    #[arg(long)]
    pub answer_reserve: Option<u64>,
    /// standard, no-gtf, no-ltf or no-btm.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// ignore-tail or renormalize.
    #[arg(long)]
    pub tail_policy: Option<TailPolicy>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PolicyFlags {
    /// Sliding window length W in tokens.
    #[arg(long)]
    pub window: Option<usize>,
    /// Exit threshold λ.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub base: BaseFlags,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ServerFlags {
    /// Upstream base URL, e.g. http://127.0.0.1:8000/v1.
    #[arg(long)]
    pub upstream_url: Option<String>,
    /// Number of top logprobs requested per token.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Gateway listen address.
    #[arg(long)]
    pub listen: Option<String>,
    /// Set to false to relay requests unmodified.
    #[arg(long)]
    pub monitoring: Option<bool>,
}

impl BaseFlags {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            budget: self.budget,
            answer_reserve: self.answer_reserve,
            variant: self.variant,
            tail_policy: self.tail_policy,
            ..Overrides::default()
        }
    }
}

impl PolicyFlags {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            window: self.window,
            threshold: self.threshold,
            ..self.base.overrides()
        }
    }
}

impl ServerFlags {
    pub fn with(&self, o: Overrides) -> Overrides {
        Overrides {
            upstream_url: self.upstream_url.clone(),
            top_k: self.top_k,
            listen: self.listen.clone(),
            monitoring: self.monitoring,
            ..o
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the monitoring gateway in the foreground.
    Serve {
        #[command(flatten)]
        policy: PolicyFlags,
        #[command(flatten)]
        server: ServerFlags,
        /// Start even if the upstream does not answer GET /models.
        #[arg(long)]
        skip_health_check: bool,
    },
    /// Replay the policy over recorded traces and print each outcome.
    Replay {
        /// Trace file or directory of *.jsonl traces; repeatable.
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
        #[command(flatten)]
        policy: PolicyFlags,
        /// Print full JSON results instead of outcome tuples.
        #[arg(long)]
        json: bool,
        /// Write the per-step monitor series of the (single) trace as CSV.
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// Replay a grid of windows × thresholds × variants and write CSV.
    Sweep {
        /// Trace file or directory of *.jsonl traces; repeatable.
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
        /// Thresholds, comma separated.
        #[arg(long = "lambda", value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        /// Windows, comma separated.
        #[arg(long = "window", value_delimiter = ',', required = true)]
        windows: Vec<usize>,
        /// Variants, comma separated (defaults to the configured variant).
        #[arg(long = "variants", value_delimiter = ',')]
        variants: Vec<Variant>,
        #[command(flatten)]
        base: BaseFlags,
        /// Output file (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Entropy-contribution bins, top high-entropy words and a fixed-budget baseline.
    Analyze {
        /// Trace file or directory of *.jsonl traces; repeatable.
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
        /// Number of equal-count entropy bins.
        #[arg(long, default_value_t = 100)]
        bins: usize,
        /// Fraction of highest-entropy tokens whose words are counted.
        #[arg(long, default_value_t = 0.01)]
        top_fraction: f64,
        /// Number of lowest bins whose combined share is reported.
        #[arg(long, default_value_t = 60)]
        bottom: usize,
        /// Fixed thinking budgets to compare, comma separated.
        #[arg(long = "fixed-budget", value_delimiter = ',')]
        fixed_budgets: Vec<usize>,
        /// Directory for bins.csv, top_tokens.csv and fixed_budget.csv.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Generate a synthetic trace.
    Synth {
        /// flat, spike, multi-spike, natural, budget or longtail.
        #[arg(long)]
        profile: String,
        /// Number of thinking tokens (profile default if absent).
        #[arg(long)]
        length: Option<usize>,
        /// Output file (stdout if absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check trace files against the schema.
    ValidateTrace {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Serve recorded traces as an OpenAI-compatible upstream.
    MockUpstream {
        /// Trace file or directory of *.jsonl traces; repeatable.
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
        /// Listen address.
        #[arg(long, default_value = "127.0.0.1:8000")]
        bind: String,
        /// Stream tokens without logprobs.
        #[arg(long)]
        omit_logprobs: bool,
    },
    /// Print the effective settings as TOML.
    Config {
        #[command(flatten)]
        policy: PolicyFlags,
        #[command(flatten)]
        server: ServerFlags,
    },
}
