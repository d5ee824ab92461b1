use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use copa_core::env::EnvParams;
use copa_core::partition::LearnerKind;

#[derive(Debug, Parser)]
#[command(
    name = "copa-cert",
    version,
    about = "Certify partition-trained policy ensembles against trajectory poisoning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an offline dataset with an epsilon-greedy reference controller.
    GenData(GenDataArgs),
    /// Partition a dataset and train one subpolicy per partition.
    Train(TrainArgs),
    /// Certify every step of an aggregated rollout (or a scripted state sequence).
    CertifyActions(CertifyActionsArgs),
    /// Certified lower bounds on cumulative reward for growing poisoning sizes.
    CertifyReward(CertifyRewardArgs),
    /// Cross-check certificates against the exhaustive attack oracle.
    OracleCheck(OracleCheckArgs),
}

#[derive(Debug, Args)]
pub struct EnvArgs {
    /// Environment name (chain, gridlane).
    #[arg(long)]
    pub env: String,
    /// Number of chain states.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of gridlane lanes.
    #[arg(long)]
    pub lanes: Option<usize>,
    /// Gridlane hazard period.
    #[arg(long)]
    pub period: Option<usize>,
    /// Episode length.
    #[arg(long)]
    pub horizon: Option<usize>,
}

impl EnvArgs {
    pub fn params(&self) -> EnvParams {
        EnvParams {
            n: self.n,
            lanes: self.lanes,
            period: self.period,
            horizon: self.horizon,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub episodes: u64,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LearnerArg {
    Memorizer,
    Qtable,
}

impl From<LearnerArg> for LearnerKind {
    fn from(l: LearnerArg) -> Self {
        match l {
            LearnerArg::Memorizer => LearnerKind::Memorizer,
            LearnerArg::Qtable => LearnerKind::Qtable,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Number of partitions.
    #[arg(long)]
    pub u: usize,
    #[arg(long, value_enum, default_value_t = LearnerArg::Memorizer)]
    pub learner: LearnerArg,
    #[arg(long, default_value_t = 2)]
    pub num_actions: usize,
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    #[arg(long, default_value_t = 100)]
    pub q_iters: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON manifest of partition sizes and per-trajectory assignment.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// parl, tparl or dparl.
    #[arg(long)]
    pub protocol: String,
    /// Window size (tparl) or maximum window size (dparl).
    #[arg(long, default_value_t = 1)]
    pub window: usize,
}

#[derive(Debug, Args)]
pub struct CertifyActionsArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Environment to roll out in; not needed with --states.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub lanes: Option<usize>,
    #[arg(long)]
    pub period: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Scripted state sequence s_0,s_1,... certified instead of a rollout.
    #[arg(long, value_delimiter = ',', conflicts_with = "env")]
    pub states: Option<Vec<usize>>,
    /// Per-step CSV.
    #[arg(long)]
    pub out_steps: PathBuf,
    /// Stability-ratio histogram CSV.
    #[arg(long)]
    pub out_hist: PathBuf,
}

#[derive(Debug, Args)]
pub struct CertifyRewardArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub env: EnvArgs,
    /// Largest poisoning size to certify.
    #[arg(long)]
    pub k_max: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON dump of the explored tree.
    #[arg(long)]
    pub tree: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}
