//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const DEFAULT_SERVER: &str = "127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "jiriaf", version, about = "Cluster client, workflow launcher and queue twin")]
pub struct Cli {
    /// Control-plane address, host:port or URL.
    #[arg(long, global = true, env = "JIRIAF_SERVER", default_value = DEFAULT_SERVER)]
    pub server: String,
    /// Output format for listings.
    #[arg(short = 'o', long = "format", global = true, value_enum, default_value_t = Output::Table)]
    pub format: Output,
    /// Workflow store file; defaults to $JIRIAF_HOME/workflows.jsonl or
    /// ~/.jiriaf/workflows.jsonl.
    #[arg(long, global = true, env = "JIRIAF_STORE")]
    pub store: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Output {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Submit the manifests in a file.
    Apply {
        #[arg(short = 'f', long = "filename")]
        file: PathBuf,
    },
    /// List objects of a kind.
    Get { kind: String },
    /// Delete one object.
    Delete { kind: String, name: String },
    /// Print a container's stdout (or stderr).
    Logs {
        pod: String,
        #[arg(short = 'c', long)]
        container: Option<String>,
        #[arg(long)]
        stderr: bool,
    },
    /// Show resource usage.
    Top { kind: String },
    /// Launch the agents described by an env-list file.
    AddWf {
        #[arg(short = 'f', long = "filename")]
        file: PathBuf,
        #[command(flatten)]
        launch: LaunchArgs,
    },
    /// List workflows.
    GetWf,
    /// Stop a workflow's agents.
    DeleteWf {
        id: String,
        /// Seconds agents get to stop before SIGKILL.
        #[arg(long, default_value_t = 15.0)]
        grace_s: f64,
    },
    /// Queue digital-twin experiments.
    Twin {
        #[command(subcommand)]
        command: TwinCommand,
    },
    /// Run a node agent configured from the environment.
    Agent,
    /// Run the control plane.
    ControlPlane(ControlPlaneArgs),
}

#[derive(Debug, Clone, Args)]
pub struct LaunchArgs {
    /// Agent executable; defaults to this binary's `agent` command.
    #[arg(long, env = "JIRIAF_AGENT_BIN")]
    pub agent_bin: Option<PathBuf>,
    /// Parent directory of the agents' work roots; agents use $HOME when
    /// unset.
    #[arg(long)]
    pub work_root: Option<PathBuf>,
    /// Seconds between agent starts.
    #[arg(long, default_value_t = 3.0)]
    pub stagger_s: f64,
}

#[derive(Debug, Subcommand)]
pub enum TwinCommand {
    /// Run the closed-loop experiment and write its CSV.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured number of steps.
        #[arg(long)]
        horizon: Option<u32>,
        /// Write to a file instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the calibration tables as CSV.
    Tables {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ControlPlaneArgs {
    #[arg(long, default_value = DEFAULT_SERVER)]
    pub listen: String,
    /// Journal and metric-store directory; state is in memory when unset.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    pub reconcile_interval_s: f64,
    #[arg(long, default_value_t = 15.0)]
    pub hpa_interval_s: f64,
    #[arg(long, default_value_t = 300)]
    pub stabilization_window_s: u64,
    #[arg(long, default_value_t = 5)]
    pub scrape_interval_s: u64,
    #[arg(long, default_value_t = 3)]
    pub heartbeat_timeout_factor: u32,
    #[arg(long, default_value_t = 300)]
    pub cpu_initialization_period_s: u64,
    #[arg(long, default_value_t = 30)]
    pub delay_of_initial_readiness_s: u64,
    #[arg(long, default_value_t = 30)]
    pub metric_window_s: u64,
}
