//! Stage driver for the `dyk` command and the routing service.
//!
//! Each subcommand runs one pipeline stage against a [`config::PipelineConfig`],
//! writes its artifacts plus a `.meta.json` sidecar carrying the config
//! fingerprint, and prints a one-line JSON summary on stdout. Exit codes:
//! 0 success, 1 runtime failure, 2 missing input, 3 invalid config or data.

pub mod config;
pub mod serve;
pub mod stages;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

pub use config::PipelineConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing {artifact}: {}", path.display())]
    Missing { artifact: String, path: PathBuf },
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Missing { .. } => 2,
            CliError::Invalid(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(anyhow::anyhow!("{e}"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Pipeline config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Parse archive pages into facts.jsonl.
    Ingest(Common),
    /// Generate evaluation and training questions.
    Questions {
        #[command(flatten)]
        common: Common,
        /// Run over the out-of-scope facts instead.
        #[arg(long)]
        negatives: bool,
    },
    /// Build the training corpus.
    Corpus(Common),
    /// Partition facts into clusters.
    Cluster(Common),
    /// Emit scope-classifier training data.
    ScopeData(Common),
    /// Serve the routing endpoint until interrupted.
    RouteServe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        threshold: Option<f64>,
        /// remote, gmm or centroid.
        #[arg(long)]
        scorer: Option<String>,
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long)]
        listen: Option<String>,
    },
    /// Embed articles into the retrieval index.
    RagIndex(Common),
    /// Evaluate one system over a question file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        questions: Option<PathBuf>,
        /// static, rag, router or mock.
        #[arg(long)]
        system: Option<String>,
    },
    /// Collect per-system reports into report.json and report.md.
    Report(Common),
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Ingest(c)
            | Command::Corpus(c)
            | Command::Cluster(c)
            | Command::ScopeData(c)
            | Command::RagIndex(c)
            | Command::Report(c) => c,
            Command::Questions { common, .. }
            | Command::RouteServe { common, .. }
            | Command::Eval { common, .. } => common,
        }
    }

    pub fn stage_name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Questions { .. } => "questions",
            Command::Corpus(_) => "corpus",
            Command::Cluster(_) => "cluster",
            Command::ScopeData(_) => "scope-data",
            Command::RouteServe { .. } => "route-serve",
            Command::RagIndex(_) => "rag-index",
            Command::Eval { .. } => "eval",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dyk", version, about = "DYK knowledge-injection pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Run one stage and return its summary object.
pub fn execute(command: &Command) -> Result<Value, CliError> {
    let ctx = stages::Context::load(&command.common().config, command.common().seed)?;
    let mut summary = match command {
        Command::Ingest(_) => stages::ingest(&ctx)?,
        Command::Questions { negatives, .. } => stages::questions(&ctx, *negatives)?,
        Command::Corpus(_) => stages::corpus(&ctx)?,
        Command::Cluster(_) => stages::cluster(&ctx)?,
        Command::ScopeData(_) => stages::scope_data(&ctx)?,
        Command::RagIndex(_) => stages::rag_index(&ctx)?,
        Command::Eval { questions, system, .. } => stages::eval(&ctx, questions.as_deref(), system.as_deref())?,
        Command::Report(_) => stages::report(&ctx)?,
        Command::RouteServe {
            threshold,
            scorer,
            clusters,
            listen,
            ..
        } => {
            let opts = serve::ServeOptions {
                threshold: *threshold,
                scorer: scorer.clone(),
                clusters: clusters.clone(),
                listen: listen.clone(),
            };
            serve::run(&ctx, opts)?
        }
    };
    if let Value::Object(map) = &mut summary {
        map.insert("stage".into(), command.stage_name().into());
        map.insert("status".into(), "ok".into());
        map.insert("config_fingerprint".into(), ctx.fingerprint.clone().into());
    }
    Ok(summary)
}

/// Parse arguments, run, print the summary line and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            log::error!("{e}");
            let line = serde_json::json!({
                "stage": cli.command.stage_name(),
                "status": "error",
                "exit_code": e.exit_code(),
                "error": e.to_string(),
            });
            println!("{line}");
            e.exit_code()
        }
    }
}
