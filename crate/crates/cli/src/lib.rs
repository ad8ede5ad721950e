//! Pipeline driver behind the `opcrecipe` binary.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod rundir;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, Variant};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "opcrecipe", version, about = "OPC recipe search with RL and decision-tree summaries")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; defaults to the run's saved config, then built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// opc | opc+rl | opc+llm
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    #[arg(long, global = true)]
    pub clips: Option<usize>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// deterministic | remote | remote-with-fallback
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Record wall-clock runtimes in metrics.
    #[arg(long, global = true)]
    pub record_runtime: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic clip suite.
    Gen(#[command(flatten)] Common),
    /// Import layout files or directories of *.clip files.
    Ingest {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Baseline OPC and metrics.
    Opc(#[command(flatten)] Common),
    /// Train the placement policy and record its movements.
    RlTrain(#[command(flatten)] Common),
    /// Build the feature pool and label every point.
    Annotate(#[command(flatten)] Common),
    /// Train decision trees, reports and importances.
    Tree(#[command(flatten)] Common),
    /// Emit JSONL rules and the downstream recipe script.
    Emit(#[command(flatten)] Common),
    /// OPC with the recipe applied.
    Apply {
        /// Rule file to use instead of the run's recipes/rules.jsonl.
        #[arg(long)]
        recipe: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Ratio table over the variants with metrics.
    Report(#[command(flatten)] Common),
    /// SVG overlays for the selected variant.
    Svg(#[command(flatten)] Common),
    /// Every stage of the selected variant in one run directory.
    RunAll {
        /// Layout files to ingest instead of generating the suite.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen(c)
            | Command::Opc(c)
            | Command::RlTrain(c)
            | Command::Annotate(c)
            | Command::Tree(c)
            | Command::Emit(c)
            | Command::Report(c)
            | Command::Svg(c) => c,
            Command::Ingest { common, .. } | Command::Apply { common, .. } | Command::RunAll { common, .. } => common,
        }
    }
}

/// Config file, else the run's saved config, else defaults; flags applied last.
pub fn resolve_config(common: &Common, run: Option<&Path>) -> Result<RunConfig, CliError> {
    let from_file = |p: &Path| -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(vec![format!("{}: {e}", p.display())]))
    };
    let mut cfg = match (&common.config, run.map(|r| r.join(rundir::CONFIG))) {
        (Some(p), _) => from_file(p)?,
        (None, Some(saved)) if saved.exists() => from_file(&saved)?,
        _ => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(v) = common.variant {
        cfg.variant = v;
    }
    if let Some(n) = common.clips {
        cfg.clips = n;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(m) = &common.mode {
        cfg.annotator.mode = serde_json::from_value(serde_json::Value::String(m.clone()))
            .map_err(|_| CliError::Usage(format!("unknown mode `{m}` (deterministic, remote, remote-with-fallback)")))?;
    }
    if common.record_runtime {
        cfg.record_runtime = true;
    }
    Ok(cfg)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: &Command) -> Result<(), CliError> {
    let common = cmd.common();
    let creates = matches!(cmd, Command::Gen(_) | Command::Ingest { .. } | Command::RunAll { .. });
    let out = match (&common.out, creates) {
        (Some(o), _) => o.clone(),
        (None, true) => pipeline::fresh_run_dir(&resolve_config(common, None)?),
        (None, false) => return Err(CliError::Usage("--out <run dir> is required".into())),
    };
    let cfg = resolve_config(common, if creates { None } else { Some(&out) })?;
    let out = out.as_path();
    match cmd {
        Command::Gen(_) => {
            pipeline::gen(&cfg, out)?;
        }
        Command::Ingest { inputs, .. } => {
            pipeline::ingest(&cfg, out, inputs)?;
        }
        Command::Opc(_) => {
            pipeline::opc(&cfg, out)?;
        }
        Command::RlTrain(_) => {
            pipeline::rl_train(&cfg, out)?;
        }
        Command::Annotate(_) => {
            pipeline::annotate(&cfg, out)?;
        }
        Command::Tree(_) => {
            let (_, s) = pipeline::tree(&cfg, out)?;
            for k in &s.kinds {
                println!(
                    "{}: depth {}, {} leaves, held-out accuracy {:.3}, macro precision {:.3}",
                    k.kind.as_str(),
                    k.depth,
                    k.leaves,
                    k.test.accuracy,
                    k.test.macro_precision
                );
            }
        }
        Command::Emit(_) => {
            let (_, rules) = pipeline::emit(&cfg, out)?;
            println!("{} rules", rules.len());
        }
        Command::Apply { recipe, .. } => {
            pipeline::apply(&cfg, out, recipe.as_deref())?;
        }
        Command::Report(_) => {
            let (_, t) = pipeline::report(&cfg, out)?;
            print!("{}", t.to_text());
        }
        Command::Svg(_) => {
            pipeline::svg(&cfg, out, cfg.variant)?;
        }
        Command::RunAll { inputs, .. } => {
            pipeline::run_all(&cfg, out, inputs)?;
            print!("{}", std::fs::read_to_string(out.join(rundir::REPORT))?);
        }
    }
    println!("{}", out.display());
    Ok(())
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
}
