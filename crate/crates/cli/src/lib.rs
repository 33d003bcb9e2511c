//! `sloppy-lab`: experiment subcommands over `sloppy-core`.
//!
//! Exit codes: 0 success, 2 usage, 3 input format or filesystem, 4
//! numeric failure.

pub mod commands;
pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(sloppy_core::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Core(sloppy_core::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
    }

    pub fn exit_code(&self) -> i32 {
        use sloppy_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(E::Input(_) | E::Size(_)) => 2,
            CliError::Core(E::Format { .. } | E::Io(_)) => 3,
            CliError::Core(E::Numeric(_) | E::Domain(_)) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<sloppy_core::Error> for CliError {
    fn from(e: sloppy_core::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "sloppy-lab", version, about = "Sloppy spectra and PAC-Bayes bounds for small MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat key = value config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (0 for all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Override any config key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a teacher-student dataset.
    Synth(Common),
    /// Train a student network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Follow training with spring-force retraining towards the
        /// initialization.
        #[arg(long)]
        v2: bool,
    },
    /// Eigenspectra of correlations and curvature operators.
    Spectrum(Common),
    /// Compute a PAC-Bayes bound.
    Bound(Common),
    /// Fisher subspace overlaps between initialization and trained weights.
    Overlap(Common),
    /// Teacher-student sweep over input decay and student width.
    Sweep(Common),
}

fn flag_map(common: &Common) -> Result<BTreeMap<String, String>, CliError> {
    let mut m = BTreeMap::new();
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        m.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(s) = common.seed {
        m.insert("seed".into(), s.to_string());
    }
    if let Some(o) = &common.out {
        m.insert("out_dir".into(), o.display().to_string());
    }
    if let Some(t) = common.threads {
        m.insert("threads".into(), t.to_string());
    }
    Ok(m)
}

fn resolve(name: &str, common: &Common, extra: &[(&str, &str)]) -> Result<RunConfig, CliError> {
    let file = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            config::parse_config_text(&text)?
        }
        None => BTreeMap::new(),
    };
    let mut flags = flag_map(common)?;
    for (k, v) in extra {
        flags.insert(k.to_string(), v.to_string());
    }
    let env = std::env::var(config::THREADS_ENV).ok().filter(|s| !s.is_empty());
    RunConfig::resolve(name, commands::keys(name), &file, &flags, env)
}

fn set_threads(cfg: &RunConfig) -> Result<(), CliError> {
    let n: usize = cfg.parse("threads")?;
    // A second call in one process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let (name, common, extra): (&str, Common, Vec<(&str, &str)>) = match command {
        Command::Synth(c) => ("synth", c, vec![]),
        Command::Train { common, v2 } => ("train", common, if v2 { vec![("v2", "true")] } else { vec![] }),
        Command::Spectrum(c) => ("spectrum", c, vec![]),
        Command::Bound(c) => ("bound", c, vec![]),
        Command::Overlap(c) => ("overlap", c, vec![]),
        Command::Sweep(c) => ("sweep", c, vec![]),
    };
    let cfg = resolve(name, &common, &extra)?;
    set_threads(&cfg)?;
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    cfg.write_snapshot(&out)?;
    commands::run(&cfg)
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let mut command = Cli::command();
    for name in ["synth", "train", "spectrum", "bound", "overlap", "sweep"] {
        command = command.mut_subcommand(name, |c| c.after_help(config::describe(commands::keys(name))));
    }
    let parsed = command.try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
