use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use dynlap::config::{RunConfig, KEYS};
use dynlap::pipeline::{self, artifacts, PipelineError, Stage};
use dynlap::{Error, ErrorClass};

const AFTER_HELP: &str = "\
Configuration precedence, lowest to highest:
  1. built-in defaults
  2. the --config file (flat `key = value` lines, `#` comments)
  3. environment variables DYNLAP_<KEY>, e.g. DYNLAP_SEED=4
  4. command-line flags (--set KEY=VALUE, --output-dir, --seed, --threads)

Run `dynlap keys` for the documented keys and defaults.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.";

#[derive(Parser)]
#[command(name = "dynlap", version, about = "Finite-time coherent sets from sparse trajectories", after_help = AFTER_HELP)]
struct Cli {
    /// Configuration file with `key = value` lines.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads, 0 = automatic.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage in order (generating synthetic data first if configured).
    Run,
    /// Generate a synthetic trajectory set and boundary ring.
    Synth,
    /// Bin surfacing records into monthly trajectories; load the coastline.
    Ingest,
    /// Triangulate every month.
    Mesh {
        /// Print the mesh files of this month (one-based).
        #[arg(long)]
        month: Option<usize>,
    },
    /// Assemble and time-average stiffness and mass matrices.
    Assemble,
    /// Solve for the leading eigenpairs.
    Solve,
    /// Sparsify the eigenvectors.
    Seba,
    /// Optimize thresholds and extract evolved set boundaries.
    Sets,
    /// Float counts, lifetimes and RMS speeds.
    Diag,
    /// Print the resolved configuration.
    ShowConfig,
    /// List configuration keys with defaults.
    Keys,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Validation => 2,
        ErrorClass::Numerical => 3,
        ErrorClass::Io => 4,
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, Error> {
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Validation(format!("config file {} does not exist", p.display())),
            _ => Error::Io(e),
        })?),
        None => None,
    };
    let mut overrides = BTreeMap::new();
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        overrides.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(d) = &cli.output_dir {
        overrides.insert("output_dir".into(), d.display().to_string());
    }
    if let Some(s) = cli.seed {
        overrides.insert("seed".into(), s.to_string());
    }
    if let Some(t) = cli.threads {
        overrides.insert("threads".into(), t.to_string());
    }
    RunConfig::resolve(text.as_deref(), std::env::vars(), &overrides)
}

fn stage_of(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Synth => Stage::Synth,
        Command::Ingest => Stage::Ingest,
        Command::Mesh { .. } => Stage::Mesh,
        Command::Assemble => Stage::Assemble,
        Command::Solve => Stage::Solve,
        Command::Seba => Stage::Seba,
        Command::Sets => Stage::Sets,
        Command::Diag => Stage::Diag,
        _ => return None,
    })
}

fn fail(e: &PipelineError) -> ExitCode {
    error!("{e}");
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e.source))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Command::Keys = cli.command {
        for (k, d, doc) in KEYS {
            println!("{k:<20} {d:<28} {doc}");
        }
        return ExitCode::SUCCESS;
    }

    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };

    match &cli.command {
        Command::ShowConfig => {
            print!("{cfg}");
            ExitCode::SUCCESS
        }
        Command::Run => match pipeline::run_pipeline(&cfg) {
            Ok(_) => {
                println!(
                    "pipeline finished; artifacts in {} (see {})",
                    cfg.output_dir.display(),
                    artifacts::MANIFEST
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        cmd => {
            let stage = stage_of(cmd).expect("remaining commands are stages");
            match pipeline::run_stage(&cfg, stage) {
                Ok(details) => {
                    println!("{}: {details}", stage.name());
                    if let Command::Mesh { month: Some(t) } = cmd {
                        let v = cfg.output_dir.join(artifacts::mesh_vertices(*t));
                        if !v.is_file() {
                            eprintln!("error: month {t} has no mesh");
                            return ExitCode::from(2);
                        }
                        println!("{}", v.display());
                        println!("{}", cfg.output_dir.join(artifacts::mesh_triangles(*t)).display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}
