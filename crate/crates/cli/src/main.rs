use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vidloc_cli::*;

/// Video-frame localization against a frozen reference model.
///
/// Settings come from command-line flags, then the config file, then built-in
/// defaults, in that order of precedence.
#[derive(Parser)]
#[command(name = "vidloc", version)]
struct Cli {
    /// Flat `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `scene.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: database model, query sequence, ground truth.
    Synth,
    /// Build the reference model from a database model.
    BuildRef {
        #[arg(long)]
        database: Option<PathBuf>,
    },
    /// Localize the query sequence.
    Localize {
        /// Reference model.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        sequence: Option<PathBuf>,
        /// Query ground truth (anchor detection, alignment, errors).
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "proposed")]
        method: Method,
    },
    /// Compare trajectories against ground truth.
    Eval {
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(required = true)]
        trajectories: Vec<PathBuf>,
    },
    /// Write a model's points as ASCII PLY.
    Export {
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    let cfg = resolve_config(cli.config.as_deref(), cli.seed)?;
    let out = out_dir(cli.out.as_deref(), &cfg);
    let p = &cfg.paths;
    let gt_default = || out.join(GROUND_TRUTH_FILE);
    match cli.command {
        Command::Synth => cmd_synth(&cfg, &out),
        Command::BuildRef { database } => {
            let db = pick(database.as_deref(), p.database.as_ref(), || out.join(DATABASE_FILE));
            cmd_build_ref(&cfg, &db, &out)
        }
        Command::Localize { model, sequence, gt, method } => {
            let model = pick(model.as_deref(), p.model.as_ref(), || out.join(REFERENCE_FILE));
            let sequence = pick(sequence.as_deref(), p.sequence.as_ref(), || out.join(QUERY_FILE));
            let explicit = gt.is_some() || p.ground_truth.is_some();
            let gt = pick(gt.as_deref(), p.ground_truth.as_ref(), gt_default);
            let gt = (explicit || gt.exists()).then_some(gt);
            cmd_localize(&cfg, &model, &sequence, gt.as_deref(), method, &out).map(|o| o.summary())
        }
        Command::Eval { gt, trajectories } => {
            let gt = pick(gt.as_deref(), p.ground_truth.as_ref(), gt_default);
            let out_given = cli.out.is_some() || p.out.is_some();
            cmd_eval(&trajectories, &gt, out_given.then_some(out.as_path()))
        }
        Command::Export { model } => {
            let model = pick(model.as_deref(), p.model.as_ref(), || out.join(AUGMENTED_FILE));
            cmd_export(Path::new(&model), &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("vidloc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
