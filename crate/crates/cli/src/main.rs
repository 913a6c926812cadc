use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gsn_cli::{commands, CliError, Config, Split};

#[derive(Parser, Debug)]
#[command(
    name = "gsn",
    version,
    about = "Graph-structured response generation for multi-party chat"
)]
struct Args {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Checkpoint to resume from (train) or load (eval, generate).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse, filter, and split a raw chat log.
    Prepare {
        /// Raw log; defaults to the configured corpus.
        raw_log: Option<PathBuf>,
        /// Output directory; defaults to the configured data_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the prepared splits.
    Train,
    /// Decode a split greedily and print the metrics report.
    Eval {
        #[arg(long)]
        split: Option<String>,
    },
    /// Print one generated response per session.
    Generate { sessions: PathBuf },
    /// Print the effective configuration.
    Config,
}

fn build_config(args: &Args) -> Result<Config, CliError> {
    let mut config = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for entry in &args.overrides {
        let (k, v) = entry
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {entry:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        config.hp.seed = seed;
    }
    Ok(config)
}

fn run(args: Args) -> Result<(), CliError> {
    let config = build_config(&args)?;
    let checkpoint = args.checkpoint.as_deref();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match args.command {
        Command::Prepare { raw_log, out: dir } => {
            let raw_log = raw_log.or_else(|| config.corpus.clone()).ok_or_else(|| {
                CliError::Usage("no raw log given and no corpus configured".into())
            })?;
            let dir = dir.unwrap_or_else(|| config.data_dir.clone());
            commands::prepare(&config, &raw_log, &dir, &mut out)?;
        }
        Command::Train => {
            let run = commands::train(&config, checkpoint, &mut out)?;
            if let Some(best) = &run.best_checkpoint {
                eprintln!("best checkpoint: {}", best.display());
            }
            if let Some(last) = &run.last_checkpoint {
                eprintln!("last checkpoint: {}", last.display());
            }
        }
        Command::Eval { split } => {
            let split = match split {
                Some(s) => Split::parse(&s)?,
                None => config.eval_split,
            };
            commands::eval(&config, checkpoint, split, &mut out)?;
        }
        Command::Generate { sessions } => {
            commands::generate(&config, checkpoint, &sessions, &mut out)?;
        }
        Command::Config => {
            config.validate()?;
            out.write_all(config.to_text().as_bytes())
                .map_err(|e| CliError::io(std::path::Path::new("<stdout>"), e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gsn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
