use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mag::commands::{self, Split};
use mag::config::RunConfig;
use mag::error::{AppError, Result};
use mag::selftest::selftest;

#[derive(Parser)]
#[command(name = "mag", version, about = "Attention-enhanced GRU case forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and save parameters, history and validation predictions.
    Train(RunArgs),
    /// Write predictions of saved parameters for one split.
    Predict {
        #[command(flatten)]
        run: RunArgs,
        /// fit, validation or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Parameter file; defaults to `params.json` in the output directory.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Score saved parameters on the test windows.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Train every grid combination and rank them by validation RMSE.
    Gridsearch(RunArgs),
    /// Retrain with each feature group removed and without attention.
    Ablate(RunArgs),
    /// Run the built-in checks on a generated fixture.
    Selftest {
        /// Directory for the fixture and report.
        #[arg(long, default_value = "selftest")]
        out: PathBuf,
    },
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let overrides = args
        .overrides
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| AppError::Config(format!("--set expects KEY=VALUE, got `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    RunConfig::load(&args.config, &overrides)
}

fn run(cli: Cli) -> Result<(Vec<String>, bool)> {
    let lines = match cli.command {
        Command::Train(a) => commands::train_command(&load(&a)?)?,
        Command::Predict { run, split, params } => {
            commands::predict_command(&load(&run)?, Split::parse(&split)?, params.as_deref())?
        }
        Command::Evaluate { run, params } => commands::evaluate_command(&load(&run)?, params.as_deref())?,
        Command::Gridsearch(a) => commands::gridsearch_command(&load(&a)?)?,
        Command::Ablate(a) => commands::ablate_command(&load(&a)?)?,
        Command::Selftest { out } => {
            let checks = selftest(Path::new(&out))?;
            let ok = checks.iter().all(|c| c.passed);
            return Ok((checks.iter().map(|c| c.line()).collect(), ok));
        }
    };
    Ok((lines, true))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok((lines, ok)) => {
            for l in lines {
                println!("{l}");
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            }
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
