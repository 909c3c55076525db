use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use odt_demand::cli::{self, Command, Fixture, ProjectConfig};
use odt_demand::error::Error;
use odt_demand::model::{ModelFamily, Target};

const EXIT_FAILURE: u8 = 1;
const EXIT_MISSING_ARTIFACT: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "odt-demand", version, about = "Demand-level modelling for on-demand transit")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// JSON project configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; `-` prints evaluation to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelArg>,
    #[arg(long, global = true, value_enum)]
    family: Option<FamilyArg>,
    /// Optimizer trials per family.
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Number of demand levels.
    #[arg(long, global = true)]
    k: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic census and trip log.
    Synth,
    /// Validate inputs and aggregate daily counts.
    Ingest,
    /// Fit demand levels and build the labelled dataset.
    Cluster,
    /// Tune hyperparameters with cross-validation.
    Tune,
    /// Fit models on the training split.
    Train,
    /// Score models on the held-out split, or a stored confusion matrix.
    Evaluate {
        #[arg(long, value_enum)]
        fixture: Option<FixtureArg>,
    },
    /// Compute Shapley attributions.
    Explain,
    /// Run the whole pipeline.
    Report,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModelArg {
    Production,
    Distribution,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FamilyArg {
    Rf,
    Bagging,
    Ann,
    Dnn,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FixtureArg {
    Table2,
    Table3,
}

fn config(args: &Args) -> Result<ProjectConfig, Error> {
    let mut cfg = match &args.config {
        Some(p) => ProjectConfig::load(p)?,
        None => ProjectConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(m) = args.model {
        cfg.model = match m {
            ModelArg::Production => Target::Production,
            ModelArg::Distribution => Target::Distribution,
        };
    }
    if let Some(f) = args.family {
        cfg.family = Some(match f {
            FamilyArg::Rf => ModelFamily::RandomForest,
            FamilyArg::Bagging => ModelFamily::Bagging,
            FamilyArg::Ann => ModelFamily::Ann,
            FamilyArg::Dnn => ModelFamily::Dnn,
        });
    }
    if let Some(i) = args.iterations {
        cfg.iterations = i;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let (command, fixture) = match args.command {
        Cmd::Synth => (Command::Synth, None),
        Cmd::Ingest => (Command::Ingest, None),
        Cmd::Cluster => (Command::Cluster, None),
        Cmd::Tune => (Command::Tune, None),
        Cmd::Train => (Command::Train, None),
        Cmd::Evaluate { fixture } => (
            Command::Evaluate,
            fixture.map(|f| match f {
                FixtureArg::Table2 => Fixture::Table2,
                FixtureArg::Table3 => Fixture::Table3,
            }),
        ),
        Cmd::Explain => (Command::Explain, None),
        Cmd::Report => (Command::Report, None),
    };
    let result = config(&args).and_then(|cfg| cli::run(command, &cfg, fixture));
    match result {
        Ok(path) => {
            if let Some(p) = path {
                log::info!("manifest written to {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(Error::MissingArtifact(p)) => {
            eprintln!("error: missing artifact {}", p.display());
            ExitCode::from(EXIT_MISSING_ARTIFACT)
        }
        Err(e @ Error::InvalidConfig(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
