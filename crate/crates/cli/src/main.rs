use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{FilterChoice, Level, ModelChoice, RunConfig};

/// Calibrate logit-CPT and QDT choice models on two-session binary lottery
/// data, analyse choice shifts and predictability limits.
#[derive(Debug, Parser)]
#[command(name = "choicecal", version)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "CHOICECAL_OUT")]
    out: Option<PathBuf>,
    /// Master seed for every stochastic component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Lottery pair CSV.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Choice observation CSV.
    #[arg(long)]
    observations: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
    #[arg(long, value_enum)]
    level: Option<Level>,
    /// Session used for fitting (1 or 2).
    #[arg(long)]
    session: Option<u8>,
    /// Subject group; groups come from the choice-shift clustering.
    #[arg(long, value_enum)]
    filter: Option<FilterChoice>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a dataset and write per-pair frequencies.
    Ingest(DataArgs),
    /// Generate a synthetic dataset with its ground truth.
    Simulate {
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long, value_enum)]
        model: Option<SimModel>,
        #[arg(long)]
        sessions: Option<usize>,
        /// Majoritarian fraction for two-group generation.
        #[arg(long, requires = "shift_alpha")]
        fraction: Option<f64>,
        /// Majoritarian tilt for two-group generation.
        #[arg(long, requires = "fraction")]
        shift_alpha: Option<f64>,
    },
    /// Maximum-likelihood fits at the aggregate or individual level.
    Fit(FitArgs),
    /// Fit on session 1 and score the predictions on session 2.
    Predict(FitArgs),
    /// Choice-shift curves, clustering and heterogeneous calibration.
    Shift {
        #[command(flatten)]
        data: DataArgs,
        /// Skip the Monte Carlo band.
        #[arg(long)]
        no_band: bool,
        /// Fit the majoritarian fraction freely instead of taking it from
        /// the clustering.
        #[arg(long)]
        free_fraction: bool,
    },
    /// Two-component Gaussian mixture on per-subject majority agreement.
    Cluster(DataArgs),
    /// Distribution of the predicted fraction of choices per subject.
    Predictability {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        model: Option<SimModel>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        interval_level: Option<f64>,
    },
    /// Every analysis in one run.
    Report {
        #[command(flatten)]
        data: DataArgs,
        /// Skip the hierarchical individual-level fits.
        #[arg(long)]
        no_individual: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SimModel {
    LogitCpt,
    Qdt,
}

impl From<SimModel> for choicecal::estimate::ModelId {
    fn from(m: SimModel) -> Self {
        match m {
            SimModel::LogitCpt => Self::LogitCpt,
            SimModel::Qdt => Self::Qdt,
        }
    }
}

fn apply_data(cfg: &mut RunConfig, d: &DataArgs) {
    if let Some(p) = &d.pairs {
        cfg.data.pairs = Some(p.clone());
    }
    if let Some(p) = &d.observations {
        cfg.data.observations = Some(p.clone());
    }
}

fn apply_fit(cfg: &mut RunConfig, a: &FitArgs) {
    apply_data(cfg, &a.data);
    if let Some(m) = a.model {
        cfg.fit.model = m;
    }
    if let Some(l) = a.level {
        cfg.fit.level = l;
    }
    if let Some(s) = a.session {
        cfg.fit.session = s;
    }
    if let Some(f) = a.filter {
        cfg.fit.filter = f;
    }
}

fn run(cli: Cli) -> anyhow::Result<commands::Outcome> {
    let mut cfg = RunConfig::load(cli.config.as_deref()).map_err(commands::input)?;
    if let Some(o) = cli.out {
        cfg.out = Some(o);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    let name = match &cli.command {
        Command::Ingest(d) | Command::Cluster(d) => {
            apply_data(&mut cfg, d);
            if matches!(cli.command, Command::Ingest(_)) {
                "ingest"
            } else {
                "cluster"
            }
        }
        Command::Simulate {
            subjects,
            model,
            sessions,
            fraction,
            shift_alpha,
        } => {
            if let Some(n) = subjects {
                cfg.simulate.subjects = *n;
            }
            if let Some(m) = model {
                cfg.simulate.model = (*m).into();
            }
            if let Some(s) = sessions {
                cfg.simulate.sessions = *s;
            }
            if fraction.is_some() {
                cfg.simulate.fraction = *fraction;
                cfg.simulate.shift_alpha = *shift_alpha;
            }
            "simulate"
        }
        Command::Fit(a) => {
            apply_fit(&mut cfg, a);
            "fit"
        }
        Command::Predict(a) => {
            apply_fit(&mut cfg, a);
            "predict"
        }
        Command::Shift {
            data,
            no_band,
            free_fraction,
        } => {
            apply_data(&mut cfg, data);
            if *no_band {
                cfg.band = false;
            }
            if *free_fraction {
                cfg.shift.fraction = choicecal::shift::FractionMode::Free;
            }
            "shift"
        }
        Command::Predictability {
            data,
            model,
            threshold,
            interval_level,
        } => {
            apply_data(&mut cfg, data);
            if let Some(m) = model {
                cfg.fit.model = match m {
                    SimModel::LogitCpt => ModelChoice::LogitCpt,
                    SimModel::Qdt => ModelChoice::Qdt,
                };
            } else if cfg.fit.model == ModelChoice::Both {
                cfg.fit.model = ModelChoice::Qdt;
            }
            if let Some(t) = threshold {
                cfg.predictability.threshold = *t;
            }
            if let Some(l) = interval_level {
                cfg.predictability.interval_level = *l;
            }
            "predictability"
        }
        Command::Report { data, no_individual } => {
            apply_data(&mut cfg, data);
            if *no_individual {
                cfg.fit.level = Level::Aggregate;
            } else {
                cfg.fit.level = Level::Individual;
            }
            "report"
        }
    };
    let cfg = cfg.seeded();
    commands::init_threads(cfg.threads)?;
    commands::dispatch(name, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for p in &outcome.written {
                println!("{}", p.display());
            }
            if outcome.warnings.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
