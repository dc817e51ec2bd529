//! `causaltwin`: learn coupling factors of connected assets from
//! multichannel recordings, then run what-if and counterfactual experiments
//! on the learned model.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use causaltwin_cli::config::DataSource;
use causaltwin_cli::pipeline::{self, RunManifest, StageSelection};
use causaltwin_cli::{CliError, LoadedConfig};

#[derive(Parser)]
#[command(
    name = "causaltwin",
    version,
    about = "Coupling estimation and scenario simulation for connected assets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a graph file, or a whole config, for structural problems
    Validate {
        /// Experiment config; validates the graph plus every cross-reference
        #[arg(long, conflicts_with = "graph")]
        config: Option<PathBuf>,
        /// Graph file alone
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Generate the synthetic dataset described in the config
    Synth {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the online learner over every data block
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit coupling factors per block by least squares
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run what-if scenarios against recorded driver data
    Whatif {
        #[arg(long)]
        config: PathBuf,
        /// Run a single scenario by name
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Run counterfactual influence-removal scenarios
    Counterfactual {
        #[arg(long)]
        config: PathBuf,
        /// Run a single scenario by name
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Compute spectrograms of the last data block
    Tfd {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-render charts and the summary table from an existing run
    Report {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every enabled stage end to end
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Validate { config, graph } => validate(config, graph),
        Command::Synth { config } => {
            let loaded = LoadedConfig::load(&config)?;
            if !matches!(loaded.config.data, DataSource::Synthetic { .. }) {
                return Err(CliError::Validation(
                    "synth needs a synthetic data source in the config".to_string(),
                ));
            }
            run_stages(&loaded, StageSelection::data_only())
        }
        Command::Train { config } => {
            run_stages(&LoadedConfig::load(&config)?, StageSelection::train_only())
        }
        Command::Fit { config } => {
            run_stages(&LoadedConfig::load(&config)?, StageSelection::fit_only())
        }
        Command::Whatif { config, scenario } => run_stages(
            &LoadedConfig::load(&config)?,
            StageSelection::whatif(scenario),
        ),
        Command::Counterfactual { config, scenario } => run_stages(
            &LoadedConfig::load(&config)?,
            StageSelection::counterfactual(scenario),
        ),
        Command::Tfd { config } => {
            run_stages(&LoadedConfig::load(&config)?, StageSelection::tfd_only())
        }
        Command::Report { config } => {
            let loaded = LoadedConfig::load(&config)?;
            let manifest = pipeline::rerun_report(&loaded.output_dir())?;
            print_stages(&manifest);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config } => {
            run_stages(&LoadedConfig::load(&config)?, StageSelection::run_all())
        }
    }
}

fn validate(config: Option<PathBuf>, graph: Option<PathBuf>) -> Result<ExitCode, CliError> {
    let report = match (config, graph) {
        (Some(path), None) => pipeline::validate_all(&LoadedConfig::load(&path)?)?,
        (None, Some(path)) => causaltwin_cli::load_graph_file(&path)?.validate(),
        _ => {
            return Err(CliError::Validation(
                "pass exactly one of --config or --graph".to_string(),
            ));
        }
    };
    println!("{report}");
    if report.is_ok() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(CliError::Validation(String::new()).exit_code()))
    }
}

fn run_stages(loaded: &LoadedConfig, selection: StageSelection) -> Result<ExitCode, CliError> {
    let manifest = pipeline::run_pipeline(loaded, &selection)?;
    print_stages(&manifest);
    println!(
        "manifest: {}",
        pipeline::manifest_path(&loaded.output_dir()).display()
    );
    Ok(ExitCode::SUCCESS)
}

fn print_stages(manifest: &RunManifest) {
    for stage in &manifest.stages {
        println!("{}: {} file(s)", stage.name, stage.outputs.len());
    }
}
