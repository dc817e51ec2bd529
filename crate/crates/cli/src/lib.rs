//! Experiment workbench around the causal digital-twin core: block file
//! ingestion, synthetic dataset generation, experiment orchestration with a
//! reproducible run manifest, and plot-ready report emission.

pub mod config;
pub mod coupling_io;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use config::{load_graph_file, ExperimentConfig, LoadedConfig};
pub use error::{CliError, Result};
