//! Error type shared across the core library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("graph is invalid: {0}")]
    InvalidGraph(String),

    #[error("unknown node label '{0}'")]
    UnknownNode(String),

    #[error("edge {cause} -> {effect} is not present in the graph")]
    UnknownEdge { cause: String, effect: String },

    #[error("lag {lag} exceeds the graph lag order {lag_order}")]
    LagOutOfRange { lag: usize, lag_order: usize },

    #[error("parameter vector length {actual} does not match layout length {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("coupling set does not match the layout mask: nonzero entry at lag {lag}, effect {effect}, cause {cause}")]
    LayoutMismatch {
        lag: usize,
        effect: usize,
        cause: usize,
    },

    #[error("series contains a non-finite value at sample {row}, channel {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("series is empty or has no channels")]
    EmptySeries,

    #[error("coupling set is unstable: companion spectral radius {radius} >= {limit}")]
    UnstableSystem { radius: f64, limit: f64 },

    #[error("series too short: {actual} samples, need more than {required}")]
    SeriesTooShort { required: usize, actual: usize },

    #[error("what-if target nodes have a cyclic instantaneous dependency: {nodes:?}")]
    WhatIfTargetCycle { nodes: Vec<String> },

    #[error("training diverged at step {step}: weights became non-finite")]
    Divergence { step: usize },

    #[error("rank-deficient regressor matrix for effect node '{node}'")]
    RankDeficient { node: String },

    #[error("channel '{0}' is constant; statistic undefined")]
    ConstantChannel(String),

    #[error("channel '{0}' has zero variance")]
    ZeroVariance(String),

    #[error("invalid spectrogram parameters: {0}")]
    BadSpectrogramParams(String),

    #[error("no frequency bins above split frequency {0}")]
    EmptyBand(f64),

    #[error("spectrum is constant; correlation undefined")]
    ConstantSpectrum,

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("noise scale for channel {channel} must be positive, got {scale}")]
    BadNoiseScale { channel: usize, scale: f64 },

    #[error("graph file error: {0}")]
    GraphFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
