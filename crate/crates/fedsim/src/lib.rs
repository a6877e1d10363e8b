//! Deterministic federated averaging simulator.
//!
//! The crate synthesizes client populations whose label distributions range
//! continuously from identical to one-class-per-client (a Dirichlet
//! concentration parameter controls the skew), runs federated averaging with
//! optional server momentum over them, and sweeps hyperparameter grids with
//! reproducible seeds. Everything is `f64` and every random choice derives
//! from explicit seeds, so any run can be reproduced bit for bit, on any
//! number of threads.

pub mod cifar;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod model;
pub mod partition;
pub mod protocol;
pub mod rng;
pub mod sweep;

pub use data::{generate_synthetic, Dataset, Split, SyntheticSpec};
pub use error::{Error, Result};
pub use experiment::{
    metrics_csv, run_experiment, ExperimentConfig, ExperimentOutput, RoundReport, RunSettings,
};
pub use model::{evaluate, init_params, loss_and_grad, Batch, ModelParams, ModelSpec, WeightDelta};
pub use partition::{
    population_stats, sample_dirichlet, sort_and_partition, synthesize_population, ClientDataset,
    LabelDistribution, PartitionScheme, Population, PopulationStats, PriorDistribution,
};
pub use protocol::{
    aggregate, client_update, sample_clients, server_step, ClientConfig, ClientUpdate,
    ServerOptKind, ServerOptimizerConfig, ServerState,
};
pub use sweep::{
    best_csv, effective_learning_rate, parse_sweep_csv, plot_csv, plot_rows, run_sweep,
    select_best, sweep_csv, Axis, BestRow, FigureKind, PlotRow, SweepCell, SweepConfig, SweepGrid,
    SweepResult,
};
