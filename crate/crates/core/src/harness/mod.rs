//! Experiment runners: replications, grids, the properness probe and the
//! integrator comparison.

pub mod experiment;
pub mod grid;
pub mod integrators;
pub mod probe;
pub mod seeds;
pub mod target;

pub use experiment::{
    initial_state, run_experiment, run_replication, ExperimentSpec, ReplicationRecord, ReplicationReport,
    ReplicationRun, ReportRow,
};
pub use grid::{posterior_grid, prior_grid, Grid, GridAxis, GridScale, GridSpec};
pub use integrators::{
    compare_integrators, comparison_models, write_comparison_csv, ComparisonRow, ComparisonSettings,
};
pub use probe::{properness_probe, symmetric_box, ProbeBox, ProbeReport, ProbeSettings, ProbeVerdict};
pub use seeds::derive_seed;
pub use target::{log_prior, StateLayout};
