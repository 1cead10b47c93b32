//! Seeded instance generation, file formats and the experiment pipeline
//! behind the `qvi-workbench` binary.

pub mod config;
pub mod experiment;
pub mod generate;
pub mod io;

pub use config::{EpsilonSpec, ExperimentConfig, Q0Mode, WMode};
pub use experiment::{run_experiment, verify_artifacts, ExperimentOutcome, ExperimentReport};
pub use generate::generate_mdp;
pub use io::{emit_halfplane_data, write_trace_csv};
