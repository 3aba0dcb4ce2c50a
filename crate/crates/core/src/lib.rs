//! Balancing factor allocations between discretized random measures on a
//! periodic torus.
//!
//! The pipeline builds a concave cost, solves partial optimal transport
//! problems exactly, and assembles allocations `T` with `T#ξ ≈ η` that commute
//! with translations of the torus.

pub mod allocation;
pub mod cost;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod generators;
pub mod io;
pub mod measure;
pub mod solver;
pub mod verification;

pub use allocation::{
    allocate, allocate_general, allocate_mutually_singular, allocate_no_small_sets, invert_allocation, AllocationMap,
    AllocationOptions, Assignment, Branch, PipelineOutput, PipelineReport, ThresholdSplit,
};
pub use cost::{build_dlvp_cost, certify_finiteness, estimate_tail_masses, ConcaveCost, DlvpCost, TailMassSequence};
pub use domain::PeriodicDomain;
pub use error::{Error, Result};
pub use experiment::{emit_histograms, run_experiment, ExperimentConfig, ExperimentOutcome, Histogram};
pub use generators::{coupled_pair, generate, GeneratorKind, GeneratorSpec};
pub use io::VerificationSummary;
pub use measure::{DiscreteMeasure, SignedDecomposition};
pub use solver::{brute_force_oracle, solve_oriented, solve_semicoupling, SolverOptions, TransportPlan};
pub use verification::CheckReport;
