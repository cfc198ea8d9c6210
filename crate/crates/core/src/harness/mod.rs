//! Experiment plumbing: configuration, runs, traces, rate fits, reference
//! optimal values and a first-order baseline.

pub mod baseline;
pub mod config;
pub mod fit;
pub mod reference;
pub mod run;

pub use baseline::{baseline_gd, power_iteration, GdConfig, GdRun};
pub use config::{parse_entries, FstarSpec, Method, ProblemKind, RunConfig};
pub use fit::{fit_rate, gap_at, log_log_slope};
pub use reference::{reference_fstar, ReferenceSolution, REFERENCE_BUDGET, REFERENCE_GRAD_TOL};
pub use run::{
    build_problem, execute, fixture_fstar, run, write_outputs, BuiltProblem, RunOutcome, Summary,
};
