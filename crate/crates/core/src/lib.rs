//! A consensus-block augmented-Lagrangian solver for boxed linear programs.
//!
//! The constraint rows are split across `N` consensus blocks, each holding a
//! local copy of the decision vector that is tied to a common variable `Z`.
//! Each block updates its copy one subvector at a time (Gauss-Seidel), the
//! `Z` update is aggregated along a ring of blocks, and the multipliers are
//! updated in closed form.
//!
//! `examples/solve.rs` shows the end-to-end flow: generate, partition, run,
//! compare against the reference oracle.

pub mod engine;
pub mod model;
pub mod oracle;
pub mod ring;
pub mod runtime;
pub mod trace;

pub use engine::{
    BlockData, BlockParams, BlockState, DualDirection, EngineError, PenaltyMode, ProxSchedule,
    Residuals, SolverConfig,
};
pub use model::{
    generate_instance, parse_problem, partition, slack_upper_bounds, AffineSystem,
    GeneratedInstance, GeneratorOptions, ModelError, PartitionPlan, ProblemSpec, SlackBounds,
};
pub use oracle::{solve_reference, OptimalCertificate, OracleError, OracleStatus};
pub use runtime::{
    run, run_with, RateCheck, RunOptions, RuntimeError, SolveReport, SolveStatus, Topology,
    Workers,
};
pub use trace::{CsvTraceWriter, IterationTrace, TraceSink};
