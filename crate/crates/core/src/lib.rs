//! Minimal supersolutions of convex backward stochastic difference equations
//! on finite Brownian scaffolds.
//!
//! A scaffold is a finite tree approximation of a d-dimensional Brownian
//! filtration: every non-terminal node has `2^d` successors reached by
//! increments with entries `±sqrt(dt)`, so one-step increments match the
//! first two Brownian moments exactly. On that tree the crate computes the
//! smallest process `Y` that, together with some control `Z`, satisfies
//!
//! ```text
//! Y_k - g(Y_k, Z_k) dt + Z_k . dW   >=   Y_{k+1}   along every branch,
//! Y_N >= xi at every leaf,
//! ```
//!
//! for a convex, bounded-below generator `g`. The modules are
//!
//! * [`scaffold`]: trees, adapted and predictable processes, measures,
//!   conditional expectations, stochastic integrals, stopping times;
//! * [`generator`]: generator descriptions with structural flags, a
//!   falsification harness for the flags, and a restricted convex conjugate;
//! * [`solver`]: the per-node convex program, backward induction, an
//!   exhaustive grid oracle, and supersolution verification;
//! * [`calculus`]: pasting along stopping times, Doob decomposition, and the
//!   Girsanov-style reduction of bounded-below generators to positive ones;
//! * [`analysis`]: seeded property suites (monotonicity, convexity, cash
//!   behaviour, flow, time consistency, projectivity), stability checks, and
//!   dual certificates.

pub mod analysis;
pub mod calculus;
pub mod generator;
pub mod scaffold;
mod search;
pub mod solver;

pub use analysis::{AnalysisError, DualCertificate, DualGrids, PropertyReport};
pub use generator::{GeneratorError, GeneratorFlags, GeneratorSpec};
pub use scaffold::{
    AdaptedProcess, Measure, Mode, PredictableProcess, Scaffold, ScaffoldError, StoppingTime,
    TimeGrid,
};
pub use solver::{
    backward_induce, verify_supersolution, SolveError, SolverOptions, Supersolution,
    TerminalCondition,
};
