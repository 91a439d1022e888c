//! Backward construction of the minimal supersolution.
//!
//! One node at a time, the solver finds the smallest `y` admitting a
//! control `z` with
//!
//! ```text
//!     y - g(y, z) dt + z·dW_b  >=  next_b      for every branch b,
//! ```
//!
//! equivalently the smallest `y` with `y >= F(y)` where
//!
//! ```text
//!     F(y) = inf_z [ max_b ( next_b - z·dW_b ) + g(y, z) dt ].
//! ```
//!
//! Greedy per-node minimality gives global minimality: the generator is
//! nondecreasing in `y` through the monotone modes handled below, so
//! lowering any node's value can only lower what its predecessors need,
//! and induction from the terminal slice makes the pointwise-minimal
//! choice globally minimal.
//!
//! The inner infimum over `z` is a convex problem solved by pattern probes
//! (origin, martingale-representation point, axis points) followed by
//! golden-section or cyclic coordinate descent; every probe is recorded
//! and the best probed point wins, with ties broken by smaller Euclidean
//! norm. The outer problem is monotone in `y` and solved by bracketing and
//! bisection, keeping the feasible end of the bracket so the returned
//! value always satisfies `y >= F(y)` up to roundoff.

use std::cell::{Cell, RefCell};
use std::fmt;

use crate::generator::{GeneratorError, GeneratorSpec};
use crate::scaffold::{AdaptedProcess, Measure, PredictableProcess, Scaffold, ScaffoldError};
use crate::search;

#[derive(Debug, Clone, PartialEq)]
pub enum SolveError {
    /// The generator does not declare the structure the solver needs.
    MissingFlags { needed: &'static str },
    /// Increasing `y`-dependence with `L * dt >= 1`; the per-node fixed
    /// point may not exist or be unique.
    ContractionViolated { lipschitz: f64, dt: f64 },
    /// No control with finite cost was found at this node.
    GeneratorInfeasible { node: usize },
    /// The upper bracket for the outer `y` search never became feasible.
    NoBracket { node: usize, tried: f64 },
    /// The supplied measure gives the increments nonzero one-step mean.
    DriftedMeasure { node: usize, drift: f64 },
    /// Terminal values must be finite.
    InvalidTerminal { leaf: usize, value: f64 },
    InvalidOptions { what: &'static str },
    Unsupported { what: &'static str },
    BudgetExceeded { what: &'static str, limit: usize, got: usize },
    Scaffold(ScaffoldError),
    Generator(GeneratorError),
}

impl fmt::Display for SolveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveError::MissingFlags { needed } => write!(f, "generator is missing required structure: {needed}"),
            SolveError::ContractionViolated { lipschitz, dt } => {
                write!(f, "y-Lipschitz constant {lipschitz} with step {dt} breaks the contraction condition L*dt < 1")
            }
            SolveError::GeneratorInfeasible { node } => {
                write!(f, "no finite-cost control found at node {node}")
            }
            SolveError::NoBracket { node, tried } => {
                write!(f, "outer search at node {node} found no feasible value up to y = {tried}")
            }
            SolveError::DriftedMeasure { node, drift } => {
                write!(f, "increments have mean {drift} at node {node}; the backward solver needs a mean-zero frame")
            }
            SolveError::InvalidTerminal { leaf, value } => {
                write!(f, "terminal value at leaf {leaf} is {value}; must be finite")
            }
            SolveError::InvalidOptions { what } => write!(f, "invalid solver options: {what}"),
            SolveError::Unsupported { what } => write!(f, "unsupported: {what}"),
            SolveError::BudgetExceeded { what, limit, got } => {
                write!(f, "{what}: limit {limit}, required {got}")
            }
            SolveError::Scaffold(e) => write!(f, "{e}"),
            SolveError::Generator(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for SolveError {}

impl From<ScaffoldError> for SolveError {
    fn from(e: ScaffoldError) -> Self {
        SolveError::Scaffold(e)
    }
}

impl From<GeneratorError> for SolveError {
    fn from(e: GeneratorError) -> Self {
        SolveError::Generator(e)
    }
}

/// Numerical knobs. The defaults match the tolerances the regression
/// suite pins; loosen `eps_z` before `eps_y` if speed matters.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Outer bisection stops when the bracket is narrower than this.
    pub eps_y: f64,
    /// Inner golden-section interval width at termination.
    pub eps_z: f64,
    /// Cap on geometric bracket expansions for the outer search.
    pub max_expansions: u32,
    /// Cap on coordinate-descent sweeps for multidimensional controls.
    pub max_sweeps: u32,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { eps_y: 1e-8, eps_z: 1e-8, max_expansions: 4096, max_sweeps: 64 }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<(), SolveError> {
        if !(self.eps_y > 0.0 && self.eps_y.is_finite()) {
            return Err(SolveError::InvalidOptions { what: "eps_y must be positive and finite" });
        }
        if !(self.eps_z > 0.0 && self.eps_z.is_finite()) {
            return Err(SolveError::InvalidOptions { what: "eps_z must be positive and finite" });
        }
        if self.max_expansions == 0 {
            return Err(SolveError::InvalidOptions { what: "max_expansions must be positive" });
        }
        Ok(())
    }
}

/// Terminal payoff, one value per leaf in [`Scaffold::leaves`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCondition {
    values: Vec<f64>,
}

impl TerminalCondition {
    pub fn from_leaf_values(s: &Scaffold, values: Vec<f64>) -> Result<Self, SolveError> {
        let leaves = s.leaves();
        if values.len() != leaves.len() {
            return Err(SolveError::Scaffold(ScaffoldError::LengthMismatch {
                what: "terminal values",
                expected: leaves.len(),
                got: values.len(),
            }));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(SolveError::InvalidTerminal { leaf: leaves[i], value: *v });
            }
        }
        Ok(TerminalCondition { values })
    }

    /// Payoff as a function of the leaf node id.
    pub fn from_fn(s: &Scaffold, f: impl Fn(usize) -> f64) -> Result<Self, SolveError> {
        let values = s.leaves().iter().map(|&n| f(n)).collect();
        TerminalCondition::from_leaf_values(s, values)
    }

    /// Payoff as a function of the summed terminal Brownian coordinates,
    /// `x = W^1_T + ... + W^d_T`.
    pub fn from_state_sum(s: &Scaffold, f: impl Fn(f64) -> f64) -> Result<Self, SolveError> {
        let sums = s.brownian_sum();
        TerminalCondition::from_fn(s, |n| f(sums[n]))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, s: &Scaffold, f: impl Fn(f64) -> f64) -> Result<Self, SolveError> {
        TerminalCondition::from_leaf_values(s, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, s: &Scaffold, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, SolveError> {
        if other.values.len() != self.values.len() {
            return Err(SolveError::Scaffold(ScaffoldError::LengthMismatch {
                what: "terminal values",
                expected: self.values.len(),
                got: other.values.len(),
            }));
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        TerminalCondition::from_leaf_values(s, values)
    }

    pub fn shift(&self, s: &Scaffold, c: f64) -> Result<Self, SolveError> {
        self.map(s, |v| v + c)
    }
}

/// One node's minimization data: per branch, the probability under the
/// solving frame, the (possibly compensated) increment, and the successor
/// value.
#[derive(Debug, Clone)]
pub struct NodeProgram {
    pub k: usize,
    pub node: usize,
    pub dt: f64,
    pub branches: Vec<NodeBranch>,
}

#[derive(Debug, Clone)]
pub struct NodeBranch {
    pub probability: f64,
    pub dw: Vec<f64>,
    pub next: f64,
}

/// Output of [`solve_node`]: the minimal value, its control, and the
/// per-branch slack of the one-step inequality at the minimum.
#[derive(Debug, Clone)]
pub struct NodeSolution {
    pub y: f64,
    pub z: Vec<f64>,
    pub slack: Vec<f64>,
}

enum YDep {
    Independent,
    Increasing,
    Decreasing,
}

fn classify_ydep(g: &GeneratorSpec, dt: f64) -> Result<YDep, SolveError> {
    let flags = g.flags();
    if !flags.positive {
        return Err(SolveError::MissingFlags { needed: "positive (reduce non-positive drivers through the measure change first)" });
    }
    if !flags.convex_z {
        return Err(SolveError::MissingFlags { needed: "convex_z" });
    }
    if !flags.lsc {
        return Err(SolveError::MissingFlags { needed: "lsc" });
    }
    if flags.y_independent || (flags.increasing_y && flags.decreasing_y) {
        Ok(YDep::Independent)
    } else if flags.increasing_y {
        let l = g
            .y_lipschitz()
            .ok_or(SolveError::MissingFlags { needed: "y_lipschitz for a driver increasing in y" })?;
        if !(l * dt < 1.0) {
            return Err(SolveError::ContractionViolated { lipschitz: l, dt });
        }
        Ok(YDep::Increasing)
    } else if flags.decreasing_y {
        Ok(YDep::Decreasing)
    } else {
        Err(SolveError::MissingFlags { needed: "one of y_independent, increasing_y, decreasing_y" })
    }
}

struct InnerResult {
    value: f64,
    z: Vec<f64>,
}

/// Minimize `phi(z) = max_b(next_b - z·dW_b) + g(y, z) dt` for fixed `y`.
/// Returns the best probed point; `value` is `+inf` when no finite-cost
/// control was found.
fn inner_min(g: &GeneratorSpec, p: &NodeProgram, y: f64, opts: &SolverOptions) -> InnerResult {
    let dim = g.dim();
    let dt = p.dt;
    // Interior mutability so the same tracking closure can feed the line
    // searches while the incumbent stays readable here.
    let best_val = Cell::new(f64::INFINITY);
    let best_norm2 = Cell::new(f64::INFINITY);
    let best_z = RefCell::new(vec![0.0; dim]);

    let phi = |z: &[f64]| -> f64 {
        let mut head = f64::NEG_INFINITY;
        for br in &p.branches {
            let mut dot = 0.0;
            for (zi, wi) in z.iter().zip(&br.dw) {
                dot += zi * wi;
            }
            let v = br.next - dot;
            if v > head {
                head = v;
            }
        }
        let gv = g.eval_raw(p.k, p.node, y, z);
        let val = if gv == f64::INFINITY { f64::INFINITY } else { head + gv * dt };
        if val < best_val.get() {
            best_val.set(val);
            best_norm2.set(sq_norm(z));
            best_z.borrow_mut().copy_from_slice(z);
        } else if val == best_val.get() {
            let n2 = sq_norm(z);
            if n2 < best_norm2.get() {
                best_norm2.set(n2);
                best_z.borrow_mut().copy_from_slice(z);
            }
        }
        val
    };

    // Martingale-representation point: the exact equalizer of the branch
    // heads when d = 1, and the right scale in general.
    let mut zm = vec![0.0; dim];
    for br in &p.branches {
        for i in 0..dim {
            zm[i] += br.probability * br.next * br.dw[i];
        }
    }
    zm.iter_mut().for_each(|v| *v /= dt);

    phi(&vec![0.0; dim]);
    phi(&zm);
    let spread = 1.0 + zm.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut axis = vec![0.0; dim];
    for i in 0..dim {
        axis.iter_mut().for_each(|v| *v = 0.0);
        axis[i] = spread;
        phi(&axis);
        axis[i] = -spread;
        phi(&axis);
    }
    if !best_val.get().is_finite() {
        // Thin constraint sets around the origin: walk the martingale
        // point inward until something is feasible.
        let mut probe = zm.clone();
        for _ in 0..48 {
            probe.iter_mut().for_each(|v| *v *= 0.5);
            phi(&probe);
            if best_val.get().is_finite() {
                break;
            }
        }
    }

    if best_val.get().is_finite() {
        let anchor = best_z.borrow().clone();
        let scale = 0.5 * (1.0 + anchor.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        if dim == 1 {
            search::golden_min_1d(&mut |x| phi(&[x]), anchor[0], scale, opts.eps_z, 128);
        } else {
            search::coordinate_min(&mut |zz| phi(zz), &anchor, scale, opts.eps_z, opts.max_sweeps, 128);
        }
    }

    InnerResult { value: best_val.get(), z: best_z.into_inner() }
}

fn sq_norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

/// Solve one node's minimal-value program.
///
/// Requires `positive`, `convex_z` and `lsc`, plus a declared
/// `y`-dependence mode; increasing dependence additionally needs a
/// Lipschitz constant with `L * dt < 1`.
pub fn solve_node(g: &GeneratorSpec, p: &NodeProgram, opts: &SolverOptions) -> Result<NodeSolution, SolveError> {
    opts.validate()?;
    if p.branches.is_empty() {
        return Err(SolveError::Unsupported { what: "node with no successors" });
    }
    for br in &p.branches {
        if br.dw.len() != g.dim() {
            return Err(SolveError::Generator(GeneratorError::DimensionMismatch {
                expected: g.dim(),
                got: br.dw.len(),
            }));
        }
    }
    let ydep = classify_ydep(g, p.dt)?;

    let (y_star, inner) = match ydep {
        YDep::Independent => {
            let r = inner_min(g, p, 0.0, opts);
            if !r.value.is_finite() {
                return Err(SolveError::GeneratorInfeasible { node: p.node });
            }
            (r.value, r)
        }
        YDep::Increasing | YDep::Decreasing => {
            // Any feasible y dominates the frame expectation of the
            // successors: max_b(next - z·dW) >= E[next - z·dW] = E[next]
            // and g >= 0. So the expectation is a valid lower bracket.
            let y_lo: f64 = p.branches.iter().map(|b| b.probability * b.next).sum();
            let r_lo = inner_min(g, p, y_lo, opts);
            if !r_lo.value.is_finite() {
                return Err(SolveError::GeneratorInfeasible { node: p.node });
            }
            if y_lo >= r_lo.value {
                (y_lo, r_lo)
            } else {
                let mut lo = y_lo;
                let mut step = (r_lo.value - y_lo).max(opts.eps_y).max(1e-3 * (1.0 + y_lo.abs()));
                let mut found: Option<(f64, InnerResult)> = None;
                for _ in 0..opts.max_expansions {
                    let cand = y_lo + step;
                    let r = inner_min(g, p, cand, opts);
                    if r.value.is_finite() && cand >= r.value {
                        found = Some((cand, r));
                        break;
                    }
                    lo = cand;
                    step *= 2.0;
                }
                let (mut hi, mut r_hi) = match found {
                    Some(v) => v,
                    None => return Err(SolveError::NoBracket { node: p.node, tried: y_lo + step }),
                };
                // Invariant: lo is infeasible, (hi, r_hi) feasible.
                let mut iters = 0;
                while hi - lo > opts.eps_y && iters < 200 {
                    let mid = 0.5 * (lo + hi);
                    let r = inner_min(g, p, mid, opts);
                    if r.value.is_finite() && mid >= r.value {
                        hi = mid;
                        r_hi = r;
                    } else {
                        lo = mid;
                    }
                    iters += 1;
                }
                (hi, r_hi)
            }
        }
    };

    let g_val = g.eval_raw(p.k, p.node, y_star, &inner.z);
    debug_assert!(g_val.is_finite(), "feasible minimum must have finite cost");
    let slack = p
        .branches
        .iter()
        .map(|br| {
            let mut dot = 0.0;
            for (zi, wi) in inner.z.iter().zip(&br.dw) {
                dot += zi * wi;
            }
            y_star - g_val * p.dt + dot - br.next
        })
        .collect();

    Ok(NodeSolution { y: y_star, z: inner.z, slack })
}

/// A candidate pair `(Y, Z)` with its recomputed step slacks and terminal
/// gaps. Produced by the solver (zero terminal gap by construction) or
/// assembled from parts by the pasting and reduction operations.
#[derive(Debug, Clone)]
pub struct Supersolution {
    pub y: AdaptedProcess,
    pub z: PredictableProcess,
    /// Per node: one slack per branch of the step inequality; empty for
    /// terminal nodes. Nonnegative (up to tolerance) iff the pair is a
    /// supersolution of the dynamics.
    pub slack: Vec<Vec<f64>>,
    /// `Y_N - xi` per leaf, in leaf order.
    pub terminal_gap: Vec<f64>,
}

impl Supersolution {
    /// Recompute slacks and terminal gaps for an arbitrary pair under the
    /// base increments. Nothing is assumed: negative entries are recorded
    /// as given.
    pub fn from_parts(
        s: &Scaffold,
        g: &GeneratorSpec,
        xi: &TerminalCondition,
        y: AdaptedProcess,
        z: PredictableProcess,
    ) -> Result<Self, SolveError> {
        let dt = s.grid().dt();
        let mut slack = vec![Vec::new(); s.node_count()];
        for node in 0..s.node_count() {
            if s.is_terminal(node) {
                continue;
            }
            let k = s.time_of(node);
            let zc = z.control(node);
            let gv = g.eval_raw(k, node, y.value(node), zc);
            let succ = s.successors(node);
            let mut row = Vec::with_capacity(succ.len());
            for (b, &c) in succ.iter().enumerate() {
                let mut dot = 0.0;
                for i in 0..s.dim() {
                    dot += zc[i] * s.increment_component(b, i);
                }
                let step = if gv == f64::INFINITY {
                    f64::NEG_INFINITY
                } else {
                    y.value(node) - gv * dt + dot - y.value(c)
                };
                row.push(step);
            }
            slack[node] = row;
        }
        let leaves = s.leaves();
        if xi.len() != leaves.len() {
            return Err(SolveError::Scaffold(ScaffoldError::LengthMismatch {
                what: "terminal values",
                expected: leaves.len(),
                got: xi.len(),
            }));
        }
        let terminal_gap = leaves
            .iter()
            .zip(xi.values())
            .map(|(&leaf, &v)| y.value(leaf) - v)
            .collect();
        Ok(Supersolution { y, z, slack, terminal_gap })
    }

    pub fn worst_slack(&self) -> (f64, Option<(usize, usize)>) {
        let mut worst = f64::INFINITY;
        let mut at = None;
        for (node, row) in self.slack.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                if v < worst {
                    worst = v;
                    at = Some((node, b));
                }
            }
        }
        (worst, at)
    }

    pub fn worst_terminal_gap(&self) -> (f64, Option<usize>) {
        let mut worst = f64::INFINITY;
        let mut at = None;
        for (i, &v) in self.terminal_gap.iter().enumerate() {
            if v < worst {
                worst = v;
                at = Some(i);
            }
        }
        (worst, at)
    }

    /// Root value.
    pub fn initial(&self) -> f64 {
        self.y.value(0)
    }

    /// Sum of step slacks along the path to each leaf (leaf order). On a
    /// path tree this is the increasing part consumed by the inequality;
    /// adding the terminal gap gives the total distance from equality.
    pub fn cumulative_slack(&self, s: &Scaffold) -> Result<Vec<f64>, ScaffoldError> {
        let mut acc = vec![0.0; s.node_count()];
        for node in 0..s.node_count() {
            if s.is_terminal(node) {
                continue;
            }
            let preds = s.predecessors(node);
            if preds.len() > 1 {
                return Err(ScaffoldError::PathDependent { op: "cumulative slack" });
            }
            for (b, &c) in s.successors(node).iter().enumerate() {
                acc[c] = acc[node] + self.slack[node][b];
            }
        }
        Ok(s.leaves().iter().map(|&l| acc[l]).collect())
    }

    pub fn verify(
        &self,
        s: &Scaffold,
        g: &GeneratorSpec,
        xi: &TerminalCondition,
        mu: &Measure,
        tol: f64,
    ) -> Result<VerifyReport, SolveError> {
        verify_supersolution(s, g, xi, &self.y, &self.z, mu, tol)
    }
}

/// Independent re-check of the supersolution property for a pair `(Y, Z)`.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub pass: bool,
    /// Smallest step slack and where it occurs.
    pub worst_slack: f64,
    pub worst_slack_at: Option<(usize, usize)>,
    /// Smallest `Y_N - xi` over leaves.
    pub worst_terminal_gap: f64,
    pub worst_gap_leaf: Option<usize>,
    /// Largest one-step conditional mean of `z·dW` under `mu`; zero for a
    /// true martingale integrand.
    pub max_step_drift: f64,
    pub tol: f64,
}

pub fn verify_supersolution(
    s: &Scaffold,
    g: &GeneratorSpec,
    xi: &TerminalCondition,
    y: &AdaptedProcess,
    z: &PredictableProcess,
    mu: &Measure,
    tol: f64,
) -> Result<VerifyReport, SolveError> {
    let sol = Supersolution::from_parts(s, g, xi, y.clone(), z.clone())?;
    let (worst_slack, worst_slack_at) = sol.worst_slack();
    let (worst_terminal_gap, worst_gap_leaf) = sol.worst_terminal_gap();

    let mut max_step_drift = 0.0f64;
    for node in 0..s.node_count() {
        if s.is_terminal(node) {
            continue;
        }
        let zc = z.control(node);
        let mut mean = 0.0;
        for b in 0..s.successors(node).len() {
            let mut dot = 0.0;
            for i in 0..s.dim() {
                dot += zc[i] * s.increment_component(b, i);
            }
            mean += mu.probability(node, b) * dot;
        }
        max_step_drift = max_step_drift.max(mean.abs());
    }

    let pass = worst_slack >= -tol && worst_terminal_gap >= -tol && max_step_drift <= tol;
    Ok(VerifyReport {
        pass,
        worst_slack,
        worst_slack_at,
        worst_terminal_gap,
        worst_gap_leaf,
        max_step_drift,
        tol,
    })
}

/// Backward induction under an explicit frame: `probs` gives the branch
/// probabilities, `dw` the increment used both in the inner minimization
/// and the slack. The frame must be mean-zero; the affine reduction calls
/// this with compensated increments, the plain solve with raw ones.
pub(crate) fn induce_frame(
    s: &Scaffold,
    g: &GeneratorSpec,
    xi: &TerminalCondition,
    probs: &Measure,
    dw: &dyn Fn(usize, usize, usize) -> f64,
    opts: &SolverOptions,
) -> Result<Supersolution, SolveError> {
    opts.validate()?;
    if g.dim() != s.dim() {
        return Err(SolveError::Generator(GeneratorError::DimensionMismatch {
            expected: s.dim(),
            got: g.dim(),
        }));
    }
    let leaves = s.leaves();
    if xi.len() != leaves.len() {
        return Err(SolveError::Scaffold(ScaffoldError::LengthMismatch {
            what: "terminal values",
            expected: leaves.len(),
            got: xi.len(),
        }));
    }

    // The whole construction assumes E[dW | node] = 0 branch-wise.
    for node in 0..s.node_count() {
        if s.is_terminal(node) {
            continue;
        }
        for i in 0..s.dim() {
            let mut mean = 0.0;
            for b in 0..s.successors(node).len() {
                mean += probs.probability(node, b) * dw(node, b, i);
            }
            if mean.abs() > 1e-12 {
                return Err(SolveError::DriftedMeasure { node, drift: mean });
            }
        }
    }

    let mut values = vec![0.0f64; s.node_count()];
    for (&leaf, &v) in leaves.iter().zip(xi.values()) {
        values[leaf] = v;
    }
    let (z, slack) = induce_below(s, g, probs, dw, opts, s.steps(), &mut values)?;
    let mut y = AdaptedProcess::zeros(s);
    for node in 0..s.node_count() {
        y.set(node, values[node]);
    }
    let terminal_gap = vec![0.0; leaves.len()];
    Ok(Supersolution { y, z, slack, terminal_gap })
}

/// Shared induction loop: solve every node strictly below slice `top`,
/// reading successor values from (and writing results into) `values`.
fn induce_below(
    s: &Scaffold,
    g: &GeneratorSpec,
    probs: &Measure,
    dw: &dyn Fn(usize, usize, usize) -> f64,
    opts: &SolverOptions,
    top: usize,
    values: &mut [f64],
) -> Result<(PredictableProcess, Vec<Vec<f64>>), SolveError> {
    let dt = s.grid().dt();
    let mut z = PredictableProcess::zeros(s);
    let mut slack = vec![Vec::new(); s.node_count()];
    for k in (0..top).rev() {
        for &node in s.slice(k) {
            let succ = s.successors(node);
            let branches: Vec<NodeBranch> = succ
                .iter()
                .enumerate()
                .map(|(b, &c)| NodeBranch {
                    probability: probs.probability(node, b),
                    dw: (0..s.dim()).map(|i| dw(node, b, i)).collect(),
                    next: values[c],
                })
                .collect();
            let prog = NodeProgram { k, node, dt, branches };
            let ns = solve_node(g, &prog, opts)?;
            values[node] = ns.y;
            z.set_control(node, &ns.z);
            slack[node] = ns.slack;
        }
    }
    Ok((z, slack))
}

/// Backward induction started from intermediate data: `at` holds one
/// value per node of slice `k` (in slice order), and the result is the
/// per-node value array for all nodes at time `<= k`; later nodes keep
/// the value zero. Used to check that the operator composes across time.
pub fn backward_from_slice(
    s: &Scaffold,
    g: &GeneratorSpec,
    k: usize,
    at: &[f64],
    mu: &Measure,
    opts: &SolverOptions,
) -> Result<Vec<f64>, SolveError> {
    opts.validate()?;
    if k > s.steps() {
        return Err(SolveError::Scaffold(ScaffoldError::TimeOutOfRange { k, steps: s.steps() }));
    }
    let slice = s.slice(k);
    if at.len() != slice.len() {
        return Err(SolveError::Scaffold(ScaffoldError::LengthMismatch {
            what: "slice values",
            expected: slice.len(),
            got: at.len(),
        }));
    }
    for (&node, &v) in slice.iter().zip(at) {
        if !v.is_finite() {
            return Err(SolveError::InvalidTerminal { leaf: node, value: v });
        }
    }
    let mut values = vec![0.0f64; s.node_count()];
    for (&node, &v) in slice.iter().zip(at) {
        values[node] = v;
    }
    induce_below(s, g, mu, &|_, b, i| s.increment_component(b, i), opts, k, &mut values)?;
    Ok(values)
}

/// Compute the minimal supersolution of the backward inequality with
/// terminal condition `xi` under the measure `mu`.
///
/// `mu` must keep the increments mean-zero step by step (the base measure
/// does; a drifted one is rejected). Generators failing positivity go
/// through the affine reduction instead, see the calculus module.
pub fn backward_induce(
    s: &Scaffold,
    g: &GeneratorSpec,
    xi: &TerminalCondition,
    mu: &Measure,
    opts: &SolverOptions,
) -> Result<Supersolution, SolveError> {
    induce_frame(s, g, xi, mu, &|_, b, i| s.increment_component(b, i), opts)
}

/// Exhaustive grid oracle for the same minimization, one-dimensional
/// controls only.
///
/// At each node the `(y, z)` box `hint ± 1` is scanned at resolution `h`,
/// then twice refined around the incumbent, so the per-node error is far
/// below `h` whenever the true optimum lies inside the box. The `hint`
/// supplies box centers (typically a solver output under test; an
/// adversarial hint more than 1 away from the truth defeats the oracle,
/// which is the caller's bargain for a bounded scan). Feasibility of a
/// grid `y` for fixed `z` is monotone in `y`, so the minimal feasible
/// grid point is found by binary search rather than a linear sweep.
pub fn brute_force_min(
    s: &Scaffold,
    g: &GeneratorSpec,
    xi: &TerminalCondition,
    h: f64,
    hint: &Supersolution,
) -> Result<f64, SolveError> {
    if s.dim() != 1 {
        return Err(SolveError::Unsupported { what: "brute force oracle requires dim = 1" });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(SolveError::InvalidOptions { what: "grid step must be positive and finite" });
    }
    const NODE_CAP: usize = 63;
    if s.node_count() > NODE_CAP {
        return Err(SolveError::BudgetExceeded {
            what: "brute force node budget",
            limit: NODE_CAP,
            got: s.node_count(),
        });
    }
    let dt = s.grid().dt();
    let mut values = vec![0.0f64; s.node_count()];
    for (&leaf, &v) in s.leaves().iter().zip(xi.values()) {
        values[leaf] = v;
    }

    for k in (0..s.steps()).rev() {
        for &node in s.slice(k) {
            let succ = s.successors(node);
            let nexts: Vec<f64> = succ.iter().map(|&c| values[c]).collect();
            let dws: Vec<f64> = (0..succ.len()).map(|b| s.increment_component(b, 0)).collect();

            let mut y_c = hint.y.value(node);
            let mut z_c = hint.z.control(node)[0];
            let mut best: Option<(f64, f64)> = None;

            // Three passes: the coarse box, then two local refinements.
            let stages = [(1.0, h), (2.5 * h, h / 25.0), (2.5 * h / 25.0, h / 625.0)];
            for (span, step) in stages {
                let m = (span / step).ceil() as i64;
                let mut stage_best: Option<(f64, f64)> = None;
                for zj in -m..=m {
                    let z = z_c + zj as f64 * step;
                    let head = nexts
                        .iter()
                        .zip(&dws)
                        .map(|(n, w)| n - z * w)
                        .fold(f64::NEG_INFINITY, f64::max);
                    // Minimal grid y with y - g(y, z) dt >= head, found by
                    // binary search over the monotone feasibility predicate.
                    let feasible = |j: i64| -> bool {
                        let yv = y_c + j as f64 * step;
                        let gv = g.eval_raw(k, node, yv, std::slice::from_ref(&z));
                        gv != f64::INFINITY && yv - gv * dt >= head - 1e-12
                    };
                    if !feasible(m) {
                        continue;
                    }
                    let (mut lo, mut hi) = (-m, m);
                    if feasible(lo) {
                        hi = lo;
                    }
                    while lo < hi {
                        let mid = lo + (hi - lo) / 2;
                        if feasible(mid) {
                            hi = mid;
                        } else {
                            lo = mid + 1;
                        }
                    }
                    let yv = y_c + hi as f64 * step;
                    if stage_best.map_or(true, |(by, _)| yv < by) {
                        stage_best = Some((yv, z));
                    }
                }
                if let Some((by, bz)) = stage_best {
                    y_c = by;
                    z_c = bz;
                    best = stage_best;
                }
            }

            match best {
                Some((by, _)) => values[node] = by,
                None => return Err(SolveError::GeneratorInfeasible { node }),
            }
        }
    }
    Ok(values[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorFlags;
    use crate::scaffold::{Mode, TimeGrid};
    use std::sync::Arc;

    fn program(dt: f64, nexts: &[f64], dws: &[f64]) -> NodeProgram {
        let p = 1.0 / nexts.len() as f64;
        NodeProgram {
            k: 0,
            node: 0,
            dt,
            branches: nexts
                .iter()
                .zip(dws)
                .map(|(&n, &w)| NodeBranch { probability: p, dw: vec![w], next: n })
                .collect(),
        }
    }

    #[test]
    fn zero_generator_replicates() {
        // max(2 - z, z) minimized at the equalizer z = 1, value 1.
        let g = GeneratorSpec::zero(1);
        let p = program(1.0, &[2.0, 0.0], &[1.0, -1.0]);
        let sol = solve_node(&g, &p, &SolverOptions::default()).unwrap();
        assert!((sol.y - 1.0).abs() < 1e-9);
        assert!((sol.z[0] - 1.0).abs() < 1e-9);
        assert!(sol.slack.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn abs_generator_tilts_the_control() {
        // g = |z|, dt = 1/4, heads max(2 - z/2, z/2) + |z|/4:
        // minimum at the kink z = 2 with value 1.5.
        let g = GeneratorSpec::abs(1, 1.0);
        let p = program(0.25, &[2.0, 0.0], &[0.5, -0.5]);
        let sol = solve_node(&g, &p, &SolverOptions::default()).unwrap();
        assert!((sol.y - 1.5).abs() < 1e-6, "y = {}", sol.y);
        assert!((sol.z[0] - 2.0).abs() < 1e-6, "z = {}", sol.z[0]);
    }

    #[test]
    fn decreasing_driver_hits_fixed_point() {
        // g = exp(-y), flat successors: y* solves y = exp(-y).
        let g = GeneratorSpec::exp_neg_y(1);
        let p = program(1.0, &[0.0, 0.0], &[1.0, -1.0]);
        let sol = solve_node(&g, &p, &SolverOptions::default()).unwrap();
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if mid - (-mid).exp() < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((sol.y - hi).abs() < 1e-6, "y = {}, fixed point {}", sol.y, hi);
        assert!(sol.z[0].abs() < 1e-6);
    }

    #[test]
    fn increasing_driver_fixed_point() {
        // g = 0.5 y^+, dt = 1/4: inner part is 1 at z = 2, then
        // y = 1 + y/8, so y* = 8/7.
        let g = GeneratorSpec::pos_part_y(1, 0.5);
        let p = program(0.25, &[2.0, 0.0], &[0.5, -0.5]);
        let sol = solve_node(&g, &p, &SolverOptions::default()).unwrap();
        assert!((sol.y - 8.0 / 7.0).abs() < 1e-6, "y = {}", sol.y);
    }

    #[test]
    fn ball_constraint_binds() {
        // kappa = 0 forces z = 0: value is max of successors.
        let g = GeneratorSpec::ball(1, 0.0);
        let p = program(0.25, &[2.0, -1.0], &[0.5, -0.5]);
        let sol = solve_node(&g, &p, &SolverOptions::default()).unwrap();
        assert!((sol.y - 2.0).abs() < 1e-12);
        assert!(sol.z[0].abs() < 1e-12);
    }

    #[test]
    fn contraction_guard() {
        let g = GeneratorSpec::pos_part_y(1, 5.0);
        let p = program(0.25, &[1.0, 0.0], &[0.5, -0.5]);
        assert!(matches!(
            solve_node(&g, &p, &SolverOptions::default()),
            Err(SolveError::ContractionViolated { .. })
        ));
    }

    #[test]
    fn dishonest_growth_has_no_bracket() {
        // Superlinear growth in y declared as Lipschitz: the outer search
        // must give up with an error, not fabricate a value.
        let g = GeneratorSpec::custom(
            "quadratic-in-y",
            1,
            GeneratorFlags {
                positive: true,
                increasing_y: true,
                decreasing_y: false,
                convex_z: true,
                lsc: true,
                y_independent: false,
            },
            Arc::new(|_, _, y: f64, _: &[f64]| y.max(0.0).powi(2)),
        )
        .with_y_lipschitz(0.5);
        let p = program(1.0, &[5.0, 3.0], &[1.0, -1.0]);
        assert!(matches!(
            solve_node(&g, &p, &SolverOptions::default()),
            Err(SolveError::NoBracket { .. })
        ));
    }

    #[test]
    fn zero_generator_tree_is_conditional_expectation() {
        let s = Scaffold::build(1, TimeGrid::new(1.0, 6).unwrap(), Mode::NonRecombining).unwrap();
        let mu = Measure::base(&s);
        let g = GeneratorSpec::zero(1);
        let w = s.brownian_component(0);
        let xi = TerminalCondition::from_fn(&s, |n| w[n]).unwrap();
        let sol = backward_induce(&s, &g, &xi, &mu, &SolverOptions::default()).unwrap();
        // E[W_T | F_k] = W_k and the control replicates with Z = 1.
        for node in 0..s.node_count() {
            assert!((sol.y.value(node) - w[node]).abs() < 1e-12);
            if !s.is_terminal(node) {
                assert!((sol.z.control(node)[0] - 1.0).abs() < 1e-9);
            }
        }
        let report = sol.verify(&s, &g, &xi, &mu, 1e-9).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn one_step_abs_value() {
        // N = 1, T = 1, xi = W_T = ±1, g = 0.5|z|: heads max(1 - z, -1 + z)
        // + 0.5|z|; minimum 0.5 at z = 1.
        let s = Scaffold::build(1, TimeGrid::new(1.0, 1).unwrap(), Mode::NonRecombining).unwrap();
        let mu = Measure::base(&s);
        let g = GeneratorSpec::abs(1, 0.5);
        let xi = TerminalCondition::from_fn(&s, |n| s.brownian_component(0)[n]).unwrap();
        let sol = backward_induce(&s, &g, &xi, &mu, &SolverOptions::default()).unwrap();
        assert!((sol.initial() - 0.5).abs() < 1e-9, "got {}", sol.initial());
    }

    #[test]
    fn drifted_measure_is_rejected() {
        let s = Scaffold::build(1, TimeGrid::new(1.0, 3).unwrap(), Mode::NonRecombining).unwrap();
        let drift = 0.4;
        let dt = s.grid().dt();
        let mu = Measure::from_edge_weights(&s, |_, b| {
            s.base_probability() * (1.0 + drift * s.increment_component(b, 0) * dt)
        })
        .unwrap();
        let g = GeneratorSpec::zero(1);
        let xi = TerminalCondition::from_fn(&s, |_| 1.0).unwrap();
        assert!(matches!(
            backward_induce(&s, &g, &xi, &mu, &SolverOptions::default()),
            Err(SolveError::DriftedMeasure { .. })
        ));
    }

    #[test]
    fn recombining_matches_full_tree() {
        let grid = TimeGrid::new(1.0, 6).unwrap();
        let full = Scaffold::build(1, grid, Mode::NonRecombining).unwrap();
        let shared = Scaffold::build(1, grid, Mode::Recombining).unwrap();
        let g = GeneratorSpec::quad(1, 0.8);
        let opts = SolverOptions::default();
        let xi_full = TerminalCondition::from_state_sum(&full, |x| x * x).unwrap();
        let xi_shared = TerminalCondition::from_state_sum(&shared, |x| x * x).unwrap();
        let a = backward_induce(&full, &g, &xi_full, &Measure::base(&full), &opts).unwrap();
        let b = backward_induce(&shared, &g, &xi_shared, &Measure::base(&shared), &opts).unwrap();
        assert!((a.initial() - b.initial()).abs() < 1e-9);
    }

    #[test]
    fn oracle_agrees_on_quadratic_driver() {
        // Frozen case: g = |z|^2, xi = W_T^2, N = 2, T = 1. The backward
        // value at the root is 1.75: one step from the leaves the program
        // gives y = x^2 + 3/4 at state x, and the root repeats it.
        let s = Scaffold::build(1, TimeGrid::new(1.0, 2).unwrap(), Mode::NonRecombining).unwrap();
        let mu = Measure::base(&s);
        let g = GeneratorSpec::quad(1, 1.0);
        let xi = TerminalCondition::from_state_sum(&s, |x| x * x).unwrap();
        let sol = backward_induce(&s, &g, &xi, &mu, &SolverOptions::default()).unwrap();
        assert!((sol.initial() - 1.75).abs() < 1e-6, "solver {}", sol.initial());
        let oracle = brute_force_min(&s, &g, &xi, 1e-3, &sol).unwrap();
        assert!((oracle - 1.75).abs() < 1e-4, "oracle {oracle}");
        assert!((oracle - sol.initial()).abs() < 1e-3 + 1e-8);
    }

    #[test]
    fn cumulative_slack_reconstructs_terminal_distance() {
        let s = Scaffold::build(1, TimeGrid::new(1.0, 4).unwrap(), Mode::NonRecombining).unwrap();
        let mu = Measure::base(&s);
        let g = GeneratorSpec::abs(1, 0.7);
        let xi = TerminalCondition::from_state_sum(&s, |x| (x - 0.25).max(0.0)).unwrap();
        let sol = backward_induce(&s, &g, &xi, &mu, &SolverOptions::default()).unwrap();
        // Y_0 - sum g dt + int Z dW - K_T = Y_N = xi on every path, so K_T
        // recomputed from slacks must equal the full defect path by path.
        let k_t = sol.cumulative_slack(&s).unwrap();
        let w = s.brownian_component(0);
        let dt = s.grid().dt();
        for (li, &leaf) in s.leaves().iter().enumerate() {
            // Walk the path accumulating the integral and the g dt sum.
            let mut node = leaf;
            let mut rev = Vec::new();
            while let Some(p) = s.parent(node).unwrap() {
                rev.push((p, node));
                node = p;
            }
            rev.reverse();
            let mut int = 0.0;
            let mut gsum = 0.0;
            for (p, c) in rev {
                let z = sol.z.control(p)[0];
                int += z * (w[c] - w[p]);
                gsum += g.eval_raw(s.time_of(p), p, sol.y.value(p), sol.z.control(p)) * dt;
            }
            let lhs = sol.initial() - gsum + int - k_t[li];
            assert!((lhs - xi.values()[li]).abs() < 1e-9, "leaf {leaf}: {lhs} vs {}", xi.values()[li]);
        }
    }
}
