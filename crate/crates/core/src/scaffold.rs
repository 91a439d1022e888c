//! Finite tree approximation of a d-dimensional Brownian filtration.
//!
//! Time runs over `N` steps of length `dt = T / N`. Every non-terminal node
//! has `2^d` successors, one per sign pattern; the increment along branch
//! `b` has coordinate `i` equal to `+sqrt(dt)` when bit `i` of `b` is set
//! and `-sqrt(dt)` otherwise. Under the base measure all branches carry
//! probability `2^-d`, so one-step increments satisfy `E[dW] = 0` and
//! `E[dW dW^T] = dt I` exactly.
//!
//! Two layouts are supported. `NonRecombining` trees keep one node per path
//! and grow like `2^(d N)`; they expose path objects (stochastic integrals,
//! Doob decompositions). `Recombining` trees share nodes with equal
//! coordinate-wise sign sums, grow polynomially, and are only valid for
//! state-Markov payloads, which is the caller's responsibility.

use std::collections::BTreeMap;
use std::fmt;

/// Hard ceiling on the number of nodes a scaffold may allocate.
pub const DEFAULT_NODE_BUDGET: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub enum ScaffoldError {
    BudgetExceeded { required: u128, budget: usize },
    InvalidGrid { reason: String },
    /// The operation needs path-level information a recombining tree lacks.
    PathDependent { op: &'static str },
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    InvalidTransition { node: usize, reason: String },
    /// Edge weights imply different cumulative densities along different
    /// paths into the same shared node.
    InconsistentDensity { node: usize },
    NotACut { leaf: usize, hits: usize },
    TimeOutOfRange { k: usize, steps: usize },
}

impl fmt::Display for ScaffoldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScaffoldError::BudgetExceeded { required, budget } => {
                write!(f, "scaffold needs {required} nodes, budget is {budget}")
            }
            ScaffoldError::InvalidGrid { reason } => write!(f, "invalid grid: {reason}"),
            ScaffoldError::PathDependent { op } => {
                write!(f, "{op} is path-dependent and needs a nonrecombining scaffold")
            }
            ScaffoldError::LengthMismatch { what, expected, got } => {
                write!(f, "{what}: expected length {expected}, got {got}")
            }
            ScaffoldError::InvalidTransition { node, reason } => {
                write!(f, "invalid transition at node {node}: {reason}")
            }
            ScaffoldError::InconsistentDensity { node } => {
                write!(f, "edge weights give inconsistent density at shared node {node}")
            }
            ScaffoldError::NotACut { leaf, hits } => {
                write!(f, "stopping set hits the path to leaf {leaf} {hits} times, want 1")
            }
            ScaffoldError::TimeOutOfRange { k, steps } => {
                write!(f, "time index {k} out of range 0..={steps}")
            }
        }
    }
}

impl std::error::Error for ScaffoldError {}

/// Uniform time grid on `[0, T]` with `N` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, ScaffoldError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ScaffoldError::InvalidGrid {
                reason: format!("horizon must be finite and positive, got {horizon}"),
            });
        }
        if steps == 0 {
            return Err(ScaffoldError::InvalidGrid { reason: "steps must be >= 1".into() });
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt() * k as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    NonRecombining,
    Recombining,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::NonRecombining => write!(f, "nonrecombining"),
            Mode::Recombining => write!(f, "recombining"),
        }
    }
}

/// Finite filtered tree carrying the Brownian increments.
///
/// Nodes are indexed breadth-first by time slice; the root is node 0 and
/// node ids are deterministic for a given `(dim, grid, mode)`.
#[derive(Debug, Clone)]
pub struct Scaffold {
    grid: TimeGrid,
    dim: usize,
    mode: Mode,
    sqrt_dt: f64,
    /// Row-major `2^d x d` table of branch signs.
    branch_signs: Vec<f64>,
    times: Vec<u32>,
    /// Flattened per-node state: coordinate-wise sums of branch signs.
    states: Vec<i32>,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
    slices: Vec<Vec<usize>>,
}

impl Scaffold {
    pub fn build(dim: usize, grid: TimeGrid, mode: Mode) -> Result<Self, ScaffoldError> {
        Self::build_with_budget(dim, grid, mode, DEFAULT_NODE_BUDGET)
    }

    pub fn build_with_budget(
        dim: usize,
        grid: TimeGrid,
        mode: Mode,
        budget: usize,
    ) -> Result<Self, ScaffoldError> {
        if dim == 0 || dim > 16 {
            return Err(ScaffoldError::InvalidGrid {
                reason: format!("dimension must be in 1..=16, got {dim}"),
            });
        }
        let required = node_count_for(dim, grid.steps(), mode);
        if required > budget as u128 {
            return Err(ScaffoldError::BudgetExceeded { required, budget });
        }

        let branches = 1usize << dim;
        let sqrt_dt = grid.dt().sqrt();
        let mut branch_signs = Vec::with_capacity(branches * dim);
        for b in 0..branches {
            for i in 0..dim {
                branch_signs.push(if (b >> i) & 1 == 1 { 1.0 } else { -1.0 });
            }
        }

        let total = required as usize;
        let mut times = Vec::with_capacity(total);
        let mut states: Vec<i32> = Vec::with_capacity(total * dim);
        let mut succ: Vec<Vec<usize>> = Vec::with_capacity(total);
        let mut pred: Vec<Vec<usize>> = Vec::with_capacity(total);
        let mut slices: Vec<Vec<usize>> = Vec::with_capacity(grid.steps() + 1);

        times.push(0);
        states.extend(std::iter::repeat(0).take(dim));
        succ.push(Vec::new());
        pred.push(Vec::new());
        slices.push(vec![0]);

        for k in 0..grid.steps() {
            let current = slices[k].clone();
            let mut next_slice = Vec::new();
            // Recombining slices key nodes by state; BTreeMap keeps the
            // child ordering deterministic.
            let mut by_state: BTreeMap<Vec<i32>, usize> = BTreeMap::new();
            for &node in &current {
                let mut children = Vec::with_capacity(branches);
                for b in 0..branches {
                    let mut child_state: Vec<i32> = Vec::with_capacity(dim);
                    for i in 0..dim {
                        let sign = if (b >> i) & 1 == 1 { 1 } else { -1 };
                        child_state.push(states[node * dim + i] + sign);
                    }
                    let child = match mode {
                        Mode::NonRecombining => {
                            let id = times.len();
                            times.push((k + 1) as u32);
                            states.extend_from_slice(&child_state);
                            succ.push(Vec::new());
                            pred.push(vec![node]);
                            next_slice.push(id);
                            id
                        }
                        Mode::Recombining => match by_state.get(&child_state) {
                            Some(&id) => {
                                pred[id].push(node);
                                id
                            }
                            None => {
                                let id = times.len();
                                times.push((k + 1) as u32);
                                states.extend_from_slice(&child_state);
                                succ.push(Vec::new());
                                pred.push(vec![node]);
                                by_state.insert(child_state, id);
                                next_slice.push(id);
                                id
                            }
                        },
                    };
                    children.push(child);
                }
                succ[node] = children;
            }
            slices.push(next_slice);
        }

        Ok(Scaffold { grid, dim, mode, sqrt_dt, branch_signs, times, states, succ, pred, slices })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn node_count(&self) -> usize {
        self.times.len()
    }

    pub fn branch_count(&self) -> usize {
        1 << self.dim
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn time_of(&self, node: usize) -> usize {
        self.times[node] as usize
    }

    pub fn state_of(&self, node: usize) -> &[i32] {
        &self.states[node * self.dim..(node + 1) * self.dim]
    }

    pub fn successors(&self, node: usize) -> &[usize] {
        &self.succ[node]
    }

    pub fn predecessors(&self, node: usize) -> &[usize] {
        &self.pred[node]
    }

    pub fn is_terminal(&self, node: usize) -> bool {
        self.times[node] as usize == self.grid.steps()
    }

    pub fn slice(&self, k: usize) -> &[usize] {
        &self.slices[k]
    }

    pub fn leaves(&self) -> &[usize] {
        &self.slices[self.grid.steps()]
    }

    /// Sign of coordinate `i` along branch `b`.
    pub fn branch_sign(&self, branch: usize, i: usize) -> f64 {
        self.branch_signs[branch * self.dim + i]
    }

    /// Increment vector along branch `b`; entries are `+-sqrt(dt)`.
    pub fn increment(&self, branch: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.branch_sign(branch, i) * self.sqrt_dt).collect()
    }

    pub fn increment_component(&self, branch: usize, i: usize) -> f64 {
        self.branch_sign(branch, i) * self.sqrt_dt
    }

    /// Base probability of each branch, `2^-d` (an exact dyadic).
    pub fn base_probability(&self) -> f64 {
        1.0 / self.branch_count() as f64
    }

    /// Unique parent of a node on a nonrecombining tree.
    pub fn parent(&self, node: usize) -> Result<Option<usize>, ScaffoldError> {
        if self.mode == Mode::Recombining {
            return Err(ScaffoldError::PathDependent { op: "parent" });
        }
        Ok(self.pred[node].first().copied())
    }

    /// Ancestor of `node` on the slice at time `k` (nonrecombining only).
    pub fn ancestor_at(&self, node: usize, k: usize) -> Result<usize, ScaffoldError> {
        if self.mode == Mode::Recombining {
            return Err(ScaffoldError::PathDependent { op: "ancestor_at" });
        }
        let t = self.time_of(node);
        if k > t {
            return Err(ScaffoldError::TimeOutOfRange { k, steps: t });
        }
        let mut cur = node;
        for _ in k..t {
            cur = self.pred[cur][0];
        }
        Ok(cur)
    }

    /// All leaves below `node` (any mode; on recombining trees this is the
    /// set of reachable terminal states).
    pub fn subtree_leaves(&self, node: usize) -> Vec<usize> {
        let mut seen = vec![false; self.node_count()];
        let mut stack = vec![node];
        let mut out = Vec::new();
        while let Some(n) = stack.pop() {
            if seen[n] {
                continue;
            }
            seen[n] = true;
            if self.is_terminal(n) {
                out.push(n);
            } else {
                stack.extend(self.succ[n].iter().copied());
            }
        }
        out.sort_unstable();
        out
    }

    /// Coordinate `i` of the Brownian path, `W^i_k = sqrt(dt) * state_i`.
    pub fn brownian_component(&self, i: usize) -> AdaptedProcess {
        let values =
            (0..self.node_count()).map(|n| self.states[n * self.dim + i] as f64 * self.sqrt_dt);
        AdaptedProcess { values: values.collect() }
    }

    /// Sum of the Brownian coordinates, the canonical scalar state.
    pub fn brownian_sum(&self) -> AdaptedProcess {
        let values = (0..self.node_count()).map(|n| {
            let s: i32 = self.state_of(n).iter().sum();
            s as f64 * self.sqrt_dt
        });
        AdaptedProcess { values: values.collect() }
    }

    /// One-line structured description of the tree.
    pub fn describe(&self) -> String {
        format!(
            "scaffold d={} N={} T={} mode={} nodes={}",
            self.dim,
            self.grid.steps(),
            self.grid.horizon(),
            self.mode,
            self.node_count()
        )
    }
}

/// Number of nodes a scaffold will allocate, computed before building.
pub fn node_count_for(dim: usize, steps: usize, mode: Mode) -> u128 {
    let mut total: u128 = 0;
    for k in 0..=steps {
        let layer = match mode {
            Mode::NonRecombining => (1u128 << dim).saturating_pow(k as u32),
            Mode::Recombining => (k as u128 + 1).saturating_pow(dim as u32),
        };
        total = total.saturating_add(layer);
    }
    total
}

/// One real value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    values: Vec<f64>,
}

impl AdaptedProcess {
    pub fn zeros(s: &Scaffold) -> Self {
        AdaptedProcess { values: vec![0.0; s.node_count()] }
    }

    pub fn constant(s: &Scaffold, c: f64) -> Self {
        AdaptedProcess { values: vec![c; s.node_count()] }
    }

    pub fn from_fn(s: &Scaffold, f: impl Fn(usize, usize) -> f64) -> Self {
        let values = (0..s.node_count()).map(|n| f(s.time_of(n), n)).collect();
        AdaptedProcess { values }
    }

    pub fn from_values(s: &Scaffold, values: Vec<f64>) -> Result<Self, ScaffoldError> {
        if values.len() != s.node_count() {
            return Err(ScaffoldError::LengthMismatch {
                what: "adapted process",
                expected: s.node_count(),
                got: values.len(),
            });
        }
        Ok(AdaptedProcess { values })
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn set(&mut self, node: usize, v: f64) {
        self.values[node] = v;
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

    /// Values on the terminal slice, in leaf order.
    pub fn terminal_values(&self, s: &Scaffold) -> Vec<f64> {
        s.leaves().iter().map(|&n| self.values[n]).collect()
    }
}

impl std::ops::Index<usize> for AdaptedProcess {
    type Output = f64;
    fn index(&self, node: usize) -> &f64 {
        &self.values[node]
    }
}

/// One `R^d` control per node, read on the step leaving the node; entries
/// at terminal nodes are allocated but never used.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictableProcess {
    dim: usize,
    controls: Vec<f64>,
}

impl PredictableProcess {
    pub fn zeros(s: &Scaffold) -> Self {
        PredictableProcess { dim: s.dim(), controls: vec![0.0; s.node_count() * s.dim()] }
    }

    pub fn constant(s: &Scaffold, v: &[f64]) -> Result<Self, ScaffoldError> {
        if v.len() != s.dim() {
            return Err(ScaffoldError::LengthMismatch {
                what: "control vector",
                expected: s.dim(),
                got: v.len(),
            });
        }
        let mut controls = Vec::with_capacity(s.node_count() * s.dim());
        for _ in 0..s.node_count() {
            controls.extend_from_slice(v);
        }
        Ok(PredictableProcess { dim: s.dim(), controls })
    }

    pub fn from_fn(s: &Scaffold, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut controls = Vec::with_capacity(s.node_count() * s.dim());
        for n in 0..s.node_count() {
            for i in 0..s.dim() {
                controls.push(f(s.time_of(n), n, i));
            }
        }
        PredictableProcess { dim: s.dim(), controls }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn control(&self, node: usize) -> &[f64] {
        &self.controls[node * self.dim..(node + 1) * self.dim]
    }

    pub fn set_control(&mut self, node: usize, v: &[f64]) {
        self.controls[node * self.dim..(node + 1) * self.dim].copy_from_slice(v);
    }
}

/// Transition probabilities per node plus cumulative density against the
/// base measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    branches: usize,
    /// Flattened `node x branch` transition matrix; terminal rows are zero.
    trans: Vec<f64>,
    density: Vec<f64>,
}

impl Measure {
    pub fn base(s: &Scaffold) -> Self {
        let b = s.branch_count();
        let p = s.base_probability();
        let mut trans = vec![0.0; s.node_count() * b];
        for n in 0..s.node_count() {
            if !s.is_terminal(n) {
                for j in 0..b {
                    trans[n * b + j] = p;
                }
            }
        }
        Measure { branches: b, trans, density: vec![1.0; s.node_count()] }
    }

    /// Build a measure from per-edge weights. Each non-terminal node must
    /// get strictly positive branch probabilities summing to one; densities
    /// are cumulated edge ratio products and must agree across the parents
    /// of shared nodes.
    pub fn from_edge_weights(
        s: &Scaffold,
        weight: impl Fn(usize, usize) -> f64,
    ) -> Result<Self, ScaffoldError> {
        let b = s.branch_count();
        let base = s.base_probability();
        let mut trans = vec![0.0; s.node_count() * b];
        for n in 0..s.node_count() {
            if s.is_terminal(n) {
                continue;
            }
            let mut sum = 0.0;
            for j in 0..b {
                let w = weight(n, j);
                if !(w.is_finite() && w > 0.0) {
                    return Err(ScaffoldError::InvalidTransition {
                        node: n,
                        reason: format!("branch {j} weight {w} must be finite and > 0"),
                    });
                }
                trans[n * b + j] = w;
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(ScaffoldError::InvalidTransition {
                    node: n,
                    reason: format!("branch weights sum to {sum}, want 1"),
                });
            }
        }

        let mut density = vec![f64::NAN; s.node_count()];
        density[s.root()] = 1.0;
        for k in 0..s.steps() {
            for &n in s.slice(k) {
                for (j, &c) in s.successors(n).iter().enumerate() {
                    let d = density[n] * trans[n * b + j] / base;
                    if density[c].is_nan() {
                        density[c] = d;
                    } else if (density[c] - d).abs() > 1e-10 * density[c].abs().max(1.0) {
                        return Err(ScaffoldError::InconsistentDensity { node: c });
                    }
                }
            }
        }
        Ok(Measure { branches: b, trans, density })
    }

    pub fn probability(&self, node: usize, branch: usize) -> f64 {
        self.trans[node * self.branches + branch]
    }

    /// Likelihood ratio of the node's atom against the base measure.
    pub fn density(&self, node: usize) -> f64 {
        self.density[node]
    }

    /// Probability of reaching `node` from the root.
    pub fn node_probability(&self, s: &Scaffold, node: usize) -> f64 {
        let k = s.time_of(node);
        self.density[node] * s.base_probability().powi(k as i32) * {
            // Base path probabilities on a recombining tree aggregate over
            // the paths into the node; count them.
            if s.mode() == Mode::Recombining {
                path_count(s, node) as f64
            } else {
                1.0
            }
        }
    }

    /// One-step conditional expectation of values on slice `k+1`.
    pub fn step_expectation(&self, s: &Scaffold, node: usize, next: impl Fn(usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for (j, &c) in s.successors(node).iter().enumerate() {
            acc += self.probability(node, j) * next(c);
        }
        acc
    }

    /// Expectation of a terminal payoff under this measure.
    pub fn terminal_expectation(&self, s: &Scaffold, terminal: &[f64]) -> f64 {
        let slice_values = condexp_terminal(s, self, terminal, 0);
        slice_values[0]
    }
}

fn path_count(s: &Scaffold, node: usize) -> u128 {
    let mut counts = vec![0u128; s.node_count()];
    counts[s.root()] = 1;
    for k in 0..s.time_of(node) {
        for &n in s.slice(k) {
            if counts[n] == 0 {
                continue;
            }
            for &c in s.successors(n) {
                counts[c] += counts[n];
            }
        }
    }
    counts[node]
}

/// Condition a terminal payoff (leaf order) down to time `k`; returns one
/// value per node of slice `k`, in slice order.
pub fn condexp_terminal(
    s: &Scaffold,
    mu: &Measure,
    terminal: &[f64],
    k: usize,
) -> Vec<f64> {
    let mut values = vec![0.0; s.node_count()];
    for (i, &leaf) in s.leaves().iter().enumerate() {
        values[leaf] = terminal[i];
    }
    for j in (k..s.steps()).rev() {
        for &n in s.slice(j) {
            values[n] = mu.step_expectation(s, n, |c| values[c]);
        }
    }
    s.slice(k).iter().map(|&n| values[n]).collect()
}

/// Condition slice-`k2` values (slice order) down to slice `k1 <= k2`.
pub fn condexp_between(
    s: &Scaffold,
    mu: &Measure,
    at: &[f64],
    k2: usize,
    k1: usize,
) -> Result<Vec<f64>, ScaffoldError> {
    if k2 > s.steps() || k1 > k2 {
        return Err(ScaffoldError::TimeOutOfRange { k: k2.max(k1), steps: s.steps() });
    }
    if at.len() != s.slice(k2).len() {
        return Err(ScaffoldError::LengthMismatch {
            what: "slice values",
            expected: s.slice(k2).len(),
            got: at.len(),
        });
    }
    let mut values = vec![0.0; s.node_count()];
    for (i, &n) in s.slice(k2).iter().enumerate() {
        values[n] = at[i];
    }
    for j in (k1..k2).rev() {
        for &n in s.slice(j) {
            values[n] = mu.step_expectation(s, n, |c| values[c]);
        }
    }
    Ok(s.slice(k1).iter().map(|&n| values[n]).collect())
}

/// Conditional expectation of the terminal slice of an adapted process,
/// returned on slice `k`.
pub fn conditional_expectation(
    s: &Scaffold,
    mu: &Measure,
    x: &AdaptedProcess,
    k: usize,
) -> Result<Vec<f64>, ScaffoldError> {
    if x.len() != s.node_count() {
        return Err(ScaffoldError::LengthMismatch {
            what: "adapted process",
            expected: s.node_count(),
            got: x.len(),
        });
    }
    if k > s.steps() {
        return Err(ScaffoldError::TimeOutOfRange { k, steps: s.steps() });
    }
    let terminal = x.terminal_values(s);
    Ok(condexp_terminal(s, mu, &terminal, k))
}

/// Closure of a terminal payoff: `E[xi | F_k]` at every node.
pub fn martingale_closure(
    s: &Scaffold,
    mu: &Measure,
    terminal: &[f64],
) -> Result<AdaptedProcess, ScaffoldError> {
    if terminal.len() != s.leaves().len() {
        return Err(ScaffoldError::LengthMismatch {
            what: "terminal payoff",
            expected: s.leaves().len(),
            got: terminal.len(),
        });
    }
    let mut values = vec![0.0; s.node_count()];
    for (i, &leaf) in s.leaves().iter().enumerate() {
        values[leaf] = terminal[i];
    }
    for j in (0..s.steps()).rev() {
        for &n in s.slice(j) {
            values[n] = mu.step_expectation(s, n, |c| values[c]);
        }
    }
    Ok(AdaptedProcess { values })
}

/// Path sums of `Z . dW`; starts at zero, so the result is a martingale
/// under the base measure. Nonrecombining only.
pub fn stochastic_integral(
    s: &Scaffold,
    z: &PredictableProcess,
) -> Result<AdaptedProcess, ScaffoldError> {
    if s.mode() == Mode::Recombining {
        return Err(ScaffoldError::PathDependent { op: "stochastic_integral" });
    }
    if z.dim() != s.dim() {
        return Err(ScaffoldError::LengthMismatch {
            what: "control dimension",
            expected: s.dim(),
            got: z.dim(),
        });
    }
    let mut values = vec![0.0; s.node_count()];
    for k in 0..s.steps() {
        for &n in s.slice(k) {
            let zn = z.control(n);
            for (j, &c) in s.successors(n).iter().enumerate() {
                let mut dot = 0.0;
                for i in 0..s.dim() {
                    dot += zn[i] * s.increment_component(j, i);
                }
                values[c] = values[n] + dot;
            }
        }
    }
    Ok(AdaptedProcess { values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupermartingaleReport {
    pub is_supermartingale: bool,
    /// Largest value of `E[x_{k+1} | node] - x_node`; positive means the
    /// supermartingale inequality fails by that much.
    pub worst_violation: f64,
    pub worst_node: Option<usize>,
}

/// Check `x_k >= E[x_{k+1} | F_k]` at every non-terminal node.
pub fn is_supermartingale(
    s: &Scaffold,
    mu: &Measure,
    x: &AdaptedProcess,
    tol: f64,
) -> Result<SupermartingaleReport, ScaffoldError> {
    if x.len() != s.node_count() {
        return Err(ScaffoldError::LengthMismatch {
            what: "adapted process",
            expected: s.node_count(),
            got: x.len(),
        });
    }
    let mut worst = f64::NEG_INFINITY;
    let mut worst_node = None;
    for k in 0..s.steps() {
        for &n in s.slice(k) {
            let e = mu.step_expectation(s, n, |c| x.value(c));
            let violation = e - x.value(n);
            if violation > worst {
                worst = violation;
                worst_node = Some(n);
            }
        }
    }
    if worst_node.is_none() {
        worst = 0.0;
    }
    Ok(SupermartingaleReport {
        is_supermartingale: worst <= tol,
        worst_violation: worst,
        worst_node,
    })
}

/// A stopping time given as the set of nodes where it fires; every
/// root-to-leaf path must hit the set exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingTime {
    stopped: Vec<bool>,
}

impl StoppingTime {
    /// Deterministic stopping time at slice `k`.
    pub fn at_time(s: &Scaffold, k: usize) -> Result<Self, ScaffoldError> {
        if k > s.steps() {
            return Err(ScaffoldError::TimeOutOfRange { k, steps: s.steps() });
        }
        let mut stopped = vec![false; s.node_count()];
        for &n in s.slice(k) {
            stopped[n] = true;
        }
        Ok(StoppingTime { stopped })
    }

    pub fn from_flags(s: &Scaffold, stopped: Vec<bool>) -> Result<Self, ScaffoldError> {
        if stopped.len() != s.node_count() {
            return Err(ScaffoldError::LengthMismatch {
                what: "stopping flags",
                expected: s.node_count(),
                got: stopped.len(),
            });
        }
        let st = StoppingTime { stopped };
        st.validate(s)?;
        Ok(st)
    }

    pub fn is_stopped(&self, node: usize) -> bool {
        self.stopped[node]
    }

    /// Nodes in the stopping set.
    pub fn cut(&self, s: &Scaffold) -> Vec<usize> {
        (0..s.node_count()).filter(|&n| self.stopped[n]).collect()
    }

    /// Check the exactly-one-hit-per-path property. Works on both modes:
    /// `hits(n)` counts flags on a worst and best path below `n`.
    fn validate(&self, s: &Scaffold) -> Result<(), ScaffoldError> {
        // min/max number of flags on paths from node to leaves, memoized.
        let mut lo = vec![usize::MAX; s.node_count()];
        let mut hi = vec![usize::MAX; s.node_count()];
        for k in (0..=s.steps()).rev() {
            for &n in s.slice(k) {
                let own = usize::from(self.stopped[n]);
                if s.is_terminal(n) {
                    lo[n] = own;
                    hi[n] = own;
                } else {
                    let mut min_c = usize::MAX;
                    let mut max_c = 0;
                    for &c in s.successors(n) {
                        min_c = min_c.min(lo[c]);
                        max_c = max_c.max(hi[c]);
                    }
                    lo[n] = own + min_c;
                    hi[n] = own + max_c;
                }
            }
        }
        if lo[s.root()] != 1 || hi[s.root()] != 1 {
            // Report some offending leaf for diagnostics.
            let leaf = *s.leaves().first().unwrap_or(&0);
            return Err(ScaffoldError::NotACut {
                leaf,
                hits: if hi[s.root()] != 1 { hi[s.root()] } else { lo[s.root()] },
            });
        }
        Ok(())
    }

    /// Partition of all nodes into strictly-before, at, and after the cut.
    pub fn classify(&self, s: &Scaffold) -> Vec<CutPosition> {
        let mut pos = vec![CutPosition::Before; s.node_count()];
        for k in 0..=s.steps() {
            for &n in s.slice(k) {
                if self.stopped[n] {
                    pos[n] = CutPosition::At;
                } else if s.predecessors(n).iter().any(|&p| pos[p] != CutPosition::Before) {
                    pos[n] = CutPosition::After;
                }
            }
        }
        pos
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutPosition {
    Before,
    At,
    After,
}
