//! Randomized audits of the operator's structural laws, limit behaviour
//! along payoff and generator sequences, and an exhaustive dual
//! certificate search on small trees.
//!
//! Every audit draws its cases from a seeded stream, records an FNV-1a
//! hash of the exact inputs next to the observed margin, and reports the
//! worst case. A margin is a signed satisfaction distance: nonnegative
//! means the law held, negative means it failed by that amount.

use std::cell::{Cell, RefCell};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::generator::GeneratorSpec;
use crate::scaffold::{Measure, Mode, Scaffold, ScaffoldError};
use crate::solver::{
    backward_from_slice, backward_induce, SolveError, SolverOptions, Supersolution,
    TerminalCondition,
};

#[derive(Debug)]
pub enum AnalysisError {
    /// A hypothesis of the law under test fails on the supplied data.
    PreconditionUnmet { what: String },
    /// An enumeration would exceed the hard size cap.
    BudgetExceeded { what: &'static str, limit: usize, got: usize },
    Scaffold(ScaffoldError),
    Solve(SolveError),
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisError::PreconditionUnmet { what } => write!(f, "precondition unmet: {what}"),
            AnalysisError::BudgetExceeded { what, limit, got } => {
                write!(f, "{what}: size {got} exceeds budget {limit}")
            }
            AnalysisError::Scaffold(e) => write!(f, "{e}"),
            AnalysisError::Solve(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for AnalysisError {}

impl From<ScaffoldError> for AnalysisError {
    fn from(e: ScaffoldError) -> Self {
        AnalysisError::Scaffold(e)
    }
}

impl From<SolveError> for AnalysisError {
    fn from(e: SolveError) -> Self {
        AnalysisError::Solve(e)
    }
}

/// FNV-1a over exact bit patterns; ties a record to its sampled inputs
/// without storing them.
struct InputHash(u64);

impl InputHash {
    fn new() -> Self {
        InputHash(0xcbf2_9ce4_8422_2325)
    }

    fn byte(&mut self, b: u8) {
        self.0 ^= u64::from(b);
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
    }

    fn u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.byte(b);
        }
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

fn case_seed(seed: u64, property: &str, index: usize) -> u64 {
    let mut h = InputHash::new();
    h.u64(seed);
    for b in property.bytes() {
        h.byte(b);
    }
    h.u64(index as u64);
    h.finish()
}

/// Independent uniform draws on `[-2, 2]`, one per leaf.
pub fn random_terminal(s: &Scaffold, rng: &mut impl Rng) -> TerminalCondition {
    let values = (0..s.leaves().len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
    TerminalCondition::from_leaf_values(s, values).expect("uniform draws are finite")
}

#[derive(Debug, Clone, Copy)]
pub struct CaseRecord {
    pub property: &'static str,
    pub index: usize,
    /// Seed of this case's private generator stream.
    pub seed: u64,
    pub input_hash: u64,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct PropertyOutcome {
    pub property: &'static str,
    pub cases: usize,
    pub worst_margin: f64,
    pub worst_case: Option<usize>,
    /// Reason the property was not exercised, when it was not.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub seed: u64,
    pub outcomes: Vec<PropertyOutcome>,
    pub records: Vec<CaseRecord>,
}

impl PropertyReport {
    /// Every executed case sits above `-tol`.
    pub fn pass(&self, tol: f64) -> bool {
        self.outcomes.iter().all(|o| o.skipped.is_some() || o.worst_margin >= -tol)
    }

    pub fn outcome(&self, property: &str) -> Option<&PropertyOutcome> {
        self.outcomes.iter().find(|o| o.property == property)
    }
}

fn run_property(
    outcomes: &mut Vec<PropertyOutcome>,
    records: &mut Vec<CaseRecord>,
    property: &'static str,
    cases: usize,
    suite_seed: u64,
    mut case: impl FnMut(&mut ChaCha8Rng, &mut InputHash) -> Result<f64, AnalysisError>,
) -> Result<(), AnalysisError> {
    let mut worst = f64::INFINITY;
    let mut worst_case = None;
    for index in 0..cases {
        let seed = case_seed(suite_seed, property, index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hash = InputHash::new();
        let margin = case(&mut rng, &mut hash)?;
        records.push(CaseRecord { property, index, seed, input_hash: hash.finish(), margin });
        if margin < worst {
            worst = margin;
            worst_case = Some(index);
        }
    }
    outcomes.push(PropertyOutcome { property, cases, worst_margin: worst, worst_case, skipped: None });
    Ok(())
}

fn skip(outcomes: &mut Vec<PropertyOutcome>, property: &'static str, why: &str) {
    outcomes.push(PropertyOutcome {
        property,
        cases: 0,
        worst_margin: f64::INFINITY,
        worst_case: None,
        skipped: Some(why.to_string()),
    });
}

fn slice_positions(s: &Scaffold, k: usize) -> Vec<usize> {
    let mut pos = vec![usize::MAX; s.node_count()];
    for (i, &n) in s.slice(k).iter().enumerate() {
        pos[n] = i;
    }
    pos
}

/// Randomized audit of the operator's structural laws on one scaffold.
///
/// Executed properties, each `cases` times:
///
/// - `monotonicity`: a leafwise-larger payoff never lowers the solution.
/// - `convexity`: values of payoff mixtures never exceed mixed values.
/// - `cash_additivity` / `cash_superadditivity` / `cash_subadditivity`
///   (one of them, picked by the generator's y-flags): shifting the
///   payoff by a time-`t` measurable amount moves the time-`t` values
///   exactly / at least / at most by that amount.
/// - `flow`: restarting the induction from an intermediate slice
///   reproduces the earlier values.
/// - `time_consistency`: paying the time-`t` value at the horizon does
///   not change the root value.
/// - `projectivity`: masking the payoff by a time-`t` event commutes
///   with solving.
///
/// The last three need path resolution or a driver that rests at zero
/// control; inapplicable properties are reported as skipped, not failed.
pub fn property_suite(
    s: &Scaffold,
    g: &GeneratorSpec,
    mu: &Measure,
    seed: u64,
    cases: usize,
    opts: &SolverOptions,
) -> Result<PropertyReport, AnalysisError> {
    let mut outcomes = Vec::new();
    let mut records = Vec::new();

    let path_tree = s.mode() == Mode::NonRecombining;
    let multi_step = s.steps() >= 2;
    let rest_zero = g.vanishes_at_zero_control(256, seed ^ 0x6f72_6967);
    let leaves = s.leaves().len();

    let solve = |xi: &TerminalCondition| -> Result<Supersolution, SolveError> {
        backward_induce(s, g, xi, mu, opts)
    };

    run_property(&mut outcomes, &mut records, "monotonicity", cases, seed, |rng, h| {
        let lo = random_terminal(s, rng);
        let bump: Vec<f64> = (0..leaves).map(|_| rng.gen_range(0.0..1.5)).collect();
        let hi = TerminalCondition::from_leaf_values(
            s,
            lo.values().iter().zip(&bump).map(|(&a, &b)| a + b).collect(),
        )?;
        h.f64s(lo.values());
        h.f64s(&bump);
        let below = solve(&lo)?;
        let above = solve(&hi)?;
        let mut margin = f64::INFINITY;
        for n in 0..s.node_count() {
            margin = margin.min(above.y.value(n) - below.y.value(n));
        }
        Ok(margin)
    })?;

    run_property(&mut outcomes, &mut records, "convexity", cases, seed, |rng, h| {
        let xi1 = random_terminal(s, rng);
        let xi2 = random_terminal(s, rng);
        let lam: f64 = rng.gen_range(0.0..=1.0);
        let mix = xi1.zip_with(s, &xi2, |a, b| lam * a + (1.0 - lam) * b)?;
        h.f64s(xi1.values());
        h.f64s(xi2.values());
        h.f64(lam);
        let a = solve(&xi1)?;
        let b = solve(&xi2)?;
        let m = solve(&mix)?;
        let mut margin = f64::INFINITY;
        for n in 0..s.node_count() {
            let blend = lam * a.y.value(n) + (1.0 - lam) * b.y.value(n);
            margin = margin.min(blend - m.y.value(n));
        }
        Ok(margin)
    })?;

    // The cash law's direction is a consequence of how the driver moves
    // with y: flat drivers shift exactly, increasing ones overshoot,
    // decreasing ones undershoot.
    let fl = g.flags();
    let cash: Option<(&'static str, i8)> = if fl.y_independent || (fl.increasing_y && fl.decreasing_y)
    {
        Some(("cash_additivity", 0))
    } else if fl.increasing_y {
        Some(("cash_superadditivity", 1))
    } else if fl.decreasing_y {
        Some(("cash_subadditivity", -1))
    } else {
        None
    };
    match cash {
        None => skip(&mut outcomes, "cash_additivity", "driver declares no y-direction"),
        Some((name, _)) if !path_tree => {
            skip(&mut outcomes, name, "measurable shifts need a nonrecombining scaffold")
        }
        Some((name, _)) if !multi_step => skip(&mut outcomes, name, "needs at least two steps"),
        Some((name, dir)) => {
            run_property(&mut outcomes, &mut records, name, cases, seed, |rng, h| {
                let xi = random_terminal(s, rng);
                let t = rng.gen_range(1..s.steps());
                let slice = s.slice(t);
                let m: Vec<f64> = slice
                    .iter()
                    .map(|_| {
                        if dir == 0 {
                            rng.gen_range(-1.0..1.0)
                        } else {
                            rng.gen_range(0.0..1.5)
                        }
                    })
                    .collect();
                h.f64s(xi.values());
                h.u64(t as u64);
                h.f64s(&m);
                let pos = slice_positions(s, t);
                let mut vals = xi.values().to_vec();
                for (i, &leaf) in s.leaves().iter().enumerate() {
                    vals[i] += m[pos[s.ancestor_at(leaf, t)?]];
                }
                let shifted = TerminalCondition::from_leaf_values(s, vals)?;
                let base = solve(&xi)?;
                let moved = solve(&shifted)?;
                let mut margin = f64::INFINITY;
                for (i, &n) in slice.iter().enumerate() {
                    let d = moved.y.value(n) - base.y.value(n) - m[i];
                    margin = margin.min(match dir {
                        0 => -d.abs(),
                        1 => d,
                        _ => -d,
                    });
                }
                Ok(margin)
            })?;
        }
    }

    if multi_step {
        run_property(&mut outcomes, &mut records, "flow", cases, seed, |rng, h| {
            let xi = random_terminal(s, rng);
            let t = rng.gen_range(1..s.steps());
            h.f64s(xi.values());
            h.u64(t as u64);
            let full = solve(&xi)?;
            let hvals: Vec<f64> = s.slice(t).iter().map(|&n| full.y.value(n)).collect();
            let redone = backward_from_slice(s, g, t, &hvals, mu, opts)?;
            let mut margin = f64::INFINITY;
            for n in 0..s.node_count() {
                if s.time_of(n) <= t {
                    margin = margin.min(-(full.y.value(n) - redone[n]).abs());
                }
            }
            Ok(margin)
        })?;
    } else {
        skip(&mut outcomes, "flow", "needs at least two steps");
    }

    let path_law_block = if !path_tree {
        Some("needs a nonrecombining scaffold")
    } else if !multi_step {
        Some("needs at least two steps")
    } else if !rest_zero {
        Some("driver does not vanish at zero control")
    } else {
        None
    };

    match path_law_block {
        Some(why) => {
            skip(&mut outcomes, "time_consistency", why);
            skip(&mut outcomes, "projectivity", why);
        }
        None => {
            run_property(&mut outcomes, &mut records, "time_consistency", cases, seed, |rng, h| {
                let xi = random_terminal(s, rng);
                let t = rng.gen_range(1..s.steps());
                h.f64s(xi.values());
                h.u64(t as u64);
                let full = solve(&xi)?;
                let hvals: Vec<f64> = s.slice(t).iter().map(|&n| full.y.value(n)).collect();
                let pos = slice_positions(s, t);
                let mut vals = vec![0.0; leaves];
                for (i, &leaf) in s.leaves().iter().enumerate() {
                    vals[i] = hvals[pos[s.ancestor_at(leaf, t)?]];
                }
                let ext = TerminalCondition::from_leaf_values(s, vals)?;
                let direct = solve(&ext)?.initial();
                let composed = backward_from_slice(s, g, t, &hvals, mu, opts)?[0];
                Ok(-(direct - composed).abs())
            })?;

            run_property(&mut outcomes, &mut records, "projectivity", cases, seed, |rng, h| {
                let xi = random_terminal(s, rng);
                let t = rng.gen_range(1..s.steps());
                let slice = s.slice(t);
                let mask: Vec<bool> = slice.iter().map(|_| rng.gen_bool(0.5)).collect();
                h.f64s(xi.values());
                h.u64(t as u64);
                for &b in &mask {
                    h.u64(u64::from(b));
                }
                let full = solve(&xi)?;
                let pos = slice_positions(s, t);
                let mut vals = xi.values().to_vec();
                for (i, &leaf) in s.leaves().iter().enumerate() {
                    if !mask[pos[s.ancestor_at(leaf, t)?]] {
                        vals[i] = 0.0;
                    }
                }
                let masked = TerminalCondition::from_leaf_values(s, vals)?;
                let hvals: Vec<f64> = slice
                    .iter()
                    .enumerate()
                    .map(|(i, &n)| if mask[i] { full.y.value(n) } else { 0.0 })
                    .collect();
                let direct = solve(&masked)?.initial();
                let composed = backward_from_slice(s, g, t, &hvals, mu, opts)?[0];
                Ok(-(direct - composed).abs())
            })?;
        }
    }

    Ok(PropertyReport { seed, outcomes, records })
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// Smallest node-wise gap `high - low`; nonnegative when the law holds.
    pub margin: f64,
    pub worst_node: Option<usize>,
    pub low_initial: f64,
    pub high_initial: f64,
}

fn require_ordered_generators(
    s: &Scaffold,
    lower: &GeneratorSpec,
    upper: &GeneratorSpec,
) -> Result<(), AnalysisError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6f72_6465_7221);
    for trial in 0..256 {
        let k = rng.gen_range(0..s.steps());
        let slice = s.slice(k);
        let node = slice[rng.gen_range(0..slice.len())];
        let y = rng.gen_range(-2.0..2.0);
        let mut z: Vec<f64> = (0..s.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if trial % 8 == 0 {
            for v in &mut z {
                *v = 0.0;
            }
        }
        let lo = lower.eval_raw(k, node, y, &z);
        let hi = upper.eval_raw(k, node, y, &z);
        if lo > hi + 1e-12 {
            return Err(AnalysisError::PreconditionUnmet {
                what: format!(
                    "driver {} is not below {}: {lo} > {hi} at y={y}",
                    lower.name(),
                    upper.name()
                ),
            });
        }
    }
    Ok(())
}

/// Comparison law: a pointwise smaller driver and payoff produce a
/// node-wise smaller solution. The payoff order is checked exactly, the
/// driver order on a seeded probe set.
pub fn comparison(
    s: &Scaffold,
    g_low: &GeneratorSpec,
    xi_low: &TerminalCondition,
    g_high: &GeneratorSpec,
    xi_high: &TerminalCondition,
    mu: &Measure,
    opts: &SolverOptions,
) -> Result<ComparisonReport, AnalysisError> {
    if xi_low.len() != xi_high.len() {
        return Err(AnalysisError::PreconditionUnmet {
            what: format!("payoff lengths differ: {} vs {}", xi_low.len(), xi_high.len()),
        });
    }
    for (i, (&a, &b)) in xi_low.values().iter().zip(xi_high.values()).enumerate() {
        if a > b {
            return Err(AnalysisError::PreconditionUnmet {
                what: format!("payoffs unordered at leaf {i}: {a} > {b}"),
            });
        }
    }
    require_ordered_generators(s, g_low, g_high)?;

    let low = backward_induce(s, g_low, xi_low, mu, opts)?;
    let high = backward_induce(s, g_high, xi_high, mu, opts)?;
    let mut margin = f64::INFINITY;
    let mut worst_node = None;
    for n in 0..s.node_count() {
        let d = high.y.value(n) - low.y.value(n);
        if d < margin {
            margin = d;
            worst_node = Some(n);
        }
    }
    Ok(ComparisonReport {
        margin,
        worst_node,
        low_initial: low.initial(),
        high_initial: high.initial(),
    })
}

#[derive(Debug, Clone)]
pub struct LimitReport {
    /// Root value along the sequence.
    pub values: Vec<f64>,
    /// Root value at the limit payoff.
    pub limit_value: f64,
    /// Smallest consecutive increment along `values`.
    pub monotone_margin: f64,
    /// `limit_value` minus the last member value.
    pub final_gap: f64,
}

/// Values along a nondecreasing payoff sequence climb to the value of
/// the limit payoff. The payoff order is a hard precondition.
pub fn monotone_convergence(
    s: &Scaffold,
    g: &GeneratorSpec,
    seq: &[TerminalCondition],
    limit: &TerminalCondition,
    mu: &Measure,
    opts: &SolverOptions,
) -> Result<LimitReport, AnalysisError> {
    if seq.is_empty() {
        return Err(AnalysisError::PreconditionUnmet { what: "empty payoff sequence".into() });
    }
    let mut prev: Option<&TerminalCondition> = None;
    for (j, xi) in seq.iter().chain(std::iter::once(limit)).enumerate() {
        if let Some(p) = prev {
            for (i, (&a, &b)) in p.values().iter().zip(xi.values()).enumerate() {
                if a > b {
                    return Err(AnalysisError::PreconditionUnmet {
                        what: format!("sequence not nondecreasing at member {j}, leaf {i}"),
                    });
                }
            }
        }
        prev = Some(xi);
    }
    let mut values = Vec::with_capacity(seq.len());
    for xi in seq {
        values.push(backward_induce(s, g, xi, mu, opts)?.initial());
    }
    let limit_value = backward_induce(s, g, limit, mu, opts)?.initial();
    let monotone_margin =
        values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let final_gap = limit_value - values[values.len() - 1];
    Ok(LimitReport { values, limit_value, monotone_margin, final_gap })
}

#[derive(Debug, Clone)]
pub struct FatouReport {
    pub member_values: Vec<f64>,
    /// Smallest member value; the liminf of the family cycled as a tail.
    pub liminf_of_values: f64,
    /// Value of the leafwise infimum payoff.
    pub value_of_liminf: f64,
    /// `liminf_of_values - value_of_liminf`; nonnegative when the
    /// inequality holds.
    pub margin: f64,
}

/// Fatou inequality for a finite family cycled as a tail: the value of
/// the leafwise infimum payoff is dominated by every member value.
pub fn fatou_check(
    s: &Scaffold,
    g: &GeneratorSpec,
    members: &[TerminalCondition],
    mu: &Measure,
    opts: &SolverOptions,
) -> Result<FatouReport, AnalysisError> {
    if members.is_empty() {
        return Err(AnalysisError::PreconditionUnmet { what: "empty payoff family".into() });
    }
    let mut floor = members[0].values().to_vec();
    for xi in &members[1..] {
        for (f, &v) in floor.iter_mut().zip(xi.values()) {
            *f = f.min(v);
        }
    }
    let floor = TerminalCondition::from_leaf_values(s, floor)?;
    let value_of_liminf = backward_induce(s, g, &floor, mu, opts)?.initial();
    let mut member_values = Vec::with_capacity(members.len());
    for xi in members {
        member_values.push(backward_induce(s, g, xi, mu, opts)?.initial());
    }
    let liminf_of_values = member_values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(FatouReport {
        member_values,
        liminf_of_values,
        value_of_liminf,
        margin: liminf_of_values - value_of_liminf,
    })
}

#[derive(Debug, Clone)]
pub struct LscReport {
    pub values: Vec<f64>,
    /// Smallest value over the second half of the sequence.
    pub tail_min: f64,
    pub limit_value: f64,
    /// `tail_min - limit_value`; nonnegative when lower semicontinuity
    /// holds at this resolution.
    pub margin: f64,
}

/// Lower semicontinuity along an explicitly convergent payoff sequence:
/// the limit value cannot exceed the tail values.
pub fn lsc_check(
    s: &Scaffold,
    g: &GeneratorSpec,
    seq: &[TerminalCondition],
    limit: &TerminalCondition,
    mu: &Measure,
    opts: &SolverOptions,
) -> Result<LscReport, AnalysisError> {
    if seq.is_empty() {
        return Err(AnalysisError::PreconditionUnmet { what: "empty payoff sequence".into() });
    }
    let mut values = Vec::with_capacity(seq.len());
    for xi in seq {
        values.push(backward_induce(s, g, xi, mu, opts)?.initial());
    }
    let limit_value = backward_induce(s, g, limit, mu, opts)?.initial();
    let tail_min = values[values.len() / 2..].iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LscReport { values, tail_min, limit_value, margin: tail_min - limit_value })
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// Root value per driver in the sequence.
    pub values: Vec<f64>,
    pub limit_value: f64,
    pub monotone_margin: f64,
    pub final_gap: f64,
}

/// Stability in the driver: values along a nondecreasing driver sequence
/// climb to the value under the limit driver. Driver order is checked on
/// seeded probe sets.
pub fn generator_stability(
    s: &Scaffold,
    gens: &[GeneratorSpec],
    limit: &GeneratorSpec,
    xi: &TerminalCondition,
    mu: &Measure,
    opts: &SolverOptions,
) -> Result<StabilityReport, AnalysisError> {
    if gens.is_empty() {
        return Err(AnalysisError::PreconditionUnmet { what: "empty driver sequence".into() });
    }
    for pair in gens.windows(2) {
        require_ordered_generators(s, &pair[0], &pair[1])?;
    }
    require_ordered_generators(s, &gens[gens.len() - 1], limit)?;

    let mut values = Vec::with_capacity(gens.len());
    for g in gens {
        values.push(backward_induce(s, g, xi, mu, opts)?.initial());
    }
    let limit_value = backward_induce(s, limit, xi, mu, opts)?.initial();
    let monotone_margin =
        values.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let final_gap = limit_value - values[values.len() - 1];
    Ok(StabilityReport { values, limit_value, monotone_margin, final_gap })
}

const DUAL_ATOM_CAP: usize = 8;
const DUAL_GRID_CAP: u128 = 200_000;
const DUAL_JOINT_CAP: u128 = 1_500_000_000;

/// Grids for the dual search: one value set reused for every payoff
/// atom, one for every density atom, and an optional local refinement
/// pass around the best coarse density.
#[derive(Debug, Clone)]
pub struct DualGrids {
    pub payoff_values: Vec<f64>,
    pub density_values: Vec<f64>,
    /// Refinement spacing; zero disables the second pass.
    pub refine_step: f64,
    /// Points scanned on each side per coordinate when refining.
    pub refine_radius: usize,
}

#[derive(Debug, Clone)]
pub struct DualCertificate {
    /// Density against the reference measure, leaf order.
    pub density: Vec<f64>,
    /// Expectation of the target payoff under `density`.
    pub expectation: f64,
    /// Empirical convex conjugate of the operator at `density`: the
    /// largest `E[density . payoff] - value(payoff)` over the scan.
    pub conjugate: f64,
    /// `expectation - conjugate`.
    pub lower_bound: f64,
    pub primal: f64,
    /// `primal - lower_bound`; small when the grid contains a
    /// near-optimal density.
    pub gap: f64,
    /// Worst `primal - bound` over every density scanned. The target
    /// payoff itself is always part of the payoff scan, so this stays
    /// above roundoff level by construction.
    pub weak_margin: f64,
    pub payoffs_scanned: usize,
    pub densities_scanned: usize,
}

fn tensor_size(vals: usize, atoms: usize, what: &'static str) -> Result<u128, AnalysisError> {
    let count = (vals as u128).checked_pow(atoms as u32).unwrap_or(u128::MAX);
    if count > DUAL_GRID_CAP {
        return Err(AnalysisError::BudgetExceeded {
            what,
            limit: DUAL_GRID_CAP as usize,
            got: count.min(usize::MAX as u128) as usize,
        });
    }
    Ok(count)
}

fn tensor_scan<E>(
    axes: &[Vec<f64>],
    visit: &mut dyn FnMut(&[f64]) -> Result<(), E>,
) -> Result<(), E> {
    let mut idx = vec![0usize; axes.len()];
    let mut point: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    loop {
        for (i, a) in axes.iter().enumerate() {
            point[i] = a[idx[i]];
        }
        visit(&point)?;
        let mut advanced = false;
        for i in (0..axes.len()).rev() {
            idx[i] += 1;
            if idx[i] < axes[i].len() {
                advanced = true;
                break;
            }
            idx[i] = 0;
        }
        if !advanced {
            return Ok(());
        }
    }
}

/// Exhaustive weak-duality certificate search on a small scaffold.
///
/// Every payoff on the tensor grid is solved once; for each nonnegative
/// density on the density grid the empirical conjugate is formed over
/// that payoff library and the bound `E[density . target] - conjugate`
/// is recorded. The best bound never exceeds the primal value because
/// the target payoff is always appended to the library. Ties keep the
/// first density in scan order, so results are reproducible.
pub fn dual_search(
    s: &Scaffold,
    g: &GeneratorSpec,
    xi: &TerminalCondition,
    grids: &DualGrids,
    mu: &Measure,
    opts: &SolverOptions,
) -> Result<DualCertificate, AnalysisError> {
    let atoms = s.leaves().len();
    if atoms > DUAL_ATOM_CAP {
        return Err(AnalysisError::BudgetExceeded {
            what: "dual atoms",
            limit: DUAL_ATOM_CAP,
            got: atoms,
        });
    }
    if grids.payoff_values.len() < 2 {
        return Err(AnalysisError::PreconditionUnmet {
            what: "payoff grid needs at least two values per atom".into(),
        });
    }
    if grids.density_values.is_empty() {
        return Err(AnalysisError::PreconditionUnmet { what: "density grid is empty".into() });
    }
    for &v in grids.payoff_values.iter().chain(&grids.density_values) {
        if !v.is_finite() {
            return Err(AnalysisError::PreconditionUnmet {
                what: format!("grid value {v} is not finite"),
            });
        }
    }
    if !(grids.refine_step.is_finite() && grids.refine_step >= 0.0) {
        return Err(AnalysisError::PreconditionUnmet {
            what: format!("refinement step {} is invalid", grids.refine_step),
        });
    }

    let pcount = tensor_size(grids.payoff_values.len(), atoms, "payoff grid")?;
    let dcount = tensor_size(grids.density_values.len(), atoms, "density grid")?;
    let refine = grids.refine_step > 0.0 && grids.refine_radius > 0;
    let rcount = if refine {
        tensor_size(2 * grids.refine_radius + 1, atoms, "density refinement")?
    } else {
        0
    };
    let joint = (pcount + 1) * (dcount + rcount);
    if joint > DUAL_JOINT_CAP {
        return Err(AnalysisError::BudgetExceeded {
            what: "dual scan",
            limit: DUAL_JOINT_CAP as usize,
            got: joint.min(usize::MAX as u128) as usize,
        });
    }

    let w: Vec<f64> = s.leaves().iter().map(|&n| mu.node_probability(s, n)).collect();
    let primal = backward_induce(s, g, xi, mu, opts)?.initial();
    let wxi: Vec<f64> = w.iter().zip(xi.values()).map(|(&wi, &v)| wi * v).collect();

    // Payoff library: weighted atoms plus the solved root value, flat.
    let mut wpf: Vec<f64> = Vec::with_capacity((pcount as usize + 1) * atoms);
    let mut roots: Vec<f64> = Vec::with_capacity(pcount as usize + 1);
    let paxes = vec![grids.payoff_values.clone(); atoms];
    tensor_scan(&paxes, &mut |point: &[f64]| -> Result<(), AnalysisError> {
        let tc = TerminalCondition::from_leaf_values(s, point.to_vec())?;
        let v = backward_induce(s, g, &tc, mu, opts)?.initial();
        for (i, &x) in point.iter().enumerate() {
            wpf.push(w[i] * x);
        }
        roots.push(v);
        Ok(())
    })?;
    // The target itself joins the library, making every bound weak-dual
    // valid by construction.
    wpf.extend_from_slice(&wxi);
    roots.push(primal);

    let conj_of = |nu: &[f64]| -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (p, &v) in roots.iter().enumerate() {
            let row = &wpf[p * atoms..(p + 1) * atoms];
            let mut dot = 0.0;
            for i in 0..atoms {
                dot += nu[i] * row[i];
            }
            if dot - v > best {
                best = dot - v;
            }
        }
        best
    };

    // Interior mutability: the scan callback updates the incumbent while
    // the refinement stage reads it between passes.
    let best: RefCell<Option<(Vec<f64>, f64, f64, f64)>> = RefCell::new(None);
    let weak_margin = Cell::new(f64::INFINITY);
    let densities_scanned = Cell::new(0usize);
    let consider = |nu: &[f64]| {
        if nu.iter().any(|&v| v < 0.0) {
            return;
        }
        densities_scanned.set(densities_scanned.get() + 1);
        let e: f64 = nu.iter().zip(&wxi).map(|(&a, &b)| a * b).sum();
        let c = conj_of(nu);
        let bound = e - c;
        if primal - bound < weak_margin.get() {
            weak_margin.set(primal - bound);
        }
        let mut slot = best.borrow_mut();
        let better = match &*slot {
            None => true,
            Some((_, _, _, b)) => bound > *b,
        };
        if better {
            *slot = Some((nu.to_vec(), e, c, bound));
        }
    };

    let daxes = vec![grids.density_values.clone(); atoms];
    tensor_scan(&daxes, &mut |p: &[f64]| -> Result<(), AnalysisError> {
        consider(p);
        Ok(())
    })?;

    if refine {
        let center = match &*best.borrow() {
            Some((nu, _, _, _)) => nu.clone(),
            None => {
                return Err(AnalysisError::PreconditionUnmet {
                    what: "density grid has no nonnegative point".into(),
                })
            }
        };
        let r = grids.refine_radius as isize;
        let raxes: Vec<Vec<f64>> = center
            .iter()
            .map(|&c| {
                let mut vals: Vec<f64> = (-r..=r)
                    .map(|j| c + j as f64 * grids.refine_step)
                    .filter(|&v| v >= 0.0)
                    .collect();
                if vals.is_empty() {
                    vals.push(c.max(0.0));
                }
                vals
            })
            .collect();
        tensor_scan(&raxes, &mut |p: &[f64]| -> Result<(), AnalysisError> {
            consider(p);
            Ok(())
        })?;
    }

    let (density, expectation, conjugate, lower_bound) = match best.into_inner() {
        Some(b) => b,
        None => {
            return Err(AnalysisError::PreconditionUnmet {
                what: "density grid has no nonnegative point".into(),
            })
        }
    };
    Ok(DualCertificate {
        density,
        expectation,
        conjugate,
        lower_bound,
        primal,
        gap: primal - lower_bound,
        weak_margin: weak_margin.get(),
        payoffs_scanned: roots.len(),
        densities_scanned: densities_scanned.get(),
    })
}
