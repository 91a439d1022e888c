//! Randomized checks of the invariants each module promises: exact branch
//! laws, the tower property, martingale integrals, conjugate shape, solver
//! minimality and slack accounting, pasting closure, Doob identities, and
//! the drift of tilted measures.

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use minsup::calculus::{
    doob_decompose, epsilon_optimal_paste, girsanov_reduce, paste_min, paste_partition,
};
use minsup::generator::{conjugate_z, falsify_flags, GeneratorFlags};
use minsup::scaffold::{
    condexp_between, conditional_expectation, is_supermartingale, martingale_closure,
    stochastic_integral, StoppingTime,
};
use minsup::solver::Supersolution;
use minsup::{
    backward_induce, verify_supersolution, AdaptedProcess, GeneratorSpec, Measure, Mode,
    PredictableProcess, Scaffold, SolverOptions, TerminalCondition, TimeGrid,
};

fn tree(dim: usize, steps: usize, mode: Mode) -> Scaffold {
    Scaffold::build(dim, TimeGrid::new(1.0, steps).unwrap(), mode).unwrap()
}

fn leaf_payoff(s: &Scaffold, seed: u64) -> TerminalCondition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..s.leaves().len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
    TerminalCondition::from_leaf_values(s, values).unwrap()
}

fn any_mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::NonRecombining), Just(Mode::Recombining)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // Per-node transition probabilities sum to one and one-step increments
    // match the Brownian moments: mean zero and covariance dt * identity,
    // up to one rounding of the running sum.
    #[test]
    fn branch_laws_are_exact(
        dim in 1usize..=3,
        steps in 1usize..=4,
        mode in any_mode(),
    ) {
        let s = tree(dim, steps, mode);
        let mu = Measure::base(&s);
        let dt = s.dt();
        for k in 0..s.steps() {
            for &node in s.slice(k) {
                let branches = s.successors(node).len();
                let total: f64 = (0..branches).map(|b| mu.probability(node, b)).sum();
                prop_assert!((total - 1.0).abs() <= 1e-15);
                for i in 0..dim {
                    let mean: f64 = (0..branches)
                        .map(|b| mu.probability(node, b) * s.increment_component(b, i))
                        .sum();
                    prop_assert!(mean.abs() <= 1e-15);
                    for j in 0..dim {
                        let second: f64 = (0..branches)
                            .map(|b| {
                                mu.probability(node, b)
                                    * s.increment_component(b, i)
                                    * s.increment_component(b, j)
                            })
                            .sum();
                        let target = if i == j { dt } else { 0.0 };
                        prop_assert!((second - target).abs() <= 1e-15 * (1.0 + dt));
                    }
                }
            }
        }
    }

    // Conditioning to an intermediate slice and then further down agrees
    // with conditioning down directly.
    #[test]
    fn tower_property_holds(
        dim in 1usize..=2,
        steps in 2usize..=5,
        mode in any_mode(),
        seed in any::<u64>(),
        split in 0.0f64..1.0,
        base_frac in 0.0f64..1.0,
    ) {
        let s = tree(dim, steps, mode);
        let mu = Measure::base(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..s.node_count()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = AdaptedProcess::from_values(&s, values).unwrap();

        let k2 = 1 + (split * (steps - 1) as f64).floor() as usize;
        let k1 = (base_frac * k2 as f64).floor() as usize;
        let mid = conditional_expectation(&s, &mu, &x, k2).unwrap();
        let down = condexp_between(&s, &mu, &mid, k2, k1).unwrap();
        let direct = conditional_expectation(&s, &mu, &x, k1).unwrap();
        for (a, b) in down.iter().zip(&direct) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    // Path sums of z . dW are martingales under the base measure: the
    // supermartingale check passes in both directions.
    #[test]
    fn integrals_are_martingales(
        dim in 1usize..=2,
        steps in 1usize..=5,
        seed in any::<u64>(),
    ) {
        let s = tree(dim, steps, Mode::NonRecombining);
        let mu = Measure::base(&s);
        let rng = std::cell::RefCell::new(ChaCha8Rng::seed_from_u64(seed));
        let z = PredictableProcess::from_fn(&s, |_, _, _| rng.borrow_mut().gen_range(-3.0..3.0));
        let x = stochastic_integral(&s, &z).unwrap();
        prop_assert_eq!(x.value(s.root()), 0.0);
        let neg = AdaptedProcess::from_values(&s, x.values().iter().map(|v| -v).collect()).unwrap();
        prop_assert!(is_supermartingale(&s, &mu, &x, 1e-12).unwrap().is_supermartingale);
        prop_assert!(is_supermartingale(&s, &mu, &neg, 1e-12).unwrap().is_supermartingale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // The restricted conjugate grows with the search radius and is convex
    // in the slope argument. Slopes are scaled into each builtin's finite
    // domain so the minimizer stays interior to the smaller radius.
    #[test]
    fn conjugate_is_monotone_in_radius_and_convex_in_q(
        which in 0usize..3,
        lam in 0.8f64..2.0,
        y in -1.0f64..1.0,
        u1 in -1.0f64..1.0,
        u2 in -1.0f64..1.0,
        r_lo in 2.0f64..4.0,
        r_hi in 4.0f64..8.0,
        mix in 0.0f64..1.0,
    ) {
        let (g, scale) = match which {
            0 => (GeneratorSpec::quad(1, lam), 2.5),
            1 => (GeneratorSpec::abs(1, lam), 0.95 * lam),
            _ => (GeneratorSpec::ball(1, 0.9 * lam), 2.5),
        };
        let (q1, q2) = (scale * u1, scale * u2);
        let conj = |q: f64, r: f64| conjugate_z(&g, 0, 0, y, &[q], r, 1e-10).unwrap();

        prop_assert!(conj(q1, r_lo) <= conj(q1, r_hi) + 1e-8);

        let qm = mix * q1 + (1.0 - mix) * q2;
        let lhs = conj(qm, r_hi);
        let rhs = mix * conj(q1, r_hi) + (1.0 - mix) * conj(q2, r_hi);
        prop_assert!(lhs <= rhs + 1e-8);
    }
}

// Declared flags survive a heavy falsification run on every builtin.
#[test]
fn builtins_withstand_heavy_falsification() {
    let s1 = tree(1, 4, Mode::NonRecombining);
    let one = [
        GeneratorSpec::zero(1),
        GeneratorSpec::linear(vec![0.5], 0.1),
        GeneratorSpec::abs(1, 1.0),
        GeneratorSpec::quad(1, 0.8),
        GeneratorSpec::pos_part_y(1, 0.4),
        GeneratorSpec::exp_neg_y(1),
        GeneratorSpec::ball(1, 1.5),
    ];
    for g in &one {
        let report = falsify_flags(g, &s1, 10_000, 0x1234);
        assert!(report.all_hold(), "{}: {:?}", g.name(), report);
    }
    let s2 = tree(2, 3, Mode::NonRecombining);
    let two = [GeneratorSpec::abs(2, 0.7), GeneratorSpec::quad(2, 1.2), GeneratorSpec::ball(2, 1.0)];
    for g in &two {
        let report = falsify_flags(g, &s2, 10_000, 0x5678);
        assert!(report.all_hold(), "{}: {:?}", g.name(), report);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // On binary trees the increments span every centered branch payoff, so
    // the zero generator solves to the conditional expectation exactly.
    #[test]
    fn zero_generator_matches_conditional_expectation(
        steps in 1usize..=6,
        mode in any_mode(),
        seed in any::<u64>(),
    ) {
        let s = tree(1, steps, mode);
        let xi = leaf_payoff(&s, seed);
        let sol = backward_induce(&s, &GeneratorSpec::zero(1), &xi, &Measure::base(&s), &SolverOptions::default()).unwrap();
        let m = martingale_closure(&s, &Measure::base(&s), xi.values()).unwrap();
        for node in 0..s.node_count() {
            prop_assert!((sol.y.value(node) - m.value(node)).abs() <= 1e-9);
        }
    }

    // With more branches than control directions the increments no longer
    // span, so the minimal value can sit strictly above the conditional
    // expectation; it never drops below it.
    #[test]
    fn zero_generator_dominates_conditional_expectation(
        steps in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let s = tree(2, steps, Mode::NonRecombining);
        let xi = leaf_payoff(&s, seed);
        let sol = backward_induce(&s, &GeneratorSpec::zero(2), &xi, &Measure::base(&s), &SolverOptions::default()).unwrap();
        let m = martingale_closure(&s, &Measure::base(&s), xi.values()).unwrap();
        for node in 0..s.node_count() {
            prop_assert!(sol.y.value(node) >= m.value(node) - 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // Tightening the tolerances can only lower the computed minimum, up to
    // the looser tolerance itself.
    #[test]
    fn tightening_tolerances_cannot_raise_the_value(
        steps in 2usize..=3,
        quad in any::<bool>(),
        lam in 0.3f64..1.5,
        seed in any::<u64>(),
    ) {
        let s = tree(1, steps, Mode::NonRecombining);
        let xi = leaf_payoff(&s, seed);
        let g = if quad { GeneratorSpec::quad(1, lam) } else { GeneratorSpec::abs(1, lam) };
        let loose = SolverOptions { eps_y: 1e-6, eps_z: 1e-6, ..SolverOptions::default() };
        let tight = SolverOptions { eps_y: 1e-10, eps_z: 1e-10, ..SolverOptions::default() };
        let a = backward_induce(&s, &g, &xi, &Measure::base(&s), &loose).unwrap();
        let b = backward_induce(&s, &g, &xi, &Measure::base(&s), &tight).unwrap();
        prop_assert!(b.initial() <= a.initial() + 1e-6 + 1e-8);
    }

    // A driver that ignores y solves identically whether it is declared
    // y-independent (single evaluation) or monotone (fixed-point search).
    #[test]
    fn flat_and_fixed_point_paths_agree(
        lam in 0.2f64..1.5,
        seed in any::<u64>(),
    ) {
        let s = tree(1, 1, Mode::NonRecombining);
        let xi = leaf_payoff(&s, seed);
        let flat = GeneratorSpec::abs(1, lam);
        let flags = GeneratorFlags {
            positive: true,
            increasing_y: true,
            convex_z: true,
            lsc: true,
            ..GeneratorFlags::default()
        };
        let fixed = GeneratorSpec::custom(
            "abs-as-monotone",
            1,
            flags,
            Arc::new(move |_, _, _, z: &[f64]| lam * z[0].abs()),
        )
        .with_y_lipschitz(0.0);
        let opts = SolverOptions::default();
        let a = backward_induce(&s, &flat, &xi, &Measure::base(&s), &opts).unwrap();
        let b = backward_induce(&s, &fixed, &xi, &Measure::base(&s), &opts).unwrap();
        prop_assert!((a.initial() - b.initial()).abs() <= 2e-8);
    }

    // Slack bookkeeping: step slacks and terminal gaps are nonnegative and
    // their path sums (the increasing process consumed by the inequality)
    // are too.
    #[test]
    fn slack_accounting_stays_nonnegative(
        steps in 2usize..=4,
        which in 0usize..4,
        seed in any::<u64>(),
    ) {
        let s = tree(1, steps, Mode::NonRecombining);
        let xi = leaf_payoff(&s, seed);
        let g = match which {
            0 => GeneratorSpec::zero(1),
            1 => GeneratorSpec::abs(1, 0.8),
            2 => GeneratorSpec::quad(1, 0.6),
            _ => GeneratorSpec::exp_neg_y(1),
        };
        let sol = backward_induce(&s, &g, &xi, &Measure::base(&s), &SolverOptions::default()).unwrap();
        let (worst, _) = sol.worst_slack();
        prop_assert!(worst >= -1e-9);
        let (gap, _) = sol.worst_terminal_gap();
        prop_assert!(gap >= -1e-12);
        for (cum, gap) in sol.cumulative_slack(&s).unwrap().iter().zip(&sol.terminal_gap) {
            prop_assert!(cum + gap >= -1e-9);
            prop_assert!(*cum >= -1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    // Every pasting operation returns a pair that still satisfies the
    // inequality: switch at a deterministic cut, pointwise minimum, and the
    // first-crossing combination.
    #[test]
    fn pasting_outputs_remain_supersolutions(
        steps in prop_oneof![Just(2usize), Just(4usize)],
        which in 0usize..3,
        bump in 0.1f64..1.0,
        split in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let s = tree(1, steps, Mode::NonRecombining);
        let xi = leaf_payoff(&s, seed);
        let g = match which {
            0 => GeneratorSpec::zero(1),
            1 => GeneratorSpec::abs(1, 0.8),
            _ => GeneratorSpec::quad(1, 0.6),
        };
        let mu = Measure::base(&s);
        let minimal = backward_induce(&s, &g, &xi, &mu, &SolverOptions::default()).unwrap();

        // Lifting every non-terminal value of a y-independent problem by a
        // constant keeps all slacks nonnegative.
        let lifted_y = AdaptedProcess::from_fn(&s, |_, node| {
            if s.is_terminal(node) { minimal.y.value(node) } else { minimal.y.value(node) + bump }
        });
        let lifted = Supersolution::from_parts(&s, &g, &xi, lifted_y, minimal.z.clone()).unwrap();
        let t = 1 + (split * (steps - 1) as f64).floor() as usize;

        let sigma = StoppingTime::at_time(&s, t).unwrap();
        let outputs = [
            paste_partition(&s, &g, &xi, &sigma, &lifted, &[&minimal], &|_| 0).unwrap(),
            paste_min(&s, &g, &xi, t, &lifted, &minimal).unwrap(),
            epsilon_optimal_paste(&s, &g, &xi, &[&lifted, &minimal], 1).unwrap().pasted,
        ];
        for out in &outputs {
            let report = verify_supersolution(&s, &g, &xi, &out.y, &out.z, &mu, 1e-9).unwrap();
            prop_assert!(report.pass, "slack {} gap {} drift {}", report.worst_slack, report.worst_terminal_gap, report.max_step_drift);
        }
    }

    // Doob decomposition of a supermartingale: exact reconstruction, a
    // predictable nondecreasing compensator starting at zero, and a
    // martingale residual at every node.
    #[test]
    fn doob_identities_hold(
        dim in 1usize..=2,
        steps in 2usize..=4,
        trend in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let s = tree(dim, steps, Mode::NonRecombining);
        let mu = Measure::base(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terminal: Vec<f64> = (0..s.leaves().len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let closure = martingale_closure(&s, &mu, &terminal).unwrap();
        let x = AdaptedProcess::from_fn(&s, |k, node| closure.value(node) - trend * k as f64 * s.dt());

        let d = doob_decompose(&s, &mu, &x, 1e-10).unwrap();
        prop_assert_eq!(d.compensator.value(s.root()), 0.0);
        let x0 = x.value(s.root());
        for node in 0..s.node_count() {
            let rebuilt = x0 + d.martingale.value(node) - d.compensator.value(node);
            prop_assert!((x.value(node) - rebuilt).abs() <= 1e-12);
        }
        for k in 0..s.steps() {
            for &node in s.slice(k) {
                let mean = mu.step_expectation(&s, node, |c| d.martingale.value(c));
                prop_assert!((mean - d.martingale.value(node)).abs() <= 1e-12);
                for &c in s.successors(node) {
                    prop_assert!(d.compensator.value(c) >= d.compensator.value(node) - 1e-12);
                }
            }
        }
    }

    // The tilted measure built from kernel a gives every one-step increment
    // conditional mean a dt.
    #[test]
    fn tilted_measures_have_exact_drift(
        dim in 1usize..=2,
        steps in 2usize..=4,
        a1 in -0.5f64..0.5,
        a2 in -0.5f64..0.5,
    ) {
        let s = tree(dim, steps, Mode::NonRecombining);
        let a: Vec<f64> = [a1, a2][..dim].to_vec();
        let g = GeneratorSpec::linear(a.clone(), 0.1);
        let kernel = PredictableProcess::constant(&s, &a).unwrap();
        let floor = AdaptedProcess::constant(&s, 0.1);
        let red = girsanov_reduce(&s, &g, &kernel, &floor).unwrap();
        let dt = s.dt();
        for k in 0..s.steps() {
            for &node in s.slice(k) {
                let branches = s.successors(node).len();
                let total: f64 = (0..branches).map(|b| red.change.measure.probability(node, b)).sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
                for i in 0..dim {
                    let drift: f64 = (0..branches)
                        .map(|b| red.change.measure.probability(node, b) * s.increment_component(b, i))
                        .sum();
                    prop_assert!((drift - a[i] * dt).abs() <= 1e-14);
                }
            }
        }
    }
}
