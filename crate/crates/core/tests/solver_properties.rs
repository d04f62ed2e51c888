use std::sync::Arc;

use mfbsde::driver::{
    builtin_case1, builtin_case2, DriverArgs, FnDriver, FrozenDriver, LawSequence, LinearYDriver,
    MeanFieldDriver, MeanShiftDriver, TerminalCondition, ZeroDriver,
};
use mfbsde::law::{wasserstein, DiscreteLaw};
use mfbsde::solver::{
    solve_fixed_point_variant, solve_meanfield, solve_subtree, InitialLaw, SolveConfig,
};
use proptest::prelude::*;

fn law(max_atoms: usize) -> impl Strategy<Value = DiscreteLaw> {
    prop::collection::vec((-4.0f64..4.0, 0.05f64..1.0), 1..=max_atoms).prop_map(|pairs| {
        let (a, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        DiscreteLaw::new(a, w).unwrap()
    })
}

proptest! {
    #[test]
    fn builtin_driver_is_w2_lipschitz(
        my in law(6), my2 in law(6), mz in law(6), mz2 in law(6),
        y in -3.0f64..3.0, dy in -1.0f64..1.0, z in -3.0f64..3.0,
    ) {
        let d = MeanShiftDriver;
        let a = DriverArgs { step: 0, time: 0.0, x: 0.0, y, z, law_y: &my, law_z: &mz };
        let b = DriverArgs { step: 0, time: 0.0, x: 0.0, y: y + dy, z, law_y: &my2, law_z: &mz2 };
        let bound = wasserstein(&my, &my2, 2.0).unwrap() + wasserstein(&mz, &mz2, 2.0).unwrap() + dy.abs();
        prop_assert!((d.eval(&a) - d.eval(&b)).abs() <= bound + 1e-12);
    }

    #[test]
    fn zero_driver_preserves_mean_of_y(n in 1usize..60, cap in 0.5f64..8.0) {
        let g = TerminalCondition::capped_square(cap).unwrap();
        let s = solve_meanfield(&g, &ZeroDriver, &SolveConfig::new(n, 1.0), &InitialLaw::default()).unwrap();
        let m0 = s.law_y().get(0).unwrap().mean();
        for k in 0..=n {
            prop_assert!((s.law_y().get(k).unwrap().mean() - m0).abs() < 1e-12 * cap);
        }
    }

    #[test]
    fn law_means_match_node_sums(n in 1usize..40, cap in 0.5f64..8.0) {
        let (f, g) = builtin_case2(cap).unwrap();
        let s = solve_meanfield(&g, f.as_ref(), &SolveConfig::new(n, 1.0), &InitialLaw::default()).unwrap();
        let a = s.atom(0);
        for k in 0..=n {
            let direct: f64 = (0..=k).map(|i| a.lattice().prob(i, k) * a.y(i, k)).sum();
            prop_assert!((s.law_y().get(k).unwrap().mean() - direct).abs() < 1e-12 * direct.abs().max(1.0));
        }
        for k in 1..=n {
            let direct: f64 = (0..k).map(|i| a.lattice().prob(i, k - 1) * a.z(i, k - 1)).sum();
            prop_assert!((s.law_z().get(k).unwrap().mean() - direct).abs() < 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn terminal_and_z_identities_hold_bitwise(n in 1usize..40, cap in 0.5f64..8.0) {
        let (f, g) = builtin_case2(cap).unwrap();
        let s = solve_meanfield(&g, f.as_ref(), &SolveConfig::new(n, 1.0), &InitialLaw::default()).unwrap();
        let a = s.atom(0);
        let two_s = 2.0 * a.lattice().sqrt_h();
        for i in 0..=n {
            prop_assert_eq!(a.y(i, n), g.eval(a.lattice().value(i, n)));
        }
        for k in 0..n {
            for i in 0..=k {
                prop_assert_eq!(a.z(i, k), (a.y(i, k + 1) - a.y(i + 1, k + 1)) / two_s);
            }
        }
    }

    #[test]
    fn comparison_principle(n in 1usize..30, shift in 0.0f64..2.0) {
        // f = y is increasing-preserving; g1 <= g2 must give Y1 <= Y2 on every node
        let g1 = TerminalCondition::identity();
        let g2 = TerminalCondition::new("shifted", move |x| x + shift);
        let cfg = SolveConfig::new(n, 1.0);
        let a = solve_meanfield(&g1, &LinearYDriver, &cfg, &InitialLaw::default()).unwrap();
        let b = solve_meanfield(&g2, &LinearYDriver, &cfg, &InitialLaw::default()).unwrap();
        for k in 0..=n {
            for i in 0..=k {
                prop_assert!(a.atom(0).y(i, k) <= b.atom(0).y(i, k));
            }
        }
    }
}

#[test]
fn case1_value_is_affine_in_b_per_column() {
    let (f, g) = builtin_case1();
    let s = solve_meanfield(
        &g,
        f.as_ref(),
        &SolveConfig::new(32, 1.0),
        &InitialLaw::default(),
    )
    .unwrap();
    let a = s.atom(0);
    for k in 1..32 {
        let zs = a.z_column(k);
        assert!(zs.iter().all(|z| (z - zs[0]).abs() < 1e-12));
    }
}

#[test]
fn explicit_and_fixed_point_differ_at_first_order() {
    let (f, g) = builtin_case1();
    let mut local = Vec::new();
    let mut global = Vec::new();
    for n in [64, 128, 256] {
        let cfg = SolveConfig::new(n, 1.0);
        let e = solve_meanfield(&g, f.as_ref(), &cfg, &InitialLaw::default()).unwrap();
        let p = solve_fixed_point_variant(&g, f.as_ref(), &cfg, &InitialLaw::default()).unwrap();
        let (ea, pa) = (e.atom(0), p.atom(0));
        // node values grow like sqrt(n) at the edges, so compare on |B| <= 2
        let inside = |i: usize, k: usize| ea.lattice().value(i, k).abs() <= 2.0;
        local.push(
            (0..n)
                .filter(|&i| inside(i, n - 1))
                .map(|i| (ea.y(i, n - 1) - pa.y(i, n - 1)).abs())
                .fold(0.0, f64::max),
        );
        let mut worst = 0.0f64;
        for k in 0..=n {
            for i in (0..=k).filter(|&i| inside(i, k)) {
                worst = worst.max((ea.y(i, k) - pa.y(i, k)).abs());
            }
        }
        global.push(worst);
    }
    eprintln!("one-step {local:?}, global {global:?}");
    for w in local.windows(2) {
        let r = w[0] / w[1];
        assert!((3.6..4.4).contains(&r), "one-step ratio {r}");
    }
    for w in global.windows(2) {
        let r = w[0] / w[1];
        assert!((1.8..2.2).contains(&r), "global ratio {r}");
    }
}

#[test]
fn subtree_with_constant_laws_matches_hand_value() {
    let (f, g) = builtin_case1();
    let n = 8;
    let zero = DiscreteLaw::dirac(0.0);
    let frozen = FrozenDriver::freeze(
        f,
        LawSequence::constant(0, n, zero.clone()),
        LawSequence::constant(0, n, zero),
        n,
        1.0,
    )
    .unwrap();
    let cfg = SolveConfig::new(n, 1.0);
    let c = 0.75;
    let s = solve_subtree(&g, &frozen, &cfg, n - 1, c).unwrap();
    assert!((s.root_value(0) - (1.0 + 1.0 / n as f64) * c).abs() < 1e-14);
}

#[test]
fn atoms_of_initial_law_are_solved_on_shifted_trees() {
    let g = TerminalCondition::identity();
    let xi = InitialLaw(DiscreteLaw::new(vec![-1.0, 2.0], vec![0.25, 0.75]).unwrap());
    let s = solve_meanfield(&g, &ZeroDriver, &SolveConfig::new(4, 1.0), &xi).unwrap();
    assert_eq!(s.atoms().len(), 2);
    let ly0 = s.law_y().get(0).unwrap();
    assert_eq!(ly0.atoms(), &[-1.0, 2.0]);
    assert_eq!(ly0.weights(), &[0.25, 0.75]);
}

#[test]
fn law_dependent_custom_driver_runs() {
    let f = FnDriver::new(|a: &DriverArgs<'_>| -a.law_y.variance())
        .with_lipschitz(1.0)
        .unwrap();
    let g = TerminalCondition::new("square", |x| x * x);
    let s = solve_meanfield(&g, &f, &SolveConfig::new(16, 1.0), &InitialLaw::default()).unwrap();
    assert!(s.root_value(0).is_finite());
    let shared: Arc<dyn MeanFieldDriver> = Arc::new(f);
    let frozen = s.freeze_own_laws(shared).unwrap();
    let again = solve_subtree(&g, &frozen, &SolveConfig::new(16, 1.0), 0, 0.0).unwrap();
    assert_eq!(again.root_value(0), s.root_value(0));
}
