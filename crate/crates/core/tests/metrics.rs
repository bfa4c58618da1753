use collusion_core::market::{solve_equilibria, EquilibriumConfig, ExternalityMatrix, MarketParams, PriceProfile};
use collusion_core::metrics::{
    averaged_delta, bootstrap_ci, bootstrap_diff_lower, collusive_level, grid_averaged_delta, max_averaged_delta,
    max_averaged_delta_exhaustive, platform_levels, quantile_sorted, sample_mean, CollusionSummary, MetricsError,
};
use collusion_core::qlearn::{grid_solver, joint_prices, PriceGrid, ProfitTable};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn baseline() -> MarketParams<f64> {
    MarketParams::symmetric(1.0, -2.0, 0.05, ExternalityMatrix::zero()).unwrap()
}

#[test]
fn level_examples() {
    assert_eq!(collusive_level(1.2f64, 1.2, 1.7).unwrap(), 0.0);
    assert_eq!(collusive_level(1.7, 1.2, 1.7).unwrap(), 1.0);
    assert!((collusive_level(1.45f64, 1.2, 1.7).unwrap() - 0.5).abs() < 1e-15);
    // no clamping
    assert!(collusive_level(2.0, 1.2, 1.7).unwrap() > 1.0);
    assert!(matches!(
        collusive_level(1.0, 1.0, 1.0 + 5e-9),
        Err(MetricsError::DegenerateDenominator { .. })
    ));
}

#[test]
fn averaged_level_at_the_benchmarks() {
    let params = baseline();
    let eq = solve_equilibria(&params, &EquilibriumConfig::default()).unwrap();
    let solver = grid_solver();
    let at_ce = averaged_delta(&PriceProfile::symmetric(2, eq.p_coll), &eq, &params, &solver).unwrap();
    let at_cne = averaged_delta(&PriceProfile::symmetric(2, eq.p_star), &eq, &params, &solver).unwrap();
    assert!((at_ce - 1.0).abs() < 1e-9);
    assert!(at_cne.abs() < 1e-9);
}

#[test]
fn averaged_level_is_the_mean_of_platform_levels() {
    let params = MarketParams::symmetric(1.0, -2.0, 0.05, ExternalityMatrix::new(0.4, -0.3, 0.8, 0.1)).unwrap();
    let eq = solve_equilibria(&params, &EquilibriumConfig::default()).unwrap();
    let solver = grid_solver();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let draw = |rng: &mut ChaCha8Rng| {
            let z: f64 = StandardNormal.sample(rng);
            1.5 + z
        };
        let profile = PriceProfile::new(vec![[draw(&mut rng), draw(&mut rng)], [draw(&mut rng), draw(&mut rng)]]);
        let avg = averaged_delta(&profile, &eq, &params, &solver).unwrap();
        let lv = platform_levels(&profile, &eq, &params, &solver).unwrap();
        assert!((avg - 0.5 * (lv[0] + lv[1])).abs() < 1e-12);
    }
}

fn grid_setup(phi: ExternalityMatrix<f64>, m: usize) -> (MarketParams<f64>, collusion_core::EquilibriumPair64, PriceGrid<f64>, ProfitTable<f64>) {
    let params = MarketParams::symmetric(1.0, -2.0, 0.05, phi).unwrap();
    let eq = solve_equilibria(&params, &EquilibriumConfig::default()).unwrap();
    let grid = PriceGrid::from_equilibrium(&eq, 0.1, m).unwrap();
    let profits = ProfitTable::build(&params, &grid, &grid_solver()).unwrap();
    (params, eq, grid, profits)
}

#[test]
fn grid_maximum_matches_independent_enumeration() {
    let (params, eq, grid, profits) = grid_setup(ExternalityMatrix::zero(), 3);
    let best = max_averaged_delta(&profits, &eq).unwrap();
    // 81 profiles, each solved from scratch
    let solver = grid_solver();
    let mut brute = (f64::NEG_INFINITY, usize::MAX);
    for s in 0..81 {
        let v = averaged_delta(&joint_prices(&grid, s), &eq, &params, &solver).unwrap();
        if v > brute.0 {
            brute = (v, s);
        }
    }
    assert!((best.value - brute.0).abs() < 1e-12);
    let shape = grid.shape();
    let (a1, a2) = shape.state_actions(brute.1);
    assert_eq!(best.profile, (a1.min(a2), a1.max(a2)));
}

#[test]
fn symmetric_pruning_agrees_with_the_full_scan() {
    for (m, phi) in [
        (3, ExternalityMatrix::zero()),
        (4, ExternalityMatrix::new(0.0, -2.0, -2.0, 0.0)),
        (5, ExternalityMatrix::new(0.5, 1.0, -1.0, 0.5)),
    ] {
        let (_, eq, grid, profits) = grid_setup(phi, m);
        let pruned = max_averaged_delta(&profits, &eq).unwrap();
        let full = max_averaged_delta_exhaustive(&profits, &eq).unwrap();
        assert_eq!(pruned, full);
        for s in 0..grid.shape().n_states() {
            assert!(pruned.value >= grid_averaged_delta(&profits, &eq, s));
        }
    }
}

#[test]
fn summary_flags() {
    let eq = collusion_core::EquilibriumPair64::from_values([1.0; 2], [2.0; 2], 1.0, 1.5);
    let run = collusion_core::RunResult64 {
        delta_tilde: 0.6,
        delta_trace: [vec![0.2, 0.4], vec![1.0, 1.2]],
        tail_actions: vec![],
        q_tables: [
            collusion_core::QTable64::filled(collusion_core::qlearn::GridShape::new(2), 0.0),
            collusion_core::QTable64::filled(collusion_core::qlearn::GridShape::new(2), 0.0),
        ],
        cycle: None,
        seed: 0,
        run_index: 0,
        update_target: Default::default(),
        final_temperature: 1e-6,
        wall_time_secs: 0.0,
    };
    let summary = CollusionSummary::from_run(&run, &eq);
    assert!((summary.platform_means[0] - 0.3).abs() < 1e-15);
    assert!((summary.platform_means[1] - 1.1).abs() < 1e-15);
    assert!(summary.exceeded_one);
    assert!(!summary.degenerate);
    assert_eq!(summary.denominator, 0.5);
}

#[test]
fn bootstrap_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    assert_eq!(bootstrap_ci(&[0.7f64; 12], 0.99, 1000, &mut rng).unwrap(), (0.7, 0.7));
    assert!(matches!(
        bootstrap_ci::<f64, _>(&[], 0.9, 10, &mut rng),
        Err(MetricsError::EmptySample)
    ));
    assert!(matches!(
        bootstrap_ci(&[1.0f64], 1.0, 10, &mut rng),
        Err(MetricsError::InvalidLevel(_))
    ));
    // level 0 collapses onto the median of the resampled means
    let x = [1.0f64, 2.0, 4.0, 8.0, 16.0];
    let (lo, hi) = bootstrap_ci(&x, 0.0, 2001, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(lo, hi);
    assert!(lo > 2.0 && lo < 12.0);
    assert_eq!(sample_mean(&x).unwrap(), 6.2);
    assert_eq!(quantile_sorted(&[3.0f64], 0.3), 3.0);
}

#[test]
fn bootstrap_is_reproducible_under_a_seed() {
    let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let a = bootstrap_ci(&x, 0.99, 5000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let b = bootstrap_ci(&x, 0.99, 5000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn interval_covers_the_true_mean() {
    let mut data_rng = ChaCha8Rng::seed_from_u64(100);
    let mut boot_rng = ChaCha8Rng::seed_from_u64(200);
    let trials = 500;
    let mut covered = 0;
    for _ in 0..trials {
        let x: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut data_rng)).collect();
        let (lo, hi) = bootstrap_ci(&x, 0.99, 2000, &mut boot_rng).unwrap();
        if lo <= 0.0 && 0.0 <= hi {
            covered += 1;
        }
    }
    assert!(covered as f64 >= 0.98 * trials as f64, "{covered}/{trials}");
}

#[test]
fn difference_bound_separates_shifted_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a: Vec<f64> = (0..20).map(|i| 0.7 + 0.01 * (i % 5) as f64).collect();
    let b: Vec<f64> = (0..20).map(|i| 0.5 + 0.01 * (i % 7) as f64).collect();
    assert!(bootstrap_diff_lower(&a, &b, 0.95, 2000, &mut rng).unwrap() > 0.0);
    assert!(bootstrap_diff_lower(&b, &a, 0.95, 2000, &mut rng).unwrap() < 0.0);
}

proptest! {
    #[test]
    fn level_is_affine_invariant(
        pi in -5.0f64..5.0,
        star in -5.0f64..5.0,
        gap in 0.01f64..5.0,
        a in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
        b in -10.0f64..10.0,
    ) {
        let coll = star + gap;
        let d = collusive_level(pi, star, coll).unwrap();
        let e = collusive_level(a * pi + b, a * star + b, a * coll + b).unwrap();
        prop_assert!((d - e).abs() <= 1e-9 * (1.0 + d.abs()));
    }

    #[test]
    fn interval_widens_with_level(
        x in prop::collection::vec(-3.0f64..3.0, 2..40),
        l1 in 0.0f64..0.99,
        l2 in 0.0f64..0.99,
        seed in any::<u64>(),
    ) {
        let (lo_l, hi_l) = (l1.min(l2), l1.max(l2));
        let a = bootstrap_ci(&x, lo_l, 300, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = bootstrap_ci(&x, hi_l, 300, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(b.0 <= a.0 && a.1 <= b.1);
        prop_assert!(a.0 <= a.1);
    }
}
