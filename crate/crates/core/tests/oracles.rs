mod common;

use approx::assert_relative_eq;
use common::*;
use gridbp::coarse_grain::{
    area_flow_covariance, linear_response_covariance, partition_search, random_partition, AnnealingOptions,
    LinearResponseOptions, ObjectiveWeights,
};
use gridbp::scenarios::{make_mask, sample_measurements, Measurement, MissingFractions, PlacementStrategy};
use gridbp::wls::{exact_covariance, wls_angles, wls_flows};
use gridbp::{build_factor_graph, cases, run_bp, BpOptions};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn bp_is_exact_on_spanning_trees() {
    let case = cases::ieee("ieee57");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..10 {
        let tree = case.random_spanning_tree(&mut rng).derive_dc_state();
        let g = build_factor_graph(&tree, &full_measurements(&tree, 1e-4, k)).unwrap();
        let bp = run_bp(&g, &BpOptions::default()).unwrap();
        let wls = wls_flows(&g);
        for i in 0..g.variable_count() {
            assert!((bp.beliefs[i].mean - wls.means[i]).abs() < 1e-9);
            assert!((bp.beliefs[i].variance - wls.variance(i)).abs() < 1e-12);
        }
    }
}

#[test]
fn loopy_means_match_wls() {
    let case = cases::ieee("ieee118");
    let g = build_factor_graph(&case, &full_measurements(&case, 1e-4, 4)).unwrap();
    let bp = run_bp(&g, &BpOptions::default()).unwrap();
    assert!(bp.converged);
    let wls = wls_flows(&g);
    let worst = (0..g.variable_count())
        .map(|i| (bp.beliefs[i].mean - wls.means[i]).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
    // Loopy BP variances are approximate but of the right size.
    for i in 0..g.variable_count() {
        let r = bp.beliefs[i].variance / wls.variance(i);
        assert!((0.5..2.0).contains(&r), "line {i}: ratio {r}");
    }
}

#[test]
fn flows_only_and_angle_wls_agree_with_full_data() {
    let case = cases::ieee("ieee30");
    let meas = full_measurements(&case, 1e-4, 9);
    let g = build_factor_graph(&case, &meas).unwrap();
    let flows = wls_flows(&g);
    let angles = wls_angles(&case, &meas).unwrap();
    // The angle model adds the loop constraints, so it can only be closer to
    // the truth on average; both stay within a few noise widths.
    for i in 0..g.variable_count() {
        assert!((flows.means[i] - case.lines()[i].flow_true).abs() < 0.1);
        assert!((angles.means[i] - case.lines()[i].flow_true).abs() < 0.1);
        assert!(angles.variance(i) <= flows.variance(i) * (1.0 + 1e-9));
    }
}

#[test]
fn retrievable_set_matches_wls_identifiability() {
    let case = cases::ieee("ieee118");
    for seed in 0..50 {
        let mask = make_mask(&case, MissingFractions::equal(0.1), PlacementStrategy::Uniform, seed).unwrap();
        let meas = sample_measurements(&case, &mask, 1e-4, seed).unwrap();
        let g = build_factor_graph(&case, &meas).unwrap();
        let bp = run_bp(&g, &BpOptions::default()).unwrap();
        let wls = wls_flows(&g);
        let all = wls.retrievable.iter().all(|&r| r);
        for i in 0..g.variable_count() {
            assert_eq!(bp.beliefs[i].is_finite(), wls.retrievable[i], "seed {seed}, line {i}");
            // With unretrievable lines around, WLS can still use constraints on
            // their sums that single infinite-variance messages drop, so the
            // means only coincide once everything is retrievable.
            if all {
                assert!((bp.beliefs[i].mean - wls.means[i]).abs() < 1e-6, "seed {seed}, line {i}");
            }
        }
    }
}

#[test]
fn variances_do_not_depend_on_measured_values() {
    let case = cases::ieee("ieee57");
    let mask = make_mask(&case, MissingFractions::equal(0.2), PlacementStrategy::Uniform, 5).unwrap();
    let a = build_factor_graph(&case, &sample_measurements(&case, &mask, 1e-4, 1).unwrap()).unwrap();
    let b = build_factor_graph(&case, &sample_measurements(&case, &mask, 1e-4, 2).unwrap()).unwrap();
    let ra = run_bp(&a, &BpOptions::default()).unwrap();
    let rb = run_bp(&b, &BpOptions::default()).unwrap();
    let worst = ra
        .beliefs
        .iter()
        .zip(&rb.beliefs)
        .filter(|(x, _)| x.is_finite())
        .map(|(x, y)| (x.variance - y.variance).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-12, "{worst}");
    assert!(ra.beliefs.iter().zip(&rb.beliefs).all(|(x, y)| x.is_finite() == y.is_finite()));
}

#[test]
fn scaling_measurements_scales_estimates() {
    let case = cases::ieee("ieee118");
    let mask = make_mask(&case, MissingFractions::equal(0.3), PlacementStrategy::Uniform, 8).unwrap();
    let meas = sample_measurements(&case, &mask, 1e-4, 8).unwrap();
    let r1 = run_bp(&build_factor_graph(&case, &meas).unwrap(), &BpOptions::default()).unwrap();
    let r3 = run_bp(&build_factor_graph(&case, &meas.scaled(3.0)).unwrap(), &BpOptions::default()).unwrap();
    for (a, b) in r1.beliefs.iter().zip(&r3.beliefs) {
        if a.is_finite() {
            assert_relative_eq!(b.mean, 3.0 * a.mean, max_relative = 1e-9, epsilon = 1e-9);
            assert_relative_eq!(b.variance, 9.0 * a.variance, max_relative = 1e-9);
        } else {
            assert!(!b.is_finite());
        }
    }
}

#[test]
fn linear_response_diagonal_matches_tree_variances() {
    let case = cases::ieee("ieee30");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tree = case.random_spanning_tree(&mut rng).derive_dc_state();
    let g = build_factor_graph(&tree, &full_measurements(&tree, 1e-4, 3)).unwrap();
    let ids: Vec<u32> = tree.lines().iter().map(|l| l.id).collect();
    let k = linear_response_covariance(&g, &ids, &LinearResponseOptions::default()).unwrap();
    let bp = run_bp(&g, &BpOptions::default()).unwrap();
    for i in 0..ids.len() {
        assert!((k[(i, i)] - bp.beliefs[i].variance).abs() < 1e-8);
    }
}

#[test]
fn area_covariance_aggregates_exact_line_covariance() {
    let case = cases::ieee("ieee14");
    let g = build_factor_graph(&case, &full_measurements(&case, 1e-4, 1)).unwrap();
    let p = random_partition(&case, 3, 4).unwrap();
    let report = area_flow_covariance(&g, &p, &case, &LinearResponseOptions::default()).unwrap();
    let ids: Vec<u32> = case.lines().iter().map(|l| l.id).collect();
    let exact = exact_covariance(&g, &ids).unwrap();
    let pairs = report.flows.boundary.pairs.len();
    let mut s = DMatrix::zeros(ids.len(), pairs);
    for (q, lines) in report.flows.boundary.lines.iter().enumerate() {
        for &(l, sign) in lines {
            s[(l, q)] = sign;
        }
    }
    let aggregated = s.transpose() * exact * &s;
    assert!(rel_frobenius(&report.covariance, &aggregated) < 1e-6);
    assert_eq!(report.covariance, report.covariance.transpose());
}

#[test]
fn area_flows_are_antisymmetric_and_conserve_injections() {
    let case = cases::ieee("ieee30");
    let g = build_factor_graph(&case, &full_measurements(&case, 1e-4, 6)).unwrap();
    let p = random_partition(&case, 4, 1).unwrap();
    let report = area_flow_covariance(&g, &p, &case, &LinearResponseOptions::default()).unwrap();
    let bp = run_bp(&g, &LinearResponseOptions::default().bp).unwrap();
    for y in &p.areas {
        let outflow: f64 = p.areas.iter().map(|z| report.flow(y, z).unwrap()).sum();
        // Net injection estimate of area y from the line beliefs.
        let mut injection = 0.0;
        for (b, bus) in case.buses().iter().enumerate() {
            if &p.area_of[&bus.id] == y {
                injection += case
                    .incident_lines(b)
                    .iter()
                    .map(|&(l, s)| s * bp.beliefs[l].mean)
                    .sum::<f64>();
            }
        }
        assert!((outflow - injection).abs() < 1e-8, "{y}: {outflow} vs {injection}");
        for z in &p.areas {
            assert_eq!(report.flow(y, z).unwrap() + report.flow(z, y).unwrap(), 0.0);
        }
    }
}

#[test]
fn extra_precision_never_raises_the_trace() {
    let case = cases::ieee("ieee14");
    let meas = full_measurements(&case, 1e-4, 2);
    let g = build_factor_graph(&case, &meas).unwrap();
    let p = random_partition(&case, 3, 9).unwrap();
    let lr = LinearResponseOptions::default();
    let base = area_flow_covariance(&g, &p, &case, &lr).unwrap().trace;
    for line in case.lines() {
        let mut better = meas.clone();
        let m = better.flow[&line.id];
        better.flow.insert(line.id, Measurement::new(m.z, m.variance / 10.0));
        let g = build_factor_graph(&case, &better).unwrap();
        let t = area_flow_covariance(&g, &p, &case, &lr).unwrap().trace;
        assert!(t <= base * (1.0 + 1e-9), "line {}: {t} > {base}", line.id);
    }
}

#[test]
fn partition_search_is_deterministic_and_improves() {
    let case = cases::ieee("ieee14");
    let g = build_factor_graph(&case, &full_measurements(&case, 1e-4, 0)).unwrap();
    let run = || {
        partition_search(
            &case,
            &g,
            3,
            &ObjectiveWeights::default(),
            7,
            &AnnealingOptions {
                steps: 400,
                ..AnnealingOptions::default()
            },
            &LinearResponseOptions::default(),
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.moves, b.moves);
    assert_eq!(a.best, b.best);
    assert!(a.best_objective <= a.start_objective);
    assert!(a.best.disconnected_areas(&case).is_empty());
    let (_, two_pair) = ieee14_fingerprint_partitions(&case);
    let lr = LinearResponseOptions::default();
    for p in &two_pair {
        let t = area_flow_covariance(&g, p, &case, &lr).unwrap().trace;
        assert!(a.best_trace <= t, "{} > {t}", a.best_trace);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn building_block_closed_form(
        z1 in -200.0..200.0f64,
        z2 in -200.0..200.0f64,
        zg in -50.0..50.0f64,
        s1 in 1e-6..1e-1f64,
        s2 in 1e-6..1e-1f64,
        sg in 1e-6..1e-1f64,
    ) {
        let g = block_graph(z1, z2, zg, s1, s2, sg);
        let bp = run_bp(&g, &BpOptions::default()).unwrap();
        let v1 = 1.0 / (1.0 / s1 + 1.0 / (s2 + sg));
        let v2 = 1.0 / (1.0 / s2 + 1.0 / (s1 + sg));
        let m1 = v1 * (z1 / s1 + (z2 - zg) / (s2 + sg));
        let m2 = v2 * (z2 / s2 + (z1 + zg) / (s1 + sg));
        prop_assert!((bp.beliefs[0].variance - v1).abs() <= 1e-15 * v1.max(1.0));
        prop_assert!((bp.beliefs[1].variance - v2).abs() <= 1e-15 * v2.max(1.0));
        prop_assert!((bp.beliefs[0].mean - m1).abs() <= 1e-12 * m1.abs().max(1.0));
        prop_assert!((bp.beliefs[1].mean - m2).abs() <= 1e-12 * m2.abs().max(1.0));
    }

    #[test]
    fn random_trees_match_wls(seed in 0u64..10_000, fraction in 0.0..0.4f64) {
        let case = cases::ieee("ieee30");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = case.random_spanning_tree(&mut rng).derive_dc_state();
        let mask = make_mask(&tree, MissingFractions::equal(fraction), PlacementStrategy::Uniform, seed).unwrap();
        let g = build_factor_graph(&tree, &sample_measurements(&tree, &mask, 1e-4, seed).unwrap()).unwrap();
        let bp = run_bp(&g, &BpOptions::default()).unwrap();
        let wls = wls_flows(&g);
        for i in 0..g.variable_count() {
            prop_assert_eq!(bp.beliefs[i].is_finite(), wls.retrievable[i]);
            if wls.retrievable[i] {
                prop_assert!((bp.beliefs[i].mean - wls.means[i]).abs() < 1e-8);
                prop_assert!((bp.beliefs[i].variance - wls.variance(i)).abs() < 1e-10);
            }
        }
    }
}
