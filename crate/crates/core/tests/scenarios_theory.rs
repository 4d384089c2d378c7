use ndarray::Array2;
use proptest::prelude::*;

use coms2t::data::{synth_generate, SynthConfig};
use coms2t::scenarios::{
    haversine_km, nearest_donors, node_copy_adjacency, node_involvement, node_removal, remove_nodes, split_interval, IntervalSplit,
    SplitManifest,
};
use coms2t::theory::{
    aggregation_error_signed, amplification_ratio, epsilon_q, optimal_ws, theory_check, CausalNeighborhoodSpec, TheoryCheckConfig,
};
use coms2t::Error;

fn base_split(nodes: usize) -> (coms2t::data::SpatioTemporalDataset, SplitManifest) {
    let ds = synth_generate(&SynthConfig::small(nodes, 24 * 12 * 6, 5)).unwrap();
    let split = split_interval(&ds, &IntervalSplit::default()).unwrap();
    (ds, split)
}

fn disjoint(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|x| !b.contains(x))
}

#[test]
fn interval_split_steps_are_disjoint_and_causal_within_a_day() {
    let (_, s) = base_split(4);
    assert!(!s.train.is_empty() && !s.val.is_empty() && !s.test.is_empty() && !s.adapt.is_empty());
    assert!(disjoint(&s.train, &s.val) && disjoint(&s.train, &s.test) && disjoint(&s.val, &s.test));
    assert!(disjoint(&s.adapt, &s.test));
    assert_eq!(s.test_nodes(), s.train_nodes);
}

#[test]
fn too_many_hidden_nodes_is_a_configuration_error() {
    let (ds, s) = base_split(3);
    assert!(matches!(node_involvement(&ds, &s, 0.9, 0), Err(Error::Config(_))));
    assert!(matches!(node_removal(&ds, &s, 0.9, 0), Err(Error::Config(_))));
}

#[test]
fn degenerate_theory_inputs_are_rejected() {
    let spec = CausalNeighborhoodSpec { mu_w: 0.0, ..CausalNeighborhoodSpec::default() };
    assert!(matches!(amplification_ratio(&spec), Err(Error::Singularity(_))));
    let spec = CausalNeighborhoodSpec { q: 0.5, ..CausalNeighborhoodSpec::default() };
    assert!(matches!(epsilon_q(&spec), Err(Error::Config(_))));
    let spec = CausalNeighborhoodSpec { mu_s: 0.0, ..CausalNeighborhoodSpec::default() };
    assert!(matches!(optimal_ws(&spec), Err(Error::Singularity(_))));
    let spec = CausalNeighborhoodSpec { d: 1, ..CausalNeighborhoodSpec::default() };
    assert!(spec.validate().is_err());
}

#[test]
fn default_theory_check_passes() {
    let report = theory_check(&TheoryCheckConfig::default()).unwrap();
    assert!(report.passed(), "{:?}", report.checks.iter().filter(|c| !c.pass).collect::<Vec<_>>());
}

#[test]
fn haversine_matches_known_distances() {
    assert_eq!(haversine_km((10.0, 20.0), (10.0, 20.0)), 0.0);
    // A quarter of a great circle.
    let quarter = haversine_km((0.0, 0.0), (0.0, 90.0));
    assert!((quarter - std::f64::consts::FRAC_PI_2 * 6371.0088).abs() < 1e-9);
    let pole = haversine_km((90.0, 0.0), (-90.0, 0.0));
    assert!((pole - std::f64::consts::PI * 6371.0088).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ratio_equals_the_shift_multiplier(q in 1.0f64..1e3, d in 2usize..64, p in 0.01f64..0.99,
                                         mu0 in 1e-3f64..1e3, mu_w in 1e-3f64..10.0) {
        let spec = CausalNeighborhoodSpec { q, d, p, mu0, mu_w, ..CausalNeighborhoodSpec::default() };
        prop_assert_eq!(amplification_ratio(&spec).unwrap(), q);
    }

    #[test]
    fn optimal_spurious_weight_zeroes_the_error(d in 2usize..32, p in 0.05f64..0.95, mu_s in 0.1f64..10.0,
                                                mu_c in 0.1f64..10.0, w_c in -2.0f64..2.0, mu_next in 0.1f64..10.0) {
        let spec = CausalNeighborhoodSpec { d, p, mu_s, mu_c, w_c, mu_next, ..CausalNeighborhoodSpec::default() };
        let w_s = optimal_ws(&spec).unwrap();
        let err = aggregation_error_signed(&CausalNeighborhoodSpec { w_s, ..spec });
        prop_assert!(err.abs() <= 1e-9 * (1.0 + mu_next), "residual {}", err);
    }

    #[test]
    fn node_scenarios_partition_the_node_set(nodes in 4usize..12, fraction in 0.1f64..0.5, seed in 0u64..1000) {
        let (ds, s) = base_split(nodes);
        let inv = node_involvement(&ds, &s, fraction, seed).unwrap();
        prop_assert!(disjoint(&inv.train_nodes, &inv.test_only_nodes));
        prop_assert_eq!(inv.train_nodes.len() + inv.test_only_nodes.len(), nodes);
        prop_assert_eq!(inv.test_nodes(), (0..nodes).collect::<Vec<_>>());
        prop_assert_eq!(&inv.train, &s.train);

        let rem = node_removal(&ds, &s, fraction, seed).unwrap();
        prop_assert_eq!(rem.train_nodes.len(), nodes);
        prop_assert_eq!(rem.test_nodes().len(), nodes - rem.removed_nodes.len());
        prop_assert!(disjoint(&rem.test_nodes(), &rem.removed_nodes));
        prop_assert_eq!(node_removal(&ds, &s, fraction, seed).unwrap(), rem);
    }

    #[test]
    fn removing_nodes_keeps_the_remaining_entries(n in 3usize..10, seed in 0u64..1000) {
        let a = Array2::from_shape_fn((n, n), |(i, j)| (i * 31 + j * 7) as f64 + seed as f64);
        let removed: Vec<usize> = (0..n).filter(|i| (i + seed as usize) % 3 == 0).collect();
        let keep: Vec<usize> = (0..n).filter(|i| !removed.contains(i)).collect();
        let b = remove_nodes(a.view(), &removed);
        prop_assert_eq!(b.dim(), (keep.len(), keep.len()));
        for (bi, &i) in keep.iter().enumerate() {
            for (bj, &j) in keep.iter().enumerate() {
                prop_assert_eq!(b[[bi, bj]], a[[i, j]]);
            }
        }
    }

    #[test]
    fn node_copy_extends_with_donor_entries(n in 2usize..8, m in 1usize..5,
                                            lat in proptest::collection::vec(-60.0f64..60.0, 12),
                                            lon in proptest::collection::vec(-170.0f64..170.0, 12)) {
        let old = Array2::from_shape_fn((n, 2), |(i, k)| if k == 0 { lat[i] } else { lon[i] });
        let new = Array2::from_shape_fn((m, 2), |(i, k)| if k == 0 { lat[n + i] } else { lon[n + i] });
        let a = Array2::from_shape_fn((n, n), |(i, j)| (10 * i + j) as f64);
        let ext = node_copy_adjacency(a.view(), old.view(), new.view()).unwrap();
        let donors = nearest_donors(old.view(), new.view()).unwrap();
        prop_assert_eq!(ext.dim(), (n + m, n + m));
        let src: Vec<usize> = (0..n).chain(donors.iter().copied()).collect();
        for i in 0..n + m {
            for j in 0..n + m {
                prop_assert_eq!(ext[[i, j]], a[[src[i], src[j]]]);
            }
        }
        for (k, &donor) in donors.iter().enumerate() {
            let p = (new[[k, 0]], new[[k, 1]]);
            let best = haversine_km(p, (old[[donor, 0]], old[[donor, 1]]));
            for j in 0..n {
                prop_assert!(best <= haversine_km(p, (old[[j, 0]], old[[j, 1]])));
            }
        }
    }
}
