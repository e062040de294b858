//! The six-word sentiment toy, end to end.

mod common;

use common::{iv, toy_coefficients, toy_designs, toy_keys};
use sparse_mobius::detection::{BinDetector, BinType};
use sparse_mobius::group_testing::{decode_comp_dd, decode_lp, GroupTestInstance, LpOptions};
use sparse_mobius::oracle::SparseOracle;
use sparse_mobius::peeling::{initial_frontier, run_with_designs, LoopOptions, PeelingState};
use sparse_mobius::sampling::{build_bin_tables, DEFAULT_BATCH_SIZE};
use sparse_mobius::{BoolMatrix, DetectorConfig, IndexVector};

fn options() -> LoopOptions {
    LoopOptions {
        detector: DetectorConfig::default(),
        max_rounds: None,
        full_rescan: false,
        batch_size: DEFAULT_BATCH_SIZE,
        seed: 0,
        config_digest: String::new(),
    }
}

fn counts(types: &[BinType]) -> (usize, usize, usize) {
    let z = types.iter().filter(|t| matches!(t, BinType::Zeroton)).count();
    let s = types.iter().filter(|t| t.is_singleton()).count();
    (z, s, types.len() - z - s)
}

fn singleton_key(t: &BinType) -> Option<&IndexVector> {
    match t {
        BinType::Singleton { k, .. } => Some(k),
        _ => None,
    }
}

#[test]
fn bin_type_pattern() {
    let oracle = SparseOracle::new(toy_coefficients());
    let designs = toy_designs(true);
    let (tables, _) = build_bin_tables(&oracle, &designs, 64).unwrap();
    let cfg = DetectorConfig::default();
    let types: Vec<Vec<BinType>> = designs
        .iter()
        .zip(&tables)
        .map(|(d, t)| {
            let det = BinDetector::new(d, &cfg, t.max_abs());
            (0..t.num_bins()).map(|j| det.detect(t.bin(j), j)).collect()
        })
        .collect();
    assert_eq!(counts(&types[0]), (1, 2, 1));
    assert_eq!(counts(&types[1]), (2, 1, 1));

    // U_1(10) holds "never" alone
    let [k1, k2, k3, k4] = toy_keys();
    assert_eq!(singleton_key(&types[0][1]), Some(&k1));
    assert_eq!(singleton_key(&types[0][2]), Some(&k3));
    assert_eq!(singleton_key(&types[1][2]), Some(&k4));
    let u11 = tables[0].bin(3)[0];
    assert!((u11 - (toy_coefficients().get(&k2) + toy_coefficients().get(&k4))).abs() < 1e-12);
}

#[test]
fn frontier_holds_three_singletons() {
    let oracle = SparseOracle::new(toy_coefficients());
    let designs = toy_designs(true);
    let (tables, _) = build_bin_tables(&oracle, &designs, 64).unwrap();
    let frontier = initial_frontier(&tables, &designs, &DetectorConfig::default(), 2.2);
    let at: Vec<(usize, usize)> = frontier.iter().map(|e| (e.group, e.bin)).collect();
    assert_eq!(at, vec![(0, 1), (0, 2), (1, 2)]);
    assert!(frontier.iter().all(|e| e.certain));
}

#[test]
fn peeling_impress_resolves_never_fails() {
    let truth = toy_coefficients();
    let oracle = SparseOracle::new(truth.clone());
    let designs = toy_designs(true);
    let (tables, _) = build_bin_tables(&oracle, &designs, 64).unwrap();
    let [_, k2, _, k4] = toy_keys();

    let mut state = PeelingState::new(designs.clone(), tables);
    let touched = state.peel_once(&k4, truth.get(&k4));
    assert_eq!(touched, vec![(0, 3), (1, 2)]);
    let cfg = DetectorConfig::default();
    let det = BinDetector::new(&designs[0], &cfg, 2.2);
    match det.detect(state.tables[0].bin(3), 3) {
        BinType::Singleton { k, value } => {
            assert_eq!(k, k2);
            assert!((value - 2.2).abs() < 1e-12);
        }
        other => panic!("expected a singleton, got {other:?}"),
    }
}

#[test]
fn loop_recovers_all_four() {
    let truth = toy_coefficients();
    let out = run_with_designs(&SparseOracle::new(truth.clone()), toy_designs(true), &options(), |_| {}).unwrap();
    assert!(out.report.complete());
    assert_eq!(out.coefficients.len(), 4);
    for (k, v) in truth.iter() {
        assert!((out.coefficients.get(k) - v).abs() < 1e-12, "{k}");
    }
    assert_eq!(out.report.total_queries, 56);
    assert!(out.report.unique_queries <= 56);
}

#[test]
fn delay_free_sample_count() {
    let (_, stats) = build_bin_tables(&SparseOracle::new(toy_coefficients()), &toy_designs(false), 64).unwrap();
    assert_eq!(stats.total_queries, 8);
    assert_eq!(stats.unique_queries, 7);
}

#[test]
fn binary_search_rows_separate_singletons() {
    let d = BoolMatrix::from_strs(&["111100", "110011", "101010"]).unwrap();
    let mut seen = std::collections::HashSet::new();
    let mut candidates = vec![IndexVector::zeros(6)];
    candidates.extend((0..6).map(|i| IndexVector::unit(6, i)));
    for k in &candidates {
        assert!(seen.insert(d.matvec(k).unwrap()), "{k} collides");
    }
    assert_eq!(seen.len(), 7);

    let y = d.matvec(&IndexVector::unit(6, 2)).unwrap();
    assert_eq!(y, iv("101"));
    let inst = GroupTestInstance::new(d, y).unwrap().with_max_defects(1);
    assert_eq!(decode_comp_dd(&inst, false).unwrap(), IndexVector::unit(6, 2));
    assert_eq!(decode_lp(&inst, &LpOptions::default()).unwrap(), IndexVector::unit(6, 2));
}
