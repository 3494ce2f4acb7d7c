use std::path::Path;

use lesiongraph::popgraph::{
    apply_threshold, build_full_weighted, build_identical, build_random, edge_weight, gamma_categorical,
    gamma_numeric, load_cohort, n_pairs, parse_feature_csv, parse_features, parse_metadata, prepare_numeric_channel,
    sweep_thresholds, write_feature_csv, write_features, write_metadata, ChannelNorm, ChannelPrep, Cohort, CohortPrep,
    EdgeWeightConfig, NodeRecord, PopulationGraph,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn node(id: &str, age: Option<f64>, sex: &str, site: &str, source: &str, geom: [Option<f64>; 3]) -> NodeRecord {
    NodeRecord {
        id: id.into(),
        label: Some(0),
        age,
        sex: Some(sex.into()),
        site: Some(site.into()),
        source: Some(source.into()),
        area_mm2: geom[0],
        perimeter_mm: geom[1],
        rg_mm: geom[2],
    }
}

fn random_records(n: usize, seed: u64) -> Vec<NodeRecord> {
    records_with_gaps(n, seed, 0.1)
}

fn records_with_gaps(n: usize, seed: u64, missing: f64) -> Vec<NodeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, opts: &[&str]| -> Option<String> {
        if rng.random::<f64>() < missing {
            None
        } else {
            Some(opts[rng.random_range(0..opts.len())].to_string())
        }
    };
    let num = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.random::<f64>() >= missing).then(|| rng.random_range(lo..hi));
    (0..n)
        .map(|i| NodeRecord {
            id: format!("n{i}"),
            label: Some(i % 3),
            age: num(&mut rng, 5.0, 90.0),
            sex: pick(&mut rng, &["female", "male"]),
            site: pick(&mut rng, &["torso", "arm", "leg", "head"]),
            source: pick(&mut rng, &["HAM10000", "BCN20000", "MSK"]),
            area_mm2: num(&mut rng, 1.0, 400.0),
            perimeter_mm: num(&mut rng, 3.0, 90.0),
            rg_mm: num(&mut rng, 0.5, 12.0),
        })
        .collect()
}

fn complete(r: &NodeRecord) -> bool {
    r.age.is_some()
        && r.sex.is_some()
        && r.site.is_some()
        && r.source.is_some()
        && r.area_mm2.is_some()
        && r.perimeter_mm.is_some()
        && r.rg_mm.is_some()
}

fn cohort(records: Vec<NodeRecord>) -> Cohort {
    let n = records.len();
    Cohort::new(records, Array2::zeros((n, 2))).unwrap()
}

#[test]
fn kronecker_delta_on_named_metrics() {
    assert_eq!(gamma_categorical("female", "female"), 1.0);
    assert_eq!(gamma_categorical("torso", "arm"), 0.0);
    assert_eq!(gamma_categorical("HAM10000", "HAM10000"), 1.0);
}

#[test]
fn three_ages_hand_computation() {
    let p = prepare_numeric_channel(&[Some(30.0), Some(40.0), Some(50.0)]);
    assert!((p.mean - 40.0 / 3.0).abs() < 1e-12);
    assert!((p.std - (200.0f64 / 9.0).sqrt()).abs() < 1e-12);
    assert!((p.std - 4.714).abs() < 5e-4);
    assert!((gamma_numeric(&p, 30.0, 40.0) - 0.6089).abs() < 5e-5);
    assert!((gamma_numeric(&p, 30.0, 50.0) + 0.8884).abs() < 5e-5);
    let at_mean = ChannelPrep { mean: 10.0, ..p };
    assert_eq!(gamma_numeric(&at_mean, 30.0, 40.0), 0.0);
}

#[test]
fn outlier_is_clipped_to_ninety_ninth_percentile() {
    let mut values: Vec<Option<f64>> = (0..299).map(|i| Some(i as f64 / 10.0)).collect();
    values.push(Some(1e6));
    let p = prepare_numeric_channel(&values);
    let mut sorted: Vec<f64> = values.iter().map(|v| v.unwrap()).collect();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(p.hi, sorted[296]);
    assert_eq!(p.lo, sorted[2]);
    assert_eq!(gamma_numeric(&p, 0.0, 1e6), gamma_numeric(&p, 0.0, p.hi));
}

#[test]
fn weight_bounds_are_attained() {
    let saturating = ChannelPrep {
        lo: 0.0,
        hi: 1000.0,
        mean: 500.0,
        std: 1.0,
        constant: false,
        disabled: false,
    };
    let prep = CohortPrep { numeric: [saturating; 4] };
    let cfg = EdgeWeightConfig::default();
    let a = node("a", Some(10.0), "f", "arm", "x", [Some(1.0), Some(1.0), Some(1.0)]);
    let same = node("b", Some(10.0), "f", "arm", "x", [Some(1.0), Some(1.0), Some(1.0)]);
    assert_eq!(edge_weight(&a, &same, &prep, &cfg), Some(1.0));
    let far = node("c", Some(1000.0), "m", "leg", "y", [Some(1000.0), Some(1000.0), Some(1000.0)]);
    let lower = edge_weight(&a, &far, &prep, &cfg).unwrap();
    assert!((lower + 4.0 / 7.0).abs() < 1e-12, "{lower}");
}

#[test]
fn pairs_without_shared_channels_get_zero() {
    let a = NodeRecord {
        id: "a".into(),
        sex: Some("f".into()),
        ..Default::default()
    };
    let b = NodeRecord {
        id: "b".into(),
        site: Some("arm".into()),
        ..Default::default()
    };
    let prep = CohortPrep::new(&[a.clone(), b.clone()]);
    assert_eq!(edge_weight(&a, &b, &prep, &EdgeWeightConfig::default()), None);
    let g = build_full_weighted(&cohort(vec![a, b]), &prep, &EdgeWeightConfig::default()).unwrap();
    assert_eq!(g.edges, vec![(0, 1, 0.0)]);
}

#[test]
fn three_node_cohort_matches_hand_table() {
    let recs = vec![
        node("0", Some(30.0), "f", "a", "x", [Some(1.0), Some(5.0), Some(1.0)]),
        node("1", Some(40.0), "f", "b", "x", [Some(2.0), Some(7.0), Some(1.0)]),
        node("2", Some(50.0), "m", "a", "x", [Some(4.0), None, Some(1.0)]),
    ];
    let c = cohort(recs);
    let prep = CohortPrep::new(&c.records);
    let g = build_full_weighted(&c, &prep, &EdgeWeightConfig::default()).unwrap();

    // ages: diffs {10, 20, 10}, mean 40/3, std sqrt(200/9)
    let (am, asd) = (40.0 / 3.0, (200.0f64 / 9.0).sqrt());
    // areas: diffs {1, 3, 2}, mean 2, std sqrt(2/3)
    let (rm, rsd) = (2.0, (2.0f64 / 3.0).sqrt());
    let age = |d: f64| -((d - am) / asd).tanh();
    let area = |d: f64| -((d - rm) / rsd).tanh();
    // perimeter has a single pair (zero spread) and rg is constant: both contribute 0
    let w01 = (1.0 + 0.0 + 1.0 + age(10.0) + area(1.0) + 0.0 + 0.0) / 7.0;
    let w02 = (0.0 + 1.0 + 1.0 + age(20.0) + area(3.0) + 0.0) / 6.0;
    let w12 = (0.0 + 0.0 + 1.0 + age(10.0) + area(2.0) + 0.0) / 6.0;
    let want = [(0, 1, w01), (0, 2, w02), (1, 2, w12)];
    assert_eq!(g.edges.len(), 3);
    for (got, want) in g.edges.iter().zip(want) {
        assert_eq!((got.0, got.1), (want.0, want.1));
        assert!((got.2 - want.2).abs() < 1e-12, "{got:?} vs {want:?}");
    }

    let sum = EdgeWeightConfig {
        norm: ChannelNorm::Sum,
        ..Default::default()
    };
    let gs = build_full_weighted(&c, &prep, &sum).unwrap();
    assert!((gs.edges[0].2 - 7.0 * w01).abs() < 1e-12);
}

#[test]
fn identical_and_full_schemes_cover_every_pair() {
    assert_eq!(n_pairs(2166), 2_344_695);
    let g = build_identical(2166);
    assert_eq!(g.n_edges(), 2_344_695);
    assert!(g.edges.iter().all(|e| e.0 < e.1 && e.2 == 1.0));
    let small = build_identical(3);
    assert_eq!(small.edges, vec![(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)]);

    let c = cohort(random_records(2166, 4));
    let prep = CohortPrep::new(&c.records);
    let full = build_full_weighted(&c, &prep, &EdgeWeightConfig::default()).unwrap();
    assert_eq!(full.n_edges(), 2_344_695);
}

#[test]
fn threshold_extremes_and_monotone_sweep() {
    let c = cohort(records_with_gaps(120, 9, 0.0));
    let prep = CohortPrep::new(&c.records);
    let g = build_full_weighted(&c, &prep, &EdgeWeightConfig::default()).unwrap();
    assert_eq!(apply_threshold(&g, -4.0 / 7.0 - 1e-9).n_edges(), n_pairs(120));
    assert_eq!(apply_threshold(&g, 1.0 + 1e-9).n_edges(), 0);
    let ts: Vec<f64> = (0..=20).map(|i| -0.6 + i as f64 * 0.08).collect();
    let sweep = sweep_thresholds(&g, &ts);
    for (t, count) in &sweep {
        assert_eq!(*count, apply_threshold(&g, *t).n_edges());
    }
    assert!(sweep.windows(2).all(|w| w[0].1 >= w[1].1));
    let th = apply_threshold(&g, 0.3);
    assert!(th.edges.iter().all(|e| e.2 == 1.0));
}

#[test]
fn random_scheme_keeps_requested_count() {
    let g = build_random(50, 300, 11).unwrap();
    assert_eq!(g.n_edges(), 300);
    assert!(g.edges.windows(2).all(|w| (w[0].0, w[0].1) < (w[1].0, w[1].1)));
    assert!(g.edges.iter().all(|e| e.0 < e.1 && e.2 == 1.0));
    assert_eq!(g, build_random(50, 300, 11).unwrap());
    assert_ne!(g, build_random(50, 300, 12).unwrap());
}

#[test]
fn permuting_nodes_permutes_weights() {
    let recs = random_records(5, 21);
    let perm = [3usize, 0, 4, 1, 2];
    let permuted: Vec<NodeRecord> = perm.iter().map(|&i| recs[i].clone()).collect();
    let cfg = EdgeWeightConfig::default();
    let a = build_full_weighted(&cohort(recs.clone()), &CohortPrep::new(&recs), &cfg).unwrap();
    let b = build_full_weighted(&cohort(permuted.clone()), &CohortPrep::new(&permuted), &cfg).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            assert!((b.weight(i, j) - a.weight(perm[i], perm[j])).abs() < 1e-12);
        }
    }
}

#[test]
fn edge_list_bytes_are_deterministic_and_round_trip() {
    let c = cohort(random_records(40, 2));
    let prep = CohortPrep::new(&c.records);
    let g = build_full_weighted(&c, &prep, &EdgeWeightConfig::default()).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    g.write_csv(&mut a).unwrap();
    build_full_weighted(&c, &prep, &EdgeWeightConfig::default())
        .unwrap()
        .write_csv(&mut b)
        .unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("edges.csv");
    g.save_csv(&path).unwrap();
    assert_eq!(PopulationGraph::load_csv(&path, 40).unwrap(), g);
}

#[test]
fn malformed_edge_list_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("edges.csv");
    std::fs::write(&path, "u,v,weight\n0,1,0.5\n2,1,0.1\n").unwrap();
    let err = PopulationGraph::load_csv(&path, 3).unwrap_err().to_string();
    assert!(err.contains(":3:"), "{err}");
}

#[test]
fn metadata_and_features_round_trip() {
    let mut recs = random_records(30, 5);
    recs[3].label = None;
    let mut meta = Vec::new();
    write_metadata(&mut meta, &recs).unwrap();
    let back = parse_metadata(&meta[..], Path::new("meta.csv")).unwrap();
    assert_eq!(back, recs);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Array2::from_shape_fn((30, 7), |_| rng.random_range(-3.0f32..3.0) as f64);
    let mut bin = Vec::new();
    write_features(&mut bin, &x).unwrap();
    assert_eq!(&bin[..4], b"GDFM");
    assert_eq!(u32::from_le_bytes(bin[4..8].try_into().unwrap()), 30);
    assert_eq!(u32::from_le_bytes(bin[8..12].try_into().unwrap()), 7);
    assert_eq!(bin.len(), 12 + 30 * 7 * 4);
    assert_eq!(parse_features(&bin, Path::new("x.gdfm")).unwrap(), x);

    let mut csv = Vec::new();
    write_feature_csv(&mut csv, &x).unwrap();
    assert_eq!(parse_feature_csv(&csv[..], Path::new("x.csv")).unwrap(), x);

    let dir = tempfile::tempdir().unwrap();
    let (mp, fp) = (dir.path().join("meta.csv"), dir.path().join("x.gdfm"));
    std::fs::write(&mp, &meta).unwrap();
    std::fs::write(&fp, &bin).unwrap();
    let c = load_cohort(&mp, &fp).unwrap();
    assert_eq!(c.records, recs);
    assert_eq!(c.features, x);
}

#[test]
fn bad_inputs_are_rejected() {
    let err = parse_metadata(&b"id,label,age\n"[..], Path::new("m.csv")).unwrap_err();
    assert!(err.to_string().contains("m.csv:1"));
    let body = format!("{}\nn0,zero,,,,,,,\n", lesiongraph::popgraph::METADATA_HEADER);
    let err = parse_metadata(body.as_bytes(), Path::new("m.csv")).unwrap_err();
    assert!(err.to_string().contains("m.csv:2"), "{err}");
    assert!(parse_features(b"GDFM\x02\0\0\0\x02\0\0\0", Path::new("x")).is_err());
    assert!(parse_features(b"NOPE\0\0\0\0\0\0\0\0", Path::new("x")).is_err());
    let recs = random_records(3, 1);
    assert!(Cohort::new(recs.clone(), Array2::zeros((2, 4))).is_err());
    assert!(Cohort::from_rows(recs, &[vec![1.0], vec![1.0, 2.0], vec![0.0]]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn weights_are_symmetric_and_bounded(seed in any::<u64>(), n in 2usize..25) {
        let recs = random_records(n, seed);
        let prep = CohortPrep::new(&recs);
        let cfg = EdgeWeightConfig::default();
        for i in 0..n {
            for j in 0..n {
                let a = edge_weight(&recs[i], &recs[j], &prep, &cfg);
                prop_assert_eq!(a, edge_weight(&recs[j], &recs[i], &prep, &cfg));
                if let Some(w) = a {
                    // with channels missing the mean runs over fewer terms
                    let lo = if complete(&recs[i]) && complete(&recs[j]) { -4.0 / 7.0 } else { -1.0 };
                    prop_assert!((lo - 1e-12..=1.0 + 1e-12).contains(&w));
                }
            }
        }
        let g = build_full_weighted(&cohort(recs), &prep, &cfg).unwrap();
        let dense = g.dense();
        for i in 0..n {
            prop_assert_eq!(dense[[i, i]], 0.0);
            for j in 0..n {
                prop_assert_eq!(dense[[i, j]], dense[[j, i]]);
            }
        }
    }
}
