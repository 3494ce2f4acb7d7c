use std::collections::HashMap;

use lesiongraph::cohortsynth::{synth_cohort, CohortSpec, REFERENCE_COUNTS};
use lesiongraph::evalkit::{crossval, stratified_folds, EvalConfig};
use lesiongraph::gcn::{fit_predict, FitConfig, Propagator};
use lesiongraph::popgraph::{load_cohort, save_features, write_metadata, CohortPrep, NodeRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn counts(labels: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    labels.iter().for_each(|&l| c[l] += 1);
    c
}

fn mutual_information(a: &[String], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: HashMap<(&str, usize), f64> = HashMap::new();
    let mut pa: HashMap<&str, f64> = HashMap::new();
    let mut pb: HashMap<usize, f64> = HashMap::new();
    for (x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0 / n;
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
    }
    joint.iter().map(|(&(x, y), &p)| p * (p / (pa[x] * pb[&y])).ln()).sum()
}

fn permutation_p(values: &[String], labels: &[usize], seed: u64) -> f64 {
    let observed = mutual_information(values, labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = labels.to_vec();
    let mut as_large = 0;
    for _ in 0..199 {
        shuffled.shuffle(&mut rng);
        as_large += usize::from(mutual_information(values, &shuffled) >= observed);
    }
    (as_large + 1) as f64 / 200.0
}

fn site_column(records: &[NodeRecord]) -> Vec<String> {
    records.iter().map(|r| r.site.clone().unwrap()).collect()
}

#[test]
fn same_seed_same_cohort() {
    let spec = CohortSpec { n_nodes: 120, seed: 4, ..Default::default() };
    assert_eq!(synth_cohort(&spec).unwrap(), synth_cohort(&spec).unwrap());
    let other = CohortSpec { seed: 5, ..spec.clone() };
    assert_ne!(synth_cohort(&spec).unwrap(), synth_cohort(&other).unwrap());
}

#[test]
fn class_counts_match_spec_exactly() {
    let c = synth_cohort(&CohortSpec::default()).unwrap();
    assert_eq!(counts(&c.labels(8).unwrap(), 8), vec![75; 8]);

    let spec = CohortSpec { n_nodes: 2166, ..Default::default() }.with_reference_proportions();
    let c = synth_cohort(&spec).unwrap();
    assert_eq!(counts(&c.labels(8).unwrap(), 8), REFERENCE_COUNTS.to_vec());

    let spec = CohortSpec { n_nodes: 600, ..Default::default() }.with_reference_proportions();
    let got = spec.class_counts().unwrap();
    assert_eq!(got.iter().sum::<usize>(), 600);
    for (g, r) in got.iter().zip(REFERENCE_COUNTS) {
        let quota = r as f64 * 600.0 / 2166.0;
        assert!((*g as f64 - quota).abs() < 1.0);
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let base = CohortSpec::default();
    for bad in [
        CohortSpec { n_classes: 1, ..base.clone() },
        CohortSpec { n_nodes: 5, ..base.clone() },
        CohortSpec { metadata_strength: 1.5, ..base.clone() },
        CohortSpec { class_separation: -1.0, ..base.clone() },
        CohortSpec { proportions: Some(vec![1.0; 3]), ..base.clone() },
        CohortSpec { proportions: Some(vec![1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]), ..base.clone() },
        CohortSpec { feature_dim: 0, ..base.clone() },
    ] {
        assert!(synth_cohort(&bad).is_err(), "{bad:?}");
    }
}

#[test]
fn zero_strength_metadata_is_independent_of_class() {
    let c = synth_cohort(&CohortSpec { metadata_strength: 0.0, seed: 21, ..Default::default() }).unwrap();
    let labels = c.labels(8).unwrap();
    let p = permutation_p(&site_column(&c.records), &labels, 1);
    assert!(p > 0.05, "p = {p}");

    let c = synth_cohort(&CohortSpec { seed: 21, ..Default::default() }).unwrap();
    let p = permutation_p(&site_column(&c.records), &c.labels(8).unwrap(), 1);
    assert!(p < 0.01, "p = {p}");
}

#[test]
fn no_feature_separation_gives_chance_auc() {
    let c = synth_cohort(&CohortSpec { class_separation: 0.0, seed: 3, ..Default::default() }).unwrap();
    let labels = c.labels(8).unwrap();
    let folds = stratified_folds(&labels, 5, 3).unwrap();
    let cfg = FitConfig::default();
    let cv = crossval(&labels, &folds, 5, &EvalConfig { n_boot: 20, seed: 0 }, |f| {
        fit_predict(&Propagator::Identity, &c.features, &labels, &folds, f, 8, &cfg)
    })
    .unwrap();
    let auc = cv.fold_macro_auc.iter().sum::<f64>() / 5.0;
    assert!((auc - 0.5).abs() <= 0.05, "auc {auc}");
}

#[test]
fn files_round_trip_losslessly() {
    let spec = CohortSpec { n_nodes: 80, missing_rate: 0.1, seed: 9, ..Default::default() };
    let c = synth_cohort(&spec).unwrap();
    assert!(c.records.iter().any(|r| r.age.is_none() || r.site.is_none()));
    let dir = tempfile::tempdir().unwrap();
    let meta = dir.path().join("meta.csv");
    let feats = dir.path().join("feats.gdfm");
    write_metadata(std::fs::File::create(&meta).unwrap(), &c.records).unwrap();
    save_features(&feats, &c.features).unwrap();
    assert_eq!(load_cohort(&meta, &feats).unwrap(), c);
}

#[test]
fn geometry_is_heavy_tailed_enough_to_clip() {
    let c = synth_cohort(&CohortSpec::default()).unwrap();
    let prep = CohortPrep::new(&c.records);
    let max_area = c.records.iter().filter_map(|r| r.area_mm2).fold(0.0, f64::max);
    assert!(prep.numeric[1].hi < max_area);
    for r in &c.records {
        let (a, p, g) = (r.area_mm2.unwrap(), r.perimeter_mm.unwrap(), r.rg_mm.unwrap());
        assert!(a > 0.0 && g > 0.0);
        // a closed curve encloses at most the disk area of its length
        assert!(p * p >= 4.0 * std::f64::consts::PI * a * (1.0 - 1e-6));
    }
}
