//! Fixtures shared by the benchmarks.

use lesiongraph::cohortsynth::{synth_cohort, CohortSpec};
use lesiongraph::popgraph::{build_full_weighted, Cohort, CohortPrep, EdgeWeightConfig, PopulationGraph};
use lesiongraph::rulergen::{synthesize_scene, SynthesisParams};
use lesiongraph::BinaryMask;

/// One default-size synthetic ruler mask.
pub fn ruler_mask(seed: u64) -> BinaryMask {
    synthesize_scene(seed, &SynthesisParams::default()).expect("default params synthesize").mask
}

pub fn cohort(n_nodes: usize, seed: u64) -> Cohort {
    synth_cohort(&CohortSpec { n_nodes, seed, ..Default::default() }).expect("valid spec")
}

pub fn full_graph(cohort: &Cohort) -> PopulationGraph {
    build_full_weighted(cohort, &CohortPrep::new(&cohort.records), &EdgeWeightConfig::default()).expect("complete metadata")
}

/// Class-0 probabilities of a cohort's features, as noisy ranking scores.
pub fn scores(cohort: &Cohort) -> (Vec<f64>, Vec<bool>) {
    let labels = cohort.labels(8).expect("eight classes");
    let scores = cohort.features.rows().into_iter().map(|r| r[0]).collect();
    (scores, labels.iter().map(|&l| l == 0).collect())
}
