//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failures are reported, not raised, so the exit status stays zero and the
//! full table is always printed. Pass a substring to run only matching
//! criteria, e.g. `cargo test --test acceptance -- geometry`.

use std::time::{Duration, Instant};

use lesiongraph::cohortsynth::{synth_cohort, CohortSpec, REFERENCE_COUNTS};
use lesiongraph::evalkit::{crossval, roc_auc, stratified_folds, EvalConfig};
use lesiongraph::experiment::{compare_schemes, write_report, CompareConfig};
use lesiongraph::gcn::{class_weights, fit_predict, grad_check_gcn, ClassWeights, FitConfig, GcnModel, Propagator, TrainConfig};
use lesiongraph::lesiongeom::{area_mm2, describe, perimeter_mm, radius_of_gyration_mm, write_descriptors, Contour};
use lesiongraph::popgraph::{
    build_full_weighted, build_identical, build_random, default_sweep, n_pairs, sweep_thresholds, write_features,
    write_metadata, CohortPrep, EdgeWeightConfig, PopulationGraph,
};
use lesiongraph::rulergen::{synthesize_batch, write_manifest, SynthesisParams};
use lesiongraph::scalenet::{
    grad_check, peak_estimate, prepare_input, train, Conv1dRegressor, RegressorHyper, ScaleDataset, ScaleTrainConfig,
};
use lesiongraph::tpcf::{signature, tpcf_bruteforce};
use lesiongraph::{BinaryMask, TpcfSignature};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn tpcf_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(2..=32), rng.random_range(2..=32));
        let density = rng.random_range(0.05..0.95);
        let bits = (0..w * h).map(|_| rng.random::<f64>() < density).collect();
        let m = BinaryMask::from_bits(w, h, bits).unwrap();
        let (fast, slow) = (signature(&m).unwrap(), tpcf_bruteforce(&m).unwrap());
        for (a, b) in fast.bins().iter().zip(slow.bins()) {
            worst = worst.max(rel_err(*a, *b));
        }
    }
    verdict(worst <= 1e-9, format!("100 masks, max relative difference {worst:.2e}"))
}

fn ruler_signatures(base: u64, n: usize) -> Vec<(TpcfSignature, f64)> {
    synthesize_batch(base, n, &SynthesisParams::default())
        .unwrap()
        .iter()
        .map(|s| (signature(&s.mask).unwrap(), s.rho_true))
        .collect()
}

fn gradient_checks() -> Verdict {
    let rulers = ruler_signatures(500, 20);
    let mut scale_worst = 0.0f64;
    let mut scale_checked = 0;
    for seed in 0..10u64 {
        let model = Conv1dRegressor::new(RegressorHyper::default(), seed).unwrap();
        let samples: Vec<(Vec<f64>, f64)> =
            rulers[2 * seed as usize..2 * seed as usize + 2].iter().map(|(s, r)| (prepare_input(s), *r)).collect();
        let r = grad_check(&model, &samples, model.n_params(), seed).unwrap();
        scale_worst = scale_worst.max(r.max_rel_error);
        scale_checked += r.checked;
    }

    let mut gcn_worst = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let mut edges = Vec::new();
        for u in 0..n as u32 {
            for v in u + 1..n as u32 {
                if rng.random::<f64>() < 0.5 {
                    edges.push((u, v, rng.random_range(-0.5..1.0)));
                }
            }
        }
        let g = PopulationGraph { n_nodes: n, edges };
        let x = Array2::from_shape_simple_fn((n, 6), || rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let w = ClassWeights {
            plus: (0..4).map(|_| rng.random_range(0.5..5.0)).collect(),
            minus: (0..4).map(|_| rng.random_range(0.5..1.0)).collect(),
        };
        let nodes: Vec<usize> = (0..n).filter(|v| v % 3 != 0).collect();
        let m = GcnModel::new(&[6, 8, 4], 0.5, seed + 50).unwrap();
        let r = grad_check_gcn(&m, &Propagator::from_graph(&g), &x, &labels, &w, &nodes).unwrap();
        gcn_worst = gcn_worst.max(r.max_rel_error);
    }
    verdict(
        scale_worst <= 1e-4 && gcn_worst <= 1e-4,
        format!("scalenet {scale_checked} components max rel {scale_worst:.2e}; gcn max rel {gcn_worst:.2e}"),
    )
}

fn geometry() -> Verdict {
    let disk = BinaryMask::from_fn(80, 80, |x, y| {
        let (dx, dy) = (x as f64 - 40.0, y as f64 - 40.0);
        dx * dx + dy * dy <= 900.0
    })
    .unwrap();
    let d = describe(&disk, 1.0).unwrap();
    let (area_err, perim_err) = (rel_err(d.area_mm2, 2827.43), rel_err(d.perimeter_mm, 188.50));

    let sq = Contour::new(vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]).unwrap();
    let p = perimeter_mm(&sq, 0.1);
    let a = area_mm2(std::slice::from_ref(&sq), 0.1);
    let rg = radius_of_gyration_mm(&sq, 0.1);
    let rg5 = format!("{rg:.5}");
    verdict(
        area_err <= 0.02 && perim_err <= 0.03 && (p - 4.0).abs() < 1e-12 && (a - 1.0).abs() < 1e-12 && rg5 == "0.70711",
        format!(
            "disk area {:.2} ({:.2}%), perimeter {:.2} ({:.2}%); square P {p} A {a} Rg {rg5}",
            d.area_mm2,
            100.0 * area_err,
            d.perimeter_mm,
            100.0 * perim_err
        ),
    )
}

/// At most five significant figures and four decimals, cut rather than rounded.
fn table_digits(x: f64) -> String {
    let decimals = (4 - x.log10().floor() as i32).clamp(0, 4) as usize;
    let scale = 10f64.powi(decimals as i32);
    format!("{:.*}", decimals, ((x * scale) + 1e-9).floor() / scale)
}

fn class_weight_table() -> Verdict {
    let plus = ["2.7075", "2.7075", "2.7075", "3.9525", "2.7075", "14.635", "26.414", "6.1186"];
    let minus = ["0.6132", "0.6132", "0.6132", "0.5724", "0.6132", "0.5176", "0.5096", "0.5444"];
    let w = class_weights(&REFERENCE_COUNTS, 2166).unwrap();
    let got_plus: Vec<String> = w.plus.iter().map(|&v| table_digits(v)).collect();
    let got_minus: Vec<String> = w.minus.iter().map(|&v| table_digits(v)).collect();
    let pass = got_plus == plus && got_minus == minus;
    verdict(pass, format!("w+ {} | w- {}", got_plus.join(" "), got_minus.join(" ")))
}

fn edge_counts() -> Verdict {
    let identical = build_identical(2166).n_edges();
    let spec = CohortSpec { n_nodes: 2166, feature_dim: 4, ..Default::default() }.with_reference_proportions();
    let cohort = synth_cohort(&spec).unwrap();
    let full = build_full_weighted(&cohort, &CohortPrep::new(&cohort.records), &EdgeWeightConfig::default()).unwrap();
    let sweep = sweep_thresholds(&full, &default_sweep());
    let monotone = sweep.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 >= w[1].1);
    let counts: Vec<String> = sweep.iter().map(|(_, c)| c.to_string()).collect();
    verdict(
        identical == 2_344_695 && full.n_edges() == 2_344_695 && n_pairs(2166) == 2_344_695 && monotone,
        format!("identical {identical}, full {}; sweep {}", full.n_edges(), counts.join(" ")),
    )
}

fn scale_estimation() -> Verdict {
    let test = ruler_signatures(1_000_000, 500);
    let mut peak_failures = 0;
    let peak_mae = test
        .iter()
        .map(|(s, r)| match peak_estimate(s) {
            Ok(e) => (e - r).abs(),
            Err(_) => {
                peak_failures += 1;
                *r
            }
        })
        .sum::<f64>()
        / test.len() as f64;

    let data = ScaleDataset::with_random_split(ruler_signatures(7, 2000), 0.15, 0.0, 1).unwrap();
    let model = Conv1dRegressor::new(RegressorHyper::default(), 3).unwrap();
    let trained = train(&model, &data, &ScaleTrainConfig { epochs: 100, ..Default::default() }).unwrap();
    let cnn_mae =
        test.iter().map(|(s, r)| (trained.model.forward(s, false).unwrap() - r).abs()).sum::<f64>() / test.len() as f64;
    verdict(
        peak_mae <= 2.0 && cnn_mae <= 3.0,
        format!("500 held-out scenes: peak MAE {peak_mae:.3} px ({peak_failures} without a peak), CNN MAE {cnn_mae:.3} px"),
    )
}

fn end_to_end() -> Verdict {
    let seeds = 0..5u64;
    let n = seeds.clone().count() as f64;
    let (mut ann, mut full, mut best, mut random, mut identical) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut per_seed = Vec::new();
    for seed in seeds {
        let cohort = synth_cohort(&CohortSpec { seed, ..Default::default() }).unwrap();
        let cfg = CompareConfig {
            fit: FitConfig { train: TrainConfig { seed, ..Default::default() }, ..Default::default() },
            eval: EvalConfig { seed, ..Default::default() },
            seed,
            ..Default::default()
        };
        let c = compare_schemes(&cohort, &cfg).unwrap();
        ann += c.ann.mean_macro_auc / n;
        full += c.full.mean_macro_auc / n;
        best += c.best().mean_macro_auc / n;
        random += c.random.mean_macro_auc / n;
        identical += c.identical.mean_macro_auc / n;
        per_seed.push(format!(
            "seed {seed}: ann {:.4} full {:.4} T={} {:.4} random {:.4} identical {:.4}",
            c.ann.mean_macro_auc,
            c.full.mean_macro_auc,
            c.best().threshold.unwrap(),
            c.best().mean_macro_auc,
            c.random.mean_macro_auc,
            c.identical.mean_macro_auc
        ));
    }
    for line in &per_seed {
        println!("    {line}");
    }
    let clauses = [
        ("full >= ann + 0.02", full >= ann + 0.02),
        ("|full - best threshold| <= 0.02", (full - best).abs() <= 0.02),
        ("full > random", full > random),
        ("full > identical", full > identical),
    ];
    let failed: Vec<&str> = clauses.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        failed.is_empty(),
        format!(
            "means: ann {ann:.4} full {full:.4} best threshold {best:.4} random {random:.4} identical {identical:.4}{}",
            if failed.is_empty() { String::new() } else { format!("; violated: {}", failed.join(", ")) }
        ),
    )
}

fn auc_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 1000 {
        let n = rng.random_range(2..=12);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 / 5.0).collect();
        let positive: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let n_pos = positive.iter().filter(|&&p| p).count();
        if n_pos == 0 || n_pos == n {
            continue;
        }
        let mut wins = 0.0;
        for i in (0..n).filter(|&i| positive[i]) {
            for j in (0..n).filter(|&j| !positive[j]) {
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let exact = wins / (n_pos * (n - n_pos)) as f64;
        worst = worst.max((roc_auc(&scores, &positive).unwrap() - exact).abs());
        cases += 1;
    }
    verdict(worst <= 1e-12, format!("{cases} cases, max difference {worst:.2e}"))
}

/// Serialized output of every stage on a small configuration.
fn pipeline_bytes() -> Vec<(&'static str, Vec<u8>)> {
    let mut out = Vec::new();
    let scenes = synthesize_batch(42, 8, &SynthesisParams::default()).unwrap();
    let mut buf = Vec::new();
    write_manifest(&mut buf, &scenes).unwrap();
    for s in &scenes {
        s.mask.write_pgm(&mut buf).unwrap();
    }
    out.push(("rulers", buf));

    let sigs: Vec<(TpcfSignature, f64)> = scenes.iter().map(|s| (signature(&s.mask).unwrap(), s.rho_true)).collect();
    let mut buf = Vec::new();
    sigs.iter().for_each(|(s, _)| s.write_csv(&mut buf).unwrap());
    out.push(("tpcf", buf));

    let data = ScaleDataset::with_random_split(sigs.clone(), 0.25, 0.0, 1).unwrap();
    let trained = train(&Conv1dRegressor::new(RegressorHyper::default(), 2).unwrap(), &data, &ScaleTrainConfig { epochs: 3, ..Default::default() }).unwrap();
    let mut buf = Vec::new();
    trained.model.to_checkpoint().write(&mut buf).unwrap();
    for (s, _) in &sigs {
        buf.extend(trained.model.forward(s, false).unwrap().to_le_bytes());
        buf.extend(peak_estimate(s).map_or(f64::NAN, |v| v).to_le_bytes());
    }
    out.push(("scale", buf));

    let rows: Vec<_> = scenes.iter().enumerate().map(|(i, s)| (i.to_string(), describe(&s.mask, s.rho_true).unwrap())).collect();
    let mut buf = Vec::new();
    write_descriptors(&mut buf, &rows).unwrap();
    out.push(("geometry", buf));

    let cohort = synth_cohort(&CohortSpec { n_nodes: 120, n_classes: 4, feature_dim: 16, missing_rate: 0.05, seed: 8, ..Default::default() }).unwrap();
    let mut buf = Vec::new();
    write_metadata(&mut buf, &cohort.records).unwrap();
    write_features(&mut buf, &cohort.features).unwrap();
    out.push(("cohort", buf));

    let full = build_full_weighted(&cohort, &CohortPrep::new(&cohort.records), &EdgeWeightConfig::default()).unwrap();
    let mut buf = Vec::new();
    full.write_csv(&mut buf).unwrap();
    build_random(120, 300, 8).unwrap().write_csv(&mut buf).unwrap();
    out.push(("graph", buf));

    let labels = cohort.labels(4).unwrap();
    let folds = stratified_folds(&labels, 3, 8).unwrap();
    let fit = FitConfig { train: TrainConfig { max_epochs: 40, patience: 10, seed: 8, ..Default::default() }, ..Default::default() };
    let prop = Propagator::from_graph(&full);
    let buf = std::sync::Mutex::new(vec![Vec::new(); 3]);
    let cv = crossval(&labels, &folds, 3, &EvalConfig { n_boot: 50, seed: 8 }, |f| {
        let p = fit_predict(&prop, &cohort.features, &labels, &folds, f, 4, &fit)?;
        buf.lock().unwrap()[f] = p.iter().flat_map(|v| v.to_le_bytes()).collect();
        Ok(p)
    })
    .unwrap();
    out.push(("gcn", buf.into_inner().unwrap().concat()));
    out.push(("evaluation", serde_json::to_vec(&cv.aggregate).unwrap()));

    let cmp = compare_schemes(
        &cohort,
        &CompareConfig { n_classes: 4, k_folds: 3, thresholds: vec![0.5, 0.7], fit, eval: EvalConfig { n_boot: 20, seed: 8 }, seed: 8, ..Default::default() },
    )
    .unwrap();
    let mut buf = Vec::new();
    write_report(&mut buf, &cmp.report_rows()).unwrap();
    out.push(("report", buf));
    out
}

fn determinism() -> Verdict {
    let (a, b) = (pipeline_bytes(), pipeline_bytes());
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0).collect();
    let names: Vec<&str> = a.iter().map(|x| x.0).collect();
    verdict(
        differing.is_empty() && a.iter().all(|x| !x.1.is_empty()),
        if differing.is_empty() {
            format!("identical bytes for {}", names.join(", "))
        } else {
            format!("stages differ: {}", differing.join(", "))
        },
    )
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, Duration, fn() -> Verdict); 9] = [
        ("tpcf oracle equivalence", Duration::from_secs(60), tpcf_oracle),
        ("gradient checks", Duration::from_secs(120), gradient_checks),
        ("geometry", Duration::from_secs(10), geometry),
        ("class weights", Duration::from_secs(10), class_weight_table),
        ("edge-count identities", Duration::from_secs(120), edge_counts),
        ("scale estimation", Duration::from_secs(600), scale_estimation),
        ("end-to-end ordering", Duration::from_secs(900), end_to_end),
        ("auc oracle", Duration::from_secs(60), auc_oracle),
        ("determinism", Duration::from_secs(300), determinism),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = std::panic::catch_unwind(check)
            .unwrap_or_else(|e| verdict(false, format!("panicked: {}", e.downcast_ref::<String>().map_or("", String::as_str))));
        let took = start.elapsed();
        let pass = v.pass && took <= budget;
        failed += usize::from(!pass);
        let over = if took > budget { format!(" over budget {}s", budget.as_secs()) } else { String::new() };
        println!("{} {name}: {} [{:.1}s{over}]", if pass { "PASS" } else { "FAIL" }, v.detail, took.as_secs_f64());
    }
    println!("acceptance: {failed} failing");
}
