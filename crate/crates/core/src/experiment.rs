//! Cross-validated comparison of edge schemes against the image-only baseline.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{crossval, stratified_folds, ClassMetrics, CrossValResult, EvalConfig, MetricReport, SweepRow};
use crate::gcn::{fit_predict, FitConfig, Propagator};
use crate::popgraph::{
    apply_threshold, build_full_weighted, build_identical, build_random, Cohort, CohortPrep, EdgeWeightConfig,
    PopulationGraph,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub n_classes: usize,
    pub k_folds: usize,
    pub thresholds: Vec<f64>,
    pub edge: EdgeWeightConfig,
    pub fit: FitConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            n_classes: 8,
            k_folds: 5,
            thresholds: vec![0.0, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85],
            edge: EdgeWeightConfig::default(),
            fit: FitConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
        }
    }
}

/// Cross-validated metrics of one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub threshold: Option<f64>,
    /// `None` for the graph-free baseline.
    pub edges: Option<usize>,
    /// Mean over folds of the per-fold macro AUC.
    pub mean_macro_auc: f64,
    pub fold_macro_auc: Vec<f64>,
    pub metrics: MetricReport,
}

impl SchemeSummary {
    pub fn from_crossval(scheme: &str, threshold: Option<f64>, edges: Option<usize>, cv: CrossValResult) -> Self {
        Self {
            scheme: scheme.to_string(),
            threshold,
            edges,
            mean_macro_auc: cv.fold_macro_auc.iter().sum::<f64>() / cv.fold_macro_auc.len().max(1) as f64,
            fold_macro_auc: cv.fold_macro_auc,
            metrics: cv.aggregate,
        }
    }

    pub fn sweep_row(&self) -> SweepRow {
        let m = &self.metrics.macro_avg;
        SweepRow {
            threshold: self.threshold.unwrap_or(f64::NAN),
            edges: self.edges.unwrap_or(0),
            precision: m.precision.point,
            recall: m.recall.point,
            auc: m.auc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub ann: SchemeSummary,
    pub full: SchemeSummary,
    pub sweep: Vec<SchemeSummary>,
    /// Index into `sweep` of the highest mean macro AUC.
    pub best_threshold: usize,
    pub random: SchemeSummary,
    pub identical: SchemeSummary,
}

impl Comparison {
    pub fn best(&self) -> &SchemeSummary {
        &self.sweep[self.best_threshold]
    }

    /// The five report rows: ann, full, best threshold, random, identical.
    pub fn report_rows(&self) -> Vec<SchemeSummary> {
        vec![self.ann.clone(), self.full.clone(), self.best().clone(), self.random.clone(), self.identical.clone()]
    }
}

/// Cross-validates one propagator on fixed folds.
pub fn crossval_scheme(
    prop: &Propagator,
    cohort: &Cohort,
    labels: &[usize],
    folds: &[usize],
    cfg: &CompareConfig,
) -> Result<CrossValResult> {
    crossval(labels, folds, cfg.k_folds, &cfg.eval, |f| {
        fit_predict(prop, &cohort.features, labels, folds, f, cfg.n_classes, &cfg.fit)
    })
}

fn run(name: &str, t: Option<f64>, graph: Option<&PopulationGraph>, ctx: (&Cohort, &[usize], &[usize]), cfg: &CompareConfig) -> Result<SchemeSummary> {
    let prop = graph.map_or(Propagator::Identity, Propagator::from_graph);
    let cv = crossval_scheme(&prop, ctx.0, ctx.1, ctx.2, cfg)?;
    log::info!("{name}{}: macro AUC {:.4}", t.map_or(String::new(), |t| format!(" T={t}")), cv.fold_macro_auc.iter().sum::<f64>() / cv.fold_macro_auc.len() as f64);
    Ok(SchemeSummary::from_crossval(name, t, graph.map(PopulationGraph::n_edges), cv))
}

/// Runs the baseline, the fully weighted graph, every threshold, a random
/// graph with as many edges as the best threshold, and the identical graph,
/// all on the same stratified folds.
pub fn compare_schemes(cohort: &Cohort, cfg: &CompareConfig) -> Result<Comparison> {
    if cfg.thresholds.is_empty() {
        return Err(Error::Config("at least one threshold is required".into()));
    }
    let labels = cohort.labels(cfg.n_classes)?;
    let folds = stratified_folds(&labels, cfg.k_folds, cfg.seed)?;
    let ctx = (cohort, &labels[..], &folds[..]);
    let prep = CohortPrep::new(&cohort.records);
    let full_graph = build_full_weighted(cohort, &prep, &cfg.edge)?;

    let ann = run("ann", None, None, ctx, cfg)?;
    let full = run("full", None, Some(&full_graph), ctx, cfg)?;
    let sweep = cfg
        .thresholds
        .iter()
        .map(|&t| run("threshold", Some(t), Some(&apply_threshold(&full_graph, t)), ctx, cfg))
        .collect::<Result<Vec<_>>>()?;
    let best_threshold = (0..sweep.len())
        .max_by(|&a, &b| sweep[a].mean_macro_auc.total_cmp(&sweep[b].mean_macro_auc).then(b.cmp(&a)))
        .expect("non-empty sweep");
    let n_random = sweep[best_threshold].edges.unwrap_or(0);
    let random = run("random", None, Some(&build_random(cohort.len(), n_random, cfg.seed)?), ctx, cfg)?;
    let identical = run("identical", None, Some(&build_identical(cohort.len())), ctx, cfg)?;
    Ok(Comparison {
        ann,
        full,
        sweep,
        best_threshold,
        random,
        identical,
    })
}

pub const REPORT_HEADER: &str =
    "scheme,T,edges,precision,precision_lo,precision_hi,recall,recall_lo,recall_hi,auc,auc_lo,auc_hi,mean_fold_auc";

/// One row per summary, macro-averaged metrics with their intervals.
pub fn write_report<W: Write>(mut out: W, rows: &[SchemeSummary]) -> std::io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for r in rows {
        let ClassMetrics { precision: p, recall: q, auc: a } = r.metrics.macro_avg;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scheme,
            r.threshold.map_or(String::new(), |t| t.to_string()),
            r.edges.map_or(String::new(), |e| e.to_string()),
            p.point,
            p.lo,
            p.hi,
            q.point,
            q.lo,
            q.hi,
            a.point,
            a.lo,
            a.hi,
            r.mean_macro_auc
        )?;
    }
    Ok(())
}
