//! Classification metrics, posterior intervals and fold bookkeeping.

use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Point estimate with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn exact(v: f64) -> Self {
        Self { point: v, lo: v, hi: v }
    }
}

/// Mann–Whitney area under the ROC curve; tied scores count one half.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Precondition(format!(
            "{} scores but {} labels",
            scores.len(),
            positive.len()
        )));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Precondition("AUC is undefined without both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Precondition("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of midranks of the positives (ranks start at 1)
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Row-major `C × C` counts, rows indexed by true class, columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub n_classes: usize,
    pub counts: Vec<usize>,
}

/// A ratio whose denominator was zero is reported as 0 and flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub undefined: bool,
    pub successes: usize,
    pub failures: usize,
}

impl Ratio {
    fn new(successes: usize, failures: usize) -> Self {
        let total = successes + failures;
        Self {
            value: if total == 0 { 0.0 } else { successes as f64 / total as f64 },
            undefined: total == 0,
            successes,
            failures,
        }
    }
}

impl Confusion {
    pub fn at(&self, truth: usize, pred: usize) -> usize {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn support(&self, class: usize) -> usize {
        (0..self.n_classes).map(|p| self.at(class, p)).sum()
    }

    /// One-vs-rest precision `TP / (TP + FP)`.
    pub fn precision(&self, class: usize) -> Ratio {
        let tp = self.at(class, class);
        let predicted: usize = (0..self.n_classes).map(|t| self.at(t, class)).sum();
        Ratio::new(tp, predicted - tp)
    }

    /// One-vs-rest recall `TP / (TP + FN)`.
    pub fn recall(&self, class: usize) -> Ratio {
        let tp = self.at(class, class);
        Ratio::new(tp, self.support(class) - tp)
    }

    pub fn rows(&self) -> Vec<Vec<usize>> {
        self.counts.chunks(self.n_classes).map(<[usize]>::to_vec).collect()
    }
}

/// Index of the largest entry; the first wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax predictions for `nodes` tallied against their labels.
pub fn confusion_matrix(probs: &Array2<f64>, labels: &[usize], nodes: &[usize]) -> Result<Confusion> {
    let c = probs.ncols();
    let mut counts = vec![0; c * c];
    for &v in nodes {
        let t = labels[v];
        if t >= c {
            return Err(Error::Precondition(format!("label {t} outside {c} classes")));
        }
        let p = argmax(&probs.row(v).to_vec());
        counts[t * c + p] += 1;
    }
    Ok(Confusion { n_classes: c, counts })
}

/// Equal-tailed 95% interval of `Beta(successes + 1, failures + 1)`.
pub fn credible_interval(successes: usize, failures: usize) -> Result<(f64, f64)> {
    let beta = Beta::new(successes as f64 + 1.0, failures as f64 + 1.0)
        .map_err(|e| Error::Parameter(format!("beta posterior: {e}")))?;
    Ok((beta.inverse_cdf(0.025), beta.inverse_cdf(0.975)))
}

/// Signed-count variant that rejects negative inputs.
pub fn credible_interval_checked(successes: i64, failures: i64) -> Result<(f64, f64)> {
    if successes < 0 || failures < 0 {
        return Err(Error::Parameter(format!(
            "counts must be non-negative, got {successes} and {failures}"
        )));
    }
    credible_interval(successes as usize, failures as usize)
}

fn nearest_rank_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Stratified percentile bootstrap of the AUC: positives and negatives are
/// resampled separately so every replicate keeps both classes.
pub fn auc_interval(scores: &[f64], positive: &[bool], n_boot: usize, seed: u64) -> Result<(f64, f64)> {
    roc_auc(scores, positive)?;
    if n_boot == 0 {
        return Err(Error::Parameter("bootstrap needs at least one resample".into()));
    }
    let pos: Vec<f64> = scores.iter().zip(positive).filter(|p| *p.1).map(|p| *p.0).collect();
    let neg: Vec<f64> = scores.iter().zip(positive).filter(|p| !*p.1).map(|p| *p.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Vec::with_capacity(scores.len());
    let mut y = Vec::with_capacity(scores.len());
    let mut aucs = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        s.clear();
        y.clear();
        for _ in 0..pos.len() {
            s.push(pos[rng.random_range(0..pos.len())]);
            y.push(true);
        }
        for _ in 0..neg.len() {
            s.push(neg[rng.random_range(0..neg.len())]);
            y.push(false);
        }
        aucs.push(roc_auc(&s, &y)?);
    }
    aucs.sort_by(f64::total_cmp);
    Ok((nearest_rank_sorted(&aucs, 0.025), nearest_rank_sorted(&aucs, 0.975)))
}

/// Smallest score threshold whose negatives-below rate reaches `target`
/// specificity, or `None` without negatives.
pub fn specificity_threshold(scores: &[f64], positive: &[bool], target: f64) -> Option<f64> {
    let mut neg: Vec<f64> = scores.iter().zip(positive).filter(|p| !*p.1).map(|p| *p.0).collect();
    if neg.is_empty() {
        return None;
    }
    neg.sort_by(f64::total_cmp);
    let n = neg.len() as f64;
    let mut candidates: Vec<f64> = neg.clone();
    candidates.push(f64::INFINITY);
    candidates.dedup();
    // predicting positive when score > t gives specificity |{neg ≤ t}| / n
    candidates
        .into_iter()
        .find(|&t| neg.partition_point(|&s| s <= t) as f64 / n >= target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Interval,
    pub recall: Interval,
    pub auc: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub classes: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
    pub confusion: Vec<Vec<usize>>,
    /// How the intervals were built.
    pub interval: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_boot: 1000, seed: 0 }
    }
}

fn macro_of(classes: &[ClassMetrics]) -> ClassMetrics {
    let n = classes.len() as f64;
    let avg = |f: &dyn Fn(&ClassMetrics) -> Interval| Interval {
        point: classes.iter().map(|c| f(c).point).sum::<f64>() / n,
        lo: classes.iter().map(|c| f(c).lo).sum::<f64>() / n,
        hi: classes.iter().map(|c| f(c).hi).sum::<f64>() / n,
    };
    ClassMetrics {
        precision: avg(&|c| c.precision),
        recall: avg(&|c| c.recall),
        auc: avg(&|c| c.auc),
    }
}

/// One-vs-rest AUC of class `k` over `nodes`, `None` when a side is empty.
pub fn class_auc(probs: &Array2<f64>, labels: &[usize], nodes: &[usize], k: usize) -> Option<f64> {
    let s: Vec<f64> = nodes.iter().map(|&v| probs[[v, k]]).collect();
    let y: Vec<bool> = nodes.iter().map(|&v| labels[v] == k).collect();
    roc_auc(&s, &y).ok()
}

/// Mean one-vs-rest AUC over classes present on both sides among `nodes`.
pub fn macro_auc(probs: &Array2<f64>, labels: &[usize], nodes: &[usize]) -> f64 {
    let aucs: Vec<f64> = (0..probs.ncols()).filter_map(|k| class_auc(probs, labels, nodes, k)).collect();
    if aucs.is_empty() {
        0.5
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    }
}

/// Per-class metrics on `nodes` with Beta intervals for precision and recall
/// and stratified bootstrap intervals for AUC.
pub fn evaluate(probs: &Array2<f64>, labels: &[usize], nodes: &[usize], cfg: &EvalConfig) -> Result<MetricReport> {
    let conf = confusion_matrix(probs, labels, nodes)?;
    let mut classes = Vec::with_capacity(conf.n_classes);
    for k in 0..conf.n_classes {
        let ratio = |r: Ratio| -> Result<Interval> {
            let (lo, hi) = credible_interval(r.successes, r.failures)?;
            Ok(Interval { point: r.value, lo, hi })
        };
        let s: Vec<f64> = nodes.iter().map(|&v| probs[[v, k]]).collect();
        let y: Vec<bool> = nodes.iter().map(|&v| labels[v] == k).collect();
        let auc = match roc_auc(&s, &y) {
            Ok(a) => {
                let (lo, hi) = auc_interval(&s, &y, cfg.n_boot, cfg.seed.wrapping_add(k as u64))?;
                Interval { point: a, lo, hi }
            }
            Err(_) => {
                log::warn!("class {k}: AUC undefined on this node set");
                Interval::exact(0.5)
            }
        };
        classes.push(ClassMetrics {
            precision: ratio(conf.precision(k))?,
            recall: ratio(conf.recall(k))?,
            auc,
        });
    }
    Ok(MetricReport {
        macro_avg: macro_of(&classes),
        classes,
        confusion: conf.rows(),
        interval: "beta posterior (precision, recall); stratified bootstrap (auc)".into(),
    })
}

/// Fold index per node. Each class is shuffled and dealt round-robin,
/// continuing where the previous class stopped, so every fold holds each
/// class to within one node.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 folds, got {k}")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::Cohort(format!(
                "class {c} has {} nodes, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for v in members {
            folds[v] = next;
            next = (next + 1) % k;
        }
    }
    Ok(folds)
}

/// Mean with a two-sided 95% Student-t half-width over `values.len() − 1` degrees of freedom.
pub fn t_interval(values: &[f64]) -> Interval {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Interval::exact(mean);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    let half = t * (var / n as f64).sqrt();
    Interval {
        point: mean,
        lo: mean - half,
        hi: mean + half,
    }
}

/// Combines per-fold reports: each point becomes the across-fold mean with a
/// t-interval, confusion matrices are summed.
pub fn aggregate_folds(reports: &[MetricReport]) -> Result<MetricReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Precondition("no fold reports to aggregate".into()))?;
    let c = first.classes.len();
    let pick = |k: usize, f: &dyn Fn(&ClassMetrics) -> Interval| -> Interval {
        let v: Vec<f64> = reports.iter().map(|r| f(&r.classes[k]).point).collect();
        t_interval(&v)
    };
    let classes: Vec<ClassMetrics> = (0..c)
        .map(|k| ClassMetrics {
            precision: pick(k, &|m| m.precision),
            recall: pick(k, &|m| m.recall),
            auc: pick(k, &|m| m.auc),
        })
        .collect();
    let macro_pick = |f: &dyn Fn(&ClassMetrics) -> Interval| {
        let v: Vec<f64> = reports.iter().map(|r| f(&r.macro_avg).point).collect();
        t_interval(&v)
    };
    let mut confusion = vec![vec![0; c]; c];
    for r in reports {
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                confusion[i][j] += x;
            }
        }
    }
    Ok(MetricReport {
        classes,
        macro_avg: ClassMetrics {
            precision: macro_pick(&|m| m.precision),
            recall: macro_pick(&|m| m.recall),
            auc: macro_pick(&|m| m.auc),
        },
        confusion,
        interval: format!("across {} folds: mean ± t(0.975, {}) standard error", reports.len(), reports.len() - 1),
    })
}

/// Output of a cross-validated run.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValResult {
    pub folds: Vec<MetricReport>,
    pub aggregate: MetricReport,
    /// Macro AUC per fold, in fold order.
    pub fold_macro_auc: Vec<f64>,
}

/// Runs `fit_predict(held_out_fold)` for every fold in parallel and evaluates
/// the returned probabilities on that fold's nodes.
pub fn crossval<F>(labels: &[usize], folds: &[usize], k: usize, cfg: &EvalConfig, fit_predict: F) -> Result<CrossValResult>
where
    F: Fn(usize) -> Result<Array2<f64>> + Sync,
{
    let per_fold: Vec<(MetricReport, f64)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let nodes: Vec<usize> = (0..labels.len()).filter(|&v| folds[v] == f).collect();
            let probs = fit_predict(f)?;
            let cfg = EvalConfig {
                seed: cfg.seed.wrapping_add(1000 * f as u64),
                ..*cfg
            };
            Ok((evaluate(&probs, labels, &nodes, &cfg)?, macro_auc(&probs, labels, &nodes)))
        })
        .collect::<Result<_>>()?;
    let (folds, fold_macro_auc): (Vec<_>, Vec<_>) = per_fold.into_iter().unzip();
    Ok(CrossValResult {
        aggregate: aggregate_folds(&folds)?,
        folds,
        fold_macro_auc,
    })
}

pub const SWEEP_HEADER: &str = "T,edges,precision,recall,auc,lo,hi";

/// One threshold of a sweep; `lo` and `hi` bound the macro AUC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub edges: usize,
    pub precision: f64,
    pub recall: f64,
    pub auc: Interval,
}

pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.threshold, r.edges, r.precision, r.recall, r.auc.point, r.auc.lo, r.auc.hi
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        let y = [true, true, false, false];
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.2], &y).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.3, 0.8, 0.2], &y).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.5; 4], &y).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn uniform_posterior_quantiles() {
        let (lo, hi) = credible_interval(0, 0).unwrap();
        assert!((lo - 0.025).abs() < 1e-9 && (hi - 0.975).abs() < 1e-9);
        assert!(credible_interval_checked(-1, 3).is_err());
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn folds_need_enough_members() {
        assert!(stratified_folds(&[0, 0, 1, 1, 1], 3, 0).is_err());
        assert!(stratified_folds(&[0, 1], 1, 0).is_err());
    }
}
