//! Synthetic cohorts with planted class structure in both the image features
//! and the metadata channels.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::popgraph::{Cohort, NodeRecord};

pub const SEXES: [&str; 2] = ["female", "male"];
pub const SITES: [&str; 8] = [
    "anterior torso",
    "head/neck",
    "lateral torso",
    "lower extremity",
    "oral/genital",
    "palms/soles",
    "posterior torso",
    "upper extremity",
];
pub const SOURCES: [&str; 3] = ["BCN_20000", "HAM_10000", "MSK"];

/// Per-class sample counts of the eight-class dermoscopy cohort (2166 images).
pub const REFERENCE_COUNTS: [usize; 8] = [400, 400, 400, 274, 400, 74, 41, 177];

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub n_nodes: usize,
    pub n_classes: usize,
    pub feature_dim: usize,
    /// Norm of each class-mean offset, in units of the feature noise.
    pub class_separation: f64,
    /// Probability that a metadata value is drawn from its class-conditional
    /// distribution rather than the class-independent one.
    pub metadata_strength: f64,
    /// Class proportions; `None` means balanced.
    pub proportions: Option<Vec<f64>>,
    /// Probability that any one metadata value is left empty.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_nodes: 600,
            n_classes: 8,
            feature_dim: 64,
            class_separation: 1.5,
            metadata_strength: 0.8,
            proportions: None,
            missing_rate: 0.0,
            seed: 0,
        }
    }
}

impl CohortSpec {
    /// Proportions taken from [`REFERENCE_COUNTS`]; requires eight classes.
    pub fn with_reference_proportions(mut self) -> Self {
        self.proportions = Some(REFERENCE_COUNTS.iter().map(|&c| c as f64).collect());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        if self.n_nodes < self.n_classes {
            return bad(format!("{} nodes cannot cover {} classes", self.n_nodes, self.n_classes));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return bad(format!("class_separation must be finite and non-negative, got {}", self.class_separation));
        }
        if !(0.0..=1.0).contains(&self.metadata_strength) {
            return bad(format!("metadata_strength must lie in [0, 1], got {}", self.metadata_strength));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad(format!("missing_rate must lie in [0, 1), got {}", self.missing_rate));
        }
        if let Some(p) = &self.proportions {
            if p.len() != self.n_classes {
                return bad(format!("{} proportions for {} classes", p.len(), self.n_classes));
            }
            if p.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return bad("proportions must be positive and finite".into());
            }
        }
        Ok(())
    }

    /// Exact class sizes by largest-remainder apportionment.
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        self.validate()?;
        let weights = self.proportions.clone().unwrap_or_else(|| vec![1.0; self.n_classes]);
        let total: f64 = weights.iter().sum();
        let quotas: Vec<f64> = weights.iter().map(|w| w / total * self.n_nodes as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..self.n_classes).collect();
        order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
        let short = self.n_nodes - counts.iter().sum::<usize>();
        for &c in order.iter().take(short) {
            counts[c] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Parameter(format!("class {c} receives no nodes with {} nodes", self.n_nodes)));
        }
        Ok(counts)
    }
}

/// Class-conditional generative parameters.
struct ClassProfile {
    mean: Vec<f64>,
    sex: usize,
    site: usize,
    source: usize,
    age_mean: f64,
    log_area_mean: f64,
    log_irregularity: f64,
}

const PREFERRED_MASS: f64 = 0.7;
const AGE_SD: f64 = 8.0;
const GLOBAL_AGE: (f64, f64) = (55.0, 16.0);
const LOG_AREA_SD: f64 = 0.35;
const GLOBAL_LOG_AREA: (f64, f64) = (3.5, 0.8);
const GLOBAL_LOG_IRREGULARITY: (f64, f64) = (0.25, 0.15);

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn categorical(levels: usize, preferred: usize, conditional: bool, rng: &mut ChaCha8Rng) -> usize {
    if conditional && rng.random::<f64>() < PREFERRED_MASS {
        preferred
    } else {
        rng.random_range(0..levels)
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Draws a cohort: labels in shuffled node order, Gaussian features around
/// per-class means, and metadata mixed between class-specific and global
/// distributions. Geometry is log-normal and internally consistent
/// (perimeter and radius of gyration follow from the area).
pub fn synth_cohort(spec: &CohortSpec) -> Result<Cohort> {
    let counts = spec.class_counts()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let profiles: Vec<ClassProfile> = (0..spec.n_classes)
        .map(|c| ClassProfile {
            mean: unit_vector(spec.feature_dim, &mut rng).into_iter().map(|x| x * spec.class_separation).collect(),
            sex: c % SEXES.len(),
            site: c % SITES.len(),
            source: c % SOURCES.len(),
            age_mean: rng.random_range(25.0..80.0),
            log_area_mean: rng.random_range(2.3..4.8),
            log_irregularity: rng.random_range(0.05..0.5),
        })
        .collect();

    let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
    labels.shuffle(&mut rng);

    let age_global = Normal::new(GLOBAL_AGE.0, GLOBAL_AGE.1).expect("valid normal");
    let area_global = Normal::new(GLOBAL_LOG_AREA.0, GLOBAL_LOG_AREA.1).expect("valid normal");
    let irr_global = Normal::new(GLOBAL_LOG_IRREGULARITY.0, GLOBAL_LOG_IRREGULARITY.1).expect("valid normal");

    let mut features = Array2::zeros((spec.n_nodes, spec.feature_dim));
    let mut records = Vec::with_capacity(spec.n_nodes);
    for (v, &c) in labels.iter().enumerate() {
        let p = &profiles[c];
        for (j, x) in features.row_mut(v).iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *x = round_f32(p.mean[j] + noise);
        }
        let s = spec.metadata_strength;
        let mut cond = || rng.random::<f64>() < s;
        let (c_sex, c_site, c_source, c_age, c_geom) = (cond(), cond(), cond(), cond(), cond());
        let sex = categorical(SEXES.len(), p.sex, c_sex, &mut rng);
        let site = categorical(SITES.len(), p.site, c_site, &mut rng);
        let source = categorical(SOURCES.len(), p.source, c_source, &mut rng);
        let age = if c_age {
            p.age_mean + AGE_SD * rng.sample::<f64, _>(StandardNormal)
        } else {
            age_global.sample(&mut rng)
        };
        let (log_area, log_irr) = if c_geom {
            (
                p.log_area_mean + LOG_AREA_SD * rng.sample::<f64, _>(StandardNormal),
                p.log_irregularity + 0.05 * rng.sample::<f64, _>(StandardNormal),
            )
        } else {
            (area_global.sample(&mut rng), irr_global.sample(&mut rng))
        };
        let area = log_area.exp();
        let radius = (area / std::f64::consts::PI).sqrt();
        let perimeter = 2.0 * std::f64::consts::PI * radius * log_irr.exp().max(1.0);
        let rg = radius * log_irr.exp().sqrt();
        let mut keep = || rng.random::<f64>() >= spec.missing_rate;
        let keep_mask = [keep(), keep(), keep(), keep(), keep()];
        records.push(NodeRecord {
            id: format!("syn_{v:05}"),
            label: Some(c),
            age: keep_mask[0].then_some((age.clamp(0.0, 95.0) * 10.0).round() / 10.0),
            sex: keep_mask[1].then(|| SEXES[sex].to_string()),
            site: keep_mask[2].then(|| SITES[site].to_string()),
            source: keep_mask[3].then(|| SOURCES[source].to_string()),
            area_mm2: keep_mask[4].then_some(round_f32(area)),
            perimeter_mm: keep_mask[4].then_some(round_f32(perimeter)),
            rg_mm: keep_mask[4].then_some(round_f32(rg)),
        });
    }
    Cohort::new(records, features)
}
