//! Flat `key = value` run configuration.
//!
//! Every tunable default of the pipeline has a key here. Files may contain
//! blank lines and `#` comments; unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::cohortsynth::CohortSpec;
use crate::error::{Error, Result};
use crate::evalkit::EvalConfig;
use crate::gcn::{FitConfig, TrainConfig};
use crate::lesiongeom::GeometryParams;
use crate::popgraph::{ChannelNorm, EdgeWeightConfig, N_CHANNELS};
use crate::rulergen::SynthesisParams;
use crate::scalenet::ScaleTrainConfig;

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "base random seed"),
    ("rulers.n", "100", "number of ruler scenes"),
    ("rulers.width", "512", "scene width in px"),
    ("rulers.height", "512", "scene height in px"),
    ("rulers.spacing_min", "6", "smallest base tick spacing in px"),
    ("rulers.spacing_max", "20", "largest base tick spacing in px"),
    ("rulers.occlusion_prob", "0.5", "probability of a vignette occlusion"),
    ("rulers.noise_max", "0.02", "upper bound of the per-pixel flip probability"),
    ("rulers.rotation_prob", "0.5", "probability of a random rotation"),
    ("rulers.scale_min", "0.8", "smallest isotropic scale factor"),
    ("rulers.scale_max", "1.2", "largest isotropic scale factor"),
    ("rulers.blur_mean", "2", "mean of the blur sigma before clipping"),
    ("rulers.blur_std", "1.5", "spread of the blur sigma before clipping"),
    ("rulers.min_survival", "0.2", "fraction of tick pixels a scene must keep"),
    ("rulers.max_attempts", "100", "retries per scene before failing"),
    ("scale.method", "cnn", "scale estimator: cnn or peak"),
    ("scale.lr", "0.001", "regressor learning rate"),
    ("scale.epochs", "200", "regressor training epochs"),
    ("scale.batch", "32", "regressor minibatch size"),
    ("scale.val_frac", "0.15", "fraction of scenes held out for model selection"),
    ("scale.peak_dominance", "0.3", "relative prominence a correlation peak needs"),
    ("geom.level", "0.5", "iso-level of the contour"),
    ("geom.smoothing_sigma", "1", "Gaussian smoothing of the mask before contouring, px"),
    ("cohort.n", "600", "number of synthetic nodes"),
    ("cohort.classes", "8", "number of classes"),
    ("cohort.dim", "64", "feature dimension"),
    ("cohort.separation", "1.5", "norm of the class-mean offsets"),
    ("cohort.metadata_strength", "0.8", "probability a metadata value is class-conditional"),
    ("cohort.missing_rate", "0", "probability a metadata value is left empty"),
    ("cohort.proportions", "balanced", "balanced or reference (2166-image class mix)"),
    ("graph.scheme", "full", "full, threshold, random or identical"),
    ("graph.threshold", "0.7", "edge-weight threshold for the threshold scheme"),
    ("graph.random_edges", "0", "edge count for the random scheme (0: match graph.threshold)"),
    ("graph.norm", "mean", "channel aggregation: mean or sum"),
    ("graph.channel_weights", "1,1,1,1,1,1,1", "sex,site,source,age,area,perimeter,rg impact weights"),
    ("gcn.hidden", "32", "hidden widths, comma separated"),
    ("gcn.dropout", "0.5", "dropout rate"),
    ("gcn.lr", "0.01", "Adam learning rate"),
    ("gcn.epochs", "300", "maximum epochs"),
    ("gcn.patience", "50", "epochs without labeled-loss improvement before stopping"),
    ("gcn.batch_size", "256", "accepted for compatibility; training is full-batch"),
    ("gcn.folds", "5", "cross-validation folds"),
    ("gcn.history", "false", "write per-epoch metric histories"),
    ("eval.n_boot", "1000", "bootstrap resamples for AUC intervals"),
    ("sweep.thresholds", "0,0.5,0.55,0.6,0.65,0.7,0.75,0.8,0.85", "thresholds evaluated by sweep-thresholds"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.merge_text(&text, path)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, i + 1, format!("expected key = value, found {line:?}")))?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::format(path, i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                let numeric = |s: &str| s.split(',').all(|x| x.trim().parse::<f64>().is_ok());
                let boolean = |s: &str| s.parse::<bool>().is_ok();
                if (numeric(v) && !numeric(value)) || (boolean(v) && !boolean(value)) {
                    return Err(Error::Config(format!("{key}: cannot parse {value:?}")));
                }
                *v = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, found {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("no config key {key}"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse(key)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Config(format!("{key}: must be finite")))
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parse(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parse(key)
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.get(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Config(format!("{key}: cannot parse {s:?}")))
            })
            .collect()
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.get(key)
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}"))))
            .collect()
    }

    /// All keys in sorted order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn synthesis_params(&self) -> Result<SynthesisParams> {
        Ok(SynthesisParams {
            width: self.usize("rulers.width")?,
            height: self.usize("rulers.height")?,
            spacing_range: (self.f64("rulers.spacing_min")?, self.f64("rulers.spacing_max")?),
            occlusion_prob: self.f64("rulers.occlusion_prob")?,
            noise_max: self.f64("rulers.noise_max")?,
            rotation_prob: self.f64("rulers.rotation_prob")?,
            scale_range: (self.f64("rulers.scale_min")?, self.f64("rulers.scale_max")?),
            blur_mean: self.f64("rulers.blur_mean")?,
            blur_std: self.f64("rulers.blur_std")?,
            min_survival: self.f64("rulers.min_survival")?,
            max_attempts: self.usize("rulers.max_attempts")?,
            ..SynthesisParams::default()
        })
    }

    pub fn scale_train_config(&self) -> Result<ScaleTrainConfig> {
        Ok(ScaleTrainConfig {
            lr: self.f64("scale.lr")?,
            epochs: self.usize("scale.epochs")?,
            batch_size: self.usize("scale.batch")?,
            seed: self.u64("seed")?,
            ..ScaleTrainConfig::default()
        })
    }

    pub fn geometry_params(&self) -> Result<GeometryParams> {
        Ok(GeometryParams {
            level: self.f64("geom.level")?,
            smoothing_sigma: self.f64("geom.smoothing_sigma")?,
        })
    }

    pub fn cohort_spec(&self) -> Result<CohortSpec> {
        let spec = CohortSpec {
            n_nodes: self.usize("cohort.n")?,
            n_classes: self.usize("cohort.classes")?,
            feature_dim: self.usize("cohort.dim")?,
            class_separation: self.f64("cohort.separation")?,
            metadata_strength: self.f64("cohort.metadata_strength")?,
            missing_rate: self.f64("cohort.missing_rate")?,
            seed: self.u64("seed")?,
            proportions: None,
        };
        match self.get("cohort.proportions") {
            "balanced" => Ok(spec),
            "reference" => Ok(spec.with_reference_proportions()),
            other => Err(Error::Config(format!("cohort.proportions: expected balanced or reference, found {other:?}"))),
        }
    }

    pub fn edge_config(&self) -> Result<EdgeWeightConfig> {
        let w = self.f64_list("graph.channel_weights")?;
        let channel_weights: [f64; N_CHANNELS] = w
            .try_into()
            .map_err(|w: Vec<f64>| Error::Config(format!("graph.channel_weights: expected {N_CHANNELS} values, found {}", w.len())))?;
        if channel_weights.iter().any(|&x| x < 0.0) {
            return Err(Error::Config("graph.channel_weights: weights must be non-negative".into()));
        }
        let norm = match self.get("graph.norm") {
            "mean" => ChannelNorm::Mean,
            "sum" => ChannelNorm::Sum,
            other => return Err(Error::Config(format!("graph.norm: expected mean or sum, found {other:?}"))),
        };
        Ok(EdgeWeightConfig { channel_weights, norm })
    }

    pub fn fit_config(&self) -> Result<FitConfig> {
        let batch = self.usize("gcn.batch_size")?;
        if batch != 256 {
            log::warn!("gcn.batch_size = {batch} is ignored: training is full-batch");
        }
        Ok(FitConfig {
            hidden: self.usize_list("gcn.hidden")?,
            dropout_rate: self.f64("gcn.dropout")?,
            train: TrainConfig {
                lr: self.f64("gcn.lr")?,
                max_epochs: self.usize("gcn.epochs")?,
                patience: self.usize("gcn.patience")?,
                seed: self.u64("seed")?,
                dropout: self.f64("gcn.dropout")? > 0.0,
                record_history: self.bool("gcn.history")?,
            },
        })
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        Ok(EvalConfig {
            n_boot: self.usize("eval.n_boot")?,
            seed: self.u64("seed")?,
        })
    }

    /// Help text listing every key with its default.
    pub fn describe_keys() -> String {
        let width = KEYS.iter().map(|k| k.0.len()).max().unwrap_or(0);
        let mut s = String::from("Configuration keys (default in brackets):\n");
        for (k, v, doc) in KEYS {
            let _ = writeln!(s, "  {k:width$}  {doc} [{v}]");
        }
        s
    }
}
