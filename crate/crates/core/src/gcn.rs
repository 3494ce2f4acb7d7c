//! Spectral graph convolution classifier trained transductively on a
//! population graph, plus the graph-free perceptron baseline (same code path
//! with the identity propagator).

use std::io::Write;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::evalkit::{confusion_matrix, macro_auc};
use crate::optim::Adam;
use crate::popgraph::PopulationGraph;
use crate::scalenet::{grad_discrepancy, GradCheckReport};

pub const PROB_CLAMP: f64 = 1e-7;

/// Â = D^-1/2 (W + I) D^-1/2 with D_vv = 1 + Σ_w |W(v,w)|.
pub fn normalize_adjacency(graph: &PopulationGraph) -> Array2<f64> {
    let n = graph.n_nodes;
    let deg = abs_degrees(graph);
    let mut a = Array2::zeros((n, n));
    for v in 0..n {
        a[[v, v]] = 1.0 / deg[v];
    }
    for &(u, v, w) in &graph.edges {
        let (u, v) = (u as usize, v as usize);
        let x = w / (deg[u] * deg[v]).sqrt();
        a[[u, v]] = x;
        a[[v, u]] = x;
    }
    a
}

fn abs_degrees(graph: &PopulationGraph) -> Vec<f64> {
    let mut deg = vec![1.0; graph.n_nodes];
    for &(u, v, w) in &graph.edges {
        deg[u as usize] += w.abs();
        deg[v as usize] += w.abs();
    }
    deg
}

/// Symmetric sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let cols = x.ncols();
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.n * cols];
        for (v, row) in out.chunks_mut(cols.max(1)).enumerate().take(self.n) {
            for k in self.indptr[v]..self.indptr[v + 1] {
                let a = self.values[k];
                let src = &xs[self.indices[k] * cols..(self.indices[k] + 1) * cols];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        }
        Array2::from_shape_vec((self.n, cols), out).expect("shape")
    }
}

/// How node features are mixed across the graph.
#[derive(Debug, Clone, PartialEq)]
pub enum Propagator {
    Identity,
    Dense(Array2<f64>),
    Sparse(Csr),
    /// Complete graph with unit weights: every entry of Â equals 1/n.
    Uniform(usize),
}

impl Propagator {
    /// Normalized propagator for `graph`, stored in whichever form is cheapest.
    pub fn from_graph(graph: &PopulationGraph) -> Self {
        let n = graph.n_nodes;
        if n > 1 && graph.n_edges() == n * (n - 1) / 2 && graph.edges.iter().all(|e| e.2 == 1.0) {
            return Propagator::Uniform(n);
        }
        let nnz = 2 * graph.n_edges() + n;
        if (nnz as f64) < 0.25 * (n * n) as f64 {
            Propagator::Sparse(Self::csr(graph))
        } else {
            Propagator::Dense(normalize_adjacency(graph))
        }
    }

    fn csr(graph: &PopulationGraph) -> Csr {
        let n = graph.n_nodes;
        let deg = abs_degrees(graph);
        let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|v| vec![(v, 1.0 / deg[v])]).collect();
        for &(u, v, w) in &graph.edges {
            let (u, v) = (u as usize, v as usize);
            let x = w / (deg[u] * deg[v]).sqrt();
            rows[u].push((v, x));
            rows[v].push((u, x));
        }
        let mut csr = Csr {
            n,
            indptr: Vec::with_capacity(n + 1),
            indices: Vec::new(),
            values: Vec::new(),
        };
        csr.indptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (j, x) in r {
                csr.indices.push(j);
                csr.values.push(x);
            }
            csr.indptr.push(csr.indices.len());
        }
        csr
    }

    pub fn n_nodes(&self) -> Option<usize> {
        match self {
            Propagator::Identity => None,
            Propagator::Dense(a) => Some(a.nrows()),
            Propagator::Sparse(c) => Some(c.n),
            Propagator::Uniform(n) => Some(*n),
        }
    }

    /// Â·x. Â is symmetric, so this is also Âᵀ·x.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Propagator::Identity => x.clone(),
            Propagator::Dense(a) => a.dot(x),
            Propagator::Sparse(c) => c.apply(x),
            Propagator::Uniform(n) => {
                let mean = x.sum_axis(Axis(0)) / *n as f64;
                mean.broadcast(x.raw_dim()).expect("broadcast").to_owned()
            }
        }
    }

    pub fn to_dense(&self, n: usize) -> Array2<f64> {
        match self {
            Propagator::Identity => Array2::eye(n),
            Propagator::Dense(a) => a.clone(),
            Propagator::Sparse(_) | Propagator::Uniform(_) => self.apply(&Array2::eye(n)),
        }
    }
}

/// Per-class weights for the presence (`plus`) and absence (`minus`) terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(n_classes: usize) -> Self {
        Self {
            plus: vec![1.0; n_classes],
            minus: vec![1.0; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.plus.len()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            plus: self.plus.iter().map(|w| w * s).collect(),
            minus: self.minus.iter().map(|w| w * s).collect(),
        }
    }
}

/// w⁺ = N / (2 n⁺), w⁻ = N / (2 (N − n⁺)).
pub fn class_weights(counts: &[usize], n: usize) -> Result<ClassWeights> {
    let mut w = ClassWeights {
        plus: Vec::with_capacity(counts.len()),
        minus: Vec::with_capacity(counts.len()),
    };
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 || c >= n {
            return Err(Error::Degenerate(format!("class {i} has {c} of {n} samples")));
        }
        w.plus.push(n as f64 / (2.0 * c as f64));
        w.minus.push(n as f64 / (2.0 * (n - c) as f64));
    }
    Ok(w)
}

/// Class weights from the labels of `nodes`.
pub fn class_weights_for(labels: &[usize], nodes: &[usize], n_classes: usize) -> Result<ClassWeights> {
    let mut counts = vec![0usize; n_classes];
    for &v in nodes {
        counts[labels[v]] += 1;
    }
    class_weights(&counts, nodes.len())
}

/// Mean over `nodes` of the class-averaged weighted binary cross-entropy.
pub fn weighted_loss(probs: &Array2<f64>, labels: &[usize], weights: &ClassWeights, nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::Precondition("loss over an empty node set".into()));
    }
    let c = probs.ncols();
    if weights.n_classes() != c {
        return Err(Error::Config(format!("{} class weights for {c} outputs", weights.n_classes())));
    }
    let mut total = 0.0;
    for &v in nodes {
        let mut node = 0.0;
        for i in 0..c {
            let p = probs[[v, i]].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            node += if labels[v] == i {
                -weights.plus[i] * p.ln()
            } else {
                -weights.minus[i] * (1.0 - p).ln()
            };
        }
        total += node / c as f64;
    }
    Ok(total / nodes.len() as f64)
}

fn loss_grad_wrt_probs(probs: &Array2<f64>, labels: &[usize], weights: &ClassWeights, nodes: &[usize]) -> Array2<f64> {
    let (n, c) = probs.dim();
    let scale = 1.0 / (nodes.len() * c) as f64;
    let mut g = Array2::zeros((n, c));
    for &v in nodes {
        for i in 0..c {
            let p = probs[[v, i]];
            if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
                continue;
            }
            g[[v, i]] = scale * if labels[v] == i { -weights.plus[i] / p } else { weights.minus[i] / (1.0 - p) };
        }
    }
    g
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - m).exp());
        let s = row.sum();
        row.mapv_inplace(|e| e / s);
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    /// Layer `l` maps width `dims[l]` to `dims[l + 1]`.
    pub weights: Vec<Array2<f64>>,
    pub dropout: f64,
}

impl GcnModel {
    /// Glorot-uniform weights for widths `dims` (input, hidden..., classes).
    pub fn new(dims: &[usize], dropout: f64, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {dims:?}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = dims
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-limit..limit))
            })
            .collect();
        Ok(Self { weights, dropout })
    }

    pub fn from_weights(weights: Vec<Array2<f64>>, dropout: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for (l, pair) in weights.windows(2).enumerate() {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::Config(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].ncols(),
                    l + 1,
                    pair[1].nrows()
                )));
            }
        }
        Ok(Self { weights, dropout })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.weights[0].nrows()];
        d.extend(self.weights.iter().map(|w| w.ncols()));
        d
    }

    pub fn n_classes(&self) -> usize {
        self.weights.last().map_or(0, |w| w.ncols())
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for (l, w) in self.weights.iter().enumerate() {
            let w = w.as_standard_layout();
            ck.push(format!("gcn.layer{l}.weight"), vec![w.nrows(), w.ncols()], w.as_slice().expect("standard layout"));
        }
        ck.push("gcn.dropout", vec![1], &[self.dropout]);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut weights = Vec::new();
        while let Ok(t) = ck.get(&format!("gcn.layer{}.weight", weights.len())) {
            if t.dims.len() != 2 {
                return Err(Error::Config(format!("tensor {} has rank {}", t.name, t.dims.len())));
            }
            let w = Array2::from_shape_vec((t.dims[0], t.dims[1]), t.to_f64())
                .map_err(|e| Error::Config(format!("tensor {}: {e}", t.name)))?;
            weights.push(w);
        }
        let dropout = ck.get("gcn.dropout")?.to_f64().first().copied().unwrap_or(0.0);
        Self::from_weights(weights, dropout)
    }

    fn check_input(&self, prop: &Propagator, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.weights[0].nrows() {
            return Err(Error::Config(format!(
                "features have {} columns, model expects {}",
                x.ncols(),
                self.weights[0].nrows()
            )));
        }
        if let Some(n) = prop.n_nodes() {
            if n != x.nrows() {
                return Err(Error::Config(format!("graph has {n} nodes, features have {} rows", x.nrows())));
            }
        }
        Ok(())
    }

    /// Class probabilities with dropout disabled.
    pub fn predict(&self, prop: &Propagator, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(prop, x)?;
        Ok(self.forward_cached(prop, x, None).probs)
    }

    /// Class probabilities; dropout is applied only when `rng` is given.
    pub fn forward(&self, prop: &Propagator, x: &Array2<f64>, rng: Option<&mut ChaCha8Rng>) -> Result<Array2<f64>> {
        self.check_input(prop, x)?;
        Ok(self.forward_cached(prop, x, rng).probs)
    }

    fn forward_cached(&self, prop: &Propagator, x: &Array2<f64>, mut rng: Option<&mut ChaCha8Rng>) -> Cache {
        let keep = 1.0 - self.dropout;
        let mut cache = Cache {
            inputs: Vec::with_capacity(self.weights.len()),
            masks: Vec::with_capacity(self.weights.len()),
            pre: Vec::with_capacity(self.weights.len()),
            probs: Array2::zeros((0, 0)),
        };
        let mut h = x.clone();
        for (l, w) in self.weights.iter().enumerate() {
            let mask = match rng.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => {
                    let m = Array2::from_shape_simple_fn(h.raw_dim(), || if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                    h *= &m;
                    Some(m)
                }
                _ => None,
            };
            let p = prop.apply(&h.dot(w));
            cache.inputs.push(h);
            cache.masks.push(mask);
            h = if l + 1 < self.weights.len() { p.mapv(|z| z.max(0.0)) } else { p.clone() };
            cache.pre.push(p);
        }
        cache.probs = softmax_rows(&h);
        cache
    }

    fn backward(&self, prop: &Propagator, cache: &Cache, dprobs: &Array2<f64>) -> Vec<Array2<f64>> {
        let p = &cache.probs;
        let mut g = Array2::zeros(p.raw_dim());
        for ((mut gr, pr), dr) in g.rows_mut().into_iter().zip(p.rows()).zip(dprobs.rows()) {
            let dot: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
            for ((o, &pj), &dj) in gr.iter_mut().zip(pr).zip(dr) {
                *o = pj * (dj - dot);
            }
        }
        let mut grads = vec![Array2::zeros((0, 0)); self.weights.len()];
        for l in (0..self.weights.len()).rev() {
            let da = prop.apply(&g);
            grads[l] = cache.inputs[l].t().dot(&da);
            if l == 0 {
                break;
            }
            let mut dh = da.dot(&self.weights[l].t());
            if let Some(m) = &cache.masks[l] {
                dh *= m;
            }
            dh.zip_mut_with(&cache.pre[l - 1], |d, &z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
            g = dh;
        }
        grads
    }

    /// Weighted loss over `nodes` and its gradient for every layer.
    pub fn loss_and_grad(
        &self,
        prop: &Propagator,
        x: &Array2<f64>,
        labels: &[usize],
        weights: &ClassWeights,
        nodes: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Array2<f64>>)> {
        self.check_input(prop, x)?;
        let cache = self.forward_cached(prop, x, rng);
        let loss = weighted_loss(&cache.probs, labels, weights, nodes)?;
        let dprobs = loss_grad_wrt_probs(&cache.probs, labels, weights, nodes);
        Ok((loss, self.backward(prop, &cache, &dprobs)))
    }
}

struct Cache {
    /// Layer inputs after dropout.
    inputs: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    /// Propagated pre-activations.
    pre: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dropout: bool,
    /// Evaluate labeled and held-out metrics after every epoch.
    pub record_history: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            max_epochs: 300,
            patience: 50,
            seed: 0,
            dropout: true,
            record_history: false,
        }
    }
}

pub const HISTORY_HEADER: &str = "epoch,loss,precision,recall,auc";

/// Macro metrics of one node set at one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc: f64,
}

pub fn write_history<W: Write>(mut out: W, rows: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.epoch, r.loss, r.precision, r.recall, r.auc)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub model: GcnModel,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Labeled-node loss of every training pass.
    pub train_loss: Vec<f64>,
    pub labeled_history: Vec<EpochRecord>,
    pub heldout_history: Vec<EpochRecord>,
}

fn epoch_record(epoch: usize, probs: &Array2<f64>, labels: &[usize], weights: &ClassWeights, nodes: &[usize]) -> Result<EpochRecord> {
    let cm = confusion_matrix(probs, labels, nodes)?;
    let c = probs.ncols() as f64;
    Ok(EpochRecord {
        epoch,
        loss: weighted_loss(probs, labels, weights, nodes)?,
        precision: (0..probs.ncols()).map(|k| cm.precision(k).value).sum::<f64>() / c,
        recall: (0..probs.ncols()).map(|k| cm.recall(k).value).sum::<f64>() / c,
        auc: macro_auc(probs, labels, nodes),
    })
}

/// Full-batch transductive training: every node contributes features, only
/// `labeled` nodes contribute to the loss. Stops once the labeled loss has not
/// improved for `patience` epochs and returns the best epoch's weights.
pub fn train_semisupervised(
    prop: &Propagator,
    x: &Array2<f64>,
    labels: &[usize],
    labeled: &[usize],
    init: &GcnModel,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    if cfg.patience > cfg.max_epochs {
        return Err(Error::Config(format!("patience {} exceeds max_epochs {}", cfg.patience, cfg.max_epochs)));
    }
    if labels.len() != x.nrows() {
        return Err(Error::Config(format!("{} labels for {} nodes", labels.len(), x.nrows())));
    }
    let n_classes = init.n_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Config(format!("label {bad} outside {n_classes} classes")));
    }
    let weights = class_weights_for(labels, labeled, n_classes)?;
    let heldout: Vec<usize> = {
        let mut is_labeled = vec![false; x.nrows()];
        labeled.iter().for_each(|&v| is_labeled[v] = true);
        (0..x.nrows()).filter(|&v| !is_labeled[v]).collect()
    };
    let mut model = init.clone();
    let mut opts: Vec<Adam> = model.weights.iter().map(|w| Adam::new(w.len(), cfg.lr)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut result = TrainResult {
        model: model.clone(),
        best_epoch: 0,
        epochs_run: 0,
        train_loss: Vec::new(),
        labeled_history: Vec::new(),
        heldout_history: Vec::new(),
    };
    for epoch in 0..cfg.max_epochs {
        let (loss, grads) = model.loss_and_grad(prop, x, labels, &weights, labeled, cfg.dropout.then_some(&mut rng))?;
        if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence { epoch });
        }
        result.train_loss.push(loss);
        result.epochs_run = epoch + 1;
        if cfg.record_history {
            let probs = model.forward_cached(prop, x, None).probs;
            result.labeled_history.push(epoch_record(epoch, &probs, labels, &weights, labeled)?);
            if !heldout.is_empty() {
                result.heldout_history.push(epoch_record(epoch, &probs, labels, &weights, &heldout)?);
            }
        }
        if loss < best.0 {
            best = (loss, epoch, model.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
        for ((w, g), opt) in model.weights.iter_mut().zip(&grads).zip(&mut opts) {
            opt.step(w.as_slice_mut().expect("standard layout"), g.as_standard_layout().as_slice().expect("standard layout"));
        }
    }
    result.best_epoch = best.1;
    result.model = best.2;
    Ok(result)
}

/// The image-only baseline: identical training with Â = I.
pub fn train_ann_baseline(
    x: &Array2<f64>,
    labels: &[usize],
    labeled: &[usize],
    init: &GcnModel,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    train_semisupervised(&Propagator::Identity, x, labels, labeled, init, cfg)
}

/// Model shape and training schedule for one cross-validated fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub train: TrainConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            dropout_rate: 0.5,
            train: TrainConfig::default(),
        }
    }
}

/// Trains on every node outside fold `held_out`. Initialization and dropout
/// seeds derive from `cfg.train.seed` and the fold index.
pub fn fit_fold(
    prop: &Propagator,
    x: &Array2<f64>,
    labels: &[usize],
    folds: &[usize],
    held_out: usize,
    n_classes: usize,
    cfg: &FitConfig,
) -> Result<TrainResult> {
    let labeled: Vec<usize> = (0..labels.len()).filter(|&v| folds[v] != held_out).collect();
    let mut dims = vec![x.ncols()];
    dims.extend(&cfg.hidden);
    dims.push(n_classes);
    let seed = cfg.train.seed.wrapping_mul(31).wrapping_add(held_out as u64);
    let init = GcnModel::new(&dims, cfg.dropout_rate, seed)?;
    let tc = TrainConfig { seed, ..cfg.train.clone() };
    train_semisupervised(prop, x, labels, &labeled, &init, &tc)
}

/// [`fit_fold`], then probabilities for all nodes.
pub fn fit_predict(
    prop: &Propagator,
    x: &Array2<f64>,
    labels: &[usize],
    folds: &[usize],
    held_out: usize,
    n_classes: usize,
    cfg: &FitConfig,
) -> Result<Array2<f64>> {
    fit_fold(prop, x, labels, folds, held_out, n_classes, cfg)?.model.predict(prop, x)
}

fn relu_pattern(model: &GcnModel, prop: &Propagator, x: &Array2<f64>) -> (Vec<bool>, Vec<bool>) {
    let cache = model.forward_cached(prop, x, None);
    let relu = cache.pre[..cache.pre.len() - 1].iter().flat_map(|p| p.iter().map(|&z| z > 0.0)).collect();
    let clamp = cache.probs.iter().map(|&p| p > PROB_CLAMP && p < 1.0 - PROB_CLAMP).collect();
    (relu, clamp)
}

/// Analytic vs central-difference gradients of the weighted loss for every
/// weight, with dropout disabled.
pub fn grad_check_gcn(
    model: &GcnModel,
    prop: &Propagator,
    x: &Array2<f64>,
    labels: &[usize],
    weights: &ClassWeights,
    nodes: &[usize],
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grad(prop, x, labels, weights, nodes, None)?;
    let flat: Vec<f64> = grads.iter().flat_map(|g| g.iter().copied()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        grad_norm: flat.iter().map(|g| g * g).sum::<f64>().sqrt(),
        checked: flat.len(),
        refined: 0,
    };
    let base = relu_pattern(model, prop, x);
    let loss_at = |m: &GcnModel| -> Result<(f64, (Vec<bool>, Vec<bool>))> {
        let p = m.forward_cached(prop, x, None).probs;
        Ok((weighted_loss(&p, labels, weights, nodes)?, relu_pattern(m, prop, x)))
    };
    let mut probe = model.clone();
    for l in 0..model.weights.len() {
        for (r, c) in ndarray::indices(model.weights[l].raw_dim()) {
            let orig = model.weights[l][[r, c]];
            let mut h = 1e-5 * orig.abs().max(1.0);
            let mut attempt = 0;
            let numeric = loop {
                probe.weights[l][[r, c]] = orig + h;
                let (up, up_pat) = loss_at(&probe)?;
                probe.weights[l][[r, c]] = orig - h;
                let (down, down_pat) = loss_at(&probe)?;
                probe.weights[l][[r, c]] = orig;
                let numeric = (up - down) / (2.0 * h);
                if (up_pat == base && down_pat == base) || attempt == 3 {
                    break numeric;
                }
                attempt += 1;
                h *= 0.1;
            };
            if attempt > 0 {
                report.refined += 1;
            }
            let analytic = grads[l][[r, c]];
            report.max_abs_error = report.max_abs_error.max((analytic - numeric).abs());
            report.max_rel_error = report.max_rel_error.max(grad_discrepancy(analytic, numeric, report.grad_norm));
        }
    }
    Ok(report)
}
