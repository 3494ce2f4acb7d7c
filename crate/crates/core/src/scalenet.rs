//! Pixels-per-millimetre regression from a correlation signature.
//!
//! Two estimators live here: a small 1D convolutional network trained from
//! scratch (three conv / batch-norm / ReLU / max-pool blocks and a linear
//! head, with hand-written backpropagation), and an analytic baseline that
//! reads the tick pitch off the first dominant peak of the signature.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::tpcf::{TpcfSignature, SIGNATURE_BINS};

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorHyper {
    pub input_len: usize,
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub pool: usize,
    pub bn_eps: f64,
    /// Weight of the old value in the running-statistics moving average.
    pub bn_momentum: f64,
}

impl Default for RegressorHyper {
    fn default() -> Self {
        Self {
            input_len: SIGNATURE_BINS,
            channels: vec![8, 16, 32],
            kernels: vec![7, 5, 3],
            pool: 2,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BlockLayout {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    len: usize,
    pooled_len: usize,
    w: usize,
    b: usize,
    gamma: usize,
    beta: usize,
}

/// Conv1d regressor with all trainable parameters in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dRegressor {
    hyper: RegressorHyper,
    blocks: Vec<BlockLayout>,
    head_w: usize,
    head_b: usize,
    flat_dim: usize,
    params: Vec<f64>,
    running_mean: Vec<Vec<f64>>,
    running_var: Vec<Vec<f64>>,
}

impl Conv1dRegressor {
    /// Zero-initialized model with unit batch-norm scale.
    pub fn zeros(hyper: RegressorHyper) -> Result<Self> {
        if hyper.channels.len() != hyper.kernels.len() || hyper.channels.is_empty() {
            return Err(Error::Config("channels and kernels must have equal, nonzero length".into()));
        }
        if hyper.pool == 0 || hyper.kernels.iter().any(|&k| k == 0 || k % 2 == 0) {
            return Err(Error::Config("kernels must be odd and pool width positive".into()));
        }
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut in_ch = 1;
        let mut len = hyper.input_len;
        for (&out_ch, &kernel) in hyper.channels.iter().zip(&hyper.kernels) {
            let pooled_len = len / hyper.pool;
            if pooled_len == 0 {
                return Err(Error::Config(format!(
                    "input length {} collapses to zero after pooling",
                    hyper.input_len
                )));
            }
            let w = offset;
            let b = w + out_ch * in_ch * kernel;
            let gamma = b + out_ch;
            let beta = gamma + out_ch;
            offset = beta + out_ch;
            blocks.push(BlockLayout {
                in_ch,
                out_ch,
                kernel,
                len,
                pooled_len,
                w,
                b,
                gamma,
                beta,
            });
            in_ch = out_ch;
            len = pooled_len;
        }
        let flat_dim = in_ch * len;
        let head_w = offset;
        let head_b = head_w + flat_dim;
        let mut params = vec![0.0; head_b + 1];
        for blk in &blocks {
            params[blk.gamma..blk.gamma + blk.out_ch].fill(1.0);
        }
        Ok(Self {
            running_mean: blocks.iter().map(|b| vec![0.0; b.out_ch]).collect(),
            running_var: blocks.iter().map(|b| vec![1.0; b.out_ch]).collect(),
            hyper,
            blocks,
            head_w,
            head_b,
            flat_dim,
            params,
        })
    }

    /// He-normal conv weights, small normal head weights.
    pub fn new(hyper: RegressorHyper, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(hyper)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for blk in model.blocks.clone() {
            let fan_in = (blk.in_ch * blk.kernel) as f64;
            let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            for v in &mut model.params[blk.w..blk.b] {
                *v = dist.sample(&mut rng);
            }
        }
        let dist = Normal::new(0.0, (1.0 / model.flat_dim as f64).sqrt()).expect("finite std");
        for v in &mut model.params[model.head_w..model.head_b] {
            *v = dist.sample(&mut rng);
        }
        Ok(model)
    }

    pub fn hyper(&self) -> &RegressorHyper {
        &self.hyper
    }

    pub fn flat_dim(&self) -> usize {
        self.flat_dim
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn head_bias(&self) -> f64 {
        self.params[self.head_b]
    }

    pub fn set_head_bias(&mut self, b: f64) {
        self.params[self.head_b] = b;
    }

    /// Index range of the head weights and bias in the flat parameter vector.
    pub fn head_range(&self) -> std::ops::Range<usize> {
        self.head_w..self.head_b + 1
    }

    /// Named views of every tensor: `(name, dims, flat range)`.
    fn tensor_ranges(&self) -> Vec<(String, Vec<usize>, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        for (i, blk) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.weight"), vec![blk.out_ch, blk.in_ch, blk.kernel], blk.w..blk.b));
            out.push((format!("block{i}.bias"), vec![blk.out_ch], blk.b..blk.gamma));
            out.push((format!("block{i}.bn_gamma"), vec![blk.out_ch], blk.gamma..blk.beta));
            out.push((format!("block{i}.bn_beta"), vec![blk.out_ch], blk.beta..blk.beta + blk.out_ch));
        }
        out.push(("head.weight".into(), vec![self.flat_dim, 1], self.head_w..self.head_b));
        out.push(("head.bias".into(), vec![1], self.head_b..self.head_b + 1));
        out
    }

    /// Every tensor by name in f64, including batch-norm running statistics.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out: Vec<_> = self
            .tensor_ranges()
            .into_iter()
            .map(|(name, dims, range)| (name, dims, self.params[range].to_vec()))
            .collect();
        for (i, (m, v)) in self.running_mean.iter().zip(&self.running_var).enumerate() {
            out.push((format!("block{i}.bn_running_mean"), vec![m.len()], m.clone()));
            out.push((format!("block{i}.bn_running_var"), vec![v.len()], v.clone()));
        }
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push(
            "hyper",
            vec![2],
            &[self.hyper.input_len as f64, self.hyper.pool as f64],
        );
        for (name, dims, data) in self.named_tensors() {
            ck.push(name, dims, &data);
        }
        ck
    }

    /// Overwrites the running statistics of block `i`.
    pub fn set_running_stats(&mut self, i: usize, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        let n = self.blocks.get(i).map(|b| b.out_ch).ok_or_else(|| Error::Config(format!("no block {i}")))?;
        if mean.len() != n || var.len() != n {
            return Err(Error::Config(format!("block {i} has {n} channels")));
        }
        self.running_mean[i] = mean;
        self.running_var[i] = var;
        Ok(())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let hyper_t = ck.get("hyper")?.to_f64();
        if hyper_t.len() != 2 {
            return Err(Error::Config("hyper tensor must hold [input_len, pool]".into()));
        }
        let mut channels = Vec::new();
        let mut kernels = Vec::new();
        while let Ok(t) = ck.get(&format!("block{}.weight", channels.len())) {
            if t.dims.len() != 3 {
                return Err(Error::Config(format!("{} must be rank 3", t.name)));
            }
            channels.push(t.dims[0]);
            kernels.push(t.dims[2]);
        }
        let hyper = RegressorHyper {
            input_len: hyper_t[0] as usize,
            pool: hyper_t[1] as usize,
            channels,
            kernels,
            ..Default::default()
        };
        let mut model = Self::zeros(hyper)?;
        for (name, dims, range) in model.tensor_ranges() {
            let t = ck.get(&name)?;
            if t.dims != dims {
                return Err(Error::Config(format!("{name}: expected dims {dims:?}, found {:?}", t.dims)));
            }
            model.params[range].copy_from_slice(&t.to_f64());
        }
        for i in 0..model.blocks.len() {
            let m = ck.get(&format!("block{i}.bn_running_mean"))?.to_f64();
            let v = ck.get(&format!("block{i}.bn_running_var"))?.to_f64();
            if m.len() != model.running_mean[i].len() || v.len() != m.len() {
                return Err(Error::Config(format!("block{i}: running statistics have wrong length")));
            }
            model.running_mean[i] = m;
            model.running_var[i] = v;
        }
        Ok(model)
    }
}

/// Scales a signature by its zero-separation value (the foreground density),
/// so the network sees a conditional probability profile in `[0, 1]`.
pub fn prepare_input(sig: &TpcfSignature) -> Vec<f64> {
    let bins = sig.bins();
    let d = bins[0];
    if d > 0.0 {
        bins.iter().map(|v| v / d).collect()
    } else {
        bins.to_vec()
    }
}

struct BlockCache {
    input: Vec<f64>,
    xhat: Vec<f64>,
    pre_relu: Vec<f64>,
    argmax: Vec<usize>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

struct ForwardCache {
    blocks: Vec<BlockCache>,
    flat: Vec<f64>,
}

impl Conv1dRegressor {
    fn check_inputs(&self, inputs: &[Vec<f64>]) -> Result<()> {
        if let Some(bad) = inputs.iter().find(|x| x.len() != self.hyper.input_len) {
            return Err(Error::Config(format!(
                "input length {} does not match model input {}",
                bad.len(),
                self.hyper.input_len
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, inputs: &[Vec<f64>], training: bool) -> (Vec<f64>, ForwardCache) {
        let batch = inputs.len();
        let mut act: Vec<f64> = inputs.iter().flatten().copied().collect();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (bi, blk) in self.blocks.iter().enumerate() {
            let (cin, cout, len, k) = (blk.in_ch, blk.out_ch, blk.len, blk.kernel);
            let w = &self.params[blk.w..blk.b];
            let bias = &self.params[blk.b..blk.gamma];
            let gamma = &self.params[blk.gamma..blk.beta];
            let beta = &self.params[blk.beta..blk.beta + cout];
            let z = conv1d_same(&act, batch, cin, cout, len, k, w, bias);

            let m = (batch * len) as f64;
            let (mean, var) = if training {
                let mut mean = vec![0.0; cout];
                let mut var = vec![0.0; cout];
                for o in 0..cout {
                    let mut s = 0.0;
                    for n in 0..batch {
                        s += z[(n * cout + o) * len..(n * cout + o + 1) * len].iter().sum::<f64>();
                    }
                    mean[o] = s / m;
                    let mut ss = 0.0;
                    for n in 0..batch {
                        for &v in &z[(n * cout + o) * len..(n * cout + o + 1) * len] {
                            ss += (v - mean[o]) * (v - mean[o]);
                        }
                    }
                    var[o] = ss / m;
                }
                (mean, var)
            } else {
                (self.running_mean[bi].clone(), self.running_var[bi].clone())
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.hyper.bn_eps).sqrt()).collect();

            let mut xhat = vec![0.0; z.len()];
            let mut pre_relu = vec![0.0; z.len()];
            for n in 0..batch {
                for o in 0..cout {
                    let base = (n * cout + o) * len;
                    for t in 0..len {
                        let xh = (z[base + t] - mean[o]) * inv_std[o];
                        xhat[base + t] = xh;
                        pre_relu[base + t] = gamma[o] * xh + beta[o];
                    }
                }
            }

            let plen = blk.pooled_len;
            let pool = self.hyper.pool;
            let mut pooled = vec![0.0; batch * cout * plen];
            let mut argmax = vec![0usize; batch * cout * plen];
            for n in 0..batch {
                for o in 0..cout {
                    let base = (n * cout + o) * len;
                    for j in 0..plen {
                        let mut best = base + j * pool;
                        for t in base + j * pool + 1..base + (j + 1) * pool {
                            if pre_relu[t] > pre_relu[best] {
                                best = t;
                            }
                        }
                        let out = (n * cout + o) * plen + j;
                        pooled[out] = pre_relu[best].max(0.0);
                        argmax[out] = best;
                    }
                }
            }
            caches.push(BlockCache {
                input: std::mem::take(&mut act),
                xhat,
                pre_relu,
                argmax,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            });
            act = pooled;
        }

        let hw = &self.params[self.head_w..self.head_b];
        let hb = self.params[self.head_b];
        let outputs = act
            .chunks_exact(self.flat_dim)
            .map(|row| hb + row.iter().zip(hw).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        (outputs, ForwardCache { blocks: caches, flat: act })
    }

    /// Predicted px/mm for a batch of prepared inputs.
    pub fn forward_batch(&self, inputs: &[Vec<f64>], training: bool) -> Result<Vec<f64>> {
        self.check_inputs(inputs)?;
        Ok(self.forward_cached(inputs, training).0)
    }

    pub fn forward(&self, sig: &TpcfSignature, training: bool) -> Result<f64> {
        Ok(self.forward_batch(&[prepare_input(sig)], training)?[0])
    }

    /// Mean squared error and its gradient with respect to every parameter,
    /// using batch statistics.
    pub fn loss_and_grad(&self, inputs: &[Vec<f64>], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (loss, grad, _) = self.loss_grad_cached(inputs, targets)?;
        Ok((loss, grad))
    }

    fn loss_grad_cached(&self, inputs: &[Vec<f64>], targets: &[f64]) -> Result<(f64, Vec<f64>, ForwardCache)> {
        self.check_inputs(inputs)?;
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(Error::Precondition("inputs and targets must be nonempty and aligned".into()));
        }
        let batch = inputs.len();
        let (out, cache) = self.forward_cached(inputs, true);
        let loss = out.iter().zip(targets).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / batch as f64;
        let mut grad = vec![0.0; self.params.len()];

        // head
        let hw = self.params[self.head_w..self.head_b].to_vec();
        let mut d_act = vec![0.0; cache.flat.len()];
        for n in 0..batch {
            let d_out = 2.0 * (out[n] - targets[n]) / batch as f64;
            grad[self.head_b] += d_out;
            let row = &cache.flat[n * self.flat_dim..(n + 1) * self.flat_dim];
            for i in 0..self.flat_dim {
                grad[self.head_w + i] += d_out * row[i];
                d_act[n * self.flat_dim + i] = d_out * hw[i];
            }
        }

        for (blk, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (cin, cout, len, k) = (blk.in_ch, blk.out_ch, blk.len, blk.kernel);
            // un-pool and ReLU
            let mut d_pre = vec![0.0; batch * cout * len];
            for (i, &src) in bc.argmax.iter().enumerate() {
                if bc.pre_relu[src] > 0.0 {
                    d_pre[src] += d_act[i];
                }
            }
            // batch norm
            let m = (batch * len) as f64;
            let mut d_z = vec![0.0; d_pre.len()];
            for o in 0..cout {
                let gamma = self.params[blk.gamma + o];
                let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
                for n in 0..batch {
                    let base = (n * cout + o) * len;
                    for t in base..base + len {
                        sum_dy += d_pre[t];
                        sum_dy_xhat += d_pre[t] * bc.xhat[t];
                    }
                }
                grad[blk.gamma + o] += sum_dy_xhat;
                grad[blk.beta + o] += sum_dy;
                let (s1, s2) = (gamma * sum_dy, gamma * sum_dy_xhat);
                let scale = bc.inv_std[o] / m;
                for n in 0..batch {
                    let base = (n * cout + o) * len;
                    for t in base..base + len {
                        d_z[t] = scale * (m * gamma * d_pre[t] - s1 - bc.xhat[t] * s2);
                    }
                }
            }
            // convolution
            let pad = k / 2;
            let mut d_in = vec![0.0; batch * cin * len];
            for n in 0..batch {
                for o in 0..cout {
                    let zrow = &d_z[(n * cout + o) * len..(n * cout + o + 1) * len];
                    grad[blk.b + o] += zrow.iter().sum::<f64>();
                    for i in 0..cin {
                        let xrow = &bc.input[(n * cin + i) * len..(n * cin + i + 1) * len];
                        let wbase = (o * cin + i) * k;
                        for j in 0..k {
                            let wv = self.params[blk.w + wbase + j];
                            let mut gw = 0.0;
                            let (t_lo, t_hi) = tap_range(j, pad, len);
                            for t in t_lo..t_hi {
                                let s = t + j - pad;
                                gw += zrow[t] * xrow[s];
                                d_in[(n * cin + i) * len + s] += zrow[t] * wv;
                            }
                            grad[blk.w + wbase + j] += gw;
                        }
                    }
                }
            }
            d_act = d_in;
        }
        Ok((loss, grad, cache))
    }

    fn update_running_stats(&mut self, cache: &ForwardCache) {
        let mom = self.hyper.bn_momentum;
        for (i, bc) in cache.blocks.iter().enumerate() {
            for o in 0..bc.batch_mean.len() {
                self.running_mean[i][o] = mom * self.running_mean[i][o] + (1.0 - mom) * bc.batch_mean[o];
                self.running_var[i][o] = mom * self.running_var[i][o] + (1.0 - mom) * bc.batch_var[o];
            }
        }
    }
}

/// Output positions `t` for which tap `j` reads inside the unpadded input.
#[inline]
fn tap_range(j: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(j);
    let hi = (len + pad).saturating_sub(j).min(len);
    (lo, hi)
}

#[allow(clippy::too_many_arguments)]
fn conv1d_same(
    x: &[f64],
    batch: usize,
    cin: usize,
    cout: usize,
    len: usize,
    k: usize,
    w: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let pad = k / 2;
    let mut z = vec![0.0; batch * cout * len];
    for n in 0..batch {
        for o in 0..cout {
            let zrow = &mut z[(n * cout + o) * len..(n * cout + o + 1) * len];
            zrow.fill(bias[o]);
            for i in 0..cin {
                let xrow = &x[(n * cin + i) * len..(n * cin + i + 1) * len];
                for j in 0..k {
                    let wv = w[(o * cin + i) * k + j];
                    let (t_lo, t_hi) = tap_range(j, pad, len);
                    for t in t_lo..t_hi {
                        zrow[t] += wv * xrow[t + j - pad];
                    }
                }
            }
        }
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone)]
pub struct ScaleDataset {
    items: Vec<(TpcfSignature, f64)>,
    split: Vec<Split>,
}

impl ScaleDataset {
    pub fn new(items: Vec<(TpcfSignature, f64)>, split: Vec<Split>) -> Result<Self> {
        if items.len() != split.len() {
            return Err(Error::Config("one split assignment per item required".into()));
        }
        if let Some((_, rho)) = items.iter().find(|(_, rho)| !(*rho > 0.0)) {
            return Err(Error::Config(format!("rho_true must be positive, found {rho}")));
        }
        Ok(Self { items, split })
    }

    /// Seeded random assignment with the given validation and test fractions.
    pub fn with_random_split(items: Vec<(TpcfSignature, f64)>, val_frac: f64, test_frac: f64, seed: u64) -> Result<Self> {
        let n = items.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = (val_frac * n as f64).round() as usize;
        let n_test = ((test_frac * n as f64).round() as usize).min(n - n_val.min(n));
        let mut split = vec![Split::Train; n];
        for (rank, &i) in order.iter().enumerate() {
            if rank < n_val {
                split[i] = Split::Validation;
            } else if rank < n_val + n_test {
                split[i] = Split::Test;
            }
        }
        Self::new(items, split)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn part(&self, which: Split) -> Vec<&(TpcfSignature, f64)> {
        self.items
            .iter()
            .zip(&self.split)
            .filter(|(_, &s)| s == which)
            .map(|(it, _)| it)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Start the head bias at the mean training target.
    pub center_head_bias: bool,
}

impl Default for ScaleTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            center_head_bias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    /// Inference-mode MSE on the validation split, if any.
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedRegressor {
    pub model: Conv1dRegressor,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
}

/// Adam on mean squared error; returns the parameters of the epoch with the
/// lowest validation loss (training loss when there is no validation split).
pub fn train(model: &Conv1dRegressor, data: &ScaleDataset, cfg: &ScaleTrainConfig) -> Result<TrainedRegressor> {
    let train_set = data.part(Split::Train);
    if train_set.is_empty() {
        return Err(Error::Precondition("training split is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let inputs: Vec<Vec<f64>> = train_set.iter().map(|(s, _)| prepare_input(s)).collect();
    let targets: Vec<f64> = train_set.iter().map(|(_, r)| *r).collect();
    model.check_inputs(&inputs)?;
    let val = data.part(Split::Validation);
    let val_inputs: Vec<Vec<f64>> = val.iter().map(|(s, _)| prepare_input(s)).collect();
    let val_targets: Vec<f64> = val.iter().map(|(_, r)| *r).collect();

    let mut model = model.clone();
    if cfg.center_head_bias {
        model.set_head_bias(targets.iter().sum::<f64>() / targets.len() as f64);
    }
    let mut opt = Adam::new(model.n_params(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, model.clone(), 0usize);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb: Vec<Vec<f64>> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let yb: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, grad, cache) = model.loss_grad_cached(&xb, &yb)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            sum += loss * chunk.len() as f64;
            model.update_running_stats(&cache);
            opt.step(&mut model.params, &grad);
        }
        let train_mse = sum / inputs.len() as f64;
        let val_mse = if val_inputs.is_empty() {
            None
        } else {
            let pred = model.forward_batch(&val_inputs, false)?;
            Some(mse(&pred, &val_targets))
        };
        if val_mse.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        let monitored = val_mse.unwrap_or(train_mse);
        if monitored < best.0 {
            best = (monitored, model.clone(), epoch);
        }
        history.push(EpochLoss {
            epoch,
            train_mse,
            val_mse,
        });
    }
    Ok(TrainedRegressor {
        model: best.1,
        history,
        best_epoch: best.2,
    })
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub grad_norm: f64,
    pub checked: usize,
    /// Components whose step had to shrink to stay on one side of a kink.
    pub refined: usize,
}

/// Which input each pooled unit selected and whether it passed the ReLU.
fn activation_pattern(cache: &ForwardCache) -> Vec<usize> {
    cache
        .blocks
        .iter()
        .flat_map(|b| b.argmax.iter().map(|&i| 2 * i + usize::from(b.pre_relu[i] > 0.0)))
        .collect()
}

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_CHECK_ATOL: f64 = 1e-6;

/// Components below this fraction of the full gradient norm are compared
/// against that floor; finite differences cannot resolve them further.
pub const GRAD_CHECK_NORM_FLOOR: f64 = 1e-6;

/// Relative discrepancy of one component, floored for near-zero gradients.
pub fn grad_discrepancy(analytic: f64, numeric: f64, grad_norm: f64) -> f64 {
    let floor = GRAD_CHECK_ATOL.max(GRAD_CHECK_NORM_FLOOR * grad_norm);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central finite differences on a random subset of at least 200 parameters
/// (all of them when `indices` would cover fewer), in training mode.
pub fn grad_check(model: &Conv1dRegressor, samples: &[(Vec<f64>, f64)], n_check: usize, seed: u64) -> Result<GradCheckReport> {
    let n = model.n_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = n_check.max(200).min(n);
    let indices: Vec<usize> = rand::seq::index::sample(&mut rng, n, count).into_vec();
    grad_check_indices(model, samples, &indices)
}

pub fn grad_check_indices(model: &Conv1dRegressor, samples: &[(Vec<f64>, f64)], indices: &[usize]) -> Result<GradCheckReport> {
    let inputs: Vec<Vec<f64>> = samples.iter().map(|(x, _)| x.clone()).collect();
    let targets: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
    let (_, grad) = model.loss_and_grad(&inputs, &targets)?;
    let probe_at = |m: &Conv1dRegressor| -> (f64, Vec<usize>) {
        let (out, cache) = m.forward_cached(&inputs, true);
        (mse(&out, &targets), activation_pattern(&cache))
    };
    let base_pattern = probe_at(model).1;
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        checked: indices.len(),
        refined: 0,
    };
    for &i in indices {
        let orig = probe.params[i];
        let mut h = 1e-5 * orig.abs().max(1.0);
        let mut numeric;
        let mut attempt = 0;
        loop {
            probe.params[i] = orig + h;
            let (up, up_pattern) = probe_at(&probe);
            probe.params[i] = orig - h;
            let (down, down_pattern) = probe_at(&probe);
            probe.params[i] = orig;
            numeric = (up - down) / (2.0 * h);
            // a step that crosses a ReLU or max-pool switch is not differentiable
            // across; retry with a smaller one
            if (up_pattern == base_pattern && down_pattern == base_pattern) || attempt == 3 {
                break;
            }
            attempt += 1;
            h *= 0.1;
        }
        if attempt > 0 {
            report.refined += 1;
        }
        report.max_abs_error = report.max_abs_error.max((grad[i] - numeric).abs());
        report.max_rel_error = report.max_rel_error.max(grad_discrepancy(grad[i], numeric, report.grad_norm));
    }
    Ok(report)
}

/// Tick pitch read off the first dominant local maximum beyond bin 2, refined
/// by a three-point parabola. With 1 mm ticks the pitch in px is px/mm.
pub fn peak_estimate(sig: &TpcfSignature) -> Result<f64> {
    peak_estimate_with(sig, 0.3)
}

/// `dominance` is the minimum prominence, relative to the most prominent
/// maximum, a peak needs to be selected.
pub fn peak_estimate_with(sig: &TpcfSignature, dominance: f64) -> Result<f64> {
    let s = sig.bins();
    let last = s.iter().rposition(|&v| v != 0.0).unwrap_or(0);
    let mut peaks: Vec<(usize, f64)> = Vec::new();
    let mut running_min = f64::INFINITY;
    for k in 2..last {
        running_min = running_min.min(s[k]);
        if k > 2 && s[k] > s[k - 1] && s[k] >= s[k + 1] {
            // prominence over the lowest value seen since the previous peak
            peaks.push((k, s[k] - running_min));
            running_min = s[k];
        }
    }
    let top = peaks.iter().map(|p| p.1).fold(0.0, f64::max);
    if peaks.is_empty() || !(top > 0.0) {
        return Err(Error::Estimation("signature has no local maximum beyond bin 2".into()));
    }
    let &(k, _) = peaks
        .iter()
        .find(|p| p.1 >= dominance * top)
        .expect("the most prominent peak qualifies");
    let (a, b, c) = (s[k - 1], s[k], s[k + 1]);
    let denom = a - 2.0 * b + c;
    let offset = if denom.abs() > f64::EPSILON * b.abs().max(1e-300) {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Ok(k as f64 + offset)
}
