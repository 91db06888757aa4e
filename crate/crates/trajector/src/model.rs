//! Lightweight transformer encoder classifier over embedded trajectory
//! sequences, written from scratch in f64: forward, exact reverse-mode
//! gradients, Adam with a reduce-on-plateau scheduler, and JSON checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{accuracy, roc_auc};
use crate::par::write_atomic;
use crate::rng::Rng;

pub const DEFAULT_HIDDEN_DIM: usize = 128;
pub const DEFAULT_N_LAYERS: usize = 2;
pub const DEFAULT_N_HEADS: usize = 2;
pub const DEFAULT_FF_DIM: usize = 256;
pub const DEFAULT_MAX_LEN: usize = 256;
const LN_EPS: f64 = 1e-5;
const PROB_CLAMP: f64 = 1e-12;
pub const CHECKPOINT_FORMAT: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Sinusoidal positional encoding after the input embedding; mean
    /// pooling would otherwise be order-blind. Disableable for ablation.
    #[serde(default = "default_true")]
    pub use_positional: bool,
}

fn default_true() -> bool {
    true
}

impl TransformerConfig {
    pub fn new(input_dim: usize, seed: u64) -> TransformerConfig {
        TransformerConfig {
            input_dim,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            n_layers: DEFAULT_N_LAYERS,
            n_heads: DEFAULT_N_HEADS,
            ff_dim: DEFAULT_FF_DIM,
            max_len: DEFAULT_MAX_LEN,
            seed,
            use_positional: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ff_dim", self.ff_dim),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.hidden_dim % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "hidden_dim {} not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Init {
    Weight, // uniform ±1/√fan_in (fan_in = rows)
    Zero,
    One,
}

/// Fixed tensor order: embedding, then 16 tensors per layer, then the head.
fn tensor_specs(cfg: &TransformerConfig) -> Vec<(String, (usize, usize), Init)> {
    let h = cfg.hidden_dim;
    let mut specs = vec![
        ("embed.w".into(), (cfg.input_dim, h), Init::Weight),
        ("embed.b".into(), (1, h), Init::Zero),
    ];
    for l in 0..cfg.n_layers {
        let p = format!("layer{l}");
        specs.extend([
            (format!("{p}.ln1.g"), (1, h), Init::One),
            (format!("{p}.ln1.b"), (1, h), Init::Zero),
            (format!("{p}.attn.wq"), (h, h), Init::Weight),
            (format!("{p}.attn.bq"), (1, h), Init::Zero),
            (format!("{p}.attn.wk"), (h, h), Init::Weight),
            (format!("{p}.attn.bk"), (1, h), Init::Zero),
            (format!("{p}.attn.wv"), (h, h), Init::Weight),
            (format!("{p}.attn.bv"), (1, h), Init::Zero),
            (format!("{p}.attn.wo"), (h, h), Init::Weight),
            (format!("{p}.attn.bo"), (1, h), Init::Zero),
            (format!("{p}.ln2.g"), (1, h), Init::One),
            (format!("{p}.ln2.b"), (1, h), Init::Zero),
            (format!("{p}.ff.w1"), (h, cfg.ff_dim), Init::Weight),
            (format!("{p}.ff.b1"), (1, cfg.ff_dim), Init::Zero),
            (format!("{p}.ff.w2"), (cfg.ff_dim, h), Init::Weight),
            (format!("{p}.ff.b2"), (1, h), Init::Zero),
        ]);
    }
    specs.push(("head.w".into(), (h, 2), Init::Weight));
    specs.push(("head.b".into(), (1, 2), Init::Zero));
    specs
}

// Tensor indices within the flat parameter vector.
const PER_LAYER: usize = 16;
const EMBED_W: usize = 0;
const EMBED_B: usize = 1;
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const BQ: usize = 3;
const WK: usize = 4;
const BK: usize = 5;
const WV: usize = 6;
const BV: usize = 7;
const WO: usize = 8;
const BO: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const FF_W1: usize = 12;
const FF_B1: usize = 13;
const FF_W2: usize = 14;
const FF_B2: usize = 15;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: TransformerConfig,
    pub tensors: Vec<Array2<f64>>,
}

impl ModelParams {
    fn layer(&self, l: usize, which: usize) -> &Array2<f64> {
        &self.tensors[2 + l * PER_LAYER + which]
    }

    fn head_w(&self) -> &Array2<f64> {
        &self.tensors[self.tensors.len() - 2]
    }

    fn head_b(&self) -> &Array2<f64> {
        &self.tensors[self.tensors.len() - 1]
    }

    pub fn tensor_names(&self) -> Vec<String> {
        tensor_specs(&self.config).into_iter().map(|s| s.0).collect()
    }
}

/// Deterministic seeded initialization; weights uniform in ±1/√fan_in,
/// biases zero, norm gains one.
pub fn init_model(config: &TransformerConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = Rng::seed_from(config.seed);
    let tensors = tensor_specs(config)
        .into_iter()
        .map(|(_, (r, c), init)| match init {
            Init::Zero => Array2::zeros((r, c)),
            Init::One => Array2::ones((r, c)),
            Init::Weight => {
                let bound = 1.0 / (r as f64).sqrt();
                Array2::from_shape_fn((r, c), |_| rng.range(-bound, bound))
            }
        })
        .collect();
    Ok(ModelParams {
        config: config.clone(),
        tensors,
    })
}

/// Standard sinusoidal positional encoding, rows = positions.
fn positional_encoding(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(pos, i)| {
        let pair = (i / 2 * 2) as f64;
        let angle = pos as f64 / 10000f64.powf(pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise layer norm; returns (x_hat, inv_std).
fn layer_norm(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let n = x.ncols() as f64;
    let mut x_hat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in x_hat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mu = row.sum() / n;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        *is = 1.0 / (var + LN_EPS).sqrt();
        let isv = *is;
        row.mapv_inplace(|v| (v - mu) * isv);
    }
    (x_hat, inv_std)
}

/// dL/dx given dL/dx_hat.
fn layer_norm_backward(
    d_xhat: &Array2<f64>,
    x_hat: &Array2<f64>,
    inv_std: &Array1<f64>,
) -> Array2<f64> {
    let n = d_xhat.ncols() as f64;
    let mut dx = Array2::zeros(d_xhat.raw_dim());
    for i in 0..d_xhat.nrows() {
        let dh = d_xhat.row(i);
        let xh = x_hat.row(i);
        let sum_dh = dh.sum();
        let sum_dh_xh = dh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
        let isv = inv_std[i];
        for j in 0..d_xhat.ncols() {
            dx[[i, j]] = isv * (dh[j] - sum_dh / n - xh[j] * sum_dh_xh / n);
        }
    }
    dx
}

struct LayerCache {
    x_hat1: Array2<f64>,
    inv_std1: Array1<f64>,
    ln1_out: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>, // per-head softmax weights, L×L
    concat: Array2<f64>,
    x_hat2: Array2<f64>,
    inv_std2: Array1<f64>,
    ln2_out: Array2<f64>,
    ff_pre: Array2<f64>, // pre-ReLU
    ff_act: Array2<f64>, // post-ReLU
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    pooled: Array1<f64>,
    probs: [f64; 2], // [p_real, p_fake]
    len: usize,
}

fn forward_sample(params: &ModelParams, seq: ArrayView2<f64>) -> Result<ForwardCache> {
    let cfg = &params.config;
    let len = seq.nrows();
    if len == 0 {
        return Err(Error::invalid("empty sequence"));
    }
    if len > cfg.max_len {
        return Err(Error::invalid(format!(
            "sequence length {len} exceeds max_len {}",
            cfg.max_len
        )));
    }
    if seq.ncols() != cfg.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "sequence dim {} vs model input_dim {}",
            seq.ncols(),
            cfg.input_dim
        )));
    }

    // Scale the embedding by sqrt(hidden) so the unit-magnitude positional
    // encoding does not drown out small-valued input features.
    let mut x = (seq.dot(&params.tensors[EMBED_W]) + &params.tensors[EMBED_B])
        * (cfg.hidden_dim as f64).sqrt();
    if cfg.use_positional {
        x += &positional_encoding(len, cfg.hidden_dim);
    }

    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let (x_hat1, inv_std1) = layer_norm(&x);
        let ln1_out = &x_hat1 * params.layer(l, LN1_G) + params.layer(l, LN1_B);
        let q = ln1_out.dot(params.layer(l, WQ)) + params.layer(l, BQ);
        let k = ln1_out.dot(params.layer(l, WK)) + params.layer(l, BK);
        let v = ln1_out.dot(params.layer(l, WV)) + params.layer(l, BV);
        let mut concat = Array2::zeros((len, cfg.hidden_dim));
        let mut attn = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let scores = qh.dot(&kh.t()) * scale;
            let a = softmax_rows(&scores);
            concat.slice_mut(cols).assign(&a.dot(&vh));
            attn.push(a);
        }
        let attn_out = concat.dot(params.layer(l, WO)) + params.layer(l, BO);
        let x_mid = &x + &attn_out;

        let (x_hat2, inv_std2) = layer_norm(&x_mid);
        let ln2_out = &x_hat2 * params.layer(l, LN2_G) + params.layer(l, LN2_B);
        let ff_pre = ln2_out.dot(params.layer(l, FF_W1)) + params.layer(l, FF_B1);
        let ff_act = ff_pre.mapv(|v| v.max(0.0));
        let ff_out = ff_act.dot(params.layer(l, FF_W2)) + params.layer(l, FF_B2);
        let x_out = &x_mid + &ff_out;

        layers.push(LayerCache {
            x_hat1,
            inv_std1,
            ln1_out,
            q,
            k,
            v,
            attn,
            concat,
            x_hat2,
            inv_std2,
            ln2_out,
            ff_pre,
            ff_act,
        });
        x = x_out;
    }

    let pooled = x.mean_axis(Axis(0)).unwrap();
    let logits = pooled.dot(params.head_w()) + params.head_b().row(0);
    let max = logits[0].max(logits[1]);
    let e0 = (logits[0] - max).exp();
    let e1 = (logits[1] - max).exp();
    let z = e0 + e1;
    Ok(ForwardCache {
        layers,
        pooled,
        probs: [e0 / z, e1 / z],
        len,
    })
}

/// Probability of the fake class for one sequence.
pub fn predict(params: &ModelParams, seq: ArrayView2<f64>) -> Result<f64> {
    Ok(forward_sample(params, seq)?.probs[1])
}

/// Probabilities of fake for a batch of (possibly different-length)
/// sequences.
pub fn forward_batch(params: &ModelParams, seqs: &[Array2<f64>]) -> Result<Vec<f64>> {
    seqs.iter().map(|s| predict(params, s.view())).collect()
}

/// Forward on a padded buffer: only the first `len` rows are real timesteps;
/// padding is excluded from attention and pooling.
pub fn forward_masked(params: &ModelParams, padded: ArrayView2<f64>, len: usize) -> Result<f64> {
    if len > padded.nrows() {
        return Err(Error::invalid(format!(
            "mask length {len} exceeds buffer rows {}",
            padded.nrows()
        )));
    }
    predict(params, padded.slice(s![..len, ..]))
}

/// Mean binary cross-entropy with log arguments clamped at 1e-12.
pub fn loss(probs_fake: &[f64], labels: &[u8]) -> Result<f64> {
    if probs_fake.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities vs {} labels",
            probs_fake.len(),
            labels.len()
        )));
    }
    if probs_fake.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let total: f64 = probs_fake
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p_correct = if y == 1 { p } else { 1.0 - p };
            -p_correct.max(PROB_CLAMP).ln()
        })
        .sum();
    Ok(total / probs_fake.len() as f64)
}

fn zero_grads(params: &ModelParams) -> Vec<Array2<f64>> {
    params.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect()
}

/// Accumulate gradients of the per-sample cross-entropy scaled by
/// `weight` (1/batch for a mean loss) into `grads`.
fn backward_sample(
    params: &ModelParams,
    seq: ArrayView2<f64>,
    cache: &ForwardCache,
    label: u8,
    weight: f64,
    grads: &mut [Array2<f64>],
) {
    let cfg = &params.config;
    let len = cache.len;
    let lenf = len as f64;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let n_tensors = params.tensors.len();

    // Softmax + cross-entropy: dlogits = p − onehot(y).
    let y = label as usize;
    let mut dlogits = Array1::from(vec![cache.probs[0], cache.probs[1]]);
    dlogits[y] -= 1.0;
    dlogits *= weight;

    // Head.
    for j in 0..2 {
        for i in 0..cfg.hidden_dim {
            grads[n_tensors - 2][[i, j]] += cache.pooled[i] * dlogits[j];
        }
        grads[n_tensors - 1][[0, j]] += dlogits[j];
    }
    let dpooled = params.head_w().dot(&dlogits);

    // Mean pooling spreads the gradient evenly over timesteps.
    let mut dx = Array2::from_shape_fn((len, cfg.hidden_dim), |(_, j)| dpooled[j] / lenf);

    for l in (0..cfg.n_layers).rev() {
        let lc = &cache.layers[l];
        let base = 2 + l * PER_LAYER;

        // Feed-forward block: x_out = x_mid + relu(ln2_out·W1 + b1)·W2 + b2.
        let d_ff_out = dx.clone();
        grads[base + FF_W2] += &lc.ff_act.t().dot(&d_ff_out);
        grads[base + FF_B2] += &d_ff_out
            .sum_axis(Axis(0))
            .insert_axis(Axis(0));
        let mut d_act = d_ff_out.dot(&params.layer(l, FF_W2).t());
        d_act.zip_mut_with(&lc.ff_pre, |g, &pre| {
            if pre <= 0.0 {
                *g = 0.0;
            }
        });
        grads[base + FF_W1] += &lc.ln2_out.t().dot(&d_act);
        grads[base + FF_B1] += &d_act.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_ln2_out = d_act.dot(&params.layer(l, FF_W1).t());
        grads[base + LN2_G] += &(&d_ln2_out * &lc.x_hat2)
            .sum_axis(Axis(0))
            .insert_axis(Axis(0));
        grads[base + LN2_B] += &d_ln2_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_xhat2 = &d_ln2_out * params.layer(l, LN2_G);
        let mut d_x_mid = dx; // residual path
        d_x_mid += &layer_norm_backward(&d_xhat2, &lc.x_hat2, &lc.inv_std2);

        // Attention block: x_mid = x_in + concat·Wo + bo.
        let d_attn_out = d_x_mid.clone();
        grads[base + WO] += &lc.concat.t().dot(&d_attn_out);
        grads[base + BO] += &d_attn_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_concat = d_attn_out.dot(&params.layer(l, WO).t());

        let mut dq = Array2::zeros((len, cfg.hidden_dim));
        let mut dk = Array2::zeros((len, cfg.hidden_dim));
        let mut dv = Array2::zeros((len, cfg.hidden_dim));
        for h in 0..cfg.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let a = &lc.attn[h];
            let d_head = d_concat.slice(cols);
            let vh = lc.v.slice(cols);
            let qh = lc.q.slice(cols);
            let kh = lc.k.slice(cols);
            dv.slice_mut(cols).assign(&a.t().dot(&d_head));
            let da = d_head.dot(&vh.t());
            // Softmax rows: dS = A ⊙ (dA − rowsum(dA ⊙ A)).
            let rowsum = (&da * a).sum_axis(Axis(1));
            let mut ds = da;
            for i in 0..len {
                for j in 0..len {
                    ds[[i, j]] = a[[i, j]] * (ds[[i, j]] - rowsum[i]);
                }
            }
            dq.slice_mut(cols).assign(&(ds.dot(&kh) * scale));
            dk.slice_mut(cols).assign(&(ds.t().dot(&qh) * scale));
        }

        grads[base + WQ] += &lc.ln1_out.t().dot(&dq);
        grads[base + BQ] += &dq.sum_axis(Axis(0)).insert_axis(Axis(0));
        grads[base + WK] += &lc.ln1_out.t().dot(&dk);
        grads[base + BK] += &dk.sum_axis(Axis(0)).insert_axis(Axis(0));
        grads[base + WV] += &lc.ln1_out.t().dot(&dv);
        grads[base + BV] += &dv.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_ln1_out = dq.dot(&params.layer(l, WQ).t())
            + dk.dot(&params.layer(l, WK).t())
            + dv.dot(&params.layer(l, WV).t());
        grads[base + LN1_G] += &(&d_ln1_out * &lc.x_hat1)
            .sum_axis(Axis(0))
            .insert_axis(Axis(0));
        grads[base + LN1_B] += &d_ln1_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_xhat1 = &d_ln1_out * params.layer(l, LN1_G);
        dx = d_x_mid; // residual path
        dx += &layer_norm_backward(&d_xhat1, &lc.x_hat1, &lc.inv_std1);
    }

    // Embedding (positional encoding is constant; the forward pass scales
    // the embedding output by sqrt(hidden)).
    let dx = dx * (params.config.hidden_dim as f64).sqrt();
    grads[EMBED_W] += &seq.t().dot(&dx);
    grads[EMBED_B] += &dx.sum_axis(Axis(0)).insert_axis(Axis(0));
}

/// Gradients of the mean cross-entropy over a batch, same tensor layout as
/// the parameters.
pub fn backward(
    params: &ModelParams,
    seqs: &[Array2<f64>],
    labels: &[u8],
) -> Result<Vec<Array2<f64>>> {
    if seqs.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} sequences vs {} labels",
            seqs.len(),
            labels.len()
        )));
    }
    if seqs.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut grads = zero_grads(params);
    let weight = 1.0 / seqs.len() as f64;
    for (seq, &label) in seqs.iter().zip(labels) {
        let cache = forward_sample(params, seq.view())?;
        backward_sample(params, seq.view(), &cache, label, weight, &mut grads);
    }
    Ok(grads)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lr: 1e-4,
            batch_size: 128,
            epochs: 30,
            plateau_patience: 3,
            plateau_factor: 0.5,
            split: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be positive"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::invalid("plateau_factor must lie in (0, 1)"));
        }
        if self.split.iter().any(|f| *f < 0.0)
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid("split fractions must be non-negative and sum to 1"));
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` whenever the monitored loss has
/// failed to improve for `patience` consecutive observations.
pub struct PlateauScheduler {
    pub lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> PlateauScheduler {
        PlateauScheduler {
            lr,
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr *= self.factor;
                self.bad_epochs = 0;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub train_auc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub val_auc: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters at the best validation loss (best training loss when no
    /// validation samples are given).
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ModelParams) -> Adam {
        Adam {
            m: zero_grads(params),
            v: zero_grads(params),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &[Array2<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for ((tensor, grad), (m, v)) in params
            .tensors
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            azip(tensor, grad, m, v, |p, g, m, v| {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
            });
        }
    }
}

fn azip(
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    mut f: impl FnMut(&mut f64, f64, &mut f64, &mut f64),
) {
    let g = g.as_slice().unwrap();
    let m = m.as_slice_mut().unwrap();
    let v = v.as_slice_mut().unwrap();
    for (i, p) in p.as_slice_mut().unwrap().iter_mut().enumerate() {
        f(p, g[i], &mut m[i], &mut v[i]);
    }
}

pub type Sample = (Array2<f64>, u8);

fn eval_split(params: &ModelParams, set: &[Sample]) -> Result<(f64, f64, Option<f64>)> {
    let probs: Vec<f64> = set
        .iter()
        .map(|(seq, _)| predict(params, seq.view()))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = set.iter().map(|(_, y)| *y).collect();
    let l = loss(&probs, &labels)?;
    let preds: Vec<u8> = probs.iter().map(|&p| u8::from(p > 0.5)).collect();
    let acc = accuracy(&preds, &labels)?;
    let auc = roc_auc(&probs, &labels).map(|r| r.auc).ok();
    Ok((l, acc, auc))
}

/// Single-threaded, fully seeded training loop: Adam over shuffled
/// mini-batches with a reduce-on-plateau schedule on the epoch training
/// loss; the returned parameters are the snapshot at the best validation
/// loss.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    tconfig: &TrainConfig,
    mconfig: &TransformerConfig,
) -> Result<TrainOutcome> {
    tconfig.validate()?;
    let n_pos = train_set.iter().filter(|(_, y)| *y == 1).count();
    if train_set.is_empty() || n_pos == 0 || n_pos == train_set.len() {
        return Err(Error::SingleClass);
    }

    let mut params = init_model(mconfig)?;
    let mut adam = Adam::new(&params);
    let mut scheduler =
        PlateauScheduler::new(tconfig.lr, tconfig.plateau_factor, tconfig.plateau_patience);
    let mut shuffle_rng = Rng::seed_from(tconfig.seed).fork();
    let mut history = Vec::with_capacity(tconfig.epochs);
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=tconfig.epochs {
        let lr = scheduler.lr;
        shuffle_rng.shuffle(&mut order);
        // Epoch training loss/metrics use the pre-update probabilities of
        // each mini-batch, the running values a framework would report.
        let mut epoch_probs = vec![0.0; train_set.len()];
        let mut epoch_labels = vec![0u8; train_set.len()];
        let mut loss_sum = 0.0;
        for chunk in order.chunks(tconfig.batch_size) {
            let mut grads = zero_grads(&params);
            let weight = 1.0 / chunk.len() as f64;
            let mut batch_probs = Vec::with_capacity(chunk.len());
            let mut batch_labels = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let (seq, label) = &train_set[idx];
                let cache = forward_sample(&params, seq.view())?;
                batch_probs.push(cache.probs[1]);
                batch_labels.push(*label);
                backward_sample(&params, seq.view(), &cache, *label, weight, &mut grads);
            }
            loss_sum += loss(&batch_probs, &batch_labels)? * chunk.len() as f64;
            for ((&idx, &p), &y) in chunk.iter().zip(&batch_probs).zip(&batch_labels) {
                epoch_probs[idx] = p;
                epoch_labels[idx] = y;
            }
            adam.step(&mut params, &grads, lr);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let preds: Vec<u8> = epoch_probs.iter().map(|&p| u8::from(p > 0.5)).collect();
        let train_acc = accuracy(&preds, &epoch_labels)?;
        let train_auc = roc_auc(&epoch_probs, &epoch_labels)?.auc;

        let (val_loss, val_acc, val_auc) = if val_set.is_empty() {
            (None, None, None)
        } else {
            let (l, a, auc) = eval_split(&params, val_set)?;
            (Some(l), Some(a), auc)
        };

        let monitored_for_checkpoint = val_loss.unwrap_or(train_loss);
        if monitored_for_checkpoint < best_loss {
            best_loss = monitored_for_checkpoint;
            best = params.clone();
        }
        scheduler.observe(train_loss);

        history.push(EpochStats {
            epoch,
            lr,
            train_loss,
            train_acc,
            train_auc,
            val_loss,
            val_acc,
            val_auc,
        });
    }

    Ok(TrainOutcome {
        params: best,
        history,
    })
}

#[derive(Serialize, Deserialize)]
struct TensorFile {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: u64,
    config: TransformerConfig,
    tensors: BTreeMap<String, TensorFile>,
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let tensors = tensor_specs(&params.config)
        .into_iter()
        .zip(&params.tensors)
        .map(|((name, _, _), t)| {
            (
                name,
                TensorFile {
                    shape: [t.nrows(), t.ncols()],
                    data: t.iter().cloned().collect(),
                },
            )
        })
        .collect();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT,
        config: params.config.clone(),
        tensors,
    };
    let mut text = serde_json::to_string(&file)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: Box::new(Error::Io(e)),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: Box::new(Error::Io(e)),
    })?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Version(file.format));
    }
    file.config.validate()?;
    let specs = tensor_specs(&file.config);
    if file.tensors.len() != specs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} tensors in file, expected {}",
            file.tensors.len(),
            specs.len()
        )));
    }
    let mut tensors = Vec::with_capacity(specs.len());
    for (name, (r, c), _) in specs {
        let t = file
            .tensors
            .get(&name)
            .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {name}")))?;
        if t.shape != [r, c] || t.data.len() != r * c {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name}: shape {:?} with {} values, expected {r}x{c}",
                t.shape,
                t.data.len()
            )));
        }
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("tensor {name} has non-finite values")));
        }
        tensors.push(Array2::from_shape_vec((r, c), t.data.clone()).unwrap());
    }
    Ok(ModelParams {
        config: file.config,
        tensors,
    })
}
