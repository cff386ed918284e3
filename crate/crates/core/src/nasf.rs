//! Affinity-weight fusion network.
//!
//! Twin shared-weight MLP towers (one per scale) embed a pair's two
//! segment stacks; tower outputs concatenate, the elementwise absolute
//! difference feeds a shared linear head, and a softmax yields one simplex
//! weight vector per pair. The batch mean of those vectors weighs the
//! per-scale normalized cosines into a scalar affinity prediction, trained
//! against ground-truth pair labels with mean squared error. Everything —
//! forward, analytic backprop (including the batch-mean coupling), Adam —
//! is implemented directly on flat parameter vectors.

use crate::affinity::{split_into_blocks, AffinityTensor, WeightVector};
use crate::embedding::EmbeddingMatrix;
use crate::segmenter::MultiScaleSegmentSet;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Network shape: `scales` towers of input `input_dim`, two ReLU layers of
/// width `hidden`, and a linear head mapping the concatenated absolute
/// difference (scales·hidden) to `scales` logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NasfDims {
    pub scales: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub head_bias: bool,
}

impl NasfDims {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.input_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig(format!(
                "degenerate network shape {self:?}"
            )));
        }
        Ok(())
    }

    /// Parameters of one tower: two weight matrices and two bias vectors.
    fn tower_len(&self) -> usize {
        let (d, h) = (self.input_dim, self.hidden);
        h * d + h + h * h + h
    }

    fn merged_len(&self) -> usize {
        self.scales * self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.scales * self.tower_len()
            + self.scales * self.merged_len()
            + if self.head_bias { self.scales } else { 0 }
    }

    // Flat-layout offsets. Per scale: W1 (h×d), b1 (h), W2 (h×h), b2 (h);
    // then the head matrix (S × S·h) and optional head bias (S).
    fn w1(&self, s: usize) -> usize {
        s * self.tower_len()
    }
    fn b1(&self, s: usize) -> usize {
        self.w1(s) + self.hidden * self.input_dim
    }
    fn w2(&self, s: usize) -> usize {
        self.b1(s) + self.hidden
    }
    fn b2(&self, s: usize) -> usize {
        self.w2(s) + self.hidden * self.hidden
    }
    fn head_w(&self) -> usize {
        self.scales * self.tower_len()
    }
    fn head_b(&self) -> usize {
        self.head_w() + self.scales * self.merged_len()
    }
}

/// All network parameters as one flat vector (row-major matrices).
#[derive(Debug, Clone, PartialEq)]
pub struct NasfParams {
    pub dims: NasfDims,
    pub theta: Vec<f64>,
}

impl NasfParams {
    /// He-style initialization for the ReLU towers; the head starts at
    /// zero so an untrained network emits exactly equal weights.
    pub fn init(dims: NasfDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut theta = vec![0.0f64; dims.param_count()];
        for s in 0..dims.scales {
            let std1 = (2.0 / dims.input_dim as f64).sqrt();
            for i in 0..dims.hidden * dims.input_dim {
                theta[dims.w1(s) + i] = std1 * gauss(&mut rng);
            }
            let std2 = (2.0 / dims.hidden as f64).sqrt();
            for i in 0..dims.hidden * dims.hidden {
                theta[dims.w2(s) + i] = std2 * gauss(&mut rng);
            }
        }
        Ok(Self { dims, theta })
    }

    pub fn all_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }
}

fn gauss(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A batch of N labeled pairs: per pair, per-scale embeddings for both
/// segment stacks, the per-scale normalized cosine triple, and the label.
#[derive(Debug, Clone, Default)]
pub struct PairBatch {
    pub scales: usize,
    pub dim: usize,
    /// N × scales × dim, pair-major then scale-major.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// N × scales normalized cosines.
    pub c: Vec<f64>,
    /// N ground-truth labels.
    pub d: Vec<f64>,
}

impl PairBatch {
    pub fn new(scales: usize, dim: usize) -> Self {
        Self {
            scales,
            dim,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Append one pair; `a`/`b` hold `scales` embeddings of `dim` each.
    pub fn push_pair(&mut self, a: &[f64], b: &[f64], c: &[f64], d: f64) -> Result<()> {
        let want = self.scales * self.dim;
        if a.len() != want || b.len() != want || c.len() != self.scales {
            return Err(Error::DimMismatch(format!(
                "pair fields {}/{}/{} for scales {} dim {}",
                a.len(),
                b.len(),
                c.len(),
                self.scales,
                self.dim
            )));
        }
        for &x in c {
            if !(-1e-9..=1.0 + 1e-9).contains(&x) || !x.is_finite() {
                return Err(Error::InvalidInput(format!("cosine {x} outside [0, 1]")));
            }
        }
        if !(-1e-9..=1.0 + 1e-9).contains(&d) || !d.is_finite() {
            return Err(Error::InvalidInput(format!("label {d} outside [0, 1]")));
        }
        self.a.extend_from_slice(a);
        self.b.extend_from_slice(b);
        self.c.extend_from_slice(c);
        self.d.push(d);
        Ok(())
    }

    fn pair_a(&self, n: usize, s: usize) -> &[f64] {
        let off = (n * self.scales + s) * self.dim;
        &self.a[off..off + self.dim]
    }

    fn pair_b(&self, n: usize, s: usize) -> &[f64] {
        let off = (n * self.scales + s) * self.dim;
        &self.b[off..off + self.dim]
    }

    /// New batch containing the selected pairs, in the given order.
    pub fn subset(&self, idx: &[usize]) -> PairBatch {
        let mut out = PairBatch::new(self.scales, self.dim);
        let block = self.scales * self.dim;
        for &n in idx {
            out.a.extend_from_slice(&self.a[n * block..(n + 1) * block]);
            out.b.extend_from_slice(&self.b[n * block..(n + 1) * block]);
            out.c
                .extend_from_slice(&self.c[n * self.scales..(n + 1) * self.scales]);
            out.d.push(self.d[n]);
        }
        out
    }
}

/// One tower + merge evaluation with cached pre-activations (the ReLU
/// masks and post-activations derive from them).
struct StreamCache {
    pre1: Vec<f64>,
    pre2: Vec<f64>,
}

fn mat_vec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        out[i] = acc;
    }
}

/// Run every scale's tower on one stream; returns merged output + cache.
fn run_towers<'a, F>(params: &NasfParams, xs: F) -> (Vec<f64>, StreamCache)
where
    F: Fn(usize) -> &'a [f64],
{
    let d = &params.dims;
    let (h, s_count) = (d.hidden, d.scales);
    let mut merged = vec![0.0f64; d.merged_len()];
    let mut cache = StreamCache {
        pre1: vec![0.0; s_count * h],
        pre2: vec![0.0; s_count * h],
    };
    let mut h1 = vec![0.0f64; h];
    let mut pre = vec![0.0f64; h];
    for s in 0..s_count {
        let x = xs(s);
        mat_vec(&params.theta[d.w1(s)..], h, d.input_dim, x, &mut pre);
        for i in 0..h {
            let z = pre[i] + params.theta[d.b1(s) + i];
            cache.pre1[s * h + i] = z;
            h1[i] = if z > 0.0 { z } else { 0.0 };
        }
        mat_vec(&params.theta[d.w2(s)..], h, h, &h1, &mut pre);
        for i in 0..h {
            let z = pre[i] + params.theta[d.b2(s) + i];
            cache.pre2[s * h + i] = z;
            merged[s * h + i] = if z > 0.0 { z } else { 0.0 };
        }
    }
    (merged, cache)
}

/// Stable softmax.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct ForwardCache {
    /// Per pair: merged A, merged B, per-pair softmax weights.
    merged_a: Vec<Vec<f64>>,
    merged_b: Vec<Vec<f64>>,
    cache_a: Vec<StreamCache>,
    cache_b: Vec<StreamCache>,
    w_pair: Vec<Vec<f64>>,
    w: Vec<f64>,
    y: Vec<f64>,
}

fn forward_full(params: &NasfParams, batch: &PairBatch) -> Result<ForwardCache> {
    let d = &params.dims;
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty pair batch".into()));
    }
    if batch.scales != d.scales || batch.dim != d.input_dim {
        return Err(Error::DimMismatch(format!(
            "batch scales {} dim {} vs network scales {} dim {}",
            batch.scales, batch.dim, d.scales, d.input_dim
        )));
    }
    let n = batch.len();
    let mut fc = ForwardCache {
        merged_a: Vec::with_capacity(n),
        merged_b: Vec::with_capacity(n),
        cache_a: Vec::with_capacity(n),
        cache_b: Vec::with_capacity(n),
        w_pair: Vec::with_capacity(n),
        w: vec![0.0; d.scales],
        y: vec![0.0; n],
    };
    let head_w = &params.theta[d.head_w()..d.head_w() + d.scales * d.merged_len()];
    for i in 0..n {
        let (ma, ca) = run_towers(params, &|s| batch.pair_a(i, s));
        let (mb, cb) = run_towers(params, &|s| batch.pair_b(i, s));
        let z: Vec<f64> = ma.iter().zip(&mb).map(|(a, b)| (a - b).abs()).collect();
        let mut logits = vec![0.0f64; d.scales];
        mat_vec(head_w, d.scales, d.merged_len(), &z, &mut logits);
        if d.head_bias {
            for (l, b) in logits.iter_mut().zip(&params.theta[d.head_b()..]) {
                *l += b;
            }
        }
        let w_i = softmax(&logits);
        for (acc, v) in fc.w.iter_mut().zip(&w_i) {
            *acc += v / n as f64;
        }
        fc.merged_a.push(ma);
        fc.merged_b.push(mb);
        fc.cache_a.push(ca);
        fc.cache_b.push(cb);
        fc.w_pair.push(w_i);
    }
    for i in 0..n {
        let c = &batch.c[i * d.scales..(i + 1) * d.scales];
        fc.y[i] = fc.w.iter().zip(c).map(|(w, c)| w * c).sum();
    }
    Ok(fc)
}

/// Batch-mean weight vector and per-pair affinity predictions.
pub fn forward(params: &NasfParams, batch: &PairBatch) -> Result<(WeightVector, Vec<f64>)> {
    let fc = forward_full(params, batch)?;
    Ok((WeightVector::new(fc.w)?, fc.y))
}

/// Smallest pre-activation / merged-difference magnitude over the batch.
/// The analytic gradient uses subgradients at the ReLU and |·| kinks, so
/// finite-difference comparisons are only trustworthy when this margin
/// comfortably exceeds the difference step.
pub fn kink_margin(params: &NasfParams, batch: &PairBatch) -> f64 {
    let mut margin = f64::INFINITY;
    for i in 0..batch.len() {
        let (ma, ca) = run_towers(params, &|s| batch.pair_a(i, s));
        let (mb, cb) = run_towers(params, &|s| batch.pair_b(i, s));
        for cache in [&ca, &cb] {
            for z in cache.pre1.iter().chain(&cache.pre2) {
                margin = margin.min(z.abs());
            }
        }
        for (a, b) in ma.iter().zip(&mb) {
            let diff = (a - b).abs();
            if diff > 0.0 {
                margin = margin.min(diff);
            }
        }
    }
    margin
}

/// Mean squared error between predictions and labels.
pub fn loss(y: &[f64], d: &[f64]) -> Result<f64> {
    if y.len() != d.len() || y.is_empty() {
        return Err(Error::DimMismatch(format!(
            "prediction/label lengths {} vs {}",
            y.len(),
            d.len()
        )));
    }
    let n = y.len() as f64;
    Ok(y.iter()
        .zip(d)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Gradient of the batch MSE with respect to every parameter, including
/// the coupling where each pair's softmax feeds all predictions through
/// the batch mean.
pub fn backward(params: &NasfParams, batch: &PairBatch) -> Result<Vec<f64>> {
    let fc = forward_full(params, batch)?;
    let d = &params.dims;
    let n = batch.len();
    let nf = n as f64;
    let (h, s_count) = (d.hidden, d.scales);
    let mut grad = vec![0.0f64; d.param_count()];

    // dL/dw (the batch-mean weight vector).
    let mut g_w = vec![0.0f64; s_count];
    for i in 0..n {
        let r = 2.0 * (fc.y[i] - batch.d[i]) / nf;
        for (gs, cs) in g_w.iter_mut().zip(&batch.c[i * s_count..(i + 1) * s_count]) {
            *gs += r * cs;
        }
    }
    // Each pair's softmax contributes 1/N of the mean.
    let gh: Vec<f64> = g_w.iter().map(|g| g / nf).collect();

    let head_w = d.head_w();
    let merged = d.merged_len();
    let mut d_z = vec![0.0f64; merged];
    let mut d_m = vec![0.0f64; merged];
    for i in 0..n {
        // Softmax Jacobian: dL/dlogit_j = w_j (gh_j − ⟨w, gh⟩).
        let w_i = &fc.w_pair[i];
        let dot: f64 = w_i.iter().zip(&gh).map(|(a, b)| a * b).sum();
        let d_logits: Vec<f64> = w_i.iter().zip(&gh).map(|(w, g)| w * (g - dot)).collect();

        let ma = &fc.merged_a[i];
        let mb = &fc.merged_b[i];
        // Head gradients and dL/dz.
        d_z.iter_mut().for_each(|v| *v = 0.0);
        for (j, &dl) in d_logits.iter().enumerate() {
            let row = head_w + j * merged;
            for k in 0..merged {
                let z_k = (ma[k] - mb[k]).abs();
                grad[row + k] += dl * z_k;
                d_z[k] += params.theta[row + k] * dl;
            }
            if d.head_bias {
                grad[d.head_b() + j] += dl;
            }
        }
        // Through the absolute difference into each stream, then the towers.
        for stream in 0..2 {
            let sign = if stream == 0 { 1.0 } else { -1.0 };
            for k in 0..merged {
                let diff = ma[k] - mb[k];
                let s_k = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                d_m[k] = d_z[k] * s_k * sign;
            }
            let cache = if stream == 0 { &fc.cache_a[i] } else { &fc.cache_b[i] };
            for s in 0..s_count {
                let x = if stream == 0 {
                    batch.pair_a(i, s)
                } else {
                    batch.pair_b(i, s)
                };
                backprop_tower(params, s, x, cache, &d_m[s * h..(s + 1) * h], &mut grad);
            }
        }
    }
    Ok(grad)
}

/// Backpropagate dL/d(tower output) through one scale's two ReLU layers.
fn backprop_tower(
    params: &NasfParams,
    s: usize,
    x: &[f64],
    cache: &StreamCache,
    d_out: &[f64],
    grad: &mut [f64],
) {
    let d = &params.dims;
    let h = d.hidden;
    let pre1 = &cache.pre1[s * h..(s + 1) * h];
    let pre2 = &cache.pre2[s * h..(s + 1) * h];

    // Layer 2.
    let mut d_h1 = vec![0.0f64; h];
    for i in 0..h {
        if pre2[i] <= 0.0 {
            continue;
        }
        let g = d_out[i];
        if g == 0.0 {
            continue;
        }
        let w_row = d.w2(s) + i * h;
        for j in 0..h {
            let h1j = if pre1[j] > 0.0 { pre1[j] } else { 0.0 };
            grad[w_row + j] += g * h1j;
            d_h1[j] += params.theta[w_row + j] * g;
        }
        grad[d.b2(s) + i] += g;
    }
    // Layer 1.
    for i in 0..h {
        if pre1[i] <= 0.0 {
            continue;
        }
        let g = d_h1[i];
        if g == 0.0 {
            continue;
        }
        let w_row = d.w1(s) + i * d.input_dim;
        for (j, &xj) in x.iter().enumerate() {
            grad[w_row + j] += g * xj;
        }
        grad[d.b1(s) + i] += g;
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            theta[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Mean MSE over a session evaluated in `batch_size` chunks.
fn eval_mse(params: &NasfParams, session: &PairBatch, batch_size: usize) -> Result<f64> {
    let n = session.len();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let chunk = session.subset(&idx);
        let (_, y) = forward(params, &chunk)?;
        total += loss(&y, &chunk.d)? * chunk.len() as f64;
        count += chunk.len();
        start = end;
    }
    Ok(total / count as f64)
}

/// Train on per-session pair pools; returns the parameters that achieved
/// the best validation MSE plus the per-epoch log.
///
/// One minibatch is drawn from a single session's pool, so the batch-mean
/// weight vector always mixes pairs of the same session. With two or more
/// sessions, one tenth of them (at least one) is held out for validation;
/// a single session holds out a tenth of its pairs instead.
pub fn train(
    init: NasfParams,
    sessions: &[PairBatch],
    cfg: &TrainConfig,
) -> Result<(NasfParams, Vec<EpochStats>)> {
    cfg.validate()?;
    if sessions.is_empty() || sessions.iter().all(|s| s.is_empty()) {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    for s in sessions {
        if s.scales != init.dims.scales || s.dim != init.dims.input_dim {
            return Err(Error::DimMismatch(format!(
                "session batch scales {} dim {} vs network scales {} dim {}",
                s.scales, s.dim, init.dims.scales, init.dims.input_dim
            )));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    // Validation split.
    let (train_pool, val_pool): (Vec<PairBatch>, Vec<PairBatch>) = if sessions.len() >= 2 {
        let mut order: Vec<usize> = (0..sessions.len()).collect();
        order.shuffle(&mut rng);
        let n_val = (sessions.len() / 10).max(1);
        let val: Vec<PairBatch> = order[..n_val].iter().map(|&i| sessions[i].clone()).collect();
        let tr: Vec<PairBatch> = order[n_val..].iter().map(|&i| sessions[i].clone()).collect();
        (tr, val)
    } else {
        let s = &sessions[0];
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.shuffle(&mut rng);
        let n_val = (s.len() / 10).max(1).min(s.len().saturating_sub(1)).max(1);
        if s.len() < 2 {
            return Err(Error::InvalidInput(
                "single-session training needs ≥ 2 pairs".into(),
            ));
        }
        (
            vec![s.subset(&idx[n_val..])],
            vec![s.subset(&idx[..n_val])],
        )
    };

    let mut params = init;
    let mut adam = AdamState::new(params.theta.len(), cfg.learning_rate);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut session_order: Vec<usize> = (0..train_pool.len()).collect();
        session_order.shuffle(&mut rng);
        let mut train_acc = 0.0;
        let mut train_n = 0usize;
        for &si in &session_order {
            let session = &train_pool[si];
            if session.is_empty() {
                continue;
            }
            let mut idx: Vec<usize> = (0..session.len()).collect();
            idx.shuffle(&mut rng);
            for chunk in idx.chunks(cfg.batch_size) {
                let batch = session.subset(chunk);
                let fc = forward_full(&params, &batch)?;
                let batch_loss = loss(&fc.y, &batch.d)?;
                if !batch_loss.is_finite() {
                    return Err(Error::TrainingDiverged(format!(
                        "loss {batch_loss} at epoch {epoch}"
                    )));
                }
                train_acc += batch_loss * batch.len() as f64;
                train_n += batch.len();
                let grad = backward(&params, &batch)?;
                adam.step(&mut params.theta, &grad);
                if !params.all_finite() {
                    return Err(Error::TrainingDiverged(format!(
                        "non-finite parameter at epoch {epoch}"
                    )));
                }
            }
        }
        let mut val_acc = 0.0;
        let mut val_n = 0usize;
        for v in &val_pool {
            if v.is_empty() {
                continue;
            }
            val_acc += eval_mse(&params, v, cfg.batch_size)? * v.len() as f64;
            val_n += v.len();
        }
        let val_mse = val_acc / val_n.max(1) as f64;
        let train_mse = train_acc / train_n.max(1) as f64;
        log.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
        });
        if best.as_ref().map_or(true, |(b, _)| val_mse < *b) {
            best = Some((val_mse, params.theta.clone()));
        }
    }

    let (_, theta) = best.expect("at least one epoch ran");
    Ok((
        NasfParams {
            dims: params.dims,
            theta,
        },
        log,
    ))
}

/// Weight-inference setups: fixed equal weights, one session-wide vector,
/// or six block-resolved vectors (three intra-block, three inter-block).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    EqualWeight,
    NasfS,
    NasfD,
}

impl std::str::FromStr for InferenceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" | "equal-weight" => Ok(Self::EqualWeight),
            "nasf-s" => Ok(Self::NasfS),
            "nasf-d" => Ok(Self::NasfD),
            other => Err(Error::InvalidConfig(format!(
                "unknown inference mode {other:?} (expected equal, nasf-s, nasf-d)"
            ))),
        }
    }
}

/// Tower outputs for every base segment, computed once per session so
/// weight inference over up to C(L,2) pairs costs one head + softmax per
/// pair instead of four tower evaluations.
fn merged_per_base(
    params: &NasfParams,
    set: &MultiScaleSegmentSet,
    embeddings: &[EmbeddingMatrix],
) -> Result<Vec<Vec<f64>>> {
    let d = &params.dims;
    if embeddings.len() != d.scales || set.scale_count() != d.scales {
        return Err(Error::DimMismatch(format!(
            "{} embedding scales vs network {}",
            embeddings.len(),
            d.scales
        )));
    }
    for m in embeddings {
        if m.dim() != d.input_dim {
            return Err(Error::DimMismatch(format!(
                "embedding dim {} vs network input {}",
                m.dim(),
                d.input_dim
            )));
        }
    }
    let l = set.num_base();
    let mut out = Vec::with_capacity(l);
    for b in 0..l {
        let rows: Vec<&[f64]> = (0..d.scales)
            .map(|s| embeddings[s].row(set.mapped_index(b, s)))
            .collect();
        let (m, _) = run_towers(params, &|s| rows[s]);
        out.push(m);
    }
    Ok(out)
}

/// Mean softmax weight over the given base-index pairs.
fn mean_weight_over_pairs(
    params: &NasfParams,
    merged: &[Vec<f64>],
    pairs: &[(usize, usize)],
) -> Result<WeightVector> {
    let d = &params.dims;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no pairs to weigh".into()));
    }
    let head_w = &params.theta[d.head_w()..d.head_w() + d.scales * d.merged_len()];
    let mut acc = vec![0.0f64; d.scales];
    let mut logits = vec![0.0f64; d.scales];
    let mut z = vec![0.0f64; d.merged_len()];
    for &(i, j) in pairs {
        for k in 0..d.merged_len() {
            z[k] = (merged[i][k] - merged[j][k]).abs();
        }
        mat_vec(head_w, d.scales, d.merged_len(), &z, &mut logits);
        if d.head_bias {
            for (l, b) in logits.iter_mut().zip(&params.theta[d.head_b()..]) {
                *l += b;
            }
        }
        for (a, v) in acc.iter_mut().zip(softmax(&logits)) {
            *a += v / pairs.len() as f64;
        }
    }
    WeightVector::new(acc)
}

/// Sample up to `n` distinct cross pairs (one index from each side).
fn sample_cross_pairs(
    left: &[usize],
    right: &[usize],
    n: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<(usize, usize)> {
    let total = left.len() * right.len();
    if n >= total {
        let mut all = Vec::with_capacity(total);
        for &i in left {
            for &j in right {
                all.push((i, j));
            }
        }
        return all;
    }
    // Floyd's algorithm over the flattened cross-product index space.
    let mut chosen: HashSet<usize> = HashSet::with_capacity(n);
    for t in (total - n)..total {
        let r = rng.random_range(0..=t);
        let pick = if chosen.contains(&r) { t } else { r };
        chosen.insert(pick);
    }
    let mut flat: Vec<usize> = chosen.into_iter().collect();
    flat.sort_unstable();
    flat.into_iter()
        .map(|f| (left[f / right.len()], right[f % right.len()]))
        .collect()
}

/// Estimate fusion weights for one session.
///
/// `EqualWeight` needs no parameters or network evaluation. `NasfS`
/// samples up to `n_pairs` base-segment pairs session-wide and returns a
/// single vector. `NasfD` splits the base timeline into three contiguous
/// blocks and returns six vectors ordered: intra 0, 1, 2, then inter
/// (0,1), (0,2), (1,2) — matching the block-weight layout of the
/// block-resolved fusion.
pub fn infer_weights(
    params: Option<&NasfParams>,
    set: &MultiScaleSegmentSet,
    embeddings: &[EmbeddingMatrix],
    mode: InferenceMode,
    n_pairs: usize,
    seed: u64,
) -> Result<Vec<WeightVector>> {
    let scales = set.scale_count();
    let l = set.num_base();
    if mode == InferenceMode::EqualWeight {
        return Ok(vec![WeightVector::equal(scales)]);
    }
    let params = params.ok_or_else(|| {
        Error::InvalidConfig("this inference mode requires a trained model".into())
    })?;
    if l < 2 {
        return Err(Error::InvalidInput(format!(
            "weight inference needs ≥ 2 base segments, got {l}"
        )));
    }
    if n_pairs == 0 {
        return Err(Error::InvalidConfig("n_pairs must be ≥ 1".into()));
    }
    let merged = merged_per_base(params, set, embeddings)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    match mode {
        InferenceMode::EqualWeight => unreachable!(),
        InferenceMode::NasfS => {
            let pairs = crate::labels::sample_pairs(l, n_pairs, rng.random())?;
            Ok(vec![mean_weight_over_pairs(params, &merged, &pairs)?])
        }
        InferenceMode::NasfD => {
            if l < 6 {
                return Err(Error::InvalidInput(format!(
                    "block-resolved inference needs ≥ 6 base segments, got {l}"
                )));
            }
            let blocks = split_into_blocks(l, 3);
            let mut out = Vec::with_capacity(6);
            for &(start, end) in &blocks {
                let local = crate::labels::sample_pairs(end - start, n_pairs, rng.random())?;
                let global: Vec<(usize, usize)> =
                    local.into_iter().map(|(i, j)| (start + i, start + j)).collect();
                out.push(mean_weight_over_pairs(params, &merged, &global)?);
            }
            for bi in 0..3 {
                for bj in bi + 1..3 {
                    let left: Vec<usize> = (blocks[bi].0..blocks[bi].1).collect();
                    let right: Vec<usize> = (blocks[bj].0..blocks[bj].1).collect();
                    let pairs = sample_cross_pairs(&left, &right, n_pairs, &mut rng);
                    out.push(mean_weight_over_pairs(params, &merged, &pairs)?);
                }
            }
            Ok(out)
        }
    }
}

/// Build the labeled pair batch the trainer consumes for one session:
/// sampled base pairs with mapped per-scale embeddings, normalized cosine
/// triples, and ground-truth labels.
pub fn build_pair_batch(
    set: &MultiScaleSegmentSet,
    embeddings: &[EmbeddingMatrix],
    tensor: &AffinityTensor,
    labels: &[crate::labels::PairLabel],
) -> Result<PairBatch> {
    let scales = set.scale_count();
    if embeddings.len() != scales {
        return Err(Error::DimMismatch(format!(
            "{} embedding scales vs segmentation {}",
            embeddings.len(),
            scales
        )));
    }
    let dim = embeddings[0].dim();
    let mut batch = PairBatch::new(scales, dim);
    let mut a = vec![0.0f64; scales * dim];
    let mut b = vec![0.0f64; scales * dim];
    for pl in labels {
        for s in 0..scales {
            let ra = embeddings[s].row(set.mapped_index(pl.i, s));
            let rb = embeddings[s].row(set.mapped_index(pl.j, s));
            a[s * dim..(s + 1) * dim].copy_from_slice(ra);
            b[s * dim..(s + 1) * dim].copy_from_slice(rb);
        }
        let c = tensor.pair_values(pl.i, pl.j);
        batch.push_pair(&a, &b, &c, pl.d)?;
    }
    Ok(batch)
}

const CHECKPOINT_MAGIC: &str = "nasf-checkpoint v1";

/// Write a text checkpoint: shape, training seed, then one parameter per
/// line in full-precision scientific notation.
pub fn save_checkpoint(params: &NasfParams, seed: u64, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint_to(params, seed, &mut file)
}

pub fn write_checkpoint_to<W: Write>(params: &NasfParams, seed: u64, w: &mut W) -> Result<()> {
    let d = &params.dims;
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    writeln!(w, "scales {}", d.scales)?;
    writeln!(w, "input_dim {}", d.input_dim)?;
    writeln!(w, "hidden {}", d.hidden)?;
    writeln!(w, "head_bias {}", d.head_bias)?;
    writeln!(w, "seed {seed}")?;
    writeln!(w, "params {}", params.theta.len())?;
    for p in &params.theta {
        writeln!(w, "{p:.17e}")?;
    }
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(NasfParams, u64)> {
    let file = std::fs::File::open(path)?;
    read_checkpoint_from(BufReader::new(file))
}

pub fn read_checkpoint_from<R: BufRead>(reader: R) -> Result<(NasfParams, u64)> {
    let mut lines = reader.lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Checkpoint(format!("missing {what}")))
    };
    let magic = next("magic line")?;
    if magic.trim() != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut field = |name: &str| -> Result<String> {
        let line = next(name)?;
        let mut it = line.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(k), Some(v), None) if k == name => Ok(v.to_string()),
            _ => Err(Error::Checkpoint(format!(
                "expected \"{name} <value>\", got {line:?}"
            ))),
        }
    };
    let parse_usize = |v: String, name: &str| -> Result<usize> {
        v.parse()
            .map_err(|_| Error::Checkpoint(format!("bad {name} {v:?}")))
    };
    let scales = parse_usize(field("scales")?, "scales")?;
    let input_dim = parse_usize(field("input_dim")?, "input_dim")?;
    let hidden = parse_usize(field("hidden")?, "hidden")?;
    let head_bias = match field("head_bias")?.as_str() {
        "true" => true,
        "false" => false,
        other => return Err(Error::Checkpoint(format!("bad head_bias {other:?}"))),
    };
    let seed: u64 = field("seed")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad seed".into()))?;
    let count = parse_usize(field("params")?, "params")?;
    let dims = NasfDims {
        scales,
        input_dim,
        hidden,
        head_bias,
    };
    dims.validate()
        .map_err(|e| Error::Checkpoint(format!("invalid shape: {e}")))?;
    if count != dims.param_count() {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match shape (expected {})",
            dims.param_count()
        )));
    }
    let mut theta = Vec::with_capacity(count);
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad parameter line {t:?}")))?;
        if !v.is_finite() {
            return Err(Error::Checkpoint(format!("non-finite parameter {v}")));
        }
        theta.push(v);
    }
    if theta.len() != count {
        return Err(Error::Checkpoint(format!(
            "{} parameter lines for declared {count}",
            theta.len()
        )));
    }
    Ok((NasfParams { dims, theta }, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dims() -> NasfDims {
        NasfDims {
            scales: 3,
            input_dim: 3,
            hidden: 4,
            head_bias: true,
        }
    }

    fn random_batch(dims: &NasfDims, n: usize, rng: &mut ChaCha20Rng) -> PairBatch {
        let mut batch = PairBatch::new(dims.scales, dims.input_dim);
        let block = dims.scales * dims.input_dim;
        for _ in 0..n {
            let a: Vec<f64> = (0..block).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..block).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..dims.scales).map(|_| rng.random::<f64>()).collect();
            let d: f64 = rng.random();
            batch.push_pair(&a, &b, &c, d).unwrap();
        }
        batch
    }

    #[test]
    fn test_identical_streams_give_bias_softmax() {
        let dims = small_dims();
        let params = NasfParams::init(dims, 1).unwrap();
        let mut batch = PairBatch::new(dims.scales, dims.input_dim);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let block = dims.scales * dims.input_dim;
        for _ in 0..4 {
            let a: Vec<f64> = (0..block).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..dims.scales).map(|_| rng.random()).collect();
            batch.push_pair(&a, &a, &c, 0.5).unwrap();
        }
        let (w, y) = forward(&params, &batch).unwrap();
        // Zero difference → softmax of the head bias alone; bias is zero
        // at init → exactly uniform weights.
        for &ws in w.as_slice() {
            assert!((ws - 1.0 / 3.0).abs() < 1e-12);
        }
        for (i, &yi) in y.iter().enumerate() {
            let c = &batch.c[i * 3..(i + 1) * 3];
            let want = (c[0] + c[1] + c[2]) / 3.0;
            assert!((yi - want).abs() < 1e-12);
        }
    }

    #[test]
    fn test_weights_on_simplex_for_random_configs() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for trial in 0..10 {
            let dims = NasfDims {
                scales: rng.random_range(2..4),
                input_dim: rng.random_range(2..5),
                hidden: rng.random_range(2..6),
                head_bias: trial % 2 == 0,
            };
            let params = NasfParams::init(dims, trial).unwrap();
            let batch = random_batch(&dims, rng.random_range(1..6), &mut rng);
            let (w, _) = forward(&params, &batch).unwrap();
            let sum: f64 = w.as_slice().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(w.as_slice().iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn test_two_pair_hand_average() {
        // Head chosen so logits equal the first merged-diff coordinates;
        // verify w is the hand-computed mean softmax and y the dot product.
        let dims = NasfDims {
            scales: 2,
            input_dim: 2,
            hidden: 2,
            head_bias: false,
        };
        let params = NasfParams::init(dims, 5).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let batch = random_batch(&dims, 2, &mut rng);

        // Hand-compute per-pair softmax from the network's own merged
        // outputs (towers are exercised by the gradient tests; here the
        // head averaging of exactly two pairs is the target).
        let fc = forward_full(&params, &batch).unwrap();
        let mut hand_w = vec![0.0f64; 2];
        for i in 0..2 {
            let z: Vec<f64> = fc.merged_a[i]
                .iter()
                .zip(&fc.merged_b[i])
                .map(|(a, b)| (a - b).abs())
                .collect();
            let hw = dims.head_w();
            let logit0: f64 = (0..dims.merged_len())
                .map(|k| params.theta[hw + k] * z[k])
                .sum();
            let logit1: f64 = (0..dims.merged_len())
                .map(|k| params.theta[hw + dims.merged_len() + k] * z[k])
                .sum();
            let m = logit0.max(logit1);
            let e0 = (logit0 - m).exp();
            let e1 = (logit1 - m).exp();
            hand_w[0] += e0 / (e0 + e1) / 2.0;
            hand_w[1] += e1 / (e0 + e1) / 2.0;
        }
        let (w, y) = forward(&params, &batch).unwrap();
        assert!((w.as_slice()[0] - hand_w[0]).abs() < 1e-12);
        assert!((w.as_slice()[1] - hand_w[1]).abs() < 1e-12);
        for i in 0..2 {
            let c = &batch.c[i * 2..(i + 1) * 2];
            let want = hand_w[0] * c[0] + hand_w[1] * c[1];
            assert!((y[i] - want).abs() < 1e-12);
        }
        // Tower liveness (parameters upstream of the head affecting the
        // loss) is covered by the finite-difference gradient test.
    }

    #[test]
    fn test_swap_symmetry() {
        let dims = small_dims();
        let params = NasfParams::init(dims, 7).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let batch = random_batch(&dims, 5, &mut rng);
        let swapped = PairBatch {
            scales: batch.scales,
            dim: batch.dim,
            a: batch.b.clone(),
            b: batch.a.clone(),
            c: batch.c.clone(),
            d: batch.d.clone(),
        };
        let (w1, y1) = forward(&params, &batch).unwrap();
        let (w2, y2) = forward(&params, &swapped).unwrap();
        for (a, b) in w1.as_slice().iter().zip(w2.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in y1.iter().zip(&y2) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn test_pair_order_invariance() {
        let dims = small_dims();
        let params = NasfParams::init(dims, 9).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let batch = random_batch(&dims, 6, &mut rng);
        let reversed = batch.subset(&[5, 4, 3, 2, 1, 0]);
        let (w1, _) = forward(&params, &batch).unwrap();
        let (w2, _) = forward(&params, &reversed).unwrap();
        for (a, b) in w1.as_slice().iter().zip(w2.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn test_loss_values() {
        assert_eq!(loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let y: Vec<f64> = vec![0.1, 0.2, 0.3];
        let d: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
        assert!((loss(&y, &d).unwrap() - 0.01).abs() < 1e-12);
        // Scalar-loop oracle on random data.
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let y: Vec<f64> = (0..17).map(|_| rng.random::<f64>()).collect();
        let d: Vec<f64> = (0..17).map(|_| rng.random::<f64>()).collect();
        let mut want = 0.0;
        for i in 0..17 {
            want += (y[i] - d[i]).powi(2);
        }
        want /= 17.0;
        assert!((loss(&y, &d).unwrap() - want).abs() < 1e-12);
        assert!(loss(&[0.0], &[0.0, 1.0]).is_err());
    }

    /// Total loss as a scalar function of theta, for finite differencing.
    fn loss_at(dims: NasfDims, theta: &[f64], batch: &PairBatch) -> f64 {
        let p = NasfParams {
            dims,
            theta: theta.to_vec(),
        };
        let (_, y) = forward(&p, batch).unwrap();
        loss(&y, &batch.d).unwrap()
    }

    #[test]
    fn test_gradient_matches_finite_differences() {
        let mut accepted = 0usize;
        let mut seed = 100u64;
        while accepted < 10 {
            seed += 1;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let dims = NasfDims {
                scales: rng.random_range(2..4),
                input_dim: rng.random_range(2..4),
                hidden: rng.random_range(3..5),
                head_bias: seed % 2 == 0,
            };
            let params = NasfParams::init(dims, seed).unwrap();
            let batch = random_batch(&dims, rng.random_range(1..5), &mut rng);
            // Skip configurations sitting on a kink: the analytic
            // subgradient and the symmetric difference disagree there.
            if kink_margin(&params, &batch) < 1e-3 {
                continue;
            }
            accepted += 1;

            let analytic = backward(&params, &batch).unwrap();
            let step = 1e-5;
            for i in 0..params.theta.len() {
                let mut tp = params.theta.clone();
                tp[i] += step;
                let lp = loss_at(dims, &tp, &batch);
                tp[i] -= 2.0 * step;
                let lm = loss_at(dims, &tp, &batch);
                let fd = (lp - lm) / (2.0 * step);
                let an = analytic[i];
                if fd.abs() < 1e-7 && an.abs() < 1e-7 {
                    continue;
                }
                let rel = (fd - an).abs() / fd.abs().max(an.abs());
                assert!(
                    rel < 1e-4,
                    "seed {seed} param {i}: analytic {an} vs fd {fd} (rel {rel})"
                );
            }
        }
    }

    #[test]
    fn test_zero_head_bias_gradient_closed_form() {
        // With an all-zero head, every pair's softmax is uniform, so the
        // bias gradient reduces to (1/S)·(g_i − mean(g)) with
        // g = (2/N) Σ r_n c_n.
        let dims = small_dims();
        let mut params = NasfParams::init(dims, 13).unwrap();
        for i in dims.head_w()..params.theta.len() {
            params.theta[i] = 0.0;
        }
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let batch = random_batch(&dims, 7, &mut rng);
        let grad = backward(&params, &batch).unwrap();

        let s = dims.scales;
        let n = batch.len() as f64;
        // Residuals under uniform weights.
        let mut g = vec![0.0f64; s];
        for i in 0..batch.len() {
            let c = &batch.c[i * s..(i + 1) * s];
            let y: f64 = c.iter().sum::<f64>() / s as f64;
            let r = 2.0 * (y - batch.d[i]) / n;
            for (gs, cs) in g.iter_mut().zip(c) {
                *gs += r * cs;
            }
        }
        let mean_g: f64 = g.iter().sum::<f64>() / s as f64;
        for j in 0..s {
            let want = (g[j] - mean_g) / s as f64;
            let got = grad[dims.head_b() + j];
            assert!(
                (want - got).abs() < 1e-12,
                "bias {j}: want {want} got {got}"
            );
        }
    }

    #[test]
    fn test_gradient_zero_at_exact_fit() {
        // Labels manufactured to equal the network's own predictions.
        let dims = small_dims();
        let params = NasfParams::init(dims, 15).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(16);
        let mut batch = random_batch(&dims, 4, &mut rng);
        let (_, y) = forward(&params, &batch).unwrap();
        batch.d = y;
        let grad = backward(&params, &batch).unwrap();
        for (i, g) in grad.iter().enumerate() {
            assert!(g.abs() < 1e-12, "param {i} gradient {g}");
        }
    }

    #[test]
    fn test_adam_minimizes_quadratic() {
        // Sanity: Adam drives a simple quadratic to its minimum.
        let mut theta = vec![5.0f64, -3.0];
        let mut adam = AdamState::new(2, 0.05);
        for _ in 0..2_000 {
            let grad: Vec<f64> = theta.iter().map(|&x| 2.0 * (x - 1.0)).collect();
            adam.step(&mut theta, &grad);
        }
        assert!((theta[0] - 1.0).abs() < 1e-3);
        assert!((theta[1] - 1.0).abs() < 1e-3);
    }

    /// Planted corpus: scale 0's cosine equals the label exactly, other
    /// scales carry noise.
    fn planted_sessions(
        dims: &NasfDims,
        sessions: usize,
        pairs: usize,
        rng: &mut ChaCha20Rng,
    ) -> Vec<PairBatch> {
        (0..sessions)
            .map(|_| {
                let mut batch = PairBatch::new(dims.scales, dims.input_dim);
                let block = dims.scales * dims.input_dim;
                for _ in 0..pairs {
                    let a: Vec<f64> = (0..block).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let b: Vec<f64> = (0..block).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let d: f64 = rng.random_range(0.05..0.95);
                    let mut c = vec![0.0f64; dims.scales];
                    c[0] = d;
                    for cs in c.iter_mut().skip(1) {
                        *cs = (d + rng.random_range(-0.35..0.35)).clamp(0.0, 1.0);
                    }
                    batch.push_pair(&a, &b, &c, d).unwrap();
                }
                batch
            })
            .collect()
    }

    #[test]
    fn test_training_finds_planted_scale() {
        let dims = NasfDims {
            scales: 3,
            input_dim: 4,
            hidden: 8,
            head_bias: true,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let sessions = planted_sessions(&dims, 10, 80, &mut rng);
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 32,
            seed: 1,
            ..TrainConfig::default()
        };
        let init = NasfParams::init(dims, 2).unwrap();
        let (trained, log) = train(init, &sessions, &cfg).unwrap();
        assert_eq!(log.len(), cfg.epochs);

        // Evaluate on fresh planted data.
        let held = planted_sessions(&dims, 1, 200, &mut rng);
        let (w, y) = forward(&trained, &held[0]).unwrap();
        assert!(
            w.as_slice()[0] >= 0.8,
            "planted-scale weight {:?}",
            w.as_slice()
        );
        let trained_mse = loss(&y, &held[0].d).unwrap();
        // Equal-weight baseline on the same pairs.
        let s = dims.scales as f64;
        let equal_y: Vec<f64> = (0..held[0].len())
            .map(|i| held[0].c[i * dims.scales..(i + 1) * dims.scales].iter().sum::<f64>() / s)
            .collect();
        let equal_mse = loss(&equal_y, &held[0].d).unwrap();
        assert!(
            trained_mse <= 0.5 * equal_mse,
            "trained {trained_mse} vs equal {equal_mse}"
        );
    }

    #[test]
    fn test_training_is_deterministic() {
        let dims = NasfDims {
            scales: 3,
            input_dim: 3,
            hidden: 4,
            head_bias: true,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        let sessions = planted_sessions(&dims, 3, 30, &mut rng);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = || {
            let init = NasfParams::init(dims, 4).unwrap();
            train(init, &sessions, &cfg).unwrap()
        };
        let (p1, l1) = run();
        let (p2, l2) = run();
        assert_eq!(p1.theta, p2.theta);
        assert_eq!(l1, l2);
    }

    #[test]
    fn test_checkpoint_round_trip() {
        let dims = small_dims();
        let params = NasfParams::init(dims, 23).unwrap();
        let mut buf = Vec::new();
        write_checkpoint_to(&params, 99, &mut buf).unwrap();
        let (loaded, seed) = read_checkpoint_from(&buf[..]).unwrap();
        assert_eq!(seed, 99);
        assert_eq!(loaded.dims, params.dims);
        assert_eq!(loaded.theta, params.theta);
    }

    #[test]
    fn test_checkpoint_rejects_mismatched_count() {
        let dims = small_dims();
        let params = NasfParams::init(dims, 23).unwrap();
        let mut buf = Vec::new();
        write_checkpoint_to(&params, 0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text
            .lines()
            .take(7 + params.theta.len() - 3)
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(read_checkpoint_from(truncated.as_bytes()).is_err());

        let garbled = text.replacen("hidden 4", "hidden 5", 1);
        assert!(read_checkpoint_from(garbled.as_bytes()).is_err());
    }

    fn small_synth_session(session_len: f64, seed: u64) -> crate::synth::SynthSession {
        let cfg = crate::synth::SynthConfig {
            speakers: 2,
            session_len,
            dim: 8,
            noise_base: 0.2,
            seed,
            ..crate::synth::SynthConfig::default()
        };
        crate::synth::gen_session(&cfg, &crate::segmenter::default_scales(), "rec0").unwrap()
    }

    /// Random network whose head actually discriminates (nonzero logits).
    fn randomized_net(scales: usize, dim: usize, seed: u64) -> NasfParams {
        let dims = NasfDims {
            scales,
            input_dim: dim,
            hidden: 8,
            head_bias: true,
        };
        let mut params = NasfParams::init(dims, seed).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xabcd);
        for i in dims.head_w()..params.theta.len() {
            params.theta[i] = 0.5 * gauss(&mut rng);
        }
        params
    }

    #[test]
    fn test_equal_weight_mode_needs_no_model() {
        let s = small_synth_session(15.0, 31);
        let w = infer_weights(None, &s.segments, &s.embeddings, InferenceMode::EqualWeight, 1, 0)
            .unwrap();
        assert_eq!(w.len(), 1);
        for &x in w[0].as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        // The trained modes refuse to run without parameters.
        assert!(
            infer_weights(None, &s.segments, &s.embeddings, InferenceMode::NasfS, 10, 0).is_err()
        );
    }

    #[test]
    fn test_nasf_s_matches_explicit_forward_on_all_pairs() {
        let s = small_synth_session(8.0, 32);
        let l = s.segments.num_base();
        let total = l * (l - 1) / 2;
        let params = randomized_net(3, 8, 33);

        let got = infer_weights(
            Some(&params),
            &s.segments,
            &s.embeddings,
            InferenceMode::NasfS,
            total, // ≥ C(L,2) → every pair, no sampling involved
            7,
        )
        .unwrap();

        // Build the same pair set explicitly and push it through forward.
        let tensor =
            crate::affinity::build_affinity_tensor(&s.segments, &s.embeddings).unwrap();
        let mut labels = Vec::new();
        for i in 0..l {
            for j in i + 1..l {
                labels.push(crate::labels::PairLabel { i, j, d: 0.0 });
            }
        }
        let batch = build_pair_batch(&s.segments, &s.embeddings, &tensor, &labels).unwrap();
        let (want, _) = forward(&params, &batch).unwrap();
        for (a, b) in got[0].as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn test_nasf_d_vectors_agree_on_identical_planted_blocks() {
        // Three translated copies of one session: the block split then
        // lands exactly on copy boundaries, so all six weight vectors
        // estimate the same population and may differ only by sampling.
        let s = small_synth_session(20.0, 34);
        let copy_ms = s.turns.last().unwrap().end_ms();
        let gap = 500i64;
        let mut turns = Vec::new();
        for k in 0..3i64 {
            for t in &s.turns {
                turns.push(crate::rttm::RttmTurn::new(
                    "rec0",
                    t.onset_ms + k * (copy_ms + gap),
                    t.duration_ms,
                    &t.speaker_id,
                ));
            }
        }
        let regions = crate::rttm::oracle_sad(&turns);
        let set =
            crate::segmenter::build_multiscale(&regions, &crate::segmenter::default_scales())
                .unwrap();
        assert_eq!(set.num_base(), 3 * s.segments.num_base());
        let mut embeddings = Vec::new();
        for sc in 0..3 {
            let orig = &s.embeddings[sc];
            let mut m = EmbeddingMatrix::new(sc, orig.dim(), 0);
            for _ in 0..3 {
                for r in 0..orig.rows() {
                    m.push_row(orig.row(r)).unwrap();
                }
            }
            embeddings.push(m);
        }

        let params = randomized_net(3, 8, 35);
        let ws = infer_weights(
            Some(&params),
            &set,
            &embeddings,
            InferenceMode::NasfD,
            10_000,
            11,
        )
        .unwrap();
        assert_eq!(ws.len(), 6);
        for a in 0..6 {
            for b in a + 1..6 {
                let max_delta = ws[a]
                    .as_slice()
                    .iter()
                    .zip(ws[b].as_slice())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0f64, f64::max);
                assert!(max_delta <= 0.05, "vectors {a} and {b} differ {max_delta}");
            }
        }
    }

    #[test]
    fn test_nasf_d_needs_six_base_segments() {
        let s = small_synth_session(8.0, 36);
        let params = randomized_net(3, 8, 37);
        // Artificially shrink: a fresh tiny session instead.
        let cfg = crate::synth::SynthConfig {
            speakers: 1,
            session_len: 1.2,
            dim: 8,
            noise_base: 0.0,
            silence_frac: 0.0,
            seed: 3,
            ..crate::synth::SynthConfig::default()
        };
        let tiny =
            crate::synth::gen_session(&cfg, &crate::segmenter::default_scales(), "rec1").unwrap();
        if tiny.segments.num_base() < 6 {
            assert!(infer_weights(
                Some(&params),
                &tiny.segments,
                &tiny.embeddings,
                InferenceMode::NasfD,
                100,
                0,
            )
            .is_err());
        }
        let _ = s;
    }

    #[test]
    fn test_cross_pair_sampler_distinct_and_in_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(40);
        let left: Vec<usize> = (0..7).collect();
        let right: Vec<usize> = (10..19).collect();
        let pairs = sample_cross_pairs(&left, &right, 30, &mut rng);
        assert_eq!(pairs.len(), 30);
        let set: HashSet<(usize, usize)> = pairs.iter().cloned().collect();
        assert_eq!(set.len(), 30);
        for (i, j) in pairs {
            assert!(left.contains(&i) && right.contains(&j));
        }
        // Requesting at least the full cross product returns it all.
        let all = sample_cross_pairs(&left, &right, 1_000, &mut rng);
        assert_eq!(all.len(), 63);
    }

    #[test]
    fn test_dim_mismatch_is_error() {
        let params = NasfParams::init(small_dims(), 1).unwrap();
        let batch = PairBatch::new(2, 3);
        assert!(forward(&params, &batch).is_err());
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let wrong = random_batch(
            &NasfDims {
                scales: 2,
                input_dim: 3,
                hidden: 4,
                head_bias: true,
            },
            2,
            &mut rng,
        );
        assert!(forward(&params, &wrong).is_err());
    }
}
