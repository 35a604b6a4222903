//! The weakly supervised window classifier and its Monte Carlo dropout
//! inference.
//!
//! The reference model is a one-hidden-layer perceptron: `tanh` hidden units,
//! inverted dropout on the hidden layer, and one sigmoid output per class.
//! Class 0 is fluent; classes `1..C` are the dysfluency types. It is trained
//! with a multi-label focal loss on window targets inherited from clip-level
//! labels.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SCUTORC1";
pub const FLUENT_LABEL: &str = "fluent";
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.2;

fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleModel {
    class_names: Vec<String>,
    dropout_rate: f64,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

/// Gradient of the loss with the same layout as the model parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl OracleModel {
    /// Glorot-uniform weights and zero biases, rounded to `f32`.
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        class_names: Vec<String>,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(input_dim, hidden_dim, class_names, dropout_rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = model.class_count();
        let a1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let a2 = (6.0 / (hidden_dim + c) as f64).sqrt();
        model
            .w1
            .mapv_inplace(|_| round_f32(rng.random_range(-a1..a1)));
        model
            .w2
            .mapv_inplace(|_| round_f32(rng.random_range(-a2..a2)));
        Ok(model)
    }

    pub fn zeros(
        input_dim: usize,
        hidden_dim: usize,
        class_names: Vec<String>,
        dropout_rate: f64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::InvalidConfig(
                "model input and hidden sizes must be positive".into(),
            ));
        }
        if class_names.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least two classes (fluent plus one dysfluency), got {}",
                class_names.len()
            )));
        }
        if class_names.iter().collect::<BTreeSet<_>>().len() != class_names.len() {
            return Err(Error::InvalidConfig(format!(
                "duplicate class names in {class_names:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must be in [0, 1), got {dropout_rate}"
            )));
        }
        let c = class_names.len();
        Ok(Self {
            class_names,
            dropout_rate,
            w1: Array2::zeros((hidden_dim, input_dim)),
            b1: Array1::zeros(hidden_dim),
            w2: Array2::zeros((c, hidden_dim)),
            b2: Array1::zeros(c),
        })
    }

    /// Builds a model from explicit parameters. `w1` is hidden x input and
    /// `w2` is classes x hidden.
    pub fn from_parameters(
        class_names: Vec<String>,
        dropout_rate: f64,
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    ) -> Result<Self> {
        let mut model = Self::zeros(w1.ncols(), w1.nrows(), class_names, dropout_rate)?;
        let expect = |ok: bool, expected: usize, found: usize| {
            if ok {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected, found })
            }
        };
        let (h, c) = (model.hidden_dim(), model.class_count());
        expect(b1.len() == h, h, b1.len())?;
        expect(w2.dim() == (c, h), c * h, w2.len())?;
        expect(b2.len() == c, c, b2.len())?;
        model.w1 = w1;
        model.b1 = b1;
        model.w2 = w2;
        model.b2 = b2;
        if model.parameters().flat_map(|p| p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("model parameters must be finite".into()));
        }
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().map(<[f64]>::len).sum()
    }

    fn parameters(&self) -> impl Iterator<Item = &[f64]> {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
        ]
        .into_iter()
    }

    fn parameters_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }

    /// Parameter `index` in the flattened `[w1, b1, w2, b2]` order.
    pub fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for p in self.parameters_mut() {
            if index < p.len() {
                return &mut p[index];
            }
            index -= p.len();
        }
        panic!("parameter index out of range");
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found,
            });
        }
        Ok(())
    }

    fn hidden(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut pre = x.dot(&self.w1.t());
        pre += &self.b1;
        pre.mapv_inplace(f64::tanh);
        pre
    }

    /// Samples an inverted-dropout mask: zero with probability `dropout_rate`,
    /// otherwise `1 / (1 - dropout_rate)`.
    fn dropout_mask<R: Rng + ?Sized>(&self, shape: (usize, usize), rng: &mut R) -> Array2<f64> {
        let keep = 1.0 / (1.0 - self.dropout_rate);
        let p = self.dropout_rate;
        Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
    }

    fn logits(&self, hidden: &Array2<f64>) -> Array2<f64> {
        let mut z = hidden.dot(&self.w2.t());
        z += &self.b2;
        z
    }

    /// Per-class sigmoid probabilities for one embedding.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        embedding: &[f64],
        dropout_active: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_dim(embedding.len())?;
        let x = ArrayView2::from_shape((1, embedding.len()), embedding).unwrap();
        let mut h = self.hidden(x);
        if dropout_active && self.dropout_rate > 0.0 {
            h *= &self.dropout_mask(h.dim(), rng);
        }
        Ok(self.logits(&h).iter().map(|&z| sigmoid(z)).collect())
    }

    /// Mean focal loss over a batch and its gradient. With `dropout` set, one
    /// mask is drawn per sample and hidden unit from the generator.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        gamma: f64,
        dropout: Option<&mut R>,
    ) -> Result<(f64, Gradients)> {
        self.check_dim(x.ncols())?;
        if targets.dim() != (x.nrows(), self.class_count()) {
            return Err(Error::DimensionMismatch {
                expected: x.nrows() * self.class_count(),
                found: targets.len(),
            });
        }
        let h = self.hidden(x);
        let mask = match dropout {
            Some(rng) if self.dropout_rate > 0.0 => Some(self.dropout_mask(h.dim(), rng)),
            _ => None,
        };
        let hd = match &mask {
            Some(m) => &h * m,
            None => h.clone(),
        };
        let z = self.logits(&hd);
        let scale = 1.0 / z.len() as f64;
        let mut loss = 0.0;
        let mut dz = Array2::zeros(z.dim());
        for ((&zi, &ti), dzi) in z.iter().zip(targets.iter()).zip(dz.iter_mut()) {
            let (l, g) = focal_term(zi, ti >= 0.5, gamma);
            loss += l;
            *dzi = g * scale;
        }
        loss *= scale;

        let w2 = dz.t().dot(&hd).as_standard_layout().into_owned();
        let b2 = dz.sum_axis(Axis(0));
        let mut dh = dz.dot(&self.w2);
        if let Some(m) = &mask {
            dh *= m;
        }
        dh.zip_mut_with(&h, |d, &hv| *d *= 1.0 - hv * hv);
        let w1 = dh.t().dot(&x).as_standard_layout().into_owned();
        let b1 = dh.sum_axis(Axis(0));
        Ok((loss, Gradients { w1, b1, w2, b2 }))
    }

    /// Mean focal loss with dropout off.
    pub fn loss(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>, gamma: f64) -> Result<f64> {
        Ok(self
            .loss_and_gradients::<ChaCha8Rng>(x, targets, gamma, None)?
            .0)
    }

    /// `passes` dropout-active forward passes per row of `embeddings`. The
    /// hidden activations are shared by all passes; only the masks differ.
    pub fn mc_predict_batch<R: Rng + ?Sized>(
        &self,
        embeddings: ArrayView2<f64>,
        passes: usize,
        rng: &mut R,
    ) -> Result<Vec<McPrediction>> {
        self.check_dim(embeddings.ncols())?;
        if passes == 0 {
            return Err(Error::InvalidConfig("need at least one MC pass".into()));
        }
        let h = self.hidden(embeddings);
        let (n, hid) = h.dim();
        let c = self.class_count();
        let mut sums = Array2::<f64>::zeros((n, c));
        if self.dropout_rate == 0.0 {
            let p = self.logits(&h).mapv(sigmoid);
            sums.scaled_add(passes as f64, &p);
        } else {
            let keep = 1.0 / (1.0 - self.dropout_rate);
            let mut hd = Array1::<f64>::zeros(hid);
            for i in 0..n {
                let hi = h.row(i);
                let mut acc = sums.row_mut(i);
                for _ in 0..passes {
                    for (d, &v) in hd.iter_mut().zip(hi) {
                        *d = if rng.random::<f64>() < self.dropout_rate { 0.0 } else { v * keep };
                    }
                    let z = self.w2.dot(&hd) + &self.b2;
                    for (a, &zc) in acc.iter_mut().zip(&z) {
                        *a += sigmoid(zc);
                    }
                }
            }
        }
        Ok(sums
            .axis_iter(Axis(0))
            .map(|row| McPrediction::from_mean_probs(row.mapv(|v| v / passes as f64).to_vec()))
            .collect())
    }

    pub fn mc_predict<R: Rng + ?Sized>(
        &self,
        embedding: &[f64],
        passes: usize,
        rng: &mut R,
    ) -> Result<McPrediction> {
        let x = ArrayView2::from_shape((1, embedding.len()), embedding).unwrap();
        Ok(self.mc_predict_batch(x, passes, rng)?.remove(0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        for d in [self.input_dim(), self.hidden_dim(), self.class_count()] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&self.dropout_rate.to_le_bytes());
        for v in self.parameters().flat_map(|p| p.iter()) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for name in &self.class_names {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let format = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
            path,
        };
        if cur.take(8)? != CHECKPOINT_MAGIC {
            return Err(format("missing SCUTORC1 magic"));
        }
        let input = cur.u32()? as usize;
        let hidden = cur.u32()? as usize;
        let classes = cur.u32()? as usize;
        let dropout = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let mut blob = |rows: usize, cols: usize| -> Result<Array2<f64>> {
            let raw = cur.take(4 * rows * cols)?;
            let vals = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            Ok(Array2::from_shape_vec((rows, cols), vals).unwrap())
        };
        let w1 = blob(hidden, input)?;
        let b1 = blob(1, hidden)?.remove_axis(Axis(0));
        let w2 = blob(classes, hidden)?;
        let b2 = blob(1, classes)?.remove_axis(Axis(0));
        let mut names = Vec::with_capacity(classes);
        for _ in 0..classes {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| format("class name is not UTF-8"))?;
            names.push(name.to_string());
        }
        if cur.pos != bytes.len() {
            return Err(format("trailing bytes after class names"));
        }
        Self::from_parameters(names, dropout, w1, b1, w2, b2)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: end,
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Focal term `-(1 - pt)^gamma ln pt` for one sigmoid output and its
/// derivative with respect to the logit.
fn focal_term(z: f64, positive: bool, gamma: f64) -> (f64, f64) {
    let sign = if positive { 1.0 } else { -1.0 };
    // ln pt = -softplus(-s z), 1 - pt = sigmoid(-s z).
    let log_pt = -softplus(-sign * z);
    let pt = log_pt.exp();
    let q = sigmoid(-sign * z);
    let qg = q.powf(gamma);
    let loss = -qg * log_pt;
    let grad = sign * (gamma * pt * qg * log_pt - qg * q);
    (loss, grad)
}

/// Mean over classes of `-(1 - pt)^gamma ln pt`, where `pt = p` for positive
/// targets and `1 - p` otherwise.
pub fn focal_loss(probs: &[f64], targets: &[f64], gamma: f64) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let pt = if t >= 0.5 { p } else { 1.0 - p };
            -(1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    total / probs.len() as f64
}

/// Mean class probabilities over MC passes and the derived confidence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McPrediction {
    pub mean_probs: Vec<f64>,
    pub entropy: f64,
    pub mask: f64,
}

impl McPrediction {
    /// Normalizes `mean_probs` to a categorical `q`, takes `H = -sum q ln q`
    /// and sets `mask = 1 - H / ln C`.
    pub fn from_mean_probs(mean_probs: Vec<f64>) -> Self {
        let c = mean_probs.len();
        let h_max = (c as f64).ln();
        let total: f64 = mean_probs.iter().sum();
        let first = mean_probs.first().copied().unwrap_or(0.0);
        // Equal entries (including all zeros) are the uniform distribution;
        // set its entropy exactly instead of summing C rounded terms.
        let entropy = if total <= 0.0 || mean_probs.iter().all(|&p| p == first) {
            h_max
        } else {
            -mean_probs
                .iter()
                .map(|&p| p / total)
                .filter(|&q| q > 0.0)
                .map(|q| q * q.ln())
                .sum::<f64>()
        };
        let entropy = entropy.clamp(0.0, h_max);
        let mask = if h_max > 0.0 {
            (1.0 - entropy / h_max).clamp(0.0, 1.0)
        } else {
            1.0
        };
        Self {
            mean_probs,
            entropy,
            mask,
        }
    }

    pub fn p_fluent(&self) -> f64 {
        self.mean_probs[0]
    }

    pub fn p_max(&self) -> f64 {
        self.mean_probs[1..]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index in `1..C` of the most probable dysfluency class; ties go low.
    pub fn top_dysfluent_class(&self) -> usize {
        let mut best = 1;
        for k in 2..self.mean_probs.len() {
            if self.mean_probs[k] > self.mean_probs[best] {
                best = k;
            }
        }
        best
    }
}

/// `W2 = P0 P0^T + Pmax Pmax^T`.
pub fn build_w2(preds: &[McPrediction]) -> Result<SimilarityMatrix> {
    let p0: Vec<f64> = preds.iter().map(McPrediction::p_fluent).collect();
    let pm: Vec<f64> = preds.iter().map(McPrediction::p_max).collect();
    let n = preds.len();
    let w = Array2::from_shape_fn((n, n), |(i, j)| p0[i] * p0[j] + pm[i] * pm[j]);
    SimilarityMatrix::new(w)
}

/// Confidence from the largest mean class probability, zeroed below 0.5.
pub fn prob_mask(preds: &[McPrediction]) -> Vec<f64> {
    preds
        .iter()
        .map(|p| {
            let top = p.mean_probs.iter().copied().fold(0.0, f64::max);
            if top >= 0.5 {
                top
            } else {
                0.0
            }
        })
        .collect()
}

/// True when the strongest dysfluency beats the fluent class; ties are fluent.
pub fn node_is_dysfluent(pred: &McPrediction) -> bool {
    pred.p_max() > pred.p_fluent()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub focal_gamma: f64,
    pub seed: u64,
    pub lr_halving_patience_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 256,
            epochs: 50,
            focal_gamma: 2.0,
            seed: 0,
            lr_halving_patience_epochs: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.focal_gamma.is_finite() && self.focal_gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "focal gamma must be non-negative, got {}",
                self.focal_gamma
            )));
        }
        Ok(())
    }
}

/// Windows with their inherited clip-level targets.
#[derive(Debug, Clone, Default)]
pub struct LabelledWindows {
    pub embeddings: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub speakers: BTreeSet<String>,
}

impl LabelledWindows {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Adds every window of one clip with the clip's target vector.
    pub fn push_clip(&mut self, speaker: &str, rows: Vec<Vec<f64>>, targets: Vec<f64>) {
        self.speakers.insert(speaker.to_string());
        for row in rows {
            self.embeddings.push(row);
            self.targets.push(targets.clone());
        }
    }

    fn gather(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>) {
        let d = self.embeddings[0].len();
        let c = self.targets[0].len();
        let mut x = Array2::zeros((idx.len(), d));
        let mut t = Array2::zeros((idx.len(), c));
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&ArrayView1::from(&self.embeddings[i]));
            t.row_mut(r).assign(&ArrayView1::from(&self.targets[i]));
        }
        (x, t)
    }
}

/// Multi-hot window target: dysfluency classes present in the clip, or the
/// fluent class alone when the clip has none.
pub fn weak_target(class_names: &[String], weak_labels: &BTreeSet<String>) -> Vec<f64> {
    let mut t: Vec<f64> = class_names
        .iter()
        .map(|c| if weak_labels.contains(c) { 1.0 } else { 0.0 })
        .collect();
    if weak_labels.is_empty() {
        t[0] = 1.0;
    }
    t
}

pub fn check_speaker_disjoint(a: &BTreeSet<String>, b: &BTreeSet<String>) -> Result<()> {
    let shared: Vec<String> = a.intersection(b).cloned().collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::SpeakerOverlap(shared))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub learning_rate: f64,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &OracleModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.parameters().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut OracleModel, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let g: [&[f64]; 4] = [
            grads.w1.as_slice().unwrap(),
            grads.b1.as_slice().unwrap(),
            grads.w2.as_slice().unwrap(),
            grads.b2.as_slice().unwrap(),
        ];
        for (k, params) in model.parameters_mut().into_iter().enumerate() {
            for (i, p) in params.iter_mut().enumerate() {
                let gi = g[k][i];
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * gi;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * gi * gi;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                *p = round_f32(*p - update);
            }
        }
    }
}

/// Mean focal loss over a sample set with dropout off.
pub fn dataset_loss(model: &OracleModel, data: &LabelledWindows, gamma: f64) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(1024) {
        let (x, t) = data.gather(chunk);
        total += model.loss(x.view(), t.view(), gamma)? * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Mean over classes of thresholded-at-0.5 accuracy, dropout off.
pub fn macro_accuracy(model: &OracleModel, data: &LabelledWindows) -> Result<f64> {
    let c = model.class_count();
    let mut correct = vec![0usize; c];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(1024) {
        let (x, t) = data.gather(chunk);
        let p = model.logits(&model.hidden(x.view())).mapv(sigmoid);
        for (pr, tr) in p.axis_iter(Axis(0)).zip(t.axis_iter(Axis(0))) {
            for k in 0..c {
                if (pr[k] >= 0.5) == (tr[k] >= 0.5) {
                    correct[k] += 1;
                }
            }
        }
    }
    Ok(correct.iter().map(|&k| k as f64 / data.len() as f64).sum::<f64>() / c as f64)
}

/// Mini-batch Adam on the focal loss. The learning rate halves whenever the
/// validation loss (training loss if `val` is empty) has not improved for
/// `lr_halving_patience_epochs` epochs.
pub fn train(
    model: &OracleModel,
    train_set: &LabelledWindows,
    val: &LabelledWindows,
    cfg: &TrainConfig,
) -> Result<(OracleModel, Vec<EpochLog>)> {
    cfg.validate()?;
    check_speaker_disjoint(&train_set.speakers, &val.speakers)?;
    let mut model = model.clone();
    let mut log = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 || train_set.is_empty() {
        return Ok((model, log));
    }
    if let Some(t) = train_set.targets.first() {
        if t.len() != model.class_count() {
            return Err(Error::DimensionMismatch {
                expected: model.class_count(),
                found: t.len(),
            });
        }
    }

    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut adam = Adam::new(&model);
    let mut lr = cfg.learning_rate;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, t) = train_set.gather(idx);
            let (loss, grads) =
                model.loss_and_gradients(x.view(), t.view(), cfg.focal_gamma, Some(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch,
                    learning_rate: lr,
                });
            }
            epoch_loss += loss * idx.len() as f64;
            adam.step(&mut model, &grads, lr);
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(dataset_loss(&model, val, cfg.focal_gamma)?)
        };
        log::debug!(
            "epoch {epoch}: train loss {train_loss:.6}, val loss {val_loss:?}, lr {lr:e}"
        );
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            learning_rate: lr,
        });
        let monitored = val_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            return Err(Error::NanLoss {
                epoch,
                batch: 0,
                learning_rate: lr,
            });
        }
        if monitored < best {
            best = monitored;
            stale = 0;
        } else {
            stale += 1;
            if cfg.lr_halving_patience_epochs > 0 && stale >= cfg.lr_halving_patience_epochs {
                lr *= 0.5;
                stale = 0;
            }
        }
    }
    Ok((model, log))
}

/// Top-class index per row for a batch of predictions.
pub fn top_classes(preds: &[McPrediction]) -> Vec<usize> {
    preds.iter().map(McPrediction::top_dysfluent_class).collect()
}
