//! CNN and BiLSTM relation classifiers with hand-written backpropagation,
//! the frequency-weighted cross-entropy objective, and Adam updates.
//!
//! Everything runs in `f64`, which is what the finite-difference gradient
//! checks need.

pub mod adam;
pub mod cnn;
pub mod gradcheck;
pub mod layers;
pub mod rnn;

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_string, Error, Result};
use crate::features::{EmbeddingTable, EncodedExample};

pub use adam::{Adam, AdamConfig};
pub use cnn::Cnn;
pub use layers::{EmbeddingLayer, InputSizes, OutputLayer};
pub use rnn::Rnn;

/// Probabilities are clamped to this before taking the log.
pub const PROB_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub relpos_dim: usize,
    /// Update word vectors during training.
    pub fine_tune_words: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            word_dim: 200,
            pos_dim: 30,
            relpos_dim: 20,
            fine_tune_words: true,
        }
    }
}

impl EmbeddingConfig {
    pub fn token_dim(&self) -> usize {
        self.word_dim + self.pos_dim + 2 * self.relpos_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub filter_widths: Vec<usize>,
    /// Feature maps per filter width.
    pub filters_per_width: usize,
    pub dropout_keep: f64,
    pub l2_lambda: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            filter_widths: (2..=7).collect(),
            filters_per_width: 192,
            dropout_keep: 0.5,
            l2_lambda: 0.01,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_widths.is_empty()
            || self.filter_widths.contains(&0)
            || !self.filter_widths.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::invalid("filter widths must be positive and ascending"));
        }
        if self.filters_per_width == 0 {
            return Err(Error::invalid("filters_per_width must be positive"));
        }
        validate_keep(self.dropout_keep)?;
        validate_lambda(self.l2_lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnConfig {
    pub lstm_units: usize,
    pub dropout_keep: f64,
    pub l2_lambda: f64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        RnnConfig {
            lstm_units: 600,
            dropout_keep: 0.5,
            l2_lambda: 0.01,
        }
    }
}

impl RnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lstm_units == 0 {
            return Err(Error::invalid("lstm_units must be positive"));
        }
        validate_keep(self.dropout_keep)?;
        validate_lambda(self.l2_lambda)
    }
}

fn validate_keep(keep: f64) -> Result<()> {
    if keep > 0.0 && keep <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("dropout keep probability {keep} outside (0, 1]")))
    }
}

fn validate_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("l2 lambda {lambda} must be non-negative")))
    }
}

/// A probability vector over the active class scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub const TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::invalid("probabilities must be finite and non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbDist(probs))
    }

    pub fn uniform(n: usize) -> Self {
        ProbDist(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn softmax(logits: &[f64]) -> ProbDist {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbDist(exps.into_iter().map(|e| e / sum).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(n: usize) -> Self {
        ClassWeights(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `w_i = sum_j count_j / (N * count_i)`, which keeps the count-weighted
/// mean weight at exactly 1.
pub fn class_weights(counts: &[usize]) -> Result<ClassWeights> {
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::ZeroCount(i));
    }
    let total: usize = counts.iter().sum();
    let n = counts.len() as f64;
    Ok(ClassWeights(
        counts
            .iter()
            .map(|&c| total as f64 / (n * c as f64))
            .collect(),
    ))
}

/// `-w[y] * ln(p[y])`, with `p[y]` clamped to [`PROB_EPSILON`]. NaN passes
/// through so a diverged model is still detected.
pub fn weighted_ce(probs: &ProbDist, true_class: usize, weights: &ClassWeights) -> f64 {
    let p = probs.0[true_class];
    let p = if p < PROB_EPSILON { PROB_EPSILON } else { p };
    -weights.0[true_class] * p.ln()
}

/// Feature extractor plus the shared dropout + output head.
pub trait Network: Sized {
    type Cache;

    fn features(&self, batch: &[&EncodedExample]) -> (Array2<f64>, Self::Cache);
    fn features_backward(&self, cache: Self::Cache, dfeat: ArrayView2<f64>, grad: &mut Self);
    fn output(&self) -> &OutputLayer;
    fn output_mut(&mut self) -> &mut OutputLayer;
    fn embedding_mut(&mut self) -> &mut EmbeddingLayer;
    fn dropout_keep(&self) -> f64;
    fn l2_lambda(&self) -> f64;
    fn zeros_like(&self) -> Self;
    fn tensors(&self) -> Vec<(String, &Array2<f64>)>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;
}

fn labels_of(batch: &[&EncodedExample]) -> Result<Vec<usize>> {
    batch
        .iter()
        .map(|e| e.label.ok_or_else(|| Error::invalid("training example without a label")))
        .collect()
}

fn batch_objective(
    logits: &Array2<f64>,
    labels: &[usize],
    weights: &ClassWeights,
) -> (f64, Array2<f64>) {
    let b = labels.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = Array2::zeros(logits.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        let p = softmax(logits.row(i).as_slice().expect("contiguous logits row"));
        loss += weighted_ce(&p, y, weights);
        let w = weights.0[y];
        for (c, &pc) in p.as_slice().iter().enumerate() {
            let onehot = if c == y { 1.0 } else { 0.0 };
            dlogits[[i, c]] = w * (pc - onehot) / b;
        }
    }
    (loss / b, dlogits)
}

fn l2_term(net: &impl Network) -> f64 {
    0.5 * net.l2_lambda() * net.output().w.iter().map(|w| w * w).sum::<f64>()
}

fn loss_and_grad_impl<N: Network, R: Rng + ?Sized>(
    net: &N,
    batch: &[&EncodedExample],
    weights: &ClassWeights,
    dropout: Option<&mut R>,
) -> Result<(f64, N)> {
    let labels = labels_of(batch)?;
    let (feats, cache) = net.features(batch);
    let keep = net.dropout_keep();
    let mask = match dropout {
        Some(rng) if keep < 1.0 => Some(layers::dropout_mask(feats.dim(), keep, rng)),
        _ => None,
    };
    let hidden = match &mask {
        Some(m) => &feats * m,
        None => feats,
    };
    let logits = net.output().forward(&hidden);
    let (data_loss, dlogits) = batch_objective(&logits, &labels, weights);
    let loss = data_loss + l2_term(net);

    let mut grad = net.zeros_like();
    let dhidden = net.output().backward(&hidden, &dlogits, grad.output_mut());
    let lambda = net.l2_lambda();
    grad.output_mut().w.scaled_add(lambda, &net.output().w);
    let dfeat = match &mask {
        Some(m) => dhidden * m,
        None => dhidden,
    };
    net.features_backward(cache, dfeat.view(), &mut grad);
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Cnn,
    Rnn,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Cnn => "cnn",
            Arch::Rnn => "rnn",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Cnn(Cnn),
    Rnn(Rnn),
}

macro_rules! dispatch {
    ($self:expr, $net:ident => $body:expr) => {
        match $self {
            Classifier::Cnn($net) => $body,
            Classifier::Rnn($net) => $body,
        }
    };
}

impl Classifier {
    pub fn new(
        arch: Arch,
        embedding: &EmbeddingConfig,
        cnn: &CnnConfig,
        rnn: &RnnConfig,
        words: EmbeddingTable,
        sizes: InputSizes,
        rng: &mut impl Rng,
    ) -> Self {
        let emb = EmbeddingLayer::new(words, sizes, embedding.pos_dim, embedding.relpos_dim, rng);
        match arch {
            Arch::Cnn => Classifier::Cnn(Cnn::new(cnn.clone(), emb, sizes.classes, rng)),
            Arch::Rnn => Classifier::Rnn(Rnn::new(rnn.clone(), emb, sizes.classes, rng)),
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            Classifier::Cnn(_) => Arch::Cnn,
            Classifier::Rnn(_) => Arch::Rnn,
        }
    }

    pub fn num_classes(&self) -> usize {
        dispatch!(self, n => n.output().b.ncols())
    }

    /// Evaluation-mode logits, one row per example.
    pub fn logits(&self, batch: &[&EncodedExample]) -> Array2<f64> {
        dispatch!(self, n => {
            let (feats, _) = n.features(batch);
            n.output().forward(&feats)
        })
    }

    pub fn predict_proba(&self, examples: &[EncodedExample]) -> Vec<ProbDist> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(64) {
            let refs: Vec<&EncodedExample> = chunk.iter().collect();
            let logits = self.logits(&refs);
            for row in logits.rows() {
                out.push(softmax(row.as_slice().expect("contiguous logits row")));
            }
        }
        out
    }

    /// Evaluation-mode objective: mean weighted cross-entropy plus the L2
    /// penalty on the output weights.
    pub fn loss(&self, batch: &[&EncodedExample], weights: &ClassWeights) -> Result<f64> {
        let labels = labels_of(batch)?;
        let logits = self.logits(batch);
        let data = batch_objective(&logits, &labels, weights).0;
        Ok(data + dispatch!(self, n => l2_term(n)))
    }

    /// L2 component of the objective.
    pub fn regularization(&self) -> f64 {
        dispatch!(self, n => l2_term(n))
    }

    /// Objective and its gradient. Dropout is applied iff `dropout` is given.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        batch: &[&EncodedExample],
        weights: &ClassWeights,
        dropout: Option<&mut R>,
    ) -> Result<(f64, Classifier)> {
        Ok(match self {
            Classifier::Cnn(n) => {
                let (l, g) = loss_and_grad_impl(n, batch, weights, dropout)?;
                (l, Classifier::Cnn(g))
            }
            Classifier::Rnn(n) => {
                let (l, g) = loss_and_grad_impl(n, batch, weights, dropout)?;
                (l, Classifier::Rnn(g))
            }
        })
    }

    /// One Adam update on the mean batch objective, with dropout active.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &[&EncodedExample],
        weights: &ClassWeights,
        optimizer: &mut Adam,
        lr: f64,
        fine_tune_words: bool,
        rng: &mut R,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let (loss, mut grad) = self.loss_and_grad(batch, weights, Some(rng))?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: optimizer.timestep + 1,
                detail: format!(
                    "{} batch of {} examples, lr {lr}, regularization {}",
                    self.arch(),
                    batch.len(),
                    self.regularization()
                ),
            });
        }
        if !fine_tune_words {
            dispatch!(&mut grad, g => g.embedding_mut().word.fill(0.0));
        }
        let grads: Vec<&Array2<f64>> = grad.tensors().into_iter().map(|(_, t)| t).collect();
        optimizer.step(self.tensors_mut(), grads, lr);
        Ok(loss)
    }

    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        dispatch!(self, n => n.tensors())
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        dispatch!(self, n => n.tensors_mut())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_checkpoint(&self, vocab_hash: &str) -> Checkpoint {
        let (cnn, rnn) = match self {
            Classifier::Cnn(n) => (Some(n.config.clone()), None),
            Classifier::Rnn(n) => (None, Some(n.config.clone())),
        };
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            arch: self.arch(),
            cnn,
            rnn,
            vocab_hash: vocab_hash.to_owned(),
            tensors: self
                .tensors()
                .into_iter()
                .map(|(name, t)| TensorDump {
                    name,
                    shape: [t.nrows(), t.ncols()],
                    data: t.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let shape = |i: usize| -> Result<(usize, usize)> {
            ck.tensors
                .get(i)
                .map(|t| (t.shape[0], t.shape[1]))
                .ok_or_else(|| Error::Validation("checkpoint is missing tensors".into()))
        };
        let (vocab, word_dim) = shape(0)?;
        let (pos, pos_dim) = shape(1)?;
        let (relpos, relpos_dim) = shape(2)?;
        let (_, classes) = shape(ck.tensors.len().saturating_sub(1))?;
        let sizes = InputSizes {
            vocab,
            pos,
            relpos,
            classes,
        };
        let embedding = EmbeddingConfig {
            word_dim,
            pos_dim,
            relpos_dim,
            fine_tune_words: true,
        };
        let words = EmbeddingTable {
            matrix: Array2::zeros((vocab, word_dim)),
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let has_config = match ck.arch {
            Arch::Cnn => ck.cnn.is_some(),
            Arch::Rnn => ck.rnn.is_some(),
        };
        if !has_config {
            return Err(Error::Validation(format!("{} checkpoint lacks its config", ck.arch)));
        }
        let cnn = ck.cnn.clone().unwrap_or_default();
        let rnn = ck.rnn.clone().unwrap_or_default();
        let mut model = Classifier::new(ck.arch, &embedding, &cnn, &rnn, words, sizes, &mut rng);
        let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != ck.tensors.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} tensors, architecture expects {}",
                ck.tensors.len(),
                names.len()
            )));
        }
        for ((slot, name), dump) in model.tensors_mut().into_iter().zip(&names).zip(&ck.tensors) {
            if &dump.name != name || slot.dim() != (dump.shape[0], dump.shape[1]) {
                return Err(Error::Validation(format!(
                    "checkpoint tensor {} {:?} does not fit {} {:?}",
                    dump.name,
                    dump.shape,
                    name,
                    slot.dim()
                )));
            }
            *slot = Array2::from_shape_vec(slot.dim(), dump.data.clone())
                .map_err(|e| Error::Validation(format!("tensor {}: {e}", dump.name)))?;
        }
        Ok(model)
    }
}

use rand::SeedableRng;

pub const CHECKPOINT_FORMAT: &str = "scirel-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDump {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Serialized classifier: architecture config, every parameter tensor, and
/// the hash of the vocabulary it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub arch: Arch,
    pub cnn: Option<CnnConfig>,
    pub rnn: Option<RnnConfig>,
    pub vocab_hash: String,
    pub tensors: Vec<TensorDump>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &serde_json::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_to_string(path)?)?)
    }
}


#[cfg(test)]
mod formula_tests {
    use super::*;

    #[test]
    fn weights_formula() {
        assert_eq!(class_weights(&[10, 10]).unwrap().0, vec![1.0, 1.0]);
        let w = class_weights(&[619, 136]).unwrap().0;
        assert!((w[0] - 755.0 / 1238.0).abs() < 1e-12);
        assert!((w[1] - 755.0 / 272.0).abs() < 1e-12);
        assert!(matches!(class_weights(&[3, 0]), Err(Error::ZeroCount(1))));
    }

    #[test]
    fn weighted_ce_values() {
        let p = ProbDist::new(vec![0.5, 0.5]).unwrap();
        let w = ClassWeights(vec![2.0, 1.0]);
        assert!((weighted_ce(&p, 0, &w) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((weighted_ce(&p, 0, &w) - 1.3862943611198906).abs() < 1e-12);
        let sure = ProbDist::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(weighted_ce(&sure, 0, &w), 0.0);
        let p = ProbDist::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(weighted_ce(&p, 2, &ClassWeights::uniform(3)), -(0.5f64.ln()));
        assert!(weighted_ce(&sure, 1, &w).is_finite());
    }

    #[test]
    fn softmax_is_distribution() {
        let p = softmax(&[1000.0, -1000.0, 3.0]);
        assert!(ProbDist::new(p.clone().into_vec()).is_ok());
        assert_eq!(p.argmax(), 0);
        assert_eq!(softmax(&[0.0, 0.0]).as_slice(), &[0.5, 0.5]);
        assert!(ProbDist::new(vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CnnConfig::default().validate().is_ok());
        let bad = CnnConfig {
            filter_widths: vec![3, 2],
            ..CnnConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RnnConfig {
            dropout_keep: 0.0,
            ..RnnConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
