//! Epoch loop, batching, upsampling, learning-rate decay and k-fold splits.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Dataset;
use crate::error::{write_string, Error, Result};
use crate::features::{EmbeddingTable, EncodedExample};
use crate::model::{
    class_weights, Adam, AdamConfig, Arch, Classifier, ClassWeights, CnnConfig, EmbeddingConfig,
    InputSizes, RnnConfig,
};

/// Duplicates positive examples (label other than `negative`) by sampling
/// with replacement until positives / negatives reaches `ratio`, then
/// shuffles. Nothing is ever removed, so an already-satisfied ratio only
/// reorders.
pub fn upsample(
    data: &[EncodedExample],
    ratio: f64,
    negative: usize,
    seed: u64,
) -> Result<Vec<EncodedExample>> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::invalid(format!("upsampling ratio {ratio} must be positive")));
    }
    let (positives, negatives): (Vec<&EncodedExample>, Vec<&EncodedExample>) =
        data.iter().partition(|e| e.label != Some(negative));
    if positives.is_empty() {
        return Err(Error::invalid("upsampling needs at least one positive example"));
    }
    if negatives.is_empty() {
        return Err(Error::invalid("upsampling needs at least one negative example"));
    }
    let target = (ratio * negatives.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.to_vec();
    for _ in positives.len()..target {
        out.push((*positives.choose(&mut rng).expect("non-empty")).clone());
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// `initial * 0.5^floor(epoch / halve_every)`.
pub fn lr_schedule(initial: f64, epoch: usize, halve_every: usize) -> f64 {
    assert!(halve_every >= 1, "halve_every must be at least 1");
    initial * 0.5f64.powi((epoch / halve_every) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: Dataset,
    pub validation: Dataset,
}

/// Document-grouped folds: documents are shuffled with `seed` and dealt
/// round-robin, so fold document counts differ by at most one and no
/// abstract is split across train and validation.
pub fn kfold(data: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid(format!("k = {k}; need at least 2 folds")));
    }
    let docs = data.documents();
    if docs.len() < k {
        return Err(Error::invalid(format!(
            "{} documents cannot fill {k} folds",
            docs.len()
        )));
    }
    if data.instances().len() < k {
        return Err(Error::invalid(format!(
            "{} instances cannot fill {k} folds",
            data.instances().len()
        )));
    }
    let mut ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut groups: Vec<HashSet<&str>> = vec![HashSet::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        groups[i % k].insert(id);
    }
    Ok(groups
        .iter()
        .map(|val| {
            let rest: HashSet<&str> = docs
                .iter()
                .map(|d| d.doc_id.as_str())
                .filter(|id| !val.contains(id))
                .collect();
            Fold {
                train: data.subset(&rest),
                validation: data.subset(val),
            }
        })
        .collect())
}

/// Stable 64-bit seed for a named sub-task of a run.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub halve_every: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.01,
            halve_every: 25,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub embedding: EmbeddingConfig,
    pub cnn: CnnConfig,
    pub rnn: RnnConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean batch objective, regularizer included.
    pub mean_loss: f64,
    /// Mean weighted cross-entropy alone.
    pub mean_data_loss: f64,
}

pub fn class_counts(data: &[EncodedExample], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for e in data {
        if let Some(l) = e.label {
            counts[l] += 1;
        }
    }
    counts
}

/// Class weights from label counts, counting an absent class once so a
/// fold missing a rare class still trains.
pub fn smoothed_class_weights(data: &[EncodedExample], classes: usize) -> ClassWeights {
    let counts: Vec<usize> = class_counts(data, classes).into_iter().map(|c| c.max(1)).collect();
    class_weights(&counts).expect("smoothed counts are positive")
}

/// Length-bucketed batches in a seeded per-epoch order.
fn epoch_batches(data: &[EncodedExample], batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| data[i].length);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// Owns one model and its optimizer state and advances it an epoch at a
/// time.
pub struct Trainer<'a> {
    model: Classifier,
    optimizer: Adam,
    rng: ChaCha8Rng,
    data: &'a [EncodedExample],
    weights: ClassWeights,
    options: TrainOptions,
    fine_tune_words: bool,
    history: Vec<EpochStats>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: Classifier,
        data: &'a [EncodedExample],
        weights: ClassWeights,
        options: TrainOptions,
        fine_tune_words: bool,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("no training data"));
        }
        if options.batch_size == 0 || options.halve_every == 0 {
            return Err(Error::invalid("batch_size and halve_every must be positive"));
        }
        if weights.0.len() != model.num_classes() {
            return Err(Error::DimensionMismatch {
                expected: model.num_classes(),
                found: weights.0.len(),
            });
        }
        Ok(Trainer {
            model,
            optimizer: Adam::new(options.adam),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(options.seed, "batches")),
            data,
            weights,
            options,
            fine_tune_words,
            history: Vec::new(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    pub fn model(&self) -> &Classifier {
        &self.model
    }

    pub fn run_epoch(&mut self) -> Result<&EpochStats> {
        let epoch = self.history.len();
        let lr = lr_schedule(self.options.learning_rate, epoch, self.options.halve_every);
        let mut total = 0.0;
        let mut data_total = 0.0;
        for idx in epoch_batches(self.data, self.options.batch_size, &mut self.rng) {
            let batch: Vec<&EncodedExample> = idx.iter().map(|&i| &self.data[i]).collect();
            let penalty = self.model.regularization();
            let loss = self.model.train_step(
                &batch,
                &self.weights,
                &mut self.optimizer,
                lr,
                self.fine_tune_words,
                &mut self.rng,
            )?;
            total += loss * batch.len() as f64;
            data_total += (loss - penalty) * batch.len() as f64;
        }
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            mean_loss: total / self.data.len() as f64,
            mean_data_loss: data_total / self.data.len() as f64,
        };
        log::info!(
            "{} epoch {epoch}: lr {lr:.3e}, loss {:.5}",
            self.model.arch(),
            stats.mean_loss
        );
        self.history.push(stats);
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn into_parts(self) -> (Classifier, Vec<EpochStats>) {
        (self.model, self.history)
    }
}

/// Fresh model for `spec` with all randomness drawn from `seed`.
pub fn init_model(
    spec: &ModelSpec,
    words: EmbeddingTable,
    sizes: InputSizes,
    seed: u64,
) -> Classifier {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
    Classifier::new(spec.arch, &spec.embedding, &spec.cnn, &spec.rnn, words, sizes, &mut rng)
}

/// Runs `options.epochs` full epochs. With zero epochs the initialized
/// model is returned untouched.
pub fn train_model(
    spec: &ModelSpec,
    words: EmbeddingTable,
    sizes: InputSizes,
    data: &[EncodedExample],
    weights: ClassWeights,
    options: &TrainOptions,
) -> Result<(Classifier, Vec<EpochStats>)> {
    let model = init_model(spec, words, sizes, options.seed);
    let mut trainer = Trainer::new(model, data, weights, options.clone(), spec.embedding.fine_tune_words)?;
    for _ in 0..options.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.into_parts())
}

/// Fraction of labeled examples whose argmax matches the label.
pub fn accuracy(model: &Classifier, data: &[EncodedExample]) -> f64 {
    let labeled: Vec<EncodedExample> = data.iter().filter(|e| e.label.is_some()).cloned().collect();
    if labeled.is_empty() {
        return 0.0;
    }
    let probs = model.predict_proba(&labeled);
    let hits = probs
        .iter()
        .zip(&labeled)
        .filter(|(p, e)| Some(p.argmax()) == e.label)
        .count();
    hits as f64 / labeled.len() as f64
}

/// Per-run record written next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub arch: Arch,
    pub seed: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub vocab_hash: String,
    pub examples: usize,
    pub epochs: Vec<EpochStats>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Provenance, RelationInstance, RelationKind};

    fn ex(label: usize) -> EncodedExample {
        EncodedExample {
            word_ids: vec![label; 3],
            pos_ids: vec![0; 3],
            relpos1_ids: vec![0; 3],
            relpos2_ids: vec![0; 3],
            label: Some(label),
            length: 3,
        }
    }

    #[test]
    fn upsample_counts() {
        let mut data: Vec<_> = (0..100).map(|i| ex(i % 3)).collect();
        data.extend((0..100).map(|_| ex(11)));
        let out = upsample(&data, 1.0, 11, 1).unwrap();
        assert_eq!(out.len(), 200);

        let mut data: Vec<_> = (0..20).map(|i| ex(i % 2)).collect();
        data.extend((0..820).map(|_| ex(11)));
        let out = upsample(&data, 1.0, 11, 1).unwrap();
        let neg = out.iter().filter(|e| e.label == Some(11)).count();
        assert_eq!((out.len() - neg, neg), (820, 820));

        // already over-represented positives are kept as they are
        let out = upsample(&data, 0.01, 11, 1).unwrap();
        assert_eq!(out.len(), 840);
        assert!(upsample(&data[20..], 1.0, 11, 1).is_err());
        assert!(upsample(&data[..20], 1.0, 11, 1).is_err());
    }

    #[test]
    fn upsample_keeps_positive_proportions() {
        // 3:1 split among 40 positives, grown to 4000
        let mut data: Vec<_> = (0..40).map(|i| ex(usize::from(i % 4 == 0))).collect();
        data.extend((0..4000).map(|_| ex(11)));
        let out = upsample(&data, 1.0, 11, 9).unwrap();
        let ones = out.iter().filter(|e| e.label == Some(1)).count() as f64;
        let zeros = out.iter().filter(|e| e.label == Some(0)).count() as f64;
        let n = ones + zeros;
        let (e1, e0) = (n * 0.25, n * 0.75);
        let chi2 = (ones - e1).powi(2) / e1 + (zeros - e0).powi(2) / e0;
        // 1 degree of freedom, p = 0.001
        assert!(chi2 < 10.83, "chi2 = {chi2}");
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_schedule(0.01, 0, 25), 0.01);
        assert_eq!(lr_schedule(0.01, 24, 25), 0.01);
        assert_eq!(lr_schedule(0.01, 25, 25), 0.005);
        assert_eq!(lr_schedule(0.01, 3, 1), 0.01 * 0.5 * 0.5 * 0.5);
        assert_eq!(lr_schedule(0.01, 3, 1), 0.00125);
    }

    fn dataset(docs: usize) -> Dataset {
        let documents: Vec<Document> = (0..docs)
            .map(|i| {
                let id = format!("D{i}");
                Document::from_text(
                    &id,
                    "alpha beta gamma delta",
                    &[(&format!("D{i}.1"), 0, 0), (&format!("D{i}.2"), 3, 3)],
                )
            })
            .collect();
        let instances = (0..docs)
            .map(|i| {
                RelationInstance::labeled(
                    &format!("D{i}"),
                    &format!("D{i}.1"),
                    &format!("D{i}.2"),
                    RelationKind::Usage,
                    false,
                )
            })
            .collect();
        Dataset::new(documents, instances, Provenance::Merged).unwrap()
    }

    #[test]
    fn folds_partition_documents() {
        let data = dataset(10);
        let folds = kfold(&data, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = HashSet::new();
        for f in &folds {
            assert_eq!(f.validation.documents().len(), 2);
            assert_eq!(f.train.documents().len(), 8);
            for d in f.validation.documents() {
                assert!(seen.insert(d.doc_id.clone()));
                assert!(f.train.document(&d.doc_id).is_none());
            }
        }
        assert_eq!(seen.len(), 10);
        assert_eq!(folds, kfold(&data, 5, 3).unwrap());
        assert!(kfold(&dataset(3), 5, 3).is_err());
        assert!(kfold(&data, 1, 3).is_err());
        let sizes: Vec<usize> = kfold(&dataset(7), 3, 0)
            .unwrap()
            .iter()
            .map(|f| f.validation.documents().len())
            .collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn seeds_are_named() {
        assert_eq!(derive_seed(7, "member-0"), derive_seed(7, "member-0"));
        assert_ne!(derive_seed(7, "member-0"), derive_seed(7, "member-1"));
        assert_ne!(derive_seed(7, "member-0"), derive_seed(8, "member-0"));
    }

    #[test]
    fn batches_cover_data_once() {
        let data: Vec<_> = (0..130).map(|i| ex(i % 5)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = epoch_batches(&data, 64, &mut rng);
        assert_eq!(batches.len(), 3);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..130).collect::<Vec<_>>());
    }
}
