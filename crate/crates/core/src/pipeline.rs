//! End-to-end flows: preprocess, train an ensemble, predict with blending
//! and postprocessing, score, cross-validate and sweep.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, PhaseConfig};
use crate::corpus::{candidate_pairs, Dataset, Document, RelationInstance, RelationKind};
use crate::ensemble::{average, blend_all};
use crate::error::{read_to_string, write_string, Error, Result};
use crate::eval::{classification_report, extraction_report, Report};
use crate::features::{
    build_vocab, load_embeddings, EmbeddingTable, EncodedExample, Encoder, Vocabulary, POS_VOCAB_SIZE,
};
use crate::model::{Arch, Checkpoint, Classifier, InputSizes, ProbDist};
use crate::postprocess::{fix_symmetry, resolve_conflicts, Candidate};
use crate::preprocess::{apply_reversal, clean_tokens, crop_and_tag, flatten_entities, LabelScheme, ProcessedExample};
use crate::training::{
    class_counts, derive_seed, hash_json, kfold, smoothed_class_weights, train_model, upsample, ModelSpec,
    RunManifest, TrainOptions,
};

pub const MODEL_FORMAT: &str = "scirel-model";
pub const MODEL_FILE: &str = "model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subtask {
    /// Classify given pairs into six relation kinds.
    #[serde(rename = "1")]
    Classification,
    /// Find related pairs and classify them.
    #[serde(rename = "2")]
    Extraction,
}

impl Subtask {
    pub fn scheme(self) -> LabelScheme {
        match self {
            Subtask::Classification => LabelScheme::Six,
            Subtask::Extraction => LabelScheme::Twelve,
        }
    }

    pub fn phase(self, config: &Config) -> &PhaseConfig {
        match self {
            Subtask::Classification => &config.training.subtask1,
            Subtask::Extraction => &config.training.subtask2,
        }
    }
}

impl FromStr for Subtask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Subtask::Classification),
            "2" => Ok(Subtask::Extraction),
            _ => Err(Error::invalid(format!("subtask must be 1 or 2, got {s:?}"))),
        }
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subtask::Classification => "1",
            Subtask::Extraction => "2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Cnn,
    Rnn,
    /// Members alternate between CNN and RNN; predictions are blended.
    Ensemble,
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Architecture::Cnn),
            "rnn" => Ok(Architecture::Rnn),
            "ensemble" => Ok(Architecture::Ensemble),
            _ => Err(Error::invalid(format!("unknown architecture {s:?}"))),
        }
    }
}

/// Architecture of each of `n` members. A mixed ensemble of one member is a
/// single CNN.
pub fn member_archs(choice: Architecture, n: usize) -> Vec<Arch> {
    (0..n)
        .map(|i| match choice {
            Architecture::Cnn => Arch::Cnn,
            Architecture::Rnn => Arch::Rnn,
            Architecture::Ensemble if i % 2 == 0 => Arch::Cnn,
            Architecture::Ensemble => Arch::Rnn,
        })
        .collect()
}

/// Flattens nested entities and cleans tokens. Instances that lose an
/// entity to flattening are dropped with a warning.
pub fn prepare(data: &Dataset) -> Result<Dataset> {
    let docs: Vec<Document> = data
        .documents()
        .iter()
        .map(|d| clean_tokens(&flatten_entities(d)))
        .collect();
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let instances = data
        .instances()
        .iter()
        .filter(|i| {
            let keep = by_id
                .get(i.doc_id.as_str())
                .is_some_and(|d| d.entity(&i.e1).is_some() && d.entity(&i.e2).is_some());
            if !keep {
                log::warn!("dropping {}: an entity did not survive flattening", i.to_line());
            }
            keep
        })
        .cloned()
        .collect();
    Dataset::new(docs, instances, data.provenance())
}

fn pair_key(inst: &RelationInstance) -> (String, String, String) {
    let (a, b) = if inst.e1 <= inst.e2 { (&inst.e1, &inst.e2) } else { (&inst.e2, &inst.e1) };
    (inst.doc_id.clone(), a.clone(), b.clone())
}

/// Instances a subtask looks at. Subtask 1 uses the given pairs; subtask 2
/// enumerates candidates, carrying over gold labels where present, and
/// also keeps gold pairs the candidate filter misses when `keep_gold`.
pub fn task_instances(data: &Dataset, subtask: Subtask, max_distance: usize, keep_gold: bool) -> Vec<RelationInstance> {
    match subtask {
        Subtask::Classification => data.instances().to_vec(),
        Subtask::Extraction => {
            let gold: HashMap<_, &RelationInstance> = data.instances().iter().map(|i| (pair_key(i), i)).collect();
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            for doc in data.documents() {
                for c in candidate_pairs(doc, max_distance) {
                    let key = pair_key(&c);
                    out.push(gold.get(&key).map_or(c, |g| (*g).clone()));
                    seen.insert(key);
                }
            }
            if keep_gold {
                out.extend(data.instances().iter().filter(|i| !seen.contains(&pair_key(i))).cloned());
            }
            out
        }
    }
}

/// Cropped, tagged and, for subtask 1, reversal-normalized examples.
pub fn examples(data: &Dataset, instances: &[RelationInstance], subtask: Subtask) -> Result<Vec<ProcessedExample>> {
    instances
        .iter()
        .map(|inst| {
            let doc = data
                .document(&inst.doc_id)
                .ok_or_else(|| Error::Validation(format!("unknown document {}", inst.doc_id)))?;
            let ex = crop_and_tag(doc, inst)?;
            Ok(match subtask {
                Subtask::Classification if inst.reverse => apply_reversal(&ex),
                _ => ex,
            })
        })
        .collect()
}

fn encode_all(enc: &Encoder, examples: &[ProcessedExample], subtask: Subtask) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|e| {
            let mut x = enc.encode(e)?;
            if subtask == Subtask::Extraction && x.label.is_none() {
                x.label = Some(LabelScheme::NONE_INDEX);
            }
            Ok(x)
        })
        .collect()
}

fn unlabeled(examples: &[ProcessedExample]) -> Vec<ProcessedExample> {
    examples
        .iter()
        .cloned()
        .map(|mut e| {
            e.kind = None;
            e
        })
        .collect()
}

/// Runs `f` for every member index, on a pool of `workers` threads when
/// more than one is asked for. Results come back in index order.
fn for_members<T: Send>(workers: usize, n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberInfo {
    pub checkpoint: String,
    pub run: RunManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub subtask: Subtask,
    pub scheme: LabelScheme,
    pub config: Config,
    pub config_hash: String,
    pub vocab: Vocabulary,
    /// Training label counts per class, used to rank conflicting relations.
    pub class_frequencies: Vec<usize>,
    pub members: Vec<MemberInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub manifest: ModelManifest,
    pub members: Vec<Classifier>,
}

impl TrainedModel {
    pub fn encoder(&self) -> Encoder {
        let f = &self.manifest.config.features;
        Encoder {
            vocab: self.manifest.vocab.clone(),
            relpos_clip: f.relpos_clip,
            scheme: self.manifest.scheme,
            fallback_pos: f.fallback_pos,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let hash = self.manifest.vocab.hash();
        for (m, info) in self.members.iter().zip(&self.manifest.members) {
            m.to_checkpoint(&hash).save(&dir.join(&info.checkpoint))?;
        }
        write_string(&dir.join(MODEL_FILE), &serde_json::to_string_pretty(&self.manifest)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: ModelManifest = serde_json::from_str(&read_to_string(&dir.join(MODEL_FILE))?)?;
        if manifest.format != MODEL_FORMAT || manifest.version != 1 {
            return Err(Error::Validation(format!(
                "{}: not a version 1 {MODEL_FORMAT} manifest",
                dir.display()
            )));
        }
        let hash = manifest.vocab.hash();
        let members = manifest
            .members
            .iter()
            .map(|info| {
                let ck = Checkpoint::load(&dir.join(&info.checkpoint))?;
                if ck.vocab_hash != hash {
                    return Err(Error::Validation(format!(
                        "{} was trained with a different vocabulary",
                        info.checkpoint
                    )));
                }
                Classifier::from_checkpoint(&ck)
            })
            .collect::<Result<_>>()?;
        Ok(TrainedModel { manifest, members })
    }
}

/// Adds self-training relations to a dataset. Pairs already annotated keep
/// their gold label; unlabeled extras are ignored.
pub fn with_extra_relations(data: &Dataset, extra: &[RelationInstance]) -> Result<Dataset> {
    let known: HashSet<_> = data.instances().iter().map(pair_key).collect();
    let mut instances = data.instances().to_vec();
    let mut added = HashSet::new();
    for inst in extra.iter().filter(|i| i.kind.is_some()) {
        let key = pair_key(inst);
        if !known.contains(&key) && added.insert(key) {
            instances.push(inst.clone());
        }
    }
    log::info!("self-training adds {} relations", added.len());
    data.with_instances(instances)
}

/// Trains `config.training.ensemble_size` members on `data`.
pub fn train(config: &Config, subtask: Subtask, choice: Architecture, data: &Dataset) -> Result<TrainedModel> {
    config.validate()?;
    let scheme = subtask.scheme();
    let prepared = prepare(data)?;
    let insts = task_instances(&prepared, subtask, config.features.max_distance, true);
    let processed = examples(&prepared, &insts, subtask)?;
    if processed.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    let vocab = build_vocab(&processed, config.features.min_count);
    let enc = Encoder {
        vocab: vocab.clone(),
        relpos_clip: config.features.relpos_clip,
        scheme,
        fallback_pos: config.features.fallback_pos,
    };
    let encoded = encode_all(&enc, &processed, subtask)?;
    let classes = scheme.num_classes();
    let sizes = InputSizes {
        vocab: vocab.len(),
        pos: POS_VOCAB_SIZE,
        relpos: enc.relpos_vocab_size(),
        classes,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "embeddings"));
    let words = match &config.features.word_vectors {
        Some(path) => load_embeddings(path, &vocab, config.embedding.word_dim, &mut rng)?,
        None => EmbeddingTable::random(vocab.len(), config.embedding.word_dim, &mut rng),
    };
    let class_frequencies = class_counts(&encoded, classes);
    let config_hash = config.hash();
    let vocab_hash = vocab.hash();
    let phase = subtask.phase(config);
    let archs = member_archs(choice, config.training.ensemble_size);
    log::info!(
        "training {} members on {} examples ({} classes, vocab {})",
        archs.len(),
        encoded.len(),
        classes,
        vocab.len()
    );

    let trained = for_members(config.workers, archs.len(), |i| {
        let seed = derive_seed(config.seed, &format!("member-{i}"));
        let data = match scheme.negative_index() {
            Some(neg) if config.training.upsample_ratio > 0.0 => {
                if encoded.iter().any(|e| e.label == Some(neg)) {
                    upsample(&encoded, config.training.upsample_ratio, neg, derive_seed(seed, "upsample"))?
                } else {
                    log::warn!("no negative candidates; skipping upsampling");
                    encoded.clone()
                }
            }
            _ => encoded.clone(),
        };
        let spec = ModelSpec {
            arch: archs[i],
            embedding: config.embedding.clone(),
            cnn: config.cnn.clone(),
            rnn: config.rnn.clone(),
        };
        let options = TrainOptions {
            epochs: phase.epochs,
            batch_size: config.training.batch_size,
            learning_rate: config.training.learning_rate,
            halve_every: phase.halve_every,
            seed,
            ..TrainOptions::default()
        };
        let weights = smoothed_class_weights(&data, classes);
        let (model, history) = train_model(&spec, words.clone(), sizes, &data, weights, &options)?;
        log::info!("member {i} ({}) done", archs[i]);
        let run = RunManifest {
            arch: archs[i],
            seed,
            config_hash: config_hash.clone(),
            data_hash: hash_json(&data),
            vocab_hash: vocab_hash.clone(),
            examples: data.len(),
            epochs: history,
        };
        Ok((model, MemberInfo { checkpoint: format!("member-{i:02}.json"), run }))
    })?;
    let (members, infos): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    Ok(TrainedModel {
        manifest: ModelManifest {
            format: MODEL_FORMAT.into(),
            version: 1,
            subtask,
            scheme,
            config: config.clone(),
            config_hash,
            vocab,
            class_frequencies,
            members: infos,
        },
        members,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Final relations after postprocessing.
    pub relations: Vec<RelationInstance>,
    /// Every scored pair as `e1,e2`, aligned with `probabilities`.
    pub ids: Vec<String>,
    /// Blended ensemble distributions before postprocessing.
    pub probabilities: Vec<ProbDist>,
}

/// Mean distribution per architecture, blended by inter-entity length
/// when both architectures are present.
pub fn ensemble_probabilities(
    model: &TrainedModel,
    encoded: &[EncodedExample],
    lengths: &[usize],
) -> Result<Vec<ProbDist>> {
    let workers = model.manifest.config.workers;
    let per_member = for_members(workers, model.members.len(), |i| Ok(model.members[i].predict_proba(encoded)))?;
    let mut by_arch: BTreeMap<Arch, Vec<&Vec<ProbDist>>> = BTreeMap::new();
    for (m, p) in model.members.iter().zip(&per_member) {
        by_arch.entry(m.arch()).or_default().push(p);
    }
    let means: BTreeMap<Arch, Vec<ProbDist>> = by_arch
        .into_iter()
        .map(|(arch, runs)| {
            let avg = (0..encoded.len())
                .map(|j| average(&runs.iter().map(|r| r[j].clone()).collect::<Vec<_>>()))
                .collect::<Result<Vec<_>>>()?;
            Ok((arch, avg))
        })
        .collect::<Result<_>>()?;
    match (means.get(&Arch::Cnn), means.get(&Arch::Rnn)) {
        (Some(c), Some(r)) => blend_all(c, r, lengths),
        (Some(only), None) | (None, Some(only)) => Ok(only.clone()),
        (None, None) => Err(Error::invalid("model has no members")),
    }
}

/// Predicts relations for `data`. Subtask 1 labels the pairs listed in
/// `data`; existing labels are ignored. Subtask 2 scores every candidate
/// pair and keeps a conflict-free subset.
pub fn predict(model: &TrainedModel, data: &Dataset) -> Result<Prediction> {
    let m = &model.manifest;
    let subtask = m.subtask;
    let prepared = prepare(data)?;
    let insts = task_instances(&prepared, subtask, m.config.features.max_distance, false);
    let processed = unlabeled(&examples(&prepared, &insts, subtask)?);
    let enc = model.encoder();
    let encoded = processed.iter().map(|e| enc.encode(e)).collect::<Result<Vec<_>>>()?;
    let lengths: Vec<usize> = processed.iter().map(|e| e.original_length).collect();
    let probabilities = if encoded.is_empty() {
        Vec::new()
    } else {
        ensemble_probabilities(model, &encoded, &lengths)?
    };
    let ids = insts.iter().map(|i| format!("{},{}", i.e1, i.e2)).collect();
    let relations = match subtask {
        Subtask::Classification => insts
            .iter()
            .zip(&processed)
            .zip(&probabilities)
            .map(|((inst, ex), p)| {
                let kind = RelationKind::ALL[fix_symmetry(p, LabelScheme::Six, ex.reversed)];
                RelationInstance::labeled(&inst.doc_id, &inst.e1, &inst.e2, kind, inst.reverse && !kind.is_symmetric())
            })
            .collect(),
        Subtask::Extraction => {
            let cands: Vec<Candidate> = insts
                .iter()
                .zip(&processed)
                .zip(&probabilities)
                .map(|((inst, ex), p)| {
                    let class = fix_symmetry(p, m.scheme, false);
                    Candidate {
                        instance: RelationInstance::unlabeled(&inst.doc_id, &inst.e1, &inst.e2),
                        class,
                        probability: p.as_slice()[class],
                        length: ex.original_length,
                    }
                })
                .collect();
            let seed = derive_seed(m.config.seed, "conflicts");
            resolve_conflicts(&cands, &m.class_frequencies, m.scheme.negative_index(), seed)
                .into_iter()
                .filter_map(|c| {
                    let label = m.scheme.decode(c.class)?;
                    let i = c.instance;
                    Some(RelationInstance::labeled(&i.doc_id, &i.e1, &i.e2, label.kind, label.reverse))
                })
                .collect()
        }
    };
    Ok(Prediction {
        relations,
        ids,
        probabilities,
    })
}

pub fn evaluate(subtask: Subtask, gold: &[RelationInstance], pred: &[RelationInstance]) -> Report {
    match subtask {
        Subtask::Classification => classification_report(gold, pred),
        Subtask::Extraction => extraction_report(gold, pred),
    }
}

/// The score cross-validation and sweeps rank by: macro-F1 for subtask 1,
/// extraction + classification F1 for subtask 2.
pub fn headline(subtask: Subtask, report: &Report) -> f64 {
    match (subtask, &report.extraction) {
        (Subtask::Extraction, Some(x)) => x.combined.f1,
        _ => report.metrics.macro_f1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_documents: usize,
    pub validation_documents: usize,
    pub report: Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub subtask: Subtask,
    pub config_hash: String,
    pub folds: Vec<FoldResult>,
    pub mean_macro_f1: f64,
    pub mean_micro_f1: f64,
    pub mean_headline: f64,
    pub std_headline: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Document-grouped k-fold cross-validation with `config.training.folds`
/// folds split by `fold_seed`.
pub fn cross_validate(
    config: &Config,
    subtask: Subtask,
    choice: Architecture,
    data: &Dataset,
    fold_seed: u64,
) -> Result<CvSummary> {
    let folds = kfold(data, config.training.folds, fold_seed)?;
    let mut results = Vec::with_capacity(folds.len());
    for (k, fold) in folds.iter().enumerate() {
        let model = train(config, subtask, choice, &fold.train)?;
        let pred = predict(&model, &fold.validation)?;
        let gold = prepare(&fold.validation)?;
        let report = evaluate(subtask, gold.instances(), &pred.relations);
        log::info!("fold {k}: score {:.4}", headline(subtask, &report));
        results.push(FoldResult {
            fold: k,
            train_documents: fold.train.documents().len(),
            validation_documents: fold.validation.documents().len(),
            report,
        });
    }
    let pick = |f: fn(&FoldResult) -> f64| results.iter().map(f).collect::<Vec<_>>();
    let (mean_headline, std_headline) = mean_std(
        &results.iter().map(|r| headline(subtask, &r.report)).collect::<Vec<_>>(),
    );
    Ok(CvSummary {
        subtask,
        config_hash: config.hash(),
        mean_macro_f1: mean_std(&pick(|r| r.report.metrics.macro_f1)).0,
        mean_micro_f1: mean_std(&pick(|r| r.report.metrics.micro.f1)).0,
        mean_headline,
        std_headline,
        folds: results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub param: String,
    pub value: f64,
    pub config_hash: String,
    pub mean_score: f64,
    pub std_score: f64,
}

/// Cross-validates one config per value of `param`.
pub fn sweep(
    config: &Config,
    subtask: Subtask,
    choice: Architecture,
    data: &Dataset,
    param: &str,
    values: &[f64],
    fold_seed: u64,
) -> Result<Vec<SweepPoint>> {
    values
        .iter()
        .map(|&v| {
            let mut c = config.clone();
            c.set_number(param, v)?;
            let cv = cross_validate(&c, subtask, choice, data, fold_seed)?;
            Ok(SweepPoint {
                param: param.to_owned(),
                value: v,
                config_hash: cv.config_hash,
                mean_score: cv.mean_headline,
                std_score: cv.std_headline,
            })
        })
        .collect()
}

pub fn sweep_table(points: &[SweepPoint]) -> String {
    let mut out = String::from("param\tvalue\tmean\tstd\tconfig_hash\n");
    for p in points {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{}\n",
            p.param, p.value, p.mean_score, p.std_score, p.config_hash
        ));
    }
    out
}
