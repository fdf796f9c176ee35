//! Synthetic training sentences: test-set entity pairs spliced around the
//! inter-entity text of labeled training examples, kept only when the
//! language model finds the result fluent enough.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Entity, RelationInstance};
use crate::ngram_lm::NGramModel;
use crate::preprocess::{ProcessedExample, ENTITY_MARKER};
use crate::training::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Minimum total log10 probability of the marker-free sentence.
    pub threshold: f64,
    /// Minimum number of tokens between the entities of a template.
    pub min_interior: usize,
    pub lm_order: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            threshold: -21.0,
            min_interior: 5,
            lm_order: 3,
        }
    }
}

/// Word tokens of the two entities of an unannotated pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityPair {
    pub first: Vec<String>,
    pub second: Vec<String>,
}

impl EntityPair {
    /// Entities in text order from an unreversed example.
    pub fn from_example(ex: &ProcessedExample) -> Self {
        let (a, b) = if ex.e1_span.start <= ex.e2_span.start {
            (&ex.e1_span, &ex.e2_span)
        } else {
            (&ex.e2_span, &ex.e1_span)
        };
        EntityPair {
            first: ex.tokens[a.clone()].to_vec(),
            second: ex.tokens[b.clone()].to_vec(),
        }
    }
}

/// Tokens with the `<e>` markers removed.
pub fn strip_markers(tokens: &[String]) -> Vec<&str> {
    tokens
        .iter()
        .map(String::as_str)
        .filter(|t| *t != ENTITY_MARKER)
        .collect()
}

fn splice(template: &ProcessedExample, pair: &EntityPair, index: usize) -> ProcessedExample {
    let interior = template.interior();
    let m = || ENTITY_MARKER.to_owned();
    let mut tokens = Vec::with_capacity(pair.first.len() + interior.len() + pair.second.len() + 4);
    tokens.push(m());
    tokens.extend(pair.first.iter().cloned());
    tokens.push(m());
    tokens.extend(interior.iter().cloned());
    tokens.push(m());
    tokens.extend(pair.second.iter().cloned());
    tokens.push(m());
    let e1_span = 1..1 + pair.first.len();
    let e2_start = e1_span.end + 2 + interior.len();
    let doc_id = format!("GEN-{index}");
    ProcessedExample {
        e1: format!("{doc_id}.1"),
        e2: format!("{doc_id}.2"),
        doc_id,
        tokens,
        pos: None,
        e1_span,
        e2_span: e2_start..e2_start + pair.second.len(),
        kind: template.kind,
        reverse: template.reverse,
        reversed: false,
        original_length: interior.len(),
    }
}

/// One candidate per eligible template (labeled, unreversed, interior of at
/// least `min_interior` tokens), with its test pair drawn from a stream
/// seeded by the template index. Candidates scoring below the threshold
/// are dropped. Output follows template order.
pub fn generate(
    templates: &[ProcessedExample],
    test_pairs: &[EntityPair],
    lm: &NGramModel,
    config: &AugmentConfig,
    seed: u64,
) -> Vec<ProcessedExample> {
    if test_pairs.is_empty() {
        return Vec::new();
    }
    templates
        .par_iter()
        .enumerate()
        .filter(|(_, t)| t.kind.is_some() && !t.reversed && t.interior().len() >= config.min_interior)
        .filter_map(|(i, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("template-{i}")));
            let pair = test_pairs.choose(&mut rng).expect("non-empty pool");
            let ex = splice(t, pair, i);
            let score = lm.log_prob(&strip_markers(&ex.tokens));
            log::debug!("template {i}: score {score:.2} for {}", ex.tagged_sentence());
            (score >= config.threshold).then_some(ex)
        })
        .collect()
}

/// Generated samples as one document per sentence plus its relation, ready
/// for the regular abstract and relation file writers.
pub fn to_corpus(samples: &[ProcessedExample]) -> (Vec<Document>, Vec<RelationInstance>) {
    let mut docs = Vec::with_capacity(samples.len());
    let mut rels = Vec::with_capacity(samples.len());
    for s in samples {
        let words: Vec<String> = strip_markers(&s.tokens).into_iter().map(String::from).collect();
        let a = s.e1_span.len();
        let b = s.e2_span.len();
        let n = words.len();
        let entities = vec![
            Entity::new(s.e1.clone(), 0, a - 1),
            Entity::new(s.e2.clone(), n - b, n - 1),
        ];
        docs.push(Document::new(s.doc_id.clone(), words, entities));
        rels.push(RelationInstance {
            doc_id: s.doc_id.clone(),
            e1: s.e1.clone(),
            e2: s.e2.clone(),
            kind: s.kind,
            reverse: s.reverse,
        });
    }
    (docs, rels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RelationInstance, RelationKind};
    use crate::ngram_lm::train_lm;
    use crate::preprocess::crop_and_tag;

    fn example(text: &str, a: (usize, usize), b: (usize, usize)) -> ProcessedExample {
        let doc = Document::from_text("T", text, &[("T.1", a.0, a.1), ("T.2", b.0, b.1)]);
        let inst = RelationInstance::labeled("T", "T.1", "T.2", RelationKind::Usage, false);
        crop_and_tag(&doc, &inst).unwrap()
    }

    fn lm() -> NGramModel {
        let corpus = ["the use of probabilistic models", "predictive performance of models"];
        train_lm(corpus.iter().map(|s| s.split(' ').collect::<Vec<_>>()), 3).unwrap()
    }

    #[test]
    fn generated_sample_golden() {
        let template = example("methods involve the use of probabilistic generative models", (0, 0), (6, 7));
        let test = example("predictive performance of our models", (0, 1), (4, 4));
        let pairs = [EntityPair::from_example(&test)];
        let config = AugmentConfig {
            threshold: f64::NEG_INFINITY,
            ..AugmentConfig::default()
        };
        let out = generate(&[template], &pairs, &lm(), &config, 0);
        assert_eq!(out.len(), 1);
        assert_eq!(
            out[0].tagged_sentence(),
            "<e> predictive performance <e> involve the use of probabilistic <e> models <e>"
        );
        assert_eq!(out[0].kind, Some(RelationKind::Usage));
        assert_eq!(out[0].original_length, 5);
        assert_eq!(out[0].marker_count(), 4);
    }

    #[test]
    fn short_interior_skipped() {
        let template = example("a b c d e f", (0, 0), (5, 5));
        assert_eq!(template.interior().len(), 4);
        let pairs = [EntityPair {
            first: vec!["x".into()],
            second: vec!["y".into()],
        }];
        let config = AugmentConfig {
            threshold: f64::NEG_INFINITY,
            ..AugmentConfig::default()
        };
        assert!(generate(&[template], &pairs, &lm(), &config, 0).is_empty());
    }

    #[test]
    fn threshold_filters() {
        let template = example("methods involve the use of probabilistic generative models", (0, 0), (6, 7));
        let pairs = [EntityPair {
            first: vec!["x".into()],
            second: vec!["y".into()],
        }];
        let strict = AugmentConfig {
            threshold: 0.0,
            ..AugmentConfig::default()
        };
        assert!(generate(&[template], &pairs, &lm(), &strict, 0).is_empty());
    }

    #[test]
    fn corpus_round_trip_spans() {
        let template = example("methods involve the use of probabilistic generative models", (0, 0), (6, 7));
        let test = example("predictive performance of our models", (0, 1), (4, 4));
        let config = AugmentConfig {
            threshold: f64::NEG_INFINITY,
            ..AugmentConfig::default()
        };
        let out = generate(&[template], &[EntityPair::from_example(&test)], &lm(), &config, 0);
        let (docs, rels) = to_corpus(&out);
        let back = crop_and_tag(&docs[0], &rels[0]).unwrap();
        assert_eq!(back.tokens, out[0].tokens);
    }
}
