//! Small generated corpora for tests, demos and smoke runs. Relation type
//! is signalled by the connecting phrase, so models can actually learn it.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Dataset, Document, Entity, Provenance, RelationInstance, RelationKind};
use crate::error::Result;
use crate::preprocess::{crop_and_tag, ProcessedExample};

const NOUNS: &[&str] = &[
    "parser",
    "corpus",
    "word embeddings",
    "machine translation",
    "speech recognition",
    "tagger",
    "annotation scheme",
    "semantic roles",
    "dependency trees",
    "language model",
    "training data",
    "feature set",
    "neural network",
    "evaluation metric",
    "question answering",
    "lexicon",
    "grammar",
    "sentiment analysis",
    "named entities",
    "information retrieval",
    "summarization system",
    "alignment model",
    "error rate",
    "topic model",
    "discourse structure",
    "morphological analyzer",
    "search engine",
    "treebank",
];

/// Interior phrases per relation; the second list is for REVERSE.
fn phrases(kind: RelationKind) -> (&'static [&'static str], &'static [&'static str]) {
    match kind {
        RelationKind::Usage => (
            &["is used for", "is applied to", "is employed in the task of"],
            &["relies on", "is performed with", "benefits from"],
        ),
        RelationKind::Result => (
            &["yields", "leads to better", "improves"],
            &["is obtained by", "results from"],
        ),
        RelationKind::ModelFeature => (
            &["is characterized by", "has the property of"],
            &["is a property of", "is an attribute of the"],
        ),
        RelationKind::PartWhole => (
            &["is part of", "belongs to"],
            &["contains", "includes a"],
        ),
        RelationKind::Topic => (
            &["describes", "presents a study of"],
            &["is discussed in", "is the subject of"],
        ),
        RelationKind::Compare => (&["is compared with", "outperforms", "is contrasted with"], &[]),
    }
}

const OPENERS: &[&str] = &["We show that the", "In this paper the", "Our experiments suggest the", "The"];
const FILLERS: &[&str] = &[
    "and the",
    "are studied together with the",
    "appear in the same section as the",
];

struct Builder {
    tokens: Vec<String>,
    entities: Vec<Entity>,
    doc_id: String,
}

impl Builder {
    fn words(&mut self, text: &str) {
        self.tokens.extend(text.split_whitespace().map(String::from));
    }

    fn entity(&mut self, text: &str) -> String {
        let id = format!("{}.{}", self.doc_id, self.entities.len() + 1);
        let start = self.tokens.len();
        self.words(text);
        self.entities.push(Entity::new(id.clone(), start, self.tokens.len() - 1));
        id
    }
}

/// A corpus of `docs` abstracts, each with a title, two to four relation
/// sentences and one sentence whose entity pair is unrelated. Some
/// sentences carry parenthesized asides and numbers for the cleaner.
pub fn corpus(docs: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut documents = Vec::with_capacity(docs);
    let mut instances = Vec::new();
    for d in 0..docs {
        let mut b = Builder {
            tokens: Vec::new(),
            entities: Vec::new(),
            doc_id: format!("S{:02}-{:04}", d % 100, 1000 + d),
        };
        let t1 = NOUNS.choose(&mut rng).expect("nouns");
        let t2 = NOUNS.choose(&mut rng).expect("nouns");
        b.words(&format!("Improving {t1} with {t2}"));
        let title_len = b.tokens.len();
        let relations = rng.random_range(2..=4);
        let unrelated_at = rng.random_range(0..=relations);
        for s in 0..=relations {
            let opener = OPENERS.choose(&mut rng).expect("openers");
            b.words(opener);
            let a_text = *NOUNS.choose(&mut rng).expect("nouns");
            let a = b.entity(a_text);
            if rng.random_bool(0.2) {
                b.words(&format!("( {} % )", rng.random_range(10..99)));
            }
            if s == unrelated_at {
                b.words(FILLERS.choose(&mut rng).expect("fillers"));
                let c = NOUNS.iter().filter(|n| **n != a_text).collect::<Vec<_>>();
                b.entity(c.choose(&mut rng).expect("nouns"));
                b.words(&format!("in {} settings .", rng.random_range(2..9)));
                continue;
            }
            let kind = *RelationKind::ALL.choose(&mut rng).expect("kinds");
            let (fwd, rev) = phrases(kind);
            let reverse = !rev.is_empty() && rng.random_bool(0.4);
            b.words(if reverse { rev } else { fwd }.choose(&mut rng).expect("phrases"));
            let c = NOUNS.iter().filter(|n| **n != a_text).collect::<Vec<_>>();
            let e = b.entity(c.choose(&mut rng).expect("nouns"));
            b.words(".");
            instances.push(RelationInstance::labeled(&b.doc_id, &a, &e, kind, reverse));
        }
        let mut doc = Document::new(b.doc_id, b.tokens, b.entities);
        doc.title_len = title_len;
        documents.push(doc);
    }
    Dataset::new(documents, instances, Provenance::Generated)
}

/// `n` unreversed examples over the first `classes` relation kinds, with a
/// per-class connecting phrase and random entity nouns.
pub fn classification_fixture(n: usize, classes: usize, seed: u64) -> Vec<ProcessedExample> {
    assert!((1..=RelationKind::ALL.len()).contains(&classes));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let kind = RelationKind::ALL[i % classes];
            let mut b = Builder {
                tokens: Vec::new(),
                entities: Vec::new(),
                doc_id: format!("F{i}"),
            };
            let a = b.entity(NOUNS.choose(&mut rng).expect("nouns"));
            b.words(phrases(kind).0.choose(&mut rng).expect("phrases"));
            let e = b.entity(NOUNS.choose(&mut rng).expect("nouns"));
            let inst = RelationInstance::labeled(&b.doc_id, &a, &e, kind, false);
            let doc = Document::new(b.doc_id.clone(), b.tokens, b.entities);
            crop_and_tag(&doc, &inst).expect("generated spans are ordered and disjoint")
        })
        .collect()
}

/// Every noun phrase as one sentence per line, plus glue text, suitable as
/// a tiny language-model corpus.
pub fn lm_corpus(dataset: &Dataset) -> Vec<Vec<String>> {
    dataset
        .documents()
        .iter()
        .flat_map(|d| d.sentences().into_iter().map(move |r| d.tokens[r].to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_abstracts, parse_relations, write_abstracts, write_relations};

    #[test]
    fn corpus_is_deterministic_and_parses() {
        let a = corpus(50, 1).unwrap();
        assert_eq!(a, corpus(50, 1).unwrap());
        assert_eq!(a.documents().len(), 50);
        assert!(a.instances().len() >= 100);
        let text = write_abstracts(a.documents());
        let docs = parse_abstracts(&text).unwrap();
        assert_eq!(docs, a.documents());
        let rels = parse_relations(&write_relations(a.instances()), &docs).unwrap();
        assert_eq!(rels, a.instances());
        for inst in a.instances() {
            let d = a.document(&inst.doc_id).unwrap();
            let (x, y) = (d.entity(&inst.e1).unwrap(), d.entity(&inst.e2).unwrap());
            assert_eq!(d.sentence_of(x.start), d.sentence_of(y.end));
        }
    }

    #[test]
    fn fixture_shape() {
        let f = classification_fixture(20, 3, 0);
        assert_eq!(f.len(), 20);
        assert!(f.iter().all(|e| e.marker_count() == 4 && e.kind.unwrap().index() < 3));
    }
}
