//! Vocabulary, pretrained vectors, and integer encoding of processed examples
//! into word, POS and two relative-position channels.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Document;
use crate::error::{read_to_string, Error, Result};
use crate::preprocess::{LabelScheme, ProcessedExample, ENTITY_MARKER, NUMBER_WILDCARD};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const MARKER_ID: usize = 2;
    pub const NUM_ID: usize = 3;
    pub const SPECIALS: [&'static str; 4] = [PAD, UNK, ENTITY_MARKER, NUMBER_WILDCARD];

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Exact match, then the lowercased form, then unknown.
    pub fn id(&self, token: &str) -> usize {
        self.index
            .get(token)
            .or_else(|| self.index.get(&token.to_lowercase()))
            .copied()
            .unwrap_or(Self::UNK_ID)
    }

    pub fn hash(&self) -> String {
        hash_lines(&self.tokens)
    }
}

pub(crate) fn hash_lines<S: AsRef<str>>(lines: &[S]) -> String {
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_ref().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Tokens seen at least `min_count` times, most frequent first (ties
/// alphabetical), after the four specials.
pub fn build_vocab(data: &[ProcessedExample], min_count: usize) -> Vocabulary {
    assert!(min_count >= 1, "min_count must be at least 1");
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for ex in data {
        for t in &ex.tokens {
            if !Vocabulary::SPECIALS.contains(&t.as_str()) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens = Vocabulary::SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t.to_owned()))
        .collect::<Vec<_>>();
    Vocabulary::from(tokens)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Array2<f64>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Every row drawn uniformly from `[-0.5/d, 0.5/d]`.
    pub fn random(rows: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let half = 0.5 / dim as f64;
        EmbeddingTable {
            matrix: Array2::from_shape_fn((rows, dim), |_| rng.random_range(-half..=half)),
        }
    }
}

/// Reads vectors in the word2vec text format: optional `count dim` header,
/// then `token v1 ... vd` per line.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<EmbeddingTable> {
    parse_embeddings(&read_to_string(path)?, vocab, dim, rng)
}

pub fn parse_embeddings(
    text: &str,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::random(vocab.len(), dim, rng);
    let mut vectors: HashMap<&str, Vec<f64>> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if lineno == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            let found: usize = fields[1].parse().unwrap();
            if found != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found,
                });
            }
            continue;
        }
        if fields.len() - 1 != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: fields.len() - 1,
            });
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| {
                Error::Validation(format!("embedding line {}: non-numeric value", lineno + 1))
            })?;
        vectors.insert(fields[0], values);
    }
    for (id, token) in vocab.tokens().iter().enumerate() {
        let found = vectors
            .get(token.as_str())
            .or_else(|| vectors.get(token.to_lowercase().as_str()));
        if let Some(v) = found {
            table.matrix.row_mut(id).assign(&ndarray::ArrayView1::from(v.as_slice()));
        }
    }
    Ok(table)
}

/// The 36 Penn Treebank part-of-speech tags.
pub const PENN_TAGS: [&str; 36] = [
    "CC", "CD", "DT", "EX", "FW", "IN", "JJ", "JJR", "JJS", "LS", "MD", "NN", "NNS", "NNP", "NNPS",
    "PDT", "POS", "PRP", "PRP$", "RB", "RBR", "RBS", "RP", "SYM", "TO", "UH", "VB", "VBD", "VBG",
    "VBN", "VBP", "VBZ", "WDT", "WP", "WP$", "WRB",
];

pub const POS_MARKER_ID: usize = 36;
pub const POS_NUM_ID: usize = 37;
pub const POS_UNK_ID: usize = 38;
pub const POS_VOCAB_SIZE: usize = 39;

/// Penn tags, then the artificial tags for the entity marker and the number
/// wildcard, then unknown. Other tags (punctuation classes) map to unknown.
pub fn pos_id(token: &str, tag: &str) -> usize {
    match token {
        ENTITY_MARKER => POS_MARKER_ID,
        NUMBER_WILDCARD => POS_NUM_ID,
        _ => PENN_TAGS
            .iter()
            .position(|t| *t == tag)
            .unwrap_or(POS_UNK_ID),
    }
}

const CLOSED_CLASS: &[(&str, &[&str])] = &[
    ("DT", &["the", "a", "an", "this", "that", "these", "those", "each", "every", "some", "any", "no", "another", "all", "both"]),
    ("IN", &["of", "in", "on", "for", "with", "by", "from", "at", "as", "into", "between", "through", "over", "under", "than", "via", "about", "against", "among", "within", "without", "during", "while", "whether", "if", "because", "although", "since", "upon", "across", "towards", "after", "before"]),
    ("CC", &["and", "or", "but", "nor", "yet"]),
    ("PRP", &["we", "it", "they", "i", "you", "he", "she", "them", "us", "itself", "themselves"]),
    ("PRP$", &["our", "its", "their", "my", "your", "his", "her"]),
    ("TO", &["to"]),
    ("MD", &["can", "could", "may", "might", "must", "shall", "should", "will", "would"]),
    ("EX", &["there"]),
    ("RB", &["not", "also", "very", "well", "then", "only", "however", "thus", "furthermore", "moreover", "often", "even", "further"]),
    ("WDT", &["which", "whatever"]),
    ("WP", &["who", "what", "whom"]),
    ("WRB", &["how", "when", "where", "why"]),
    ("VBZ", &["is", "has", "does"]),
    ("VBP", &["are", "have", "do"]),
    ("VBD", &["was", "were", "had", "did"]),
    ("VB", &["be"]),
    ("VBN", &["been"]),
];

/// Deterministic lexicon-and-suffix tagger for corpora without POS
/// annotation.
pub fn fallback_tags(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, t)| fallback_tag(t, i == 0).to_owned())
        .collect()
}

fn fallback_tag(token: &str, sentence_initial: bool) -> &'static str {
    if token == ENTITY_MARKER {
        return ENTITY_MARKER;
    }
    if token == NUMBER_WILDCARD {
        return NUMBER_WILDCARD;
    }
    let lower = token.to_lowercase();
    if let Some((tag, _)) = CLOSED_CLASS.iter().find(|(_, words)| words.contains(&lower.as_str())) {
        return tag;
    }
    if token.chars().all(|c| c.is_ascii_punctuation()) {
        return "SYM";
    }
    if token.chars().any(|c| c.is_ascii_digit()) && token.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',') {
        return "CD";
    }
    if !sentence_initial && token.chars().next().is_some_and(char::is_uppercase) {
        return "NNP";
    }
    let n = lower.len();
    let suffix = |s: &str| n >= s.len() + 2 && lower.ends_with(s);
    if suffix("ing") {
        "VBG"
    } else if suffix("ed") {
        "VBN"
    } else if suffix("ly") {
        "RB"
    } else if suffix("est") {
        "JJS"
    } else if ["ous", "ful", "ive", "able", "ible", "al", "ic", "less", "ar"].iter().any(|s| suffix(s)) {
        "JJ"
    } else if suffix("s") && !lower.ends_with("ss") {
        "NNS"
    } else {
        "NN"
    }
}

/// Parses `doc_id<TAB>tag1 tag2 ...` lines.
pub fn parse_pos_file(text: &str) -> Result<HashMap<String, Vec<String>>> {
    let mut out = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (doc, tags) = line.split_once('\t').ok_or_else(|| {
            Error::Validation(format!("POS file line {}: expected doc_id<TAB>tags", lineno + 1))
        })?;
        out.insert(doc.to_owned(), tags.split_whitespace().map(String::from).collect());
    }
    Ok(out)
}

/// Attaches tags to documents; lengths must agree with the tokenizer output.
pub fn attach_pos(docs: &mut [Document], tags: &HashMap<String, Vec<String>>) -> Result<()> {
    for d in docs {
        if let Some(t) = tags.get(&d.doc_id) {
            if t.len() != d.tokens.len() {
                return Err(Error::Validation(format!(
                    "document {}: {} POS tags for {} tokens",
                    d.doc_id,
                    t.len(),
                    d.tokens.len()
                )));
            }
            d.pos_tags = Some(t.clone());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub word_ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    /// Clipped signed distance to the entity appearing first, shifted by the clip.
    pub relpos1_ids: Vec<usize>,
    /// Same for the entity appearing second.
    pub relpos2_ids: Vec<usize>,
    pub label: Option<usize>,
    pub length: usize,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub vocab: Vocabulary,
    pub relpos_clip: usize,
    pub scheme: LabelScheme,
    pub fallback_pos: bool,
}

impl Encoder {
    pub fn relpos_vocab_size(&self) -> usize {
        2 * self.relpos_clip + 1
    }

    pub fn encode(&self, ex: &ProcessedExample) -> Result<EncodedExample> {
        encode(ex, &self.vocab, self.relpos_clip, self.scheme, self.fallback_pos)
    }
}

fn relative_position(i: usize, span: &std::ops::Range<usize>, clip: usize) -> usize {
    let d: i64 = if i < span.start {
        i as i64 - span.start as i64
    } else if i >= span.end {
        i as i64 - (span.end as i64 - 1)
    } else {
        0
    };
    (d.clamp(-(clip as i64), clip as i64) + clip as i64) as usize
}

pub fn encode(
    ex: &ProcessedExample,
    vocab: &Vocabulary,
    relpos_clip: usize,
    scheme: LabelScheme,
    fallback_pos: bool,
) -> Result<EncodedExample> {
    let tags = match &ex.pos {
        Some(t) => t.clone(),
        None if fallback_pos => fallback_tags(&ex.tokens),
        None => return Err(Error::MissingPos(ex.doc_id.clone())),
    };
    let n = ex.tokens.len();
    let word_ids = ex.tokens.iter().map(|t| vocab.id(t)).collect();
    let pos_ids = ex.tokens.iter().zip(&tags).map(|(t, g)| pos_id(t, g)).collect();
    let (first, second) = if ex.e1_span.start <= ex.e2_span.start {
        (&ex.e1_span, &ex.e2_span)
    } else {
        (&ex.e2_span, &ex.e1_span)
    };
    let relpos1_ids = (0..n).map(|i| relative_position(i, first, relpos_clip)).collect();
    let relpos2_ids = (0..n).map(|i| relative_position(i, second, relpos_clip)).collect();
    // Unlabeled examples stay unlabeled; callers decide whether that means NONE.
    let label = ex.kind.map(|_| ex.class_index(scheme)).transpose()?;
    Ok(EncodedExample {
        word_ids,
        pos_ids,
        relpos1_ids,
        relpos2_ids,
        label,
        length: n,
    })
}
