//! Flattening, cleaning, cropping, entity tagging and text reversal.

use std::ops::Range;

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;

use crate::corpus::{Document, Entity, RelationInstance, RelationKind, RelationLabel};
use crate::error::{Error, Result};

/// Single boundary symbol placed before and after each entity.
pub const ENTITY_MARKER: &str = "<e>";
/// Replacement for standalone numbers.
pub const NUMBER_WILDCARD: &str = "<num>";

static NUMERIC: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?[0-9]+(?:[.,][0-9]+)*$").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessedExample {
    pub doc_id: String,
    pub e1: String,
    pub e2: String,
    pub tokens: Vec<String>,
    /// POS tags aligned with `tokens`; markers carry [`ENTITY_MARKER`].
    pub pos: Option<Vec<String>>,
    /// Word tokens of the first argument, markers excluded.
    pub e1_span: Range<usize>,
    pub e2_span: Range<usize>,
    pub kind: Option<RelationKind>,
    /// Semantic argument order opposite to text order.
    pub reverse: bool,
    /// Token order has been reversed.
    pub reversed: bool,
    /// Tokens strictly between the two entities in the source text.
    pub original_length: usize,
}

impl ProcessedExample {
    pub fn label(&self) -> Option<RelationLabel> {
        self.kind.map(|kind| RelationLabel {
            kind,
            reverse: self.reverse,
        })
    }

    pub fn marker_count(&self) -> usize {
        self.tokens.iter().filter(|t| *t == ENTITY_MARKER).count()
    }

    /// Tokens strictly between the two entity blocks.
    pub fn interior(&self) -> &[String] {
        let (first, second) = if self.e1_span.start <= self.e2_span.start {
            (&self.e1_span, &self.e2_span)
        } else {
            (&self.e2_span, &self.e1_span)
        };
        &self.tokens[first.end + 1..second.start - 1]
    }

    pub fn tagged_sentence(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn class_index(&self, scheme: LabelScheme) -> Result<usize> {
        scheme.class_index(self.kind, self.reverse)
    }
}

/// Splits nested entities into non-overlapping ones. An entity keeps the
/// longest contiguous run of its tokens not covered by entities nested
/// inside it (leftmost on ties). An entity fully covered by nested ones is
/// dropped with a warning.
pub fn flatten_entities(doc: &Document) -> Document {
    let ents = &doc.entities;
    let contains = |outer: usize, inner: usize| {
        let (o, i) = (&ents[outer], &ents[inner]);
        outer != inner
            && o.start <= i.start
            && i.end <= o.end
            // identical spans: the later element is the nested one
            && ((o.start, o.end) != (i.start, i.end) || outer < inner)
    };
    let mut flattened = Vec::with_capacity(ents.len());
    for (k, e) in ents.iter().enumerate() {
        let covered: Vec<bool> = e
            .tokens()
            .map(|t| (0..ents.len()).any(|j| contains(k, j) && ents[j].contains_token(t)))
            .collect();
        let mut best: Option<(usize, usize)> = None;
        let mut run_start = None;
        for (off, &c) in covered.iter().chain(std::iter::once(&true)).enumerate() {
            match (c, run_start) {
                (false, None) => run_start = Some(off),
                (true, Some(s)) => {
                    if best.is_none_or(|(bs, be)| off - s > be - bs) {
                        best = Some((s, off));
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
        match best {
            Some((s, t)) => flattened.push(Entity::new(e.id.clone(), e.start + s, e.start + t - 1)),
            None => log::warn!(
                "document {}: entity {} is entirely covered by nested entities; dropped",
                doc.doc_id,
                e.id
            ),
        }
    }
    Document {
        entities: flattened,
        ..doc.clone()
    }
}

fn is_capitalized_word(t: &str) -> bool {
    let mut chars = t.chars();
    chars.next().is_some_and(char::is_uppercase) && chars.all(char::is_alphabetic)
}

/// Deletes bracketed and parenthesized spans that touch no entity, then
/// replaces standalone numbers with [`NUMBER_WILDCARD`]. A number is kept
/// when it lies inside an entity or directly follows a capitalized word
/// (`WordNet 2`). Sentences with unbalanced brackets keep their brackets.
pub fn clean_tokens(doc: &Document) -> Document {
    let n = doc.tokens.len();
    let mut delete = vec![false; n];
    let in_entity = |i: usize| doc.entities.iter().any(|e| e.contains_token(i));
    for sentence in doc.sentences() {
        let mut stack: Vec<(usize, &str)> = Vec::new();
        let mut spans = Vec::new();
        let mut balanced = true;
        for i in sentence.clone() {
            match doc.tokens[i].as_str() {
                "(" => stack.push((i, ")")),
                "[" => stack.push((i, "]")),
                close @ (")" | "]") => match stack.pop() {
                    Some((open, expected)) if expected == close => spans.push(open..i + 1),
                    _ => {
                        balanced = false;
                        break;
                    }
                },
                _ => {}
            }
        }
        if !balanced || !stack.is_empty() {
            log::warn!(
                "document {}: unbalanced brackets in tokens {:?}; left untouched",
                doc.doc_id,
                sentence
            );
            continue;
        }
        for span in spans {
            if !span.clone().any(in_entity) {
                for d in &mut delete[span] {
                    *d = true;
                }
            }
        }
    }

    let mut new_index = vec![usize::MAX; n];
    let mut tokens = Vec::with_capacity(n);
    let mut tags = doc.pos_tags.as_ref().map(|_| Vec::with_capacity(n));
    for i in (0..n).filter(|&i| !delete[i]) {
        new_index[i] = tokens.len();
        let tok = &doc.tokens[i];
        let keep_number = in_entity(i)
            || tokens
                .last()
                .is_some_and(|prev: &String| is_capitalized_word(prev));
        if NUMERIC.is_match(tok) && !keep_number {
            tokens.push(NUMBER_WILDCARD.to_owned());
        } else {
            tokens.push(tok.clone());
        }
        if let (Some(out), Some(src)) = (tags.as_mut(), doc.pos_tags.as_ref()) {
            out.push(src[i].clone());
        }
    }
    let entities = doc
        .entities
        .iter()
        .map(|e| Entity::new(e.id.clone(), new_index[e.start], new_index[e.end]))
        .collect();
    let title_len = (0..doc.title_len).filter(|&i| !delete[i]).count();
    Document {
        doc_id: doc.doc_id.clone(),
        tokens,
        entities,
        pos_tags: tags,
        title_len,
    }
}

/// Crops the sentence to the two entities and what lies between them, with
/// an [`ENTITY_MARKER`] before and after each entity.
pub fn crop_and_tag(doc: &Document, inst: &RelationInstance) -> Result<ProcessedExample> {
    let lookup = |id: &str| {
        doc.entity(id)
            .ok_or_else(|| Error::DanglingEntity(id.to_owned()))
    };
    let (a, b) = (lookup(&inst.e1)?, lookup(&inst.e2)?);
    if a.overlaps(b) {
        return Err(Error::Validation(format!(
            "entities {} and {} overlap in document {}",
            a.id, b.id, doc.doc_id
        )));
    }
    if a.start > b.start {
        return Err(Error::Validation(format!(
            "{} must precede {} in text order",
            a.id, b.id
        )));
    }
    let marker = || ENTITY_MARKER.to_owned();
    let slice = |r: Range<usize>| doc.tokens[r].to_vec();
    let mut tokens = Vec::with_capacity(b.end - a.start + 5);
    tokens.push(marker());
    tokens.extend(slice(a.tokens()));
    tokens.push(marker());
    tokens.extend(slice(a.end + 1..b.start));
    tokens.push(marker());
    tokens.extend(slice(b.tokens()));
    tokens.push(marker());

    let pos = doc.pos_tags.as_ref().map(|tags| {
        let mut out = Vec::with_capacity(tokens.len());
        out.push(marker());
        out.extend(tags[a.tokens()].iter().cloned());
        out.push(marker());
        out.extend(tags[a.end + 1..b.start].iter().cloned());
        out.push(marker());
        out.extend(tags[b.tokens()].iter().cloned());
        out.push(marker());
        out
    });

    let e1_span = 1..1 + a.len();
    let interior = b.start - a.end - 1;
    let e2_start = e1_span.end + 1 + interior + 1;
    Ok(ProcessedExample {
        doc_id: doc.doc_id.clone(),
        e1: inst.e1.clone(),
        e2: inst.e2.clone(),
        tokens,
        pos,
        e1_span,
        e2_span: e2_start..e2_start + b.len(),
        kind: inst.kind,
        reverse: inst.reverse,
        reversed: false,
        original_length: interior,
    })
}

/// Word-level reversal of a reverse-relation example, so that it reads in
/// semantic argument order. Applied to an already reversed example it
/// restores the original; examples without the reverse flag are returned
/// unchanged.
pub fn apply_reversal(ex: &ProcessedExample) -> ProcessedExample {
    if !ex.reverse && !ex.reversed {
        return ex.clone();
    }
    let n = ex.tokens.len();
    let flip = |r: &Range<usize>| n - r.end..n - r.start;
    let mut out = ex.clone();
    out.tokens.reverse();
    if let Some(p) = out.pos.as_mut() {
        p.reverse();
    }
    out.e1_span = flip(&ex.e1_span);
    out.e2_span = flip(&ex.e2_span);
    out.reversed = !ex.reversed;
    out.reverse = !ex.reverse;
    out
}

/// Class layouts. `Six` covers the relation kinds in [`RelationKind::ALL`]
/// order and expects reversal to have been applied. `Twelve` is the five
/// asymmetric kinds ordered (0-4), the same reversed (5-9), `COMPARE` (10)
/// and `NONE` (11).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    Six,
    Twelve,
}

impl LabelScheme {
    pub const NONE_INDEX: usize = 11;

    pub fn num_classes(self) -> usize {
        match self {
            LabelScheme::Six => 6,
            LabelScheme::Twelve => 12,
        }
    }

    pub fn class_index(self, kind: Option<RelationKind>, reverse: bool) -> Result<usize> {
        match (self, kind) {
            (LabelScheme::Six, None) => Err(Error::Validation(
                "unlabeled instance has no class in the six-class scheme".into(),
            )),
            (LabelScheme::Six, Some(_)) if reverse => Err(Error::Validation(
                "reverse label under the six-class scheme; apply reversal first".into(),
            )),
            (LabelScheme::Six, Some(k)) => Ok(k.index()),
            (LabelScheme::Twelve, None) => Ok(Self::NONE_INDEX),
            (LabelScheme::Twelve, Some(RelationKind::Compare)) => Ok(10),
            (LabelScheme::Twelve, Some(k)) => Ok(k.index() + if reverse { 5 } else { 0 }),
        }
    }

    /// Inverse of [`class_index`](Self::class_index); `None` is `NONE`.
    pub fn decode(self, index: usize) -> Option<RelationLabel> {
        match self {
            LabelScheme::Six => Some(RelationLabel {
                kind: RelationKind::ALL[index],
                reverse: false,
            }),
            LabelScheme::Twelve => match index {
                0..=4 => Some(RelationLabel {
                    kind: RelationKind::ALL[index],
                    reverse: false,
                }),
                5..=9 => Some(RelationLabel {
                    kind: RelationKind::ALL[index - 5],
                    reverse: true,
                }),
                10 => Some(RelationLabel {
                    kind: RelationKind::Compare,
                    reverse: false,
                }),
                _ => None,
            },
        }
    }

    pub fn class_names(self) -> Vec<String> {
        (0..self.num_classes())
            .map(|i| match self.decode(i) {
                Some(RelationLabel { kind, reverse: true }) => format!("{}-R", kind.name()),
                Some(l) => l.kind.name().to_owned(),
                None => "NONE".to_owned(),
            })
            .collect()
    }

    pub fn compare_index(self) -> usize {
        match self {
            LabelScheme::Six => RelationKind::Compare.index(),
            LabelScheme::Twelve => 10,
        }
    }

    pub fn negative_index(self) -> Option<usize> {
        match self {
            LabelScheme::Six => None,
            LabelScheme::Twelve => Some(Self::NONE_INDEX),
        }
    }
}

pub fn to_label_scheme(inst: &RelationInstance, scheme: LabelScheme) -> Result<usize> {
    scheme.class_index(inst.kind, inst.reverse)
}
