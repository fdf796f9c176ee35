//! Annotated abstracts, relation files and the immutable [`Dataset`].
//!
//! Abstract files are XML fragments: `<text id="...">` blocks holding an
//! optional `<title>` and an `<abstract>`, with inline, possibly nested,
//! `<entity id="...">` elements. Relation files carry one
//! `LABEL(id1,id2[,REVERSE])` per line.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    /// First token, inclusive.
    pub start: usize,
    /// Last token, inclusive.
    pub end: usize,
}

impl Entity {
    pub fn new(id: impl Into<String>, start: usize, end: usize) -> Self {
        Entity {
            id: id.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains_token(&self, i: usize) -> bool {
        self.start <= i && i <= self.end
    }

    pub fn overlaps(&self, other: &Entity) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn tokens(&self) -> Range<usize> {
        self.start..self.end + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub entities: Vec<Entity>,
    pub pos_tags: Option<Vec<String>>,
    /// Number of leading tokens that came from the `<title>` element.
    pub title_len: usize,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<String>, entities: Vec<Entity>) -> Self {
        Document {
            doc_id: doc_id.into(),
            tokens,
            entities,
            pos_tags: None,
            title_len: 0,
        }
    }

    /// Builds a document from whitespace-separated text, with entities given
    /// as inclusive token spans.
    pub fn from_text(doc_id: &str, text: &str, entities: &[(&str, usize, usize)]) -> Self {
        let tokens = text.split_whitespace().map(str::to_owned).collect();
        let entities = entities
            .iter()
            .map(|&(id, s, e)| Entity::new(id, s, e))
            .collect();
        Document::new(doc_id, tokens, entities)
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entities {
            if e.start > e.end || e.end >= self.tokens.len() {
                return Err(Error::Validation(format!(
                    "entity {} span [{}, {}] outside document {} of {} tokens",
                    e.id,
                    e.start,
                    e.end,
                    self.doc_id,
                    self.tokens.len()
                )));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate entity id {} in document {}",
                    e.id, self.doc_id
                )));
            }
        }
        if let Some(tags) = &self.pos_tags {
            if tags.len() != self.tokens.len() {
                return Err(Error::Validation(format!(
                    "document {}: {} POS tags for {} tokens",
                    self.doc_id,
                    tags.len(),
                    self.tokens.len()
                )));
            }
        }
        if self.title_len > self.tokens.len() {
            return Err(Error::Validation(format!(
                "document {}: title length exceeds token count",
                self.doc_id
            )));
        }
        Ok(())
    }

    /// Sentence token ranges. A boundary follows the title, and follows a
    /// `.`, `!` or `?` token whose successor starts with an uppercase letter,
    /// unless an entity spans the boundary.
    pub fn sentences(&self) -> Vec<Range<usize>> {
        let n = self.tokens.len();
        let mut out = Vec::new();
        let mut start = 0;
        for i in 0..n {
            let at_title_end = self.title_len > 0 && i + 1 == self.title_len;
            let at_terminator = matches!(self.tokens[i].as_str(), "." | "!" | "?")
                && self
                    .tokens
                    .get(i + 1)
                    .and_then(|t| t.chars().next())
                    .is_some_and(char::is_uppercase);
            if (at_title_end || at_terminator) && i + 1 < n && !self.entity_spans_boundary(i) {
                out.push(start..i + 1);
                start = i + 1;
            }
        }
        if start < n {
            out.push(start..n);
        }
        out
    }

    fn entity_spans_boundary(&self, i: usize) -> bool {
        self.entities.iter().any(|e| e.start <= i && e.end > i)
    }

    pub fn sentence_of(&self, token: usize) -> Option<usize> {
        self.sentences().iter().position(|r| r.contains(&token))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationKind {
    Usage,
    Result,
    ModelFeature,
    PartWhole,
    Topic,
    Compare,
}

impl RelationKind {
    pub const ALL: [RelationKind; 6] = [
        RelationKind::Usage,
        RelationKind::Result,
        RelationKind::ModelFeature,
        RelationKind::PartWhole,
        RelationKind::Topic,
        RelationKind::Compare,
    ];

    /// Canonical name, as written in relation files.
    pub fn name(self) -> &'static str {
        match self {
            RelationKind::Usage => "USAGE",
            RelationKind::Result => "RESULT",
            RelationKind::ModelFeature => "MODEL-FEATURE",
            RelationKind::PartWhole => "PART_WHOLE",
            RelationKind::Topic => "TOPIC",
            RelationKind::Compare => "COMPARE",
        }
    }

    pub fn is_symmetric(self) -> bool {
        self == RelationKind::Compare
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "USAGE" => RelationKind::Usage,
            "RESULT" => RelationKind::Result,
            "MODEL-FEATURE" | "MODEL_FEATURE" => RelationKind::ModelFeature,
            "PART_WHOLE" | "PART-WHOLE" => RelationKind::PartWhole,
            "TOPIC" => RelationKind::Topic,
            "COMPARE" => RelationKind::Compare,
            _ => {
                return Err(Error::UnknownLabel {
                    found: s.to_owned(),
                    valid: RelationKind::ALL.map(RelationKind::name).join(", "),
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationLabel {
    pub kind: RelationKind,
    pub reverse: bool,
}

impl RelationLabel {
    pub fn new(kind: RelationKind, reverse: bool) -> Result<Self> {
        if kind.is_symmetric() && reverse {
            return Err(Error::Validation(
                "COMPARE is symmetric and cannot carry REVERSE".into(),
            ));
        }
        Ok(RelationLabel { kind, reverse })
    }
}

/// An ordered entity pair. `e1` precedes `e2` in the text. The direction flag
/// is kept separately from the kind so that unlabeled pairs can still carry a
/// known direction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationInstance {
    pub doc_id: String,
    pub e1: String,
    pub e2: String,
    pub kind: Option<RelationKind>,
    pub reverse: bool,
}

impl RelationInstance {
    pub fn unlabeled(doc_id: &str, e1: &str, e2: &str) -> Self {
        RelationInstance {
            doc_id: doc_id.to_owned(),
            e1: e1.to_owned(),
            e2: e2.to_owned(),
            kind: None,
            reverse: false,
        }
    }

    pub fn labeled(doc_id: &str, e1: &str, e2: &str, kind: RelationKind, reverse: bool) -> Self {
        RelationInstance {
            kind: Some(kind),
            reverse,
            ..RelationInstance::unlabeled(doc_id, e1, e2)
        }
    }

    pub fn label(&self) -> Option<RelationLabel> {
        self.kind.map(|kind| RelationLabel {
            kind,
            reverse: self.reverse,
        })
    }

    pub fn key(&self) -> (&str, &str, &str) {
        (&self.doc_id, &self.e1, &self.e2)
    }

    /// The line written to a relation file.
    pub fn to_line(&self) -> String {
        let label = self.kind.map(RelationKind::name).unwrap_or("");
        if self.reverse {
            format!("{label}({},{},REVERSE)", self.e1, self.e2)
        } else {
            format!("{label}({},{})", self.e1, self.e2)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "subtask1.1")]
    Subtask1_1,
    #[serde(rename = "subtask1.2")]
    Subtask1_2,
    #[serde(rename = "subtask2")]
    Subtask2,
    #[serde(rename = "merged")]
    Merged,
    #[serde(rename = "generated")]
    Generated,
}

/// Documents plus relation instances. Immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    documents: Vec<Document>,
    instances: Vec<RelationInstance>,
    provenance: Provenance,
    index: HashMap<String, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.documents == other.documents
            && self.instances == other.instances
            && self.provenance == other.provenance
    }
}

impl Dataset {
    pub fn new(
        documents: Vec<Document>,
        instances: Vec<RelationInstance>,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            doc.validate()?;
            if index.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate document id {}",
                    doc.doc_id
                )));
            }
        }
        let mut pairs = HashSet::with_capacity(instances.len());
        for inst in &instances {
            let doc = index
                .get(&inst.doc_id)
                .map(|&i| &documents[i])
                .ok_or_else(|| {
                    Error::Validation(format!("instance references unknown document {}", inst.doc_id))
                })?;
            for id in [&inst.e1, &inst.e2] {
                if doc.entity(id).is_none() {
                    return Err(Error::DanglingEntity(id.clone()));
                }
            }
            if !pairs.insert(inst.key()) {
                return Err(Error::Validation(format!(
                    "duplicate instance ({}, {}, {})",
                    inst.doc_id, inst.e1, inst.e2
                )));
            }
        }
        Ok(Dataset {
            documents,
            instances,
            provenance,
            index,
        })
    }

    pub fn empty(provenance: Provenance) -> Self {
        Dataset {
            documents: Vec::new(),
            instances: Vec::new(),
            provenance,
            index: HashMap::new(),
        }
    }

    /// Parses an abstract file and its relation file.
    pub fn parse(abstracts: &str, relations: &str, provenance: Provenance) -> Result<Self> {
        let documents = parse_abstracts(abstracts)?;
        let instances = parse_relations(relations, &documents)?;
        Dataset::new(documents, instances, provenance)
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn instances(&self) -> &[RelationInstance] {
        &self.instances
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.index.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty() && self.instances.is_empty()
    }

    /// Same documents, different instances.
    pub fn with_instances(&self, instances: Vec<RelationInstance>) -> Result<Self> {
        Dataset::new(self.documents.clone(), instances, self.provenance)
    }

    /// Replaces the documents, keeping instances; used after preprocessing
    /// transforms that rewrite token sequences.
    pub fn map_documents(&self, f: impl Fn(&Document) -> Document) -> Result<Self> {
        Dataset::new(
            self.documents.iter().map(f).collect(),
            self.instances.clone(),
            self.provenance,
        )
    }

    /// Keeps the given documents (by id) and their instances.
    pub fn subset(&self, doc_ids: &HashSet<&str>) -> Self {
        let documents: Vec<_> = self
            .documents
            .iter()
            .filter(|d| doc_ids.contains(d.doc_id.as_str()))
            .cloned()
            .collect();
        let instances = self
            .instances
            .iter()
            .filter(|i| doc_ids.contains(i.doc_id.as_str()))
            .cloned()
            .collect();
        Dataset::new(documents, instances, self.provenance).expect("subset of a valid dataset")
    }
}

/// Concatenates two datasets. Identical duplicate instances collapse; the same
/// pair with different labels is an error. A document id present in both must
/// carry identical content.
pub fn merge(d1: &Dataset, d2: &Dataset) -> Result<Dataset> {
    let mut documents = d1.documents.clone();
    for doc in &d2.documents {
        match d1.document(&doc.doc_id) {
            Some(existing) if existing == doc => {}
            Some(_) => {
                return Err(Error::Validation(format!(
                    "document {} differs between merged datasets",
                    doc.doc_id
                )))
            }
            None => documents.push(doc.clone()),
        }
    }
    let mut instances = d1.instances.clone();
    let mut seen: HashMap<(String, String, String), usize> = instances
        .iter()
        .enumerate()
        .map(|(i, r)| ((r.doc_id.clone(), r.e1.clone(), r.e2.clone()), i))
        .collect();
    for inst in &d2.instances {
        let key = (inst.doc_id.clone(), inst.e1.clone(), inst.e2.clone());
        if let Some(&i) = seen.get(&key) {
            let existing = &instances[i];
            if existing.label() != inst.label() {
                return Err(Error::LabelConflict {
                    doc: inst.doc_id.clone(),
                    e1: inst.e1.clone(),
                    e2: inst.e2.clone(),
                    first: existing.to_line(),
                    second: inst.to_line(),
                });
            }
            continue;
        }
        seen.insert(key, instances.len());
        instances.push(inst.clone());
    }
    Dataset::new(documents, instances, Provenance::Merged)
}

/// All text-ordered, non-overlapping entity pairs inside one sentence whose
/// word distance (tokens strictly between the two) is at most `max_distance`.
///
/// Panics if `max_distance` is 0.
pub fn candidate_pairs(doc: &Document, max_distance: usize) -> Vec<RelationInstance> {
    assert!(max_distance >= 1, "max_distance must be at least 1");
    let mut ents: Vec<&Entity> = doc.entities.iter().collect();
    ents.sort_by_key(|e| (e.start, e.end));
    let mut out = Vec::new();
    for sentence in doc.sentences() {
        let inside: Vec<&Entity> = ents
            .iter()
            .copied()
            .filter(|e| sentence.contains(&e.start) && sentence.contains(&e.end))
            .collect();
        for (i, a) in inside.iter().enumerate() {
            for b in &inside[i + 1..] {
                if a.end >= b.start {
                    continue;
                }
                if b.start - a.end - 1 <= max_distance {
                    out.push(RelationInstance::unlabeled(&doc.doc_id, &a.id, &b.id));
                }
            }
        }
    }
    out
}

/// Number of tokens strictly between two non-overlapping entities.
pub fn word_distance(a: &Entity, b: &Entity) -> usize {
    let (first, second) = if a.start <= b.start { (a, b) } else { (b, a) };
    second.start.saturating_sub(first.end + 1)
}

// ---------------------------------------------------------------------------
// Abstract file parsing
// ---------------------------------------------------------------------------

/// Splits on whitespace, then peels leading and trailing ASCII punctuation
/// off as separate one-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut lo = 0;
        let mut hi = chars.len();
        while lo < hi && chars[lo].is_ascii_punctuation() {
            lo += 1;
        }
        while hi > lo && chars[hi - 1].is_ascii_punctuation() {
            hi -= 1;
        }
        out.extend(chars[..lo].iter().map(char::to_string));
        if lo < hi {
            out.push(chars[lo..hi].iter().collect());
        }
        out.extend(chars[hi..].iter().map(char::to_string));
    }
    out
}

#[derive(Debug)]
enum Markup<'a> {
    Open {
        name: &'a str,
        attrs: Vec<(&'a str, String)>,
        self_closing: bool,
    },
    Close {
        name: &'a str,
    },
    Skip,
}

fn parse_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn decode_entities(s: &str, offset: usize) -> Result<String> {
    if !s.contains('&') {
        return Ok(s.to_owned());
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let tail = &rest[amp..];
        let semi = tail
            .find(';')
            .ok_or_else(|| parse_error(offset, "unterminated character reference"))?;
        let ch = match &tail[1..semi] {
            "amp" => '&',
            "lt" => '<',
            "gt" => '>',
            "quot" => '"',
            "apos" => '\'',
            other => {
                let code = other
                    .strip_prefix("#x")
                    .map(|h| u32::from_str_radix(h, 16))
                    .or_else(|| other.strip_prefix('#').map(str::parse::<u32>));
                match code.and_then(|c| c.ok()).and_then(char::from_u32) {
                    Some(c) => c,
                    None => {
                        return Err(parse_error(
                            offset,
                            format!("unknown character reference &{other};"),
                        ))
                    }
                }
            }
        };
        out.push(ch);
        rest = &tail[semi + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn parse_markup(body: &str, offset: usize) -> Result<Markup<'_>> {
    if body.starts_with('?') || body.starts_with('!') {
        return Ok(Markup::Skip);
    }
    if let Some(name) = body.strip_prefix('/') {
        return Ok(Markup::Close { name: name.trim() });
    }
    let (body, self_closing) = match body.strip_suffix('/') {
        Some(b) => (b, true),
        None => (body, false),
    };
    let body = body.trim_end();
    let name_end = body
        .find(|c: char| c.is_whitespace())
        .unwrap_or(body.len());
    let name = &body[..name_end];
    if name.is_empty() {
        return Err(parse_error(offset, "empty tag name"));
    }
    let mut attrs = Vec::new();
    let mut rest = body[name_end..].trim_start();
    while !rest.is_empty() {
        let eq = rest
            .find('=')
            .ok_or_else(|| parse_error(offset, format!("malformed attributes in <{name}>")))?;
        let key = rest[..eq].trim();
        let after = rest[eq + 1..].trim_start();
        let quote = after
            .chars()
            .next()
            .filter(|&c| c == '"' || c == '\'')
            .ok_or_else(|| parse_error(offset, format!("unquoted attribute `{key}`")))?;
        let close = after[1..]
            .find(quote)
            .ok_or_else(|| parse_error(offset, format!("unterminated attribute `{key}`")))?;
        attrs.push((key, decode_entities(&after[1..1 + close], offset)?));
        rest = after[close + 2..].trim_start();
    }
    Ok(Markup::Open {
        name,
        attrs,
        self_closing,
    })
}

struct DocBuilder {
    doc_id: String,
    tokens: Vec<String>,
    entities: Vec<Entity>,
    title_len: usize,
}

/// Parses an abstract file into documents. Nested entities are kept as-is.
pub fn parse_abstracts(text: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut current: Option<DocBuilder> = None;
    // (tag name, byte offset, open entity index)
    let mut stack: Vec<(&str, usize, Option<usize>)> = Vec::new();
    let mut pos = 0;
    let bytes = text.as_bytes();
    while pos < text.len() {
        if bytes[pos] == b'<' {
            let end = if text[pos..].starts_with("<!--") {
                text[pos..].find("-->").map(|e| pos + e + 2)
            } else {
                text[pos..].find('>').map(|e| pos + e)
            }
            .ok_or_else(|| parse_error(pos, "unterminated tag"))?;
            let markup = parse_markup(&text[pos + 1..end], pos)?;
            match markup {
                Markup::Skip => {}
                Markup::Open {
                    name,
                    attrs,
                    self_closing,
                } => {
                    let id = attrs.iter().find(|(k, _)| *k == "id").map(|(_, v)| v.clone());
                    let mut entity_index = None;
                    match name {
                        "text" | "abstract" if current.is_none() => {
                            let doc_id = id.ok_or_else(|| {
                                parse_error(pos, format!("<{name}> without id attribute"))
                            })?;
                            current = Some(DocBuilder {
                                doc_id,
                                tokens: Vec::new(),
                                entities: Vec::new(),
                                title_len: 0,
                            });
                        }
                        "entity" => {
                            let b = current
                                .as_mut()
                                .ok_or_else(|| parse_error(pos, "entity outside a document"))?;
                            let id = id.ok_or_else(|| parse_error(pos, "entity without id"))?;
                            if b.entities.iter().any(|e| e.id == id) {
                                return Err(Error::Validation(format!(
                                    "duplicate entity id {id} in document {}",
                                    b.doc_id
                                )));
                            }
                            entity_index = Some(b.entities.len());
                            // end is fixed when the element closes
                            b.entities.push(Entity::new(id, b.tokens.len(), usize::MAX));
                        }
                        _ => {}
                    }
                    if self_closing {
                        if entity_index.is_some() {
                            return Err(parse_error(pos, "empty entity element"));
                        }
                    } else {
                        stack.push((name, pos, entity_index));
                    }
                }
                Markup::Close { name } => {
                    let (open, _, entity_index) = stack.pop().ok_or_else(|| {
                        parse_error(pos, format!("closing </{name}> without matching open tag"))
                    })?;
                    if open != name {
                        return Err(parse_error(
                            pos,
                            format!("closing </{name}> does not match open <{open}>"),
                        ));
                    }
                    if let Some(i) = entity_index {
                        let b = current.as_mut().expect("entity implies an open document");
                        if b.tokens.len() == b.entities[i].start {
                            return Err(parse_error(pos, format!("entity {} has no tokens", b.entities[i].id)));
                        }
                        b.entities[i].end = b.tokens.len() - 1;
                    }
                    let closes_doc = matches!(name, "text" | "abstract")
                        && !stack.iter().any(|(n, _, _)| matches!(*n, "text" | "abstract"));
                    if name == "title" {
                        if let Some(b) = current.as_mut() {
                            b.title_len = b.tokens.len();
                        }
                    }
                    if closes_doc {
                        if let Some(b) = current.take() {
                            docs.push(Document {
                                doc_id: b.doc_id,
                                tokens: b.tokens,
                                entities: b.entities,
                                pos_tags: None,
                                title_len: b.title_len,
                            });
                        }
                    }
                }
            }
            pos = end + 1;
        } else {
            let next = text[pos..].find('<').map_or(text.len(), |n| pos + n);
            if let Some(b) = current.as_mut() {
                let chunk = decode_entities(&text[pos..next], pos)?;
                b.tokens.extend(tokenize(&chunk));
            }
            pos = next;
        }
    }
    if let Some((name, offset, _)) = stack.last() {
        return Err(parse_error(*offset, format!("unclosed <{name}>")));
    }
    for d in &docs {
        d.validate()?;
    }
    Ok(docs)
}

/// Writes documents back to the abstract-file format. Tokens are joined by
/// single spaces, so `parse_abstracts(&write_abstracts(d)) == d`. No entity
/// may straddle the title boundary.
pub fn write_abstracts(docs: &[Document]) -> String {
    let mut out = String::from("<doc>\n");
    for doc in docs {
        out.push_str(&format!("<text id=\"{}\">\n", escape(&doc.doc_id)));
        if doc.title_len > 0 {
            out.push_str("<title>");
            write_span(&mut out, doc, 0..doc.title_len);
            out.push_str("</title>\n");
        }
        out.push_str("<abstract>");
        write_span(&mut out, doc, doc.title_len..doc.tokens.len());
        out.push_str("</abstract>\n</text>\n");
    }
    out.push_str("</doc>\n");
    out
}

fn write_span(out: &mut String, doc: &Document, range: Range<usize>) {
    // Outer entities open first: longer span first, then document order.
    let mut order: Vec<usize> = (0..doc.entities.len()).collect();
    order.sort_by_key(|&i| (doc.entities[i].start, std::cmp::Reverse(doc.entities[i].end), i));
    let first = range.start;
    for t in range {
        if t > first {
            out.push(' ');
        }
        for &i in order.iter().filter(|&&i| doc.entities[i].start == t) {
            out.push_str(&format!("<entity id=\"{}\">", escape(&doc.entities[i].id)));
        }
        out.push_str(&escape(&doc.tokens[t]));
        let closing = order.iter().filter(|&&i| doc.entities[i].end == t).count();
        out.push_str(&"</entity>".repeat(closing));
    }
}

// ---------------------------------------------------------------------------
// Relation files
// ---------------------------------------------------------------------------

/// Parses a relation file against the documents it annotates. A line with an
/// empty label, `(id1,id2[,REVERSE])`, is an unlabeled pair with known
/// direction.
pub fn parse_relations(text: &str, docs: &[Document]) -> Result<Vec<RelationInstance>> {
    let mut owner: HashMap<&str, &Document> = HashMap::new();
    for d in docs {
        for e in &d.entities {
            owner.insert(&e.id, d);
        }
    }
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let syntax = |message: &str| Error::RelationSyntax {
            line: lineno + 1,
            message: format!("{message}: `{line}`"),
        };
        let open = line.find('(').ok_or_else(|| syntax("expected `LABEL(id1,id2)`"))?;
        let inner = line[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| syntax("missing closing parenthesis"))?;
        let label = line[..open].trim();
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        let reverse = match parts.as_slice() {
            [_, _] => false,
            [_, _, "REVERSE"] => true,
            _ => return Err(syntax("expected two entity ids and an optional REVERSE")),
        };
        let (e1, e2) = (parts[0], parts[1]);
        let kind = if label.is_empty() {
            None
        } else {
            Some(label.parse::<RelationKind>()?)
        };
        if let Some(k) = kind {
            RelationLabel::new(k, reverse).map_err(|e| match e {
                Error::Validation(m) => Error::Validation(format!("line {}: {m}", lineno + 1)),
                other => other,
            })?;
        }
        if e1 == e2 {
            return Err(Error::Validation(format!(
                "line {}: relation of entity {e1} with itself",
                lineno + 1
            )));
        }
        let d1 = owner.get(e1).ok_or_else(|| Error::DanglingEntity(e1.to_owned()))?;
        let d2 = owner.get(e2).ok_or_else(|| Error::DanglingEntity(e2.to_owned()))?;
        if d1.doc_id != d2.doc_id {
            return Err(Error::Validation(format!(
                "line {}: entities {e1} and {e2} belong to different documents",
                lineno + 1
            )));
        }
        let (a, b) = (d1.entity(e1).unwrap(), d1.entity(e2).unwrap());
        if (a.start, a.end) > (b.start, b.end) {
            return Err(Error::Validation(format!(
                "line {}: {e1} must precede {e2} in text order",
                lineno + 1
            )));
        }
        out.push(RelationInstance {
            doc_id: d1.doc_id.clone(),
            e1: e1.to_owned(),
            e2: e2.to_owned(),
            kind,
            reverse,
        });
    }
    Ok(out)
}

pub fn write_relations(instances: &[RelationInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&inst.to_line());
        out.push('\n');
    }
    out
}
