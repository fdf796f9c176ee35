//! Interpolated modified Kneser–Ney n-gram language model.
//!
//! The highest order uses raw counts; lower orders use continuation counts
//! (number of distinct left extensions), except for n-grams starting with
//! `<s>`, which have no left extension and keep their raw counts. Each order
//! has three discounts (for adjusted counts 1, 2 and 3+) estimated from
//! count-of-counts:
//!
//! ```text
//! Y  = n1 / (n1 + 2 n2)
//! Dk = k - (k + 1) Y n(k+1) / nk        k = 1, 2, 3
//! ```
//!
//! and the conditional probability is
//!
//! ```text
//! p(w | h) = max(a(hw) - D(a(hw)), 0) / a(h.) + gamma(h) p(w | h')
//! gamma(h) = (D1 N1(h.) + D2 N2(h.) + D3 N3+(h.)) / a(h.)
//! ```
//!
//! bottoming out in a uniform distribution over the vocabulary (without
//! `<s>`). Unseen contexts back off entirely. Scores are log10.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{read_to_string, write_string, Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

const UNK_ID: u32 = 0;
const BOS_ID: u32 = 1;
const EOS_ID: u32 = 2;

/// Discount used for every count bucket when count-of-counts cannot support
/// the closed-form estimate.
pub const FALLBACK_DISCOUNT: f64 = 0.75;

const FORMAT_HEADER: &str = "scirel-kneser-ney 1";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct ContextStats {
    total: u64,
    /// Number of continuations with adjusted count 1, 2, 3+.
    buckets: [u64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    words: Vec<String>,
    index: HashMap<String, u32>,
    /// `counts[k - 1]` holds adjusted counts of k-grams.
    counts: Vec<HashMap<Vec<u32>, u64>>,
    /// `discounts[k - 1]` for adjusted counts 1, 2, 3+.
    discounts: Vec<[f64; 3]>,
    contexts: Vec<HashMap<Vec<u32>, ContextStats>>,
}

/// Estimates a model from tokenized sentences. Sentence boundaries are added
/// internally.
pub fn train_lm<I, S, T>(corpus: I, order: usize) -> Result<NGramModel>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[T]>,
    T: AsRef<str>,
{
    if !(2..=5).contains(&order) {
        return Err(Error::invalid(format!("n-gram order must be in 2..=5, got {order}")));
    }
    let sentences: Vec<Vec<String>> = corpus
        .into_iter()
        .map(|s| s.as_ref().iter().map(|t| t.as_ref().to_owned()).collect())
        .collect();
    if sentences.is_empty() {
        return Err(Error::invalid("language model corpus is empty"));
    }

    let mut distinct: Vec<&str> = sentences
        .iter()
        .flatten()
        .map(String::as_str)
        .filter(|w| ![UNK, BOS, EOS].contains(w))
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    let words: Vec<String> = [UNK, BOS, EOS]
        .into_iter()
        .chain(distinct)
        .map(String::from)
        .collect();
    let index: HashMap<String, u32> = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i as u32))
        .collect();

    let mut raw: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
    for s in &sentences {
        let ids: Vec<u32> = std::iter::once(BOS_ID)
            .chain(s.iter().map(|w| index[w.as_str()]))
            .chain(std::iter::once(EOS_ID))
            .collect();
        for k in 1..=order {
            for gram in ids.windows(k) {
                *raw[k - 1].entry(gram.to_vec()).or_default() += 1;
            }
        }
    }

    let mut counts: Vec<HashMap<Vec<u32>, u64>> = Vec::with_capacity(order);
    for k in 1..=order {
        let table = if k == order {
            raw[k - 1].clone()
        } else {
            let mut continuation: HashMap<Vec<u32>, u64> = HashMap::new();
            for gram in raw[k].keys() {
                *continuation.entry(gram[1..].to_vec()).or_default() += 1;
            }
            raw[k - 1]
                .iter()
                .map(|(g, &c)| {
                    let adjusted = if g[0] == BOS_ID { c } else { continuation[g] };
                    (g.clone(), adjusted)
                })
                .collect()
        };
        counts.push(table);
    }
    counts[0].remove(&vec![BOS_ID]);

    let discounts = counts.iter().map(estimate_discounts).collect();
    Ok(NGramModel::assemble(order, words, counts, discounts))
}

fn estimate_discounts(table: &HashMap<Vec<u32>, u64>) -> [f64; 3] {
    let mut n = [0u64; 5];
    for &c in table.values() {
        if (1..=4).contains(&c) {
            n[c as usize] += 1;
        }
    }
    if n[1..].contains(&0) {
        return [FALLBACK_DISCOUNT; 3];
    }
    let nf = n.map(|x| x as f64);
    let y = nf[1] / (nf[1] + 2.0 * nf[2]);
    let d: [f64; 3] = std::array::from_fn(|i| {
        let k = (i + 1) as f64;
        k - (k + 1.0) * y * nf[i + 2] / nf[i + 1]
    });
    if d.iter().enumerate().all(|(i, &x)| x > 0.0 && x <= (i + 1) as f64) {
        d
    } else {
        [FALLBACK_DISCOUNT; 3]
    }
}

/// Log-probability accumulator for token-by-token scoring.
#[derive(Debug, Clone)]
pub struct ScoreState {
    history: Vec<u32>,
    pub total: f64,
}

impl NGramModel {
    fn assemble(
        order: usize,
        words: Vec<String>,
        counts: Vec<HashMap<Vec<u32>, u64>>,
        discounts: Vec<[f64; 3]>,
    ) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let contexts = counts
            .iter()
            .map(|table| {
                let mut ctx: HashMap<Vec<u32>, ContextStats> = HashMap::new();
                for (g, &c) in table {
                    let s = ctx.entry(g[..g.len() - 1].to_vec()).or_default();
                    s.total += c;
                    s.buckets[(c.min(3) - 1) as usize] += 1;
                }
                ctx
            })
            .collect();
        NGramModel {
            order,
            words,
            index,
            counts,
            discounts,
            contexts,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discounts(&self, k: usize) -> [f64; 3] {
        self.discounts[k - 1]
    }

    /// Words that can be predicted: the vocabulary without `<s>`.
    pub fn predictable_words(&self) -> impl Iterator<Item = &str> {
        self.words
            .iter()
            .enumerate()
            .filter(|&(i, _)| i as u32 != BOS_ID)
            .map(|(_, w)| w.as_str())
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    fn discount(&self, k: usize, count: u64) -> f64 {
        match count {
            0 => 0.0,
            c => self.discounts[k - 1][(c.min(3) - 1) as usize],
        }
    }

    fn prob_ids(&self, history: &[u32], w: u32) -> f64 {
        let vocab_size = (self.words.len() - 1) as f64;
        let mut p = 1.0 / vocab_size;
        for k in 1..=self.order {
            if k - 1 > history.len() {
                break;
            }
            let ctx = &history[history.len() - (k - 1)..];
            let Some(stats) = self.contexts[k - 1].get(ctx) else {
                continue;
            };
            let mut gram = ctx.to_vec();
            gram.push(w);
            let a = self.counts[k - 1].get(&gram).copied().unwrap_or(0);
            let d = self.discounts[k - 1];
            let total = stats.total as f64;
            let gamma = (d[0] * stats.buckets[0] as f64
                + d[1] * stats.buckets[1] as f64
                + d[2] * stats.buckets[2] as f64)
                / total;
            p = (a as f64 - self.discount(k, a)).max(0.0) / total + gamma * p;
        }
        p
    }

    /// Conditional probability of `word` after `context` (most recent last).
    /// Words outside the vocabulary are treated as `<unk>`; a context may
    /// start with `<s>`.
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let ids: Vec<u32> = context.iter().map(|w| self.id(w)).collect();
        let keep = ids.len().min(self.order - 1);
        self.prob_ids(&ids[ids.len() - keep..], self.id(word))
    }

    pub fn start(&self) -> ScoreState {
        ScoreState {
            history: vec![BOS_ID],
            total: 0.0,
        }
    }

    /// Adds `log10 p(word | history)` to the state and returns it.
    pub fn advance(&self, state: &mut ScoreState, word: &str) -> f64 {
        let id = self.id(word);
        let lp = self.prob_ids(&state.history, id).log10();
        state.history.push(id);
        if state.history.len() > self.order - 1 {
            state.history.remove(0);
        }
        state.total += lp;
        lp
    }

    /// Adds the end-of-sentence term and returns the sentence total.
    pub fn finish(&self, mut state: ScoreState) -> f64 {
        state.total += self.prob_ids(&state.history, EOS_ID).log10();
        state.total
    }

    /// Total log10 probability of the sentence, end-of-sentence included.
    pub fn log_prob<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let mut state = self.start();
        for t in tokens {
            self.advance(&mut state, t.as_ref());
        }
        self.finish(state)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{FORMAT_HEADER}\norder {}\nvocab {}\n", self.order, self.words.len());
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        for (k, d) in self.discounts.iter().enumerate() {
            out.push_str(&format!("discounts {} {} {} {}\n", k + 1, d[0], d[1], d[2]));
        }
        for (k, table) in self.counts.iter().enumerate() {
            out.push_str(&format!("grams {} {}\n", k + 1, table.len()));
            let sorted: BTreeMap<&Vec<u32>, &u64> = table.iter().collect();
            for (gram, count) in sorted {
                let ids: Vec<String> = gram.iter().map(u32::to_string).collect();
                out.push_str(&format!("{}\t{}\n", ids.join(" "), count));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Validation(format!("language model file truncated: expected {what}")))
        };
        let bad = |lineno: usize, msg: &str| Error::Validation(format!("language model line {}: {msg}", lineno + 1));
        let field = |line: &str, key: &str| -> Option<usize> { line.strip_prefix(key)?.trim().parse().ok() };

        let (_, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(bad(0, "unrecognized header"));
        }
        let (ln, line) = next("order")?;
        let order = field(line, "order ").filter(|o| (2..=5).contains(o)).ok_or_else(|| bad(ln, "bad order"))?;
        let (ln, line) = next("vocab")?;
        let nwords = field(line, "vocab ").ok_or_else(|| bad(ln, "bad vocab size"))?;
        let mut words = Vec::with_capacity(nwords);
        for _ in 0..nwords {
            words.push(next("vocabulary word")?.1.to_owned());
        }
        if words.len() < 3 || words[..3] != [UNK, BOS, EOS] {
            return Err(Error::Validation("language model vocabulary lacks special symbols".into()));
        }
        let mut discounts = Vec::with_capacity(order);
        for k in 1..=order {
            let (ln, line) = next("discounts")?;
            let parts: Vec<&str> = line.split(' ').collect();
            let parsed: Option<Vec<f64>> = parts.get(2..).and_then(|p| p.iter().map(|x| x.parse().ok()).collect());
            match (parts.first(), parts.get(1).and_then(|x| x.parse::<usize>().ok()), parsed) {
                (Some(&"discounts"), Some(kk), Some(d)) if kk == k && d.len() == 3 => discounts.push([d[0], d[1], d[2]]),
                _ => return Err(bad(ln, "bad discounts line")),
            }
        }
        let mut counts = Vec::with_capacity(order);
        for k in 1..=order {
            let (ln, line) = next("grams")?;
            let n = line
                .strip_prefix(&format!("grams {k} "))
                .and_then(|x| x.parse::<usize>().ok())
                .ok_or_else(|| bad(ln, "bad grams header"))?;
            let mut table = HashMap::with_capacity(n);
            for _ in 0..n {
                let (ln, line) = next("n-gram")?;
                let (ids, count) = line.split_once('\t').ok_or_else(|| bad(ln, "bad n-gram line"))?;
                let gram: Vec<u32> = ids
                    .split(' ')
                    .map(|x| x.parse().ok().filter(|&i: &u32| (i as usize) < words.len()))
                    .collect::<Option<_>>()
                    .filter(|g: &Vec<u32>| g.len() == k)
                    .ok_or_else(|| bad(ln, "bad n-gram ids"))?;
                let count: u64 = count.parse().ok().filter(|&c| c > 0).ok_or_else(|| bad(ln, "bad count"))?;
                table.insert(gram, count);
            }
            counts.push(table);
        }
        Ok(NGramModel::assemble(order, words, counts, discounts))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        NGramModel::from_text(&read_to_string(path)?)
    }
}
