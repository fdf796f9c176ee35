//! Precision / recall / F1 for classification and extraction.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{RelationInstance, RelationKind};
use crate::error::{Error, Result};

/// Zero denominators give 0.
pub fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        Prf {
            precision,
            recall,
            f1: f1(precision, recall),
            true_positives: tp,
            predicted,
            gold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// One row per class seen in gold or predictions, excluding the ignored one.
    pub per_class: BTreeMap<usize, Prf>,
    pub micro: Prf,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Mean of per-class F1 over classes present in gold.
    pub macro_f1: f64,
}

impl Metrics {
    /// F1 of the macro-averaged precision and recall.
    pub fn macro_f1_of_means(&self) -> f64 {
        f1(self.macro_precision, self.macro_recall)
    }
}

/// Per-class and aggregate scores. Labels equal to `ignore` (a NONE or
/// missing-prediction class) never count as positives.
pub fn prf(gold: &[usize], pred: &[usize], ignore: Option<usize>) -> Result<Metrics> {
    if gold.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            found: pred.len(),
        });
    }
    let mut tp: BTreeMap<usize, usize> = BTreeMap::new();
    let mut n_pred: BTreeMap<usize, usize> = BTreeMap::new();
    let mut n_gold: BTreeMap<usize, usize> = BTreeMap::new();
    for (&g, &p) in gold.iter().zip(pred) {
        if Some(g) != ignore {
            *n_gold.entry(g).or_default() += 1;
            if g == p {
                *tp.entry(g).or_default() += 1;
            }
        }
        if Some(p) != ignore {
            *n_pred.entry(p).or_default() += 1;
        }
    }
    let classes: HashSet<usize> = n_gold.keys().chain(n_pred.keys()).copied().collect();
    let per_class: BTreeMap<usize, Prf> = classes
        .into_iter()
        .map(|c| {
            let get = |m: &BTreeMap<usize, usize>| m.get(&c).copied().unwrap_or(0);
            (c, Prf::from_counts(get(&tp), get(&n_pred), get(&n_gold)))
        })
        .collect();
    let in_gold: Vec<&Prf> = n_gold.keys().map(|c| &per_class[c]).collect();
    let mean = |f: fn(&Prf) -> f64| {
        if in_gold.is_empty() {
            0.0
        } else {
            in_gold.iter().map(|m| f(m)).sum::<f64>() / in_gold.len() as f64
        }
    };
    Ok(Metrics {
        micro: Prf::from_counts(tp.values().sum(), n_pred.values().sum(), n_gold.values().sum()),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    /// Unordered entity pair only.
    ExtractionOnly,
    /// Pair, relation kind and direction.
    Combined,
}

type ExtractionKey = (String, String, String, Option<(RelationKind, bool)>);

fn extraction_key(inst: &RelationInstance, mode: ExtractionMode) -> ExtractionKey {
    let (a, b) = if inst.e1 <= inst.e2 {
        (&inst.e1, &inst.e2)
    } else {
        (&inst.e2, &inst.e1)
    };
    let label = match mode {
        ExtractionMode::ExtractionOnly => None,
        ExtractionMode::Combined => inst.kind.map(|k| (k, inst.reverse)),
    };
    (inst.doc_id.clone(), a.clone(), b.clone(), label)
}

/// Set-based scoring; duplicate predictions count once.
pub fn extraction_score(
    gold: &[RelationInstance],
    pred: &[RelationInstance],
    mode: ExtractionMode,
) -> Prf {
    let g: HashSet<ExtractionKey> = gold.iter().map(|i| extraction_key(i, mode)).collect();
    let p: HashSet<ExtractionKey> = pred.iter().map(|i| extraction_key(i, mode)).collect();
    Prf::from_counts(g.intersection(&p).count(), p.len(), g.len())
}

/// Classification report over the six relation kinds. Gold pairs missing
/// from the predictions count as wrong; predictions for pairs absent from
/// gold count as false positives of their class.
pub fn classification_report(gold: &[RelationInstance], pred: &[RelationInstance]) -> Report {
    let missing = RelationKind::ALL.len();
    let predicted: BTreeMap<(&str, &str, &str), usize> = pred
        .iter()
        .filter_map(|p| p.kind.map(|k| (p.key(), k.index())))
        .collect();
    let mut g = Vec::new();
    let mut p = Vec::new();
    let mut matched = HashSet::new();
    for inst in gold {
        let Some(kind) = inst.kind else { continue };
        g.push(kind.index());
        p.push(predicted.get(&inst.key()).copied().unwrap_or(missing));
        matched.insert(inst.key());
    }
    for (key, &class) in &predicted {
        if !matched.contains(key) {
            g.push(missing);
            p.push(class);
        }
    }
    let metrics = prf(&g, &p, Some(missing)).expect("aligned label vectors");
    Report {
        class_names: RelationKind::ALL.iter().map(|k| k.name().replace('_', "-")).collect(),
        metrics,
        extraction: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionScores {
    pub extraction_only: Prf,
    pub combined: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub class_names: Vec<String>,
    pub metrics: Metrics,
    pub extraction: Option<ExtractionScores>,
}

impl Report {
    fn name(&self, class: usize) -> String {
        self.class_names
            .get(class)
            .cloned()
            .unwrap_or_else(|| format!("class{class}"))
    }

    /// Per-class rows sorted by name, then the micro and macro totals, in
    /// percent.
    pub fn to_human(&self) -> String {
        let mut rows: Vec<(String, &Prf)> =
            self.metrics.per_class.iter().map(|(&c, m)| (self.name(c), m)).collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out = String::new();
        let line = |out: &mut String, name: &str, p: f64, r: f64, f: f64| {
            writeln!(out, "{name:<22} {:>7.2} {:>7.2} {:>7.2}", 100.0 * p, 100.0 * r, 100.0 * f)
                .expect("writing to a String");
        };
        writeln!(out, "{:<22} {:>7} {:>7} {:>7}", "Relation type", "P", "R", "F1").unwrap();
        for (name, m) in &rows {
            line(&mut out, name, m.precision, m.recall, m.f1);
        }
        let m = &self.metrics;
        line(&mut out, "Micro-averaged total", m.micro.precision, m.micro.recall, m.micro.f1);
        line(&mut out, "Macro-averaged total", m.macro_precision, m.macro_recall, m.macro_f1);
        if let Some(x) = &self.extraction {
            line(
                &mut out,
                "Extraction only",
                x.extraction_only.precision,
                x.extraction_only.recall,
                x.extraction_only.f1,
            );
            line(&mut out, "Extraction + class", x.combined.precision, x.combined.recall, x.combined.f1);
        }
        out
    }

    /// Stable `key=value` lines for scripts.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut put = |k: String, v: f64| writeln!(out, "{k}={v:.6}").expect("writing to a String");
        for (&c, m) in &self.metrics.per_class {
            let n = self.name(c);
            put(format!("class.{n}.precision"), m.precision);
            put(format!("class.{n}.recall"), m.recall);
            put(format!("class.{n}.f1"), m.f1);
        }
        let m = &self.metrics;
        put("micro.precision".into(), m.micro.precision);
        put("micro.recall".into(), m.micro.recall);
        put("micro.f1".into(), m.micro.f1);
        put("macro.precision".into(), m.macro_precision);
        put("macro.recall".into(), m.macro_recall);
        put("macro.f1".into(), m.macro_f1);
        put("macro.f1_of_means".into(), m.macro_f1_of_means());
        if let Some(x) = &self.extraction {
            for (prefix, s) in [("extraction", &x.extraction_only), ("combined", &x.combined)] {
                put(format!("{prefix}.precision"), s.precision);
                put(format!("{prefix}.recall"), s.recall);
                put(format!("{prefix}.f1"), s.f1);
            }
        }
        out
    }
}

/// Subtask-2 style report: classification rows over matched pairs, plus
/// both extraction scores.
pub fn extraction_report(gold: &[RelationInstance], pred: &[RelationInstance]) -> Report {
    let mut report = classification_report(gold, pred);
    report.extraction = Some(ExtractionScores {
        extraction_only: extraction_score(gold, pred, ExtractionMode::ExtractionOnly),
        combined: extraction_score(gold, pred, ExtractionMode::Combined),
    });
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed() {
        // A = 0, B = 1
        let m = prf(&[0, 0, 1], &[0, 1, 1], None).unwrap();
        let a = m.per_class[&0];
        let b = m.per_class[&1];
        assert_eq!((a.precision, a.recall), (1.0, 0.5));
        assert_eq!((b.precision, b.recall), (0.5, 1.0));
        assert!((a.f1 - 2.0 / 3.0).abs() < 1e-15 && (b.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.micro.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = prf(&[0, 1, 2, 2], &[0, 1, 2, 2], None).unwrap();
        assert_eq!((m.macro_f1, m.micro.f1), (1.0, 1.0));
        let m = prf(&[3, 3], &[3, 3], None).unwrap();
        assert_eq!((m.macro_f1, m.micro.f1), (1.0, 1.0));
        let m = prf(&[], &[], None).unwrap();
        assert_eq!(m.macro_f1, 0.0);
        assert!(prf(&[0], &[], None).is_err());
    }

    #[test]
    fn ignored_class() {
        // class 9 is NONE
        let m = prf(&[0, 9, 9, 1], &[0, 0, 9, 9], Some(9)).unwrap();
        assert_eq!(m.micro.true_positives, 1);
        assert_eq!(m.micro.predicted, 2);
        assert_eq!(m.micro.gold, 2);
        assert!(!m.per_class.contains_key(&9));
        // class 1 in gold only, macro over {0, 1}
        assert!((m.macro_f1 - (2.0 / 3.0 + 0.0) / 2.0).abs() < 1e-15);
    }

    fn inst(e1: &str, e2: &str, kind: RelationKind, reverse: bool) -> RelationInstance {
        RelationInstance::labeled("D", e1, e2, kind, reverse)
    }

    #[test]
    fn extraction_modes() {
        let gold = vec![inst("D.1", "D.2", RelationKind::Usage, false)];
        for mode in [ExtractionMode::ExtractionOnly, ExtractionMode::Combined] {
            assert_eq!(extraction_score(&gold, &gold, mode).f1, 1.0);
            let empty = extraction_score(&gold, &[], mode);
            assert_eq!((empty.precision, empty.recall, empty.f1), (0.0, 0.0, 0.0));
        }
        let wrong = vec![inst("D.1", "D.2", RelationKind::Topic, false)];
        assert_eq!(extraction_score(&gold, &wrong, ExtractionMode::ExtractionOnly).f1, 1.0);
        let c = extraction_score(&gold, &wrong, ExtractionMode::Combined);
        assert_eq!((c.true_positives, c.predicted, c.gold), (0, 1, 1));
        let flipped = vec![inst("D.1", "D.2", RelationKind::Usage, true)];
        assert_eq!(extraction_score(&gold, &flipped, ExtractionMode::Combined).f1, 0.0);
    }

    #[test]
    fn report_layout() {
        let gold = vec![
            inst("D.1", "D.2", RelationKind::Usage, false),
            inst("D.3", "D.4", RelationKind::Compare, false),
            inst("D.5", "D.6", RelationKind::PartWhole, true),
        ];
        let mut pred = gold.clone();
        pred[1].kind = Some(RelationKind::Usage);
        let r = classification_report(&gold, &pred);
        let human = r.to_human();
        let lines: Vec<&str> = human.lines().collect();
        assert!(lines[0].starts_with("Relation type"));
        assert!(lines[1].starts_with("COMPARE"));
        assert!(lines[2].starts_with("PART-WHOLE"));
        assert!(lines[3].starts_with("USAGE"));
        assert!(lines[4].starts_with("Micro-averaged total"));
        assert!(lines[5].starts_with("Macro-averaged total"));
        let kv = r.to_key_values();
        assert!(kv.contains("class.USAGE.precision=0.500000"));
        assert!(kv.contains("micro.f1=0.666667"));
    }
}
