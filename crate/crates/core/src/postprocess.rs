//! Consistency rules applied to raw predictions: no reversed COMPARE, and
//! each entity takes part in at most one relation.

use std::cmp::Reverse;
use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::RelationInstance;
use crate::model::ProbDist;
use crate::preprocess::LabelScheme;

/// Argmax, except that COMPARE on a reversed example falls to the runner-up.
/// Lower class index wins every tie.
pub fn fix_symmetry(pred: &ProbDist, scheme: LabelScheme, reversed: bool) -> usize {
    let best = pred.argmax();
    let compare = scheme.compare_index();
    if !reversed || best != compare {
        return best;
    }
    let p = pred.as_slice();
    let mut second: Option<usize> = None;
    for i in (0..p.len()).filter(|&i| i != compare) {
        if second.is_none_or(|s| p[i] > p[s]) {
            second = Some(i);
        }
    }
    second.unwrap_or(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub instance: RelationInstance,
    pub class: usize,
    pub probability: f64,
    /// Inter-entity token distance.
    pub length: usize,
}

/// Indices of `cands` sorted by (length ascending, training frequency of
/// the class descending, seeded random). The random keys are drawn in input
/// order, so the permutation depends only on the candidates and `seed`.
pub fn preference_order(cands: &[Candidate], class_frequencies: &[usize], seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<u64> = cands.iter().map(|_| rng.random()).collect();
    let freq = |c: &Candidate| class_frequencies.get(c.class).copied().unwrap_or(0);
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by_key(|&i| (cands[i].length, Reverse(freq(&cands[i])), keys[i]));
    for w in order.windows(2) {
        let (a, b) = (&cands[w[0]], &cands[w[1]]);
        if a.length == b.length && freq(a) == freq(b) {
            log::debug!(
                "random tie-break (seed {seed}): {} before {}",
                a.instance.to_line(),
                b.instance.to_line()
            );
        }
    }
    order
}

fn entity_keys(inst: &RelationInstance) -> [(&str, &str); 2] {
    [(&inst.doc_id, &inst.e1), (&inst.doc_id, &inst.e2)]
}

/// Greedy acceptance in preference order; a candidate is kept iff neither
/// entity is already used. Candidates of the `negative` class are discarded
/// first. Survivors keep their input order.
pub fn resolve_conflicts(
    cands: &[Candidate],
    class_frequencies: &[usize],
    negative: Option<usize>,
    seed: u64,
) -> Vec<Candidate> {
    let positive: Vec<Candidate> = cands
        .iter()
        .filter(|c| Some(c.class) != negative)
        .cloned()
        .collect();
    let mut used: HashSet<(&str, &str)> = HashSet::new();
    let mut keep = vec![false; positive.len()];
    for i in preference_order(&positive, class_frequencies, seed) {
        let ents = entity_keys(&positive[i].instance);
        if ents.iter().all(|e| !used.contains(e)) {
            used.extend(ents);
            keep[i] = true;
        }
    }
    positive
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(e1: &str, e2: &str, class: usize, length: usize) -> Candidate {
        Candidate {
            instance: RelationInstance::unlabeled("D", e1, e2),
            class,
            probability: 0.9,
            length,
        }
    }

    #[test]
    fn symmetry_rule() {
        let s = LabelScheme::Six;
        let p = ProbDist::new(vec![0.3, 0.0, 0.0, 0.0, 0.0, 0.7]).unwrap();
        assert_eq!(fix_symmetry(&p, s, false), 5);
        assert_eq!(fix_symmetry(&p, s, true), 0);
        let tie = ProbDist::new(vec![0.0, 0.0, 0.2, 0.2, 0.0, 0.6]).unwrap();
        assert_eq!(fix_symmetry(&tie, s, true), 2);
        let p12 = ProbDist::uniform(12);
        assert_eq!(fix_symmetry(&p12, LabelScheme::Twelve, true), 0);
    }

    #[test]
    fn shorter_relation_wins() {
        let c = [cand("X", "A", 0, 7), cand("X", "B", 0, 3)];
        let out = resolve_conflicts(&c, &[10; 6], None, 0);
        assert_eq!(out, vec![c[1].clone()]);
    }

    #[test]
    fn frequent_class_wins_ties() {
        let mut freq = vec![0; 6];
        freq[0] = 619;
        freq[5] = 136;
        let c = [cand("X", "A", 5, 4), cand("X", "B", 0, 4)];
        let out = resolve_conflicts(&c, &freq, None, 0);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].class, 0);
    }

    #[test]
    fn no_conflict_identity_and_none_dropped() {
        let c = vec![cand("A", "B", 1, 9), cand("C", "D", 2, 1), cand("E", "F", 0, 4)];
        assert_eq!(resolve_conflicts(&c, &[1; 12], None, 3), c);
        let mut with_none = c.clone();
        with_none.push(cand("A", "C", 11, 0));
        assert_eq!(resolve_conflicts(&with_none, &[1; 12], Some(11), 3), c);
    }

    #[test]
    fn random_ties_are_seeded() {
        let c: Vec<_> = (0..6).map(|i| cand("X", &format!("Y{i}"), 0, 2)).collect();
        let a = resolve_conflicts(&c, &[1; 6], None, 42);
        assert_eq!(a, resolve_conflicts(&c, &[1; 6], None, 42));
        assert_eq!(a.len(), 1);
        let winners: HashSet<String> = (0..40)
            .map(|s| resolve_conflicts(&c, &[1; 6], None, s)[0].instance.e2.clone())
            .collect();
        assert!(winners.len() > 1);
    }
}
