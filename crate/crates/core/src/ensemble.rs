//! Replica averaging and the length-dependent CNN/RNN blend.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::ProbDist;

fn check_dims(a: &ProbDist, b: &ProbDist) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        })
    }
}

/// Element-wise mean. Computed as a running mean, so averaging identical
/// distributions returns them bit-for-bit.
pub fn average(probs: &[ProbDist]) -> Result<ProbDist> {
    let first = probs
        .first()
        .ok_or_else(|| Error::invalid("cannot average zero distributions"))?;
    let mut mean = first.as_slice().to_vec();
    for (k, p) in probs.iter().enumerate().skip(1) {
        check_dims(first, p)?;
        for (m, &v) in mean.iter_mut().zip(p.as_slice()) {
            *m += (v - *m) / (k + 1) as f64;
        }
    }
    ProbDist::new(mean)
}

/// `0.5 + sign(s) * s^2` with `s = (len - min) / (max - min) - 0.5`.
pub fn rnn_weight(length: usize, min_len: usize, max_len: usize) -> Result<f64> {
    if length < min_len || length > max_len {
        return Err(Error::invalid(format!(
            "length {length} outside [{min_len}, {max_len}]"
        )));
    }
    if max_len == min_len {
        return Ok(0.5);
    }
    let s = (length - min_len) as f64 / (max_len - min_len) as f64 - 0.5;
    Ok(0.5 + s.signum() * s * s)
}

/// `w * rnn + (1 - w) * cnn`.
pub fn combine(cnn: &ProbDist, rnn: &ProbDist, w_rnn: f64) -> Result<ProbDist> {
    check_dims(cnn, rnn)?;
    if !(0.0..=1.0).contains(&w_rnn) {
        return Err(Error::invalid(format!("blend weight {w_rnn} outside [0, 1]")));
    }
    if w_rnn == 0.0 {
        return Ok(cnn.clone());
    }
    if w_rnn == 1.0 {
        return Ok(rnn.clone());
    }
    ProbDist::new(
        cnn.as_slice()
            .iter()
            .zip(rnn.as_slice())
            .map(|(&c, &r)| w_rnn * r + (1.0 - w_rnn) * c)
            .collect(),
    )
}

/// Blends per-example CNN and RNN averages, normalizing lengths over the
/// whole set being predicted.
pub fn blend_all(cnn: &[ProbDist], rnn: &[ProbDist], lengths: &[usize]) -> Result<Vec<ProbDist>> {
    if cnn.len() != rnn.len() || cnn.len() != lengths.len() {
        return Err(Error::DimensionMismatch {
            expected: lengths.len(),
            found: cnn.len().min(rnn.len()),
        });
    }
    let (Some(&min), Some(&max)) = (lengths.iter().min(), lengths.iter().max()) else {
        return Ok(Vec::new());
    };
    cnn.iter()
        .zip(rnn)
        .zip(lengths)
        .map(|((c, r), &l)| combine(c, r, rnn_weight(l, min, max)?))
        .collect()
}

/// Tab-separated audit dump: id, then one column per class.
pub fn probabilities_tsv(ids: &[String], class_names: &[String], probs: &[ProbDist]) -> String {
    let mut out = String::from("instance");
    for c in class_names {
        out.push('\t');
        out.push_str(c);
    }
    out.push('\n');
    for (id, p) in ids.iter().zip(probs) {
        out.push_str(id);
        for v in p.as_slice() {
            write!(out, "\t{v:.6}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pd(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn averaging() {
        let a = pd(&[0.2, 0.3, 0.5]);
        assert_eq!(average(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);
        assert_eq!(average(&[pd(&[1.0, 0.0]), pd(&[0.0, 1.0])]).unwrap().as_slice(), &[0.5, 0.5]);
        assert!(average(&[]).is_err());
        assert!(average(&[pd(&[1.0]), pd(&[0.5, 0.5])]).is_err());
    }

    #[test]
    fn weight_endpoints() {
        assert_eq!(rnn_weight(0, 0, 10).unwrap(), 0.25);
        assert_eq!(rnn_weight(5, 0, 10).unwrap(), 0.5);
        assert_eq!(rnn_weight(10, 0, 10).unwrap(), 0.75);
        assert_eq!(rnn_weight(4, 4, 4).unwrap(), 0.5);
        // s = 0.25 - 0.5 = -0.25
        assert_eq!(rnn_weight(3, 1, 9).unwrap(), 0.5 - 0.0625);
        assert!(rnn_weight(11, 0, 10).is_err());
    }

    #[test]
    fn blend_endpoints() {
        let c = pd(&[0.9, 0.1]);
        let r = pd(&[0.2, 0.8]);
        assert_eq!(combine(&c, &r, 0.0).unwrap(), c);
        assert_eq!(combine(&c, &r, 1.0).unwrap(), r);
        assert!(combine(&c, &r, 1.5).is_err());
        let all = blend_all(&[c.clone(), c.clone()], &[r.clone(), r.clone()], &[2, 8]).unwrap();
        assert!((all[0].as_slice()[0] - (0.25 * 0.2 + 0.75 * 0.9)).abs() < 1e-15);
        assert!((all[1].as_slice()[0] - (0.75 * 0.2 + 0.25 * 0.9)).abs() < 1e-15);
    }

    #[test]
    fn tsv_layout() {
        let t = probabilities_tsv(
            &["D.1,D.2".into()],
            &["A".into(), "B".into()],
            &[pd(&[0.25, 0.75])],
        );
        assert_eq!(t, "instance\tA\tB\nD.1,D.2\t0.250000\t0.750000\n");
    }
}
