//! Central finite-difference verification of the analytic gradients.

use super::{ClassWeights, Classifier};
use crate::error::Result;
use crate::features::EncodedExample;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    /// Largest `|a - n| / max(|a|, |n|, floor)` over the tensor.
    pub max_rel_error: f64,
}

/// Compares the backward pass against `(L(p + h) - L(p - h)) / 2h` for every
/// parameter element, with dropout off.
pub fn check_gradients(
    model: &Classifier,
    batch: &[&EncodedExample],
    weights: &ClassWeights,
    step: f64,
    floor: f64,
) -> Result<Vec<TensorCheck>> {
    let (_, grad) = model.loss_and_grad::<rand_chacha::ChaCha8Rng>(batch, weights, None)?;
    let analytic: Vec<(String, Vec<f64>)> = grad
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.iter().copied().collect()))
        .collect();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(analytic.len());
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (ei, &ag) in a.iter().enumerate() {
            let original = nth(&mut probe, ti, ei);
            set(&mut probe, ti, ei, original + step);
            let plus = probe.loss(batch, weights)?;
            set(&mut probe, ti, ei, original - step);
            let minus = probe.loss(batch, weights)?;
            set(&mut probe, ti, ei, original);
            let numeric = (plus - minus) / (2.0 * step);
            let denom = ag.abs().max(numeric.abs()).max(floor);
            worst = worst.max((ag - numeric).abs() / denom);
        }
        out.push(TensorCheck {
            name: name.clone(),
            elements: a.len(),
            max_rel_error: worst,
        });
    }
    Ok(out)
}

fn nth(model: &mut Classifier, tensor: usize, element: usize) -> f64 {
    let t = model.tensors_mut().swap_remove(tensor);
    *t.iter().nth(element).expect("element index in range")
}

fn set(model: &mut Classifier, tensor: usize, element: usize, value: f64) {
    let t = model.tensors_mut().swap_remove(tensor);
    *t.iter_mut().nth(element).expect("element index in range") = value;
}
