//! Small dense helpers shared by the forward and adjoint code.

use ndarray::{Array1, ArrayView1};

/// Softmax with max-subtraction.
pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut out = logits.mapv(|v| (v - max).exp());
    let total = out.sum();
    out /= total;
    out
}

/// Adjoint of `softmax`: given the output `probs` and upstream gradient
/// `grad_out`, returns the gradient with respect to the logits.
pub fn softmax_backward(probs: ArrayView1<'_, f64>, grad_out: ArrayView1<'_, f64>) -> Array1<f64> {
    let inner = probs.dot(&grad_out);
    let mut out = grad_out.to_owned();
    out -= inner;
    out *= &probs;
    out
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn concat(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.len() + b.len());
    out.slice_mut(ndarray::s![..a.len()]).assign(&a);
    out.slice_mut(ndarray::s![a.len()..]).assign(&b);
    out
}

pub fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Index of the first non-finite entry.
pub fn first_non_finite(values: &[f64]) -> Option<usize> {
    values.iter().position(|v| !v.is_finite())
}
