//! Relation-prototype contrastive loss, focal loss, task-difficulty weights
//! and the combined objective, each with its adjoint.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::NumericError;
use crate::math::{concat, norm, softmax};
use crate::protonet::{HybridGrads, HybridReps};

/// Floor applied to the target probability inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Positivity map applied to anchor/prototype dot products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveMode {
    /// `u = exp(dot)`: each anchor term is a softmax cross-entropy.
    #[default]
    Exp,
    /// Raw dot products; undefined unless every `u > 0`.
    Strict,
}

/// Query-loss variant. Rows of the ablation table map onto these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Cross-entropy, uniform task weights.
    Ce,
    /// Cross-entropy with task-difficulty weights.
    CeTaskWeights,
    /// Focal loss, uniform task weights.
    Focal,
    /// Focal loss with task-difficulty weights.
    #[default]
    TaskAdaptiveFocal,
}

impl LossMode {
    pub fn uses_task_weights(self) -> bool {
        matches!(self, LossMode::CeTaskWeights | LossMode::TaskAdaptiveFocal)
    }

    /// Focusing exponent actually applied: CE variants force zero.
    pub fn effective_gamma(self, gamma: f64) -> f64 {
        match self {
            LossMode::Ce | LossMode::CeTaskWeights => 0.0,
            LossMode::Focal | LossMode::TaskAdaptiveFocal => gamma,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Ce => "ce",
            LossMode::CeTaskWeights => "ce-task-weights",
            LossMode::Focal => "focal",
            LossMode::TaskAdaptiveFocal => "task-adaptive-focal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            LossMode::Ce,
            LossMode::CeTaskWeights,
            LossMode::Focal,
            LossMode::TaskAdaptiveFocal,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
    }
}

// ---------------------------------------------------------------------------
// Contrastive
// ---------------------------------------------------------------------------

/// Anchor/prototype similarities: row `i` holds `p_h^n · r_h^i` for all `n`.
fn anchor_dots(reps: &HybridReps) -> Array2<f64> {
    let n = reps.proto_hybrid.len();
    Array2::from_shape_fn((n, n), |(i, m)| reps.proto_hybrid[m].dot(&reps.relation_hybrid[i]))
}

/// Sum over relation anchors of `−log(u_pos / (u_pos + Σ u_neg))` with
/// `u = exp(dot)`.
pub fn contrastive_loss(reps: &HybridReps) -> f64 {
    contrastive_loss_with(reps, ContrastiveMode::Exp).expect("exp mode is total")
}

pub fn contrastive_loss_with(reps: &HybridReps, mode: ContrastiveMode) -> Result<f64, NumericError> {
    contrastive_from_dots(&anchor_dots(reps), mode)
}

/// Per-anchor distributions `u_n / Σ_m u_m` over the prototypes; row `i`
/// belongs to relation anchor `i`.
pub fn contrastive_distributions(reps: &HybridReps, mode: ContrastiveMode) -> Result<Array2<f64>, NumericError> {
    let mut dots = anchor_dots(reps);
    for (i, mut row) in dots.outer_iter_mut().enumerate() {
        match mode {
            ContrastiveMode::Exp => {
                let probs = softmax(row.view());
                row.assign(&probs);
            }
            ContrastiveMode::Strict => {
                if row.iter().any(|&u| u <= 0.0) {
                    return Err(NumericError::Domain(format!("anchor {i} has a non-positive similarity")));
                }
                let total = row.sum();
                row /= total;
            }
        }
    }
    Ok(dots)
}

/// Contrastive loss from a precomputed anchor-by-prototype dot matrix.
pub fn contrastive_from_dots(dots: &Array2<f64>, mode: ContrastiveMode) -> Result<f64, NumericError> {
    let mut total = 0.0;
    for (i, row) in dots.outer_iter().enumerate() {
        total += match mode {
            ContrastiveMode::Exp => {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = max + row.mapv(|v| (v - max).exp()).sum().ln();
                lse - row[i]
            }
            ContrastiveMode::Strict => {
                if let Some(bad) = row.iter().position(|&u| u <= 0.0) {
                    return Err(NumericError::Domain(format!(
                        "anchor {i}: similarity with prototype {bad} is {} (must be > 0)",
                        row[bad]
                    )));
                }
                let ratio = row[i] / row.sum();
                if ratio <= 0.0 {
                    return Err(NumericError::Domain(format!("anchor {i}: log argument {ratio}")));
                }
                -ratio.ln()
            }
        };
    }
    Ok(total)
}

/// Adds `weight · dL_C/d(hybrids)` into `grads`.
pub fn contrastive_backward(
    reps: &HybridReps,
    mode: ContrastiveMode,
    weight: f64,
    grads: &mut HybridGrads,
) -> Result<(), NumericError> {
    let dots = anchor_dots(reps);
    let n = dots.nrows();
    for i in 0..n {
        let row = dots.row(i);
        let d_dots: Array1<f64> = match mode {
            ContrastiveMode::Exp => {
                let mut p = softmax(row);
                p[i] -= 1.0;
                p
            }
            ContrastiveMode::Strict => {
                let total = row.sum();
                if row.iter().any(|&u| u <= 0.0) {
                    return Err(NumericError::Domain(format!("anchor {i}: non-positive similarity")));
                }
                let mut g = Array1::from_elem(n, 1.0 / total);
                g[i] -= 1.0 / row[i];
                g
            }
        };
        for m in 0..n {
            let g = weight * d_dots[m];
            grads.proto_hybrid[m].scaled_add(g, &reps.relation_hybrid[i]);
            grads.relation_hybrid[i].scaled_add(g, &reps.proto_hybrid[m]);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Query losses
// ---------------------------------------------------------------------------

fn clamped_ln(z: f64) -> f64 {
    z.max(PROB_FLOOR).ln()
}

/// `−log z_y` with `z_y` floored at `PROB_FLOOR`.
pub fn cross_entropy(probs: ArrayView1<'_, f64>, label: usize) -> f64 {
    -clamped_ln(probs[label])
}

/// `−(1 − z_y)^γ log z_y`; identical to `cross_entropy` when `γ = 0`.
pub fn focal_loss(probs: ArrayView1<'_, f64>, label: usize, gamma: f64) -> f64 {
    let z = probs[label];
    -(1.0 - z).powf(gamma) * clamped_ln(z)
}

/// d(focal)/d(z_y).
pub fn focal_loss_prob_grad(z: f64, gamma: f64) -> f64 {
    let log_term = if z > PROB_FLOOR { -1.0 / z } else { 0.0 };
    let mut g = (1.0 - z).powf(gamma) * log_term;
    let base = 1.0 - z;
    if gamma != 0.0 && base > 0.0 {
        g += gamma * base.powf(gamma - 1.0) * clamped_ln(z);
    }
    g
}

/// Gradient of `focal_loss` with respect to the logits that produced
/// `probs` through a softmax.
pub fn focal_loss_logit_grad(probs: ArrayView1<'_, f64>, label: usize, gamma: f64) -> Array1<f64> {
    let z = probs[label];
    let dz = focal_loss_prob_grad(z, gamma);
    let mut out = probs.mapv(|p| -dz * z * p);
    out[label] += dz * z;
    out
}

// ---------------------------------------------------------------------------
// Task weights
// ---------------------------------------------------------------------------

/// Class vectors `c^i = [r_h^i; p_h^i]`, size `6d`.
pub fn class_representations(reps: &HybridReps) -> Vec<Array1<f64>> {
    reps.relation_hybrid
        .iter()
        .zip(&reps.proto_hybrid)
        .map(|(r, p)| concat(r.view(), p.view()))
        .collect()
}

/// Pairwise cosine similarity of the class vectors.
pub fn task_similarity_matrix(class_reps: &[Array1<f64>]) -> Result<Array2<f64>, NumericError> {
    let units = unit_vectors(class_reps)?;
    let n = units.len();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            1.0
        } else {
            units[i].0.dot(&units[j].0).clamp(-1.0, 1.0)
        }
    }))
}

fn unit_vectors(class_reps: &[Array1<f64>]) -> Result<Vec<(Array1<f64>, f64)>, NumericError> {
    class_reps
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let len = norm(c.view());
            if len == 0.0 || !len.is_finite() {
                Err(NumericError::DegenerateRepresentation { index })
            } else {
                Ok((c / len, len))
            }
        })
        .collect()
}

/// Adjoint of `task_similarity_matrix`: returns dL/dc^i given dL/dS.
pub fn task_similarity_backward(
    class_reps: &[Array1<f64>],
    d_sim: &Array2<f64>,
) -> Result<Vec<Array1<f64>>, NumericError> {
    let units = unit_vectors(class_reps)?;
    let n = units.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut d_unit = Array1::zeros(units[i].0.len());
        for j in 0..n {
            if i != j {
                d_unit.scaled_add(d_sim[[i, j]] + d_sim[[j, i]], &units[j].0);
            }
        }
        let (u, len) = (&units[i].0, units[i].1);
        let radial = u.dot(&d_unit);
        out.push((d_unit - &(u * radial)) / len);
    }
    Ok(out)
}

pub fn frobenius_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Softmax over the batch of Frobenius norms.
pub fn task_weights(matrices: &[Array2<f64>]) -> Vec<f64> {
    let norms: Array1<f64> = matrices.iter().map(frobenius_norm).collect();
    softmax(norms.view()).to_vec()
}

/// Per-batch task-weighted focal loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFocal {
    pub weights: Vec<f64>,
    /// `s^τ · Σ_j focal_j` per episode.
    pub per_episode: Vec<f64>,
    /// Sum over episodes and queries.
    pub raw: f64,
    /// `raw / (T · R)`.
    pub normalized: f64,
}

/// `Σ_τ Σ_j s^τ · (1 − z_y)^γ · (−log z_y)` with `s^τ` the softmax over
/// Frobenius norms of the episodes' similarity matrices.
pub fn task_adaptive_focal_loss(
    similarity: &[Array2<f64>],
    probs: &[Array2<f64>],
    labels: &[Vec<usize>],
    gamma: f64,
) -> TaskFocal {
    weighted_focal(task_weights(similarity), probs, labels, gamma)
}

/// Focal sum under explicit task weights.
pub fn weighted_focal(weights: Vec<f64>, probs: &[Array2<f64>], labels: &[Vec<usize>], gamma: f64) -> TaskFocal {
    let per_episode: Vec<f64> = weights
        .iter()
        .zip(probs.iter().zip(labels))
        .map(|(&w, (p, ls))| {
            let sum: f64 = ls
                .iter()
                .enumerate()
                .map(|(j, &y)| focal_loss(p.row(j), y, gamma))
                .sum();
            w * sum
        })
        .collect();
    let raw: f64 = per_episode.iter().sum();
    let queries: usize = labels.iter().map(Vec::len).sum::<usize>().max(1);
    // T · R when every episode has R queries.
    let normalized = raw / (labels.len() as f64 * (queries as f64 / labels.len().max(1) as f64));
    TaskFocal {
        weights,
        per_episode,
        raw,
        normalized,
    }
}

/// `L = L_TF + λ · L_C`.
pub fn total_loss(task_focal: f64, contrastive: f64, lambda: f64) -> f64 {
    task_focal + lambda * contrastive
}

/// Loss terms of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub task_focal: f64,
    pub task_weight: f64,
    pub per_query_ce_terms: Vec<f64>,
    pub probabilities: Vec<Vec<f64>>,
    pub total: f64,
    pub gamma: f64,
    pub lambda: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protonet::Paths;
    use ndarray::array;

    fn reps_with(protos: Vec<Array1<f64>>, anchors: Vec<Array1<f64>>) -> HybridReps {
        HybridReps {
            paths: Paths::default(),
            proto_global: vec![],
            proto_local: vec![],
            proto_hybrid: protos,
            query_local: vec![],
            query_hybrid: vec![],
            relation_local: vec![],
            relation_hybrid: anchors,
            support_local: vec![],
            support_weights: vec![],
            relation_weights: vec![],
            query_weights: vec![],
        }
    }

    #[test]
    fn contrastive_perfect_confusion() {
        let dots = Array2::from_elem((3, 3), 0.7);
        let l = contrastive_from_dots(&dots, ContrastiveMode::Exp).unwrap();
        assert!((l - 3.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn contrastive_decreases_with_positive() {
        let mut last = f64::INFINITY;
        for step in 0..40 {
            let pos = -2.0 + step as f64 * 0.5;
            let dots = array![[pos, 0.3], [0.1, 0.0]];
            let anchor0 = contrastive_from_dots(&dots, ContrastiveMode::Exp).unwrap()
                - contrastive_from_dots(&array![[0.0, 0.0], [0.1, 0.0]], ContrastiveMode::Exp).unwrap();
            assert!(anchor0 < last);
            last = anchor0;
        }
        let dots = array![[60.0, 0.3], [0.0, 60.0]];
        assert!(contrastive_from_dots(&dots, ContrastiveMode::Exp).unwrap() < 1e-20);
    }

    #[test]
    fn contrastive_shift_invariance() {
        for c in [0.0, 10.0, -10.0] {
            let dots = array![[2f64.ln() + c, c], [0.0, 0.0]];
            let l = contrastive_from_dots(&dots, ContrastiveMode::Exp).unwrap() - 2f64.ln();
            assert!((l + (2.0f64 / 3.0).ln()).abs() < 1e-12, "offset {c}");
        }
    }

    #[test]
    fn strict_mode_domain_error() {
        let dots = array![[1.0, -0.5], [0.2, 0.3]];
        assert!(matches!(
            contrastive_from_dots(&dots, ContrastiveMode::Strict),
            Err(NumericError::Domain(_))
        ));
        let ok = array![[2.0, 1.0], [1.0, 3.0]];
        let l = contrastive_from_dots(&ok, ContrastiveMode::Strict).unwrap();
        assert!((l - (-(2.0f64 / 3.0).ln() - (3.0f64 / 4.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn contrastive_gradient_both_modes() {
        let protos = vec![array![0.5, 0.2, 0.9], array![0.3, 0.8, 0.1], array![0.6, 0.4, 0.7]];
        let anchors = vec![array![0.4, 0.6, 0.2], array![0.9, 0.1, 0.3], array![0.2, 0.2, 0.8]];
        for mode in [ContrastiveMode::Exp, ContrastiveMode::Strict] {
            let base = reps_with(protos.clone(), anchors.clone());
            let mut g = HybridGrads {
                proto_hybrid: vec![Array1::zeros(3); 3],
                query_hybrid: vec![],
                relation_hybrid: vec![Array1::zeros(3); 3],
            };
            contrastive_backward(&base, mode, 1.0, &mut g).unwrap();
            let h = 1e-6;
            for which in 0..2 {
                for i in 0..3 {
                    for c in 0..3 {
                        let eval = |delta: f64| {
                            let mut r = base.clone();
                            if which == 0 {
                                r.proto_hybrid[i][c] += delta;
                            } else {
                                r.relation_hybrid[i][c] += delta;
                            }
                            contrastive_loss_with(&r, mode).unwrap()
                        };
                        let fd = (eval(h) - eval(-h)) / (2.0 * h);
                        let an = if which == 0 { g.proto_hybrid[i][c] } else { g.relation_hybrid[i][c] };
                        assert!((fd - an).abs() < 1e-8, "{mode:?} {which} {i} {c}");
                    }
                }
            }
        }
    }

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(cross_entropy(array![0.0, 1.0].view(), 1), 0.0);
        let uniform = Array1::from_elem(5, 0.2);
        assert!((cross_entropy(uniform.view(), 3) - 5f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(array![0.75, 0.25].view(), 1) - 4f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(array![1.0, 0.0].view(), 1).is_finite());
    }

    #[test]
    fn focal_cases() {
        let row = array![0.3, 0.5, 0.2];
        for y in 0..3 {
            assert_eq!(
                focal_loss(row.view(), y, 0.0).to_bits(),
                cross_entropy(row.view(), y).to_bits()
            );
        }
        for gamma in [0.0, 0.5, 1.0, 2.0, 5.0] {
            assert_eq!(focal_loss(array![1.0, 0.0].view(), 0, gamma), 0.0);
        }
        let l = focal_loss(array![0.5, 0.5].view(), 0, 1.0);
        assert!((l - 0.5 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn focal_monotone_in_probability() {
        for gamma in [0.0, 0.5, 1.0, 2.0] {
            let mut last = f64::INFINITY;
            for step in 1..=1000 {
                let z = step as f64 / 1000.0;
                let l = focal_loss(array![z, 1.0 - z].view(), 0, gamma);
                assert!(l <= last, "gamma {gamma} z {z}");
                last = l;
            }
        }
    }

    #[test]
    fn focal_logit_gradient() {
        let logits = array![0.3, -0.4, 1.1];
        for gamma in [0.0, 1.0, 2.5] {
            let g = focal_loss_logit_grad(softmax(logits.view()).view(), 2, gamma);
            let h = 1e-6;
            for i in 0..3 {
                let mut up = logits.clone();
                up[i] += h;
                let mut dn = logits.clone();
                dn[i] -= h;
                let fd = (focal_loss(softmax(up.view()).view(), 2, gamma)
                    - focal_loss(softmax(dn.view()).view(), 2, gamma))
                    / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn similarity_cases() {
        let v = array![1.0, 2.0, -1.0];
        let s = task_similarity_matrix(&[v.clone(), v.clone(), v.clone()]).unwrap();
        assert!(s.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        let s = task_similarity_matrix(&[array![1.0, 0.0], array![0.0, 3.0]]).unwrap();
        assert_eq!(s, Array2::<f64>::eye(2));

        let reps = vec![array![0.3, -1.0, 2.0], array![1.5, 0.2, 0.1], array![-0.7, 0.4, 0.9]];
        let scaled: Vec<_> = reps.iter().map(|c| c * 7.25).collect();
        let a = task_similarity_matrix(&reps).unwrap();
        let b = task_similarity_matrix(&scaled).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(matches!(
            task_similarity_matrix(&[array![1.0, 0.0], array![0.0, 0.0]]),
            Err(NumericError::DegenerateRepresentation { index: 1 })
        ));
    }

    #[test]
    fn similarity_gradient() {
        let reps = vec![array![0.3, -1.0, 2.0], array![1.5, 0.2, 0.1], array![-0.7, 0.4, 0.9]];
        let probe = array![[0.0, 0.4, -1.2], [0.7, 0.0, 0.3], [0.5, -0.8, 0.0]];
        let g = task_similarity_backward(&reps, &probe).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for c in 0..3 {
                let eval = |delta: f64| {
                    let mut r = reps.clone();
                    r[i][c] += delta;
                    (task_similarity_matrix(&r).unwrap() * &probe).sum()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!((fd - g[i][c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn weight_cases() {
        let m = array![[1.0, 0.3], [0.3, 1.0]];
        let w = task_weights(&[m.clone(), m.clone(), m.clone()]);
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(task_weights(&[m]), vec![1.0]);

        let w = task_weights(&[Array2::ones((2, 2)), Array2::eye(2)]);
        // softmax(2, √2)
        let e = (2.0 - 2f64.sqrt()).exp();
        assert!((w[0] - e / (1.0 + e)).abs() < 1e-12);
        assert!((w[0] - 0.642398).abs() < 1e-6 && (w[1] - 0.357602).abs() < 1e-6);
        assert!(w[0] > w[1]);
    }

    #[test]
    fn task_focal_reductions() {
        let probs = vec![array![[0.7, 0.3], [0.4, 0.6]]];
        let labels = vec![vec![0, 1]];
        let sim = vec![array![[1.0, 0.2], [0.2, 1.0]]];
        let tf = task_adaptive_focal_loss(&sim, &probs, &labels, 1.0);
        let plain = focal_loss(probs[0].row(0), 0, 1.0) + focal_loss(probs[0].row(1), 1, 1.0);
        assert_eq!(tf.weights, vec![1.0]);
        assert!((tf.raw - plain).abs() < 1e-15);
        assert!((tf.normalized - plain / 2.0).abs() < 1e-15);

        let t = 3;
        let tf = task_adaptive_focal_loss(
            &vec![sim[0].clone(); t],
            &vec![probs[0].clone(); t],
            &vec![labels[0].clone(); t],
            0.0,
        );
        let ce = cross_entropy(probs[0].row(0), 0) + cross_entropy(probs[0].row(1), 1);
        assert!((tf.raw - ce).abs() < 1e-12);
    }

    #[test]
    fn loss_mode_names_round_trip() {
        for m in [LossMode::Ce, LossMode::CeTaskWeights, LossMode::Focal, LossMode::TaskAdaptiveFocal] {
            assert_eq!(LossMode::parse(m.as_str()), Some(m));
        }
        assert_eq!(LossMode::parse("hinge"), None);
    }

    #[test]
    fn total_cases() {
        assert_eq!(total_loss(1.5, 9.0, 0.0), 1.5);
        assert_eq!(total_loss(1.5, 2.0, 1.0), 3.5);
        assert_eq!(total_loss(2.0, 4.0, 2.5), 12.0);
    }
}
