//! Global, local and hybrid prototypes and query scoring, with the adjoint
//! of every step.
//!
//! Layout conventions: global features have size `2d`, local features size
//! `d`, hybrid vectors `3d` laid out as `[global; local]`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::TokenEmbeddings;
use crate::math::{argmax, concat, softmax, softmax_backward};

/// Which prototype components are active. Disabled components are held at
/// zero inside the hybrid vectors and receive no gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paths {
    pub global: bool,
    pub local: bool,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            global: true,
            local: true,
        }
    }
}

/// Embeddings and global features of one episode.
#[derive(Debug, Clone)]
pub struct EncodedEpisode {
    pub support_emb: Vec<Vec<TokenEmbeddings>>,
    pub query_emb: Vec<TokenEmbeddings>,
    pub relation_emb: Vec<TokenEmbeddings>,
    pub support_global: Vec<Vec<Array1<f64>>>,
    pub relation_global: Vec<Array1<f64>>,
    pub query_global: Vec<Array1<f64>>,
}

impl EncodedEpisode {
    pub fn n_way(&self) -> usize {
        self.relation_emb.len()
    }

    pub fn k_shot(&self) -> usize {
        self.support_emb.first().map_or(0, Vec::len)
    }

    pub fn num_queries(&self) -> usize {
        self.query_emb.len()
    }

    pub fn dim(&self) -> usize {
        self.relation_emb[0].dim()
    }
}

/// Hybrid representations plus every intermediate the losses and the
/// adjoint reuse.
#[derive(Debug, Clone)]
pub struct HybridReps {
    pub paths: Paths,
    pub proto_global: Vec<Array1<f64>>,
    pub proto_local: Vec<Array1<f64>>,
    pub proto_hybrid: Vec<Array1<f64>>,
    pub query_local: Vec<Array1<f64>>,
    pub query_hybrid: Vec<Array1<f64>>,
    pub relation_local: Vec<Array1<f64>>,
    pub relation_hybrid: Vec<Array1<f64>>,
    /// ŝ per support instance.
    pub support_local: Vec<Vec<Array1<f64>>>,
    /// Attention weights over support tokens, per support instance.
    pub support_weights: Vec<Vec<Array1<f64>>>,
    /// Attention weights over relation tokens, per (relation, support shot).
    pub relation_weights: Vec<Vec<Array1<f64>>>,
    /// Attention weights over query tokens.
    pub query_weights: Vec<Array1<f64>>,
}

/// Mean of the support globals plus the relation global.
pub fn global_prototype(support_global: &[Array1<f64>], relation_global: ArrayView1<'_, f64>) -> Array1<f64> {
    mean_plus(support_global, relation_global)
}

/// Mean of the support locals plus the relation local.
pub fn local_prototype(local_support: &[Array1<f64>], relation_local: ArrayView1<'_, f64>) -> Array1<f64> {
    mean_plus(local_support, relation_local)
}

fn mean_plus(items: &[Array1<f64>], extra: ArrayView1<'_, f64>) -> Array1<f64> {
    assert!(!items.is_empty(), "prototype needs at least one support vector");
    let mut acc = Array1::zeros(extra.len());
    for v in items {
        acc += v;
    }
    acc /= items.len() as f64;
    acc += &extra;
    acc
}

/// Attention pooling of `tokens` guided by `context`:
/// `α = softmax(rowsum(tokens · contextᵀ))`, output `Σ α_n tokens_n`.
///
/// The row sums reduce to `tokens · colsum(context)`.
pub fn attention_pool(tokens: ArrayView2<'_, f64>, context: ArrayView2<'_, f64>) -> (Array1<f64>, Array1<f64>) {
    let context_sum = context.sum_axis(Axis(0));
    let weights = softmax(tokens.dot(&context_sum).view());
    (tokens.t().dot(&weights), weights)
}

/// Adjoint of `attention_pool`. Returns dL/d(tokens) and dL/d(colsum of
/// context); the latter applies to every context row.
pub fn attention_pool_backward(
    tokens: ArrayView2<'_, f64>,
    context: ArrayView2<'_, f64>,
    weights: ArrayView1<'_, f64>,
    grad_out: ArrayView1<'_, f64>,
) -> (Array2<f64>, Array1<f64>) {
    let context_sum = context.sum_axis(Axis(0));
    let d_weights = tokens.dot(&grad_out);
    let d_logits = softmax_backward(weights, d_weights.view());
    let mut d_tokens = Array2::zeros(tokens.raw_dim());
    for ((mut row, &a), &dl) in d_tokens.outer_iter_mut().zip(weights.iter()).zip(d_logits.iter()) {
        row.scaled_add(a, &grad_out);
        row.scaled_add(dl, &context_sum);
    }
    let d_context_sum = tokens.t().dot(&d_logits);
    (d_tokens, d_context_sum)
}

/// Local feature ŝ of a support instance, weighted by similarity with the
/// relation tokens.
pub fn local_support_feature(support: ArrayView2<'_, f64>, relation: ArrayView2<'_, f64>) -> Array1<f64> {
    attention_pool(support, relation).0
}

/// Local relation feature r̂: relation tokens pooled against each support
/// instance, averaged over the K shots.
pub fn local_relation_feature(relation: ArrayView2<'_, f64>, supports: &[ArrayView2<'_, f64>]) -> Array1<f64> {
    let parts: Vec<Array1<f64>> = supports
        .iter()
        .map(|s| attention_pool(relation, *s).0)
        .collect();
    mean_plus(&parts, Array1::zeros(relation.ncols()).view())
}

/// Local query feature q̂: self-similarity pooling.
pub fn local_query_feature(query: ArrayView2<'_, f64>) -> Array1<f64> {
    attention_pool(query, query).0
}

/// Builds every prototype with both paths active.
pub fn assemble_hybrid(encoded: &EncodedEpisode) -> HybridReps {
    assemble_hybrid_with(encoded, Paths::default())
}

pub fn assemble_hybrid_with(encoded: &EncodedEpisode, paths: Paths) -> HybridReps {
    let n = encoded.n_way();
    let k = encoded.k_shot();
    let d = encoded.dim();
    let zeros_local = || Array1::<f64>::zeros(d);
    let zeros_global = || Array1::<f64>::zeros(2 * d);

    let mut support_local = Vec::with_capacity(n);
    let mut support_weights = Vec::with_capacity(n);
    let mut relation_weights = Vec::with_capacity(n);
    let mut relation_local = Vec::with_capacity(n);
    let mut proto_local = Vec::with_capacity(n);
    let mut proto_global = Vec::with_capacity(n);

    for i in 0..n {
        let rel = encoded.relation_emb[i].matrix.view();
        if paths.local {
            let mut s_loc = Vec::with_capacity(k);
            let mut s_w = Vec::with_capacity(k);
            let mut r_parts = Vec::with_capacity(k);
            let mut r_w = Vec::with_capacity(k);
            for sup in &encoded.support_emb[i] {
                let (feat, w) = attention_pool(sup.matrix.view(), rel);
                s_loc.push(feat);
                s_w.push(w);
                let (feat, w) = attention_pool(rel, sup.matrix.view());
                r_parts.push(feat);
                r_w.push(w);
            }
            let r_loc = mean_plus(&r_parts, zeros_local().view());
            proto_local.push(local_prototype(&s_loc, r_loc.view()));
            relation_local.push(r_loc);
            support_local.push(s_loc);
            support_weights.push(s_w);
            relation_weights.push(r_w);
        } else {
            proto_local.push(zeros_local());
            relation_local.push(zeros_local());
            support_local.push(vec![zeros_local(); k]);
            support_weights.push(Vec::new());
            relation_weights.push(Vec::new());
        }
        proto_global.push(if paths.global {
            global_prototype(&encoded.support_global[i], encoded.relation_global[i].view())
        } else {
            zeros_global()
        });
    }

    let mut query_local = Vec::with_capacity(encoded.num_queries());
    let mut query_weights = Vec::with_capacity(encoded.num_queries());
    for q in &encoded.query_emb {
        if paths.local {
            let (feat, w) = attention_pool(q.matrix.view(), q.matrix.view());
            query_local.push(feat);
            query_weights.push(w);
        } else {
            query_local.push(zeros_local());
        }
    }

    let global_or_zero = |v: &Array1<f64>| if paths.global { v.clone() } else { zeros_global() };
    let proto_hybrid = (0..n)
        .map(|i| concat(proto_global[i].view(), proto_local[i].view()))
        .collect();
    let relation_hybrid = (0..n)
        .map(|i| concat(global_or_zero(&encoded.relation_global[i]).view(), relation_local[i].view()))
        .collect();
    let query_hybrid = encoded
        .query_global
        .iter()
        .zip(&query_local)
        .map(|(g, l)| concat(global_or_zero(g).view(), l.view()))
        .collect();

    HybridReps {
        paths,
        proto_global,
        proto_local,
        proto_hybrid,
        query_local,
        query_hybrid,
        relation_local,
        relation_hybrid,
        support_local,
        support_weights,
        relation_weights,
        query_weights,
    }
}

/// Dot products `q_h^j · p_h^i`, shape `R × N`.
pub fn query_logits(reps: &HybridReps) -> Array2<f64> {
    let r = reps.query_hybrid.len();
    let n = reps.proto_hybrid.len();
    Array2::from_shape_fn((r, n), |(j, i)| reps.query_hybrid[j].dot(&reps.proto_hybrid[i]))
}

/// Row-wise softmax of `query_logits`, shape `R × N`.
pub fn score_queries(reps: &HybridReps) -> Array2<f64> {
    softmax_rows(&query_logits(reps))
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (mut dst, src) in out.outer_iter_mut().zip(logits.outer_iter()) {
        dst.assign(&softmax(src));
    }
    out
}

/// Argmax of a probability row; ties go to the lowest index.
pub fn predict(probabilities: ArrayView1<'_, f64>) -> usize {
    argmax(probabilities)
}

/// Upstream gradients on the hybrid vectors.
#[derive(Debug, Clone)]
pub struct HybridGrads {
    pub proto_hybrid: Vec<Array1<f64>>,
    pub query_hybrid: Vec<Array1<f64>>,
    pub relation_hybrid: Vec<Array1<f64>>,
}

impl HybridGrads {
    pub fn zeros(n: usize, r: usize, d: usize) -> Self {
        HybridGrads {
            proto_hybrid: vec![Array1::zeros(3 * d); n],
            query_hybrid: vec![Array1::zeros(3 * d); r],
            relation_hybrid: vec![Array1::zeros(3 * d); n],
        }
    }
}

/// Gradients on the encoded episode: token matrices and global features.
#[derive(Debug, Clone)]
pub struct EncodedGrads {
    pub support_matrix: Vec<Vec<Array2<f64>>>,
    pub query_matrix: Vec<Array2<f64>>,
    pub relation_matrix: Vec<Array2<f64>>,
    pub support_global: Vec<Vec<Array1<f64>>>,
    pub relation_global: Vec<Array1<f64>>,
    pub query_global: Vec<Array1<f64>>,
}

/// Adds `v` to every row of `m`.
fn add_to_rows(m: &mut Array2<f64>, v: &Array1<f64>) {
    for mut row in m.outer_iter_mut() {
        row += v;
    }
}

/// Adjoint of `assemble_hybrid_with`.
pub fn assemble_hybrid_backward(encoded: &EncodedEpisode, reps: &HybridReps, grads: &HybridGrads) -> EncodedGrads {
    let n = encoded.n_way();
    let k = encoded.k_shot();
    let d = encoded.dim();
    let kf = k as f64;

    let mut out = EncodedGrads {
        support_matrix: encoded
            .support_emb
            .iter()
            .map(|row| row.iter().map(|e| Array2::zeros(e.matrix.raw_dim())).collect())
            .collect(),
        query_matrix: encoded
            .query_emb
            .iter()
            .map(|e| Array2::zeros(e.matrix.raw_dim()))
            .collect(),
        relation_matrix: encoded
            .relation_emb
            .iter()
            .map(|e| Array2::zeros(e.matrix.raw_dim()))
            .collect(),
        support_global: vec![vec![Array1::zeros(2 * d); k]; n],
        relation_global: vec![Array1::zeros(2 * d); n],
        query_global: vec![Array1::zeros(2 * d); encoded.num_queries()],
    };

    for i in 0..n {
        let d_proto = &grads.proto_hybrid[i];
        let d_rel = &grads.relation_hybrid[i];
        if reps.paths.global {
            let d_pg = d_proto.slice(s![..2 * d]);
            for k_idx in 0..k {
                out.support_global[i][k_idx].scaled_add(1.0 / kf, &d_pg);
            }
            out.relation_global[i] += &d_pg;
            out.relation_global[i] += &d_rel.slice(s![..2 * d]);
        }
        if reps.paths.local {
            let d_pl = d_proto.slice(s![2 * d..]);
            // r̂ receives from p_l directly and from r_h.
            let d_rloc = &d_pl + &d_rel.slice(s![2 * d..]);
            let rel = encoded.relation_emb[i].matrix.view();
            for k_idx in 0..k {
                let sup = encoded.support_emb[i][k_idx].matrix.view();
                // ŝ_k = pool(S_k, R)
                let d_sloc = &d_pl / kf;
                let (d_s, d_rsum) =
                    attention_pool_backward(sup, rel, reps.support_weights[i][k_idx].view(), d_sloc.view());
                out.support_matrix[i][k_idx] += &d_s;
                add_to_rows(&mut out.relation_matrix[i], &d_rsum);
                // r̂_k = pool(R, S_k)
                let d_rk = &d_rloc / kf;
                let (d_r, d_ssum) =
                    attention_pool_backward(rel, sup, reps.relation_weights[i][k_idx].view(), d_rk.view());
                out.relation_matrix[i] += &d_r;
                add_to_rows(&mut out.support_matrix[i][k_idx], &d_ssum);
            }
        }
    }

    for (j, d_q) in grads.query_hybrid.iter().enumerate() {
        if reps.paths.global {
            out.query_global[j] += &d_q.slice(s![..2 * d]);
        }
        if reps.paths.local {
            let q = encoded.query_emb[j].matrix.view();
            let d_ql = d_q.slice(s![2 * d..]).to_owned();
            let (d_tokens, d_sum) = attention_pool_backward(q, q, reps.query_weights[j].view(), d_ql.view());
            out.query_matrix[j] += &d_tokens;
            add_to_rows(&mut out.query_matrix[j], &d_sum);
        }
    }
    out
}
