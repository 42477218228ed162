//! Single-head self-attention mixing layer with a residual connection:
//! `H = X + softmax(XWq (XWk)ᵀ / √d) XWv`.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{softmax, softmax_backward};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
}

/// Forward intermediates needed by the adjoint.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    weights: Array2<f64>,
}

impl Attention {
    pub fn zeros(d: usize) -> Self {
        Attention {
            query: Array2::zeros((d, d)),
            key: Array2::zeros((d, d)),
            value: Array2::zeros((d, d)),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> Self {
        let mut draw = || Array2::from_shape_simple_fn((d, d), || rng.random_range(-scale..scale));
        Attention {
            query: draw(),
            key: draw(),
            value: draw(),
        }
    }

    fn scale(&self) -> f64 {
        1.0 / (self.query.nrows() as f64).sqrt()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, AttentionCache) {
        let q = x.dot(&self.query);
        let k = x.dot(&self.key);
        let v = x.dot(&self.value);
        let scores = q.dot(&k.t()) * self.scale();
        let mut weights = Array2::zeros(scores.raw_dim());
        for (mut row, s) in weights.outer_iter_mut().zip(scores.outer_iter()) {
            row.assign(&softmax(s));
        }
        let h = &x + &weights.dot(&v);
        (h, AttentionCache { q, k, v, weights })
    }

    /// Accumulates parameter gradients into `grads` and returns dL/dX.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        cache: &AttentionCache,
        d_h: ArrayView2<'_, f64>,
        grads: &mut Attention,
    ) -> Array2<f64> {
        let scale = self.scale();
        let d_weights = d_h.dot(&cache.v.t());
        let d_v = cache.weights.t().dot(&d_h);
        let mut d_scores = Array2::zeros(d_weights.raw_dim());
        Zip::from(d_scores.axis_iter_mut(Axis(0)))
            .and(cache.weights.axis_iter(Axis(0)))
            .and(d_weights.axis_iter(Axis(0)))
            .for_each(|mut out, w, dw| out.assign(&softmax_backward(w, dw)));
        d_scores *= scale;
        let d_q = d_scores.dot(&cache.k);
        let d_k = d_scores.t().dot(&cache.q);

        grads.query += &x.t().dot(&d_q);
        grads.key += &x.t().dot(&d_k);
        grads.value += &x.t().dot(&d_v);

        let mut d_x = d_h.to_owned();
        d_x += &d_q.dot(&self.query.t());
        d_x += &d_k.dot(&self.key.t());
        d_x += &d_v.dot(&self.value.t());
        d_x
    }
}
