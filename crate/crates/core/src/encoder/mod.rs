//! Contextual token encoders and the global (entity-start / `[CLS]`) features
//! read off them.
//!
//! Two backbones are provided: a trainable toy encoder (embedding table plus
//! an optional self-attention mixing layer) and a frozen store of
//! precomputed matrices. Both share a trainable relation head mapping the
//! `[CLS]` row from `d` to `2d`.

pub mod attention;
pub mod frozen;
pub mod vocab;

use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayViewMut1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Instance, InstanceKey};
use crate::error::EncodeError;
use crate::math::concat;

pub use attention::Attention;
pub use frozen::FrozenEmbeddings;
pub use vocab::Vocabulary;

use attention::AttentionCache;

/// Default hidden size of the toy encoder.
pub const DEFAULT_DIM: usize = 16;
/// Half-width of the uniform initializer.
pub const INIT_SCALE: f64 = 0.1;

/// Rows of interest inside an encoded sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Markers {
    pub cls: Option<usize>,
    pub head: Option<usize>,
    pub tail: Option<usize>,
}

/// An `l × d` matrix of contextual token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    pub matrix: Array2<f64>,
    pub markers: Markers,
}

impl TokenEmbeddings {
    pub fn new(matrix: Array2<f64>, markers: Markers) -> Self {
        TokenEmbeddings { matrix, markers }
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub(crate) fn check_markers(&self) -> Result<(), String> {
        if self.matrix.nrows() == 0 || self.matrix.ncols() == 0 {
            return Err("empty matrix".into());
        }
        for (name, pos) in [
            ("cls", self.markers.cls),
            ("head", self.markers.head),
            ("tail", self.markers.tail),
        ] {
            if let Some(p) = pos {
                if p >= self.matrix.nrows() {
                    return Err(format!("{name} row {p} out of range"));
                }
            }
        }
        if self.markers.cls.is_none() && (self.markers.head.is_none() || self.markers.tail.is_none()) {
            return Err("record needs either a cls row or both head and tail rows".into());
        }
        if self.matrix.iter().any(|v| !v.is_finite()) {
            return Err("non-finite entry".into());
        }
        Ok(())
    }
}

/// `[row(head_start); row(tail_start)]`, size `2d`.
pub fn global_instance_feature(emb: &TokenEmbeddings) -> Array1<f64> {
    let head = emb.markers.head.expect("instance embedding without head marker");
    let tail = emb.markers.tail.expect("instance embedding without tail marker");
    concat(emb.matrix.row(head), emb.matrix.row(tail))
}

/// Scatters the gradient of `global_instance_feature` back onto the rows.
pub fn global_instance_feature_backward(
    emb: &TokenEmbeddings,
    grad: ArrayView1<'_, f64>,
    d_matrix: &mut Array2<f64>,
) {
    let d = emb.dim();
    let head = emb.markers.head.unwrap();
    let tail = emb.markers.tail.unwrap();
    let mut row = d_matrix.row_mut(head);
    row += &grad.slice(s![..d]);
    let mut row = d_matrix.row_mut(tail);
    row += &grad.slice(s![d..]);
}

/// All trainable parameter blocks. Gradients use the same container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// `vocab × d`; absent for the frozen backbone.
    pub embedding: Option<Array2<f64>>,
    /// Mixing layer; absent when disabled or frozen.
    pub attention: Option<Attention>,
    /// `2d × d` map from the `[CLS]` row to the relation global feature.
    pub relation_weight: Array2<f64>,
    pub relation_bias: Array1<f64>,
}

impl Params {
    /// Named flat views of every block, in a fixed order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = Vec::new();
        if let Some(e) = &self.embedding {
            out.push(("embedding", e.as_slice().unwrap()));
        }
        if let Some(a) = &self.attention {
            out.push(("attention.query", a.query.as_slice().unwrap()));
            out.push(("attention.key", a.key.as_slice().unwrap()));
            out.push(("attention.value", a.value.as_slice().unwrap()));
        }
        out.push(("relation_head.weight", self.relation_weight.as_slice().unwrap()));
        out.push(("relation_head.bias", self.relation_bias.as_slice().unwrap()));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = Vec::new();
        if let Some(e) = &mut self.embedding {
            out.push(("embedding", e.as_slice_mut().unwrap()));
        }
        if let Some(a) = &mut self.attention {
            out.push(("attention.query", a.query.as_slice_mut().unwrap()));
            out.push(("attention.key", a.key.as_slice_mut().unwrap()));
            out.push(("attention.value", a.value.as_slice_mut().unwrap()));
        }
        out.push(("relation_head.weight", self.relation_weight.as_slice_mut().unwrap()));
        out.push(("relation_head.bias", self.relation_bias.as_slice_mut().unwrap()));
        out
    }

    /// Shapes of the blocks, aligned with `blocks()`.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        if let Some(e) = &self.embedding {
            out.push(e.shape().to_vec());
        }
        if let Some(a) = &self.attention {
            for m in [&a.query, &a.key, &a.value] {
                out.push(m.shape().to_vec());
            }
        }
        out.push(self.relation_weight.shape().to_vec());
        out.push(self.relation_bias.shape().to_vec());
        out
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            embedding: self.embedding.as_ref().map(|e| Array2::zeros(e.raw_dim())),
            attention: self.attention.as_ref().map(|a| Attention::zeros(a.query.nrows())),
            relation_weight: Array2::zeros(self.relation_weight.raw_dim()),
            relation_bias: Array1::zeros(self.relation_bias.raw_dim()),
        }
    }

    pub fn add_assign(&mut self, other: &Params) {
        for ((_, dst), (_, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, block) in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// Name of the first block holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.blocks()
            .into_iter()
            .find(|(_, b)| b.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }
}

/// Where the token embeddings come from.
#[derive(Debug, Clone)]
pub enum Backbone {
    Toy(Arc<Vocabulary>),
    Frozen(Arc<FrozenEmbeddings>),
}

/// A backbone plus its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub backbone: Backbone,
    pub params: Params,
}

/// Forward intermediates of one encoded sequence.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    ids: Vec<usize>,
    inputs: Array2<f64>,
    attention: Option<AttentionCache>,
}

impl Model {
    /// Toy encoder with uniform(−0.1, 0.1) initialization; the relation bias
    /// starts at zero.
    pub fn toy<R: Rng + ?Sized>(vocab: Vocabulary, d: usize, mixing: bool, rng: &mut R) -> Self {
        let embedding = Array2::from_shape_simple_fn((vocab.len(), d), || {
            rng.random_range(-INIT_SCALE..INIT_SCALE)
        });
        let attention = mixing.then(|| Attention::uniform(d, INIT_SCALE, rng));
        let relation_weight =
            Array2::from_shape_simple_fn((2 * d, d), || rng.random_range(-INIT_SCALE..INIT_SCALE));
        Model {
            backbone: Backbone::Toy(Arc::new(vocab)),
            params: Params {
                embedding: Some(embedding),
                attention,
                relation_weight,
                relation_bias: Array1::zeros(2 * d),
            },
        }
    }

    /// Frozen backbone; only the relation head is trainable.
    pub fn frozen<R: Rng + ?Sized>(store: Arc<FrozenEmbeddings>, rng: &mut R) -> Self {
        let d = store.dim();
        let relation_weight =
            Array2::from_shape_simple_fn((2 * d, d), || rng.random_range(-INIT_SCALE..INIT_SCALE));
        Model {
            backbone: Backbone::Frozen(store),
            params: Params {
                embedding: None,
                attention: None,
                relation_weight,
                relation_bias: Array1::zeros(2 * d),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.params.relation_weight.ncols()
    }

    pub fn is_frozen(&self) -> bool {
        matches!(self.backbone, Backbone::Frozen(_))
    }

    pub fn vocabulary(&self) -> Option<&Vocabulary> {
        match &self.backbone {
            Backbone::Toy(v) => Some(v),
            Backbone::Frozen(_) => None,
        }
    }

    /// Sets every parameter to zero.
    pub fn zero_params(&mut self) {
        for (_, block) in self.params.blocks_mut() {
            block.fill(0.0);
        }
    }

    fn encode_ids(&self, tokens: &[&str], markers: Markers) -> (TokenEmbeddings, SequenceCache) {
        let vocab = match &self.backbone {
            Backbone::Toy(v) => v,
            Backbone::Frozen(_) => unreachable!("toy path on frozen backbone"),
        };
        let table = self.params.embedding.as_ref().expect("toy backbone without table");
        let ids: Vec<usize> = tokens.iter().map(|t| vocab.id(t)).collect();
        let mut inputs = Array2::zeros((ids.len(), self.dim()));
        for (mut row, &id) in inputs.outer_iter_mut().zip(&ids) {
            row.assign(&table.row(id));
        }
        let (matrix, attention) = match &self.params.attention {
            Some(att) => {
                let (h, cache) = att.forward(inputs.view());
                (h, Some(cache))
            }
            None => (inputs.clone(), None),
        };
        (
            TokenEmbeddings { matrix, markers },
            SequenceCache {
                ids,
                inputs,
                attention,
            },
        )
    }

    /// Encodes an instance with entity markers inserted. The `key` selects
    /// the stored matrix for the frozen backbone.
    pub fn encode_instance_traced(
        &self,
        key: &InstanceKey,
        inst: &Instance,
    ) -> Result<(TokenEmbeddings, Option<SequenceCache>), EncodeError> {
        match &self.backbone {
            Backbone::Toy(_) => {
                let marked = vocab::mark_instance(inst);
                let markers = Markers {
                    cls: None,
                    head: Some(marked.head_start),
                    tail: Some(marked.tail_start),
                };
                let (emb, cache) = self.encode_ids(&marked.tokens, markers);
                Ok((emb, Some(cache)))
            }
            Backbone::Frozen(store) => {
                let emb = store.get(&frozen::instance_record_key(key))?;
                if emb.markers.head.is_none() || emb.markers.tail.is_none() {
                    return Err(EncodeError::Malformed {
                        key: key.to_string(),
                        reason: "instance record lacks head/tail rows".into(),
                    });
                }
                Ok((emb.clone(), None))
            }
        }
    }

    pub fn encode_instance(&self, key: &InstanceKey, inst: &Instance) -> Result<TokenEmbeddings, EncodeError> {
        self.encode_instance_traced(key, inst).map(|(e, _)| e)
    }

    /// Encodes `[CLS] + name + description` for a relation.
    pub fn encode_relation_traced(
        &self,
        relation_id: &str,
        name: &[String],
        description: Option<&[String]>,
    ) -> Result<(TokenEmbeddings, Option<SequenceCache>), EncodeError> {
        match &self.backbone {
            Backbone::Toy(_) => {
                if name.is_empty() {
                    return Err(EncodeError::EmptySequence);
                }
                let tokens = vocab::relation_sequence(name, description);
                let markers = Markers {
                    cls: Some(0),
                    head: None,
                    tail: None,
                };
                let (emb, cache) = self.encode_ids(&tokens, markers);
                Ok((emb, Some(cache)))
            }
            Backbone::Frozen(store) => {
                let emb = store.get(&frozen::relation_record_key(relation_id))?;
                if emb.markers.cls.is_none() {
                    return Err(EncodeError::Malformed {
                        key: relation_id.to_string(),
                        reason: "relation record lacks a cls row".into(),
                    });
                }
                Ok((emb.clone(), None))
            }
        }
    }

    pub fn encode_relation(
        &self,
        relation_id: &str,
        name: &[String],
        description: Option<&[String]>,
    ) -> Result<TokenEmbeddings, EncodeError> {
        self.encode_relation_traced(relation_id, name, description)
            .map(|(e, _)| e)
    }

    /// `W_rel · row(cls) + b`, size `2d`.
    pub fn global_relation_feature(&self, emb: &TokenEmbeddings) -> Array1<f64> {
        let cls = emb.markers.cls.expect("relation embedding without cls marker");
        self.params.relation_weight.dot(&emb.matrix.row(cls)) + &self.params.relation_bias
    }

    /// Adjoint of `global_relation_feature`: accumulates head gradients and
    /// adds dL/d(cls row) into `d_matrix`.
    pub fn global_relation_feature_backward(
        &self,
        emb: &TokenEmbeddings,
        grad: ArrayView1<'_, f64>,
        d_matrix: &mut Array2<f64>,
        grads: &mut Params,
    ) {
        let cls = emb.markers.cls.unwrap();
        let h = emb.matrix.row(cls);
        for (mut w_row, &g) in grads.relation_weight.outer_iter_mut().zip(grad.iter()) {
            w_row.scaled_add(g, &h);
        }
        grads.relation_bias += &grad;
        let mut row: ArrayViewMut1<'_, f64> = d_matrix.row_mut(cls);
        row += &self.params.relation_weight.t().dot(&grad);
    }

    /// Pushes dL/d(matrix) of one encoded sequence into the encoder blocks.
    /// A `None` cache (frozen backbone) contributes nothing.
    pub fn sequence_backward(&self, cache: Option<&SequenceCache>, d_matrix: Array2<f64>, grads: &mut Params) {
        let Some(cache) = cache else { return };
        let d_inputs = match (&self.params.attention, &cache.attention, &mut grads.attention) {
            (Some(att), Some(att_cache), Some(att_grads)) => {
                att.backward(cache.inputs.view(), att_cache, d_matrix.view(), att_grads)
            }
            _ => d_matrix,
        };
        let table = grads.embedding.as_mut().expect("toy gradients without table");
        for (&id, row) in cache.ids.iter().zip(d_inputs.outer_iter()) {
            let mut dst = table.row_mut(id);
            dst += &row;
        }
    }
}
