//! Versioned checkpoint container: config echo, vocabulary and every
//! parameter block with a name/shape/dtype header. Floats are written with
//! round-trip precision, so save/load is bitwise.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::encoder::{Attention, Backbone, FrozenEmbeddings, Model, Params, Vocabulary};
use crate::error::{DataError, EncodeError, Error, Result};

use super::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "protorel-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Block {
    #[serde(flatten)]
    header: BlockHeader,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BackboneKind {
    Toy,
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    version: u32,
    pub config: TrainConfig,
    backbone: BackboneKind,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocabulary: Option<Vocabulary>,
    blocks: Vec<Block>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, config: &TrainConfig) -> Self {
        let blocks = model
            .params
            .blocks()
            .into_iter()
            .zip(model.params.shapes())
            .map(|((name, data), shape)| Block {
                header: BlockHeader {
                    name: name.to_string(),
                    shape,
                    dtype: "f64".into(),
                },
                data: data.to_vec(),
            })
            .collect();
        let (backbone, vocabulary) = match &model.backbone {
            Backbone::Toy(v) => (BackboneKind::Toy, Some((**v).clone())),
            Backbone::Frozen(_) => (BackboneKind::Frozen, None),
        };
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            backbone,
            dim: model.dim(),
            vocabulary,
            blocks,
        }
    }

    pub fn headers(&self) -> Vec<&BlockHeader> {
        self.blocks.iter().map(|b| &b.header).collect()
    }

    pub fn is_frozen(&self) -> bool {
        self.backbone == BackboneKind::Frozen
    }

    fn take(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let block = self
            .blocks
            .iter()
            .find(|b| b.header.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))?;
        if block.header.shape != shape || block.header.dtype != "f64" {
            return Err(Error::Checkpoint(format!(
                "block {name} has shape {:?} ({}), expected {shape:?} (f64)",
                block.header.shape, block.header.dtype
            )));
        }
        if block.data.len() != shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!("block {name} data length does not match its shape")));
        }
        Ok(block.data.clone())
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let data = self.take(name, &[rows, cols])?;
        Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
    }

    /// Rebuilds the model. A frozen checkpoint needs its embedding store.
    pub fn into_model(self, frozen: Option<Arc<FrozenEmbeddings>>) -> Result<Model> {
        let d = self.dim;
        let known: Vec<&str> = match self.backbone {
            BackboneKind::Toy => vec![
                "embedding",
                "attention.query",
                "attention.key",
                "attention.value",
                "relation_head.weight",
                "relation_head.bias",
            ],
            BackboneKind::Frozen => vec!["relation_head.weight", "relation_head.bias"],
        };
        if let Some(b) = self.blocks.iter().find(|b| !known.contains(&b.header.name.as_str())) {
            return Err(Error::Checkpoint(format!("unexpected block {}", b.header.name)));
        }
        let relation_weight = self.matrix("relation_head.weight", 2 * d, d)?;
        let relation_bias = Array1::from(self.take("relation_head.bias", &[2 * d])?);
        let backbone = match self.backbone {
            BackboneKind::Toy => {
                let vocab = self
                    .vocabulary
                    .clone()
                    .ok_or_else(|| Error::Checkpoint("toy checkpoint without vocabulary".into()))?;
                Backbone::Toy(Arc::new(vocab))
            }
            BackboneKind::Frozen => {
                let store = frozen.ok_or_else(|| Error::Checkpoint("frozen checkpoint needs an embedding store".into()))?;
                if store.dim() != d {
                    return Err(EncodeError::DimensionMismatch {
                        key: "<embedding store>".into(),
                        expected: d,
                        found: store.dim(),
                    }
                    .into());
                }
                Backbone::Frozen(store)
            }
        };
        let (embedding, attention) = match &backbone {
            Backbone::Toy(vocab) => {
                let embedding = self.matrix("embedding", vocab.len(), d)?;
                let has_attention = self.blocks.iter().any(|b| b.header.name.starts_with("attention."));
                let attention = if has_attention {
                    Some(Attention {
                        query: self.matrix("attention.query", d, d)?,
                        key: self.matrix("attention.key", d, d)?,
                        value: self.matrix("attention.value", d, d)?,
                    })
                } else {
                    None
                };
                (Some(embedding), attention)
            }
            Backbone::Frozen(_) => (None, None),
        };
        Ok(Model {
            backbone,
            params: Params {
                embedding,
                attention,
                relation_weight,
                relation_bias,
            },
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| DataError::parse(origin, &e))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {} version {}",
                ck.format, ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|e| DataError::io(path, e).into())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json_str(&text, path)
    }
}
