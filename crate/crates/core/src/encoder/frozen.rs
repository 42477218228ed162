//! Precomputed token embeddings loaded from disk.
//!
//! File layout (JSON, format tag `protorel-frozen-embeddings`, version 1):
//!
//! ```json
//! {
//!   "format": "protorel-frozen-embeddings",
//!   "version": 1,
//!   "d": 768,
//!   "records": {
//!     "P726#0":   {"rows": 27, "cols": 768, "head": 3, "tail": 11, "data": [...]},
//!     "rel:P726": {"rows": 14, "cols": 768, "cls": 0, "data": [...]}
//!   }
//! }
//! ```
//!
//! Instance records are keyed `<relation_id>#<index>` (index within the
//! relation's list in the corpus file) and carry the `<H>`/`<T>` row
//! positions. Relation records are keyed `rel:<relation_id>` and carry the
//! `[CLS]` row. `data` is the row-major `rows × cols` matrix.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::InstanceKey;
use crate::error::{DataError, EncodeError, Error};

use super::{Markers, TokenEmbeddings};

pub const FORMAT_TAG: &str = "protorel-frozen-embeddings";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordFile {
    rows: usize,
    cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tail: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cls: Option<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreFile {
    format: String,
    version: u32,
    d: usize,
    records: BTreeMap<String, RecordFile>,
}

/// Read-only store of per-sequence embedding matrices with a fixed width.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEmbeddings {
    d: usize,
    records: BTreeMap<String, TokenEmbeddings>,
}

pub fn instance_record_key(key: &InstanceKey) -> String {
    key.to_string()
}

pub fn relation_record_key(relation_id: &str) -> String {
    format!("rel:{relation_id}")
}

impl FrozenEmbeddings {
    pub fn new(d: usize) -> Self {
        FrozenEmbeddings {
            d,
            records: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Adds a record, checking its width and marker rows.
    pub fn insert(&mut self, key: impl Into<String>, emb: TokenEmbeddings) -> Result<(), EncodeError> {
        let key = key.into();
        if emb.matrix.ncols() != self.d {
            return Err(EncodeError::DimensionMismatch {
                key,
                expected: self.d,
                found: emb.matrix.ncols(),
            });
        }
        emb.check_markers().map_err(|reason| EncodeError::Malformed {
            key: key.clone(),
            reason,
        })?;
        self.records.insert(key, emb);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&TokenEmbeddings, EncodeError> {
        self.records
            .get(key)
            .ok_or_else(|| EncodeError::MissingKey(key.to_string()))
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self, Error> {
        let file: StoreFile =
            serde_json::from_str(text).map_err(|e| DataError::parse(origin, &e))?;
        if file.format != FORMAT_TAG || file.version != FORMAT_VERSION {
            return Err(EncodeError::Malformed {
                key: "<header>".into(),
                reason: format!(
                    "unsupported format {} version {}",
                    file.format, file.version
                ),
            }
            .into());
        }
        let mut store = FrozenEmbeddings::new(file.d);
        for (key, rec) in file.records {
            if rec.cols != file.d {
                return Err(EncodeError::DimensionMismatch {
                    key,
                    expected: file.d,
                    found: rec.cols,
                }
                .into());
            }
            let matrix = Array2::from_shape_vec((rec.rows, rec.cols), rec.data).map_err(|e| {
                EncodeError::Malformed {
                    key: key.clone(),
                    reason: e.to_string(),
                }
            })?;
            let markers = Markers {
                cls: rec.cls,
                head: rec.head,
                tail: rec.tail,
            };
            store.insert(key, TokenEmbeddings { matrix, markers })?;
        }
        Ok(store)
    }

    pub fn to_json_string(&self) -> String {
        let records = self
            .records
            .iter()
            .map(|(key, emb)| {
                let (rows, cols) = emb.matrix.dim();
                let rec = RecordFile {
                    rows,
                    cols,
                    head: emb.markers.head,
                    tail: emb.markers.tail,
                    cls: emb.markers.cls,
                    data: emb.matrix.iter().copied().collect(),
                };
                (key.clone(), rec)
            })
            .collect();
        let file = StoreFile {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            d: self.d,
            records,
        };
        serde_json::to_string(&file).expect("embedding serialization cannot fail")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json_str(&text, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|e| DataError::io(path, e).into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rows: usize, cols: usize) -> TokenEmbeddings {
        TokenEmbeddings {
            matrix: Array2::from_shape_fn((rows, cols), |(i, j)| {
                (i as f64 + 1.0) / 3.0 - (j as f64) * 1e-17 + 0.1
            }),
            markers: Markers {
                cls: None,
                head: Some(0),
                tail: Some(rows - 1),
            },
        }
    }

    #[test]
    fn reports_dimension() {
        let mut store = FrozenEmbeddings::new(768);
        store.insert("P1#0", record(5, 768)).unwrap();
        let back = FrozenEmbeddings::from_json_str(&store.to_json_string(), Path::new("mem")).unwrap();
        assert_eq!(back.dim(), 768);
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let wide = vec!["0.5"; 768].join(",");
        let narrow = vec!["0.5"; 16].join(",");
        let text = format!(
            r#"{{"format":"protorel-frozen-embeddings","version":1,"d":768,"records":{{
            "a#0":{{"rows":1,"cols":768,"head":0,"tail":0,"data":[{wide}]}},
            "b#0":{{"rows":1,"cols":16,"head":0,"tail":0,"data":[{narrow}]}}}}}}"#
        );
        let err = FrozenEmbeddings::from_json_str(&text, Path::new("mem")).unwrap_err();
        assert!(matches!(
            err,
            Error::Encode(EncodeError::DimensionMismatch { expected: 768, found: 16, .. })
        ));
    }

    #[test]
    fn insert_checks_width() {
        let mut store = FrozenEmbeddings::new(768);
        assert!(store.insert("x#0", record(2, 16)).is_err());
    }

    #[test]
    fn matrices_round_trip_bit_exactly() {
        let mut store = FrozenEmbeddings::new(7);
        let mut rec = record(4, 7);
        rec.matrix[[1, 2]] = std::f64::consts::PI * 1e-300;
        rec.matrix[[3, 6]] = -1.0 / 3.0;
        store.insert("P9#4", rec.clone()).unwrap();
        let back = FrozenEmbeddings::from_json_str(&store.to_json_string(), Path::new("mem")).unwrap();
        let got = back.get("P9#4").unwrap();
        for (a, b) in got.matrix.iter().zip(rec.matrix.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(got.markers, rec.markers);
    }

    #[test]
    fn missing_key() {
        let store = FrozenEmbeddings::new(4);
        assert!(matches!(store.get("nope"), Err(EncodeError::MissingKey(_))));
    }
}
