//! Episodic few-shot relation extraction with hybrid prototypes.
//!
//! Each episode holds `N` relations with `K` labelled support instances each
//! and `R` queries. Instances and relation descriptions are encoded into
//! token matrices; global features (marker rows, `[CLS]` through a linear
//! head) and local features (attention pooling) are concatenated into hybrid
//! prototypes, and queries are scored by dot product. Training combines a
//! relation-prototype contrastive term with a task-weighted focal loss.

pub mod data;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod math;
pub mod protonet;
pub mod rng;
pub mod training;
pub mod eval;

pub use error::{DataError, EncodeError, Error, NumericError, Result};
