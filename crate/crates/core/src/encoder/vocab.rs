//! Token vocabulary and the entity-marker input layout.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::Instance;

pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const HEAD_START: &str = "<H>";
pub const HEAD_END: &str = "</H>";
pub const TAIL_START: &str = "<T>";
pub const TAIL_END: &str = "</T>";

/// Reserved tokens, in id order.
pub const RESERVED: [&str; 6] = [UNK, CLS, HEAD_START, HEAD_END, TAIL_START, TAIL_END];

pub const UNK_ID: usize = 0;
pub const CLS_ID: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Reserved tokens followed by the sorted set of `tokens`.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<&str> = tokens
            .into_iter()
            .filter(|t| !RESERVED.contains(t))
            .collect();
        RESERVED
            .iter()
            .copied()
            .chain(words)
            .map(String::from)
            .collect::<Vec<_>>()
            .into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }
}

/// An instance's token sequence with entity markers inserted, plus the
/// positions of the `<H>` and `<T>` rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedSequence<'a> {
    pub tokens: Vec<&'a str>,
    pub head_start: usize,
    pub tail_start: usize,
}

/// Wraps the head span in `<H> … </H>` and the tail span in `<T> … </T>`.
/// The result always has `len(tokens) + 4` entries.
pub fn mark_instance(inst: &Instance) -> MarkedSequence<'_> {
    let mut tokens = Vec::with_capacity(inst.tokens.len() + 4);
    let mut head_start = 0;
    let mut tail_start = 0;
    for (i, tok) in inst.tokens.iter().enumerate() {
        if i == inst.head.start {
            head_start = tokens.len();
            tokens.push(HEAD_START);
        }
        if i == inst.tail.start {
            tail_start = tokens.len();
            tokens.push(TAIL_START);
        }
        tokens.push(tok.as_str());
        if i == inst.tail.end {
            tokens.push(TAIL_END);
        }
        if i == inst.head.end {
            tokens.push(HEAD_END);
        }
    }
    MarkedSequence {
        tokens,
        head_start,
        tail_start,
    }
}

/// `[CLS]` followed by the name tokens and, when present, the description.
pub fn relation_sequence<'a>(name: &'a [String], description: Option<&'a [String]>) -> Vec<&'a str> {
    std::iter::once(CLS)
        .chain(name.iter().map(String::as_str))
        .chain(description.into_iter().flatten().map(String::as_str))
        .collect()
}
