//! Corpus and relation-catalog ingestion plus N-way-K-shot episode sampling.
//!
//! The on-disk corpus layout is the public FewRel one: a JSON object keyed
//! by relation id, each value an array of
//! `{"tokens": [...], "h": [name, id, [[indices]]], "t": [...]}` records.
//! The catalog is `{relation_id: [name, description]}`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::marker::PhantomData;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Inclusive, 0-based token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }
}

/// One labeled sentence with its head and tail entity mentions.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub tokens: Vec<String>,
    pub head: Span,
    pub tail: Span,
    pub relation_id: String,
}

impl Instance {
    /// Checks the span and non-emptiness invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.tokens.is_empty() {
            return Err("token list is empty".into());
        }
        if self.relation_id.is_empty() {
            return Err("relation id is empty".into());
        }
        for (name, span) in [("head", self.head), ("tail", self.tail)] {
            if span.start > span.end {
                return Err(format!(
                    "{name} span start {} exceeds end {}",
                    span.start, span.end
                ));
            }
            if span.end >= self.tokens.len() {
                return Err(format!(
                    "{name} span end {} out of range for {} tokens",
                    span.end,
                    self.tokens.len()
                ));
            }
        }
        Ok(())
    }
}

/// Identity of an instance inside a corpus: relation id plus its position in
/// that relation's list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceKey {
    pub relation: String,
    pub index: usize,
}

impl InstanceKey {
    pub fn new(relation: impl Into<String>, index: usize) -> Self {
        InstanceKey {
            relation: relation.into(),
            index,
        }
    }
}

impl fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.relation, self.index)
    }
}

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EntityRecord(String, String, Vec<Vec<i64>>);

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceRecord {
    tokens: Vec<String>,
    h: EntityRecord,
    t: EntityRecord,
}

/// JSON map that rejects repeated keys instead of keeping the last one.
struct UniqueMap<V>(BTreeMap<String, V>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for UniqueMap<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct MapVisitor<V>(PhantomData<V>);

        impl<'de, V: Deserialize<'de>> Visitor<'de> for MapVisitor<V> {
            type Value = UniqueMap<V>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object keyed by relation id")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut out = BTreeMap::new();
                while let Some((key, value)) = access.next_entry::<String, V>()? {
                    if out.contains_key(&key) {
                        return Err(de::Error::custom(format!("duplicate relation id {key}")));
                    }
                    out.insert(key, value);
                }
                Ok(UniqueMap(out))
            }
        }

        deserializer.deserialize_map(MapVisitor(PhantomData))
    }
}

fn span_from_positions(
    relation: &str,
    index: usize,
    field: &'static str,
    entity: &EntityRecord,
) -> Result<Span, DataError> {
    let field_err = |reason: String| DataError::Field {
        relation: relation.to_string(),
        index,
        field,
        reason,
    };
    let positions = entity
        .2
        .first()
        .filter(|p| !p.is_empty())
        .ok_or_else(|| field_err("entity has no token positions".into()))?;
    let min = *positions.iter().min().unwrap();
    let max = *positions.iter().max().unwrap();
    if min < 0 {
        return Err(field_err(format!("negative token index {min}")));
    }
    Ok(Span::new(min as usize, max as usize))
}

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

/// Relation id → instances, ordered by relation id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    relations: BTreeMap<String, Vec<Instance>>,
}

impl Corpus {
    /// Builds a corpus from in-memory instances, validating each one.
    pub fn from_relations(relations: BTreeMap<String, Vec<Instance>>) -> Result<Self, DataError> {
        for (relation, instances) in &relations {
            for (index, inst) in instances.iter().enumerate() {
                if &inst.relation_id != relation {
                    return Err(DataError::Validation {
                        relation: relation.clone(),
                        index,
                        reason: format!("instance carries relation id {}", inst.relation_id),
                    });
                }
                inst.validate().map_err(|reason| DataError::Validation {
                    relation: relation.clone(),
                    index,
                    reason,
                })?;
            }
        }
        Ok(Corpus { relations })
    }

    /// Parses a corpus from JSON text. `origin` is used in error messages.
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self, DataError> {
        let UniqueMap(raw): UniqueMap<Vec<InstanceRecord>> =
            serde_json::from_str(text).map_err(|e| DataError::parse(origin, &e))?;
        let mut relations = BTreeMap::new();
        for (relation, records) in raw {
            let mut instances = Vec::with_capacity(records.len());
            for (index, rec) in records.into_iter().enumerate() {
                let head = span_from_positions(&relation, index, "h", &rec.h)?;
                let tail = span_from_positions(&relation, index, "t", &rec.t)?;
                instances.push(Instance {
                    tokens: rec.tokens,
                    head,
                    tail,
                    relation_id: relation.clone(),
                });
            }
            relations.insert(relation, instances);
        }
        Corpus::from_relations(relations)
    }

    /// Serializes back to the FewRel layout.
    pub fn to_json_string(&self) -> String {
        let mut out: BTreeMap<&str, Vec<InstanceRecord>> = BTreeMap::new();
        for (relation, instances) in &self.relations {
            let records = instances
                .iter()
                .enumerate()
                .map(|(i, inst)| {
                    let entity = |span: Span, tag: &str| {
                        EntityRecord(
                            inst.tokens[span.start..=span.end].join(" "),
                            format!("{tag}{i}"),
                            vec![(span.start..=span.end).map(|p| p as i64).collect()],
                        )
                    };
                    InstanceRecord {
                        tokens: inst.tokens.clone(),
                        h: entity(inst.head, "H"),
                        t: entity(inst.tail, "T"),
                    }
                })
                .collect();
            out.insert(relation, records);
        }
        serde_json::to_string(&out).expect("corpus serialization cannot fail")
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(String::as_str)
    }

    pub fn relations(&self) -> &BTreeMap<String, Vec<Instance>> {
        &self.relations
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn instances(&self, relation: &str) -> Option<&[Instance]> {
        self.relations.get(relation).map(Vec::as_slice)
    }

    pub fn get(&self, key: &InstanceKey) -> Option<&Instance> {
        self.relations.get(&key.relation)?.get(key.index)
    }

    /// Looks up an instance that is known to exist (keys produced by the
    /// sampler over this corpus).
    pub fn instance(&self, key: &InstanceKey) -> &Instance {
        self.get(key)
            .unwrap_or_else(|| panic!("instance {key} is not part of this corpus"))
    }

    pub fn contains_relation(&self, relation: &str) -> bool {
        self.relations.contains_key(relation)
    }

    /// Every token string occurring in the corpus.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.relations
            .values()
            .flatten()
            .flat_map(|inst| inst.tokens.iter().map(String::as_str))
    }

    /// Splits off the last `holdout` instances of every relation into a
    /// second corpus. Indices are renumbered in both halves.
    pub fn split_tail(&self, holdout: usize) -> Result<(Corpus, Corpus), DataError> {
        let mut head = BTreeMap::new();
        let mut tail = BTreeMap::new();
        for (relation, instances) in &self.relations {
            if instances.len() <= holdout {
                return Err(DataError::NotEnoughInstances {
                    relation: relation.clone(),
                    available: instances.len(),
                    required: holdout + 1,
                });
            }
            let cut = instances.len() - holdout;
            head.insert(relation.clone(), instances[..cut].to_vec());
            tail.insert(relation.clone(), instances[cut..].to_vec());
        }
        Ok((Corpus { relations: head }, Corpus { relations: tail }))
    }
}

/// Reads and validates a FewRel-layout corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    Corpus::from_json_str(&text, path)
}

// ---------------------------------------------------------------------------
// Relation catalog
// ---------------------------------------------------------------------------

/// Tokenized relation name and optional description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationText {
    pub name: Vec<String>,
    pub description: Option<Vec<String>>,
}

impl RelationText {
    pub fn new(name: &str, description: &str) -> Self {
        let description: Vec<String> = tokenize(description);
        RelationText {
            name: tokenize(name),
            description: (!description.is_empty()).then_some(description),
        }
    }

    pub fn name_string(&self) -> String {
        self.name.join(" ")
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelationCatalog {
    entries: BTreeMap<String, RelationText>,
}

impl RelationCatalog {
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self, DataError> {
        let UniqueMap(raw): UniqueMap<(String, String)> =
            serde_json::from_str(text).map_err(|e| {
                let msg = e.to_string();
                if let Some(id) = msg
                    .strip_prefix("duplicate relation id ")
                    .and_then(|rest| rest.split_whitespace().next())
                {
                    DataError::DuplicateRelation(id.to_string())
                } else {
                    DataError::parse(origin, &e)
                }
            })?;
        let mut catalog = RelationCatalog::default();
        for (id, (name, description)) in raw {
            catalog.insert(id, RelationText::new(&name, &description))?;
        }
        Ok(catalog)
    }

    pub fn to_json_string(&self) -> String {
        let out: BTreeMap<&str, (String, String)> = self
            .entries
            .iter()
            .map(|(id, text)| {
                let desc = text.description.as_ref().map(|d| d.join(" ")).unwrap_or_default();
                (id.as_str(), (text.name.join(" "), desc))
            })
            .collect();
        serde_json::to_string(&out).expect("catalog serialization cannot fail")
    }

    /// Adds an entry, rejecting duplicates and empty names.
    pub fn insert(&mut self, id: String, text: RelationText) -> Result<(), DataError> {
        if text.name.is_empty() || id.is_empty() {
            return Err(DataError::EmptyRelation(id));
        }
        if self.entries.contains_key(&id) {
            return Err(DataError::DuplicateRelation(id));
        }
        self.entries.insert(id, text);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&RelationText> {
        self.entries.get(id)
    }

    pub fn entries(&self) -> &BTreeMap<String, RelationText> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Finds a relation id by exact id or by its whitespace-joined name.
    pub fn resolve(&self, id_or_name: &str) -> Option<&str> {
        if let Some((id, _)) = self.entries.get_key_value(id_or_name) {
            return Some(id);
        }
        let wanted = tokenize(id_or_name);
        self.entries
            .iter()
            .find(|(_, text)| text.name == wanted)
            .map(|(id, _)| id.as_str())
    }

    /// Verifies that every relation of `corpus` has an entry.
    pub fn check_covers(&self, corpus: &Corpus) -> Result<(), DataError> {
        match corpus.relation_ids().find(|id| !self.entries.contains_key(*id)) {
            Some(id) => Err(DataError::MissingCatalogEntry(id.to_string())),
            None => Ok(()),
        }
    }

    /// Tokens appearing in names and descriptions.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.values().flat_map(|t| {
            t.name
                .iter()
                .chain(t.description.iter().flatten())
                .map(String::as_str)
        })
    }
}

/// Reads a `{relation_id: [name, description]}` catalog file.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<RelationCatalog, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    RelationCatalog::from_json_str(&text, path)
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

/// An N-way-K-shot task: support grid, labeled queries and the relation ids
/// the labels index into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub relation_ids: Vec<String>,
    pub support: Vec<Vec<InstanceKey>>,
    pub query: Vec<(InstanceKey, usize)>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.relation_ids.len()
    }

    pub fn k_shot(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    pub fn num_queries(&self) -> usize {
        self.query.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.query.iter().map(|(_, label)| *label).collect()
    }

    /// Checks label consistency, rectangular support and support/query
    /// disjointness.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.relation_ids.len();
        let k = self.k_shot();
        if self.support.len() != n {
            return Err(format!("support has {} rows for {n} relations", self.support.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, row) in self.support.iter().enumerate() {
            if row.len() != k {
                return Err(format!("support row {i} has {} shots, expected {k}", row.len()));
            }
            for key in row {
                if key.relation != self.relation_ids[i] {
                    return Err(format!("support {key} sits in row of {}", self.relation_ids[i]));
                }
                if !seen.insert(key) {
                    return Err(format!("instance {key} repeated in support"));
                }
            }
        }
        for (key, label) in &self.query {
            if *label >= n {
                return Err(format!("query label {label} out of range for {n}-way episode"));
            }
            if key.relation != self.relation_ids[*label] {
                return Err(format!(
                    "query {key} labeled as {}",
                    self.relation_ids[*label]
                ));
            }
            if !seen.insert(key) {
                return Err(format!("instance {key} appears twice in the episode"));
            }
        }
        Ok(())
    }
}

/// How the R query instances are spread over the N classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySampling {
    /// Pick a class uniformly, then an instance uniformly from its remaining
    /// pool.
    #[default]
    Uniform,
    /// Exactly floor(R/N) per class, remainder assigned to random classes.
    Balanced,
}

/// Episode shape plus query policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    #[serde(default)]
    pub query_sampling: QuerySampling,
}

impl EpisodeSpec {
    pub fn new(n: usize, k: usize, r: usize) -> Self {
        EpisodeSpec {
            n,
            k,
            r,
            query_sampling: QuerySampling::Uniform,
        }
    }

    fn check(&self) -> Result<(), DataError> {
        if self.n == 0 || self.k == 0 {
            return Err(DataError::InvalidRequest(format!(
                "N and K must be positive (N = {}, K = {})",
                self.n, self.k
            )));
        }
        Ok(())
    }

    /// Minimum instances each selected relation must hold.
    pub fn required_per_relation(&self) -> usize {
        self.k + self.r.div_ceil(self.n)
    }

    /// Samples N distinct relations, then support and query instances.
    pub fn sample<R: Rng + ?Sized>(&self, corpus: &Corpus, rng: &mut R) -> Result<Episode, DataError> {
        self.check()?;
        let ids: Vec<&String> = corpus.relations.keys().collect();
        if self.n > ids.len() {
            return Err(DataError::NotEnoughRelations {
                requested: self.n,
                available: ids.len(),
            });
        }
        let chosen: Vec<String> = index::sample(rng, ids.len(), self.n)
            .into_iter()
            .map(|i| ids[i].clone())
            .collect();
        self.fill(corpus, chosen, rng)
    }

    /// Builds an episode over exactly the given relations, resampling
    /// instances on every call.
    pub fn fixed<R: Rng + ?Sized>(
        &self,
        corpus: &Corpus,
        relation_ids: &[String],
        rng: &mut R,
    ) -> Result<Episode, DataError> {
        let spec = EpisodeSpec {
            n: relation_ids.len(),
            ..*self
        };
        spec.check()?;
        for (i, id) in relation_ids.iter().enumerate() {
            if !corpus.contains_relation(id) {
                return Err(DataError::UnknownRelation(id.clone()));
            }
            if relation_ids[..i].contains(id) {
                return Err(DataError::InvalidRequest(format!("relation {id} listed twice")));
            }
        }
        spec.fill(corpus, relation_ids.to_vec(), rng)
    }

    fn fill<R: Rng + ?Sized>(
        &self,
        corpus: &Corpus,
        chosen: Vec<String>,
        rng: &mut R,
    ) -> Result<Episode, DataError> {
        let required = self.required_per_relation();
        for id in &chosen {
            let available = corpus.relations[id].len();
            if available < required {
                return Err(DataError::NotEnoughInstances {
                    relation: id.clone(),
                    available,
                    required,
                });
            }
        }

        let mut support = Vec::with_capacity(self.n);
        let mut pools: Vec<Vec<usize>> = Vec::with_capacity(self.n);
        for id in &chosen {
            let count = corpus.relations[id].len();
            let picked = index::sample(rng, count, self.k).into_vec();
            support.push(
                picked
                    .iter()
                    .map(|&i| InstanceKey::new(id.clone(), i))
                    .collect::<Vec<_>>(),
            );
            let mut taken = vec![false; count];
            for &i in &picked {
                taken[i] = true;
            }
            pools.push((0..count).filter(|&i| !taken[i]).collect());
        }

        let mut query = Vec::with_capacity(self.r);
        match self.query_sampling {
            QuerySampling::Uniform => {
                for _ in 0..self.r {
                    let open: Vec<usize> = (0..self.n).filter(|&c| !pools[c].is_empty()).collect();
                    let class = open[rng.random_range(0..open.len())];
                    let pool = &mut pools[class];
                    let idx = pool.swap_remove(rng.random_range(0..pool.len()));
                    query.push((InstanceKey::new(chosen[class].clone(), idx), class));
                }
            }
            QuerySampling::Balanced => {
                let mut counts = vec![self.r / self.n; self.n];
                for c in index::sample(rng, self.n, self.r % self.n) {
                    counts[c] += 1;
                }
                for (class, &count) in counts.iter().enumerate() {
                    let pool = &mut pools[class];
                    for _ in 0..count {
                        let idx = pool.swap_remove(rng.random_range(0..pool.len()));
                        query.push((InstanceKey::new(chosen[class].clone(), idx), class));
                    }
                }
                // Interleave classes so query order carries no label signal.
                for i in (1..query.len()).rev() {
                    let j = rng.random_range(0..=i);
                    query.swap(i, j);
                }
            }
        }

        Ok(Episode {
            relation_ids: chosen,
            support,
            query,
        })
    }
}

/// Samples an N-way-K-shot episode with R queries using uniform query
/// sampling.
pub fn sample_episode<R: Rng + ?Sized>(
    corpus: &Corpus,
    n: usize,
    k: usize,
    r: usize,
    rng: &mut R,
) -> Result<Episode, DataError> {
    EpisodeSpec::new(n, k, r).sample(corpus, rng)
}

/// Builds an episode over fixed relations (easy/hard evaluation settings).
pub fn fixed_episode<R: Rng + ?Sized>(
    corpus: &Corpus,
    relation_ids: &[String],
    k: usize,
    r: usize,
    rng: &mut R,
) -> Result<Episode, DataError> {
    EpisodeSpec::new(relation_ids.len().max(1), k, r).fixed(corpus, relation_ids, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst(rel: &str, n_tokens: usize) -> Instance {
        Instance {
            tokens: (0..n_tokens).map(|i| format!("t{i}")).collect(),
            head: Span::new(0, 0),
            tail: Span::new(n_tokens - 1, n_tokens - 1),
            relation_id: rel.into(),
        }
    }

    fn corpus(relations: usize, per: usize) -> Corpus {
        let mut map = BTreeMap::new();
        for r in 0..relations {
            let id = format!("P{r}");
            map.insert(id.clone(), (0..per).map(|_| inst(&id, 4)).collect());
        }
        Corpus::from_relations(map).unwrap()
    }

    #[test]
    fn parses_fewrel_record() {
        let text = r#"{"P1": [
            {"tokens": ["a", "b", "c", "d"], "h": ["b c", "Q1", [[1, 2]]], "t": ["d", "Q2", [[3]]]},
            {"tokens": ["x", "y"], "h": ["x", "Q3", [[0]]], "t": ["y", "Q4", [[1]]]}
        ]}"#;
        let c = Corpus::from_json_str(text, Path::new("mem")).unwrap();
        assert_eq!(c.num_relations(), 1);
        let insts = c.instances("P1").unwrap();
        assert_eq!(insts.len(), 2);
        assert_eq!(insts[0].head, Span::new(1, 2));
        assert_eq!(insts[0].tail, Span::new(3, 3));
    }

    #[test]
    fn rejects_out_of_range_span() {
        let text = r#"{"P1": [
            {"tokens": ["a", "b"], "h": ["a", "Q1", [[0]]], "t": ["b", "Q2", [[1]]]},
            {"tokens": ["a", "b"], "h": ["a", "Q1", [[0]]], "t": ["?", "Q2", [[2]]]}
        ]}"#;
        match Corpus::from_json_str(text, Path::new("mem")) {
            Err(DataError::Validation { relation, index, .. }) => {
                assert_eq!(relation, "P1");
                assert_eq!(index, 1);
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_carries_position() {
        let text = "{\"P1\": [\n {\"tokens\": 3}\n]}";
        match Corpus::from_json_str(text, Path::new("mem")) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_positions_rejected() {
        let text = r#"{"P1": [{"tokens": ["a"], "h": ["a", "Q", [[]]], "t": ["a", "Q", [[0]]]}]}"#;
        assert!(matches!(
            Corpus::from_json_str(text, Path::new("mem")),
            Err(DataError::Field { field: "h", .. })
        ));
    }

    #[test]
    fn corpus_json_round_trip() {
        let c = corpus(3, 4);
        let back = Corpus::from_json_str(&c.to_json_string(), Path::new("mem")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn catalog_entries_and_name_only_mode() {
        let text = r#"{"P726": ["candidate", "person or party that is an option for an office in an election"],
                       "P22": ["father", ""]}"#;
        let cat = RelationCatalog::from_json_str(text, Path::new("mem")).unwrap();
        let cand = cat.get("P726").unwrap();
        assert_eq!(cand.name, vec!["candidate"]);
        assert_eq!(cand.description.as_ref().unwrap().len(), 13);
        assert!(cat.get("P22").unwrap().description.is_none());
        assert_eq!(cat.resolve("father"), Some("P22"));
        assert_eq!(cat.resolve("P726"), Some("P726"));
        assert_eq!(cat.resolve("mother"), None);
    }

    #[test]
    fn catalog_duplicate_id() {
        let text = r#"{"P1": ["a", ""], "P1": ["b", ""]}"#;
        assert!(matches!(
            RelationCatalog::from_json_str(text, Path::new("mem")),
            Err(DataError::DuplicateRelation(id)) if id == "P1"
        ));
    }

    #[test]
    fn missing_catalog_file() {
        assert!(matches!(
            load_catalog("/nonexistent/pid2name.json"),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn single_relation_forced_episode() {
        let c = corpus(1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ep = sample_episode(&c, 1, 1, 1, &mut rng).unwrap();
        ep.validate().unwrap();
        let mut idx = vec![ep.support[0][0].index, ep.query[0].0.index];
        idx.sort();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn too_many_ways() {
        let c = corpus(3, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_episode(&c, 4, 1, 1, &mut rng),
            Err(DataError::NotEnoughRelations { requested: 4, available: 3 })
        ));
    }

    #[test]
    fn insufficient_instances() {
        let c = corpus(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_episode(&c, 2, 2, 2, &mut rng),
            Err(DataError::NotEnoughInstances { .. })
        ));
    }

    #[test]
    fn fixed_unknown_relation() {
        let c = corpus(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            fixed_episode(&c, &["P0".into(), "P0000".into()], 1, 2, &mut rng),
            Err(DataError::UnknownRelation(id)) if id == "P0000"
        ));
    }

    #[test]
    fn fixed_keeps_relation_order() {
        let c = corpus(5, 5);
        let ids: Vec<String> = vec!["P3".into(), "P1".into(), "P4".into()];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ep = fixed_episode(&c, &ids, 1, 3, &mut rng).unwrap();
        assert_eq!(ep.relation_ids, ids);
        ep.validate().unwrap();
    }

    #[test]
    fn full_width_uses_every_relation_once() {
        let c = corpus(6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ep = sample_episode(&c, 6, 1, 6, &mut rng).unwrap();
        let mut ids = ep.relation_ids.clone();
        ids.sort();
        let all: Vec<String> = c.relation_ids().map(String::from).collect();
        assert_eq!(ids, all);
    }

    #[test]
    fn balanced_queries() {
        let c = corpus(4, 10);
        let spec = EpisodeSpec {
            query_sampling: QuerySampling::Balanced,
            ..EpisodeSpec::new(4, 2, 9)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ep = spec.sample(&c, &mut rng).unwrap();
        ep.validate().unwrap();
        let mut counts = [0usize; 4];
        for (_, l) in &ep.query {
            counts[*l] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 9);
        assert!(counts.iter().all(|&c| c == 2 || c == 3));
    }

    #[test]
    fn split_tail_renumbers() {
        let c = corpus(2, 5);
        let (train, held) = c.split_tail(2).unwrap();
        assert_eq!(train.instances("P0").unwrap().len(), 3);
        assert_eq!(held.instances("P1").unwrap().len(), 2);
    }
}
