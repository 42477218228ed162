//! Seeded synthetic corpora with a tunable inter-relation similarity.
//!
//! The vocabulary is cut into disjoint slices: one shared slice per cluster
//! and one private slice per relation. Every token of a relation's instances
//! and description comes from the cluster slice with probability `hardness`
//! and from the relation's private slice otherwise, so relations in one
//! cluster grow alike as `hardness → 1` while different clusters never share
//! tokens. Names are drawn from the private slice only.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Instance, RelationCatalog, RelationText, Span};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub relations_per_cluster: usize,
    pub instances: usize,
    pub vocab_size: usize,
    /// Probability that a token comes from the shared cluster slice.
    pub hardness: f64,
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
    pub description_len: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            clusters: 8,
            relations_per_cluster: 3,
            instances: 100,
            vocab_size: 1_000,
            hardness: 0.7,
            seed: 0,
            min_len: 8,
            max_len: 12,
            description_len: 6,
        }
    }
}

pub fn synthetic_relation_id(cluster: usize, relation: usize) -> String {
    format!("syn-c{cluster}-r{relation}")
}

impl SyntheticSpec {
    fn slices(&self) -> usize {
        self.clusters * (1 + self.relations_per_cluster)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.relations_per_cluster == 0 || self.instances == 0 {
            return Err(Error::Config("clusters, relations_per_cluster and instances must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hardness) {
            return Err(Error::Config(format!("hardness must lie in [0, 1], got {}", self.hardness)));
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return Err(Error::Config("need 2 <= min_len <= max_len".into()));
        }
        if self.description_len == 0 {
            return Err(Error::Config("description_len must be positive".into()));
        }
        if self.vocab_size < 2 * self.slices() {
            return Err(Error::Config(format!(
                "vocab_size {} is too small for {} slices of at least two tokens",
                self.vocab_size,
                self.slices()
            )));
        }
        Ok(())
    }
}

fn token(id: usize) -> String {
    format!("w{id}")
}

/// Builds the corpus and catalog. Identical specs give identical output.
pub fn make_synthetic_corpus(spec: &SyntheticSpec) -> Result<(Corpus, RelationCatalog)> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Stream::Synthetic);
    let slice_len = spec.vocab_size / spec.slices();
    let slice = |index: usize| (index * slice_len)..((index + 1) * slice_len);

    let mut relations = BTreeMap::new();
    let mut catalog = RelationCatalog::default();
    for c in 0..spec.clusters {
        let shared = slice(c * (1 + spec.relations_per_cluster));
        for r in 0..spec.relations_per_cluster {
            let private = slice(c * (1 + spec.relations_per_cluster) + 1 + r);
            let id = synthetic_relation_id(c, r);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                let range = if rng.random_bool(spec.hardness) {
                    shared.clone()
                } else {
                    private.clone()
                };
                token(rng.random_range(range))
            };

            let mut instances = Vec::with_capacity(spec.instances);
            for _ in 0..spec.instances {
                let len = rng.random_range(spec.min_len..=spec.max_len);
                let tokens: Vec<String> = (0..len).map(|_| draw(&mut rng)).collect();
                let head = rng.random_range(0..len);
                let mut tail = rng.random_range(0..len - 1);
                if tail >= head {
                    tail += 1;
                }
                instances.push(Instance {
                    tokens,
                    head: Span::new(head, head),
                    tail: Span::new(tail, tail),
                    relation_id: id.clone(),
                });
            }
            let name = format!(
                "{} {}",
                token(rng.random_range(private.clone())),
                token(rng.random_range(private.clone()))
            );
            let description: Vec<String> = (0..spec.description_len).map(|_| draw(&mut rng)).collect();
            catalog
                .insert(id.clone(), RelationText::new(&name, &description.join(" ")))
                .expect("synthetic ids are unique");
            relations.insert(id, instances);
        }
    }
    let corpus = Corpus::from_relations(relations)?;
    Ok((corpus, catalog))
}
