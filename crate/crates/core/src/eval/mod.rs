//! Accuracy under random, easy, hard and custom relation settings, and
//! seed-averaged comparison of training variants.

pub mod synthetic;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Episode, EpisodeSpec, QuerySampling, RelationCatalog};
use crate::encoder::Model;
use crate::error::{DataError, Error, Result};
use crate::losses::{class_representations, frobenius_norm, task_similarity_matrix, task_weights};
use crate::protonet::{assemble_hybrid_with, predict, score_queries, Paths};
use crate::rng::{stream, Stream};
use crate::training::{encode_episode, train, TrainConfig};

pub use synthetic::{make_synthetic_corpus, synthetic_relation_id, SyntheticSpec};

/// Relation names of the similar-relation triple.
pub const HARD_RELATION_NAMES: [&str; 3] = ["mother", "child", "spouse"];
/// Relation names of the dissimilar triple.
pub const EASY_RELATION_NAMES: [&str; 3] = ["crosses", "constellation", "military rank"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Random,
    Easy,
    Hard,
    Custom,
}

impl Setting {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Setting::Random),
            "easy" => Some(Setting::Easy),
            "hard" => Some(Setting::Hard),
            "custom" => Some(Setting::Custom),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Random => "random",
            Setting::Easy => "easy",
            Setting::Hard => "hard",
            Setting::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub setting: Setting,
    /// Relation ids or names. Required for `custom`; overrides the default
    /// triple for `easy` and `hard`.
    #[serde(default)]
    pub relations: Vec<String>,
    /// Ways for the random setting; fixed settings use one way per relation.
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub episodes: usize,
    pub seed: u64,
    #[serde(default)]
    pub query_sampling: QuerySampling,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            setting: Setting::Random,
            relations: Vec::new(),
            n: 5,
            k: 1,
            r: 5,
            episodes: 10_000,
            seed: 0,
            query_sampling: QuerySampling::Uniform,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if self.k == 0 || self.r == 0 {
            return Err(Error::Config("k and r must be positive".into()));
        }
        if self.setting == Setting::Random && self.n < 2 {
            return Err(Error::Config(format!("n must be at least 2, got {}", self.n)));
        }
        if self.setting == Setting::Custom && self.relations.len() < 2 {
            return Err(Error::Config("custom setting needs at least two relations".into()));
        }
        Ok(())
    }

    /// Relation ids of a fixed setting; `None` for random.
    pub fn resolve_relations(&self, corpus: &Corpus, catalog: &RelationCatalog) -> Result<Option<Vec<String>>> {
        if self.setting == Setting::Random {
            return Ok(None);
        }
        if !self.relations.is_empty() {
            let ids = self
                .relations
                .iter()
                .map(|r| {
                    let id = catalog.resolve(r).unwrap_or(r);
                    if corpus.contains_relation(id) {
                        Ok(id.to_string())
                    } else {
                        Err(DataError::UnknownRelation(r.clone()))
                    }
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if ids.len() < 2 {
                return Err(Error::Config("a fixed setting needs at least two relations".into()));
            }
            return Ok(Some(ids));
        }
        let names: &[&str] = match self.setting {
            Setting::Hard => &HARD_RELATION_NAMES,
            Setting::Easy => &EASY_RELATION_NAMES,
            _ => unreachable!("custom is validated to carry relations"),
        };
        let by_name: Option<Vec<String>> = names
            .iter()
            .map(|n| catalog.resolve(n).filter(|id| corpus.contains_relation(id)).map(str::to_string))
            .collect();
        if let Some(ids) = by_name {
            return Ok(Some(ids));
        }
        let synthetic: Vec<String> = match self.setting {
            Setting::Hard => (0..3).map(|r| synthetic_relation_id(0, r)).collect(),
            _ => (0..3).map(|c| synthetic_relation_id(c, 0)).collect(),
        };
        if synthetic.iter().all(|id| corpus.contains_relation(id)) {
            return Ok(Some(synthetic));
        }
        Err(Error::Config(format!(
            "no default relations for the {} setting in this corpus; pass them explicitly",
            self.setting.as_str()
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// 95% normal-approximation binomial half-width.
    pub half_width: f64,
    pub queries: usize,
    pub relations: Option<Vec<String>>,
    /// Query correctness, per episode.
    pub per_episode: Vec<Vec<bool>>,
    pub config: EvalConfig,
}

/// `1.96 · sqrt(a(1 − a) / n)`.
pub fn binomial_half_width(accuracy: f64, n: usize) -> f64 {
    1.96 * (accuracy * (1.0 - accuracy) / n as f64).sqrt()
}

/// Query correctness of one episode.
pub fn episode_correctness(
    model: &Model,
    episode: &Episode,
    corpus: &Corpus,
    catalog: &RelationCatalog,
    paths: Paths,
) -> Result<Vec<bool>> {
    let encoded = encode_episode(model, episode, corpus, catalog)?;
    let probs = score_queries(&assemble_hybrid_with(&encoded, paths));
    Ok(episode
        .query
        .iter()
        .enumerate()
        .map(|(j, (_, label))| predict(probs.row(j)) == *label)
        .collect())
}

fn correctness_all(
    model: &Model,
    episodes: &[Episode],
    corpus: &Corpus,
    catalog: &RelationCatalog,
    paths: Paths,
) -> Result<Vec<Vec<bool>>> {
    episodes
        .par_iter()
        .map(|ep| episode_correctness(model, ep, corpus, catalog, paths))
        .collect()
}

/// Mean query accuracy over the given episodes.
pub fn accuracy_on(
    model: &Model,
    episodes: &[Episode],
    corpus: &Corpus,
    catalog: &RelationCatalog,
    paths: Paths,
) -> Result<f64> {
    let all = correctness_all(model, episodes, corpus, catalog, paths)?;
    let (hits, total) = tally(&all);
    Ok(hits as f64 / total as f64)
}

fn tally(all: &[Vec<bool>]) -> (usize, usize) {
    all.iter().fold((0, 0), |(h, t), ep| {
        (h + ep.iter().filter(|&&c| c).count(), t + ep.len())
    })
}

/// Samples the evaluation episodes of a config from its `Eval` stream.
pub fn eval_episodes(config: &EvalConfig, corpus: &Corpus, catalog: &RelationCatalog) -> Result<(Vec<Episode>, Option<Vec<String>>)> {
    config.validate()?;
    let relations = config.resolve_relations(corpus, catalog)?;
    let mut rng = stream(config.seed, Stream::Eval);
    let spec = EpisodeSpec {
        n: relations.as_ref().map_or(config.n, Vec::len),
        k: config.k,
        r: config.r,
        query_sampling: config.query_sampling,
    };
    let episodes = (0..config.episodes)
        .map(|_| match &relations {
            Some(ids) => spec.fixed(corpus, ids, &mut rng),
            None => spec.sample(corpus, &mut rng),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((episodes, relations))
}

/// Scores every sampled episode and reports mean query accuracy.
pub fn evaluate(
    model: &Model,
    corpus: &Corpus,
    catalog: &RelationCatalog,
    config: &EvalConfig,
    paths: Paths,
) -> Result<EvalReport> {
    let (episodes, relations) = eval_episodes(config, corpus, catalog)?;
    let per_episode = correctness_all(model, &episodes, corpus, catalog, paths)?;
    let (hits, total) = tally(&per_episode);
    let accuracy = hits as f64 / total as f64;
    Ok(EvalReport {
        accuracy,
        half_width: binomial_half_width(accuracy, total),
        queries: total,
        relations,
        per_episode,
        config: config.clone(),
    })
}

/// One task of an inspected batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskWeightRow {
    pub relations: Vec<String>,
    /// Frobenius norm of the task's class-similarity matrix.
    pub frobenius: f64,
    pub weight: f64,
}

/// Forward pass over a batch, reporting each task's similarity norm and its
/// softmax weight within the batch.
pub fn inspect_task_weights(
    model: &Model,
    episodes: &[Episode],
    corpus: &Corpus,
    catalog: &RelationCatalog,
    paths: Paths,
) -> Result<Vec<TaskWeightRow>> {
    if episodes.is_empty() {
        return Err(Error::Config("need at least one task".into()));
    }
    let sims = episodes
        .par_iter()
        .map(|ep| {
            let encoded = encode_episode(model, ep, corpus, catalog)?;
            let reps = assemble_hybrid_with(&encoded, paths);
            Ok(task_similarity_matrix(&class_representations(&reps))?)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = task_weights(&sims);
    Ok(episodes
        .iter()
        .zip(&sims)
        .zip(weights)
        .map(|((ep, sim), weight)| TaskWeightRow {
            relations: ep.relation_ids.clone(),
            frobenius: frobenius_norm(sim),
            weight,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    pub eval: EvalConfig,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
        let mut out = format!("{:<width$}  {:>8}  {:>8}  seeds\n", "variant", "mean", "std");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.4}  {:>8.4}  {}",
                row.name,
                row.mean,
                row.std_dev,
                row.accuracies.len()
            );
        }
        out
    }
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every variant once per seed and evaluates each run on the shared
/// evaluation config.
pub fn compare_ablations(
    train_corpus: &Corpus,
    eval_corpus: &Corpus,
    catalog: &RelationCatalog,
    variants: &[(String, TrainConfig)],
    seeds: &[u64],
    eval: &EvalConfig,
) -> Result<ComparisonTable> {
    let Some((_, first)) = variants.first() else {
        return Err(Error::Config("no variants to compare".into()));
    };
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    for (name, cfg) in variants {
        if cfg.n != first.n || cfg.k != first.k || cfg.dim != first.dim {
            return Err(Error::Config(format!(
                "variant {name} differs in n, k or dim from {}",
                variants[0].0
            )));
        }
    }
    let mut rows = Vec::with_capacity(variants.len());
    for (name, cfg) in variants {
        let mut accuracies = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let outcome = train(&cfg, train_corpus, catalog, None, None)?;
            let report = evaluate(&outcome.model, eval_corpus, catalog, eval, cfg.paths())?;
            accuracies.push(report.accuracy);
        }
        let (mean, std_dev) = mean_and_std(&accuracies);
        rows.push(ComparisonRow {
            name: name.clone(),
            accuracies,
            mean,
            std_dev,
        });
    }
    Ok(ComparisonTable {
        seeds: seeds.to_vec(),
        eval: eval.clone(),
        rows,
    })
}
