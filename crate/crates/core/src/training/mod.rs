//! Episodic mini-batch training: batch forward/backward over the full
//! objective, optimizers, the training loop and its metrics log.

mod checkpoint;
mod gradcheck;

use std::io::Write;

use ndarray::{s, Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Episode, EpisodeSpec, QuerySampling, RelationCatalog};
use crate::encoder::{
    global_instance_feature, global_instance_feature_backward, Model, Params, SequenceCache, Vocabulary,
};
use crate::error::{DataError, Error, NumericError, Result};
use crate::losses::{
    class_representations, contrastive_backward, contrastive_loss_with, focal_loss, focal_loss_logit_grad,
    frobenius_norm, task_similarity_backward, task_similarity_matrix, ContrastiveMode, LossBreakdown, LossMode,
};
use crate::math::{softmax, softmax_backward};
use crate::protonet::{assemble_hybrid_backward, assemble_hybrid_with, score_queries, EncodedEpisode, HybridGrads, HybridReps, Paths};
use crate::rng::{stream, Stream};

pub use checkpoint::{BlockHeader, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, compare_gradients, BlockError, GradCheckOptions, GradientReport};

/// Loss above which training aborts.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    /// Adam with decoupled weight decay.
    Adamw,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adamw => "adamw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adamw" => Some(OptimizerKind::Adamw),
            _ => None,
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    /// Episodes per batch.
    pub t: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub use_local: bool,
    pub use_global: bool,
    pub use_contrastive: bool,
    pub loss: LossMode,
    pub contrastive_mode: ContrastiveMode,
    /// Differentiate through the task weights instead of treating them as
    /// constants.
    pub task_weight_grad: bool,
    pub optimizer: OptimizerKind,
    /// Decoupled weight decay (AdamW only).
    pub weight_decay: f64,
    pub dim: usize,
    /// Self-attention mixing layer in the toy encoder.
    pub mixing: bool,
    pub query_sampling: QuerySampling,
    /// Validate every this many iterations; 0 disables.
    pub val_every: usize,
    pub val_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n: 5,
            k: 1,
            r: 5,
            t: 4,
            gamma: 1.0,
            lambda: 1.0,
            learning_rate: 0.1,
            max_iterations: 30_000,
            seed: 0,
            use_local: true,
            use_global: true,
            use_contrastive: true,
            loss: LossMode::TaskAdaptiveFocal,
            contrastive_mode: ContrastiveMode::Exp,
            task_weight_grad: false,
            optimizer: OptimizerKind::Sgd,
            weight_decay: 0.01,
            dim: crate::encoder::DEFAULT_DIM,
            mixing: true,
            query_sampling: QuerySampling::Uniform,
            val_every: 500,
            val_episodes: 200,
        }
    }
}

impl TrainConfig {
    pub fn paths(&self) -> Paths {
        Paths {
            global: self.use_global,
            local: self.use_local,
        }
    }

    pub fn episode_spec(&self) -> EpisodeSpec {
        EpisodeSpec {
            n: self.n,
            k: self.k,
            r: self.r,
            query_sampling: self.query_sampling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n < 2 {
            return fail(format!("n must be at least 2, got {}", self.n));
        }
        if self.k == 0 || self.r == 0 || self.t == 0 {
            return fail("k, r and t must be positive".into());
        }
        if self.dim == 0 {
            return fail("dim must be positive".into());
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !self.use_local && !self.use_global {
            return fail("at least one of the local and global paths must be enabled".into());
        }
        if self.val_every > 0 && self.val_episodes == 0 {
            return fail("val_episodes must be positive when validation is enabled".into());
        }
        Ok(())
    }

    /// λ actually applied.
    pub fn effective_lambda(&self) -> f64 {
        if self.use_contrastive {
            self.lambda
        } else {
            0.0
        }
    }
}

/// Encoded episode plus the per-sequence caches the adjoint needs.
#[derive(Debug, Clone)]
pub struct TracedEpisode {
    pub encoded: EncodedEpisode,
    support_cache: Vec<Vec<Option<SequenceCache>>>,
    query_cache: Vec<Option<SequenceCache>>,
    relation_cache: Vec<Option<SequenceCache>>,
}

/// Encodes every sequence of an episode and reads off the global features.
pub fn encode_episode(
    model: &Model,
    episode: &Episode,
    corpus: &Corpus,
    catalog: &RelationCatalog,
) -> Result<EncodedEpisode> {
    trace_episode(model, episode, corpus, catalog).map(|t| t.encoded)
}

pub fn trace_episode(
    model: &Model,
    episode: &Episode,
    corpus: &Corpus,
    catalog: &RelationCatalog,
) -> Result<TracedEpisode> {
    let lookup = |key| {
        corpus
            .get(key)
            .ok_or_else(|| DataError::UnknownRelation(key.to_string()))
    };
    let mut support_emb = Vec::with_capacity(episode.n_way());
    let mut support_global = Vec::with_capacity(episode.n_way());
    let mut support_cache = Vec::with_capacity(episode.n_way());
    for keys in &episode.support {
        let mut embs = Vec::with_capacity(keys.len());
        let mut feats = Vec::with_capacity(keys.len());
        let mut caches = Vec::with_capacity(keys.len());
        for key in keys {
            let (emb, cache) = model.encode_instance_traced(key, lookup(key)?)?;
            feats.push(global_instance_feature(&emb));
            embs.push(emb);
            caches.push(cache);
        }
        support_emb.push(embs);
        support_global.push(feats);
        support_cache.push(caches);
    }

    let mut query_emb = Vec::with_capacity(episode.num_queries());
    let mut query_global = Vec::with_capacity(episode.num_queries());
    let mut query_cache = Vec::with_capacity(episode.num_queries());
    for (key, _) in &episode.query {
        let (emb, cache) = model.encode_instance_traced(key, lookup(key)?)?;
        query_global.push(global_instance_feature(&emb));
        query_emb.push(emb);
        query_cache.push(cache);
    }

    let mut relation_emb = Vec::with_capacity(episode.n_way());
    let mut relation_global = Vec::with_capacity(episode.n_way());
    let mut relation_cache = Vec::with_capacity(episode.n_way());
    for id in &episode.relation_ids {
        let text = catalog
            .get(id)
            .ok_or_else(|| DataError::MissingCatalogEntry(id.clone()))?;
        let (emb, cache) = model.encode_relation_traced(id, &text.name, text.description.as_deref())?;
        relation_global.push(model.global_relation_feature(&emb));
        relation_emb.push(emb);
        relation_cache.push(cache);
    }

    Ok(TracedEpisode {
        encoded: EncodedEpisode {
            support_emb,
            query_emb,
            relation_emb,
            support_global,
            relation_global,
            query_global,
        },
        support_cache,
        query_cache,
        relation_cache,
    })
}

/// Loss terms of a whole batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    /// `task_focal + λ · contrastive`.
    pub total: f64,
    /// Task-weighted focal sum divided by the number of queries in the batch.
    pub task_focal: f64,
    /// Task-weighted focal sum without normalization.
    pub task_focal_raw: f64,
    /// Mean over episodes of the per-episode contrastive sum.
    pub contrastive: f64,
    pub task_weights: Vec<f64>,
    pub episodes: Vec<LossBreakdown>,
}

struct EpisodeForward {
    traced: TracedEpisode,
    reps: HybridReps,
    probs: Array2<f64>,
    labels: Vec<usize>,
    focal_terms: Vec<f64>,
    contrastive: f64,
    class_reps: Vec<Array1<f64>>,
    similarity: Option<Array2<f64>>,
}

fn check_finite(values: impl IntoIterator<Item = f64>, node: impl FnOnce() -> String) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(NumericError::NonFinite { node: node() }.into())
    }
}

fn forward_episode(
    model: &Model,
    episode: &Episode,
    index: usize,
    corpus: &Corpus,
    catalog: &RelationCatalog,
    config: &TrainConfig,
    need_similarity: bool,
) -> Result<EpisodeForward> {
    let traced = trace_episode(model, episode, corpus, catalog)?;
    for (i, emb) in traced.encoded.relation_emb.iter().enumerate() {
        check_finite(emb.matrix.iter().copied(), || format!("episode {index} relation {i} token matrix"))?;
    }
    let reps = assemble_hybrid_with(&traced.encoded, config.paths());
    for (i, p) in reps.proto_hybrid.iter().enumerate() {
        check_finite(p.iter().copied(), || format!("episode {index} prototype {i}"))?;
    }
    for (j, q) in reps.query_hybrid.iter().enumerate() {
        check_finite(q.iter().copied(), || format!("episode {index} query {j}"))?;
    }
    let probs = score_queries(&reps);
    check_finite(probs.iter().copied(), || format!("episode {index} query probabilities"))?;
    let labels = episode.labels();
    let gamma = config.loss.effective_gamma(config.gamma);
    let focal_terms: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(j, &y)| focal_loss(probs.row(j), y, gamma))
        .collect();
    let contrastive = if config.use_contrastive {
        contrastive_loss_with(&reps, config.contrastive_mode)?
    } else {
        0.0
    };
    check_finite([contrastive], || format!("episode {index} contrastive loss"))?;
    let class_reps = class_representations(&reps);
    let similarity = if need_similarity {
        Some(task_similarity_matrix(&class_reps)?)
    } else {
        None
    };
    Ok(EpisodeForward {
        traced,
        reps,
        probs,
        labels,
        focal_terms,
        contrastive,
        class_reps,
        similarity,
    })
}

/// Task weights of a batch: softmax over similarity norms, or uniform.
fn batch_weights(forwards: &[EpisodeForward], mode: LossMode) -> Vec<f64> {
    let t = forwards.len();
    if mode.uses_task_weights() {
        let norms: Array1<f64> = forwards
            .iter()
            .map(|f| frobenius_norm(f.similarity.as_ref().expect("similarity computed")))
            .collect();
        softmax(norms.view()).to_vec()
    } else {
        vec![1.0 / t as f64; t]
    }
}

fn backward_episode(
    model: &Model,
    fwd: &EpisodeForward,
    weight: f64,
    query_total: usize,
    num_episodes: usize,
    d_similarity: Option<&Array2<f64>>,
    config: &TrainConfig,
) -> Result<Params> {
    let encoded = &fwd.traced.encoded;
    let d = encoded.dim();
    let mut grads = HybridGrads::zeros(encoded.n_way(), encoded.num_queries(), d);
    let gamma = config.loss.effective_gamma(config.gamma);
    let scale = weight / query_total as f64;
    for (j, &y) in fwd.labels.iter().enumerate() {
        let d_logits = focal_loss_logit_grad(fwd.probs.row(j), y, gamma);
        for (i, &g) in d_logits.iter().enumerate() {
            grads.query_hybrid[j].scaled_add(scale * g, &fwd.reps.proto_hybrid[i]);
            grads.proto_hybrid[i].scaled_add(scale * g, &fwd.reps.query_hybrid[j]);
        }
    }
    let lambda = config.effective_lambda();
    if config.use_contrastive && lambda != 0.0 {
        contrastive_backward(&fwd.reps, config.contrastive_mode, lambda / num_episodes as f64, &mut grads)?;
    }
    if let Some(d_sim) = d_similarity {
        let d_class = task_similarity_backward(&fwd.class_reps, d_sim)?;
        for (i, dc) in d_class.iter().enumerate() {
            grads.relation_hybrid[i] += &dc.slice(s![..3 * d]);
            grads.proto_hybrid[i] += &dc.slice(s![3 * d..]);
        }
    }
    // Masked components carry no gradient into the encoder.
    let enc = assemble_hybrid_backward(encoded, &fwd.reps, &grads);

    let mut params = model.params.zeros_like();
    for (i, row) in encoded.support_emb.iter().enumerate() {
        for (k, emb) in row.iter().enumerate() {
            let mut d_matrix = enc.support_matrix[i][k].clone();
            global_instance_feature_backward(emb, enc.support_global[i][k].view(), &mut d_matrix);
            model.sequence_backward(fwd.traced.support_cache[i][k].as_ref(), d_matrix, &mut params);
        }
    }
    for (j, emb) in encoded.query_emb.iter().enumerate() {
        let mut d_matrix = enc.query_matrix[j].clone();
        global_instance_feature_backward(emb, enc.query_global[j].view(), &mut d_matrix);
        model.sequence_backward(fwd.traced.query_cache[j].as_ref(), d_matrix, &mut params);
    }
    for (i, emb) in encoded.relation_emb.iter().enumerate() {
        let mut d_matrix = enc.relation_matrix[i].clone();
        model.global_relation_feature_backward(emb, enc.relation_global[i].view(), &mut d_matrix, &mut params);
        model.sequence_backward(fwd.traced.relation_cache[i].as_ref(), d_matrix, &mut params);
    }
    Ok(params)
}

fn run_batch(
    model: &Model,
    episodes: &[Episode],
    corpus: &Corpus,
    catalog: &RelationCatalog,
    config: &TrainConfig,
    fixed_weights: Option<&[f64]>,
    want_grads: bool,
) -> Result<(BatchLoss, Option<Params>)> {
    if episodes.is_empty() {
        return Err(Error::Config("batch holds no episodes".into()));
    }
    let need_similarity = config.loss.uses_task_weights() && fixed_weights.is_none();
    let forwards: Vec<EpisodeForward> = episodes
        .par_iter()
        .enumerate()
        .map(|(idx, ep)| forward_episode(model, ep, idx, corpus, catalog, config, need_similarity))
        .collect::<Result<_>>()?;

    let t = forwards.len();
    let weights = match fixed_weights {
        Some(w) => w.to_vec(),
        None => batch_weights(&forwards, config.loss),
    };
    let query_total: usize = forwards.iter().map(|f| f.labels.len()).sum();
    let lambda = config.effective_lambda();
    let gamma = config.loss.effective_gamma(config.gamma);

    let focal_sums: Vec<f64> = forwards.iter().map(|f| f.focal_terms.iter().sum()).collect();
    let per_episode_tf: Vec<f64> = weights.iter().zip(&focal_sums).map(|(w, f)| w * f).collect();
    let task_focal_raw: f64 = per_episode_tf.iter().sum();
    let task_focal = task_focal_raw / query_total as f64;
    let contrastive = forwards.iter().map(|f| f.contrastive).sum::<f64>() / t as f64;
    let total = task_focal + lambda * contrastive;
    check_finite([total], || "batch total loss".into())?;

    let breakdowns = forwards
        .iter()
        .zip(&weights)
        .zip(&per_episode_tf)
        .map(|((f, &w), &tf)| LossBreakdown {
            contrastive: f.contrastive,
            task_focal: tf,
            task_weight: w,
            per_query_ce_terms: f.focal_terms.clone(),
            probabilities: f.probs.outer_iter().map(|r| r.to_vec()).collect(),
            total: tf + lambda * f.contrastive,
            gamma,
            lambda,
        })
        .collect();
    let loss = BatchLoss {
        total,
        task_focal,
        task_focal_raw,
        contrastive,
        task_weights: weights.clone(),
        episodes: breakdowns,
    };
    if !want_grads {
        return Ok((loss, None));
    }

    // dL/dS per episode when differentiating through the task weights.
    let d_sims: Vec<Option<Array2<f64>>> = if config.task_weight_grad && need_similarity {
        let w = Array1::from(weights.clone());
        let d_w: Array1<f64> = focal_sums.iter().map(|f| f / query_total as f64).collect();
        let d_norms = softmax_backward(w.view(), d_w.view());
        forwards
            .iter()
            .zip(d_norms.iter())
            .map(|(f, &dn)| {
                let sim = f.similarity.as_ref().unwrap();
                let fro = frobenius_norm(sim);
                Some(sim * (dn / fro))
            })
            .collect()
    } else {
        vec![None; t]
    };

    let parts: Vec<Params> = forwards
        .par_iter()
        .zip(weights.par_iter())
        .zip(d_sims.par_iter())
        .map(|((f, &w), ds)| backward_episode(model, f, w, query_total, t, ds.as_ref(), config))
        .collect::<Result<_>>()?;
    let mut grads = model.params.zeros_like();
    for p in &parts {
        grads.add_assign(p);
    }
    if let Some(block) = grads.first_non_finite() {
        return Err(NumericError::NonFinite {
            node: format!("gradient of {block}"),
        }
        .into());
    }
    Ok((loss, Some(grads)))
}

/// Loss of a batch and its exact gradient with respect to every trainable
/// parameter block.
pub fn forward_backward(
    model: &Model,
    episodes: &[Episode],
    corpus: &Corpus,
    catalog: &RelationCatalog,
    config: &TrainConfig,
) -> Result<(BatchLoss, Params)> {
    let (loss, grads) = run_batch(model, episodes, corpus, catalog, config, None, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

/// Loss only. `fixed_weights` replaces the computed task weights, which is
/// how finite differences see the stop-gradient objective.
pub fn batch_loss(
    model: &Model,
    episodes: &[Episode],
    corpus: &Corpus,
    catalog: &RelationCatalog,
    config: &TrainConfig,
    fixed_weights: Option<&[f64]>,
) -> Result<BatchLoss> {
    run_batch(model, episodes, corpus, catalog, config, fixed_weights, false).map(|(l, _)| l)
}

/// Optimizer state.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    AdamW {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
        step: u64,
        m: Box<Params>,
        v: Box<Params>,
    },
}

impl Optimizer {
    pub fn new(config: &TrainConfig, params: &Params) -> Self {
        match config.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd {
                lr: config.learning_rate,
            },
            OptimizerKind::Adamw => Optimizer::AdamW {
                lr: config.learning_rate,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: config.weight_decay,
                step: 0,
                m: Box::new(params.zeros_like()),
                v: Box::new(params.zeros_like()),
            },
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        match self {
            Optimizer::Sgd { lr } => {
                if *lr == 0.0 {
                    return;
                }
                for ((_, p), (_, g)) in params.blocks_mut().into_iter().zip(grads.blocks()) {
                    for (p, g) in p.iter_mut().zip(g) {
                        *p -= *lr * g;
                    }
                }
            }
            Optimizer::AdamW {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
                step,
                m,
                v,
            } => {
                *step += 1;
                if *lr == 0.0 {
                    return;
                }
                let c1 = 1.0 - beta1.powi(*step as i32);
                let c2 = 1.0 - beta2.powi(*step as i32);
                let blocks = params
                    .blocks_mut()
                    .into_iter()
                    .zip(grads.blocks())
                    .zip(m.blocks_mut().into_iter().zip(v.blocks_mut()));
                for (((_, p), (_, g)), ((_, m), (_, v))) in blocks {
                    for i in 0..p.len() {
                        m[i] = *beta1 * m[i] + (1.0 - *beta1) * g[i];
                        v[i] = *beta2 * v[i] + (1.0 - *beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= *lr * (m_hat / (v_hat.sqrt() + *eps) + *weight_decay * p[i]);
                    }
                }
            }
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub loss: f64,
    pub task_focal: f64,
    pub task_focal_raw: f64,
    pub contrastive: f64,
    pub task_weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<MetricsRecord>,
}

/// Toy model over the corpus and catalog vocabulary, initialized from the
/// `Init` stream of the config seed.
pub fn init_toy_model(config: &TrainConfig, corpus: &Corpus, catalog: &RelationCatalog) -> Model {
    let vocab = Vocabulary::build(corpus.tokens().chain(catalog.tokens()));
    Model::toy(vocab, config.dim, config.mixing, &mut stream(config.seed, Stream::Init))
}

/// Builds a toy model and trains it.
pub fn train(
    config: &TrainConfig,
    corpus: &Corpus,
    catalog: &RelationCatalog,
    validation: Option<&Corpus>,
    log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    config.validate()?;
    catalog.check_covers(corpus)?;
    let model = init_toy_model(config, corpus, catalog);
    train_model(model, config, corpus, catalog, validation, log)
}

/// Trains an existing model. Batches come from the `Sampling` stream;
/// validation episodes are redrawn identically at every validation point.
pub fn train_model(
    mut model: Model,
    config: &TrainConfig,
    corpus: &Corpus,
    catalog: &RelationCatalog,
    validation: Option<&Corpus>,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if model.dim() != config.dim && !model.is_frozen() {
        return Err(Error::Config(format!(
            "model has d = {} but the config asks for {}",
            model.dim(),
            config.dim
        )));
    }
    let spec = config.episode_spec();
    let mut sampler = stream(config.seed, Stream::Sampling);
    let mut optimizer = Optimizer::new(config, &model.params);
    let mut metrics = Vec::with_capacity(config.max_iterations);

    for iteration in 1..=config.max_iterations {
        let batch: Vec<Episode> = (0..config.t)
            .map(|_| spec.sample(corpus, &mut sampler))
            .collect::<std::result::Result<_, _>>()?;
        let (loss, grads) = forward_backward(&model, &batch, corpus, catalog, config)?;
        if loss.total > DIVERGENCE_LIMIT {
            return Err(NumericError::Divergence {
                value: loss.total,
                limit: DIVERGENCE_LIMIT,
            }
            .into());
        }
        optimizer.step(&mut model.params, &grads);
        if let Some(block) = model.params.first_non_finite() {
            return Err(NumericError::NonFinite {
                node: format!("parameter block {block} after update {iteration}"),
            }
            .into());
        }

        let val_accuracy = match validation {
            Some(val) if config.val_every > 0 && (iteration % config.val_every == 0 || iteration == config.max_iterations) => {
                let mut rng = stream(config.seed, Stream::Validation);
                let episodes = (0..config.val_episodes)
                    .map(|_| spec.sample(val, &mut rng))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Some(crate::eval::accuracy_on(&model, &episodes, val, catalog, config.paths())?)
            }
            _ => None,
        };
        let record = MetricsRecord {
            iteration,
            loss: loss.total,
            task_focal: loss.task_focal,
            task_focal_raw: loss.task_focal_raw,
            contrastive: loss.contrastive,
            task_weights: loss.task_weights,
            val_accuracy,
        };
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&record).expect("metrics serialize");
            writeln!(w, "{line}").map_err(|e| Error::Output(format!("metrics log: {e}")))?;
        }
        metrics.push(record);
    }
    Ok(TrainOutcome { model, metrics })
}
