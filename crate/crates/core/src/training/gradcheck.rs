//! Central finite-difference verification of the analytic gradients.
//!
//! Each block's error is `max_i |a_i − n_i| / max(max_i |a_i|, max_i |n_i|)`
//! over the checked coordinates, so coordinates whose true gradient is near
//! zero are judged on the block's scale rather than their own. A block whose
//! analytic and numeric gradients both stay below the difference-quotient
//! noise floor (`100 · ε · max(1, |L|) / h`) is a structural zero and scores 0.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Episode, RelationCatalog};
use crate::encoder::{Model, Params};
use crate::error::Result;
use crate::rng::{stream, Stream};

use super::{batch_loss, forward_backward, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub step: f64,
    pub threshold: f64,
    /// Blocks with fewer coordinates are checked exhaustively.
    pub exhaustive_below: usize,
    /// Coordinates drawn from larger blocks.
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            threshold: 1e-4,
            exhaustive_below: 10_000,
            sample_size: 1_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub total: usize,
    /// Both gradients are indistinguishable from zero.
    pub structural_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub blocks: Vec<BlockError>,
    pub threshold: f64,
    pub passed: bool,
}

impl GradientReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

/// Computes the analytic gradient and checks it.
pub fn check_gradients(
    model: &Model,
    episodes: &[Episode],
    corpus: &Corpus,
    catalog: &RelationCatalog,
    config: &TrainConfig,
    options: &GradCheckOptions,
) -> Result<GradientReport> {
    let (_, grads) = forward_backward(model, episodes, corpus, catalog, config)?;
    compare_gradients(model, episodes, corpus, catalog, config, &grads, options)
}

/// Checks a supplied gradient against central differences of the batch loss.
/// With stop-gradient task weights the weights are frozen at their base
/// values while perturbing.
pub fn compare_gradients(
    model: &Model,
    episodes: &[Episode],
    corpus: &Corpus,
    catalog: &RelationCatalog,
    config: &TrainConfig,
    analytic: &Params,
    options: &GradCheckOptions,
) -> Result<GradientReport> {
    let base = batch_loss(model, episodes, corpus, catalog, config, None)?;
    let noise_floor = 100.0 * f64::EPSILON * base.total.abs().max(1.0) / options.step;
    let frozen_weights = if config.loss.uses_task_weights() && !config.task_weight_grad {
        Some(base.task_weights)
    } else {
        None
    };
    let mut rng = stream(options.seed, Stream::GradCheck);
    let mut blocks = Vec::new();
    for (b, (name, grad)) in analytic.blocks().into_iter().enumerate() {
        let total = grad.len();
        let coords: Vec<usize> = if total < options.exhaustive_below {
            (0..total).collect()
        } else {
            let mut c = index::sample(&mut rng, total, options.sample_size.min(total)).into_vec();
            c.sort_unstable();
            c
        };
        let numeric: Vec<f64> = coords
            .par_iter()
            .map(|&i| {
                let eval = |delta: f64| {
                    let mut m = model.clone();
                    m.params.blocks_mut()[b].1[i] += delta;
                    batch_loss(&m, episodes, corpus, catalog, config, frozen_weights.as_deref()).map(|l| l.total)
                };
                Ok((eval(options.step)? - eval(-options.step)?) / (2.0 * options.step))
            })
            .collect::<Result<_>>()?;
        let mut scale = 0.0f64;
        let mut max_abs = 0.0f64;
        for (&i, &n) in coords.iter().zip(&numeric) {
            scale = scale.max(grad[i].abs()).max(n.abs());
            max_abs = max_abs.max((grad[i] - n).abs());
        }
        let structural_zero = scale < noise_floor;
        let max_rel_error = if max_abs == 0.0 || structural_zero { 0.0 } else { max_abs / scale };
        blocks.push(BlockError {
            name: name.to_string(),
            max_rel_error,
            max_abs_error: max_abs,
            checked: coords.len(),
            total,
            structural_zero,
        });
    }
    let passed = blocks
        .iter()
        .all(|b| b.max_rel_error.is_finite() && b.max_rel_error < options.threshold);
    Ok(GradientReport {
        blocks,
        threshold: options.threshold,
        passed,
    })
}
