mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{oracle, protonet_ce_head_gradient, random_fixture, rel_dev, OracleConfig, Shape};
use protorel::losses::LossMode;
use protorel::training::{batch_loss, forward_backward, TrainConfig};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn full_objective_matches_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let shape = Shape {
            n: rng.random_range(2..=3),
            k: rng.random_range(1..=2),
            r: rng.random_range(1..=3),
            d: rng.random_range(1..=3),
            max_len: rng.random_range(1..=4),
            t: rng.random_range(1..=3),
        };
        let fx = random_fixture(&mut rng, &shape);
        let (global, local) = match case % 4 {
            0 | 1 => (true, true),
            2 => (true, false),
            _ => (false, true),
        };
        let task_weights = case % 5 != 4;
        let config = TrainConfig {
            n: shape.n,
            k: shape.k,
            r: shape.r,
            t: shape.t,
            gamma: rng.random_range(0.0..3.0),
            lambda: rng.random_range(0.0..2.0),
            use_global: global,
            use_local: local,
            loss: if task_weights { LossMode::TaskAdaptiveFocal } else { LossMode::Focal },
            dim: shape.d,
            ..TrainConfig::default()
        };
        let reference = oracle(
            &fx,
            OracleConfig {
                gamma: config.gamma,
                lambda: config.lambda,
                task_weights,
                local,
                global,
            },
        );
        let loss = batch_loss(&fx.model, &fx.episodes, &fx.corpus, &fx.catalog, &config, None).unwrap();
        let tol = 1e-12;
        assert!(close(loss.total, reference.total, tol), "case {case}: total {} vs {}", loss.total, reference.total);
        assert!(close(loss.task_focal, reference.task_focal, tol), "case {case}: focal");
        assert!(close(loss.contrastive, reference.contrastive, tol), "case {case}: contrastive");
        for (a, b) in loss.task_weights.iter().zip(&reference.weights) {
            assert!(close(*a, *b, tol), "case {case}: weights {a} vs {b}");
        }
        for (ep, oracle_ep) in loss.episodes.iter().zip(&reference.episodes) {
            for (row, oracle_row) in ep.probabilities.iter().zip(&oracle_ep.probs) {
                for (a, b) in row.iter().zip(oracle_row) {
                    assert!(close(*a, *b, tol), "case {case}: probability {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn global_only_cross_entropy_gradient_matches_plain_prototypical_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for t in [1, 2] {
        for _ in 0..20 {
            let shape = Shape {
                n: rng.random_range(2..=4),
                k: rng.random_range(1..=3),
                r: rng.random_range(1..=4),
                d: rng.random_range(1..=4),
                max_len: 5,
                t,
            };
            let fx = random_fixture(&mut rng, &shape);
            let config = TrainConfig {
                n: shape.n,
                k: shape.k,
                r: shape.r,
                t,
                gamma: 0.0,
                lambda: 0.0,
                use_local: false,
                use_contrastive: false,
                loss: LossMode::Ce,
                dim: shape.d,
                ..TrainConfig::default()
            };
            let (_, grads) = forward_backward(&fx.model, &fx.episodes, &fx.corpus, &fx.catalog, &config).unwrap();
            let (dw, db) = protonet_ce_head_gradient(&fx);
            let flat: Vec<f64> = dw.into_iter().flatten().collect();
            let dev_w = rel_dev(grads.relation_weight.as_slice().unwrap(), &flat);
            assert!(dev_w < 1e-10, "weight deviation {dev_w:e}");
            // A shared bias shifts every logit of a query equally, so its
            // true gradient is zero.
            for (a, b) in grads.relation_bias.iter().zip(&db) {
                assert!(a.abs() < 1e-14 && b.abs() < 1e-14, "bias gradient {a:e} vs {b:e}");
            }
        }
    }
}
