//! Shared fixtures and independent reference implementations. Everything
//! here works on plain `Vec<f64>` loops and never calls the library's
//! numeric code.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;

use protorel::data::{Corpus, Episode, Instance, InstanceKey, RelationCatalog, RelationText, Span};
use protorel::encoder::{FrozenEmbeddings, Markers, Model, TokenEmbeddings};
use protorel::rng::{stream, Stream};

pub type Mat = Vec<Vec<f64>>;

/// Frozen-backbone episodes with random token matrices.
pub struct Fixture {
    pub corpus: Corpus,
    pub catalog: RelationCatalog,
    pub store: Arc<FrozenEmbeddings>,
    pub model: Model,
    pub episodes: Vec<Episode>,
    pub d: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub d: usize,
    pub max_len: usize,
    pub t: usize,
}

fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

/// Every relation `r{i}` holds `k + r` instances; episode `τ` uses all N
/// relations, the first K instances as support and the next R as queries
/// with random labels.
pub fn random_fixture<R: Rng>(rng: &mut R, shape: &Shape) -> Fixture {
    let Shape { n, k, r, d, max_len, t } = *shape;
    let per_relation = k + r * t;
    let mut store = FrozenEmbeddings::new(d);
    let mut relations = BTreeMap::new();
    let mut catalog = RelationCatalog::default();
    for i in 0..n {
        let id = format!("r{i}");
        let mut instances = Vec::new();
        for idx in 0..per_relation {
            let len = rng.random_range(1..=max_len);
            let head = rng.random_range(0..len);
            let tail = rng.random_range(0..len);
            instances.push(Instance {
                tokens: (0..len).map(|p| format!("t{p}")).collect(),
                head: Span::new(head, head),
                tail: Span::new(tail, tail),
                relation_id: id.clone(),
            });
            let markers = Markers {
                cls: None,
                head: Some(head),
                tail: Some(tail),
            };
            store
                .insert(format!("{id}#{idx}"), TokenEmbeddings::new(random_matrix(rng, len, d, 1.0), markers))
                .unwrap();
        }
        let len = rng.random_range(1..=max_len);
        let markers = Markers {
            cls: Some(0),
            head: None,
            tail: None,
        };
        store
            .insert(format!("rel:{id}"), TokenEmbeddings::new(random_matrix(rng, len, d, 1.0), markers))
            .unwrap();
        catalog.insert(id.clone(), RelationText::new(&format!("name {i}"), "")).unwrap();
        relations.insert(id, instances);
    }
    let corpus = Corpus::from_relations(relations).unwrap();
    let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
    let episodes = (0..t)
        .map(|tau| Episode {
            relation_ids: ids.clone(),
            support: ids
                .iter()
                .map(|id| (0..k).map(|s| InstanceKey::new(id.clone(), s)).collect())
                .collect(),
            query: (0..r)
                .map(|j| {
                    let label = rng.random_range(0..n);
                    (InstanceKey::new(ids[label].clone(), k + tau * r + j), label)
                })
                .collect(),
        })
        .collect();
    let store = Arc::new(store);
    let mut model = Model::frozen(store.clone(), &mut stream(0, Stream::Init));
    model.params.relation_weight = random_matrix(rng, 2 * d, d, 1.0);
    model.params.relation_bias = Array1::from_shape_simple_fn(2 * d, || rng.random_range(-0.5..0.5));
    Fixture {
        corpus,
        catalog,
        store,
        model,
        episodes,
        d,
    }
}

pub fn to_mat(m: &Array2<f64>) -> Mat {
    m.outer_iter().map(|row| row.to_vec()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in z {
        if v > max {
            max = v;
        }
    }
    let mut e = Vec::with_capacity(z.len());
    let mut total = 0.0;
    for &v in z {
        let x = (v - max).exp();
        e.push(x);
        total += x;
    }
    for x in e.iter_mut() {
        *x /= total;
    }
    e
}

/// Token-level attention pooling: `u_n = Σ_m Σ_c a[n][c] b[m][c]`,
/// `α = softmax(u)`, output `Σ_n α_n a[n]`.
pub fn pool(a: &Mat, b: &Mat) -> (Vec<f64>, Vec<f64>) {
    let d = a[0].len();
    let mut u = vec![0.0; a.len()];
    for n in 0..a.len() {
        for row in b {
            for c in 0..d {
                u[n] += a[n][c] * row[c];
            }
        }
    }
    let alpha = softmax(&u);
    let mut out = vec![0.0; d];
    for n in 0..a.len() {
        for c in 0..d {
            out[c] += alpha[n] * a[n][c];
        }
    }
    (out, alpha)
}

/// Switches of the scalar objective.
#[derive(Clone, Copy)]
pub struct OracleConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub task_weights: bool,
    pub local: bool,
    pub global: bool,
}

pub struct OracleEpisode {
    pub probs: Mat,
    pub focal: Vec<f64>,
    pub contrastive: f64,
    pub frobenius: f64,
    pub proto: Mat,
    pub relation: Mat,
    pub query: Mat,
    /// Every attention weight vector computed along the way.
    pub attention: Vec<Vec<f64>>,
}

pub struct OracleBatch {
    pub episodes: Vec<OracleEpisode>,
    pub weights: Vec<f64>,
    pub task_focal: f64,
    pub contrastive: f64,
    pub total: f64,
}

fn record(store: &FrozenEmbeddings, key: &str) -> (Mat, Markers) {
    let e = store.get(key).unwrap();
    (to_mat(&e.matrix), e.markers)
}

/// The whole objective in scalar loops.
pub fn oracle(fx: &Fixture, cfg: OracleConfig) -> OracleBatch {
    let d = fx.d;
    let w = to_mat(&fx.model.params.relation_weight);
    let b = fx.model.params.relation_bias.to_vec();
    let mut episodes = Vec::new();
    for ep in &fx.episodes {
        let n = ep.relation_ids.len();
        let k = ep.support[0].len();
        let mut attention = Vec::new();
        let mut proto = Vec::new();
        let mut relation = Vec::new();
        for i in 0..n {
            let (rel, rm) = record(&fx.store, &format!("rel:{}", ep.relation_ids[i]));
            let cls = &rel[rm.cls.unwrap()];
            let mut rg = vec![0.0; 2 * d];
            for o in 0..2 * d {
                rg[o] = b[o];
                for c in 0..d {
                    rg[o] += w[o][c] * cls[c];
                }
            }
            let mut sg = vec![0.0; 2 * d];
            let mut sl = vec![0.0; d];
            let mut rl = vec![0.0; d];
            for key in &ep.support[i] {
                let (sup, sm) = record(&fx.store, &key.to_string());
                let (h, t) = (sm.head.unwrap(), sm.tail.unwrap());
                for c in 0..d {
                    sg[c] += sup[h][c] / k as f64;
                    sg[d + c] += sup[t][c] / k as f64;
                }
                let (s_hat, a1) = pool(&sup, &rel);
                let (r_part, a2) = pool(&rel, &sup);
                attention.push(a1);
                attention.push(a2);
                for c in 0..d {
                    sl[c] += s_hat[c] / k as f64;
                    rl[c] += r_part[c] / k as f64;
                }
            }
            let mut p = vec![0.0; 3 * d];
            let mut rh = vec![0.0; 3 * d];
            for c in 0..2 * d {
                if cfg.global {
                    p[c] = sg[c] + rg[c];
                    rh[c] = rg[c];
                }
            }
            for c in 0..d {
                if cfg.local {
                    p[2 * d + c] = sl[c] + rl[c];
                    rh[2 * d + c] = rl[c];
                }
            }
            proto.push(p);
            relation.push(rh);
        }

        let mut query = Vec::new();
        let mut probs = Vec::new();
        let mut focal = Vec::new();
        for (key, label) in &ep.query {
            let (q, qm) = record(&fx.store, &key.to_string());
            let (h, t) = (qm.head.unwrap(), qm.tail.unwrap());
            let mut qh = vec![0.0; 3 * d];
            if cfg.global {
                qh[..d].copy_from_slice(&q[h]);
                qh[d..2 * d].copy_from_slice(&q[t]);
            }
            if cfg.local {
                let (q_hat, a) = pool(&q, &q);
                attention.push(a);
                for c in 0..d {
                    qh[2 * d + c] = q_hat[c];
                }
            }
            let z: Vec<f64> = proto.iter().map(|p| dot(&qh, p)).collect();
            let pr = softmax(&z);
            let py = pr[*label];
            focal.push(-(1.0 - py).powf(cfg.gamma) * py.max(1e-12).ln());
            probs.push(pr);
            query.push(qh);
        }

        let mut contrastive = 0.0;
        for i in 0..n {
            let dots: Vec<f64> = proto.iter().map(|p| dot(&relation[i], p)).collect();
            let attn = softmax(&dots);
            attention.push(attn.clone());
            contrastive -= attn[i].ln();
        }

        let class: Mat = (0..n)
            .map(|i| relation[i].iter().chain(&proto[i]).copied().collect())
            .collect();
        let mut fro = 0.0;
        for i in 0..n {
            for j in 0..n {
                let s = if i == j {
                    1.0
                } else {
                    dot(&class[i], &class[j]) / (dot(&class[i], &class[i]).sqrt() * dot(&class[j], &class[j]).sqrt())
                };
                fro += s * s;
            }
        }
        episodes.push(OracleEpisode {
            probs,
            focal,
            contrastive,
            frobenius: fro.sqrt(),
            proto,
            relation,
            query,
            attention,
        });
    }

    let t = episodes.len();
    let weights = if cfg.task_weights {
        softmax(&episodes.iter().map(|e| e.frobenius).collect::<Vec<_>>())
    } else {
        vec![1.0 / t as f64; t]
    };
    let mut weighted = 0.0;
    let mut queries = 0usize;
    let mut contrastive = 0.0;
    for (e, wt) in episodes.iter().zip(&weights) {
        for f in &e.focal {
            weighted += wt * f;
        }
        queries += e.focal.len();
        contrastive += e.contrastive / t as f64;
    }
    let task_focal = weighted / queries as f64;
    OracleBatch {
        total: task_focal + cfg.lambda * contrastive,
        episodes,
        weights,
        task_focal,
        contrastive,
    }
}

/// Gradient of the plain prototypical-network cross-entropy (global
/// features only) with respect to the relation head, derived by hand. The
/// batch reduction is `Σ_τ (1/T) Σ_j CE / (T·R)`, so
/// `∂L/∂z_ji = (p_ji − y_ji) / (T · T·R)`, `∂L/∂p_i = Σ_j ∂L/∂z_ji · q_j`,
/// and `p_i` depends on the head through `r_i = W·cls_i + b`.
pub fn protonet_ce_head_gradient(fx: &Fixture) -> (Mat, Vec<f64>) {
    let d = fx.d;
    let w = to_mat(&fx.model.params.relation_weight);
    let b = fx.model.params.relation_bias.to_vec();
    let mut dw = vec![vec![0.0; d]; 2 * d];
    let mut db = vec![0.0; 2 * d];
    let total_queries: usize = fx.episodes.iter().map(|e| e.query.len()).sum();
    let scale = 1.0 / (fx.episodes.len() * total_queries) as f64;
    for ep in &fx.episodes {
        let n = ep.relation_ids.len();
        let k = ep.support[0].len();
        let mut protos = Vec::new();
        let mut cls_rows = Vec::new();
        for i in 0..n {
            let (rel, rm) = record(&fx.store, &format!("rel:{}", ep.relation_ids[i]));
            let cls = rel[rm.cls.unwrap()].clone();
            let mut p = vec![0.0; 2 * d];
            for o in 0..2 * d {
                p[o] = b[o] + dot(&w[o], &cls);
            }
            for key in &ep.support[i] {
                let (sup, sm) = record(&fx.store, &key.to_string());
                for c in 0..d {
                    p[c] += sup[sm.head.unwrap()][c] / k as f64;
                    p[d + c] += sup[sm.tail.unwrap()][c] / k as f64;
                }
            }
            protos.push(p);
            cls_rows.push(cls);
        }
        for (key, label) in &ep.query {
            let (q, qm) = record(&fx.store, &key.to_string());
            let qg: Vec<f64> = q[qm.head.unwrap()].iter().chain(&q[qm.tail.unwrap()]).copied().collect();
            let z: Vec<f64> = protos.iter().map(|p| dot(&qg, p)).collect();
            let pr = softmax(&z);
            for i in 0..n {
                let dz = (pr[i] - if i == *label { 1.0 } else { 0.0 }) * scale;
                for o in 0..2 * d {
                    let dp = dz * qg[o];
                    db[o] += dp;
                    for c in 0..d {
                        dw[o][c] += dp * cls_rows[i][c];
                    }
                }
            }
        }
    }
    (dw, db)
}

/// Max |a − b| over max(max|a|, max|b|); 0 when both vanish.
pub fn rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let mut scale = 0.0f64;
    let mut diff = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        scale = scale.max(x.abs()).max(y.abs());
        diff = diff.max((x - y).abs());
    }
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Smallest pairwise cosine among the vectors.
pub fn min_pairwise_cosine(vs: &[Array1<f64>]) -> f64 {
    let mut min = f64::INFINITY;
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            min = min.min(cosine(vs[i].as_slice().unwrap(), vs[j].as_slice().unwrap()));
        }
    }
    min
}

/// Largest absolute pairwise cosine among the vectors.
pub fn max_abs_pairwise_cosine(vs: &[Array1<f64>]) -> f64 {
    let mut max = 0.0f64;
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            max = max.max(cosine(vs[i].as_slice().unwrap(), vs[j].as_slice().unwrap()).abs());
        }
    }
    max
}

/// A shared random direction plus small perturbations, scaled randomly.
/// Redraws until every pairwise cosine exceeds 0.9.
pub fn clustered_task<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Array1<f64>> {
    loop {
        let base: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let len = dot(&base, &base).sqrt();
        if len < 1e-3 {
            continue;
        }
        let vs: Vec<Array1<f64>> = (0..n)
            .map(|_| {
                let scale = rng.random_range(0.5..2.0);
                Array1::from_shape_fn(dim, |c| scale * (base[c] / len + rng.random_range(-0.1..0.1)))
            })
            .collect();
        if min_pairwise_cosine(&vs) > 0.9 {
            return vs;
        }
    }
}

/// N mutually orthogonal vectors (Gram-Schmidt on random draws) with random
/// positive scales. Needs `n <= dim`.
pub fn orthogonal_task<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Array1<f64>> {
    assert!(n <= dim);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &basis {
            let p = dot(&v, u);
            for c in 0..dim {
                v[c] -= p * u[c];
            }
        }
        let len = dot(&v, &v).sqrt();
        if len > 1e-3 {
            basis.push(v.iter().map(|x| x / len).collect());
        }
    }
    basis
        .into_iter()
        .map(|u| {
            let scale = rng.random_range(0.5..2.0);
            Array1::from_shape_fn(dim, |c| scale * u[c])
        })
        .collect()
}

/// The two-way one-shot d = 1 episode of `docs/hand_trace.md`.
pub fn hand_trace_fixture() -> Fixture {
    let mut store = FrozenEmbeddings::new(1);
    let column = |v: &[f64]| Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap();
    let instance = Markers {
        cls: None,
        head: Some(0),
        tail: Some(1),
    };
    let relation = Markers {
        cls: Some(0),
        head: None,
        tail: None,
    };
    store.insert("rel:A", TokenEmbeddings::new(column(&[1.0, 0.5]), relation)).unwrap();
    store.insert("rel:B", TokenEmbeddings::new(column(&[-0.5, 1.0]), relation)).unwrap();
    store.insert("A#0", TokenEmbeddings::new(column(&[0.2, 0.4]), instance)).unwrap();
    store.insert("B#0", TokenEmbeddings::new(column(&[-0.3, 0.1]), instance)).unwrap();
    store.insert("A#1", TokenEmbeddings::new(column(&[0.3, 0.5]), instance)).unwrap();

    let inst = |id: &str| Instance {
        tokens: vec!["x".into(), "y".into()],
        head: Span::new(0, 0),
        tail: Span::new(1, 1),
        relation_id: id.into(),
    };
    let mut relations = BTreeMap::new();
    relations.insert("A".to_string(), vec![inst("A"), inst("A")]);
    relations.insert("B".to_string(), vec![inst("B")]);
    let corpus = Corpus::from_relations(relations).unwrap();
    let mut catalog = RelationCatalog::default();
    catalog.insert("A".into(), RelationText::new("relation a", "")).unwrap();
    catalog.insert("B".into(), RelationText::new("relation b", "")).unwrap();

    let store = Arc::new(store);
    let mut model = Model::frozen(store.clone(), &mut stream(0, Stream::Init));
    model.params.relation_weight = Array2::from_shape_vec((2, 1), vec![0.5, -0.5]).unwrap();
    model.params.relation_bias = Array1::from(vec![0.0, 0.1]);
    let episode = Episode {
        relation_ids: vec!["A".into(), "B".into()],
        support: vec![vec![InstanceKey::new("A", 0)], vec![InstanceKey::new("B", 0)]],
        query: vec![(InstanceKey::new("A", 1), 0)],
    };
    Fixture {
        corpus,
        catalog,
        store,
        model,
        episodes: vec![episode],
        d: 1,
    }
}

/// Library values of the hand trace paired with their printed form.
pub fn hand_trace_values(fx: &Fixture) -> Vec<(&'static str, f64, &'static str)> {
    use protorel::losses::{class_representations, frobenius_norm, task_similarity_matrix, ContrastiveMode, LossMode};
    use protorel::protonet::{assemble_hybrid, query_logits, score_queries};
    use protorel::training::{batch_loss, encode_episode, TrainConfig};

    let ep = &fx.episodes[0];
    let encoded = encode_episode(&fx.model, ep, &fx.corpus, &fx.catalog).unwrap();
    let reps = assemble_hybrid(&encoded);
    let logits = query_logits(&reps);
    let probs = score_queries(&reps);
    let sim = task_similarity_matrix(&class_representations(&reps)).unwrap();
    let config = TrainConfig {
        n: 2,
        k: 1,
        r: 1,
        t: 1,
        gamma: 1.0,
        lambda: 1.0,
        dim: 1,
        loss: LossMode::TaskAdaptiveFocal,
        contrastive_mode: ContrastiveMode::Exp,
        ..TrainConfig::default()
    };
    let loss = batch_loss(&fx.model, &fx.episodes, &fx.corpus, &fx.catalog, &config, None).unwrap();
    let dot = |a: &Array1<f64>, b: &Array1<f64>| a.dot(b);
    vec![
        ("alpha support A", reps.support_weights[0][0][0], "0.425557"),
        ("alpha support B", reps.support_weights[1][0][0], "0.450166"),
        ("alpha relation A", reps.relation_weights[0][0][0], "0.574443"),
        ("alpha query", reps.query_weights[0][0], "0.460085"),
        ("s_hat A", reps.support_local[0][0][0], "0.314889"),
        ("s_hat B", reps.support_local[1][0][0], "-0.080066"),
        ("r_hat A", reps.relation_local[0][0], "0.787221"),
        ("r_hat B", reps.relation_local[1][0], "0.138336"),
        ("q_hat", reps.query_local[0][0], "0.407983"),
        ("p_l A", reps.proto_local[0][0], "1.102110"),
        ("p_l B", reps.proto_local[1][0], "0.058270"),
        ("p_g A head", reps.proto_global[0][0], "0.7"),
        ("p_g B tail", reps.proto_global[1][1], "0.45"),
        ("z A", logits[[0, 0]], "0.659642"),
        ("z B", logits[[0, 1]], "0.083773"),
        ("prob A", probs[[0, 0]], "0.640116"),
        ("prob B", probs[[0, 1]], "0.359884"),
        ("focal", loss.task_focal, "0.160546"),
        ("anchor A proto A", dot(&reps.relation_hybrid[0], &reps.proto_hybrid[0]), "1.217604"),
        ("anchor A proto B", dot(&reps.relation_hybrid[0], &reps.proto_hybrid[1]), "-0.409129"),
        ("anchor B proto A", dot(&reps.relation_hybrid[1], &reps.proto_hybrid[0]), "-0.022538"),
        ("anchor B proto B", dot(&reps.relation_hybrid[1], &reps.proto_hybrid[1]), "0.303061"),
        ("contrastive", loss.contrastive, "0.723001"),
        ("cosine AB", sim[[0, 1]], "-0.341647"),
        ("frobenius", frobenius_norm(&sim), "1.494472"),
        ("weight", loss.task_weights[0], "1"),
        ("total", loss.total, "0.883547"),
    ]
}
