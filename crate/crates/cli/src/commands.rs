use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use protorel::data::{load_catalog, load_corpus, Corpus, Episode, EpisodeSpec, Instance, QuerySampling, RelationCatalog, Span};
use protorel::encoder::{FrozenEmbeddings, Model};
use protorel::eval::{evaluate, inspect_task_weights, make_synthetic_corpus, EvalConfig, Setting, SyntheticSpec};
use protorel::rng::{stream, Stream};
use protorel::training::{check_gradients, init_toy_model, train_model, Checkpoint, GradCheckOptions, TrainConfig};

use crate::settings::{self, get, get_or, list, overlay, record, Settings};
use crate::{Failure, Run};

pub fn execute(command: &str, s: &Settings, run: &mut Run, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        "train" => train(s, run, out),
        "eval" => eval(s, run, out),
        "sample" => sample(s, run, out),
        "inspect-weights" => inspect(s, run, out),
        "check-gradients" => check(s, run, out),
        "make-synthetic" => synthetic(s, run, out),
        other => Err(Failure::Config(format!("unknown command {other}"))),
    }
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<(), Failure> {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| Failure::Data(format!("cannot write output: {e}")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn corpus_and_catalog(s: &Settings, run: &mut Run) -> Result<(Corpus, RelationCatalog), Failure> {
    let corpus = load_corpus(run.require_input(s, "corpus")?)?;
    let catalog = load_catalog(run.require_input(s, "catalog")?)?;
    catalog.check_covers(&corpus)?;
    Ok((corpus, catalog))
}

fn frozen_store(s: &Settings, run: &mut Run) -> Result<Option<Arc<FrozenEmbeddings>>, Failure> {
    match run.input(s, "frozen_embeddings")? {
        Some(p) => Ok(Some(Arc::new(FrozenEmbeddings::load(p)?))),
        None => Ok(None),
    }
}

/// Training config from `base` overlaid by the settings; a frozen store
/// fixes the dimension.
fn train_config(base: &TrainConfig, s: &Settings, store: Option<&FrozenEmbeddings>) -> Result<TrainConfig, Failure> {
    let mut cfg = overlay(base, s)?;
    if let Some(store) = store {
        if s.contains_key("dim") && cfg.dim != store.dim() {
            return Err(Failure::Config(format!(
                "dim = {} but the embedding store has d = {}",
                cfg.dim,
                store.dim()
            )));
        }
        cfg.dim = store.dim();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fresh_model(cfg: &TrainConfig, corpus: &Corpus, catalog: &RelationCatalog, store: Option<Arc<FrozenEmbeddings>>) -> Model {
    match store {
        Some(store) => Model::frozen(store, &mut stream(cfg.seed, Stream::Init)),
        None => init_toy_model(cfg, corpus, catalog),
    }
}

fn load_checkpoint(s: &Settings, run: &mut Run, store: Option<Arc<FrozenEmbeddings>>) -> Result<(Model, TrainConfig), Failure> {
    let ck = Checkpoint::load(run.require_input(s, "checkpoint")?)?;
    let cfg = ck.config.clone();
    Ok((ck.into_model(store)?, cfg))
}

fn query_sampling(s: &Settings) -> Result<QuerySampling, Failure> {
    get_or(s, "query_sampling", QuerySampling::Uniform)
}

fn train(s: &Settings, run: &mut Run, out: &mut dyn Write) -> Result<(), Failure> {
    let store = frozen_store(s, run)?;
    let cfg = train_config(&TrainConfig::default(), s, store.as_deref())?;
    record(&mut run.resolved, &cfg);
    let (corpus, catalog) = corpus_and_catalog(s, run)?;
    let validation = match run.input(s, "validation")? {
        Some(p) => Some(load_corpus(p)?),
        None => None,
    };
    let model = fresh_model(&cfg, &corpus, &catalog, store);

    let metrics_path = run.artifact("metrics", "metrics.jsonl");
    let file = File::create(&metrics_path)
        .map_err(|e| Failure::Data(format!("cannot create {}: {e}", metrics_path.display())))?;
    let mut log = BufWriter::new(file);
    let trained = train_model(model, &cfg, &corpus, &catalog, validation.as_ref(), Some(&mut log));
    log.flush()
        .map_err(|e| Failure::Data(format!("cannot write {}: {e}", metrics_path.display())))?;
    let outcome = trained?;

    let checkpoint_path = run.artifact("checkpoint", "checkpoint.json");
    Checkpoint::from_model(&outcome.model, &cfg).save(&checkpoint_path)?;
    let last = outcome.metrics.last().expect("at least one iteration");
    say(
        out,
        format_args!(
            "trained {} iterations, final loss {:.6}; checkpoint {}",
            last.iteration,
            last.loss,
            checkpoint_path.display()
        ),
    )?;
    if let Some(acc) = outcome.metrics.iter().rev().find_map(|m| m.val_accuracy) {
        say(out, format_args!("validation accuracy {acc:.4}"))?;
    }
    Ok(())
}

fn eval_config(s: &Settings) -> Result<EvalConfig, Failure> {
    let setting_text: String = get_or(s, "setting", "random".to_string())?;
    let setting = Setting::parse(&setting_text)
        .ok_or_else(|| Failure::Config(format!("unknown setting `{setting_text}`; expected random, easy, hard or custom")))?;
    let defaults = EvalConfig::default();
    let cfg = EvalConfig {
        setting,
        relations: get::<String>(s, "relations")?.map(|r| list(&r)).unwrap_or_default(),
        n: get_or(s, "n", defaults.n)?,
        k: get_or(s, "k", defaults.k)?,
        r: get_or(s, "r", defaults.r)?,
        episodes: get_or(s, "episodes", defaults.episodes)?,
        seed: get_or(s, "seed", defaults.seed)?,
        query_sampling: query_sampling(s)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn record_eval(run: &mut Run, cfg: &EvalConfig) {
    record(&mut run.resolved, cfg);
    run.resolved.insert("relations".into(), json!(cfg.relations.join(",")));
}

fn eval(s: &Settings, run: &mut Run, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = eval_config(s)?;
    record_eval(run, &cfg);
    let store = frozen_store(s, run)?;
    let (model, train_cfg) = load_checkpoint(s, run, store)?;
    let (corpus, catalog) = corpus_and_catalog(s, run)?;
    let report = evaluate(&model, &corpus, &catalog, &cfg, train_cfg.paths())?;
    let path = run.artifact("report", "report.json");
    write_json(&path, &report)?;
    let scope = match &report.relations {
        Some(ids) => format!("{} [{}]", cfg.setting.as_str(), ids.join(",")),
        None => format!("{} {}-way", cfg.setting.as_str(), cfg.n),
    };
    say(
        out,
        format_args!(
            "accuracy {:.4} +/- {:.4} ({scope}, {}-shot, {} episodes, {} queries)",
            report.accuracy, report.half_width, cfg.k, cfg.episodes, report.queries
        ),
    )
}

#[derive(Debug, Serialize)]
struct RelationDump {
    label: usize,
    id: String,
    name: String,
}

#[derive(Debug, Serialize)]
struct InstanceDump {
    relation: String,
    index: usize,
    label: usize,
    tokens: Vec<String>,
    head: Span,
    tail: Span,
}

#[derive(Debug, Serialize)]
struct EpisodeDump {
    relations: Vec<RelationDump>,
    support: Vec<InstanceDump>,
    query: Vec<InstanceDump>,
}

fn dump_instance(corpus: &Corpus, key: &protorel::data::InstanceKey, label: usize) -> InstanceDump {
    let inst = corpus.instance(key);
    InstanceDump {
        relation: key.relation.clone(),
        index: key.index,
        label,
        tokens: inst.tokens.clone(),
        head: inst.head,
        tail: inst.tail,
    }
}

fn dump_episode(ep: &Episode, corpus: &Corpus, catalog: &RelationCatalog) -> EpisodeDump {
    EpisodeDump {
        relations: ep
            .relation_ids
            .iter()
            .enumerate()
            .map(|(label, id)| RelationDump {
                label,
                id: id.clone(),
                name: catalog.get(id).map(|t| t.name_string()).unwrap_or_default(),
            })
            .collect(),
        support: ep
            .support
            .iter()
            .enumerate()
            .flat_map(|(label, row)| row.iter().map(move |key| (label, key)))
            .map(|(label, key)| dump_instance(corpus, key, label))
            .collect(),
        query: ep.query.iter().map(|(key, label)| dump_instance(corpus, key, *label)).collect(),
    }
}

/// Tokens with the head in `[[ ]]` and the tail in `<< >>`.
fn render_instance(inst: &Instance) -> String {
    let mut words = Vec::with_capacity(inst.tokens.len() + 4);
    for (i, tok) in inst.tokens.iter().enumerate() {
        if i == inst.head.start {
            words.push("[[".to_string());
        }
        if i == inst.tail.start {
            words.push("<<".to_string());
        }
        words.push(tok.clone());
        if i == inst.head.end {
            words.push("]]".to_string());
        }
        if i == inst.tail.end {
            words.push(">>".to_string());
        }
    }
    words.join(" ")
}

fn sample(s: &Settings, run: &mut Run, out: &mut dyn Write) -> Result<(), Failure> {
    let format: String = get_or(s, "format", "text".to_string())?;
    if format != "text" && format != "json" {
        return Err(Failure::Config(format!("unknown format `{format}`; expected text or json")));
    }
    let spec = EpisodeSpec {
        n: get_or(s, "n", 5)?,
        k: get_or(s, "k", 1)?,
        r: get_or(s, "r", 5)?,
        query_sampling: query_sampling(s)?,
    };
    let seed: u64 = get_or(s, "seed", 0)?;
    let relations: Option<String> = get(s, "relations")?;
    record(&mut run.resolved, &spec);
    run.resolved.insert("seed".into(), json!(seed));
    run.resolved.insert("format".into(), json!(format));
    run.resolved.insert("relations".into(), json!(relations.clone().unwrap_or_default()));

    let (corpus, catalog) = corpus_and_catalog(s, run)?;
    let mut rng = stream(seed, Stream::Sampling);
    let episode = match relations.as_deref().map(list) {
        Some(names) if !names.is_empty() => {
            let ids: Vec<String> = names.iter().map(|n| catalog.resolve(n).unwrap_or(n).to_string()).collect();
            spec.fixed(&corpus, &ids, &mut rng)?
        }
        _ => spec.sample(&corpus, &mut rng)?,
    };
    let dump = dump_episode(&episode, &corpus, &catalog);
    let path = run.artifact("episode", "episode.json");
    write_json(&path, &dump)?;

    if format == "json" {
        let text = serde_json::to_string_pretty(&dump).expect("episode serializes");
        return say(out, format_args!("{text}"));
    }
    say(out, format_args!("{}-way {}-shot episode, {} queries", episode.n_way(), episode.k_shot(), episode.num_queries()))?;
    for rel in &dump.relations {
        say(out, format_args!("relation {}: {} ({})", rel.label, rel.id, rel.name))?;
    }
    for (i, row) in episode.support.iter().enumerate() {
        for key in row {
            say(out, format_args!("support {i} {key}: {}", render_instance(corpus.instance(key))))?;
        }
    }
    for (key, label) in &episode.query {
        say(out, format_args!("query -> {label} {key}: {}", render_instance(corpus.instance(key))))?;
    }
    Ok(())
}

fn inspect(s: &Settings, run: &mut Run, out: &mut dyn Write) -> Result<(), Failure> {
    let spec = EpisodeSpec {
        n: get_or(s, "n", 5)?,
        k: get_or(s, "k", 1)?,
        r: get_or(s, "r", 5)?,
        query_sampling: query_sampling(s)?,
    };
    let t: usize = get_or(s, "t", 4)?;
    let seed: u64 = get_or(s, "seed", 0)?;
    let tasks: Option<String> = get(s, "tasks")?;
    record(&mut run.resolved, &spec);
    run.resolved.insert("t".into(), json!(t));
    run.resolved.insert("seed".into(), json!(seed));
    run.resolved.insert("tasks".into(), json!(tasks.clone().unwrap_or_default()));

    let store = frozen_store(s, run)?;
    let (model, train_cfg) = load_checkpoint(s, run, store)?;
    let (corpus, catalog) = corpus_and_catalog(s, run)?;
    let mut rng = stream(seed, Stream::Sampling);
    let episodes: Vec<Episode> = match tasks.as_deref() {
        Some(text) if !text.trim().is_empty() => text
            .split(';')
            .map(|task| {
                let ids: Vec<String> = list(task)
                    .iter()
                    .map(|n| catalog.resolve(n).unwrap_or(n).to_string())
                    .collect();
                spec.fixed(&corpus, &ids, &mut rng)
            })
            .collect::<Result<_, _>>()?,
        _ => {
            if t == 0 {
                return Err(Failure::Config("t must be positive".into()));
            }
            (0..t).map(|_| spec.sample(&corpus, &mut rng)).collect::<Result<_, _>>()?
        }
    };
    let rows = inspect_task_weights(&model, &episodes, &corpus, &catalog, train_cfg.paths())?;
    let path = run.artifact("weights", "weights.json");
    write_json(&path, &rows)?;

    let names: Vec<String> = rows
        .iter()
        .map(|row| {
            row.relations
                .iter()
                .map(|id| catalog.get(id).map_or_else(|| id.clone(), |t| t.name_string()))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .collect();
    let width = names.iter().map(String::len).max().unwrap_or(0).max(9);
    say(out, format_args!("{:<5} {:<width$}  {:>9}  {:>7}", "task", "relations", "frobenius", "weight"))?;
    for (i, (row, name)) in rows.iter().zip(&names).enumerate() {
        say(out, format_args!("{:<5} {:<width$}  {:>9.4}  {:>7.4}", i, name, row.frobenius, row.weight))?;
    }
    let total: f64 = rows.iter().map(|r| r.weight).sum();
    say(out, format_args!("sum of weights {total:.4}"))
}

/// Scale of the fresh parameters checked by `check-gradients`.
const DEFAULT_PARAM_SCALE: f64 = 6.0;

fn check(s: &Settings, run: &mut Run, out: &mut dyn Write) -> Result<(), Failure> {
    let store = frozen_store(s, run)?;
    let (model, base) = match settings::path(s, "checkpoint")? {
        Some(_) => {
            let (m, c) = load_checkpoint(s, run, store.clone())?;
            (Some(m), c)
        }
        None => (None, TrainConfig::default()),
    };
    let cfg = train_config(&base, s, store.as_deref())?;
    record(&mut run.resolved, &cfg);
    let defaults = GradCheckOptions::default();
    let options = GradCheckOptions {
        step: get_or(s, "step", defaults.step)?,
        threshold: get_or(s, "threshold", defaults.threshold)?,
        seed: cfg.seed,
        ..defaults
    };
    if !(options.step > 0.0 && options.step.is_finite()) {
        return Err(Failure::Config(format!("step must be positive, got {}", options.step)));
    }
    run.resolved.insert("step".into(), json!(options.step));
    run.resolved.insert("threshold".into(), json!(options.threshold));
    let param_scale: f64 = get_or(s, "param_scale", DEFAULT_PARAM_SCALE)?;
    if !param_scale.is_finite() {
        return Err(Failure::Config(format!("param_scale must be finite, got {param_scale}")));
    }

    let (corpus, catalog) = corpus_and_catalog(s, run)?;
    let model = match model {
        Some(m) => m,
        None => {
            run.resolved.insert("param_scale".into(), json!(param_scale));
            let mut m = fresh_model(&cfg, &corpus, &catalog, store);
            m.params.scale(param_scale);
            m
        }
    };
    let spec = cfg.episode_spec();
    let mut rng = stream(cfg.seed, Stream::Sampling);
    let batch: Vec<Episode> = (0..cfg.t).map(|_| spec.sample(&corpus, &mut rng)).collect::<Result<_, _>>()?;
    let report = check_gradients(&model, &batch, &corpus, &catalog, &cfg, &options)?;
    let path = run.artifact("report", "gradcheck.json");
    write_json(&path, &report)?;

    say(out, format_args!("{:<22} {:>12} {:>12}  checked", "block", "rel error", "abs error"))?;
    for b in &report.blocks {
        let note = if b.structural_zero { "  (zero)" } else { "" };
        say(
            out,
            format_args!(
                "{:<22} {:>12.3e} {:>12.3e}  {}/{}{note}",
                b.name, b.max_rel_error, b.max_abs_error, b.checked, b.total
            ),
        )?;
    }
    let max = report.max_error();
    say(
        out,
        format_args!(
            "{} max relative error {max:.3e} (threshold {:.1e})",
            if report.passed { "PASS" } else { "FAIL" },
            report.threshold
        ),
    )?;
    if !report.passed {
        let worst = report
            .blocks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .map_or("?", |b| b.name.as_str());
        return Err(Failure::Numeric(format!(
            "gradient check failed: relative error {max:.3e} on {worst} exceeds {:.1e}",
            report.threshold
        )));
    }
    Ok(())
}

fn synthetic(s: &Settings, run: &mut Run, out: &mut dyn Write) -> Result<(), Failure> {
    let spec = overlay(&SyntheticSpec::default(), s)?;
    spec.validate()?;
    let holdout: usize = get_or(s, "holdout", 0)?;
    record(&mut run.resolved, &spec);
    run.resolved.insert("holdout".into(), json!(holdout));

    let (corpus, catalog) = make_synthetic_corpus(&spec)?;
    let write = |path: &Path, text: String| {
        fs::write(path, text).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
    };
    write(&run.artifact("corpus", "corpus.json"), corpus.to_json_string())?;
    write(&run.artifact("catalog", "catalog.json"), catalog.to_json_string())?;
    if holdout > 0 {
        let (train, held) = corpus.split_tail(holdout)?;
        write(&run.artifact("train", "train.json"), train.to_json_string())?;
        write(&run.artifact("heldout", "heldout.json"), held.to_json_string())?;
    }
    say(
        out,
        format_args!(
            "wrote {} relations x {} instances (hardness {}) to {}",
            corpus.num_relations(),
            spec.instances,
            spec.hardness,
            run.out_dir.as_ref().expect("resolved").display()
        ),
    )
}
