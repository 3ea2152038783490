//! One function per subcommand; each returns a JSON summary for stdout.

use std::io::Write;
use std::path::{Path, PathBuf};

use q2p_core::diagnostics::gradient_suite;
use q2p_core::eval::{evaluate, random_baseline};
use q2p_core::kg::build_splits;
use q2p_core::query::{parse_query, serialize_query};
use q2p_core::sampler::{generate_dataset, import_benchmark, read_jsonl, type_counts, write_dataset, write_jsonl};
use q2p_core::train::{init_model, load_checkpoint, read_manifest, train_loop, OptimizerState};
use q2p_core::{oracle, synthetic, EntityId, GraphSplits, ModelParams, QueryInstance, Split};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;

/// Version of the JSON side files written by the CLI.
pub const ARTIFACT_VERSION: u32 = 1;

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::input(
            "missing_path",
            format!("{} does not exist", path.display()),
        ))
    }
}

fn load_splits(cfg: &RunConfig) -> Result<GraphSplits, CliError> {
    let [train, valid, test] = cfg.triple_files();
    for p in [&train, &valid, &test] {
        require(p)?;
    }
    Ok(build_splits(train, valid, test)?)
}

fn queries_file(cfg: &RunConfig, split: Split) -> PathBuf {
    cfg.paths.queries.join(format!("{split}.jsonl"))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::input("io", format!("{}: {e}", dir.display())))?;
    }
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::input("io", format!("{}: {e}", path.display())))
}

fn parse_split(name: &str) -> Result<Split, CliError> {
    Ok(name.parse::<Split>()?)
}

pub fn synth(cfg: &RunConfig) -> Result<Value, CliError> {
    let kg = synthetic::generate(&cfg.synthetic)?;
    kg.write(&cfg.paths.triples)?;
    let echo = json!({"format_version": ARTIFACT_VERSION, "config": cfg.echo()});
    write_json(&cfg.paths.triples.join("synthetic.json"), &echo)?;
    Ok(json!({
        "entities": kg.vocab.entities.len(),
        "relations": kg.vocab.relations.len(),
        "edges": {"train": kg.train.len(), "valid": kg.valid.len(), "test": kg.test.len()},
        "dir": cfg.paths.triples,
    }))
}

pub fn sample(cfg: &RunConfig) -> Result<Value, CliError> {
    let splits = load_splits(cfg)?;
    let ds = generate_dataset(&splits, &cfg.sample)?;
    for cell in ds.stats.iter().filter(|c| c.emitted < c.requested) {
        log::warn!(
            "{} {}: {}/{} instances (pool exhausted: {})",
            cell.split,
            cell.query_type,
            cell.emitted,
            cell.requested,
            cell.pool_exhausted
        );
    }
    write_dataset(&cfg.paths.queries, &ds, &splits.vocab)?;
    let stats = json!({
        "format_version": ARTIFACT_VERSION,
        "config": cfg.echo(),
        "cells": ds.stats,
    });
    write_json(&cfg.paths.queries.join("stats.json"), &stats)?;
    Ok(json!({
        "dir": cfg.paths.queries,
        "instances": {"train": ds.train.len(), "valid": ds.valid.len(), "test": ds.test.len()},
    }))
}

pub fn import(cfg: &RunConfig, dump: &Path) -> Result<Value, CliError> {
    require(dump)?;
    let splits = load_splits(cfg)?;
    let instances = import_benchmark(dump, &splits.vocab)?;
    let mut written = serde_json::Map::new();
    for split in Split::ALL {
        let part: Vec<QueryInstance> = instances.iter().filter(|i| i.split == split).cloned().collect();
        if part.is_empty() {
            continue;
        }
        std::fs::create_dir_all(&cfg.paths.queries)
            .map_err(|e| CliError::input("io", format!("{}: {e}", cfg.paths.queries.display())))?;
        write_jsonl(queries_file(cfg, split), &part, &splits.vocab)?;
        written.insert(split.to_string(), json!(type_counts(&part)));
    }
    let echo = json!({"format_version": ARTIFACT_VERSION, "config": cfg.echo(), "source": dump});
    write_json(&cfg.paths.queries.join("import.json"), &echo)?;
    Ok(json!({"dir": cfg.paths.queries, "imported": written}))
}

/// The checkpoint under `root` with the highest optimizer step.
pub fn latest_checkpoint(root: &Path) -> Result<PathBuf, CliError> {
    require(root)?;
    let entries = std::fs::read_dir(root).map_err(|e| CliError::input("io", format!("{}: {e}", root.display())))?;
    let mut best: Option<(u64, bool, PathBuf)> = None;
    for entry in entries.flatten() {
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        let is_final = name == "final";
        if !(is_final || name.starts_with("ckpt-")) || !path.join("manifest.json").exists() {
            continue;
        }
        let step = read_manifest(&path)?.optimizer_step;
        if best.as_ref().is_none_or(|(s, f, _)| (step, is_final) > (*s, *f)) {
            best = Some((step, is_final, path));
        }
    }
    best.map(|(_, _, p)| p)
        .ok_or_else(|| CliError::input("missing_path", format!("no checkpoint under {}", root.display())))
}

fn load_params(
    cfg: &RunConfig,
    dir: &Path,
    splits: &GraphSplits,
) -> Result<(ModelParams<f32>, OptimizerState), CliError> {
    require(&dir.join("manifest.json"))?;
    let (params, opt, _) = load_checkpoint(dir, Some(&cfg.model))?;
    let (ne, nr) = (splits.vocab.entities.len(), splits.vocab.relations.len());
    if params.num_entities != ne || params.num_relations != nr {
        return Err(CliError::input(
            "input",
            format!(
                "checkpoint {} has {} entities and {} relations, the graph has {ne} and {nr}",
                dir.display(),
                params.num_entities,
                params.num_relations
            ),
        ));
    }
    Ok((params, opt))
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<Value, CliError> {
    let splits = load_splits(cfg)?;
    let train_file = queries_file(cfg, Split::Train);
    require(&train_file)?;
    let valid_file = queries_file(cfg, Split::Valid);
    let validate = cfg.train.eval_every > 0;
    if validate {
        require(&valid_file)?;
    }
    if let Some(dir) = resume {
        require(&dir.join("manifest.json"))?;
    }

    let train_set = read_jsonl(&train_file, &splits.vocab)?;
    let valid_set = if validate {
        Some(read_jsonl(&valid_file, &splits.vocab)?)
    } else {
        None
    };
    let (mut params, mut opt) = match resume {
        Some(dir) => load_params(cfg, dir, &splits)?,
        None => {
            let params = init_model(
                cfg.model.clone(),
                splits.vocab.entities.len(),
                splits.vocab.relations.len(),
                cfg.seed,
            )?;
            let opt = OptimizerState::new(&params);
            (params, opt)
        }
    };
    let start = opt.step;
    let outcome = train_loop(
        &mut params,
        &mut opt,
        &train_set,
        valid_set.as_deref(),
        &cfg.train,
        &cfg.paths.checkpoints,
        &cfg.echo(),
    )?;
    Ok(json!({
        "resumed_from": resume,
        "start_step": start,
        "steps": opt.step,
        "final_loss": outcome.losses.last().map(|r| r.loss),
        "final_checkpoint": outcome.final_checkpoint,
        "best": outcome.best.map(|(step, mrr)| json!({"step": step, "valid_mrr": mrr})),
    }))
}

pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, split: &str) -> Result<Value, CliError> {
    let split = parse_split(split)?;
    let dir = checkpoint.map_or_else(|| cfg.paths.checkpoints.join("final"), Path::to_path_buf);
    require(&dir.join("manifest.json"))?;
    let file = queries_file(cfg, split);
    require(&file)?;
    let splits = load_splits(cfg)?;
    let instances = read_jsonl(&file, &splits.vocab)?;
    let (params, _) = load_params(cfg, &dir, &splits)?;

    let mut report = evaluate(&params, &instances)?;
    let mut echo = cfg.echo();
    echo["checkpoint"] = json!(dir);
    echo["split"] = json!(split);
    report.config = echo;
    std::fs::create_dir_all(&cfg.paths.reports)
        .map_err(|e| CliError::input("io", format!("{}: {e}", cfg.paths.reports.display())))?;
    let stem = cfg.paths.reports.join(split.name());
    report.write(&stem)?;

    let baseline = random_baseline(&instances, params.num_entities);
    let per_type: serde_json::Map<String, Value> = report
        .per_type
        .iter()
        .map(|(t, r)| {
            let random = baseline.get(t).copied().unwrap_or(0.0);
            (
                t.to_string(),
                json!({"mrr": r.per_query.mrr, "hits@10": r.per_query.hits10, "random_mrr": random}),
            )
        })
        .collect();
    Ok(json!({
        "report": stem.with_extension("json"),
        "overall_mrr": report.overall.mrr,
        "per_type": per_type,
    }))
}

pub fn answer(cfg: &RunConfig, query: &str, top_k: usize, checkpoint: Option<&Path>) -> Result<Value, CliError> {
    let dir = checkpoint.map_or_else(|| cfg.paths.checkpoints.join("final"), Path::to_path_buf);
    require(&dir.join("manifest.json"))?;
    let splits = load_splits(cfg)?;
    let q = parse_query(query, &splits.vocab)?;
    let (params, _) = load_params(cfg, &dir, &splits)?;
    let scores = params.scores(&q)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let exact = oracle::answer(&q, &splits.test)?;
    let results: Vec<Value> = order
        .iter()
        .take(top_k)
        .enumerate()
        .map(|(i, &v)| {
            let e = EntityId(v as u32);
            json!({
                "rank": i + 1,
                "entity": splits.vocab.entity_label(e),
                "score": scores[v],
                "exact": exact.contains(e),
            })
        })
        .collect();
    Ok(json!({
        "query": serialize_query(&q, &splits.vocab),
        "type": q.query_type().to_string(),
        "checkpoint": dir,
        "results": results,
    }))
}

pub fn oracle_check(cfg: &RunConfig, query: &str, graph: &str) -> Result<Value, CliError> {
    let split = parse_split(graph)?;
    let splits = load_splits(cfg)?;
    let q = parse_query(query, &splits.vocab)?;
    let answers = oracle::answer(&q, splits.graph(split))?;
    let labels: Vec<&str> = answers.iter().map(|e| splits.vocab.entity_label(e)).collect();
    Ok(json!({
        "query": serialize_query(&q, &splits.vocab),
        "type": q.query_type().to_string(),
        "graph": split,
        "count": answers.len(),
        "answers": labels,
    }))
}

pub fn grad_check(eps: f64, seeds: u64, d: usize, tolerance: f64) -> Result<Value, CliError> {
    let cases = gradient_suite(d, &[1, 3], seeds, eps)?;
    let worst = cases
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("suite is non-empty");
    let passed = cases.iter().all(|c| c.max_rel_error < tolerance);
    let summary = json!({
        "epsilon": eps,
        "tolerance": tolerance,
        "passed": passed,
        "worst": worst,
        "cases": cases,
    });
    if passed {
        Ok(summary)
    } else {
        let _ = writeln!(
            std::io::stdout(),
            "{}",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        );
        Err(CliError::internal(
            "numeric",
            format!(
                "{} (K={}, seed {}) relative error {:e} exceeds {tolerance:e}",
                worst.op, worst.k, worst.seed, worst.max_rel_error
            ),
        ))
    }
}
