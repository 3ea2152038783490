//! Samples, trains and evaluates on the clustered toy graph.
//!
//! Knobs come from environment variables: `STEPS`, `BATCH`, `LR`, `K`, `D`,
//! `DROPOUT`, `SMOOTHING`, `SEED`, `FANOUT`.

use std::time::Instant;

use q2p_core::eval::{evaluate, evaluate_items, random_baseline, EvalItem};
use q2p_core::oracle::answer;
use q2p_core::query::QueryType;
use q2p_core::sampler::{generate_dataset, SampleConfig};
use q2p_core::synthetic::{generate, SyntheticConfig};
use q2p_core::train::{init_model, train_loop, OptimizerState, TrainConfig};
use q2p_core::ModelConfig;

fn env<T: std::str::FromStr>(name: &str, default: T) -> T {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> q2p_core::Result<()> {
    let seed: u64 = env("SEED", 0);
    let kg = generate(&SyntheticConfig {
        seed,
        fanout: env("FANOUT", 3),
        ..SyntheticConfig::default()
    })?;
    let splits = kg.splits()?;
    println!(
        "edges: train {} valid {} test {}",
        splits.train.edge_count(),
        splits.valid.edge_count(),
        splits.test.edge_count()
    );
    let t0 = Instant::now();
    let ds = generate_dataset(
        &splits,
        &SampleConfig {
            seed,
            ..SampleConfig::default()
        },
    )?;
    for s in ds.stats.iter().filter(|s| s.emitted < s.requested) {
        println!("short: {} {} {}/{}", s.split, s.query_type, s.emitted, s.requested);
    }
    println!("sampled in {:?}", t0.elapsed());

    let mut model = ModelConfig::new(env("D", 32), env("K", 3));
    model.dropout = env("DROPOUT", 0.0);
    model.label_smoothing = env("SMOOTHING", 0.0);
    let cfg = TrainConfig {
        learning_rate: env("LR", 0.005),
        batch_size: env("BATCH", 32),
        steps: env("STEPS", 2000),
        seed,
        ..TrainConfig::default()
    };
    let ne = splits.vocab.entities.len();
    let mut params = init_model(model, ne, splits.vocab.relations.len(), seed)?;
    let mut opt = OptimizerState::new(&params);
    let out = std::env::temp_dir().join(format!("toy-run-{}", std::process::id()));
    let t0 = Instant::now();
    let outcome = train_loop(
        &mut params,
        &mut opt,
        &ds.train,
        None,
        &cfg,
        &out,
        &serde_json::Value::Null,
    )?;
    let l = &outcome.losses;
    println!(
        "trained {} steps in {:?}; loss {:.3} -> {:.3}",
        cfg.steps,
        t0.elapsed(),
        l.first().map_or(0.0, |r| r.loss),
        l.last().map_or(0.0, |r| r.loss)
    );

    for w in l.chunks(500) {
        let mean = w.iter().map(|r| r.loss as f64).sum::<f64>() / w.len() as f64;
        println!("  loss @{:>6}: {:.3}", w[0].step, mean);
    }

    let report = evaluate(&params, &ds.test)?;
    let base = random_baseline(&ds.test, ne);
    for (t, r) in &report.per_type {
        let b = base[t];
        println!(
            "{:>4} mrr {:.3} h@10 {:.3} random {:.4} ratio {:.1} (n={})",
            t.tag(),
            r.per_query.mrr,
            r.per_query.hits10,
            b,
            r.per_query.mrr / b,
            r.queries
        );
    }

    let targets: Vec<_> = ds
        .test
        .iter()
        .filter(|i| i.query_type == QueryType::P1)
        .map(|i| answer(&i.query, &splits.train))
        .collect::<Result<_, _>>()?;
    let p1: Vec<_> = ds.test.iter().filter(|i| i.query_type == QueryType::P1).collect();
    let items: Vec<EvalItem<'_>> = p1
        .iter()
        .zip(&targets)
        .map(|(i, t)| EvalItem {
            query_type: QueryType::P1,
            query: &i.query,
            targets: t,
            filter: t,
        })
        .collect();
    let mem = evaluate_items(&params, &items)?;
    println!("1p memorization mrr {:.3}", mem.overall.mrr);
    let _ = std::fs::remove_dir_all(out);
    Ok(())
}
