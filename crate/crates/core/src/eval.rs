//! Filtered ranking metrics (MRR, Hits@k) per query type.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kg::EntityId;
use crate::model::ModelParams;
use crate::oracle::AnswerSet;
use crate::query::{Query, QueryType};
use crate::sampler::QueryInstance;
use crate::tensor::Real;

pub const REPORT_VERSION: u32 = 1;

/// `1 + #{v not in all_answers : scores[v] >= scores[answer]}`. Ties with
/// non-answers count against the answer.
pub fn filtered_rank<T: Real>(scores: &[T], answer: EntityId, all_answers: &AnswerSet) -> Result<usize> {
    if !all_answers.contains(answer) {
        return Err(Error::Contract(format!(
            "answer {} is not among the filtered answers",
            answer.0
        )));
    }
    let s = *scores.get(answer.index()).ok_or_else(|| {
        Error::Contract(format!(
            "answer {} outside a score vector of length {}",
            answer.0,
            scores.len()
        ))
    })?;
    if !s.is_finite() {
        return Err(Error::Numeric(format!("score of answer {} is {:?}", answer.0, s)));
    }
    let mut above = 0;
    let mut filter = all_answers.iter().peekable();
    for (v, &x) in scores.iter().enumerate() {
        if filter.peek().map(|e| e.index()) == Some(v) {
            filter.next();
            continue;
        }
        if x >= s {
            above += 1;
        }
    }
    Ok(1 + above)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    #[serde(rename = "hits@1")]
    pub hits1: f64,
    #[serde(rename = "hits@3")]
    pub hits3: f64,
    #[serde(rename = "hits@10")]
    pub hits10: f64,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        if ranks.is_empty() {
            return Self::default();
        }
        let n = ranks.len() as f64;
        let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Self {
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hits1: frac(1),
            hits3: frac(3),
            hits10: frac(10),
        }
    }

    fn mean(items: &[Metrics]) -> Self {
        if items.is_empty() {
            return Self::default();
        }
        let n = items.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self {
            mrr: avg(|m| m.mrr),
            hits1: avg(|m| m.hits1),
            hits3: avg(|m| m.hits3),
            hits10: avg(|m| m.hits10),
        }
    }

    fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("mrr", self.mrr),
            ("hits@1", self.hits1),
            ("hits@3", self.hits3),
            ("hits@10", self.hits10),
        ]
    }
}

/// Ranking outcome for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDetail {
    /// Size of the filter set (every known answer).
    pub answers: usize,
    /// Number of ranked targets.
    pub targets: usize,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeReport {
    pub queries: usize,
    pub answers: usize,
    /// Averaged within each query first, then over queries.
    #[serde(flatten)]
    pub per_query: Metrics,
    /// Averaged over all (query, answer) pairs.
    pub per_answer: Metrics,
    pub details: Vec<QueryDetail>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub per_type: BTreeMap<QueryType, TypeReport>,
    /// Unweighted mean of the per-type per-query metrics.
    pub overall: Metrics,
    /// Instances without targets, left out of every average.
    pub skipped: usize,
    #[serde(default)]
    pub config: Value,
}

impl EvalReport {
    pub fn mrr(&self, t: QueryType) -> Option<f64> {
        self.per_type.get(&t).map(|r| r.per_query.mrr)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Rows of `type,metric,value,count`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("type,metric,value,count\n");
        for (t, r) in &self.per_type {
            for (name, v) in r.per_query.named() {
                s.push_str(&format!("{t},{name},{v},{}\n", r.queries));
            }
            for (name, v) in r.per_answer.named() {
                s.push_str(&format!("{t},{name}_per_answer,{v},{}\n", r.answers));
            }
        }
        for (name, v) in self.overall.named() {
            s.push_str(&format!("overall,{name},{v},{}\n", self.per_type.len()));
        }
        s
    }

    /// Writes `<stem>.json` and `<stem>.csv`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let json = stem.with_extension("json");
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        let csv = stem.with_extension("csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

/// A query to rank: `targets` are ranked, `filter` is removed from the
/// competitors (it must contain the targets).
#[derive(Debug, Clone, Copy)]
pub struct EvalItem<'a> {
    pub query_type: QueryType,
    pub query: &'a Query,
    pub targets: &'a AnswerSet,
    pub filter: &'a AnswerSet,
}

/// Query type, target ranks and filter size of one evaluated item.
type RankedItem = (QueryType, Vec<usize>, usize);

#[derive(Default)]
struct TypeAccumulator {
    per_query: Vec<Metrics>,
    ranks: Vec<usize>,
    details: Vec<QueryDetail>,
}

fn aggregate(per_item: Vec<Option<RankedItem>>) -> EvalReport {
    let mut skipped = 0;
    let mut by_type: BTreeMap<QueryType, TypeAccumulator> = BTreeMap::new();
    for item in per_item {
        let Some((t, ranks, filter_len)) = item else {
            skipped += 1;
            continue;
        };
        let m = Metrics::from_ranks(&ranks);
        let acc = by_type.entry(t).or_default();
        acc.details.push(QueryDetail {
            answers: filter_len,
            targets: ranks.len(),
            mrr: m.mrr,
        });
        acc.per_query.push(m);
        acc.ranks.extend(ranks);
    }
    let per_type: BTreeMap<QueryType, TypeReport> = by_type
        .into_iter()
        .map(|(t, acc)| {
            (
                t,
                TypeReport {
                    queries: acc.per_query.len(),
                    answers: acc.ranks.len(),
                    per_query: Metrics::mean(&acc.per_query),
                    per_answer: Metrics::from_ranks(&acc.ranks),
                    details: acc.details,
                },
            )
        })
        .collect();
    let type_means: Vec<Metrics> = per_type.values().map(|r| r.per_query).collect();
    EvalReport {
        format_version: REPORT_VERSION,
        overall: Metrics::mean(&type_means),
        per_type,
        skipped,
        config: Value::Null,
    }
}

/// Ranks every target of every item with evaluation-mode scores.
pub fn evaluate_items<T: Real>(params: &ModelParams<T>, items: &[EvalItem<'_>]) -> Result<EvalReport> {
    let per_item: Vec<Result<Option<RankedItem>>> = items
        .par_iter()
        .map(|item| {
            if item.targets.is_empty() {
                return Ok(None);
            }
            let scores = params.scores(item.query)?;
            let ranks = item
                .targets
                .iter()
                .map(|a| filtered_rank(&scores, a, item.filter))
                .collect::<Result<Vec<_>>>()?;
            Ok(Some((item.query_type, ranks, item.filter.len())))
        })
        .collect();
    let per_item = per_item.into_iter().collect::<Result<Vec<_>>>()?;
    let report = aggregate(per_item);
    if report.skipped > 0 {
        log::warn!("skipped {} instance(s) without targets", report.skipped);
    }
    Ok(report)
}

/// Filtered metrics over each instance's hard answers, filtering easy ∪ hard.
pub fn evaluate<T: Real>(params: &ModelParams<T>, instances: &[QueryInstance]) -> Result<EvalReport> {
    let filters: Vec<AnswerSet> = instances.iter().map(QueryInstance::all_answers).collect();
    let items: Vec<EvalItem<'_>> = instances
        .iter()
        .zip(&filters)
        .map(|(inst, filter)| EvalItem {
            query_type: inst.query_type,
            query: &inst.query,
            targets: &inst.hard,
            filter,
        })
        .collect();
    evaluate_items(params, &items)
}

/// Expected reciprocal rank of an answer under uniformly random scores when
/// `m - 1` non-answers compete: `H_m / m`.
pub fn random_expected_rr(num_entities: usize, filter_len: usize) -> f64 {
    let m = num_entities.saturating_sub(filter_len) + 1;
    let harmonic: f64 = (1..=m).map(|i| 1.0 / i as f64).sum();
    harmonic / m as f64
}

/// Per-type MRR a uniformly random scorer would achieve in expectation,
/// aggregated like [`evaluate`].
pub fn random_baseline(instances: &[QueryInstance], num_entities: usize) -> BTreeMap<QueryType, f64> {
    let mut acc: BTreeMap<QueryType, (f64, usize)> = BTreeMap::new();
    for inst in instances.iter().filter(|i| !i.hard.is_empty()) {
        let filter = inst.easy.len() + inst.hard.len();
        let slot = acc.entry(inst.query_type).or_default();
        slot.0 += random_expected_rr(num_entities, filter);
        slot.1 += 1;
    }
    acc.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect()
}
