//! Query datasets: backward-walk sampling on graph splits, JSON-lines IO and
//! import of nested-tuple benchmark dumps.

use std::collections::{BTreeMap, HashSet};
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kg::{EntityId, GraphSplits, KnowledgeGraph, RelationId, Split, Vocabularies};
use crate::oracle::{answer, AnswerSet};
use crate::query::{classify_query, parse_query, serialize_query, NodeId, Query, QueryBuilder, QueryType};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct QueryInstance {
    pub query: Query,
    pub query_type: QueryType,
    /// Answers on the smaller graph of the split.
    pub easy: AnswerSet,
    /// Answers that need the split's held-out edges.
    pub hard: AnswerSet,
    pub split: Split,
}

impl QueryInstance {
    pub fn all_answers(&self) -> AnswerSet {
        self.easy.union(&self.hard)
    }
}

/// Per-split instance counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Training instances per supervised type; evaluation-only types get none.
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Per-type overrides keyed by type tag.
    pub per_type: BTreeMap<QueryType, SplitCounts>,
    pub seed: u64,
    /// Draws allowed per emitted instance before giving up.
    pub max_attempts: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            train: 1000,
            valid: 200,
            test: 200,
            per_type: BTreeMap::new(),
            seed: 0,
            max_attempts: 1000,
        }
    }
}

impl SampleConfig {
    pub fn count(&self, t: QueryType, split: Split) -> usize {
        if let Some(c) = self.per_type.get(&t) {
            return c.get(split);
        }
        match split {
            Split::Train if t.is_supervised() => self.train,
            Split::Train => 0,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 {
            return Err(Error::Input("sample.max_attempts must be at least 1".into()));
        }
        if self.per_type.contains_key(&QueryType::Other) {
            return Err(Error::Input("cannot sample queries of type `other`".into()));
        }
        Ok(())
    }
}

// --- sampling ----------------------------------------------------------------

/// Structure skeleton walked backwards from a target entity.
#[derive(Debug, Clone)]
enum Plan {
    Anchor,
    Project(Box<Plan>),
    And(Vec<Plan>),
    Or(Vec<Plan>),
    Not(Box<Plan>),
}

fn plan(t: QueryType) -> Option<Plan> {
    use Plan::*;
    let p = |c: Plan| Project(Box::new(c));
    let n = |c: Plan| Not(Box::new(c));
    let p1 = || p(Anchor);
    let p2 = || p(p(Anchor));
    Some(match t {
        QueryType::P1 => p1(),
        QueryType::P2 => p2(),
        QueryType::P3 => p(p2()),
        QueryType::I2 => And(vec![p1(), p1()]),
        QueryType::I3 => And(vec![p1(), p1(), p1()]),
        QueryType::Pi => And(vec![p2(), p1()]),
        QueryType::Ip => p(And(vec![p1(), p1()])),
        QueryType::U2 => Or(vec![p1(), p1()]),
        QueryType::Up => p(Or(vec![p1(), p1()])),
        QueryType::In2 => And(vec![p1(), n(p1())]),
        QueryType::In3 => And(vec![p1(), p1(), n(p1())]),
        QueryType::Inp => p(And(vec![p1(), n(p1())])),
        QueryType::Pin => And(vec![p2(), n(p1())]),
        QueryType::Pni => And(vec![n(p2()), p1()]),
        QueryType::Other => return None,
    })
}

/// Builds `plan` so that `target` is an answer of every positive branch.
/// `None` when a walk hits an entity without incoming edges.
fn grow<R: Rng>(
    g: &KnowledgeGraph,
    plan: &Plan,
    target: EntityId,
    b: &mut QueryBuilder,
    rng: &mut R,
) -> Option<NodeId> {
    match plan {
        Plan::Anchor => Some(b.anchor(target)),
        Plan::Project(child) => {
            let &(head, rel) = g.incoming(target).choose(rng)?;
            let c = grow(g, child, head, b, rng)?;
            Some(b.project(c, rel))
        }
        Plan::And(children) | Plan::Or(children) => {
            let ids = children
                .iter()
                .map(|c| grow(g, c, target, b, rng))
                .collect::<Option<Vec<_>>>()?;
            Some(match plan {
                Plan::And(_) => b.intersect(ids),
                _ => b.union(ids),
            })
        }
        Plan::Not(child) => {
            // the negated branch points at some other entity; rejection on
            // the final answer set keeps only useful negations
            let other = EntityId(rng.gen_range(0..g.num_entities() as u32));
            let c = grow(g, child, other, b, rng)?;
            Some(b.complement(c))
        }
    }
}

fn draw<R: Rng>(g: &KnowledgeGraph, plan: &Plan, seeds: &[EntityId], rng: &mut R) -> Result<Option<Query>> {
    let Some(&seed) = seeds.choose(rng) else {
        return Ok(None);
    };
    let mut b = QueryBuilder::new();
    match grow(g, plan, seed, &mut b, rng) {
        Some(root) => b.build(root).map(Some),
        None => Ok(None),
    }
}

fn entities_with_incoming(g: &KnowledgeGraph) -> Vec<EntityId> {
    (0..g.num_entities() as u32)
        .map(EntityId)
        .filter(|&e| !g.incoming(e).is_empty())
        .collect()
}

/// One query of type `t` with a non-empty answer set on `g`.
pub fn sample_query<R: Rng>(g: &KnowledgeGraph, t: QueryType, rng: &mut R, max_attempts: usize) -> Result<Query> {
    let plan = plan(t).ok_or_else(|| Error::Input("cannot sample queries of type `other`".into()))?;
    let seeds = entities_with_incoming(g);
    if seeds.is_empty() {
        return Err(Error::Input("cannot sample from a graph without edges".into()));
    }
    for _ in 0..max_attempts.max(1) {
        if let Some(q) = draw(g, &plan, &seeds, rng)? {
            if !answer(&q, g)?.is_empty() {
                return Ok(q);
            }
        }
    }
    Err(Error::SamplingExhausted {
        query_type: t.tag().into(),
        split: "-".into(),
        failures: 1,
    })
}

/// Requested versus produced counts for one (split, type) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellStats {
    pub split: Split,
    #[serde(rename = "type")]
    pub query_type: QueryType,
    pub requested: usize,
    pub emitted: usize,
    /// Rejected draws (empty answers, no hard answers, or duplicates).
    pub rejected: usize,
    /// Set when fewer distinct queries exist than were requested.
    pub pool_exhausted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<QueryInstance>,
    pub valid: Vec<QueryInstance>,
    pub test: Vec<QueryInstance>,
    pub stats: Vec<CellStats>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[QueryInstance] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<QueryInstance> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }
}

fn sample_cell(
    splits: &GraphSplits,
    t: QueryType,
    split: Split,
    count: usize,
    cfg: &SampleConfig,
) -> Result<(Vec<QueryInstance>, CellStats)> {
    let mut stats = CellStats {
        split,
        query_type: t,
        requested: count,
        emitted: 0,
        rejected: 0,
        pool_exhausted: false,
    };
    if count == 0 {
        return Ok((Vec::new(), stats));
    }
    let plan = plan(t).ok_or_else(|| Error::Input("cannot sample queries of type `other`".into()))?;
    let larger = splits.graph(split);
    let smaller = splits.smaller(split);
    let seeds = entities_with_incoming(larger);
    let mut rng: StreamRng = stream(cfg.seed, &["sample", split.name(), t.tag()]);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);

    while out.len() < count {
        let mut duplicates = 0;
        let mut found = None;
        for _ in 0..cfg.max_attempts {
            let Some(q) = draw(larger, &plan, &seeds, &mut rng)? else {
                stats.rejected += 1;
                continue;
            };
            let big = answer(&q, larger)?;
            let (easy, hard) = if split == Split::Train {
                (big, AnswerSet::new())
            } else {
                let small = answer(&q, smaller)?;
                let hard = big.difference(&small);
                (small, hard)
            };
            let usable = if split == Split::Train {
                !easy.is_empty()
            } else {
                !hard.is_empty()
            };
            if !usable {
                stats.rejected += 1;
                continue;
            }
            let key = serialize_query(&q, &splits.vocab);
            if !seen.insert(key) {
                duplicates += 1;
                stats.rejected += 1;
                continue;
            }
            found = Some(QueryInstance {
                query: q,
                query_type: t,
                easy,
                hard,
                split,
            });
            break;
        }
        match found {
            Some(inst) => out.push(inst),
            None if duplicates > 0 && !out.is_empty() => {
                // every usable draw repeated an emitted query
                stats.pool_exhausted = true;
                log::warn!(
                    "{split}/{t}: only {} distinct queries found of {count} requested",
                    out.len()
                );
                break;
            }
            None => {
                return Err(Error::SamplingExhausted {
                    query_type: t.tag().into(),
                    split: split.name().into(),
                    failures: count - out.len(),
                })
            }
        }
    }
    stats.emitted = out.len();
    Ok((out, stats))
}

/// Samples every (split, type) cell. Each cell owns a generator derived from
/// `(seed, split, type)`, so the result does not depend on thread count.
pub fn generate_dataset(splits: &GraphSplits, cfg: &SampleConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for split in Split::ALL {
        for t in QueryType::ALL {
            cells.push((split, t, cfg.count(t, split)));
        }
    }
    let results: Vec<Result<(Vec<QueryInstance>, CellStats)>> = cells
        .par_iter()
        .map(|&(split, t, n)| sample_cell(splits, t, split, n, cfg))
        .collect();
    let mut ds = Dataset::default();
    for r in results {
        let (instances, stats) = r?;
        ds.split_mut(stats.split).extend(instances);
        ds.stats.push(stats);
    }
    Ok(ds)
}

// --- JSON lines ----------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Line {
    #[serde(rename = "type")]
    query_type: QueryType,
    query: String,
    easy: Vec<u32>,
    hard: Vec<u32>,
    split: Split,
}

pub fn instance_to_json_line(inst: &QueryInstance, vocab: &Vocabularies) -> String {
    let line = Line {
        query_type: inst.query_type,
        query: serialize_query(&inst.query, vocab),
        easy: inst.easy.ids(),
        hard: inst.hard.ids(),
        split: inst.split,
    };
    serde_json::to_string(&line).expect("plain data serializes")
}

pub fn write_jsonl(path: impl AsRef<Path>, instances: &[QueryInstance], vocab: &Vocabularies) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for inst in instances {
        buf.extend_from_slice(instance_to_json_line(inst, vocab).as_bytes());
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Parses instances and checks that each declared type matches its query.
pub fn parse_jsonl(text: &str, vocab: &Vocabularies, source: &str) -> Result<Vec<QueryInstance>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.into(),
            line: i + 1,
            message,
        };
        let line: Line = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        let query = parse_query(&line.query, vocab)?;
        let actual = classify_query(&query);
        if actual != line.query_type {
            return Err(err(format!(
                "declared type {} but query has structure {actual}",
                line.query_type
            )));
        }
        let n = vocab.entities.len() as u32;
        if let Some(bad) = line.easy.iter().chain(&line.hard).find(|&&id| id >= n) {
            return Err(err(format!("answer id {bad} out of range (|V| = {n})")));
        }
        out.push(QueryInstance {
            query,
            query_type: line.query_type,
            easy: AnswerSet::from_ids(line.easy),
            hard: AnswerSet::from_ids(line.hard),
            split: line.split,
        });
    }
    Ok(out)
}

pub fn read_jsonl(path: impl AsRef<Path>, vocab: &Vocabularies) -> Result<Vec<QueryInstance>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, vocab, &path.display().to_string())
}

/// Writes `train.jsonl`, `valid.jsonl` and `test.jsonl` under `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset, vocab: &Vocabularies) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for split in Split::ALL {
        write_jsonl(dir.join(format!("{split}.jsonl")), ds.split(split), vocab)?;
    }
    Ok(())
}

// --- benchmark import ----------------------------------------------------------

fn tuple_shape(v: &Value) -> String {
    match v {
        Value::Array(items) => {
            let inner: Vec<String> = items.iter().map(tuple_shape).collect();
            if items.len() == 1 {
                format!("({},)", inner[0])
            } else {
                format!("({})", inner.join(","))
            }
        }
        Value::String(s) if s == "n" => "n".into(),
        Value::String(s) if s == "u" => "u".into(),
        Value::Number(n) if n.as_i64() == Some(-2) => "n".into(),
        Value::Number(n) if n.as_i64() == Some(-1) => "u".into(),
        _ => "x".into(),
    }
}

fn is_scalar(v: &Value) -> bool {
    matches!(v, Value::String(_) | Value::Number(_))
}

fn is_negation(v: &Value) -> bool {
    v.as_str() == Some("n") || v.as_i64() == Some(-2)
}

fn is_union_marker(v: &Value) -> bool {
    match v {
        Value::Array(items) if items.len() == 1 => items[0].as_str() == Some("u") || items[0].as_i64() == Some(-1),
        _ => false,
    }
}

struct Importer<'a> {
    vocab: &'a Vocabularies,
    builder: QueryBuilder,
    unknown: Vec<String>,
    root: &'a Value,
}

impl Importer<'_> {
    fn unsupported(&self) -> Error {
        Error::UnsupportedStructure {
            shape: tuple_shape(self.root),
        }
    }

    fn id(&mut self, v: &Value, entity: bool) -> Result<u32> {
        let (kind, vocab) = if entity {
            ("entity", &self.vocab.entities)
        } else {
            ("relation", &self.vocab.relations)
        };
        match v {
            Value::Number(n) => {
                let id = n
                    .as_u64()
                    .filter(|&id| (id as usize) < vocab.len())
                    .ok_or_else(|| Error::Input(format!("{kind} id {n} out of range (size {})", vocab.len())))?;
                Ok(id as u32)
            }
            Value::String(s) => match vocab.get(s) {
                Some(id) => Ok(id),
                None => {
                    self.unknown.push(format!("{kind} `{s}`"));
                    Ok(0)
                }
            },
            _ => Err(self.unsupported()),
        }
    }

    fn chain(&mut self, mut node: NodeId, ops: &[Value]) -> Result<NodeId> {
        if ops.is_empty() {
            return Err(self.unsupported());
        }
        for op in ops {
            if is_negation(op) {
                node = self.builder.complement(node);
            } else if is_union_marker(&Value::Array(vec![op.clone()])) {
                return Err(self.unsupported());
            } else {
                let r = self.id(op, false)?;
                node = self.builder.project(node, RelationId(r));
            }
        }
        Ok(node)
    }

    fn node(&mut self, v: &Value) -> Result<NodeId> {
        let Value::Array(items) = v else {
            return Err(self.unsupported());
        };
        // (sub, (ops...)) where the ops are all scalars
        if items.len() == 2 {
            if let Value::Array(ops) = &items[1] {
                if ops.iter().all(is_scalar) && !is_union_marker(&items[1]) {
                    let base = if is_scalar(&items[0]) {
                        let e = self.id(&items[0], true)?;
                        self.builder.anchor(EntityId(e))
                    } else {
                        self.node(&items[0])?
                    };
                    return self.chain(base, ops);
                }
            }
        }
        // list of branches, optionally closed by a union marker
        let (branches, is_union) = match items.last() {
            Some(last) if is_union_marker(last) => (&items[..items.len() - 1], true),
            _ => (&items[..], false),
        };
        if branches.len() < 2 || branches.iter().any(|b| !b.is_array()) {
            return Err(self.unsupported());
        }
        let ids = branches.iter().map(|b| self.node(b)).collect::<Result<Vec<_>>>()?;
        Ok(if is_union {
            self.builder.union(ids)
        } else {
            self.builder.intersect(ids)
        })
    }
}

/// Converts one nested-tuple query (entities and relations as ids or labels,
/// negation as `"n"` or `-2`, union marker `["u"]` or `[-1]`) into a query.
pub fn import_tuple(v: &Value, vocab: &Vocabularies) -> Result<Query> {
    let mut imp = Importer {
        vocab,
        builder: QueryBuilder::new(),
        unknown: Vec::new(),
        root: v,
    };
    let root = imp.node(v)?;
    if !imp.unknown.is_empty() {
        return Err(Error::UnknownLabels(imp.unknown));
    }
    let q = imp.builder.build(root)?;
    if classify_query(&q) == QueryType::Other {
        return Err(Error::UnsupportedStructure { shape: tuple_shape(v) });
    }
    Ok(q)
}

#[derive(Deserialize)]
struct BenchmarkRecord {
    #[serde(rename = "type", default)]
    query_type: Option<String>,
    query: Value,
    #[serde(default)]
    easy: Vec<u32>,
    #[serde(default)]
    hard: Vec<u32>,
    #[serde(default)]
    split: Option<Split>,
}

/// Reads benchmark queries from a JSON array or JSON-lines file of
/// `{"type"?, "query": nested tuple, "easy"?, "hard"?, "split"?}` records.
/// Instances without a split are tagged `test`.
pub fn import_benchmark(path: impl AsRef<Path>, vocab: &Vocabularies) -> Result<Vec<QueryInstance>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let records: Vec<(usize, BenchmarkRecord)> = if text.trim_start().starts_with('[') {
        let all: Vec<BenchmarkRecord> = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: source.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        all.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect()
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map(|r| (i + 1, r)).map_err(|e| Error::Parse {
                    path: source.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?
    };

    let n = vocab.entities.len() as u32;
    let mut out = Vec::with_capacity(records.len());
    for (line, rec) in records {
        let query = import_tuple(&rec.query, vocab)?;
        let actual = classify_query(&query);
        if let Some(declared) = &rec.query_type {
            let declared: QueryType = declared.parse()?;
            if declared != actual {
                return Err(Error::Parse {
                    path: source.clone(),
                    line,
                    message: format!("declared type {declared} but structure is {actual}"),
                });
            }
        }
        if let Some(bad) = rec.easy.iter().chain(&rec.hard).find(|&&id| id >= n) {
            return Err(Error::Parse {
                path: source.clone(),
                line,
                message: format!("answer id {bad} out of range (|V| = {n})"),
            });
        }
        out.push(QueryInstance {
            query,
            query_type: actual,
            easy: AnswerSet::from_ids(rec.easy),
            hard: AnswerSet::from_ids(rec.hard),
            split: rec.split.unwrap_or(Split::Test),
        });
    }
    Ok(out)
}

/// Instance counts per type, in type order.
pub fn type_counts(instances: &[QueryInstance]) -> BTreeMap<QueryType, usize> {
    let mut m = BTreeMap::new();
    for i in instances {
        *m.entry(i.query_type).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Triple, Vocab};
    use crate::rng::stream;
    use serde_json::json;

    fn vocab(ne: usize, nr: usize) -> Vocabularies {
        Vocabularies {
            entities: Vocab::from_labels((0..ne).map(|i| format!("e{i}"))),
            relations: Vocab::from_labels((0..nr).map(|i| format!("r{i}"))),
        }
    }

    #[test]
    fn single_edge_graph_gives_the_only_1p_query() {
        let v = Vocabularies {
            entities: Vocab::from_labels(["0", "1", "2"]),
            relations: Vocab::from_labels(["r"]),
        };
        let g = KnowledgeGraph::build(&[Triple::new(1, 0, 2)], 3, 1).unwrap();
        let mut rng = stream(0, &["t"]);
        let q = sample_query(&g, QueryType::P1, &mut rng, 10).unwrap();
        assert_eq!(serialize_query(&q, &v), "(p r (a 1))");
        assert_eq!(answer(&q, &g).unwrap().ids(), vec![2]);
    }

    #[test]
    fn other_and_empty_graphs_rejected() {
        let g = KnowledgeGraph::build(&[], 3, 1).unwrap();
        let mut rng = stream(0, &["t"]);
        assert!(sample_query(&g, QueryType::P1, &mut rng, 10).is_err());
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 1)], 3, 1).unwrap();
        assert!(sample_query(&g, QueryType::Other, &mut rng, 10).is_err());
    }

    #[test]
    fn impossible_negation_exhausts() {
        // with one edge every 2in query is p(a) minus the same set
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 1)], 2, 1).unwrap();
        let mut rng = stream(0, &["t"]);
        let res = sample_query(&g, QueryType::In2, &mut rng, 50);
        assert!(matches!(res, Err(Error::SamplingExhausted { .. })), "{res:?}");
    }

    #[test]
    fn zero_counts_give_empty_dataset() {
        let v = vocab(3, 1);
        let splits = GraphSplits::from_triples(v, &[Triple::new(0, 0, 1)], &[], &[]).unwrap();
        let cfg = SampleConfig {
            train: 0,
            valid: 0,
            test: 0,
            ..SampleConfig::default()
        };
        let ds = generate_dataset(&splits, &cfg).unwrap();
        assert!(ds.train.is_empty() && ds.valid.is_empty() && ds.test.is_empty());
    }

    #[test]
    fn counts_respect_supervision() {
        let cfg = SampleConfig::default();
        assert_eq!(cfg.count(QueryType::P1, Split::Train), 1000);
        assert_eq!(cfg.count(QueryType::U2, Split::Train), 0);
        assert_eq!(cfg.count(QueryType::U2, Split::Test), 200);
    }

    #[test]
    fn import_chains_and_branches() {
        let v = vocab(5, 3);
        let cases = [
            (json!([1, [0]]), "(p r0 (a e1))", QueryType::P1),
            (json!(["e1", ["r0", "r2"]]), "(p r2 (p r0 (a e1)))", QueryType::P2),
            (
                json!([[1, [0]], [2, [1, -2]]]),
                "(i (p r0 (a e1)) (n (p r1 (a e2))))",
                QueryType::In2,
            ),
            (
                json!([[1, [0]], [2, [1]], ["u"]]),
                "(u (p r0 (a e1)) (p r1 (a e2)))",
                QueryType::U2,
            ),
            (
                json!([[[1, [0]], [2, [1]], [-1]], [2]]),
                "(p r2 (u (p r0 (a e1)) (p r1 (a e2))))",
                QueryType::Up,
            ),
            (
                json!([[[1, [0]], [2, [1]]], [2]]),
                "(p r2 (i (p r0 (a e1)) (p r1 (a e2))))",
                QueryType::Ip,
            ),
            (
                json!([[1, [0, 1, "n"]], [2, [1]]]),
                "(i (n (p r1 (p r0 (a e1)))) (p r1 (a e2)))",
                QueryType::Pni,
            ),
        ];
        for (tuple, dsl, t) in cases {
            let q = import_tuple(&tuple, &v).unwrap();
            assert_eq!(serialize_query(&q, &v), dsl);
            assert_eq!(classify_query(&q), t);
        }
    }

    #[test]
    fn import_rejects_unknown_shapes() {
        let v = vocab(5, 3);
        match import_tuple(&json!([1, [0, -2]]), &v) {
            Err(Error::UnsupportedStructure { shape }) => assert_eq!(shape, "(x,(x,n))"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            import_tuple(&json!([[1, [0]]]), &v),
            Err(Error::UnsupportedStructure { .. })
        ));
        assert!(matches!(
            import_tuple(&json!(["nope", ["r0"]]), &v),
            Err(Error::UnknownLabels(_))
        ));
    }
}
