//! Shared fixtures and reference implementations for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use q2p_core::kg::{Vocab, Vocabularies};
use q2p_core::query::{NodeId, QueryBuilder, QueryNode};
use q2p_core::{EntityId, GraphSplits, Query, RelationId, Triple};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn vocab(entities: usize, relations: usize) -> Vocabularies {
    Vocabularies {
        entities: Vocab::from_labels((0..entities).map(|i| format!("e{i}"))),
        relations: Vocab::from_labels((0..relations).map(|i| format!("r{i}"))),
    }
}

pub fn random_triples<R: Rng>(rng: &mut R, entities: usize, relations: usize, edges: usize) -> Vec<Triple> {
    (0..edges)
        .map(|_| {
            Triple::new(
                rng.gen_range(0..entities as u32),
                rng.gen_range(0..relations as u32),
                rng.gen_range(0..entities as u32),
            )
        })
        .collect()
}

/// Nested splits over a random edge list: 80% train, 10% more for valid,
/// the rest in test only.
pub fn random_splits<R: Rng>(rng: &mut R, entities: usize, relations: usize, edges: usize) -> GraphSplits {
    let mut all = random_triples(rng, entities, relations, edges);
    all.sort_unstable();
    all.dedup();
    all.shuffle(rng);
    let n_train = all.len() * 8 / 10;
    let n_valid = all.len() / 10;
    let (train, rest) = all.split_at(n_train);
    let (valid, test) = rest.split_at(n_valid);
    GraphSplits::from_triples(vocab(entities, relations), train, valid, test).expect("valid splits")
}

/// Membership-based enumerator over the raw triple list, independent of the
/// graph index and the set-algebra oracle: `v` answers a projection when some
/// triple `(u, r, v)` has `u` answering the child.
pub struct BruteForce {
    /// Heads of every triple, keyed by (relation, tail).
    heads: HashMap<(u32, u32), Vec<u32>>,
    entities: usize,
    memo: HashMap<(usize, u32), bool>,
}

impl BruteForce {
    pub fn new(triples: &[Triple], entities: usize) -> Self {
        let mut heads: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for t in triples {
            heads.entry((t.relation.0, t.tail.0)).or_default().push(t.head.0);
        }
        Self {
            heads,
            entities,
            memo: HashMap::new(),
        }
    }

    pub fn answers(&mut self, q: &Query) -> BTreeSet<u32> {
        self.memo.clear();
        (0..self.entities as u32)
            .filter(|&v| self.member(q, q.target(), v))
            .collect()
    }

    fn member(&mut self, q: &Query, node: NodeId, v: u32) -> bool {
        if let Some(&m) = self.memo.get(&(node.0, v)) {
            return m;
        }
        let m = match q.node(node) {
            QueryNode::Anchor(e) => e.0 == v,
            QueryNode::Projection { child, relation } => {
                let (child, relation) = (*child, *relation);
                let heads = self.heads.get(&(relation.0, v)).cloned().unwrap_or_default();
                heads.into_iter().any(|u| self.member(q, child, u))
            }
            QueryNode::Intersection(c) => c.clone().into_iter().all(|c| self.member(q, c, v)),
            QueryNode::Union(c) => c.clone().into_iter().any(|c| self.member(q, c, v)),
            QueryNode::Complement(c) => !self.member(q, *c, v),
        };
        self.memo.insert((node.0, v), m);
        m
    }
}

/// A random query tree of at most `depth` operator levels.
pub fn random_query<R: Rng>(rng: &mut R, depth: usize, entities: usize, relations: usize) -> Query {
    let mut b = QueryBuilder::new();
    let target = grow(&mut b, rng, depth, entities, relations);
    b.build(target).expect("builder output is valid")
}

fn grow<R: Rng>(b: &mut QueryBuilder, rng: &mut R, depth: usize, entities: usize, relations: usize) -> NodeId {
    let op = if depth == 0 { 0 } else { rng.gen_range(0..6) };
    match op {
        0 => b.anchor(EntityId(rng.gen_range(0..entities as u32))),
        1 | 2 => {
            let c = grow(b, rng, depth - 1, entities, relations);
            b.project(c, RelationId(rng.gen_range(0..relations as u32)))
        }
        3 | 4 => {
            let n = rng.gen_range(2..=3);
            let children = (0..n).map(|_| grow(b, rng, depth - 1, entities, relations)).collect();
            if op == 3 {
                b.intersect(children)
            } else {
                b.union(children)
            }
        }
        _ => {
            let c = grow(b, rng, depth - 1, entities, relations);
            b.complement(c)
        }
    }
}

/// A random query without complement nodes.
pub fn random_monotone_query<R: Rng>(rng: &mut R, depth: usize, entities: usize, relations: usize) -> Query {
    loop {
        let q = random_query(rng, depth, entities, relations);
        if !q.nodes().iter().any(|n| matches!(n, QueryNode::Complement(_))) {
            return q;
        }
    }
}

/// Copies the subtree under `node` of `q` into `b`.
pub fn copy_into(b: &mut QueryBuilder, q: &Query, node: NodeId) -> NodeId {
    match q.node(node).clone() {
        QueryNode::Anchor(e) => b.anchor(e),
        QueryNode::Projection { child, relation } => {
            let c = copy_into(b, q, child);
            b.project(c, relation)
        }
        QueryNode::Intersection(c) => {
            let c = c.into_iter().map(|c| copy_into(b, q, c)).collect();
            b.intersect(c)
        }
        QueryNode::Union(c) => {
            let c = c.into_iter().map(|c| copy_into(b, q, c)).collect();
            b.union(c)
        }
        QueryNode::Complement(c) => {
            let c = copy_into(b, q, c);
            b.complement(c)
        }
    }
}

pub fn ids(set: &q2p_core::AnswerSet) -> BTreeSet<u32> {
    set.iter().map(|e| e.0).collect()
}

/// Rank by sorting the unfiltered candidates plus the answer, with the
/// answer placed after every tie.
pub fn sort_rank(scores: &[f32], answer: usize, filter: &q2p_core::AnswerSet) -> usize {
    let mut cands: Vec<(f32, bool)> = scores
        .iter()
        .enumerate()
        .filter(|&(v, _)| v == answer || !filter.contains(EntityId(v as u32)))
        .map(|(v, &s)| (s, v == answer))
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    1 + cands.iter().position(|c| c.1).expect("answer present")
}
