//! Exact set-semantics evaluation of queries on a concrete graph.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kg::{EntityId, KnowledgeGraph};
use crate::query::{Query, QueryNode};

/// Sorted, duplicate-free entity set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerSet(Vec<EntityId>);

impl AnswerSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(e: EntityId) -> Self {
        Self(vec![e])
    }

    /// Sorts and dedups.
    pub fn from_unsorted(mut v: Vec<EntityId>) -> Self {
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn from_ids<I: IntoIterator<Item = u32>>(ids: I) -> Self {
        Self::from_unsorted(ids.into_iter().map(EntityId).collect())
    }

    pub fn as_slice(&self) -> &[EntityId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.0.binary_search(&e).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.0.iter().copied()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.0.iter().map(|e| e.0).collect()
    }

    pub fn union(&self, other: &AnswerSet) -> AnswerSet {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        AnswerSet(out)
    }

    pub fn intersection(&self, other: &AnswerSet) -> AnswerSet {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len().min(b.len()));
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        AnswerSet(out)
    }

    pub fn difference(&self, other: &AnswerSet) -> AnswerSet {
        AnswerSet(self.0.iter().copied().filter(|e| !other.contains(*e)).collect())
    }

    /// `{0, .., n-1} \ self`.
    pub fn complement(&self, num_entities: usize) -> AnswerSet {
        let mut out = Vec::with_capacity(num_entities.saturating_sub(self.0.len()));
        let mut it = self.0.iter().peekable();
        for v in 0..num_entities as u32 {
            if it.peek().map(|e| e.0) == Some(v) {
                it.next();
            } else {
                out.push(EntityId(v));
            }
        }
        AnswerSet(out)
    }
}

impl FromIterator<EntityId> for AnswerSet {
    fn from_iter<I: IntoIterator<Item = EntityId>>(iter: I) -> Self {
        Self::from_unsorted(iter.into_iter().collect())
    }
}

fn check_ids(q: &Query, g: &KnowledgeGraph) -> Result<()> {
    for e in q.anchors() {
        g.check_entity(e)?;
    }
    for r in q.relations() {
        g.check_relation(r)?;
    }
    Ok(())
}

/// Evaluates every node bottom-up; each node is computed once, so shared
/// subtrees are not re-evaluated.
pub fn answer(q: &Query, g: &KnowledgeGraph) -> Result<AnswerSet> {
    check_ids(q, g)?;
    let order = q.topological_order()?;
    let mut memo: Vec<Option<AnswerSet>> = vec![None; q.len()];
    for id in order {
        let get = |memo: &[Option<AnswerSet>], c: &crate::query::NodeId| -> AnswerSet {
            memo[c.0].clone().expect("children precede parents")
        };
        let value = match q.node(id) {
            QueryNode::Anchor(e) => AnswerSet::singleton(*e),
            QueryNode::Projection { child, relation } => {
                let input = memo[child.0].as_ref().expect("children precede parents");
                let mut out = Vec::new();
                for v in input.iter() {
                    out.extend_from_slice(g.tails(v, *relation));
                }
                AnswerSet::from_unsorted(out)
            }
            QueryNode::Intersection(children) => {
                let mut acc = get(&memo, &children[0]);
                for c in &children[1..] {
                    acc = acc.intersection(memo[c.0].as_ref().expect("children precede parents"));
                }
                acc
            }
            QueryNode::Union(children) => {
                let mut acc = get(&memo, &children[0]);
                for c in &children[1..] {
                    acc = acc.union(memo[c.0].as_ref().expect("children precede parents"));
                }
                acc
            }
            QueryNode::Complement(child) => memo[child.0]
                .as_ref()
                .expect("children precede parents")
                .complement(g.num_entities()),
        };
        memo[id.0] = Some(value);
    }
    Ok(memo[q.target().0].take().expect("target evaluated"))
}

/// Answers that need the edges present in `larger` but not in `smaller`.
pub fn hard_answers(q: &Query, larger: &KnowledgeGraph, smaller: &KnowledgeGraph) -> Result<AnswerSet> {
    Ok(answer(q, larger)?.difference(&answer(q, smaller)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Triple, Vocab, Vocabularies};
    use crate::query::parse_query;

    fn toy() -> (KnowledgeGraph, Vocabularies) {
        // r(1,2), r(1,3), s(2,4), s(3,4)
        let g = KnowledgeGraph::build(
            &[
                Triple::new(1, 0, 2),
                Triple::new(1, 0, 3),
                Triple::new(2, 1, 4),
                Triple::new(3, 1, 4),
            ],
            5,
            2,
        )
        .unwrap();
        let v = Vocabularies {
            entities: Vocab::from_labels(["0", "1", "2", "3", "4"]),
            relations: Vocab::from_labels(["r", "s"]),
        };
        (g, v)
    }

    #[test]
    fn two_hop_on_toy_graph() {
        let (g, v) = toy();
        let q = parse_query("(p s (p r (a 1)))", &v).unwrap();
        // brute-force path enumeration: 1 -r-> {2,3} -s-> {4}
        assert_eq!(answer(&q, &g).unwrap().ids(), vec![4]);
    }

    #[test]
    fn absolute_complement() {
        let g = KnowledgeGraph::build(&[], 3, 1).unwrap();
        let v = Vocabularies {
            entities: Vocab::from_labels(["0", "1", "2"]),
            relations: Vocab::from_labels(["r"]),
        };
        let q = parse_query("(n (a 1))", &v).unwrap();
        assert_eq!(answer(&q, &g).unwrap().ids(), vec![0, 2]);
    }

    #[test]
    fn idempotence() {
        let (g, v) = toy();
        for text in ["(i (a 1) (a 1))", "(u (a 1) (a 1))"] {
            let q = parse_query(text, &v).unwrap();
            assert_eq!(answer(&q, &g).unwrap().ids(), vec![1]);
        }
    }

    #[test]
    fn out_of_range_ids_rejected() {
        let (g, v) = toy();
        let q = parse_query("(p r (a 1))", &v).unwrap();
        let small = KnowledgeGraph::build(&[], 1, 1).unwrap();
        assert!(answer(&q, &small).is_err());
        assert!(answer(&q, &g).is_ok());
    }

    #[test]
    fn hard_answers_is_difference() {
        let (_, v) = toy();
        let larger = KnowledgeGraph::build(&[Triple::new(0, 0, 1), Triple::new(0, 0, 2)], 5, 2).unwrap();
        let smaller = KnowledgeGraph::build(&[Triple::new(0, 0, 1)], 5, 2).unwrap();
        let q = parse_query("(p r (a 0))", &v).unwrap();
        assert_eq!(hard_answers(&q, &larger, &smaller).unwrap().ids(), vec![2]);
        assert!(hard_answers(&q, &larger, &larger).unwrap().is_empty());
    }

    #[test]
    fn set_algebra_helpers() {
        let a = AnswerSet::from_ids([5, 1, 3, 3]);
        let b = AnswerSet::from_ids([3, 4]);
        assert_eq!(a.ids(), vec![1, 3, 5]);
        assert_eq!(a.union(&b).ids(), vec![1, 3, 4, 5]);
        assert_eq!(a.intersection(&b).ids(), vec![3]);
        assert_eq!(a.difference(&b).ids(), vec![1, 5]);
        assert_eq!(a.complement(7).ids(), vec![0, 2, 4, 6]);
        assert_eq!(a.complement(7).complement(7), a);
    }
}
