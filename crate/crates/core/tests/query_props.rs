mod common;

use std::collections::HashSet;

use common::random_query;
use proptest::prelude::*;
use q2p_core::query::{classify_query, parse_query, serialize_query, NodeId, QueryBuilder, QueryNode};
use q2p_core::sampler::sample_query;
use q2p_core::{EntityId, Query, QueryType, RelationId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ENTITIES: usize = 12;
const RELATIONS: usize = 4;

fn relabel(q: &Query, ent: &[u32], rel: &[u32]) -> Query {
    fn go(b: &mut QueryBuilder, q: &Query, n: NodeId, ent: &[u32], rel: &[u32]) -> NodeId {
        match q.node(n).clone() {
            QueryNode::Anchor(e) => b.anchor(EntityId(ent[e.index()])),
            QueryNode::Projection { child, relation } => {
                let c = go(b, q, child, ent, rel);
                b.project(c, RelationId(rel[relation.index()]))
            }
            QueryNode::Intersection(c) => {
                let c = c.into_iter().map(|c| go(b, q, c, ent, rel)).collect();
                b.intersect(c)
            }
            QueryNode::Union(c) => {
                let c = c.into_iter().map(|c| go(b, q, c, ent, rel)).collect();
                b.union(c)
            }
            QueryNode::Complement(c) => {
                let c = go(b, q, c, ent, rel);
                b.complement(c)
            }
        }
    }
    let mut b = QueryBuilder::new();
    let t = go(&mut b, q, q.target(), ent, rel);
    b.build(t).unwrap()
}

/// Recursive post-order positions; the reference for child-before-parent.
fn reference_postorder(q: &Query, n: NodeId, seen: &mut HashSet<usize>, out: &mut Vec<NodeId>) {
    if !seen.insert(n.0) {
        return;
    }
    for &c in q.node(n).children() {
        reference_postorder(q, c, seen, out);
    }
    out.push(n);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn serialize_then_parse_round_trips(seed in any::<u64>(), depth in 0usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = common::vocab(ENTITIES, RELATIONS);
        let q = random_query(&mut rng, depth, ENTITIES, RELATIONS);
        let text = serialize_query(&q, &vocab);
        let back = parse_query(&text, &vocab).unwrap();
        prop_assert!(back.structurally_eq(&q), "{}", text);
        prop_assert_eq!(serialize_query(&back, &vocab), text);
    }

    #[test]
    fn topological_order_visits_children_first(seed in any::<u64>(), depth in 0usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_query(&mut rng, depth, ENTITIES, RELATIONS);
        let order = q.topological_order().unwrap();
        let mut pos = vec![usize::MAX; q.len()];
        for (i, n) in order.iter().enumerate() {
            prop_assert_eq!(pos[n.0], usize::MAX, "node emitted twice");
            pos[n.0] = i;
        }
        let mut reference = Vec::new();
        reference_postorder(&q, q.target(), &mut HashSet::new(), &mut reference);
        prop_assert_eq!(order.len(), reference.len());
        for n in &reference {
            for c in q.node(*n).children() {
                prop_assert!(pos[c.0] < pos[n.0]);
            }
        }
        prop_assert_eq!(*order.last().unwrap(), q.target());
    }

    #[test]
    fn classification_ignores_labels(seed in any::<u64>(), type_index in 0usize..14) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::random_splits(&mut rng, 30, RELATIONS, 200);
        let t = QueryType::ALL[type_index];
        let q = match sample_query(&s.test, t, &mut rng, 200) {
            Ok(q) => q,
            Err(_) => return Ok(()),
        };
        let mut ent: Vec<u32> = (0..30).collect();
        ent.shuffle(&mut rng);
        let mut rel: Vec<u32> = (0..RELATIONS as u32).collect();
        rel.shuffle(&mut rng);
        prop_assert_eq!(classify_query(&q), t);
        prop_assert_eq!(classify_query(&relabel(&q, &ent, &rel)), t);
    }

    #[test]
    fn random_structures_classify_consistently(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_query(&mut rng, 3, ENTITIES, RELATIONS);
        let mut ent: Vec<u32> = (0..ENTITIES as u32).collect();
        ent.shuffle(&mut rng);
        let rel: Vec<u32> = (0..RELATIONS as u32).rev().collect();
        prop_assert_eq!(classify_query(&q), classify_query(&relabel(&q, &ent, &rel)));
    }
}
