mod common;

use common::{copy_into, ids, random_monotone_query, random_query, BruteForce};
use proptest::prelude::*;
use q2p_core::oracle::{answer, hard_answers};
use q2p_core::query::QueryBuilder;
use q2p_core::RelationId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ENTITIES: usize = 30;
const RELATIONS: usize = 3;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn double_complement_is_the_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::random_splits(&mut rng, ENTITIES, RELATIONS, 120);
        let q = random_query(&mut rng, 3, ENTITIES, RELATIONS);
        let mut b = QueryBuilder::new();
        let x = copy_into(&mut b, &q, q.target());
        let n1 = b.complement(x);
        let n2 = b.complement(n1);
        let nn = b.build(n2).unwrap();
        prop_assert_eq!(answer(&nn, &s.test).unwrap(), answer(&q, &s.test).unwrap());
    }

    #[test]
    fn de_morgan_holds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::random_splits(&mut rng, ENTITIES, RELATIONS, 120);
        let qa = random_query(&mut rng, 2, ENTITIES, RELATIONS);
        let qb = random_query(&mut rng, 2, ENTITIES, RELATIONS);

        let mut b = QueryBuilder::new();
        let a = copy_into(&mut b, &qa, qa.target());
        let c = copy_into(&mut b, &qb, qb.target());
        let u = b.union(vec![a, c]);
        let t = b.complement(u);
        let lhs = b.build(t).unwrap();

        let mut b = QueryBuilder::new();
        let a = copy_into(&mut b, &qa, qa.target());
        let na = b.complement(a);
        let c = copy_into(&mut b, &qb, qb.target());
        let nc = b.complement(c);
        let t = b.intersect(vec![na, nc]);
        let rhs = b.build(t).unwrap();

        prop_assert_eq!(answer(&lhs, &s.test).unwrap(), answer(&rhs, &s.test).unwrap());
    }

    #[test]
    fn projection_distributes_over_union(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::random_splits(&mut rng, ENTITIES, RELATIONS, 120);
        let qa = random_query(&mut rng, 2, ENTITIES, RELATIONS);
        let qb = random_query(&mut rng, 2, ENTITIES, RELATIONS);
        let r = RelationId(rng.gen_range(0..RELATIONS as u32));

        let mut b = QueryBuilder::new();
        let a = copy_into(&mut b, &qa, qa.target());
        let c = copy_into(&mut b, &qb, qb.target());
        let u = b.union(vec![a, c]);
        let t = b.project(u, r);
        let lhs = b.build(t).unwrap();

        let mut b = QueryBuilder::new();
        let a = copy_into(&mut b, &qa, qa.target());
        let pa = b.project(a, r);
        let c = copy_into(&mut b, &qb, qb.target());
        let pc = b.project(c, r);
        let t = b.union(vec![pa, pc]);
        let rhs = b.build(t).unwrap();

        prop_assert_eq!(answer(&lhs, &s.test).unwrap(), answer(&rhs, &s.test).unwrap());
    }

    #[test]
    fn monotone_answers_grow_with_the_split(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::random_splits(&mut rng, ENTITIES, RELATIONS, 150);
        let q = random_monotone_query(&mut rng, 3, ENTITIES, RELATIONS);
        let train = answer(&q, &s.train).unwrap();
        let valid = answer(&q, &s.valid).unwrap();
        let test = answer(&q, &s.test).unwrap();
        prop_assert!(train.iter().all(|e| valid.contains(e)));
        prop_assert!(valid.iter().all(|e| test.contains(e)));
        let hard = hard_answers(&q, &s.test, &s.train).unwrap();
        prop_assert_eq!(hard.union(&train), test.clone());
        prop_assert!(hard.iter().all(|e| !train.contains(e)));
    }

    #[test]
    fn answers_match_the_brute_force_enumerator(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::random_splits(&mut rng, ENTITIES, RELATIONS, 120);
        let triples = s.test.triples();
        let mut brute = BruteForce::new(&triples, ENTITIES);
        for _ in 0..8 {
            let q = random_query(&mut rng, 4, ENTITIES, RELATIONS);
            let a = answer(&q, &s.test).unwrap();
            prop_assert_eq!(ids(&a), brute.answers(&q));
            prop_assert_eq!(answer(&q, &s.test).unwrap(), a);
        }
    }
}
