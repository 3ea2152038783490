mod common;

use common::sort_rank;
use proptest::prelude::*;
use q2p_core::eval::{filtered_rank, Metrics};
use q2p_core::{AnswerSet, EntityId};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn draw(rng: &mut ChaCha8Rng) -> (Vec<f32>, AnswerSet) {
    let n = rng.gen_range(2..60);
    // coarse values so ties are common
    let scores: Vec<f32> = (0..n).map(|_| rng.gen_range(-8..8) as f32 * 0.25).collect();
    let k = rng.gen_range(1..=n.min(8));
    let filter = AnswerSet::from_ids(index::sample(rng, n, k).into_iter().map(|i| i as u32));
    (scores, filter)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn rank_matches_sorting(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, filter) = draw(&mut rng);
        for a in filter.iter() {
            prop_assert_eq!(filtered_rank(&scores, a, &filter).unwrap(), sort_rank(&scores, a.index(), &filter));
        }
    }

    #[test]
    fn high_scoring_easy_answers_do_not_move_hard_ranks(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut scores, filter) = draw(&mut rng);
        let before: Vec<usize> = filter.iter().map(|a| filtered_rank(&scores, a, &filter).unwrap()).collect();
        // a new entity that is an easy answer and outscores everything
        let easy = scores.len() as u32;
        scores.push(1e6);
        let widened = filter.union(&AnswerSet::singleton(EntityId(easy)));
        let after: Vec<usize> = filter.iter().map(|a| filtered_rank(&scores, a, &widened).unwrap()).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn increasing_transforms_keep_ranks(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, filter) = draw(&mut rng);
        let moved: Vec<f32> = scores.iter().map(|&s| (s * 0.5).exp() * 3.0 - 1.0).collect();
        for a in filter.iter() {
            prop_assert_eq!(filtered_rank(&scores, a, &filter).unwrap(), filtered_rank(&moved, a, &filter).unwrap());
        }
    }

    #[test]
    fn metric_orderings_hold(ranks in proptest::collection::vec(1usize..30, 1..50)) {
        let m = Metrics::from_ranks(&ranks);
        prop_assert!(m.mrr >= m.hits1);
        prop_assert!(m.hits1 <= m.hits3 && m.hits3 <= m.hits10);
        for v in [m.mrr, m.hits1, m.hits3, m.hits10] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn hand_ranks_give_seven_twelfths() {
    let m = Metrics::from_ranks(&[1, 2, 4]);
    assert!((m.mrr - 7.0 / 12.0).abs() < 1e-15);
    assert!((m.hits3 - 2.0 / 3.0).abs() < 1e-15);
}
