use proptest::prelude::*;
use q2p_core::rng::stream;
use q2p_core::Tape;
use q2p_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, levels: i32) -> Tensor<f64> {
    // few distinct levels so ties occur
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-levels..=levels) as f64)
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn max_gradient_goes_to_the_first_argmax(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, rows, cols, 2);
        let upstream = Tensor::from_vec(rows, 1, (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut t = Tape::<f64>::detached();
        let xv = t.leaf(x.clone());
        let m = t.max_over_columns(xv);
        let u = t.constant(upstream.clone());
        let h = t.hadamard(m, u).unwrap();
        let loss = t.sum(h);
        let g = t.backward(loss).unwrap();
        let gx = g.wrt(xv).unwrap();
        for r in 0..rows {
            let row = x.row(r);
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let first = row.iter().position(|&v| v == best).unwrap();
            for c in 0..cols {
                let expected = if c == first { upstream.get(r, 0) } else { 0.0 };
                prop_assert_eq!(gx.get(r, c), expected);
            }
            let routed: f64 = gx.row(r).iter().sum();
            prop_assert_eq!(routed, upstream.get(r, 0));
        }
    }

    #[test]
    fn dropout_is_the_identity_when_off(seed in any::<u64>(), rate in 0.0f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, 4, 3, 5);
        let mut t = Tape::<f64>::detached();
        let xv = t.leaf(x.clone());
        let mut r = stream(seed, &["dropout"]);
        let off = t.dropout(xv, rate, false, &mut r).unwrap();
        let zero = t.dropout(xv, 0.0, true, &mut r).unwrap();
        prop_assert_eq!(t.value(off), &x);
        prop_assert_eq!(t.value(zero), &x);
    }

    #[test]
    fn replaying_a_tape_is_bit_identical(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, 3, 4, 9).map(|v| v * 0.37);
        let b = random(&mut rng, 4, 2, 9).map(|v| v * 0.11);
        let run = || {
            let mut t = Tape::<f64>::detached();
            let (av, bv) = (t.leaf(a.clone()), t.leaf(b.clone()));
            let p = t.matmul(av, bv).unwrap();
            let s = t.softmax_rows(p);
            let th = t.tanh(s);
            let mut r = stream(seed, &["replay"]);
            let d = t.dropout(th, 0.3, true, &mut r).unwrap();
            let loss = t.sum(d);
            let g = t.backward(loss).unwrap();
            (t.value(loss).clone(), g.wrt(av).unwrap().clone(), g.wrt(bv).unwrap().clone())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn fan_out_gradients_accumulate(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, 3, 1, 4);
        let mut t = Tape::<f64>::detached();
        let xv = t.leaf(x.clone());
        let y = t.add(xv, xv).unwrap();
        let z = t.hadamard(y, xv).unwrap();
        let loss = t.sum(z);
        let g = t.backward(loss).unwrap();
        // d/dx sum(2x * x) = 4x
        prop_assert_eq!(g.wrt(xv).unwrap(), &x.map(|v| 4.0 * v));
    }
}
