use consensus_lp::ring::ring_aggregate;
use proptest::prelude::*;

fn inputs() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..=8, 1usize..=6).prop_flat_map(|(blocks, width)| {
        (
            prop::collection::vec(prop::collection::vec(-1e6f64..1e6, width), blocks),
            prop::collection::vec(0.0f64..10.0, blocks),
        )
    })
}

proptest! {
    #[test]
    fn ring_equals_left_to_right_sum((contributions, weights) in inputs()) {
        let n = contributions.len();
        let mut num = contributions[0].clone();
        let mut den = weights[0];
        for i in 1..n {
            for (acc, v) in num.iter_mut().zip(&contributions[i]) {
                *acc += v;
            }
            den += weights[i];
        }
        let out = ring_aggregate(contributions, weights).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&out.numerator), bits(&num));
        prop_assert_eq!(out.denominator.to_bits(), den.to_bits());
        prop_assert_eq!(out.messages, 2 * (n - 1));
    }
}
