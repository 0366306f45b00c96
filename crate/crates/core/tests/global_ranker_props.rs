use std::collections::BTreeMap;

use mlrf::global_ranker::{build_rank_trace, update_pair, GaussianBelief};
use proptest::prelude::*;

fn belief(mean: f64, std: f64) -> GaussianBelief {
    GaussianBelief::new(mean, std * std).unwrap()
}

proptest! {
    #[test]
    fn winner_rises_loser_falls_variances_shrink(
        mw in -5.0f64..5.0, ml in -5.0f64..5.0,
        sw in 0.1f64..3.0, sl in 0.1f64..3.0, beta in 0.0f64..2.0,
    ) {
        let (w, l) = update_pair(belief(mw, sw), belief(ml, sl), beta);
        // Far ahead of the loser the shift is below one ulp of the mean.
        let t = (mw - ml) / (2.0 * beta * beta + sw * sw + sl * sl).sqrt();
        if t < 3.0 {
            prop_assert!(w.mean > mw);
            prop_assert!(l.mean < ml);
            prop_assert!(w.variance < sw * sw);
            prop_assert!(l.variance < sl * sl);
        } else {
            prop_assert!(w.mean >= mw);
            prop_assert!(l.mean <= ml);
            prop_assert!(w.variance <= sw * sw);
            prop_assert!(l.variance <= sl * sl);
        }
        prop_assert!(w.variance > 0.0 && l.variance > 0.0);
    }

    #[test]
    fn equal_variances_give_opposite_mean_shifts(mw in -5.0f64..5.0, ml in -5.0f64..5.0, s in 0.1f64..3.0, beta in 0.0f64..2.0) {
        let (w, l) = update_pair(belief(mw, s), belief(ml, s), beta);
        let ulp = f64::EPSILON * mw.abs().max(ml.abs()).max(1e-300);
        prop_assert!(((w.mean - mw) + (l.mean - ml)).abs() <= 4.0 * ulp);
        prop_assert_eq!(w.variance, l.variance);
    }

    #[test]
    fn normalized_trace_has_zero_mean_unit_variance(
        anchors in proptest::collection::btree_map(0usize..200, -3.0f64..3.0, 2..30),
    ) {
        let beliefs: BTreeMap<usize, GaussianBelief> =
            anchors.iter().map(|(&t, &m)| (t, belief(m, 1.0))).collect();
        let trace = build_rank_trace(&beliefs, 200).unwrap();
        prop_assert_eq!(trace.len(), 200);
        let n = 200.0;
        let mean = trace.values.iter().sum::<f64>() / n;
        let var = trace.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if trace.values.iter().all(|&v| v == 0.0) {
            let first = anchors.values().next().unwrap();
            prop_assert!(anchors.values().all(|m| (m - first).abs() < 1e-9));
        } else {
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
    }
}
