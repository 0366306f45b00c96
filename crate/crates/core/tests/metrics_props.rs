use mlrf::evaluation::{ccc, pearson, spearman};
use proptest::prelude::*;

fn non_constant(v: &[f64]) -> bool {
    v.iter().any(|&x| (x - v[0]).abs() > 1e-6)
}

proptest! {
    #[test]
    fn ccc_is_symmetric_bounded_and_reflexive(
        pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..60),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(non_constant(&a) && non_constant(&b));
        let ab = ccc(&a, &b).unwrap();
        prop_assert!((ab - ccc(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!(ab.abs() <= pearson(&a, &b).unwrap().abs() + 1e-12);
        prop_assert!((ccc(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(
        pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..60),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(non_constant(&a) && non_constant(&b));
        let warped: Vec<f64> = a.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        let r = spearman(&a, &b).unwrap();
        prop_assert!((r - spearman(&warped, &b).unwrap()).abs() < 1e-12);
        prop_assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}
