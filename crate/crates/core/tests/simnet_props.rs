mod common;

use proptest::prelude::*;

use spiking_harq::simnet::{cosine, SimilarityScore};
use spiking_harq::Error;

use common::cosine_oracle;

#[test]
fn identical_and_degenerate_vectors() {
    assert_eq!(cosine(&[0.3, -1.2, 4.0], &[0.3, -1.2, 4.0]).unwrap(), 1.0);
    assert!(matches!(cosine(&[0.0; 3], &[1.0, 2.0, 3.0]), Err(Error::Degenerate(_))));
    assert!(SimilarityScore::new(-1.0).is_ok());
    assert!(SimilarityScore::new(f64::NAN).is_err());
}

proptest! {
    #[test]
    fn cosine_matches_loop_oracle(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..16)) {
        let u: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let v: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(u.iter().any(|&x| x != 0.0) && v.iter().any(|&x| x != 0.0));
        let c = cosine(&u, &v).unwrap();
        prop_assert!((c - cosine_oracle(&u, &v)).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert_eq!(c, cosine(&v, &u).unwrap());
    }

    #[test]
    fn cosine_ignores_positive_scale(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..16),
        scale in 0.01f64..100.0,
    ) {
        let u: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let v: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(u.iter().any(|&x| x != 0.0) && v.iter().any(|&x| x != 0.0));
        let scaled: Vec<f64> = u.iter().map(|x| x * scale).collect();
        prop_assert!((cosine(&u, &v).unwrap() - cosine(&scaled, &v).unwrap()).abs() < 1e-12);
    }
}
