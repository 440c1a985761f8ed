use proptest::prelude::*;

use spiking_harq::bench::{interpolate_surface, pearson, quantile, SurfacePoint};
use spiking_harq::Error;

const BERS: [f64; 4] = [0.0, 0.1, 0.2, 0.3];
const BANDWIDTHS: [usize; 5] = [544, 672, 800, 928, 1056];

fn grid(accs: &[f64]) -> Vec<SurfacePoint> {
    let mut out = Vec::new();
    for (i, &ber) in BERS.iter().enumerate() {
        for (j, &bandwidth) in BANDWIDTHS.iter().enumerate() {
            out.push(SurfacePoint {
                ber,
                bandwidth,
                acc: accs[i * BANDWIDTHS.len() + j],
                sim: 0.0,
                n: 1,
            });
        }
    }
    out
}

#[test]
fn pearson_reference_cases() {
    let xs = [0.1, 0.4, 0.35, 0.8];
    let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
    assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
    let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
    assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
    assert!(matches!(pearson(&xs, &[1.0; 4]), Err(Error::Degenerate(_))));
    assert!(matches!(pearson(&[1.0], &[2.0]), Err(Error::Degenerate(_))));
}

#[test]
fn interpolation_midpoint_and_hull() {
    let mut accs = vec![0.5; 20];
    accs[0] = 0.6;
    accs[1] = 0.8;
    let g = grid(&accs);
    assert!((interpolate_surface(&g, 608.0, 0.0).unwrap() - 0.7).abs() < 1e-12);
    assert_eq!(interpolate_surface(&g, 544.0, 0.0).unwrap(), 0.6);
    assert!(interpolate_surface(&g, 500.0, 0.1).is_err());
    assert!(interpolate_surface(&g, 600.0, 0.35).is_err());
}

proptest! {
    #[test]
    fn pearson_bounded_symmetric_and_affine_invariant(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
        scale in 0.1f64..5.0,
        shift in -3.0f64..3.0,
    ) {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(r) = pearson(&xs, &ys) {
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - pearson(&ys, &xs).unwrap()).abs() < 1e-12);
            let moved: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            prop_assert!((r - pearson(&moved, &ys).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolation_stays_within_neighbours(
        accs in prop::collection::vec(0.0f64..1.0, 20),
        bw in 544.0f64..=1056.0,
        ber in 0.0f64..=0.3,
    ) {
        let g = grid(&accs);
        let v = interpolate_surface(&g, bw, ber).unwrap();
        let i = BERS.iter().rposition(|&b| b <= ber).unwrap();
        let j = BANDWIDTHS.iter().rposition(|&b| b as f64 <= bw).unwrap();
        let mut corners = Vec::new();
        for ii in [i, (i + 1).min(3)] {
            for jj in [j, (j + 1).min(4)] {
                corners.push(accs[ii * 5 + jj]);
            }
        }
        let lo = corners.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn quantiles_are_monotone(values in prop::collection::vec(-1.0f64..1.0, 1..50), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantile(&values, lo).unwrap() <= quantile(&values, hi).unwrap());
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(quantile(&values, 0.0).unwrap(), min);
    }
}
