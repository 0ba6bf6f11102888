//! Fuzzed properties of the projection kernels: the orthant fixed-point
//! equivalence, the squared-distance gap function and its gradient, the
//! obtuse-angle inequality, and nonexpansiveness.

use mtsed_core::projection::{project_box, project_nonneg, BoxSet};
use proptest::prelude::*;

const CASES: u32 = 10_000;

/// Coordinates with exact zeros mixed in; magnitudes below 1e-9 are snapped
/// to zero so float absorption cannot blur the exact-equality properties.
fn coord() -> impl Strategy<Value = f64> {
    prop_oneof![
        2 => Just(0.0),
        8 => (-1.0f64..1.0).prop_map(|v| if v.abs() < 1e-9 { 0.0 } else { v }),
    ]
}

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(coord(), dim)
}

/// A box with nonempty interior plus points: lo < hi, x arbitrary, y inside.
fn box_and_points(
    dim: usize,
) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec((-2.0f64..1.9, 0.01f64..2.0), dim),
        prop::collection::vec(-4.0f64..4.0, dim),
        prop::collection::vec(0.0f64..1.0, dim),
    )
        .prop_map(|(bounds, x, t)| {
            let lo: Vec<f64> = bounds.iter().map(|(l, _)| *l).collect();
            let hi: Vec<f64> = bounds.iter().map(|(l, w)| l + w).collect();
            let y: Vec<f64> =
                (0..lo.len()).map(|i| lo[i] + t[i] * (hi[i] - lo[i])).collect();
            (lo, hi, x, y)
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: CASES, ..ProptestConfig::default() })]

    /// P(xi + eta) = xi holds exactly when xi >= 0, eta <= 0 and xi'eta = 0.
    #[test]
    fn orthant_fixed_point_equivalence(xi in vector(6), eta in vector(6)) {
        let sum: Vec<f64> = xi.iter().zip(eta.iter()).map(|(a, b)| a + b).collect();
        let fixed = project_nonneg(&sum) == xi;
        let cond = xi.iter().all(|&v| v >= 0.0)
            && eta.iter().all(|&v| v <= 0.0)
            && xi.iter().zip(eta.iter()).map(|(a, b)| a * b).sum::<f64>() == 0.0;
        prop_assert_eq!(fixed, cond, "xi = {:?}, eta = {:?}", xi, eta);
    }

    /// (P(x) - y)'(x - P(x)) >= 0 for any x and any y in the box.
    #[test]
    fn obtuse_angle_inequality((lo, hi, x, y) in box_and_points(5)) {
        let set = BoxSet::new(lo, hi).unwrap();
        let px = project_box(&x, &set);
        let inner: f64 = (0..x.len()).map(|i| (px[i] - y[i]) * (x[i] - px[i])).sum();
        prop_assert!(inner >= -1e-12, "inner product {inner}");
    }

    /// psi(x, y) = (||x-y||^2 - ||x-P(x)||^2) / 2 dominates ||P(x)-y||^2 / 2,
    /// and its x-gradient is P(x) - y (checked by central differences away
    /// from the projection kinks).
    #[test]
    fn gap_function_bound_and_gradient((lo, hi, x, y) in box_and_points(4)) {
        let set = BoxSet::new(lo.clone(), hi.clone()).unwrap();
        let psi = |x: &[f64]| -> f64 {
            let px = project_box(x, &set);
            let mut d2 = 0.0;
            let mut p2 = 0.0;
            for i in 0..x.len() {
                d2 += (x[i] - y[i]) * (x[i] - y[i]);
                p2 += (x[i] - px[i]) * (x[i] - px[i]);
            }
            0.5 * (d2 - p2)
        };
        let px = project_box(&x, &set);
        let bound: f64 =
            0.5 * (0..x.len()).map(|i| (px[i] - y[i]) * (px[i] - y[i])).sum::<f64>();
        prop_assert!(psi(&x) >= bound - 1e-12);

        // gradient check off the kinks
        let off_kinks = (0..x.len())
            .all(|i| (x[i] - lo[i]).abs() > 1e-4 && (x[i] - hi[i]).abs() > 1e-4);
        if off_kinks {
            let h = 1e-6;
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (psi(&xp) - psi(&xm)) / (2.0 * h);
                let grad = px[i] - y[i];
                prop_assert!(
                    (fd - grad).abs() <= 1e-6,
                    "coordinate {i}: fd {fd} vs gradient {grad}"
                );
            }
        }
    }

    /// ||P(x) - P(y)|| <= ||x - y||.
    #[test]
    fn projection_is_nonexpansive(
        (lo, hi, x, _) in box_and_points(5),
        z in prop::collection::vec(-4.0f64..4.0, 5),
    ) {
        let set = BoxSet::new(lo, hi).unwrap();
        let px = project_box(&x, &set);
        let pz = project_box(&z, &set);
        let d = |a: &[f64], b: &[f64]| -> f64 {
            (0..a.len()).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum::<f64>().sqrt()
        };
        prop_assert!(d(&px, &pz) <= d(&x, &z) + 1e-12);
    }
}
