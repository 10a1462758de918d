mod common;

use mambaic::entropy::{checkerboard_merge, checkerboard_split, likelihood, quantize, CheckerboardMask, Phase};
use mambaic::Tensor;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn tensor(max_side: usize) -> impl Strategy<Value = Tensor> {
    (1..4usize, 1..=max_side, 1..=max_side).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(-50.0f32..50.0, c * h * w).prop_map(move |v| Tensor::from_vec([1, c, h, w], v).unwrap())
    })
}

proptest! {
    #[test]
    fn quantize_is_idempotent(y in tensor(6), shift in -3.0f32..3.0) {
        let mu = Tensor::full(y.shape(), shift.round());
        let once = quantize(&y, &mu).unwrap();
        prop_assert_eq!(quantize(&once, &mu).unwrap(), once);
    }

    #[test]
    fn quantize_lands_on_the_mean_shifted_grid(y in tensor(6), mu0 in -3.0f32..3.0) {
        let mu = Tensor::full(y.shape(), mu0);
        let q = quantize(&y, &mu).unwrap();
        for (&a, &b) in q.data().iter().zip(y.data()) {
            let r = (a - mu0) as f64;
            prop_assert!((r - r.round()).abs() < 1e-4);
            prop_assert!((a - b).abs() <= 0.5 + 1e-4);
        }
    }

    #[test]
    fn checkerboard_merge_inverts_split(x in tensor(9)) {
        let (a, n) = checkerboard_split(&x);
        prop_assert_eq!(checkerboard_merge(&a, &n).unwrap(), x);
    }

    #[test]
    fn checkerboard_halves_are_disjoint(x in tensor(9)) {
        let (a, n) = checkerboard_split(&x);
        let [_, c, h, w] = x.shape();
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let anchor = CheckerboardMask::is_anchor(i, j);
                    prop_assert_eq!(a.at(0, ch, i, j), if anchor { x.at(0, ch, i, j) } else { 0.0 });
                    prop_assert_eq!(n.at(0, ch, i, j), if anchor { 0.0 } else { x.at(0, ch, i, j) });
                }
            }
        }
    }

    #[test]
    fn positions_cover_the_grid_once(h in 1usize..12, w in 1usize..12) {
        let mut seen = vec![0u8; h * w];
        for phase in Phase::BOTH {
            for (i, j) in CheckerboardMask::positions(h, w, phase) {
                prop_assert_eq!(CheckerboardMask::phase_of(i, j), phase);
                seen[i * w + j] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn likelihood_matches_a_reference_normal(r in -40.0f64..40.0, sigma in 0.11f64..30.0) {
        let n = Normal::new(0.0, sigma).unwrap();
        let want = n.cdf(r + 0.5) - n.cdf(r - 0.5);
        let got = likelihood(r, sigma).unwrap();
        // The reference erf is good to about 1e-10.
        prop_assert!((got - want).abs() <= 5e-10 + 1e-8 * want, "{} vs {}", got, want);
    }

    #[test]
    fn likelihood_is_symmetric_and_bounded(r in -40.0f64..40.0, sigma in 0.11f64..30.0) {
        let p = likelihood(r, sigma).unwrap();
        prop_assert!((p - likelihood(-r, sigma).unwrap()).abs() <= 1e-15);
        prop_assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn likelihood_rejects_scales_below_the_floor() {
    assert!(likelihood(0.0, 0.1).is_err());
    assert!(likelihood(0.0, f64::NAN).is_err());
}

#[test]
fn likelihood_integer_masses_sum_to_one() {
    for sigma in [0.11, 0.5, 1.0, 3.7, 16.0] {
        let total: f64 = (-200..=200).map(|r| likelihood(r as f64, sigma).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12, "sigma {sigma}: {total}");
    }
}
