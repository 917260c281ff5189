use gexpect::{align_grid, SignProcess, TimeGrid, VolatilityBand};
use proptest::prelude::*;

fn band_strategy() -> impl Strategy<Value = (f64, f64)> {
    (0.0..2.0f64, 0.1..3.0f64).prop_map(|(lo, w)| (lo, lo + w))
}

proptest! {
    #[test]
    fn g_positively_homogeneous((lo, hi) in band_strategy(), a in -10.0..10.0f64, lambda in 0.0..5.0f64) {
        let b = VolatilityBand::new(lo, hi).unwrap();
        let lhs = b.eval_g(lambda * a, false);
        let rhs = lambda * b.eval_g(a, false);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn g_subadditive((lo, hi) in band_strategy(), a in -10.0..10.0f64, c in -10.0..10.0f64) {
        let b = VolatilityBand::new(lo, hi).unwrap();
        prop_assert!(b.eval_g(a + c, false) <= b.eval_g(a, false) + b.eval_g(c, false) + 1e-12);
    }

    #[test]
    fn g_monotone((lo, hi) in band_strategy(), a in -10.0..10.0f64, d in 0.0..10.0f64) {
        let b = VolatilityBand::new(lo, hi).unwrap();
        prop_assert!(b.eval_g(a, false) <= b.eval_g(a + d, false));
    }

    #[test]
    fn g_is_half_max_over_band((lo, hi) in band_strategy(), a in -10.0..10.0f64, frac in 0.0..0.49f64) {
        let eps = frac * (hi - lo);
        let b = VolatilityBand::with_margin(lo, hi, eps).unwrap();
        for use_margin in [false, true] {
            let (l, h) = b.range(use_margin);
            let best = 0.5 * (l * a).max(h * a);
            prop_assert!((b.eval_g(a, use_margin) - best).abs() <= 1e-12 * (1.0 + best.abs()));
        }
    }

    #[test]
    fn margin_g_equals_shrunk_band((lo, hi) in band_strategy(), a in -10.0..10.0f64, frac in 0.0..0.49f64) {
        let eps = frac * (hi - lo);
        let b = VolatilityBand::with_margin(lo, hi, eps).unwrap();
        let shrunk = VolatilityBand::new(lo + eps, hi - eps).unwrap();
        let lhs = b.eval_g(a, true);
        prop_assert!((lhs - shrunk.eval_g(a, false)).abs() <= 1e-12 * (1.0 + lhs.abs()));
        prop_assert!((lhs - (b.eval_g(a, false) - 0.5 * eps * a.abs())).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn margin_non_degeneracy((lo, hi) in band_strategy(), frac in 0.0..0.49f64, x in -10.0..10.0f64, d in 0.0..10.0f64) {
        let eps = frac * (hi - lo);
        let b = VolatilityBand::with_margin(lo, hi, eps).unwrap();
        let (a, c) = (x + d, x);
        let gap = b.eval_g(a, true) - b.eval_g(c, true);
        prop_assert!(gap >= 0.5 * (lo + eps) * (a - c) - 1e-12 * (1.0 + a.abs() + c.abs()));
    }

    #[test]
    fn delta_midpoint_sum(n in 1usize..200, horizon in 0.1..10.0f64) {
        let sp = SignProcess::new(n, horizon).unwrap();
        let w = horizon / n as f64;
        let sum: f64 = (0..n).map(|i| sp.eval((i as f64 + 0.5) * w).unwrap() as f64 * w).sum();
        let expect = if n % 2 == 0 { 0.0 } else { w };
        prop_assert!((sum - expect).abs() <= 1e-12 * horizon);
    }

    #[test]
    fn delta_takes_unit_values(n in 1usize..100, s in 0.0..1.0f64) {
        let sp = SignProcess::new(n, 1.0).unwrap();
        let v = sp.eval(s).unwrap();
        prop_assert!(v == 1 || v == -1);
    }

    #[test]
    fn align_contains_inputs_and_is_idempotent(
        steps in 1usize..20,
        n in 1usize..20,
        bps in prop::collection::vec(0.0..1.0f64, 0..5),
        sub in 1usize..4,
    ) {
        let base = TimeGrid::uniform(1.0, steps).unwrap();
        let sp = SignProcess::new(n, 1.0).unwrap();
        let g = align_grid(&base, &sp, &bps, sub).unwrap();
        for t in base.knots().iter().chain(sp.knots().iter()).chain(bps.iter()) {
            prop_assert!(g.contains(*t), "missing {}", t);
        }
        prop_assert!(g.knots().windows(2).all(|w| w[1] > w[0]));
        let again = align_grid(&g, &sp, &bps, 1).unwrap();
        prop_assert_eq!(again.knots(), g.knots());
    }
}

#[test]
fn band_examples() {
    let b = VolatilityBand::new(1.0, 2.0).unwrap();
    assert_eq!(b.eval_g(2.0, false), 2.0);
    assert_eq!(b.eval_g(0.0, false), 0.0);
    assert_eq!(b.eval_g(-2.0, false), -1.0);
    assert!(VolatilityBand::new(2.0, 1.0).is_err());
    assert!(VolatilityBand::new(-0.1, 1.0).is_err());
    assert!(VolatilityBand::with_margin(1.0, 2.0, 0.5).is_err());
}

#[test]
fn sign_examples() {
    assert_eq!(SignProcess::new(4, 1.0).unwrap().eval(0.3).unwrap(), -1);
    assert_eq!(SignProcess::new(1, 1.0).unwrap().eval(0.7).unwrap(), 1);
    assert_eq!(SignProcess::new(3, 1.0).unwrap().eval(0.0).unwrap(), 1);
    assert!(SignProcess::new(3, 1.0).unwrap().eval(1.5).is_err());
}

#[test]
fn align_examples() {
    let base = TimeGrid::uniform(1.0, 1).unwrap();
    let g = align_grid(&base, &SignProcess::new(2, 1.0).unwrap(), &[], 1).unwrap();
    assert_eq!(g.knots(), &[0.0, 0.5, 1.0]);
    let g = align_grid(&base, &SignProcess::new(2, 1.0).unwrap(), &[0.5], 2).unwrap();
    assert_eq!(g.knots(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    let g = align_grid(&base, &SignProcess::new(3, 1.0).unwrap(), &[0.5], 1).unwrap();
    let expect = [0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0];
    for (a, b) in g.knots().iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(align_grid(&base, &SignProcess::new(2, 1.0).unwrap(), &[], 0).is_err());
}
