use gexpect::control::DpConfig;
use gexpect::discriminant::{DSchedule, EvalMethod, Evaluator};
use gexpect::martrep::{build_martingale, check_bounds_67, uniqueness_discriminator, Hypothesis, Verdict};
use gexpect::paths::{simulate_paths, ControlPolicy};
use gexpect::{Coefficient, Integrand, Observation, TimeGrid, VolatilityBand};
use proptest::prelude::*;

fn band() -> VolatilityBand {
    VolatilityBand::new(1.0, 2.0).unwrap()
}

fn ev() -> Evaluator {
    Evaluator { dp: DpConfig { resolution: 81, ..DpConfig::default() }, paths: 2_000, seed: 5 }
}

fn feedback_eta() -> Integrand {
    Integrand::new(
        vec![0.0, 0.5, 1.0],
        vec![Coefficient::Constant(0.5), Coefficient::observed(vec![Observation::x(0.5)], |v| v[0].tanh())],
        1.0,
    )
    .unwrap()
}

fn remark_integrand() -> Integrand {
    Integrand::new(
        vec![0.0, 1.0, 2.0],
        vec![Coefficient::Constant(0.5), Coefficient::observed(vec![Observation::q(1.0)], |v| v[0])],
        2.0,
    )
    .unwrap()
}

#[test]
fn nonnegative_integrand_gives_nonpositive_paths() {
    let eta = Integrand::new(
        vec![0.0, 0.5, 1.0],
        vec![Coefficient::Constant(1.0), Coefficient::observed(vec![Observation::x(0.5)], |v| v[0].abs().min(2.0))],
        2.0,
    )
    .unwrap();
    let k = build_martingale(&band(), &eta).unwrap();
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    for policy in [
        ControlPolicy::Constant(1.0),
        ControlPolicy::Constant(2.0),
        ControlPolicy::alternating(1.0, 8, 2.0, 1.3).unwrap(),
    ] {
        let b = simulate_paths(&band(), &grid, &policy, 500, 9).unwrap();
        for v in k.terminal(&b).unwrap() {
            assert!(v <= 1e-12, "{v}");
        }
    }
    let b = simulate_paths(&band(), &grid, &ControlPolicy::Constant(2.0), 50, 9).unwrap();
    for (i, v) in k.terminal(&b).unwrap().iter().enumerate() {
        assert!(v.abs() < 1e-12);
        assert_eq!(k.value_at(&b.path(i), 0.0), Some(0.0));
    }
}

#[test]
fn upper_expectation_vanishes() {
    let steps = Integrand::steps(vec![0.0, 0.3, 1.0], &[1.0, -2.0]).unwrap();
    for eta in [Integrand::constant(1.0, 1.0).unwrap(), steps, feedback_eta()] {
        let k = build_martingale(&band(), &eta).unwrap();
        let c = k.check(&ev()).unwrap();
        assert!(c.pass, "{c:?}");
    }
}

#[test]
fn remark_chain_with_quarter_margin() {
    let b = VolatilityBand::with_margin(1.0, 2.0, 0.25).unwrap();
    let s = DSchedule::new(vec![2, 4, 8, 16], EvalMethod::Dp).unwrap();
    let c = check_bounds_67(&b, &remark_integrand(), &s, &ev()).unwrap();
    assert!(c.lhs6 >= c.d_estimate() - c.tolerance);
    assert!(c.d_estimate() >= c.rhs7 - c.tolerance);
    assert!(c.rhs7 > 0.0);
    assert!(c.pass());
}

#[test]
fn chain_holds_across_margins() {
    let s = DSchedule::new(vec![2, 4, 8], EvalMethod::Dp).unwrap();
    for eps in [0.05, 0.15, 0.25, 0.4, 0.49] {
        let b = VolatilityBand::with_margin(1.0, 2.0, eps).unwrap();
        for eta in [Integrand::constant(1.0, 1.0).unwrap(), feedback_eta()] {
            let c = check_bounds_67(&b, &eta, &s, &ev()).unwrap();
            assert!(c.pass(), "eps={eps}: {c:?}");
        }
    }
}

#[test]
fn representation_pairs() {
    let s = DSchedule::new(vec![2, 4, 8], EvalMethod::Dp).unwrap();
    let one = Integrand::constant(1.0, 1.0).unwrap();
    let zero = Integrand::zero(1.0).unwrap();
    let fb = feedback_eta();
    let r = uniqueness_discriminator(&band(), &fb, &fb, Hypothesis::SameRepresentation, &s, 0.0, &ev()).unwrap();
    assert_eq!(r.verdict, Verdict::Consistent);
    let r = uniqueness_discriminator(&band(), &one, &zero, Hypothesis::SameRepresentation, &s, 0.0, &ev()).unwrap();
    assert_eq!(r.verdict, Verdict::Refuted);
    assert!((r.witness() - 0.5).abs() < 1e-9);
    assert!((r.ds_side - 0.0).abs() < 1e-12);
    let text = r.report();
    assert!(text.contains("verdict: refuted"));
    assert!(text.contains("schedule: 2,4,8"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zero_pair_is_never_refuted(tau in 0.0..1.0f64, c in -2.0..2.0f64) {
        let s = DSchedule::new(vec![2, 4], EvalMethod::Dp).unwrap();
        let zero = Integrand::zero(1.0).unwrap();
        let zeta = Integrand::constant(1.0, c).unwrap();
        let r = uniqueness_discriminator(&band(), &zero, &zeta, Hypothesis::QvEqualsTime, &s, tau, &ev()).unwrap();
        prop_assert_eq!(r.verdict, Verdict::Consistent);
        prop_assert!(r.witness().abs() <= 1e-9);
    }

    #[test]
    fn constant_one_refuted_against_any_zeta(c in -3.0..3.0f64) {
        let s = DSchedule::new(vec![2, 4], EvalMethod::Dp).unwrap();
        let one = Integrand::constant(1.0, 1.0).unwrap();
        let zeta = Integrand::constant(1.0, c).unwrap();
        let r = uniqueness_discriminator(&band(), &one, &zeta, Hypothesis::QvEqualsTime, &s, 0.0, &ev()).unwrap();
        prop_assert_eq!(r.verdict, Verdict::Refuted);
        prop_assert!(r.witness() >= 0.45);
    }
}
