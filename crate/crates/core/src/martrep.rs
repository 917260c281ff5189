//! Finite-variation G-martingales `K = ∫ η d⟨B⟩ − ∫ 2G(η) ds` and the
//! uniqueness discriminator.

use std::fmt::Write as _;

use crate::control::{conditional_expectation, integral_functional, Affine, StateSpec};
use crate::discriminant::{estimate_d, tolerance, Against, DEstimate, DSchedule, Evaluator};
use crate::error::{Error, Result};
use crate::gcore::VolatilityBand;
use crate::integrand::Integrand;
use crate::paths::{integrate, path_integral, Measure, PathBundle, PathView};
use crate::report::EstimateReport;

/// `K` together with its drift integrand `2G(η)`.
#[derive(Debug, Clone)]
pub struct GMartingaleFV {
    band: VolatilityBand,
    eta: Integrand,
    drift: Integrand,
}

/// Pairs `η` with the drift `2G(η)`, evaluated coefficient by coefficient.
pub fn build_martingale(band: &VolatilityBand, eta: &Integrand) -> Result<GMartingaleFV> {
    let b = *band;
    let drift = eta.map(band.sigma_hi_sq() * eta.bound(), move |v| 2.0 * b.eval_g(v, false))?;
    Ok(GMartingaleFV { band: *band, eta: eta.clone(), drift })
}

impl GMartingaleFV {
    pub fn eta(&self) -> &Integrand {
        &self.eta
    }

    pub fn drift(&self) -> &Integrand {
        &self.drift
    }

    pub fn band(&self) -> &VolatilityBand {
        &self.band
    }

    /// `K_t` along one path (`t` must be a knot of the path).
    pub fn value_at(&self, path: &PathView, t: f64) -> Option<f64> {
        let p = path.upto(t)?;
        Some(path_integral(&p, &self.eta, Measure::Qv) - path_integral(&p, &self.drift, Measure::Time))
    }

    /// `K_T` on every path of `bundle`.
    pub fn terminal(&self, bundle: &PathBundle) -> Result<Vec<f64>> {
        let a = integrate(bundle, &self.eta, Measure::Qv)?;
        let b = integrate(bundle, &self.drift, Measure::Time)?;
        Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
    }

    fn rate(&self, sign: f64) -> impl Fn(f64, f64) -> Affine + Send + Sync + 'static {
        let band = self.band;
        move |_, v| Affine { intercept: -sign * 2.0 * band.eval_g(v, false), slope: sign * v }
    }

    /// `Ê[K_T]`.
    pub fn expectation(&self, ev: &Evaluator) -> Result<EstimateReport> {
        ev.expect_integral(&self.band, &self.eta, &[], false, self.rate(1.0))
    }

    /// `Ê[−K_T]`.
    pub fn expectation_of_negative(&self, ev: &Evaluator) -> Result<EstimateReport> {
        ev.expect_integral(&self.band, &self.eta, &[], false, self.rate(-1.0))
    }

    /// Largest `|Ê_s[K_T] − K_s|` over the state grid at knot `s`.
    pub fn conditional_deviation(&self, s: f64, ev: &Evaluator) -> Result<f64> {
        let horizon = self.eta.horizon();
        let spec = StateSpec::for_integrands(&self.band, horizon, &[&self.eta], ev.dp.resolution)?;
        let f = integral_functional(&spec, &self.eta, &[s], self.rate(1.0))?;
        let grid = ev.dp.grid_for(&self.band, &spec, horizon, f.breakpoints(), false)?;
        let cond = conditional_expectation(&self.band, &grid, &spec, &f, s, &ev.dp.solve_options(false))?;
        let slice = cond.values().slice(cond.knot()).expect("slice kept");
        Ok(slice.iter().fold(0.0, |m, v| m.max(v.abs())))
    }

    /// `Ê[K_T] ≈ 0` and `Ê_s[K_T] = K_s` at `s = T/2`.
    pub fn check(&self, ev: &Evaluator) -> Result<MartingaleCheck> {
        let e = self.expectation(ev)?;
        let tol = tolerance(&e);
        let deviation = self.conditional_deviation(self.eta.horizon() / 2.0, ev)?;
        let pass = e.value.abs() <= tol && deviation <= tol;
        Ok(MartingaleCheck { expectation: e.value, conditional_deviation: deviation, tolerance: tol, pass })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleCheck {
    pub expectation: f64,
    pub conditional_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct Bounds67 {
    /// `Ê[−K_T]`
    pub lhs6: f64,
    pub d: DEstimate,
    /// `ε·Ê_{G_ε}[∫|η|ds]`
    pub rhs7: f64,
    pub tolerance: f64,
    pub pass6: bool,
    pub pass7: bool,
}

impl Bounds67 {
    pub fn d_estimate(&self) -> f64 {
        self.d.value()
    }

    pub fn pass(&self) -> bool {
        self.pass6 && self.pass7
    }
}

/// The chain `Ê[−K_T] ≥ d(η) ≥ ε·Ê_{G_ε}[∫|η|ds]`, `ε` being the margin of
/// `band`.
pub fn check_bounds_67(
    band: &VolatilityBand,
    eta: &Integrand,
    schedule: &DSchedule,
    ev: &Evaluator,
) -> Result<Bounds67> {
    let eps = band.margin_eps();
    let cap = band.width() / 2.0;
    if !(eps > 0.0 && eps < cap) {
        return Err(Error::MarginOutOfRange { eps, cap });
    }
    let k = build_martingale(band, eta)?;
    let lhs = k.expectation_of_negative(ev)?;
    let d = estimate_d(band, eta, schedule, Against::Qv, ev)?;
    let shrunk = ev.abs_time_integral(band, eta, true, false)?;
    let rhs7 = eps * shrunk.value;
    let tol = tolerance(&lhs) + d.tolerance() + eps * tolerance(&shrunk);
    let v = d.value();
    Ok(Bounds67 {
        lhs6: lhs.value,
        d,
        rhs7,
        tolerance: tol,
        pass6: lhs.value >= v - tol,
        pass7: v >= rhs7 - tol,
    })
}

/// Which identity the discriminator tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// `∫ η d⟨B⟩ = ∫ ζ ds`
    QvEqualsTime,
    /// `∫ η d⟨B⟩ − ∫ 2G(η) ds = ∫ ζ d⟨B⟩ − ∫ 2G(ζ) ds`
    SameRepresentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Consistent,
    Refuted,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Consistent => "consistent",
            Verdict::Refuted => "refuted",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Discrimination {
    pub hypothesis: Hypothesis,
    pub verdict: Verdict,
    /// Discriminant of the `d⟨B⟩` side.
    pub d: DEstimate,
    /// Discriminant of the `ds` side against `d⟨B⟩`; tends to 0 in theory.
    pub ds_side: f64,
    pub tau: f64,
    pub tolerance: f64,
}

impl Discrimination {
    pub fn witness(&self) -> f64 {
        self.d.value()
    }

    /// `key: value` lines.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let h = match self.hypothesis {
            Hypothesis::QvEqualsTime => "qv-integral equals time-integral",
            Hypothesis::SameRepresentation => "representations coincide",
        };
        let p = self.d.primary();
        writeln!(out, "hypothesis: {h}").unwrap();
        writeln!(out, "verdict: {}", self.verdict.as_str()).unwrap();
        writeln!(out, "d_estimate: {:.9}", p.value).unwrap();
        writeln!(out, "tolerance: {:.3e}", self.tolerance).unwrap();
        writeln!(out, "tau: {}", self.tau).unwrap();
        writeln!(out, "ds_side_time_discriminant: {:.9}", self.ds_side).unwrap();
        writeln!(out, "method: {}", p.method).unwrap();
        let ns: Vec<String> = p.schedule.iter().map(|n| n.to_string()).collect();
        writeln!(out, "schedule: {}", ns.join(",")).unwrap();
        out
    }
}

/// One-sided test: a discriminant above `τ` plus tolerance on the `d⟨B⟩`
/// side refutes the hypothesis, since integrals against `ds` have none.
/// Otherwise the pair is only reported as consistent.
pub fn uniqueness_discriminator(
    band: &VolatilityBand,
    eta: &Integrand,
    zeta: &Integrand,
    hypothesis: Hypothesis,
    schedule: &DSchedule,
    tau: f64,
    ev: &Evaluator,
) -> Result<Discrimination> {
    let (qv_side, time_side) = match hypothesis {
        Hypothesis::QvEqualsTime => (eta.clone(), zeta.clone()),
        Hypothesis::SameRepresentation => {
            let b = *band;
            let diff = eta.zip_with(zeta, eta.bound() + zeta.bound(), |a, c| a - c)?;
            let drift = eta.zip_with(zeta, b.sigma_hi_sq() * (eta.bound() + zeta.bound()), move |a, c| {
                2.0 * b.eval_g(a, false) - 2.0 * b.eval_g(c, false)
            })?;
            (diff, drift)
        }
    };
    let d = estimate_d(band, &qv_side, schedule, Against::Qv, ev)?;
    let ds = estimate_d(band, &time_side, &schedule.with_method(crate::discriminant::EvalMethod::Dp), Against::Time, ev)?;
    let tol = d.tolerance();
    let verdict = if d.value() > tau + tol { Verdict::Refuted } else { Verdict::Consistent };
    Ok(Discrimination { hypothesis, verdict, d, ds_side: ds.value(), tau, tolerance: tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::DpConfig;
    use crate::discriminant::EvalMethod;

    fn ev() -> Evaluator {
        Evaluator { dp: DpConfig { resolution: 41, ..DpConfig::default() }, paths: 1_000, seed: 3 }
    }

    fn band() -> VolatilityBand {
        VolatilityBand::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn constant_one_expectations() {
        let k = build_martingale(&band(), &Integrand::constant(1.0, 1.0).unwrap()).unwrap();
        let e = k.expectation(&ev()).unwrap();
        assert!(e.value.abs() < 1e-12);
        let neg = k.expectation_of_negative(&ev()).unwrap();
        assert!((-neg.value - (-1.0)).abs() < 1e-12);
        let c = k.check(&ev()).unwrap();
        assert!(c.pass, "{c:?}");
    }

    #[test]
    fn zero_martingale() {
        let k = build_martingale(&band(), &Integrand::zero(1.0).unwrap()).unwrap();
        assert_eq!(k.expectation(&ev()).unwrap().value, 0.0);
        assert_eq!(k.conditional_deviation(0.5, &ev()).unwrap(), 0.0);
    }

    #[test]
    fn chain_for_constant_one() {
        let b = VolatilityBand::with_margin(1.0, 2.0, 0.25).unwrap();
        let s = DSchedule::new(vec![2, 4, 8], EvalMethod::Dp).unwrap();
        let c = check_bounds_67(&b, &Integrand::constant(1.0, 1.0).unwrap(), &s, &ev()).unwrap();
        assert!((c.lhs6 - 1.0).abs() < 1e-12);
        assert!((c.d_estimate() - 0.5).abs() < 1e-12);
        assert!((c.rhs7 - 0.25).abs() < 1e-12);
        assert!(c.pass());
        assert!(matches!(
            check_bounds_67(&band(), &Integrand::constant(1.0, 1.0).unwrap(), &s, &ev()),
            Err(Error::MarginOutOfRange { .. })
        ));
    }

    #[test]
    fn discriminator_verdicts() {
        let s = DSchedule::new(vec![2, 4], EvalMethod::Dp).unwrap();
        let one = Integrand::constant(1.0, 1.0).unwrap();
        let zero = Integrand::zero(1.0).unwrap();
        let r = uniqueness_discriminator(&band(), &one, &one, Hypothesis::QvEqualsTime, &s, 0.0, &ev()).unwrap();
        assert_eq!(r.verdict, Verdict::Refuted);
        assert!(r.witness() >= 0.45);
        let r = uniqueness_discriminator(&band(), &zero, &zero, Hypothesis::QvEqualsTime, &s, 0.0, &ev()).unwrap();
        assert_eq!(r.verdict, Verdict::Consistent);
        let r = uniqueness_discriminator(&band(), &one, &one, Hypothesis::SameRepresentation, &s, 0.0, &ev()).unwrap();
        assert_eq!(r.verdict, Verdict::Consistent);
        assert!(r.report().contains("verdict: consistent"));
    }
}
