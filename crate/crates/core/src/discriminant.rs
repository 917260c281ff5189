//! The discriminant `d(η) = limsup_n Ê[∫ δₙ η d⟨B⟩]` and the checks built on it.

use rayon::prelude::*;

use crate::control::{
    integral_functional, solve_expectation, Affine, DpConfig, SolveOptions, StateSpec,
};
use crate::error::{Error, Result};
use crate::gcore::{SignProcess, TimeGrid, VolatilityBand};
use crate::integrand::Integrand;
use crate::paths::{mc_estimate, midpoint_adversary, path_integral, ControlPolicy, Measure};
use crate::report::{EstimateReport, Method};

/// Relative floor added to every tolerance to absorb rounding.
pub const FLOAT_FLOOR: f64 = 1e-9;

/// `error_proxy` plus a rounding floor.
pub fn tolerance(r: &EstimateReport) -> f64 {
    r.error_proxy + FLOAT_FLOOR * (1.0 + r.value.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMethod {
    Dp,
    Mc,
    Both,
}

/// What `δₙ η` is integrated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Against {
    /// `d⟨B⟩`
    Qv,
    /// `ds`
    Time,
}

/// Increasing even values of `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DSchedule {
    n_values: Vec<usize>,
    method: EvalMethod,
}

impl DSchedule {
    pub fn new(n_values: Vec<usize>, method: EvalMethod) -> Result<Self> {
        if n_values.is_empty() {
            return Err(Error::InvalidSchedule("empty schedule".into()));
        }
        if let Some(n) = n_values.iter().find(|&&n| n == 0 || n % 2 == 1) {
            return Err(Error::InvalidSchedule(format!("n = {n} is not a positive even integer")));
        }
        if n_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSchedule("n values must increase".into()));
        }
        Ok(Self { n_values, method })
    }

    /// `m·{2, 4, 8, 16, 32}`.
    pub fn default_for(m: usize, method: EvalMethod) -> Result<Self> {
        Self::new([2, 4, 8, 16, 32].iter().map(|k| k * m.max(1)).collect(), method)
    }

    /// Default schedule scaled by the partition count of `eta`.
    pub fn for_integrand(eta: &Integrand, method: EvalMethod) -> Result<Self> {
        Self::default_for(eta.partition_count().unwrap_or(1), method)
    }

    pub fn n_values(&self) -> &[usize] {
        &self.n_values
    }

    pub fn method(&self) -> EvalMethod {
        self.method
    }

    pub fn with_method(&self, method: EvalMethod) -> Self {
        Self { method, ..self.clone() }
    }

    /// Index of the first entry of the tail half.
    pub fn tail_start(&self) -> usize {
        self.n_values.len() / 2
    }
}

/// Numerical settings shared by the discriminant and martingale checks.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub dp: DpConfig,
    pub paths: usize,
    pub seed: u64,
}

impl Default for Evaluator {
    fn default() -> Self {
        Self { dp: DpConfig::default(), paths: 20_000, seed: 1 }
    }
}

impl Evaluator {
    fn spec(&self, band: &VolatilityBand, eta: &Integrand) -> Result<StateSpec> {
        StateSpec::for_integrands(band, eta.horizon(), &[eta], self.dp.resolution)
    }

    /// `Ê[∫ rate(t, ηₜ) dt]` by dynamic programming.
    pub fn expect_integral(
        &self,
        band: &VolatilityBand,
        eta: &Integrand,
        extra: &[f64],
        use_margin: bool,
        rate: impl Fn(f64, f64) -> Affine + Send + Sync + 'static,
    ) -> Result<EstimateReport> {
        let spec = self.spec(band, eta)?;
        let f = integral_functional(&spec, eta, extra, rate)?;
        self.dp.estimate(band, &spec, eta.horizon(), &f, use_margin)
    }

    /// `Ê[∫|η| ds]`, or the lower expectation `−Ê[−∫|η| ds]` when `lower`.
    pub fn abs_time_integral(
        &self,
        band: &VolatilityBand,
        eta: &Integrand,
        use_margin: bool,
        lower: bool,
    ) -> Result<EstimateReport> {
        let sign = if lower { -1.0 } else { 1.0 };
        let mut r = self.expect_integral(band, eta, &[], use_margin, move |_, v| Affine {
            intercept: sign * v.abs(),
            slope: 0.0,
        })?;
        r.value *= sign;
        Ok(r)
    }

    fn dp_point(&self, band: &VolatilityBand, eta: &Integrand, n: usize, against: Against) -> Result<EstimateReport> {
        let sp = SignProcess::new(n, eta.horizon())?;
        self.expect_integral(band, eta, &sp.knots(), false, move |t, v| {
            let w = sp.sign_after(t) as f64 * v;
            match against {
                Against::Qv => Affine { intercept: 0.0, slope: w },
                Against::Time => Affine { intercept: w, slope: 0.0 },
            }
        })
    }

    /// Best of the adversary, the DP argmax policy and the two constant
    /// policies for `Ê[∫ δₙ η (d⟨B⟩ | ds)]`.
    fn mc_point(&self, band: &VolatilityBand, eta: &Integrand, n: usize, against: Against) -> Result<EstimateReport> {
        let horizon = eta.horizon();
        let sp = SignProcess::new(n, horizon)?;
        let spec = self.spec(band, eta)?.with_resolution(self.dp.resolution)?;
        let rate = move |t: f64, v: f64| {
            let w = sp.sign_after(t) as f64 * v;
            match against {
                Against::Qv => Affine { intercept: 0.0, slope: w },
                Against::Time => Affine { intercept: w, slope: 0.0 },
            }
        };
        let f = integral_functional(&spec, eta, &sp.knots(), rate)?;
        let grid: TimeGrid = self.dp.grid_for(band, &spec, horizon, f.breakpoints(), false)?;
        let opts = SolveOptions { record_policy: true, ..self.dp.solve_options(false) };
        let sol = solve_expectation(band, &grid, &spec, &f, &opts)?;

        let mut policies = vec![
            ControlPolicy::Constant(band.sigma_hi_sq()),
            ControlPolicy::Constant(band.sigma_lo_sq()),
        ];
        policies.extend(sol.policy);
        if let Some(m) = eta.partition_count() {
            if n % (2 * m) == 0 {
                policies.push(midpoint_adversary(band, eta, n / (2 * m))?);
            }
        }
        let measure = match against {
            Against::Qv => Measure::SignedQv(sp),
            Against::Time => Measure::SignedTime(sp),
        };
        let est = mc_estimate(band, &grid, &policies, |p| path_integral(p, eta, measure), self.paths, self.seed)?;
        Ok(est.report)
    }
}

/// DP and/or MC reports of one schedule.
#[derive(Debug, Clone)]
pub struct DEstimate {
    pub dp: Option<EstimateReport>,
    pub mc: Option<EstimateReport>,
}

impl DEstimate {
    /// The DP report when present, else the MC one.
    pub fn primary(&self) -> &EstimateReport {
        self.dp.as_ref().or(self.mc.as_ref()).expect("at least one method")
    }

    pub fn value(&self) -> f64 {
        self.primary().value
    }

    pub fn tolerance(&self) -> f64 {
        tolerance(self.primary())
    }
}

fn assemble(schedule: &DSchedule, points: Vec<EstimateReport>, method: Method) -> EstimateReport {
    let tail = schedule.tail_start();
    let (best, _) = points
        .iter()
        .enumerate()
        .skip(tail)
        .fold((tail, f64::NEG_INFINITY), |(b, v), (i, r)| if r.value > v { (i, r.value) } else { (b, v) });
    let mut report = EstimateReport::single(points[best].value, points[best].error_proxy, method);
    report.per_n = points.iter().map(|r| r.value).collect();
    report.per_n_error = points.iter().map(|r| r.error_proxy).collect();
    report.schedule = schedule.n_values().to_vec();
    report.clamped = points.iter().map(|r| r.clamped).sum();
    report
}

/// Per-n values of `Ê[∫ δₙ η (d⟨B⟩ | ds)]` and their tail-half maximum.
pub fn estimate_d(
    band: &VolatilityBand,
    eta: &Integrand,
    schedule: &DSchedule,
    against: Against,
    ev: &Evaluator,
) -> Result<DEstimate> {
    let ns = schedule.n_values();
    let want_dp = schedule.method() != EvalMethod::Mc;
    let want_mc = schedule.method() != EvalMethod::Dp;
    let dp = if want_dp {
        let pts = ns
            .par_iter()
            .map(|&n| ev.dp_point(band, eta, n, against))
            .collect::<Result<Vec<_>>>()?;
        Some(assemble(schedule, pts, Method::Dp))
    } else {
        None
    };
    let mc = if want_mc {
        let pts = ns
            .iter()
            .map(|&n| ev.mc_point(band, eta, n, against))
            .collect::<Result<Vec<_>>>()?;
        Some(assemble(schedule, pts, Method::McLowerBound))
    } else {
        None
    };
    Ok(DEstimate { dp, mc })
}

#[derive(Debug, Clone)]
pub struct Prop31Check {
    pub d: DEstimate,
    pub lower: f64,
    pub upper: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Prop31Check {
    pub fn d_estimate(&self) -> f64 {
        self.d.value()
    }
}

/// `(σ̄²−σ̲²)/2 · (−Ê[−∫|η|ds]) ≤ d(η) ≤ (σ̄²−σ̲²)/2 · Ê[∫|η|ds]`.
pub fn check_prop31(
    band: &VolatilityBand,
    eta: &Integrand,
    schedule: &DSchedule,
    ev: &Evaluator,
) -> Result<Prop31Check> {
    let d = estimate_d(band, eta, schedule, Against::Qv, ev)?;
    let half = band.width() / 2.0;
    let up = ev.abs_time_integral(band, eta, false, false)?;
    let lo = ev.abs_time_integral(band, eta, false, true)?;
    let (upper, lower) = (half * up.value, half * lo.value);
    let tol = d.tolerance() + half * (tolerance(&up) + tolerance(&lo));
    let v = d.value();
    let pass = lower - tol <= v && v <= upper + tol;
    Ok(Prop31Check { d, lower, upper, tolerance: tol, pass })
}

#[derive(Debug, Clone)]
pub struct Thm34Check {
    pub report: EstimateReport,
    /// Smallest `C` with `|vₙ| ≤ C·m·‖η‖∞·T/n` over the schedule.
    pub constant: f64,
    pub final_value: f64,
    pub final_tolerance: f64,
    pub pass: bool,
}

/// Decay of `Ê[∫ δₙ η ds]`: the per-n values must sit under `2·m·‖η‖∞·T/n`
/// and the last one under `final_tolerance`.
pub fn check_thm34(
    band: &VolatilityBand,
    eta: &Integrand,
    schedule: &DSchedule,
    final_tolerance: f64,
    ev: &Evaluator,
) -> Result<Thm34Check> {
    let d = estimate_d(band, eta, &schedule.with_method(EvalMethod::Dp), Against::Time, ev)?;
    let report = d.dp.expect("dp requested");
    let m = eta.cells() as f64;
    let scale = m * eta.bound() * eta.horizon();
    let constant = report
        .schedule
        .iter()
        .zip(&report.per_n)
        .zip(&report.per_n_error)
        .map(|((&n, v), e)| {
            let excess = (v.abs() - e - FLOAT_FLOOR).max(0.0);
            if scale > 0.0 {
                excess * n as f64 / scale
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let final_value = *report.per_n.last().unwrap();
    let pass = constant <= 2.0 && final_value.abs() <= final_tolerance;
    Ok(Thm34Check { report, constant, final_value, final_tolerance, pass })
}

#[derive(Debug, Clone)]
pub struct PositivityCheck {
    pub d: DEstimate,
    /// `ε·Ê_{G_ε}[∫|η|ds]`.
    pub floor: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// `d(η) ≥ ε·Ê_{G_ε}[∫|η|ds]` with `ε` the margin of `band`, and `d(η)`
/// clear of zero by three tolerances.
pub fn check_positivity(
    band: &VolatilityBand,
    eta: &Integrand,
    schedule: &DSchedule,
    ev: &Evaluator,
) -> Result<PositivityCheck> {
    let eps = band.margin_eps();
    let d = estimate_d(band, eta, schedule, Against::Qv, ev)?;
    let shrunk = ev.abs_time_integral(band, eta, true, false)?;
    let floor = eps * shrunk.value;
    let tol = d.tolerance() + eps * tolerance(&shrunk);
    let v = d.value();
    let pass = v >= floor - tol && v > 3.0 * tol;
    Ok(PositivityCheck { d, floor, tolerance: tol, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev() -> Evaluator {
        Evaluator { dp: DpConfig { resolution: 41, ..DpConfig::default() }, paths: 2_000, seed: 7 }
    }

    #[test]
    fn schedule_validation() {
        assert!(DSchedule::new(vec![2, 3], EvalMethod::Dp).is_err());
        assert!(DSchedule::new(vec![4, 2], EvalMethod::Dp).is_err());
        assert!(DSchedule::new(vec![], EvalMethod::Dp).is_err());
        let s = DSchedule::default_for(2, EvalMethod::Dp).unwrap();
        assert_eq!(s.n_values(), &[4, 8, 16, 32, 64]);
        assert_eq!(s.tail_start(), 2);
    }

    #[test]
    fn constant_one_symmetric_case() {
        let band = VolatilityBand::new(1.0, 2.0).unwrap();
        let eta = Integrand::constant(1.0, 1.0).unwrap();
        let s = DSchedule::new(vec![2, 4, 8], EvalMethod::Both).unwrap();
        let d = estimate_d(&band, &eta, &s, Against::Qv, &ev()).unwrap();
        for v in &d.dp.as_ref().unwrap().per_n {
            assert!((v - 0.5).abs() < 1e-9, "{v}");
        }
        for v in &d.mc.as_ref().unwrap().per_n {
            assert!((v - 0.5).abs() < 1e-9, "{v}");
        }
        let ds = estimate_d(&band, &eta, &s.with_method(EvalMethod::Dp), Against::Time, &ev()).unwrap();
        for v in &ds.dp.unwrap().per_n {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_integrand_collapses() {
        let band = VolatilityBand::new(1.0, 2.0).unwrap();
        let eta = Integrand::zero(1.0).unwrap();
        let s = DSchedule::new(vec![2, 4], EvalMethod::Dp).unwrap();
        let c = check_prop31(&band, &eta, &s, &ev()).unwrap();
        assert_eq!((c.d_estimate(), c.lower, c.upper), (0.0, 0.0, 0.0));
        assert!(c.pass);
    }

    #[test]
    fn half_support_decay() {
        let band = VolatilityBand::new(1.0, 2.0).unwrap();
        let eta = Integrand::steps(vec![0.0, 0.5, 1.0], &[1.0, 0.0]).unwrap();
        let s = DSchedule::new(vec![2, 4, 6, 8, 10], EvalMethod::Dp).unwrap();
        let c = check_thm34(&band, &eta, &s, 1.0, &ev()).unwrap();
        let expect = [0.5, 0.0, 1.0 / 6.0, 0.0, 0.1];
        for (v, e) in c.report.per_n.iter().zip(expect) {
            assert!((v - e).abs() < 1e-12, "{v} vs {e}");
        }
        assert!(c.constant <= 2.0);
        assert!(c.pass);
    }
}
