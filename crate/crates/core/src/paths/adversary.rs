use super::policy::ControlPolicy;
use crate::error::{Error, Result};
use crate::gcore::{snap, VolatilityBand};
use crate::integrand::Integrand;

/// `H^{parity}(x)²`. Splits a variance rate `x` into a high and a low rate
/// whose average is `x`.
pub fn adversary_volatility(band: &VolatilityBand, x: f64, parity: i8) -> Result<f64> {
    let (lo, hi) = band.range(true);
    if !(x >= lo && x <= hi) {
        return Err(Error::OutsideEffectiveBand { x, lo, hi });
    }
    Ok(split(band, x, parity))
}

fn split(band: &VolatilityBand, x: f64, parity: i8) -> f64 {
    let (lo, hi) = (band.sigma_lo_sq(), band.sigma_hi_sq());
    let upper = x >= (hi + lo) / 2.0;
    match (parity >= 0, upper) {
        (true, true) => hi,
        (true, false) => 2.0 * x - lo,
        (false, true) => 2.0 * x - hi,
        (false, false) => lo,
    }
}

/// The alternating feedback policy `hⁿ`.
///
/// On the coarse cell `(iT/m, (i+1)T/m]` the base rate `a²` and the sign `s`
/// of `η` are read off the policy's own path at `iT/m`; the `2n` sub-cells
/// then alternate between `H^s(a²)` and `H^{-s}(a²)`, starting with `H^s`.
/// When `s = 0` the cell keeps `a²`.
pub fn adversary_policy(
    band: &VolatilityBand,
    base: &ControlPolicy,
    eta: &Integrand,
    m: usize,
    n: usize,
) -> Result<ControlPolicy> {
    if m == 0 || n == 0 {
        return Err(Error::MismatchedPartition("m and n must be positive".into()));
    }
    let horizon = eta.horizon();
    let coarse = horizon / m as f64;
    let on_partition = |t: &f64| {
        let u = snap(t / coarse);
        u.fract() == 0.0 && u >= 0.0 && u <= m as f64
    };
    if !eta.breakpoints().iter().all(on_partition) || !base.breakpoints().iter().all(on_partition) {
        return Err(Error::MismatchedPartition(format!(
            "base policy and integrand must live on the uniform {m}-partition of [0, {horizon}]"
        )));
    }
    let cells = 2 * m * n;
    let breakpoints: Vec<f64> = (0..=cells).map(|j| horizon * j as f64 / cells as f64).collect();
    let band = *band;
    let base = base.clone();
    let eta = eta.clone();
    let fine = coarse / (2 * n) as f64;
    Ok(ControlPolicy::feedback(
        format!("adversary(m={m},n={n},base={})", base.id()),
        breakpoints,
        move |t, path| {
            let i = (snap(t / coarse).floor() as usize).min(m - 1);
            let start = coarse * i as f64;
            let j = (snap((t - start) / fine).floor() as usize).min(2 * n - 1);
            let view = path.upto(start).ok_or_else(|| Error::NotOnGrid(start))?;
            let a2 = base.sigma_sq(&view)?;
            let xi = eta
                .coefficient(eta.cell_after(start))
                .eval_with(|o| view.observe(o).unwrap_or(f64::NAN));
            let s: i8 = if xi > 0.0 {
                1
            } else if xi < 0.0 {
                -1
            } else {
                return Ok(a2);
            };
            let parity = if j % 2 == 0 { s } else { -s };
            adversary_volatility(&band, a2, parity)
        },
    ))
}

/// [`adversary_policy`] over the constant base `(σ̲² + σ̄²)/2`, which gives the
/// full-width alternation `σ̄²/σ̲²` in sync with `sgn η`.
pub fn midpoint_adversary(band: &VolatilityBand, eta: &Integrand, n: usize) -> Result<ControlPolicy> {
    let m = eta
        .partition_count()
        .ok_or_else(|| Error::UnsupportedIntegrand("breakpoints not on a uniform partition".into()))?;
    let mid = (band.sigma_lo_sq() + band.sigma_hi_sq()) / 2.0;
    let wide = VolatilityBand::new(band.sigma_lo_sq(), band.sigma_hi_sq())?;
    adversary_policy(&wide, &ControlPolicy::Constant(mid), eta, m, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcore::{SignProcess, TimeGrid};
    use crate::paths::{integrate, simulate_paths, Measure, PathView};

    fn band() -> VolatilityBand {
        VolatilityBand::with_margin(1.0, 2.0, 0.2).unwrap()
    }

    #[test]
    fn split_examples() {
        let b = band();
        assert_eq!(adversary_volatility(&b, 1.2, 1).unwrap(), 1.4);
        assert_eq!(adversary_volatility(&b, 1.2, -1).unwrap(), 1.0);
        assert_eq!(adversary_volatility(&b, 1.6, 1).unwrap(), 2.0);
        assert!((adversary_volatility(&b, 1.6, -1).unwrap() - 1.2).abs() < 1e-15);
        assert!(matches!(
            adversary_volatility(&b, 1.1, 1),
            Err(Error::OutsideEffectiveBand { .. })
        ));
    }

    #[test]
    fn one_cell_policy() {
        let b = band();
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let eta = Integrand::constant(1.0, 1.0).unwrap();
        let p = adversary_policy(&b, &ControlPolicy::Constant(1.3), &eta, 1, 1).unwrap();
        let bundle = simulate_paths(&b, &grid, &p, 4, 5).unwrap();
        let q = bundle.path(2).q_series().to_vec();
        assert!((q[2] - 0.5 * 1.6).abs() < 1e-14);
        assert!((q[4] - q[2] - 0.5 * 1.0).abs() < 1e-14);
    }

    #[test]
    fn signed_increment_per_cell() {
        let b = band();
        let eta = Integrand::steps(vec![0.0, 0.5, 1.0], &[1.0, 1.0]).unwrap();
        let p = adversary_policy(&b, &ControlPolicy::Constant(1.7), &eta, 2, 3).unwrap();
        let grid = TimeGrid::uniform(1.0, 12).unwrap();
        let bundle = simulate_paths(&b, &grid, &p, 3, 1).unwrap();
        let sp = SignProcess::new(12, 1.0).unwrap();
        let v = integrate(&bundle, &eta, Measure::SignedQv(sp)).unwrap();
        let per_cell = 0.5 * (2.0 - 1.4) / 2.0;
        for x in v {
            assert!((x - 2.0 * per_cell).abs() < 1e-13);
            assert!(per_cell >= 0.5 * 0.2);
        }
    }

    #[test]
    fn zero_sign_keeps_base() {
        let b = band();
        let eta = Integrand::zero(1.0).unwrap();
        let p = adversary_policy(&b, &ControlPolicy::Constant(1.3), &eta, 1, 2).unwrap();
        let knots = [0.0, 0.25];
        let z = [0.0];
        assert_eq!(p.sigma_sq(&PathView::new(&knots, &z, &z, &z)).unwrap(), 1.3);
    }

    #[test]
    fn mismatched_partition() {
        let eta = Integrand::steps(vec![0.0, 0.3, 1.0], &[1.0, 1.0]).unwrap();
        assert!(matches!(
            adversary_policy(&band(), &ControlPolicy::Constant(1.5), &eta, 2, 1),
            Err(Error::MismatchedPartition(_))
        ));
    }
}
