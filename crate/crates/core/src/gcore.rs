//! Volatility band, the G-function, the alternating sign process and time grids.
//!
//! Everything here is immutable after construction.

use crate::error::{Error, Result};

/// Relative tolerance used to snap times onto knots and cell boundaries.
pub(crate) const TIME_TOL: f64 = 1e-12;

/// Admissible variance rates `[σ̲², σ̄²]` of a one-dimensional G-Brownian motion,
/// optionally with a margin `ε` that shrinks the band to `[σ̲²+ε, σ̄²−ε]`.
///
/// Stored as variances; square roots are only taken at simulation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolatilityBand {
    sigma_lo_sq: f64,
    sigma_hi_sq: f64,
    margin_eps: f64,
}

impl VolatilityBand {
    pub fn new(sigma_lo_sq: f64, sigma_hi_sq: f64) -> Result<Self> {
        Self::with_margin(sigma_lo_sq, sigma_hi_sq, 0.0)
    }

    pub fn with_margin(sigma_lo_sq: f64, sigma_hi_sq: f64, margin_eps: f64) -> Result<Self> {
        if !(sigma_lo_sq.is_finite() && sigma_hi_sq.is_finite() && margin_eps.is_finite()) {
            return Err(Error::InvalidBand("parameters must be finite".into()));
        }
        if sigma_lo_sq < 0.0 {
            return Err(Error::InvalidBand(format!(
                "sigma_lo_sq = {sigma_lo_sq} must be non-negative"
            )));
        }
        if sigma_lo_sq >= sigma_hi_sq {
            return Err(Error::InvalidBand(format!(
                "sigma_lo_sq = {sigma_lo_sq} must be strictly below sigma_hi_sq = {sigma_hi_sq}"
            )));
        }
        let cap = (sigma_hi_sq - sigma_lo_sq) / 2.0;
        if margin_eps < 0.0 || margin_eps >= cap {
            return Err(Error::InvalidBand(format!(
                "margin_eps = {margin_eps} must lie in [0, {cap})"
            )));
        }
        Ok(Self { sigma_lo_sq, sigma_hi_sq, margin_eps })
    }

    pub fn sigma_lo_sq(&self) -> f64 {
        self.sigma_lo_sq
    }

    pub fn sigma_hi_sq(&self) -> f64 {
        self.sigma_hi_sq
    }

    pub fn margin_eps(&self) -> f64 {
        self.margin_eps
    }

    /// `σ̄² − σ̲²`.
    pub fn width(&self) -> f64 {
        self.sigma_hi_sq - self.sigma_lo_sq
    }

    /// Returns the same band with margin `eps`.
    pub fn margin(&self, eps: f64) -> Result<Self> {
        Self::with_margin(self.sigma_lo_sq, self.sigma_hi_sq, eps)
    }

    /// `[σ̲²+ε, σ̄²−ε]` when `use_margin`, otherwise `[σ̲², σ̄²]`.
    pub fn range(&self, use_margin: bool) -> (f64, f64) {
        if use_margin {
            (self.sigma_lo_sq + self.margin_eps, self.sigma_hi_sq - self.margin_eps)
        } else {
            (self.sigma_lo_sq, self.sigma_hi_sq)
        }
    }

    /// The band `[σ̲²+ε, σ̄²−ε]` with zero margin. Its G-function is `G_ε`.
    pub fn shrunk(&self) -> Self {
        let (lo, hi) = self.range(true);
        Self { sigma_lo_sq: lo, sigma_hi_sq: hi, margin_eps: 0.0 }
    }

    /// `G(a) = ½(σ̄²a⁺ − σ̲²a⁻)`, or `G_ε(a) = G(a) − (ε/2)|a|` when `use_margin`.
    pub fn eval_g(&self, a: f64, use_margin: bool) -> f64 {
        let g = 0.5 * (self.sigma_hi_sq * a.max(0.0) - self.sigma_lo_sq * (-a).max(0.0));
        if use_margin {
            g - 0.5 * self.margin_eps * a.abs()
        } else {
            g
        }
    }
}

/// The alternating process `δₙ(s) = (−1)^i` on `(iT/n, (i+1)T/n]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignProcess {
    n: usize,
    horizon: f64,
}

impl SignProcess {
    pub fn new(n: usize, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSignProcess("n must be positive".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidSignProcess(format!("horizon {horizon} must be positive")));
        }
        Ok(Self { n, horizon })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn cell_width(&self) -> f64 {
        self.horizon / self.n as f64
    }

    /// `δₙ(s)`; `δₙ(0) = +1` by convention.
    pub fn eval(&self, s: f64) -> Result<i8> {
        let tol = TIME_TOL * self.horizon;
        if !(s >= -tol && s <= self.horizon + tol) {
            return Err(Error::TimeOutOfRange { t: s, horizon: self.horizon });
        }
        let u = snap(s * self.n as f64 / self.horizon);
        if u <= 0.0 {
            return Ok(1);
        }
        let i = (u.ceil() as usize).saturating_sub(1).min(self.n - 1);
        Ok(parity_sign(i))
    }

    /// Sign on the cell immediately to the right of `t`, i.e. `δₙ(t⁺)`.
    ///
    /// This is the value a left-endpoint Riemann sum uses for the step `(t, t+dt]`.
    pub fn sign_after(&self, t: f64) -> i8 {
        let u = snap(t * self.n as f64 / self.horizon).max(0.0);
        let i = (u.floor() as usize).min(self.n - 1);
        parity_sign(i)
    }

    /// Cell boundaries `iT/n`, `i = 0..=n`.
    pub fn knots(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.horizon * i as f64 / self.n as f64).collect()
    }
}

fn parity_sign(i: usize) -> i8 {
    if i % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Rounds `u` to the nearest integer when it is within floating noise of it.
pub(crate) fn snap(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        u
    }
}

/// Strictly increasing knots `0 = t₀ < … < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidGrid("need at least two knots".into()));
        }
        if knots[0] != 0.0 {
            return Err(Error::InvalidGrid(format!("first knot is {} not 0", knots[0])));
        }
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("knots must be finite".into()));
        }
        if let Some(w) = knots.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "knots not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { knots })
    }

    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon {horizon} must be positive")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be positive".into()));
        }
        let mut knots: Vec<f64> =
            (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect();
        knots[steps] = horizon;
        Self::new(knots)
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.knots[k + 1] - self.knots[k]
    }

    pub fn max_dt(&self) -> f64 {
        self.knots.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    fn tol(&self) -> f64 {
        TIME_TOL * self.horizon()
    }

    /// Index of the knot equal to `t` within `1e−12·T`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = self.tol();
        let i = self.knots.partition_point(|&k| k < t - tol);
        (i < self.knots.len() && (self.knots[i] - t).abs() <= tol).then_some(i)
    }

    pub fn contains(&self, t: f64) -> bool {
        self.index_of(t).is_some()
    }

    /// Returns the first breakpoint that is not a knot.
    pub fn check_aligned(&self, breakpoints: &[f64]) -> Result<()> {
        match breakpoints.iter().find(|&&b| !self.contains(b)) {
            Some(&b) => Err(Error::UnalignedGrid(b)),
            None => Ok(()),
        }
    }

    /// Knots up to and including index `k`, as a grid on `[0, t_k]`.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        Self::new(self.knots[..=k].to_vec())
    }

    /// Adds `points` (clipped to `[0, T]`) and splits every resulting cell into
    /// `substeps` equal pieces.
    pub fn refine_with(&self, points: &[f64], substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::InvalidGrid("substeps must be positive".into()));
        }
        let horizon = self.horizon();
        let tol = self.tol();
        if let Some(&p) = points.iter().find(|&&p| !(p >= -tol && p <= horizon + tol)) {
            return Err(Error::TimeOutOfRange { t: p, horizon });
        }
        let mut all: Vec<f64> = self
            .knots
            .iter()
            .copied()
            .chain(points.iter().map(|p| p.clamp(0.0, horizon)))
            .collect();
        all.sort_by(f64::total_cmp);
        let mut merged: Vec<f64> = Vec::with_capacity(all.len());
        for t in all {
            match merged.last() {
                Some(&last) if t - last <= tol => {
                    // Keep the endpoints exact.
                    if t == horizon {
                        *merged.last_mut().unwrap() = horizon;
                    }
                }
                _ => merged.push(t),
            }
        }
        let mut knots = Vec::with_capacity((merged.len() - 1) * substeps + 1);
        for w in merged.windows(2) {
            for j in 0..substeps {
                knots.push(w[0] + (w[1] - w[0]) * j as f64 / substeps as f64);
            }
        }
        knots.push(*merged.last().unwrap());
        Self::new(knots)
    }
}

/// Merges `base`, the cell boundaries of `sp` and `breakpoints`, then splits
/// every cell into `substeps` pieces. Steps on the result never straddle a sign
/// change of `δₙ` or an integrand breakpoint.
pub fn align_grid(
    base: &TimeGrid,
    sp: &SignProcess,
    breakpoints: &[f64],
    substeps: usize,
) -> Result<TimeGrid> {
    let horizon = base.horizon();
    if (sp.horizon() - horizon).abs() > TIME_TOL * horizon {
        return Err(Error::InvalidGrid(format!(
            "sign process horizon {} differs from grid horizon {horizon}",
            sp.horizon()
        )));
    }
    let mut points = sp.knots();
    points.extend_from_slice(breakpoints);
    base.refine_with(&points, substeps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band12() -> VolatilityBand {
        VolatilityBand::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn g_closed_form_values() {
        let b = band12();
        assert_eq!(b.eval_g(2.0, false), 2.0);
        assert_eq!(b.eval_g(0.0, false), 0.0);
        assert_eq!(b.eval_g(-2.0, false), -1.0);
    }

    #[test]
    fn g_eps_example_at_margin_cap() {
        // ε = 0.5 sits exactly on the cap (σ̄²−σ̲²)/2 for band (1, 2) and is
        // rejected; the closed form G(2) − ε = 1.5 is approached from inside.
        assert!(VolatilityBand::with_margin(1.0, 2.0, 0.5).is_err());
        let b = VolatilityBand::with_margin(1.0, 2.0, 0.5 - 1e-13).unwrap();
        assert!((b.eval_g(2.0, true) - 1.5).abs() < 1e-12);
        let b = VolatilityBand::with_margin(1.0, 2.0, 0.25).unwrap();
        assert_eq!(b.eval_g(2.0, true), 1.75);
        assert_eq!(b.eval_g(-2.0, true), -1.25);
    }

    #[test]
    fn g_eps_equals_g_of_shrunk_band() {
        let b = VolatilityBand::with_margin(0.3, 1.7, 0.2).unwrap();
        let s = b.shrunk();
        for a in [-3.0, -1.0, -0.1, 0.0, 0.4, 2.5] {
            let lhs = b.eval_g(a, true);
            let rhs = s.eval_g(a, false);
            assert!((lhs - rhs).abs() < 1e-15, "a = {a}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn band_validation() {
        assert!(VolatilityBand::new(2.0, 1.0).is_err());
        assert!(VolatilityBand::new(1.0, 1.0).is_err());
        assert!(VolatilityBand::new(-0.1, 1.0).is_err());
        assert!(VolatilityBand::with_margin(1.0, 2.0, 0.5).is_err());
        assert!(VolatilityBand::with_margin(1.0, 2.0, -0.1).is_err());
        assert!(VolatilityBand::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn delta_examples() {
        let sp = SignProcess::new(4, 1.0).unwrap();
        assert_eq!(sp.eval(0.3).unwrap(), -1);
        assert_eq!(sp.eval(0.0).unwrap(), 1);
        assert_eq!(sp.eval(0.25).unwrap(), 1);
        assert_eq!(sp.eval(0.5).unwrap(), -1);
        assert_eq!(sp.eval(1.0).unwrap(), -1);
        assert!(sp.eval(1.5).is_err());
        assert!(sp.eval(-0.1).is_err());
        let one = SignProcess::new(1, 1.0).unwrap();
        assert_eq!(one.eval(0.7).unwrap(), 1);
        assert_eq!(sp.sign_after(0.25), -1);
        assert_eq!(sp.sign_after(0.0), 1);
        assert_eq!(sp.sign_after(0.999), -1);
    }

    #[test]
    fn delta_integral_cancels_for_even_n() {
        for n in 1..20 {
            let sp = SignProcess::new(n, 1.0).unwrap();
            let w = sp.cell_width();
            let s: f64 = (0..n)
                .map(|i| sp.eval((i as f64 + 0.5) * w).unwrap() as f64 * w)
                .sum();
            let expect = if n % 2 == 0 { 0.0 } else { w };
            assert!((s - expect).abs() < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn align_examples() {
        let base = TimeGrid::new(vec![0.0, 1.0]).unwrap();
        let g = align_grid(&base, &SignProcess::new(2, 1.0).unwrap(), &[], 1).unwrap();
        assert_eq!(g.knots(), &[0.0, 0.5, 1.0]);
        let g = align_grid(&base, &SignProcess::new(2, 1.0).unwrap(), &[0.5], 2).unwrap();
        assert_eq!(g.knots(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = align_grid(&base, &SignProcess::new(3, 1.0).unwrap(), &[0.5], 1).unwrap();
        let expect = [0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0];
        assert_eq!(g.knots().len(), expect.len());
        for (a, b) in g.knots().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn align_errors() {
        let base = TimeGrid::new(vec![0.0, 1.0]).unwrap();
        let sp = SignProcess::new(2, 1.0).unwrap();
        assert!(align_grid(&base, &sp, &[], 0).is_err());
        assert!(align_grid(&base, &sp, &[1.5], 1).is_err());
        assert!(TimeGrid::uniform(0.0, 3).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn index_of_snaps_within_tolerance() {
        let g = TimeGrid::uniform(1.0, 3).unwrap();
        assert_eq!(g.index_of(1.0 / 3.0 + 1e-14), Some(1));
        assert_eq!(g.index_of(0.5), None);
        assert_eq!(g.index_of(1.0), Some(3));
    }
}
