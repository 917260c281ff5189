use std::fmt;
use std::sync::Arc;

use statrs::distribution::{ContinuousCDF, Normal};

use super::estimate::PolicyStats;
use super::policy::{ControlPolicy, PathView};
use super::simulate::simulate_paths;
use crate::error::{Error, Result};
use crate::gcore::{TimeGrid, VolatilityBand};
use crate::integrand::{Coefficient, Integrand, Observation};

pub type CylinderFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Which increments an m-step cylinder reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    /// `W_{jT/m} − W_{(j−1)T/m}`
    OnDriver,
    /// `X_{jT/m} − X_{(j−1)T/m}`
    OnIntegral,
}

/// `h = Σ φᵢ(Δ₁, …, Δᵢ) 1_{(iT/m, (i+1)T/m]}` with `c ≤ φᵢ ≤ C`.
///
/// Increments are passed oldest first; `φ₀` gets an empty slice.
#[derive(Clone)]
pub struct VolatilityCylinder {
    horizon: f64,
    kind: BaseKind,
    coefs: Vec<CylinderFn>,
    lipschitz: Option<Vec<f64>>,
    lo: f64,
    hi: f64,
}

impl fmt::Debug for VolatilityCylinder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VolatilityCylinder")
            .field("horizon", &self.horizon)
            .field("kind", &self.kind)
            .field("m", &self.coefs.len())
            .field("lipschitz", &self.lipschitz)
            .field("bounds", &(self.lo, self.hi))
            .finish()
    }
}

impl VolatilityCylinder {
    pub fn new(horizon: f64, kind: BaseKind, coefs: Vec<CylinderFn>, lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0) || !(lo <= hi) {
            return Err(Error::InvalidReparam(format!("need 0 < c <= C, got c={lo}, C={hi}")));
        }
        if coefs.is_empty() || !(horizon > 0.0) {
            return Err(Error::InvalidReparam("need at least one cell and T > 0".into()));
        }
        Ok(Self { horizon, kind, coefs, lipschitz: None, lo, hi })
    }

    /// Lipschitz constants `Lᵢ` of each `φᵢ` (`L₀` is ignored).
    pub fn with_lipschitz(mut self, lipschitz: Vec<f64>) -> Result<Self> {
        if lipschitz.len() != self.coefs.len() || lipschitz.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidReparam("one nonnegative Lipschitz constant per cell".into()));
        }
        self.lipschitz = Some(lipschitz);
        Ok(self)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn kind(&self) -> BaseKind {
        self.kind
    }

    pub fn m(&self) -> usize {
        self.coefs.len()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn lipschitz(&self) -> Option<&[f64]> {
        self.lipschitz.as_deref()
    }

    pub fn knots(&self) -> Vec<f64> {
        let m = self.m();
        (0..=m).map(|j| self.horizon * j as f64 / m as f64).collect()
    }

    pub fn eval(&self, i: usize, increments: &[f64]) -> f64 {
        (self.coefs[i])(increments)
    }

    /// The `i` increments this cylinder reads, from a path that has reached
    /// `iT/m`.
    pub fn increments(&self, path: &PathView, i: usize) -> Option<Vec<f64>> {
        let m = self.m() as f64;
        let at = |j: usize| {
            let t = self.horizon * j as f64 / m;
            match self.kind {
                BaseKind::OnDriver => path.w_at(t),
                BaseKind::OnIntegral => path.observe(&Observation::x(t)),
            }
        };
        let mut out = Vec::with_capacity(i);
        let mut prev = 0.0;
        for j in 1..=i {
            let v = at(j)?;
            out.push(v - prev);
            prev = v;
        }
        Some(out)
    }

    /// Value of the coefficient in force on the step starting at the end of
    /// `path`.
    pub fn value_on(&self, path: &PathView) -> Result<f64> {
        let m = self.m();
        let u = crate::gcore::snap(path.t() * m as f64 / self.horizon);
        let i = (u.floor() as usize).min(m - 1);
        let start = self.horizon * i as f64 / m as f64;
        let incr = self.increments(path, i).ok_or(Error::NotOnGrid(start))?;
        Ok(self.eval(i, &incr))
    }

    /// Feedback policy with variance rate `φᵢ²`.
    pub fn policy(&self, id: impl Into<String>) -> ControlPolicy {
        let me = self.clone();
        ControlPolicy::feedback(id, self.knots(), move |_, path| Ok(me.value_on(path)?.powi(2)))
    }

    /// `Σ φᵢ(ΔX) 1_{(iT/m, (i+1)T/m]}` as an integrand reading `X` at the
    /// coarse knots.
    pub fn as_integrand(&self) -> Result<Integrand> {
        if self.kind != BaseKind::OnIntegral {
            return Err(Error::UnsupportedIntegrand("integrands read X, not W".into()));
        }
        let knots = self.knots();
        let coefs = (0..self.m())
            .map(|i| {
                if i == 0 {
                    return Coefficient::Constant(self.eval(0, &[]));
                }
                let reads = knots[1..=i].iter().map(|&t| Observation::x(t)).collect();
                let f = self.coefs[i].clone();
                Coefficient::observed(reads, move |xs: &[f64]| {
                    let mut prev = 0.0;
                    let incr: Vec<f64> = xs
                        .iter()
                        .map(|&x| {
                            let d = x - prev;
                            prev = x;
                            d
                        })
                        .collect();
                    f(&incr)
                })
            })
            .collect();
        Integrand::new(knots, coefs, self.hi.max(self.lo.abs()))
    }
}

/// Coefficients of the mean-square recursion: `A[i][j]` for `j < i` and
/// `B[i][j]` for `j ≤ i`, from the Lipschitz constants `L` (`L₀` unused).
pub fn bound_coefficients(horizon: f64, lipschitz: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let m = lipschitz.len();
    let mut a: Vec<Vec<f64>> = vec![Vec::new(); m];
    for i in 1..m {
        let c = 2.0 * horizon * lipschitz[i].powi(2);
        let row = (0..i)
            .map(|j| {
                if j + 1 == i {
                    c
                } else {
                    c * ((j + 1..i).map(|k| a[k][j]).sum::<f64>() + 1.0)
                }
            })
            .collect();
        a[i] = row;
    }
    let b = (0..m)
        .map(|i| (0..=i).map(|j| if j == i { 2.0 } else { 2.0 * a[i][j] }).collect())
        .collect();
    (a, b)
}

/// Output of [`feedback_reparameterize`].
#[derive(Debug, Clone)]
pub struct Reparameterization {
    /// `ψᵢ` as functions of `X`-increments.
    pub cylinder: VolatilityCylinder,
    pub eps: Vec<f64>,
    pub radius: f64,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Reparameterization {
    pub fn policy(&self) -> ControlPolicy {
        self.cylinder.policy("reparameterized")
    }

    /// `Σⱼ Bⁱⱼ εⱼ²`, skipping `εⱼ = 0`.
    pub fn bound(&self, i: usize) -> f64 {
        self.b[i]
            .iter()
            .zip(&self.eps)
            .filter(|(_, e)| **e > 0.0)
            .map(|(b, e)| b * e * e)
            .sum()
    }

    /// Monte Carlo mean-square gaps `E|ξ̂ᵢ − ξᵢ|²` between the base, driven
    /// by `W`, and the rebuilt policy, driven by its own `X̂`, on shared
    /// normals.
    pub fn gap_stats(
        &self,
        band: &VolatilityBand,
        base: &VolatilityCylinder,
        grid: &TimeGrid,
        n_paths: usize,
        seed: u64,
    ) -> Result<Vec<GapStats>> {
        let m = base.m();
        let knots = base.knots();
        let b0 = simulate_paths(band, grid, &base.policy("base"), n_paths, seed)?;
        let b1 = simulate_paths(band, grid, &self.policy(), n_paths, seed)?;
        (0..m)
            .map(|i| {
                let samples: Vec<f64> = (0..n_paths)
                    .map(|p| {
                        let v0 = b0.path(p);
                        let v1 = b1.path(p);
                        let h0 = base.eval(i, &base.increments(&v0.upto(knots[i]).unwrap(), i).unwrap());
                        let y = self.cylinder.increments(&v1.upto(knots[i]).unwrap(), i).unwrap();
                        (self.cylinder.eval(i, &y) - h0).powi(2)
                    })
                    .collect();
                let s = PolicyStats::from_samples(&samples);
                Ok(GapStats { index: i, mean: s.mean, stderr: s.stderr, bound: self.bound(i) })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapStats {
    pub index: usize,
    pub mean: f64,
    pub stderr: f64,
    pub bound: f64,
}

impl GapStats {
    pub fn passes(&self) -> bool {
        self.mean <= self.bound + 3.0 * self.stderr
    }
}

/// Rewrites a control driven by `W`-increments as feedback on the increments
/// of its own controlled integral.
///
/// With `ΔX = ψ ΔW` on each coarse cell, `ΔW = ΔX/ψ` is recovered exactly;
/// truncating `ΔX` at a radius `R` makes each `ψᵢ` Lipschitz, and `R` is taken
/// large enough that the truncation costs less than `min εᵢ²` in mean square.
/// A base already on `X` is returned as is.
pub fn feedback_reparameterize(base: &VolatilityCylinder, eps: &[f64]) -> Result<Reparameterization> {
    let m = base.m();
    if eps.len() != m || eps.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::InvalidReparam("one nonnegative tolerance per cell".into()));
    }
    let lphi = base
        .lipschitz()
        .ok_or_else(|| Error::InvalidReparam("Lipschitz constants are required".into()))?
        .to_vec();
    let horizon = base.horizon();
    let (c, cap) = base.bounds();

    if base.kind() == BaseKind::OnIntegral {
        let (a, b) = bound_coefficients(horizon, &lphi);
        return Ok(Reparameterization { cylinder: base.clone(), eps: eps.to_vec(), radius: f64::INFINITY, a, b });
    }

    let radius = if m == 1 {
        0.0
    } else {
        let min_eps2 = eps[1..].iter().map(|e| e * e).fold(f64::INFINITY, f64::min);
        if min_eps2 == 0.0 {
            return Err(Error::InvalidReparam("tolerances must be positive for a base on W".into()));
        }
        let spread = (cap - c).powi(2) * (m - 1) as f64;
        let p = (min_eps2 / spread.max(f64::MIN_POSITIVE)).min(1.0);
        let sd = cap * (horizon / m as f64).sqrt();
        let z = Normal::standard().inverse_cdf(1.0 - p / 2.0);
        (sd * z).max(0.0)
    };

    let mut lpsi = vec![0.0; m];
    for i in 1..m {
        let s: f64 = (0..i)
            .map(|j| {
                let r = if lpsi[j] == 0.0 { 0.0 } else { radius * lpsi[j] / (c * c) };
                (1.0 / c + r).powi(2)
            })
            .sum();
        lpsi[i] = lphi[i] * s.sqrt();
    }

    let coefs: Vec<CylinderFn> = (0..m)
        .map(|i| {
            let base = base.clone();
            Arc::new(move |y: &[f64]| rebuild(&base, radius, y)[i]) as CylinderFn
        })
        .collect();
    let cylinder = VolatilityCylinder::new(horizon, BaseKind::OnIntegral, coefs, c, cap)?
        .with_lipschitz(lpsi.clone())?;
    let (a, b) = bound_coefficients(horizon, &lpsi);
    Ok(Reparameterization { cylinder, eps: eps.to_vec(), radius, a, b })
}

/// `ψ₀, …, ψ_k` along the `X`-increments `y` (length `k`).
fn rebuild(base: &VolatilityCylinder, radius: f64, y: &[f64]) -> Vec<f64> {
    let (c, cap) = base.bounds();
    let mut psi = Vec::with_capacity(y.len() + 1);
    let mut w = Vec::with_capacity(y.len());
    psi.push(base.eval(0, &[]).clamp(c, cap));
    for (j, &yj) in y.iter().enumerate() {
        w.push(yj.clamp(-radius, radius) / psi[j]);
        psi.push(base.eval(j + 1, &w).clamp(c, cap));
    }
    psi
}
