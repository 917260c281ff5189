//! Adapted simple integrands `η_t = Σ ξᵢ 1_{(tᵢ, tᵢ₊₁]}(t)`.
//!
//! A coefficient `ξᵢ` is either a constant or a function of observed values of
//! the controlled integral `X` or its quadratic variation `Q` at times `≤ tᵢ`.
//! The dynamic-programming solver sees those observations as frozen mark
//! coordinates; the Monte Carlo engine reads them from the simulated path.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gcore::{snap, TIME_TOL};

/// A state coordinate: the controlled integral `X` (the canonical `B`) or its
/// quadratic variation `Q = ⟨B⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Q,
}

/// The value of `axis` at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub time: f64,
    pub axis: Axis,
}

impl Observation {
    pub fn x(time: f64) -> Self {
        Self { time, axis: Axis::X }
    }

    pub fn q(time: f64) -> Self {
        Self { time, axis: Axis::Q }
    }

    pub(crate) fn same_as(&self, other: &Observation, horizon: f64) -> bool {
        self.axis == other.axis && (self.time - other.time).abs() <= TIME_TOL * horizon
    }
}

pub type CoefficientFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    /// `map` receives the values of `reads`, in order.
    Observed { reads: Vec<Observation>, map: CoefficientFn },
}

impl Coefficient {
    pub fn observed(reads: Vec<Observation>, map: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Observed { reads, map: Arc::new(map) }
    }

    pub fn reads(&self) -> &[Observation] {
        match self {
            Coefficient::Constant(_) => &[],
            Coefficient::Observed { reads, .. } => reads,
        }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Observed { map, .. } => map(values),
        }
    }

    /// Evaluates the coefficient, resolving each read through `lookup`.
    pub fn eval_with(&self, mut lookup: impl FnMut(&Observation) -> f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Observed { reads, map } => {
                let mut buf = [0.0; 8];
                if reads.len() <= buf.len() {
                    for (slot, r) in buf.iter_mut().zip(reads) {
                        *slot = lookup(r);
                    }
                    map(&buf[..reads.len()])
                } else {
                    let values: Vec<f64> = reads.iter().map(lookup).collect();
                    map(&values)
                }
            }
        }
    }

    fn map_value(&self, f: Arc<dyn Fn(f64) -> f64 + Send + Sync>) -> Self {
        match self {
            Coefficient::Constant(c) => Coefficient::Constant(f(*c)),
            Coefficient::Observed { reads, map } => {
                let map = map.clone();
                Coefficient::Observed {
                    reads: reads.clone(),
                    map: Arc::new(move |v: &[f64]| f(map(v))),
                }
            }
        }
    }

    fn zip_with(&self, other: &Coefficient, f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>) -> Self {
        match (self, other) {
            (Coefficient::Constant(a), Coefficient::Constant(b)) => Coefficient::Constant(f(*a, *b)),
            _ => {
                let left = self.clone();
                let right = other.clone();
                let split = left.reads().len();
                let mut reads = left.reads().to_vec();
                reads.extend_from_slice(right.reads());
                Coefficient::Observed {
                    reads,
                    map: Arc::new(move |v: &[f64]| {
                        f(left.eval(&v[..split]), right.eval(&v[split..]))
                    }),
                }
            }
        }
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Observed { reads, .. } => {
                f.debug_struct("Observed").field("reads", reads).finish_non_exhaustive()
            }
        }
    }
}

/// Piecewise-constant adapted integrand on `(tᵢ, tᵢ₊₁]`.
#[derive(Debug, Clone)]
pub struct Integrand {
    breakpoints: Vec<f64>,
    coefficients: Vec<Coefficient>,
    bound: f64,
    lipschitz: Option<f64>,
}

impl Integrand {
    /// `breakpoints` are `0 = t₀ < … < t_N = T`; `coefficients` has length `N`.
    /// `bound` is an upper bound on `|η|`.
    pub fn new(breakpoints: Vec<f64>, coefficients: Vec<Coefficient>, bound: f64) -> Result<Self> {
        if breakpoints.len() < 2 || coefficients.len() != breakpoints.len() - 1 {
            return Err(Error::UnsupportedIntegrand(format!(
                "{} breakpoints for {} coefficients",
                breakpoints.len(),
                coefficients.len()
            )));
        }
        if breakpoints[0] != 0.0 || breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::UnsupportedIntegrand(
                "breakpoints must start at 0 and increase strictly".into(),
            ));
        }
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(Error::UnsupportedIntegrand(format!("bound {bound} must be finite")));
        }
        let horizon = *breakpoints.last().unwrap();
        let tol = TIME_TOL * horizon;
        for (i, c) in coefficients.iter().enumerate() {
            for r in c.reads() {
                if r.time < -tol || r.time > breakpoints[i] + tol {
                    return Err(Error::UnsupportedIntegrand(format!(
                        "coefficient {i} on ({}, {}] reads {:?} at t = {}, which is not adapted",
                        breakpoints[i],
                        breakpoints[i + 1],
                        r.axis,
                        r.time
                    )));
                }
            }
            if let Coefficient::Constant(v) = c {
                if v.abs() > bound * (1.0 + 1e-12) {
                    return Err(Error::UnsupportedIntegrand(format!(
                        "constant coefficient {v} exceeds declared bound {bound}"
                    )));
                }
            }
        }
        Ok(Self { breakpoints, coefficients, bound, lipschitz: None })
    }

    pub fn with_lipschitz(mut self, lipschitz: f64) -> Self {
        self.lipschitz = Some(lipschitz);
        self
    }

    pub fn constant(horizon: f64, value: f64) -> Result<Self> {
        Self::new(vec![0.0, horizon], vec![Coefficient::Constant(value)], value.abs())
    }

    /// Deterministic step function taking `values[i]` on `(tᵢ, tᵢ₊₁]`.
    pub fn steps(breakpoints: Vec<f64>, values: &[f64]) -> Result<Self> {
        let bound = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Self::new(breakpoints, values.iter().map(|&v| Coefficient::Constant(v)).collect(), bound)
    }

    pub fn zero(horizon: f64) -> Result<Self> {
        Self::constant(horizon, 0.0)
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn interior_breakpoints(&self) -> &[f64] {
        &self.breakpoints[1..self.breakpoints.len() - 1]
    }

    pub fn coefficients(&self) -> &[Coefficient] {
        &self.coefficients
    }

    pub fn coefficient(&self, i: usize) -> &Coefficient {
        &self.coefficients[i]
    }

    pub fn cells(&self) -> usize {
        self.coefficients.len()
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn is_deterministic(&self) -> bool {
        self.coefficients.iter().all(|c| matches!(c, Coefficient::Constant(_)))
    }

    /// Index of the cell `(tᵢ, tᵢ₊₁]` containing `(t, t + dt]` for small `dt`.
    pub fn cell_after(&self, t: f64) -> usize {
        let tol = TIME_TOL * self.horizon();
        let i = self.breakpoints.partition_point(|&b| b <= t + tol);
        i.saturating_sub(1).min(self.cells() - 1)
    }

    /// Distinct observations at strictly positive times, sorted by time.
    /// Observations at `t = 0` are always `0` (`X₀ = Q₀ = 0`).
    pub fn observations(&self) -> Vec<Observation> {
        let horizon = self.horizon();
        let mut out: Vec<Observation> = Vec::new();
        for r in self.coefficients.iter().flat_map(|c| c.reads()) {
            if r.time <= TIME_TOL * horizon {
                continue;
            }
            if !out.iter().any(|o| o.same_as(r, horizon)) {
                out.push(*r);
            }
        }
        out.sort_by(|a, b| a.time.total_cmp(&b.time));
        out
    }

    /// Smallest `m ≤ 4096` such that every breakpoint is a multiple of `T/m`.
    pub fn partition_count(&self) -> Option<usize> {
        let horizon = self.horizon();
        (1..=4096).find(|&m| {
            self.breakpoints.iter().all(|&b| {
                let u = b * m as f64 / horizon;
                snap(u) == u.round()
            })
        })
    }

    /// Applies `f` to every coefficient value.
    pub fn map(&self, bound: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let f: Arc<dyn Fn(f64) -> f64 + Send + Sync> = Arc::new(f);
        let coefficients = self.coefficients.iter().map(|c| c.map_value(f.clone())).collect();
        Self::new(self.breakpoints.clone(), coefficients, bound)
    }

    /// `λη`.
    pub fn scale(&self, lambda: f64) -> Result<Self> {
        self.map(self.bound * lambda.abs(), move |v| lambda * v)
    }

    /// `|η|`.
    pub fn abs(&self) -> Result<Self> {
        self.map(self.bound, f64::abs)
    }

    /// Pointwise `f(η, ζ)` on the merged partition.
    pub fn zip_with(
        &self,
        other: &Integrand,
        bound: f64,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let horizon = self.horizon();
        if (other.horizon() - horizon).abs() > TIME_TOL * horizon {
            return Err(Error::MismatchedPartition(format!(
                "horizons {horizon} and {} differ",
                other.horizon()
            )));
        }
        let tol = TIME_TOL * horizon;
        let mut merged: Vec<f64> =
            self.breakpoints.iter().chain(other.breakpoints.iter()).copied().collect();
        merged.sort_by(f64::total_cmp);
        merged.dedup_by(|b, a| (*b - *a).abs() <= tol);
        *merged.last_mut().unwrap() = horizon;
        let f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync> = Arc::new(f);
        let coefficients = merged
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let a = &self.coefficients[self.cell_after(mid)];
                let b = &other.coefficients[other.cell_after(mid)];
                a.zip_with(b, f.clone())
            })
            .collect();
        Self::new(merged, coefficients, bound)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_lookup_is_left_endpoint() {
        let eta = Integrand::steps(vec![0.0, 0.5, 1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(eta.cell_after(0.0), 0);
        assert_eq!(eta.cell_after(0.49), 0);
        assert_eq!(eta.cell_after(0.5), 1);
        assert_eq!(eta.cell_after(0.5 - 1e-15), 1);
        assert_eq!(eta.cell_after(1.0), 1);
    }

    #[test]
    fn non_adapted_read_rejected() {
        let c = Coefficient::observed(vec![Observation::q(0.75)], |v| v[0]);
        let err = Integrand::new(vec![0.0, 0.5, 1.0], vec![Coefficient::Constant(0.0), c], 2.0);
        assert!(err.is_err());
    }

    #[test]
    fn partition_count_detects_uniform_grid() {
        let eta = Integrand::steps(vec![0.0, 0.5, 1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(eta.partition_count(), Some(2));
        let eta = Integrand::steps(vec![0.0, 1.0 / 3.0, 1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(eta.partition_count(), Some(3));
        assert_eq!(Integrand::constant(2.0, 1.0).unwrap().partition_count(), Some(1));
    }

    #[test]
    fn zip_merges_partitions_and_reads() {
        let a = Integrand::steps(vec![0.0, 0.5, 1.0], &[1.0, 2.0]).unwrap();
        let b = Integrand::new(
            vec![0.0, 0.25, 1.0],
            vec![
                Coefficient::Constant(3.0),
                Coefficient::observed(vec![Observation::x(0.25)], |v| v[0]),
            ],
            10.0,
        )
        .unwrap();
        let d = a.zip_with(&b, 12.0, |x, y| x - y).unwrap();
        assert_eq!(d.breakpoints(), &[0.0, 0.25, 0.5, 1.0]);
        assert_eq!(d.coefficient(0).eval(&[]), -2.0);
        assert_eq!(d.coefficient(2).eval(&[4.0]), -2.0);
        assert_eq!(d.observations().len(), 1);
    }

    #[test]
    fn scale_and_abs() {
        let eta = Integrand::steps(vec![0.0, 0.5, 1.0], &[-1.0, 2.0]).unwrap();
        let s = eta.scale(3.0).unwrap();
        assert_eq!(s.coefficient(0).eval(&[]), -3.0);
        assert_eq!(s.bound(), 6.0);
        assert_eq!(eta.abs().unwrap().coefficient(0).eval(&[]), 1.0);
    }
}
