use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gcore::TIME_TOL;
use crate::integrand::{Axis, Observation};

/// A simulated path up to the current knot: `knots`, `W`, `X`, `Q` all end at
/// the same index. A policy only ever sees the past.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    knots: &'a [f64],
    w: &'a [f64],
    x: &'a [f64],
    q: &'a [f64],
}

impl<'a> PathView<'a> {
    pub fn new(knots: &'a [f64], w: &'a [f64], x: &'a [f64], q: &'a [f64]) -> Self {
        let n = w.len();
        assert!(x.len() == n && q.len() == n && knots.len() >= n && n > 0);
        Self { knots: &knots[..n], w, x, q }
    }

    pub fn k(&self) -> usize {
        self.w.len() - 1
    }

    pub fn t(&self) -> f64 {
        self.knots[self.k()]
    }

    pub fn w(&self) -> f64 {
        self.w[self.k()]
    }

    pub fn x(&self) -> f64 {
        self.x[self.k()]
    }

    pub fn q(&self) -> f64 {
        self.q[self.k()]
    }

    pub fn knots(&self) -> &'a [f64] {
        self.knots
    }

    pub fn w_series(&self) -> &'a [f64] {
        self.w
    }

    pub fn x_series(&self) -> &'a [f64] {
        self.x
    }

    pub fn q_series(&self) -> &'a [f64] {
        self.q
    }

    fn index_of(&self, t: f64) -> Option<usize> {
        let horizon = *self.knots.last().unwrap();
        let tol = TIME_TOL * horizon.max(1.0);
        let i = self.knots.partition_point(|&k| k < t - tol);
        (i < self.knots.len() && (self.knots[i] - t).abs() <= tol).then_some(i)
    }

    /// Value of `obs` if its time is a knot of the visible history.
    pub fn observe(&self, obs: &Observation) -> Option<f64> {
        if obs.time.abs() <= TIME_TOL {
            return Some(0.0);
        }
        let i = self.index_of(obs.time)?;
        Some(match obs.axis {
            Axis::X => self.x[i],
            Axis::Q => self.q[i],
        })
    }

    pub fn w_at(&self, t: f64) -> Option<f64> {
        self.index_of(t).map(|i| self.w[i])
    }

    /// The history up to knot `t`.
    pub fn upto(&self, t: f64) -> Option<PathView<'a>> {
        let i = self.index_of(t)?;
        Some(Self {
            knots: &self.knots[..=i],
            w: &self.w[..=i],
            x: &self.x[..=i],
            q: &self.q[..=i],
        })
    }
}

pub type FeedbackRule = Arc<dyn Fn(f64, &PathView) -> Result<f64> + Send + Sync>;

/// Adapted variance-rate control `σ²_t = h_t²`, piecewise constant between its
/// breakpoints.
#[derive(Clone)]
pub enum ControlPolicy {
    Constant(f64),
    /// `levels[i]` on `(tᵢ, tᵢ₊₁]`.
    Step { breakpoints: Vec<f64>, levels: Vec<f64> },
    /// `rule(t, history)` on the step starting at knot `t`.
    Feedback { id: String, breakpoints: Vec<f64>, rule: FeedbackRule },
}

impl fmt::Debug for ControlPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ControlPolicy({})", self.id())
    }
}

impl ControlPolicy {
    pub fn step(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != levels.len() + 1
            || breakpoints.first() != Some(&0.0)
            || breakpoints.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::MismatchedPartition(
                "step policy needs increasing breakpoints from 0 and one level per cell".into(),
            ));
        }
        Ok(ControlPolicy::Step { breakpoints, levels })
    }

    /// Deterministic policy alternating `first, second, first, …` on the `n`
    /// equal cells of `[0, T]`.
    pub fn alternating(horizon: f64, n: usize, first: f64, second: f64) -> Result<Self> {
        let breakpoints = (0..=n).map(|i| horizon * i as f64 / n as f64).collect();
        let levels = (0..n).map(|i| if i % 2 == 0 { first } else { second }).collect();
        Self::step(breakpoints, levels)
    }

    pub fn feedback(
        id: impl Into<String>,
        breakpoints: Vec<f64>,
        rule: impl Fn(f64, &PathView) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        ControlPolicy::Feedback { id: id.into(), breakpoints, rule: Arc::new(rule) }
    }

    pub fn id(&self) -> String {
        match self {
            ControlPolicy::Constant(s) => format!("constant({s})"),
            ControlPolicy::Step { levels, .. } => format!("step({} cells)", levels.len()),
            ControlPolicy::Feedback { id, .. } => id.clone(),
        }
    }

    /// Times at which the policy may change value.
    pub fn breakpoints(&self) -> &[f64] {
        match self {
            ControlPolicy::Constant(_) => &[],
            ControlPolicy::Step { breakpoints, .. } => breakpoints,
            ControlPolicy::Feedback { breakpoints, .. } => breakpoints,
        }
    }

    /// Variance rate on the step starting at the last knot of `path`.
    pub fn sigma_sq(&self, path: &PathView) -> Result<f64> {
        let t = path.t();
        match self {
            ControlPolicy::Constant(s) => Ok(*s),
            ControlPolicy::Step { breakpoints, levels } => {
                let horizon = *breakpoints.last().unwrap();
                let i = breakpoints.partition_point(|&b| b <= t + TIME_TOL * horizon);
                Ok(levels[i.saturating_sub(1).min(levels.len() - 1)])
            }
            ControlPolicy::Feedback { rule, .. } => rule(t, path),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_observes_history_only() {
        let knots = [0.0, 0.5, 1.0];
        let (w, x, q) = ([0.0, 0.3, 0.1], [0.0, 0.4, 0.2], [0.0, 0.75, 1.5]);
        let v = PathView::new(&knots, &w[..2], &x[..2], &q[..2]);
        assert_eq!(v.t(), 0.5);
        assert_eq!(v.observe(&Observation::q(0.5)), Some(0.75));
        assert_eq!(v.observe(&Observation::x(1.0)), None);
        assert_eq!(v.observe(&Observation::x(0.0)), Some(0.0));
        assert_eq!(v.upto(0.0).unwrap().k(), 0);
    }

    #[test]
    fn step_policy_uses_cell_to_the_right() {
        let p = ControlPolicy::alternating(1.0, 2, 2.0, 1.0).unwrap();
        let knots = [0.0, 0.5, 1.0];
        let z = [0.0; 3];
        assert_eq!(p.sigma_sq(&PathView::new(&knots, &z[..1], &z[..1], &z[..1])).unwrap(), 2.0);
        assert_eq!(p.sigma_sq(&PathView::new(&knots, &z[..2], &z[..2], &z[..2])).unwrap(), 1.0);
    }
}
