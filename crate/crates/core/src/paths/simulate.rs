use std::io::Write;

use rayon::prelude::*;

use super::policy::{ControlPolicy, PathView};
use super::rng::PathRng;
use crate::error::{Error, Result};
use crate::gcore::{SignProcess, TimeGrid, VolatilityBand, TIME_TOL};
use crate::integrand::Integrand;

/// Sampled `W`, `X = ∫ h dW` and `Q = ∫ h² ds` at the grid knots, path-major.
#[derive(Debug, Clone)]
pub struct PathBundle {
    grid: TimeGrid,
    policy_id: String,
    seed: u64,
    n_paths: usize,
    w: Vec<f64>,
    x: Vec<f64>,
    q: Vec<f64>,
}

impl PathBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn policy_id(&self) -> &str {
        &self.policy_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    fn width(&self) -> usize {
        self.grid.knots().len()
    }

    /// The whole of path `p`.
    pub fn path(&self, p: usize) -> PathView<'_> {
        let n = self.width();
        let r = p * n..(p + 1) * n;
        PathView::new(self.grid.knots(), &self.w[r.clone()], &self.x[r.clone()], &self.q[r])
    }

    pub fn terminal_x(&self) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.path(p).x()).collect()
    }

    pub fn terminal_q(&self) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.path(p).q()).collect()
    }

    /// Smallest and largest realized `ΔQ/Δt` over all steps and paths.
    pub fn qv_rate_range(&self) -> (f64, f64) {
        let knots = self.grid.knots();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in 0..self.n_paths {
            let q = self.path(p).q_series();
            for k in 0..knots.len() - 1 {
                let r = (q[k + 1] - q[k]) / (knots[k + 1] - knots[k]);
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        (lo, hi)
    }

    /// CSV dump: a `#` header with seed and policy id, then `t,W,X,Q` rows,
    /// path after path.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "# seed={} policy={} paths={}", self.seed, self.policy_id, self.n_paths)?;
        writeln!(out, "t,W,X,Q")?;
        for p in 0..self.n_paths {
            let v = self.path(p);
            for (k, t) in self.grid.knots().iter().enumerate() {
                writeln!(
                    out,
                    "{t:.12e},{:.12e},{:.12e},{:.12e}",
                    v.w_series()[k],
                    v.x_series()[k],
                    v.q_series()[k]
                )?;
            }
        }
        Ok(())
    }
}

/// Euler scheme `X_{k+1} = X_k + √σ²_k ΔW_k`, `Q_{k+1} = Q_k + σ²_k Δt`, with
/// `σ²_k` read from `policy` on the realized history. Exact in law per step
/// because the policy is constant on every grid step.
pub fn simulate_paths(
    band: &VolatilityBand,
    grid: &TimeGrid,
    policy: &ControlPolicy,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    let horizon = grid.horizon();
    let inside: Vec<f64> = policy
        .breakpoints()
        .iter()
        .copied()
        .filter(|&b| b <= horizon * (1.0 + TIME_TOL))
        .collect();
    grid.check_aligned(&inside)?;
    let (lo, hi) = band.range(false);
    let slack = 1e-12 * hi;
    let knots = grid.knots();
    let width = knots.len();

    let paths: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = PathRng::new(seed, p as u64);
            let mut w = Vec::with_capacity(width);
            let mut x = Vec::with_capacity(width);
            let mut q = Vec::with_capacity(width);
            w.push(0.0);
            x.push(0.0);
            q.push(0.0);
            for k in 0..width - 1 {
                let view = PathView::new(knots, &w, &x, &q);
                let s = policy.sigma_sq(&view)?;
                if !(s >= lo - slack && s <= hi + slack) {
                    return Err(Error::PolicyOutOfBand { t: knots[k], value: s, lo, hi });
                }
                let dt = knots[k + 1] - knots[k];
                let dw = dt.sqrt() * rng.normal();
                w.push(w[k] + dw);
                x.push(x[k] + s.sqrt() * dw);
                q.push(q[k] + s * dt);
            }
            Ok((w, x, q))
        })
        .collect::<Result<_>>()?;

    let mut bundle = PathBundle {
        grid: grid.clone(),
        policy_id: policy.id(),
        seed,
        n_paths,
        w: Vec::with_capacity(n_paths * width),
        x: Vec::with_capacity(n_paths * width),
        q: Vec::with_capacity(n_paths * width),
    };
    for (w, x, q) in paths {
        bundle.w.extend(w);
        bundle.x.extend(x);
        bundle.q.extend(q);
    }
    Ok(bundle)
}

/// What an integrand is integrated against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    /// `d⟨B⟩`
    Qv,
    /// `ds`
    Time,
    /// `δₙ(s) d⟨B⟩`
    SignedQv(SignProcess),
    /// `δₙ(s) ds`
    SignedTime(SignProcess),
}

impl Measure {
    fn sign(&self) -> Option<&SignProcess> {
        match self {
            Measure::SignedQv(sp) | Measure::SignedTime(sp) => Some(sp),
            _ => None,
        }
    }
}

/// Left-endpoint Riemann sum of `η` against `measure` along one full path.
///
/// The grid of `path` must contain every breakpoint of `eta` (and the cells of
/// the sign process); see [`integrate`] for the checked version.
pub fn path_integral(path: &PathView, eta: &Integrand, measure: Measure) -> f64 {
    let knots = path.knots();
    let q = path.q_series();
    let mut total = 0.0;
    let mut cell = usize::MAX;
    let mut coef = 0.0;
    for k in 0..knots.len() - 1 {
        let t = knots[k];
        let i = eta.cell_after(t);
        if i != cell {
            cell = i;
            coef = eta
                .coefficient(i)
                .eval_with(|o| path.observe(o).expect("integrand read off the path grid"));
        }
        let dm = match measure {
            Measure::Qv | Measure::SignedQv(_) => q[k + 1] - q[k],
            Measure::Time | Measure::SignedTime(_) => knots[k + 1] - knots[k],
        };
        let sign = measure.sign().map_or(1.0, |sp| sp.sign_after(t) as f64);
        total += coef * sign * dm;
    }
    total
}

/// Per-path integrals of `eta` against `measure`.
pub fn integrate(bundle: &PathBundle, eta: &Integrand, measure: Measure) -> Result<Vec<f64>> {
    let grid = bundle.grid();
    grid.check_aligned(eta.breakpoints())?;
    for o in eta.observations() {
        grid.check_aligned(&[o.time])?;
    }
    if let Some(sp) = measure.sign() {
        grid.check_aligned(&sp.knots())?;
    }
    Ok((0..bundle.n_paths())
        .into_par_iter()
        .map(|p| path_integral(&bundle.path(p), eta, measure))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band12() -> VolatilityBand {
        VolatilityBand::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn constant_policy_qv_is_exact() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let b = simulate_paths(&band12(), &grid, &ControlPolicy::Constant(2.0), 50, 1).unwrap();
        for q in b.terminal_q() {
            assert!((q - 2.0).abs() < 1e-14);
        }
        let (lo, hi) = b.qv_rate_range();
        assert!((lo - 2.0).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_band_policy_is_hard_failure() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let err = simulate_paths(&band12(), &grid, &ControlPolicy::Constant(2.5), 3, 1);
        assert!(matches!(err, Err(Error::PolicyOutOfBand { .. })));
    }

    #[test]
    fn unaligned_grid_rejected() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let p = ControlPolicy::alternating(1.0, 2, 2.0, 1.0).unwrap();
        assert!(matches!(simulate_paths(&band12(), &grid, &p, 3, 1), Err(Error::UnalignedGrid(_))));
    }

    #[test]
    fn integrals_of_constant_one() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let b = simulate_paths(&band12(), &grid, &ControlPolicy::Constant(2.0), 10, 3).unwrap();
        let one = Integrand::constant(1.0, 1.0).unwrap();
        for v in integrate(&b, &one, Measure::Time).unwrap() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        for v in integrate(&b, &one, Measure::Qv).unwrap() {
            assert!((v - 2.0).abs() < 1e-14);
        }
        let sp = SignProcess::new(2, 1.0).unwrap();
        for v in integrate(&b, &one, Measure::SignedQv(sp)).unwrap() {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let b = simulate_paths(&band12(), &grid, &ControlPolicy::Constant(1.5), 2, 9).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# seed=9 policy=constant(1.5) paths=2");
        assert_eq!(lines[1], "t,W,X,Q");
        assert_eq!(lines.len(), 2 + 2 * 3);
    }
}
