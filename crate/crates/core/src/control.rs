//! Sublinear expectations by backward dynamic programming.
//!
//! `Ê[F] = sup_h E[F]` over adapted volatility controls `h² ∈ [σ̲², σ̄²]` is
//! computed on a state grid for the controlled integral `X`, its quadratic
//! variation `Q`, and up to two frozen marks (copies of `X` or `Q` at fixed
//! times). One backward step is
//!
//! ```text
//! V_k(s) = max_{σ² ∈ levels} { (α(s) + β(s)·σ²)·Δt + E_σ²[V_{k+1}(s′)] }
//! ```
//!
//! where the running reward rate `α + β·σ²` is affine in `σ²`, `X` moves by a
//! three-point stencil whose weights `σ²Δt/(2Δx²)` reproduce the variance
//! `σ²Δt` on the grid (the explicit finite-difference step for
//! `∂ₜu + G(∂ₓₓu) = 0`), and `Q` moves deterministically by `σ²Δt` with linear
//! interpolation. With `σ̄²Δt ≤ Δx²` and `σ̄²Δt ≤ ΔQ` every step is monotone
//! and affine in `σ²`, so the two band endpoints always attain the maximum.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gcore::{TimeGrid, VolatilityBand, TIME_TOL};
use crate::integrand::{Axis, Integrand, Observation};
use crate::paths::{ControlPolicy, PathView};
use crate::report::{EstimateReport, Method};

pub const MAX_MARKS: usize = 2;

/// Uniform nodes on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisGrid {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl AxisGrid {
    fn new(lo: f64, hi: f64, nodes: usize) -> Self {
        Self { lo, hi, nodes }
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.nodes - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            self.hi
        } else {
            self.lo + self.step() * i as f64
        }
    }

    /// Cell index and weight of the right node; clamps outside the range.
    fn locate(&self, v: f64) -> (usize, f64, bool) {
        let u = (v - self.lo) / self.step();
        if u <= 0.0 {
            return (0, 0.0, u < -1e-9);
        }
        let last = (self.nodes - 1) as f64;
        if u >= last {
            return (self.nodes - 1, 0.0, u > last + 1e-9);
        }
        let r = u.round();
        if (u - r).abs() <= 1e-9 {
            return (r as usize, 0.0, false);
        }
        let i = u.floor() as usize;
        (i, u - i as f64, false)
    }

    fn nearest(&self, v: f64) -> usize {
        let u = ((v - self.lo) / self.step()).round();
        u.clamp(0.0, (self.nodes - 1) as f64) as usize
    }
}

/// Which coordinates the solver carries.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpec {
    horizon: f64,
    track_x: bool,
    track_q: bool,
    marks: Vec<Observation>,
    x_grid: AxisGrid,
    q_grid: AxisGrid,
}

impl StateSpec {
    /// Default ranges: `X ∈ ±6σ̄√T` (odd node count so that `0` is a node) and
    /// `Q ∈ [0, σ̄²T]`. Marks are sorted by time and must read a tracked axis
    /// at a strictly positive time.
    pub fn new(
        band: &VolatilityBand,
        horizon: f64,
        track_x: bool,
        track_q: bool,
        marks: Vec<Observation>,
        resolution: usize,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidStateSpec(format!("horizon {horizon} must be positive")));
        }
        if resolution < 3 {
            return Err(Error::InvalidStateSpec(format!(
                "resolution {resolution} must be at least 3"
            )));
        }
        let half = 6.0 * (band.sigma_hi_sq() * horizon).sqrt();
        let x_nodes = resolution | 1;
        let spec = Self {
            horizon,
            track_x,
            track_q,
            marks,
            x_grid: AxisGrid::new(-half, half, x_nodes),
            q_grid: AxisGrid::new(0.0, band.sigma_hi_sq() * horizon, resolution),
        };
        spec.validate(band)?;
        Ok(spec.sorted())
    }

    /// Smallest spec that carries every observation `integrands` read.
    pub fn for_integrands(
        band: &VolatilityBand,
        horizon: f64,
        integrands: &[&Integrand],
        resolution: usize,
    ) -> Result<Self> {
        let mut marks: Vec<Observation> = Vec::new();
        for eta in integrands {
            for o in eta.observations() {
                if !marks.iter().any(|m| m.same_as(&o, horizon)) {
                    marks.push(o);
                }
            }
        }
        let track_x = marks.iter().any(|m| m.axis == Axis::X);
        let track_q = marks.iter().any(|m| m.axis == Axis::Q) || !track_x;
        if marks.len() > MAX_MARKS {
            return Err(Error::UnsupportedIntegrand(format!(
                "{} distinct observations; at most {MAX_MARKS} marks are supported",
                marks.len()
            )));
        }
        Self::new(band, horizon, track_x, track_q, marks, resolution)
    }

    pub fn with_x_range(mut self, band: &VolatilityBand, lo: f64, hi: f64) -> Result<Self> {
        self.x_grid = AxisGrid::new(lo, hi, self.x_grid.nodes);
        self.validate(band)?;
        Ok(self)
    }

    pub fn with_q_range(mut self, band: &VolatilityBand, lo: f64, hi: f64) -> Result<Self> {
        self.q_grid = AxisGrid::new(lo, hi, self.q_grid.nodes);
        self.validate(band)?;
        Ok(self)
    }

    /// Same ranges, new node count per axis.
    pub fn with_resolution(&self, resolution: usize) -> Result<Self> {
        if resolution < 3 {
            return Err(Error::InvalidStateSpec(format!(
                "resolution {resolution} must be at least 3"
            )));
        }
        let mut out = self.clone();
        out.x_grid.nodes = resolution | 1;
        out.q_grid.nodes = resolution;
        Ok(out)
    }

    /// Drops marks after `t`; ranges are kept so that grids line up.
    pub fn truncated(&self, t: f64) -> Self {
        let mut out = self.clone();
        out.marks.retain(|m| m.time <= t + TIME_TOL * self.horizon);
        out
    }

    fn sorted(mut self) -> Self {
        self.marks.sort_by(|a, b| a.time.total_cmp(&b.time));
        self
    }

    fn validate(&self, band: &VolatilityBand) -> Result<()> {
        if !self.track_x && !self.track_q {
            return Err(Error::InvalidStateSpec("track at least one of X and Q".into()));
        }
        if self.marks.len() > MAX_MARKS {
            return Err(Error::InvalidStateSpec(format!(
                "{} marks requested; at most {MAX_MARKS}",
                self.marks.len()
            )));
        }
        let tol = TIME_TOL * self.horizon;
        for m in &self.marks {
            if !(m.time > tol && m.time <= self.horizon + tol) {
                return Err(Error::InvalidStateSpec(format!(
                    "mark time {} outside (0, {}]",
                    m.time, self.horizon
                )));
            }
            let tracked = match m.axis {
                Axis::X => self.track_x,
                Axis::Q => self.track_q,
            };
            if !tracked {
                return Err(Error::InvalidStateSpec(format!("mark reads untracked axis {:?}", m.axis)));
            }
        }
        let x = self.x_grid;
        if !(x.lo < 0.0 && x.hi > 0.0) {
            return Err(Error::InvalidStateSpec(format!("X range [{}, {}] must contain 0", x.lo, x.hi)));
        }
        let q = self.q_grid;
        let q_cap = band.sigma_hi_sq() * self.horizon;
        if !(q.lo == 0.0 && q.hi > 0.0 && q.hi <= q_cap * (1.0 + 1e-12)) {
            return Err(Error::InvalidStateSpec(format!(
                "Q range [{}, {}] must start at 0 and stay within [0, σ̄²T = {q_cap}]",
                q.lo, q.hi
            )));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn track_x(&self) -> bool {
        self.track_x
    }

    pub fn track_q(&self) -> bool {
        self.track_q
    }

    pub fn marks(&self) -> &[Observation] {
        &self.marks
    }

    pub fn x_grid(&self) -> AxisGrid {
        self.x_grid
    }

    pub fn q_grid(&self) -> AxisGrid {
        self.q_grid
    }

    fn nx(&self) -> usize {
        if self.track_x {
            self.x_grid.nodes
        } else {
            1
        }
    }

    fn nq(&self) -> usize {
        if self.track_q {
            self.q_grid.nodes
        } else {
            1
        }
    }

    fn inner(&self) -> usize {
        self.nx() * self.nq()
    }

    fn mark_grid(&self, j: usize) -> AxisGrid {
        match self.marks[j].axis {
            Axis::X => self.x_grid,
            Axis::Q => self.q_grid,
        }
    }

    /// Number of marks whose time is `≤ t`.
    fn active_marks(&self, t: f64) -> usize {
        let tol = TIME_TOL * self.horizon;
        self.marks.iter().filter(|m| m.time <= t + tol).count()
    }

    fn layout_len(&self, active: usize) -> usize {
        (0..active).map(|j| self.mark_grid(j).nodes).product::<usize>() * self.inner()
    }

    /// How to read `obs` from a snapshot.
    pub fn resolve(&self, obs: &Observation) -> Result<ReadSource> {
        if obs.time <= TIME_TOL * self.horizon {
            return Ok(ReadSource::Zero);
        }
        self.marks
            .iter()
            .position(|m| m.same_as(obs, self.horizon))
            .map(ReadSource::Mark)
            .ok_or_else(|| {
                Error::UnsupportedIntegrand(format!(
                    "observation of {:?} at t = {} is not a mark of the state",
                    obs.axis, obs.time
                ))
            })
    }

    fn snapshot(&self, t: f64, active: usize, idx: usize) -> Snapshot {
        let inner = self.inner();
        let base = idx % inner;
        let mut outer = idx / inner;
        let nq = self.nq();
        let (ix, iq) = (base / nq, base % nq);
        let mut marks = [f64::NAN; MAX_MARKS];
        for j in (0..active).rev() {
            let g = self.mark_grid(j);
            marks[j] = g.node(outer % g.nodes);
            outer /= g.nodes;
        }
        Snapshot {
            t,
            x: if self.track_x { self.x_grid.node(ix) } else { 0.0 },
            q: if self.track_q { self.q_grid.node(iq) } else { 0.0 },
            marks,
            n_marks: active,
        }
    }
}

/// Where an observation lives in a [`Snapshot`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadSource {
    Zero,
    Mark(usize),
}

/// State at one time: current `X`, `Q` and the marks recorded so far.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub x: f64,
    pub q: f64,
    marks: [f64; MAX_MARKS],
    n_marks: usize,
}

impl Snapshot {
    pub fn new(t: f64, x: f64, q: f64, marks: &[f64]) -> Self {
        assert!(marks.len() <= MAX_MARKS, "at most {MAX_MARKS} marks");
        let mut m = [f64::NAN; MAX_MARKS];
        m[..marks.len()].copy_from_slice(marks);
        Self { t, x, q, marks: m, n_marks: marks.len() }
    }

    pub fn marks(&self) -> &[f64] {
        &self.marks[..self.n_marks]
    }

    pub fn mark(&self, j: usize) -> f64 {
        self.marks()[j]
    }

    pub fn read(&self, src: ReadSource) -> f64 {
        match src {
            ReadSource::Zero => 0.0,
            ReadSource::Mark(j) => self.mark(j),
        }
    }
}

/// Reward rate `intercept + slope·σ²` per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Affine {
    pub intercept: f64,
    pub slope: f64,
}

impl Affine {
    pub fn at(&self, sigma_sq: f64) -> f64 {
        self.intercept + self.slope * sigma_sq
    }
}

type TerminalFn = Arc<dyn Fn(&Snapshot) -> f64 + Send + Sync>;
/// Receives the left endpoint of the step and the state there.
type RunningFn = Arc<dyn Fn(f64, &Snapshot) -> Affine + Send + Sync>;

/// `F = terminal(state_T) + ∫ (α + β σ²) dt`.
#[derive(Clone)]
pub struct Functional {
    terminal: TerminalFn,
    running: Option<RunningFn>,
    breakpoints: Vec<f64>,
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Functional")
            .field("running", &self.running.is_some())
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

impl Functional {
    pub fn terminal(f: impl Fn(&Snapshot) -> f64 + Send + Sync + 'static) -> Self {
        Self { terminal: Arc::new(f), running: None, breakpoints: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::terminal(move |_| c)
    }

    /// Adds a running reward; the rate must only change form at `breakpoints`.
    pub fn with_running(
        mut self,
        breakpoints: Vec<f64>,
        f: impl Fn(f64, &Snapshot) -> Affine + Send + Sync + 'static,
    ) -> Self {
        self.running = Some(Arc::new(f));
        self.breakpoints = breakpoints;
        self
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn terminal_at(&self, s: &Snapshot) -> f64 {
        (self.terminal)(s)
    }

    pub fn running_at(&self, t: f64, s: &Snapshot) -> Affine {
        self.running.as_ref().map(|r| r(t, s)).unwrap_or_default()
    }

    /// `λF`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let terminal = self.terminal.clone();
        let running = self.running.clone();
        Self {
            terminal: Arc::new(move |s| lambda * terminal(s)),
            running: running.map(|r| -> RunningFn {
                Arc::new(move |t, s| {
                    let a = r(t, s);
                    Affine { intercept: lambda * a.intercept, slope: lambda * a.slope }
                })
            }),
            breakpoints: self.breakpoints.clone(),
        }
    }

    /// `F + G`.
    pub fn plus(&self, other: &Functional) -> Self {
        let (t1, t2) = (self.terminal.clone(), other.terminal.clone());
        let running: Option<RunningFn> = match (self.running.clone(), other.running.clone()) {
            (None, None) => None,
            (a, b) => Some(Arc::new(move |t, s| {
                let x = a.as_ref().map(|r| r(t, s)).unwrap_or_default();
                let y = b.as_ref().map(|r| r(t, s)).unwrap_or_default();
                Affine { intercept: x.intercept + y.intercept, slope: x.slope + y.slope }
            })),
        };
        let mut breakpoints = self.breakpoints.clone();
        breakpoints.extend_from_slice(&other.breakpoints);
        Self { terminal: Arc::new(move |s| t1(s) + t2(s)), running, breakpoints }
    }
}

/// `∫ rate(t, ηₜ) dt` as a functional on `spec`, with `η` read off the
/// snapshot. `extra` are further times at which `rate` may change form.
pub fn integral_functional(
    spec: &StateSpec,
    eta: &Integrand,
    extra: &[f64],
    rate: impl Fn(f64, f64) -> Affine + Send + Sync + 'static,
) -> Result<Functional> {
    let sources: Vec<Vec<ReadSource>> = eta
        .coefficients()
        .iter()
        .map(|c| c.reads().iter().map(|o| spec.resolve(o)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let mut breakpoints = eta.breakpoints().to_vec();
    breakpoints.extend_from_slice(extra);
    let eta = eta.clone();
    Ok(Functional::constant(0.0).with_running(breakpoints, move |t, s| {
        let i = eta.cell_after(t);
        let src = &sources[i];
        let v = if src.len() <= 8 {
            let mut buf = [0.0; 8];
            for (b, r) in buf.iter_mut().zip(src) {
                *b = s.read(*r);
            }
            eta.coefficient(i).eval(&buf[..src.len()])
        } else {
            let vals: Vec<f64> = src.iter().map(|r| s.read(*r)).collect();
            eta.coefficient(i).eval(&vals)
        };
        rate(t, v)
    }))
}

/// Which value slices to keep after the sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum Keep {
    Initial,
    All,
    Knots(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Number of equally spaced variance levels searched in the band (≥ 2).
    pub sigma_levels: usize,
    /// Search `[σ̲²+ε, σ̄²−ε]` instead of `[σ̲², σ̄²]` (the `G_ε` expectation).
    pub use_margin: bool,
    /// `Δt ≤ safety·Δx²/σ̄²` when `X` is tracked.
    pub cfl_safety: f64,
    pub keep: Keep,
    /// Record the maximizing level per node and return it as a policy.
    pub record_policy: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { sigma_levels: 2, use_margin: false, cfl_safety: 1.0, keep: Keep::Initial, record_policy: false }
    }
}

#[derive(Debug, Clone)]
struct Slice {
    active: usize,
    values: Vec<f64>,
}

/// Value function slices on the time grid.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    grid: TimeGrid,
    spec: StateSpec,
    slices: Vec<Option<Slice>>,
}

impl ValueGrid {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn spec(&self) -> &StateSpec {
        &self.spec
    }

    pub fn has_slice(&self, k: usize) -> bool {
        self.slices.get(k).is_some_and(|s| s.is_some())
    }

    /// Node values at knot `k` (marks outermost, then `X`, then `Q`).
    pub fn slice(&self, k: usize) -> Option<&[f64]> {
        self.slices.get(k).and_then(|s| s.as_ref()).map(|s| s.values.as_slice())
    }

    /// Multilinear interpolation of the slice at knot `k`.
    pub fn eval(&self, k: usize, s: &Snapshot) -> Option<f64> {
        let slice = self.slices.get(k)?.as_ref()?;
        Some(interpolate(&self.spec, slice.active, &slice.values, s))
    }
}

fn interpolate(spec: &StateSpec, active: usize, values: &[f64], s: &Snapshot) -> f64 {
    // Axes outermost first: marks 0..active, X, Q.
    let mut axes: Vec<(usize, usize, f64)> = Vec::with_capacity(active + 2);
    for j in 0..active {
        let g = spec.mark_grid(j);
        let (i, w, _) = g.locate(s.mark(j));
        axes.push((g.nodes, i, w));
    }
    if spec.track_x {
        let (i, w, _) = spec.x_grid.locate(s.x);
        axes.push((spec.x_grid.nodes, i, w));
    }
    if spec.track_q {
        let (i, w, _) = spec.q_grid.locate(s.q);
        axes.push((spec.q_grid.nodes, i, w));
    }
    let d = axes.len();
    let mut total = 0.0;
    for corner in 0..(1usize << d) {
        let mut weight = 1.0;
        let mut idx = 0usize;
        for (a, &(n, i, w)) in axes.iter().enumerate() {
            let up = corner >> (d - 1 - a) & 1 == 1;
            let (node, wt) = if up { (i + 1, w) } else { (i, 1.0 - w) };
            if wt == 0.0 {
                weight = 0.0;
                break;
            }
            weight *= wt;
            idx = idx * n + node.min(n - 1);
        }
        if weight != 0.0 {
            total += weight * values[idx];
        }
    }
    total
}

/// Result of a backward sweep.
#[derive(Clone)]
pub struct Solution {
    pub value: f64,
    pub report: EstimateReport,
    pub policy: Option<ControlPolicy>,
    pub values: ValueGrid,
}

impl fmt::Debug for Solution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Solution")
            .field("value", &self.value)
            .field("report", &self.report)
            .field("policy", &self.policy.is_some())
            .finish_non_exhaustive()
    }
}

/// Largest step the scheme accepts for `spec` under variance cap `hi`.
pub fn max_stable_dt(spec: &StateSpec, hi: f64, cfl_safety: f64) -> f64 {
    let mut limit = f64::INFINITY;
    if spec.track_x {
        limit = limit.min(cfl_safety * spec.x_grid.step().powi(2) / hi);
    }
    if spec.track_q {
        limit = limit.min(spec.q_grid.step() / hi);
    }
    limit
}

fn levels(band: &VolatilityBand, opts: &SolveOptions) -> Result<Vec<f64>> {
    if opts.sigma_levels < 2 {
        return Err(Error::SigmaLevels(opts.sigma_levels));
    }
    let (lo, hi) = band.range(opts.use_margin);
    let n = opts.sigma_levels;
    Ok((0..n)
        .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect())
}

/// Backward recursion for `Ê[F]` from the initial state `X = Q = 0`.
pub fn solve_expectation(
    band: &VolatilityBand,
    grid: &TimeGrid,
    spec: &StateSpec,
    f: &Functional,
    opts: &SolveOptions,
) -> Result<Solution> {
    let levels = levels(band, opts)?;
    let hi = *levels.last().unwrap();
    let horizon = grid.horizon();
    let tol = TIME_TOL * spec.horizon;
    if horizon > spec.horizon + tol {
        return Err(Error::InvalidStateSpec(format!(
            "grid horizon {horizon} exceeds state horizon {}",
            spec.horizon
        )));
    }
    if let Some(m) = spec.marks.iter().find(|m| m.time > horizon + tol) {
        return Err(Error::InvalidStateSpec(format!("mark at {} beyond horizon {horizon}", m.time)));
    }
    for m in &spec.marks {
        if !grid.contains(m.time) {
            return Err(Error::UnalignedGrid(m.time));
        }
    }
    let inside: Vec<f64> =
        f.breakpoints.iter().copied().filter(|&b| b <= horizon + tol).collect();
    grid.check_aligned(&inside)?;
    let limit = max_stable_dt(spec, hi, opts.cfl_safety);
    for k in 0..grid.steps() {
        let dt = grid.dt(k);
        if dt > limit * (1.0 + 1e-9) {
            return Err(Error::CflViolated { step: k, dt, limit });
        }
    }

    let knots = grid.knots();
    let n_steps = grid.steps();
    let keep_slice = |k: usize| match &opts.keep {
        Keep::Initial => k == 0,
        Keep::All => true,
        Keep::Knots(ks) => ks.contains(&k),
    };
    let mut slices: Vec<Option<Slice>> = vec![None; n_steps + 1];
    let mut argmax: Vec<Option<(usize, Vec<u8>)>> = vec![None; n_steps + 1];

    let active_end = spec.active_marks(knots[n_steps]);
    let mut current: Vec<f64> = (0..spec.layout_len(active_end))
        .into_par_iter()
        .map(|idx| f.terminal_at(&spec.snapshot(knots[n_steps], active_end, idx)))
        .collect();
    let mut current_active = active_end;
    if keep_slice(n_steps) {
        slices[n_steps] = Some(Slice { active: current_active, values: current.clone() });
    }

    let nq = spec.nq();
    let nx = spec.nx();
    let inner = spec.inner();
    let x_step = spec.x_grid.step();
    let q_step = spec.q_grid.step();
    let mut clamped: u64 = 0;

    for k in (0..n_steps).rev() {
        let t = knots[k];
        let dt = grid.dt(k);
        let active = spec.active_marks(t);
        // Marks recorded at t_{k+1} are the current coordinate there.
        while current_active > active {
            current = project_mark(spec, current_active, &current);
            current_active -= 1;
        }
        let next = &current;
        let len = spec.layout_len(active);
        let per_level: Vec<(f64, f64, f64)> = levels
            .iter()
            .map(|&s| {
                let px = if spec.track_x { s * dt / (2.0 * x_step * x_step) } else { 0.0 };
                let dq = if spec.track_q { s * dt / q_step } else { 0.0 };
                (s, px, dq)
            })
            .collect();
        let record = opts.record_policy;
        let results: Vec<(f64, u8, u64)> = (0..len)
            .into_par_iter()
            .map(|idx| {
                let snap = spec.snapshot(t, active, idx);
                let reward = f.running_at(t, &snap);
                let base = idx % inner;
                let outer = idx - base;
                let (ix, iq) = (base / nq, base % nq);
                let x_edge = spec.track_x && (ix == 0 || ix + 1 == nx);
                let mut best = f64::NEG_INFINITY;
                let mut best_level = 0u8;
                let mut clamps = u64::from(x_edge);
                for (li, &(s, px, dq)) in per_level.iter().enumerate() {
                    // Q moves by σ²Δt, which is at most one Q cell.
                    let (j0, wq) = if spec.track_q {
                        let u = iq as f64 + dq;
                        if u >= (nq - 1) as f64 {
                            if u > (nq - 1) as f64 + 1e-9 {
                                clamps += 1;
                            }
                            (nq - 1, 0.0)
                        } else {
                            let j = u.floor() as usize;
                            (j, u - j as f64)
                        }
                    } else {
                        (0, 0.0)
                    };
                    let at_x = |jx: usize| {
                        let row = outer + jx * nq;
                        let v0 = next[row + j0];
                        if wq > 0.0 {
                            v0 + wq * (next[row + j0 + 1] - v0)
                        } else {
                            v0
                        }
                    };
                    let centre = at_x(ix);
                    let expect = if spec.track_x && !x_edge && px > 0.0 {
                        let (l, r) = (at_x(ix - 1), at_x(ix + 1));
                        centre + px * (l - 2.0 * centre + r)
                    } else {
                        centre
                    };
                    let total = reward.at(s) * dt + expect;
                    if total > best {
                        best = total;
                        best_level = li as u8;
                    }
                }
                (best, if record { best_level } else { 0 }, clamps)
            })
            .collect();
        let mut values = Vec::with_capacity(len);
        let mut choice = Vec::with_capacity(if record { len } else { 0 });
        for (v, l, c) in results {
            values.push(v);
            if record {
                choice.push(l);
            }
            clamped += c;
        }
        if record {
            argmax[k] = Some((active, choice));
        }
        current = values;
        current_active = active;
        if keep_slice(k) {
            slices[k] = Some(Slice { active, values: current.clone() });
        }
    }

    let start = Snapshot::new(0.0, 0.0, 0.0, &vec![0.0; current_active]);
    let value = interpolate(spec, current_active, &current, &start);
    if slices[0].is_none() {
        slices[0] = Some(Slice { active: current_active, values: current });
    }

    let policy = opts
        .record_policy
        .then(|| argmax_policy(grid.clone(), spec.clone(), levels.clone(), argmax));
    let mut report = EstimateReport::single(value, 0.0, Method::Dp);
    report.clamped = clamped;
    Ok(Solution {
        value,
        report,
        policy,
        values: ValueGrid { grid: grid.clone(), spec: spec.clone(), slices },
    })
}

/// Drops the last active mark by reading it off the current coordinate.
fn project_mark(spec: &StateSpec, active: usize, post: &[f64]) -> Vec<f64> {
    let j = active - 1;
    let g = spec.mark_grid(j);
    let inner = spec.inner();
    let nq = spec.nq();
    let axis = spec.marks[j].axis;
    let len = spec.layout_len(active - 1);
    (0..len)
        .map(|idx| {
            let base = idx % inner;
            let outer = idx / inner;
            let src = match axis {
                Axis::X => base / nq,
                Axis::Q => base % nq,
            };
            post[(outer * g.nodes + src) * inner + base]
        })
        .collect()
}

fn argmax_policy(
    grid: TimeGrid,
    spec: StateSpec,
    levels: Vec<f64>,
    argmax: Vec<Option<(usize, Vec<u8>)>>,
) -> ControlPolicy {
    let breakpoints = grid.knots().to_vec();
    let table = Arc::new(argmax);
    ControlPolicy::feedback("dp-argmax", breakpoints, move |t: f64, path: &PathView| {
        let k = grid.index_of(t).ok_or(Error::NotOnGrid(t))?;
        let (active, choice) = table
            .get(k)
            .and_then(|e| e.as_ref())
            .ok_or(Error::NotOnGrid(t))?;
        let mut idx = 0usize;
        for j in 0..*active {
            let m = spec.marks[j];
            let v = path.observe(&m).ok_or(Error::UnalignedGrid(m.time))?;
            let g = spec.mark_grid(j);
            idx = idx * g.nodes + g.nearest(v);
        }
        if spec.track_x {
            idx = idx * spec.x_grid.nodes + spec.x_grid.nearest(path.x());
        }
        if spec.track_q {
            idx = idx * spec.q_grid.nodes + spec.q_grid.nearest(path.q());
        }
        Ok(levels[choice[idx] as usize])
    })
}

/// `Ê_t[F]` as a function of the state at knot `t`.
///
/// Running rewards accrued before `t` are not part of the state, so the
/// returned function is the value of the remaining part of `F` on `[t, T]`.
#[derive(Debug, Clone)]
pub struct ConditionalValue {
    values: ValueGrid,
    knot: usize,
}

impl ConditionalValue {
    pub fn time(&self) -> f64 {
        self.values.grid.knots()[self.knot]
    }

    pub fn eval(&self, s: &Snapshot) -> f64 {
        self.values.eval(self.knot, s).expect("slice kept")
    }

    pub fn values(&self) -> &ValueGrid {
        &self.values
    }

    pub fn knot(&self) -> usize {
        self.knot
    }

    /// The slice as a terminal functional on `[0, t]`.
    pub fn as_terminal(&self) -> Functional {
        let me = self.clone();
        Functional::terminal(move |s| me.eval(s))
    }
}

pub fn conditional_expectation(
    band: &VolatilityBand,
    grid: &TimeGrid,
    spec: &StateSpec,
    f: &Functional,
    t: f64,
    opts: &SolveOptions,
) -> Result<ConditionalValue> {
    let knot = grid.index_of(t).ok_or(Error::NotOnGrid(t))?;
    let opts = SolveOptions { keep: Keep::Knots(vec![knot]), ..opts.clone() };
    let sol = solve_expectation(band, grid, spec, f, &opts)?;
    Ok(ConditionalValue { values: sol.values, knot })
}

/// `Ê[Ê_t[F]]`: solves on `[0, t]` with the conditional slice as terminal and
/// the running part of `F` before `t`.
pub fn tower_value(
    band: &VolatilityBand,
    grid: &TimeGrid,
    spec: &StateSpec,
    f: &Functional,
    cond: &ConditionalValue,
    opts: &SolveOptions,
) -> Result<f64> {
    let t = cond.time();
    let sub_grid = grid.truncate(cond.knot)?;
    let sub_spec = spec.truncated(t);
    let mut g = cond.as_terminal();
    if let Some(r) = f.running.clone() {
        let bps = f.breakpoints.iter().copied().filter(|&b| b <= t).collect();
        g = g.with_running(bps, move |t, s| r(t, s));
    }
    Ok(solve_expectation(band, &sub_grid, &sub_spec, &g, opts)?.value)
}

/// Grid resolution and search settings for [`DpConfig::estimate`].
#[derive(Debug, Clone)]
pub struct DpConfig {
    pub resolution: usize,
    pub sigma_levels: usize,
    pub cfl_safety: f64,
    /// Also solve at half resolution and report the difference as error proxy.
    pub refine: bool,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { resolution: 201, sigma_levels: 2, cfl_safety: 1.0, refine: true }
    }
}

impl DpConfig {
    /// A grid containing `breakpoints` and every mark time whose steps satisfy
    /// the stability limit of `spec`.
    pub fn grid_for(
        &self,
        band: &VolatilityBand,
        spec: &StateSpec,
        horizon: f64,
        breakpoints: &[f64],
        use_margin: bool,
    ) -> Result<TimeGrid> {
        let hi = band.range(use_margin).1;
        let limit = max_stable_dt(spec, hi, self.cfl_safety);
        let steps = if limit.is_finite() { (horizon / limit).ceil().max(1.0) as usize } else { 1 };
        let mut points: Vec<f64> = breakpoints.to_vec();
        points.extend(spec.marks.iter().map(|m| m.time));
        TimeGrid::uniform(horizon, steps)?.refine_with(&points, 1)
    }

    pub fn solve_options(&self, use_margin: bool) -> SolveOptions {
        SolveOptions {
            sigma_levels: self.sigma_levels,
            use_margin,
            cfl_safety: self.cfl_safety,
            ..SolveOptions::default()
        }
    }

    /// `Ê[F]` on `[0, horizon]`, with the half-resolution difference as error proxy.
    pub fn estimate(
        &self,
        band: &VolatilityBand,
        spec: &StateSpec,
        horizon: f64,
        f: &Functional,
        use_margin: bool,
    ) -> Result<EstimateReport> {
        let spec = spec.with_resolution(self.resolution)?;
        let opts = self.solve_options(use_margin);
        let grid = self.grid_for(band, &spec, horizon, f.breakpoints(), use_margin)?;
        let fine = solve_expectation(band, &grid, &spec, f, &opts)?;
        let mut report = fine.report;
        if self.refine {
            let coarse_spec = spec.with_resolution((self.resolution / 2).max(3))?;
            let grid = self.grid_for(band, &coarse_spec, horizon, f.breakpoints(), use_margin)?;
            let coarse = solve_expectation(band, &grid, &coarse_spec, f, &opts)?;
            report.error_proxy = (fine.value - coarse.value).abs();
        }
        Ok(report)
    }
}
