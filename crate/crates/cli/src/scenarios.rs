//! Builtin verification scenarios.

use std::sync::Arc;

use gexpect::control::{
    conditional_expectation, solve_expectation, tower_value, Affine, DpConfig, Functional, SolveOptions, StateSpec,
};
use gexpect::discriminant::{
    check_positivity, check_prop31, check_thm34, estimate_d, Against, DSchedule, EvalMethod, Evaluator,
};
use gexpect::martrep::{build_martingale, check_bounds_67, uniqueness_discriminator, Hypothesis, Verdict};
use gexpect::paths::{
    adversary_policy, adversary_volatility, bound_coefficients, feedback_reparameterize, mc_estimate,
    path_integral, simulate_paths, BaseKind, CylinderFn, Measure, PathView, VolatilityCylinder,
};
use gexpect::{EstimateReport, Integrand, Observation, SignProcess, TimeGrid, VolatilityBand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{IntegrandSpec, Scenario, Section};
use crate::report::{num, sci, Outcome, Source, Table};
use crate::CliError;

type Run = fn(&Scenario) -> Result<Outcome, CliError>;

pub struct Entry {
    pub name: &'static str,
    pub about: &'static str,
    /// Default margin as a fraction of `σ̄² − σ̲²`, used when `eps` is unset.
    pub margin_fraction: Option<f64>,
    defaults: fn() -> Section,
    run: Run,
}

impl Entry {
    pub fn defaults(&self) -> Section {
        (self.defaults)()
    }

    pub fn run(&self, sc: &Scenario) -> Result<Outcome, CliError> {
        (self.run)(sc)
    }
}

pub const CATALOG: &[Entry] = &[
    Entry {
        name: "g-axioms",
        about: "sublinear expectation axioms, convex/concave closed forms and the tower property on the DP solver",
        margin_fraction: None,
        defaults: Section::default,
        run: g_axioms,
    },
    Entry {
        name: "h-identities",
        about: "adversary split identities on sampled rates and cell-average preservation on simulated paths",
        margin_fraction: Some(0.125),
        defaults: || Section { paths: Some(500), ..Section::default() },
        run: h_identities,
    },
    Entry {
        name: "remark-3-2-i",
        about: "symmetric case: d equals the half-width times E[int |eta| ds]; MC/DP cross-check at n = 8",
        margin_fraction: None,
        defaults: || Section { integrand: Some("constant".into()), ..Section::default() },
        run: remark_i,
    },
    Entry {
        name: "remark-3-2-iii",
        about: "explicit example with strict sandwich bounds: eta = a on [0,T/2], <B>_{T/2} after",
        margin_fraction: None,
        defaults: || Section {
            horizon: Some(2.0),
            integrand: Some("remark".into()),
            n_schedule: Some(vec![2, 4, 8, 16, 32]),
            ..Section::default()
        },
        run: remark_iii,
    },
    Entry {
        name: "prop-3-1-sandwich",
        about: "lower and upper bounds on d over a suite of integrands",
        margin_fraction: None,
        defaults: Section::default,
        run: prop31,
    },
    Entry {
        name: "thm-3-3-positivity",
        about: "d >= eps * E_{G_eps}[int |eta| ds] > 0 over a suite of integrands",
        margin_fraction: Some(0.125),
        defaults: Section::default,
        run: positivity,
    },
    Entry {
        name: "thm-3-4-decay",
        about: "E[int delta_n eta ds] decays like 1/n",
        margin_fraction: None,
        defaults: || Section {
            integrand: Some("half".into()),
            n_schedule: Some(vec![2, 10, 50, 250, 1250, 2050]),
            ..Section::default()
        },
        run: decay,
    },
    Entry {
        name: "step-3-law-invariance",
        about: "E[int |zeta| ds] is the same under a base control and under the adversary built on it",
        margin_fraction: Some(0.125),
        defaults: || Section { n_schedule: Some(vec![1, 2, 4]), paths: Some(100_000), ..Section::default() },
        run: law_invariance,
    },
    Entry {
        name: "eqn-6-7-chain",
        about: "E[-K_T] >= d >= eps * E_{G_eps}[int |eta| ds] and E[K_T] = 0 for K = int eta d<B> - int 2G(eta) ds",
        margin_fraction: Some(0.25),
        defaults: || Section { horizon: Some(2.0), n_schedule: Some(vec![2, 4, 8, 16]), ..Section::default() },
        run: chain67,
    },
    Entry {
        name: "lemma-4-2-density",
        about: "feedback re-parameterization of a 3-step control on W; eps is the total tolerance, split eps/m per cell",
        margin_fraction: None,
        defaults: || Section { eps: Some(0.06), ..Section::default() },
        run: density,
    },
    Entry {
        name: "uniqueness-cor-3-6",
        about: "tests int eta d<B> = int zeta ds (or equal representations); a refutation exits with status 1",
        margin_fraction: None,
        defaults: || Section {
            integrand: Some("constant".into()),
            zeta: Some("constant".into()),
            ..Section::default()
        },
        run: uniqueness,
    },
];

pub fn find(name: &str) -> Option<&'static Entry> {
    CATALOG.iter().find(|e| e.name == name)
}

fn evaluator(sc: &Scenario) -> Evaluator {
    Evaluator { dp: DpConfig { resolution: sc.grid, ..DpConfig::default() }, paths: sc.paths, seed: sc.seed }
}

fn schedule(sc: &Scenario, default: DSchedule) -> Result<DSchedule, CliError> {
    match &sc.n_schedule {
        Some(ns) => Ok(DSchedule::new(ns.clone(), sc.method)?),
        None => Ok(default.with_method(sc.method)),
    }
}

fn default_schedule(eta: &Integrand, method: EvalMethod) -> Result<DSchedule, CliError> {
    Ok(DSchedule::for_integrand(eta, method)?)
}

fn per_n_table(name: &str, r: &EstimateReport) -> Table {
    let mut t = Table::new(name, &["n", "value", "error_proxy"]);
    for ((n, v), e) in r.schedule.iter().zip(&r.per_n).zip(&r.per_n_error) {
        t.push(vec![n.to_string(), num(*v), sci(*e)]);
    }
    t
}

fn integrand(sc: &Scenario, band: &VolatilityBand, kind: &str) -> Result<(String, Integrand), CliError> {
    let spec = sc.integrand.clone().unwrap_or_else(|| IntegrandSpec::new(kind, &[]));
    Ok((spec.label(), spec.build(band, sc.horizon)?))
}

/// The configured integrand, or the default suite.
fn suite(sc: &Scenario, band: &VolatilityBand, kinds: &[IntegrandSpec]) -> Result<Vec<(String, Integrand)>, CliError> {
    match &sc.integrand {
        Some(spec) => Ok(vec![(spec.label(), spec.build(band, sc.horizon)?)]),
        None => kinds.iter().map(|k| Ok((k.label(), k.build(band, sc.horizon)?))).collect(),
    }
}

/// `∫|η| ds` for deterministic `η`.
fn abs_integral(eta: &Integrand) -> Option<f64> {
    if !eta.is_deterministic() {
        return None;
    }
    Some(
        eta.breakpoints()
            .windows(2)
            .zip(eta.coefficients())
            .map(|(w, c)| (w[1] - w[0]) * c.eval(&[]).abs())
            .sum(),
    )
}

fn file_label(label: &str) -> String {
    let s: String = label.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    s.trim_matches('_').to_string()
}

fn rel_close(v: f64, target: f64, rel: f64) -> bool {
    (v - target).abs() <= rel * target.abs()
}

/// Node cap per axis for the three-axis tower check.
const TOWER_GRID: usize = 41;

fn g_axioms(sc: &Scenario) -> Result<Outcome, CliError> {
    let band = sc.band()?;
    let t = sc.horizon;
    let dp = DpConfig { resolution: sc.grid, ..DpConfig::default() };
    let spec = StateSpec::new(&band, t, true, false, vec![], sc.grid)?;
    let grid = dp.grid_for(&band, &spec, t, &[], false)?;
    let opts = SolveOptions::default();
    let solve = |f: Functional| -> Result<f64, CliError> { Ok(solve_expectation(&band, &grid, &spec, &f, &opts)?.value) };
    let term = |f: fn(f64) -> f64| Functional::terminal(move |s| f(s.x));

    let payoffs: [(&str, fn(f64) -> f64); 6] = [
        ("x^2", |x| x * x),
        ("-x^2", |x| -x * x),
        ("|x|", f64::abs),
        ("tanh(x)", f64::tanh),
        ("(x-0.5)+", |x| (x - 0.5).max(0.0)),
        ("cos(x)", f64::cos),
    ];
    let vals = payoffs.iter().map(|(_, f)| solve(term(*f))).collect::<Result<Vec<_>, _>>()?;

    let mut out = Outcome::default();
    let (lo, hi) = (band.sigma_lo_sq(), band.sigma_hi_sq());
    out.expect("E[B_T^2]", num(hi * t), Source::ClosedForm);
    out.expect("-E[-B_T^2]", num(lo * t), Source::ClosedForm);
    out.expect("E[c]", "c exactly", Source::Property);
    out.expect("tower gap", "0 within 1e-9 relative", Source::Property);

    let mut table = Table::new("axioms", &["check", "case", "lhs", "rhs", "pass"]);
    let mut counts = [(0usize, 0usize); 5];
    let mut record = |table: &mut Table, k: usize, check: &str, case: String, lhs: f64, rhs: f64, pass: bool| {
        counts[k].0 += 1;
        counts[k].1 += pass as usize;
        table.push(vec![check.into(), case, num(lhs), num(rhs), pass.to_string()]);
    };

    for c in [-1.5, 0.0, 2.25] {
        let v = solve(Functional::constant(c))?;
        record(&mut table, 0, "constant", num(c), v, c, v == c);
    }
    for (i, (ni, fi)) in payoffs.iter().enumerate() {
        for (j, (nj, fj)) in payoffs.iter().enumerate() {
            if i == j {
                continue;
            }
            let (fi, fj) = (*fi, *fj);
            let v = solve(Functional::terminal(move |s| fi(s.x) + fj(s.x).abs()))?;
            let pass = v >= vals[i] - 1e-12 * (1.0 + vals[i].abs());
            record(&mut table, 1, "monotone", format!("{ni} <= {ni}+|{nj}|"), vals[i], v, pass);
            if j > i {
                let v = solve(Functional::terminal(move |s| fi(s.x) + fj(s.x)))?;
                let rhs = vals[i] + vals[j];
                let pass = v <= rhs + 1e-12 * (1.0 + vals[i].abs() + vals[j].abs());
                record(&mut table, 2, "subadditive", format!("{ni} + {nj}"), v, rhs, pass);
            }
        }
        for lambda in [0.5, 2.0, 3.7] {
            let v = solve(term(*fi).scaled(lambda))?;
            let rhs = lambda * vals[i];
            let pass = (v - rhs).abs() <= 1e-12 * rhs.abs().max(1.0);
            record(&mut table, 3, "homogeneous", format!("{lambda}*{ni}"), v, rhs, pass);
        }
        let v = solve(term(*fi).plus(&Functional::constant(0.75)))?;
        let rhs = vals[i] + 0.75;
        let pass = (v - rhs).abs() <= 1e-12 * (1.0 + rhs.abs());
        record(&mut table, 4, "translation", format!("{ni} + 0.75"), v, rhs, pass);
    }
    for (k, name) in ["constant_preserving", "monotone", "subadditive", "positively_homogeneous", "constant_translation"]
        .iter()
        .enumerate()
    {
        let (n, ok) = counts[k];
        out.check(name, n == ok, format!("{ok}/{n} cases"));
    }

    let (convex, concave) = (vals[0], -vals[1]);
    out.line("E[B_T^2]", num(convex));
    out.line("-E[-B_T^2]", num(concave));
    out.check("convex_closed_form", rel_close(convex, hi * t, 0.01), format!("{} vs {} within 1%", num(convex), num(hi * t)));
    out.check(
        "concave_closed_form",
        rel_close(concave, lo * t, 0.01),
        format!("{} vs {} within 1%", num(concave), num(lo * t)),
    );

    let spec2 = StateSpec::new(&band, t, true, true, vec![Observation::x(t / 2.0)], sc.grid.min(TOWER_GRID))?;
    let half = t / 2.0;
    let f = Functional::terminal(|s| (s.x - s.mark(0)).abs() + 0.5 * s.q).with_running(vec![t / 4.0, half], move |u, s| {
        Affine { intercept: 0.1 * s.x, slope: if u < half / 2.0 { 1.0 } else { -0.5 } }
    });
    let grid2 = dp.grid_for(&band, &spec2, t, f.breakpoints(), false)?;
    let full = solve_expectation(&band, &grid2, &spec2, &f, &opts)?.value;
    let mut worst: f64 = 0.0;
    for u in [t / 4.0, half, 3.0 * t / 4.0] {
        let grid_u = grid2.refine_with(&[u], 1)?;
        let full_u = solve_expectation(&band, &grid_u, &spec2, &f, &opts)?.value;
        let cond = conditional_expectation(&band, &grid_u, &spec2, &f, u, &opts)?;
        let tower = tower_value(&band, &grid_u, &spec2, &f, &cond, &opts)?;
        let rel = (tower - full_u).abs() / full_u.abs().max(1.0);
        table.push(vec!["tower".into(), format!("t={u}"), num(tower), num(full_u), (rel <= 1e-9).to_string()]);
        worst = worst.max(rel);
    }
    out.line("E[F]", num(full));
    out.check("tower_property", worst <= 1e-9, format!("worst relative gap {}", sci(worst)));
    out.tables.push(table);
    Ok(out)
}

fn lcm(ns: &[usize]) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    ns.iter().fold(1, |acc, &n| acc / gcd(acc, n) * n)
}

/// Three-cell control on `X`-increments with values inside the effective band.
fn base_cylinder(band: &VolatilityBand, horizon: f64) -> Result<VolatilityCylinder, CliError> {
    let (lo, hi) = band.range(true);
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let coefs: Vec<CylinderFn> = vec![
        Arc::new(move |_: &[f64]| mid.sqrt()),
        Arc::new(move |x: &[f64]| (mid + 0.8 * half * x[0].tanh()).sqrt()),
        Arc::new(move |x: &[f64]| (mid - 0.7 * half * (x[0] + x[1]).sin()).sqrt()),
    ];
    Ok(VolatilityCylinder::new(horizon, BaseKind::OnIntegral, coefs, lo.sqrt(), hi.sqrt())?)
}

fn zeta_cylinder(horizon: f64) -> Result<Integrand, CliError> {
    let coefs: Vec<CylinderFn> = vec![
        Arc::new(|_: &[f64]| 0.5),
        Arc::new(|x: &[f64]| x[0].tanh()),
        Arc::new(|x: &[f64]| (x[0] - x[1]).clamp(-1.0, 1.0)),
    ];
    Ok(VolatilityCylinder::new(horizon, BaseKind::OnIntegral, coefs, 1e-9, 1.0)?.as_integrand()?)
}

fn require_margin(band: &VolatilityBand, name: &str) -> Result<f64, CliError> {
    let eps = band.margin_eps();
    if eps > 0.0 {
        Ok(eps)
    } else {
        Err(CliError::Config(format!("{name} needs a positive eps")))
    }
}

fn h_identities(sc: &Scenario) -> Result<Outcome, CliError> {
    let band = sc.band()?;
    let eps = require_margin(&band, "h-identities")?;
    let (lo, hi) = band.range(true);
    let mut out = Outcome::default();
    out.expect("H1(x)^2 + H-1(x)^2 - 2x", "0 within 1e-15", Source::Identity);
    out.expect("H1(x)^2 - H-1(x)^2", format!(">= 2 eps = {}", 2.0 * eps), Source::Identity);
    out.expect("coarse-cell mean rate - a^2", "0", Source::Identity);

    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let mut xs: Vec<f64> = (0..10_000).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    xs.extend([lo, hi, 0.5 * (band.sigma_lo_sq() + band.sigma_hi_sq())]);
    let (mut sum_err, mut min_diff): (f64, f64) = (0.0, f64::INFINITY);
    for &x in &xs {
        let up = adversary_volatility(&band, x, 1)?;
        let down = adversary_volatility(&band, x, -1)?;
        sum_err = sum_err.max((up + down - 2.0 * x).abs());
        min_diff = min_diff.min(up - down);
    }
    let mut table = Table::new("identities", &["check", "samples", "worst", "bound", "pass"]);
    let sum_ok = sum_err <= 1e-15;
    let diff_ok = min_diff >= 2.0 * eps - 1e-15;
    table.push(vec!["sum".into(), xs.len().to_string(), sci(sum_err), sci(1e-15), sum_ok.to_string()]);
    table.push(vec!["difference".into(), xs.len().to_string(), num(min_diff), num(2.0 * eps), diff_ok.to_string()]);
    out.check("split_sum_identity", sum_ok, format!("worst |H1^2 + H-1^2 - 2x| = {} over {} rates", sci(sum_err), xs.len()));
    out.check("split_gap", diff_ok, format!("min H1^2 - H-1^2 = {} vs 2 eps = {}", num(min_diff), num(2.0 * eps)));

    let t = sc.horizon;
    let base = base_cylinder(&band, t)?;
    let zeta = zeta_cylinder(t)?;
    let ones = Integrand::steps((0..=3).map(|i| t * i as f64 / 3.0).collect(), &[1.0; 3])?;
    let ns = sc.n_schedule.clone().unwrap_or_else(|| vec![1, 2, 4]);
    for &n in &ns {
        let steps = 6 * n;
        let grid = TimeGrid::uniform(t, steps)?;
        let sp = SignProcess::new(steps, t)?;
        let mut worst_avg: f64 = 0.0;
        let mut worst_signed: f64 = 0.0;
        let mut min_signed = f64::INFINITY;
        for (xi, label) in [(&zeta, "zeta"), (&ones, "one")] {
            let p = adversary_policy(&band, &base.policy("base"), xi, 3, n)?;
            let bundle = simulate_paths(&band, &grid, &p, sc.paths, sc.seed)?;
            for k in 0..bundle.n_paths() {
                let v = bundle.path(k);
                for i in 0..3 {
                    let (s, e) = (t * i as f64 / 3.0, t * (i + 1) as f64 / 3.0);
                    let before = v.upto(s).expect("cell start on grid");
                    let a2 = base.value_on(&before)?.powi(2);
                    let rate = (v.upto(e).expect("cell end on grid").q() - before.q()) * 3.0 / t;
                    worst_avg = worst_avg.max((rate - a2).abs());
                    if label == "one" {
                        let mut levels = [0.0; 3];
                        levels[i] = 1.0;
                        let cell = Integrand::steps(ones.breakpoints().to_vec(), &levels)?;
                        let signed = path_integral(&v, &cell, Measure::SignedQv(sp));
                        let want = t / 3.0
                            * (adversary_volatility(&band, a2, 1)? - adversary_volatility(&band, a2, -1)?)
                            / 2.0;
                        worst_signed = worst_signed.max((signed - want).abs());
                        min_signed = min_signed.min(signed);
                    }
                }
            }
        }
        let avg_ok = worst_avg <= 1e-12;
        let signed_ok = worst_signed <= 1e-12 && min_signed >= t / 3.0 * eps - 1e-12;
        table.push(vec![format!("cell_average_n{n}"), sc.paths.to_string(), sci(worst_avg), sci(1e-12), avg_ok.to_string()]);
        table.push(vec![
            format!("signed_increment_n{n}"),
            sc.paths.to_string(),
            num(min_signed),
            num(t / 3.0 * eps),
            signed_ok.to_string(),
        ]);
        out.check(&format!("cell_average_n{n}"), avg_ok, format!("worst |mean rate - a^2| = {}", sci(worst_avg)));
        out.check(
            &format!("signed_increment_n{n}"),
            signed_ok,
            format!("min per-cell signed increment {} vs (T/m) eps = {}", num(min_signed), num(t / 3.0 * eps)),
        );
    }
    out.tables.push(table);
    Ok(out)
}

fn remark_i(sc: &Scenario) -> Result<Outcome, CliError> {
    let band = sc.band()?;
    let ev = evaluator(sc);
    let (label, eta) = integrand(sc, &band, "constant")?;
    let abs = abs_integral(&eta)
        .ok_or_else(|| CliError::Config("remark-3-2-i needs a deterministic integrand".into()))?;
    let target = band.width() / 2.0 * abs;
    let s = schedule(sc, default_schedule(&eta, EvalMethod::Dp)?)?;
    let mut out = Outcome::default();
    out.expect("d_estimate", num(target), Source::ClosedForm);
    out.expect("upper - lower", "0", Source::ClosedForm);
    out.expect("DP - MC at n=8", "in [0, 5% of DP]", Source::Oracle);
    out.line("integrand", &label);

    let c = check_prop31(&band, &eta, &s, &ev)?;
    let d = c.d_estimate();
    out.line("d_estimate", num(d));
    out.line("lower", num(c.lower));
    out.line("upper", num(c.upper));
    out.line("tolerance", sci(c.tolerance));
    out.check("d_matches_closed_form", rel_close(d, target, 0.01), format!("{} vs {} within 1%", num(d), num(target)));
    out.check(
        "bounds_collapse",
        (c.upper - c.lower).abs() <= c.tolerance,
        format!("upper - lower = {} vs tolerance {}", sci(c.upper - c.lower), sci(c.tolerance)),
    );
    out.check("sandwich", c.pass, format!("{} <= {} <= {}", num(c.lower), num(d), num(c.upper)));
    out.tables.push(per_n_table("per_n", c.d.primary()));

    let both = DSchedule::new(vec![8], EvalMethod::Both)?;
    let x = estimate_d(&band, &eta, &both, Against::Qv, &ev)?;
    let (dp, mc) = (x.dp.expect("dp requested"), x.mc.expect("mc requested"));
    let allowance = dp.error_proxy + gexpect::discriminant::FLOAT_FLOOR * (1.0 + dp.value.abs()) + 3.0 * mc.error_proxy;
    out.line("dp_n8", num(dp.value));
    out.line("mc_n8", format!("{} (stderr {})", num(mc.value), sci(mc.error_proxy)));
    out.check(
        "mc_below_dp",
        mc.value <= dp.value + allowance,
        format!("MC {} <= DP {} + {}", num(mc.value), num(dp.value), sci(allowance)),
    );
    out.check(
        "mc_close_to_dp",
        dp.value - mc.value <= 0.05 * dp.value.abs(),
        format!("DP - MC = {} vs 5% of DP = {}", num(dp.value - mc.value), num(0.05 * dp.value.abs())),
    );
    Ok(out)
}

fn remark_iii(sc: &Scenario) -> Result<Outcome, CliError> {
    let band = sc.band()?;
    let spec = sc.integrand.clone().unwrap_or_else(|| IntegrandSpec::new("remark", &[]));
    if spec.kind != "remark" {
        return Err(CliError::Config("remark-3-2-iii only accepts integrand = \"remark\"".into()));
    }
    let t = sc.horizon;
    let a = spec.params.first().copied().unwrap_or(t * band.width() / 4.0);
    let eta = spec.build(&band, t)?;
    let hi = band.sigma_hi_sq();
    let (d_cf, up_cf, lo_cf) = (a * hi * t / 2.0, a * a + a * hi * t / 2.0, -a * a + a * hi * t / 2.0);
    let mut out = Outcome::default();
    out.expect("d_estimate", num(d_cf), Source::ClosedForm);
    out.expect("upper", num(up_cf), Source::ClosedForm);
    out.expect("lower", num(lo_cf), Source::ClosedForm);
    out.line("a", num(a));

    let s = schedule(sc, DSchedule::new(vec![2, 4, 8, 16, 32], sc.method)?)?;
    let c = check_prop31(&band, &eta, &s, &evaluator(sc))?;
    let d = c.d_estimate();
    out.line("d_estimate", num(d));
    out.line("lower", num(c.lower));
    out.line("upper", num(c.upper));
    out.line("tolerance", sci(c.tolerance));
    out.check("d_matches_closed_form", rel_close(d, d_cf, 0.03), format!("{} vs {} within 3%", num(d), num(d_cf)));
    out.check("upper_matches_closed_form", rel_close(c.upper, up_cf, 0.03), format!("{} vs {}", num(c.upper), num(up_cf)));
    out.check("lower_matches_closed_form", rel_close(c.lower, lo_cf, 0.03), format!("{} vs {}", num(c.lower), num(lo_cf)));
    let (gap_lo, gap_hi) = (d - c.lower, c.upper - d);
    out.check(
        "strict_lower",
        gap_lo > 5.0 * c.tolerance,
        format!("d - lower = {} vs 5 x tolerance = {}", num(gap_lo), sci(5.0 * c.tolerance)),
    );
    out.check(
        "strict_upper",
        gap_hi > 5.0 * c.tolerance,
        format!("upper - d = {} vs 5 x tolerance = {}", num(gap_hi), sci(5.0 * c.tolerance)),
    );
    out.tables.push(per_n_table("per_n", c.d.primary()));
    Ok(out)
}

fn standard_suite() -> Vec<IntegrandSpec> {
    vec![
        IntegrandSpec::new("constant", &[]),
        IntegrandSpec::new("steps", &[1.0, 2.0]),
        IntegrandSpec::new("sign-changing", &[]),
        IntegrandSpec::new("qv-feedback", &[]),
        IntegrandSpec::new("cylinder", &[]),
    ]
}

fn prop31(sc: &Scenario) -> Result<Outcome, CliError> {
    let band = sc.band()?;
    let ev = evaluator(sc);
    let mut kinds = standard_suite();
    kinds.insert(3, IntegrandSpec::new("remark", &[]));
    let mut out = Outcome::default();
    out.expect("lower <= d_estimate <= upper", "for every integrand", Source::Inequality);
    let mut table = Table::new("sandwich", &["integrand", "lower", "d_estimate", "upper", "tolerance", "pass"]);
    for (label, eta) in suite(sc, &band, &kinds)? {
        let s = schedule(sc, default_schedule(&eta, sc.method)?)?;
        let c = check_prop31(&band, &eta, &s, &ev)?;
        let d = c.d_estimate();
        table.push(vec![label.clone(), num(c.lower), num(d), num(c.upper), sci(c.tolerance), c.pass.to_string()]);
        out.check(&format!("sandwich[{label}]"), c.pass, format!("{} <= {} <= {}", num(c.lower), num(d), num(c.upper)));
    }
    out.tables.push(table);
    Ok(out)
}

fn positivity(sc: &Scenario) -> Result<Outcome, CliError> {
    let band = sc.band()?;
    let eps = require_margin(&band, "thm-3-3-positivity")?;
    let ev = evaluator(sc);
    let mut out = Outcome::default();
    out.expect("d_estimate", format!(">= eps * E_Geps[int |eta| ds] with eps = {eps}"), Source::Inequality);
    out.expect("d_estimate", "> 3 x tolerance", Source::Inequality);
    let mut table = Table::new("positivity", &["integrand", "d_estimate", "floor", "tolerance", "pass"]);
    for (label, eta) in suite(sc, &band, &standard_suite())? {
        let s = schedule(sc, default_schedule(&eta, sc.method)?)?;
        let c = check_positivity(&band, &eta, &s, &ev)?;
        let d = c.d.value();
        table.push(vec![label.clone(), num(d), num(c.floor), sci(c.tolerance), c.pass.to_string()]);
        out.check(
            &format!("positive[{label}]"),
            c.pass,
            format!("d = {} vs floor {} (tolerance {})", num(d), num(c.floor), sci(c.tolerance)),
        );
        out.tables.push(per_n_table(&format!("per_n_{}", file_label(&label)), c.d.primary()));
    }
    out.tables.insert(0, table);
    Ok(out)
}

fn decay(sc: &Scenario) -> Result<Outcome, CliError> {
    let band = sc.band()?;
    let (label, eta) = integrand(sc, &band, "half")?;
    let s = schedule(sc, DSchedule::new(vec![2, 10, 50, 250, 1250, 2050], EvalMethod::Dp)?)?;
    let final_tol = 1e-3;
    let c = check_thm34(&band, &eta, &s, final_tol, &evaluator(sc))?;
    let scale = eta.cells() as f64 * eta.bound() * sc.horizon;
    let mut out = Outcome::default();
    out.expect("limit of E[int delta_n eta ds]", "0", Source::Target);
    out.expect("|value_n|", "<= m |eta| T / n", Source::Inequality);
    out.expect("final value", format!("<= {final_tol}"), Source::Target);
    out.line("integrand", &label);
    let r = &c.report;
    let mut worst: f64 = 0.0;
    for ((n, v), e) in r.schedule.iter().zip(&r.per_n).zip(&r.per_n_error) {
        worst = worst.max(v.abs() - e - scale / *n as f64);
    }
    let shrinking = r.per_n.windows(2).all(|w| w[1].abs() <= w[0].abs());
    out.line("decay_constant", num(c.constant));
    out.line("final_value", num(c.final_value));
    out.line("monotone_shrinking", shrinking);
    out.check("per_n_bound", worst <= gexpect::discriminant::FLOAT_FLOOR, format!("worst excess {}", sci(worst.max(0.0))));
    out.check("decay_constant", c.constant <= 2.0, format!("C = {} <= 2", num(c.constant)));
    out.check(
        "final_value",
        c.final_value.abs() <= final_tol,
        format!("|{}| <= {final_tol}", num(c.final_value)),
    );
    out.tables.push(per_n_table("per_n", r));
    Ok(out)
}

fn law_invariance(sc: &Scenario) -> Result<Outcome, CliError> {
    let band = sc.band()?;
    require_margin(&band, "step-3-law-invariance")?;
    let t = sc.horizon;
    let base = base_cylinder(&band, t)?;
    let zeta = zeta_cylinder(t)?;
    let abs = zeta.abs()?;
    let ns = sc.n_schedule.clone().unwrap_or_else(|| vec![1, 2, 4]);
    let grid = TimeGrid::uniform(t, 6 * lcm(&ns))?;
    let f = |p: &PathView| path_integral(p, &abs, Measure::Time);
    let base_est = mc_estimate(&band, &grid, &[base.policy("base")], f, sc.paths, sc.seed)?;
    let (bm, bs) = (base_est.report.value, base_est.report.error_proxy);

    let mut out = Outcome::default();
    out.expect("adversary mean - base mean", "0 within 3 combined stderr", Source::Identity);
    out.line("base_mean", format!("{} (stderr {})", num(bm), sci(bs)));
    let mut table =
        Table::new("law_invariance", &["n", "base_mean", "base_stderr", "adv_mean", "adv_stderr", "diff", "combined", "pass"]);
    for (k, &n) in ns.iter().enumerate() {
        let p = adversary_policy(&band, &base.policy("base"), &zeta, 3, n)?;
        let est = mc_estimate(&band, &grid, &[p], f, sc.paths, sc.seed.wrapping_add(1 + k as u64))?;
        let (am, as_) = (est.report.value, est.report.error_proxy);
        let combined = (bs * bs + as_ * as_).sqrt();
        let pass = (am - bm).abs() <= 3.0 * combined;
        table.push(vec![
            n.to_string(),
            num(bm),
            sci(bs),
            num(am),
            sci(as_),
            num(am - bm),
            sci(combined),
            pass.to_string(),
        ]);
        out.check(&format!("invariance_n{n}"), pass, format!("|{} - {}| <= 3 x {}", num(am), num(bm), sci(combined)));
    }
    out.tables.push(table);
    Ok(out)
}

fn chain67(sc: &Scenario) -> Result<Outcome, CliError> {
    let band = sc.band()?;
    let ev = evaluator(sc);
    let kinds = [IntegrandSpec::new("remark", &[]), IntegrandSpec::new("constant", &[])];
    let mut out = Outcome::default();
    out.expect("E[-K_T] >= d_estimate >= eps E_Geps[int |eta| ds]", format!("eps = {}", band.margin_eps()), Source::Inequality);
    out.expect("E[K_T]", "0", Source::Identity);
    let mut table = Table::new(
        "chain",
        &["integrand", "e_neg_k", "d_estimate", "floor", "tolerance", "e_k", "conditional_deviation", "pass"],
    );
    for (label, eta) in suite(sc, &band, &kinds)? {
        let s = schedule(sc, default_schedule(&eta, sc.method)?)?;
        let c = check_bounds_67(&band, &eta, &s, &ev)?;
        let m = build_martingale(&band, &eta)?.check(&ev)?;
        let d = c.d_estimate();
        let pass = c.pass() && m.pass;
        table.push(vec![
            label.clone(),
            num(c.lhs6),
            num(d),
            num(c.rhs7),
            sci(c.tolerance),
            num(m.expectation),
            sci(m.conditional_deviation),
            pass.to_string(),
        ]);
        out.check(&format!("upper_link[{label}]"), c.pass6, format!("{} >= {}", num(c.lhs6), num(d)));
        out.check(&format!("lower_link[{label}]"), c.pass7, format!("{} >= {}", num(d), num(c.rhs7)));
        out.check(
            &format!("martingale[{label}]"),
            m.pass,
            format!(
                "E[K_T] = {}, max |E_s[K_T] - K_s| = {} (tolerance {})",
                sci(m.expectation),
                sci(m.conditional_deviation),
                sci(m.tolerance)
            ),
        );
    }
    out.tables.push(table);
    Ok(out)
}

fn density(sc: &Scenario) -> Result<Outcome, CliError> {
    let band = sc.band()?;
    let t = sc.horizon;
    let m = 3;
    let eps_total = band.margin_eps();
    if eps_total <= 0.0 {
        return Err(CliError::Config("lemma-4-2-density needs a positive eps".into()));
    }
    let (c, cap) = (band.sigma_lo_sq().sqrt(), band.sigma_hi_sq().sqrt());
    if c <= 0.0 {
        return Err(CliError::Config("lemma-4-2-density needs sigma_lo_sq > 0".into()));
    }
    let mid = 0.5 * (c + cap);
    let half = 0.5 * (cap - c);
    let coefs: Vec<CylinderFn> = vec![
        Arc::new(move |_: &[f64]| mid),
        Arc::new(move |w: &[f64]| mid + 0.5 * half * w[0].tanh()),
        Arc::new(move |w: &[f64]| mid + 0.4 * half * (w[0] + w[1]).sin()),
    ];
    let lip = vec![0.0, 0.5 * half, 0.4 * half * 2f64.sqrt()];
    let base = VolatilityCylinder::new(t, BaseKind::OnDriver, coefs, c, cap)?.with_lipschitz(lip)?;
    let eps = vec![eps_total / m as f64; m];
    let r = feedback_reparameterize(&base, &eps)?;
    let grid = TimeGrid::uniform(t, 2 * m)?;

    let mut out = Outcome::default();
    out.expect("A^i_{i-1}", "2 T L_i^2 exactly", Source::ClosedForm);
    out.expect("A^2_0 for L = (1,1,1), T = 1", "6", Source::ClosedForm);
    out.expect("E|psi_i - phi_i|^2", "<= sum_j B^i_j eps_j^2 within 3 stderr", Source::Inequality);
    out.expect("gap for a base already on X", "0", Source::Identity);
    out.line("truncation_radius", num(r.radius));

    let mut gaps = Table::new("gaps", &["index", "mean", "stderr", "bound", "pass"]);
    for g in r.gap_stats(&band, &base, &grid, sc.paths, sc.seed)? {
        gaps.push(vec![g.index.to_string(), num(g.mean), sci(g.stderr), num(g.bound), g.passes().to_string()]);
        out.check(
            &format!("gap_{}", g.index),
            g.passes(),
            format!("{} <= {} + 3 x {}", num(g.mean), num(g.bound), sci(g.stderr)),
        );
    }
    let mut coef = Table::new("coefficients", &["i", "j", "A", "B"]);
    let lpsi = r.cylinder.lipschitz().expect("rebuilt cylinder carries constants").to_vec();
    let mut diag_ok = true;
    for i in 0..m {
        for j in 0..=i {
            let a = if j < i { num(r.a[i][j]) } else { String::new() };
            coef.push(vec![i.to_string(), j.to_string(), a, num(r.b[i][j])]);
        }
        if i >= 1 {
            diag_ok &= r.a[i][i - 1] == 2.0 * t * lpsi[i].powi(2);
        }
    }
    let ls: Vec<String> = lpsi.iter().map(|l| num(*l)).collect();
    out.line("psi_lipschitz", ls.join(","));
    out.check("base_case_recursion", diag_ok, "A^i_{i-1} == 2 T L_i^2 with L_i the constants of psi_i");
    let (a3, _) = bound_coefficients(1.0, &[1.0, 1.0, 1.0]);
    out.check("recursion_example", a3[2][0] == 6.0, format!("A^2_0 = {}", a3[2][0]));

    let fixed = base_cylinder(&VolatilityBand::with_margin(band.sigma_lo_sq(), band.sigma_hi_sq(), 0.0)?, t)?
        .with_lipschitz(vec![0.0; m])?;
    let rf = feedback_reparameterize(&fixed, &[0.0; 3])?;
    let worst = rf
        .gap_stats(&band, &fixed, &grid, sc.paths.min(2_000), sc.seed)?
        .iter()
        .fold(0.0f64, |w, g| w.max(g.mean));
    out.check("fixed_point", worst == 0.0, format!("largest gap {}", sci(worst)));
    out.tables.push(gaps);
    out.tables.push(coef);
    Ok(out)
}

fn uniqueness(sc: &Scenario) -> Result<Outcome, CliError> {
    let band = sc.band()?;
    let (label, eta) = integrand(sc, &band, "constant")?;
    let zspec = sc.zeta.clone().unwrap_or_else(|| IntegrandSpec::new("constant", &[]));
    let zeta = zspec.build(&band, sc.horizon)?;
    let hypothesis = match sc.hypothesis.as_str() {
        "same-representation" => Hypothesis::SameRepresentation,
        _ => Hypothesis::QvEqualsTime,
    };
    let s = schedule(sc, default_schedule(&eta, sc.method)?)?;
    let r = uniqueness_discriminator(&band, &eta, &zeta, hypothesis, &s, sc.tau, &evaluator(sc))?;

    let mut out = Outcome::default();
    if hypothesis == Hypothesis::QvEqualsTime {
        if let Some(abs) = abs_integral(&eta) {
            let d = band.width() / 2.0 * abs;
            out.expect("d_estimate", num(d), Source::ClosedForm);
            let v = if d > sc.tau { "refuted" } else { "consistent" };
            out.expect("verdict", v, Source::ClosedForm);
        }
    }
    out.line("eta", &label);
    out.line("zeta", zspec.label());
    for l in r.report().lines() {
        out.lines.push(l.to_string());
    }
    out.check(
        "hypothesis_not_refuted",
        r.verdict == Verdict::Consistent,
        format!("witness {} vs tau + tolerance = {}", num(r.witness()), sci(r.tau + r.tolerance)),
    );
    out.tables.push(per_n_table("per_n", r.d.primary()));
    Ok(out)
}
