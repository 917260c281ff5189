//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::process::Command;
use std::time::Instant;

use gexpect::control::{solve_expectation, DpConfig, Functional, SolveOptions, StateSpec};
use gexpect::discriminant::{estimate_d, tolerance, Against, DSchedule, EvalMethod, Evaluator};
use gexpect::{Integrand, VolatilityBand};
use gexpect_cli::report::Outcome;
use gexpect_cli::{run_scenario, VerifyArgs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn scenario(name: &str, f: impl FnOnce(&mut VerifyArgs)) -> Outcome {
    let mut args = VerifyArgs { scenario: name.into(), ..Default::default() };
    f(&mut args);
    run_scenario(&args).unwrap_or_else(|e| panic!("{name}: {e}")).1
}

fn value(o: &Outcome, key: &str) -> f64 {
    let prefix = format!("{key}: ");
    o.lines
        .iter()
        .find_map(|l| l.strip_prefix(&prefix))
        .and_then(|v| v.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN)
}

fn failures(o: &Outcome) -> String {
    let bad: Vec<&str> = o.assertions.iter().filter(|a| !a.pass).map(|a| a.name.as_str()).collect();
    if bad.is_empty() {
        format!("{} assertions", o.assertions.len())
    } else {
        format!("failed: {}", bad.join(", "))
    }
}

fn remark_iii() -> Verdict {
    let start = Instant::now();
    let o = scenario("remark-3-2-iii", |a| a.threads = Some(1));
    let secs = start.elapsed().as_secs_f64();
    let d = value(&o, "d_estimate");
    Verdict {
        pass: o.passed() && secs <= 60.0 && (d - 1.0).abs() <= 0.03,
        detail: format!(
            "d = {d:.6}, lower = {:.6}, upper = {:.6}, {:.1} s single-threaded, {}",
            value(&o, "lower"),
            value(&o, "upper"),
            secs,
            failures(&o)
        ),
    }
}

fn symmetric() -> Verdict {
    let o = scenario("remark-3-2-i", |_| {});
    let d = value(&o, "d_estimate");
    Verdict {
        pass: o.passed() && (d - 0.5).abs() <= 0.005,
        detail: format!("d = {d:.9}, upper - lower = {:.3e}, {}", value(&o, "upper") - value(&o, "lower"), failures(&o)),
    }
}

fn decay() -> Verdict {
    let o = scenario("thm-3-4-decay", |_| {});
    let f = value(&o, "final_value");
    Verdict { pass: o.passed() && f.abs() <= 1e-3, detail: format!("final value {f:.3e}, {}", failures(&o)) }
}

fn positivity() -> Verdict {
    let o = scenario("thm-3-3-positivity", |_| {});
    let n = o.assertions.iter().filter(|a| a.name.starts_with("positive[")).count();
    Verdict { pass: o.passed() && n >= 5, detail: format!("{n} integrands, eps = 1/8, {}", failures(&o)) }
}

fn adversary() -> Verdict {
    let h = scenario("h-identities", |_| {});
    let law = scenario("step-3-law-invariance", |a| {
        a.paths = Some(100_000);
        a.n_schedule = Some(vec![1, 2, 4]);
    });
    Verdict {
        pass: h.passed() && law.passed(),
        detail: format!("identities: {}; law invariance (1e5 paths, n = 1,2,4): {}", failures(&h), failures(&law)),
    }
}

fn representation() -> Verdict {
    let band = VolatilityBand::new(1.0, 2.0).unwrap();
    let eta = Integrand::constant(1.0, 1.0).unwrap();
    let s = DSchedule::new(vec![8], EvalMethod::Both).unwrap();
    let d = estimate_d(&band, &eta, &s, Against::Qv, &Evaluator::default()).unwrap();
    let (dp, mc) = (d.dp.unwrap(), d.mc.unwrap());
    let tol = tolerance(&dp) + 3.0 * mc.error_proxy;
    Verdict {
        pass: mc.value <= dp.value + tol && dp.value - mc.value <= 0.05 * dp.value,
        detail: format!("DP {:.9}, MC {:.9} (stderr {:.2e})", dp.value, mc.value, mc.error_proxy),
    }
}

fn axioms() -> Verdict {
    let band = VolatilityBand::new(1.0, 2.0).unwrap();
    let spec = StateSpec::new(&band, 1.0, true, false, vec![], 101).unwrap();
    let grid = DpConfig::default().grid_for(&band, &spec, 1.0, &[], false).unwrap();
    let opts = SolveOptions::default();
    let solve = |f: Functional| solve_expectation(&band, &grid, &spec, &f, &opts).unwrap().value;
    let payoff = |p: [f64; 5]| {
        Functional::terminal(move |s| p[0] * (p[1] * s.x).sin() + p[2] * s.x * s.x + p[3] * (s.x - p[4]).abs())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut draw = || -> [f64; 5] { std::array::from_fn(|_| rng.random_range(-2.0..2.0)) };
    let (mut cases, mut bad) = (0, Vec::new());
    for k in 0..24 {
        let (p, q) = (draw(), draw());
        let (f, g) = (payoff(p), payoff(q));
        let (vf, vg) = (solve(f.clone()), solve(g.clone()));
        let scale = 1.0 + vf.abs() + vg.abs();
        let dominating = f.plus(&Functional::terminal(move |s| {
            let v = q[0] * (q[1] * s.x).sin() + q[2] * s.x * s.x + q[3] * (s.x - q[4]).abs();
            v.abs()
        }));
        let c = 0.5 * (k as f64 - 12.0);
        let lambda = 0.25 + 0.2 * k as f64;
        let checks = [
            ("monotone", solve(dominating) >= vf - 1e-12 * scale),
            ("constant", solve(Functional::constant(c)) == c),
            ("subadditive", solve(f.plus(&g)) <= vf + vg + 1e-12 * scale),
            ("homogeneous", (solve(f.scaled(lambda)) - lambda * vf).abs() <= 1e-12 * (lambda * vf).abs().max(1.0)),
        ];
        for (name, ok) in checks {
            cases += 1;
            if !ok {
                bad.push(format!("{name}#{k}"));
            }
        }
    }
    Verdict {
        pass: bad.is_empty(),
        detail: if bad.is_empty() { format!("{cases} randomized checks") } else { format!("failed {}", bad.join(",")) },
    }
}

fn closed_forms() -> Verdict {
    let o = scenario("g-axioms", |_| {});
    let wanted = ["convex_closed_form", "concave_closed_form", "tower_property"];
    let pass = wanted.iter().all(|w| o.assertions.iter().any(|a| a.name == *w && a.pass));
    Verdict {
        pass,
        detail: format!("E[B^2] = {:.6}, -E[-B^2] = {:.6}, tower within 1e-9", value(&o, "E[B_T^2]"), value(&o, "-E[-B_T^2]")),
    }
}

fn density() -> Verdict {
    let o = scenario("lemma-4-2-density", |_| {});
    Verdict { pass: o.passed(), detail: failures(&o) }
}

fn uniqueness() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_gexpect");
    let o = Command::new(bin).args(["verify", "uniqueness-cor-3-6"]).output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let witness: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("d_estimate: "))
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zero.toml");
    std::fs::write(&cfg, "[uniqueness-cor-3-6]\nintegrand = \"zero\"\nzeta = \"zero\"\n").unwrap();
    let z = Command::new(bin).args(["verify", "uniqueness-cor-3-6", "--config", cfg.to_str().unwrap()]).output().unwrap();
    Verdict {
        pass: o.status.code() == Some(1) && witness >= 0.45 && z.status.code() == Some(0),
        detail: format!(
            "eta = 1: exit {:?}, witness {witness:.6}; zero pair: exit {:?}",
            o.status.code(),
            z.status.code()
        ),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("strict sandwich example, d = 1.0", remark_iii),
        ("symmetric case equality", symmetric),
        ("ds-integral decay", decay),
        ("positivity with margin floor", positivity),
        ("adversary identities and law invariance", adversary),
        ("DP vs MC representation consistency", representation),
        ("sublinear expectation axioms", axioms),
        ("closed forms and tower property", closed_forms),
        ("feedback re-parameterization bounds", density),
        ("uniqueness discriminator", uniqueness),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {tag}: {name} ({})", i + 1, v.detail);
        failed += !v.pass as usize;
    }
    println!("acceptance: {}/{} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
