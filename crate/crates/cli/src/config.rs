//! Scenario parameters: builtin defaults, then the config file section, then
//! command-line overrides.

use std::collections::BTreeMap;
use std::path::Path;

use gexpect::discriminant::EvalMethod;
use gexpect::{Coefficient, Integrand, Observation, VolatilityBand};
use serde::Deserialize;

use crate::CliError;

/// One `[scenario]` section. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Section {
    pub sigma_lo_sq: Option<f64>,
    pub sigma_hi_sq: Option<f64>,
    pub eps: Option<f64>,
    pub horizon: Option<f64>,
    pub integrand: Option<String>,
    pub integrand_params: Option<Vec<f64>>,
    pub zeta: Option<String>,
    pub zeta_params: Option<Vec<f64>>,
    pub hypothesis: Option<String>,
    pub tau: Option<f64>,
    pub n_schedule: Option<Vec<usize>>,
    pub method: Option<String>,
    pub grid: Option<usize>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
}

impl Section {
    pub fn overlay(&mut self, o: Section) {
        macro_rules! take {
            ($($f:ident),*) => { $( if o.$f.is_some() { self.$f = o.$f; } )* };
        }
        take!(
            sigma_lo_sq, sigma_hi_sq, eps, horizon, integrand, integrand_params, zeta, zeta_params, hypothesis, tau,
            n_schedule, method, grid, paths, seed
        );
    }
}

/// Reads a config file of `[scenario-name]` sections.
pub fn load_file(path: &Path) -> Result<BTreeMap<String, Section>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<BTreeMap<String, Section>, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
}

/// Integrand by kind name and numeric parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrandSpec {
    pub kind: String,
    pub params: Vec<f64>,
}

impl IntegrandSpec {
    pub fn new(kind: &str, params: &[f64]) -> Self {
        Self { kind: kind.to_string(), params: params.to_vec() }
    }

    pub fn label(&self) -> String {
        if self.params.is_empty() {
            self.kind.clone()
        } else {
            let p: Vec<String> = self.params.iter().map(|v| v.to_string()).collect();
            format!("{}({})", self.kind, p.join(","))
        }
    }

    /// Kinds:
    /// `constant c`, `zero`, `steps l1 .. lk` (equal cells), `half` (1 on the
    /// first half), `remark [a]` (`a`, then `⟨B⟩_{T/2}`), `qv-feedback`
    /// (`1/2`, then `⟨B⟩_{T/2}` minus its midpoint), `cylinder` (1, then
    /// `tanh(2 B_{T/2})`), `sign-changing` (1, then −1).
    pub fn build(&self, band: &VolatilityBand, horizon: f64) -> Result<Integrand, CliError> {
        let p = &self.params;
        let half = horizon / 2.0;
        let arity = |n: usize| -> Result<(), CliError> {
            if p.len() > n {
                Err(CliError::Config(format!("integrand `{}` takes at most {n} parameter(s)", self.kind)))
            } else {
                Ok(())
            }
        };
        let eta = match self.kind.as_str() {
            "constant" => {
                arity(1)?;
                Integrand::constant(horizon, p.first().copied().unwrap_or(1.0))
            }
            "zero" => {
                arity(0)?;
                Integrand::zero(horizon)
            }
            "steps" => {
                if p.is_empty() {
                    return Err(CliError::Config("integrand `steps` needs at least one level".into()));
                }
                let k = p.len();
                let knots = (0..=k).map(|i| horizon * i as f64 / k as f64).collect();
                Integrand::steps(knots, p)
            }
            "half" => {
                arity(0)?;
                Integrand::steps(vec![0.0, half, horizon], &[1.0, 0.0])
            }
            "sign-changing" => {
                arity(0)?;
                Integrand::steps(vec![0.0, half, horizon], &[1.0, -1.0])
            }
            "remark" => {
                arity(1)?;
                let a = p.first().copied().unwrap_or(horizon * band.width() / 4.0);
                let bound = a.abs().max(band.sigma_hi_sq() * half);
                Integrand::new(
                    vec![0.0, half, horizon],
                    vec![Coefficient::Constant(a), Coefficient::observed(vec![Observation::q(half)], |v| v[0])],
                    bound,
                )
            }
            "qv-feedback" => {
                arity(0)?;
                let mid = (band.sigma_lo_sq() + band.sigma_hi_sq()) * half / 2.0;
                let bound = (band.width() * half / 2.0).max(0.5);
                Integrand::new(
                    vec![0.0, half, horizon],
                    vec![
                        Coefficient::Constant(0.5),
                        Coefficient::observed(vec![Observation::q(half)], move |v| v[0] - mid),
                    ],
                    bound,
                )
            }
            "cylinder" => {
                arity(0)?;
                Integrand::new(
                    vec![0.0, half, horizon],
                    vec![
                        Coefficient::Constant(1.0),
                        Coefficient::observed(vec![Observation::x(half)], |v| (2.0 * v[0]).tanh()),
                    ],
                    1.0,
                )
            }
            other => return Err(CliError::Config(format!("unknown integrand kind `{other}`"))),
        };
        eta.map_err(CliError::Core)
    }
}

/// Fully resolved parameters of one run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub sigma_lo_sq: f64,
    pub sigma_hi_sq: f64,
    pub eps: f64,
    pub horizon: f64,
    pub integrand: Option<IntegrandSpec>,
    pub zeta: Option<IntegrandSpec>,
    pub hypothesis: String,
    pub tau: f64,
    pub n_schedule: Option<Vec<usize>>,
    pub method: EvalMethod,
    pub grid: usize,
    pub paths: usize,
    pub seed: u64,
}

impl Scenario {
    /// Applies `section` over `defaults` and validates the result. An unset
    /// `eps` becomes `margin_fraction · (σ̄² − σ̲²)` when a fraction is given.
    pub fn resolve(
        name: &str,
        defaults: Section,
        section: Option<Section>,
        margin_fraction: Option<f64>,
    ) -> Result<Self, CliError> {
        let mut s = defaults;
        if let Some(o) = section {
            s.overlay(o);
        }
        let (lo, hi) = (s.sigma_lo_sq.unwrap_or(1.0), s.sigma_hi_sq.unwrap_or(2.0));
        if s.eps.is_none() {
            s.eps = margin_fraction.map(|f| f * (hi - lo).max(0.0));
        }
        let method = match s.method.as_deref().unwrap_or("dp") {
            "dp" => EvalMethod::Dp,
            "mc" => EvalMethod::Mc,
            "both" => EvalMethod::Both,
            m => return Err(CliError::Config(format!("unknown method `{m}` (dp, mc or both)"))),
        };
        let spec = |kind: Option<String>, params: Option<Vec<f64>>| {
            kind.map(|k| IntegrandSpec { kind: k, params: params.unwrap_or_default() })
        };
        let sc = Scenario {
            name: name.to_string(),
            sigma_lo_sq: lo,
            sigma_hi_sq: hi,
            eps: s.eps.unwrap_or(0.0),
            horizon: s.horizon.unwrap_or(1.0),
            integrand: spec(s.integrand, s.integrand_params),
            zeta: spec(s.zeta, s.zeta_params),
            hypothesis: s.hypothesis.unwrap_or_else(|| "qv-equals-time".into()),
            tau: s.tau.unwrap_or(0.0),
            n_schedule: s.n_schedule,
            method,
            grid: s.grid.unwrap_or(201),
            paths: s.paths.unwrap_or(20_000),
            seed: s.seed.unwrap_or(1),
        };
        sc.validate()?;
        Ok(sc)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.band()?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(CliError::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.grid < 5 {
            return Err(CliError::Config(format!("grid must be at least 5 nodes, got {}", self.grid)));
        }
        if self.paths < 2 {
            return Err(CliError::Config(format!("paths must be at least 2, got {}", self.paths)));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(CliError::Config(format!("tau must be non-negative, got {}", self.tau)));
        }
        if !matches!(self.hypothesis.as_str(), "qv-equals-time" | "same-representation") {
            return Err(CliError::Config(format!(
                "unknown hypothesis `{}` (qv-equals-time or same-representation)",
                self.hypothesis
            )));
        }
        Ok(())
    }

    /// The band with margin `eps`.
    pub fn band(&self) -> Result<VolatilityBand, CliError> {
        VolatilityBand::with_margin(self.sigma_lo_sq, self.sigma_hi_sq, self.eps).map_err(CliError::Core)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_overlay_defaults() {
        let cfg = parse("[remark-3-2-iii]\nhorizon = 3.0\nn_schedule = [2, 4]\n").unwrap();
        let d = Section { horizon: Some(2.0), grid: Some(101), ..Section::default() };
        let s = Scenario::resolve("remark-3-2-iii", d, cfg.get("remark-3-2-iii").cloned(), None).unwrap();
        assert_eq!(s.horizon, 3.0);
        assert_eq!(s.grid, 101);
        assert_eq!(s.n_schedule, Some(vec![2, 4]));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse("[a]\nbogus = 1\n").is_err());
        let bad = Section { sigma_lo_sq: Some(3.0), ..Section::default() };
        assert!(Scenario::resolve("x", Section::default(), Some(bad), None).is_err());
        let bad = Section { method: Some("exact".into()), ..Section::default() };
        assert!(Scenario::resolve("x", Section::default(), Some(bad), None).is_err());
    }

    #[test]
    fn integrand_kinds() {
        let band = VolatilityBand::new(1.0, 2.0).unwrap();
        for k in ["constant", "zero", "half", "remark", "qv-feedback", "cylinder", "sign-changing"] {
            assert!(IntegrandSpec::new(k, &[]).build(&band, 1.0).is_ok(), "{k}");
        }
        assert!(IntegrandSpec::new("steps", &[1.0, 2.0, 3.0]).build(&band, 1.0).is_ok());
        assert!(IntegrandSpec::new("steps", &[]).build(&band, 1.0).is_err());
        assert!(IntegrandSpec::new("zero", &[1.0]).build(&band, 1.0).is_err());
        assert!(IntegrandSpec::new("spline", &[]).build(&band, 1.0).is_err());
        let r = IntegrandSpec::new("remark", &[]).build(&band, 2.0).unwrap();
        assert_eq!(r.coefficients()[0].eval(&[]), 0.5);
    }
}
