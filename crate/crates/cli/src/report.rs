//! Summary text and CSV tables of one scenario run.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::Scenario;
use crate::CliError;

/// Where an expected value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    ClosedForm,
    Inequality,
    Identity,
    Oracle,
    Property,
    Target,
}

impl Source {
    pub fn tag(&self) -> &'static str {
        match self {
            Source::ClosedForm => "closed-form",
            Source::Inequality => "inequality",
            Source::Identity => "identity",
            Source::Oracle => "oracle",
            Source::Property => "property",
            Source::Target => "analytic-target",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Expectation {
    pub name: String,
    pub value: String,
    pub source: Source,
}

#[derive(Debug, Clone)]
pub struct Assertion {
    pub name: String,
    pub detail: String,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, scenario: &str) -> String {
        let mut out = String::new();
        writeln!(out, "# scenario: {scenario}").unwrap();
        writeln!(out, "# columns: {}", self.columns.join(",")).unwrap();
        writeln!(out, "{}", self.columns.join(",")).unwrap();
        for r in &self.rows {
            writeln!(out, "{}", r.join(",")).unwrap();
        }
        out
    }
}

/// Fixed-precision float for reports.
pub fn num(v: f64) -> String {
    format!("{v:.9}")
}

pub fn sci(v: f64) -> String {
    format!("{v:.3e}")
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub expected: Vec<Expectation>,
    pub lines: Vec<String>,
    pub assertions: Vec<Assertion>,
    pub tables: Vec<Table>,
}

impl Outcome {
    pub fn expect(&mut self, name: &str, value: impl Into<String>, source: Source) {
        self.expected.push(Expectation { name: name.into(), value: value.into(), source });
    }

    pub fn line(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key}: {value}"));
    }

    pub fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.assertions.push(Assertion { name: name.into(), detail: detail.into(), pass });
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn summary(&self, sc: &Scenario) -> String {
        let mut out = String::new();
        writeln!(out, "# scenario: {}", sc.name).unwrap();
        writeln!(
            out,
            "# band: sigma_lo_sq={} sigma_hi_sq={} eps={} horizon={}",
            sc.sigma_lo_sq, sc.sigma_hi_sq, sc.eps, sc.horizon
        )
        .unwrap();
        writeln!(out, "# seed={} grid={} paths={} method={}", sc.seed, sc.grid, sc.paths, method_name(sc)).unwrap();
        for e in &self.expected {
            writeln!(out, "# expected: {}: {} [{}]", e.name, e.value, e.source.tag()).unwrap();
        }
        for l in &self.lines {
            writeln!(out, "{l}").unwrap();
        }
        for a in &self.assertions {
            let v = if a.pass { "PASS" } else { "FAIL" };
            writeln!(out, "assert {}: {v} ({})", a.name, a.detail).unwrap();
        }
        writeln!(out, "result: {}", if self.passed() { "PASS" } else { "FAIL" }).unwrap();
        out
    }

    /// Writes `<scenario>_summary.txt` and one `<scenario>_<table>.csv` per table.
    pub fn write(&self, sc: &Scenario, dir: &Path) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join(format!("{}_summary.txt", sc.name)), self.summary(sc)).map_err(io)?;
        for t in &self.tables {
            std::fs::write(dir.join(format!("{}_{}.csv", sc.name, t.name)), t.to_csv(&sc.name)).map_err(io)?;
        }
        Ok(())
    }
}

fn method_name(sc: &Scenario) -> &'static str {
    match sc.method {
        gexpect::discriminant::EvalMethod::Dp => "dp",
        gexpect::discriminant::EvalMethod::Mc => "mc",
        gexpect::discriminant::EvalMethod::Both => "both",
    }
}
