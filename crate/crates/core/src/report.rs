use std::fmt;

/// How an estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Backward dynamic programming; the error proxy is a refinement delta.
    Dp,
    /// Best sample mean over candidate policies; only a lower bound on `Ê`.
    McLowerBound,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dp => "dp",
            Method::McLowerBound => "MC lower bound",
        })
    }
}

/// Point value of a sublinear expectation plus an error proxy.
///
/// For schedule-based estimates `per_n[j]` is the value at `schedule[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub value: f64,
    pub error_proxy: f64,
    pub method: Method,
    pub per_n: Vec<f64>,
    pub per_n_error: Vec<f64>,
    pub schedule: Vec<usize>,
    /// Evaluations that hit the edge of the state grid.
    pub clamped: u64,
}

impl EstimateReport {
    pub fn single(value: f64, error_proxy: f64, method: Method) -> Self {
        Self {
            value,
            error_proxy: error_proxy.max(0.0),
            method,
            per_n: Vec::new(),
            per_n_error: Vec::new(),
            schedule: Vec::new(),
            clamped: 0,
        }
    }

    /// Per-n table as CSV with columns `n,value,error_proxy,method`.
    pub fn per_n_csv(&self) -> String {
        let mut out = String::from("n,value,error_proxy,method\n");
        for ((n, v), e) in self.schedule.iter().zip(&self.per_n).zip(&self.per_n_error) {
            out.push_str(&format!("{n},{v:.12e},{e:.6e},{}\n", self.method));
        }
        out
    }
}
