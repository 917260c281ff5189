use rayon::prelude::*;

use super::policy::{ControlPolicy, PathView};
use super::simulate::simulate_paths;
use crate::error::{Error, Result};
use crate::gcore::{TimeGrid, VolatilityBand};
use crate::report::{EstimateReport, Method};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyStats {
    pub mean: f64,
    pub stderr: f64,
}

impl PolicyStats {
    /// Mean and standard error, summed in path order.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return Self { mean, stderr: 0.0 };
        }
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self { mean, stderr: (var / n).sqrt() }
    }
}

#[derive(Debug, Clone)]
pub struct McEstimate {
    pub report: EstimateReport,
    pub best: usize,
    pub per_policy: Vec<PolicyStats>,
}

/// `max_P E_P[F]` over the laws of `policies`: a lower bound for `Ê[F]`.
/// All policies share the master seed.
pub fn mc_estimate(
    band: &VolatilityBand,
    grid: &TimeGrid,
    policies: &[ControlPolicy],
    f: impl Fn(&PathView) -> f64 + Sync,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if policies.is_empty() {
        return Err(Error::EmptyPolicyList);
    }
    let mut per_policy = Vec::with_capacity(policies.len());
    for policy in policies {
        let bundle = simulate_paths(band, grid, policy, n_paths, seed)?;
        let samples: Vec<f64> =
            (0..n_paths).into_par_iter().map(|p| f(&bundle.path(p))).collect();
        per_policy.push(PolicyStats::from_samples(&samples));
    }
    let best = per_policy
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if s.mean > per_policy[b].mean { i } else { b });
    let report =
        EstimateReport::single(per_policy[best].mean, per_policy[best].stderr, Method::McLowerBound);
    Ok(McEstimate { report, best, per_policy })
}
