//! Simulate, estimate and compare with the truth over several seeds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate, true_risks, ScenarioSpec, SimError, TruthOracle};
use crate::dataio::Profile;
use crate::predictimands::{estimate, StrategySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPlan {
    pub n: usize,
    pub seeds: Vec<u64>,
    pub profile: Profile,
    pub horizon: f64,
    pub strategies: Vec<StrategySpec>,
    /// Bound on the absolute seed-mean error.
    pub tolerance: f64,
    pub truth_replications: usize,
    pub truth_seed: u64,
}

impl ValidationPlan {
    /// Seeds `first..first + count`.
    pub fn seed_range(first: u64, count: usize) -> Vec<u64> {
        (first..first + count as u64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyValidation {
    pub label: String,
    pub truth: f64,
    pub truth_standard_error: f64,
    /// Risk at the horizon per seed; `None` when the fit failed.
    pub estimates: Vec<Option<f64>>,
    pub errors: Vec<String>,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n: usize,
    pub seeds: Vec<u64>,
    pub horizon: f64,
    pub tolerance: f64,
    pub truth: TruthOracle,
    pub strategies: Vec<StrategyValidation>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn strategy(&self, label: &str) -> Option<&StrategyValidation> {
        self.strategies.iter().find(|s| s.label == label)
    }
}

pub fn validate(spec: &ScenarioSpec, plan: &ValidationPlan) -> Result<ValidationReport, SimError> {
    if plan.seeds.is_empty() {
        return Err(SimError::InvalidScenario("validation needs at least one seed".into()));
    }
    let truth = true_risks(
        spec,
        &plan.profile,
        plan.horizon,
        plan.truth_replications,
        plan.truth_seed,
    )?;
    let per_seed = plan
        .seeds
        .par_iter()
        .map(|&seed| {
            let ds = simulate(spec, plan.n, seed)?;
            Ok(plan
                .strategies
                .iter()
                .map(|s| {
                    let spec = StrategySpec {
                        horizon: plan.horizon,
                        ..s.clone()
                    };
                    estimate(&ds, &spec, &plan.profile)
                        .map(|e| e.curve.at_horizon())
                        .map_err(|e| format!("seed {seed}: {e}"))
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    let strategies: Vec<StrategyValidation> = plan
        .strategies
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let target = truth.risks.get(s.strategy);
            let results: Vec<&Result<f64, String>> = per_seed.iter().map(|r| &r[k]).collect();
            let estimates: Vec<Option<f64>> = results.iter().map(|r| r.as_ref().ok().copied()).collect();
            let errors: Vec<String> = results.iter().filter_map(|r| r.as_ref().err().cloned()).collect();
            let ok: Vec<f64> = estimates.iter().flatten().copied().collect();
            let m = ok.len().max(1) as f64;
            let mean = ok.iter().sum::<f64>() / m;
            let rmse = (ok.iter().map(|e| (e - target).powi(2)).sum::<f64>() / m).sqrt();
            let bias = mean - target;
            StrategyValidation {
                label: s.label(),
                truth: target,
                truth_standard_error: truth.standard_errors.get(s.strategy),
                estimates,
                pass: errors.is_empty() && !ok.is_empty() && bias.abs() < plan.tolerance,
                errors,
                mean,
                bias,
                rmse,
            }
        })
        .collect();
    Ok(ValidationReport {
        n: plan.n,
        seeds: plan.seeds.clone(),
        horizon: plan.horizon,
        tolerance: plan.tolerance,
        pass: strategies.iter().all(|s| s.pass),
        truth,
        strategies,
    })
}
