//! The four ways of handling treatment started after baseline, each mapped to
//! its estimator.
//!
//! | strategy        | target                         | estimator                                  |
//! |-----------------|--------------------------------|--------------------------------------------|
//! | ignore          | `P(T <= t | X(0))`             | survival model for `T`, no censoring at `V` |
//! | composite       | `P(min(T,V) <= t | X(0))`      | survival model for `min(T,V)`              |
//! | while-untreated | `P(T <= t, T < V | X(0))`      | cause-specific hazards, cumulative incidence |
//! | hypothetical    | `P(T^{v=inf} <= t | X(0))`     | censor at `V`, or model `A(t)` and set it to 0 |
//!
//! Without outcome covariates every strategy falls back to its
//! nonparametric form (product-limit or Aalen-Johansen).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::competing::{self, CauseSpecificPair, CompetingCurves};
use crate::coxfit::{self, Convergence, CoxError, CoxModel, CoxSpec, TieMethod, TreatmentTerm};
use crate::curve::{RiskCurve, SurvivalCurve};
use crate::dataio::{
    compose_outcome, split_at_treatment, CountingProcessDataset, CovariateSlot, DataError, DesignFlavor, Profile,
    Status,
};
use crate::weights::{self, fit_treatment_hazard, Truncation, WeightDiagnostics, WeightError, WeightMode, WeightTable};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("{strategy} needs follow-up after treatment start, which this dataset lacks")]
    DesignMismatch { strategy: String },
    #[error("the hypothetical strategy needs an estimation method")]
    MissingMethod,
    #[error("{0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Cox(#[from] CoxError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    IgnoreTreatment,
    Composite,
    WhileUntreated,
    Hypothetical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypotheticalMethod {
    /// Censor at treatment start; decisions driven by `X(0)` only.
    CensorBaseline,
    /// Model `A(t)` as a covariate, predict with `A(t) = 0`.
    ModelBaseline,
    /// Censor at treatment start with stabilized IPC weights.
    CensorIpcw,
    /// Marginal structural model: `A(t)` term fitted with IPT weights.
    ModelIptw,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::IgnoreTreatment => "ignore",
            Strategy::Composite => "composite",
            Strategy::WhileUntreated => "while-untreated",
            Strategy::Hypothetical => "hypothetical",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ignore" => Ok(Strategy::IgnoreTreatment),
            "composite" => Ok(Strategy::Composite),
            "while-untreated" => Ok(Strategy::WhileUntreated),
            "hypothetical" => Ok(Strategy::Hypothetical),
            _ => Err(format!(
                "unknown strategy `{s}` (ignore, composite, while-untreated, hypothetical)"
            )),
        }
    }
}

impl fmt::Display for HypotheticalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HypotheticalMethod::CensorBaseline => "censor",
            HypotheticalMethod::ModelBaseline => "model",
            HypotheticalMethod::CensorIpcw => "censor-ipcw",
            HypotheticalMethod::ModelIptw => "model-iptw",
        })
    }
}

impl FromStr for HypotheticalMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "censor" => Ok(HypotheticalMethod::CensorBaseline),
            "model" => Ok(HypotheticalMethod::ModelBaseline),
            "censor-ipcw" => Ok(HypotheticalMethod::CensorIpcw),
            "model-iptw" => Ok(HypotheticalMethod::ModelIptw),
            _ => Err(format!("unknown method `{s}` (censor, model, censor-ipcw, model-iptw)")),
        }
    }
}

pub const HYPOTHETICAL_METHODS: [HypotheticalMethod; 4] = [
    HypotheticalMethod::CensorBaseline,
    HypotheticalMethod::ModelBaseline,
    HypotheticalMethod::CensorIpcw,
    HypotheticalMethod::ModelIptw,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub strategy: Strategy,
    pub method: Option<HypotheticalMethod>,
    /// Outcome-model covariates `X(0)`.
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub tie: TieMethod,
    /// Cut times of the step-function treatment coefficient.
    #[serde(default)]
    pub tv_cuts: Vec<f64>,
    /// Extra covariates of the denominator weight model, typically `X(t)`.
    #[serde(default)]
    pub weight_covariates: Vec<String>,
    #[serde(default)]
    pub truncation: Option<Truncation>,
    pub horizon: f64,
}

impl StrategySpec {
    pub fn new(strategy: Strategy, horizon: f64) -> Self {
        Self {
            strategy,
            method: None,
            covariates: Vec::new(),
            tie: TieMethod::Efron,
            tv_cuts: Vec::new(),
            weight_covariates: Vec::new(),
            truncation: None,
            horizon,
        }
    }

    pub fn hypothetical(method: HypotheticalMethod, horizon: f64) -> Self {
        Self {
            method: Some(method),
            ..Self::new(Strategy::Hypothetical, horizon)
        }
    }

    pub fn with_covariates(mut self, names: &[&str]) -> Self {
        self.covariates = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_weight_covariates(mut self, names: &[&str]) -> Self {
        self.weight_covariates = names.iter().map(|s| s.to_string()).collect();
        self
    }

    /// Same options, different strategy.
    pub fn for_strategy(&self, strategy: Strategy, method: Option<HypotheticalMethod>) -> Self {
        Self {
            strategy,
            method,
            ..self.clone()
        }
    }

    pub fn label(&self) -> String {
        match (self.strategy, self.method) {
            (Strategy::Hypothetical, Some(m)) => format!("hypothetical/{m}"),
            (s, _) => s.to_string(),
        }
    }

    fn needs_post_treatment_follow_up(&self) -> bool {
        matches!(
            (self.strategy, self.method),
            (Strategy::IgnoreTreatment, _)
                | (Strategy::Hypothetical, Some(HypotheticalMethod::ModelBaseline))
                | (Strategy::Hypothetical, Some(HypotheticalMethod::ModelIptw))
        )
    }

    fn check(&self, ds: &CountingProcessDataset) -> Result<(), EstimateError> {
        match (self.strategy, self.method) {
            (Strategy::Hypothetical, None) => return Err(EstimateError::MissingMethod),
            (Strategy::Hypothetical, Some(_)) => {}
            (s, Some(_)) => {
                return Err(EstimateError::InvalidSpec(format!(
                    "a method applies only to the hypothetical strategy, not {s}"
                )))
            }
            _ => {}
        }
        if self.needs_post_treatment_follow_up() && ds.flavor() == DesignFlavor::StopsAtTreatment {
            return Err(EstimateError::DesignMismatch { strategy: self.label() });
        }
        if self.horizon.is_nan() || self.horizon <= 0.0 {
            return Err(EstimateError::InvalidSpec("horizon must be positive".into()));
        }
        if self.method == Some(HypotheticalMethod::ModelIptw) {
            for name in &self.covariates {
                if let CovariateSlot::TimeVarying(_) = ds.schema().slot(name)? {
                    return Err(EstimateError::InvalidSpec(format!(
                        "the weighted treatment model takes baseline covariates only; `{name}` is time-dependent"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// What a fitted strategy needs to produce a risk curve for any profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    ProductLimit {
        survival: SurvivalCurve,
    },
    AalenJohansen {
        curves: CompetingCurves,
    },
    /// Predicted with `A(t) = 0` throughout.
    Cox {
        model: Box<CoxModel>,
    },
    CauseSpecific {
        pair: Box<CauseSpecificPair>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub time_unit: String,
    pub events_used: usize,
    pub last_event_time: f64,
    pub convergence: Vec<(String, Convergence)>,
    pub weights: Option<WeightDiagnostics>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedStrategy {
    pub label: String,
    pub spec: StrategySpec,
    pub model: FittedModel,
    pub diagnostics: Diagnostics,
}

impl FittedStrategy {
    pub fn predict(&self, profile: &Profile, horizon: f64) -> Result<RiskCurve, EstimateError> {
        let label = self.label.as_str();
        let curve = match &self.model {
            FittedModel::ProductLimit { survival } => survival.clone().into_risk(label, profile.clone(), horizon),
            FittedModel::AalenJohansen { curves } => curves.event_risk(label, profile.clone(), horizon),
            FittedModel::Cox { model } => {
                model
                    .predict_survival(profile, |_| false)?
                    .into_risk(label, profile.clone(), horizon)
            }
            FittedModel::CauseSpecific { pair } => pair.curves(profile)?.event_risk(label, profile.clone(), horizon),
        };
        Ok(curve)
    }

    /// Warnings that depend on the requested horizon.
    pub fn horizon_warnings(&self, horizon: f64) -> Vec<String> {
        let mut out = Vec::new();
        if horizon > self.diagnostics.last_event_time {
            out.push(format!(
                "horizon {horizon} is beyond the last event time {}; the curve is flat after it",
                self.diagnostics.last_event_time
            ));
        }
        out
    }
}

/// Curve plus the fit behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub curve: RiskCurve,
    pub fitted: FittedStrategy,
}

/// Per-run JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub strategy: String,
    pub spec: StrategySpec,
    pub profile: Profile,
    pub curve: RiskCurve,
    pub diagnostics: Diagnostics,
}

impl Estimate {
    pub fn report(&self) -> Report {
        let mut diagnostics = self.fitted.diagnostics.clone();
        diagnostics
            .warnings
            .extend(self.fitted.horizon_warnings(self.curve.horizon));
        Report {
            strategy: self.fitted.label.clone(),
            spec: self.fitted.spec.clone(),
            profile: self.curve.profile.clone(),
            curve: self.curve.clone(),
            diagnostics,
        }
    }
}

pub fn estimate(
    ds: &CountingProcessDataset,
    spec: &StrategySpec,
    profile: &Profile,
) -> Result<Estimate, EstimateError> {
    let fitted = fit_strategy(ds, spec)?;
    let curve = fitted.predict(profile, spec.horizon)?;
    Ok(Estimate { curve, fitted })
}

/// Every strategy and hypothetical method under shared options, in a fixed
/// order. Failures are returned per strategy.
pub fn estimate_all(
    ds: &CountingProcessDataset,
    shared: &StrategySpec,
    profile: &Profile,
) -> Vec<(String, Result<Estimate, EstimateError>)> {
    all_specs(shared)
        .into_par_iter()
        .map(|spec| (spec.label(), estimate(ds, &spec, profile)))
        .collect()
}

pub fn all_specs(shared: &StrategySpec) -> Vec<StrategySpec> {
    let mut specs = vec![
        shared.for_strategy(Strategy::IgnoreTreatment, None),
        shared.for_strategy(Strategy::Composite, None),
        shared.for_strategy(Strategy::WhileUntreated, None),
    ];
    specs.extend(
        HYPOTHETICAL_METHODS
            .iter()
            .map(|&m| shared.for_strategy(Strategy::Hypothetical, Some(m))),
    );
    specs
}

pub fn fit_strategy(ds: &CountingProcessDataset, spec: &StrategySpec) -> Result<FittedStrategy, EstimateError> {
    spec.check(ds)?;
    let mut diag = Diagnostics {
        time_unit: ds.schema().time_unit.clone(),
        ..Diagnostics::default()
    };
    let outcome = |treatment: Option<TreatmentTerm>| CoxSpec {
        event_code: Status::Event,
        covariates: spec.covariates.clone(),
        treatment,
        tie: spec.tie,
    };
    let nonparametric = spec.covariates.is_empty();

    let model = match (spec.strategy, spec.method) {
        (Strategy::IgnoreTreatment, _) => single_outcome(ds, &outcome(None), None, nonparametric, &mut diag)?,
        (Strategy::Composite, _) => {
            single_outcome(&compose_outcome(ds), &outcome(None), None, nonparametric, &mut diag)?
        }
        (Strategy::WhileUntreated, _) => {
            positivity_check(ds, spec.horizon, &mut diag);
            if nonparametric {
                let curves = competing::aalen_johansen(ds, None)?;
                diag.events_used = split_at_treatment(ds).count_status(Status::Event);
                diag.last_event_time = curves.times.last().copied().unwrap_or(0.0);
                FittedModel::AalenJohansen { curves }
            } else {
                let pair = CauseSpecificPair::fit(ds, &spec.covariates, spec.tie)?;
                diag.events_used = pair.event.n_events;
                diag.convergence.push(("event".into(), pair.event.convergence.clone()));
                diag.last_event_time = pair.event.last_event_time();
                if let Some(m) = &pair.treatment {
                    diag.convergence.push(("treatment".into(), m.convergence.clone()));
                    diag.last_event_time = diag.last_event_time.max(m.last_event_time());
                }
                FittedModel::CauseSpecific { pair: Box::new(pair) }
            }
        }
        (Strategy::Hypothetical, Some(method)) => {
            positivity_check(ds, spec.horizon, &mut diag);
            match method {
                HypotheticalMethod::CensorBaseline => {
                    single_outcome(&split_at_treatment(ds), &outcome(None), None, nonparametric, &mut diag)?
                }
                HypotheticalMethod::CensorIpcw => {
                    let untreated = split_at_treatment(ds);
                    let w = treatment_weights(ds, &untreated, spec, WeightMode::Ipcw)?;
                    diag.weights = Some(w.diagnostics.clone());
                    single_outcome(&untreated, &outcome(None), Some(&w), nonparametric, &mut diag)?
                }
                HypotheticalMethod::ModelBaseline | HypotheticalMethod::ModelIptw => {
                    let term = if ds.treated_person_time() > 0.0 {
                        Some(TreatmentTerm {
                            cuts: spec.tv_cuts.clone(),
                        })
                    } else {
                        diag.warnings
                            .push("no treated follow-up: treatment term dropped from the outcome model".into());
                        None
                    };
                    let w = match method {
                        HypotheticalMethod::ModelIptw => {
                            let w = treatment_weights(ds, ds, spec, WeightMode::Iptw)?;
                            diag.weights = Some(w.diagnostics.clone());
                            Some(w)
                        }
                        _ => None,
                    };
                    let nonparametric = nonparametric && term.is_none();
                    single_outcome(ds, &outcome(term), w.as_ref(), nonparametric, &mut diag)?
                }
            }
        }
        (Strategy::Hypothetical, None) => return Err(EstimateError::MissingMethod),
    };

    Ok(FittedStrategy {
        label: spec.label(),
        spec: spec.clone(),
        model,
        diagnostics: diag,
    })
}

/// Schoenfeld residuals of an unweighted Cox outcome model, recomputed on
/// the data it was fitted to. `None` for nonparametric, cause-specific or
/// weighted fits.
pub fn outcome_residuals(
    ds: &CountingProcessDataset,
    fitted: &FittedStrategy,
) -> Result<Option<Vec<coxfit::SchoenfeldRow>>, EstimateError> {
    let FittedModel::Cox { model } = &fitted.model else {
        return Ok(None);
    };
    if model.weighted {
        return Ok(None);
    }
    let data = match (fitted.spec.strategy, fitted.spec.method) {
        (Strategy::Composite, _) => compose_outcome(ds),
        (Strategy::Hypothetical, Some(HypotheticalMethod::CensorBaseline)) => split_at_treatment(ds),
        _ => ds.clone(),
    };
    Ok(Some(coxfit::schoenfeld_residuals(model, &data, None)?))
}

fn single_outcome(
    ds: &CountingProcessDataset,
    cox: &CoxSpec,
    weights: Option<&WeightTable>,
    nonparametric: bool,
    diag: &mut Diagnostics,
) -> Result<FittedModel, EstimateError> {
    diag.events_used = ds.count_status(Status::Event);
    if nonparametric {
        let survival = competing::product_limit(ds, Status::Event, weights)?;
        diag.last_event_time = survival.times.last().copied().unwrap_or(0.0);
        return Ok(FittedModel::ProductLimit { survival });
    }
    let model = coxfit::fit_weighted(ds, cox, weights)?;
    diag.convergence.push(("outcome".into(), model.convergence.clone()));
    diag.last_event_time = model.last_event_time();
    Ok(FittedModel::Cox { model: Box::new(model) })
}

/// Stabilized weights for `target`: numerator on the outcome covariates,
/// denominator adding the weight covariates. Identically 1 without any
/// treatment starts.
/// The stabilized weights a weighted hypothetical method attaches to its
/// analysis data. `None` for unweighted strategies.
pub fn analysis_weights(
    ds: &CountingProcessDataset,
    spec: &StrategySpec,
) -> Result<Option<WeightTable>, EstimateError> {
    spec.check(ds)?;
    match (spec.strategy, spec.method) {
        (Strategy::Hypothetical, Some(HypotheticalMethod::CensorIpcw)) => {
            treatment_weights(ds, &split_at_treatment(ds), spec, WeightMode::Ipcw).map(Some)
        }
        (Strategy::Hypothetical, Some(HypotheticalMethod::ModelIptw)) => {
            treatment_weights(ds, ds, spec, WeightMode::Iptw).map(Some)
        }
        _ => Ok(None),
    }
}

fn treatment_weights(
    ds: &CountingProcessDataset,
    target: &CountingProcessDataset,
    spec: &StrategySpec,
    mode: WeightMode,
) -> Result<WeightTable, EstimateError> {
    if ds.count_status(Status::TreatmentStart) == 0 {
        return Ok(WeightTable::uniform(target, mode));
    }
    let mut den_covs = spec.covariates.clone();
    for c in &spec.weight_covariates {
        if !den_covs.contains(c) {
            den_covs.push(c.clone());
        }
    }
    let numerator = fit_treatment_hazard(ds, &spec.covariates, spec.tie)?;
    let denominator = if den_covs == spec.covariates {
        numerator.clone()
    } else {
        fit_treatment_hazard(ds, &den_covs, spec.tie)?
    };
    Ok(weights::stabilized_weights(
        target,
        &numerator,
        &denominator,
        mode,
        spec.truncation,
    )?)
}

fn positivity_check(ds: &CountingProcessDataset, horizon: f64, diag: &mut Diagnostics) {
    let last = ds.last_untreated_time();
    if last < horizon {
        diag.warnings.push(format!(
            "positivity: no untreated follow-up after {last}, before the horizon {horizon}; consider a shorter horizon"
        ));
    }
}

#[cfg(test)]
mod tests;
