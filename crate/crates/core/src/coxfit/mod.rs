//! Cox proportional hazards regression on counting-process data.
//!
//! Coefficients maximize the (optionally weighted) partial likelihood by
//! Newton-Raphson from zero with step-halving. Ties are handled by Breslow
//! or Efron; the baseline cumulative hazard uses the same tie method as the
//! coefficients. A treatment term may carry a step-function coefficient: the
//! follow-up is split at the cut times and each segment gets its own
//! coefficient.

pub(crate) mod design;
mod engine;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::SurvivalCurve;
use crate::dataio::{CountingProcessDataset, DataError, Profile, Status};
use crate::weights::WeightTable;
use design::{Column, RiskRows, SweepOrder};
use engine::Problem;

pub const MAX_ITER: usize = 50;
pub const SCORE_TOL: f64 = 1e-8;
pub const LOGLIK_TOL: f64 = 1e-10;
/// Coefficients beyond this magnitude with a non-vanishing score are
/// reported as a monotone likelihood.
pub const BETA_BOUND: f64 = 15.0;

#[derive(Debug, Error)]
pub enum CoxError {
    #[error("no events with status {0:?}")]
    NoEvents(Status),
    #[error("monotone likelihood: coefficient `{term}` diverges")]
    MonotoneLikelihood { term: String },
    #[error("information matrix is singular")]
    Singular,
    #[error("Newton-Raphson did not converge in {0} iterations")]
    NotConverged(usize),
    #[error("profile lacks covariate `{0}`")]
    ProfileIncomplete(String),
    #[error("subject {subject}: `{covariate}` is missing; impute first")]
    MissingCovariate { covariate: String, subject: String },
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("weight table does not match the dataset")]
    WeightShape,
    #[error("coefficient vector has length {got}, model has {expected} terms")]
    BetaLength { expected: usize, got: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMethod {
    #[default]
    Efron,
    Breslow,
}

/// Time-dependent treatment term `A(t)`. With cut times `c1 < c2 < ...` the
/// coefficient is a step function with one level per segment `(0,c1]`,
/// `(c1,c2]`, ..., `(ck, inf)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TreatmentTerm {
    pub cuts: Vec<f64>,
}

impl TreatmentTerm {
    fn segments(&self) -> Vec<(f64, f64)> {
        let mut bounds = vec![0.0];
        bounds.extend(&self.cuts);
        bounds.push(f64::INFINITY);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn segment_name(lo: f64, hi: f64, single: bool) -> String {
        if single {
            "treated".into()
        } else if hi.is_infinite() {
            format!("treated:({lo},inf)")
        } else {
            format!("treated:({lo},{hi}]")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxSpec {
    pub event_code: Status,
    /// Baseline or time-dependent covariate names.
    pub covariates: Vec<String>,
    pub treatment: Option<TreatmentTerm>,
    #[serde(default)]
    pub tie: TieMethod,
}

impl CoxSpec {
    pub fn new(event_code: Status, covariates: &[&str]) -> Self {
        Self {
            event_code,
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            treatment: None,
            tie: TieMethod::Efron,
        }
    }

    pub fn with_tie(mut self, tie: TieMethod) -> Self {
        self.tie = tie;
        self
    }

    pub fn with_treatment(mut self, cuts: &[f64]) -> Self {
        self.treatment = Some(TreatmentTerm { cuts: cuts.to_vec() });
        self
    }

    fn segments(&self) -> Vec<(f64, f64)> {
        self.treatment.as_ref().map_or_else(Vec::new, TreatmentTerm::segments)
    }

    /// Coefficient names in model order.
    pub fn term_names(&self) -> Vec<String> {
        let segs = self.segments();
        let single = segs.len() == 1;
        self.covariates
            .iter()
            .cloned()
            .chain(segs.iter().map(|&(lo, hi)| TreatmentTerm::segment_name(lo, hi, single)))
            .collect()
    }

    fn columns(&self, ds: &CountingProcessDataset) -> Result<Vec<Column>, CoxError> {
        let mut cols = Vec::new();
        for name in &self.covariates {
            cols.push(Column::Covariate(ds.schema().slot(name)?));
        }
        cols.extend(self.segments().into_iter().map(|(lo, hi)| Column::Treatment { lo, hi }));
        Ok(cols)
    }

    fn validate(&self, ds: &CountingProcessDataset) -> Result<(), CoxError> {
        if self.event_code == Status::Censored {
            return Err(CoxError::InvalidSpec("event code cannot be `censored`".into()));
        }
        for (i, name) in self.covariates.iter().enumerate() {
            if self.covariates[..i].contains(name) {
                return Err(CoxError::InvalidSpec(format!("covariate `{name}` listed twice")));
            }
        }
        if let Some(term) = &self.treatment {
            if self.event_code == Status::TreatmentStart {
                return Err(CoxError::InvalidSpec(
                    "a treatment term cannot predict treatment start".into(),
                ));
            }
            let last = ds.subjects().iter().map(|s| s.end_time()).fold(0.0, f64::max);
            let ok = term.cuts.windows(2).all(|w| w[0] < w[1]) && term.cuts.iter().all(|&c| c > 0.0 && c < last);
            if !ok {
                return Err(CoxError::InvalidSpec(format!(
                    "treatment cuts {:?} must be strictly increasing within (0, {last})",
                    term.cuts
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    /// Max absolute score component at the returned coefficients.
    pub gradient_norm: f64,
    pub loglik: f64,
    pub loglik_null: f64,
    /// Information matrix is not positive definite at the solution.
    pub degenerate: bool,
}

/// Step function `H0(t)` at the covariate origin.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineHazard {
    pub times: Vec<f64>,
    pub increments: Vec<f64>,
}

impl BaselineHazard {
    pub fn cumulative(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        self.increments[..k].iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelJson", try_from = "ModelJson")]
pub struct CoxModel {
    pub spec: CoxSpec,
    pub terms: Vec<String>,
    pub beta: Vec<f64>,
    /// Row-major observed information at `beta`.
    pub info_matrix: Vec<f64>,
    pub baseline: BaselineHazard,
    pub convergence: Convergence,
    pub n_events: usize,
    pub weighted: bool,
}

/// Residual of one event: covariate minus its risk-set weighted mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchoenfeldRow {
    pub time: f64,
    pub subject: String,
    pub residuals: Vec<f64>,
}

struct Prepared {
    rows: RiskRows,
    order: SweepOrder,
    center: Vec<f64>,
}

impl Prepared {
    fn new(ds: &CountingProcessDataset, spec: &CoxSpec, weights: Option<&WeightTable>) -> Result<Self, CoxError> {
        spec.validate(ds)?;
        let columns = spec.columns(ds)?;
        let cuts = spec.treatment.as_ref().map_or(&[][..], |t| &t.cuts[..]);
        let untreated_only = spec.event_code == Status::TreatmentStart;
        let rows = RiskRows::build(ds, &columns, cuts, weights, untreated_only)?;
        let order = SweepOrder::new(&rows, |i| rows.status[i] == spec.event_code);
        let n = rows.len().max(1) as f64;
        let center = (0..rows.p)
            .map(|j| (0..rows.len()).map(|i| rows.x[i * rows.p + j]).sum::<f64>() / n)
            .collect();
        Ok(Self { rows, order, center })
    }

    fn problem(&self, tie: TieMethod) -> Problem<'_> {
        Problem {
            rows: &self.rows,
            order: &self.order,
            center: &self.center,
            tie,
        }
    }
}

fn check_len(spec: &CoxSpec, beta: &[f64]) -> Result<(), CoxError> {
    let expected = spec.term_names().len();
    if beta.len() != expected {
        return Err(CoxError::BetaLength {
            expected,
            got: beta.len(),
        });
    }
    Ok(())
}

/// Log partial likelihood at `beta`.
pub fn partial_loglik(
    ds: &CountingProcessDataset,
    spec: &CoxSpec,
    weights: Option<&WeightTable>,
    beta: &[f64],
) -> Result<f64, CoxError> {
    check_len(spec, beta)?;
    let prep = Prepared::new(ds, spec, weights)?;
    // centering shifts numerator and denominator terms by the same amount
    Ok(prep.problem(spec.tie).evaluate(beta, false).loglik)
}

pub fn score(
    ds: &CountingProcessDataset,
    spec: &CoxSpec,
    weights: Option<&WeightTable>,
    beta: &[f64],
) -> Result<Vec<f64>, CoxError> {
    check_len(spec, beta)?;
    let prep = Prepared::new(ds, spec, weights)?;
    Ok(prep.problem(spec.tie).evaluate(beta, false).score)
}

/// Observed information (negative Hessian), row-major.
pub fn information(
    ds: &CountingProcessDataset,
    spec: &CoxSpec,
    weights: Option<&WeightTable>,
    beta: &[f64],
) -> Result<Vec<f64>, CoxError> {
    check_len(spec, beta)?;
    let prep = Prepared::new(ds, spec, weights)?;
    Ok(prep.problem(spec.tie).evaluate(beta, true).info)
}

pub fn fit(ds: &CountingProcessDataset, spec: &CoxSpec) -> Result<CoxModel, CoxError> {
    fit_weighted(ds, spec, None)
}

pub fn fit_weighted(
    ds: &CountingProcessDataset,
    spec: &CoxSpec,
    weights: Option<&WeightTable>,
) -> Result<CoxModel, CoxError> {
    let prep = Prepared::new(ds, spec, weights)?;
    if prep.order.events.is_empty() {
        return Err(CoxError::NoEvents(spec.event_code));
    }
    let terms = spec.term_names();
    let p = terms.len();
    let problem = prep.problem(spec.tie);

    // constant columns carry no information; they stay at zero
    let active: Vec<usize> = (0..p)
        .filter(|&j| (0..prep.rows.len()).any(|i| prep.rows.x[i * p + j] != prep.center[j]))
        .collect();
    let mut beta = vec![0.0; p];
    let mut current = problem.evaluate(&beta, true);
    let loglik_null = current.loglik;
    let mut iterations = 0;
    let max_abs = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));

    while max_abs(&current.score) >= SCORE_TOL {
        if iterations == MAX_ITER {
            return Err(CoxError::NotConverged(MAX_ITER));
        }
        iterations += 1;
        let step = newton_step(&current.info, &current.score, p, &active).ok_or(CoxError::Singular)?;
        let mut scale = 1.0;
        let (candidate, next) = loop {
            let candidate: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let next = problem.evaluate(&candidate, true);
            if next.loglik.is_finite() && next.loglik >= current.loglik - 1e-12 * current.loglik.abs() {
                break (candidate, next);
            }
            scale *= 0.5;
            if scale < 1e-9 {
                break (beta.clone(), problem.evaluate(&beta, true));
            }
        };
        let change = (next.loglik - current.loglik).abs();
        if let Some(j) = candidate.iter().position(|b| b.abs() > BETA_BOUND) {
            if max_abs(&next.score) >= SCORE_TOL {
                return Err(CoxError::MonotoneLikelihood { term: terms[j].clone() });
            }
        }
        beta = candidate;
        current = next;
        if change <= LOGLIK_TOL * current.loglik.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let degenerate = p > 0 && DMatrix::from_row_slice(p, p, &current.info).cholesky().is_none();
    let shift: f64 = prep.center.iter().zip(&beta).map(|(c, b)| c * b).sum();
    let rescale = (-shift).exp();
    let (times, increments) = problem
        .baseline_increments(&beta)
        .into_iter()
        .map(|(t, dh)| (t, dh * rescale))
        .unzip();

    Ok(CoxModel {
        spec: spec.clone(),
        terms,
        info_matrix: current.info.clone(),
        baseline: BaselineHazard { times, increments },
        convergence: Convergence {
            iterations,
            gradient_norm: max_abs(&current.score),
            loglik: current.loglik,
            loglik_null,
            degenerate,
        },
        n_events: prep.order.events.len(),
        weighted: weights.is_some(),
        beta,
    })
}

/// Newton direction restricted to the `active` coefficients.
fn newton_step(info: &[f64], score: &[f64], p: usize, active: &[usize]) -> Option<Vec<f64>> {
    let q = active.len();
    let sub = DMatrix::from_fn(q, q, |a, b| info[active[a] * p + active[b]]);
    let rhs = DVector::from_iterator(q, active.iter().map(|&j| score[j]));
    let step = sub.cholesky()?.solve(&rhs);
    if !step.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mut full = vec![0.0; p];
    for (&j, v) in active.iter().zip(step.iter()) {
        full[j] = *v;
    }
    Some(full)
}

/// Schoenfeld residuals of `model` on `ds`, one row per event in time order.
pub fn schoenfeld_residuals(
    model: &CoxModel,
    ds: &CountingProcessDataset,
    weights: Option<&WeightTable>,
) -> Result<Vec<SchoenfeldRow>, CoxError> {
    let prep = Prepared::new(ds, &model.spec, weights)?;
    let rows = prep
        .problem(model.spec.tie)
        .schoenfeld(&model.beta)
        .into_iter()
        .map(|(i, residuals)| SchoenfeldRow {
            time: prep.rows.stop[i],
            subject: ds.subjects()[prep.rows.subject[i]].id.clone(),
            residuals,
        })
        .collect();
    Ok(rows)
}

pub fn write_schoenfeld_csv(
    model: &CoxModel,
    rows: &[SchoenfeldRow],
    mut out: impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(out, "time,id,{}", model.terms.join(","))?;
    for r in rows {
        let vals: Vec<String> = r.residuals.iter().map(f64::to_string).collect();
        writeln!(out, "{},{},{}", r.time, r.subject, vals.join(","))?;
    }
    Ok(())
}

impl CoxModel {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.terms.iter().position(|t| t == name).map(|j| self.beta[j])
    }

    /// Baseline cumulative hazard `H0(t)`.
    pub fn baseline_cumhaz(&self) -> &BaselineHazard {
        &self.baseline
    }

    /// Linear predictor at time `t`; `lookup` supplies covariate values.
    pub fn linear_predictor_with(
        &self,
        lookup: impl Fn(&str) -> Option<f64>,
        treated: bool,
        t: f64,
    ) -> Result<f64, CoxError> {
        let mut lp = 0.0;
        for (name, b) in self.spec.covariates.iter().zip(&self.beta) {
            let x = lookup(name).ok_or_else(|| CoxError::ProfileIncomplete(name.clone()))?;
            lp += b * x;
        }
        if treated {
            let k = self.spec.covariates.len();
            let segs = self.spec.segments();
            if let Some(s) = segs.iter().position(|&(lo, hi)| t > lo && t <= hi) {
                lp += self.beta[k + s];
            }
        }
        Ok(lp)
    }

    pub fn linear_predictor(&self, profile: &Profile, treated: bool, t: f64) -> Result<f64, CoxError> {
        self.linear_predictor_with(|n| profile.get(n).copied(), treated, t)
    }

    /// Profile-specific hazard increments `dH0(t_k) exp(lp(t_k))`.
    pub fn hazard_increments(
        &self,
        profile: &Profile,
        treatment_path: impl Fn(f64) -> bool,
    ) -> Result<Vec<(f64, f64)>, CoxError> {
        self.baseline
            .times
            .iter()
            .zip(&self.baseline.increments)
            .map(|(&t, &dh)| Ok((t, dh * self.linear_predictor(profile, treatment_path(t), t)?.exp())))
            .collect()
    }

    /// `S(t) = exp(-sum_{t_k <= t} dH0(t_k) exp(lp(t_k)))`.
    pub fn predict_survival(
        &self,
        profile: &Profile,
        treatment_path: impl Fn(f64) -> bool,
    ) -> Result<SurvivalCurve, CoxError> {
        let mut times = vec![0.0];
        let mut surv = vec![1.0];
        let mut cum = 0.0;
        for (t, dh) in self.hazard_increments(profile, treatment_path)? {
            cum += dh;
            times.push(t);
            surv.push((-cum).exp());
        }
        Ok(SurvivalCurve { times, surv })
    }

    pub fn last_event_time(&self) -> f64 {
        self.baseline.times.last().copied().unwrap_or(0.0)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    event_code: Status,
    covariates: Vec<String>,
    treatment_cuts: Option<Vec<f64>>,
    tie: TieMethod,
    beta: BTreeMap<String, f64>,
    info_matrix: Vec<f64>,
    baseline_hazard: Vec<(f64, f64)>,
    convergence: Convergence,
    n_events: usize,
    weighted: bool,
}

impl From<CoxModel> for ModelJson {
    fn from(m: CoxModel) -> Self {
        Self {
            event_code: m.spec.event_code,
            covariates: m.spec.covariates,
            treatment_cuts: m.spec.treatment.map(|t| t.cuts),
            tie: m.spec.tie,
            beta: m.terms.into_iter().zip(m.beta).collect(),
            info_matrix: m.info_matrix,
            baseline_hazard: m.baseline.times.into_iter().zip(m.baseline.increments).collect(),
            convergence: m.convergence,
            n_events: m.n_events,
            weighted: m.weighted,
        }
    }
}

impl TryFrom<ModelJson> for CoxModel {
    type Error = String;

    fn try_from(j: ModelJson) -> Result<Self, String> {
        let spec = CoxSpec {
            event_code: j.event_code,
            covariates: j.covariates,
            treatment: j.treatment_cuts.map(|cuts| TreatmentTerm { cuts }),
            tie: j.tie,
        };
        let terms = spec.term_names();
        let beta = terms
            .iter()
            .map(|t| {
                j.beta
                    .get(t)
                    .copied()
                    .ok_or_else(|| format!("missing coefficient `{t}`"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if j.beta.len() != terms.len() {
            return Err("unexpected coefficient names".into());
        }
        if j.info_matrix.len() != terms.len() * terms.len() {
            return Err("information matrix has the wrong size".into());
        }
        let (times, increments) = j.baseline_hazard.into_iter().unzip();
        Ok(CoxModel {
            spec,
            terms,
            beta,
            info_matrix: j.info_matrix,
            baseline: BaselineHazard { times, increments },
            convergence: j.convergence,
            n_events: j.n_events,
            weighted: j.weighted,
        })
    }
}

#[cfg(test)]
mod tests;
