//! Stabilized inverse-probability weights for remaining untreated.
//!
//! Both the numerator and the denominator are Cox models for the treatment
//! start intensity. For an episode ending at `t` while still untreated the
//! weight is `S_num(t) / S_den(t)`, with `S(t) = exp(-sum_{t_k <= t} dH0(t_k)
//! exp(lp(t_k)))` accumulated over the model's event times using the
//! covariates in force at each `t_k`.
//!
//! After treatment starts at `V` the weight is frozen. IPCW freezes the
//! survival ratio at `V`. IPTW freezes `S_num(V-) dA_num(V) / (S_den(V-)
//! dA_den(V))`, the ratio of treatment-start densities.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coxfit::{self, CoxError, CoxModel, CoxSpec, TieMethod};
use crate::dataio::{split_at_treatment, CountingProcessDataset, CovariateSlot, Episode, Status, SubjectRecord};

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("no treatment starts in the data")]
    NoTreatmentStarts,
    #[error("subject {subject}: non-positive or non-finite weight at time {time}")]
    NonPositiveProbability { subject: String, time: f64 },
    #[error("weight model must have treatment start as its event")]
    NotATreatmentModel,
    #[error("truncation percentiles must satisfy 0 <= lower < upper <= 100")]
    BadTruncation,
    #[error(transparent)]
    Cox(#[from] CoxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Attached to censor-at-treatment analyses.
    Ipcw,
    /// Attached to analyses with treatment as a time-dependent covariate.
    Iptw,
}

/// Percentile clamp applied to the untruncated weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub episodes: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// `(sum w)^2 / sum w^2`.
    pub effective_sample_size: f64,
    /// Range over treatment event times of the mean weight in the risk set.
    pub risk_set_mean_min: f64,
    pub risk_set_mean_max: f64,
    /// Clamp bounds when truncation was requested.
    pub truncated_to: Option<(f64, f64)>,
}

impl WeightDiagnostics {
    /// Risk-set means within `[0.8, 1.2]`, the usual sign of a well-behaved
    /// weight model. Reported, never enforced.
    pub fn risk_set_means_stable(&self) -> bool {
        self.risk_set_mean_min >= 0.8 && self.risk_set_mean_max <= 1.2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub mode: WeightMode,
    ids: Vec<String>,
    spans: Vec<Vec<(f64, f64)>>,
    weights: Vec<Vec<f64>>,
    pub diagnostics: WeightDiagnostics,
    pub truncation: Option<Truncation>,
}

impl WeightTable {
    /// Weight of episode `episode` of subject number `subject`.
    pub fn weight(&self, subject: usize, episode: usize) -> f64 {
        self.weights[subject][episode]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64, f64, f64)> {
        self.ids
            .iter()
            .zip(&self.spans)
            .zip(&self.weights)
            .flat_map(|((id, spans), ws)| spans.iter().zip(ws).map(move |(&(a, b), &w)| (id.as_str(), a, b, w)))
    }

    /// All-ones table, used when the treatment process is absent.
    pub fn uniform(ds: &CountingProcessDataset, mode: WeightMode) -> Self {
        let weights: Vec<Vec<f64>> = ds.subjects().iter().map(|s| vec![1.0; s.episodes.len()]).collect();
        Self::assemble(ds, mode, weights, None, &[])
    }

    /// Table of externally computed weights, one per episode.
    pub fn from_weights(
        ds: &CountingProcessDataset,
        mode: WeightMode,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self, WeightError> {
        let shaped = weights.len() == ds.len()
            && ds
                .subjects()
                .iter()
                .zip(&weights)
                .all(|(s, w)| s.episodes.len() == w.len());
        if !shaped {
            return Err(CoxError::WeightShape.into());
        }
        for (s, ws) in ds.subjects().iter().zip(&weights) {
            if let Some((e, _)) = s.episodes.iter().zip(ws).find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
                return Err(WeightError::NonPositiveProbability {
                    subject: s.id.clone(),
                    time: e.tstop,
                });
            }
        }
        Ok(Self::assemble(ds, mode, weights, None, &[]))
    }

    pub(crate) fn check_shape(&self, ds: &CountingProcessDataset) -> Result<(), CoxError> {
        let same = self.ids.len() == ds.len()
            && ds
                .subjects()
                .iter()
                .zip(&self.ids)
                .zip(&self.spans)
                .all(|((s, id), spans)| {
                    s.id == *id
                        && s.episodes.len() == spans.len()
                        && s.episodes
                            .iter()
                            .zip(spans)
                            .all(|(e, &(a, b))| e.tstart == a && e.tstop == b)
                });
        if same {
            Ok(())
        } else {
            Err(CoxError::WeightShape)
        }
    }

    fn assemble(
        ds: &CountingProcessDataset,
        mode: WeightMode,
        weights: Vec<Vec<f64>>,
        truncation: Option<(Truncation, (f64, f64))>,
        event_times: &[f64],
    ) -> Self {
        let spans = ds
            .subjects()
            .iter()
            .map(|s| s.episodes.iter().map(|e| (e.tstart, e.tstop)).collect())
            .collect();
        let ids = ds.subjects().iter().map(|s| s.id.clone()).collect();
        let flat: Vec<f64> = weights.iter().flatten().copied().collect();
        let n = flat.len().max(1) as f64;
        let sum: f64 = flat.iter().sum();
        let sum_sq: f64 = flat.iter().map(|w| w * w).sum();
        let (rs_min, rs_max) = risk_set_means(ds, &weights, event_times);
        let diagnostics = WeightDiagnostics {
            episodes: flat.len(),
            mean: sum / n,
            min: flat.iter().copied().fold(f64::INFINITY, f64::min),
            max: flat.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            effective_sample_size: if sum_sq > 0.0 { sum * sum / sum_sq } else { 0.0 },
            risk_set_mean_min: rs_min,
            risk_set_mean_max: rs_max,
            truncated_to: truncation.map(|(_, b)| b),
        };
        Self {
            mode,
            ids,
            spans,
            weights,
            diagnostics,
            truncation: truncation.map(|(t, _)| t),
        }
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "id,tstart,tstop,weight")?;
        for (id, a, b, w) in self.iter() {
            writeln!(out, "{id},{a},{b},{w}")?;
        }
        Ok(())
    }
}

/// Mean weight among untreated rows at risk at each time, as (min, max).
fn risk_set_means(ds: &CountingProcessDataset, weights: &[Vec<f64>], times: &[f64]) -> (f64, f64) {
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for (s, ws) in ds.subjects().iter().zip(weights) {
        for (e, &w) in s.episodes.iter().zip(ws) {
            if !e.treated {
                rows.push((e.tstart, e.tstop, w));
            }
        }
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut by_stop: Vec<usize> = (0..rows.len()).collect();
    by_stop.sort_by(|&a, &b| rows[b].1.total_cmp(&rows[a].1));
    let mut by_start: Vec<usize> = (0..rows.len()).collect();
    by_start.sort_by(|&a, &b| rows[b].0.total_cmp(&rows[a].0));
    let mut times = times.to_vec();
    times.sort_by(|a, b| b.total_cmp(a));
    times.dedup();
    let (mut sum, mut count, mut ip, mut is) = (0.0, 0usize, 0, 0);
    for t in times {
        while ip < rows.len() && rows[by_stop[ip]].1 >= t {
            sum += rows[by_stop[ip]].2;
            count += 1;
            ip += 1;
        }
        while is < rows.len() && rows[by_start[is]].0 >= t {
            sum -= rows[by_start[is]].2;
            count -= 1;
            is += 1;
        }
        if count > 0 {
            let m = sum / count as f64;
            lo = lo.min(m);
            hi = hi.max(m);
        }
    }
    if lo > hi {
        (1.0, 1.0)
    } else {
        (lo, hi)
    }
}

/// Cox model for the treatment start intensity, fitted on follow-up up to
/// treatment start. Events and administrative censoring both count as
/// censoring. Empty `covariates` gives the intercept-only model.
pub fn fit_treatment_hazard(
    ds: &CountingProcessDataset,
    covariates: &[String],
    tie: TieMethod,
) -> Result<CoxModel, WeightError> {
    let untreated = split_at_treatment(ds);
    if untreated.count_status(Status::TreatmentStart) == 0 {
        return Err(WeightError::NoTreatmentStarts);
    }
    let spec = CoxSpec {
        event_code: Status::TreatmentStart,
        covariates: covariates.to_vec(),
        treatment: None,
        tie,
    };
    Ok(coxfit::fit(&untreated, &spec)?)
}

/// Treatment-model quantities along one subject's untreated follow-up.
struct Accumulator<'a> {
    model: &'a CoxModel,
    slots: Vec<CovariateSlot>,
    /// `prefix[k] = sum of the first k baseline increments`.
    prefix: Vec<f64>,
}

impl<'a> Accumulator<'a> {
    fn new(model: &'a CoxModel, ds: &CountingProcessDataset) -> Result<Self, WeightError> {
        if model.spec.event_code != Status::TreatmentStart || model.spec.treatment.is_some() {
            return Err(WeightError::NotATreatmentModel);
        }
        let slots = model
            .spec
            .covariates
            .iter()
            .map(|n| ds.schema().slot(n))
            .collect::<Result<Vec<_>, _>>()
            .map_err(CoxError::from)?;
        let mut prefix = Vec::with_capacity(model.baseline.increments.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for dh in &model.baseline.increments {
            acc += dh;
            prefix.push(acc);
        }
        Ok(Self { model, slots, prefix })
    }

    fn lp(&self, subject: &SubjectRecord, ep: &Episode) -> Result<f64, WeightError> {
        let mut lp = 0.0;
        for (j, (slot, b)) in self.slots.iter().zip(&self.model.beta).enumerate() {
            let x = match *slot {
                CovariateSlot::Baseline(i) => subject.baseline[i],
                CovariateSlot::TimeVarying(i) => ep.tv[i].ok_or_else(|| CoxError::MissingCovariate {
                    covariate: self.model.spec.covariates[j].clone(),
                    subject: subject.id.clone(),
                })?,
            };
            lp += b * x;
        }
        Ok(lp)
    }

    /// `H0(t)` by prefix sums.
    fn baseline_at(&self, t: f64) -> f64 {
        self.prefix[self.model.baseline.times.partition_point(|&x| x <= t)]
    }

    /// Cumulative intensity over the episode.
    fn over(&self, subject: &SubjectRecord, ep: &Episode) -> Result<f64, WeightError> {
        let dh = self.baseline_at(ep.tstop) - self.baseline_at(ep.tstart);
        if dh == 0.0 {
            return Ok(0.0);
        }
        Ok(dh * self.lp(subject, ep)?.exp())
    }

    /// Intensity jump exactly at the episode end.
    fn jump_at_end(&self, subject: &SubjectRecord, ep: &Episode) -> Result<f64, WeightError> {
        let times = &self.model.baseline.times;
        let k = times.partition_point(|&x| x < ep.tstop);
        if k < times.len() && times[k] == ep.tstop {
            Ok(self.model.baseline.increments[k] * self.lp(subject, ep)?.exp())
        } else {
            Ok(0.0)
        }
    }
}

pub fn stabilized_weights(
    ds: &CountingProcessDataset,
    numerator: &CoxModel,
    denominator: &CoxModel,
    mode: WeightMode,
    truncation: Option<Truncation>,
) -> Result<WeightTable, WeightError> {
    if let Some(t) = truncation {
        if !(0.0 <= t.lower && t.lower < t.upper && t.upper <= 100.0) {
            return Err(WeightError::BadTruncation);
        }
    }
    let num = Accumulator::new(numerator, ds)?;
    let den = Accumulator::new(denominator, ds)?;
    let mut weights = Vec::with_capacity(ds.len());
    for subject in ds.subjects() {
        let mut ws = Vec::with_capacity(subject.episodes.len());
        let (mut a_num, mut a_den) = (0.0, 0.0);
        let mut frozen: Option<f64> = None;
        for ep in &subject.episodes {
            let w = match frozen {
                Some(w) => w,
                None => {
                    a_num += num.over(subject, ep)?;
                    a_den += den.over(subject, ep)?;
                    let w = (a_den - a_num).exp();
                    if ep.status == Status::TreatmentStart {
                        frozen = Some(match mode {
                            WeightMode::Ipcw => w,
                            WeightMode::Iptw => {
                                let j_num = num.jump_at_end(subject, ep)?;
                                let j_den = den.jump_at_end(subject, ep)?;
                                ((a_den - j_den) - (a_num - j_num)).exp() * j_num / j_den
                            }
                        });
                    }
                    w
                }
            };
            if !(w.is_finite() && w > 0.0) {
                return Err(WeightError::NonPositiveProbability {
                    subject: subject.id.clone(),
                    time: ep.tstop,
                });
            }
            ws.push(w);
        }
        weights.push(ws);
    }

    let clamp = match truncation {
        Some(t) => {
            let mut flat: Vec<f64> = weights.iter().flatten().copied().collect();
            flat.sort_by(f64::total_cmp);
            let bounds = (quantile(&flat, t.lower / 100.0), quantile(&flat, t.upper / 100.0));
            for w in weights.iter_mut().flatten() {
                *w = w.clamp(bounds.0, bounds.1);
            }
            Some((t, bounds))
        }
        None => None,
    };
    Ok(WeightTable::assemble(
        ds,
        mode,
        weights,
        clamp,
        &numerator.baseline.times,
    ))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests;
