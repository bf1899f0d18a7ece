//! Product-limit and competing-risks estimators: event of interest versus
//! treatment start.
//!
//! Nonparametric curves use the product-limit / Aalen-Johansen form, so
//! `F_event + F_treatment + S_overall = 1` holds at every time. Curves from
//! Cox cause-specific hazards use `S_overall = exp(-(H_event + H_treatment))`
//! and split each jump `S(t-) (1 - exp(-dA))` between the causes in
//! proportion to their hazard increments, which conserves mass and reduces
//! to `1 - exp(-H_event)` when the treatment hazard vanishes.

use serde::{Deserialize, Serialize};

use crate::coxfit::design::RiskRows;
use crate::coxfit::{self, CoxError, CoxModel, CoxSpec, TieMethod};
use crate::curve::{RiskCurve, SurvivalCurve};
use crate::dataio::{compose_outcome, split_at_treatment, CountingProcessDataset, Profile, Status};
use crate::weights::WeightTable;

/// Weighted number at risk and event counts at each distinct event time.
struct RiskTable {
    times: Vec<f64>,
    at_risk: Vec<f64>,
    /// Event weight per time, one column per status in `codes`.
    events: Vec<Vec<f64>>,
}

fn risk_table(rows: &RiskRows, codes: &[Status]) -> RiskTable {
    let n = rows.len();
    let mut by_stop: Vec<usize> = (0..n).collect();
    by_stop.sort_by(|&a, &b| rows.stop[a].total_cmp(&rows.stop[b]));
    let mut by_start: Vec<usize> = (0..n).collect();
    by_start.sort_by(|&a, &b| rows.start[a].total_cmp(&rows.start[b]));
    // suffix sums: weight with stop >= t and with start >= t
    let suffix = |order: &[usize]| {
        let mut s = vec![0.0; n + 1];
        for k in (0..n).rev() {
            s[k] = s[k + 1] + rows.weight[order[k]];
        }
        s
    };
    let stop_suffix = suffix(&by_stop);
    let start_suffix = suffix(&by_start);

    let mut table = RiskTable {
        times: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut k = 0;
    while k < n {
        let t = rows.stop[by_stop[k]];
        let mut counts = vec![0.0; codes.len()];
        let mut end = k;
        while end < n && rows.stop[by_stop[end]] == t {
            let i = by_stop[end];
            if let Some(c) = codes.iter().position(|&c| c == rows.status[i]) {
                counts[c] += rows.weight[i];
            }
            end += 1;
        }
        if counts.iter().any(|&c| c > 0.0) {
            let entered_late = start_suffix[by_start.partition_point(|&i| rows.start[i] < t)];
            table.times.push(t);
            table.at_risk.push(stop_suffix[k] - entered_late);
            table.events.push(counts);
        }
        k = end;
    }
    table
}

/// Product-limit survival for `event_code`, optionally weighted. For
/// treatment start only untreated follow-up is at risk.
pub fn product_limit(
    ds: &CountingProcessDataset,
    event_code: Status,
    weights: Option<&WeightTable>,
) -> Result<SurvivalCurve, CoxError> {
    let rows = RiskRows::build(ds, &[], &[], weights, event_code == Status::TreatmentStart)?;
    let table = risk_table(&rows, &[event_code]);
    let mut times = vec![0.0];
    let mut surv = vec![1.0];
    let mut s = 1.0;
    for ((&t, &n), d) in table.times.iter().zip(&table.at_risk).zip(&table.events) {
        s *= 1.0 - (d[0] / n).min(1.0);
        times.push(t);
        surv.push(s);
    }
    Ok(SurvivalCurve { times, surv })
}

/// `1 - KM` for `event_code`. With no events the risk is identically 0.
pub fn km_risk(ds: &CountingProcessDataset, event_code: Status, horizon: f64) -> Result<RiskCurve, CoxError> {
    Ok(product_limit(ds, event_code, None)?.into_risk("product-limit", Profile::new(), horizon))
}

/// Cumulative incidence of both causes with overall survival, on a common
/// time grid starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetingCurves {
    pub times: Vec<f64>,
    pub f_event: Vec<f64>,
    pub f_treatment: Vec<f64>,
    pub surv: Vec<f64>,
}

impl CompetingCurves {
    fn start() -> Self {
        Self {
            times: vec![0.0],
            f_event: vec![0.0],
            f_treatment: vec![0.0],
            surv: vec![1.0],
        }
    }

    fn push(&mut self, t: f64, fe: f64, ft: f64, s: f64) {
        self.times.push(t);
        self.f_event.push(fe);
        self.f_treatment.push(ft);
        self.surv.push(s);
    }

    pub fn event_risk(&self, strategy: &str, profile: Profile, horizon: f64) -> RiskCurve {
        RiskCurve::new(strategy, profile, horizon, self.times.clone(), self.f_event.clone())
    }

    pub fn treatment_risk(&self, strategy: &str, profile: Profile, horizon: f64) -> RiskCurve {
        RiskCurve::new(strategy, profile, horizon, self.times.clone(), self.f_treatment.clone())
    }
}

/// Nonparametric Aalen-Johansen estimator on follow-up up to treatment start.
pub fn aalen_johansen(ds: &CountingProcessDataset, weights: Option<&WeightTable>) -> Result<CompetingCurves, CoxError> {
    let untreated = split_at_treatment(ds);
    let rows = RiskRows::build(&untreated, &[], &[], weights, false)?;
    let table = risk_table(&rows, &[Status::Event, Status::TreatmentStart]);
    let mut out = CompetingCurves::start();
    let (mut fe, mut ft, mut s) = (0.0, 0.0, 1.0);
    for ((&t, &n), d) in table.times.iter().zip(&table.at_risk).zip(&table.events) {
        // S(t-) weights both increments
        fe += s * d[0] / n;
        ft += s * d[1] / n;
        s *= 1.0 - (d[0] + d[1]) / n;
        out.push(t, fe, ft, s);
    }
    Ok(out)
}

/// Cause-specific Cox models for the event of interest (censored at
/// treatment start) and for treatment start (censored at the event). The
/// treatment model is absent when nobody starts treatment, i.e. its hazard
/// is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseSpecificPair {
    pub event: CoxModel,
    pub treatment: Option<CoxModel>,
}

impl CauseSpecificPair {
    pub fn fit(ds: &CountingProcessDataset, covariates: &[String], tie: TieMethod) -> Result<Self, CoxError> {
        let untreated = split_at_treatment(ds);
        let spec = |code| CoxSpec {
            event_code: code,
            covariates: covariates.to_vec(),
            treatment: None,
            tie,
        };
        let event = coxfit::fit(&untreated, &spec(Status::Event))?;
        let treatment = if untreated.count_status(Status::TreatmentStart) > 0 {
            Some(coxfit::fit(&untreated, &spec(Status::TreatmentStart))?)
        } else {
            None
        };
        Ok(Self { event, treatment })
    }

    pub fn curves(&self, profile: &Profile) -> Result<CompetingCurves, CoxError> {
        let ev = self.event.hazard_increments(profile, |_| false)?;
        let tr = match &self.treatment {
            Some(m) => m.hazard_increments(profile, |_| false)?,
            None => Vec::new(),
        };
        let mut out = CompetingCurves::start();
        let (mut fe, mut ft, mut s) = (0.0, 0.0, 1.0);
        let (mut i, mut j) = (0, 0);
        while i < ev.len() || j < tr.len() {
            let t = match (ev.get(i), tr.get(j)) {
                (Some(a), Some(b)) => a.0.min(b.0),
                (Some(a), None) => a.0,
                (None, Some(b)) => b.0,
                (None, None) => unreachable!(),
            };
            let mut de = 0.0;
            let mut dt = 0.0;
            if i < ev.len() && ev[i].0 == t {
                de = ev[i].1;
                i += 1;
            }
            if j < tr.len() && tr[j].0 == t {
                dt = tr[j].1;
                j += 1;
            }
            let total = de + dt;
            if total > 0.0 {
                let jump = s * -(-total).exp_m1();
                fe += jump * de / total;
                ft += jump * dt / total;
                s *= (-total).exp();
            }
            out.push(t, fe, ft, s);
        }
        Ok(out)
    }
}

/// Cumulative incidence of the event before treatment start for `profile`.
pub fn cuminc(pair: &CauseSpecificPair, profile: &Profile, horizon: f64) -> Result<RiskCurve, CoxError> {
    Ok(pair
        .curves(profile)?
        .event_risk("while-untreated", profile.clone(), horizon))
}

/// Risk of the composite of event or treatment start. Without covariates
/// this is the product-limit estimate; otherwise `1 - S` from a Cox fit.
pub fn composite_risk(
    ds: &CountingProcessDataset,
    covariates: &[String],
    tie: TieMethod,
    profile: &Profile,
    horizon: f64,
) -> Result<RiskCurve, CoxError> {
    let composite = compose_outcome(ds);
    let curve = if covariates.is_empty() {
        product_limit(&composite, Status::Event, None)?
    } else {
        let spec = CoxSpec {
            event_code: Status::Event,
            covariates: covariates.to_vec(),
            treatment: None,
            tie,
        };
        coxfit::fit(&composite, &spec)?.predict_survival(profile, |_| false)?
    };
    Ok(curve.into_risk("composite", profile.clone(), horizon))
}
