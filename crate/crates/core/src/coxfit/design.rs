//! Flattened `(start, stop]` rows with a dense covariate matrix, shared by the
//! Cox fitter and the product-limit estimators.

use std::ops::Range;

use crate::dataio::{CountingProcessDataset, CovariateSlot, Status};
use crate::weights::WeightTable;

use super::CoxError;

/// Source of one column of the design matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Column {
    Covariate(CovariateSlot),
    /// `A(t)` restricted to the segment `(lo, hi]`.
    Treatment {
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, Default)]
pub(crate) struct RiskRows {
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
    pub status: Vec<Status>,
    pub weight: Vec<f64>,
    pub subject: Vec<usize>,
    /// Row-major `n x p`.
    pub x: Vec<f64>,
    pub p: usize,
}

impl RiskRows {
    /// Builds rows from every episode. Episodes are split at `cuts`; with
    /// `untreated_only`, treated person-time is dropped.
    pub fn build(
        ds: &CountingProcessDataset,
        columns: &[Column],
        cuts: &[f64],
        weights: Option<&WeightTable>,
        untreated_only: bool,
    ) -> Result<Self, CoxError> {
        if let Some(w) = weights {
            w.check_shape(ds)?;
        }
        let p = columns.len();
        let mut rows = RiskRows {
            p,
            ..Default::default()
        };
        for (si, subject) in ds.subjects().iter().enumerate() {
            for (ei, ep) in subject.episodes.iter().enumerate() {
                if untreated_only && ep.treated {
                    continue;
                }
                let w = weights.map_or(1.0, |w| w.weight(si, ei));
                let mut lo = ep.tstart;
                let inner = cuts.iter().copied().filter(|&c| c > ep.tstart && c < ep.tstop);
                for hi in inner.chain(std::iter::once(ep.tstop)) {
                    let last = hi == ep.tstop;
                    rows.start.push(lo);
                    rows.stop.push(hi);
                    rows.status.push(if last { ep.status } else { Status::Censored });
                    rows.weight.push(w);
                    rows.subject.push(si);
                    for col in columns {
                        let v = match *col {
                            Column::Covariate(CovariateSlot::Baseline(i)) => subject.baseline[i],
                            Column::Covariate(CovariateSlot::TimeVarying(i)) => {
                                ep.tv[i].ok_or_else(|| CoxError::MissingCovariate {
                                    covariate: ds.schema().time_varying[i].clone(),
                                    subject: subject.id.clone(),
                                })?
                            }
                            Column::Treatment { lo: a, hi: b } => f64::from(u8::from(ep.treated && hi > a && hi <= b)),
                        };
                        rows.x.push(v);
                    }
                    lo = hi;
                }
            }
        }
        Ok(rows)
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}

/// Index orders used by the backward risk-set sweep.
pub(crate) struct SweepOrder {
    pub by_stop_desc: Vec<usize>,
    pub by_start_desc: Vec<usize>,
    /// Event rows sorted by decreasing time.
    pub events: Vec<usize>,
    /// Distinct event times (decreasing) with their slice of `events`.
    pub groups: Vec<(f64, Range<usize>)>,
}

impl SweepOrder {
    pub fn new(rows: &RiskRows, is_event: impl Fn(usize) -> bool) -> Self {
        let n = rows.len();
        let mut by_stop_desc: Vec<usize> = (0..n).collect();
        by_stop_desc.sort_by(|&a, &b| rows.stop[b].total_cmp(&rows.stop[a]).then(a.cmp(&b)));
        let mut by_start_desc: Vec<usize> = (0..n).collect();
        by_start_desc.sort_by(|&a, &b| rows.start[b].total_cmp(&rows.start[a]).then(a.cmp(&b)));
        let events: Vec<usize> = by_stop_desc.iter().copied().filter(|&i| is_event(i)).collect();
        let mut groups = Vec::new();
        let mut k = 0;
        while k < events.len() {
            let t = rows.stop[events[k]];
            let mut end = k + 1;
            while end < events.len() && rows.stop[events[end]] == t {
                end += 1;
            }
            groups.push((t, k..end));
            k = end;
        }
        Self {
            by_stop_desc,
            by_start_desc,
            events,
            groups,
        }
    }
}
