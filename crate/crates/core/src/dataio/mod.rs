//! Counting-process survival data: subjects followed over `(tstart, tstop]`
//! episodes, with baseline covariates `X(0)`, time-dependent covariates
//! `X(t)` and the treatment indicator `A(t)`.

mod csvio;
mod transform;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csvio::{ingest_csv, ingest_csv_inferred, read_csv, write_csv, write_csv_path};
pub use transform::{compose_outcome, impute_tv_covariates, split_at_treatment, ImputePolicy};

/// Covariate profile `X(0)` used when predicting, keyed by covariate name.
pub type Profile = BTreeMap<String, f64>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("subject {id}: episodes are not contiguous ({prev_stop} then {next_start})")]
    NonContiguousEpisodes {
        id: String,
        prev_stop: f64,
        next_start: f64,
    },
    #[error("subject {id}: negative time {time}")]
    NegativeTime { id: String, time: f64 },
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("subject {id}: {reason}")]
    InvalidSubject { id: String, reason: String },
    #[error("covariate `{0}` is missing for every subject")]
    NoObservationsAnywhere(String),
    #[error("subject {id} has no observed value of `{covariate}`")]
    UnobservedSubject { id: String, covariate: String },
    #[error("profile `{0}`: expected comma-separated name=value pairs")]
    BadProfile(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Episode status at `tstop`. File codes: 0, 1, 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// No event at `tstop`: either an interior split or loss to follow-up.
    Censored,
    Event,
    TreatmentStart,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Censored => 0,
            Status::Event => 1,
            Status::TreatmentStart => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Status::Censored),
            1 => Some(Status::Event),
            2 => Some(Status::TreatmentStart),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignFlavor {
    /// Follow-up for the event ends when treatment starts.
    #[serde(alias = "stops")]
    StopsAtTreatment,
    /// Follow-up for the event continues after treatment starts.
    #[serde(alias = "continues")]
    ContinuesAfterTreatment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub tstart: f64,
    pub tstop: f64,
    pub status: Status,
    /// `A(t)` on the interval.
    pub treated: bool,
    /// Time-dependent covariates in schema order; `None` is missing.
    pub tv: Vec<Option<f64>>,
}

impl Episode {
    pub fn duration(&self) -> f64 {
        self.tstop - self.tstart
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    /// Baseline covariates in schema order.
    pub baseline: Vec<f64>,
    pub episodes: Vec<Episode>,
}

impl SubjectRecord {
    pub fn end_time(&self) -> f64 {
        self.episodes.last().map_or(0.0, |e| e.tstop)
    }

    pub fn terminal_status(&self) -> Status {
        self.episodes.last().map_or(Status::Censored, |e| e.status)
    }

    /// Treatment start time, if observed.
    pub fn treatment_time(&self) -> Option<f64> {
        self.episodes
            .iter()
            .find(|e| e.status == Status::TreatmentStart)
            .map(|e| e.tstop)
    }

    pub fn person_time(&self) -> f64 {
        self.episodes.iter().map(Episode::duration).sum()
    }

    fn validate(&self, schema: &CovariateSchema) -> Result<(), DataError> {
        let invalid = |reason: &str| DataError::InvalidSubject {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.episodes.is_empty() {
            return Err(invalid("no episodes"));
        }
        if self.baseline.len() != schema.baseline.len() {
            return Err(invalid("baseline covariate count does not match schema"));
        }
        if self.baseline.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite baseline covariate"));
        }
        let first = &self.episodes[0];
        if first.tstart < 0.0 {
            return Err(DataError::NegativeTime {
                id: self.id.clone(),
                time: first.tstart,
            });
        }
        if first.tstart != 0.0 {
            return Err(invalid("first episode must start at time 0"));
        }
        let last = self.episodes.len() - 1;
        let mut started = false;
        for (k, ep) in self.episodes.iter().enumerate() {
            if !(ep.tstart.is_finite() && ep.tstop.is_finite()) {
                return Err(invalid("non-finite time"));
            }
            if ep.tstop < 0.0 {
                return Err(DataError::NegativeTime {
                    id: self.id.clone(),
                    time: ep.tstop,
                });
            }
            if ep.tstart >= ep.tstop {
                return Err(invalid("episode with tstart >= tstop"));
            }
            if k > 0 && self.episodes[k - 1].tstop != ep.tstart {
                return Err(DataError::NonContiguousEpisodes {
                    id: self.id.clone(),
                    prev_stop: self.episodes[k - 1].tstop,
                    next_start: ep.tstart,
                });
            }
            if ep.tv.len() != schema.time_varying.len() {
                return Err(invalid("time-varying covariate count does not match schema"));
            }
            if ep.treated != started {
                return Err(invalid(if started {
                    "treatment indicator drops back to 0 after treatment start"
                } else {
                    "treated episode without a preceding treatment start"
                }));
            }
            match ep.status {
                Status::Event if k != last => return Err(invalid("event status before the final episode")),
                Status::TreatmentStart if started => return Err(invalid("more than one treatment start")),
                Status::TreatmentStart => started = true,
                _ => {}
            }
        }
        Ok(())
    }
}

/// Where a covariate lives in a [`SubjectRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateSlot {
    Baseline(usize),
    TimeVarying(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub baseline: Vec<String>,
    pub time_varying: Vec<String>,
    /// Unit of all times, echoed in outputs.
    pub time_unit: String,
}

impl Default for CovariateSchema {
    fn default() -> Self {
        Self {
            baseline: Vec::new(),
            time_varying: Vec::new(),
            time_unit: "time".into(),
        }
    }
}

impl CovariateSchema {
    pub fn new(baseline: &[&str], time_varying: &[&str]) -> Self {
        Self {
            baseline: baseline.iter().map(|s| s.to_string()).collect(),
            time_varying: time_varying.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.time_unit = unit.into();
        self
    }

    pub fn slot(&self, name: &str) -> Result<CovariateSlot, DataError> {
        if let Some(i) = self.baseline.iter().position(|n| n == name) {
            return Ok(CovariateSlot::Baseline(i));
        }
        if let Some(i) = self.time_varying.iter().position(|n| n == name) {
            return Ok(CovariateSlot::TimeVarying(i));
        }
        Err(DataError::UnknownCovariate(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.baseline.iter().chain(self.time_varying.iter()).map(String::as_str)
    }
}

/// Validated, immutable counting-process dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CountingProcessDataset {
    subjects: Vec<SubjectRecord>,
    schema: CovariateSchema,
    flavor: DesignFlavor,
}

impl CountingProcessDataset {
    pub fn new(schema: CovariateSchema, flavor: DesignFlavor, subjects: Vec<SubjectRecord>) -> Result<Self, DataError> {
        let mut seen = std::collections::HashSet::new();
        for s in &subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(DataError::InvalidSubject {
                    id: s.id.clone(),
                    reason: "duplicate subject id".into(),
                });
            }
            s.validate(&schema)?;
            if flavor == DesignFlavor::StopsAtTreatment && s.episodes.iter().any(|e| e.treated) {
                return Err(DataError::InvalidSubject {
                    id: s.id.clone(),
                    reason: "treated follow-up in a stops-at-treatment dataset".into(),
                });
            }
        }
        Ok(Self {
            subjects,
            schema,
            flavor,
        })
    }

    /// Builds a dataset, inferring the design: post-treatment follow-up
    /// present means `ContinuesAfterTreatment`; treatment starts without any
    /// treated follow-up means `StopsAtTreatment`.
    pub fn with_inferred_flavor(schema: CovariateSchema, subjects: Vec<SubjectRecord>) -> Result<Self, DataError> {
        let flavor = infer_flavor(&subjects);
        Self::new(schema, flavor, subjects)
    }

    /// Re-validates under an explicit design flavor.
    pub fn with_flavor(self, flavor: DesignFlavor) -> Result<Self, DataError> {
        Self::new(self.schema, flavor, self.subjects)
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn flavor(&self) -> DesignFlavor {
        self.flavor
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_episodes(&self) -> usize {
        self.subjects.iter().map(|s| s.episodes.len()).sum()
    }

    pub fn person_time(&self) -> f64 {
        self.subjects.iter().map(SubjectRecord::person_time).sum()
    }

    pub fn treated_person_time(&self) -> f64 {
        self.episodes()
            .filter(|(_, e)| e.treated)
            .map(|(_, e)| e.duration())
            .sum()
    }

    pub fn count_status(&self, status: Status) -> usize {
        self.episodes().filter(|(_, e)| e.status == status).count()
    }

    /// Latest time at which some subject is still followed untreated.
    pub fn last_untreated_time(&self) -> f64 {
        self.episodes()
            .filter(|(_, e)| !e.treated)
            .map(|(_, e)| e.tstop)
            .fold(0.0, f64::max)
    }

    pub fn episodes(&self) -> impl Iterator<Item = (&SubjectRecord, &Episode)> {
        self.subjects
            .iter()
            .flat_map(|s| s.episodes.iter().map(move |e| (s, e)))
    }

    /// Rebuilds with new subjects under the same schema. Callers guarantee
    /// the subject invariants; they are re-checked in debug builds.
    pub(crate) fn derive(&self, flavor: DesignFlavor, subjects: Vec<SubjectRecord>) -> Self {
        let out = Self {
            subjects,
            schema: self.schema.clone(),
            flavor,
        };
        debug_assert!(Self::new(out.schema.clone(), flavor, out.subjects.clone()).is_ok());
        out
    }
}

fn infer_flavor(subjects: &[SubjectRecord]) -> DesignFlavor {
    let any_treated = subjects.iter().flat_map(|s| &s.episodes).any(|e| e.treated);
    let any_start = subjects
        .iter()
        .flat_map(|s| &s.episodes)
        .any(|e| e.status == Status::TreatmentStart);
    if any_start && !any_treated {
        DesignFlavor::StopsAtTreatment
    } else {
        DesignFlavor::ContinuesAfterTreatment
    }
}

/// Parses `"age=50,x=1"` into a profile.
pub fn parse_profile(text: &str) -> Result<Profile, DataError> {
    let mut out = Profile::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| DataError::BadProfile(text.to_string()))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| DataError::BadProfile(text.to_string()))?;
        out.insert(name.trim().to_string(), value);
    }
    Ok(out)
}
