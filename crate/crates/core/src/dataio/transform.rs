use serde::{Deserialize, Serialize};

use super::{CountingProcessDataset, DataError, DesignFlavor, Status, SubjectRecord};

/// Ends each subject's follow-up at treatment start; the start becomes the
/// terminal status and post-treatment episodes are dropped.
pub fn split_at_treatment(ds: &CountingProcessDataset) -> CountingProcessDataset {
    let subjects = ds
        .subjects()
        .iter()
        .map(|s| truncate_at(s, |status| status == Status::TreatmentStart, None))
        .collect();
    ds.derive(DesignFlavor::StopsAtTreatment, subjects)
}

/// Composite endpoint `min(T, V)`: whichever of event or treatment start
/// comes first is recoded as an event and follow-up ends there.
pub fn compose_outcome(ds: &CountingProcessDataset) -> CountingProcessDataset {
    let subjects = ds
        .subjects()
        .iter()
        .map(|s| {
            truncate_at(
                s,
                |status| matches!(status, Status::Event | Status::TreatmentStart),
                Some(Status::Event),
            )
        })
        .collect();
    ds.derive(DesignFlavor::StopsAtTreatment, subjects)
}

fn truncate_at(subject: &SubjectRecord, stop_here: impl Fn(Status) -> bool, recode: Option<Status>) -> SubjectRecord {
    let mut out = subject.clone();
    if let Some(k) = out.episodes.iter().position(|e| stop_here(e.status)) {
        out.episodes.truncate(k + 1);
        if let Some(code) = recode {
            out.episodes[k].status = code;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputePolicy {
    /// Last observation carried forward; gaps before a subject's first
    /// observation take that first value. Subjects never observed are an
    /// error.
    Locf,
    /// As `Locf`, but never-observed subjects receive the cohort median of
    /// first observations.
    MedianFallback,
}

pub fn impute_tv_covariates(
    ds: &CountingProcessDataset,
    policy: ImputePolicy,
) -> Result<CountingProcessDataset, DataError> {
    let schema = ds.schema();
    let mut subjects = ds.subjects().to_vec();
    for (j, name) in schema.time_varying.iter().enumerate() {
        let firsts: Vec<Option<f64>> = subjects
            .iter()
            .map(|s| s.episodes.iter().find_map(|e| e.tv[j]))
            .collect();
        let mut observed: Vec<f64> = firsts.iter().flatten().copied().collect();
        if observed.is_empty() && !subjects.is_empty() {
            return Err(DataError::NoObservationsAnywhere(name.clone()));
        }
        let fallback = median(&mut observed);
        for (subject, first) in subjects.iter_mut().zip(&firsts) {
            let mut carry = match (first, policy) {
                (Some(v), _) => *v,
                (None, ImputePolicy::MedianFallback) => fallback,
                (None, ImputePolicy::Locf) => {
                    return Err(DataError::UnobservedSubject {
                        id: subject.id.clone(),
                        covariate: name.clone(),
                    })
                }
            };
            for ep in &mut subject.episodes {
                match ep.tv[j] {
                    Some(v) => carry = v,
                    None => ep.tv[j] = Some(carry),
                }
            }
        }
    }
    Ok(ds.derive(ds.flavor(), subjects))
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
