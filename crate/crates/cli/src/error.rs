//! Exit-code taxonomy and the machine-readable error record.

use std::fmt;

use predictimand::coxfit::CoxError;
use predictimand::dataio::DataError;
use predictimand::predictimands::EstimateError;
use predictimand::simulator::SimError;
use predictimand::weights::WeightError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    /// A validation run finished but some tolerance failed.
    Validation,
    Usage,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Validation => 1,
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub kind: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    class: ErrorClass,
    code: i32,
    message: &'a str,
}

impl CliError {
    pub fn new(class: ErrorClass, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            class,
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Usage, "usage", message)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorRecord {
            error: self.kind,
            class: self.class,
            code: self.class.exit_code(),
            message: &self.message,
        })
        .expect("error record serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ErrorClass::Data, "io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new(ErrorClass::Data, "json", e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let kind = match &e {
            DataError::BadProfile(_) => "bad_profile",
            DataError::Io(_) => "io",
            _ => "data",
        };
        Self::new(ErrorClass::Data, kind, e.to_string())
    }
}

impl From<CoxError> for CliError {
    fn from(e: CoxError) -> Self {
        let (class, kind) = match &e {
            CoxError::NoEvents(_) => (ErrorClass::Data, "no_events"),
            CoxError::ProfileIncomplete(_) => (ErrorClass::Data, "profile_incomplete"),
            CoxError::MissingCovariate { .. } => (ErrorClass::Data, "missing_covariate"),
            CoxError::Data(inner) => return CliError::new(ErrorClass::Data, "data", inner.to_string()),
            CoxError::InvalidSpec(_) | CoxError::BetaLength { .. } => (ErrorClass::Usage, "invalid_spec"),
            CoxError::MonotoneLikelihood { .. } => (ErrorClass::Numeric, "monotone_likelihood"),
            CoxError::Singular => (ErrorClass::Numeric, "singular"),
            CoxError::NotConverged(_) => (ErrorClass::Numeric, "not_converged"),
            CoxError::WeightShape => (ErrorClass::Numeric, "weight_shape"),
        };
        Self::new(class, kind, e.to_string())
    }
}

impl From<WeightError> for CliError {
    fn from(e: WeightError) -> Self {
        let (class, kind) = match e {
            WeightError::Cox(inner) => return inner.into(),
            WeightError::NoTreatmentStarts => (ErrorClass::Data, "no_treatment_starts"),
            WeightError::NonPositiveProbability { .. } => (ErrorClass::Numeric, "non_positive_probability"),
            WeightError::NotATreatmentModel | WeightError::BadTruncation => (ErrorClass::Usage, "invalid_spec"),
        };
        Self::new(class, kind, e.to_string())
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Cox(inner) => inner.into(),
            EstimateError::Weight(inner) => inner.into(),
            EstimateError::Data(inner) => inner.into(),
            EstimateError::DesignMismatch { .. } => Self::new(ErrorClass::Data, "design_mismatch", e.to_string()),
            EstimateError::MissingMethod => Self::new(ErrorClass::Usage, "missing_method", e.to_string()),
            EstimateError::InvalidSpec(_) => Self::new(ErrorClass::Usage, "invalid_spec", e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Data(inner) => inner.into(),
            SimError::Io(inner) => inner.into(),
            SimError::Parse(_) | SimError::InvalidIntensity(_) | SimError::InvalidScenario(_) => {
                Self::new(ErrorClass::Usage, "scenario", e.to_string())
            }
        }
    }
}
