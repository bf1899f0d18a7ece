//! Risk prediction when treatment can start after baseline.
//!
//! A dataset of `(tstart, tstop]` episodes records the event of interest,
//! treatment start and censoring. Four strategies turn it into a risk curve
//! for a baseline covariate profile: ignore treatment, treat its start as a
//! composite event, count events only while untreated, or estimate the risk
//! had treatment never started. The [`simulator`] generates data with known
//! answers for each of them.

pub mod competing;
pub mod coxfit;
pub mod curve;
pub mod dataio;
pub mod predictimands;
pub mod simulator;
pub mod weights;

pub use curve::{RiskCurve, SurvivalCurve};
pub use dataio::{CountingProcessDataset, DesignFlavor, Profile, Status};
pub use predictimands::{estimate, estimate_all, HypotheticalMethod, Strategy, StrategySpec};
