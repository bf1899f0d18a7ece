//! Illness-death simulator: event-free and untreated, treated, event.
//!
//! Each subject carries four independent unit-exponential clocks, one for
//! each of untreated death, treatment start, treated death and random
//! censoring. A transition happens when its cumulative intensity reaches
//! its clock. Intensities are piecewise constant between the knots of the
//! covariate grid, the baseline-rate breaks and, for treated death, the
//! breaks in time since treatment, so the inversion is exact.
//!
//! Subject `i` draws from its own ChaCha8 stream `(seed, i)`, so output
//! never depends on the thread count.

mod truth;
mod validate;

use std::collections::BTreeMap;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{
    CountingProcessDataset, CovariateSchema, DataError, DesignFlavor, Episode, Profile, Status, SubjectRecord,
};

pub use truth::{analytic_risks, true_risks, StrategyRisks, TruthMethod, TruthOracle};
pub use validate::{validate, StrategyValidation, ValidationPlan, ValidationReport};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid intensity: {0}")]
    InvalidIntensity(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Baseline covariate law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Dist {
    Constant { value: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
    Bernoulli { p: f64 },
}

impl Dist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Dist::Constant { value } => value,
            Dist::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Dist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Dist::Bernoulli { p } => f64::from(u8::from(rng.random::<f64>() < p)),
        }
    }

    fn check(&self, name: &str) -> Result<(), SimError> {
        let ok = match *self {
            Dist::Constant { value } => value.is_finite(),
            Dist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            Dist::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            Dist::Bernoulli { p } => (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidScenario(format!("bad distribution for `{name}`")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCovariate {
    pub name: String,
    #[serde(flatten)]
    pub dist: Dist,
}

/// Gaussian random walk updated at every grid point:
/// `z(t + h) = z(t) + drift h + volatility sqrt(h) N(0,1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeVaryingCovariate {
    pub name: String,
    pub initial: Dist,
    #[serde(default)]
    pub drift: f64,
    #[serde(default)]
    pub volatility: f64,
}

/// Multipliers of the treated death intensity by time since treatment:
/// `multipliers[k]` applies on `[breaks[k-1], breaks[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinceTreatment {
    pub breaks: Vec<f64>,
    pub multipliers: Vec<f64>,
}

/// `rate(t) exp(sum_j effects[j] x_j(t))`, with `rate` constant or
/// piecewise constant on `breaks`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intensity {
    #[serde(default)]
    pub rate: Option<f64>,
    #[serde(default)]
    pub breaks: Vec<f64>,
    #[serde(default)]
    pub rates: Vec<f64>,
    #[serde(default)]
    pub effects: BTreeMap<String, f64>,
    #[serde(default)]
    pub since_treatment: Option<SinceTreatment>,
}

impl Intensity {
    pub fn constant(rate: f64) -> Self {
        Self {
            rate: Some(rate),
            ..Self::default()
        }
    }

    pub fn with_effect(mut self, name: &str, beta: f64) -> Self {
        self.effects.insert(name.into(), beta);
        self
    }

    fn base_at(&self, t: f64) -> f64 {
        match self.rate {
            Some(r) => r,
            None => self.rates[self.breaks.partition_point(|&b| b <= t)],
        }
    }

    /// The single rate when the intensity is time- and covariate-free.
    pub fn constant_rate(&self) -> Option<f64> {
        match (self.rate, &self.since_treatment) {
            (Some(r), None) if self.effects.values().all(|&b| b == 0.0) => Some(r),
            _ => None,
        }
    }

    fn check(&self, which: &str, covariates: &[&str], treated: bool) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidIntensity(format!("{which}: {msg}")));
        match (self.rate, self.rates.is_empty()) {
            (Some(r), true) if self.breaks.is_empty() => {
                if !(r.is_finite() && r >= 0.0) {
                    return bad(format!("rate {r} must be finite and nonnegative"));
                }
            }
            (None, false) => {
                if self.rates.len() != self.breaks.len() + 1 {
                    return bad("needs one more rate than breaks".into());
                }
                if !increasing(&self.breaks) {
                    return bad("breaks must be positive and strictly increasing".into());
                }
                if self.rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                    return bad("rates must be finite and nonnegative".into());
                }
            }
            _ => return bad("give either `rate` or `breaks` with `rates`".into()),
        }
        for (name, b) in &self.effects {
            if !covariates.contains(&name.as_str()) {
                return bad(format!("effect on unknown covariate `{name}`"));
            }
            if !b.is_finite() {
                return bad(format!("effect of `{name}` is not finite"));
            }
        }
        if let Some(s) = &self.since_treatment {
            if !treated {
                return bad("`since_treatment` applies to treated death only".into());
            }
            if s.multipliers.len() != s.breaks.len() + 1 || !increasing(&s.breaks) {
                return bad("since_treatment needs increasing breaks and one more multiplier".into());
            }
            if s.multipliers.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
                return bad("since_treatment multipliers must be finite and nonnegative".into());
            }
        }
        Ok(())
    }
}

fn increasing(v: &[f64]) -> bool {
    v.first().is_none_or(|&b| b > 0.0) && v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|b| b.is_finite())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowUp {
    /// End of study.
    pub administrative: f64,
    /// Rate of random, non-informative censoring.
    #[serde(default)]
    pub censoring_rate: f64,
    /// Spacing of covariate measurements; required with time-varying
    /// covariates.
    #[serde(default)]
    pub grid_step: Option<f64>,
}

/// Scenario definition, read from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default = "default_design")]
    pub design: DesignFlavor,
    #[serde(default = "default_unit")]
    pub time_unit: String,
    pub follow_up: FollowUp,
    #[serde(default)]
    pub baseline: Vec<BaselineCovariate>,
    #[serde(default)]
    pub time_varying: Vec<TimeVaryingCovariate>,
    pub treatment: Intensity,
    pub death_untreated: Intensity,
    pub death_treated: Intensity,
}

fn default_design() -> DesignFlavor {
    DesignFlavor::ContinuesAfterTreatment
}

fn default_unit() -> String {
    "years".into()
}

impl ScenarioSpec {
    /// Covariate-free scenario with constant intensities.
    pub fn constant(treat: f64, death_untreated: f64, death_treated: f64, administrative: f64) -> Self {
        Self {
            design: DesignFlavor::ContinuesAfterTreatment,
            time_unit: default_unit(),
            follow_up: FollowUp {
                administrative,
                censoring_rate: 0.0,
                grid_step: None,
            },
            baseline: Vec::new(),
            time_varying: Vec::new(),
            treatment: Intensity::constant(treat),
            death_untreated: Intensity::constant(death_untreated),
            death_treated: Intensity::constant(death_treated),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let spec: Self = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn from_json_str(text: &str) -> Result<Self, SimError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn covariate_names(&self) -> Vec<&str> {
        self.baseline
            .iter()
            .map(|c| c.name.as_str())
            .chain(self.time_varying.iter().map(|c| c.name.as_str()))
            .collect()
    }

    pub fn schema(&self) -> CovariateSchema {
        let b: Vec<&str> = self.baseline.iter().map(|c| c.name.as_str()).collect();
        let tv: Vec<&str> = self.time_varying.iter().map(|c| c.name.as_str()).collect();
        CovariateSchema::new(&b, &tv).with_unit(self.time_unit.clone())
    }

    pub fn check(&self) -> Result<(), SimError> {
        let f = &self.follow_up;
        if !(f.administrative.is_finite() && f.administrative > 0.0) {
            return Err(SimError::InvalidScenario(
                "administrative end must be positive and finite".into(),
            ));
        }
        if !(f.censoring_rate.is_finite() && f.censoring_rate >= 0.0) {
            return Err(SimError::InvalidScenario("censoring rate must be nonnegative".into()));
        }
        match f.grid_step {
            Some(h) if !(h.is_finite() && h > 0.0) => {
                return Err(SimError::InvalidScenario("grid step must be positive".into()))
            }
            None if !self.time_varying.is_empty() => {
                return Err(SimError::InvalidScenario(
                    "time-varying covariates need `follow_up.grid_step`".into(),
                ))
            }
            _ => {}
        }
        let names = self.covariate_names();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(SimError::InvalidScenario(format!("covariate `{n}` declared twice")));
            }
        }
        for c in &self.baseline {
            c.dist.check(&c.name)?;
        }
        for c in &self.time_varying {
            c.initial.check(&c.name)?;
            if !(c.drift.is_finite() && c.volatility.is_finite() && c.volatility >= 0.0) {
                return Err(SimError::InvalidScenario(format!("bad random walk for `{}`", c.name)));
            }
        }
        self.treatment.check("treatment", &names, false)?;
        self.death_untreated.check("death_untreated", &names, false)?;
        self.death_treated.check("death_treated", &names, true)?;
        Ok(())
    }
}

/// One simulated subject, including quantities unobservable in the data.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub baseline: Vec<f64>,
    /// Time-varying covariate values per grid cell.
    pub tv: Vec<Vec<f64>>,
    /// Untreated event time had treatment never started; `None` beyond the
    /// simulated window.
    pub latent_untreated: Option<f64>,
    /// Treatment start; latent when it follows the event.
    pub treatment: Option<f64>,
    /// Event time on the factual path.
    pub event: Option<f64>,
    pub censoring: f64,
}

impl Trajectory {
    /// Factual treatment start, observed only before the event.
    pub fn treated_at(&self) -> Option<f64> {
        match (self.treatment, self.latent_untreated) {
            (Some(v), Some(t0)) if t0 <= v => None,
            (v, _) => v,
        }
    }
}

/// Scenario with validated, index-resolved lookups.
struct Compiled<'a> {
    spec: &'a ScenarioSpec,
    window: f64,
    /// Covariate grid points (cell boundaries), starting at 0.
    grid: Vec<f64>,
    /// Grid plus intensity breaks, sorted.
    knots: Vec<f64>,
    effects: [Vec<(Source, f64)>; 3],
}

#[derive(Clone, Copy)]
enum Source {
    Baseline(usize),
    TimeVarying(usize),
}

const TREAT: usize = 0;
const DEATH0: usize = 1;
const DEATH1: usize = 2;

impl<'a> Compiled<'a> {
    fn new(spec: &'a ScenarioSpec, window: f64) -> Self {
        let mut grid = vec![0.0];
        if let (Some(h), false) = (spec.follow_up.grid_step, spec.time_varying.is_empty()) {
            let mut k = 1;
            while (k as f64) * h < window {
                grid.push(k as f64 * h);
                k += 1;
            }
        }
        let mut knots = grid.clone();
        for i in [&spec.treatment, &spec.death_untreated, &spec.death_treated] {
            knots.extend(i.breaks.iter().filter(|&&b| b < window));
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let resolve = |i: &Intensity| {
            i.effects
                .iter()
                .map(|(n, &b)| {
                    let src = match spec.baseline.iter().position(|c| &c.name == n) {
                        Some(j) => Source::Baseline(j),
                        None => {
                            Source::TimeVarying(spec.time_varying.iter().position(|c| &c.name == n).expect("checked"))
                        }
                    };
                    (src, b)
                })
                .collect()
        };
        Self {
            spec,
            window,
            grid,
            knots,
            effects: [
                resolve(&spec.treatment),
                resolve(&spec.death_untreated),
                resolve(&spec.death_treated),
            ],
        }
    }

    fn cell(&self, t: f64) -> usize {
        self.grid.partition_point(|&g| g <= t) - 1
    }

    fn intensity(&self, which: usize) -> &Intensity {
        match which {
            TREAT => &self.spec.treatment,
            DEATH0 => &self.spec.death_untreated,
            _ => &self.spec.death_treated,
        }
    }

    /// Intensity on `[t, next knot)`; `since` is the treatment time.
    fn hazard(&self, which: usize, t: f64, traj: &Trajectory, since: Option<f64>) -> f64 {
        let i = self.intensity(which);
        let base = i.base_at(t);
        if base == 0.0 {
            return 0.0;
        }
        let cell = self.cell(t);
        let lp: f64 = self.effects[which]
            .iter()
            .map(|&(src, b)| {
                b * match src {
                    Source::Baseline(j) => traj.baseline[j],
                    Source::TimeVarying(j) => traj.tv[cell][j],
                }
            })
            .sum();
        let mult = match (&i.since_treatment, since) {
            (Some(s), Some(v)) => s.multipliers[s.breaks.partition_point(|&b| b <= t - v)],
            _ => 1.0,
        };
        base * mult * lp.exp()
    }

    /// First time after `from` at which the cumulative intensity reaches
    /// `budget`, or `None` within the window.
    fn first_passage(
        &self,
        which: usize,
        budget: f64,
        from: f64,
        traj: &Trajectory,
        since: Option<f64>,
    ) -> Option<f64> {
        let mut knots: Vec<f64> = self.knots.iter().copied().filter(|&k| k > from).collect();
        if let (Some(s), Some(v)) = (&self.intensity(which).since_treatment, since) {
            knots.extend(s.breaks.iter().map(|b| v + b).filter(|&k| k > from && k < self.window));
            knots.sort_by(f64::total_cmp);
        }
        knots.push(self.window);
        let mut left = budget;
        let mut a = from;
        for b in knots {
            if b <= a {
                continue;
            }
            let h = self.hazard(which, a, traj, since);
            let mass = h * (b - a);
            if mass >= left {
                return Some(a + left / h);
            }
            left -= mass;
            a = b;
        }
        None
    }

    fn draw(&self, rng: &mut ChaCha8Rng, profile: &Profile) -> Trajectory {
        let spec = self.spec;
        let baseline = spec
            .baseline
            .iter()
            .map(|c| {
                let x = c.dist.sample(rng);
                profile.get(&c.name).copied().unwrap_or(x)
            })
            .collect();
        let mut tv: Vec<Vec<f64>> = Vec::with_capacity(self.grid.len());
        for k in 0..self.grid.len() {
            let row = spec
                .time_varying
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    if k == 0 {
                        c.initial.sample(rng)
                    } else {
                        let h = self.grid[k] - self.grid[k - 1];
                        let z: f64 = rng.sample(StandardNormal);
                        tv[k - 1][j] + c.drift * h + c.volatility * h.sqrt() * z
                    }
                })
                .collect();
            tv.push(row);
        }
        let clocks: [f64; 4] = std::array::from_fn(|_| rng.sample(Exp1));
        let censoring = match spec.follow_up.censoring_rate {
            r if r > 0.0 => clocks[3] / r,
            _ => f64::INFINITY,
        };
        let mut traj = Trajectory {
            baseline,
            tv,
            latent_untreated: None,
            treatment: None,
            event: None,
            censoring,
        };
        traj.latent_untreated = self.first_passage(DEATH0, clocks[0], 0.0, &traj, None);
        traj.treatment = self.first_passage(TREAT, clocks[1], 0.0, &traj, None);
        traj.event = match traj.treated_at() {
            Some(v) => self.first_passage(DEATH1, clocks[2], v, &traj, Some(v)),
            None => traj.latent_untreated,
        };
        traj
    }

    fn record(&self, id: String, traj: &Trajectory) -> SubjectRecord {
        let spec = self.spec;
        let c = traj.censoring.min(spec.follow_up.administrative);
        let v = traj.treated_at().filter(|&v| v < c);
        let stops = spec.design == DesignFlavor::StopsAtTreatment;
        let (end, status) = match (traj.event, v) {
            (_, Some(v)) if stops => (v, Status::TreatmentStart),
            (Some(t), _) if t <= c => (t, Status::Event),
            _ => (c, Status::Censored),
        };
        let mut cuts: Vec<f64> = self.grid[1..].iter().copied().filter(|&g| g < end).collect();
        if let Some(v) = v.filter(|&v| v < end) {
            cuts.push(v);
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
        }
        cuts.push(end);
        let mut episodes = Vec::with_capacity(cuts.len());
        let mut a = 0.0;
        for b in cuts {
            let cell = self.cell(a);
            let treated = v.is_some_and(|v| a >= v);
            let st = if b == end {
                status
            } else if Some(b) == v {
                Status::TreatmentStart
            } else {
                Status::Censored
            };
            episodes.push(Episode {
                tstart: a,
                tstop: b,
                status: st,
                treated,
                tv: traj.tv[cell].iter().map(|&x| Some(x)).collect(),
            });
            a = b;
        }
        SubjectRecord {
            id,
            baseline: traj.baseline.clone(),
            episodes,
        }
    }
}

/// Per-subject stream: subject `i` of seed `s` always sees the same draws.
fn subject_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `n` trajectories on `[0, window]`; baseline covariates named in
/// `profile` are fixed at its values.
pub fn simulate_trajectories(
    spec: &ScenarioSpec,
    n: usize,
    seed: u64,
    window: f64,
    profile: &Profile,
) -> Result<Vec<Trajectory>, SimError> {
    spec.check()?;
    for name in profile.keys() {
        if !spec.baseline.iter().any(|c| &c.name == name) {
            return Err(SimError::InvalidScenario(format!(
                "profile covariate `{name}` is not a baseline covariate of the scenario"
            )));
        }
    }
    let compiled = Compiled::new(spec, window);
    Ok((0..n)
        .into_par_iter()
        .map(|i| compiled.draw(&mut subject_rng(seed, i), profile))
        .collect())
}

/// Simulated dataset with the latent trajectories behind it.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub dataset: CountingProcessDataset,
    pub trajectories: Vec<Trajectory>,
}

pub fn simulate_full(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<Simulated, SimError> {
    if n == 0 {
        return Err(SimError::InvalidScenario("n must be at least 1".into()));
    }
    let window = spec.follow_up.administrative;
    let trajectories = simulate_trajectories(spec, n, seed, window, &Profile::new())?;
    let compiled = Compiled::new(spec, window);
    let subjects = trajectories
        .par_iter()
        .enumerate()
        .map(|(i, t)| compiled.record((i + 1).to_string(), t))
        .collect();
    let dataset = CountingProcessDataset::new(spec.schema(), spec.design, subjects)?;
    Ok(Simulated { dataset, trajectories })
}

pub fn simulate(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<CountingProcessDataset, SimError> {
    Ok(simulate_full(spec, n, seed)?.dataset)
}
