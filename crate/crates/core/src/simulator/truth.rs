//! True risks under the generating law.

use serde::{Deserialize, Serialize};

use super::{simulate_trajectories, ScenarioSpec, SimError};
use crate::dataio::Profile;
use crate::predictimands::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StrategyRisks {
    pub ignore: f64,
    pub composite: f64,
    pub while_untreated: f64,
    pub hypothetical: f64,
}

impl StrategyRisks {
    pub fn get(&self, s: Strategy) -> f64 {
        match s {
            Strategy::IgnoreTreatment => self.ignore,
            Strategy::Composite => self.composite,
            Strategy::WhileUntreated => self.while_untreated,
            Strategy::Hypothetical => self.hypothetical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum TruthMethod {
    Analytic,
    MonteCarlo { replications: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthOracle {
    pub method: TruthMethod,
    pub horizon: f64,
    pub profile: Profile,
    pub risks: StrategyRisks,
    /// Monte Carlo standard errors; zero for closed forms.
    pub standard_errors: StrategyRisks,
}

/// Closed forms for constant intensities: treatment `l01`, untreated death
/// `l02`, treated death `l12`.
pub fn analytic_risks(l01: f64, l02: f64, l12: f64, t: f64) -> StrategyRisks {
    let a = l01 + l02;
    let composite = -(-a * t).exp_m1();
    let while_untreated = if a > 0.0 { l02 / a * composite } else { 0.0 };
    // treated at s with density l01 e^{-a s}, then dies by t
    let stay = if a > 0.0 { composite / a } else { t };
    let d = a - l12;
    let shifted = if d.abs() < 1e-12 {
        t * (-l12 * t).exp()
    } else {
        (-l12 * t).exp() * -(-d * t).exp_m1() / d
    };
    StrategyRisks {
        ignore: while_untreated + l01 * (stay - shifted),
        composite,
        while_untreated,
        hypothetical: -(-l02 * t).exp_m1(),
    }
}

/// True risks at `horizon` for `profile`. Closed form when every intensity
/// is constant; otherwise Monte Carlo over uncensored trajectories, with
/// covariates not in the profile drawn from their laws.
pub fn true_risks(
    spec: &ScenarioSpec,
    profile: &Profile,
    horizon: f64,
    replications: usize,
    seed: u64,
) -> Result<TruthOracle, SimError> {
    spec.check()?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(SimError::InvalidScenario(
            "horizon must be finite and nonnegative".into(),
        ));
    }
    let rates = (
        spec.treatment.constant_rate(),
        spec.death_untreated.constant_rate(),
        spec.death_treated.constant_rate(),
    );
    if let (Some(l01), Some(l02), Some(l12)) = rates {
        return Ok(TruthOracle {
            method: TruthMethod::Analytic,
            horizon,
            profile: profile.clone(),
            risks: analytic_risks(l01, l02, l12, horizon),
            standard_errors: StrategyRisks::default(),
        });
    }
    if replications == 0 {
        return Err(SimError::InvalidScenario("Monte Carlo truth needs replications".into()));
    }
    let window = horizon.max(f64::MIN_POSITIVE);
    let paths = simulate_trajectories(spec, replications, seed, window, profile)?;
    let mut hits = [0usize; 4];
    for p in &paths {
        let t0 = p.latent_untreated.filter(|&t| t <= horizon);
        let v = p.treatment.filter(|&v| v <= horizon);
        let before_treatment = match (p.latent_untreated, p.treatment) {
            (Some(t), Some(v)) => t <= v,
            (Some(_), None) => true,
            _ => false,
        };
        let flags = [
            p.event.is_some_and(|t| t <= horizon),
            t0.is_some() || v.is_some(),
            t0.is_some() && before_treatment,
            t0.is_some(),
        ];
        for (h, f) in hits.iter_mut().zip(flags) {
            *h += usize::from(f);
        }
    }
    let r = replications as f64;
    let p = hits.map(|h| h as f64 / r);
    let se = p.map(|p| (p * (1.0 - p) / r).sqrt());
    let pack = |v: [f64; 4]| StrategyRisks {
        ignore: v[0],
        composite: v[1],
        while_untreated: v[2],
        hypothetical: v[3],
    };
    Ok(TruthOracle {
        method: TruthMethod::MonteCarlo { replications, seed },
        horizon,
        profile: profile.clone(),
        risks: pack(p),
        standard_errors: pack(se),
    })
}
