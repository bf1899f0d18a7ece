//! Right-continuous step functions for survival and risk.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataio::Profile;

/// Value at `t` of the step function `(times, values)`; `before` when `t`
/// precedes the first knot.
fn step_at(times: &[f64], values: &[f64], t: f64, before: f64) -> f64 {
    match times.partition_point(|&x| x <= t) {
        0 => before,
        k => values[k - 1],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    /// Knots, starting at 0.
    pub times: Vec<f64>,
    pub surv: Vec<f64>,
}

impl SurvivalCurve {
    pub fn at(&self, t: f64) -> f64 {
        step_at(&self.times, &self.surv, t, 1.0)
    }

    pub fn into_risk(self, strategy: impl Into<String>, profile: Profile, horizon: f64) -> RiskCurve {
        let risk = self.surv.iter().map(|s| 1.0 - s).collect();
        RiskCurve::new(strategy, profile, horizon, self.times, risk)
    }

    pub fn write_csv(&self, out: impl Write) -> std::io::Result<()> {
        write_pairs(out, "survival", &self.times, &self.surv)
    }
}

/// Risk `F(t)` on `[0, horizon]` for one covariate profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub strategy: String,
    pub profile: Profile,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub risk: Vec<f64>,
}

impl RiskCurve {
    /// Cuts a full-grid step function at `horizon`, anchoring `F(0) = 0` and
    /// closing the curve with a knot at a finite horizon.
    pub fn new(strategy: impl Into<String>, profile: Profile, horizon: f64, times: Vec<f64>, risk: Vec<f64>) -> Self {
        debug_assert_eq!(times.len(), risk.len());
        let mut t_out = vec![0.0];
        let mut r_out = vec![0.0];
        for (&t, &r) in times.iter().zip(&risk) {
            if t > horizon {
                break;
            }
            let r = r.clamp(0.0, 1.0);
            if t == 0.0 {
                r_out[0] = r;
                continue;
            }
            t_out.push(t);
            r_out.push(r);
        }
        if horizon.is_finite() && *t_out.last().expect("non-empty") < horizon {
            let last = *r_out.last().expect("non-empty");
            t_out.push(horizon);
            r_out.push(last);
        }
        Self {
            strategy: strategy.into(),
            profile,
            horizon,
            times: t_out,
            risk: r_out,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        step_at(&self.times, &self.risk, t, 0.0)
    }

    pub fn at_horizon(&self) -> f64 {
        self.at(self.horizon)
    }

    /// Checks `F(0)=0`, monotonicity and bounds.
    pub fn is_valid(&self) -> bool {
        self.risk.first() == Some(&0.0)
            && self.times.windows(2).all(|w| w[0] < w[1])
            && self.risk.windows(2).all(|w| w[0] <= w[1] + 1e-12)
            && self.risk.iter().all(|r| (0.0..=1.0).contains(r))
            && self.times.last().is_some_and(|&t| t <= self.horizon)
    }

    pub fn write_csv(&self, out: impl Write) -> std::io::Result<()> {
        write_pairs(out, "risk", &self.times, &self.risk)
    }
}

fn write_pairs(mut out: impl Write, name: &str, times: &[f64], values: &[f64]) -> std::io::Result<()> {
    writeln!(out, "time,{name}")?;
    for (t, v) in times.iter().zip(values) {
        writeln!(out, "{t},{v}")?;
    }
    Ok(())
}

/// Overlay export `<key>,time,risk` with one block per curve.
pub fn write_labelled_csv<'a>(
    mut out: impl Write,
    key: &str,
    curves: impl IntoIterator<Item = (&'a str, &'a RiskCurve)>,
) -> std::io::Result<()> {
    writeln!(out, "{key},time,risk")?;
    for (label, curve) in curves {
        for (t, r) in curve.times.iter().zip(&curve.risk) {
            writeln!(out, "{label},{t},{r}")?;
        }
    }
    Ok(())
}
