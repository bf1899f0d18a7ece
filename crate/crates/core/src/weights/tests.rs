use proptest::prelude::*;

use super::*;
use crate::dataio::testdata::single;
use crate::dataio::{CovariateSchema, DesignFlavor};
use crate::simulator::{simulate, BaselineCovariate, Dist, Intensity, ScenarioSpec};

/// Treatment and death both driven by a standard normal `z`.
fn confounded(n: usize, seed: u64, effect: f64) -> CountingProcessDataset {
    let mut spec = ScenarioSpec::constant(0.1, 0.1, 0.05, 5.0);
    spec.baseline.push(BaselineCovariate {
        name: "z".into(),
        dist: Dist::Normal { mean: 0.0, sd: 1.0 },
    });
    spec.baseline.push(BaselineCovariate {
        name: "flat".into(),
        dist: Dist::Constant { value: 3.0 },
    });
    spec.treatment = Intensity::constant(0.1).with_effect("z", effect);
    spec.death_untreated = Intensity::constant(0.1).with_effect("z", 0.5);
    spec.follow_up.censoring_rate = 0.05;
    simulate(&spec, n, seed).unwrap()
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn no_treatment_starts() {
    let ds = CountingProcessDataset::new(
        CovariateSchema::new(&["x"], &[]),
        DesignFlavor::ContinuesAfterTreatment,
        vec![single("1", 1.0, Status::Event, 0.0)],
    )
    .unwrap();
    assert!(matches!(
        fit_treatment_hazard(&ds, &[], TieMethod::Efron),
        Err(WeightError::NoTreatmentStarts)
    ));
}

#[test]
fn intercept_only_numerator() {
    let ds = confounded(300, 1, 0.5);
    let m = fit_treatment_hazard(&ds, &[], TieMethod::Efron).unwrap();
    assert!(m.beta.is_empty());
    assert_eq!(m.spec.event_code, Status::TreatmentStart);
    assert_eq!(m.n_events, ds.count_status(Status::TreatmentStart));
}

#[test]
fn identical_models_give_unit_weights() {
    let ds = confounded(300, 2, 0.5);
    let m = fit_treatment_hazard(&ds, &names(&["z"]), TieMethod::Efron).unwrap();
    for mode in [WeightMode::Ipcw, WeightMode::Iptw] {
        let w = stabilized_weights(&ds, &m, &m, mode, None).unwrap();
        assert!(w.iter().all(|(_, _, _, w)| w == 1.0));
        assert_eq!(w.diagnostics.effective_sample_size, ds.n_episodes() as f64);
    }
}

#[test]
fn constant_covariate_gives_unit_weights() {
    let ds = confounded(300, 3, 0.5);
    let num = fit_treatment_hazard(&ds, &[], TieMethod::Efron).unwrap();
    let den = fit_treatment_hazard(&ds, &names(&["flat"]), TieMethod::Efron).unwrap();
    assert_eq!(den.beta, vec![0.0]);
    let w = stabilized_weights(&ds, &num, &den, WeightMode::Ipcw, None).unwrap();
    assert!(w.iter().all(|(_, _, _, w)| (w - 1.0).abs() < 1e-12));
}

#[test]
fn truncation_clamps_to_percentiles() {
    let ds = confounded(400, 4, 1.0);
    let num = fit_treatment_hazard(&ds, &[], TieMethod::Efron).unwrap();
    let den = fit_treatment_hazard(&ds, &names(&["z"]), TieMethod::Efron).unwrap();
    let raw = stabilized_weights(&ds, &num, &den, WeightMode::Ipcw, None).unwrap();
    let t = Truncation {
        lower: 1.0,
        upper: 99.0,
    };
    let cut = stabilized_weights(&ds, &num, &den, WeightMode::Ipcw, Some(t)).unwrap();
    let mut flat: Vec<f64> = raw.iter().map(|r| r.3).collect();
    flat.sort_by(f64::total_cmp);
    let n = flat.len() as f64 - 1.0;
    let pct = |q: f64| {
        let pos = q * n;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        flat[lo] + (pos - lo as f64) * (flat[hi] - flat[lo])
    };
    assert_eq!(cut.diagnostics.min, pct(0.01));
    assert_eq!(cut.diagnostics.max, pct(0.99));
    assert_eq!(cut.diagnostics.truncated_to, Some((pct(0.01), pct(0.99))));
    assert!(raw.diagnostics.max > cut.diagnostics.max);
    assert!(matches!(
        stabilized_weights(
            &ds,
            &num,
            &den,
            WeightMode::Ipcw,
            Some(Truncation {
                lower: 50.0,
                upper: 10.0
            })
        ),
        Err(WeightError::BadTruncation)
    ));
}

#[test]
fn unit_before_first_treatment_time_and_frozen_after_start() {
    let ds = confounded(400, 5, 1.0);
    let num = fit_treatment_hazard(&ds, &[], TieMethod::Efron).unwrap();
    let den = fit_treatment_hazard(&ds, &names(&["z"]), TieMethod::Efron).unwrap();
    let first = num.baseline.times[0];
    let w = stabilized_weights(&ds, &num, &den, WeightMode::Iptw, None).unwrap();
    for (si, s) in ds.subjects().iter().enumerate() {
        let mut at_start = None;
        for (ei, e) in s.episodes.iter().enumerate() {
            let wi = w.weight(si, ei);
            if e.tstop < first {
                assert_eq!(wi, 1.0);
            }
            if e.treated {
                let frozen = *at_start.get_or_insert(wi);
                assert_eq!(wi, frozen);
            }
        }
    }
}

#[test]
fn models_must_target_treatment() {
    let ds = confounded(200, 6, 0.5);
    let outcome = crate::coxfit::fit(&split_at_treatment(&ds), &CoxSpec::new(Status::Event, &[])).unwrap();
    assert!(matches!(
        stabilized_weights(&ds, &outcome, &outcome, WeightMode::Ipcw, None),
        Err(WeightError::NotATreatmentModel)
    ));
}

#[test]
fn treatment_effect_recovered() {
    // treatment hazard 0.1 exp(0.5 z)
    let ds = confounded(5000, 7, 0.5);
    let m = fit_treatment_hazard(&ds, &names(&["z"]), TieMethod::Efron).unwrap();
    let se = 1.0 / m.info_matrix[0].sqrt();
    assert!((m.beta[0] - 0.5).abs() < 3.0 * se, "{} +- {se}", m.beta[0]);
}

#[test]
fn quantile_is_linear_interpolation() {
    assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
    assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.0), 1.0);
    assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 1.0), 4.0);
    assert!((quantile(&[0.0, 10.0], 0.99) - 9.9).abs() < 1e-12);
}

#[test]
fn csv_export_and_shape() {
    let ds = confounded(20, 8, 0.5);
    let w = WeightTable::uniform(&ds, WeightMode::Ipcw);
    let mut buf = Vec::new();
    w.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("id,tstart,tstop,weight\n1,0,"));
    assert_eq!(text.lines().count(), ds.n_episodes() + 1);
    assert!(WeightTable::from_weights(&ds, WeightMode::Ipcw, vec![]).is_err());
    let bad: Vec<Vec<f64>> = ds.subjects().iter().map(|s| vec![-1.0; s.episodes.len()]).collect();
    assert!(matches!(
        WeightTable::from_weights(&ds, WeightMode::Ipcw, bad),
        Err(WeightError::NonPositiveProbability { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn weights_positive_and_diagnostics_consistent(seed in 0u64..10_000, effect in -1.0f64..1.0) {
        let ds = confounded(150, seed, effect);
        prop_assume!(ds.count_status(Status::TreatmentStart) > 0);
        let num = fit_treatment_hazard(&ds, &[], TieMethod::Efron).unwrap();
        let den = match fit_treatment_hazard(&ds, &names(&["z"]), TieMethod::Efron) {
            Ok(m) => m,
            Err(_) => return Ok(()),
        };
        for mode in [WeightMode::Ipcw, WeightMode::Iptw] {
            let w = stabilized_weights(&ds, &num, &den, mode, None).unwrap();
            let d = &w.diagnostics;
            prop_assert!(w.iter().all(|(_, _, _, w)| w > 0.0 && w.is_finite()));
            prop_assert!(d.min <= d.mean && d.mean <= d.max);
            prop_assert!(d.effective_sample_size <= d.episodes as f64 + 1e-9);
            prop_assert!(d.effective_sample_size > 0.0);
        }
    }
}
