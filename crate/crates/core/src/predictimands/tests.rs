use super::*;
use crate::dataio::{CovariateSchema, Episode, SubjectRecord};
use crate::simulator::{simulate, BaselineCovariate, Dist, Intensity, ScenarioSpec, TimeVaryingCovariate};

fn s1(n: usize, seed: u64) -> CountingProcessDataset {
    simulate(&ScenarioSpec::constant(0.1, 0.2, 0.05, 6.0), n, seed).unwrap()
}

fn with_covariates(treat: f64) -> ScenarioSpec {
    let mut spec = ScenarioSpec::constant(treat, 0.2, 0.05, 6.0);
    spec.baseline = vec![
        BaselineCovariate {
            name: "x".into(),
            dist: Dist::Normal { mean: 0.0, sd: 1.0 },
        },
        BaselineCovariate {
            name: "flat".into(),
            dist: Dist::Constant { value: 1.0 },
        },
    ];
    spec.time_varying = vec![TimeVaryingCovariate {
        name: "z".into(),
        initial: Dist::Normal { mean: 0.0, sd: 1.0 },
        drift: 0.0,
        volatility: 0.3,
    }];
    spec.follow_up.grid_step = Some(1.0);
    spec.follow_up.censoring_rate = 0.05;
    spec.treatment = Intensity::constant(treat).with_effect("x", 0.4).with_effect("z", 0.5);
    spec.death_untreated = Intensity::constant(0.2).with_effect("x", 0.5).with_effect("z", 0.3);
    spec
}

fn x1() -> Profile {
    [("x".to_string(), 1.0)].into()
}

#[test]
fn names_round_trip() {
    for s in all_specs(&StrategySpec::new(Strategy::Composite, 1.0)) {
        assert_eq!(s.strategy.to_string().parse::<Strategy>().unwrap(), s.strategy);
        if let Some(m) = s.method {
            assert_eq!(m.to_string().parse::<HypotheticalMethod>().unwrap(), m);
        }
    }
    assert_eq!(
        StrategySpec::hypothetical(HypotheticalMethod::CensorIpcw, 1.0).label(),
        "hypothetical/censor-ipcw"
    );
    assert!("principal-stratum".parse::<Strategy>().is_err());
}

#[test]
fn spec_rules() {
    let ds = s1(50, 1);
    assert!(matches!(
        fit_strategy(&ds, &StrategySpec::new(Strategy::Hypothetical, 5.0)),
        Err(EstimateError::MissingMethod)
    ));
    let mut bad = StrategySpec::new(Strategy::Composite, 5.0);
    bad.method = Some(HypotheticalMethod::CensorBaseline);
    assert!(matches!(fit_strategy(&ds, &bad), Err(EstimateError::InvalidSpec(_))));
    assert!(matches!(
        fit_strategy(&ds, &StrategySpec::new(Strategy::Composite, 0.0)),
        Err(EstimateError::InvalidSpec(_))
    ));
}

#[test]
fn iptw_outcome_model_rejects_time_varying_covariates() {
    let ds = simulate(&with_covariates(0.2), 200, 2).unwrap();
    let spec = StrategySpec::hypothetical(HypotheticalMethod::ModelIptw, 5.0).with_covariates(&["x", "z"]);
    assert!(matches!(fit_strategy(&ds, &spec), Err(EstimateError::InvalidSpec(_))));
}

#[test]
fn stops_design_flags_mismatch() {
    let ds = crate::dataio::split_at_treatment(&s1(300, 3));
    let all = estimate_all(&ds, &StrategySpec::new(Strategy::Composite, 5.0), &Profile::new());
    let labels: Vec<&str> = all.iter().map(|(l, _)| l.as_str()).collect();
    assert_eq!(
        labels,
        [
            "ignore",
            "composite",
            "while-untreated",
            "hypothetical/censor",
            "hypothetical/model",
            "hypothetical/censor-ipcw",
            "hypothetical/model-iptw"
        ]
    );
    for (label, r) in &all {
        let mismatch = matches!(r, Err(EstimateError::DesignMismatch { .. }));
        let expected = matches!(
            label.as_str(),
            "ignore" | "hypothetical/model" | "hypothetical/model-iptw"
        );
        assert_eq!(mismatch, expected, "{label}");
        if !expected {
            assert!(r.as_ref().unwrap().curve.is_valid());
        }
    }
}

#[test]
fn no_treatment_makes_strategies_agree() {
    let ds = simulate(&with_covariates(0.0), 300, 4).unwrap();
    assert_eq!(ds.count_status(Status::TreatmentStart), 0);
    for covs in [&[][..], &["x"][..]] {
        let shared = StrategySpec::new(Strategy::Composite, 5.0)
            .with_covariates(covs)
            .with_weight_covariates(&["z"]);
        let profile = if covs.is_empty() { Profile::new() } else { x1() };
        let all = estimate_all(&ds, &shared, &profile);
        let reference = all[0].1.as_ref().unwrap().curve.clone();
        for (label, r) in &all {
            let c = &r.as_ref().unwrap().curve;
            assert_eq!(c.times, reference.times, "{label}");
            for (a, b) in c.risk.iter().zip(&reference.risk) {
                assert!((a - b).abs() < 1e-10, "{label}");
            }
        }
    }
}

#[test]
fn zero_effect_weights_match_censoring() {
    let ds = simulate(&with_covariates(0.2), 300, 5).unwrap();
    let base = StrategySpec::hypothetical(HypotheticalMethod::CensorBaseline, 5.0).with_covariates(&["x"]);
    let ipcw = StrategySpec {
        method: Some(HypotheticalMethod::CensorIpcw),
        ..base.clone()
    }
    .with_weight_covariates(&["flat"]);
    let a = estimate(&ds, &base, &x1()).unwrap();
    let b = estimate(&ds, &ipcw, &x1()).unwrap();
    let w = b.fitted.diagnostics.weights.as_ref().unwrap();
    assert!((w.min - 1.0).abs() < 1e-12 && (w.max - 1.0).abs() < 1e-12);
    for (x, y) in a.curve.risk.iter().zip(&b.curve.risk) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn covariate_strategies_run_and_report() {
    let ds = simulate(&with_covariates(0.2), 400, 6).unwrap();
    let shared = StrategySpec::new(Strategy::Composite, 5.0)
        .with_covariates(&["x"])
        .with_weight_covariates(&["z"]);
    for (label, r) in estimate_all(&ds, &shared, &x1()) {
        let e = r.unwrap_or_else(|e| panic!("{label}: {e}"));
        assert!(e.curve.is_valid(), "{label}");
        assert_eq!(e.curve.strategy, label);
        let report = e.report();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"diagnostics\""));
        assert_eq!(report.diagnostics.time_unit, "years");
        assert!(!report.diagnostics.convergence.is_empty());
        let back: FittedStrategy = serde_json::from_str(&serde_json::to_string(&e.fitted).unwrap()).unwrap();
        assert_eq!(back.predict(&x1(), 5.0).unwrap(), e.curve);
    }
}

#[test]
fn step_function_treatment_coefficient() {
    let ds = s1(1000, 7);
    let mut spec = StrategySpec::hypothetical(HypotheticalMethod::ModelBaseline, 5.0);
    spec.tv_cuts = vec![2.0];
    let e = estimate(&ds, &spec, &Profile::new()).unwrap();
    match &e.fitted.model {
        FittedModel::Cox { model } => assert_eq!(model.terms, ["treated:(0,2]", "treated:(2,inf)"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn horizon_and_positivity_warnings() {
    let untreated = |id: &str, t: f64, st: Status| SubjectRecord {
        id: id.into(),
        baseline: vec![],
        episodes: vec![Episode {
            tstart: 0.0,
            tstop: t,
            status: st,
            treated: false,
            tv: vec![],
        }],
    };
    let ds = CountingProcessDataset::with_inferred_flavor(
        CovariateSchema::new(&[], &[]),
        vec![
            untreated("1", 1.0, Status::Event),
            crate::dataio::testdata::treated("2", 0.5, 4.0, Status::Event),
            untreated("3", 2.0, Status::Censored),
        ],
    )
    .unwrap();
    let e = estimate(
        &ds,
        &StrategySpec::hypothetical(HypotheticalMethod::CensorBaseline, 3.0),
        &Profile::new(),
    )
    .unwrap();
    let report = e.report();
    assert!(report.diagnostics.warnings.iter().any(|w| w.starts_with("positivity")));
    assert!(report
        .diagnostics
        .warnings
        .iter()
        .any(|w| w.contains("beyond the last event")));
    assert_eq!(e.curve.at(3.0), e.curve.at(1.0));
}

#[test]
fn s1_ordering_at_horizon() {
    let ds = s1(5000, 8);
    let at = |s: StrategySpec| estimate(&ds, &s, &Profile::new()).unwrap().curve.at_horizon();
    let comp = at(StrategySpec::new(Strategy::Composite, 5.0));
    let hyp = at(StrategySpec::hypothetical(HypotheticalMethod::CensorBaseline, 5.0));
    let ign = at(StrategySpec::new(Strategy::IgnoreTreatment, 5.0));
    let wu = at(StrategySpec::new(Strategy::WhileUntreated, 5.0));
    assert!(comp > hyp && hyp > ign && ign > wu, "{comp} {hyp} {ign} {wu}");
}
