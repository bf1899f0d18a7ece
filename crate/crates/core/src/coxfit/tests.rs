use proptest::prelude::*;

use super::*;
use crate::dataio::testdata::single;
use crate::dataio::{CovariateSchema, DesignFlavor, Episode, SubjectRecord};

fn dataset(schema: CovariateSchema, subjects: Vec<SubjectRecord>) -> CountingProcessDataset {
    CountingProcessDataset::new(schema, DesignFlavor::ContinuesAfterTreatment, subjects).unwrap()
}

fn d1() -> CountingProcessDataset {
    dataset(
        CovariateSchema::new(&["x"], &[]),
        vec![
            single("1", 1.0, Status::Event, 1.0),
            single("2", 2.0, Status::Event, 0.0),
            single("3", 3.0, Status::Censored, 1.0),
            single("4", 4.0, Status::Event, 0.0),
        ],
    )
}

fn d2() -> CountingProcessDataset {
    dataset(
        CovariateSchema::new(&["x"], &[]),
        vec![
            single("1", 1.0, Status::Event, 0.0),
            single("2", 1.0, Status::Event, 0.0),
            single("3", 2.0, Status::Event, 0.0),
        ],
    )
}

fn x_spec() -> CoxSpec {
    CoxSpec::new(Status::Event, &["x"])
}

/// Log partial likelihood of single-row subjects without ties, by direct
/// enumeration of each risk set.
fn brute_loglik(data: &[(f64, bool, f64)], beta: f64) -> f64 {
    let mut ll = 0.0;
    for &(t, event, x) in data {
        if event {
            let den: f64 = data.iter().filter(|r| r.0 >= t).map(|r| (beta * r.2).exp()).sum();
            ll += beta * x - den.ln();
        }
    }
    ll
}

const D1: [(f64, bool, f64); 4] = [(1.0, true, 1.0), (2.0, true, 0.0), (3.0, false, 1.0), (4.0, true, 0.0)];

#[test]
fn d1_beta_matches_grid_search() {
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
    for k in -40_000..=40_000 {
        let b = k as f64 * 5e-5;
        let ll = brute_loglik(&D1, b);
        if ll > best {
            best = ll;
            arg = b;
        }
    }
    let m = fit(&d1(), &x_spec()).unwrap();
    assert!((m.beta[0] - arg).abs() < 5e-5);
    assert!((m.beta[0] - 0.5 * 2f64.ln()).abs() < 1e-9);
    assert!(m.convergence.gradient_norm < SCORE_TOL);
    assert!(!m.convergence.degenerate);
    assert!((m.convergence.loglik - brute_loglik(&D1, m.beta[0])).abs() < 1e-12);
}

#[test]
fn d1_loglik_at_zero() {
    let ll = partial_loglik(&d1(), &x_spec(), None, &[0.0]).unwrap();
    assert!((ll - (0.25f64.ln() + (1.0f64 / 3.0).ln())).abs() < 1e-14);
    let m = fit(&d1(), &x_spec()).unwrap();
    assert_eq!(m.convergence.loglik_null, ll);
}

#[test]
fn d1_baseline_hazard() {
    for tie in [TieMethod::Breslow, TieMethod::Efron] {
        let m = fit(&d1(), &x_spec().with_tie(tie)).unwrap();
        let h = m.baseline_cumhaz();
        assert!((h.cumulative(1.0) - (2f64.sqrt() - 1.0) / 2.0).abs() < 1e-12);
        assert!((h.cumulative(2.0) - 0.5).abs() < 1e-12);
        assert_eq!(h.cumulative(0.5), 0.0);
        assert_eq!(h.times, vec![1.0, 2.0, 4.0]);
    }
}

#[test]
fn d2_tie_corrections() {
    let spec = CoxSpec::new(Status::Event, &[]);
    let efron = fit(&d2(), &spec).unwrap();
    let breslow = fit(&d2(), &spec.clone().with_tie(TieMethod::Breslow)).unwrap();
    assert!((efron.baseline.increments[0] - 5.0 / 6.0).abs() < 1e-12);
    assert!((breslow.baseline.increments[0] - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(efron.baseline.increments[1], 1.0);
}

#[test]
fn d1_survival_prediction() {
    let m = fit(&d1(), &x_spec()).unwrap();
    let profile: Profile = [("x".to_string(), 1.0)].into();
    let s = m.predict_survival(&profile, |_| false).unwrap();
    let expected = (-(2f64.sqrt() - 1.0) / 2.0 * 2f64.sqrt()).exp();
    assert!((s.at(1.0) - expected).abs() < 1e-12);
    assert!((s.at(1.0) - 0.746).abs() < 5e-4);
    assert_eq!(s.at(0.0), 1.0);
    assert!(matches!(
        m.predict_survival(&Profile::new(), |_| false),
        Err(CoxError::ProfileIncomplete(_))
    ));
}

#[test]
fn zero_covariate_gives_null_fit() {
    let ds = dataset(
        CovariateSchema::new(&["x"], &[]),
        vec![
            single("1", 1.0, Status::Event, 0.0),
            single("2", 2.0, Status::Censored, 0.0),
            single("3", 3.0, Status::Event, 0.0),
        ],
    );
    let m = fit(&ds, &x_spec()).unwrap();
    assert_eq!(m.beta, vec![0.0]);
    assert!(m.convergence.degenerate);
    // partial likelihood of the null model: ln(1/3) + ln(1/1)
    assert!((m.convergence.loglik - (1.0f64 / 3.0).ln()).abs() < 1e-14);
}

#[test]
fn separated_data_is_monotone() {
    let ds = dataset(
        CovariateSchema::new(&["x"], &[]),
        vec![
            single("1", 1.0, Status::Event, 1.0),
            single("2", 2.0, Status::Censored, 0.0),
            single("3", 3.0, Status::Censored, 1.0),
            single("4", 4.0, Status::Censored, 0.0),
        ],
    );
    match fit(&ds, &x_spec()) {
        Err(CoxError::MonotoneLikelihood { term }) => assert_eq!(term, "x"),
        other => panic!("expected monotone likelihood, got {other:?}"),
    }
}

#[test]
fn no_events_rejected() {
    let ds = dataset(
        CovariateSchema::new(&["x"], &[]),
        vec![single("1", 1.0, Status::Censored, 0.0)],
    );
    assert!(matches!(fit(&ds, &x_spec()), Err(CoxError::NoEvents(Status::Event))));
}

#[test]
fn invalid_specs() {
    let ds = d1();
    assert!(matches!(
        fit(&ds, &CoxSpec::new(Status::Censored, &[])),
        Err(CoxError::InvalidSpec(_))
    ));
    assert!(matches!(
        fit(&ds, &CoxSpec::new(Status::Event, &["x", "x"])),
        Err(CoxError::InvalidSpec(_))
    ));
    assert!(matches!(
        fit(&ds, &CoxSpec::new(Status::Event, &["y"])),
        Err(CoxError::Data(_))
    ));
    assert!(matches!(
        fit(&ds, &CoxSpec::new(Status::Event, &[]).with_treatment(&[3.0, 2.0])),
        Err(CoxError::InvalidSpec(_))
    ));
    assert!(matches!(
        partial_loglik(&ds, &x_spec(), None, &[0.0, 1.0]),
        Err(CoxError::BetaLength { expected: 1, got: 2 })
    ));
}

#[test]
fn schoenfeld_d1() {
    let ds = d1();
    let m = fit(&ds, &x_spec()).unwrap();
    let res = schoenfeld_residuals(&m, &ds, None).unwrap();
    assert_eq!(res.len(), 3);
    let u = m.beta[0].exp();
    assert_eq!(res[0].subject, "1");
    assert!((res[0].residuals[0] - (1.0 - 2.0 * u / (2.0 * u + 2.0))).abs() < 1e-12);
    // at the maximum the residuals sum to the score, i.e. zero
    let total: f64 = res.iter().map(|r| r.residuals[0]).sum();
    assert!(total.abs() < 1e-8);
    let mut buf = Vec::new();
    write_schoenfeld_csv(&m, &res, &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("time,id,x\n1,1,"));
}

#[test]
fn schoenfeld_single_event() {
    let ds = dataset(
        CovariateSchema::new(&["x"], &[]),
        vec![
            single("1", 1.0, Status::Event, 0.5),
            single("2", 2.0, Status::Censored, 2.0),
            single("3", 3.0, Status::Censored, -1.0),
        ],
    );
    let mut m = fit(&ds, &x_spec()).unwrap();
    m.beta = vec![0.3];
    let res = schoenfeld_residuals(&m, &ds, None).unwrap();
    let xs = [0.5f64, 2.0, -1.0];
    let w: Vec<f64> = xs.iter().map(|x| (0.3 * x).exp()).collect();
    let mean = xs.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / w.iter().sum::<f64>();
    assert!((res[0].residuals[0] - (0.5 - mean)).abs() < 1e-12);
}

#[test]
fn breslow_null_model_is_nelson_aalen() {
    let ds = dataset(
        CovariateSchema::new(&[], &[]),
        [(1.0, 1), (1.0, 1), (2.0, 0), (3.0, 1), (3.0, 0), (5.0, 1)]
            .iter()
            .enumerate()
            .map(|(i, &(t, s))| SubjectRecord {
                id: i.to_string(),
                baseline: vec![],
                episodes: vec![Episode {
                    tstart: 0.0,
                    tstop: t,
                    status: Status::from_code(s).unwrap(),
                    treated: false,
                    tv: vec![],
                }],
            })
            .collect(),
    );
    let m = fit(&ds, &CoxSpec::new(Status::Event, &[]).with_tie(TieMethod::Breslow)).unwrap();
    let na = [2.0 / 6.0, 1.0 / 3.0, 1.0];
    assert_eq!(m.baseline.times, vec![1.0, 3.0, 5.0]);
    for (a, b) in m.baseline.increments.iter().zip(na) {
        assert!((a - b).abs() < 1e-15);
    }
    let s = m.predict_survival(&Profile::new(), |_| false).unwrap();
    assert!((s.at(4.0) - (-(na[0] + na[1])).exp()).abs() < 1e-15);
}

#[test]
fn unit_weights_equal_unweighted() {
    let ds = d1();
    let w = WeightTable::uniform(&ds, crate::weights::WeightMode::Ipcw);
    let a = fit(&ds, &x_spec()).unwrap();
    let b = fit_weighted(&ds, &x_spec(), Some(&w)).unwrap();
    assert_eq!(a.beta, b.beta);
    assert_eq!(a.baseline, b.baseline);
    assert!(b.weighted);
}

#[test]
fn shift_invariance() {
    let shifted = dataset(
        CovariateSchema::new(&["x"], &[]),
        d1().subjects()
            .iter()
            .map(|s| SubjectRecord {
                baseline: vec![s.baseline[0] + 10.0],
                ..s.clone()
            })
            .collect(),
    );
    let a = fit(&d1(), &x_spec()).unwrap();
    let b = fit(&shifted, &x_spec()).unwrap();
    assert!((a.beta[0] - b.beta[0]).abs() < 1e-10);
    let scale = (-10.0 * a.beta[0]).exp();
    for (ha, hb) in a.baseline.increments.iter().zip(&b.baseline.increments) {
        assert!((hb - ha * scale).abs() < 1e-10 * ha);
    }
}

fn treated_subject(id: &str, v: f64, end: f64, status: Status) -> SubjectRecord {
    crate::dataio::testdata::treated(id, v, end, status)
}

fn untreated(id: &str, end: f64, status: Status) -> SubjectRecord {
    SubjectRecord {
        id: id.into(),
        baseline: vec![],
        episodes: vec![Episode {
            tstart: 0.0,
            tstop: end,
            status,
            treated: false,
            tv: vec![],
        }],
    }
}

fn treatment_data() -> CountingProcessDataset {
    dataset(
        CovariateSchema::new(&[], &[]),
        vec![
            untreated("1", 1.0, Status::Event),
            treated_subject("2", 0.5, 6.0, Status::Censored),
            untreated("3", 2.0, Status::Event),
            treated_subject("4", 1.5, 5.0, Status::Event),
            untreated("5", 3.0, Status::Event),
            treated_subject("6", 0.8, 4.5, Status::Censored),
            untreated("7", 4.0, Status::Event),
            treated_subject("8", 2.5, 7.0, Status::Event),
            untreated("9", 3.5, Status::Censored),
            treated_subject("10", 1.0, 2.2, Status::Event),
            untreated("11", 6.5, Status::Event),
            treated_subject("12", 0.7, 3.8, Status::Event),
            untreated("13", 8.0, Status::Censored),
            untreated("14", 5.5, Status::Event),
            treated_subject("15", 3.2, 6.2, Status::Censored),
            untreated("16", 4.4, Status::Censored),
        ],
    )
}

#[test]
fn treatment_path_ordering() {
    let ds = treatment_data();
    let m = fit(&ds, &CoxSpec::new(Status::Event, &[]).with_treatment(&[])).unwrap();
    assert_eq!(m.terms, vec!["treated"]);
    let gamma = m.beta[0];
    let s0 = m.predict_survival(&Profile::new(), |_| false).unwrap();
    let s1 = m.predict_survival(&Profile::new(), |_| true).unwrap();
    for (&a, &b) in s0.surv.iter().zip(&s1.surv) {
        if gamma < 0.0 {
            assert!(b >= a);
        } else {
            assert!(b <= a);
        }
    }
}

#[test]
fn step_function_treatment_terms() {
    let ds = treatment_data();
    let spec = CoxSpec::new(Status::Event, &[]).with_treatment(&[3.0]);
    assert_eq!(spec.term_names(), vec!["treated:(0,3]", "treated:(3,inf)"]);
    let m = fit(&ds, &spec).unwrap();
    assert_eq!(m.beta.len(), 2);
    let lp_early = m.linear_predictor(&Profile::new(), true, 2.0).unwrap();
    let lp_late = m.linear_predictor(&Profile::new(), true, 4.0).unwrap();
    assert_eq!(lp_early, m.beta[0]);
    assert_eq!(lp_late, m.beta[1]);
    assert_eq!(m.linear_predictor(&Profile::new(), false, 4.0).unwrap(), 0.0);
}

#[test]
fn model_json_round_trip() {
    let ds = treatment_data();
    let m = fit(&ds, &CoxSpec::new(Status::Event, &[]).with_treatment(&[3.0])).unwrap();
    let text = serde_json::to_string(&m).unwrap();
    assert!(text.contains("\"treated:(0,3]\""));
    let back: CoxModel = serde_json::from_str(&text).unwrap();
    assert_eq!(back, m);
}

/// Random small datasets with a baseline and a time-dependent covariate,
/// delayed entry from splitting, ties and non-unit weights.
fn random_dataset(seed: u64, n: usize) -> (CountingProcessDataset, WeightTable) {
    use rand::{RngExt, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let subjects = (0..n)
        .map(|i| {
            let end = (rng.random_range(1..=8) as f64) * 0.5;
            let status = if rng.random::<f64>() < 0.7 {
                Status::Event
            } else {
                Status::Censored
            };
            let split = rng.random::<f64>() < 0.5 && end > 1.0;
            let mut eps = Vec::new();
            let mut cuts = vec![];
            if split {
                cuts.push(0.5 * (rng.random_range(1..(end * 2.0) as usize)) as f64);
            }
            cuts.push(end);
            let mut a = 0.0;
            for &b in &cuts {
                eps.push(Episode {
                    tstart: a,
                    tstop: b,
                    status: if b == end { status } else { Status::Censored },
                    treated: false,
                    tv: vec![Some(rng.random::<f64>() * 2.0 - 1.0)],
                });
                a = b;
            }
            SubjectRecord {
                id: i.to_string(),
                baseline: vec![rng.random::<f64>() * 2.0],
                episodes: eps,
            }
        })
        .collect();
    let ds = dataset(CovariateSchema::new(&["x"], &["z"]), subjects);
    let ws = ds
        .subjects()
        .iter()
        .map(|s| s.episodes.iter().map(|_| 0.5 + rng.random::<f64>()).collect())
        .collect();
    let w = WeightTable::from_weights(&ds, crate::weights::WeightMode::Ipcw, ws).unwrap();
    (ds, w)
}

fn check_derivatives(seed: u64, tie: TieMethod) {
    let (ds, w) = random_dataset(seed, 5 + (seed % 20) as usize);
    if ds.count_status(Status::Event) == 0 {
        return;
    }
    let spec = CoxSpec::new(Status::Event, &["x", "z"]).with_tie(tie);
    let beta = [0.3, -0.4];
    let g = score(&ds, &spec, Some(&w), &beta).unwrap();
    let info = information(&ds, &spec, Some(&w), &beta).unwrap();
    let h = 1e-5;
    for j in 0..2 {
        let mut up = beta;
        let mut dn = beta;
        up[j] += h;
        dn[j] -= h;
        let fd = (partial_loglik(&ds, &spec, Some(&w), &up).unwrap()
            - partial_loglik(&ds, &spec, Some(&w), &dn).unwrap())
            / (2.0 * h);
        assert!(
            (fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0),
            "score {j}: {fd} vs {}",
            g[j]
        );
        let gu = score(&ds, &spec, Some(&w), &up).unwrap();
        let gd = score(&ds, &spec, Some(&w), &dn).unwrap();
        for k in 0..2 {
            let fd = -(gu[k] - gd[k]) / (2.0 * h);
            let v = info[k * 2 + j];
            assert!((fd - v).abs() <= 1e-5 * v.abs().max(1.0), "info {k}{j}: {fd} vs {v}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn derivatives_match_finite_differences(seed in 0u64..1_000_000, efron in any::<bool>()) {
        check_derivatives(seed, if efron { TieMethod::Efron } else { TieMethod::Breslow });
    }

    #[test]
    fn baseline_hazard_nondecreasing(seed in 0u64..1_000_000) {
        let (ds, _) = random_dataset(seed, 12);
        prop_assume!(ds.count_status(Status::Event) > 0);
        if let Ok(m) = fit(&ds, &CoxSpec::new(Status::Event, &["x"])) {
            prop_assert!(m.baseline.increments.iter().all(|&d| d > 0.0));
            let s = m.predict_survival(&[("x".to_string(), 1.0)].into(), |_| false).unwrap();
            prop_assert_eq!(s.surv[0], 1.0);
            prop_assert!(s.surv.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn efron_equals_breslow_without_ties(times in proptest::collection::btree_set(1u32..1000, 3..15)) {
        let subjects = times
            .iter()
            .enumerate()
            .map(|(i, &t)| single(&i.to_string(), t as f64, if i % 3 == 2 { Status::Censored } else { Status::Event }, (i % 4) as f64))
            .collect();
        let ds = dataset(CovariateSchema::new(&["x"], &[]), subjects);
        let beta = [0.2];
        let spec = x_spec();
        let a = partial_loglik(&ds, &spec, None, &beta).unwrap();
        let b = partial_loglik(&ds, &spec.clone().with_tie(TieMethod::Breslow), None, &beta).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}
