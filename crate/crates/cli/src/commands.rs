use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use predictimand::coxfit::write_schoenfeld_csv;
use predictimand::curve::write_labelled_csv;
use predictimand::dataio::{
    impute_tv_covariates, ingest_csv, ingest_csv_inferred, parse_profile, write_csv, CountingProcessDataset,
    CovariateSchema, Profile, Status,
};
use predictimand::predictimands::{
    all_specs, analysis_weights, fit_strategy, outcome_residuals, Estimate, FittedModel, FittedStrategy,
    HypotheticalMethod, Report, Strategy,
};
use predictimand::simulator::{simulate, validate, ScenarioSpec, ValidationPlan};
use predictimand::weights::{Truncation, WeightDiagnostics, WeightMode};
use serde::Serialize;

use crate::args::{parse_label, DataArgs, FitArgs, PredictArgs, SimulateArgs, ValidateArgs, WeightsArgs};
use crate::error::{CliError, ErrorClass};

/// Prefixes the error message with the file it concerns.
fn at(path: &Path) -> impl Fn(CliError) -> CliError + '_ {
    move |mut e| {
        e.message = format!("{}: {}", path.display(), e.message);
        e
    }
}

fn load_dataset(path: &Path, input: &DataArgs) -> Result<CountingProcessDataset, CliError> {
    read_dataset(path, input).map_err(at(path))
}

fn load_scenario(path: &Path) -> Result<ScenarioSpec, CliError> {
    ScenarioSpec::load(path).map_err(|e| at(path)(e.into()))
}

fn read_dataset(path: &Path, input: &DataArgs) -> Result<CountingProcessDataset, CliError> {
    let ds = if input.baseline.is_empty() && input.time_varying.is_empty() {
        ingest_csv_inferred(path, &input.time_unit)?
    } else {
        let baseline: Vec<&str> = input.baseline.iter().map(String::as_str).collect();
        let tv: Vec<&str> = input.time_varying.iter().map(String::as_str).collect();
        let schema = CovariateSchema::new(&baseline, &tv).with_unit(input.time_unit.as_str());
        ingest_csv(path, &schema)?
    };
    Ok(match input.impute {
        Some(policy) => impute_tv_covariates(&ds, policy)?,
        None => ds,
    })
}

fn end_of_follow_up(ds: &CountingProcessDataset) -> f64 {
    ds.subjects().iter().map(|s| s.end_time()).fold(0.0, f64::max)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn warn(messages: &[String]) {
    for m in messages {
        eprintln!("warning: {m}");
    }
}

pub fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_config(dir: &Path, command: &impl Serialize) -> Result<(), CliError> {
    write_json(dir, "config.json", command)
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.data, &args.input)?;
    let horizon = args.horizon.unwrap_or_else(|| end_of_follow_up(&ds));
    let spec = args.model.spec(args.strategy, args.method, horizon)?;
    let fitted = fit_strategy(&ds, &spec)?;
    let out = &args.out;

    write_json(out, "model.json", &fitted)?;
    write_json(out, "diagnostics.json", &fitted.diagnostics)?;
    if let FittedModel::CauseSpecific { pair } = &fitted.model {
        write_json(out, "event_model.json", &pair.event)?;
        if let Some(m) = &pair.treatment {
            write_json(out, "treatment_model.json", m)?;
        }
    }
    if args.schoenfeld {
        match outcome_residuals(&ds, &fitted)? {
            Some(rows) => {
                let FittedModel::Cox { model } = &fitted.model else {
                    unreachable!("residuals come from Cox fits")
                };
                let mut w = create(out, "schoenfeld.csv")?;
                write_schoenfeld_csv(model, &rows, &mut w)?;
                w.flush()?;
            }
            None => warn(&["Schoenfeld residuals need an unweighted Cox outcome model; none written".into()]),
        }
    }
    warn(&fitted.diagnostics.warnings);
    println!(
        "{}: model written to {}",
        fitted.label,
        out.join("model.json").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Failure {
    strategy: String,
    error: String,
}

#[derive(Serialize)]
struct PredictReport {
    horizon: f64,
    /// Profile ids used in `curves.csv`, in order.
    profiles: Vec<(String, Profile)>,
    reports: Vec<Report>,
    failures: Vec<Failure>,
}

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let mut failures = Vec::new();
    let fitted: Vec<FittedStrategy> = if let Some(path) = &args.model {
        let file = File::open(path).map_err(|e| at(path)(e.into()))?;
        vec![serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| at(path)(e.into()))?]
    } else {
        let Some(data) = &args.data else {
            return Err(CliError::usage("predict needs --model or --data"));
        };
        let ds = load_dataset(data, &args.input)?;
        if args.all_strategies {
            let shared = args.options.spec(Strategy::IgnoreTreatment, None, args.horizon)?;
            let mut ok = Vec::new();
            for spec in all_specs(&shared) {
                match fit_strategy(&ds, &spec) {
                    Ok(f) => ok.push(f),
                    Err(e) => failures.push(Failure {
                        strategy: spec.label(),
                        error: e.to_string(),
                    }),
                }
            }
            if ok.is_empty() {
                return Err(CliError::new(
                    ErrorClass::Data,
                    "no_strategy",
                    "every strategy failed to fit",
                ));
            }
            ok
        } else {
            let Some(strategy) = args.strategy else {
                return Err(CliError::usage(
                    "predict from data needs --strategy or --all-strategies",
                ));
            };
            vec![fit_strategy(
                &ds,
                &args.options.spec(strategy, args.method, args.horizon)?,
            )?]
        }
    };

    let texts = if args.profile.is_empty() {
        vec![String::new()]
    } else {
        args.profile.clone()
    };
    let profiles: Vec<(String, Profile)> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Ok((format!("p{}", i + 1), parse_profile(t)?)))
        .collect::<Result<_, CliError>>()?;

    let mut rows: Vec<(String, Estimate)> = Vec::new();
    for f in &fitted {
        for (id, profile) in &profiles {
            let curve = f.predict(profile, args.horizon)?;
            let key = match (fitted.len() > 1, profiles.len() > 1) {
                (true, true) => format!("{},{id}", f.label),
                (true, false) => f.label.clone(),
                _ => id.clone(),
            };
            rows.push((
                key,
                Estimate {
                    curve,
                    fitted: f.clone(),
                },
            ));
        }
    }

    let out = &args.out;
    if let [(_, only)] = rows.as_slice() {
        let mut w = create(out, "curve.csv")?;
        only.curve.write_csv(&mut w)?;
        w.flush()?;
    } else {
        let key = match (fitted.len() > 1, profiles.len() > 1) {
            (true, true) => "strategy,profile_id",
            (true, false) => "strategy",
            _ => "profile_id",
        };
        let mut w = create(out, "curves.csv")?;
        write_labelled_csv(&mut w, key, rows.iter().map(|(k, e)| (k.as_str(), &e.curve)))?;
        w.flush()?;
    }
    let reports: Vec<Report> = rows.iter().map(|(_, e)| e.report()).collect();
    for r in &reports {
        warn(&r.diagnostics.warnings);
    }
    for f in &failures {
        eprintln!("warning: {} skipped: {}", f.strategy, f.error);
    }
    for (key, e) in &rows {
        println!("{key}\trisk({}) = {:.6}", args.horizon, e.curve.at_horizon());
    }
    write_json(
        out,
        "report.json",
        &PredictReport {
            horizon: args.horizon,
            profiles,
            reports,
            failures,
        },
    )
}

pub fn simulate_cmd(args: &SimulateArgs) -> Result<(), CliError> {
    let spec = load_scenario(&args.scenario)?;
    let ds = simulate(&spec, args.n, args.seed)?;
    let mut w = create(&args.out, "data.csv")?;
    write_csv(&ds, &mut w)?;
    w.flush()?;
    println!(
        "{} subjects, {} events, {} treatment starts -> {}",
        ds.len(),
        ds.count_status(Status::Event),
        ds.count_status(Status::TreatmentStart),
        args.out.join("data.csv").display()
    );
    Ok(())
}

pub fn validate_cmd(args: &ValidateArgs) -> Result<(), CliError> {
    let spec = load_scenario(&args.scenario)?;
    let horizon = args.horizon.unwrap_or(spec.follow_up.administrative);
    let profile = match &args.profile {
        Some(text) => parse_profile(text)?,
        None => Profile::new(),
    };
    let shared = args.options.spec(Strategy::IgnoreTreatment, None, horizon)?;
    let strategies = if args.strategies.is_empty() {
        all_specs(&shared)
    } else {
        args.strategies
            .iter()
            .map(|label| {
                let (s, m) = parse_label(label)?;
                Ok(shared.for_strategy(s, m))
            })
            .collect::<Result<_, CliError>>()?
    };
    let plan = ValidationPlan {
        n: args.n,
        seeds: ValidationPlan::seed_range(args.first_seed, args.seeds),
        profile,
        horizon,
        strategies,
        tolerance: args.tolerance,
        truth_replications: args.truth_replications,
        truth_seed: args.truth_seed,
    };
    let report = validate(&spec, &plan)?;
    write_json(&args.out, "report.json", &report)?;
    for s in &report.strategies {
        println!(
            "{:<28} truth {:.4}  mean {:.4}  bias {:+.4}  {}",
            s.label,
            s.truth,
            s.mean,
            s.bias,
            if s.pass { "PASS" } else { "FAIL" }
        );
        for e in &s.errors {
            eprintln!("warning: {}: {e}", s.label);
        }
    }
    if report.pass {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .strategies
            .iter()
            .filter(|s| !s.pass)
            .map(|s| s.label.as_str())
            .collect();
        Err(CliError::new(
            ErrorClass::Validation,
            "validation_failed",
            format!("outside tolerance {}: {}", args.tolerance, failed.join(", ")),
        ))
    }
}

#[derive(Serialize)]
struct WeightSummary<'a> {
    mode: WeightMode,
    numerator: &'a [String],
    denominator_extra: &'a [String],
    truncation: Option<Truncation>,
    diagnostics: &'a WeightDiagnostics,
}

pub fn weights_cmd(args: &WeightsArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.data, &args.input)?;
    if ds.count_status(Status::TreatmentStart) == 0 {
        return Err(CliError::new(
            ErrorClass::Data,
            "no_treatment_starts",
            "no treatment starts in the data",
        ));
    }
    let method = match args.mode {
        WeightMode::Ipcw => HypotheticalMethod::CensorIpcw,
        WeightMode::Iptw => HypotheticalMethod::ModelIptw,
    };
    let spec = args.options.spec(
        Strategy::Hypothetical,
        Some(method),
        end_of_follow_up(&ds).max(f64::MIN_POSITIVE),
    )?;
    let table = analysis_weights(&ds, &spec)?.expect("weighted method yields weights");
    let mut w = create(&args.out, "weights.csv")?;
    table.write_csv(&mut w)?;
    w.flush()?;
    let d = &table.diagnostics;
    write_json(
        &args.out,
        "diagnostics.json",
        &WeightSummary {
            mode: args.mode,
            numerator: &args.options.covariates,
            denominator_extra: &args.options.weight_covariates,
            truncation: table.truncation,
            diagnostics: d,
        },
    )?;
    println!(
        "{} episodes, mean {:.4}, range [{:.4}, {:.4}], effective sample size {:.1}",
        d.episodes, d.mean, d.min, d.max, d.effective_sample_size
    );
    Ok(())
}
