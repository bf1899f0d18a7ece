//! Command-line arguments. Every subcommand's arguments also serialize to the
//! `config.json` echo written next to its outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use predictimand::coxfit::TieMethod;
use predictimand::dataio::ImputePolicy;
use predictimand::predictimands::{HypotheticalMethod, Strategy, StrategySpec};
use predictimand::weights::{Truncation, WeightMode};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "predictimand",
    version,
    about = "Risk prediction under post-baseline treatment"
)]
pub struct Cli {
    /// Worker threads for simulation and validation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Fit one strategy and write the model.
    Fit(FitArgs),
    /// Predict risk curves from a saved model or directly from data.
    Predict(PredictArgs),
    /// Simulate a dataset from a scenario file.
    Simulate(SimulateArgs),
    /// Compare strategy estimates with the true risks over many seeds.
    Validate(ValidateArgs),
    /// Export stabilized treatment weights.
    Weights(WeightsArgs),
    /// Re-run the command recorded in a `config.json`.
    #[serde(skip)]
    Rerun(RerunArgs),
}

/// How to read the input CSV.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct DataArgs {
    #[arg(long, default_value = "years")]
    pub time_unit: String,
    /// Baseline covariate columns; with `--time-varying`, overrides schema inference.
    #[arg(long, value_delimiter = ',')]
    pub baseline: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub time_varying: Vec<String>,
    /// Fill missing time-varying values: `locf` or `median-fallback`.
    #[arg(long, value_parser = parse_impute)]
    pub impute: Option<ImputePolicy>,
}

/// Model options shared by every strategy.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Outcome-model covariates X(0).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    #[arg(long, value_parser = parse_tie, default_value = "efron")]
    pub tie: TieMethod,
    /// Cut times of a step-function treatment coefficient.
    #[arg(long, value_delimiter = ',')]
    pub tv_cuts: Vec<f64>,
    /// Extra covariates of the treatment weight model.
    #[arg(long, value_delimiter = ',')]
    pub weight_covariates: Vec<String>,
    /// Percentile truncation of weights, `lower,upper`.
    #[arg(long, value_delimiter = ',')]
    pub truncate: Vec<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long)]
    pub strategy: Strategy,
    #[arg(long)]
    pub method: Option<HypotheticalMethod>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Horizon used for positivity checks (default: end of follow-up).
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Also write Schoenfeld residuals of an unweighted Cox outcome model.
    #[arg(long)]
    pub schoenfeld: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    /// Saved `model.json` from `fit`.
    #[arg(long, conflicts_with_all = ["data", "all_strategies"])]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long, conflicts_with = "all_strategies")]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub method: Option<HypotheticalMethod>,
    /// Fit every strategy and hypothetical method and overlay the curves.
    #[arg(long)]
    pub all_strategies: bool,
    #[command(flatten)]
    pub options: ModelArgs,
    #[arg(long)]
    pub horizon: f64,
    /// Covariate profile `name=value,...`; repeat for several profiles.
    #[arg(long)]
    pub profile: Vec<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Scenario file, TOML or `.json`.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    /// Number of simulated datasets.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long, default_value_t = 1)]
    pub first_seed: u64,
    /// Prediction horizon (default: administrative end of follow-up).
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub profile: Option<String>,
    /// Strategy labels such as `ignore,hypothetical/censor-ipcw` (default: all).
    #[arg(long, value_delimiter = ',')]
    pub strategies: Vec<String>,
    #[command(flatten)]
    pub options: ModelArgs,
    /// Bound on the absolute mean error over seeds.
    #[arg(long, default_value_t = 0.02)]
    pub tolerance: f64,
    /// Monte Carlo size when the truth has no closed form.
    #[arg(long, default_value_t = 200_000)]
    pub truth_replications: usize,
    #[arg(long, default_value_t = 99)]
    pub truth_seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct WeightsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub input: DataArgs,
    /// `ipcw` for censor-at-treatment analyses, `iptw` for treatment-as-covariate.
    #[arg(long, value_parser = parse_mode, default_value = "ipcw")]
    pub mode: WeightMode,
    /// `--covariates` form the numerator model; `--weight-covariates` are added in the denominator.
    #[command(flatten)]
    pub options: ModelArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    pub config: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_tie(s: &str) -> Result<TieMethod, String> {
    match s {
        "efron" => Ok(TieMethod::Efron),
        "breslow" => Ok(TieMethod::Breslow),
        _ => Err(format!("unknown tie method `{s}` (efron, breslow)")),
    }
}

fn parse_impute(s: &str) -> Result<ImputePolicy, String> {
    match s {
        "locf" => Ok(ImputePolicy::Locf),
        "median-fallback" => Ok(ImputePolicy::MedianFallback),
        _ => Err(format!("unknown imputation `{s}` (locf, median-fallback)")),
    }
}

fn parse_mode(s: &str) -> Result<WeightMode, String> {
    match s {
        "ipcw" => Ok(WeightMode::Ipcw),
        "iptw" => Ok(WeightMode::Iptw),
        _ => Err(format!("unknown weight mode `{s}` (ipcw, iptw)")),
    }
}

/// `ignore`, `composite`, `while-untreated` or `hypothetical/<method>`.
pub fn parse_label(label: &str) -> Result<(Strategy, Option<HypotheticalMethod>), CliError> {
    let (strategy, method) = match label.split_once('/') {
        Some((s, m)) => (s, Some(m)),
        None => (label, None),
    };
    let strategy: Strategy = strategy.parse().map_err(CliError::usage)?;
    let method = method
        .map(|m| m.parse::<HypotheticalMethod>())
        .transpose()
        .map_err(CliError::usage)?;
    Ok((strategy, method))
}

impl ModelArgs {
    pub fn truncation(&self) -> Result<Option<Truncation>, CliError> {
        match self.truncate.as_slice() {
            [] => Ok(None),
            &[lower, upper] => Ok(Some(Truncation { lower, upper })),
            _ => Err(CliError::usage("--truncate takes two percentiles, `lower,upper`")),
        }
    }

    pub fn spec(
        &self,
        strategy: Strategy,
        method: Option<HypotheticalMethod>,
        horizon: f64,
    ) -> Result<StrategySpec, CliError> {
        Ok(StrategySpec {
            strategy,
            method,
            covariates: self.covariates.clone(),
            tie: self.tie,
            tv_cuts: self.tv_cuts.clone(),
            weight_covariates: self.weight_covariates.clone(),
            truncation: self.truncation()?,
            horizon,
        })
    }
}

fn absolute(path: &mut PathBuf) {
    if path.is_relative() {
        if let Ok(cwd) = std::env::current_dir() {
            *path = cwd.join(&*path);
        }
    }
}

impl Command {
    /// Makes every path absolute so the config echo replays from anywhere.
    pub fn absolutize(&mut self) {
        match self {
            Command::Fit(a) => {
                absolute(&mut a.data);
                absolute(&mut a.out);
            }
            Command::Predict(a) => {
                a.model.iter_mut().chain(a.data.iter_mut()).for_each(absolute);
                absolute(&mut a.out);
            }
            Command::Simulate(a) => {
                absolute(&mut a.scenario);
                absolute(&mut a.out);
            }
            Command::Validate(a) => {
                absolute(&mut a.scenario);
                absolute(&mut a.out);
            }
            Command::Weights(a) => {
                absolute(&mut a.data);
                absolute(&mut a.out);
            }
            Command::Rerun(_) => {}
        }
    }

    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::Fit(a) => a.out = out,
            Command::Predict(a) => a.out = out,
            Command::Simulate(a) => a.out = out,
            Command::Validate(a) => a.out = out,
            Command::Weights(a) => a.out = out,
            Command::Rerun(_) => {}
        }
    }

    pub fn out(&self) -> Option<&Path> {
        match self {
            Command::Fit(a) => Some(&a.out),
            Command::Predict(a) => Some(&a.out),
            Command::Simulate(a) => Some(&a.out),
            Command::Validate(a) => Some(&a.out),
            Command::Weights(a) => Some(&a.out),
            Command::Rerun(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(line: &str) -> Command {
        Cli::try_parse_from(std::iter::once("predictimand").chain(line.split_whitespace()))
            .unwrap()
            .command
    }

    #[test]
    fn labels() {
        assert_eq!(parse_label("ignore").unwrap(), (Strategy::IgnoreTreatment, None));
        assert_eq!(
            parse_label("hypothetical/model-iptw").unwrap(),
            (Strategy::Hypothetical, Some(HypotheticalMethod::ModelIptw))
        );
        assert!(parse_label("hypothetical/guess").is_err());
        assert!(parse_label("principal-stratum").is_err());
    }

    #[test]
    fn truncation_needs_two_values() {
        let mut m = ModelArgs::default();
        assert_eq!(m.truncation().unwrap(), None);
        m.truncate = vec![1.0, 99.0];
        assert_eq!(
            m.truncation().unwrap(),
            Some(Truncation {
                lower: 1.0,
                upper: 99.0
            })
        );
        m.truncate = vec![1.0];
        assert!(m.truncation().is_err());
    }

    #[test]
    fn flags_round_trip_through_config() {
        let cmd = parse(concat!(
            "fit --data d.csv --strategy hypothetical --method censor-ipcw --tie breslow --tv-cuts 3,8",
            " --covariates age,sex --weight-covariates z --truncate 1,99 --impute median-fallback"
        ));
        let json = serde_json::to_string(&cmd).unwrap();
        let back: Command = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
        let Command::Fit(a) = back else { panic!("not fit") };
        assert_eq!(a.model.tv_cuts, [3.0, 8.0]);
        assert_eq!(a.model.covariates, ["age", "sex"]);
        assert_eq!(a.model.tie, TieMethod::Breslow);
        assert_eq!(a.input.impute, Some(ImputePolicy::MedianFallback));
        let spec = a.model.spec(a.strategy, a.method, 5.0).unwrap();
        assert_eq!(spec.label(), "hypothetical/censor-ipcw");
    }

    #[test]
    fn paths_become_absolute() {
        let mut cmd = parse("simulate --scenario s1.toml --n 5 --out o");
        cmd.absolutize();
        let Command::Simulate(a) = &cmd else {
            panic!("not simulate")
        };
        assert!(a.scenario.is_absolute() && a.out.is_absolute());
        cmd.set_out(PathBuf::from("/elsewhere"));
        assert_eq!(cmd.out(), Some(Path::new("/elsewhere")));
    }

    #[test]
    fn bad_values_are_rejected_by_the_parser() {
        let bad = [
            vec!["predictimand", "fit", "--data", "d", "--strategy", "maybe"],
            vec![
                "predictimand",
                "fit",
                "--data",
                "d",
                "--strategy",
                "ignore",
                "--tie",
                "exact",
            ],
            vec!["predictimand", "weights", "--data", "d", "--mode", "both"],
            vec![
                "predictimand",
                "predict",
                "--model",
                "m",
                "--data",
                "d",
                "--horizon",
                "1",
            ],
        ];
        for argv in bad {
            assert!(Cli::try_parse_from(&argv).is_err(), "{argv:?}");
        }
    }
}
