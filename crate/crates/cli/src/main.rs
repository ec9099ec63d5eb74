mod manifest;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pcause::simulation::StudyConfig;
use pcause::{
    coefficient_rows, coefficient_table, complete_case_filter, fit_projection, load_csv,
    odds_of_causation, run_study, select_model, Candidate, Error, ModelFamily, NuisanceConfig,
    ProjectionFit, RegressorKind, RegressorSpec, SolveOptions, WorkingModelSpec,
};
use serde::Serialize;

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "pcause", version, about = "Estimate the probability of causation PC(x) = P(Y0 = 0 | Y = 1, A = 1, X = x)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a projection of PC onto a working model and print its coefficients.
    Estimate(EstimateArgs),
    /// Evaluate a saved fit at one covariate profile.
    Predict(PredictArgs),
    /// Sweep one covariate and write PC with intervals as CSV.
    Curve(CurveArgs),
    /// Run a Monte Carlo study described by a TOML file.
    Simulate(SimulateArgs),
    /// Rank candidate working models by cross-validated pseudo-risk.
    Select(SelectArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Model {
    Logistic,
    Linear,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Nuisance {
    Logistic,
    Forest,
    Kernel,
}

#[derive(Args, Serialize)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Binary outcome column.
    #[arg(long)]
    outcome: String,
    /// Binary exposure column.
    #[arg(long)]
    treatment: String,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',', required = true)]
    covariates: Vec<String>,
    /// Drop rows with missing covariates instead of failing.
    #[arg(long)]
    complete_cases: bool,
}

#[derive(Args, Serialize)]
struct NuisanceArgs {
    #[arg(long, value_enum, default_value = "forest")]
    nuisance: Nuisance,
    /// Regressor hyperparameter as name=value, e.g. n_trees=100 or bandwidth=0.5.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    /// Cross-fitting folds; 1 fits nuisances on the full sample.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Nuisance values are clipped to [clip, 1 - clip].
    #[arg(long, default_value_t = 0.01)]
    clip: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    nuisance: NuisanceArgs,
    #[arg(long, value_enum, default_value = "logistic")]
    model: Model,
    /// Omit the intercept from the working model.
    #[arg(long)]
    no_intercept: bool,
    /// Where to write the fit document.
    #[arg(long, default_value = "fit.json")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    /// Fit document written by `estimate`.
    #[arg(long)]
    fit: PathBuf,
    /// Covariate profile as name=value pairs.
    #[arg(long, value_delimiter = ',', value_name = "NAME=VALUE")]
    at: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Args, Serialize)]
struct CurveArgs {
    #[arg(long)]
    fit: PathBuf,
    /// Covariate to sweep.
    #[arg(long)]
    vary: String,
    #[arg(long, allow_negative_numbers = true)]
    from: f64,
    #[arg(long, allow_negative_numbers = true)]
    to: f64,
    /// Number of intervals; the curve has steps + 1 rows.
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Values of the other covariates.
    #[arg(long, value_delimiter = ',', value_name = "NAME=VALUE")]
    at: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Study grid in TOML.
    #[arg(long)]
    config: PathBuf,
    /// Report CSV.
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    nuisance: NuisanceArgs,
    /// Candidate as ID=MODEL or ID=MODEL:COV1,COV2 (MODEL is logistic or
    /// linear; an empty list after ':' means intercept only). Repeatable.
    #[arg(long = "candidate", required = true, value_name = "SPEC")]
    candidates: Vec<String>,
    /// Write the ranking as a JSON array.
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Study(_) => 4,
            ref e if e.is_numerical() => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("PCAUSE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let res = match &cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Predict(a) => predict(a),
        Command::Curve(a) => curve(a),
        Command::Simulate(a) => simulate(a),
        Command::Select(a) => select(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(d: &DataArgs) -> Result<pcause::Dataset, Failure> {
    let raw = load_csv(&d.data, &d.outcome, &d.treatment, &d.covariates)?;
    if d.complete_cases {
        let (ds, dropped) = complete_case_filter(&raw)?;
        if dropped > 0 {
            eprintln!("dropped {dropped} rows with missing values");
        }
        Ok(ds)
    } else {
        Ok(raw)
    }
}

fn nuisance_config(a: &NuisanceArgs) -> Result<NuisanceConfig, Failure> {
    let kind = match a.nuisance {
        Nuisance::Logistic => RegressorKind::LogisticLinear,
        Nuisance::Forest => RegressorKind::RandomForest,
        Nuisance::Kernel => RegressorKind::KernelSmoother,
    };
    let mut params = BTreeMap::new();
    for p in &a.params {
        let (k, v) = parse_pair(p)?;
        params.insert(k, v);
    }
    let regressor = RegressorSpec::from_params(kind, &params)?;
    Ok(NuisanceConfig::new(regressor).folds(a.folds).clip_eps(a.clip).seed(a.seed))
}

fn working_model(model: Model, intercept: bool) -> WorkingModelSpec {
    match model {
        Model::Logistic => WorkingModelSpec::logistic(),
        Model::Linear => WorkingModelSpec::identity(),
    }
    .with_intercept(intercept)
}

fn parse_pair(s: &str) -> Result<(String, f64), Failure> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| input_error(format!("expected NAME=VALUE, got `{s}`")))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| input_error(format!("`{v}` is not a number (in `{s}`)")))?;
    Ok((k.trim().to_string(), v))
}

/// Covariate vector in fit order; `skip` may be absent from `pairs`.
fn profile(fit: &ProjectionFit, pairs: &[String], skip: Option<&str>) -> Result<Vec<f64>, Failure> {
    let mut given = BTreeMap::new();
    for p in pairs {
        let (k, v) = parse_pair(p)?;
        if !fit.covariate_names.contains(&k) {
            return Err(input_error(format!("`{k}` is not a covariate of this fit")));
        }
        given.insert(k, v);
    }
    fit.covariate_names
        .iter()
        .map(|name| match given.get(name) {
            Some(&v) => Ok(v),
            None if Some(name.as_str()) == skip => Ok(f64::NAN),
            None => Err(input_error(format!("missing value for covariate `{name}`"))),
        })
        .collect()
}

fn read_fit(path: &Path) -> Result<ProjectionFit, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read fit `{}`: {e}", path.display())))?;
    Ok(ProjectionFit::from_json(&text)?)
}

fn estimate(a: &EstimateArgs) -> CmdResult {
    let mut man = RunManifest::start("estimate", a, vec![a.nuisance.seed]);
    man.add_input(&a.data.data)?;
    let ds = load(&a.data)?;
    let cfg = nuisance_config(&a.nuisance)?;
    let spec = working_model(a.model, !a.no_intercept);
    let (fit, _) = fit_projection(&ds, &cfg, &spec, &SolveOptions::default())?;
    if fit.solver.multiple_roots_suspected {
        eprintln!("warning: a second start converged to a different root");
    }
    let mut doc = fit.to_document();
    doc.manifest = Some(manifest::sidecar_path(&a.out).display().to_string());
    std::fs::write(&a.out, serde_json::to_string_pretty(&doc).map_err(Error::from)? + "\n")?;
    man.add_output(&a.out);
    man.write_for(&a.out)?;
    print!("{}", coefficient_table(&coefficient_rows(&fit)?, fit.n));
    Ok(())
}

fn print_estimate(fit: &ProjectionFit, x: &[f64], level: f64) -> CmdResult {
    let e = fit.predict(x, level)?;
    if e.clamped {
        eprintln!("warning: linear projection left [0, 1]; displayed values are clamped");
    }
    println!("PC {:.4} ({:.4}, {:.4}) at level {level}", e.point, e.ci_low, e.ci_high);
    match odds_of_causation(e.point) {
        Ok(o) => println!("odds of causation {o:.2}"),
        Err(Error::InfiniteOdds(_)) => println!("odds of causation undefined (PC at a boundary)"),
        Err(err) => return Err(err.into()),
    }
    Ok(())
}

fn predict(a: &PredictArgs) -> CmdResult {
    let fit = read_fit(&a.fit)?;
    let x = profile(&fit, &a.at, None)?;
    print_estimate(&fit, &x, a.level)
}

fn curve(a: &CurveArgs) -> CmdResult {
    let fit = read_fit(&a.fit)?;
    let j = fit
        .covariate_names
        .iter()
        .position(|n| n == &a.vary)
        .ok_or_else(|| input_error(format!("`{}` is not a covariate of this fit", a.vary)))?;
    let mut x = profile(&fit, &a.at, Some(&a.vary))?;
    let mut rows = Vec::with_capacity(a.steps + 1);
    for k in 0..=a.steps {
        let v = if a.steps == 0 {
            a.from
        } else {
            a.from + (a.to - a.from) * k as f64 / a.steps as f64
        };
        x[j] = v;
        let e = fit.predict(&x, a.level)?;
        rows.push([v, e.point, e.ci_low, e.ci_high]);
    }
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| Failure::from(Error::from(e));
    w.write_record([a.vary.as_str(), "pc", "ci_low", "ci_high"]).map_err(io)?;
    for r in rows {
        w.write_record(r.map(|v| format!("{v}"))).map_err(io)?;
    }
    w.flush()?;
    drop(w);
    if let Some(p) = &a.out {
        let mut man = RunManifest::start("curve", a, vec![]);
        man.add_input(&a.fit)?;
        man.add_output(p);
        man.write_for(p)?;
    }
    Ok(())
}

fn simulate(a: &SimulateArgs) -> CmdResult {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| input_error(format!("cannot read config `{}`: {e}", a.config.display())))?;
    let mut cfg = StudyConfig::from_toml(&text)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let mut man = RunManifest::start("simulate", a, vec![cfg.seed]);
    man.add_input(&a.config)?;
    let report = run_study(&cfg)?;
    report.write_csv(std::fs::File::create(&a.out)?)?;
    man.add_output(&a.out);
    man.write_for(&a.out)?;
    println!("Bias (RMSE) across {} simulations", cfg.replications);
    print!("{}", report.bias_rmse_table());
    println!();
    println!("Coverage (%) across {} simulations", cfg.replications);
    print!("{}", report.coverage_table());
    Ok(())
}

fn parse_candidate(s: &str) -> Result<Candidate, Failure> {
    let (id, rest) = s
        .split_once('=')
        .ok_or_else(|| input_error(format!("candidate `{s}` must look like ID=MODEL[:COVS]")))?;
    let (model, covs) = match rest.split_once(':') {
        Some((m, c)) => (m, Some(c)),
        None => (rest, None),
    };
    let family = match model.trim() {
        "logistic" => ModelFamily::LogisticLinear,
        "linear" => ModelFamily::IdentityLinear,
        other => return Err(input_error(format!("unknown model `{other}` in candidate `{s}`"))),
    };
    let spec = match family {
        ModelFamily::LogisticLinear => WorkingModelSpec::logistic(),
        ModelFamily::IdentityLinear => WorkingModelSpec::identity(),
    };
    let cand = Candidate::new(id.trim(), spec);
    Ok(match covs {
        None => cand,
        Some(c) => {
            let names: Vec<&str> = c.split(',').map(str::trim).filter(|n| !n.is_empty()).collect();
            cand.with_covariates(&names)
        }
    })
}

fn select(a: &SelectArgs) -> CmdResult {
    let mut man = RunManifest::start("select", a, vec![a.nuisance.seed]);
    man.add_input(&a.data.data)?;
    let ds = load(&a.data)?;
    let cfg = nuisance_config(&a.nuisance)?;
    let cands = a.candidates.iter().map(|c| parse_candidate(c)).collect::<Result<Vec<_>, _>>()?;
    let report = select_model(&ds, &cfg, &cands)?;
    print!("{}", report.to_table());
    if let Some(p) = &a.json {
        let text = serde_json::to_string_pretty(&report.ranking).map_err(Error::from)?;
        std::fs::write(p, text + "\n")?;
        man.add_output(p);
        man.write_for(p)?;
    }
    Ok(())
}
