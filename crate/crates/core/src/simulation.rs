//! Kang-Schafer style data-generating process with a known probability of
//! causation, and a replication study comparing the plugin and
//! influence-function estimators.
//!
//! Covariates are four independent standard normals. `P(Y1 = 1) = beta0`
//! independently of `X`; `Y0 = 0` whenever `Y1 = 0`, otherwise
//! `Y0 ~ Bernoulli(1 - gamma(X))` with `gamma(x) = expit(psi'x)`. Hence
//! `mu1 = beta0` and `mu0 = beta0 (1 - gamma)`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation, PotentialOutcomeRecord};
use crate::error::{Error, Result};
use crate::estimator::{plugin_projection, solve_beta, ProjectionFit, SolveOptions};
use crate::nuisance::{ForestParams, NuisanceConfig, NuisanceFit, RegressorSpec, DEFAULT_CLIP_EPS};
use crate::seed::{derive_path, rng_for};
use crate::working_model::{expit, WorkingModelSpec};

pub const PSI: [f64; 4] = [-1.0, 0.5, -0.25, -0.1];
pub const DEFAULT_BETA0: f64 = 0.5;
pub const DEFAULT_EVAL_POINTS: usize = 2000;
/// Largest tolerated share of dropped replications per study cell.
pub const MAX_DROP_SHARE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiSpec {
    /// `pi(x) = expit(psi'x)`.
    #[default]
    LogisticPsi,
    ConstantHalf,
}

/// Form of the second transformed covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformVariant {
    /// `x2 / (1 + x1) + 10`.
    #[default]
    LinearDenominator,
    /// `x2 / (1 + exp(x1)) + 10`, as in Kang and Schafer (2007).
    KangSchafer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n: usize,
    /// `P(Y1 = 1)`.
    pub beta0: f64,
    pub psi: [f64; 4],
    /// Hand the transformed covariates to estimators instead of `X`.
    pub use_transformed: bool,
    pub transform: TransformVariant,
    pub pi_spec: PiSpec,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            beta0: DEFAULT_BETA0,
            psi: PSI,
            use_transformed: false,
            transform: TransformVariant::LinearDenominator,
            pi_spec: PiSpec::LogisticPsi,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn with_n(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.05..=0.95).contains(&self.beta0) {
            return Err(Error::InvalidArgument(format!(
                "beta0 must lie in [0.05, 0.95], got {}",
                self.beta0
            )));
        }
        if self.psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("psi must be finite".into()));
        }
        Ok(())
    }

    pub fn true_gamma(&self, x: &[f64]) -> f64 {
        true_gamma(x, &self.psi)
    }

    pub fn true_pi(&self, x: &[f64]) -> f64 {
        match self.pi_spec {
            PiSpec::LogisticPsi => expit(psi_dot(x, &self.psi)),
            PiSpec::ConstantHalf => 0.5,
        }
    }

    pub fn true_mu1(&self, _x: &[f64]) -> f64 {
        self.beta0
    }

    pub fn true_mu0(&self, x: &[f64]) -> f64 {
        self.beta0 * (1.0 - self.true_gamma(x))
    }

    pub fn covariate_names(&self) -> Vec<String> {
        covariate_names(self.use_transformed)
    }
}

fn psi_dot(x: &[f64], psi: &[f64; 4]) -> f64 {
    x.iter().zip(psi).map(|(a, b)| a * b).sum()
}

/// `expit(psi'x)`.
pub fn true_gamma(x: &[f64], psi: &[f64; 4]) -> f64 {
    expit(psi_dot(x, psi))
}

/// The four nonlinear covariate transformations.
pub fn transform_covariates(x: &[f64], variant: TransformVariant) -> [f64; 4] {
    let denom = match variant {
        TransformVariant::LinearDenominator => 1.0 + x[0],
        TransformVariant::KangSchafer => 1.0 + x[0].exp(),
    };
    [
        (x[0] / 2.0).exp(),
        x[1] / denom + 10.0,
        (x[0] * x[2] / 25.0 + 0.6).powi(3),
        (x[1] + x[3] + 20.0).powi(2),
    ]
}

pub fn covariate_names(transformed: bool) -> Vec<String> {
    (1..=4)
        .map(|j| if transformed { format!("x{j}_star") } else { format!("x{j}") })
        .collect()
}

/// Draws one latent covariate vector, redrawing the null set where the
/// default transformation divides by zero.
pub fn draw_x(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let x: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        if (1.0 + x[0]).abs() > 1e-9 {
            return x;
        }
    }
}

/// A simulated sample: what estimators see plus everything they do not.
#[derive(Debug, Clone)]
pub struct SimulatedSample {
    pub dataset: Dataset,
    pub potential: Vec<PotentialOutcomeRecord>,
    /// Untransformed covariates.
    pub latent: Vec<[f64; 4]>,
}

impl SimulatedSample {
    /// Same units with covariates `X` or the transformed `X*`.
    pub fn view(&self, transformed: bool, variant: TransformVariant) -> Result<Dataset> {
        let obs = self
            .latent
            .iter()
            .zip(self.dataset.observations())
            .map(|(x, o)| {
                let cov = if transformed {
                    transform_covariates(x, variant).to_vec()
                } else {
                    x.to_vec()
                };
                Observation::new(cov, o.exposure, o.outcome)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(covariate_names(transformed), obs)
    }

    /// True `(pi, mu0, mu1)` at every unit.
    pub fn true_nuisances(&self, cfg: &DgpConfig, clip_eps: f64) -> Result<NuisanceFit> {
        let pi = self.latent.iter().map(|x| cfg.true_pi(x)).collect();
        let mu0 = self.latent.iter().map(|x| cfg.true_mu0(x)).collect();
        let mu1 = self.latent.iter().map(|x| cfg.true_mu1(x)).collect();
        NuisanceFit::from_values(pi, mu0, mu1, clip_eps)
    }
}

/// Draws `cfg.n` units.
pub fn generate(cfg: &DgpConfig) -> Result<SimulatedSample> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, &[0]);
    let mut latent = Vec::with_capacity(cfg.n);
    let mut potential = Vec::with_capacity(cfg.n);
    let mut obs = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let x = draw_x(&mut rng);
        let gamma = cfg.true_gamma(&x);
        let y1 = u8::from(rng.random::<f64>() < cfg.beta0);
        let y0 = if y1 == 1 { u8::from(rng.random::<f64>() < 1.0 - gamma) } else { 0 };
        let a = u8::from(rng.random::<f64>() < cfg.true_pi(&x));
        let y = if a == 1 { y1 } else { y0 };
        let cov = if cfg.use_transformed {
            transform_covariates(&x, cfg.transform).to_vec()
        } else {
            x.to_vec()
        };
        obs.push(Observation::new(cov, a, y)?);
        potential.push(PotentialOutcomeRecord {
            y1,
            y0,
            true_gamma: gamma,
        });
        latent.push(x);
    }
    Ok(SimulatedSample {
        dataset: Dataset::new(cfg.covariate_names(), obs)?,
        potential,
        latent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Logistic nuisances on `X`.
    ParametricCorrect,
    /// Logistic nuisances on `X*`.
    ParametricMisspecified,
    /// Random forests on `X`.
    NonparametricX,
    /// Random forests on `X*`.
    NonparametricXStar,
    /// True nuisances injected; estimators see `X`.
    Oracle,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::ParametricCorrect,
        Regime::ParametricMisspecified,
        Regime::NonparametricX,
        Regime::NonparametricXStar,
        Regime::Oracle,
    ];

    pub fn uses_transformed(self) -> bool {
        matches!(self, Regime::ParametricMisspecified | Regime::NonparametricXStar)
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::ParametricCorrect => "parametric_correct",
            Regime::ParametricMisspecified => "parametric_misspecified",
            Regime::NonparametricX => "nonparametric_x",
            Regime::NonparametricXStar => "nonparametric_xstar",
            Regime::Oracle => "oracle",
        }
    }

    fn heading(self) -> &'static str {
        match self {
            Regime::ParametricCorrect => "Param. correct (X)",
            Regime::ParametricMisspecified => "Param. misspec. (X*)",
            Regime::NonparametricX => "Nonparam. (X)",
            Regime::NonparametricXStar => "Nonparam. (X*)",
            Regime::Oracle => "Oracle",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    Plugin,
    Proposed,
}

impl EstimatorChoice {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorChoice::Plugin => "plugin",
            EstimatorChoice::Proposed => "proposed",
        }
    }
}

impl fmt::Display for EstimatorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Study grid, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub eval_points: usize,
    pub seed: u64,
    pub folds: usize,
    pub clip_eps: f64,
    pub level: f64,
    pub estimators: Vec<EstimatorChoice>,
    pub regimes: Vec<Regime>,
    pub forest: ForestParams,
    pub dgp: DgpConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sample_sizes: vec![100, 1000, 10_000],
            replications: 100,
            eval_points: DEFAULT_EVAL_POINTS,
            seed: 1,
            folds: 5,
            clip_eps: DEFAULT_CLIP_EPS,
            level: 0.95,
            estimators: vec![EstimatorChoice::Plugin, EstimatorChoice::Proposed],
            regimes: vec![
                Regime::ParametricCorrect,
                Regime::ParametricMisspecified,
                Regime::NonparametricX,
                Regime::NonparametricXStar,
            ],
            forest: ForestParams::default(),
            dgp: DgpConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.replications == 0 {
            return bad("replications must be >= 1");
        }
        if self.sample_sizes.is_empty() || self.estimators.is_empty() || self.regimes.is_empty() {
            return bad("sample_sizes, estimators and regimes must be non-empty");
        }
        if self.eval_points == 0 {
            return bad("eval_points must be >= 1");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must lie in (0, 1)");
        }
        self.dgp.validate()?;
        self.nuisance_config(Regime::NonparametricX, 0).regressor.validate()
    }

    fn nuisance_config(&self, regime: Regime, seed: u64) -> NuisanceConfig {
        let regressor = match regime {
            Regime::ParametricCorrect | Regime::ParametricMisspecified | Regime::Oracle => {
                RegressorSpec::logistic()
            }
            Regime::NonparametricX | Regime::NonparametricXStar => {
                RegressorSpec::RandomForest(self.forest)
            }
        };
        NuisanceConfig::new(regressor)
            .folds(self.folds)
            .clip_eps(self.clip_eps)
            .seed(seed)
    }
}

/// Per-replication summary of one estimator in one regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationMetrics {
    /// Mean over evaluation points of `g(x; beta_hat) - gamma(x)`.
    pub mean_error: f64,
    /// Mean over evaluation points of the squared error.
    pub mean_sq_error: f64,
    /// Share of evaluation points whose interval covers `gamma(x)`.
    pub coverage: Option<f64>,
    /// `||beta_hat - beta_true||^2` when the working model contains `gamma`.
    pub beta_sq_error: Option<f64>,
}

/// One grid cell of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub n: usize,
    pub estimator: EstimatorChoice,
    pub regime: Regime,
    /// `|mean over replications of mean_error|`.
    pub bias: f64,
    /// `sqrt` of the mean over replications of `mean_sq_error`.
    pub rmse: f64,
    pub coverage: Option<f64>,
    /// RMSE of `beta_hat` around `(0, psi)`; only for regimes on `X`.
    pub beta_rmse: Option<f64>,
    pub replications: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub cells: Vec<ReportCell>,
}

/// Compensated (Neumaier) sum.
fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn stable_mean(values: &[f64]) -> f64 {
    stable_sum(values.iter().copied()) / values.len() as f64
}

/// Evaluates a fit against the truth at fresh covariate draws.
pub fn evaluate_fit(
    fit: &ProjectionFit,
    eval_latent: &[[f64; 4]],
    dgp: &DgpConfig,
    transformed: bool,
    level: f64,
    beta_true: Option<&[f64]>,
) -> Result<ReplicationMetrics> {
    let mut err = Vec::with_capacity(eval_latent.len());
    let mut sq = Vec::with_capacity(eval_latent.len());
    let mut covered = 0usize;
    let with_ci = fit.covariance.is_some();
    for x in eval_latent {
        let truth = dgp.true_gamma(x);
        let feat = if transformed {
            transform_covariates(x, dgp.transform).to_vec()
        } else {
            x.to_vec()
        };
        let point = if with_ci {
            let e = fit.predict(&feat, level)?;
            if e.ci_low <= truth && truth <= e.ci_high {
                covered += 1;
            }
            e.point
        } else {
            fit.point_at(&feat)?
        };
        err.push(point - truth);
        sq.push((point - truth).powi(2));
    }
    let beta_sq_error = beta_true.map(|b| {
        stable_sum(fit.beta_hat.as_slice().iter().zip(b).map(|(u, v)| (u - v).powi(2)))
    });
    Ok(ReplicationMetrics {
        mean_error: stable_mean(&err),
        mean_sq_error: stable_mean(&sq),
        coverage: with_ci.then(|| covered as f64 / eval_latent.len() as f64),
        beta_sq_error,
    })
}

/// `(0, psi)`: the projection coefficients when the working model is
/// logistic with intercept in `X`.
pub fn beta_true(dgp: &DgpConfig) -> Vec<f64> {
    std::iter::once(0.0).chain(dgp.psi.iter().copied()).collect()
}

type CellKey = (usize, Regime, EstimatorChoice);

/// One replication at sample size `n`: every regime and estimator on the
/// same simulated sample and evaluation points.
pub fn run_replication(
    cfg: &StudyConfig,
    n: usize,
    rep: usize,
) -> Vec<(CellKey, Result<ReplicationMetrics>)> {
    let base = derive_path(cfg.seed, &[n as u64, rep as u64]);
    let dgp = DgpConfig {
        n,
        use_transformed: false,
        seed: base,
        ..cfg.dgp.clone()
    };
    let mut out = Vec::new();
    let sample = match generate(&dgp) {
        Ok(s) => s,
        Err(e) => {
            let msg = e.to_string();
            for &r in &cfg.regimes {
                for &est in &cfg.estimators {
                    out.push(((n, r, est), Err(Error::Study(msg.clone()))));
                }
            }
            return out;
        }
    };
    let mut eval_rng = rng_for(base, &[1]);
    let eval: Vec<[f64; 4]> = (0..cfg.eval_points).map(|_| draw_x(&mut eval_rng)).collect();
    let spec = WorkingModelSpec::logistic();
    let opts = SolveOptions {
        check_uniqueness: false,
        ..SolveOptions::default()
    };
    let truth_beta = beta_true(&dgp);

    for (ri, &regime) in cfg.regimes.iter().enumerate() {
        let transformed = regime.uses_transformed();
        let prepared = sample.view(transformed, dgp.transform).and_then(|ds| {
            let nf = if regime == Regime::Oracle {
                sample.true_nuisances(&dgp, cfg.clip_eps)?
            } else {
                cfg.nuisance_config(regime, derive_path(base, &[2, ri as u64])).fit(&ds)?
            };
            Ok((ds, nf))
        });
        for &est in &cfg.estimators {
            let res = prepared.as_ref().map_err(clone_error).and_then(|(ds, nf)| {
                let fit = match est {
                    EstimatorChoice::Proposed => solve_beta(ds, nf, &spec, None, &opts)?,
                    EstimatorChoice::Plugin => plugin_projection(ds, nf, &spec, &opts)?,
                };
                let bt = (!transformed).then_some(truth_beta.as_slice());
                evaluate_fit(&fit, &eval, &dgp, transformed, cfg.level, bt)
            });
            out.push(((n, regime, est), res));
        }
    }
    out
}

fn clone_error(e: &Error) -> Error {
    Error::Study(e.to_string())
}

/// Runs the full grid. Replications run in parallel with seeds derived from
/// `(seed, n, replication)`; results do not depend on scheduling.
pub fn run_study(cfg: &StudyConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = cfg
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..cfg.replications).map(move |j| (n, j)))
        .collect();
    let results: Vec<Vec<(CellKey, Result<ReplicationMetrics>)>> = jobs
        .par_iter()
        .map(|&(n, j)| run_replication(cfg, n, j))
        .collect();

    let mut by_cell: BTreeMap<CellKey, (Vec<ReplicationMetrics>, usize)> = BTreeMap::new();
    for rep in results {
        for (key, res) in rep {
            let entry = by_cell.entry(key).or_default();
            match res {
                Ok(m) => entry.0.push(m),
                Err(_) => entry.1 += 1,
            }
        }
    }

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for &n in &cfg.sample_sizes {
        for &est in &cfg.estimators {
            for &regime in &cfg.regimes {
                let (ok, dropped) = by_cell.remove(&(n, regime, est)).unwrap_or_default();
                if dropped as f64 > MAX_DROP_SHARE * cfg.replications as f64 || ok.is_empty() {
                    failures.push(format!("n={n} {est} {regime}: {dropped} of {} dropped", cfg.replications));
                    continue;
                }
                cells.push(summarize(n, est, regime, &ok, dropped));
            }
        }
    }
    if !failures.is_empty() {
        return Err(Error::Study(failures.join("; ")));
    }
    Ok(SimulationReport { cells })
}

pub fn summarize(
    n: usize,
    estimator: EstimatorChoice,
    regime: Regime,
    reps: &[ReplicationMetrics],
    dropped: usize,
) -> ReportCell {
    let err: Vec<f64> = reps.iter().map(|m| m.mean_error).collect();
    let sq: Vec<f64> = reps.iter().map(|m| m.mean_sq_error).collect();
    let coverage = reps
        .iter()
        .map(|m| m.coverage)
        .collect::<Option<Vec<f64>>>()
        .map(|c| stable_mean(&c));
    let beta_rmse = reps
        .iter()
        .map(|m| m.beta_sq_error)
        .collect::<Option<Vec<f64>>>()
        .map(|b| stable_mean(&b).sqrt());
    ReportCell {
        n,
        estimator,
        regime,
        bias: stable_mean(&err).abs(),
        rmse: stable_mean(&sq).sqrt(),
        coverage,
        beta_rmse,
        replications: reps.len(),
        dropped,
    }
}

impl SimulationReport {
    pub fn cell(&self, n: usize, estimator: EstimatorChoice, regime: Regime) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.n == n && c.estimator == estimator && c.regime == regime)
    }

    /// One row per cell; missing coverage is written as `NA`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "estimator", "regime", "bias", "rmse", "coverage", "J", "dropped"])?;
        for c in &self.cells {
            out.write_record([
                c.n.to_string(),
                c.estimator.to_string(),
                c.regime.to_string(),
                format!("{:.6}", c.bias),
                format!("{:.6}", c.rmse),
                c.coverage.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}")),
                c.replications.to_string(),
                c.dropped.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    fn regimes(&self) -> Vec<Regime> {
        let mut r: Vec<Regime> = self.cells.iter().map(|c| c.regime).collect();
        r.sort();
        r.dedup();
        r
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.cells.iter().map(|c| c.n).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// "bias (rmse)" per sample size and estimator, one column per regime.
    pub fn bias_rmse_table(&self) -> String {
        let regimes = self.regimes();
        let mut s = format!("{:>7}  {:<9}", "n", "Method");
        for r in &regimes {
            let _ = write!(s, "  {:>21}", r.heading());
        }
        s.push('\n');
        for n in self.sizes() {
            for est in [EstimatorChoice::Plugin, EstimatorChoice::Proposed] {
                if !self.cells.iter().any(|c| c.n == n && c.estimator == est) {
                    continue;
                }
                let _ = write!(s, "{n:>7}  {:<9}", if est == EstimatorChoice::Plugin { "Plugin" } else { "Proposed" });
                for &r in &regimes {
                    let v = self
                        .cell(n, est, r)
                        .map_or_else(|| "-".to_string(), |c| format!("{:.2} ({:.2})", c.bias, c.rmse));
                    let _ = write!(s, "  {v:>21}");
                }
                s.push('\n');
            }
        }
        s
    }

    /// Coverage (percent) of the proposed estimator per sample size.
    pub fn coverage_table(&self) -> String {
        let regimes = self.regimes();
        let mut s = format!("{:>7}", "n");
        for r in &regimes {
            let _ = write!(s, "  {:>21}", r.heading());
        }
        s.push('\n');
        for n in self.sizes() {
            let _ = write!(s, "{n:>7}");
            for &r in &regimes {
                let v = self
                    .cell(n, EstimatorChoice::Proposed, r)
                    .and_then(|c| c.coverage)
                    .map_or_else(|| "-".to_string(), |c| format!("{:.2}", 100.0 * c));
                let _ = write!(s, "  {v:>21}");
            }
            s.push('\n');
        }
        s
    }
}
