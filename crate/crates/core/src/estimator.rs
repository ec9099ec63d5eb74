//! Influence-function-based estimation of the projection coefficients.
//!
//! For fixed nuisances the estimating function of one unit is
//!
//! ```text
//! phi(Z; beta) = h(X; beta) * [ xi(Z) - g(X; beta) ]
//! xi(Z)        = gamma(X) + mu0/mu1^2 * A (Y - mu1) / pi
//!                         - 1/mu1 * (1 - A)(Y - mu0) / (1 - pi)
//! ```
//!
//! with `gamma = 1 - mu0/mu1`. `beta_hat` solves `P_n phi = 0` by damped
//! Newton iteration; its covariance is `M^-1 P_n(phi phi') M^-T` with
//! `M = P_n d phi / d beta`. The plugin variant drops the residual terms of
//! `xi`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{validate_positivity, Dataset, Observation};
use crate::error::{Error, Result};
use crate::nuisance::{
    fit_regressor, Eta, FeatureMatrix, FittedRegressor, NuisanceConfig, NuisanceFit,
    RegressorSpec,
};
use crate::seed::{derive_path, rng_for};
use crate::working_model::{logit, Beta, ModelFamily, WorkingModelSpec};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const MAX_CONDITION: f64 = 1e12;
const INIT_CLAMP: f64 = 0.001;
const ROOT_SEPARATION: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;
/// Linear predictors beyond this make `expit` round to exactly 0 or 1.
const SATURATION: f64 = 36.0;
const MAX_SATURATED_SHARE: f64 = 0.5;

/// `gamma = 1 - mu0 / mu1`; not clamped to `[0, 1]`.
#[inline]
pub fn gamma_plugin(mu0: f64, mu1: f64) -> f64 {
    1.0 - mu0 / mu1
}

/// Residual terms of the influence function (zero in expectation at the
/// true nuisances).
#[inline]
pub fn if_correction(a: f64, y: f64, eta: Eta) -> f64 {
    let Eta { pi, mu0, mu1 } = eta;
    mu0 / (mu1 * mu1) * a * (y - mu1) / pi - (1.0 - a) * (y - mu0) / (mu1 * (1.0 - pi))
}

/// `gamma + if_correction`: the doubly-robust-style transformed outcome.
#[inline]
pub fn pseudo_outcome(a: f64, y: f64, eta: Eta) -> f64 {
    gamma_plugin(eta.mu0, eta.mu1) + if_correction(a, y, eta)
}

/// Uncentered influence-function contribution of one unit at `beta`.
pub fn influence_contribution(
    z: &Observation,
    beta: &Beta,
    eta: Eta,
    spec: &WorkingModelSpec,
) -> Result<Vec<f64>> {
    let p = spec.dim(z.covariates.len());
    if beta.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: beta.len(),
        });
    }
    let xt = spec.design(&z.covariates);
    let g = spec.g_design(beta.as_slice(), &xt);
    let scale = spec.weight.eval(&z.covariates)
        * spec.grad_scale(g)
        * (pseudo_outcome(z.a(), z.y(), eta) - g);
    Ok(xt.into_iter().map(|v| v * scale).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    InfluenceFunction,
    Plugin,
}

/// The moment condition `P_n[ w s(g) x~ (target - g) ]` over fixed per-unit
/// targets; `target` is the pseudo-outcome or, for the plugin, `gamma_hat`.
pub(crate) struct MomentProblem<'a> {
    spec: &'a WorkingModelSpec,
    design: Vec<Vec<f64>>,
    weights: Vec<f64>,
    target: Vec<f64>,
    gamma_hat: Vec<f64>,
}

impl<'a> MomentProblem<'a> {
    pub(crate) fn new(
        ds: &Dataset,
        nf: &NuisanceFit,
        spec: &'a WorkingModelSpec,
        kind: EstimatorKind,
    ) -> Result<Self> {
        if nf.len() != ds.len() {
            return Err(Error::Contract(format!(
                "nuisance fit has {} rows but dataset has {}",
                nf.len(),
                ds.len()
            )));
        }
        let mut design = Vec::with_capacity(ds.len());
        let mut weights = Vec::with_capacity(ds.len());
        let mut target = Vec::with_capacity(ds.len());
        let mut gamma_hat = Vec::with_capacity(ds.len());
        for (i, o) in ds.observations().iter().enumerate() {
            let eta = nf.eta(i);
            let gamma = gamma_plugin(eta.mu0, eta.mu1);
            design.push(spec.design(&o.covariates));
            weights.push(spec.weight.eval(&o.covariates));
            gamma_hat.push(gamma);
            target.push(match kind {
                EstimatorKind::InfluenceFunction => gamma + if_correction(o.a(), o.y(), eta),
                EstimatorKind::Plugin => gamma,
            });
        }
        Ok(Self {
            spec,
            design,
            weights,
            target,
            gamma_hat,
        })
    }

    fn n(&self) -> usize {
        self.design.len()
    }

    fn p(&self) -> usize {
        self.design.first().map_or(0, Vec::len)
    }

    /// Per-unit contributions, `n x p`.
    pub(crate) fn contributions(&self, beta: &[f64]) -> DMatrix<f64> {
        let (n, p) = (self.n(), self.p());
        let mut out = DMatrix::zeros(n, p);
        for i in 0..n {
            let xt = &self.design[i];
            let g = self.spec.g_design(beta, xt);
            let s = self.weights[i] * self.spec.grad_scale(g) * (self.target[i] - g);
            for j in 0..p {
                out[(i, j)] = s * xt[j];
            }
        }
        out
    }

    /// Share of units whose logistic linear predictor is numerically
    /// saturated; always zero for identity models.
    fn saturated_share(&self, beta: &[f64]) -> f64 {
        if self.spec.family == ModelFamily::IdentityLinear || self.n() == 0 {
            return 0.0;
        }
        let hits = self
            .design
            .iter()
            .filter(|xt| crate::working_model::dot(beta, xt).abs() > SATURATION)
            .count();
        hits as f64 / self.n() as f64
    }

    /// `P_n[w (target - g)^2] / 2`; its gradient is `-psi`.
    pub(crate) fn objective(&self, beta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n() {
            let g = self.spec.g_design(beta, &self.design[i]);
            acc += self.weights[i] * (self.target[i] - g).powi(2);
        }
        0.5 * acc / self.n() as f64
    }

    pub(crate) fn psi(&self, beta: &[f64]) -> DVector<f64> {
        let p = self.p();
        let mut acc = DVector::zeros(p);
        for i in 0..self.n() {
            let xt = &self.design[i];
            let g = self.spec.g_design(beta, xt);
            let s = self.weights[i] * self.spec.grad_scale(g) * (self.target[i] - g);
            for j in 0..p {
                acc[j] += s * xt[j];
            }
        }
        acc / self.n() as f64
    }

    /// `P_n d phi / d beta`.
    pub(crate) fn jacobian(&self, beta: &[f64]) -> DMatrix<f64> {
        let p = self.p();
        let mut m = DMatrix::zeros(p, p);
        for i in 0..self.n() {
            let xt = &self.design[i];
            let g = self.spec.g_design(beta, xt);
            let s = self.spec.grad_scale(g);
            let c = self.spec.hess_scale(g);
            let k = self.weights[i] * (c * (self.target[i] - g) - s * s);
            for a in 0..p {
                for b in 0..p {
                    m[(a, b)] += k * xt[a] * xt[b];
                }
            }
        }
        m / self.n() as f64
    }

    /// `P_n[w x~ x~']`.
    fn gram(&self) -> DMatrix<f64> {
        let p = self.p();
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        for i in 0..self.n() {
            let xt = &self.design[i];
            let w = self.weights[i];
            for a in 0..p {
                for b in 0..p {
                    xtx[(a, b)] += w * xt[a] * xt[b];
                }
            }
        }
        xtx / self.n() as f64
    }

    /// Weighted least squares of `values` on the design.
    fn least_squares(&self, values: &[f64]) -> Option<Vec<f64>> {
        let p = self.p();
        let xtx = self.gram();
        let mut xty = DVector::<f64>::zeros(p);
        for i in 0..self.n() {
            let xt = &self.design[i];
            let w = self.weights[i] / self.n() as f64;
            for a in 0..p {
                xty[a] += w * xt[a] * values[i];
            }
        }
        let sol = xtx.clone().cholesky().map(|c| c.solve(&xty)).or_else(|| xtx.lu().solve(&xty))?;
        Some(sol.iter().copied().collect())
    }

    /// Closed form for identity models; otherwise least squares of the
    /// logit of clamped plugin values.
    fn initial_beta(&self) -> Vec<f64> {
        let p = self.p();
        let vals: Vec<f64> = match self.spec.family {
            ModelFamily::IdentityLinear => self.target.clone(),
            ModelFamily::LogisticLinear => self
                .gamma_hat
                .iter()
                .map(|g| logit(g.clamp(INIT_CLAMP, 1.0 - INIT_CLAMP)))
                .collect(),
        };
        self.least_squares(&vals).unwrap_or_else(|| vec![0.0; p])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Re-solve from `beta = 0` and flag distinct roots.
    pub check_uniqueness: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            check_uniqueness: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub multiple_roots_suspected: bool,
}

/// Condition number after symmetric diagonal equilibration, so that
/// rescaling a covariate does not change the verdict.
fn condition(m: &DMatrix<f64>) -> f64 {
    let d: Vec<f64> = (0..m.nrows()).map(|j| m[(j, j)].abs().sqrt()).collect();
    if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return f64::INFINITY;
    }
    let eq = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] / (d[i] * d[j]));
    let sv = eq.svd(false, false).singular_values;
    if sv.min() > 0.0 {
        sv.max() / sv.min()
    } else {
        f64::INFINITY
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

struct NewtonResult {
    beta: Vec<f64>,
    iterations: usize,
    residual: f64,
}

/// Newton iteration on `Psi = -grad L` with
/// `L(beta) = P_n[w (target - g)^2] / 2`. Full Newton steps are taken while
/// they lower `L`; otherwise the Hessian `-M` is Marquardt-damped until one
/// does. Merit on `||Psi||^2` alone is drawn towards saturated logistic fits
/// far out, where `Psi` vanishes without `L` being minimal.
fn newton(problem: &MomentProblem<'_>, init: Vec<f64>, opts: &SolveOptions) -> Result<NewtonResult> {
    let mut beta = init;
    let mut psi = problem.psi(&beta);
    let mut r = inf_norm(&psi);
    let mut loss = problem.objective(&beta);
    let fail = |it: usize, r: f64, beta: Vec<f64>| Error::NonConvergence {
        iterations: it,
        residual: r,
        best: beta,
    };
    if !r.is_finite() || !loss.is_finite() {
        return Err(fail(0, r, beta));
    }
    let p = beta.len();
    let mut lambda = 0.0_f64;
    let mut it = 0;
    while r > opts.tol && it < opts.max_iter {
        it += 1;
        let hess = -problem.jacobian(&beta);
        let scale: Vec<f64> = {
            let top = (0..p).map(|j| hess[(j, j)].abs()).fold(0.0, f64::max).max(1e-300);
            (0..p).map(|j| hess[(j, j)].abs().max(1e-12 * top)).collect()
        };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut h = hess.clone();
            for j in 0..p {
                h[(j, j)] += lambda * scale[j];
            }
            let step = match h.clone().cholesky() {
                Some(c) => Some(c.solve(&psi)),
                None if lambda == 0.0 => h.lu().solve(&psi),
                None => None,
            };
            if let Some(step) = step {
                let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
                let closs = problem.objective(&cand);
                let cpsi = problem.psi(&cand);
                let cr = inf_norm(&cpsi);
                let slack = 4.0 * f64::EPSILON * loss.abs();
                if closs.is_finite() && (closs < loss || (closs <= loss + slack && cr < r)) {
                    accepted = Some((cand, cpsi, cr, closs));
                    break;
                }
            }
            lambda = if lambda == 0.0 { 1e-3 } else { lambda * 10.0 };
        }
        let Some((cand, cpsi, cr, closs)) = accepted else {
            return Err(fail(it, r, beta));
        };
        beta = cand;
        psi = cpsi;
        r = cr;
        loss = closs;
        lambda = if lambda <= 1e-3 { 0.0 } else { lambda / 10.0 };
    }
    // A degenerate Jacobian, or most fitted values pinned at exactly 0 or 1,
    // at a small residual means the iterates ran off towards a step
    // function: the objective has no finite minimizer.
    if r > opts.tol
        || condition(&problem.jacobian(&beta)) > MAX_CONDITION
        || problem.saturated_share(&beta) > MAX_SATURATED_SHARE
    {
        return Err(fail(it, r, beta));
    }
    Ok(NewtonResult {
        beta,
        iterations: it,
        residual: r,
    })
}

/// Result of solving a projection moment condition.
#[derive(Debug, Clone)]
pub struct ProjectionFit {
    pub beta_hat: Beta,
    /// Asymptotic covariance of `sqrt(n) (beta_hat - beta)`; `None` when no
    /// valid variance is available (nonparametric plugin).
    pub covariance: Option<DMatrix<f64>>,
    /// Per-unit contributions at `beta_hat`, `n x p`.
    pub if_values: DMatrix<f64>,
    pub m_hat: DMatrix<f64>,
    pub solver: SolverDiagnostics,
    pub n: usize,
    pub spec: WorkingModelSpec,
    pub covariate_names: Vec<String>,
    pub estimator: EstimatorKind,
    pub nuisance: Option<NuisanceConfig>,
}

/// Point estimate and Wald interval for `g(x; beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcEstimate {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `sigma_hat(x) / sqrt(n)`.
    pub se: f64,
    /// Set when display values were clamped into `[0, 1]`.
    pub clamped: bool,
}

/// Two-sided standard normal quantile for `level`; exactly 1.96 at 0.95.
pub fn z_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must be in (0, 1), got {level}")));
    }
    if level == 0.95 {
        return Ok(1.96);
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

impl ProjectionFit {
    pub fn p(&self) -> usize {
        self.beta_hat.len()
    }

    /// `g(x; beta_hat)` without interval.
    pub fn point_at(&self, x: &[f64]) -> Result<f64> {
        crate::working_model::g_eval(&self.spec, &self.beta_hat, x)
    }

    /// Standard error of `beta_hat_j`, i.e. `sqrt(cov_jj / n)`.
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        let cov = self.covariance.as_ref()?;
        Some((0..self.p()).map(|j| (cov[(j, j)] / self.n as f64).sqrt()).collect())
    }

    /// Coefficient labels, `(intercept)` first when present.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut v = Vec::with_capacity(self.p());
        if self.spec.include_intercept {
            v.push("(intercept)".to_string());
        }
        v.extend(self.covariate_names.iter().cloned());
        v
    }

    pub fn predict(&self, x: &[f64], level: f64) -> Result<PcEstimate> {
        predict_pc_with_ci(self, x, level, self.n)
    }
}

/// Wald interval `g(x; beta_hat) +- z * sigma_hat(x) / sqrt(n)` with
/// `sigma_hat^2(x) = grad' * covariance * grad`.
pub fn predict_pc_with_ci(fit: &ProjectionFit, x: &[f64], level: f64, n: usize) -> Result<PcEstimate> {
    let z = z_quantile(level)?;
    let cov = fit.covariance.as_ref().ok_or_else(|| {
        Error::Contract("no covariance available for this fit (plugin with nonparametric nuisances)".into())
    })?;
    let point = fit.point_at(x)?;
    let grad = crate::working_model::g_grad(&fit.spec, &fit.beta_hat, x)?;
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite gradient".into()));
    }
    let gv = DVector::from_vec(grad);
    let var = (gv.transpose() * cov * &gv)[(0, 0)].max(0.0);
    let se = var.sqrt() / (n as f64).sqrt();
    let mut est = PcEstimate {
        point,
        ci_low: point - z * se,
        ci_high: point + z * se,
        se,
        clamped: false,
    };
    if fit.spec.family == ModelFamily::IdentityLinear {
        let c = |v: f64| v.clamp(0.0, 1.0);
        let clamped = PcEstimate {
            point: c(est.point),
            ci_low: c(est.ci_low),
            ci_high: c(est.ci_high),
            se,
            clamped: false,
        };
        if clamped.point != est.point || clamped.ci_low != est.ci_low || clamped.ci_high != est.ci_high {
            est = PcEstimate { clamped: true, ..clamped };
        }
    }
    Ok(est)
}

/// `M^-1 P_n(phi phi') M^-T`, symmetrized.
pub fn sandwich_covariance(if_values: &DMatrix<f64>, m_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = m_hat.nrows();
    if m_hat.ncols() != p || if_values.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: if_values.ncols(),
        });
    }
    let condition = condition(m_hat);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let minv = m_hat
        .clone()
        .try_inverse()
        .ok_or(Error::Singular { condition })?;
    let n = if_values.nrows().max(1) as f64;
    let meat = if_values.transpose() * if_values / n;
    let s = &minv * meat * minv.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// Sample mean of the influence contributions at `beta`.
pub fn estimating_equation(
    beta: &Beta,
    ds: &Dataset,
    nf: &NuisanceFit,
    spec: &WorkingModelSpec,
) -> Result<Vec<f64>> {
    let problem = MomentProblem::new(ds, nf, spec, EstimatorKind::InfluenceFunction)?;
    check_beta(&problem, beta)?;
    Ok(problem.psi(beta.as_slice()).iter().copied().collect())
}

/// `M_hat = P_n d phi / d beta`, computed analytically.
pub fn jacobian_m(
    beta: &Beta,
    ds: &Dataset,
    nf: &NuisanceFit,
    spec: &WorkingModelSpec,
) -> Result<DMatrix<f64>> {
    let problem = MomentProblem::new(ds, nf, spec, EstimatorKind::InfluenceFunction)?;
    check_beta(&problem, beta)?;
    Ok(problem.jacobian(beta.as_slice()))
}

fn check_beta(problem: &MomentProblem<'_>, beta: &Beta) -> Result<()> {
    if beta.len() != problem.p() {
        return Err(Error::DimensionMismatch {
            expected: problem.p(),
            got: beta.len(),
        });
    }
    Ok(())
}

fn prepare(ds: &Dataset, nf: &NuisanceFit) -> Result<()> {
    ds.ensure_ready()?;
    validate_positivity(ds).require_both_arms()?;
    nf.validate()
}

fn solve_problem(
    problem: &MomentProblem<'_>,
    init: Option<&Beta>,
    opts: &SolveOptions,
) -> Result<(NewtonResult, bool)> {
    let p = problem.p();
    if let Some(b) = init {
        if b.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: b.len(),
            });
        }
    }
    let gram = problem.gram();
    let cond = condition(&gram);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Singular { condition: cond });
    }
    let start = init.map_or_else(|| problem.initial_beta(), |b| b.as_slice().to_vec());
    let linear = problem.spec.family == ModelFamily::IdentityLinear;
    let primary = newton(problem, start.clone(), opts);
    let zero = vec![0.0; p];
    let check = opts.check_uniqueness && !linear && start != zero;
    match primary {
        Ok(res) => {
            let mut suspicious = false;
            if check {
                if let Ok(alt) = newton(problem, zero, opts) {
                    let dist = res
                        .beta
                        .iter()
                        .zip(&alt.beta)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    suspicious = dist > ROOT_SEPARATION;
                }
            }
            Ok((res, suspicious))
        }
        Err(e) if check => newton(problem, zero, opts).map(|r| (r, false)).map_err(|_| e),
        Err(e) => Err(e),
    }
}

fn build_fit(
    problem: &MomentProblem<'_>,
    ds: &Dataset,
    res: NewtonResult,
    suspicious: bool,
    kind: EstimatorKind,
    with_covariance: bool,
) -> Result<ProjectionFit> {
    let if_values = problem.contributions(&res.beta);
    let m_hat = problem.jacobian(&res.beta);
    let covariance = if with_covariance {
        Some(sandwich_covariance(&if_values, &m_hat)?)
    } else {
        None
    };
    Ok(ProjectionFit {
        beta_hat: Beta::new(res.beta)?,
        covariance,
        if_values,
        m_hat,
        solver: SolverDiagnostics {
            iterations: res.iterations,
            residual: res.residual,
            converged: true,
            multiple_roots_suspected: suspicious,
        },
        n: ds.len(),
        spec: problem.spec.clone(),
        covariate_names: ds.covariate_names().to_vec(),
        estimator: kind,
        nuisance: None,
    })
}

/// Solves `P_n phi(Z; beta) = 0` and attaches the sandwich covariance.
pub fn solve_beta(
    ds: &Dataset,
    nf: &NuisanceFit,
    spec: &WorkingModelSpec,
    init: Option<&Beta>,
    opts: &SolveOptions,
) -> Result<ProjectionFit> {
    prepare(ds, nf)?;
    let problem = MomentProblem::new(ds, nf, spec, EstimatorKind::InfluenceFunction)?;
    let (res, suspicious) = solve_problem(&problem, init, opts)?;
    build_fit(&problem, ds, res, suspicious, EstimatorKind::InfluenceFunction, true)
}

/// Plugin projection: solves `P_n[h (gamma_hat - g)] = 0`. No covariance is
/// reported because none is valid for flexible nuisance fits.
pub fn plugin_projection(
    ds: &Dataset,
    nf: &NuisanceFit,
    spec: &WorkingModelSpec,
    opts: &SolveOptions,
) -> Result<ProjectionFit> {
    prepare(ds, nf)?;
    let problem = MomentProblem::new(ds, nf, spec, EstimatorKind::Plugin)?;
    let (res, suspicious) = solve_problem(&problem, None, opts)?;
    build_fit(&problem, ds, res, suspicious, EstimatorKind::Plugin, false)
}

/// Plugin projection with full-sample logistic outcome regressions and a
/// delta-method covariance from the stacked estimating equations of
/// `(alpha0, alpha1, beta)`.
pub fn plugin_projection_parametric(
    ds: &Dataset,
    spec: &WorkingModelSpec,
    clip_eps: f64,
    opts: &SolveOptions,
) -> Result<ProjectionFit> {
    ds.ensure_ready()?;
    validate_positivity(ds).require_both_arms()?;
    let reg = RegressorSpec::logistic();
    let arm = |a: u8| -> Result<(FittedRegressor, Vec<f64>)> {
        let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.get(i).exposure == a).collect();
        let x = FeatureMatrix::from_dataset_rows(ds, &rows);
        let y: Vec<f64> = rows.iter().map(|&i| ds.get(i).y()).collect();
        let m = fit_regressor(&reg, &x, &y, 0)?;
        let coef = match &m {
            FittedRegressor::Logistic(l) => l.raw_coefficients(),
            FittedRegressor::Constant(c) => {
                let mut v = vec![0.0; ds.dim() + 1];
                v[0] = logit(c.clamp(clip_eps, 1.0 - clip_eps));
                v
            }
            _ => unreachable!("logistic spec yields a logistic or constant fit"),
        };
        Ok((m, coef))
    };
    let (m0, alpha0) = arm(0)?;
    let (m1, _) = arm(1)?;

    let n = ds.len();
    let mut mu0 = Vec::with_capacity(n);
    let mut mu1 = Vec::with_capacity(n);
    for o in ds.observations() {
        mu0.push(m0.predict(&o.covariates).clamp(clip_eps, 1.0 - clip_eps));
        mu1.push(m1.predict(&o.covariates).clamp(clip_eps, 1.0 - clip_eps));
    }
    let nf = NuisanceFit::from_values(vec![0.5; n], mu0.clone(), mu1.clone(), clip_eps)?;
    let problem = MomentProblem::new(ds, &nf, spec, EstimatorKind::Plugin)?;
    let (res, suspicious) = solve_problem(&problem, None, opts)?;
    let mut fit = build_fit(&problem, ds, res, suspicious, EstimatorKind::Plugin, false)?;

    // Stacked sandwich over theta = (alpha0, alpha1, beta).
    let q = alpha0.len();
    let p = fit.p();
    let dim = 2 * q + p;
    let beta = fit.beta_hat.as_slice();
    let mut bread = DMatrix::<f64>::zeros(dim, dim);
    let mut meat = DMatrix::<f64>::zeros(dim, dim);
    for (i, o) in ds.observations().iter().enumerate() {
        let zv: Vec<f64> = std::iter::once(1.0).chain(o.covariates.iter().copied()).collect();
        let (a, y) = (o.a(), o.y());
        let (m0i, m1i) = (mu0[i], mu1[i]);
        let xt = spec.design(&o.covariates);
        let w = spec.weight.eval(&o.covariates);
        let g = spec.g_design(beta, &xt);
        let s = spec.grad_scale(g);
        let c = spec.hess_scale(g);
        let gamma = gamma_plugin(m0i, m1i);

        let mut psi = DVector::<f64>::zeros(dim);
        for k in 0..q {
            psi[k] = (1.0 - a) * zv[k] * (y - m0i);
            psi[q + k] = a * zv[k] * (y - m1i);
        }
        for j in 0..p {
            psi[2 * q + j] = w * s * xt[j] * (gamma - g);
        }
        meat += &psi * psi.transpose();

        let d0 = -m0i * (1.0 - m0i) / m1i;
        let d1 = m0i * (1.0 - m1i) / m1i;
        for k in 0..q {
            for l in 0..q {
                bread[(k, l)] -= (1.0 - a) * m0i * (1.0 - m0i) * zv[k] * zv[l];
                bread[(q + k, q + l)] -= a * m1i * (1.0 - m1i) * zv[k] * zv[l];
            }
        }
        for j in 0..p {
            for k in 0..q {
                bread[(2 * q + j, k)] += w * s * xt[j] * d0 * zv[k];
                bread[(2 * q + j, q + k)] += w * s * xt[j] * d1 * zv[k];
            }
            for l in 0..p {
                bread[(2 * q + j, 2 * q + l)] += w * xt[j] * xt[l] * (c * (gamma - g) - s * s);
            }
        }
    }
    bread /= n as f64;
    meat /= n as f64;
    let full = sandwich_covariance_from_parts(&bread, &meat)?;
    fit.covariance = Some(full.view((2 * q, 2 * q), (p, p)).into_owned());
    Ok(fit)
}

fn sandwich_covariance_from_parts(bread: &DMatrix<f64>, meat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition = condition(bread);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let inv = bread.clone().try_inverse().ok_or(Error::Singular { condition })?;
    let s = &inv * meat * inv.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// Fits nuisances with `cfg` and solves for `beta_hat`, recording the
/// nuisance recipe on the fit.
pub fn fit_projection(
    ds: &Dataset,
    cfg: &NuisanceConfig,
    spec: &WorkingModelSpec,
    opts: &SolveOptions,
) -> Result<(ProjectionFit, NuisanceFit)> {
    validate_positivity(ds).require_both_arms()?;
    let nf = cfg.fit(ds)?;
    let mut fit = solve_beta(ds, &nf, spec, None, opts)?;
    fit.nuisance = Some(cfg.clone());
    Ok((fit, nf))
}

/// Covariance of `sqrt(n) beta_hat*` over `b` nonparametric bootstrap
/// resamples, refitting the nuisances on each. Copies of one unit share a
/// cross-fitting fold.
pub fn bootstrap_covariance(
    ds: &Dataset,
    spec: &WorkingModelSpec,
    nuisance: &NuisanceConfig,
    b: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if b < 50 {
        return Err(Error::InvalidArgument(format!("bootstrap needs B >= 50, got {b}")));
    }
    ds.ensure_ready()?;
    let n = ds.len();
    let opts = SolveOptions {
        check_uniqueness: false,
        ..SolveOptions::default()
    };
    let draws: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(seed, &[r as u64]);
            let idx: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..n)).collect();
            let sub = ds.subset(&idx);
            let cfg = NuisanceConfig {
                seed: derive_path(seed, &[r as u64, 1]),
                ..nuisance.clone()
            };
            let nf = cfg.fit_grouped(&sub, &idx).ok()?;
            solve_beta(&sub, &nf, spec, None, &opts)
                .ok()
                .map(|f| f.beta_hat.into_vec())
        })
        .collect();
    let ok: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let failed = b - ok.len();
    if failed * 10 > b {
        return Err(Error::BootstrapUnstable { failed, total: b });
    }
    let p = ok[0].len();
    let m = ok.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| ok.iter().map(|v| v[j]).sum::<f64>() / m).collect();
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for v in &ok {
        for a in 0..p {
            for c in 0..p {
                cov[(a, c)] += (v[a] - mean[a]) * (v[c] - mean[c]);
            }
        }
    }
    Ok(cov * (n as f64 / (m - 1.0)))
}

/// `pc / (1 - pc)`.
pub fn odds_of_causation(pc: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pc) {
        return Err(Error::InvalidArgument(format!("probability {pc} outside [0, 1]")));
    }
    if pc <= 0.0 || pc >= 1.0 {
        return Err(Error::InfiniteOdds(pc));
    }
    Ok(pc / (1.0 - pc))
}

/// Multiplicative change in the odds of causation per unit of a covariate
/// with logistic coefficient `beta_j`.
pub fn odds_ratio(beta_j: f64) -> f64 {
    beta_j.exp()
}

/// Serializable form of a [`ProjectionFit`] (no per-unit values).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    pub format_version: u32,
    pub estimator: EstimatorKind,
    pub model: WorkingModelSpec,
    pub covariate_names: Vec<String>,
    pub n: usize,
    pub p: usize,
    pub beta: Vec<f64>,
    /// Row-major `p x p`, or `null` when undefined.
    pub covariance: Option<Vec<f64>>,
    pub m_hat: Vec<f64>,
    pub nuisance: Option<NuisanceConfig>,
    pub solver: SolverDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect()
}

impl ProjectionFit {
    pub fn to_document(&self) -> FitDocument {
        FitDocument {
            format_version: 1,
            estimator: self.estimator,
            model: self.spec.clone(),
            covariate_names: self.covariate_names.clone(),
            n: self.n,
            p: self.p(),
            beta: self.beta_hat.as_slice().to_vec(),
            covariance: self.covariance.as_ref().map(row_major),
            m_hat: row_major(&self.m_hat),
            nuisance: self.nuisance.clone(),
            solver: self.solver,
            manifest: None,
        }
    }

    pub fn from_document(doc: &FitDocument) -> Result<Self> {
        let p = doc.p;
        if doc.beta.len() != p || doc.m_hat.len() != p * p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: doc.beta.len(),
            });
        }
        if doc.model.dim(doc.covariate_names.len()) != p {
            return Err(Error::DimensionMismatch {
                expected: doc.model.dim(doc.covariate_names.len()),
                got: p,
            });
        }
        let covariance = match &doc.covariance {
            Some(c) if c.len() == p * p => Some(DMatrix::from_row_slice(p, p, c)),
            Some(c) => {
                return Err(Error::DimensionMismatch {
                    expected: p * p,
                    got: c.len(),
                })
            }
            None => None,
        };
        Ok(ProjectionFit {
            beta_hat: Beta::new(doc.beta.clone())?,
            covariance,
            if_values: DMatrix::zeros(0, p),
            m_hat: DMatrix::from_row_slice(p, p, &doc.m_hat),
            solver: doc.solver,
            n: doc.n,
            spec: doc.model.clone(),
            covariate_names: doc.covariate_names.clone(),
            estimator: doc.estimator,
            nuisance: doc.nuisance.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: FitDocument = serde_json::from_str(s)?;
        Self::from_document(&doc)
    }
}

