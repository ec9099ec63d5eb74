//! Nuisance regressions `pi(x) = P(A=1|X=x)` and `mu_a(x) = E(Y|X=x, A=a)`.
//!
//! [`crossfit_nuisances`] fits each function on all folds but one and
//! predicts on the held-out fold; [`fit_nuisances_full_sample`] trains and
//! predicts on the whole sample. All stored predictions are clipped to
//! `[clip_eps, 1 - clip_eps]`, which keeps the `1/mu_1` and `1/pi` factors of
//! the estimating function bounded.

mod forest;
mod kernel;
mod logistic;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use forest::{ForestParams, RandomForest};
pub use kernel::KernelSmoother;
pub use logistic::LogisticModel;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed::{derive_path, rng_for};

pub const DEFAULT_CLIP_EPS: f64 = 0.01;
pub const DEFAULT_FOLDS: usize = 5;
pub const FOLD_RETRY_LIMIT: usize = 20;
pub const DEFAULT_RIDGE: f64 = 1e-4;

/// Dense row-major `n x d` matrix of regressors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: data.len(),
            });
        }
        Ok(Self { data, n, d })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self {
            data,
            n: rows.len(),
            d,
        }
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        Self::from_rows(&ds.covariate_rows())
    }

    /// Rows at `idx` of the dataset's covariates.
    pub fn from_dataset_rows(ds: &Dataset, idx: &[usize]) -> Self {
        let d = ds.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&ds.get(i).covariates);
        }
        Self {
            data,
            n: idx.len(),
            d,
        }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    #[inline]
    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.row_slice(i).to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    LogisticLinear,
    KernelSmoother,
    RandomForest,
}

impl fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegressorKind::LogisticLinear => "logistic_linear",
            RegressorKind::KernelSmoother => "kernel_smoother",
            RegressorKind::RandomForest => "random_forest",
        })
    }
}

/// Which regressor to fit, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorSpec {
    LogisticLinear { ridge: f64 },
    KernelSmoother { bandwidth: f64 },
    RandomForest(ForestParams),
}

impl RegressorSpec {
    pub fn logistic() -> Self {
        RegressorSpec::LogisticLinear {
            ridge: DEFAULT_RIDGE,
        }
    }

    pub fn kernel(bandwidth: f64) -> Self {
        RegressorSpec::KernelSmoother { bandwidth }
    }

    pub fn forest() -> Self {
        RegressorSpec::RandomForest(ForestParams::default())
    }

    pub fn kind(&self) -> RegressorKind {
        match self {
            RegressorSpec::LogisticLinear { .. } => RegressorKind::LogisticLinear,
            RegressorSpec::KernelSmoother { .. } => RegressorKind::KernelSmoother,
            RegressorSpec::RandomForest(_) => RegressorKind::RandomForest,
        }
    }

    /// Builds a spec from a kind and a name -> value map. Unknown names are
    /// rejected; missing ones take defaults.
    ///
    /// Recognized names: `ridge` (logistic); `bandwidth` (kernel, required);
    /// `n_trees`, `min_leaf`, `max_depth`, `mtry` (forest).
    pub fn from_params(kind: RegressorKind, params: &BTreeMap<String, f64>) -> Result<Self> {
        let allowed: &[&str] = match kind {
            RegressorKind::LogisticLinear => &["ridge"],
            RegressorKind::KernelSmoother => &["bandwidth"],
            RegressorKind::RandomForest => &["n_trees", "min_leaf", "max_depth", "mtry"],
        };
        if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "hyperparameter `{bad}` is not valid for {kind}"
            )));
        }
        let as_count = |name: &str, v: f64| -> Result<usize> {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a non-negative integer"
                )));
            }
            Ok(v as usize)
        };
        let spec = match kind {
            RegressorKind::LogisticLinear => RegressorSpec::LogisticLinear {
                ridge: params.get("ridge").copied().unwrap_or(DEFAULT_RIDGE),
            },
            RegressorKind::KernelSmoother => RegressorSpec::KernelSmoother {
                bandwidth: *params.get("bandwidth").ok_or_else(|| {
                    Error::InvalidArgument("kernel_smoother requires `bandwidth`".into())
                })?,
            },
            RegressorKind::RandomForest => {
                let mut p = ForestParams::default();
                if let Some(&v) = params.get("n_trees") {
                    p.n_trees = as_count("n_trees", v)?;
                }
                if let Some(&v) = params.get("min_leaf") {
                    p.min_leaf = as_count("min_leaf", v)?;
                }
                if let Some(&v) = params.get("max_depth") {
                    p.max_depth = Some(as_count("max_depth", v)?);
                }
                if let Some(&v) = params.get("mtry") {
                    p.mtry = Some(as_count("mtry", v)?);
                }
                RegressorSpec::RandomForest(p)
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RegressorSpec::LogisticLinear { ridge } if !(*ridge >= 0.0 && ridge.is_finite()) => {
                Err(Error::InvalidArgument("ridge must be finite and >= 0".into()))
            }
            RegressorSpec::KernelSmoother { bandwidth }
                if !(*bandwidth > 0.0 && bandwidth.is_finite()) =>
            {
                Err(Error::InvalidArgument("bandwidth must be > 0".into()))
            }
            RegressorSpec::RandomForest(p) if p.n_trees == 0 => {
                Err(Error::InvalidArgument("tree count must be >= 1".into()))
            }
            RegressorSpec::RandomForest(p) if p.min_leaf == 0 => {
                Err(Error::InvalidArgument("min leaf size must be >= 1".into()))
            }
            RegressorSpec::RandomForest(p) if p.mtry == Some(0) => {
                Err(Error::InvalidArgument("mtry must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Smallest training set `fit_regressor` accepts.
    pub fn min_samples(&self) -> usize {
        match self {
            RegressorSpec::RandomForest(p) => p.min_leaf.max(2),
            _ => 2,
        }
    }
}

/// A fitted regressor; `predict` returns a value in `[0, 1]` for binary labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FittedRegressor {
    Constant(f64),
    Logistic(LogisticModel),
    Kernel(KernelSmoother),
    Forest(RandomForest),
}

impl FittedRegressor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            FittedRegressor::Constant(c) => *c,
            FittedRegressor::Logistic(m) => m.predict(x),
            FittedRegressor::Kernel(m) => m.predict(x),
            FittedRegressor::Forest(m) => m.predict(x),
        }
    }

    pub fn predict_rows(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.predict(x.row_slice(i))).collect()
    }
}

/// Fits one regressor of `labels` (0/1) on `features`.
///
/// Constant labels (including a single sample) yield a constant predictor
/// equal to the label proportion.
pub fn fit_regressor(
    spec: &RegressorSpec,
    features: &FeatureMatrix,
    labels: &[f64],
    seed: u64,
) -> Result<FittedRegressor> {
    spec.validate()?;
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if labels.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    let ones = labels.iter().sum::<f64>();
    if ones == 0.0 || ones == n as f64 {
        return Ok(FittedRegressor::Constant(ones / n as f64));
    }
    if n < spec.min_samples() {
        return Err(Error::InvalidArgument(format!(
            "{} needs at least {} samples, got {n}",
            spec.kind(),
            spec.min_samples()
        )));
    }
    Ok(match spec {
        RegressorSpec::LogisticLinear { ridge } => {
            FittedRegressor::Logistic(LogisticModel::fit(features, labels, *ridge))
        }
        RegressorSpec::KernelSmoother { bandwidth } => {
            FittedRegressor::Kernel(KernelSmoother::fit(features, labels, *bandwidth))
        }
        RegressorSpec::RandomForest(p) => {
            FittedRegressor::Forest(RandomForest::fit(features, labels, p, seed))
        }
    })
}

/// Per-unit nuisance predictions aligned with the rows of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit {
    pub pi_hat: Vec<f64>,
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
    pub fold_assignment: Vec<usize>,
    pub n_folds: usize,
    pub clip_eps: f64,
}

/// `(pi, mu0, mu1)` at one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eta {
    pub pi: f64,
    pub mu0: f64,
    pub mu1: f64,
}

#[inline]
fn clip(v: f64, eps: f64) -> f64 {
    v.clamp(eps, 1.0 - eps)
}

fn check_clip(clip_eps: f64) -> Result<()> {
    if !(clip_eps > 0.0 && clip_eps < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "clip_eps must lie in (0, 0.5), got {clip_eps}"
        )));
    }
    Ok(())
}

impl NuisanceFit {
    /// Wraps externally supplied nuisance values (for example the true
    /// functions of a simulation), clipping them like fitted ones.
    pub fn from_values(
        pi: Vec<f64>,
        mu0: Vec<f64>,
        mu1: Vec<f64>,
        clip_eps: f64,
    ) -> Result<Self> {
        check_clip(clip_eps)?;
        let n = pi.len();
        if mu0.len() != n || mu1.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: mu0.len().min(mu1.len()),
            });
        }
        Ok(Self {
            pi_hat: pi.into_iter().map(|v| clip(v, clip_eps)).collect(),
            mu0_hat: mu0.into_iter().map(|v| clip(v, clip_eps)).collect(),
            mu1_hat: mu1.into_iter().map(|v| clip(v, clip_eps)).collect(),
            fold_assignment: vec![0; n],
            n_folds: 1,
            clip_eps,
        })
    }

    pub fn len(&self) -> usize {
        self.pi_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi_hat.is_empty()
    }

    #[inline]
    pub fn eta(&self, i: usize) -> Eta {
        Eta {
            pi: self.pi_hat[i],
            mu0: self.mu0_hat[i],
            mu1: self.mu1_hat[i],
        }
    }

    /// Checks the clip bounds and the fold partition.
    pub fn validate(&self) -> Result<()> {
        let lo = self.clip_eps;
        let hi = 1.0 - self.clip_eps;
        let inside = |v: &f64| *v >= lo && *v <= hi;
        if !self.pi_hat.iter().all(inside)
            || !self.mu0_hat.iter().all(inside)
            || !self.mu1_hat.iter().all(inside)
        {
            return Err(Error::Contract("nuisance values outside clip bounds".into()));
        }
        if self.fold_assignment.iter().any(|&k| k >= self.n_folds) {
            return Err(Error::Contract("fold index out of range".into()));
        }
        Ok(())
    }

    /// Restricts to rows `idx` (in that order).
    pub fn subset(&self, idx: &[usize]) -> NuisanceFit {
        NuisanceFit {
            pi_hat: idx.iter().map(|&i| self.pi_hat[i]).collect(),
            mu0_hat: idx.iter().map(|&i| self.mu0_hat[i]).collect(),
            mu1_hat: idx.iter().map(|&i| self.mu1_hat[i]).collect(),
            fold_assignment: idx.iter().map(|&i| self.fold_assignment[i]).collect(),
            n_folds: self.n_folds,
            clip_eps: self.clip_eps,
        }
    }
}

/// Full recipe for producing a [`NuisanceFit`]; `folds == 1` means no
/// sample splitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    pub regressor: RegressorSpec,
    pub folds: usize,
    pub clip_eps: f64,
    pub seed: u64,
}

impl NuisanceConfig {
    pub fn new(regressor: RegressorSpec) -> Self {
        Self {
            regressor,
            folds: DEFAULT_FOLDS,
            clip_eps: DEFAULT_CLIP_EPS,
            seed: 0,
        }
    }

    pub fn folds(mut self, k: usize) -> Self {
        self.folds = k;
        self
    }

    pub fn clip_eps(mut self, eps: f64) -> Self {
        self.clip_eps = eps;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn fit(&self, ds: &Dataset) -> Result<NuisanceFit> {
        if self.folds <= 1 {
            fit_nuisances_full_sample(ds, &self.regressor, self.clip_eps, self.seed)
        } else {
            crossfit_nuisances(ds, &self.regressor, self.folds, self.clip_eps, self.seed)
        }
    }

    /// Cross-fits keeping all rows that share a group label in one fold.
    pub fn fit_grouped(&self, ds: &Dataset, groups: &[usize]) -> Result<NuisanceFit> {
        if self.folds <= 1 {
            return self.fit(ds);
        }
        crossfit_impl(
            ds,
            &self.regressor,
            self.folds,
            self.clip_eps,
            self.seed,
            Some(groups),
        )
    }
}

/// Cross-fitted nuisances with `k >= 2` folds.
pub fn crossfit_nuisances(
    ds: &Dataset,
    spec: &RegressorSpec,
    k: usize,
    clip_eps: f64,
    seed: u64,
) -> Result<NuisanceFit> {
    if k < 2 {
        return Err(Error::InvalidArgument("cross-fitting needs at least 2 folds".into()));
    }
    crossfit_impl(ds, spec, k, clip_eps, seed, None)
}

/// Nuisances trained and evaluated on the whole sample.
pub fn fit_nuisances_full_sample(
    ds: &Dataset,
    spec: &RegressorSpec,
    clip_eps: f64,
    seed: u64,
) -> Result<NuisanceFit> {
    crossfit_impl(ds, spec, 1, clip_eps, seed, None)
}

/// Fold labels: groups are shuffled and dealt round-robin into `k` folds.
fn assign_folds(n: usize, k: usize, groups: Option<&[usize]>, seed: u64, attempt: u64) -> Vec<usize> {
    if k == 1 {
        return vec![0; n];
    }
    let mut rng = rng_for(seed, &[0xF01D, attempt]);
    match groups {
        None => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut folds = vec![0; n];
            for (rank, &i) in perm.iter().enumerate() {
                folds[i] = rank % k;
            }
            folds
        }
        Some(g) => {
            let mut ids: Vec<usize> = g.to_vec();
            ids.sort_unstable();
            ids.dedup();
            ids.shuffle(&mut rng);
            let fold_of: BTreeMap<usize, usize> =
                ids.iter().enumerate().map(|(rank, &id)| (id, rank % k)).collect();
            g.iter().map(|id| fold_of[id]).collect()
        }
    }
}

struct FoldPredictions {
    rows: Vec<usize>,
    pi: Vec<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
}

fn crossfit_impl(
    ds: &Dataset,
    spec: &RegressorSpec,
    k: usize,
    clip_eps: f64,
    seed: u64,
    groups: Option<&[usize]>,
) -> Result<NuisanceFit> {
    ds.ensure_ready()?;
    check_clip(clip_eps)?;
    spec.validate()?;
    let n = ds.len();
    if let Some(g) = groups {
        if g.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: g.len(),
            });
        }
    }
    // Every training split needs both exposure arms.
    let need = 1;
    let mut folds = None;
    let attempts = if k == 1 { 1 } else { FOLD_RETRY_LIMIT };
    for attempt in 0..attempts as u64 {
        let cand = assign_folds(n, k, groups, seed, attempt);
        let ok = (0..k).all(|fold| {
            let mut arm = [0usize; 2];
            for (i, &f) in cand.iter().enumerate() {
                if k == 1 || f != fold {
                    arm[ds.get(i).exposure as usize] += 1;
                }
            }
            arm[0] >= need && arm[1] >= need
        });
        if ok {
            folds = Some(cand);
            break;
        }
    }
    let folds = folds.ok_or_else(|| {
        Error::FoldConstruction(format!(
            "an exposure arm is empty in some training split after {attempts} attempts"
        ))
    })?;

    let preds = (0..k)
        .into_par_iter()
        .map(|fold| -> Result<FoldPredictions> {
            let train: Vec<usize> = (0..n).filter(|&i| k == 1 || folds[i] != fold).collect();
            let test: Vec<usize> = (0..n).filter(|&i| k == 1 || folds[i] == fold).collect();
            let fold_seed = derive_path(seed, &[fold as u64]);

            let x_train = FeatureMatrix::from_dataset_rows(ds, &train);
            let a_train: Vec<f64> = train.iter().map(|&i| ds.get(i).a()).collect();
            let pi_model = fit_regressor(spec, &x_train, &a_train, derive_path(fold_seed, &[0]))?;

            let arm_fit = |arm: u8, stream: u64| -> Result<FittedRegressor> {
                let rows: Vec<usize> =
                    train.iter().copied().filter(|&i| ds.get(i).exposure == arm).collect();
                let x = FeatureMatrix::from_dataset_rows(ds, &rows);
                let y: Vec<f64> = rows.iter().map(|&i| ds.get(i).y()).collect();
                fit_regressor(spec, &x, &y, derive_path(fold_seed, &[stream]))
            };
            let mu0_model = arm_fit(0, 1)?;
            let mu1_model = arm_fit(1, 2)?;

            let x_test = FeatureMatrix::from_dataset_rows(ds, &test);
            Ok(FoldPredictions {
                pi: pi_model.predict_rows(&x_test),
                mu0: mu0_model.predict_rows(&x_test),
                mu1: mu1_model.predict_rows(&x_test),
                rows: test,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pi_hat = vec![0.0; n];
    let mut mu0_hat = vec![0.0; n];
    let mut mu1_hat = vec![0.0; n];
    for p in preds {
        for (j, &i) in p.rows.iter().enumerate() {
            pi_hat[i] = clip(p.pi[j], clip_eps);
            mu0_hat[i] = clip(p.mu0[j], clip_eps);
            mu1_hat[i] = clip(p.mu1[j], clip_eps);
        }
    }
    Ok(NuisanceFit {
        pi_hat,
        mu0_hat,
        mu1_hat,
        fold_assignment: folds,
        n_folds: k,
        clip_eps,
    })
}
