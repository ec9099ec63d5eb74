//! Cross-validated model selection with the influence-function pseudo-risk.
//!
//! For a candidate `g` the shifted risk `R(g) = E[w (g^2 - 2 gamma g)]`
//! differs from the weighted mean squared error `E[w (gamma - g)^2]` by a
//! constant, so it ranks candidates the same way. Its influence function is
//! `w (g^2 - 2 xi g) - R` with `xi` the pseudo-outcome, and averaging the
//! uncentered part over held-out units estimates `R`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::estimator::{pseudo_outcome, solve_beta, SolveOptions};
use crate::nuisance::{Eta, NuisanceConfig, NuisanceFit};
use crate::working_model::{Beta, WorkingModelSpec};

/// `w (g^2 - 2 g xi) - risk_center`.
pub fn pseudo_risk_contribution(
    z: &Observation,
    eta: Eta,
    g_val: f64,
    w_val: f64,
    risk_center: f64,
) -> f64 {
    let xi = pseudo_outcome(z.a(), z.y(), eta);
    w_val * (g_val * g_val - 2.0 * g_val * xi) - risk_center
}

/// A working model restricted to some covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub spec: WorkingModelSpec,
    /// Covariate names used; `None` means all.
    pub covariates: Option<Vec<String>>,
}

impl Candidate {
    pub fn new(id: impl Into<String>, spec: WorkingModelSpec) -> Self {
        Self {
            id: id.into(),
            spec,
            covariates: None,
        }
    }

    pub fn with_covariates<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        self.covariates = Some(names.iter().map(|s| s.as_ref().to_string()).collect());
        self
    }

    fn columns(&self, ds: &Dataset) -> Result<Vec<usize>> {
        match &self.covariates {
            None => Ok((0..ds.dim()).collect()),
            Some(names) => names.iter().map(|n| ds.column_index(n)).collect(),
        }
    }
}

/// Coefficients of a candidate plus the folds it was trained on.
#[derive(Debug, Clone)]
pub struct FittedCandidate {
    pub id: String,
    pub spec: WorkingModelSpec,
    pub columns: Vec<usize>,
    pub beta: Beta,
    pub training_folds: Vec<usize>,
}

impl FittedCandidate {
    pub fn g(&self, x: &[f64]) -> f64 {
        let sub: Vec<f64> = self.columns.iter().map(|&j| x[j]).collect();
        self.spec.g_design(self.beta.as_slice(), &self.spec.design(&sub))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub candidate_id: String,
    pub pseudo_risk: f64,
    pub se: f64,
    pub per_fold_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCandidate {
    pub candidate_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Ascending pseudo-risk; ties broken by candidate id.
    pub ranking: Vec<RiskEstimate>,
    pub failed: Vec<FailedCandidate>,
}

impl SelectionReport {
    pub fn best(&self) -> Option<&RiskEstimate> {
        self.ranking.first()
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<5} {:<24} {:>14} {:>12}\n", "rank", "candidate", "pseudo_risk", "se");
        for (i, r) in self.ranking.iter().enumerate() {
            s.push_str(&format!(
                "{:<5} {:<24} {:>14.6} {:>12.6}\n",
                i + 1,
                r.candidate_id,
                r.pseudo_risk,
                r.se
            ));
        }
        for f in &self.failed {
            s.push_str(&format!("{:<5} {:<24} failed: {}\n", "-", f.candidate_id, f.reason));
        }
        s
    }
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-unit uncentered contributions of a fitted candidate.
fn contributions(ds: &Dataset, nf: &NuisanceFit, cand: &FittedCandidate) -> Result<Vec<f64>> {
    if nf.len() != ds.len() {
        return Err(Error::Contract(format!(
            "nuisance fit has {} rows but dataset has {}",
            nf.len(),
            ds.len()
        )));
    }
    if let Some(i) = (0..ds.len()).find(|&i| cand.training_folds.contains(&nf.fold_assignment[i])) {
        return Err(Error::Contract(format!(
            "candidate `{}` was trained on fold {} which contains evaluation unit {i}",
            cand.id, nf.fold_assignment[i]
        )));
    }
    Ok(ds
        .observations()
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let w = cand.spec.weight.eval(&o.covariates);
            pseudo_risk_contribution(o, nf.eta(i), cand.g(&o.covariates), w, 0.0)
        })
        .collect())
}

/// Mean of the uncentered pseudo-risk contributions over `ds`. Units must
/// not belong to any fold the candidate was trained on.
pub fn estimate_pseudo_risk(
    ds: &Dataset,
    nf: &NuisanceFit,
    cand: &FittedCandidate,
) -> Result<RiskEstimate> {
    let c = contributions(ds, nf, cand)?;
    if c.is_empty() {
        return Err(Error::EmptyDataset("no evaluation units".into()));
    }
    let (mean, se) = mean_se(&c);
    Ok(RiskEstimate {
        candidate_id: cand.id.clone(),
        pseudo_risk: mean,
        se,
        per_fold_values: vec![mean],
    })
}

/// Fits `cand` on `rows` of `ds` with the matching nuisance values.
pub fn fit_candidate(
    ds: &Dataset,
    nf: &NuisanceFit,
    cand: &Candidate,
    rows: &[usize],
) -> Result<FittedCandidate> {
    let columns = cand.columns(ds)?;
    let names: Vec<String> = columns.iter().map(|&j| ds.covariate_names()[j].clone()).collect();
    let train = ds.subset(rows).select_columns(&names)?;
    let opts = SolveOptions {
        check_uniqueness: false,
        ..SolveOptions::default()
    };
    let fit = solve_beta(&train, &nf.subset(rows), &cand.spec, None, &opts)?;
    let mut folds: Vec<usize> = rows.iter().map(|&i| nf.fold_assignment[i]).collect();
    folds.sort_unstable();
    folds.dedup();
    Ok(FittedCandidate {
        id: cand.id.clone(),
        spec: cand.spec.clone(),
        columns,
        beta: fit.beta_hat,
        training_folds: folds,
    })
}

/// K-fold selection reusing the cross-fitting folds: for each fold the
/// candidates are fitted on the other folds and scored on it.
pub fn select_model(
    ds: &Dataset,
    nuisance: &NuisanceConfig,
    candidates: &[Candidate],
) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("at least one candidate is required".into()));
    }
    if nuisance.folds < 2 {
        return Err(Error::InvalidArgument("model selection needs at least 2 folds".into()));
    }
    let mut ids: Vec<&str> = candidates.iter().map(|c| c.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("candidate ids must be unique".into()));
    }
    for c in candidates {
        c.columns(ds)?;
    }
    let nf = nuisance.fit(ds)?;
    select_with_nuisances(ds, &nf, candidates)
}

/// As [`select_model`] with precomputed cross-fitted nuisances.
pub fn select_with_nuisances(
    ds: &Dataset,
    nf: &NuisanceFit,
    candidates: &[Candidate],
) -> Result<SelectionReport> {
    let k = nf.n_folds;
    let folds: Vec<(Vec<usize>, Vec<usize>)> = (0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..ds.len()).partition(|&i| nf.fold_assignment[i] == f);
            (train, test)
        })
        .collect();

    let scored: Vec<std::result::Result<(Vec<f64>, Vec<f64>), String>> = candidates
        .par_iter()
        .map(|cand| {
            let mut per_fold = Vec::new();
            let mut all = Vec::new();
            let mut last_err = String::new();
            for (train, test) in &folds {
                if test.is_empty() {
                    continue;
                }
                let res = fit_candidate(ds, nf, cand, train).and_then(|fc| {
                    contributions(&ds.subset(test), &nf.subset(test), &fc)
                });
                match res {
                    Ok(c) => {
                        per_fold.push(c.iter().sum::<f64>() / c.len() as f64);
                        all.extend(c);
                    }
                    Err(e) => last_err = e.to_string(),
                }
            }
            if per_fold.is_empty() {
                Err(last_err)
            } else {
                Ok((per_fold, all))
            }
        })
        .collect();

    let mut ranking = Vec::new();
    let mut failed = Vec::new();
    for (cand, res) in candidates.iter().zip(scored) {
        match res {
            Ok((per_fold, all)) => ranking.push(RiskEstimate {
                candidate_id: cand.id.clone(),
                pseudo_risk: per_fold.iter().sum::<f64>() / per_fold.len() as f64,
                se: mean_se(&all).1,
                per_fold_values: per_fold,
            }),
            Err(reason) => failed.push(FailedCandidate {
                candidate_id: cand.id.clone(),
                reason,
            }),
        }
    }
    ranking.sort_by(|a, b| {
        a.pseudo_risk
            .total_cmp(&b.pseudo_risk)
            .then_with(|| a.candidate_id.cmp(&b.candidate_id))
    });
    Ok(SelectionReport { ranking, failed })
}
