//! Tabular summaries of fitted projections: a coefficient table with robust
//! Wald statistics, and a comparison of plugin and proposed estimates of
//! the probability of causation at one covariate profile.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{
    plugin_projection, plugin_projection_parametric, solve_beta, ProjectionFit, SolveOptions,
};
use crate::nuisance::{NuisanceConfig, RegressorKind};
use crate::working_model::WorkingModelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub stars: String,
}

/// Conventional significance codes, assigned mechanically from `p`.
pub fn significance_code(p: f64) -> &'static str {
    match p {
        p if p < 0.001 => "***",
        p if p < 0.01 => "**",
        p if p < 0.05 => "*",
        p if p < 0.1 => ".",
        _ => "",
    }
}

/// Two-sided normal p-value of `z`.
pub fn two_sided_p(z: f64) -> f64 {
    let std = Normal::standard();
    2.0 * std.cdf(-z.abs())
}

pub fn coefficient_rows(fit: &ProjectionFit) -> Result<Vec<CoefficientRow>> {
    let se = fit
        .std_errors()
        .ok_or_else(|| Error::Contract("fit has no covariance; standard errors are undefined".into()))?;
    Ok(fit
        .coefficient_names()
        .into_iter()
        .zip(fit.beta_hat.as_slice())
        .zip(se)
        .map(|((name, &estimate), se)| {
            let z = estimate / se;
            let p = two_sided_p(z);
            CoefficientRow {
                name,
                estimate,
                se,
                z,
                p,
                stars: significance_code(p).to_string(),
            }
        })
        .collect())
}

pub fn coefficient_table(rows: &[CoefficientRow], n: usize) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(8);
    let mut s = format!(
        "{:<width$}  {:>10}  {:>17}  {:>8}  {:>8}\n",
        "", "Estimate", "Robust std. error", "z value", "p value"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>10.4}  {:>17.4}  {:>8.2}  {:>8.4}  {}",
            r.name, r.estimate, r.se, r.z, r.p, r.stars
        );
    }
    let _ = writeln!(s, "Sample size: {n} observations.");
    s.push_str("Significance codes: 0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1\n");
    s
}

/// Mode for columns taking only the values 0 and 1, median otherwise.
pub fn typical_profile(ds: &Dataset) -> Vec<f64> {
    (0..ds.dim())
        .map(|j| {
            let mut col: Vec<f64> = ds.observations().iter().map(|o| o.covariates[j]).collect();
            if col.iter().all(|&v| v == 0.0 || v == 1.0) {
                let ones = col.iter().filter(|&&v| v == 1.0).count();
                f64::from(u8::from(2 * ones >= col.len()))
            } else {
                col.sort_by(f64::total_cmp);
                let m = col.len() / 2;
                if col.len() % 2 == 1 {
                    col[m]
                } else {
                    0.5 * (col[m - 1] + col[m])
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcRow {
    pub method: String,
    pub estimate: f64,
    /// `None` when no valid interval exists.
    pub interval: Option<(f64, f64)>,
}

fn pc_row(method: &str, fit: &ProjectionFit, x: &[f64], level: f64) -> Result<PcRow> {
    if fit.covariance.is_some() {
        let e = fit.predict(x, level)?;
        Ok(PcRow {
            method: method.into(),
            estimate: e.point,
            interval: Some((e.ci_low, e.ci_high)),
        })
    } else {
        Ok(PcRow {
            method: method.into(),
            estimate: fit.point_at(x)?,
            interval: None,
        })
    }
}

/// Parametric plugin, nonparametric plugin and proposed estimates of PC at
/// `profile`. The two nonparametric rows share one cross-fitted nuisance
/// fit from `flexible`.
pub fn compare_estimators(
    ds: &Dataset,
    spec: &WorkingModelSpec,
    flexible: &NuisanceConfig,
    profile: &[f64],
    level: f64,
) -> Result<Vec<PcRow>> {
    let opts = SolveOptions::default();
    let name = match flexible.regressor.kind() {
        RegressorKind::RandomForest => "random forests",
        RegressorKind::KernelSmoother => "kernel smoothers",
        RegressorKind::LogisticLinear => "logistic regressions",
    };
    let para = plugin_projection_parametric(ds, spec, flexible.clip_eps, &opts)?;
    let nf = flexible.fit(ds)?;
    let plug = plugin_projection(ds, &nf, spec, &opts)?;
    let prop = solve_beta(ds, &nf, spec, None, &opts)?;
    Ok(vec![
        pc_row("Parametric plugin (logistic regressions)", &para, profile, level)?,
        pc_row(&format!("Nonparametric plugin ({name})"), &plug, profile, level)?,
        pc_row(&format!("Nonparametric proposed ({name})"), &prop, profile, level)?,
    ])
}

pub fn pc_table(rows: &[PcRow]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<width$}  {:>8}  {:>20}\n", "", "Estimate", "Confidence interval");
    for r in rows {
        let ci = r
            .interval
            .map_or_else(|| "(undefined)".to_string(), |(l, h)| format!("({l:.2}, {h:.2})"));
        let _ = writeln!(s, "{:<width$}  {:>8.2}  {:>20}", r.method, r.estimate, ci);
    }
    s
}
