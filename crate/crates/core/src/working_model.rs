//! Projection targets `g(x; beta)`, their gradients and the weight `w(x)`.
//!
//! The estimating function is built from `h(x; beta) = dg/dbeta * w(x)`.
//! Two families ship: a logistic-linear model, whose values stay in (0, 1),
//! and an identity-linear model, which is linear in `beta`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    LogisticLinear,
    IdentityLinear,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelFamily::LogisticLinear => write!(f, "logistic_linear"),
            ModelFamily::IdentityLinear => write!(f, "identity_linear"),
        }
    }
}

/// User-supplied weight function.
#[derive(Clone)]
pub struct CustomWeight(pub Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl fmt::Debug for CustomWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomWeight(..)")
    }
}

/// Weight `w(x)` of the L2 projection. Must be positive wherever it is used.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    #[default]
    Uniform,
    Constant(f64),
    #[serde(skip)]
    Custom(CustomWeight),
}

impl Weight {
    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Weight::Custom(CustomWeight(Arc::new(f)))
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Weight::Uniform => 1.0,
            Weight::Constant(c) => *c,
            Weight::Custom(f) => (f.0)(x),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkingModelSpec {
    pub family: ModelFamily,
    pub include_intercept: bool,
    #[serde(default)]
    pub weight: Weight,
}

impl WorkingModelSpec {
    pub fn logistic() -> Self {
        Self {
            family: ModelFamily::LogisticLinear,
            include_intercept: true,
            weight: Weight::Uniform,
        }
    }

    pub fn identity() -> Self {
        Self {
            family: ModelFamily::IdentityLinear,
            include_intercept: true,
            weight: Weight::Uniform,
        }
    }

    pub fn with_intercept(mut self, include: bool) -> Self {
        self.include_intercept = include;
        self
    }

    pub fn with_weight(mut self, weight: Weight) -> Self {
        self.weight = weight;
        self
    }

    /// Number of coefficients for `d` covariates.
    pub fn dim(&self, d: usize) -> usize {
        d + usize::from(self.include_intercept)
    }

    /// `x~`: the covariates with an optional leading 1.
    pub fn design(&self, x: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim(x.len()));
        if self.include_intercept {
            v.push(1.0);
        }
        v.extend_from_slice(x);
        v
    }

    fn check(&self, beta: &Beta, x: &[f64]) -> Result<()> {
        let p = self.dim(x.len());
        if beta.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: beta.len(),
            });
        }
        Ok(())
    }

    /// `g(x; beta)` on a precomputed design vector.
    #[inline]
    pub fn g_design(&self, beta: &[f64], xt: &[f64]) -> f64 {
        let eta = dot(beta, xt);
        match self.family {
            ModelFamily::LogisticLinear => expit(eta),
            ModelFamily::IdentityLinear => eta,
        }
    }

    /// Scalar `s` with `dg/dbeta = s * x~`.
    #[inline]
    pub fn grad_scale(&self, g: f64) -> f64 {
        match self.family {
            ModelFamily::LogisticLinear => g * (1.0 - g),
            ModelFamily::IdentityLinear => 1.0,
        }
    }

    /// Scalar `c` with `d2g/dbeta dbeta' = c * x~ x~'`.
    #[inline]
    pub fn hess_scale(&self, g: f64) -> f64 {
        match self.family {
            ModelFamily::LogisticLinear => g * (1.0 - g) * (1.0 - 2.0 * g),
            ModelFamily::IdentityLinear => 0.0,
        }
    }
}

/// Coefficient vector of a working model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Beta(Vec<f64>);

impl Beta {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("beta has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(p: usize) -> Self {
        Self(vec![0.0; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Beta {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[inline]
pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn g_eval(spec: &WorkingModelSpec, beta: &Beta, x: &[f64]) -> Result<f64> {
    spec.check(beta, x)?;
    Ok(spec.g_design(beta.as_slice(), &spec.design(x)))
}

pub fn g_grad(spec: &WorkingModelSpec, beta: &Beta, x: &[f64]) -> Result<Vec<f64>> {
    spec.check(beta, x)?;
    let xt = spec.design(x);
    let s = spec.grad_scale(spec.g_design(beta.as_slice(), &xt));
    Ok(xt.into_iter().map(|v| s * v).collect())
}

pub fn h_eval(spec: &WorkingModelSpec, beta: &Beta, x: &[f64]) -> Result<Vec<f64>> {
    let w = spec.weight.eval(x);
    Ok(g_grad(spec, beta, x)?.into_iter().map(|v| v * w).collect())
}
