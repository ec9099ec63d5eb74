//! Ridge-stabilized logistic regression fitted by Newton-Raphson (IRLS).
//!
//! Features are standardized internally; the small ridge penalty on the
//! slopes keeps the fit finite on separable data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::working_model::expit;

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    means: Vec<f64>,
    scales: Vec<f64>,
    /// Intercept followed by slopes, on the standardized scale.
    coef: Vec<f64>,
}

impl LogisticModel {
    pub fn fit(x: &FeatureMatrix, y: &[f64], ridge: f64) -> Self {
        let n = x.nrows();
        let d = x.ncols();
        let nf = n as f64;
        let mut means = vec![0.0; d];
        let mut scales = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                means[j] += x.get(i, j) / nf;
            }
        }
        for i in 0..n {
            for j in 0..d {
                scales[j] += (x.get(i, j) - means[j]).powi(2) / nf;
            }
        }
        for s in &mut scales {
            *s = if *s > 1e-300 { s.sqrt() } else { 1.0 };
        }

        let p = d + 1;
        let mut z = DMatrix::<f64>::zeros(n, p);
        for i in 0..n {
            z[(i, 0)] = 1.0;
            for j in 0..d {
                z[(i, j + 1)] = (x.get(i, j) - means[j]) / scales[j];
            }
        }
        let ybar = y.iter().sum::<f64>() / nf;
        let mut b = DVector::<f64>::zeros(p);
        b[0] = (ybar.clamp(1e-6, 1.0 - 1e-6) / (1.0 - ybar.clamp(1e-6, 1.0 - 1e-6))).ln();

        for _ in 0..MAX_ITER {
            let eta = &z * &b;
            let mut grad = DVector::<f64>::zeros(p);
            let mut hess = DMatrix::<f64>::zeros(p, p);
            for i in 0..n {
                let mu = expit(eta[i]);
                let wgt = (mu * (1.0 - mu)).max(1e-12);
                let r = y[i] - mu;
                for a in 0..p {
                    let za = z[(i, a)];
                    grad[a] += za * r;
                    for c in a..p {
                        hess[(a, c)] += wgt * za * z[(i, c)];
                    }
                }
            }
            for a in 0..p {
                for c in 0..a {
                    hess[(a, c)] = hess[(c, a)];
                }
            }
            for a in 1..p {
                grad[a] -= ridge * b[a];
                hess[(a, a)] += ridge;
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&grad),
                None => match hess.lu().solve(&grad) {
                    Some(s) => s,
                    None => break,
                },
            };
            b += &step;
            if step.amax() < TOL {
                break;
            }
        }
        Self {
            means,
            scales,
            coef: b.iter().copied().collect(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut eta = self.coef[0];
        for (j, v) in x.iter().enumerate() {
            eta += self.coef[j + 1] * (v - self.means[j]) / self.scales[j];
        }
        expit(eta)
    }

    /// Intercept and slopes on the original covariate scale.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        let d = self.means.len();
        let mut out = vec![0.0; d + 1];
        out[0] = self.coef[0];
        for j in 0..d {
            out[j + 1] = self.coef[j + 1] / self.scales[j];
            out[0] -= self.coef[j + 1] * self.means[j] / self.scales[j];
        }
        out
    }
}
