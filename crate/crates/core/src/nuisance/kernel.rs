//! Nadaraya-Watson smoother with an isotropic Gaussian kernel.

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSmoother {
    bandwidth: f64,
    x: FeatureMatrix,
    y: Vec<f64>,
    ybar: f64,
}

impl KernelSmoother {
    pub fn fit(x: &FeatureMatrix, y: &[f64], bandwidth: f64) -> Self {
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        Self {
            bandwidth,
            x: x.clone(),
            y: y.to_vec(),
            ybar,
        }
    }

    pub fn predict(&self, q: &[f64]) -> f64 {
        let n = self.x.nrows();
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let mut d2 = Vec::with_capacity(n);
        let mut min = f64::INFINITY;
        for i in 0..n {
            let r = self.x.row_slice(i);
            let s: f64 = r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            min = min.min(s);
            d2.push(s);
        }
        // Shifting by the nearest distance cancels in the ratio and avoids
        // underflow far from the data.
        let mut num = 0.0;
        let mut den = 0.0;
        for (s, y) in d2.iter().zip(&self.y) {
            let w = (-(s - min) * inv).exp();
            num += w * y;
            den += w;
        }
        if den > 0.0 && den.is_finite() {
            num / den
        } else {
            self.ybar
        }
    }
}
