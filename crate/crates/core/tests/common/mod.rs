#![allow(dead_code)]

use pcause::{expit, Dataset, NuisanceFit, Observation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Two covariates, known nuisances, monotone potential outcomes.
pub struct Toy {
    pub ds: Dataset,
    pub truth: NuisanceFit,
}

pub fn true_eta(x: &[f64]) -> (f64, f64, f64) {
    let pi = expit(0.3 * x[0] - 0.2);
    let mu1 = expit(0.5 + 0.4 * x[1]);
    let gamma = expit(-0.5 + x[0] - 0.5 * x[1]);
    (pi, mu1 * (1.0 - gamma), mu1)
}

pub fn toy(n: usize, seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Vec::with_capacity(n);
    let (mut pi, mut mu0, mut mu1) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let x: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        let (p, m0, m1) = true_eta(&x);
        let a = u8::from(rng.random::<f64>() < p);
        let y = if a == 1 { rng.random::<f64>() < m1 } else { rng.random::<f64>() < m0 };
        obs.push(Observation::new(x, a, u8::from(y)).unwrap());
        pi.push(p);
        mu0.push(m0);
        mu1.push(m1);
    }
    let ds = Dataset::new(vec!["x1".into(), "x2".into()], obs).unwrap();
    let truth = NuisanceFit::from_values(pi, mu0, mu1, 0.01).unwrap();
    Toy { ds, truth }
}

/// Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

pub fn invert_dense(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let e: Vec<f64> = (0..n).map(|i| f64::from(i == j)).collect();
        cols.push(solve_dense(a.to_vec(), e));
    }
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

/// Builds a dataset on the 4-point grid {0,1}^2 and its cell-frequency
/// nuisances.
pub fn discrete_instance(n: usize, seed: u64) -> (Dataset, NuisanceFit, Vec<([f64; 2], f64, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let support = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    let mut obs = Vec::with_capacity(n);
    let mut cell = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..4);
        let x = support[c].to_vec();
        let (pi, mu0, mu1) = true_eta(&x);
        let a = u8::from(rng.random::<f64>() < pi);
        let y = u8::from(rng.random::<f64>() < if a == 1 { mu1 } else { mu0 });
        obs.push(Observation::new(x, a, y).unwrap());
        cell.push(c);
    }
    let ds = Dataset::new(vec!["x1".into(), "x2".into()], obs).unwrap();
    let mut stats = [[0.0f64; 5]; 4]; // count, treated, y among treated, controls, y among controls
    for (o, &c) in ds.observations().iter().zip(&cell) {
        stats[c][0] += 1.0;
        if o.exposure == 1 {
            stats[c][1] += 1.0;
            stats[c][2] += o.y();
        } else {
            stats[c][3] += 1.0;
            stats[c][4] += o.y();
        }
    }
    let freq = |c: usize| (stats[c][1] / stats[c][0], stats[c][4] / stats[c][3], stats[c][2] / stats[c][1]);
    let pi = cell.iter().map(|&c| freq(c).0).collect();
    let mu0 = cell.iter().map(|&c| freq(c).1).collect();
    let mu1 = cell.iter().map(|&c| freq(c).2).collect();
    let nf = NuisanceFit::from_values(pi, mu0, mu1, 1e-9).unwrap();
    let pop = (0..4)
        .map(|c| (support[c], stats[c][0] / n as f64, 1.0 - freq(c).1 / freq(c).2))
        .collect();
    (ds, nf, pop)
}

/// Minimizes `sum_x p(x) w(x) (gamma(x) - expit(b'x~))^2` over the support
/// by Levenberg-Marquardt with numeric derivatives.
pub fn enumerate_projection(pop: &[([f64; 2], f64, f64)], w: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let resid = |b: &[f64]| -> Vec<f64> {
        pop.iter()
            .map(|(x, p, g)| (p * w(x)).sqrt() * (g - expit(b[0] + b[1] * x[0] + b[2] * x[1])))
            .collect()
    };
    let obj = |b: &[f64]| resid(b).iter().map(|r| r * r).sum::<f64>();
    let mut b = vec![0.0; 3];
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let r = resid(&b);
        let mut jac = vec![vec![0.0; 3]; r.len()];
        for j in 0..3 {
            let h = 1e-7;
            let mut bu = b.clone();
            let mut bd = b.clone();
            bu[j] += h;
            bd[j] -= h;
            let (ru, rd) = (resid(&bu), resid(&bd));
            for i in 0..r.len() {
                jac[i][j] = (ru[i] - rd[i]) / (2.0 * h);
            }
        }
        let mut jtj = vec![vec![0.0; 3]; 3];
        let mut jtr = vec![0.0; 3];
        for i in 0..r.len() {
            for a in 0..3 {
                jtr[a] -= jac[i][a] * r[i];
                for c in 0..3 {
                    jtj[a][c] += jac[i][a] * jac[i][c];
                }
            }
        }
        if jtr.iter().all(|v| v.abs() < 1e-15) {
            break;
        }
        for a in 0..3 {
            jtj[a][a] *= 1.0 + lambda;
        }
        let step = solve_dense(jtj, jtr);
        let cand: Vec<f64> = b.iter().zip(&step).map(|(x, s)| x + s).collect();
        if obj(&cand) <= obj(&b) {
            b = cand;
            lambda = (lambda * 0.3).max(1e-12);
        } else {
            lambda *= 10.0;
        }
    }
    b
}
