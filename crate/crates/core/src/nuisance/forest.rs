//! Bagged regression trees (random forest) for binary or real labels.
//!
//! Each tree is grown on a bootstrap sample with variance-reduction splits
//! over a random subset of `mtry` features per node. Rows are presorted once
//! per forest; a tree keeps one sorted index list per feature and partitions
//! them stably at every split, so growing a tree costs `O(d * n)` per level.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Features tried per split; `None` means `ceil(d / 3)`.
    pub mtry: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            min_leaf: 5,
            max_depth: None,
            mtry: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<Tree>,
}

/// Column-major copy of the training data plus per-feature presort.
struct Training<'a> {
    cols: Vec<Vec<f64>>,
    presorted: Vec<Vec<u32>>,
    y: &'a [f64],
}

impl RandomForest {
    pub fn fit(x: &FeatureMatrix, y: &[f64], params: &ForestParams, seed: u64) -> Self {
        let n = x.nrows();
        let d = x.ncols();
        let cols: Vec<Vec<f64>> = (0..d).map(|j| (0..n).map(|i| x.get(i, j)).collect()).collect();
        let presorted = cols
            .iter()
            .map(|c| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let data = Training { cols, presorted, y };
        let mtry = params.mtry.unwrap_or(d.div_ceil(3)).clamp(1, d.max(1));
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| grow_tree(&data, params, mtry, seed, t as u64))
            .collect();
        Self { trees }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

fn grow_tree(data: &Training<'_>, params: &ForestParams, mtry: usize, seed: u64, t: u64) -> Tree {
    let mut rng = rng_for(seed, &[t]);
    let n = data.y.len();
    let d = data.cols.len();
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    // Sorted bootstrap lists; duplicated rows appear consecutively.
    let mut orders: Vec<Vec<u32>> = data
        .presorted
        .iter()
        .map(|p| {
            let mut o = Vec::with_capacity(n);
            for &r in p {
                for _ in 0..counts[r as usize] {
                    o.push(r);
                }
            }
            o
        })
        .collect();
    let mut go_left = vec![false; n];
    let mut buf: Vec<u32> = Vec::with_capacity(n);
    let min_leaf = params.min_leaf.max(1);
    let max_depth = params.max_depth.unwrap_or(usize::MAX);

    let mut nodes = vec![Node::Leaf(0.0)];
    let mut stack = vec![(0usize, 0usize, n, 0usize)];
    while let Some((id, lo, hi, depth)) = stack.pop() {
        let cnt = hi - lo;
        let (sum, sumsq) = orders[0][lo..hi].iter().fold((0.0, 0.0), |(s, q), &r| {
            let v = data.y[r as usize];
            (s + v, q + v * v)
        });
        let mean = sum / cnt as f64;
        let pure = sumsq - sum * mean <= 1e-12 * cnt as f64;
        if cnt < 2 * min_leaf || depth >= max_depth || pure {
            nodes[id] = Node::Leaf(mean);
            continue;
        }

        let parent_score = sum * mean;
        let mut best: Option<(usize, f64, usize, f64)> = None;
        for f in sample(&mut rng, d, mtry).into_iter() {
            let ord = &orders[f][lo..hi];
            let col = &data.cols[f];
            let mut left = 0.0;
            for i in 0..cnt - 1 {
                left += data.y[ord[i] as usize];
                let nl = i + 1;
                if nl < min_leaf {
                    continue;
                }
                let nr = cnt - nl;
                if nr < min_leaf {
                    break;
                }
                let xv = col[ord[i] as usize];
                let xn = col[ord[i + 1] as usize];
                if xn <= xv {
                    continue;
                }
                let right = sum - left;
                let score = left * left / nl as f64 + right * right / nr as f64;
                if best.is_none_or(|b| score > b.3) {
                    let mut thr = 0.5 * (xv + xn);
                    if thr >= xn {
                        thr = xv;
                    }
                    best = Some((f, thr, nl, score));
                }
            }
        }
        let Some((feat, thr, nl, score)) = best else {
            nodes[id] = Node::Leaf(mean);
            continue;
        };
        if score <= parent_score + 1e-12 {
            nodes[id] = Node::Leaf(mean);
            continue;
        }

        for (k, &r) in orders[feat][lo..hi].iter().enumerate() {
            go_left[r as usize] = k < nl;
        }
        for (g, ord) in orders.iter_mut().enumerate() {
            if g == feat {
                continue;
            }
            buf.clear();
            buf.extend(ord[lo..hi].iter().copied().filter(|&r| go_left[r as usize]));
            buf.extend(ord[lo..hi].iter().copied().filter(|&r| !go_left[r as usize]));
            ord[lo..hi].copy_from_slice(&buf);
        }

        let left_id = nodes.len();
        nodes.push(Node::Leaf(0.0));
        nodes.push(Node::Leaf(0.0));
        nodes[id] = Node::Split {
            feature: feat as u32,
            threshold: thr,
            left: left_id as u32,
            right: (left_id + 1) as u32,
        };
        stack.push((left_id + 1, lo + nl, hi, depth + 1));
        stack.push((left_id, lo, lo + nl, depth + 1));
    }
    Tree { nodes }
}
