//! Bagged, depth-limited regression trees with per-split feature subsampling.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means a third of the columns, at least one.
    pub mtry: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { trees: 100, max_depth: 6, min_leaf: 10, mtry: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    w: &'a [f64],
    params: ForestParams,
    mtry: usize,
    nodes: Vec<Node>,
}

fn weighted_mean(rows: &[usize], y: &[f64], w: &[f64]) -> f64 {
    let (sw, swy) = rows.iter().fold((0.0, 0.0), |(a, b), &i| (a + w[i], b + w[i] * y[i]));
    if sw > 0.0 {
        swy / sw
    } else {
        0.0
    }
}

impl Builder<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(weighted_mean(rows, self.y, self.w)));
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(rows, rng) else {
            return id;
        };
        let mut split = 0;
        for k in 0..rows.len() {
            if self.x[(rows[k], feature)] <= threshold {
                rows.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = rows.split_at_mut(split);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let d = self.x.cols();
        let (tw, twy) = rows.iter().fold((0.0, 0.0), |(a, b), &i| (a + self.w[i], b + self.w[i] * self.y[i]));
        if tw <= 0.0 {
            return None;
        }
        let parent = twy * twy / tw;
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for feature in sample(rng, d, self.mtry.min(d)).into_iter() {
            order.sort_by(|&a, &b| self.x[(a, feature)].total_cmp(&self.x[(b, feature)]));
            let (mut lw, mut lwy) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let i = order[k];
                lw += self.w[i];
                lwy += self.w[i] * self.y[i];
                let here = self.x[(i, feature)];
                let next = self.x[(order[k + 1], feature)];
                if k + 1 < min_leaf || order.len() - k - 1 < min_leaf || here == next {
                    continue;
                }
                let rw = tw - lw;
                if lw <= 0.0 || rw <= 0.0 {
                    continue;
                }
                let rwy = twy - lwy;
                let gain = lwy * lwy / lw + rwy * rwy / rw - parent;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, feature, 0.5 * (here + next)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

impl Forest {
    pub fn fit(x: &Matrix, y: &[f64], w: &[f64], params: ForestParams, seed: u64) -> Self {
        let n = x.rows();
        let d = x.cols().max(1);
        let mtry = params.mtry.unwrap_or((d / 3).max(1)).clamp(1, d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trees = Vec::with_capacity(params.trees);
        for _ in 0..params.trees.max(1) {
            let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut b = Builder { x, y, w, params, mtry, nodes: Vec::new() };
            b.grow(&mut rows, 0, &mut rng);
            trees.push(Tree { nodes: b.nodes });
        }
        Self { trees }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let mut out = vec![0.0; x.rows()];
        for (i, o) in out.iter_mut().enumerate() {
            let row = x.row(i);
            *o = self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forest_learns_a_step() {
        let n = 400;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let y: Vec<f64> = xs.iter().map(|&v| if v > 0.5 { 0.9 } else { 0.1 }).collect();
        let x = Matrix::from_row_major(n, 1, xs);
        let f = Forest::fit(&x, &y, &vec![1.0; n], ForestParams { trees: 20, ..Default::default() }, 1);
        let p = f.predict(&Matrix::from_row_major(2, 1, vec![0.1, 0.9]));
        assert!((p[0] - 0.1).abs() < 0.05 && (p[1] - 0.9).abs() < 0.05);
        assert_eq!(f, Forest::fit(&x, &y, &vec![1.0; n], ForestParams { trees: 20, ..Default::default() }, 1));
    }
}
