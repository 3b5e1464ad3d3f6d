//! Gradient boosted regression trees with squared-error loss.
//!
//! Exact greedy splits: every boundary between distinct sorted feature
//! values is scored by variance reduction, ties resolved toward the lowest
//! feature index and then the lowest threshold, so training is fully
//! deterministic. No subsampling, no shrinkage beyond the learning rate.

use crate::data::DataMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            rounds: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 20,
        }
    }
}

/// Cover is the number of training samples that reached the node.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut id = self.root;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    id = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub base_score: f64,
    pub config: GbdtConfig,
    pub trees: Vec<Tree>,
    n_features: usize,
}

impl GbdtModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut s = 0.0;
        for t in &self.trees {
            s += t.predict_row(row);
        }
        self.base_score + self.config.learning_rate * s
    }

    pub fn predict(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features {
            return Err(Error::invalid(format!(
                "model expects {} features, data has {}",
                self.n_features,
                x.n_cols()
            )));
        }
        Ok(x.rows_iter().map(|r| self.predict_row(r)).collect())
    }
}

struct TreeBuilder<'a> {
    x: &'a DataMatrix,
    residuals: &'a [f64],
    cfg: &'a GbdtConfig,
    nodes: Vec<TreeNode>,
    // Scratch split-side flags per sample; valid only between a split
    // decision and the partition it drives.
    side: Vec<bool>,
}

impl<'a> TreeBuilder<'a> {
    /// Builds the subtree over the samples in `lists` (one identically
    /// populated, feature-sorted id list per feature) and applies leaf
    /// updates to `preds`. Returns the node id.
    fn build(&mut self, lists: Vec<Vec<u32>>, depth_left: usize, preds: &mut [f64]) -> usize {
        let m = lists[0].len();
        let mut total = 0.0;
        for &i in &lists[0] {
            total += self.residuals[i as usize];
        }
        let cover = m as f64;

        let mut best: Option<(f64, usize, f64)> = None;
        if depth_left > 0 && m >= 2 * self.cfg.min_samples_leaf {
            let mut best_gain = 0.0;
            let parent_score = total * total / m as f64;
            for (j, list) in lists.iter().enumerate() {
                let mut left_sum = 0.0;
                for k in 1..m {
                    left_sum += self.residuals[list[k - 1] as usize];
                    let vl = self.x.get(list[k - 1] as usize, j);
                    let vr = self.x.get(list[k] as usize, j);
                    if vl == vr {
                        continue;
                    }
                    if k < self.cfg.min_samples_leaf || m - k < self.cfg.min_samples_leaf {
                        continue;
                    }
                    let right_sum = total - left_sum;
                    let gain = left_sum * left_sum / k as f64
                        + right_sum * right_sum / (m - k) as f64
                        - parent_score;
                    if gain > best_gain {
                        best_gain = gain;
                        best = Some((gain, j, 0.5 * (vl + vr)));
                    }
                }
            }
        }

        match best {
            None => {
                let value = total / m as f64;
                for &i in &lists[0] {
                    preds[i as usize] += self.cfg.learning_rate * value;
                }
                self.nodes.push(TreeNode::Leaf { value, cover });
                self.nodes.len() - 1
            }
            Some((_, feature, threshold)) => {
                for &i in &lists[0] {
                    self.side[i as usize] = self.x.get(i as usize, feature) <= threshold;
                }
                let mut left_lists = Vec::with_capacity(lists.len());
                let mut right_lists = Vec::with_capacity(lists.len());
                for list in lists {
                    let mut l = Vec::new();
                    let mut r = Vec::new();
                    for i in list {
                        if self.side[i as usize] {
                            l.push(i);
                        } else {
                            r.push(i);
                        }
                    }
                    left_lists.push(l);
                    right_lists.push(r);
                }
                let left = self.build(left_lists, depth_left - 1, preds);
                let right = self.build(right_lists, depth_left - 1, preds);
                self.nodes.push(TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    cover,
                });
                self.nodes.len() - 1
            }
        }
    }
}

pub fn fit_gbdt(x: &DataMatrix, y: &[f64], config: GbdtConfig) -> Result<GbdtModel> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n == 0 || p == 0 {
        return Err(Error::invalid("gbdt needs nonempty training data"));
    }
    if n != y.len() {
        return Err(Error::invalid(format!(
            "design has {n} rows but y has {}",
            y.len()
        )));
    }
    if config.min_samples_leaf == 0 || n < 2 * config.min_samples_leaf {
        return Err(Error::invalid(format!(
            "need at least {} rows for min_samples_leaf {}",
            2 * config.min_samples_leaf.max(1),
            config.min_samples_leaf
        )));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate <= 1.0) {
        return Err(Error::invalid("learning_rate must lie in (0, 1]"));
    }
    if config.max_depth == 0 {
        return Err(Error::invalid("max_depth must be at least 1"));
    }

    // One argsort per feature, ties broken by sample id; node partitions
    // preserve these orders.
    let presorted: Vec<Vec<u32>> = (0..p)
        .map(|j| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_unstable_by(|&a, &b| {
                x.get(a as usize, j)
                    .total_cmp(&x.get(b as usize, j))
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();

    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut preds = vec![base_score; n];
    let mut residuals = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.rounds);

    for _ in 0..config.rounds {
        for i in 0..n {
            residuals[i] = y[i] - preds[i];
        }
        let mut builder = TreeBuilder {
            x,
            residuals: &residuals,
            cfg: &config,
            nodes: Vec::new(),
            side: vec![false; n],
        };
        let root = builder.build(presorted.clone(), config.max_depth, &mut preds);
        trees.push(Tree {
            nodes: builder.nodes,
            root,
        });
    }

    Ok(GbdtModel {
        base_score,
        config,
        trees,
        n_features: p,
    })
}
