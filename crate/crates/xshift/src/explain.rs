//! Shapley-value attribution engines.
//!
//! Three engines produce per-row feature attributions for a fitted model:
//!
//! * [`shap_linear_independent`]: closed form for linear models under
//!   feature independence, `S_j = a_j (x_j - mu_j)`.
//! * [`shap_gaussian_observational`]: exact coalition enumeration for linear
//!   models under a joint Gaussian, where absent features are imputed by
//!   their conditional expectation given the present ones.
//! * [`shap_interventional`]: exact coalition enumeration for any model,
//!   where absent features are marginalised over an empirical background
//!   sample.
//!
//! All engines satisfy efficiency: attributions for a row sum to the model
//! prediction minus [`ExplanationMatrix::expected_value`].

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::models::gbdt::{GbdtModel, Tree, TreeNode};
use crate::models::linear::LinearModel;
use crate::models::Model;
use crate::rng::SplitMix64;
use crate::synth::GaussianSpec;
use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

/// Coalition count doubles per feature; past this the observational engine
/// refuses to run.
pub const MAX_OBSERVATIONAL_FEATURES: usize = 20;

/// The interventional engine additionally scans the background per
/// coalition, so its bound is tighter.
pub const MAX_INTERVENTIONAL_FEATURES: usize = 15;

/// Default cap on background rows retained by [`BackgroundSet::capped`].
pub const DEFAULT_BACKGROUND_CAP: usize = 2000;

/// Which engine produced an [`ExplanationMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplainMethod {
    LinearIndependent,
    GaussianObservational,
    Interventional,
}

impl ExplainMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExplainMethod::LinearIndependent => "linear-independent",
            ExplainMethod::GaussianObservational => "gaussian-observational",
            ExplainMethod::Interventional => "interventional",
        }
    }
}

/// Per-row, per-feature attributions plus the baseline they are measured
/// against.
#[derive(Debug, Clone)]
pub struct ExplanationMatrix {
    /// One row of attributions per explained row, one column per feature.
    pub values: DataMatrix,
    /// Baseline prediction; row attributions sum to `f(x) - expected_value`.
    pub expected_value: f64,
    /// Engine that produced the attributions.
    pub method: ExplainMethod,
}

/// Empirical background sample used by the interventional engine.
///
/// Invariant: `means` are exactly the column means of `rows`.
#[derive(Debug, Clone)]
pub struct BackgroundSet {
    rows: DataMatrix,
    means: Vec<f64>,
}

impl BackgroundSet {
    pub fn new(rows: DataMatrix) -> Result<Self> {
        if rows.n_rows() == 0 {
            return Err(Error::invalid("background set must not be empty"));
        }
        let means = rows.column_means();
        Ok(BackgroundSet { rows, means })
    }

    /// Builds a background from `x`, subsampling without replacement down to
    /// `cap` rows when `x` is larger. Selected row indices are sorted so the
    /// background preserves the original row order.
    pub fn capped(x: &DataMatrix, cap: usize, seed: u64) -> Result<Self> {
        if cap == 0 {
            return Err(Error::invalid("background cap must be positive"));
        }
        let n = x.n_rows();
        if n <= cap {
            return Self::new(x.clone());
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = SplitMix64::new(seed);
        // Partial Fisher-Yates: the first `cap` slots end up a uniform
        // sample without replacement.
        for k in 0..cap {
            let r = k + rng.next_below((n - k) as u64) as usize;
            idx.swap(k, r);
        }
        let mut chosen = idx[..cap].to_vec();
        chosen.sort_unstable();
        Self::new(x.gather(&chosen)?)
    }

    pub fn rows(&self) -> &DataMatrix {
        &self.rows
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn len(&self) -> usize {
        self.rows.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.n_rows() == 0
    }
}

/// Auxiliary inputs and engine selection for [`explain`].
#[derive(Debug, Clone, Default)]
pub struct ExplainConfig {
    /// Force a specific engine; `None` picks one from the model type and the
    /// auxiliary data present.
    pub engine: Option<ExplainMethod>,
    /// Feature means for the independence engine.
    pub feature_means: Option<Vec<f64>>,
    /// Joint distribution for the observational engine.
    pub gaussian: Option<GaussianSpec>,
    /// Background sample for the interventional engine.
    pub background: Option<BackgroundSet>,
}

/// Dispatches to an attribution engine based on the model type, the
/// configured engine, and which auxiliary inputs are present.
pub fn explain(model: &Model, x: &DataMatrix, config: &ExplainConfig) -> Result<ExplanationMatrix> {
    let method = match config.engine {
        Some(m) => m,
        None => match model {
            Model::Linear(_) => {
                if config.gaussian.is_some() {
                    ExplainMethod::GaussianObservational
                } else if config.feature_means.is_some() {
                    ExplainMethod::LinearIndependent
                } else if config.background.is_some() {
                    ExplainMethod::Interventional
                } else {
                    return Err(Error::invalid(
                        "explain config supplies no auxiliary data (feature means, \
                         gaussian spec, or background set)",
                    ));
                }
            }
            Model::Gbdt(_) => {
                if config.background.is_some() {
                    ExplainMethod::Interventional
                } else {
                    return Err(Error::invalid(
                        "tree models require a background set for attribution",
                    ));
                }
            }
        },
    };
    match method {
        ExplainMethod::LinearIndependent => {
            let lin = require_linear(model, "linear-independent")?;
            let mu = config.feature_means.as_deref().ok_or_else(|| {
                Error::invalid("linear-independent engine requires feature means")
            })?;
            shap_linear_independent(lin, x, mu)
        }
        ExplainMethod::GaussianObservational => {
            let lin = require_linear(model, "gaussian-observational")?;
            let spec = config.gaussian.as_ref().ok_or_else(|| {
                Error::invalid("gaussian-observational engine requires a gaussian spec")
            })?;
            shap_gaussian_observational(lin, x, spec)
        }
        ExplainMethod::Interventional => {
            let bg = config.background.as_ref().ok_or_else(|| {
                Error::invalid("interventional engine requires a background set")
            })?;
            shap_interventional(model, x, bg)
        }
    }
}

fn require_linear<'m>(model: &'m Model, engine: &str) -> Result<&'m LinearModel> {
    match model {
        Model::Linear(lin) => Ok(lin),
        Model::Gbdt(_) => Err(Error::invalid(format!(
            "the {engine} engine only supports linear models"
        ))),
    }
}

/// Closed-form attributions for a linear model with independent features:
/// `S_j = a_j (x_j - mu_j)`.
pub fn shap_linear_independent(
    model: &LinearModel,
    x: &DataMatrix,
    mu: &[f64],
) -> Result<ExplanationMatrix> {
    let p = model.n_features();
    if x.n_cols() != p {
        return Err(Error::invalid(format!(
            "data has {} columns but the model expects {}",
            x.n_cols(),
            p
        )));
    }
    if mu.len() != p {
        return Err(Error::invalid(format!(
            "got {} feature means for {} features",
            mu.len(),
            p
        )));
    }
    let a = &model.coefficients;
    let mut values = DataMatrix::zeros(x.n_rows(), p);
    for i in 0..x.n_rows() {
        for j in 0..p {
            values.set(i, j, a[j] * (x.get(i, j) - mu[j]));
        }
    }
    let expected_value = model.intercept + dot(a, mu);
    Ok(ExplanationMatrix {
        values,
        expected_value,
        method: ExplainMethod::LinearIndependent,
    })
}

/// Exact observational attributions for a linear model under a joint
/// Gaussian.
///
/// For a coalition `S` of present features, absent features are imputed by
/// `E[X_¬S | X_S = x_S] = mu_¬S + C_¬S,S C_S,S^{-1} (x_S - mu_S)`, which for
/// a linear model collapses the coalition value to a single dot product
/// `w_S . (x_S - mu_S)`. The `w_S` depend only on the model and the
/// distribution, so they are computed once per coalition and reused across
/// rows.
pub fn shap_gaussian_observational(
    model: &LinearModel,
    x: &DataMatrix,
    spec: &GaussianSpec,
) -> Result<ExplanationMatrix> {
    let p = model.n_features();
    if x.n_cols() != p {
        return Err(Error::invalid(format!(
            "data has {} columns but the model expects {}",
            x.n_cols(),
            p
        )));
    }
    if spec.dimension() != p {
        return Err(Error::invalid(format!(
            "gaussian spec has dimension {} but the model expects {}",
            spec.dimension(),
            p
        )));
    }
    if p > MAX_OBSERVATIONAL_FEATURES {
        return Err(Error::CostGuard {
            features: p,
            limit: MAX_OBSERVATIONAL_FEATURES,
        });
    }
    let a = &model.coefficients;
    let mu = spec.mean();
    let full: usize = (1 << p) - 1;

    // w[mask] has one entry per set bit of mask, in ascending feature order.
    let mut w: Vec<Vec<f64>> = vec![Vec::new(); full + 1];
    for (mask, slot) in w.iter_mut().enumerate().skip(1) {
        *slot = coalition_weights(spec.cov_flat(), p, a, mask)?;
    }

    let weights = shapley_order_weights(p);
    let mut values = DataMatrix::zeros(x.n_rows(), p);
    let mut vals = vec![0.0; full + 1];
    for i in 0..x.n_rows() {
        let offset = i * p;
        {
            let row = x.row(i);
            vals[0] = 0.0;
            for mask in 1..=full {
                let mut v = 0.0;
                let mut k = 0;
                for (j, &mj) in mu.iter().enumerate() {
                    if mask & (1 << j) != 0 {
                        v += w[mask][k] * (row[j] - mj);
                        k += 1;
                    }
                }
                vals[mask] = v;
            }
        }
        let out = &mut values.as_mut_slice()[offset..offset + p];
        assemble_row(&vals, p, &weights, out);
    }
    let expected_value = model.intercept + dot(a, mu);
    Ok(ExplanationMatrix {
        values,
        expected_value,
        method: ExplainMethod::GaussianObservational,
    })
}

/// Weight vector `w_S` such that `val(S) = w_S . (x_S - mu_S)` for the
/// observational engine: `w_S = a_S + C_S,S^{-1} C_S,¬S a_¬S`, restricted to
/// the coordinates in `S` (ascending).
fn coalition_weights(cov: &[f64], p: usize, a: &[f64], mask: usize) -> Result<Vec<f64>> {
    let in_s: Vec<usize> = (0..p).filter(|j| mask & (1 << j) != 0).collect();
    let out_s: Vec<usize> = (0..p).filter(|j| mask & (1 << j) == 0).collect();
    let k = in_s.len();
    let mut ws: Vec<f64> = in_s.iter().map(|&j| a[j]).collect();
    if out_s.is_empty() {
        return Ok(ws);
    }
    // b = C_S,¬S a_¬S, then solve C_S,S c = b.
    let sub = DMatrix::from_fn(k, k, |r, c| cov[in_s[r] * p + in_s[c]]);
    let b = DVector::from_fn(k, |r, _| {
        out_s
            .iter()
            .map(|&j| cov[in_s[r] * p + j] * a[j])
            .sum::<f64>()
    });
    let chol = Cholesky::new(sub).ok_or_else(|| {
        Error::Factorization(format!(
            "conditional covariance block for coalition {mask:#b} is not positive definite"
        ))
    })?;
    let c = chol.solve(&b);
    for r in 0..k {
        ws[r] += c[r];
    }
    Ok(ws)
}

/// Exact interventional attributions against an empirical background.
///
/// For a coalition `S`, the value is the background average of the model
/// applied to rows whose `S` coordinates are overwritten with the explained
/// row's, minus `expected_value`. Linear models admit a closed form over
/// background column means; tree ensembles are marginalised exactly by
/// counting, per tree and coalition, the background rows consistent with
/// each leaf's path constraints on absent features. Both are algebraically
/// identical to composing and evaluating every background row.
pub fn shap_interventional(
    model: &Model,
    x: &DataMatrix,
    background: &BackgroundSet,
) -> Result<ExplanationMatrix> {
    shap_interventional_impl(model, x, background, true)
}

/// Single-threaded variant of [`shap_interventional`]; byte-identical
/// output.
pub fn shap_interventional_serial(
    model: &Model,
    x: &DataMatrix,
    background: &BackgroundSet,
) -> Result<ExplanationMatrix> {
    shap_interventional_impl(model, x, background, false)
}

fn shap_interventional_impl(
    model: &Model,
    x: &DataMatrix,
    background: &BackgroundSet,
    parallel: bool,
) -> Result<ExplanationMatrix> {
    let p = model.n_features();
    if x.n_cols() != p {
        return Err(Error::invalid(format!(
            "data has {} columns but the model expects {}",
            x.n_cols(),
            p
        )));
    }
    if background.rows().n_cols() != p {
        return Err(Error::invalid(format!(
            "background has {} columns but the model expects {}",
            background.rows().n_cols(),
            p
        )));
    }
    if p > MAX_INTERVENTIONAL_FEATURES {
        return Err(Error::CostGuard {
            features: p,
            limit: MAX_INTERVENTIONAL_FEATURES,
        });
    }

    // Baseline: mean model prediction over the background, summed in row
    // order.
    let expected_value = {
        let mut s = 0.0;
        for r in background.rows().rows_iter() {
            s += model.predict_row(r);
        }
        s / background.len() as f64
    };

    let vals: CoalitionVals = match model {
        Model::Linear(lin) => CoalitionVals::Linear {
            coeffs: lin.coefficients.clone(),
            intercept: lin.intercept,
            means: background.means().to_vec(),
        },
        Model::Gbdt(gb) => CoalitionVals::Trees(TreeMarginals::build(gb, p, background)),
    };

    let weights = shapley_order_weights(p);
    let full: usize = (1 << p) - 1;
    let n = x.n_rows();
    let mut values = vec![0.0; n * p];
    let row_job = |i: usize, out: &mut [f64]| {
        let row = x.row(i);
        // Every coalition, the empty and full ones included, goes through
        // the same provider: coalition differences for a feature the model
        // ignores are then bitwise zero, so its attribution is exactly 0.
        let mut v = vec![0.0; full + 1];
        for (mask, slot) in v.iter_mut().enumerate() {
            *slot = vals.value(row, mask, expected_value);
        }
        assemble_row(&v, p, &weights, out);
    };
    if parallel {
        values
            .par_chunks_mut(p)
            .enumerate()
            .for_each(|(i, out)| row_job(i, out));
    } else {
        for (i, out) in values.chunks_mut(p).enumerate() {
            row_job(i, out);
        }
    }
    Ok(ExplanationMatrix {
        values: DataMatrix::new(n, p, values)?,
        expected_value,
        method: ExplainMethod::Interventional,
    })
}

/// Coalition value provider for the interventional engine.
enum CoalitionVals {
    Linear {
        coeffs: Vec<f64>,
        intercept: f64,
        means: Vec<f64>,
    },
    Trees(TreeMarginals),
}

impl CoalitionVals {
    fn value(&self, row: &[f64], mask: usize, expected_value: f64) -> f64 {
        match self {
            CoalitionVals::Linear {
                coeffs,
                intercept,
                means,
            } => {
                let mut s = *intercept;
                for (j, &c) in coeffs.iter().enumerate() {
                    let xj = if mask & (1 << j) != 0 { row[j] } else { means[j] };
                    s += c * xj;
                }
                s - expected_value
            }
            CoalitionVals::Trees(tm) => tm.value(row, mask) - expected_value,
        }
    }
}

/// One leaf of a decision tree, flattened to its path constraints.
///
/// A row reaches the leaf iff `lo < x_f <= hi` for every constraint,
/// matching the `<=` split rule used by prediction.
struct MarginLeaf {
    value: f64,
    constraints: Vec<(usize, f64, f64)>,
}

/// Per-tree leaf tables and per-coalition background counts for exact tree
/// marginalisation.
struct TreeMarginals {
    /// For each tree, its leaves in depth-first order.
    leaves: Vec<Vec<MarginLeaf>>,
    /// `counts[tree][mask * n_leaves + leaf]`: background rows satisfying
    /// the leaf's constraints on features outside `mask`.
    counts: Vec<Vec<u32>>,
    base_score: f64,
    learning_rate: f64,
    n_background: f64,
}

impl TreeMarginals {
    fn build(model: &GbdtModel, p: usize, background: &BackgroundSet) -> TreeMarginals {
        let leaves: Vec<Vec<MarginLeaf>> =
            model.trees.iter().map(|t| collect_leaves(t, p)).collect();
        let full: usize = (1 << p) - 1;
        let mut counts = Vec::with_capacity(leaves.len());
        for tree_leaves in &leaves {
            let nl = tree_leaves.len();
            let mut c = vec![0u32; (full + 1) * nl];
            // The empty mask filters on every constraint and the full mask
            // on none; both fall out of the same loop.
            for mask in 0..=full {
                for (li, leaf) in tree_leaves.iter().enumerate() {
                    let mut cnt = 0u32;
                    'rows: for r in background.rows().rows_iter() {
                        for &(f, lo, hi) in &leaf.constraints {
                            if mask & (1 << f) != 0 {
                                continue;
                            }
                            let v = r[f];
                            if !(v > lo && v <= hi) {
                                continue 'rows;
                            }
                        }
                        cnt += 1;
                    }
                    c[mask * nl + li] = cnt;
                }
            }
            counts.push(c);
        }
        TreeMarginals {
            leaves,
            counts,
            base_score: model.base_score,
            learning_rate: model.config.learning_rate,
            n_background: background.len() as f64,
        }
    }

    /// Mean prediction over backgrounds with the masked coordinates pinned
    /// to `row`: a leaf contributes when `row` satisfies its in-mask
    /// constraints, weighted by the count of background rows satisfying the
    /// rest.
    fn value(&self, row: &[f64], mask: usize) -> f64 {
        let mut total = 0.0;
        for (t, tree_leaves) in self.leaves.iter().enumerate() {
            let nl = tree_leaves.len();
            let mut acc = 0.0;
            'leaves: for (li, leaf) in tree_leaves.iter().enumerate() {
                for &(f, lo, hi) in &leaf.constraints {
                    if mask & (1 << f) == 0 {
                        continue;
                    }
                    let v = row[f];
                    if !(v > lo && v <= hi) {
                        continue 'leaves;
                    }
                }
                acc += leaf.value * f64::from(self.counts[t][mask * nl + li]);
            }
            total += acc / self.n_background;
        }
        self.base_score + self.learning_rate * total
    }
}

/// Flattens a tree into its leaves with merged interval constraints along
/// each root-to-leaf path.
fn collect_leaves(tree: &Tree, p: usize) -> Vec<MarginLeaf> {
    let mut lo = vec![f64::NEG_INFINITY; p];
    let mut hi = vec![f64::INFINITY; p];
    let mut out = Vec::new();
    walk(tree, tree.root, &mut lo, &mut hi, &mut out);
    out
}

fn walk(tree: &Tree, node: usize, lo: &mut [f64], hi: &mut [f64], out: &mut Vec<MarginLeaf>) {
    match &tree.nodes[node] {
        TreeNode::Leaf { value, .. } => {
            let constraints = (0..lo.len())
                .filter(|&f| lo[f] != f64::NEG_INFINITY || hi[f] != f64::INFINITY)
                .map(|f| (f, lo[f], hi[f]))
                .collect();
            out.push(MarginLeaf {
                value: *value,
                constraints,
            });
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            let (f, thr) = (*feature, *threshold);
            let saved_hi = hi[f];
            if thr < hi[f] {
                hi[f] = thr;
            }
            walk(tree, *left, lo, hi, out);
            hi[f] = saved_hi;
            let saved_lo = lo[f];
            if thr > lo[f] {
                lo[f] = thr;
            }
            walk(tree, *right, lo, hi, out);
            lo[f] = saved_lo;
        }
    }
}

/// Shapley order weights by coalition size: `weights[t] = t! (p-1-t)! / p!`.
fn shapley_order_weights(p: usize) -> Vec<f64> {
    let mut fact = vec![1u128; p + 1];
    for i in 1..=p {
        fact[i] = fact[i - 1] * i as u128;
    }
    (0..p)
        .map(|t| (fact[t] * fact[p - 1 - t]) as f64 / fact[p] as f64)
        .collect()
}

/// Assembles one row of attributions from coalition values:
/// `S_j = sum over T not containing j of w(|T|) (val(T+j) - val(T))`.
fn assemble_row(vals: &[f64], p: usize, weights: &[f64], out: &mut [f64]) {
    let full: usize = (1 << p) - 1;
    for (j, slot) in out.iter_mut().enumerate() {
        let bit = 1usize << j;
        let rest = full & !bit;
        let mut s = 0.0;
        let mut t = rest;
        loop {
            s += weights[t.count_ones() as usize] * (vals[t | bit] - vals[t]);
            if t == 0 {
                break;
            }
            t = (t - 1) & rest;
        }
        *slot = s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
