//! Shift monitoring: explanation-space shift detection, posterior-shift
//! comparison of paired models, bootstrap degradation quantification, and
//! equal-opportunity fairness metrics.
//!
//! [`detect_shift`] compares a source sample against new data three ways
//! under one fixed model: per-feature input distributions, per-feature
//! attribution distributions, and the prediction distribution. The
//! attribution baseline (feature means or background sample) is always
//! derived from the source side, so the comparison isolates what changed in
//! the data rather than in the reference frame.
//!
//! [`run_quantification`] regresses realized bootstrap loss on distance
//! features. Training pools span a ladder of shift intensities so the
//! regression sees degradation varying; evaluation draws from a held-out
//! pool at the strongest intensity.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::explain::{
    explain, BackgroundSet, ExplainConfig, ExplainMethod, DEFAULT_BACKGROUND_CAP,
};
use crate::models::{
    fit_gbdt, fit_ols, fit_ridge, mean_squared_error, GbdtConfig, LinearModel, Model,
};
use crate::rng::{child_seed, child_seed_indexed, SplitMix64};
use crate::stats::{
    ks_statistic_sorted, per_feature_compare, psi_sorted, run_test, wasserstein_sorted,
    FeatureComparison, TestMethod, TestResult, DEFAULT_PSI_BINS,
};
use crate::synth::{
    sample_mvn, targets, GaussianSpec, SyntheticTask, TargetRule, TaskKind, DEFAULT_NOISE_SD,
};

/// Settings shared by the shift-detection entry points.
#[derive(Debug, Clone)]
pub struct ShiftConfig {
    /// Decision threshold applied to p-values (KS only).
    pub alpha: f64,
    /// Two-sample comparison applied to every column.
    pub test: TestMethod,
    /// Engine selection and optional explicit baselines. Anything left
    /// unset is derived from the source data.
    pub explain: ExplainConfig,
    /// Row cap when a background must be derived from the source.
    pub background_cap: usize,
    /// Seed for the background subsample.
    pub background_seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            alpha: 0.05,
            test: TestMethod::Ks,
            explain: ExplainConfig::default(),
            background_cap: DEFAULT_BACKGROUND_CAP,
            background_seed: 0,
        }
    }
}

/// Outcome of [`detect_shift`]: one comparison per feature on inputs and on
/// attributions, plus the prediction distribution.
#[derive(Debug, Clone)]
pub struct ShiftReport {
    pub input_results: Vec<FeatureComparison>,
    pub explanation_results: Vec<FeatureComparison>,
    pub prediction_result: TestResult,
    pub prediction_distinct: Option<bool>,
    /// Number of input columns with p below alpha.
    pub distinct_input: usize,
    /// Number of attribution columns with p below alpha.
    pub distinct_explanation: usize,
    pub alpha: f64,
    pub method: ExplainMethod,
    /// Baseline the attributions are measured against; identical for both
    /// datasets by construction.
    pub expected_value: f64,
    /// Set when the background was derived here rather than supplied.
    pub background_seed: Option<u64>,
    pub n_src: usize,
    pub n_new: usize,
}

fn count_distinct(results: &[FeatureComparison]) -> usize {
    results.iter().filter(|c| c.distinct == Some(true)).count()
}

fn any_distinct(results: &[FeatureComparison]) -> bool {
    results.iter().any(|c| c.distinct == Some(true))
}

/// Empirical Gaussian fit of a feature table: column means and the sample
/// covariance (denominator n - 1). Fails when the covariance is not
/// positive definite.
pub fn estimate_gaussian(x: &DataMatrix) -> Result<GaussianSpec> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n < 2 {
        return Err(Error::invalid("gaussian estimate needs at least two rows"));
    }
    let means = x.column_means();
    let mut cov = vec![vec![0.0; p]; p];
    for row in x.rows_iter() {
        for a in 0..p {
            let da = row[a] - means[a];
            for b in a..p {
                cov[a][b] += da * (row[b] - means[b]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..p {
        for b in a..p {
            cov[a][b] /= denom;
            cov[b][a] = cov[a][b];
        }
    }
    GaussianSpec::new(means, &cov)
}

/// Fills in whatever baseline the selected engine needs from the source
/// data: feature means for the independence engine, an empirical Gaussian
/// for the observational engine, a capped subsample for the interventional
/// engine. Returns the seed only when a background was derived here.
fn resolve_explain_config(
    model: &Model,
    x_src: &DataMatrix,
    config: &ShiftConfig,
) -> Result<(ExplainConfig, Option<u64>)> {
    let mut ec = config.explain.clone();
    let engine = match ec.engine {
        Some(e) => e,
        None => match model {
            Model::Linear(_) => {
                if ec.gaussian.is_some() {
                    ExplainMethod::GaussianObservational
                } else if ec.background.is_some() {
                    ExplainMethod::Interventional
                } else {
                    ExplainMethod::LinearIndependent
                }
            }
            Model::Gbdt(_) => ExplainMethod::Interventional,
        },
    };
    ec.engine = Some(engine);
    let mut derived_seed = None;
    match engine {
        ExplainMethod::LinearIndependent => {
            if ec.feature_means.is_none() {
                ec.feature_means = Some(x_src.column_means());
            }
        }
        ExplainMethod::GaussianObservational => {
            if ec.gaussian.is_none() {
                ec.gaussian = Some(estimate_gaussian(x_src)?);
            }
        }
        ExplainMethod::Interventional => {
            if ec.background.is_none() {
                ec.background = Some(BackgroundSet::capped(
                    x_src,
                    config.background_cap,
                    config.background_seed,
                )?);
                derived_seed = Some(config.background_seed);
            }
        }
    }
    Ok((ec, derived_seed))
}

/// Compares source and new data under a fixed model: per-feature input
/// tests, per-feature attribution tests, and a prediction-distribution
/// test, all with the same method and alpha. Attributions for both
/// datasets use one engine and one source-derived baseline.
pub fn detect_shift(
    model: &Model,
    x_src: &DataMatrix,
    x_new: &DataMatrix,
    config: &ShiftConfig,
) -> Result<ShiftReport> {
    if x_src.n_cols() != x_new.n_cols() {
        return Err(Error::invalid(format!(
            "source has {} feature columns, new data has {}",
            x_src.n_cols(),
            x_new.n_cols()
        )));
    }
    if model.n_features() != x_src.n_cols() {
        return Err(Error::invalid(format!(
            "model expects {} features, data has {}",
            model.n_features(),
            x_src.n_cols()
        )));
    }
    let (ec, background_seed) = resolve_explain_config(model, x_src, config)?;
    let s_src = explain(model, x_src, &ec)?;
    let s_new = explain(model, x_new, &ec)?;

    let input_results = per_feature_compare(x_src, x_new, config.test, config.alpha)?;
    let explanation_results =
        per_feature_compare(&s_src.values, &s_new.values, config.test, config.alpha)?;
    let prediction_result = run_test(config.test, &model.predict(x_src)?, &model.predict(x_new)?)?;
    let prediction_distinct = prediction_result.p_value.map(|p| p < config.alpha);

    Ok(ShiftReport {
        distinct_input: count_distinct(&input_results),
        distinct_explanation: count_distinct(&explanation_results),
        input_results,
        explanation_results,
        prediction_result,
        prediction_distinct,
        alpha: config.alpha,
        method: s_src.method,
        expected_value: s_src.expected_value,
        background_seed,
        n_src: x_src.n_rows(),
        n_new: x_new.n_rows(),
    })
}

/// Outcome of [`posterior_shift_experiment`]: the four comparisons of the
/// posterior-shift scenario. Inputs and explanations are per-feature and
/// count as distinct when any column is.
#[derive(Debug, Clone)]
pub struct PosteriorShiftReport {
    pub input_results: Vec<FeatureComparison>,
    pub input_distinct: bool,
    pub target_result: TestResult,
    pub target_distinct: Option<bool>,
    pub prediction_result: TestResult,
    pub prediction_distinct: Option<bool>,
    pub explanation_results: Vec<FeatureComparison>,
    pub explanation_distinct: bool,
    pub alpha: f64,
    pub method: ExplainMethod,
    pub n: usize,
}

fn fit_for_rule(rule: TargetRule, x: &DataMatrix, y: &[f64]) -> Result<Model> {
    match rule {
        TargetRule::LinearAB { .. } | TargetRule::LinearBA { .. } | TargetRule::Linear2of3 { .. } => {
            Ok(Model::Linear(fit_ols(x, y)?))
        }
        _ => Ok(Model::Gbdt(fit_gbdt(x, y, GbdtConfig::default())?)),
    }
}

/// Materializes a posterior-shift task, trains one model per labeling, and
/// compares inputs, targets, predictions, and explanations. Explanations of
/// both models are computed on the same source inputs, isolating the change
/// in the fitted function. Predictions are compared with each model on its
/// own training design; the two samples are then independent and identically
/// distributed under the swapped labeling, so the null holds exactly, where
/// a shared design would pit in-sample against out-of-sample predictions and
/// flag fitting artifacts instead of behavior.
pub fn posterior_shift_experiment(
    task: &SyntheticTask,
    config: &ShiftConfig,
) -> Result<PosteriorShiftReport> {
    if task.name != TaskKind::PosteriorShift {
        return Err(Error::invalid(
            "posterior_shift_experiment needs a posterior-shift task",
        ));
    }
    let data = crate::synth::make_task_data(task)?;
    let model_f = fit_for_rule(task.target_rule, &data.x_train, &data.y_train)?;
    let model_h = fit_for_rule(task.target_rule, &data.x_ood, &data.y_ood)?;

    let (ec, _) = resolve_explain_config(&model_f, &data.x_train, config)?;
    let s_f = explain(&model_f, &data.x_train, &ec)?;
    let s_h = explain(&model_h, &data.x_train, &ec)?;

    let input_results =
        per_feature_compare(&data.x_train, &data.x_ood, config.test, config.alpha)?;
    let target_result = run_test(config.test, &data.y_train, &data.y_ood)?;
    let prediction_result = run_test(
        config.test,
        &model_f.predict(&data.x_train)?,
        &model_h.predict(&data.x_ood)?,
    )?;
    let explanation_results =
        per_feature_compare(&s_f.values, &s_h.values, config.test, config.alpha)?;

    Ok(PosteriorShiftReport {
        input_distinct: any_distinct(&input_results),
        target_distinct: target_result.p_value.map(|p| p < config.alpha),
        prediction_distinct: prediction_result.p_value.map(|p| p < config.alpha),
        explanation_distinct: any_distinct(&explanation_results),
        input_results,
        target_result,
        prediction_result,
        explanation_results,
        alpha: config.alpha,
        method: s_f.method,
        n: task.sample_count,
    })
}

/// What the degradation regressor sees per bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// Per-feature distances on raw input columns.
    DistributionShift,
    /// Per-feature distances on attribution columns.
    ExplanationShift,
    /// Distribution distances followed by explanation distances.
    Both,
    /// A single distance on the prediction vector.
    PredictionShift,
}

impl InputMode {
    pub fn feature_count(&self, p: usize) -> usize {
        match self {
            InputMode::DistributionShift | InputMode::ExplanationShift => p,
            InputMode::Both => 2 * p,
            InputMode::PredictionShift => 1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            InputMode::DistributionShift => "distribution",
            InputMode::ExplanationShift => "explanation",
            InputMode::Both => "both",
            InputMode::PredictionShift => "prediction",
        }
    }

    fn needs_explanations(&self) -> bool {
        matches!(self, InputMode::ExplanationShift | InputMode::Both)
    }
}

/// Distance features and realized losses for a set of bootstraps, plus the
/// metadata needed to fit and evaluate a degradation regressor on them.
#[derive(Debug, Clone)]
pub struct DegradationData {
    /// One row per bootstrap, one column per distance feature.
    pub features: DataMatrix,
    /// Realized per-bootstrap loss MSE(f(X_b), y_b).
    pub targets: Vec<f64>,
    /// MSE of the model on the source data it was trained against.
    pub train_mse: f64,
    pub distance_method: TestMethod,
    pub input_mode: InputMode,
    /// Rows drawn per bootstrap.
    pub sample_size: usize,
    pub seed: u64,
}

/// Linear degradation regressor with its training provenance.
#[derive(Debug, Clone)]
pub struct DegradationModel {
    pub estimator: LinearModel,
    pub distance_method: TestMethod,
    pub input_mode: InputMode,
    /// Number of training bootstraps.
    pub bootstrap_count: usize,
    /// Rows drawn per bootstrap.
    pub sample_size: usize,
    pub seed: u64,
    /// True when plain least squares was rank deficient and the ridge
    /// fallback (lambda = 1e-6) produced the estimator.
    pub ridge_fallback: bool,
}

/// Ridge penalty applied when the degradation design is rank deficient.
const RIDGE_FALLBACK_LAMBDA: f64 = 1e-6;

fn sorted_column(x: &DataMatrix, j: usize) -> Vec<f64> {
    let mut c = x.column(j);
    c.sort_by(f64::total_cmp);
    c
}

/// Distance between a presorted reference sample and a bootstrap sample.
/// The bootstrap side arrives unsorted and is sorted in place when the
/// method needs it.
fn sorted_distance(method: TestMethod, reference: &[f64], boot: &mut [f64]) -> Result<f64> {
    match method {
        TestMethod::Ks => {
            boot.sort_by(f64::total_cmp);
            Ok(ks_statistic_sorted(reference, boot))
        }
        TestMethod::Wasserstein => {
            boot.sort_by(f64::total_cmp);
            Ok(wasserstein_sorted(reference, boot))
        }
        TestMethod::Psi => psi_sorted(reference, boot, DEFAULT_PSI_BINS),
    }
}

/// Builds the degradation training table: for each bootstrap, `sample_size`
/// pool rows drawn with replacement, distance features against the source
/// reference, and the realized loss as target. Attribution baselines come
/// from the source data and are fixed across bootstraps. Bootstraps are
/// processed in parallel; per-index derived seeds make the result identical
/// to a sequential pass.
#[allow(clippy::too_many_arguments)]
pub fn build_degradation_data(
    model: &Model,
    x_src: &DataMatrix,
    y_src: &[f64],
    pool_x: &DataMatrix,
    pool_y: &[f64],
    bootstrap_count: usize,
    sample_size: usize,
    distance_method: TestMethod,
    input_mode: InputMode,
    seed: u64,
) -> Result<DegradationData> {
    let p = x_src.n_cols();
    if pool_x.n_cols() != p || model.n_features() != p {
        return Err(Error::invalid(
            "model, source, and pool must agree on feature count",
        ));
    }
    if x_src.n_rows() != y_src.len() || pool_x.n_rows() != pool_y.len() {
        return Err(Error::invalid("feature tables and targets disagree on length"));
    }
    if pool_x.n_rows() == 0 {
        return Err(Error::invalid("bootstrap pool must not be empty"));
    }
    if bootstrap_count == 0 || sample_size == 0 {
        return Err(Error::invalid("bootstrap_count and sample_size must be positive"));
    }

    let train_mse = mean_squared_error(&model.predict(x_src)?, y_src)?;
    let pool_pred = model.predict(pool_x)?;
    let pool_sq_err: Vec<f64> = pool_pred
        .iter()
        .zip(pool_y)
        .map(|(f, y)| (f - y) * (f - y))
        .collect();

    // Reference samples, sorted once; bootstraps only sort their own draws.
    let mut ref_input: Vec<Vec<f64>> = Vec::new();
    let mut ref_expl: Vec<Vec<f64>> = Vec::new();
    let mut expl_pool: Option<DataMatrix> = None;
    let mut ref_pred: Vec<f64> = Vec::new();
    match input_mode {
        InputMode::DistributionShift => {
            ref_input = (0..p).map(|j| sorted_column(x_src, j)).collect();
        }
        InputMode::ExplanationShift | InputMode::Both => {
            if input_mode == InputMode::Both {
                ref_input = (0..p).map(|j| sorted_column(x_src, j)).collect();
            }
            let ec = degradation_explain_config(model, x_src, seed)?;
            let s_src = explain(model, x_src, &ec)?;
            ref_expl = (0..p).map(|j| sorted_column(&s_src.values, j)).collect();
            expl_pool = Some(explain(model, pool_x, &ec)?.values);
        }
        InputMode::PredictionShift => {
            let mut sp = model.predict(x_src)?;
            sp.sort_by(f64::total_cmp);
            ref_pred = sp;
        }
    }
    let expl_pool = expl_pool;

    let k = input_mode.feature_count(p);
    let mut features = DataMatrix::zeros(bootstrap_count, k);
    let mut targets = vec![0.0; bootstrap_count];
    let pool_n = pool_x.n_rows() as u64;

    features
        .as_mut_slice()
        .par_chunks_mut(k)
        .zip(targets.par_iter_mut())
        .enumerate()
        .try_for_each(|(b, (feat_row, target))| -> Result<()> {
            let mut rng = SplitMix64::new(child_seed_indexed(seed, "bootstrap", b as u64));
            let idx: Vec<usize> = (0..sample_size)
                .map(|_| rng.next_below(pool_n) as usize)
                .collect();
            let mut slot = 0;
            let mut boot = vec![0.0; sample_size];
            if matches!(input_mode, InputMode::DistributionShift | InputMode::Both) {
                for (j, reference) in ref_input.iter().enumerate() {
                    for (t, &i) in idx.iter().enumerate() {
                        boot[t] = pool_x.get(i, j);
                    }
                    feat_row[slot] = sorted_distance(distance_method, reference, &mut boot)?;
                    slot += 1;
                }
            }
            if input_mode.needs_explanations() {
                let pool_s = expl_pool.as_ref().unwrap();
                for (j, reference) in ref_expl.iter().enumerate() {
                    for (t, &i) in idx.iter().enumerate() {
                        boot[t] = pool_s.get(i, j);
                    }
                    feat_row[slot] = sorted_distance(distance_method, reference, &mut boot)?;
                    slot += 1;
                }
            }
            if input_mode == InputMode::PredictionShift {
                for (t, &i) in idx.iter().enumerate() {
                    boot[t] = pool_pred[i];
                }
                feat_row[slot] = sorted_distance(distance_method, &ref_pred, &mut boot)?;
            }
            *target = idx.iter().map(|&i| pool_sq_err[i]).sum::<f64>() / sample_size as f64;
            Ok(())
        })?;

    Ok(DegradationData {
        features,
        targets,
        train_mse,
        distance_method,
        input_mode,
        sample_size,
        seed,
    })
}

/// Attribution setup for bootstrap explanations: closed form with source
/// means for linear models, background marginalisation with a capped source
/// subsample for trees.
fn degradation_explain_config(
    model: &Model,
    x_src: &DataMatrix,
    seed: u64,
) -> Result<ExplainConfig> {
    let mut ec = ExplainConfig::default();
    match model {
        Model::Linear(_) => {
            ec.engine = Some(ExplainMethod::LinearIndependent);
            ec.feature_means = Some(x_src.column_means());
        }
        Model::Gbdt(_) => {
            ec.engine = Some(ExplainMethod::Interventional);
            ec.background = Some(BackgroundSet::capped(
                x_src,
                DEFAULT_BACKGROUND_CAP,
                child_seed(seed, "background"),
            )?);
        }
    }
    Ok(ec)
}

/// Fits the degradation regressor by least squares, falling back to ridge
/// with a tiny penalty when the design is rank deficient.
pub fn fit_degradation(data: &DegradationData) -> Result<DegradationModel> {
    let (estimator, ridge_fallback) = match fit_ols(&data.features, &data.targets) {
        Ok(m) => (m, false),
        Err(Error::Factorization(_)) => (
            fit_ridge(&data.features, &data.targets, RIDGE_FALLBACK_LAMBDA)?,
            true,
        ),
        Err(e) => return Err(e),
    };
    Ok(DegradationModel {
        estimator,
        distance_method: data.distance_method,
        input_mode: data.input_mode,
        bootstrap_count: data.targets.len(),
        sample_size: data.sample_size,
        seed: data.seed,
        ridge_fallback,
    })
}

/// Held-out accuracy of a degradation regressor.
#[derive(Debug, Clone)]
pub struct DegradationEvaluation {
    /// Mean absolute error of the regressor's predicted loss.
    pub mae: f64,
    /// Error of assuming no degradation at all, predicting the training MSE
    /// for every bootstrap.
    pub no_change_mae: f64,
}

/// Evaluates a fitted regressor on held-out bootstraps: mean absolute error
/// between predicted and realized loss, alongside the no-change baseline.
pub fn evaluate_degradation(
    model: &DegradationModel,
    eval_features: &DataMatrix,
    eval_targets: &[f64],
    train_mse: f64,
) -> Result<DegradationEvaluation> {
    if eval_features.n_rows() != eval_targets.len() || eval_targets.is_empty() {
        return Err(Error::invalid(
            "evaluation features and targets disagree on length",
        ));
    }
    let pred = model.estimator.predict(eval_features)?;
    let n = eval_targets.len() as f64;
    let mae = pred
        .iter()
        .zip(eval_targets)
        .map(|(g, t)| (g - t).abs())
        .sum::<f64>()
        / n;
    let no_change_mae = eval_targets
        .iter()
        .map(|t| (train_mse - t).abs())
        .sum::<f64>()
        / n;
    Ok(DegradationEvaluation { mae, no_change_mae })
}

/// Dummy mean regressor: predicts the mean training target for every
/// evaluation bootstrap.
pub fn dummy_baseline_mae(train_targets: &[f64], eval_targets: &[f64]) -> Result<f64> {
    if train_targets.is_empty() || eval_targets.is_empty() {
        return Err(Error::invalid("dummy baseline needs nonempty target vectors"));
    }
    let c = train_targets.iter().sum::<f64>() / train_targets.len() as f64;
    Ok(eval_targets.iter().map(|t| (c - t).abs()).sum::<f64>() / eval_targets.len() as f64)
}

/// Settings for the end-to-end quantification experiment on the
/// covariance-shift task.
#[derive(Debug, Clone)]
pub struct QuantifyConfig {
    /// Rows in the source sample and in each pool.
    pub n: usize,
    /// Total training bootstraps, split evenly across the ladder.
    pub bootstraps: usize,
    /// Held-out bootstraps drawn from the evaluation pool.
    pub eval_bootstraps: usize,
    /// Rows drawn per bootstrap.
    pub sample_size: usize,
    pub distance: TestMethod,
    pub input_mode: InputMode,
    pub seed: u64,
    /// Correlation levels of the training pools. Training bootstraps must
    /// see degradation varying, so the ladder spans from none to the
    /// evaluation level.
    pub rho_ladder: Vec<f64>,
    /// Correlation of the held-out evaluation pool.
    pub eval_rho: f64,
}

impl Default for QuantifyConfig {
    fn default() -> Self {
        QuantifyConfig {
            n: 10_000,
            bootstraps: 2000,
            eval_bootstraps: 500,
            sample_size: 1000,
            distance: TestMethod::Wasserstein,
            input_mode: InputMode::ExplanationShift,
            seed: 0,
            rho_ladder: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            eval_rho: 0.8,
        }
    }
}

/// Outcome of [`run_quantification`].
#[derive(Debug, Clone)]
pub struct QuantifyOutcome {
    pub model: DegradationModel,
    /// Held-out mean absolute error of the fitted regressor.
    pub mae: f64,
    /// Error of predicting the training MSE everywhere.
    pub no_change_mae: f64,
    /// Error of the dummy mean regressor.
    pub dummy_mae: f64,
    pub train_mse: f64,
    pub rho_ladder: Vec<f64>,
    pub eval_rho: f64,
}

/// End-to-end degradation quantification on the covariance-shift scenario:
/// trains a boosted model on independent features, builds bootstrap
/// distance data from pools across the correlation ladder, fits the linear
/// degradation regressor, and evaluates it on bootstraps from a held-out
/// pool at the evaluation correlation.
///
/// Every pool pass receives the same top-level seed, so the derived
/// attribution background is shared everywhere and bootstrap index streams
/// are common random numbers across pools.
pub fn run_quantification(config: &QuantifyConfig) -> Result<QuantifyOutcome> {
    if config.rho_ladder.is_empty() {
        return Err(Error::invalid("rho ladder must not be empty"));
    }
    if config.bootstraps < config.rho_ladder.len() {
        return Err(Error::invalid(
            "need at least one bootstrap per ladder level",
        ));
    }
    if config.n < 100 {
        return Err(Error::invalid("quantification needs n of at least 100"));
    }
    let seed = config.seed;
    let source_spec = GaussianSpec::bivariate_unit([0.0, 0.0], 0.0)?;
    let x_src = sample_mvn(&source_spec, config.n, child_seed(seed, "x-train"));
    let y_src = targets(
        &x_src,
        TargetRule::Product,
        DEFAULT_NOISE_SD,
        child_seed(seed, "noise-train"),
    )?;
    let model = Model::Gbdt(fit_gbdt(&x_src, &y_src, GbdtConfig::default())?);

    let levels = config.rho_ladder.len();
    let base = config.bootstraps / levels;
    let extra = config.bootstraps % levels;
    let mut parts: Vec<DegradationData> = Vec::with_capacity(levels);
    for (kidx, &rho) in config.rho_ladder.iter().enumerate() {
        let spec = GaussianSpec::bivariate_unit([0.0, 0.0], rho)?;
        let pool_x = sample_mvn(
            &spec,
            config.n,
            child_seed_indexed(seed, "pool-x", kidx as u64),
        );
        let pool_y = targets(
            &pool_x,
            TargetRule::Product,
            DEFAULT_NOISE_SD,
            child_seed_indexed(seed, "pool-y", kidx as u64),
        )?;
        let b_k = base + usize::from(kidx < extra);
        parts.push(build_degradation_data(
            &model,
            &x_src,
            &y_src,
            &pool_x,
            &pool_y,
            b_k,
            config.sample_size,
            config.distance,
            config.input_mode,
            seed,
        )?);
    }
    let train = stack_degradation(parts)?;
    let g = fit_degradation(&train)?;

    let eval_spec = GaussianSpec::bivariate_unit([0.0, 0.0], config.eval_rho)?;
    let eval_x = sample_mvn(&eval_spec, config.n, child_seed(seed, "eval-x"));
    let eval_y = targets(
        &eval_x,
        TargetRule::Product,
        DEFAULT_NOISE_SD,
        child_seed(seed, "eval-y"),
    )?;
    let eval = build_degradation_data(
        &model,
        &x_src,
        &y_src,
        &eval_x,
        &eval_y,
        config.eval_bootstraps,
        config.sample_size,
        config.distance,
        config.input_mode,
        seed,
    )?;

    let evaluation = evaluate_degradation(&g, &eval.features, &eval.targets, train.train_mse)?;
    let dummy_mae = dummy_baseline_mae(&train.targets, &eval.targets)?;
    Ok(QuantifyOutcome {
        model: g,
        mae: evaluation.mae,
        no_change_mae: evaluation.no_change_mae,
        dummy_mae,
        train_mse: train.train_mse,
        rho_ladder: config.rho_ladder.clone(),
        eval_rho: config.eval_rho,
    })
}

/// Concatenates per-pool degradation tables. All parts must agree on the
/// feature layout and metadata.
fn stack_degradation(parts: Vec<DegradationData>) -> Result<DegradationData> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("nothing to stack"))?;
    let k = first.features.n_cols();
    let meta = (
        first.distance_method,
        first.input_mode,
        first.sample_size,
        first.seed,
    );
    let total: usize = parts.iter().map(|d| d.targets.len()).sum();
    let mut features = DataMatrix::zeros(total, k);
    let mut targets = Vec::with_capacity(total);
    let mut row = 0;
    let train_mse = first.train_mse;
    for part in &parts {
        if part.features.n_cols() != k
            || (
                part.distance_method,
                part.input_mode,
                part.sample_size,
                part.seed,
            ) != meta
            || part.train_mse != train_mse
        {
            return Err(Error::invalid("degradation parts disagree on layout"));
        }
        for i in 0..part.features.n_rows() {
            features.row_mut(row).copy_from_slice(part.features.row(i));
            row += 1;
        }
        targets.extend_from_slice(&part.targets);
    }
    Ok(DegradationData {
        features,
        targets,
        train_mse,
        distance_method: meta.0,
        input_mode: meta.1,
        sample_size: meta.2,
        seed: meta.3,
    })
}

/// Per-group true positive rates and the equal-opportunity difference.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessResult {
    pub tpr_by_group: BTreeMap<String, f64>,
    /// Reference-group TPR minus protected-group TPR.
    pub eof: f64,
}

/// True positive rate per group plus the equal-opportunity fairness gap
/// between a reference and a protected group. Every group present in the
/// labels must contain at least one positive; a group whose positives are
/// all predicted negative has a valid TPR of zero.
pub fn fairness_metrics(
    y_true: &[bool],
    y_pred: &[bool],
    groups: &[&str],
    reference: &str,
    protected: &str,
) -> Result<FairnessResult> {
    let n = y_true.len();
    if n == 0 || y_pred.len() != n || groups.len() != n {
        return Err(Error::invalid(
            "fairness inputs must be nonempty and equal in length",
        ));
    }
    let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
    let mut pos: BTreeMap<&str, usize> = BTreeMap::new();
    for i in 0..n {
        let e = pos.entry(groups[i]).or_insert(0);
        tp.entry(groups[i]).or_insert(0);
        if y_true[i] {
            *e += 1;
            if y_pred[i] {
                *tp.get_mut(groups[i]).unwrap() += 1;
            }
        }
    }
    for (g, label) in [(reference, "reference"), (protected, "protected")] {
        if !pos.contains_key(g) {
            return Err(Error::invalid(format!(
                "{label} group {g:?} does not appear in the data"
            )));
        }
    }
    let mut tpr_by_group = BTreeMap::new();
    for (&g, &p) in &pos {
        if p == 0 {
            return Err(Error::UndefinedTpr {
                group: g.to_string(),
            });
        }
        tpr_by_group.insert(g.to_string(), tp[g] as f64 / p as f64);
    }
    let eof = tpr_by_group[reference] - tpr_by_group[protected];
    Ok(FairnessResult { tpr_by_group, eof })
}
