//! Command-line experiment runner.
//!
//! `xshift run` materializes one synthetic scenario, trains the model it
//! calls for, runs the configured comparison, and prints a report to
//! stdout. All timing goes to stderr so the report bytes depend only on
//! the flags and the seed.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::explain::ExplainConfig;
use crate::models::{fit_gbdt, fit_ols, GbdtConfig, Model};
use crate::monitor::{
    detect_shift, fairness_metrics, posterior_shift_experiment, run_quantification, InputMode,
    QuantifyConfig, ShiftConfig, ShiftReport,
};
use crate::report::{
    emit, json_escape, verdict, OutputFormat, Report, ReportConfig, ReportMetadata, ReportRow,
    REPORT_SCHEMA,
};
use crate::rng::child_seed_indexed;
use crate::stats::{run_test, FeatureComparison, TestMethod};
use crate::synth::{make_task_data, SyntheticTask, TaskData};

const DEFAULT_N: usize = 50_000;
const QUICK_N: usize = 5_000;
const DEFAULT_BOOTSTRAPS: usize = 2_000;
const QUICK_BOOTSTRAPS: usize = 200;

/// Linear coefficients used when an experiment needs a linear labeling:
/// posterior shift swaps the two, the unused-feature variant drops the third.
const LINEAR_ALPHA: f64 = 2.0;
const LINEAR_BETA: f64 = 1.0;

#[derive(Debug, Parser)]
#[command(name = "xshift", version, about = "Explanation-space shift detection experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and print its report.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    /// Covariance shift detected in explanation space only.
    Multivariate,
    /// Swapped target relation with unchanged marginals.
    Posterior,
    /// Shift confined to a feature the model ignores.
    Unused,
    /// Degradation quantification over bootstrap distances.
    Quantify,
    /// Fairness metrics on a fixed hand-built cohort.
    FairnessDemo,
}

impl ExperimentArg {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentArg::Multivariate => "multivariate",
            ExperimentArg::Posterior => "posterior",
            ExperimentArg::Unused => "unused",
            ExperimentArg::Quantify => "quantify",
            ExperimentArg::FairnessDemo => "fairness-demo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    LinearIndep,
    GaussianObs,
    Interventional,
}

impl EngineArg {
    pub fn as_str(&self) -> &'static str {
        match self {
            EngineArg::LinearIndep => "linear-indep",
            EngineArg::GaussianObs => "gaussian-obs",
            EngineArg::Interventional => "interventional",
        }
    }

    fn to_method(self) -> crate::explain::ExplainMethod {
        match self {
            EngineArg::LinearIndep => crate::explain::ExplainMethod::LinearIndependent,
            EngineArg::GaussianObs => crate::explain::ExplainMethod::GaussianObservational,
            EngineArg::Interventional => crate::explain::ExplainMethod::Interventional,
        }
    }

    /// The closed-form engines assume a linear model; only the
    /// interventional engine handles trees.
    fn wants_linear_model(self) -> bool {
        !matches!(self, EngineArg::Interventional)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistanceArg {
    Ks,
    Wasserstein,
    Psi,
}

impl DistanceArg {
    fn to_method(self) -> TestMethod {
        match self {
            DistanceArg::Ks => TestMethod::Ks,
            DistanceArg::Wasserstein => TestMethod::Wasserstein,
            DistanceArg::Psi => TestMethod::Psi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputModeArg {
    Distribution,
    Explanation,
    Both,
    Prediction,
}

impl InputModeArg {
    fn to_mode(self) -> InputMode {
        match self {
            InputModeArg::Distribution => InputMode::DistributionShift,
            InputModeArg::Explanation => InputMode::ExplanationShift,
            InputModeArg::Both => InputMode::Both,
            InputModeArg::Prediction => InputMode::PredictionShift,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
    Markdown,
}

impl FormatArg {
    fn to_format(self) -> OutputFormat {
        match self {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Markdown => OutputFormat::Markdown,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment to run.
    #[arg(long, value_enum)]
    pub experiment: ExperimentArg,

    /// Sample count. Defaults to 50000, or 5000 under --quick.
    #[arg(long)]
    pub n: Option<usize>,

    /// Top-level seed; every sample is drawn from a labeled child stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Decision threshold for p-valued comparisons.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Attribution engine.
    #[arg(long, value_enum, default_value_t = EngineArg::Interventional)]
    pub engine: EngineArg,

    /// Two-sample comparison.
    #[arg(long, value_enum, default_value_t = DistanceArg::Ks)]
    pub distance: DistanceArg,

    /// Feature block for the degradation regressor (quantify only).
    #[arg(long = "input-mode", value_enum, default_value_t = InputModeArg::Explanation)]
    pub input_mode: InputModeArg,

    /// Training bootstrap count (quantify only). Defaults to 2000, or 200
    /// under --quick.
    #[arg(long = "B")]
    pub bootstraps: Option<usize>,

    /// Rows drawn per bootstrap (quantify only).
    #[arg(long = "m", default_value_t = 1000)]
    pub sample_size: usize,

    /// Report format.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,

    /// Also write the report to this path.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Fast mode: n=5000 and B=200 unless set explicitly.
    #[arg(long)]
    pub quick: bool,
}

/// Fully resolved run settings after defaults, --quick, and the
/// XSHIFT_SEED override.
#[derive(Debug, Clone)]
struct Resolved {
    experiment: ExperimentArg,
    n: usize,
    seed: u64,
    alpha: f64,
    engine: EngineArg,
    distance: DistanceArg,
    input_mode: InputModeArg,
    bootstraps: usize,
    sample_size: usize,
    quick: bool,
    format: OutputFormat,
    out: Option<PathBuf>,
}

fn resolve(args: &RunArgs, env_seed: Option<&str>) -> Result<Resolved> {
    let seed = match env_seed {
        Some(raw) => raw.trim().parse::<u64>().map_err(|_| {
            Error::invalid(format!(
                "XSHIFT_SEED must be an unsigned integer, got {raw:?}"
            ))
        })?,
        None => args.seed,
    };
    let n = args
        .n
        .unwrap_or(if args.quick { QUICK_N } else { DEFAULT_N });
    let bootstraps = args.bootstraps.unwrap_or(if args.quick {
        QUICK_BOOTSTRAPS
    } else {
        DEFAULT_BOOTSTRAPS
    });
    if n < 100 {
        return Err(Error::invalid(format!("n must be at least 100, got {n}")));
    }
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie strictly between 0 and 1, got {}",
            args.alpha
        )));
    }
    if args.sample_size == 0 {
        return Err(Error::invalid("m must be positive"));
    }
    Ok(Resolved {
        experiment: args.experiment,
        n,
        seed,
        alpha: args.alpha,
        engine: args.engine,
        distance: args.distance,
        input_mode: args.input_mode,
        bootstraps,
        sample_size: args.sample_size,
        quick: args.quick,
        format: args.format.to_format(),
        out: args.out.clone(),
    })
}

fn report_config(r: &Resolved) -> ReportConfig {
    ReportConfig {
        experiment: r.experiment.as_str().to_string(),
        n: r.n,
        seed: r.seed,
        alpha: r.alpha,
        engine: r.engine.as_str().to_string(),
        distance: r.distance.to_method().name().to_string(),
        input_mode: r.input_mode.to_mode().as_str().to_string(),
        bootstraps: r.bootstraps,
        sample_size: r.sample_size,
        quick: r.quick,
    }
}

fn shift_config(r: &Resolved) -> ShiftConfig {
    ShiftConfig {
        alpha: r.alpha,
        test: r.distance.to_method(),
        explain: ExplainConfig {
            engine: Some(r.engine.to_method()),
            ..ExplainConfig::default()
        },
        ..ShiftConfig::default()
    }
}

fn fit_experiment_model(engine: EngineArg, x: &DataMatrix, y: &[f64]) -> Result<Model> {
    if engine.wants_linear_model() {
        Ok(Model::Linear(fit_ols(x, y)?))
    } else {
        Ok(Model::Gbdt(fit_gbdt(x, y, GbdtConfig::default())?))
    }
}

fn row_from(comparison: String, result: &crate::stats::TestResult, alpha: f64) -> ReportRow {
    ReportRow {
        comparison,
        statistic: result.statistic,
        p_value: result.p_value,
        verdict: verdict(result.p_value, alpha),
    }
}

fn feature_row(
    prefix: &FeatureComparison,
    alpha: f64,
    name: impl FnOnce(usize) -> String,
) -> ReportRow {
    row_from(name(prefix.feature + 1), &prefix.result, alpha)
}

fn task_seeds(seed: u64) -> BTreeMap<String, u64> {
    let mut seeds = BTreeMap::new();
    for label in ["x-train", "x-ood", "noise-train", "noise-ood"] {
        seeds.insert(label.to_string(), crate::rng::child_seed(seed, label));
    }
    seeds
}

fn metadata(engine: &str, derived_seeds: BTreeMap<String, u64>) -> ReportMetadata {
    ReportMetadata {
        version: env!("CARGO_PKG_VERSION").to_string(),
        engine: engine.to_string(),
        derived_seeds,
    }
}

fn assemble(r: &Resolved, rows: Vec<ReportRow>, meta: ReportMetadata) -> Report {
    Report {
        schema: REPORT_SCHEMA.to_string(),
        config: report_config(r),
        rows,
        metadata: meta,
    }
}

fn shift_seeds(seed: u64, rep: &ShiftReport) -> BTreeMap<String, u64> {
    let mut seeds = task_seeds(seed);
    if let Some(bg) = rep.background_seed {
        seeds.insert("background".to_string(), bg);
    }
    seeds
}

/// Covariance shift: input marginals match, the explanation distribution
/// does not. One row per feature for inputs, then one per feature for
/// attributions.
fn run_multivariate(r: &Resolved) -> Result<Report> {
    let task = SyntheticTask::multivariate(r.n, r.seed)?;
    let data = make_task_data(&task)?;
    let model = fit_experiment_model(r.engine, &data.x_train, &data.y_train)?;
    let rep = detect_shift(&model, &data.x_train, &data.x_ood, &shift_config(r))?;

    let mut rows = Vec::with_capacity(rep.input_results.len() + rep.explanation_results.len());
    for fc in &rep.input_results {
        rows.push(feature_row(fc, r.alpha, |j| format!("P(X{j}) vs P(X{j}^ood)")));
    }
    for fc in &rep.explanation_results {
        rows.push(feature_row(fc, r.alpha, |j| {
            format!("P(S{j}(f,X)) vs P(S{j}(f,X^ood))")
        }));
    }
    let meta = metadata(rep.method.as_str(), shift_seeds(r.seed, &rep));
    Ok(assemble(r, rows, meta))
}

/// Posterior shift: four aggregate rows. Per-feature blocks collapse to
/// their worst case (max statistic, min p), matching the any-column
/// distinctness rule.
fn run_posterior(r: &Resolved) -> Result<Report> {
    // The linear coefficient swap under every engine, so the engine flag
    // varies attribution only. The squared-product variant stays in the
    // library, but two independently boosted fits carry enough function
    // fluctuation that their prediction distributions alone separate at
    // this sample size, which would bury the point of the table.
    let task = SyntheticTask::posterior_linear(r.n, r.seed, LINEAR_ALPHA, LINEAR_BETA)?;
    let rep = posterior_shift_experiment(&task, &shift_config(r))?;

    let collapse = |results: &[FeatureComparison], name: &str| -> ReportRow {
        let statistic = results
            .iter()
            .map(|fc| fc.result.statistic)
            .fold(f64::NEG_INFINITY, f64::max);
        let p_value = results
            .iter()
            .filter_map(|fc| fc.result.p_value)
            .min_by(|a, b| a.total_cmp(b));
        ReportRow {
            comparison: name.to_string(),
            statistic,
            p_value,
            verdict: verdict(p_value, r.alpha),
        }
    };

    let rows = vec![
        collapse(&rep.input_results, "P(X) vs P(X^ood)"),
        row_from("P(Y) vs P(Y^ood)".to_string(), &rep.target_result, r.alpha),
        row_from(
            "P(f(X)) vs P(h(X^ood))".to_string(),
            &rep.prediction_result,
            r.alpha,
        ),
        collapse(&rep.explanation_results, "P(S(f,X)) vs P(S(h,X))"),
    ];
    let meta = metadata(rep.method.as_str(), task_seeds(r.seed));
    Ok(assemble(r, rows, meta))
}

/// Shift confined to a feature the model never uses: the input column is
/// distinct, the loss distribution and the feature's attribution column
/// are not.
///
/// The model is always the two-live-column linear fit with a hard zero
/// third coefficient. Any trained dependence on the shifted column,
/// however small, would surface in a scale-free comparison of its
/// attributions, so the scenario needs a model that provably ignores it;
/// the engine flag only selects how attributions are computed.
fn run_unused(r: &Resolved) -> Result<Report> {
    let task = SyntheticTask::unused_linear(r.n, r.seed, 0.0, LINEAR_ALPHA, LINEAR_BETA)?;
    let data = make_task_data(&task)?;
    let model = Model::Linear(fit_two_of_three(&data)?);
    let mut config = shift_config(r);
    if r.engine == EngineArg::GaussianObs {
        // The observational engine must see the exactly diagonal source
        // distribution: an estimated covariance carries sampling-noise
        // correlations that leak credit into the dead column.
        config.explain.gaussian = Some(task.source_spec.clone());
    }
    let rep = detect_shift(&model, &data.x_train, &data.x_ood, &config)?;

    let loss_train = squared_losses(&model, &data.x_train, &data.y_train)?;
    let loss_ood = squared_losses(&model, &data.x_ood, &data.y_ood)?;
    let loss_result = run_test(r.distance.to_method(), &loss_train, &loss_ood)?;

    let shifted = data.x_train.n_cols() - 1;
    let rows = vec![
        feature_row(&rep.input_results[shifted], r.alpha, |j| {
            format!("P(X{j}) vs P(X{j}^ood)")
        }),
        row_from(
            "P(loss(f,X,Y)) vs P(loss(f,X^ood,Y^ood))".to_string(),
            &loss_result,
            r.alpha,
        ),
        feature_row(&rep.explanation_results[shifted], r.alpha, |j| {
            format!("P(S{j}(f,X)) vs P(S{j}(f,X^ood))")
        }),
    ];
    let meta = metadata(rep.method.as_str(), shift_seeds(r.seed, &rep));
    Ok(assemble(r, rows, meta))
}

/// Linear fit that provably ignores the third feature: trained on the two
/// live columns, then embedded with a hard zero coefficient.
fn fit_two_of_three(data: &TaskData) -> Result<crate::models::LinearModel> {
    let n = data.x_train.n_rows();
    let mut live = DataMatrix::zeros(n, 2);
    for i in 0..n {
        live.set(i, 0, data.x_train.get(i, 0));
        live.set(i, 1, data.x_train.get(i, 1));
    }
    let fitted = fit_ols(&live, &data.y_train)?;
    Ok(crate::models::LinearModel {
        intercept: fitted.intercept,
        coefficients: vec![fitted.coefficients[0], fitted.coefficients[1], 0.0],
    })
}

fn squared_losses(model: &Model, x: &DataMatrix, y: &[f64]) -> Result<Vec<f64>> {
    let preds = model.predict(x)?;
    Ok(preds
        .iter()
        .zip(y.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .collect())
}

/// Degradation quantification: three MAE rows, no p-values.
fn run_quantify(r: &Resolved) -> Result<Report> {
    let config = QuantifyConfig {
        n: r.n,
        bootstraps: r.bootstraps,
        eval_bootstraps: r.bootstraps,
        sample_size: r.sample_size,
        distance: r.distance.to_method(),
        input_mode: r.input_mode.to_mode(),
        seed: r.seed,
        ..QuantifyConfig::default()
    };
    let outcome = run_quantification(&config)?;

    let bare = |name: &str, statistic: f64| ReportRow {
        comparison: name.to_string(),
        statistic,
        p_value: None,
        verdict: None,
    };
    let rows = vec![
        bare("MAE regressor", outcome.mae),
        bare("MAE dummy mean", outcome.dummy_mae),
        bare("MAE no-change", outcome.no_change_mae),
    ];

    let mut seeds = BTreeMap::new();
    for label in ["x-train", "noise-train", "background", "eval-x", "eval-y"] {
        seeds.insert(label.to_string(), crate::rng::child_seed(r.seed, label));
    }
    for k in 0..outcome.rho_ladder.len() {
        seeds.insert(
            format!("pool-x-{k}"),
            child_seed_indexed(r.seed, "pool-x", k as u64),
        );
        seeds.insert(
            format!("pool-y-{k}"),
            child_seed_indexed(r.seed, "pool-y", k as u64),
        );
    }
    let needs_explanations = matches!(r.input_mode, InputModeArg::Explanation | InputModeArg::Both);
    let engine = if needs_explanations {
        "interventional"
    } else {
        "none"
    };
    Ok(assemble(r, rows, metadata(engine, seeds)))
}

/// Fixed eight-row cohort: group A has TPR 3/4, group B 1/2, so the equal
/// opportunity difference is 0.25.
fn run_fairness_demo(r: &Resolved) -> Result<Report> {
    let y_true = [true, true, true, true, false, true, true, false];
    let y_pred = [true, true, true, false, false, true, false, true];
    let groups = ["A", "A", "A", "A", "A", "B", "B", "B"];
    let result = fairness_metrics(&y_true, &y_pred, &groups, "A", "B")?;

    let bare = |name: String, statistic: f64| ReportRow {
        comparison: name,
        statistic,
        p_value: None,
        verdict: None,
    };
    let mut rows: Vec<ReportRow> = result
        .tpr_by_group
        .iter()
        .map(|(g, tpr)| bare(format!("TPR group {g}"), *tpr))
        .collect();
    rows.push(bare("EOF (A - B)".to_string(), result.eof));
    Ok(assemble(r, rows, metadata("none", BTreeMap::new())))
}

fn run_experiment(r: &Resolved) -> Result<Report> {
    match r.experiment {
        ExperimentArg::Multivariate => run_multivariate(r),
        ExperimentArg::Posterior => run_posterior(r),
        ExperimentArg::Unused => run_unused(r),
        ExperimentArg::Quantify => run_quantify(r),
        ExperimentArg::FairnessDemo => run_fairness_demo(r),
    }
}

fn execute(args: &RunArgs) -> Result<()> {
    let resolved = resolve(args, std::env::var("XSHIFT_SEED").ok().as_deref())?;
    let started = Instant::now();
    let report = run_experiment(&resolved)?;
    let text = emit(&report, resolved.format);
    eprintln!(
        "[xshift] {} finished in {:.2}s",
        resolved.experiment.as_str(),
        started.elapsed().as_secs_f64()
    );
    if let Some(path) = &resolved.out {
        std::fs::write(path, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn error_object(e: &Error) -> String {
    format!(
        "{{\"error\":{{\"kind\":\"{}\",\"message\":\"{}\"}}}}",
        e.kind(),
        json_escape(&e.to_string())
    )
}

/// Binary entry point. Usage errors exit 2 (from clap or flag validation),
/// numerical and data failures exit 3, both with a machine-readable error
/// object on stderr.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_object(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
