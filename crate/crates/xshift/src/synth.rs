//! Synthetic task generation: multivariate normal sampling and the three
//! benchmark shift scenarios (covariance shift, posterior shift, unused
//! feature shift).

use nalgebra::DMatrix;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::rng::{child_seed, SplitMix64};

/// Multivariate normal specification. Construction validates symmetry and
/// positive definiteness; the Cholesky factor is kept for sampling.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    mean: Vec<f64>,
    cov: Vec<f64>,
    chol_lower: Vec<f64>,
}

impl GaussianSpec {
    pub fn new(mean: Vec<f64>, covariance: &[Vec<f64>]) -> Result<Self> {
        let p = mean.len();
        if p == 0 {
            return Err(Error::invalid("gaussian spec needs at least one dimension"));
        }
        if covariance.len() != p || covariance.iter().any(|r| r.len() != p) {
            return Err(Error::invalid(format!(
                "covariance must be {p} x {p} to match the mean"
            )));
        }
        let mut cov = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                if (covariance[i][j] - covariance[j][i]).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
                cov[i * p + j] = covariance[i][j];
            }
        }
        let m = DMatrix::from_fn(p, p, |i, j| cov[i * p + j]);
        let chol = m.cholesky().ok_or_else(|| {
            Error::Factorization("covariance is not positive definite".to_string())
        })?;
        let l = chol.l();
        let mut chol_lower = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..=i {
                chol_lower[i * p + j] = l[(i, j)];
            }
        }
        Ok(GaussianSpec {
            mean,
            cov,
            chol_lower,
        })
    }

    /// Independent coordinates with a shared variance.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let p = mean.len();
        let cov: Vec<Vec<f64>> = (0..p)
            .map(|i| (0..p).map(|j| if i == j { variance } else { 0.0 }).collect())
            .collect();
        GaussianSpec::new(mean, &cov)
    }

    /// Two unit-variance coordinates with correlation `rho`.
    pub fn bivariate_unit(mean: [f64; 2], rho: f64) -> Result<Self> {
        GaussianSpec::new(mean.to_vec(), &[vec![1.0, rho], vec![rho, 1.0]])
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.cov[i * self.mean.len() + j]
    }

    pub(crate) fn cov_flat(&self) -> &[f64] {
        &self.cov
    }

    pub fn same_distribution(&self, other: &GaussianSpec) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

/// Draw `n` rows from the spec. Row-major generation with one normal per
/// coordinate, so output is bit-identical for identical (spec, n, seed).
pub fn sample_mvn(spec: &GaussianSpec, n: usize, seed: u64) -> DataMatrix {
    let p = spec.dimension();
    let mut rng = SplitMix64::new(seed);
    let mut out = DataMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = rng.standard_normal();
        }
        for r in 0..p {
            let mut x = spec.mean[r];
            for (c, &zc) in z.iter().enumerate().take(r + 1) {
                x += spec.chol_lower[r * p + c] * zc;
            }
            out.set(i, r, x);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    MultivariateShift,
    PosteriorShift,
    UnusedFeature,
}

/// How targets are generated from a feature row. The first two features
/// carry the signal in every rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetRule {
    /// y = x1 * x2 + noise
    Product,
    /// y = x1^2 * x2 + noise
    ProductSq12,
    /// y = x1 * x2^2 + noise
    ProductSq21,
    /// y = a0 + a1 * x1 + a2 * x2 + noise, on data with a third, unused feature
    Linear2of3 { a0: f64, a1: f64, a2: f64 },
    /// y = a + alpha * x1 + beta * x2 + noise
    LinearAB { a: f64, alpha: f64, beta: f64 },
    /// y = a + beta * x1 + alpha * x2 + noise
    LinearBA { a: f64, alpha: f64, beta: f64 },
}

impl TargetRule {
    fn min_features(&self) -> usize {
        match self {
            TargetRule::Linear2of3 { .. } => 3,
            _ => 2,
        }
    }

    fn apply(&self, row: &[f64]) -> f64 {
        match *self {
            TargetRule::Product => row[0] * row[1],
            TargetRule::ProductSq12 => row[0] * row[0] * row[1],
            TargetRule::ProductSq21 => row[0] * row[1] * row[1],
            TargetRule::Linear2of3 { a0, a1, a2 } => a0 + a1 * row[0] + a2 * row[1],
            TargetRule::LinearAB { a, alpha, beta } => a + alpha * row[0] + beta * row[1],
            TargetRule::LinearBA { a, alpha, beta } => a + beta * row[0] + alpha * row[1],
        }
    }

    /// The rule generating out-of-distribution targets for a posterior shift:
    /// the roles of the two signal features swap.
    pub fn swapped(&self) -> TargetRule {
        match *self {
            TargetRule::ProductSq12 => TargetRule::ProductSq21,
            TargetRule::ProductSq21 => TargetRule::ProductSq12,
            TargetRule::LinearAB { a, alpha, beta } => TargetRule::LinearBA { a, alpha, beta },
            TargetRule::LinearBA { a, alpha, beta } => TargetRule::LinearAB { a, alpha, beta },
            other => other,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub name: TaskKind,
    pub source_spec: GaussianSpec,
    pub ood_spec: GaussianSpec,
    pub target_rule: TargetRule,
    pub noise_sd: f64,
    pub sample_count: usize,
    pub seed: u64,
}

/// Default correlation introduced by the covariance-shift scenario.
pub const MULTIVARIATE_RHO: f64 = 0.2;
/// Default noise standard deviation for all synthetic targets.
pub const DEFAULT_NOISE_SD: f64 = 0.1;

impl SyntheticTask {
    pub fn new(
        name: TaskKind,
        source_spec: GaussianSpec,
        ood_spec: GaussianSpec,
        target_rule: TargetRule,
        noise_sd: f64,
        sample_count: usize,
        seed: u64,
    ) -> Result<Self> {
        if source_spec.dimension() != ood_spec.dimension() {
            return Err(Error::invalid(
                "source and ood specs must share a dimension",
            ));
        }
        if source_spec.dimension() < target_rule.min_features() {
            return Err(Error::invalid(format!(
                "target rule needs at least {} features, spec has {}",
                target_rule.min_features(),
                source_spec.dimension()
            )));
        }
        if !(noise_sd >= 0.0) {
            return Err(Error::invalid("noise_sd must be nonnegative"));
        }
        if sample_count == 0 {
            return Err(Error::invalid("sample_count must be positive"));
        }
        if name == TaskKind::PosteriorShift && !source_spec.same_distribution(&ood_spec) {
            return Err(Error::invalid(
                "posterior shift keeps the input distribution fixed; specs must match",
            ));
        }
        if name == TaskKind::UnusedFeature && source_spec.dimension() < 3 {
            return Err(Error::invalid("unused-feature task needs three features"));
        }
        Ok(SyntheticTask {
            name,
            source_spec,
            ood_spec,
            target_rule,
            noise_sd,
            sample_count,
            seed,
        })
    }

    /// Covariance shift: independent features at train time, correlated at
    /// deployment, identical marginals, y = x1 * x2 + noise.
    pub fn multivariate(sample_count: usize, seed: u64) -> Result<Self> {
        SyntheticTask::multivariate_with_rho(sample_count, seed, MULTIVARIATE_RHO)
    }

    pub fn multivariate_with_rho(sample_count: usize, seed: u64, rho: f64) -> Result<Self> {
        SyntheticTask::new(
            TaskKind::MultivariateShift,
            GaussianSpec::bivariate_unit([0.0, 0.0], 0.0)?,
            GaussianSpec::bivariate_unit([0.0, 0.0], rho)?,
            TargetRule::Product,
            DEFAULT_NOISE_SD,
            sample_count,
            seed,
        )
    }

    /// Posterior shift: inputs stay N(1, I), the target rule swaps the roles
    /// of the two features between source and deployment.
    pub fn posterior(sample_count: usize, seed: u64) -> Result<Self> {
        let spec = GaussianSpec::isotropic(vec![1.0, 1.0], 1.0)?;
        SyntheticTask::new(
            TaskKind::PosteriorShift,
            spec.clone(),
            spec,
            TargetRule::ProductSq12,
            DEFAULT_NOISE_SD,
            sample_count,
            seed,
        )
    }

    /// Linear posterior shift with explicit coefficients.
    pub fn posterior_linear(sample_count: usize, seed: u64, alpha: f64, beta: f64) -> Result<Self> {
        let spec = GaussianSpec::isotropic(vec![1.0, 1.0], 1.0)?;
        SyntheticTask::new(
            TaskKind::PosteriorShift,
            spec.clone(),
            spec,
            TargetRule::LinearAB {
                a: 0.0,
                alpha,
                beta,
            },
            DEFAULT_NOISE_SD,
            sample_count,
            seed,
        )
    }

    /// Unused-feature shift: three independent features, y = x1 * x2 + noise,
    /// and deployment shifts the third (unused) feature by +1.
    pub fn unused(sample_count: usize, seed: u64) -> Result<Self> {
        let spec = GaussianSpec::isotropic(vec![0.0, 0.0, 0.0], 1.0)?;
        SyntheticTask::new(
            TaskKind::UnusedFeature,
            spec.clone(),
            spec,
            TargetRule::Product,
            DEFAULT_NOISE_SD,
            sample_count,
            seed,
        )
    }

    /// Unused-feature shift with a linear target that provably ignores the
    /// third feature.
    pub fn unused_linear(sample_count: usize, seed: u64, a0: f64, a1: f64, a2: f64) -> Result<Self> {
        let spec = GaussianSpec::isotropic(vec![0.0, 0.0, 0.0], 1.0)?;
        SyntheticTask::new(
            TaskKind::UnusedFeature,
            spec.clone(),
            spec,
            TargetRule::Linear2of3 { a0, a1, a2 },
            DEFAULT_NOISE_SD,
            sample_count,
            seed,
        )
    }
}

#[derive(Debug, Clone)]
pub struct TaskData {
    pub x_train: DataMatrix,
    pub y_train: Vec<f64>,
    pub x_ood: DataMatrix,
    pub y_ood: Vec<f64>,
}

/// Targets for a feature table: rule(row) plus independent N(0, noise_sd^2)
/// noise from the given stream.
pub fn targets(x: &DataMatrix, rule: TargetRule, noise_sd: f64, seed: u64) -> Result<Vec<f64>> {
    if x.n_cols() < rule.min_features() {
        return Err(Error::invalid(format!(
            "target rule needs at least {} features, data has {}",
            rule.min_features(),
            x.n_cols()
        )));
    }
    let mut rng = SplitMix64::new(seed);
    Ok(x.rows_iter()
        .map(|row| rule.apply(row) + noise_sd * rng.standard_normal())
        .collect())
}

/// Materialize a task: source and deployment draws with their targets, all
/// from seeds derived off the task seed so streams never overlap.
pub fn make_task_data(task: &SyntheticTask) -> Result<TaskData> {
    let n = task.sample_count;
    let x_train = sample_mvn(&task.source_spec, n, child_seed(task.seed, "x-train"));
    let mut x_ood = sample_mvn(&task.ood_spec, n, child_seed(task.seed, "x-ood"));
    if task.name == TaskKind::UnusedFeature {
        for i in 0..n {
            x_ood.set(i, 2, x_ood.get(i, 2) + 1.0);
        }
    }
    let ood_rule = match task.name {
        TaskKind::PosteriorShift => task.target_rule.swapped(),
        _ => task.target_rule,
    };
    let y_train = targets(
        &x_train,
        task.target_rule,
        task.noise_sd,
        child_seed(task.seed, "noise-train"),
    )?;
    let y_ood = targets(&x_ood, ood_rule, task.noise_sd, child_seed(task.seed, "noise-ood"))?;
    Ok(TaskData {
        x_train,
        y_train,
        x_ood,
        y_ood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain two-pass Pearson correlation, kept free of the library's matrix
    /// helpers on purpose.
    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for i in 0..a.len() {
            let da = a[i] - ma;
            let db = b[i] - mb;
            sab += da * db;
            saa += da * da;
            sbb += db * db;
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = GaussianSpec::bivariate_unit([0.0, 0.0], 0.3).unwrap();
        let a = sample_mvn(&spec, 3, 42);
        let b = sample_mvn(&spec, 3, 42);
        assert_eq!(a.as_slice(), b.as_slice());
        let c = sample_mvn(&spec, 3, 43);
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn zero_variance_spec_rejected() {
        let err = GaussianSpec::new(vec![5.0], &[vec![0.0]]).unwrap_err();
        assert!(matches!(err, crate::Error::Factorization(_)));
    }

    #[test]
    fn asymmetric_covariance_rejected() {
        let err =
            GaussianSpec::new(vec![0.0, 0.0], &[vec![1.0, 0.5], vec![0.1, 1.0]]).unwrap_err();
        assert!(matches!(err, crate::Error::InvalidInput(_)));
    }

    #[test]
    fn correlation_matches_spec_at_scale() {
        let spec = GaussianSpec::bivariate_unit([0.0, 0.0], 0.2).unwrap();
        let x = sample_mvn(&spec, 50_000, 11);
        let r = pearson(&x.column(0), &x.column(1));
        assert!(r > 0.18 && r < 0.22, "sample correlation {r}");
    }

    #[test]
    fn column_means_converge() {
        let spec = GaussianSpec::isotropic(vec![1.0, -2.0, 0.5], 1.0).unwrap();
        let n = 50_000;
        let x = sample_mvn(&spec, n, 5);
        let bound = 6.0 / (n as f64).sqrt();
        for (j, &m) in spec.mean().iter().enumerate() {
            assert!(
                (x.column_mean(j) - m).abs() < bound,
                "column {j} mean {} vs {m}",
                x.column_mean(j)
            );
        }
    }

    #[test]
    fn multivariate_task_shifts_only_the_dependence() {
        let task = SyntheticTask::multivariate(50_000, 3).unwrap();
        let data = make_task_data(&task).unwrap();
        let r_train = pearson(&data.x_train.column(0), &data.x_train.column(1));
        let r_ood = pearson(&data.x_ood.column(0), &data.x_ood.column(1));
        assert!(r_train.abs() < 0.02, "train correlation {r_train}");
        assert!(
            (r_ood - MULTIVARIATE_RHO).abs() < 0.02,
            "ood correlation {r_ood}"
        );
    }

    #[test]
    fn posterior_task_swaps_target_rule() {
        let task = SyntheticTask::posterior(100, 3).unwrap();
        let data = make_task_data(&task).unwrap();
        // Same input distribution, different generating rule: reconstruct the
        // deterministic parts and check which rule each target tracks.
        for i in 0..10 {
            let r = data.x_ood.row(i);
            let swapped = r[0] * r[1] * r[1];
            assert!((data.y_ood[i] - swapped).abs() < 0.6, "row {i}");
        }
    }

    #[test]
    fn unused_task_shifts_third_column_exactly() {
        let task = SyntheticTask::unused_linear(200, 9, 1.5, 0.0, 0.0).unwrap();
        let mut task = task;
        task.noise_sd = 0.0;
        let data = make_task_data(&task).unwrap();
        assert!(data.y_train.iter().all(|&y| y == 1.5));
        assert!(data.y_ood.iter().all(|&y| y == 1.5));
        let raw = sample_mvn(&task.ood_spec, 200, child_seed(task.seed, "x-ood"));
        for i in 0..200 {
            assert_eq!(data.x_ood.get(i, 2).to_bits(), (raw.get(i, 2) + 1.0).to_bits());
            assert_eq!(data.x_ood.get(i, 0).to_bits(), raw.get(i, 0).to_bits());
        }
    }

    #[test]
    fn rule_arity_checked_against_dimension() {
        let spec = GaussianSpec::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        let err = SyntheticTask::new(
            TaskKind::MultivariateShift,
            spec.clone(),
            spec,
            TargetRule::Linear2of3 {
                a0: 0.0,
                a1: 1.0,
                a2: 1.0,
            },
            0.1,
            100,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, crate::Error::InvalidInput(_)));
    }

    #[test]
    fn posterior_task_requires_matching_specs() {
        let a = GaussianSpec::isotropic(vec![1.0, 1.0], 1.0).unwrap();
        let b = GaussianSpec::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        let err = SyntheticTask::new(
            TaskKind::PosteriorShift,
            a,
            b,
            TargetRule::ProductSq12,
            0.1,
            100,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, crate::Error::InvalidInput(_)));
    }
}
