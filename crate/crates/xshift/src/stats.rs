//! Two-sample distribution comparison kernels: Kolmogorov-Smirnov,
//! 1-Wasserstein distance, and the population stability index, plus a
//! column-wise driver for feature tables.

use crate::data::DataMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMethod {
    Ks,
    Wasserstein,
    Psi,
}

impl TestMethod {
    pub fn name(&self) -> &'static str {
        match self {
            TestMethod::Ks => "ks",
            TestMethod::Wasserstein => "wasserstein",
            TestMethod::Psi => "psi",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    /// Only the KS test carries a p-value; the distances leave this unset.
    pub p_value: Option<f64>,
    pub method: TestMethod,
    pub n_a: usize,
    pub n_b: usize,
}

pub const DEFAULT_PSI_BINS: usize = 10;

fn sorted_copy(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn require_nonempty(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("two-sample comparison needs nonempty samples"));
    }
    Ok(())
}

/// Two-sample Kolmogorov-Smirnov test. The statistic is the exact supremum
/// of the ECDF difference (ties handled by advancing both samples past each
/// merged value); the p-value is the asymptotic series.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    require_nonempty(a, b)?;
    let sa = sorted_copy(a);
    let sb = sorted_copy(b);
    let d = ks_statistic_sorted(&sa, &sb);
    Ok(TestResult {
        statistic: d,
        p_value: Some(ks_asymptotic_p(d, sa.len(), sb.len())),
        method: TestMethod::Ks,
        n_a: sa.len(),
        n_b: sb.len(),
    })
}

/// KS statistic over already sorted nonempty samples. Kept separate so
/// bootstrap loops can presort the reference once.
pub(crate) fn ks_statistic_sorted(sa: &[f64], sb: &[f64]) -> f64 {
    let (na, nb) = (sa.len(), sb.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let v = if sa[i] <= sb[j] { sa[i] } else { sb[j] };
        while i < na && sa[i] == v {
            i += 1;
        }
        while j < nb && sb[j] == v {
            j += 1;
        }
        let diff = (i as f64 / na as f64 - j as f64 / nb as f64).abs();
        if diff > d {
            d = diff;
        }
    }
    d
}

/// Asymptotic two-sample KS p-value with the small-sample correction
/// lambda = D (sqrt(ne) + 0.12 + 0.11 / sqrt(ne)), ne = na nb / (na + nb),
/// and Q(lambda) = 2 sum_k (-1)^(k-1) exp(-2 k^2 lambda^2). The series is
/// truncated once terms drop below 1e-12 and the result clamped to [0, 1].
pub fn ks_asymptotic_p(d: f64, n_a: usize, n_b: usize) -> f64 {
    let ne = (n_a as f64 * n_b as f64) / (n_a + n_b) as f64;
    let sqrt_ne = ne.sqrt();
    let lambda = d * (sqrt_ne + 0.12 + 0.11 / sqrt_ne);
    // Below 0.15 the complement of the p-value is under 1e-22, beyond f64
    // resolution at 1.0 and the series truncation point.
    if lambda < 0.15 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100_000 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Exact 1-Wasserstein distance between empirical distributions, computed as
/// the integral of the absolute ECDF difference over the merged support.
/// Sample sizes may differ.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<TestResult> {
    require_nonempty(a, b)?;
    let sa = sorted_copy(a);
    let sb = sorted_copy(b);
    Ok(TestResult {
        statistic: wasserstein_sorted(&sa, &sb),
        p_value: None,
        method: TestMethod::Wasserstein,
        n_a: sa.len(),
        n_b: sb.len(),
    })
}

/// Wasserstein-1 over already sorted nonempty samples.
pub(crate) fn wasserstein_sorted(sa: &[f64], sb: &[f64]) -> f64 {
    let (na, nb) = (sa.len(), sb.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut total = 0.0;
    let mut prev = 0.0;
    while i < na || j < nb {
        let v = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        if i + j > 0 {
            total += (i as f64 / na as f64 - j as f64 / nb as f64).abs() * (v - prev);
        }
        while i < na && sa[i] == v {
            i += 1;
        }
        while j < nb && sb[j] == v {
            j += 1;
        }
        prev = v;
    }
    total
}

/// Population stability index with quantile bins derived from `a`. Outer
/// bins are unbounded; proportions are floored at 1e-4 and renormalized so
/// empty bins stay finite.
pub fn psi(a: &[f64], b: &[f64], bins: usize) -> Result<TestResult> {
    require_nonempty(a, b)?;
    let sa = sorted_copy(a);
    Ok(TestResult {
        statistic: psi_sorted(&sa, b, bins)?,
        p_value: None,
        method: TestMethod::Psi,
        n_a: sa.len(),
        n_b: b.len(),
    })
}

/// PSI with the reference sample already sorted; the comparison sample may
/// be in any order.
pub(crate) fn psi_sorted(sa: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::invalid("psi needs at least 2 bins"));
    }
    let na = sa.len();
    if sa[0] == sa[na - 1] {
        return Err(Error::Degenerate(
            "psi reference sample is constant; all quantile bins collapse".to_string(),
        ));
    }
    let edges: Vec<f64> = (1..bins)
        .map(|k| sa[(k * na / bins).min(na - 1)])
        .collect();

    let assign = |sample: &[f64]| -> Vec<f64> {
        let mut counts = vec![0usize; bins];
        for &x in sample {
            counts[edges.partition_point(|&e| e < x)] += 1;
        }
        let n = sample.len() as f64;
        counts.iter().map(|&c| c as f64 / n).collect()
    };

    let floor_norm = |props: Vec<f64>| -> Vec<f64> {
        let floored: Vec<f64> = props.iter().map(|&p| p.max(1e-4)).collect();
        let sum: f64 = floored.iter().sum();
        floored.into_iter().map(|p| p / sum).collect()
    };

    let p = floor_norm(assign(sa));
    let q = floor_norm(assign(b));
    Ok(p.iter()
        .zip(q.iter())
        .map(|(&pk, &qk)| (pk - qk) * (pk / qk).ln())
        .sum())
}

pub fn run_test(method: TestMethod, a: &[f64], b: &[f64]) -> Result<TestResult> {
    match method {
        TestMethod::Ks => ks_two_sample(a, b),
        TestMethod::Wasserstein => wasserstein_1d(a, b),
        TestMethod::Psi => psi(a, b, DEFAULT_PSI_BINS),
    }
}

#[derive(Debug, Clone)]
pub struct FeatureComparison {
    pub feature: usize,
    pub result: TestResult,
    /// KS only: whether the column is flagged at the given alpha. The
    /// distances carry no decision rule.
    pub distinct: Option<bool>,
}

/// Column-wise comparison of two feature tables.
pub fn per_feature_compare(
    a: &DataMatrix,
    b: &DataMatrix,
    method: TestMethod,
    alpha: f64,
) -> Result<Vec<FeatureComparison>> {
    if a.n_cols() != b.n_cols() {
        return Err(Error::invalid(format!(
            "feature tables disagree on width: {} vs {}",
            a.n_cols(),
            b.n_cols()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1)"));
    }
    (0..a.n_cols())
        .map(|j| {
            let result = run_test(method, &a.column(j), &b.column(j))?;
            let distinct = result.p_value.map(|p| p < alpha);
            Ok(FeatureComparison {
                feature: j,
                result,
                distinct,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn normals(n: usize, seed: u64, mean: f64) -> Vec<f64> {
        let mut rng = SplitMix64::new(seed);
        (0..n).map(|_| mean + rng.standard_normal()).collect()
    }

    #[test]
    fn ks_identical_samples() {
        let a = vec![3.0, 1.0, 2.0, 2.0, 5.0];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, Some(1.0));
    }

    #[test]
    fn ks_hand_checked_statistics() {
        // ECDF gap is 1/4 at every merged value.
        let r = ks_two_sample(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r.statistic, 0.25);
        // Ties on both sides: gap peaks at 1/3 after the zeros.
        let r = ks_two_sample(&[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0]).unwrap();
        assert!((r.statistic - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ks_disjoint_supports() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 1000.0).collect();
        let r = ks_two_sample(&a, &b).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(r.p_value.unwrap() < 1e-10);
    }

    #[test]
    fn ks_null_calibration_at_scale() {
        // 20 independent same-distribution pairs at n = 50k; allow at most
        // one p-value under 0.001.
        let mut failures = 0;
        for k in 0..20u64 {
            let a = normals(50_000, 1000 + 2 * k, 0.0);
            let b = normals(50_000, 1001 + 2 * k, 0.0);
            let p = ks_two_sample(&a, &b).unwrap().p_value.unwrap();
            if p <= 0.001 {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{failures} null rejections at p <= 0.001");
    }

    #[test]
    fn ks_p_monotone_in_statistic() {
        // Slack matches the series truncation tolerance.
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let d = k as f64 / 100.0;
            let p = ks_asymptotic_p(d, 100, 100);
            assert!(p <= prev + 1e-12, "p not monotone at d={d}");
            prev = p;
        }
    }

    #[test]
    fn wasserstein_hand_checked() {
        let r = wasserstein_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
        let r = wasserstein_1d(&[0.0], &[-2.5]).unwrap();
        assert_eq!(r.statistic, 2.5);
        // Unequal sizes: half the mass moves from 0 to 0.5, half from 1.
        let r = wasserstein_1d(&[0.0, 1.0], &[0.5]).unwrap();
        assert_eq!(r.statistic, 0.5);
        let a = vec![4.0, 1.0, 3.0];
        let r = wasserstein_1d(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn wasserstein_dyadic_shift_is_exact() {
        // Dyadic values and a power-of-two length keep every intermediate
        // representable, so the shift identity holds with equality.
        let a = vec![0.0, 0.25, 1.5, 2.0, 3.75, 4.0, 5.5, 8.0];
        let c = 2.5;
        let b: Vec<f64> = a.iter().map(|x| x + c).collect();
        assert_eq!(wasserstein_1d(&a, &b).unwrap().statistic, c);
        let b: Vec<f64> = a.iter().map(|x| x - c).collect();
        assert_eq!(wasserstein_1d(&a, &b).unwrap().statistic, c);
    }

    #[test]
    fn psi_identical_is_zero() {
        let a = normals(5_000, 7, 0.0);
        let r = psi(&a, &a, DEFAULT_PSI_BINS).unwrap();
        assert!(r.statistic.abs() < 1e-12);
    }

    #[test]
    fn psi_three_sigma_shift_is_large() {
        let a = normals(50_000, 21, 0.0);
        let b = normals(50_000, 22, 3.0);
        let r = psi(&a, &b, DEFAULT_PSI_BINS).unwrap();
        // Theoretical value with exact deciles and the 1e-4 floor is near 6.
        assert!(r.statistic > 1.0, "psi {}", r.statistic);
        assert!(r.statistic < 12.0, "psi {}", r.statistic);
    }

    #[test]
    fn psi_empty_bin_hits_floor() {
        // Two bins split at 5; b lands entirely in the upper bin.
        // p = (0.6, 0.4), q floors to (1e-4, 1)/1.0001; the index works out
        // to 0.59990001 ln(6000.6) + 0.59990001 ln(1/0.40004) = 5.7685218.
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b = vec![7.0; 10];
        let r = psi(&a, &b, 2).unwrap();
        assert!(r.statistic.is_finite());
        assert!((r.statistic - 5.7685218).abs() < 1e-4, "psi {}", r.statistic);
    }

    #[test]
    fn psi_constant_reference_rejected() {
        let err = psi(&[2.0; 50], &[1.0, 2.0, 3.0], DEFAULT_PSI_BINS).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn empty_samples_rejected() {
        assert!(ks_two_sample(&[], &[1.0]).is_err());
        assert!(wasserstein_1d(&[1.0], &[]).is_err());
        assert!(psi(&[], &[1.0], 10).is_err());
    }

    #[test]
    fn per_feature_compare_identical() {
        let m = DataMatrix::from_rows(&[
            vec![1.0, 10.0],
            vec![2.0, 20.0],
            vec![3.0, 30.0],
        ])
        .unwrap();
        let out = per_feature_compare(&m, &m, TestMethod::Ks, 0.05).unwrap();
        assert_eq!(out.len(), 2);
        for c in &out {
            assert_eq!(c.result.statistic, 0.0);
            assert_eq!(c.distinct, Some(false));
        }
        let out = per_feature_compare(&m, &m, TestMethod::Wasserstein, 0.05).unwrap();
        assert!(out.iter().all(|c| c.distinct.is_none()));
    }

    #[test]
    fn per_feature_compare_shape_mismatch() {
        let a = DataMatrix::zeros(3, 2);
        let b = DataMatrix::zeros(3, 3);
        assert!(per_feature_compare(&a, &b, TestMethod::Ks, 0.05).is_err());
    }

    proptest! {
        #[test]
        fn ks_invariant_under_monotone_maps(
            a in prop::collection::vec(-1000.0..1000.0f64, 1..60),
            b in prop::collection::vec(-1000.0..1000.0f64, 1..60),
        ) {
            let base = ks_two_sample(&a, &b).unwrap();
            let ta: Vec<f64> = a.iter().map(|x| 0.25 * x - 3.0).collect();
            let tb: Vec<f64> = b.iter().map(|x| 0.25 * x - 3.0).collect();
            let mapped = ks_two_sample(&ta, &tb).unwrap();
            prop_assert_eq!(base.statistic, mapped.statistic);
            prop_assert_eq!(base.p_value, mapped.p_value);
        }

        #[test]
        fn wasserstein_shift_identity(
            a in prop::collection::vec(-100.0..100.0f64, 1..50),
            c in -50.0..50.0f64,
        ) {
            let b: Vec<f64> = a.iter().map(|x| x + c).collect();
            let w = wasserstein_1d(&a, &b).unwrap().statistic;
            prop_assert!((w - c.abs()).abs() < 1e-12, "w = {}, |c| = {}", w, c.abs());
        }

        #[test]
        fn wasserstein_symmetry_and_triangle(
            a in prop::collection::vec(-100.0..100.0f64, 1..40),
            b in prop::collection::vec(-100.0..100.0f64, 1..40),
            c in prop::collection::vec(-100.0..100.0f64, 1..40),
        ) {
            let wab = wasserstein_1d(&a, &b).unwrap().statistic;
            let wba = wasserstein_1d(&b, &a).unwrap().statistic;
            prop_assert_eq!(wab, wba);
            let wac = wasserstein_1d(&a, &c).unwrap().statistic;
            let wcb = wasserstein_1d(&c, &b).unwrap().statistic;
            prop_assert!(wab <= wac + wcb + 1e-9);
            prop_assert!(wab >= 0.0);
        }
    }
}
