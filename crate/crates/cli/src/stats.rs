//! Paired one-sided tests used to compare methods across seeds.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

impl TestResult {
    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n − 1` denominator; zero for a single value.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn lower_tail(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    StudentsT::new(0.0, 1.0, df).map_or(1.0, |d| d.cdf(t))
}

/// Paired t-test of `H1: mean(x) < ratio · mean(y)` on `d = x − ratio·y`.
pub fn paired_ratio_test(x: &[f64], y: &[f64], ratio: f64) -> TestResult {
    assert_eq!(x.len(), y.len(), "paired samples differ in length");
    let n = x.len();
    if n < 2 {
        return TestResult { n, statistic: f64::NAN, p_value: 1.0 };
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - ratio * b).collect();
    let se = (variance(&d) / n as f64).sqrt();
    let t = if se > 0.0 {
        mean(&d) / se
    } else if mean(&d) < 0.0 {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    TestResult { n, statistic: t, p_value: lower_tail(t, (n - 1) as f64) }
}

/// Pitman-Morgan test of `H1: Var(x) < ratio · Var(y)` for paired samples,
/// applied to `x` and `√ratio · y`.
pub fn pitman_morgan_test(x: &[f64], y: &[f64], ratio: f64) -> TestResult {
    assert_eq!(x.len(), y.len(), "paired samples differ in length");
    let n = x.len();
    if n < 3 {
        return TestResult { n, statistic: f64::NAN, p_value: 1.0 };
    }
    let k = ratio.sqrt();
    let s: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + k * b).collect();
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - k * b).collect();
    let (ms, md) = (mean(&s), mean(&d));
    let cov: f64 = s.iter().zip(&d).map(|(a, b)| (a - ms) * (b - md)).sum();
    let vs: f64 = s.iter().map(|a| (a - ms).powi(2)).sum();
    let vd: f64 = d.iter().map(|b| (b - md).powi(2)).sum();
    if vs <= 0.0 || vd <= 0.0 {
        return TestResult { n, statistic: f64::NAN, p_value: 1.0 };
    }
    let r = (cov / (vs * vd).sqrt()).clamp(-1.0, 1.0);
    let t = if r <= -1.0 {
        f64::NEG_INFINITY
    } else if r >= 1.0 {
        f64::INFINITY
    } else {
        r * ((n - 2) as f64).sqrt() / (1.0 - r * r).sqrt()
    };
    TestResult { n, statistic: t, p_value: lower_tail(t, (n - 2) as f64) }
}
