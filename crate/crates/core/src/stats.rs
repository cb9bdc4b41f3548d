//! Goodness-of-fit tests and small regression helpers.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    KolmogorovSmirnov,
    ChiSquare,
    Correlation,
}

/// Outcome of a hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub sample_size: usize,
}

/// Survival function of the Kolmogorov distribution, `P[K > x]`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        // Jacobi-transformed series converges fast for small x
        let t = -std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let mut cdf = 0.0;
        for j in 0..20 {
            let k = (2 * j + 1) as f64;
            cdf += (t * k * k).exp();
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / x;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for j in 1..=100 {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * x * x).exp();
            sum += if j % 2 == 1 { term } else { -term };
            if term < 1e-18 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF, using the
/// asymptotic distribution with Stephens' small-sample correction.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestResult> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    let root = nf.sqrt();
    let p = kolmogorov_survival((root + 0.12 + 0.11 / root) * d);
    Ok(TestResult {
        kind: TestKind::KolmogorovSmirnov,
        statistic: d,
        p_value: p,
        sample_size: n,
    })
}

/// Pearson chi-square test of observed counts against expected counts.
/// Degrees of freedom are `bins − 1 − fitted`.
pub fn chi_square_test(observed: &[u64], expected: &[f64], fitted: usize) -> Result<TestResult> {
    if observed.len() != expected.len() || observed.len() < 2 + fitted {
        return Err(Error::invalid("chi-square test needs matching bins and positive dof"));
    }
    let mut stat = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        if e <= 0.0 {
            return Err(Error::invalid("chi-square expected counts must be positive"));
        }
        let diff = o as f64 - e;
        stat += diff * diff / e;
    }
    let dof = (observed.len() - 1 - fitted) as f64;
    let dist = ChiSquared::new(dof).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(TestResult {
        kind: TestKind::ChiSquare,
        statistic: stat,
        p_value: dist.sf(stat).clamp(0.0, 1.0),
        sample_size: observed.iter().sum::<u64>() as usize,
    })
}

/// Pearson correlation with a two-sided p-value from the Fisher transform.
pub fn correlation_test(x: &[f64], y: &[f64]) -> Result<TestResult> {
    let n = x.len();
    if n != y.len() || n < 4 {
        return Err(Error::InsufficientSamples {
            needed: 4,
            got: n.min(y.len()),
        });
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let r = if sxx > 0.0 && syy > 0.0 {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let z = r.clamp(-0.999_999_999, 0.999_999_999).atanh() * ((n - 3) as f64).sqrt();
    Ok(TestResult {
        kind: TestKind::Correlation,
        statistic: r,
        p_value: (2.0 * standard_normal_sf(z.abs())).clamp(0.0, 1.0),
        sample_size: n,
    })
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn standard_normal_sf(x: f64) -> f64 {
    Normal::standard().sf(x)
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (`NaN` for fewer than two samples).
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means.
pub fn batch_means_se(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches.max(1);
    if batches < 2 || size == 0 {
        return (variance(x) / x.len() as f64).sqrt();
    }
    let means: Vec<f64> = x.chunks_exact(size).take(batches).map(mean).collect();
    (variance(&means) / means.len() as f64).sqrt()
}

/// Ordinary least squares fit `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: n.min(y.len()),
        });
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("regression abscissae are all equal"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::RandomStream;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn kolmogorov_tail_reference_values() {
        // tabulated: P[K > 1.3581] = 0.05, P[K > 1.6276] = 0.01
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        assert!((kolmogorov_survival(0.5) - 0.9639).abs() < 1e-4);
        // both branches agree at the switch
        let lo = kolmogorov_survival(1.0 - 1e-12);
        let hi = kolmogorov_survival(1.0);
        assert!((lo - hi).abs() < 1e-10);
    }

    #[test]
    fn ks_accepts_uniform_and_rejects_shifted() {
        let mut s = RandomStream::new(5, 0);
        let x: Vec<f64> = (0..20_000).map(|_| s.uniform()).collect();
        assert!(ks_test(&x, |v| v).unwrap().p_value > 0.001);
        let shifted: Vec<f64> = x.iter().map(|v| v * 0.97).collect();
        assert!(ks_test(&shifted, |v| v.clamp(0.0, 1.0)).unwrap().p_value < 1e-6);
    }

    #[test]
    fn chi_square_reference() {
        let obs = [10, 10, 10, 10];
        let exp = [10.0; 4];
        let r = chi_square_test(&obs, &exp, 0).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        // χ²(3) with statistic 7.815 has p = 0.05
        let obs = [0u64, 20, 10, 10];
        let r = chi_square_test(&obs, &exp, 0).unwrap();
        assert!((r.statistic - 20.0).abs() < 1e-12);
        assert!(r.p_value < 0.001);
    }

    #[test]
    fn correlation_of_independent_normals_is_small() {
        let mut s = RandomStream::new(9, 2);
        let x: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut s)).collect();
        let y: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut s)).collect();
        let r = correlation_test(&x, &y).unwrap();
        assert!(r.statistic.abs() < 0.05 && r.p_value > 0.001);
        let r = correlation_test(&x, &x).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regression_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let fit = linear_fit(&x, &y).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-14 && (fit.intercept - 2.0).abs() < 1e-13);
        assert!(fit.slope_se < 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }
}
