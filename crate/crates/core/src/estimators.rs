//! Monte Carlo estimators for the limit theorems, each paired with a
//! deterministic prediction and a declared acceptance rule.

use crate::error::{Error, Result};
use crate::kernel::{component_weights, WaveVector};
use crate::sampler::sin2_cdf;
use crate::stats::{self, chi_square_test, correlation_test, ks_test, linear_fit, LinearFit, TestResult};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Acceptance rule attached to a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Criterion {
    /// `estimate ≤ limit`.
    AtMost { limit: f64 },
    /// `estimate < limit`.
    Below { limit: f64 },
    /// `estimate ≥ limit`.
    AtLeast { limit: f64 },
    /// `lo ≤ estimate ≤ hi`.
    Between { lo: f64, hi: f64 },
    /// `|estimate − prediction| ≤ tol`.
    WithinAbs { tol: f64 },
    /// `|estimate − prediction| ≤ tol·|prediction|`.
    WithinRel { tol: f64 },
    /// `|estimate − prediction| ≤ k·std_error`.
    WithinSigma { k: f64 },
    /// Reported for the record, never fails.
    Informational,
}

impl Criterion {
    pub fn check(&self, estimate: f64, prediction: Option<f64>, std_error: Option<f64>) -> bool {
        let gap = || prediction.map(|p| (estimate - p).abs());
        match *self {
            Criterion::AtMost { limit } => estimate <= limit,
            Criterion::Below { limit } => estimate < limit,
            Criterion::AtLeast { limit } => estimate >= limit,
            Criterion::Between { lo, hi } => (lo..=hi).contains(&estimate),
            Criterion::WithinAbs { tol } => gap().is_some_and(|g| g <= tol),
            Criterion::WithinRel { tol } => gap().is_some_and(|g| g <= tol * prediction.unwrap_or(0.0).abs()),
            Criterion::WithinSigma { k } => match (gap(), std_error) {
                (Some(g), Some(se)) => g <= k * se,
                _ => false,
            },
            Criterion::Informational => true,
        }
    }
}

/// One estimated quantity with its acceptance verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub replicas: usize,
    pub prediction: Option<f64>,
    pub criterion: Criterion,
    pub passed: bool,
}

impl EstimatorReport {
    pub fn new(
        name: impl Into<String>,
        estimate: f64,
        std_error: Option<f64>,
        replicas: usize,
        prediction: Option<f64>,
        criterion: Criterion,
    ) -> Self {
        // a single replica carries no error information
        let std_error = if replicas > 1 { std_error } else { None };
        let passed = criterion.check(estimate, prediction, std_error);
        EstimatorReport {
            name: name.into(),
            estimate,
            std_error,
            replicas,
            prediction,
            criterion,
            passed,
        }
    }

    /// Re-derives the verdict from the stored fields.
    pub fn recompute(&self) -> bool {
        self.criterion.check(self.estimate, self.prediction, self.std_error)
    }

    /// Human-readable one-liner naming the quantity and both values.
    pub fn describe(&self) -> String {
        let mut s = format!(
            "{} {}: estimate {:.6e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.estimate
        );
        if let Some(se) = self.std_error {
            s.push_str(&format!(" ± {se:.2e}"));
        }
        if let Some(p) = self.prediction {
            s.push_str(&format!(", prediction {p:.6e}"));
        }
        s.push_str(&format!(", rule {:?}", self.criterion));
        s
    }
}

/// Writes a CSV summary table of reports.
pub fn write_reports_csv<W: Write>(reports: &[EstimatorReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "name",
        "estimate",
        "std_error",
        "replicas",
        "prediction",
        "rule",
        "passed",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in reports {
        w.write_record([
            r.name.clone(),
            r.estimate.to_string(),
            opt(r.std_error),
            r.replicas.to_string(),
            opt(r.prediction),
            serde_json::to_string(&r.criterion)?,
            r.passed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Report for a hypothesis test: passes when `p ≥ p_min`.
pub fn test_report(name: impl Into<String>, test: &TestResult, p_min: f64) -> EstimatorReport {
    EstimatorReport::new(
        name,
        test.p_value,
        None,
        test.sample_size,
        None,
        Criterion::AtLeast { limit: p_min },
    )
}

/// Mean with a standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: u64,
}

/// Streaming batch-means accumulator for a correlated series.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMeans {
    batch_size: u64,
    current: f64,
    filled: u64,
    total: f64,
    count: u64,
    batches: Vec<f64>,
}

impl BatchMeans {
    pub fn new(batch_size: u64) -> Self {
        BatchMeans {
            batch_size: batch_size.max(1),
            current: 0.0,
            filled: 0,
            total: 0.0,
            count: 0,
            batches: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.current += x;
        self.filled += 1;
        if self.filled == self.batch_size {
            self.total += self.current;
            self.count += self.filled;
            self.batches.push(self.current / self.batch_size as f64);
            self.current = 0.0;
            self.filled = 0;
        }
    }

    /// Appends the complete batches of `other`, in order.
    pub fn merge(&mut self, other: &BatchMeans) {
        self.total += other.total;
        self.count += other.count;
        self.batches.extend_from_slice(&other.batches);
    }

    /// Mean over complete batches and its batch-means standard error.
    pub fn estimate(&self) -> Result<MeanEstimate> {
        if self.batches.len() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2 * self.batch_size as usize,
                got: self.count as usize,
            });
        }
        let var = stats::variance(&self.batches);
        Ok(MeanEstimate {
            mean: self.total / self.count as f64,
            std_error: (var / self.batches.len() as f64).sqrt(),
            count: self.count,
        })
    }
}

/// Minimum stationary sample count for a tail fit.
pub const MIN_TAIL_SAMPLES: u64 = 1_000_000;
/// Exceedances required at the top of the tail-fit window.
pub const MIN_TAIL_EXCEEDANCES: u64 = 10;

/// Streaming survival counts `#{|x| > λ_j}` on a log-spaced grid, plus sign
/// counts of the signed samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailAccumulator {
    pub lambdas: Vec<f64>,
    pub exceedances: Vec<u64>,
    pub total: u64,
    pub positive: u64,
    pub negative: u64,
}

impl TailAccumulator {
    pub fn new(window: (f64, f64), points: usize) -> Result<Self> {
        let (lo, hi) = window;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) || points < 2 {
            return Err(Error::invalid(format!(
                "tail window needs 0 < lo < hi and >= 2 points (got [{lo}, {hi}], {points})"
            )));
        }
        let ratio = (hi / lo).ln();
        let lambdas = (0..points)
            .map(|j| lo * (ratio * j as f64 / (points - 1) as f64).exp())
            .collect();
        Ok(TailAccumulator {
            lambdas,
            exceedances: vec![0; points],
            total: 0,
            positive: 0,
            negative: 0,
        })
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.total += 1;
        if x > 0.0 {
            self.positive += 1;
        } else if x < 0.0 {
            self.negative += 1;
        }
        let a = x.abs();
        if a > self.lambdas[0] {
            for (l, c) in self.lambdas.iter().zip(self.exceedances.iter_mut()) {
                if a > *l {
                    *c += 1;
                } else {
                    break;
                }
            }
        }
    }

    pub fn merge(&mut self, other: &TailAccumulator) {
        self.total += other.total;
        self.positive += other.positive;
        self.negative += other.negative;
        for (a, b) in self.exceedances.iter_mut().zip(&other.exceedances) {
            *a += b;
        }
    }

    /// Log-log regression of the empirical survival function.
    pub fn fit(&self) -> Result<LinearFit> {
        if self.total < MIN_TAIL_SAMPLES {
            return Err(Error::InsufficientSamples {
                needed: MIN_TAIL_SAMPLES as usize,
                got: self.total as usize,
            });
        }
        let top = *self.exceedances.last().expect("nonempty grid");
        if top < MIN_TAIL_EXCEEDANCES {
            // survival at the top of the window is not resolved
            let s_top = top.max(1) as f64 / self.total as f64;
            return Err(Error::InsufficientSamples {
                needed: (MIN_TAIL_EXCEEDANCES as f64 / s_top).ceil() as usize,
                got: self.total as usize,
            });
        }
        let n = self.total as f64;
        let x: Vec<f64> = self.lambdas.iter().map(|l| l.ln()).collect();
        let y: Vec<f64> = self.exceedances.iter().map(|&c| (c as f64 / n).ln()).collect();
        linear_fit(&x, &y)
    }

    /// `(n₊ − n₋)/√(n₊ + n₋)`, standard normal under a symmetric law.
    pub fn sign_z(&self) -> f64 {
        let s = (self.positive + self.negative) as f64;
        if s == 0.0 {
            return 0.0;
        }
        (self.positive as f64 - self.negative as f64) / s.sqrt()
    }
}

/// Tail exponent of samples `e|ψ^α|` over `window`.
pub fn tail_fit(samples: &[f64], window: (f64, f64), tol: f64) -> Result<EstimatorReport> {
    let mut acc = TailAccumulator::new(window, 16)?;
    for &x in samples {
        acc.push(x);
    }
    tail_report(&acc, tol)
}

pub fn tail_report(acc: &TailAccumulator, tol: f64) -> Result<EstimatorReport> {
    let fit = acc.fit()?;
    Ok(EstimatorReport::new(
        "tail.slope",
        fit.slope,
        Some(fit.slope_se),
        acc.total as usize,
        Some(-2.0),
        Criterion::WithinAbs { tol },
    ))
}

pub fn sign_report(acc: &TailAccumulator, k: f64) -> EstimatorReport {
    EstimatorReport::new(
        "tail.sign_balance_z",
        acc.sign_z(),
        None,
        acc.total as usize,
        Some(0.0),
        Criterion::WithinAbs { tol: k },
    )
}

/// One scale of the truncated-variance comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Point {
    pub n: u64,
    pub monte_carlo: MeanEstimate,
    pub quadrature: f64,
}

/// Slope of `y` against `x` with a standard error propagated from
/// independent per-point errors.
pub fn propagated_slope(x: &[f64], y: &[f64], se: &[f64]) -> Result<(f64, f64)> {
    let fit = linear_fit(x, y)?;
    let mx = stats::mean(x);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let var: f64 = x.iter().zip(se).map(|(a, s)| (a - mx).powi(2) * s * s).sum();
    Ok((fit.slope, var.sqrt() / sxx))
}

/// Per-scale MC vs quadrature agreement, and the `ln N` slope of the
/// quadrature values against `target`.
pub fn sigma2_report(
    label: &str,
    points: &[Sigma2Point],
    target: f64,
    rel_tol: f64,
    sigma_band: f64,
) -> Result<Vec<EstimatorReport>> {
    if points.len() < 4 {
        return Err(Error::InsufficientSamples {
            needed: 4,
            got: points.len(),
        });
    }
    let lo = points.iter().map(|p| p.n).min().unwrap_or(0) as f64;
    let hi = points.iter().map(|p| p.n).max().unwrap_or(0) as f64;
    if hi < 100.0 * lo {
        return Err(Error::invalid(format!(
            "sigma2 scales must span two decades (got {lo}..{hi})"
        )));
    }
    let mut out = Vec::with_capacity(points.len() + 2);
    for p in points {
        out.push(EstimatorReport::new(
            format!("sigma2.{label}.mc_vs_quadrature.N{}", p.n),
            p.monte_carlo.mean,
            Some(p.monte_carlo.std_error),
            p.monte_carlo.count as usize,
            Some(p.quadrature),
            Criterion::WithinSigma { k: sigma_band },
        ));
    }
    let x: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let quad: Vec<f64> = points.iter().map(|p| p.quadrature).collect();
    let fit = linear_fit(&x, &quad)?;
    out.push(EstimatorReport::new(
        format!("sigma2.{label}.quadrature_slope"),
        fit.slope,
        Some(fit.slope_se),
        points.len(),
        Some(target),
        Criterion::WithinRel { tol: rel_tol },
    ));
    let mc: Vec<f64> = points.iter().map(|p| p.monte_carlo.mean).collect();
    let se: Vec<f64> = points.iter().map(|p| p.monte_carlo.std_error).collect();
    let (slope, slope_se) = propagated_slope(&x, &mc, &se)?;
    out.push(EstimatorReport::new(
        format!("sigma2.{label}.mc_slope"),
        slope,
        Some(slope_se),
        points.len(),
        Some(target),
        Criterion::Informational,
    ));
    Ok(out)
}

/// Equality of two independent-ish estimates within `k` joint standard errors.
pub fn equality_report(
    name: impl Into<String>,
    a: (f64, f64),
    b: (f64, f64),
    k: f64,
    replicas: usize,
) -> EstimatorReport {
    EstimatorReport::new(
        name,
        a.0 - b.0,
        Some(a.1.hypot(b.1)),
        replicas,
        Some(0.0),
        Criterion::WithinSigma { k },
    )
}

/// Concentration and mean of the predictable quadratic variation
/// `V_{N,⌊Nt⌋}` across replicas.
pub fn predictable_qv(
    values: &[f64],
    prediction: f64,
    dispersion_limit: f64,
    rel_tol: f64,
) -> Result<Vec<EstimatorReport>> {
    if values.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let r = values.len();
    let m = stats::mean(values);
    let sd = stats::variance(values).sqrt();
    Ok(vec![
        EstimatorReport::new(
            "qv.dispersion_over_mean",
            sd / m,
            None,
            r,
            None,
            Criterion::AtMost {
                limit: dispersion_limit,
            },
        ),
        EstimatorReport::new(
            "qv.mean",
            m,
            Some(sd / (r as f64).sqrt()),
            r,
            Some(prediction),
            Criterion::WithinRel { tol: rel_tol },
        ),
    ])
}

/// Minimum replica count for Gaussianity tests.
pub const MIN_REPLICAS: usize = 500;

fn check_replicas(n: usize) -> Result<()> {
    if n < MIN_REPLICAS {
        return Err(Error::InsufficientSamples {
            needed: MIN_REPLICAS,
            got: n,
        });
    }
    Ok(())
}

/// KS test of `samples` against `Normal(0, variance)`.
pub fn ks_normal(samples: &[f64], variance: f64) -> Result<TestResult> {
    check_replicas(samples.len())?;
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::invalid(format!("predicted variance {variance} must be > 0")));
    }
    let sd = variance.sqrt();
    ks_test(samples, |x| stats::standard_normal_cdf(x / sd))
}

/// Moments of order 2, 3, 4 and 6 normalized by their Gaussian values
/// `(m−1)!! v^{m/2}` (odd orders by `v^{m/2}`).
pub fn moment_table(
    name: &str,
    samples: &[f64],
    variance: f64,
    odd_limit: f64,
    fourth_band: (f64, f64),
) -> Result<Vec<EstimatorReport>> {
    check_replicas(samples.len())?;
    if !(variance > 0.0) {
        return Err(Error::invalid(format!("predicted variance {variance} must be > 0")));
    }
    let r = samples.len();
    let sd = variance.sqrt();
    let normalized = |m: i32, scale: f64| -> (f64, f64) {
        let vals: Vec<f64> = samples.iter().map(|x| (x / sd).powi(m) / scale).collect();
        (stats::mean(&vals), (stats::variance(&vals) / r as f64).sqrt())
    };
    let (m2, s2) = normalized(2, 1.0);
    let (m3, s3) = normalized(3, 1.0);
    let (m4, s4) = normalized(4, 3.0);
    let (m6, s6) = normalized(6, 15.0);
    Ok(vec![
        EstimatorReport::new(
            format!("{name}.m2"),
            m2,
            Some(s2),
            r,
            Some(1.0),
            Criterion::Informational,
        ),
        EstimatorReport::new(
            format!("{name}.m3_abs"),
            m3.abs(),
            Some(s3),
            r,
            Some(0.0),
            Criterion::AtMost { limit: odd_limit },
        ),
        EstimatorReport::new(
            format!("{name}.m4"),
            m4,
            Some(s4),
            r,
            Some(1.0),
            Criterion::Between {
                lo: fourth_band.0,
                hi: fourth_band.1,
            },
        ),
        EstimatorReport::new(
            format!("{name}.m6"),
            m6,
            Some(s6),
            r,
            Some(1.0),
            Criterion::Informational,
        ),
    ])
}

/// Correlation between paired samples, e.g. `⟨λ,Z(s)⟩` and `⟨μ,Z(t)−Z(s)⟩`.
pub fn increment_corr(x: &[f64], y: &[f64]) -> Result<TestResult> {
    check_replicas(x.len())?;
    correlation_test(x, y)
}

pub fn correlation_report(name: impl Into<String>, test: &TestResult, limit: f64) -> EstimatorReport {
    EstimatorReport::new(
        name,
        test.statistic.abs(),
        None,
        test.sample_size,
        Some(0.0),
        Criterion::AtMost { limit },
    )
}

/// Mean and concentration of `T_N(1)` against `clock_mean`.
pub fn clock_report(name: &str, values: &[f64], clock_mean: f64, rel_tol: f64) -> Result<Vec<EstimatorReport>> {
    if values.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let r = values.len();
    let m = stats::mean(values);
    let sd = stats::variance(values).sqrt();
    Ok(vec![
        EstimatorReport::new(
            format!("{name}.mean"),
            m,
            Some(sd / (r as f64).sqrt()),
            r,
            Some(clock_mean),
            Criterion::WithinRel { tol: rel_tol },
        ),
        EstimatorReport::new(format!("{name}.std"), sd, None, r, None, Criterion::Informational),
    ])
}

/// Passes when `values` is strictly decreasing; the estimate is the largest
/// ratio of consecutive values.
pub fn decreasing_report(name: impl Into<String>, values: &[f64], replicas: usize) -> EstimatorReport {
    let worst = values
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { f64::INFINITY })
        .fold(f64::NEG_INFINITY, f64::max);
    EstimatorReport::new(name, worst, None, replicas, None, Criterion::Below { limit: 1.0 })
}

/// Ratio of two sample variances against a target.
pub fn variance_ratio_report(
    name: impl Into<String>,
    numerator: &[f64],
    denominator: &[f64],
    target: f64,
    rel_tol: f64,
) -> EstimatorReport {
    let ratio = stats::variance(numerator) / stats::variance(denominator);
    EstimatorReport::new(
        name,
        ratio,
        None,
        numerator.len().min(denominator.len()),
        Some(target),
        Criterion::WithinRel { tol: rel_tol },
    )
}

/// `π` mass of the square bins of a `bins × bins` partition of the torus,
/// row-major in `(k1, k2)`.
pub fn stationary_bin_masses(bins: usize) -> Vec<f64> {
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let width = 1.0 / bins as f64;
    // ∫ sin²(πx) dx over a bin is half the increment of the sin² CDF
    let half: Vec<f64> = edges
        .windows(2)
        .map(|e| 0.5 * (sin2_cdf(e[1]) - sin2_cdf(e[0])))
        .collect();
    let mut out = Vec::with_capacity(bins * bins);
    for hx in &half {
        for hy in &half {
            out.push(hx * width + width * hy);
        }
    }
    out
}

/// `P(k, ·)` mass of the bins of a `bins × bins` partition.
pub fn jump_bin_masses(k: WaveVector, bins: usize) -> Result<Vec<f64>> {
    let w = component_weights(k)?;
    let width = 1.0 / bins as f64;
    let mass: Vec<f64> = (0..bins)
        .map(|i| sin2_cdf((i + 1) as f64 / bins as f64) - sin2_cdf(i as f64 / bins as f64))
        .collect();
    let mut out = Vec::with_capacity(bins * bins);
    for mx in &mass {
        for my in &mass {
            out.push(w[0] * mx * width + w[1] * width * my);
        }
    }
    Ok(out)
}

fn bin_index(k: WaveVector, bins: usize) -> usize {
    let i = ((k.k1() * bins as f64) as usize).min(bins - 1);
    let j = ((k.k2() * bins as f64) as usize).min(bins - 1);
    i * bins + j
}

pub fn histogram(states: &[WaveVector], bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins * bins];
    for &k in states {
        counts[bin_index(k, bins)] += 1;
    }
    counts
}

/// Chi-square of `counts` against bin probabilities `masses`.
pub fn binned_chi_square(counts: &[u64], masses: &[f64]) -> Result<TestResult> {
    let total: u64 = counts.iter().sum();
    let expected: Vec<f64> = masses.iter().map(|m| m * total as f64).collect();
    chi_square_test(counts, &expected, 0)
}

/// Total-variation distance between binned counts and bin probabilities.
pub fn binned_tv(counts: &[u64], masses: &[f64]) -> f64 {
    let total: u64 = counts.iter().sum();
    0.5 * counts
        .iter()
        .zip(masses)
        .map(|(&c, m)| (c as f64 / total as f64 - m).abs())
        .sum::<f64>()
}

/// Binned TV distance between visited states and `π`.
pub fn stationarity_tv(states: &[WaveVector], bins: usize, limit: f64) -> Result<EstimatorReport> {
    if states.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let tv = binned_tv(&histogram(states, bins), &stationary_bin_masses(bins));
    Ok(EstimatorReport::new(
        "stationarity.tv",
        tv,
        None,
        states.len(),
        Some(0.0),
        Criterion::AtMost { limit },
    ))
}

/// Chi-square of jump draws from `k` against the exact kernel.
pub fn jump_histogram_test(k: WaveVector, draws: &[WaveVector], bins: usize) -> Result<TestResult> {
    binned_chi_square(&histogram(draws, bins), &jump_bin_masses(k, bins)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::RandomStream;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussians(seed: u64, n: usize, sd: f64) -> Vec<f64> {
        let mut s = RandomStream::new(seed, 0);
        (0..n)
            .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut s))
            .collect()
    }

    #[test]
    fn verdicts_are_recomputable() {
        let r = EstimatorReport::new("x", 1.1, Some(0.05), 10, Some(1.0), Criterion::WithinSigma { k: 3.0 });
        assert!(r.passed && r.recompute());
        let r = EstimatorReport::new("x", 1.2, Some(0.01), 10, Some(1.0), Criterion::WithinSigma { k: 3.0 });
        assert!(!r.passed && !r.recompute());
        assert!(r.describe().starts_with("FAIL x"));
        // a single replica omits its error and cannot pass a sigma rule
        let r = EstimatorReport::new("x", 1.0, Some(0.01), 1, Some(1.0), Criterion::WithinSigma { k: 3.0 });
        assert_eq!(r.std_error, None);
        assert!(!r.passed);
        assert!(Criterion::Below { limit: 1.0 }.check(0.99, None, None));
        assert!(!Criterion::Below { limit: 1.0 }.check(1.0, None, None));
        let json = serde_json::to_string(&r).unwrap();
        let back: EstimatorReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn batch_means_of_iid_series() {
        let xs = gaussians(1, 100_000, 1.0);
        let mut b = BatchMeans::new(1000);
        xs.iter().for_each(|&x| b.push(x));
        let e = b.estimate().unwrap();
        assert_eq!(e.count, 100_000);
        assert!((e.std_error - 1.0 / 100_000f64.sqrt()).abs() < 0.0012);
        assert!(e.mean.abs() < 4.0 * e.std_error);
        let mut half = BatchMeans::new(1000);
        xs[..50_000].iter().for_each(|&x| half.push(x));
        let mut rest = BatchMeans::new(1000);
        xs[50_000..].iter().for_each(|&x| rest.push(x));
        half.merge(&rest);
        assert!((half.estimate().unwrap().mean - e.mean).abs() < 1e-15);
        assert!(BatchMeans::new(10).estimate().is_err());
    }

    #[test]
    fn synthetic_pareto_tail() {
        let mut s = RandomStream::new(3, 0);
        let xs: Vec<f64> = (0..2_000_000)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                sign / s.uniform().sqrt()
            })
            .collect();
        let r = tail_fit(&xs, (1.0, 10.0), 0.05).unwrap();
        assert!(r.passed, "{}", r.describe());
        assert!(tail_fit(&xs[..1000], (1.0, 10.0), 0.05).is_err());
        // the far window is unresolved at this sample size
        assert!(matches!(
            tail_fit(&xs, (10.0, 1000.0), 0.05),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn null_model_gaussian_passes_declared_thresholds() {
        let v: f64 = 0.37;
        let x = gaussians(11, 2000, v.sqrt());
        let y = gaussians(12, 2000, v.sqrt());
        assert!(ks_normal(&x, v).unwrap().p_value > 0.01);
        for r in moment_table("null", &x, v, 0.1, (0.85, 1.15)).unwrap() {
            assert!(r.passed, "{}", r.describe());
        }
        let c = increment_corr(&x, &y).unwrap();
        assert!(correlation_report("null.corr", &c, 0.05).passed);
        // wrong variance is rejected
        assert!(ks_normal(&x, 2.0 * v).unwrap().p_value < 1e-6);
        assert!(ks_normal(&x[..100], v).is_err());
    }

    #[test]
    fn heavy_tailed_input_fails_the_fourth_moment() {
        let mut s = RandomStream::new(13, 0);
        let x: Vec<f64> = (0..5000)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut s);
                let e = s.exponential();
                g * e
            })
            .collect();
        let table = moment_table("heavy", &x, 2.0, 0.1, (0.85, 1.15)).unwrap();
        assert!(!table[2].passed);
    }

    #[test]
    fn qv_and_clock_reports() {
        let vals = [1.0, 1.02, 0.98, 1.01];
        let r = predictable_qv(&vals, 1.0, 0.1, 0.05).unwrap();
        assert!(r.iter().all(|r| r.passed));
        let r = predictable_qv(&[1.0], 1.0, 0.1, 0.05).unwrap();
        assert_eq!(r[1].std_error, None);
        let c = clock_report("clock", &[0.125, 0.126, 0.124], 0.125, 0.01).unwrap();
        assert!(c[0].passed);
        assert!(decreasing_report("d", &[3.0, 2.0, 1.0], 1).passed);
        assert!(!decreasing_report("d", &[3.0, 2.0, 2.0], 1).passed);
        assert!(!decreasing_report("d", &[0.0, 0.0], 1).passed);
    }

    #[test]
    fn sigma2_needs_two_decades() {
        let p = |n| Sigma2Point {
            n,
            monte_carlo: MeanEstimate {
                mean: 1.0,
                std_error: 0.1,
                count: 100,
            },
            quadrature: 1.0,
        };
        assert!(sigma2_report("e1", &[p(10), p(20), p(30), p(40)], 1.0, 0.2, 3.0).is_err());
        assert!(sigma2_report("e1", &[p(10), p(100)], 1.0, 0.2, 3.0).is_err());
        let ok = sigma2_report("e1", &[p(10), p(100), p(1000), p(10000)], 0.0, 0.2, 3.0).unwrap();
        assert!(ok[..4].iter().all(|r| r.passed));
    }

    #[test]
    fn bin_masses_are_normalized() {
        let pi = stationary_bin_masses(32);
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        let jump = jump_bin_masses(WaveVector::new(0.25, 0.5), 16).unwrap();
        assert!((jump.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        assert!(binned_tv(&[1, 1], &[0.5, 0.5]).abs() < 1e-15);
        assert!((binned_tv(&[2, 0], &[0.5, 0.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn csv_summary() {
        let r = EstimatorReport::new("a", 0.5, None, 1, None, Criterion::AtMost { limit: 1.0 });
        let mut buf = Vec::new();
        write_reports_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("name,estimate,std_error,replicas,prediction,rule,passed\n"));
        assert!(text.contains("a,0.5,,1,,"));
    }
}
