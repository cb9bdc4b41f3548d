//! Truncated moments of the jump displacement `e ψ(X)`.
//!
//! The exponential draw `e` is integrated out in closed form; only the
//! wave-number integral is done by quadrature.

use super::{check_unit, component_weights, psi, sin2_components, stationary_density};
use super::{KernelMatrix, QuadratureRule, WaveVector};
use crate::error::{Error, Result};

/// Lower incomplete gamma function of order 3, `∫₀^z t² e^{-t} dt`.
/// Equals 2 at `z = ∞`.
pub fn lower_gamma3(z: f64) -> f64 {
    if z.is_infinite() {
        return 2.0;
    }
    if z < 1.0 {
        // z³ e^{-z} Σ zⁿ / (3·4···(3+n)); closed form cancels catastrophically here
        let mut term = 1.0 / 3.0;
        let mut sum = term;
        let mut n = 0.0;
        while term > 1e-18 * sum {
            n += 1.0;
            term *= z / (3.0 + n);
            sum += term;
        }
        z * z * z * (-z).exp() * sum
    } else {
        2.0 - (-z).exp() * (z * z + 2.0 * z + 2.0)
    }
}

/// Upper incomplete gamma function of order 2, `∫_z^∞ t e^{-t} dt`.
pub fn upper_gamma2(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        (-z).exp() * (z + 1.0)
    }
}

fn check_scale(n: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(format!("scaling parameter N = {n} must be >= 2")));
    }
    Ok(n as f64)
}

/// `E_e[(Σ_α λ_α e ψ^α(k) 1{e|ψ^α(k)| ≤ √N})²]` at a fixed wave number.
pub fn truncated_moment_at(k: WaveVector, lambda: [f64; 2], n: u64) -> Result<f64> {
    let root_n = (check_scale(n)?).sqrt();
    let p = psi(k)?;
    let mut total = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let coef = lambda[a] * lambda[b] * p[a] * p[b];
            if coef == 0.0 {
                continue;
            }
            let z = root_n / p[a].abs().max(p[b].abs());
            total += coef * lower_gamma3(z);
        }
    }
    Ok(total)
}

/// `I_N(λ) = E_π[(Σ_α λ_α e ψ^α 1{e|ψ^α| ≤ √N})²]`.
pub fn truncated_second_moment(lambda: [f64; 2], n: u64, rule: &impl QuadratureRule) -> Result<f64> {
    check_unit(lambda)?;
    check_scale(n)?;
    rule.integrate(|k| match truncated_moment_at(k, lambda, n) {
        Ok(m) => stationary_density(k) * m,
        Err(_) => f64::NAN,
    })
}

/// `E_π[e|ψ^α| 1{e|ψ^α| > √N}]` for component `alpha ∈ {0, 1}`.
pub fn overshoot_mean(alpha: usize, n: u64, rule: &impl QuadratureRule) -> Result<f64> {
    if alpha > 1 {
        return Err(Error::invalid(format!("component index {alpha} out of range")));
    }
    let root_n = check_scale(n)?.sqrt();
    rule.integrate(|k| match psi(k) {
        Ok(p) => {
            let x = p[alpha].abs();
            if x == 0.0 {
                0.0
            } else {
                stationary_density(k) * x * upper_gamma2(root_n / x)
            }
        }
        Err(_) => f64::NAN,
    })
}

/// Conditional second moment of the normalized truncated increment,
///
/// ```text
/// f_N(k) = E[⟨λ, Ψ̄_{N,m+1}⟩² | X_m = k],
/// ```
///
/// and its iterates `g_N^l(k) = ∫ P^l(k, dk') f_N(k')`.
///
/// Because `P(k, dk') = Σ_α w_α(k) 2 sin²(πk'_α) dk'`, `f_N` is the linear
/// combination `Σ_α w_α(k) h_α` of two wave-number integrals, and
/// `g_N^l = w(k)ᵀ a^l h`.
#[derive(Debug, Clone)]
pub struct ConditionalSecondMoment {
    lambda: [f64; 2],
    n: u64,
    h: [f64; 2],
    step: KernelMatrix,
}

impl ConditionalSecondMoment {
    pub fn new(lambda: [f64; 2], n: u64, rule: &impl QuadratureRule, step: KernelMatrix) -> Result<Self> {
        check_unit(lambda)?;
        let nf = check_scale(n)?;
        let norm = nf * nf.ln();
        let mut h = [0.0; 2];
        for (alpha, slot) in h.iter_mut().enumerate() {
            *slot = rule.integrate(|k| match truncated_moment_at(k, lambda, n) {
                Ok(m) => 2.0 * sin2_components(k)[alpha] * m,
                Err(_) => f64::NAN,
            })? / norm;
        }
        Ok(ConditionalSecondMoment { lambda, n, h, step })
    }

    pub fn lambda(&self) -> [f64; 2] {
        self.lambda
    }

    pub fn scale(&self) -> u64 {
        self.n
    }

    /// The two component integrals `h_α = ∫ 2 sin²(πk_α) m_N(k) dk / (N ln N)`.
    pub fn component_integrals(&self) -> [f64; 2] {
        self.h
    }

    pub fn f_n(&self, k: WaveVector) -> Result<f64> {
        let w = component_weights(k)?;
        Ok(w[0] * self.h[0] + w[1] * self.h[1])
    }

    pub fn g_n_l(&self, k: WaveVector, l: usize) -> Result<f64> {
        if l == 0 {
            return Err(Error::invalid("g_N^l needs l >= 1"));
        }
        let w = component_weights(k)?;
        let mut v = self.h;
        for _ in 0..l {
            v = self.step.apply(v);
        }
        Ok(w[0] * v[0] + w[1] * v[1])
    }

    /// `E_π[f_N] = (h₁ + h₂)/2`, since `∫ w_α dπ = ½`.
    pub fn stationary_mean(&self) -> f64 {
        0.5 * (self.h[0] + self.h[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{m_step_density, m_step_matrix, step_matrix, GradedGrid, QuadratureGrid};
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    /// Brute-force `∫₀^z t² e^{-t} dt` by composite Simpson.
    fn simpson_gamma3(z: f64) -> f64 {
        let n = 20_000;
        let h = z / n as f64;
        let f = |t: f64| t * t * (-t).exp();
        let mut s = f(0.0) + f(z);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn incomplete_gamma_matches_simpson() {
        for &z in &[1e-3, 0.1, 0.5, 0.999, 1.0, 1.5, 4.0, 20.0] {
            let exact = simpson_gamma3(z);
            assert!(
                (lower_gamma3(z) - exact).abs() < 1e-12 * exact.max(1e-12) + 1e-15,
                "z={z}"
            );
        }
        assert_eq!(lower_gamma3(f64::INFINITY), 2.0);
        assert!((lower_gamma3(1e-6) / (1e-18 / 3.0) - 1.0).abs() < 1e-5);
        assert!((upper_gamma2(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(upper_gamma2(f64::INFINITY), 0.0);
    }

    #[test]
    fn truncated_moment_symmetric_and_increasing() {
        let rule = GradedGrid::new(20, 8).unwrap();
        let mut prev = 0.0;
        for p in [10, 12, 14, 16] {
            let n = 1u64 << p;
            let i1 = truncated_second_moment([1.0, 0.0], n, &rule).unwrap();
            let i2 = truncated_second_moment([0.0, 1.0], n, &rule).unwrap();
            assert!((i1 - i2).abs() < 1e-10 * i1);
            assert!(i1 > prev);
            prev = i1;
        }
        assert!(truncated_second_moment([1.0, 1.0], 16, &rule).is_err());
        assert!(truncated_second_moment([1.0, 0.0], 1, &rule).is_err());
    }

    #[test]
    fn sigma2_slope_close_to_closed_form() {
        let rule = GradedGrid::default();
        let ln = |p: i32| (2f64.powi(p)).ln();
        let lo = truncated_second_moment([1.0, 0.0], 1 << 10, &rule).unwrap();
        let hi = truncated_second_moment([1.0, 0.0], 1 << 20, &rule).unwrap();
        let slope = (hi - lo) / (ln(20) - ln(10));
        let target = 1.0 / (128.0 * PI);
        assert!((slope / target - 1.0).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn overshoot_decays_like_inverse_root() {
        let rule = GradedGrid::default();
        let mut prev = f64::INFINITY;
        for p in [10, 14, 18] {
            let n = 1u64 << p;
            let o1 = overshoot_mean(0, n, &rule).unwrap();
            let o2 = overshoot_mean(1, n, &rule).unwrap();
            assert!((o1 - o2).abs() < 1e-10 * o1);
            assert!(o1 < prev);
            prev = o1;
            let c0 = o1 * (n as f64).sqrt();
            assert!(c0 > 0.0 && c0 < 1.0, "C0 = {c0}");
        }
        assert!(overshoot_mean(2, 16, &rule).is_err());
    }

    #[test]
    fn conditional_moment_consistent_with_stationary_moment() {
        let rule = GradedGrid::new(24, 8).unwrap();
        let a = step_matrix(&QuadratureGrid::new(512).unwrap()).unwrap();
        let n = 1u64 << 14;
        let lambda = [FRAC_1_SQRT_2, FRAC_1_SQRT_2];
        let cond = ConditionalSecondMoment::new(lambda, n, &rule, a).unwrap();
        let i_n = truncated_second_moment(lambda, n, &rule).unwrap();
        let nf = n as f64;
        // tower property: ∫ f_N dπ · N ln N = I_N
        let via_quadrature = QuadratureGrid::new(256)
            .unwrap()
            .integrate(|k| cond.f_n(k).unwrap() * stationary_density(k))
            .unwrap();
        assert!((via_quadrature * nf * nf.ln() / i_n - 1.0).abs() < 1e-8);
        assert!((cond.stationary_mean() * nf * nf.ln() / i_n - 1.0).abs() < 1e-12);
        assert!(cond.f_n(WaveVector::ORIGIN).is_err());
    }

    #[test]
    fn f_n_bounded_above_and_below_in_units_of_one_over_n() {
        let rule = GradedGrid::new(24, 8).unwrap();
        let a = step_matrix(&QuadratureGrid::new(256).unwrap()).unwrap();
        let n = 1u64 << 14;
        let cond = ConditionalSecondMoment::new([1.0, 0.0], n, &rule, a).unwrap();
        let grid = QuadratureGrid::new(32).unwrap();
        let vals: Vec<f64> = grid.nodes().map(|k| n as f64 * cond.f_n(k).unwrap()).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(0.0, f64::max);
        assert!(lo > 0.0 && hi < 1.0, "[{lo}, {hi}]");
        for l in 1..=6 {
            for k in grid.nodes().step_by(37) {
                assert!(n as f64 * cond.g_n_l(k, l).unwrap() <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn g_n_l_matches_m_step_quadrature() {
        let rule = GradedGrid::new(20, 8).unwrap();
        let q = QuadratureGrid::new(256).unwrap();
        let a = step_matrix(&q).unwrap();
        let cond = ConditionalSecondMoment::new([0.6, 0.8], 1 << 12, &rule, a).unwrap();
        let k = WaveVector::new(0.1, 0.35);
        for l in 1..=3 {
            let am = m_step_matrix(&a, l).unwrap();
            let brute = q
                .integrate(|kp| m_step_density(&am, k, kp).unwrap() * cond.f_n(kp).unwrap())
                .unwrap();
            let fast = cond.g_n_l(k, l).unwrap();
            assert!((brute / fast - 1.0).abs() < 1e-9, "l={l} {brute} vs {fast}");
        }
    }
}
