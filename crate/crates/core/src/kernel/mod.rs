//! Closed-form physics of the two-dimensional phonon scattering model.
//!
//! A phonon is a pair `(k, i)` with wave number `k` on the torus `[0,1)^2`
//! and polarization `i` in `{1, 2}`. It waits an exponential time with rate
//!
//! ```text
//! Φ(k) = 8 Σ_α sin²(π k_α)
//! ```
//!
//! flips its polarization and jumps to `k'` drawn from
//!
//! ```text
//! P(k, dk') = 2 Σ_α sin²(π k_α) sin²(π k'_α) / Σ_β sin²(π k_β) dk'
//! ```
//!
//! while moving with velocity `v_α(k) = sin(πk_α) cos(πk_α) / sqrt(Σ_β sin²(πk_β))`.
//! The embedded chain is reversible with stationary law `π(dk) = Φ(k)/8 dk`.
//!
//! Everything at `k = 0` is degenerate: `Φ(0) = 0`. Functions that divide by
//! `Φ` return [`Error::DegenerateState`] there.

mod moments;
mod quadrature;

pub use moments::{
    lower_gamma3, overshoot_mean, truncated_moment_at, truncated_second_moment, upper_gamma2, ConditionalSecondMoment,
};
pub use quadrature::{GradedGrid, QuadratureGrid, QuadratureRule};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// A wave number on the two-dimensional torus.
///
/// Both coordinates are kept in `[0, 1)`; construction wraps modulo 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveVector {
    k1: f64,
    k2: f64,
}

fn wrap_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    // rem_euclid of a tiny negative number rounds up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

impl WaveVector {
    pub fn new(k1: f64, k2: f64) -> Self {
        WaveVector {
            k1: wrap_unit(k1),
            k2: wrap_unit(k2),
        }
    }

    pub const ORIGIN: WaveVector = WaveVector { k1: 0.0, k2: 0.0 };

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }

    pub fn coords(&self) -> [f64; 2] {
        [self.k1, self.k2]
    }

    pub fn component(&self, alpha: usize) -> f64 {
        match alpha {
            0 => self.k1,
            _ => self.k2,
        }
    }

    /// Torus addition.
    pub fn shifted(&self, d1: f64, d2: f64) -> Self {
        WaveVector::new(self.k1 + d1, self.k2 + d2)
    }

    /// Euclidean distance to the origin on the torus, each coordinate taken
    /// in `[-1/2, 1/2)`.
    pub fn torus_norm(&self) -> f64 {
        let c = self.centered();
        c[0].hypot(c[1])
    }

    /// Representative coordinates in `[-1/2, 1/2)`.
    pub fn centered(&self) -> [f64; 2] {
        [center(self.k1), center(self.k2)]
    }

    pub fn is_origin(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0
    }
}

fn center(x: f64) -> f64 {
    if x >= 0.5 {
        x - 1.0
    } else {
        x
    }
}

/// `(sin(πx), cos(πx))` evaluated on the centered representative of `x`,
/// which keeps relative precision for `x` just below 1.
#[inline]
fn sin_cos_pi(x: f64) -> (f64, f64) {
    (PI * center(x)).sin_cos()
}

/// `[sin²(πk₁), sin²(πk₂)]`.
#[inline]
pub fn sin2_components(k: WaveVector) -> [f64; 2] {
    let (s1, _) = sin_cos_pi(k.k1);
    let (s2, _) = sin_cos_pi(k.k2);
    [s1 * s1, s2 * s2]
}

/// The polarization label of a phonon. Every jump flips it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    One,
    Two,
}

impl Polarization {
    pub fn flipped(self) -> Self {
        match self {
            Polarization::One => Polarization::Two,
            Polarization::Two => Polarization::One,
        }
    }

    /// Zero-based index, `One -> 0`, `Two -> 1`.
    pub fn index(self) -> usize {
        match self {
            Polarization::One => 0,
            Polarization::Two => 1,
        }
    }

    pub fn value(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Polarization::One
        } else {
            Polarization::Two
        }
    }
}

/// A symmetric, row-stochastic 2×2 matrix: the one-step component matrix `a`
/// or one of its powers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub entries: [[f64; 2]; 2],
}

impl KernelMatrix {
    pub const IDENTITY: KernelMatrix = KernelMatrix {
        entries: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub fn get(&self, alpha: usize, beta: usize) -> f64 {
        self.entries[alpha][beta]
    }

    pub fn row_sum(&self, alpha: usize) -> f64 {
        self.entries[alpha][0] + self.entries[alpha][1]
    }

    pub fn mul(&self, other: &KernelMatrix) -> KernelMatrix {
        let a = &self.entries;
        let b = &other.entries;
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        KernelMatrix { entries: out }
    }

    /// Row vector times matrix.
    pub fn left_apply(&self, w: [f64; 2]) -> [f64; 2] {
        [
            w[0] * self.entries[0][0] + w[1] * self.entries[1][0],
            w[0] * self.entries[0][1] + w[1] * self.entries[1][1],
        ]
    }

    pub fn apply(&self, h: [f64; 2]) -> [f64; 2] {
        [
            self.entries[0][0] * h[0] + self.entries[0][1] * h[1],
            self.entries[1][0] * h[0] + self.entries[1][1] * h[1],
        ]
    }

    /// The non-unit eigenvalue `a₁₁ − a₁₂` of a symmetric stochastic matrix.
    pub fn second_eigenvalue(&self) -> f64 {
        self.entries[0][0] - self.entries[0][1]
    }
}

/// Group velocity `v(k)`. Returns `(0, 0)` at the origin by convention.
pub fn velocity(k: WaveVector) -> [f64; 2] {
    velocity_and_norm(k).0
}

/// `(v(k), Σ_α sin²(πk_α))` from one pair of trig evaluations.
#[inline]
pub(crate) fn velocity_and_norm(k: WaveVector) -> ([f64; 2], [f64; 2]) {
    let (s1, c1) = sin_cos_pi(k.k1);
    let (s2, c2) = sin_cos_pi(k.k2);
    let sq = [s1 * s1, s2 * s2];
    let norm2 = sq[0] + sq[1];
    if norm2 == 0.0 {
        return ([0.0, 0.0], sq);
    }
    let inv = norm2.sqrt().recip();
    ([s1 * c1 * inv, s2 * c2 * inv], sq)
}

/// Total jump rate `Φ(k) = 8 Σ_α sin²(πk_α)`, in `[0, 16]`.
pub fn total_rate(k: WaveVector) -> f64 {
    let s = sin2_components(k);
    8.0 * (s[0] + s[1])
}

/// Scattering kernel `R(k, k') = 16 Σ_α sin²(πk_α) sin²(πk'_α)`.
pub fn scattering_rate(k: WaveVector, k_prime: WaveVector) -> f64 {
    let s = sin2_components(k);
    let t = sin2_components(k_prime);
    16.0 * (s[0] * t[0] + s[1] * t[1])
}

fn degenerate(k: WaveVector) -> Error {
    Error::DegenerateState { k1: k.k1, k2: k.k2 }
}

/// Density of the jump kernel `P(k, ·)` at `k'`.
pub fn jump_density(k: WaveVector, k_prime: WaveVector) -> Result<f64> {
    let s = sin2_components(k);
    let norm = s[0] + s[1];
    if norm == 0.0 {
        return Err(degenerate(k));
    }
    let t = sin2_components(k_prime);
    Ok(2.0 * (s[0] * t[0] + s[1] * t[1]) / norm)
}

/// Mean displacement per unit exponential draw, `ψ(k) = v(k) / Φ(k)`.
pub fn psi(k: WaveVector) -> Result<[f64; 2]> {
    let rate = total_rate(k);
    if rate == 0.0 {
        return Err(degenerate(k));
    }
    let v = velocity(k);
    Ok([v[0] / rate, v[1] / rate])
}

/// Density of the stationary law of the jump chain, `Φ(k)/8`.
pub fn stationary_density(k: WaveVector) -> f64 {
    let s = sin2_components(k);
    s[0] + s[1]
}

/// `E_π[1/Φ]`, the stationary mean waiting time per unit exponential draw,
/// evaluated by quadrature.
pub fn clock_mean(rule: &impl QuadratureRule) -> Result<f64> {
    rule.integrate(|k| {
        let rate = total_rate(k);
        if rate == 0.0 {
            f64::NAN
        } else {
            stationary_density(k) / rate
        }
    })
}

/// Mixture weights `w_α = sin²(πk_α) / Σ_β sin²(πk_β)` of the factorized
/// jump kernel `P(k, dk') = Σ_α w_α · 2 sin²(πk'_α) dk'`.
pub fn component_weights(k: WaveVector) -> Result<[f64; 2]> {
    let s = sin2_components(k);
    let norm = s[0] + s[1];
    if norm == 0.0 {
        return Err(degenerate(k));
    }
    let w1 = s[0] / norm;
    Ok([w1, 1.0 - w1])
}

/// The one-step component matrix `a`, with
/// `a₁₁ = 2∫ sin⁴(πk₁)/Σ` and `a₁₂ = 2∫ sin²(πk₁) sin²(πk₂)/Σ`.
pub fn step_matrix(rule: &impl QuadratureRule) -> Result<KernelMatrix> {
    let diag = rule.integrate(|k| {
        let s = sin2_components(k);
        2.0 * s[0] * s[0] / (s[0] + s[1])
    })?;
    let off = rule.integrate(|k| {
        let s = sin2_components(k);
        2.0 * s[0] * s[1] / (s[0] + s[1])
    })?;
    Ok(KernelMatrix {
        entries: [[diag, off], [off, diag]],
    })
}

/// `A^(m)`: the identity for `m = 1` and `a^(m-1)` otherwise.
pub fn m_step_matrix(a: &KernelMatrix, m: usize) -> Result<KernelMatrix> {
    if m == 0 {
        return Err(Error::invalid("m-step matrix needs m >= 1"));
    }
    let mut out = KernelMatrix::IDENTITY;
    for _ in 1..m {
        out = out.mul(a);
    }
    Ok(out)
}

/// Closed-form density of the `m`-step kernel `P^m(k, ·)` at `k'`, given
/// `A^(m)` from [`m_step_matrix`].
pub fn m_step_density(a_m: &KernelMatrix, k: WaveVector, k_prime: WaveVector) -> Result<f64> {
    let w = component_weights(k)?;
    let t = sin2_components(k_prime);
    let row = a_m.left_apply(w);
    Ok(2.0 * (row[0] * t[0] + row[1] * t[1]))
}

/// Checks that a 2-vector is a unit vector to within `1e-12`.
pub fn check_unit(lambda: [f64; 2]) -> Result<()> {
    let norm = lambda[0].hypot(lambda[1]);
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "direction ({}, {}) is not a unit vector (|λ| = {norm})",
            lambda[0], lambda[1]
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wv(a: f64, b: f64) -> WaveVector {
        WaveVector::new(a, b)
    }

    #[test]
    fn wrap_keeps_coordinates_in_unit_interval() {
        let k = wv(-1e-20, 1.25);
        assert_eq!(k.k1(), 0.0);
        assert_eq!(k.k2(), 0.25);
        let k = wv(-0.25, 3.0);
        assert_eq!(k.coords(), [0.75, 0.0]);
    }

    #[test]
    fn velocity_examples() {
        let v = velocity(wv(0.25, 0.25));
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 0.5).abs() < 1e-15);
        let v = velocity(wv(0.5, 0.5));
        assert!(v[0].abs() < 1e-15 && v[1].abs() < 1e-15);
        assert_eq!(velocity(WaveVector::ORIGIN), [0.0, 0.0]);
        let v = velocity(wv(0.001, 0.001));
        assert!((v[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
        assert!((v[0].hypot(v[1]) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rate_examples() {
        assert!((total_rate(wv(0.25, 0.25)) - 8.0).abs() < 1e-14);
        assert!((total_rate(wv(0.5, 0.5)) - 16.0).abs() < 1e-14);
        assert_eq!(total_rate(WaveVector::ORIGIN), 0.0);
        assert!((scattering_rate(wv(0.25, 0.25), wv(0.5, 0.5)) - 16.0).abs() < 1e-14);
        assert_eq!(scattering_rate(WaveVector::ORIGIN, wv(0.3, 0.7)), 0.0);
    }

    #[test]
    fn jump_density_examples() {
        let p = jump_density(wv(0.25, 0.25), wv(0.5, 0.5)).unwrap();
        assert!((p - 2.0).abs() < 1e-14);
        assert!(matches!(
            jump_density(WaveVector::ORIGIN, wv(0.5, 0.5)),
            Err(Error::DegenerateState { .. })
        ));
    }

    #[test]
    fn psi_examples() {
        let p = psi(wv(0.25, 0.25)).unwrap();
        assert!((p[0] - 1.0 / 16.0).abs() < 1e-15);
        let p = psi(wv(0.5, 0.5)).unwrap();
        assert!(p[0].abs() < 1e-15 && p[1].abs() < 1e-15);
        assert!(psi(WaveVector::ORIGIN).is_err());
        // |ψ(t,t)| ≈ 1 / (8π² · 2t²) for small t
        for &t in &[1e-3, 1e-4, 1e-5] {
            let p = psi(wv(t, t)).unwrap();
            let scaled = p[0].hypot(p[1]) * 8.0 * PI * PI * 2.0 * t * t;
            assert!((scaled - 1.0).abs() < 10.0 * t, "t={t} scaled={scaled}");
        }
    }

    #[test]
    fn weights_examples() {
        let w = component_weights(wv(0.25, 0.5)).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15 && (w[1] - 2.0 / 3.0).abs() < 1e-15);
        let w = component_weights(wv(0.25, 0.25)).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!(component_weights(WaveVector::ORIGIN).is_err());
    }

    #[test]
    fn stationary_density_and_clock_mean() {
        assert!((stationary_density(wv(0.25, 0.25)) - 1.0).abs() < 1e-15);
        let grid = QuadratureGrid::new(256).unwrap();
        let total = grid.integrate(stationary_density).unwrap();
        assert!((total - 1.0).abs() < 1e-10);
        let mu = clock_mean(&grid).unwrap();
        assert!((mu - 0.125).abs() < 1e-12);
    }

    #[test]
    fn jump_density_normalized() {
        let grid = QuadratureGrid::new(256).unwrap();
        for &k in &[wv(0.25, 0.25), wv(0.01, 0.9), wv(0.5, 0.001), wv(0.37, 0.61)] {
            let total = grid.integrate(|kp| jump_density(k, kp).unwrap()).unwrap();
            assert!((total - 1.0).abs() < 1e-10, "k={k:?} total={total}");
        }
    }

    #[test]
    fn step_matrix_is_stochastic_and_matches_finer_grid() {
        let a512 = step_matrix(&QuadratureGrid::new(512).unwrap()).unwrap();
        let a1024 = step_matrix(&QuadratureGrid::new(1024).unwrap()).unwrap();
        assert!((a512.row_sum(0) - 1.0).abs() < 1e-10);
        assert!((a512.get(0, 1) - a1024.get(0, 1)).abs() < 1e-10);
        // frozen from the G = 1024 midpoint rule
        assert!((a1024.get(0, 1) - A12_GOLDEN).abs() < 1e-10, "{}", a1024.get(0, 1));
    }

    /// Off-diagonal entry of the one-step component matrix.
    const A12_GOLDEN: f64 = 0.36338022763241;

    #[test]
    fn m_step_rows_sum_to_one() {
        let a = step_matrix(&QuadratureGrid::new(256).unwrap()).unwrap();
        assert_eq!(m_step_matrix(&a, 1).unwrap(), KernelMatrix::IDENTITY);
        assert!(m_step_matrix(&a, 0).is_err());
        for m in 1..=20 {
            let am = m_step_matrix(&a, m).unwrap();
            for alpha in 0..2 {
                assert!((am.row_sum(alpha) - 1.0).abs() < 1e-10);
            }
            assert_eq!(am.get(0, 1), am.get(1, 0));
        }
    }

    #[test]
    fn m_step_density_normalized_and_converges_geometrically() {
        let grid = QuadratureGrid::new(128).unwrap();
        let a = step_matrix(&QuadratureGrid::new(256).unwrap()).unwrap();
        let k = wv(0.05, 0.4);
        let mut prev = f64::INFINITY;
        let mut distances = Vec::new();
        for m in 1..=8 {
            let am = m_step_matrix(&a, m).unwrap();
            let total = grid.integrate(|kp| m_step_density(&am, k, kp).unwrap()).unwrap();
            assert!((total - 1.0).abs() < 1e-10);
            // sup over k' of |P^m - π|; the density is a combination of sin² terms,
            // so the sup sits at one of the four corners of sin² ∈ {0,1}².
            let sup = [(0.0, 0.5), (0.5, 0.0), (0.5, 0.5)]
                .iter()
                .map(|&(x, y)| {
                    let kp = wv(x, y);
                    (m_step_density(&am, k, kp).unwrap() - stationary_density(kp)).abs()
                })
                .fold(0.0, f64::max);
            assert!(sup < prev, "m={m}");
            prev = sup;
            distances.push(sup);
        }
        let lambda2 = a.second_eigenvalue().abs();
        for w in distances.windows(2).skip(1) {
            assert!((w[1] / w[0] - lambda2).abs() < 1e-8);
        }
    }

    #[test]
    fn pointwise_bounds_and_detailed_balance() {
        let a = step_matrix(&QuadratureGrid::new(256).unwrap()).unwrap();
        let mats: Vec<_> = [1, 2, 5].iter().map(|&m| m_step_matrix(&a, m).unwrap()).collect();
        let mut x = 0.123_f64;
        let mut next = || {
            // deterministic low-discrepancy walk
            x = (x + 0.618_033_988_749_895) % 1.0;
            x
        };
        for _ in 0..10_000 {
            let k = wv(next(), next());
            let kp = wv(next(), next());
            let lhs = stationary_density(k) * jump_density(k, kp).unwrap();
            let rhs = stationary_density(kp) * jump_density(kp, k).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
            let v = velocity(k);
            assert!(v[0].hypot(v[1]) <= 1.0 + 1e-15);
            let s = sin2_components(kp);
            for am in &mats {
                assert!(m_step_density(am, k, kp).unwrap() <= 2.0 * (s[0] + s[1]) + 1e-12);
            }
        }
    }

    #[test]
    fn unit_check() {
        assert!(check_unit([1.0, 0.0]).is_ok());
        assert!(check_unit([0.6, 0.8]).is_ok());
        assert!(check_unit([1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn speed_at_most_one(a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let v = velocity(WaveVector::new(a, b));
            prop_assert!(v[0].hypot(v[1]) <= 1.0 + 1e-15);
        }

        #[test]
        fn kernel_symmetry(a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64, d in 0.0..1.0f64) {
            let k = WaveVector::new(a, b);
            let kp = WaveVector::new(c, d);
            prop_assert_eq!(scattering_rate(k, kp), scattering_rate(kp, k));
            if let Ok(w) = component_weights(k) {
                prop_assert!((w[0] + w[1] - 1.0).abs() < 1e-15);
            }
        }
    }
}
