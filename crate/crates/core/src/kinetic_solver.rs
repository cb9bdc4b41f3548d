//! Deterministic solver for Fourier slices of the kinetic equation
//!
//! ```text
//! ∂_t û(α, k) = −i q·v(k) û(α, k) + ℒû(α, k),
//! ℒf(α, k) = 16 Σ_γ sin²(πk_γ) ∫ sin²(πk'_γ) f(β, k') dk' − Φ(k) f(α, k),   β ≠ α,
//! ```
//!
//! on a midpoint lattice. Inner products and norms are taken under the
//! invariant measure `π̃(α, dk) = ½ dk`.

use crate::error::{Error, Result};
use crate::kernel::{sin2_components, total_rate, velocity, QuadratureGrid, WaveVector};
use crate::sampler::RandomStream;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Per-node coefficients of the collision operator and the transport term.
#[derive(Debug, Clone)]
pub struct GridOperator {
    grid: QuadratureGrid,
    sin2: Vec<[f64; 2]>,
    rate: Vec<f64>,
    velocity: Vec<[f64; 2]>,
}

impl GridOperator {
    pub fn new(grid: QuadratureGrid) -> Self {
        let nodes: Vec<WaveVector> = grid.nodes().collect();
        GridOperator {
            grid,
            sin2: nodes.iter().map(|&k| sin2_components(k)).collect(),
            rate: nodes.iter().map(|&k| total_rate(k)).collect(),
            velocity: nodes.iter().map(|&k| velocity(k)).collect(),
        }
    }

    pub fn grid(&self) -> QuadratureGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.rate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rate.is_empty()
    }

    pub fn node(&self, idx: usize) -> WaveVector {
        self.grid.node(idx)
    }

    pub fn max_rate(&self) -> f64 {
        self.rate.iter().copied().fold(0.0, f64::max)
    }

    /// `M_γ[f] = ∫ sin²(πk_γ) f(k) dk`, fixed-order sums.
    fn moments(&self, f: &[Complex64]) -> [Complex64; 2] {
        let mut m = [Complex64::new(0.0, 0.0); 2];
        for (s, x) in self.sin2.iter().zip(f) {
            m[0] += s[0] * x;
            m[1] += s[1] * x;
        }
        let w = self.grid.weight();
        [m[0] * w, m[1] * w]
    }

    /// Gain term `16 Σ_γ sin²(πk_γ) M_γ[f_β]` written into `out`.
    fn gain_into(&self, f: &PhaseField, out: &mut PhaseField) {
        for alpha in 0..2 {
            let m = self.moments(&f.values[1 - alpha]);
            let (a, b) = (16.0 * m[0], 16.0 * m[1]);
            for (o, s) in out.values[alpha].iter_mut().zip(&self.sin2) {
                *o = s[0] * a + s[1] * b;
            }
        }
    }
}

/// A complex field `f(α, k)` on the lattice, one vector per polarization.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    grid: QuadratureGrid,
    values: [Vec<Complex64>; 2],
}

impl PhaseField {
    pub fn zeros(grid: QuadratureGrid) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); grid.len()];
        PhaseField {
            grid,
            values: [z.clone(), z],
        }
    }

    pub fn from_fn(grid: QuadratureGrid, f: impl Fn(usize, WaveVector) -> Complex64) -> Self {
        let mut out = Self::zeros(grid);
        for alpha in 0..2 {
            for (idx, slot) in out.values[alpha].iter_mut().enumerate() {
                *slot = f(alpha, grid.node(idx));
            }
        }
        out
    }

    pub fn from_real(grid: QuadratureGrid, f: impl Fn(usize, WaveVector) -> f64) -> Self {
        Self::from_fn(grid, |a, k| Complex64::new(f(a, k), 0.0))
    }

    pub fn constant(grid: QuadratureGrid, c: Complex64) -> Self {
        Self::from_fn(grid, |_, _| c)
    }

    pub fn grid(&self) -> QuadratureGrid {
        self.grid
    }

    pub fn values(&self, alpha: usize) -> &[Complex64] {
        &self.values[alpha]
    }

    pub fn values_mut(&mut self, alpha: usize) -> &mut [Complex64] {
        &mut self.values[alpha]
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .flatten()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn weight(&self) -> f64 {
        0.5 * self.grid.weight()
    }

    /// `π̃[f] = ½ Σ_α ∫ f_α dk`.
    pub fn mean(&self) -> Complex64 {
        let s: Complex64 = self.values.iter().flatten().sum();
        s * self.weight()
    }

    /// `‖f‖²_{π̃,2}`.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>() * self.weight()
    }

    /// `‖f‖_{L^p(π̃)}`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let s: f64 = self.values.iter().flatten().map(|z| z.norm().powf(p)).sum();
        (s * self.weight()).powf(1.0 / p)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `(f, g)_{π̃}`, antilinear in `f`.
    pub fn inner(&self, other: &PhaseField) -> Complex64 {
        let s: Complex64 = self
            .values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| a.conj() * b)
            .sum();
        s * self.weight()
    }

    pub fn subtract_mean(&mut self) {
        let m = self.mean();
        self.values.iter_mut().flatten().for_each(|z| *z -= m);
    }

    pub fn max_abs_diff(&self, other: &PhaseField) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    fn axpy(&mut self, a: f64, x: &PhaseField) {
        for (u, v) in self.values.iter_mut().flatten().zip(x.values.iter().flatten()) {
            *u += a * v;
        }
    }

    fn flat(&self) -> impl Iterator<Item = &Complex64> {
        self.values.iter().flatten()
    }
}

/// `ℒf` via the rank-2 factorization of the scattering rate.
pub fn collision_apply(op: &GridOperator, f: &PhaseField) -> PhaseField {
    let mut out = PhaseField::zeros(op.grid);
    op.gain_into(f, &mut out);
    for alpha in 0..2 {
        for ((o, x), r) in out.values[alpha].iter_mut().zip(&f.values[alpha]).zip(&op.rate) {
            *o -= r * x;
        }
    }
    out
}

/// `ℰ(f, f) = −Re (f, ℒf)_{π̃}`.
pub fn dirichlet_form(op: &GridOperator, f: &PhaseField) -> f64 {
    -f.inner(&collision_apply(op, f)).re
}

/// The generator as a dense symmetric `2G² × 2G²` matrix, indexed by
/// `α·G² + node`.
pub fn dense_generator(op: &GridOperator) -> DMatrix<f64> {
    let n = op.len();
    let w = op.grid.weight();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let g = 16.0 * w * (op.sin2[i][0] * op.sin2[j][0] + op.sin2[i][1] * op.sin2[j][1]);
            m[(i, n + j)] = g;
            m[(n + i, j)] = g;
        }
        m[(i, i)] = -op.rate[i];
        m[(n + i, n + i)] = -op.rate[i];
    }
    m
}

/// Dense application of a real operator to a complex field.
pub fn dense_apply(matrix: &DMatrix<f64>, f: &PhaseField) -> PhaseField {
    let n = f.grid.len();
    let re = DVector::from_iterator(2 * n, f.flat().map(|z| z.re));
    let im = DVector::from_iterator(2 * n, f.flat().map(|z| z.im));
    let (re, im) = (matrix * re, matrix * im);
    let mut out = PhaseField::zeros(f.grid);
    for alpha in 0..2 {
        for i in 0..n {
            out.values[alpha][i] = Complex64::new(re[alpha * n + i], im[alpha * n + i]);
        }
    }
    out
}

/// Spectral decomposition of the `q = 0` generator, exact semigroup oracle
/// for small grids.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    grid: QuadratureGrid,
    eigen: SymmetricEigen<f64, nalgebra::Dyn>,
}

impl DenseOracle {
    pub fn new(op: &GridOperator) -> Self {
        DenseOracle {
            grid: op.grid,
            eigen: SymmetricEigen::new(dense_generator(op)),
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.eigen.eigenvalues.as_slice()
    }

    fn coefficients(&self, f: &PhaseField) -> (DVector<f64>, DVector<f64>) {
        let n = 2 * self.grid.len();
        let re = DVector::from_iterator(n, f.flat().map(|z| z.re));
        let im = DVector::from_iterator(n, f.flat().map(|z| z.im));
        let vt = self.eigen.eigenvectors.transpose();
        (&vt * re, &vt * im)
    }

    /// `e^{tℒ} f`.
    pub fn evolve(&self, f: &PhaseField, t: f64) -> PhaseField {
        let (mut cr, mut ci) = self.coefficients(f);
        for (j, lam) in self.eigen.eigenvalues.iter().enumerate() {
            let e = (lam * t).exp();
            cr[j] *= e;
            ci[j] *= e;
        }
        let v = &self.eigen.eigenvectors;
        let (re, im) = (v * cr, v * ci);
        let n = self.grid.len();
        let mut out = PhaseField::zeros(self.grid);
        for alpha in 0..2 {
            for i in 0..n {
                out.values[alpha][i] = Complex64::new(re[alpha * n + i], im[alpha * n + i]);
            }
        }
        out
    }

    /// Smallest decay rate `−λ` among eigenmodes carrying a relative share
    /// above `threshold` of `f`'s mass.
    pub fn slowest_rate(&self, f: &PhaseField, threshold: f64) -> f64 {
        let (cr, ci) = self.coefficients(f);
        let total: f64 = cr.iter().zip(ci.iter()).map(|(a, b)| a * a + b * b).sum();
        self.eigen
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(j, _)| (cr[*j].powi(2) + ci[*j].powi(2)) > threshold * total)
            .map(|(_, lam)| -lam)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Time integrator for [`evolve_slice`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum Integrator {
    /// Classic fourth-order Runge–Kutta; `dt ≤ 0.05/16`.
    Rk4 { dt: f64 },
    /// Fourth-order exponential time differencing with the diagonal part
    /// `−(i q·v + Φ)` integrated exactly.
    Etd { dt: f64 },
}

impl Integrator {
    pub const RK4_DT_LIMIT: f64 = 0.05 / 16.0;

    pub fn dt(&self) -> f64 {
        match *self {
            Integrator::Rk4 { dt } | Integrator::Etd { dt } => dt,
        }
    }
}

/// Number of contour points for the ETD coefficient functions.
const CONTOUR_POINTS: usize = 64;

/// Stepper for one slice at fixed momentum `q`.
#[derive(Debug, Clone)]
pub struct SliceEvolver<'a> {
    op: &'a GridOperator,
    q: [f64; 2],
    integrator: Integrator,
    /// `−(i q·v + Φ)` per node.
    diag: Vec<Complex64>,
    etd: Option<EtdCoefficients>,
}

#[derive(Debug, Clone)]
struct EtdCoefficients {
    h: f64,
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

impl EtdCoefficients {
    /// Cox–Matthews coefficients, evaluated by contour averaging around
    /// each `z = h·c` to avoid cancellation near 0.
    fn new(diag: &[Complex64], h: f64) -> Self {
        let roots: Vec<Complex64> = (0..CONTOUR_POINTS)
            .map(|j| {
                let theta = std::f64::consts::TAU * (j as f64 + 0.5) / CONTOUR_POINTS as f64;
                Complex64::from_polar(1.0, theta)
            })
            .collect();
        let m = CONTOUR_POINTS as f64;
        let mut out = EtdCoefficients {
            h,
            e: Vec::with_capacity(diag.len()),
            e2: Vec::with_capacity(diag.len()),
            q: Vec::with_capacity(diag.len()),
            f1: Vec::with_capacity(diag.len()),
            f2: Vec::with_capacity(diag.len()),
            f3: Vec::with_capacity(diag.len()),
        };
        for &c in diag {
            let z = c * h;
            let (mut q, mut f1, mut f2, mut f3) = (
                Complex64::default(),
                Complex64::default(),
                Complex64::default(),
                Complex64::default(),
            );
            for &r0 in &roots {
                let r = z + r0;
                let er = r.exp();
                let r3 = r * r * r;
                q += ((r / 2.0).exp() - 1.0) / r;
                f1 += (-4.0 - r + er * (4.0 - 3.0 * r + r * r)) / r3;
                f2 += (2.0 + r + er * (r - 2.0)) / r3;
                f3 += (-4.0 - 3.0 * r - r * r + er * (4.0 - r)) / r3;
            }
            out.e.push(z.exp());
            out.e2.push((z / 2.0).exp());
            out.q.push(q * (h / m));
            out.f1.push(f1 * (h / m));
            out.f2.push(f2 * (h / m));
            out.f3.push(f3 * (h / m));
        }
        out
    }
}

impl<'a> SliceEvolver<'a> {
    pub fn new(op: &'a GridOperator, q: [f64; 2], integrator: Integrator) -> Result<Self> {
        let dt = integrator.dt();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step {dt} must be positive")));
        }
        if let Integrator::Rk4 { dt } = integrator {
            if dt > Integrator::RK4_DT_LIMIT {
                return Err(Error::StabilityViolation {
                    dt,
                    limit: Integrator::RK4_DT_LIMIT,
                });
            }
        }
        let diag: Vec<Complex64> = op
            .velocity
            .iter()
            .zip(&op.rate)
            .map(|(v, r)| Complex64::new(-r, -(q[0] * v[0] + q[1] * v[1])))
            .collect();
        let etd = match integrator {
            Integrator::Etd { dt } => Some(EtdCoefficients::new(&diag, dt)),
            Integrator::Rk4 { .. } => None,
        };
        Ok(SliceEvolver {
            op,
            q,
            integrator,
            diag,
            etd,
        })
    }

    pub fn momentum(&self) -> [f64; 2] {
        self.q
    }

    /// Full right-hand side `(−i q·v − Φ) f + gain(f)`.
    fn rhs(&self, f: &PhaseField, out: &mut PhaseField) {
        self.op.gain_into(f, out);
        for alpha in 0..2 {
            for ((o, x), d) in out.values[alpha].iter_mut().zip(&f.values[alpha]).zip(&self.diag) {
                *o += d * x;
            }
        }
    }

    fn rk4_step(&self, u: &mut PhaseField, h: f64, scratch: &mut [PhaseField; 5]) {
        let [k1, k2, k3, k4, tmp] = scratch;
        self.rhs(u, k1);
        tmp.clone_from(u);
        tmp.axpy(0.5 * h, k1);
        self.rhs(tmp, k2);
        tmp.clone_from(u);
        tmp.axpy(0.5 * h, k2);
        self.rhs(tmp, k3);
        tmp.clone_from(u);
        tmp.axpy(h, k3);
        self.rhs(tmp, k4);
        for alpha in 0..2 {
            for (i, x) in u.values[alpha].iter_mut().enumerate() {
                *x += (h / 6.0)
                    * (k1.values[alpha][i]
                        + 2.0 * k2.values[alpha][i]
                        + 2.0 * k3.values[alpha][i]
                        + k4.values[alpha][i]);
            }
        }
    }

    fn etd_step(&self, c: &EtdCoefficients, u: &mut PhaseField, scratch: &mut [PhaseField; 5]) {
        let [nu, na, nb, nc, tmp] = scratch;
        let mut a = PhaseField::zeros(u.grid);
        self.op.gain_into(u, nu);
        for alpha in 0..2 {
            for i in 0..u.values[alpha].len() {
                a.values[alpha][i] = c.e2[i] * u.values[alpha][i] + c.q[i] * nu.values[alpha][i];
            }
        }
        self.op.gain_into(&a, na);
        for alpha in 0..2 {
            for i in 0..u.values[alpha].len() {
                tmp.values[alpha][i] = c.e2[i] * u.values[alpha][i] + c.q[i] * na.values[alpha][i];
            }
        }
        self.op.gain_into(tmp, nb);
        for alpha in 0..2 {
            for i in 0..u.values[alpha].len() {
                tmp.values[alpha][i] =
                    c.e2[i] * a.values[alpha][i] + c.q[i] * (2.0 * nb.values[alpha][i] - nu.values[alpha][i]);
            }
        }
        self.op.gain_into(tmp, nc);
        for alpha in 0..2 {
            for i in 0..u.values[alpha].len() {
                u.values[alpha][i] = c.e[i] * u.values[alpha][i]
                    + c.f1[i] * nu.values[alpha][i]
                    + 2.0 * c.f2[i] * (na.values[alpha][i] + nb.values[alpha][i])
                    + c.f3[i] * nc.values[alpha][i];
            }
        }
    }

    /// Advances `u` by `duration` using steps of at most `dt`. In ETD mode
    /// the step is exactly `dt` and `duration` must be a multiple of it.
    pub fn advance(&self, u: &mut PhaseField, duration: f64) -> Result<()> {
        if duration < 0.0 || !duration.is_finite() {
            return Err(Error::invalid(format!("cannot evolve for duration {duration}")));
        }
        if duration == 0.0 {
            return Ok(());
        }
        let mut scratch = [
            PhaseField::zeros(u.grid),
            PhaseField::zeros(u.grid),
            PhaseField::zeros(u.grid),
            PhaseField::zeros(u.grid),
            PhaseField::zeros(u.grid),
        ];
        match (&self.etd, self.integrator) {
            (Some(c), _) => {
                let steps = (duration / c.h).round();
                if ((steps * c.h) - duration).abs() > 1e-9 * duration.max(1.0) {
                    return Err(Error::invalid(format!(
                        "duration {duration} is not a multiple of the ETD step {}",
                        c.h
                    )));
                }
                for _ in 0..steps as u64 {
                    self.etd_step(c, u, &mut scratch);
                }
            }
            (None, integrator) => {
                let steps = (duration / integrator.dt()).ceil().max(1.0);
                let h = duration / steps;
                for _ in 0..steps as u64 {
                    self.rk4_step(u, h, &mut scratch);
                }
            }
        }
        if !u.is_finite() {
            return Err(Error::StabilityViolation {
                dt: self.integrator.dt(),
                limit: Integrator::RK4_DT_LIMIT,
            });
        }
        Ok(())
    }
}

/// `û(t_end)` for the slice at momentum `q` started from `f0`.
pub fn evolve_slice(
    op: &GridOperator,
    q: [f64; 2],
    f0: &PhaseField,
    t_end: f64,
    integrator: Integrator,
) -> Result<PhaseField> {
    check_grid(op, f0)?;
    let ev = SliceEvolver::new(op, q, integrator)?;
    let mut u = f0.clone();
    ev.advance(&mut u, t_end)?;
    Ok(u)
}

fn check_grid(op: &GridOperator, f: &PhaseField) -> Result<()> {
    if op.grid != f.grid {
        return Err(Error::invalid(format!(
            "field lives on a {0}x{0} grid, operator on {1}x{1}",
            f.grid.points_per_axis(),
            op.grid.points_per_axis()
        )));
    }
    Ok(())
}

/// Catalog of initial data for the decay experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialDatum {
    /// Indicator of `|k| < radius` (torus norm) in both polarizations.
    NearZeroBump { radius: f64 },
    /// Indicator of `|k − center| < radius` in both polarizations.
    Bump { center: [f64; 2], radius: f64 },
    /// `f_1 = 1`, `f_2 = −1`.
    PolarizationOdd,
}

impl InitialDatum {
    pub fn field(&self, grid: QuadratureGrid) -> PhaseField {
        match *self {
            InitialDatum::NearZeroBump { radius } => {
                PhaseField::from_real(grid, |_, k| if k.torus_norm() < radius { 1.0 } else { 0.0 })
            }
            InitialDatum::Bump { center, radius } => PhaseField::from_real(grid, |_, k| {
                let c = k.shifted(-center[0], -center[1]);
                if c.torus_norm() < radius {
                    1.0
                } else {
                    0.0
                }
            }),
            InitialDatum::PolarizationOdd => PhaseField::from_real(grid, |a, _| if a == 0 { 1.0 } else { -1.0 }),
        }
    }
}

/// `‖S_t f‖²` over a time window and the algebraic decay diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub p: f64,
    pub lp_norm: f64,
    pub times: Vec<f64>,
    pub norms_sq: Vec<f64>,
    /// `‖S_t f‖² t^{1−2/p} / ‖f‖²_p`.
    pub scaled: Vec<f64>,
    /// Exponent of a power-law fit `‖S_t f‖² ∝ t^{−exponent}`.
    pub fitted_exponent: f64,
    /// Smallest constant making the algebraic bound hold on the window.
    pub constant: f64,
    /// `max scaled / scaled(t₀)`.
    pub sup_ratio: f64,
    /// `|π̃[S_t f]|` at the last time; zero up to integrator error.
    pub final_mean: f64,
}

/// Evolves `f0 − π̃[f0]` with `q = 0` and records the decay of its norm.
pub fn semigroup_norm_decay(
    op: &GridOperator,
    f0: &PhaseField,
    times: &[f64],
    p: f64,
    integrator: Integrator,
) -> Result<DecayReport> {
    check_grid(op, f0)?;
    if times.len() < 2 || times.windows(2).any(|w| w[1] <= w[0]) || times[0] <= 0.0 {
        return Err(Error::invalid("decay times must be positive and strictly increasing"));
    }
    if p <= 2.0 {
        return Err(Error::invalid(format!("exponent p = {p} must exceed 2")));
    }
    let mut u = f0.clone();
    u.subtract_mean();
    let lp = u.lp_norm(p);
    let ev = SliceEvolver::new(op, [0.0, 0.0], integrator)?;
    let mut now = 0.0;
    let mut norms_sq = Vec::with_capacity(times.len());
    for &t in times {
        ev.advance(&mut u, t - now)?;
        now = t;
        norms_sq.push(u.norm_sq());
    }
    decay_summary(p, lp, times, norms_sq, u.mean().norm())
}

fn decay_summary(p: f64, lp: f64, times: &[f64], norms_sq: Vec<f64>, final_mean: f64) -> Result<DecayReport> {
    let power = 1.0 - 2.0 / p;
    let scaled: Vec<f64> = times
        .iter()
        .zip(&norms_sq)
        .map(|(t, n)| n * t.powf(power) / (lp * lp))
        .collect();
    let x: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = norms_sq.iter().map(|n| n.max(f64::MIN_POSITIVE).ln()).collect();
    let fit = crate::stats::linear_fit(&x, &y)?;
    let constant = scaled.iter().copied().fold(0.0, f64::max);
    Ok(DecayReport {
        p,
        lp_norm: lp,
        times: times.to_vec(),
        norms_sq,
        sup_ratio: constant / scaled[0],
        scaled,
        fitted_exponent: -fit.slope,
        constant,
        final_mean,
    })
}

/// [`semigroup_norm_decay`] computed with the dense spectral oracle.
pub fn oracle_norm_decay(oracle: &DenseOracle, f0: &PhaseField, times: &[f64], p: f64) -> Result<DecayReport> {
    let mut u = f0.clone();
    u.subtract_mean();
    let lp = u.lp_norm(p);
    let last = oracle.evolve(&u, *times.last().unwrap_or(&0.0));
    let norms_sq = times.iter().map(|&t| oracle.evolve(&u, t).norm_sq()).collect();
    decay_summary(p, lp, times, norms_sq, last.mean().norm())
}

/// Weak Poincaré and Nash constants of one mean-zero field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakPoincareReport {
    pub p: f64,
    pub energy: f64,
    pub norm_sq: f64,
    pub lp_norm_sq: f64,
    pub radii: Vec<f64>,
    /// Smallest `C₀(r)` with `‖f‖² ≤ C₀ r^{−p/(p−2)} ℰ + r ‖f‖²_p`.
    pub c0: Vec<f64>,
    pub c0_max: f64,
    /// Smallest `C` with `‖f‖² ≤ C ℰ^{1/a} (‖f‖²_p)^{1−1/a}`, `a = (2p−2)/(p−2)`.
    pub nash_constant: f64,
}

pub fn weak_poincare_check(op: &GridOperator, f: &PhaseField, p: f64, radii: &[f64]) -> Result<WeakPoincareReport> {
    check_grid(op, f)?;
    if p <= 2.0 {
        return Err(Error::invalid(format!("exponent p = {p} must exceed 2")));
    }
    let norm_sq = f.norm_sq();
    let m = f.mean().norm();
    if m > 1e-10 * (1.0 + norm_sq.sqrt()) {
        return Err(Error::invalid(format!(
            "field must have zero π̃-mean (got |mean| = {m:e})"
        )));
    }
    if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::invalid("radii must be positive"));
    }
    let energy = dirichlet_form(op, f);
    let lp_sq = f.lp_norm(p).powi(2);
    let expo = p / (p - 2.0);
    let c0: Vec<f64> = radii
        .iter()
        .map(|&r| (norm_sq - r * lp_sq).max(0.0) * r.powf(expo) / energy)
        .collect();
    let a = (2.0 * p - 2.0) / (p - 2.0);
    let nash = norm_sq / (energy.powf(1.0 / a) * lp_sq.powf(1.0 - 1.0 / a));
    Ok(WeakPoincareReport {
        p,
        energy,
        norm_sq,
        lp_norm_sq: lp_sq,
        radii: radii.to_vec(),
        c0_max: c0.iter().copied().fold(0.0, f64::max),
        c0,
        nash_constant: nash,
    })
}

/// A random real field built from low Fourier modes `|m|_∞ ≤ modes` with
/// coefficients damped by `1/(1+|m|²)`, mean removed.
pub fn random_smooth_field(grid: QuadratureGrid, stream: &mut RandomStream, modes: i32) -> PhaseField {
    let mut coef = Vec::new();
    for _alpha in 0..2 {
        let mut c = Vec::new();
        for m1 in -modes..=modes {
            for m2 in -modes..=modes {
                let damp = 1.0 / (1.0 + (m1 * m1 + m2 * m2) as f64);
                let a: f64 = StandardNormal.sample(stream);
                let b: f64 = StandardNormal.sample(stream);
                c.push((m1 as f64, m2 as f64, a * damp, b * damp));
            }
        }
        coef.push(c);
    }
    let mut f = PhaseField::from_real(grid, |alpha, k| {
        coef[alpha]
            .iter()
            .map(|&(m1, m2, a, b)| {
                let phase = std::f64::consts::TAU * (m1 * k.k1() + m2 * k.k2());
                a * phase.cos() + b * phase.sin()
            })
            .sum()
    });
    f.subtract_mean();
    f
}

/// Named choices for the diffusion coefficient of the heat reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum DiffusionPreset {
    /// `D = 1/(128π)`.
    Paper,
    /// `D = σ̂² / clock_mean` with a measured `σ̂²`.
    SelfConsistent { sigma2_hat: f64 },
}

impl DiffusionPreset {
    pub const PAPER_SIGMA2: f64 = 1.0 / (128.0 * std::f64::consts::PI);

    pub fn coefficient(&self, clock_mean: f64) -> f64 {
        match *self {
            DiffusionPreset::Paper => Self::PAPER_SIGMA2,
            DiffusionPreset::SelfConsistent { sigma2_hat } => sigma2_hat / clock_mean,
        }
    }
}

/// Observable `Ô(p, t) = π̃[û(t)]` of one slice against the heat reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceResult {
    pub p: [f64; 2],
    pub times: Vec<f64>,
    pub observable: Vec<[f64; 2]>,
    pub reference: Vec<f64>,
    pub rel_error: Vec<f64>,
}

impl SliceResult {
    pub fn write_csv_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for (i, t) in self.times.iter().enumerate() {
            w.write_record([
                self.p[0].to_string(),
                self.p[1].to_string(),
                t.to_string(),
                self.observable[i][0].to_string(),
                self.observable[i][1].to_string(),
                self.reference[i].to_string(),
                self.rel_error[i].to_string(),
            ])?;
        }
        Ok(())
    }
}

pub const SLICE_CSV_HEADER: [&str; 7] = [
    "p1",
    "p2",
    "t",
    "observable_re",
    "observable_im",
    "reference",
    "rel_error",
];

pub fn write_slices_csv<W: Write>(slices: &[SliceResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SLICE_CSV_HEADER)?;
    for s in slices {
        s.write_csv_rows(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

/// Heat reference `π̃[û₀] exp(−D |p|² t / 2)`.
pub fn heat_reference(mean0: f64, d: f64, p: [f64; 2], t: f64) -> f64 {
    mean0 * (-d * (p[0] * p[0] + p[1] * p[1]) * t / 2.0).exp()
}

/// Minimum scaling parameter for the diffusion-limit comparison.
pub const MIN_DIFFUSION_SCALE: u64 = 1000;

/// Evolves one macroscopic slice `p` at microscopic momentum
/// `q = p/√(N ln N)` to times `N·t` and compares with the heat reference.
pub fn diffusion_slice(
    op: &GridOperator,
    n: u64,
    p: [f64; 2],
    times: &[f64],
    u0: &PhaseField,
    d: f64,
    integrator: Integrator,
) -> Result<SliceResult> {
    check_grid(op, u0)?;
    if n < MIN_DIFFUSION_SCALE {
        return Err(Error::invalid(format!(
            "diffusion limit needs N >= {MIN_DIFFUSION_SCALE} (got {n})"
        )));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::invalid("slice times must be nonnegative and increasing"));
    }
    let nf = n as f64;
    let scale = (nf * nf.ln()).sqrt();
    let q = [p[0] / scale, p[1] / scale];
    let ev = SliceEvolver::new(op, q, integrator)?;
    let mean0 = u0.mean().re;
    let mut u = u0.clone();
    let mut now = 0.0;
    let mut out = SliceResult {
        p,
        times: times.to_vec(),
        observable: Vec::with_capacity(times.len()),
        reference: Vec::with_capacity(times.len()),
        rel_error: Vec::with_capacity(times.len()),
    };
    for &t in times {
        ev.advance(&mut u, nf * t - now)?;
        now = nf * t;
        let o = u.mean();
        let r = heat_reference(mean0, d, p, t);
        out.observable.push([o.re, o.im]);
        out.reference.push(r);
        out.rel_error.push((o - r).norm() / r.abs());
    }
    Ok(out)
}

/// [`diffusion_slice`] for each macroscopic momentum in turn.
pub fn diffusion_limit_compare(
    op: &GridOperator,
    n: u64,
    ps: &[[f64; 2]],
    times: &[f64],
    u0: &PhaseField,
    d: f64,
    integrator: Integrator,
) -> Result<Vec<SliceResult>> {
    ps.iter()
        .map(|&p| diffusion_slice(op, n, p, times, u0, d, integrator))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(g: usize) -> GridOperator {
        GridOperator::new(QuadratureGrid::new(g).unwrap())
    }

    fn smooth(g: usize, seed: u64) -> PhaseField {
        random_smooth_field(QuadratureGrid::new(g).unwrap(), &mut RandomStream::new(seed, 0), 3)
    }

    #[test]
    fn generator_kills_constants_and_conserves_mean() {
        let op = op(32);
        let c = PhaseField::constant(op.grid(), Complex64::new(2.5, -1.0));
        assert!(collision_apply(&op, &c).sup_norm() < 1e-12);
        let f = smooth(32, 1);
        assert!(collision_apply(&op, &f).mean().norm() < 1e-10);
        assert!(dirichlet_form(&op, &c).abs() < 1e-12);
    }

    #[test]
    fn fast_path_matches_dense_operator() {
        let op = op(16);
        let dense = dense_generator(&op);
        assert!((&dense - dense.transpose()).amax() == 0.0);
        let mut f = smooth(16, 2);
        f.values_mut(1)[7] += Complex64::new(0.0, 3.0);
        let a = collision_apply(&op, &f);
        let b = dense_apply(&dense, &f);
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn dirichlet_form_is_nonnegative() {
        let op = op(32);
        for seed in 0..10 {
            assert!(dirichlet_form(&op, &smooth(32, seed)) >= 0.0);
        }
    }

    #[test]
    fn rk4_guard_and_constant_solution() {
        let op = op(16);
        let c = PhaseField::constant(op.grid(), Complex64::new(1.0, 0.0));
        assert!(matches!(
            evolve_slice(&op, [0.0, 0.0], &c, 1.0, Integrator::Rk4 { dt: 0.01 }),
            Err(Error::StabilityViolation { .. })
        ));
        let u = evolve_slice(
            &op,
            [0.0, 0.0],
            &c,
            2.0,
            Integrator::Rk4 {
                dt: Integrator::RK4_DT_LIMIT,
            },
        )
        .unwrap();
        assert!(u.max_abs_diff(&c) < 1e-13);
        let u = evolve_slice(&op, [0.0, 0.0], &c, 2.0, Integrator::Etd { dt: 0.25 }).unwrap();
        assert!(u.max_abs_diff(&c) < 1e-12);
    }

    #[test]
    fn integrators_match_dense_oracle() {
        let op = op(16);
        let oracle = DenseOracle::new(&op);
        let f = smooth(16, 3);
        let exact = oracle.evolve(&f, 1.0);
        let rk = evolve_slice(
            &op,
            [0.0, 0.0],
            &f,
            1.0,
            Integrator::Rk4 {
                dt: Integrator::RK4_DT_LIMIT,
            },
        )
        .unwrap();
        assert!(rk.max_abs_diff(&exact) < 1e-10, "{}", rk.max_abs_diff(&exact));
        let etd = evolve_slice(&op, [0.0, 0.0], &f, 1.0, Integrator::Etd { dt: 0.025 }).unwrap();
        assert!(etd.max_abs_diff(&exact) < 1e-6, "{}", etd.max_abs_diff(&exact));
    }

    #[test]
    fn rk4_convergence_order() {
        let op = op(16);
        let f = smooth(16, 4);
        let q = [3.0, -1.0];
        let dt0 = Integrator::RK4_DT_LIMIT * 8.0;
        // step sizes above the guard are only used through the raw stepper
        let run = |dt: f64| {
            let ev = SliceEvolver {
                op: &op,
                q,
                integrator: Integrator::Rk4 { dt },
                diag: SliceEvolver::new(&op, q, Integrator::Rk4 { dt: 1e-3 }).unwrap().diag,
                etd: None,
            };
            let mut u = f.clone();
            ev.advance(&mut u, 1.0).unwrap();
            u
        };
        let (a, b, c) = (run(dt0), run(dt0 / 2.0), run(dt0 / 4.0));
        let order = (a.max_abs_diff(&b) / b.max_abs_diff(&c)).log2();
        assert!((3.5..=4.5).contains(&order), "observed order {order}");
    }

    #[test]
    fn etd_convergence_order() {
        let op = op(16);
        let f = smooth(16, 5);
        let q = [0.5, 0.25];
        let run = |dt: f64| evolve_slice(&op, q, &f, 1.0, Integrator::Etd { dt }).unwrap();
        let (a, b, c) = (run(0.1), run(0.05), run(0.025));
        let order = (a.max_abs_diff(&b) / b.max_abs_diff(&c)).log2();
        assert!((3.0..=4.8).contains(&order), "observed order {order}");
    }

    #[test]
    fn evolution_is_contractive_and_conserves_mean() {
        let op = op(16);
        let f = smooth(16, 6);
        let mut f = f;
        f.values_mut(0)[0] += Complex64::new(1.0, 0.0);
        // Runge-Kutta preserves linear invariants exactly
        let ev = SliceEvolver::new(
            &op,
            [0.0, 0.0],
            Integrator::Rk4 {
                dt: Integrator::RK4_DT_LIMIT,
            },
        )
        .unwrap();
        let mut u = f.clone();
        let mut last = u.norm_sq();
        for _ in 0..10 {
            ev.advance(&mut u, 0.5).unwrap();
            let now = u.norm_sq();
            assert!(now <= last * (1.0 + 1e-12));
            last = now;
            assert!((u.mean() - f.mean()).norm() < 1e-12);
        }
        let ev = SliceEvolver::new(&op, [0.0, 0.0], Integrator::Etd { dt: 0.025 }).unwrap();
        let mut u = f.clone();
        ev.advance(&mut u, 5.0).unwrap();
        assert!((u.mean() - f.mean()).norm() < 1e-5);
        let ev = SliceEvolver::new(&op, [2.0, 1.0], Integrator::Etd { dt: 0.1 }).unwrap();
        let mut u = f.clone();
        ev.advance(&mut u, 5.0).unwrap();
        assert!(u.norm_sq() <= f.norm_sq());
        assert!(u.mean().norm() <= f.sup_norm());
    }

    #[test]
    fn odd_datum_decays_at_the_dense_rate() {
        let op = op(16);
        let oracle = DenseOracle::new(&op);
        let f = InitialDatum::PolarizationOdd.field(op.grid());
        let rate = oracle.slowest_rate(&f, 1e-12);
        let times: Vec<f64> = (0..=10).map(|i| 50.0 + 5.0 * i as f64).collect();
        let r = semigroup_norm_decay(&op, &f, &times, 4.0, Integrator::Etd { dt: 0.05 }).unwrap();
        let x = &r.times;
        let y: Vec<f64> = r.norms_sq.iter().map(|v| v.ln()).collect();
        let fit = crate::stats::linear_fit(x, &y).unwrap();
        let measured = -fit.slope / 2.0;
        assert!((measured - rate).abs() < 0.02 * rate, "{measured} vs {rate}");
    }

    #[test]
    fn weak_poincare_basics() {
        let op = op(32);
        let f = smooth(32, 7);
        let radii = [1e-3, 1e-2, 1e-1, 1.0];
        let r = weak_poincare_check(&op, &f, 4.0, &radii).unwrap();
        assert!(r.energy > 0.0 && r.c0_max.is_finite() && r.nash_constant.is_finite());
        for (c, &rad) in r.c0.iter().zip(&radii) {
            let bound = c * rad.powf(-2.0) * r.energy + rad * r.lp_norm_sq;
            assert!(r.norm_sq <= bound * (1.0 + 1e-12) + 1e-15);
        }
        let mut g = f.clone();
        g.values_mut(0)[0] += Complex64::new(1.0, 0.0);
        assert!(weak_poincare_check(&op, &g, 4.0, &radii).is_err());
    }

    #[test]
    fn zero_momentum_slice_conserves_mass() {
        let op = op(16);
        let u0 = PhaseField::constant(op.grid(), Complex64::new(1.0, 0.0));
        let s = diffusion_slice(
            &op,
            1000,
            [0.0, 0.0],
            &[0.5, 1.0],
            &u0,
            0.02,
            Integrator::Etd { dt: 0.5 },
        )
        .unwrap();
        for o in &s.observable {
            assert!((o[0] - 1.0).abs() < 1e-10 && o[1].abs() < 1e-12);
        }
        assert!(diffusion_slice(&op, 10, [0.0, 0.0], &[1.0], &u0, 0.02, Integrator::Etd { dt: 0.5 }).is_err());
        let mut buf = Vec::new();
        write_slices_csv(&[s], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("p1,p2,t,observable_re"));
    }
}
