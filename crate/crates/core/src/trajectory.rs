//! Clock, position and rescaled processes built from a simulated chain.
//!
//! With `τ_n = e_n / Φ(X_n)` and `d_n = τ_n v(X_n)`:
//!
//! ```text
//! T_n = Σ_{ℓ<n} τ_ℓ,    S_n = Σ_{ℓ<n} d_ℓ,
//! Y(t) = S_n + v(X_n)(t − T_n)        for T_n ≤ t < T_{n+1},
//! Z_N(n/N) = S_n / sqrt(N ln N)       linearly interpolated in between,
//! Y_N(t) = Y(N t) / sqrt(N ln N).
//! ```
//!
//! Prefix sums are accumulated left to right so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::kernel::{check_unit, velocity, Polarization, WaveVector};
use crate::sampler::ChainStep;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Summation mode for prefix sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Summation {
    #[default]
    Plain,
    /// Neumaier-compensated running sums.
    Compensated,
}

#[derive(Default, Clone, Copy)]
struct RunningSum {
    sum: f64,
    carry: f64,
}

impl RunningSum {
    #[inline]
    fn add(&mut self, x: f64, mode: Summation) -> f64 {
        match mode {
            Summation::Plain => {
                self.sum += x;
                self.sum
            }
            Summation::Compensated => {
                let t = self.sum + x;
                if self.sum.abs() >= x.abs() {
                    self.carry += (self.sum - t) + x;
                } else {
                    self.carry += (x - t) + self.sum;
                }
                self.sum = t;
                self.sum + self.carry
            }
        }
    }
}

/// Jump times, positions and visited states of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    positions: Vec<[f64; 2]>,
    increments: Vec<[f64; 2]>,
    states: Vec<(WaveVector, Polarization)>,
}

/// Prefix sums of waits and displacements of a chain.
pub fn accumulate(chain: &[ChainStep]) -> Result<Trajectory> {
    accumulate_with(chain, Summation::Plain)
}

pub fn accumulate_with(chain: &[ChainStep], mode: Summation) -> Result<Trajectory> {
    if chain.is_empty() {
        return Err(Error::invalid("cannot accumulate an empty chain"));
    }
    let n = chain.len();
    let mut times = Vec::with_capacity(n + 1);
    let mut positions = Vec::with_capacity(n + 1);
    let mut increments = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    times.push(0.0);
    positions.push([0.0, 0.0]);
    let (mut t, mut s1, mut s2) = (RunningSum::default(), RunningSum::default(), RunningSum::default());
    for step in chain {
        times.push(t.add(step.wait, mode));
        positions.push([s1.add(step.displacement[0], mode), s2.add(step.displacement[1], mode)]);
        increments.push(step.displacement);
        states.push((step.state, step.polarization));
    }
    Ok(Trajectory {
        times,
        positions,
        increments,
        states,
    })
}

impl Trajectory {
    /// Number of jumps.
    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// `T_0, …, T_n`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `S_0, …, S_n`.
    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// `d_0, …, d_{n−1}`.
    pub fn increments(&self) -> &[[f64; 2]] {
        &self.increments
    }

    pub fn states(&self) -> &[(WaveVector, Polarization)] {
        &self.states
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    /// `Y(t)`, the piecewise-linear position at continuous time `t`.
    pub fn position_at(&self, t: f64) -> Result<[f64; 2]> {
        let t_last = self.last_time();
        if !(0.0..=t_last).contains(&t) {
            return Err(Error::OutOfRange { t, t_last });
        }
        let n = self.times.partition_point(|&tn| tn <= t) - 1;
        let s = self.positions[n];
        if n == self.len() || t == self.times[n] {
            return Ok(s);
        }
        let v = velocity(self.states[n].0);
        let dt = t - self.times[n];
        Ok([s[0] + v[0] * dt, s[1] + v[1] * dt])
    }

    /// Right-continuous inverse clock `T^{-1}(t) = inf{n : T_n ≥ t}`.
    pub fn inverse_clock(&self, t: f64) -> Result<usize> {
        let t_last = self.last_time();
        if t > t_last || t.is_nan() {
            return Err(Error::OutOfRange { t, t_last });
        }
        Ok(self.times.partition_point(|&tn| tn < t))
    }

    /// Writes `n, T_n, S1, S2` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "T_n", "S1", "S2"])?;
        for (n, (t, s)) in self.times.iter().zip(&self.positions).enumerate() {
            w.write_record([n.to_string(), t.to_string(), s[0].to_string(), s[1].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Uniform time grid on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    points: usize,
}

impl TimeGrid {
    pub const DEFAULT_POINTS: usize = 256;

    pub fn new(horizon: f64, points: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) || points < 2 {
            return Err(Error::invalid(format!(
                "time grid needs horizon > 0 and at least 2 points (got {horizon}, {points})"
            )));
        }
        Ok(TimeGrid { horizon, points })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.horizon
        } else {
            self.horizon * i as f64 / (self.points - 1) as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.time(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathKind {
    /// `Z_N`: positions indexed by jump count.
    Z,
    /// `Y_N`: positions indexed by physical time.
    Y,
    /// `T_N(t) = T_{⌊Nt⌋}/N` (scalar, stored in the first component).
    Clock,
    /// `T_N^{-1}(t) = T^{-1}(Nt)/N` (scalar, stored in the first component).
    InverseClock,
    /// `Z_N^<`: only increments with `e|ψ^α| ≤ √N`, per component.
    ZLess,
    /// `Z_N^>`: only increments with `e|ψ^α| > √N`, per component.
    ZGreater,
}

/// A rescaled process on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub scale: u64,
    pub kind: PathKind,
    pub times: Vec<f64>,
    pub values: Vec<[f64; 2]>,
}

impl SamplePath {
    /// Writes `time, v1, v2` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "v1", "v2"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record([t.to_string(), v[0].to_string(), v[1].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `sqrt(N ln N)`.
pub fn anomalous_scale(n: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(format!("scaling parameter N = {n} must be >= 2")));
    }
    let nf = n as f64;
    Ok((nf * nf.ln()).sqrt())
}

/// Steps needed to evaluate `Z_N` on `[0, horizon]`.
pub fn steps_for_z(n: u64, horizon: f64) -> usize {
    (n as f64 * horizon).ceil() as usize
}

fn split_index(n: u64, t: f64) -> (usize, f64) {
    let x = n as f64 * t;
    let i = x.floor();
    (i as usize, x - i)
}

fn insufficient_steps(n: u64, horizon: f64, have: usize) -> Error {
    Error::InsufficientTrajectory(format!(
        "Z_N with N = {n} on [0, {horizon}] needs {} steps, trajectory has {have}",
        steps_for_z(n, horizon)
    ))
}

/// Evaluates a piecewise-linear interpolant of anchors `a_j` at `j/N` where
/// the slope on `[j/N, (j+1)/N]` is `inc_j`.
fn interpolate(anchors: &[[f64; 2]], inc: &[[f64; 2]], n: u64, t: f64, scale: f64) -> [f64; 2] {
    let (i, frac) = split_index(n, t);
    let a = anchors[i];
    if frac == 0.0 {
        [a[0] / scale, a[1] / scale]
    } else {
        let d = inc[i];
        [(a[0] + frac * d[0]) / scale, (a[1] + frac * d[1]) / scale]
    }
}

/// `Z_N`, `Y_N`, `T_N` or `T_N^{-1}` evaluated on `grid`.
pub fn rescaled_path(traj: &Trajectory, n: u64, grid: &TimeGrid, kind: PathKind) -> Result<SamplePath> {
    let scale = anomalous_scale(n)?;
    let times = grid.times();
    let horizon = grid.horizon();
    let nf = n as f64;
    let values = match kind {
        PathKind::Z => {
            if traj.len() < steps_for_z(n, horizon) {
                return Err(insufficient_steps(n, horizon, traj.len()));
            }
            times
                .iter()
                .map(|&t| interpolate(&traj.positions, &traj.increments, n, t, scale))
                .collect()
        }
        PathKind::Y => {
            let need = nf * horizon;
            if traj.last_time() < need {
                return Err(Error::InsufficientTrajectory(format!(
                    "Y_N with N = {n} on [0, {horizon}] needs clock time {need}, trajectory reaches {}",
                    traj.last_time()
                )));
            }
            times
                .iter()
                .map(|&t| traj.position_at(nf * t).map(|y| [y[0] / scale, y[1] / scale]))
                .collect::<Result<_>>()?
        }
        PathKind::Clock => {
            let need = (nf * horizon).floor() as usize;
            if traj.len() < need {
                return Err(insufficient_steps(n, horizon, traj.len()));
            }
            times
                .iter()
                .map(|&t| [traj.times[split_index(n, t).0] / nf, 0.0])
                .collect()
        }
        PathKind::InverseClock => times
            .iter()
            .map(|&t| traj.inverse_clock(nf * t).map(|j| [j as f64 / nf, 0.0]))
            .collect::<Result<_>>()
            .map_err(|_| {
                Error::InsufficientTrajectory(format!(
                    "T_N^-1 with N = {n} on [0, {horizon}] needs clock time {}, trajectory reaches {}",
                    nf * horizon,
                    traj.last_time()
                ))
            })?,
        PathKind::ZLess => return Ok(truncation_split(traj, n, grid)?.less),
        PathKind::ZGreater => return Ok(truncation_split(traj, n, grid)?.greater),
    };
    Ok(SamplePath {
        scale: n,
        kind,
        times,
        values,
    })
}

/// `Z_N = Z_N^< + Z_N^>`, split per component at `|e ψ^α| = √N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationPair {
    pub less: SamplePath,
    pub greater: SamplePath,
}

/// Splits one increment into its kept (`|d^α| ≤ √N`) and overshooting parts.
#[inline]
pub fn split_increment(d: [f64; 2], root_n: f64) -> ([f64; 2], [f64; 2]) {
    let mut less = [0.0; 2];
    let mut greater = [0.0; 2];
    for a in 0..2 {
        if d[a].abs() <= root_n {
            less[a] = d[a];
        } else {
            greater[a] = d[a];
        }
    }
    (less, greater)
}

pub fn truncation_split(traj: &Trajectory, n: u64, grid: &TimeGrid) -> Result<TruncationPair> {
    let scale = anomalous_scale(n)?;
    let horizon = grid.horizon();
    let steps = steps_for_z(n, horizon);
    if traj.len() < steps {
        return Err(insufficient_steps(n, horizon, traj.len()));
    }
    let root_n = (n as f64).sqrt();
    let (less_inc, greater_inc): (Vec<_>, Vec<_>) = traj.increments[..steps]
        .iter()
        .map(|&d| split_increment(d, root_n))
        .unzip();
    let prefix = |inc: &[[f64; 2]]| {
        let mut out = Vec::with_capacity(inc.len() + 1);
        let mut acc = [0.0, 0.0];
        out.push(acc);
        for d in inc {
            acc = [acc[0] + d[0], acc[1] + d[1]];
            out.push(acc);
        }
        out
    };
    let less_anchor = prefix(&less_inc);
    let greater_anchor = prefix(&greater_inc);
    let times = grid.times();
    let eval = |anchor: &[[f64; 2]], inc: &[[f64; 2]], kind| SamplePath {
        scale: n,
        kind,
        times: times.clone(),
        values: times.iter().map(|&t| interpolate(anchor, inc, n, t, scale)).collect(),
    };
    Ok(TruncationPair {
        less: eval(&less_anchor, &less_inc, PathKind::ZLess),
        greater: eval(&greater_anchor, &greater_inc, PathKind::ZGreater),
    })
}

/// `sup_{0 ≤ t ≤ horizon} |Z_N^>(t)|` (Euclidean norm), taken over all jump
/// anchors in the window, where the piecewise-linear path attains its sup.
pub fn greater_sup_norm(traj: &Trajectory, n: u64, horizon: f64) -> Result<f64> {
    let scale = anomalous_scale(n)?;
    let steps = steps_for_z(n, horizon);
    if traj.len() < steps {
        return Err(insufficient_steps(n, horizon, traj.len()));
    }
    let root_n = (n as f64).sqrt();
    let mut acc = [0.0f64, 0.0];
    let mut sup = 0.0f64;
    let full = (n as f64 * horizon).floor() as usize;
    for (j, &d) in traj.increments[..steps].iter().enumerate() {
        let (_, g) = split_increment(d, root_n);
        // last partial segment contributes only up to the horizon
        let frac = if j < full {
            1.0
        } else {
            n as f64 * horizon - full as f64
        };
        acc = [acc[0] + frac * g[0], acc[1] + frac * g[1]];
        sup = sup.max(acc[0].hypot(acc[1]));
    }
    Ok(sup / scale)
}

/// Pointwise projection `⟨path(t), λ⟩` onto a unit direction.
pub fn project(path: &SamplePath, lambda: [f64; 2]) -> Result<Vec<f64>> {
    check_unit(lambda)?;
    Ok(path
        .values
        .iter()
        .map(|v| lambda[0] * v[0] + lambda[1] * v[1])
        .collect())
}
