//! Streaming evaluation of rescaled paths without storing a trajectory.
//!
//! The sums are taken in the same order as [`crate::trajectory`], so every
//! value here is bit-identical to its stored-trajectory counterpart.

use crate::error::{Error, Result};
use crate::kernel::velocity;
use crate::sampler::{ChainIter, ChainStep, InitialLaw, RandomStream};
use crate::trajectory::split_increment;

/// `Z`, `Z^<` and `Z^>` at one time, already divided by the scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ZSnapshot {
    pub full: [f64; 2],
    pub less: [f64; 2],
    pub greater: [f64; 2],
}

/// One chain with its running clock, position and truncated positions.
/// Holds one step of lookahead so segment interiors can be evaluated.
pub(crate) struct Walk {
    chain: ChainIter,
    next: ChainStep,
    root_n: f64,
    steps: usize,
    time: f64,
    pos: [f64; 2],
    less: [f64; 2],
    greater: [f64; 2],
    sup_greater: f64,
}

impl Walk {
    /// `root_n` is the truncation level `√N`; pass infinity when unused.
    pub fn new(stream: RandomStream, law: &InitialLaw, root_n: f64) -> Result<Self> {
        let mut chain = ChainIter::new(stream, law)?;
        let next = chain.try_next()?;
        Ok(Walk {
            chain,
            next,
            root_n,
            steps: 0,
            time: 0.0,
            pos: [0.0; 2],
            less: [0.0; 2],
            greater: [0.0; 2],
            sup_greater: 0.0,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// The step that will be applied next (its state is the current one).
    pub fn peek(&self) -> &ChainStep {
        &self.next
    }

    pub fn apply(&mut self) -> Result<ChainStep> {
        let step = self.next;
        let d = step.displacement;
        self.time += step.wait;
        self.pos = [self.pos[0] + d[0], self.pos[1] + d[1]];
        let (l, g) = split_increment(d, self.root_n);
        self.less = [self.less[0] + l[0], self.less[1] + l[1]];
        self.greater = [self.greater[0] + g[0], self.greater[1] + g[1]];
        self.sup_greater = self.sup_greater.max(self.greater[0].hypot(self.greater[1]));
        self.steps += 1;
        self.next = self.chain.try_next()?;
        Ok(step)
    }

    pub fn advance_to(&mut self, steps: usize) -> Result<()> {
        if self.steps > steps {
            return Err(Error::invalid(format!(
                "walk is at step {} and cannot rewind to {steps}",
                self.steps
            )));
        }
        while self.steps < steps {
            self.apply()?;
        }
        Ok(())
    }

    /// `Z_N(t)` and its truncation parts, with `scale = √(N ln N)`.
    pub fn z_at(&mut self, n: u64, t: f64, scale: f64) -> Result<ZSnapshot> {
        let x = n as f64 * t;
        let j = x.floor();
        let frac = x - j;
        self.advance_to(j as usize)?;
        let interp = |a: [f64; 2], d: [f64; 2]| {
            if frac == 0.0 {
                [a[0] / scale, a[1] / scale]
            } else {
                [(a[0] + frac * d[0]) / scale, (a[1] + frac * d[1]) / scale]
            }
        };
        let d = self.next.displacement;
        let (l, g) = split_increment(d, self.root_n);
        Ok(ZSnapshot {
            full: interp(self.pos, d),
            less: interp(self.less, l),
            greater: interp(self.greater, g),
        })
    }

    /// `sup_{t ≤ horizon} |Z^>_N(t)|`; must be called before passing step
    /// `⌊N·horizon⌋`.
    pub fn greater_sup(&mut self, n: u64, horizon: f64, scale: f64) -> Result<f64> {
        let x = n as f64 * horizon;
        let full = x.floor();
        self.advance_to(full as usize)?;
        let mut sup = self.sup_greater;
        let frac = x - full;
        if frac > 0.0 {
            let (_, g) = split_increment(self.next.displacement, self.root_n);
            let acc = [self.greater[0] + frac * g[0], self.greater[1] + frac * g[1]];
            sup = sup.max(acc[0].hypot(acc[1]));
        }
        Ok(sup / scale)
    }

    /// Unscaled position `Y(τ)` at continuous time `τ ≥` the current clock.
    pub fn y_at(&mut self, tau: f64) -> Result<[f64; 2]> {
        if tau < self.time {
            return Err(Error::InsufficientTrajectory(format!(
                "clock already at {} past the requested time {tau}",
                self.time
            )));
        }
        while self.time + self.next.wait <= tau {
            self.apply()?;
        }
        if tau == self.time {
            return Ok(self.pos);
        }
        let v = velocity(self.next.state);
        let dt = tau - self.time;
        Ok([self.pos[0] + v[0] * dt, self.pos[1] + v[1] * dt])
    }

    /// `inf{n : T_n ≥ τ}`; the clock must not have passed `τ` by more than
    /// the step just taken, which holds after [`Walk::y_at`] at `τ`.
    pub fn inverse_clock(&mut self, tau: f64) -> Result<usize> {
        while self.time < tau {
            self.apply()?;
        }
        Ok(self.steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::simulate_chain;
    use crate::trajectory::{
        accumulate, anomalous_scale, greater_sup_norm, rescaled_path, truncation_split, PathKind, TimeGrid,
    };

    fn setup(seed: u64, steps: usize, n: u64) -> (Walk, crate::trajectory::Trajectory) {
        let law = InitialLaw::Uniform;
        let chain = simulate_chain(RandomStream::new(seed, 3), &law, steps).unwrap();
        let walk = Walk::new(RandomStream::new(seed, 3), &law, (n as f64).sqrt()).unwrap();
        (walk, accumulate(&chain).unwrap())
    }

    #[test]
    fn z_matches_stored_paths_bitwise() {
        let n = 40;
        let (mut walk, traj) = setup(11, 200, n);
        let scale = anomalous_scale(n).unwrap();
        let grid = TimeGrid::new(1.5, 17).unwrap();
        let z = rescaled_path(&traj, n, &grid, PathKind::Z).unwrap();
        let pair = truncation_split(&traj, n, &grid).unwrap();
        for (i, &t) in grid.times().iter().enumerate() {
            let s = walk.z_at(n, t, scale).unwrap();
            assert_eq!(s.full, z.values[i], "t = {t}");
            assert_eq!(s.less, pair.less.values[i]);
            assert_eq!(s.greater, pair.greater.values[i]);
        }
    }

    #[test]
    fn sup_and_clock_match_stored_paths_bitwise() {
        // a low truncation level makes the overshoot part nontrivial
        let n = 3;
        let (_, traj) = setup(5, 400, n);
        let scale = anomalous_scale(n).unwrap();
        for h in [10.0, 33.4, 100.0] {
            let mut walk = Walk::new(RandomStream::new(5, 3), &InitialLaw::Uniform, (n as f64).sqrt()).unwrap();
            let a = walk.greater_sup(n, h, scale).unwrap();
            assert_eq!(a, greater_sup_norm(&traj, n, h).unwrap());
        }
        let mut walk = Walk::new(RandomStream::new(5, 3), &InitialLaw::Uniform, f64::INFINITY).unwrap();
        let t_end = traj.last_time() * 0.9;
        for tau in [0.0, t_end * 0.25, t_end * 0.5, t_end] {
            assert_eq!(walk.y_at(tau).unwrap(), traj.position_at(tau).unwrap());
            assert_eq!(walk.inverse_clock(tau).unwrap(), traj.inverse_clock(tau).unwrap());
        }
        let mut walk = Walk::new(RandomStream::new(5, 3), &InitialLaw::Uniform, f64::INFINITY).unwrap();
        walk.advance_to(250).unwrap();
        assert_eq!(walk.time(), traj.times()[250]);
        assert!(walk.advance_to(10).is_err());
    }
}
