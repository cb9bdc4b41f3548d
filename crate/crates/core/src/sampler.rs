//! Exact, reproducible sampling of the jump chain.
//!
//! Randomness comes from a counter-based generator: the ChaCha8 block
//! function keyed by the master seed, with the stream id as nonce and the
//! draw index as block counter. A `(seed, stream, index)` triple fixes every
//! variate regardless of scheduling.

use crate::error::{Error, Result};
use crate::kernel::{component_weights, velocity_and_norm, Polarization, WaveVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

/// One independent random stream.
#[derive(Debug, Clone)]
pub struct RandomStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        RandomStream {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Position in the stream, in 32-bit words.
    pub fn word_position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Rewind or fast-forward to a word position.
    pub fn seek(&mut self, word_position: u128) {
        self.rng.set_word_pos(word_position);
    }

    /// Uniform on the open interval `(0, 1)`, 53 bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard exponential variate.
    #[inline]
    pub fn exponential(&mut self) -> f64 {
        self.rng.sample(Exp1)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// CDF of the density `2 sin²(πx)` on `[0, 1]`: `F(x) = x − sin(2πx)/(2π)`.
pub fn sin2_cdf(x: f64) -> f64 {
    if x < 0.125 {
        // alternating series Σ (−1)^{n+1} (2π)^{2n} x^{2n+1} / (2n+1)!, n ≥ 1
        let y = 2.0 * PI * x;
        let y2 = y * y;
        let mut term = x * y2 / 6.0;
        let mut sum = term;
        let mut n = 1.0;
        loop {
            n += 1.0;
            term *= -y2 / ((2.0 * n) * (2.0 * n + 1.0));
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    } else if x > 0.875 {
        1.0 - sin2_cdf(1.0 - x)
    } else {
        x - (2.0 * PI * x).sin() / (2.0 * PI)
    }
}

/// Inverse of [`sin2_cdf`]: safeguarded Newton on the half interval, mirrored
/// for `u > ½`. The residual `|F(x) − u|` is below `1e-12`.
pub fn sin2_inverse_cdf(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    if u > 0.5 {
        return 1.0 - sin2_inverse_cdf_half(1.0 - u);
    }
    sin2_inverse_cdf_half(u)
}

fn sin2_inverse_cdf_half(u: f64) -> f64 {
    if u == 0.5 {
        return 0.5;
    }
    // the table guess is good to ~1e-11, so one Newton step reaches roundoff
    let x = InverseTable::get().guess(u);
    let (s, c) = (PI * x).sin_cos();
    let f = if x < 0.125 { sin2_cdf(x) } else { x - s * c / PI };
    let x = x - (f - u) / (2.0 * s * s);
    debug_assert!((sin2_cdf(x) - u).abs() <= 1e-12, "u={u} x={x}");
    x
}

/// Robust root of `F(x) = u` on `(0, ½]` by safeguarded Newton; used to
/// build the interpolation table.
fn sin2_inverse_bracketed(u: f64) -> f64 {
    // F ≤ (2π²/3)x³ on [0, ½], so the cubic guess never overshoots the root
    let mut x = (1.5 * u / (PI * PI)).cbrt().min(0.5);
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for _ in 0..200 {
        let r = sin2_cdf(x) - u;
        if r == 0.0 {
            break;
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let s = (PI * x).sin();
        let mut next = x - r / (2.0 * s * s);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 2.0 * f64::EPSILON * x {
            x = next;
            break;
        }
        x = next;
    }
    x
}

/// Cubic Hermite table of the inverse CDF in the variable `t = u^{1/3}`,
/// in which the inverse is smooth down to `u = 0`.
struct InverseTable {
    t_max: f64,
    step: f64,
    x: Vec<f64>,
    dxdt: Vec<f64>,
}

impl InverseTable {
    const NODES: usize = 512;

    fn get() -> &'static InverseTable {
        static TABLE: OnceLock<InverseTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            let t_max = 0.5f64.cbrt();
            let step = t_max / Self::NODES as f64;
            let mut x = Vec::with_capacity(Self::NODES + 1);
            let mut dxdt = Vec::with_capacity(Self::NODES + 1);
            for i in 0..=Self::NODES {
                let t = i as f64 * step;
                if i == 0 {
                    x.push(0.0);
                    // x ≈ (3/(2π²))^{1/3} t near 0
                    dxdt.push((1.5 / (PI * PI)).cbrt());
                    continue;
                }
                let xi = if i == Self::NODES {
                    0.5
                } else {
                    sin2_inverse_bracketed(t * t * t)
                };
                let s = (PI * xi).sin();
                x.push(xi);
                dxdt.push(3.0 * t * t / (2.0 * s * s));
            }
            InverseTable { t_max, step, x, dxdt }
        })
    }

    #[inline]
    fn guess(&self, u: f64) -> f64 {
        let t = u.cbrt().min(self.t_max);
        let pos = t / self.step;
        let i = (pos as usize).min(Self::NODES - 1);
        let s = pos - i as f64;
        let h = self.step;
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let (d0, d1) = (self.dxdt[i] * h, self.dxdt[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * x0 + (s3 - 2.0 * s2 + s) * d0 + (-2.0 * s3 + 3.0 * s2) * x1 + (s3 - s2) * d1
    }
}

/// A draw from the density `2 sin²(πx)` on `[0, 1)`.
#[inline]
pub fn sample_sin2(stream: &mut RandomStream) -> f64 {
    sin2_inverse_cdf(stream.uniform())
}

#[inline]
fn jump_with_component(stream: &mut RandomStream, w1: f64) -> (WaveVector, usize) {
    let first = stream.uniform() < w1;
    let hot = sample_sin2(stream);
    let flat = stream.uniform();
    if first {
        (WaveVector::new(hot, flat), 0)
    } else {
        (WaveVector::new(flat, hot), 1)
    }
}

#[inline]
fn jump_from_weight(stream: &mut RandomStream, w1: f64) -> WaveVector {
    jump_with_component(stream, w1).0
}

/// An exact draw from the jump kernel `P(k, ·)`.
pub fn sample_jump(stream: &mut RandomStream, k: WaveVector) -> Result<WaveVector> {
    Ok(sample_jump_component(stream, k)?.0)
}

/// Like [`sample_jump`], also returning the index of the component that
/// received the `sin²` draw.
pub fn sample_jump_component(stream: &mut RandomStream, k: WaveVector) -> Result<(WaveVector, usize)> {
    let w = component_weights(k)?;
    Ok(jump_with_component(stream, w[0]))
}

/// An exact draw from the stationary law `π(dk) = Σ_α sin²(πk_α) dk`,
/// an equal mixture of the two factorized components.
pub fn sample_stationary(stream: &mut RandomStream) -> WaveVector {
    jump_from_weight(stream, 0.5)
}

/// Initial law of the wave number.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub enum InitialLaw {
    /// Lebesgue measure on the torus, uniform polarization.
    #[default]
    Uniform,
    /// A point mass at `k ≠ 0` with fixed polarization.
    Point { k: WaveVector, polarization: Polarization },
    /// Uniform on `{|k| ≥ δ}` (torus norm), uniform polarization.
    Annulus { delta: f64 },
    /// The stationary law `π` of the chain, uniform polarization.
    Stationary,
}

impl InitialLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialLaw::Point { k, .. } if k.is_origin() => {
                Err(Error::invalid("point initial law at k = 0 is degenerate"))
            }
            InitialLaw::Annulus { delta } if !(0.0..0.5).contains(&delta) => {
                Err(Error::invalid(format!("annulus radius {delta} must lie in [0, 0.5)")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for InitialLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialLaw::Uniform => write!(f, "uniform"),
            InitialLaw::Stationary => write!(f, "stationary"),
            InitialLaw::Point { k, polarization } => {
                write!(f, "point:{},{},{}", k.k1(), k.k2(), polarization.value())
            }
            InitialLaw::Annulus { delta } => write!(f, "annulus:{delta}"),
        }
    }
}

impl FromStr for InitialLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::invalid(format!("initial law `{s}`: {e}")))
                })
                .collect()
        };
        let law = match kind {
            "uniform" => InitialLaw::Uniform,
            "stationary" => InitialLaw::Stationary,
            "annulus" => match nums()?.as_slice() {
                [d] => InitialLaw::Annulus { delta: *d },
                _ => return Err(Error::invalid("annulus law takes one radius: annulus:δ")),
            },
            "point" => match nums()?.as_slice() {
                [k1, k2] => InitialLaw::Point {
                    k: WaveVector::new(*k1, *k2),
                    polarization: Polarization::One,
                },
                [k1, k2, p] if *p == 1.0 || *p == 2.0 => InitialLaw::Point {
                    k: WaveVector::new(*k1, *k2),
                    polarization: Polarization::from_index(*p as usize - 1),
                },
                _ => return Err(Error::invalid("point law syntax: point:k1,k2[,1|2]")),
            },
            other => {
                return Err(Error::invalid(format!(
                    "unknown initial law `{other}` (expected uniform, stationary, point, annulus)"
                )))
            }
        };
        law.validate()?;
        Ok(law)
    }
}

/// A draw from `μ × polarization`.
pub fn sample_initial(stream: &mut RandomStream, law: &InitialLaw) -> Result<(WaveVector, Polarization)> {
    law.validate()?;
    let random_pol = |s: &mut RandomStream| {
        if s.uniform() < 0.5 {
            Polarization::One
        } else {
            Polarization::Two
        }
    };
    Ok(match *law {
        InitialLaw::Point { k, polarization } => (k, polarization),
        InitialLaw::Uniform => {
            let k = WaveVector::new(stream.uniform(), stream.uniform());
            (k, random_pol(stream))
        }
        InitialLaw::Stationary => {
            let k = sample_stationary(stream);
            (k, random_pol(stream))
        }
        InitialLaw::Annulus { delta } => {
            let k = loop {
                let k = WaveVector::new(stream.uniform(), stream.uniform());
                if k.torus_norm() >= delta {
                    break k;
                }
            };
            (k, random_pol(stream))
        }
    })
}

/// One jump event of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub index: u64,
    pub state: WaveVector,
    pub polarization: Polarization,
    /// Standard exponential draw `e_n`.
    pub exp_draw: f64,
    /// Waiting time `τ_n = e_n / Φ(X_n)`.
    pub wait: f64,
    /// Displacement `d_n = τ_n v(X_n) = e_n ψ(X_n)`.
    pub displacement: [f64; 2],
}

/// Streaming generator of [`ChainStep`]s.
#[derive(Debug, Clone)]
pub struct ChainIter {
    stream: RandomStream,
    state: WaveVector,
    polarization: Polarization,
    index: u64,
}

impl ChainIter {
    pub fn new(mut stream: RandomStream, init: &InitialLaw) -> Result<Self> {
        let (state, polarization) = sample_initial(&mut stream, init)?;
        Ok(ChainIter {
            stream,
            state,
            polarization,
            index: 0,
        })
    }

    /// Current (not yet emitted) state.
    pub fn state(&self) -> WaveVector {
        self.state
    }

    pub fn try_next(&mut self) -> Result<ChainStep> {
        let k = self.state;
        let (v, sq) = velocity_and_norm(k);
        let norm = sq[0] + sq[1];
        if norm == 0.0 {
            return Err(Error::DegenerateState { k1: k.k1(), k2: k.k2() });
        }
        let rate = 8.0 * norm;
        let e = self.stream.exponential();
        let wait = e / rate;
        let step = ChainStep {
            index: self.index,
            state: k,
            polarization: self.polarization,
            exp_draw: e,
            wait,
            displacement: [wait * v[0], wait * v[1]],
        };
        self.state = jump_from_weight(&mut self.stream, sq[0] / norm);
        self.polarization = self.polarization.flipped();
        self.index += 1;
        Ok(step)
    }
}

impl Iterator for ChainIter {
    type Item = Result<ChainStep>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.try_next())
    }
}

/// The first `n_steps` steps of the chain started from `init`.
pub fn simulate_chain(stream: RandomStream, init: &InitialLaw, n_steps: usize) -> Result<Vec<ChainStep>> {
    if n_steps == 0 {
        return Err(Error::invalid("simulate_chain needs n_steps >= 1"));
    }
    ChainIter::new(stream, init)?.take(n_steps).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{psi, total_rate, velocity};

    #[test]
    fn sin2_cdf_examples() {
        assert!((sin2_inverse_cdf(0.5) - 0.5).abs() < 1e-15);
        assert!((sin2_cdf(0.25) - (0.25 - 1.0 / (2.0 * PI))).abs() < 1e-15);
        assert!((sin2_cdf(0.25) - 0.09085).abs() < 1e-5);
        assert_eq!(sin2_cdf(0.0), 0.0);
        assert!((sin2_cdf(1.0) - 1.0).abs() < 1e-15);
        // series and closed form agree at the switch point
        let closed = |x: f64| x - (2.0 * PI * x).sin() / (2.0 * PI);
        assert!((sin2_cdf(0.125 - 1e-12) - closed(0.125 - 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn inverse_residual_tiny_everywhere() {
        for i in 1..20_000 {
            let u = i as f64 / 20_000.0;
            let x = sin2_inverse_cdf(u);
            assert!((sin2_cdf(x) - u).abs() <= 1e-12, "u={u}");
        }
        for &u in &[1e-16, 1e-12, 1e-8, 1.0 - 1e-12, 1.0 - 1e-16] {
            let x = sin2_inverse_cdf(u);
            assert!((sin2_cdf(x) - u).abs() <= 1e-12 * u.min(1.0 - u).max(1e-4));
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RandomStream::new(7, 0);
        let mut b = RandomStream::new(7, 0);
        let mut c = RandomStream::new(7, 1);
        let xa: Vec<f64> = (0..10).map(|_| a.uniform()).collect();
        let xb: Vec<f64> = (0..10).map(|_| b.uniform()).collect();
        let xc: Vec<f64> = (0..10).map(|_| c.uniform()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        let pos = a.word_position();
        let next = a.uniform();
        a.seek(pos);
        assert_eq!(a.uniform(), next);
    }

    #[test]
    fn jump_at_origin_is_degenerate() {
        let mut s = RandomStream::new(1, 1);
        assert!(sample_jump(&mut s, WaveVector::ORIGIN).is_err());
    }

    #[test]
    fn initial_laws() {
        let mut s = RandomStream::new(3, 0);
        let law = InitialLaw::Point {
            k: WaveVector::new(0.25, 0.25),
            polarization: Polarization::Two,
        };
        for _ in 0..10 {
            assert_eq!(
                sample_initial(&mut s, &law).unwrap(),
                (WaveVector::new(0.25, 0.25), Polarization::Two)
            );
        }
        let annulus = InitialLaw::Annulus { delta: 0.1 };
        for _ in 0..10_000 {
            assert!(sample_initial(&mut s, &annulus).unwrap().0.torus_norm() >= 0.1);
        }
        assert!("point:0,0".parse::<InitialLaw>().is_err());
        assert!("annulus:0.7".parse::<InitialLaw>().is_err());
        assert!("gaussian".parse::<InitialLaw>().is_err());
        for text in ["uniform", "stationary", "annulus:0.1", "point:0.25,0.5,2"] {
            let law: InitialLaw = text.parse().unwrap();
            assert_eq!(law.to_string().parse::<InitialLaw>().unwrap(), law);
        }
    }

    #[test]
    fn chain_steps_are_consistent() {
        let chain = simulate_chain(RandomStream::new(11, 4), &InitialLaw::Uniform, 5_000).unwrap();
        assert_eq!(chain.len(), 5_000);
        for (n, w) in chain.windows(2).enumerate() {
            assert_eq!(w[0].index, n as u64);
            assert_eq!(w[1].polarization, w[0].polarization.flipped());
        }
        for st in &chain {
            let rate = total_rate(st.state);
            assert!(st.wait > 0.0);
            assert!((st.wait * rate - st.exp_draw).abs() <= 4.0 * f64::EPSILON * st.exp_draw);
            let v = velocity(st.state);
            assert_eq!(st.displacement, [st.wait * v[0], st.wait * v[1]]);
            let p = psi(st.state).unwrap();
            for (d, pa) in st.displacement.iter().zip(p) {
                let via_psi = st.exp_draw * pa;
                assert!((d - via_psi).abs() <= 1e-14 * via_psi.abs().max(1e-300));
            }
        }
        let again = simulate_chain(RandomStream::new(11, 4), &InitialLaw::Uniform, 5_000).unwrap();
        assert_eq!(chain, again);
        assert!(simulate_chain(RandomStream::new(11, 4), &InitialLaw::Uniform, 0).is_err());
    }
}
