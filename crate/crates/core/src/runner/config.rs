//! Flat `key = value` experiment configuration.

use crate::error::{Error, Result};
use crate::sampler::InitialLaw;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Named experiments, one per CLI subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ValidateKernel,
    ValidateSampler,
    Tail,
    Sigma2,
    Qv,
    Clt,
    Clock,
    Semigroup,
    Poincare,
    DiffusionLimit,
    All,
}

impl Experiment {
    /// Every concrete experiment, in execution order.
    pub const SUITE: [Experiment; 10] = [
        Experiment::ValidateKernel,
        Experiment::ValidateSampler,
        Experiment::Tail,
        Experiment::Sigma2,
        Experiment::Qv,
        Experiment::Clt,
        Experiment::Clock,
        Experiment::Semigroup,
        Experiment::Poincare,
        Experiment::DiffusionLimit,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::ValidateKernel => "validate-kernel",
            Experiment::ValidateSampler => "validate-sampler",
            Experiment::Tail => "tail",
            Experiment::Sigma2 => "sigma2",
            Experiment::Qv => "qv",
            Experiment::Clt => "clt",
            Experiment::Clock => "clock",
            Experiment::Semigroup => "semigroup",
            Experiment::Poincare => "poincare",
            Experiment::DiffusionLimit => "diffusion-limit",
            Experiment::All => "all",
        }
    }

    pub fn expand(&self) -> Vec<Experiment> {
        match self {
            Experiment::All => Self::SUITE.to_vec(),
            e => vec![*e],
        }
    }

    /// Base of the stream-id block owned by this experiment.
    pub fn stream_base(&self) -> u64 {
        let idx = Self::SUITE.iter().position(|e| e == self).unwrap_or(Self::SUITE.len()) as u64;
        (idx + 1) << 40
    }

    fn choices() -> String {
        Self::SUITE
            .iter()
            .chain(std::iter::once(&Experiment::All))
            .map(|e| e.name())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::SUITE
            .iter()
            .chain(std::iter::once(&Experiment::All))
            .find(|e| e.name() == s)
            .copied()
            .ok_or_else(|| Error::Config {
                line: None,
                message: format!("unknown experiment `{s}`; valid choices: {}", Self::choices()),
            })
    }
}

/// Diffusion-coefficient preset that decides the diffusion-limit verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    Paper,
    SelfConsistent,
}

mod law_string {
    use super::InitialLaw;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(law: &InitialLaw, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&law.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<InitialLaw, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(|e: crate::Error| D::Error::custom(e.to_string()))
    }
}

/// All knobs of a run. Every field has a default, so a config file only
/// lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: String,
    #[serde(with = "law_string")]
    pub initial_law: InitialLaw,
    /// Time horizon of rescaled paths.
    pub horizon: f64,
    pub time_points: usize,
    pub quadrature_points: usize,
    pub graded_levels: usize,
    pub graded_order: usize,
    /// Independent chains sharing a long stationary run.
    pub chains: usize,
    pub burn_in: usize,

    pub sampler_draws: usize,
    pub jump_bins: usize,
    pub marginal_replicas: usize,
    pub stationary_samples: usize,
    pub tv_bins: usize,

    pub tail_samples: usize,
    pub tail_window: [f64; 2],
    pub tail_points: usize,

    pub sigma2_samples: usize,
    pub sigma2_scales: Vec<u64>,
    pub sigma2_batches: usize,

    pub qv_scale: u64,
    pub qv_replicas: usize,
    pub qv_time: f64,

    pub clt_scale: u64,
    pub clt_replicas: usize,
    pub clt_split: f64,
    pub lambdas: Vec<[f64; 2]>,
    pub truncation_scales: Vec<u64>,
    pub truncation_replicas: usize,

    pub clock_scale: u64,
    pub clock_replicas: usize,
    pub clock_shrink_scales: [u64; 2],
    pub clock_shrink_replicas: usize,

    pub solver_grid: usize,
    pub oracle_grid: usize,
    pub rk4_dt: f64,
    pub etd_dt: f64,
    pub decay_p: f64,
    pub decay_window: [f64; 2],
    pub decay_points: usize,
    pub bump_radius: f64,
    pub far_bump_radius: f64,
    pub odd_fit_window: [f64; 2],

    pub poincare_fields: usize,
    pub poincare_modes: i32,
    pub poincare_radii: [f64; 2],
    pub poincare_radius_points: usize,
    pub poincare_golden: f64,

    pub diffusion_scale: u64,
    pub diffusion_momenta: Vec<[f64; 2]>,
    pub diffusion_times: Vec<f64>,
    pub diffusion_replicas: usize,
    pub diffusion_preset: PresetName,

    pub kernel_tol: f64,
    pub sampler_p_min: f64,
    pub tv_max: f64,
    pub tail_slope_tol: f64,
    pub sign_z_max: f64,
    pub sigma2_rel_tol: f64,
    pub sigma_band: f64,
    pub qv_dispersion_max: f64,
    pub qv_rel_tol: f64,
    pub clt_p_min: f64,
    pub clt_m3_max: f64,
    pub clt_m4_band: [f64; 2],
    pub clt_corr_max: f64,
    pub clock_rel_tol: f64,
    pub clock_ratio_rel_tol: f64,
    pub inverse_clock_rel_tol: f64,
    pub inverse_clock_dispersion_max: f64,
    pub decay_sup_ratio_max: f64,
    pub oracle_tol: f64,
    pub odd_rate_rel_tol: f64,
    pub far_bump_min_exponent: f64,
    pub diffusion_rel_tol: f64,
    pub diffusion_mc_tol: f64,
}

pub const DEFAULT_SEED: u64 = 1;

/// Largest `C₀` found over the reference sweep of 20 random fields at
/// `G = 64`, `p = 4` (9.2575e-3 with seed 1), with a 1% margin.
pub const POINCARE_GOLDEN: f64 = 9.35e-3;

impl Default for ExperimentConfig {
    fn default() -> Self {
        let diag = std::f64::consts::FRAC_1_SQRT_2;
        ExperimentConfig {
            experiment: Experiment::All,
            seed: DEFAULT_SEED,
            output_dir: "phonon-out".into(),
            initial_law: InitialLaw::Uniform,
            horizon: 1.0,
            time_points: 256,
            quadrature_points: 256,
            graded_levels: 30,
            graded_order: 10,
            chains: 16,
            burn_in: 50,

            sampler_draws: 1_000_000,
            jump_bins: 16,
            marginal_replicas: 100_000,
            stationary_samples: 1_000_000,
            tv_bins: 32,

            tail_samples: 10_000_000,
            tail_window: [1.0, 10.0],
            tail_points: 16,

            sigma2_samples: 10_000_000,
            sigma2_scales: (10..=20).map(|e| 1u64 << e).collect(),
            sigma2_batches: 10,

            qv_scale: 1 << 16,
            qv_replicas: 200,
            qv_time: 1.0,

            clt_scale: 1 << 18,
            clt_replicas: 2000,
            clt_split: 0.5,
            lambdas: vec![[1.0, 0.0], [0.0, 1.0], [diag, diag]],
            truncation_scales: vec![1 << 12, 1 << 16, 1 << 20],
            truncation_replicas: 200,

            clock_scale: 1 << 16,
            clock_replicas: 500,
            clock_shrink_scales: [1 << 14, 1 << 18],
            clock_shrink_replicas: 200,

            solver_grid: 64,
            oracle_grid: 16,
            rk4_dt: 0.05 / 16.0,
            etd_dt: 0.125,
            decay_p: 4.0,
            decay_window: [1.0, 100.0],
            decay_points: 21,
            bump_radius: 0.05,
            far_bump_radius: 0.2,
            odd_fit_window: [50.0, 100.0],

            poincare_fields: 20,
            poincare_modes: 3,
            poincare_radii: [1e-3, 1.0],
            poincare_radius_points: 31,
            poincare_golden: POINCARE_GOLDEN,

            diffusion_scale: 10_000,
            diffusion_momenta: vec![[1.0, 0.0], [0.0, 2.0], [3.0 * diag, 3.0 * diag]],
            diffusion_times: vec![0.5, 1.0],
            diffusion_replicas: 10_000,
            diffusion_preset: PresetName::SelfConsistent,

            kernel_tol: 1e-10,
            sampler_p_min: 1e-3,
            tv_max: 0.02,
            tail_slope_tol: 0.15,
            sign_z_max: 3.0,
            sigma2_rel_tol: 0.2,
            sigma_band: 3.0,
            qv_dispersion_max: 0.1,
            qv_rel_tol: 0.05,
            clt_p_min: 0.01,
            clt_m3_max: 0.1,
            clt_m4_band: [0.85, 1.15],
            clt_corr_max: 0.05,
            clock_rel_tol: 0.01,
            clock_ratio_rel_tol: 0.15,
            inverse_clock_rel_tol: 0.02,
            inverse_clock_dispersion_max: 0.05,
            decay_sup_ratio_max: 2.0,
            oracle_tol: 1e-12,
            odd_rate_rel_tol: 0.02,
            far_bump_min_exponent: 2.0,
            diffusion_rel_tol: 0.1,
            diffusion_mc_tol: 0.05,
        }
    }
}

/// 1-based line of byte offset `pos` in `text`.
fn line_at(text: &str, pos: usize) -> usize {
    text[..pos.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// 1-based line on which `key` is assigned, if present.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_at(text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        cfg.validate().map_err(|e| match e {
            Error::Config { line: None, message } => {
                let key = message.split('`').nth(1).unwrap_or_default().to_string();
                Error::Config {
                    line: line_of_key(text, &key),
                    message,
                }
            }
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Like [`ExperimentConfig::to_toml_string`] without `output_dir`, so the
    /// saved copy and its digest do not depend on where a run is written.
    pub fn to_portable_toml_string(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        table.remove("output_dir");
        toml::to_string(&table).expect("config serializes")
    }

    /// Reduced budgets for smoke runs; thresholds are unchanged.
    pub fn quick(mut self) -> Self {
        self.sampler_draws = 100_000;
        self.marginal_replicas = 10_000;
        self.stationary_samples = 200_000;
        self.tv_bins = 16;
        self.tail_samples = 1_000_000;
        self.sigma2_samples = 1_000_000;
        self.qv_scale = 1 << 12;
        self.qv_replicas = 50;
        self.clt_scale = 1 << 12;
        self.clt_replicas = 500;
        self.truncation_scales = vec![1 << 8, 1 << 10, 1 << 12];
        self.truncation_replicas = 50;
        self.clock_scale = 1 << 12;
        self.clock_replicas = 100;
        self.clock_shrink_scales = [1 << 10, 1 << 12];
        self.clock_shrink_replicas = 50;
        self.decay_window = [1.0, 40.0];
        self.decay_points = 9;
        self.odd_fit_window = [10.0, 20.0];
        self.poincare_fields = 5;
        self.diffusion_scale = 1000;
        self.diffusion_replicas = 500;
        self.etd_dt = 0.25;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| {
            Err(Error::Config {
                line: None,
                message: format!("`{key}` {why}"),
            })
        };
        let positive_f = [
            ("horizon", self.horizon),
            ("qv_time", self.qv_time),
            ("rk4_dt", self.rk4_dt),
            ("etd_dt", self.etd_dt),
            ("bump_radius", self.bump_radius),
            ("far_bump_radius", self.far_bump_radius),
            ("kernel_tol", self.kernel_tol),
            ("sampler_p_min", self.sampler_p_min),
            ("tv_max", self.tv_max),
            ("tail_slope_tol", self.tail_slope_tol),
            ("sign_z_max", self.sign_z_max),
            ("sigma2_rel_tol", self.sigma2_rel_tol),
            ("sigma_band", self.sigma_band),
            ("qv_dispersion_max", self.qv_dispersion_max),
            ("qv_rel_tol", self.qv_rel_tol),
            ("clt_p_min", self.clt_p_min),
            ("clt_m3_max", self.clt_m3_max),
            ("clt_corr_max", self.clt_corr_max),
            ("clock_rel_tol", self.clock_rel_tol),
            ("clock_ratio_rel_tol", self.clock_ratio_rel_tol),
            ("inverse_clock_rel_tol", self.inverse_clock_rel_tol),
            ("inverse_clock_dispersion_max", self.inverse_clock_dispersion_max),
            ("decay_sup_ratio_max", self.decay_sup_ratio_max),
            ("oracle_tol", self.oracle_tol),
            ("odd_rate_rel_tol", self.odd_rate_rel_tol),
            ("far_bump_min_exponent", self.far_bump_min_exponent),
            ("poincare_golden", self.poincare_golden),
            ("diffusion_rel_tol", self.diffusion_rel_tol),
            ("diffusion_mc_tol", self.diffusion_mc_tol),
        ];
        for (key, v) in positive_f {
            if !(v > 0.0) {
                return bad(key, "must be positive");
            }
        }
        let positive_u = [
            ("time_points", self.time_points),
            ("quadrature_points", self.quadrature_points),
            ("graded_levels", self.graded_levels),
            ("graded_order", self.graded_order),
            ("chains", self.chains),
            ("sampler_draws", self.sampler_draws),
            ("jump_bins", self.jump_bins),
            ("marginal_replicas", self.marginal_replicas),
            ("stationary_samples", self.stationary_samples),
            ("tv_bins", self.tv_bins),
            ("tail_samples", self.tail_samples),
            ("tail_points", self.tail_points),
            ("sigma2_samples", self.sigma2_samples),
            ("sigma2_batches", self.sigma2_batches),
            ("qv_replicas", self.qv_replicas),
            ("clt_replicas", self.clt_replicas),
            ("truncation_replicas", self.truncation_replicas),
            ("clock_replicas", self.clock_replicas),
            ("clock_shrink_replicas", self.clock_shrink_replicas),
            ("solver_grid", self.solver_grid),
            ("oracle_grid", self.oracle_grid),
            ("decay_points", self.decay_points),
            ("poincare_fields", self.poincare_fields),
            ("poincare_radius_points", self.poincare_radius_points),
            ("diffusion_replicas", self.diffusion_replicas),
        ];
        for (key, v) in positive_u {
            if v == 0 {
                return bad(key, "must be positive");
            }
        }
        let scales = [
            ("qv_scale", vec![self.qv_scale]),
            ("clt_scale", vec![self.clt_scale]),
            ("clock_scale", vec![self.clock_scale]),
            ("diffusion_scale", vec![self.diffusion_scale]),
            ("sigma2_scales", self.sigma2_scales.clone()),
            ("truncation_scales", self.truncation_scales.clone()),
            ("clock_shrink_scales", self.clock_shrink_scales.to_vec()),
        ];
        for (key, ns) in scales {
            if ns.is_empty() || ns.iter().any(|&n| n < 2) {
                return bad(key, "needs scaling parameters N >= 2");
            }
        }
        if self.time_points < 2 {
            return bad("time_points", "must be at least 2");
        }
        if self.poincare_modes < 1 {
            return bad("poincare_modes", "must be positive");
        }
        if !(self.clt_split > 0.0 && self.clt_split < 1.0) {
            return bad("clt_split", "must lie in (0, 1)");
        }
        if !(self.decay_p > 2.0) {
            return bad("decay_p", "must exceed 2");
        }
        for (key, w) in [
            ("tail_window", self.tail_window),
            ("decay_window", self.decay_window),
            ("odd_fit_window", self.odd_fit_window),
            ("poincare_radii", self.poincare_radii),
            ("clt_m4_band", self.clt_m4_band),
        ] {
            if !(w[0] > 0.0 && w[1] > w[0]) {
                return bad(key, "must be an increasing pair of positive numbers");
            }
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| crate::kernel::check_unit(*l).is_err()) {
            return bad("lambdas", "must be a nonempty list of unit vectors");
        }
        if self.diffusion_momenta.is_empty() || self.diffusion_momenta.iter().flatten().any(|x| !x.is_finite()) {
            return bad("diffusion_momenta", "must be a nonempty list of finite vectors");
        }
        if self.diffusion_times.is_empty()
            || self.diffusion_times[0] <= 0.0
            || self.diffusion_times.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("diffusion_times", "must be positive and strictly increasing");
        }
        if self.diffusion_scale < crate::kinetic_solver::MIN_DIFFUSION_SCALE {
            return bad("diffusion_scale", "must be at least 1000");
        }
        if self.initial_law.validate().is_err() {
            return bad("initial_law", "is not a valid law");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        let mut odd = cfg.clone().quick();
        odd.initial_law = "point:0.1,0.30000000000000004,2".parse().unwrap();
        odd.experiment = Experiment::Clock;
        odd.clt_split = 0.1 + 0.2;
        let back = ExperimentConfig::from_toml_str(&odd.to_toml_string()).unwrap();
        assert_eq!(back, odd);
        odd.output_dir = "/somewhere/else".into();
        let portable = odd.to_portable_toml_string();
        assert!(!portable.contains("output_dir"));
        let back = ExperimentConfig::from_toml_str(&portable).unwrap();
        assert_eq!(back.output_dir, cfg.output_dir);
        assert_eq!(back.to_portable_toml_string(), portable);
    }

    #[test]
    fn partial_files_use_defaults() {
        let cfg = ExperimentConfig::from_toml_str("experiment = \"tail\"\nseed = 9\n").unwrap();
        assert_eq!(cfg.experiment, Experiment::Tail);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.tail_samples, ExperimentConfig::default().tail_samples);
    }

    #[test]
    fn diagnostics_carry_lines() {
        let err = ExperimentConfig::from_toml_str("seed = 3\nexperiment = \"nope\"\n").unwrap_err();
        match err {
            Error::Config { line, message } => {
                assert_eq!(line, Some(2));
                assert!(
                    message.contains("validate-kernel") && message.contains("diffusion-limit"),
                    "{message}"
                );
            }
            e => panic!("unexpected {e}"),
        }
        let err = ExperimentConfig::from_toml_str("seed = 1\n\nclt_replicas = 0\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(3), .. }), "{err}");
        let err = ExperimentConfig::from_toml_str("sigma2_scales = [1, 4]\n").unwrap_err();
        assert!(err.to_string().contains("sigma2_scales"));
        let err = ExperimentConfig::from_toml_str("bogus_key = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: Some(1), .. }), "{err}");
        let err = ExperimentConfig::from_toml_str("lambdas = [[1.0, 1.0]]\n").unwrap_err();
        assert!(err.to_string().contains("lambdas"));
    }

    #[test]
    fn experiment_names() {
        for e in Experiment::SUITE {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        let err = "bogus".parse::<Experiment>().unwrap_err().to_string();
        assert!(err.contains("valid choices") && err.contains("poincare"));
        assert_eq!(Experiment::All.expand().len(), 10);
        let bases: std::collections::BTreeSet<u64> = Experiment::SUITE.iter().map(|e| e.stream_base()).collect();
        assert_eq!(bases.len(), 10);
    }
}
