//! Experiment configuration: one TOML file, one section per study.
//! Every section is optional and falls back to the documented defaults;
//! unknown keys anywhere are rejected.

use std::path::PathBuf;

use invrte::diffusion::DiffusionCheckConfig;
use invrte::grids::{gauss_legendre, SlabGrid};
use invrte::inversion::{InflowProfile, SweepConfig};
use invrte::moments::KappaEpsilonConfig;
use invrte::peaked::Profile;
use invrte::transport::{BoundaryInflow, OpticalField, Side, TransportProblem, Variant};
use invrte::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Diffusive,
    Peaked,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// When present, must agree with the subcommand.
    pub regime: Option<Regime>,
    pub study: Option<String>,
    /// Output directory; `--out` wins.
    pub output: Option<PathBuf>,
    pub slab: SlabConfig,
    pub adjoint: ProbeConfig,
    pub gamma: ProbeConfig,
    pub duality: DualityConfig,
    pub sweep: SweepConfig,
    pub sweep_kn: SweepKnConfig,
    pub invert: InvertConfig,
    pub diffusion: DiffusionCheckConfig,
    pub fp_spectrum: FpSpectrumConfig,
    pub xi_moments: XiMomentsConfig,
    pub moment_invert: MomentInvertConfig,
    pub kappa_epsilon: KappaEpsilonConfig,
    pub hermite: HermiteConfig,
    pub recoverable: RecoverableConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    /// Replaces every seed with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.sweep.seed = seed;
        self.moment_invert.seed = seed;
        self.kappa_epsilon.seed = seed;
        self.hermite.seed = seed;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryProfile {
    Zero,
    Constant,
    /// `amplitude * t`
    Linear,
    Ramp,
    Bump,
    Step,
}

/// Velocity-independent inflow `phi(t)` on one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundarySpec {
    pub profile: BoundaryProfile,
    pub amplitude: f64,
    /// Switch-off time of `ramp`, `bump` and `step`.
    pub t_on: f64,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self { profile: BoundaryProfile::Zero, amplitude: 1.0, t_on: 1.0 }
    }
}

impl BoundarySpec {
    pub fn value(&self, t: f64) -> f64 {
        let a = self.amplitude;
        match self.profile {
            BoundaryProfile::Zero => 0.0,
            BoundaryProfile::Constant => a,
            BoundaryProfile::Linear => a * t,
            BoundaryProfile::Ramp => a * InflowProfile::Ramp.eval(t, self.t_on),
            BoundaryProfile::Bump => a * InflowProfile::Bump.eval(t, self.t_on),
            BoundaryProfile::Step => a * InflowProfile::Step.eval(t, self.t_on),
        }
    }
}

/// Slab problem shared by `forward`, `adjoint`, `gamma` and `duality`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlabConfig {
    pub nx: usize,
    pub nt: usize,
    pub t_final: f64,
    pub nv: usize,
    pub kn: f64,
    pub sigma_s: f64,
    pub sigma_a: f64,
    pub variant: Variant,
    /// Uniform, velocity-independent initial value.
    pub initial: f64,
    pub left: BoundarySpec,
    pub right: BoundarySpec,
}

impl Default for SlabConfig {
    fn default() -> Self {
        Self {
            nx: 160,
            nt: 160,
            t_final: 1.0,
            nv: 8,
            kn: 0.05,
            sigma_s: 1.0,
            sigma_a: 1.0,
            variant: Variant::Absorption,
            initial: 0.0,
            left: BoundarySpec { profile: BoundaryProfile::Linear, ..Default::default() },
            right: BoundarySpec::default(),
        }
    }
}

impl SlabConfig {
    pub fn problem(&self) -> Result<TransportProblem> {
        let grid = SlabGrid::new(self.nx, self.nt, self.t_final)?;
        let q = gauss_legendre(self.nv)?;
        let (l, r) = (self.left, self.right);
        let inflow = BoundaryInflow::from_fn(&grid, &q, |t, side, _| match side {
            Side::Left => l.value(t),
            Side::Right => r.value(t),
        });
        let optics = OpticalField::uniform(self.nx, self.sigma_s, self.sigma_a);
        let mut p = TransportProblem::new(grid, q, self.kn, optics, inflow, self.variant);
        p.initial = vec![self.initial; self.nx];
        p.validate()?;
        Ok(p)
    }
}

/// Adjoint probe: measurement level `tau` on `side`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub tau: usize,
    pub side: Side,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { tau: 160, side: Side::Right }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualityConfig {
    pub tau: usize,
    pub side: Side,
    /// Height of the perturbation on `support`.
    pub amplitude: f64,
    pub support: (f64, f64),
    /// Number of successive halvings of the amplitude.
    pub halvings: usize,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self { tau: 160, side: Side::Right, amplitude: 0.01, support: (0.4, 0.6), halvings: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepKnConfig {
    pub kns: Vec<f64>,
}

impl Default for SweepKnConfig {
    fn default() -> Self {
        Self { kns: vec![0.4, 0.2, 0.1, 0.05] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvertConfig {
    pub kn: f64,
    /// Noise draw index; the draw uses `sweep.seed + draw`.
    pub draw: u64,
}

impl Default for InvertConfig {
    fn default() -> Self {
        Self { kn: 0.1, draw: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpSpectrumConfig {
    pub profile: Profile,
    pub eps: Vec<f64>,
    pub order: usize,
}

impl Default for FpSpectrumConfig {
    fn default() -> Self {
        Self { profile: Profile::Exponential, eps: vec![0.01, 0.005, 0.0025, 0.00125], order: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XiMomentsConfig {
    pub profile: Profile,
    pub eps: f64,
    pub order: usize,
}

impl Default for XiMomentsConfig {
    fn default() -> Self {
        Self { profile: Profile::Exponential, eps: 0.05, order: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentInvertConfig {
    pub profile: Profile,
    pub eps: f64,
    pub band: usize,
    pub experiments: usize,
    pub rank: usize,
    pub delta: f64,
    pub seed: u64,
}

impl Default for MomentInvertConfig {
    fn default() -> Self {
        Self { profile: Profile::Exponential, eps: 0.05, band: 3, experiments: 12, rank: 2, delta: 1e-3, seed: 20240601 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HermiteConfig {
    pub eps: Vec<f64>,
    /// Highest moment row `M`.
    pub rows: usize,
    /// Highest Hermite coefficient `N_h`.
    pub columns: usize,
    /// Moment noise for the coefficient-recovery column.
    pub delta: f64,
    pub seed: u64,
}

impl Default for HermiteConfig {
    fn default() -> Self {
        Self { eps: vec![0.2, 0.1, 0.05, 0.025], rows: 3, columns: 6, delta: 1e-6, seed: 20240601 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoverableConfig {
    pub delta: f64,
    pub eps: f64,
    /// Smoothness `k` of the predicted full-recovery error.
    pub smoothness: u32,
}

impl Default for RecoverableConfig {
    fn default() -> Self {
        Self { delta: 1e-6, eps: 1e-2, smoothness: 2 }
    }
}

pub fn check_list(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} must not be empty")));
    }
    Ok(())
}
