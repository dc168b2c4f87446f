//! The discrete linearized albedo system `A sigma = b`: experiment suites,
//! assembly, SVD, Tikhonov reconstruction and the distinguishability surrogate.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grids::{gauss_legendre, SlabGrid};
use crate::kernels::{b_data, kernel_row, KernelRow, RowMeta};
use crate::linalg::{jacobi_svd, Svd};
use crate::transport::{outflow, solve_forward, BoundaryInflow, OpticalField, Side, TransportProblem, Variant};

/// Time profile of a velocity-independent inflow, active on `(0, t_on]`
/// where `t_on` is the switch-off time passed to [`InflowProfile::eval`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InflowProfile {
    /// `t / t_on`
    Ramp,
    /// `sin^2(pi t / t_on)`
    Bump,
    /// `1`
    Step,
}

impl InflowProfile {
    pub fn eval(self, t: f64, t_on: f64) -> f64 {
        if !(t > 0.0 && t <= t_on * (1.0 + 1e-12)) {
            return 0.0;
        }
        match self {
            InflowProfile::Ramp => t / t_on,
            InflowProfile::Bump => (std::f64::consts::PI * t / t_on).sin().powi(2),
            InflowProfile::Step => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InflowProfile::Ramp => "ramp",
            InflowProfile::Bump => "bump",
            InflowProfile::Step => "step",
        }
    }
}

/// Where the outflow is read relative to the inflow side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    /// Same side as the inflow.
    Reflection,
    /// Opposite side.
    Transmission,
}

impl Detector {
    pub fn side(self, inflow_side: Side) -> Side {
        match (self, inflow_side) {
            (Detector::Reflection, s) => s,
            (Detector::Transmission, Side::Left) => Side::Right,
            (Detector::Transmission, Side::Right) => Side::Left,
        }
    }
}

/// One measurement: inflow `profile` entering through `inflow_side`, outflow
/// read at level `tau` on `measure_side`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Experiment {
    pub profile: InflowProfile,
    pub inflow_side: Side,
    pub tau: usize,
    pub measure_side: Side,
}

impl Experiment {
    pub fn inflow_id(&self) -> String {
        format!("{}-{}", self.profile.name(), self.inflow_side.name())
    }
}

/// Full tensor product of the given factors, in a fixed order.
pub fn experiment_suite(profiles: &[InflowProfile], inflow_sides: &[Side], taus: &[usize], detectors: &[Detector]) -> Vec<Experiment> {
    let mut out = Vec::new();
    for &profile in profiles {
        for &inflow_side in inflow_sides {
            for &tau in taus {
                for &d in detectors {
                    out.push(Experiment { profile, inflow_side, tau, measure_side: d.side(inflow_side) });
                }
            }
        }
    }
    out
}

fn inflow_for(base: &TransportProblem, profile: InflowProfile, side: Side, t_on: f64) -> BoundaryInflow {
    BoundaryInflow::one_sided(&base.grid, &base.quad, side, |t| profile.eval(t, t_on))
}

/// Kernel rows for every experiment over the background of `base`
/// (its inflow is ignored). Rows come back in suite order.
pub fn kernel_rows(base: &TransportProblem, suite: &[Experiment], t_on: f64) -> Result<Vec<KernelRow>> {
    let mut sources: Vec<(InflowProfile, Side)> = suite.iter().map(|e| (e.profile, e.inflow_side)).collect();
    sources.sort();
    sources.dedup();
    let background = base.optics.background();
    let forwards: Vec<(InflowProfile, Side, crate::transport::AngularFlux)> = sources
        .par_iter()
        .map(|&(profile, side)| {
            let mut p = base.clone();
            p.optics = background.clone();
            p.inflow = inflow_for(base, profile, side, t_on);
            solve_forward(&p).map(|f| (profile, side, f))
        })
        .collect::<Result<_>>()?;
    suite
        .par_iter()
        .map(|e| {
            let (_, _, f0) = forwards.iter().find(|(p, s, _)| *p == e.profile && *s == e.inflow_side).expect("forward solved");
            let mut p = base.clone();
            p.optics = background.clone();
            kernel_row(&p, f0, e.tau, e.measure_side, &e.inflow_id())
        })
        .collect()
}

/// Noise-free data `b` for each experiment, from forward solves with and
/// without the perturbation `sigma_tilde` of the `base.variant` coefficient.
pub fn synthetic_data(base: &TransportProblem, suite: &[Experiment], t_on: f64, sigma_tilde: &[f64]) -> Result<Vec<f64>> {
    let mut sources: Vec<(InflowProfile, Side)> = suite.iter().map(|e| (e.profile, e.inflow_side)).collect();
    sources.sort();
    sources.dedup();
    let background = base.optics.background();
    let perturbed = background.with_perturbation(base.variant, sigma_tilde);
    let signals: Vec<_> = sources
        .par_iter()
        .map(|&(profile, side)| -> Result<_> {
            let mut p = base.clone();
            p.inflow = inflow_for(base, profile, side, t_on);
            p.optics = background.clone();
            let s0 = outflow(&solve_forward(&p)?, &p.quad)?;
            p.optics = perturbed.clone();
            let s1 = outflow(&solve_forward(&p)?, &p.quad)?;
            Ok((profile, side, s0, s1))
        })
        .collect::<Result<_>>()?;
    suite
        .iter()
        .map(|e| {
            let (_, _, s0, s1) = signals.iter().find(|(p, s, _, _)| *p == e.profile && *s == e.inflow_side).expect("signal solved");
            b_data(s1, s0, e.tau, e.measure_side)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct KernelSystem {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub meta: Vec<RowMeta>,
    /// Grid cell of each column.
    pub columns: Vec<usize>,
    pub dx: f64,
}

impl KernelSystem {
    /// Expands a column-space vector back to the full grid, zero outside the mask.
    pub fn expand(&self, x: &Array1<f64>, nx: usize) -> Vec<f64> {
        let mut out = vec![0.0; nx];
        for (c, &i) in self.columns.iter().enumerate() {
            out[i] = x[c];
        }
        out
    }

    /// Restricts a full-grid vector to the columns.
    pub fn restrict(&self, full: &[f64]) -> Array1<f64> {
        self.columns.iter().map(|&i| full[i]).collect()
    }
}

/// `A_ij = gamma_i(x_j) dx` over unmasked cells.
pub fn assemble_system(rows: &[KernelRow], data: &[f64], mask: &[bool], dx: f64) -> Result<KernelSystem> {
    if rows.is_empty() {
        return invalid("a kernel system needs at least one row");
    }
    if rows.len() != data.len() {
        return invalid(format!("{} rows but {} data values", rows.len(), data.len()));
    }
    let nx = rows[0].gamma.len();
    if mask.len() != nx {
        return invalid("mask length differs from the kernel rows");
    }
    let (kn, variant) = (rows[0].meta.kn, rows[0].meta.variant);
    if rows.iter().any(|r| r.gamma.len() != nx || r.meta.kn != kn || r.meta.variant != variant) {
        return invalid("kernel rows disagree in grid, Kn or variant");
    }
    let columns: Vec<usize> = (0..nx).filter(|&i| mask[i]).collect();
    if columns.is_empty() {
        return invalid("mask excludes every cell");
    }
    let a = Array2::from_shape_fn((rows.len(), columns.len()), |(r, c)| rows[r].gamma[columns[c]] * dx);
    Ok(KernelSystem { a, b: Array1::from(data.to_vec()), meta: rows.iter().map(|r| r.meta.clone()).collect(), columns, dx })
}

pub fn svd(a: &Array2<f64>) -> Result<Svd> {
    jacobi_svd(a)
}

/// Relative cutoff under which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Minimizer of `|A x - b|^2 + lambda^2 |x|^2` via SVD filter factors.
pub fn tikhonov_solve(sys: &KernelSystem, lambda_reg: f64) -> Result<Array1<f64>> {
    tikhonov_with_svd(&svd(&sys.a)?, &sys.b, lambda_reg)
}

/// [`tikhonov_solve`] reusing a precomputed SVD of `A`.
pub fn tikhonov_with_svd(s: &Svd, b: &Array1<f64>, lambda_reg: f64) -> Result<Array1<f64>> {
    if !(lambda_reg >= 0.0) || !lambda_reg.is_finite() {
        return invalid("regularization parameter must be finite and nonnegative");
    }
    if b.len() != s.u.nrows() {
        return invalid("data length differs from the row count");
    }
    let ncols = s.v.nrows();
    let s_max = s.s.first().copied().unwrap_or(0.0);
    if lambda_reg == 0.0 {
        let rank = s.s.iter().filter(|&&x| x > RANK_TOL * s_max).count();
        if rank < ncols {
            return invalid(format!("A has rank {rank} < {ncols} columns, least squares needs lambda_reg > 0"));
        }
    }
    let mut x = Array1::zeros(ncols);
    for (i, &sv) in s.s.iter().enumerate() {
        let denom = sv * sv + lambda_reg * lambda_reg;
        if denom == 0.0 {
            continue;
        }
        let coef = sv / denom * s.u.column(i).dot(b);
        x.scaled_add(coef, &s.v.column(i));
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaMode {
    /// `delta / lambda_N`
    FixedB,
    /// `delta lambda_1 / lambda_N`
    WorstB,
}

/// Distinguishability surrogate; `Infinite` when the smallest singular value
/// vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Finite(f64),
    Infinite,
}

impl Kappa {
    pub fn value(self) -> f64 {
        match self {
            Kappa::Finite(v) => v,
            Kappa::Infinite => f64::INFINITY,
        }
    }
}

pub fn distinguishability(singular_values: &[f64], delta: f64, mode: KappaMode) -> Kappa {
    let (Some(&first), Some(&last)) = (singular_values.first(), singular_values.last()) else {
        return Kappa::Infinite;
    };
    if !(last > 0.0) {
        return Kappa::Infinite;
    }
    match mode {
        KappaMode::FixedB => Kappa::Finite(delta / last),
        KappaMode::WorstB => Kappa::Finite(delta * first / last),
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Everything that defines one Kn sweep besides the Kn list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub variant: Variant,
    pub nx: usize,
    pub nt: usize,
    pub t_final: f64,
    pub nv: usize,
    pub sigma_s: f64,
    pub sigma_a: f64,
    /// Columns are the cells farther than this from both ends.
    pub mask_width: f64,
    pub profiles: Vec<InflowProfile>,
    /// Inflow switch-off time as a fraction of `t_final`.
    pub inflow_on_fraction: f64,
    pub inflow_sides: Vec<Side>,
    pub detectors: Vec<Detector>,
    /// Measurement times as fractions of `t_final`, rounded to levels.
    pub tau_fractions: Vec<f64>,
    /// Truth perturbation: `amplitude` on `[support.0, support.1]`.
    pub truth_amplitude: f64,
    pub truth_support: (f64, f64),
    pub delta: f64,
    pub noise_draws: usize,
    pub seed: u64,
    /// Tikhonov parameter as a multiple of the largest singular value.
    pub tikhonov_rel: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Absorption,
            nx: 160,
            nt: 160,
            t_final: 1.0,
            nv: 8,
            sigma_s: 1.0,
            sigma_a: 1.0,
            mask_width: 0.25,
            profiles: vec![InflowProfile::Ramp, InflowProfile::Bump, InflowProfile::Step],
            inflow_on_fraction: 0.5,
            inflow_sides: vec![Side::Left, Side::Right],
            detectors: vec![Detector::Reflection],
            tau_fractions: vec![0.75, 1.0],
            truth_amplitude: 0.01,
            truth_support: (0.4, 0.6),
            delta: 1e-3,
            noise_draws: 20,
            seed: 20240601,
            tikhonov_rel: 1e-2,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Result<SlabGrid> {
        SlabGrid::new(self.nx, self.nt, self.t_final)
    }

    pub fn taus(&self) -> Vec<usize> {
        self.tau_fractions.iter().map(|f| (f * self.nt as f64).round() as usize).collect()
    }

    pub fn suite(&self) -> Vec<Experiment> {
        experiment_suite(&self.profiles, &self.inflow_sides, &self.taus(), &self.detectors)
    }

    pub fn truth(&self, grid: &SlabGrid) -> Vec<f64> {
        let (lo, hi) = self.truth_support;
        grid.centers().iter().map(|&x| if x >= lo && x <= hi { self.truth_amplitude } else { 0.0 }).collect()
    }

    /// Background problem at the given Kn; the inflow is set per experiment.
    pub fn problem(&self, kn: f64) -> Result<TransportProblem> {
        let grid = self.grid()?;
        let quad = gauss_legendre(self.nv)?;
        let optics = OpticalField::uniform(self.nx, self.sigma_s, self.sigma_a);
        let inflow = BoundaryInflow::zero(self.nt, self.nv);
        Ok(TransportProblem::new(grid, quad, kn, optics, inflow, self.variant))
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() || self.inflow_sides.is_empty() || self.detectors.is_empty() || self.tau_fractions.is_empty() {
            return invalid("the experiment suite is empty");
        }
        if !(self.inflow_on_fraction > 0.0 && self.inflow_on_fraction <= 1.0) {
            return invalid("inflow_on_fraction must lie in (0, 1]");
        }
        if self.tau_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return invalid("tau fractions must lie in (0, 1]");
        }
        if !(self.delta >= 0.0) || !(self.tikhonov_rel >= 0.0) || !(self.mask_width >= 0.0 && self.mask_width < 0.5) {
            return invalid("delta, tikhonov_rel and mask_width must be nonnegative (mask_width < 0.5)");
        }
        if self.noise_draws == 0 {
            return invalid("noise_draws must be positive");
        }
        let grid = self.grid()?;
        let truth = self.truth(&grid);
        OpticalField::uniform(self.nx, self.sigma_s, self.sigma_a).with_perturbation(self.variant, &truth).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub kn: f64,
    pub max_gamma: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub kappa: f64,
    pub kappa_worst: f64,
    /// Median over noise draws of `|sigma_hat - truth| / |truth|`.
    pub tikhonov_error: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub gamma_slope: Option<f64>,
    pub kappa_slope: Option<f64>,
    pub lambda_min_slope: Option<f64>,
    pub tikhonov_slope: Option<f64>,
}

/// Noise vector with entries uniform on `[-delta, delta]`.
pub fn uniform_noise(n: usize, delta: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| if delta > 0.0 { rng.gen_range(-delta..=delta) } else { 0.0 }).collect()
}

/// Kernel rows, assembled system and truth for one Kn; data come from a
/// perturbed forward solve.
pub fn build_system(cfg: &SweepConfig, kn: f64) -> Result<(Vec<KernelRow>, KernelSystem, Vec<f64>)> {
    let base = cfg.problem(kn)?;
    base.validate()?;
    let suite = cfg.suite();
    let t_on = cfg.inflow_on_fraction * cfg.t_final;
    let rows = kernel_rows(&base, &suite, t_on)?;
    let truth = cfg.truth(&base.grid);
    let data = synthetic_data(&base, &suite, t_on, &truth)?;
    let mask = crate::diffusion::interior_mask(&base.grid, cfg.mask_width);
    let sys = assemble_system(&rows, &data, &mask, base.grid.dx())?;
    Ok((rows, sys, truth))
}

/// One sweep row: kernels, spectrum, kappa and the noisy Tikhonov error.
pub fn sweep_point(cfg: &SweepConfig, kn: f64) -> Result<SweepRow> {
    let (rows, sys, truth) = build_system(cfg, kn)?;
    let max_gamma = rows.iter().map(KernelRow::max_abs).fold(0.0, f64::max);
    let s = svd(&sys.a)?;
    let lambda_max = s.s[0];
    let lambda_min = *s.s.last().expect("nonempty spectrum");
    let rank = s.s.iter().filter(|&&x| x > RANK_TOL * lambda_max).count();
    let truth_cols = sys.restrict(&truth);
    let truth_norm = truth_cols.dot(&truth_cols).sqrt();
    let lambda_reg = cfg.tikhonov_rel * lambda_max;
    let mut errs: Vec<f64> = (0..cfg.noise_draws)
        .map(|d| -> Result<f64> {
            let noise = uniform_noise(sys.b.len(), cfg.delta, cfg.seed.wrapping_add(d as u64));
            let b = &sys.b + &Array1::from(noise);
            let x = tikhonov_with_svd(&s, &b, lambda_reg)?;
            let diff = &x - &truth_cols;
            Ok(diff.dot(&diff).sqrt() / truth_norm)
        })
        .collect::<Result<_>>()?;
    Ok(SweepRow {
        kn,
        max_gamma,
        lambda_max,
        lambda_min,
        kappa: distinguishability(s.s.as_slice().expect("contiguous"), cfg.delta, KappaMode::FixedB).value(),
        kappa_worst: distinguishability(s.s.as_slice().expect("contiguous"), cfg.delta, KappaMode::WorstB).value(),
        tikhonov_error: median(&mut errs),
        rank,
    })
}

/// One regularized reconstruction on the full grid (zero outside the mask).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub truth: Vec<f64>,
    pub estimate: Vec<f64>,
    pub in_mask: Vec<bool>,
    pub lambda_reg: f64,
    pub relative_error: f64,
}

/// Tikhonov reconstruction at one Kn from the noise draw with `seed`.
pub fn reconstruct(cfg: &SweepConfig, kn: f64, seed: u64) -> Result<Reconstruction> {
    cfg.validate()?;
    let (_, sys, truth) = build_system(cfg, kn)?;
    let s = svd(&sys.a)?;
    let lambda_reg = cfg.tikhonov_rel * s.s[0];
    let b = &sys.b + &Array1::from(uniform_noise(sys.b.len(), cfg.delta, seed));
    let x = tikhonov_with_svd(&s, &b, lambda_reg)?;
    let nx = truth.len();
    let mut in_mask = vec![false; nx];
    for &c in &sys.columns {
        in_mask[c] = true;
    }
    let t = sys.restrict(&truth);
    let diff = &x - &t;
    Ok(Reconstruction {
        estimate: sys.expand(&x, nx),
        truth,
        in_mask,
        lambda_reg,
        relative_error: diff.dot(&diff).sqrt() / t.dot(&t).sqrt(),
    })
}

/// Runs [`sweep_point`] for every Kn (in parallel) and fits the log-log slopes.
/// Rows are sorted by decreasing Kn.
pub fn kn_sweep(cfg: &SweepConfig, kns: &[f64]) -> Result<SweepTable> {
    cfg.validate()?;
    if kns.is_empty() {
        return invalid("empty Kn list");
    }
    let mut rows: Vec<SweepRow> = kns.par_iter().map(|&kn| sweep_point(cfg, kn)).collect::<Result<_>>()?;
    rows.sort_by(|a, b| b.kn.total_cmp(&a.kn));
    let kn: Vec<f64> = rows.iter().map(|r| r.kn).collect();
    let col = |f: fn(&SweepRow) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    Ok(SweepTable {
        gamma_slope: loglog_slope(&kn, &col(|r| r.max_gamma)),
        kappa_slope: loglog_slope(&kn, &col(|r| r.kappa)),
        lambda_min_slope: loglog_slope(&kn, &col(|r| r.lambda_min)),
        tikhonov_slope: loglog_slope(&kn, &col(|r| r.tikhonov_error)),
        rows,
    })
}

impl From<Kappa> for Option<f64> {
    fn from(k: Kappa) -> Self {
        match k {
            Kappa::Finite(v) => Some(v),
            Kappa::Infinite => None,
        }
    }
}
