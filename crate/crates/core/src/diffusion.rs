//! Heat-equation reference for the diffusion limit and the masked comparison
//! between kinetic densities and the limit density.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grids::{gauss_legendre, SlabGrid, VelocityQuadrature};
use crate::inversion::loglog_slope;
use crate::transport::{solve_forward, AngularFlux, BoundaryInflow, OpticalField, Side, TransportProblem, Variant};

/// Diffusion constant `<v^2>` of the normalized slab measure.
pub const SLAB_DIFFUSION: f64 = 1.0 / 3.0;

/// Default layer width in units of `Kn`.
pub const LAYER_FACTOR: f64 = 5.0;

/// Cell-centered density `rho[k][i]` over all time levels.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub rho: Vec<Vec<f64>>,
}

impl DensityField {
    pub fn from_flux(f: &AngularFlux, q: &VelocityQuadrature) -> Self {
        Self { rho: f.density(q) }
    }
}

/// Boundary values `rho(t_k, 0)` and `rho(t_k, 1)` for every level.
#[derive(Debug, Clone, PartialEq)]
pub struct Dirichlet {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl Dirichlet {
    pub fn from_fn(grid: &SlabGrid, left: impl Fn(f64) -> f64, right: impl Fn(f64) -> f64) -> Self {
        Self {
            left: (0..=grid.nt()).map(|k| left(grid.t(k))).collect(),
            right: (0..=grid.nt()).map(|k| right(grid.t(k))).collect(),
        }
    }
}

/// Solves `rho_t - c (rho_x / sigma_s)_x + sigma_a rho = 0` with Crank-Nicolson.
///
/// Interior faces use the harmonic mean of `1/sigma_s`; boundary faces sit half
/// a cell from the outermost center and see the adjacent cell's coefficient.
pub fn solve_heat(
    grid: &SlabGrid,
    sigma_s: &[f64],
    sigma_a: &[f64],
    c: f64,
    rho0: &[f64],
    bc: &Dirichlet,
) -> Result<DensityField> {
    let (nx, nt) = (grid.nx(), grid.nt());
    if sigma_s.len() != nx || sigma_a.len() != nx || rho0.len() != nx {
        return invalid("coefficient or initial vectors do not match the grid");
    }
    if bc.left.len() != nt + 1 || bc.right.len() != nt + 1 {
        return invalid("boundary data must cover every time level");
    }
    if let Some(i) = sigma_s.iter().position(|&s| !(s > 0.0)) {
        return invalid(format!("sigma_s must be positive (cell {i} has {})", sigma_s[i]));
    }
    if !(c > 0.0) {
        return invalid("diffusion constant must be positive");
    }
    let (dx, dt) = (grid.dx(), grid.dt());
    // Face conductances: west face w[i] between i-1 and i, east face w[i+1].
    let mut face = vec![0.0; nx + 1];
    face[0] = c / sigma_s[0] / (0.5 * dx * dx);
    face[nx] = c / sigma_s[nx - 1] / (0.5 * dx * dx);
    for i in 1..nx {
        let harmonic = 2.0 / (sigma_s[i - 1] + sigma_s[i]);
        face[i] = c * harmonic / (dx * dx);
    }
    // Operator L rho = -(face[i+1] (rho_{i+1}-rho_i) - face[i] (rho_i - rho_{i-1})) + sigma_a rho
    let diag: Vec<f64> = (0..nx).map(|i| face[i] + face[i + 1] + sigma_a[i]).collect();
    let apply = |r: &[f64], gl: f64, gr: f64| -> Vec<f64> {
        (0..nx)
            .map(|i| {
                let west = if i == 0 { gl } else { r[i - 1] };
                let east = if i + 1 == nx { gr } else { r[i + 1] };
                diag[i] * r[i] - face[i] * west - face[i + 1] * east
            })
            .collect()
    };
    let mut rho = Vec::with_capacity(nt + 1);
    rho.push(rho0.to_vec());
    let mut lower = vec![0.0; nx];
    let mut main = vec![0.0; nx];
    let mut upper = vec![0.0; nx];
    for i in 0..nx {
        main[i] = 1.0 + 0.5 * dt * diag[i];
        if i > 0 {
            lower[i] = -0.5 * dt * face[i];
        }
        if i + 1 < nx {
            upper[i] = -0.5 * dt * face[i + 1];
        }
    }
    for k in 1..=nt {
        let prev = &rho[k - 1];
        let lp = apply(prev, bc.left[k - 1], bc.right[k - 1]);
        let mut rhs: Vec<f64> = (0..nx).map(|i| prev[i] - 0.5 * dt * lp[i]).collect();
        rhs[0] += 0.5 * dt * face[0] * bc.left[k];
        rhs[nx - 1] += 0.5 * dt * face[nx] * bc.right[k];
        rho.push(thomas(&lower, &main, &upper, rhs));
    }
    Ok(DensityField { rho })
}

fn thomas(lower: &[f64], main: &[f64], upper: &[f64], mut rhs: Vec<f64>) -> Vec<f64> {
    let n = main.len();
    let mut c = vec![0.0; n];
    let mut m = main[0];
    c[0] = upper[0] / m;
    rhs[0] /= m;
    for i in 1..n {
        m = main[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    rhs
}

/// Cells whose centers are farther than `width` from both boundaries.
pub fn interior_mask(grid: &SlabGrid, width: f64) -> Vec<bool> {
    grid.centers().iter().map(|&x| x > width && 1.0 - x > width).collect()
}

/// `L^2((0,T) x interior)` norm of `<f> - rho`, with the layer mask of width
/// `layer_factor * kn`.
pub fn diffusion_limit_error(
    f: &AngularFlux,
    rho: &DensityField,
    grid: &SlabGrid,
    q: &VelocityQuadrature,
    kn: f64,
    layer_factor: f64,
) -> Result<f64> {
    if !(layer_factor >= 0.0) {
        return invalid("layer factor must be nonnegative");
    }
    masked_l2_error(f, rho, grid, q, &interior_mask(grid, layer_factor * kn))
}

/// Same norm over an explicit cell mask.
pub fn masked_l2_error(
    f: &AngularFlux,
    rho: &DensityField,
    grid: &SlabGrid,
    q: &VelocityQuadrature,
    mask: &[bool],
) -> Result<f64> {
    let (levels, nx, nv) = f.shape();
    if nx != grid.nx() || levels != grid.nt() + 1 || nv != q.len() || mask.len() != nx {
        return invalid("flux, grid and mask shapes differ");
    }
    if rho.rho.len() != levels || rho.rho.iter().any(|r| r.len() != nx) {
        return invalid("density field does not match the flux");
    }
    if !mask.iter().any(|&m| m) {
        return invalid("layer mask leaves no interior cells");
    }
    let mut acc = 0.0;
    for k in 1..levels {
        for i in (0..nx).filter(|&i| mask[i]) {
            let d = q.average(f.slice(k, i)) - rho.rho[k][i];
            acc += d * d;
        }
    }
    Ok((acc * grid.dt() * grid.dx()).sqrt())
}

/// Largest pointwise `max_j |f - rho|` over the masked interior.
pub fn masked_max_deviation(f: &AngularFlux, rho: &DensityField, mask: &[bool]) -> f64 {
    let (levels, nx, nv) = f.shape();
    let mut m: f64 = 0.0;
    for k in 1..levels {
        for i in (0..nx).filter(|&i| mask[i]) {
            for j in 0..nv {
                m = m.max((f.get(k, i, j) - rho.rho[k][i]).abs());
            }
        }
    }
    m
}

/// Kinetic-versus-heat comparison over a list of Knudsen numbers, with
/// inflow `slope * t` on each side and zero initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionCheckConfig {
    pub kns: Vec<f64>,
    /// Cells per unit Knudsen number, so `dx = kn / cells_per_kn`.
    pub cells_per_kn: usize,
    /// Time steps per cell count, `nt = round(nt_factor * nx)`.
    pub nt_factor: f64,
    pub t_final: f64,
    pub nv: usize,
    pub sigma_s: f64,
    pub sigma_a: f64,
    pub left_slope: f64,
    pub right_slope: f64,
    /// Absolute width of the excluded boundary layers.
    pub mask_width: f64,
}

impl Default for DiffusionCheckConfig {
    fn default() -> Self {
        Self {
            kns: vec![0.4, 0.2, 0.1, 0.05],
            cells_per_kn: 4,
            nt_factor: 1.0,
            t_final: 0.5,
            nv: 8,
            sigma_s: 1.0,
            sigma_a: 1.0,
            left_slope: 1.0,
            right_slope: 0.0,
            mask_width: 0.25,
        }
    }
}

impl DiffusionCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kns.is_empty() || self.kns.iter().any(|k| !(*k > 0.0 && *k <= 1.0)) {
            return invalid("kns must be a nonempty list in (0, 1]");
        }
        if self.cells_per_kn < 4 {
            return invalid("cells_per_kn must be at least 4");
        }
        if !(self.nt_factor > 0.0 && self.t_final > 0.0) {
            return invalid("nt_factor and t_final must be positive");
        }
        if !(self.mask_width >= 0.0 && self.mask_width < 0.5) {
            return invalid("mask_width must lie in [0, 0.5)");
        }
        gauss_legendre(self.nv)?;
        Ok(())
    }

    pub fn grid(&self, kn: f64) -> Result<SlabGrid> {
        let nx = (self.cells_per_kn as f64 / kn - 1e-9).ceil() as usize;
        let nt = ((self.nt_factor * nx as f64).round() as usize).max(1);
        SlabGrid::new(nx, nt, self.t_final)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionRow {
    pub kn: f64,
    pub nx: usize,
    pub nt: usize,
    /// Masked space-time `L^2` error of `<f> - rho`.
    pub l2_error: f64,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionTable {
    /// Sorted by decreasing `kn`.
    pub rows: Vec<DiffusionRow>,
    pub slope: Option<f64>,
    pub monotone: bool,
}

pub fn diffusion_check(cfg: &DiffusionCheckConfig) -> Result<DiffusionTable> {
    cfg.validate()?;
    let q = gauss_legendre(cfg.nv)?;
    let mut rows = cfg
        .kns
        .par_iter()
        .map(|&kn| {
            let grid = cfg.grid(kn)?;
            let (l, r) = (cfg.left_slope, cfg.right_slope);
            let inflow = BoundaryInflow::from_fn(&grid, &q, |t, side, _| match side {
                Side::Left => l * t,
                Side::Right => r * t,
            });
            let optics = OpticalField::uniform(grid.nx(), cfg.sigma_s, cfg.sigma_a);
            let p = TransportProblem::new(grid, q.clone(), kn, optics, inflow, Variant::Absorption);
            let f = solve_forward(&p)?;
            let nx = grid.nx();
            let bc = Dirichlet::from_fn(&grid, |t| l * t, |t| r * t);
            let rho = solve_heat(&grid, &vec![cfg.sigma_s; nx], &vec![cfg.sigma_a; nx], SLAB_DIFFUSION, &vec![0.0; nx], &bc)?;
            let mask = interior_mask(&grid, cfg.mask_width);
            Ok(DiffusionRow {
                kn,
                nx,
                nt: grid.nt(),
                l2_error: masked_l2_error(&f, &rho, &grid, &q, &mask)?,
                max_deviation: masked_max_deviation(&f, &rho, &mask),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.kn.total_cmp(&a.kn));
    let kn: Vec<f64> = rows.iter().map(|r| r.kn).collect();
    let err: Vec<f64> = rows.iter().map(|r| r.l2_error).collect();
    let monotone = err.windows(2).all(|w| w[1] < w[0]);
    Ok(DiffusionTable { slope: loglog_slope(&kn, &err), monotone, rows })
}
