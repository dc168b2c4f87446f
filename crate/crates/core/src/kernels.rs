//! Linearized Fredholm kernels of the absorption and scattering problems, the
//! measured data `b`, and the duality identity that ties them together.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grids::{SlabGrid, VelocityQuadrature};
use crate::transport::{outflow, solve_adjoint, solve_forward, AdjointSource, AngularFlux, BoundarySignal, Side, TransportProblem, Variant};

/// Identifies the experiment a kernel row belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMeta {
    pub tau: usize,
    pub side: Side,
    pub inflow_id: String,
    pub kn: f64,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelRow {
    pub gamma: Vec<f64>,
    pub meta: RowMeta,
}

impl KernelRow {
    pub fn max_abs(&self) -> f64 {
        self.gamma.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    /// `sum_i dx sigma(x_i) gamma(x_i)`.
    pub fn pair(&self, dx: f64, sigma_tilde: &[f64]) -> f64 {
        self.gamma.iter().zip(sigma_tilde).map(|(g, s)| dx * g * s).sum()
    }
}

fn check_shapes(f0: &AngularFlux, g: &AngularFlux, grid: &SlabGrid, quad: &VelocityQuadrature) -> Result<()> {
    if f0.shape() != g.shape() || f0.shape() != (grid.nt() + 1, grid.nx(), quad.len()) {
        return invalid(format!("shape mismatch: f0 {:?}, g {:?}", f0.shape(), g.shape()));
    }
    Ok(())
}

/// `gamma(x_i) = -kn sum_k dt sum_j w_j f0 g`.
///
/// The time sum runs over the implicit levels `1..=nt`, which is the pairing
/// under which [`solve_adjoint`] is the exact discrete adjoint. On smooth data
/// it agrees with the trapezoid rule to `O(dt)`.
pub fn gamma_absorption(f0: &AngularFlux, g: &AngularFlux, kn: f64, grid: &SlabGrid, quad: &VelocityQuadrature) -> Result<Vec<f64>> {
    check_shapes(f0, g, grid, quad)?;
    let w = quad.weights();
    let dt = grid.dt();
    Ok((0..grid.nx())
        .map(|i| {
            let mut acc = 0.0;
            for k in 1..=grid.nt() {
                let (a, b) = (f0.slice(k, i), g.slice(k, i));
                acc += dt * (0..w.len()).map(|j| w[j] * a[j] * b[j]).sum::<f64>();
            }
            -kn * acc
        })
        .collect())
}

/// `gamma(x_i) = (1/kn) sum_k dt (<g><f0> - <g f0>)`, same time pairing as
/// [`gamma_absorption`].
pub fn gamma_scattering(f0: &AngularFlux, g: &AngularFlux, kn: f64, grid: &SlabGrid, quad: &VelocityQuadrature) -> Result<Vec<f64>> {
    check_shapes(f0, g, grid, quad)?;
    let w = quad.weights();
    let dt = grid.dt();
    Ok((0..grid.nx())
        .map(|i| {
            let mut acc = 0.0;
            for k in 1..=grid.nt() {
                let (a, b) = (f0.slice(k, i), g.slice(k, i));
                let (mut ma, mut mb, mut mab) = (0.0, 0.0, 0.0);
                for j in 0..w.len() {
                    ma += w[j] * a[j];
                    mb += w[j] * b[j];
                    mab += w[j] * a[j] * b[j];
                }
                acc += dt * (mb * ma - mab);
            }
            acc / kn
        })
        .collect())
}

pub fn gamma_for(variant: Variant, f0: &AngularFlux, g: &AngularFlux, kn: f64, grid: &SlabGrid, quad: &VelocityQuadrature) -> Result<Vec<f64>> {
    match variant {
        Variant::Absorption => gamma_absorption(f0, g, kn, grid, quad),
        Variant::Scattering => gamma_scattering(f0, g, kn, grid, quad),
    }
}

pub fn b_data(measured: &BoundarySignal, background: &BoundarySignal, tau: usize, side: Side) -> Result<f64> {
    if measured.m.len() != background.m.len() || tau >= measured.m.len() {
        return invalid("signals differ in length or tau is out of range");
    }
    Ok(measured.at(tau, side) - background.at(tau, side))
}

/// Kernel row for the measurement `m[tau][side]` of the background problem.
pub fn kernel_row(p: &TransportProblem, f0: &AngularFlux, tau: usize, side: Side, inflow_id: &str) -> Result<KernelRow> {
    let g = solve_adjoint(p, AdjointSource { tau, side })?;
    let gamma = gamma_for(p.variant, f0, &g, p.kn, &p.grid, &p.quad)?;
    Ok(KernelRow { gamma, meta: RowMeta { tau, side, inflow_id: inflow_id.to_string(), kn: p.kn, variant: p.variant } })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Duality {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// Both sides were below `1e-14`.
    pub degenerate: bool,
}

/// Compares the measured perturbation `b` with the linearized prediction
/// `sum_i dx sigma_tilde gamma` for the coefficient named by `p.variant`.
/// `p.optics` is taken as the background.
pub fn duality_residual(p: &TransportProblem, sigma_tilde: &[f64], tau: usize, side: Side) -> Result<Duality> {
    if sigma_tilde.len() != p.grid.nx() {
        return invalid("perturbation length differs from the grid");
    }
    if sigma_tilde.iter().any(|s| s.abs() > 0.1) {
        return invalid("perturbation sup-norm must not exceed 0.1");
    }
    let mut base = p.clone();
    base.optics = p.optics.background();
    let f0 = solve_forward(&base)?;
    let mut pert = base.clone();
    pert.optics = base.optics.with_perturbation(p.variant, sigma_tilde);
    let f1 = solve_forward(&pert)?;
    let lhs = b_data(&outflow(&f1, &p.quad)?, &outflow(&f0, &p.quad)?, tau, side)?;
    let row = kernel_row(&base, &f0, tau, side, "")?;
    let rhs = row.pair(p.grid.dx(), sigma_tilde);
    let scale = lhs.abs().max(rhs.abs());
    if scale < 1e-14 {
        return Ok(Duality { lhs, rhs, residual: 0.0, degenerate: true });
    }
    Ok(Duality { lhs, rhs, residual: (lhs - rhs).abs() / scale, degenerate: false })
}
