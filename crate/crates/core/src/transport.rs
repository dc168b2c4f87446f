//! Forward and adjoint solvers for the Knudsen-scaled slab transport equation
//!
//! ```text
//! Kn df/dt + v df/dx = (sigma_s / Kn) (<f> - f) - Kn sigma_a f
//! ```
//!
//! Backward Euler in time, first-order upwind in space and a fully implicit
//! collision term. The coefficients do not depend on time, so the step matrix
//! (cell-major unknowns, bandwidth `nv` on each side) is factored once and
//! reused for every step.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grids::{SlabGrid, VelocityQuadrature};
use crate::linalg::BandMatrix;

/// Lower bound enforced on the scattering coefficient.
pub const SIGMA_MIN: f64 = 1e-6;

/// Tolerance on negative values in the positivity check.
pub const TOL_NEG: f64 = 1e-10;

/// Which coefficient is treated as the unknown of the linearized problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Absorption,
    Scattering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// Per-cell optical coefficients, each split as background plus perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalField {
    pub sigma_s0: Vec<f64>,
    pub sigma_s_tilde: Vec<f64>,
    pub sigma_a0: Vec<f64>,
    pub sigma_a_tilde: Vec<f64>,
}

impl OpticalField {
    /// Unperturbed constant coefficients.
    pub fn uniform(nx: usize, sigma_s: f64, sigma_a: f64) -> Self {
        Self {
            sigma_s0: vec![sigma_s; nx],
            sigma_s_tilde: vec![0.0; nx],
            sigma_a0: vec![sigma_a; nx],
            sigma_a_tilde: vec![0.0; nx],
        }
    }

    pub fn from_background(sigma_s0: Vec<f64>, sigma_a0: Vec<f64>) -> Self {
        let nx = sigma_s0.len();
        Self { sigma_s0, sigma_s_tilde: vec![0.0; nx], sigma_a0, sigma_a_tilde: vec![0.0; nx] }
    }

    pub fn nx(&self) -> usize {
        self.sigma_s0.len()
    }

    pub fn sigma_s(&self) -> Vec<f64> {
        self.sigma_s0.iter().zip(&self.sigma_s_tilde).map(|(a, b)| a + b).collect()
    }

    pub fn sigma_a(&self) -> Vec<f64> {
        self.sigma_a0.iter().zip(&self.sigma_a_tilde).map(|(a, b)| a + b).collect()
    }

    /// The background state alone.
    pub fn background(&self) -> Self {
        Self::from_background(self.sigma_s0.clone(), self.sigma_a0.clone())
    }

    /// Copy with the perturbation of the `variant` coefficient replaced.
    pub fn with_perturbation(&self, variant: Variant, tilde: &[f64]) -> Self {
        let mut out = self.clone();
        match variant {
            Variant::Absorption => out.sigma_a_tilde = tilde.to_vec(),
            Variant::Scattering => out.sigma_s_tilde = tilde.to_vec(),
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let nx = self.nx();
        if [self.sigma_s_tilde.len(), self.sigma_a0.len(), self.sigma_a_tilde.len()]
            .iter()
            .any(|&l| l != nx)
        {
            return invalid("optical field vectors have inconsistent lengths");
        }
        for i in 0..nx {
            let s = self.sigma_s0[i] + self.sigma_s_tilde[i];
            let a = self.sigma_a0[i] + self.sigma_a_tilde[i];
            if !(s >= SIGMA_MIN) || !s.is_finite() {
                return invalid(format!("sigma_s = {s} at cell {i} is below {SIGMA_MIN}"));
            }
            if !(a >= 0.0) || !a.is_finite() {
                return invalid(format!("sigma_a = {a} at cell {i} is negative"));
            }
            if self.sigma_s_tilde[i].abs() > 0.5 * self.sigma_s0[i].abs() + 1e-300
                || self.sigma_a_tilde[i].abs() > 0.5 * self.sigma_a0[i].abs() + 1e-300 && self.sigma_a_tilde[i] != 0.0
            {
                return invalid(format!("perturbation at cell {i} exceeds half of the background"));
            }
        }
        Ok(())
    }
}

/// Inflow data `phi(t_k, side, v_j)` on both boundaries, for every time level
/// `0..=nt`. Only incoming directions are stored meaningfully (`v > 0` on the
/// left, `v < 0` on the right); outgoing entries must be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryInflow {
    nv: usize,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl BoundaryInflow {
    pub fn zero(nt: usize, nv: usize) -> Self {
        Self { nv, left: vec![0.0; (nt + 1) * nv], right: vec![0.0; (nt + 1) * nv] }
    }

    /// General inflow from `phi(t, side, v)`, sampled on incoming nodes.
    pub fn from_fn(grid: &SlabGrid, q: &VelocityQuadrature, phi: impl Fn(f64, Side, f64) -> f64) -> Self {
        let nv = q.len();
        let mut b = Self::zero(grid.nt(), nv);
        for k in 0..=grid.nt() {
            let t = grid.t(k);
            for (j, &v) in q.nodes().iter().enumerate() {
                if v > 0.0 {
                    b.left[k * nv + j] = phi(t, Side::Left, v);
                } else {
                    b.right[k * nv + j] = phi(t, Side::Right, v);
                }
            }
        }
        b
    }

    /// Velocity-independent `phi(t)` on one side, zero on the other.
    pub fn one_sided(grid: &SlabGrid, q: &VelocityQuadrature, side: Side, phi: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, q, |t, s, _| if s == side { phi(t) } else { 0.0 })
    }

    /// Velocity-independent `phi(t)` on both sides.
    pub fn both(grid: &SlabGrid, q: &VelocityQuadrature, phi: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, q, |t, _, _| phi(t))
    }

    pub fn levels(&self) -> usize {
        self.left.len() / self.nv.max(1)
    }

    /// Value at level `k` for node `j` entering through `side`.
    pub fn value(&self, side: Side, k: usize, j: usize) -> f64 {
        match side {
            Side::Left => self.left[k * self.nv + j],
            Side::Right => self.right[k * self.nv + j],
        }
    }

    /// Sets the same value on every incoming node of `side` at level `k`.
    pub fn set_isotropic(&mut self, q: &VelocityQuadrature, side: Side, k: usize, value: f64) {
        for (j, &v) in q.nodes().iter().enumerate() {
            match side {
                Side::Left if v > 0.0 => self.left[k * self.nv + j] = value,
                Side::Right if v < 0.0 => self.right[k * self.nv + j] = value,
                _ => {}
            }
        }
    }

    fn check(&self, q: &VelocityQuadrature, levels: usize) -> Result<()> {
        if self.nv != q.len() || self.left.len() != levels * self.nv || self.right.len() != levels * self.nv {
            return invalid(format!("inflow must be sampled at {levels} time levels and {} nodes", q.len()));
        }
        for k in 0..levels {
            for (j, &v) in q.nodes().iter().enumerate() {
                let (l, r) = (self.left[k * self.nv + j], self.right[k * self.nv + j]);
                if !l.is_finite() || !r.is_finite() {
                    return invalid("non-finite inflow data");
                }
                if (v < 0.0 && l != 0.0) || (v > 0.0 && r != 0.0) {
                    return invalid("inflow is only defined for incoming directions");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TransportProblem {
    pub grid: SlabGrid,
    pub quad: VelocityQuadrature,
    pub kn: f64,
    pub optics: OpticalField,
    pub inflow: BoundaryInflow,
    /// Velocity-independent initial density per cell.
    pub initial: Vec<f64>,
    pub variant: Variant,
}

impl TransportProblem {
    /// Problem with zero initial data and the given inflow.
    pub fn new(
        grid: SlabGrid,
        quad: VelocityQuadrature,
        kn: f64,
        optics: OpticalField,
        inflow: BoundaryInflow,
        variant: Variant,
    ) -> Self {
        let nx = grid.nx();
        Self { grid, quad, kn, optics, inflow, initial: vec![0.0; nx], variant }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kn > 0.0 && self.kn <= 1.0) {
            return invalid(format!("Knudsen number must lie in (0, 1] (got {})", self.kn));
        }
        check_resolution(&self.grid, self.kn)?;
        if self.optics.nx() != self.grid.nx() || self.initial.len() != self.grid.nx() {
            return invalid("optics/initial data do not match the grid");
        }
        self.inflow.check(&self.quad, self.grid.nt() + 1)?;
        if self.initial.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite initial data");
        }
        self.optics.validate()
    }
}

/// Enforces `dx <= kn / 4`.
pub fn check_resolution(grid: &SlabGrid, kn: f64) -> Result<()> {
    let limit = kn / 4.0;
    if grid.dx() > limit * (1.0 + 1e-12) {
        return Err(Error::Resolution { dx: grid.dx(), limit, min_nx: (1.0 / limit).ceil() as usize });
    }
    Ok(())
}

/// Discrete angular flux `f[k][i][j]` for time levels `0..=nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularFlux {
    levels: usize,
    nx: usize,
    nv: usize,
    data: Vec<f64>,
}

impl AngularFlux {
    pub fn zeros(levels: usize, nx: usize, nv: usize) -> Self {
        Self { levels, nx, nv, data: vec![0.0; levels * nx * nv] }
    }

    /// Builds a flux from a closure `(k, i, j) -> value`.
    pub fn from_fn(levels: usize, nx: usize, nv: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(levels, nx, nv);
        for k in 0..levels {
            for i in 0..nx {
                for j in 0..nv {
                    out.data[(k * nx + i) * nv + j] = f(k, i, j);
                }
            }
        }
        out
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.levels, self.nx, self.nv)
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.nx + i) * self.nv + j]
    }

    /// Values of level `k`, cell-major.
    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.nx * self.nv;
        &self.data[k * n..(k + 1) * n]
    }

    fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.nx * self.nv;
        &mut self.data[k * n..(k + 1) * n]
    }

    /// Velocity slice at `(k, i)`.
    pub fn slice(&self, k: usize, i: usize) -> &[f64] {
        let s = (k * self.nx + i) * self.nv;
        &self.data[s..s + self.nv]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// `<f>` at every `(k, i)`, as `rho[k][i]`.
    pub fn density(&self, q: &VelocityQuadrature) -> Vec<Vec<f64>> {
        (0..self.levels).map(|k| (0..self.nx).map(|i| q.average(self.slice(k, i))).collect()).collect()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Outgoing current `m[k][side]` at both boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySignal {
    pub m: Vec<[f64; 2]>,
}

impl BoundarySignal {
    pub fn at(&self, k: usize, side: Side) -> f64 {
        self.m[k][side.index()]
    }
}

/// One backward-Euler step matrix `Kn/dt I + transport + collision + absorption`.
#[derive(Debug, Clone)]
pub struct StepOperator {
    nx: usize,
    nv: usize,
    dx: f64,
    kn_over_dt: f64,
    nodes: Vec<f64>,
    matrix: BandMatrix,
}

impl StepOperator {
    pub fn new(grid: &SlabGrid, quad: &VelocityQuadrature, kn: f64, optics: &OpticalField) -> Self {
        let (nx, nv) = (grid.nx(), quad.len());
        let dx = grid.dx();
        let kn_over_dt = kn / grid.dt();
        let (v, w) = (quad.nodes(), quad.weights());
        let sigma_s = optics.sigma_s();
        let sigma_a = optics.sigma_a();
        let mut m = BandMatrix::zeros(nx * nv, nv, nv);
        for i in 0..nx {
            let scat = sigma_s[i] / kn;
            let diag0 = kn_over_dt + scat + kn * sigma_a[i];
            for j in 0..nv {
                let row = i * nv + j;
                let speed = v[j].abs() / dx;
                m.add(row, row, diag0 + speed);
                for l in 0..nv {
                    m.add(row, i * nv + l, -scat * w[l]);
                }
                if v[j] > 0.0 && i > 0 {
                    m.add(row, (i - 1) * nv + j, -speed);
                } else if v[j] < 0.0 && i + 1 < nx {
                    m.add(row, (i + 1) * nv + j, -speed);
                }
            }
        }
        Self { nx, nv, dx, kn_over_dt, nodes: v.to_vec(), matrix: m }
    }

    /// `M f` for a single level (cell-major), with homogeneous inflow.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.matrix.matvec(f)
    }

    fn factor(mut self) -> Result<FactoredStep> {
        self.matrix.factor()?;
        Ok(FactoredStep { op: self })
    }
}

struct FactoredStep {
    op: StepOperator,
}

impl FactoredStep {
    fn step(&self, prev: &[f64], inflow: &BoundaryInflow, k: usize, out: &mut [f64]) {
        let StepOperator { nx, nv, dx, kn_over_dt, ref nodes, ref matrix } = self.op;
        for (o, p) in out.iter_mut().zip(prev) {
            *o = kn_over_dt * p;
        }
        for j in 0..nv {
            if nodes[j] > 0.0 {
                out[j] += nodes[j] / dx * inflow.value(Side::Left, k, j);
            } else {
                out[(nx - 1) * nv + j] += -nodes[j] / dx * inflow.value(Side::Right, k, j);
            }
        }
        matrix.solve_in_place(out);
    }
}

/// Solves the forward problem on all `nt + 1` time levels.
pub fn solve_forward(p: &TransportProblem) -> Result<AngularFlux> {
    p.validate()?;
    let (nx, nv, nt) = (p.grid.nx(), p.quad.len(), p.grid.nt());
    let stepper = StepOperator::new(&p.grid, &p.quad, p.kn, &p.optics).factor()?;
    let mut f = AngularFlux::zeros(nt + 1, nx, nv);
    {
        let lvl = f.level_mut(0);
        for i in 0..nx {
            for j in 0..nv {
                lvl[i * nv + j] = p.initial[i];
            }
        }
    }
    let mut buf = vec![0.0; nx * nv];
    for k in 1..=nt {
        stepper.step(f.level(k - 1), &p.inflow, k, &mut buf);
        if buf.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalBreakdown { step: k, reason: "non-finite values in the step solve".into() });
        }
        f.level_mut(k).copy_from_slice(&buf);
    }
    Ok(f)
}

/// Location of the unit point source of the adjoint problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdjointSource {
    /// Measurement time level. Levels outside `1..=nt` give `g = 0` on
    /// every level that pairs with the forward residue.
    pub tau: usize,
    pub side: Side,
}

/// Solves the discrete adjoint of [`solve_forward`] for the outflow functional
/// `m[tau][side]`.
///
/// The adjoint runs backward in time with terminal data zero and the boundary
/// delta entering along the directions that are outgoing at `side`. It is
/// computed by reversing time (`s = T - t`) and velocity (`v -> -v`) and
/// reusing the forward stepper with a hat-shaped inflow of width `2 dt` and unit
/// time integral (`1/dt` at the source level). The result is the exact
/// transpose of the forward scheme in the inner product
/// `sum_k dt sum_i dx sum_j w_j`, which makes the duality identity hold up to
/// the quadratic linearization remainder.
pub fn solve_adjoint(p: &TransportProblem, src: AdjointSource) -> Result<AngularFlux> {
    p.validate()?;
    let (nx, nv, nt) = (p.grid.nx(), p.quad.len(), p.grid.nt());
    if src.tau > nt {
        return Ok(AngularFlux::zeros(nt + 1, nx, nv));
    }
    // Reversed problem on levels 0..=nt+1; level s of the reversed run is
    // level nt + 1 - s of the adjoint.
    let dt = p.grid.dt();
    let rev_grid = SlabGrid::new(nx, nt + 1, p.grid.t_final() + dt)?;
    let mut inflow = BoundaryInflow::zero(nt + 1, nv);
    inflow.set_isotropic(&p.quad, src.side, nt + 1 - src.tau, 1.0 / dt);
    let rev = TransportProblem {
        grid: rev_grid,
        quad: p.quad.clone(),
        kn: p.kn,
        optics: p.optics.clone(),
        inflow,
        initial: vec![0.0; nx],
        variant: p.variant,
    };
    let r = solve_forward(&rev)?;
    let q = &p.quad;
    Ok(AngularFlux::from_fn(nt + 1, nx, nv, |l, i, j| r.get(nt + 1 - l, i, q.mirror(j))))
}

/// Outgoing current at both boundaries for every time level.
pub fn outflow(f: &AngularFlux, q: &VelocityQuadrature) -> Result<BoundarySignal> {
    if f.nv() != q.len() {
        return invalid("flux and quadrature sizes differ");
    }
    let (v, w) = (q.nodes(), q.weights());
    let last = f.nx() - 1;
    let m = (0..f.levels())
        .map(|k| {
            let mut left = 0.0;
            let mut right = 0.0;
            for j in 0..q.len() {
                if v[j] < 0.0 {
                    left += w[j] * v[j].abs() * f.get(k, 0, j);
                } else {
                    right += w[j] * v[j] * f.get(k, last, j);
                }
            }
            [left, right]
        })
        .collect();
    Ok(BoundarySignal { m })
}
