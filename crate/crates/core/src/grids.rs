//! Space-time grids and the normalized velocity quadrature for slab geometry.
//!
//! The velocity measure is a probability measure on `[-1, 1]`, so
//! `<f> = sum_j w_j f_j`, the collision operator is `L f = <f> - f` and
//! `<v^2> = 1/3`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform grid on `[0, 1] x [0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabGrid {
    nx: usize,
    nt: usize,
    t_final: f64,
}

impl SlabGrid {
    pub fn new(nx: usize, nt: usize, t_final: f64) -> Result<Self> {
        if nx < 4 || nt < 4 {
            return invalid(format!("grid needs nx >= 4 and nt >= 4 (got nx={nx}, nt={nt})"));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return invalid(format!("final time must be positive (got {t_final})"));
        }
        Ok(Self { nx, nt, t_final })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    /// Cell center of cell `i`.
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx()
    }

    /// Time of level `k`.
    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    /// Same space-time box with every step count multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.nx * factor, self.nt * factor, self.t_final)
    }
}

/// Discrete velocity set with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityQuadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl VelocityQuadrature {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the node `-v_j`. Nodes are symmetric, so this is `n - 1 - j`.
    pub fn mirror(&self, j: usize) -> usize {
        self.nodes.len() - 1 - j
    }

    /// Velocity average `<f>`.
    pub fn average(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }
}

/// Raw Gauss-Legendre rule on `(-1, 1)` with weights summing to 2.
///
/// Nodes are returned in increasing order. Newton iteration on `P_n` from
/// the Tricomi initial guess.
pub fn gauss_legendre_raw(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre velocity quadrature normalized to a probability measure.
///
/// `n` must be even (no node at `v = 0`) and lie in `2..=128`.
pub fn gauss_legendre(n: usize) -> Result<VelocityQuadrature> {
    if n % 2 != 0 || !(2..=128).contains(&n) {
        return invalid(format!("velocity quadrature order must be even and in 2..=128 (got {n})"));
    }
    let (nodes, raw) = gauss_legendre_raw(n);
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    // Enforce exact mirror symmetry of the weights.
    for j in 0..n / 2 {
        let w = 0.5 * (weights[j] + weights[n - 1 - j]);
        weights[j] = w;
        weights[n - 1 - j] = w;
    }
    Ok(VelocityQuadrature { nodes, weights })
}

/// Applies `L f = <f> - f` to one velocity slice.
pub fn collision_apply(f_slice: &[f64], q: &VelocityQuadrature) -> Result<Vec<f64>> {
    if f_slice.len() != q.len() {
        return invalid(format!(
            "velocity slice has {} values but the quadrature has {} nodes",
            f_slice.len(),
            q.len()
        ));
    }
    let mean = q.average(f_slice);
    Ok(f_slice.iter().map(|f| mean - f).collect())
}
