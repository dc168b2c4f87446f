//! The forward-peaked inverse problem in moment space: real spherical
//! harmonics on the sphere, the linear system for `xi` built from
//! manufactured kernels `gamma(v, v')`, the rescaled-kernel reconstruction
//! and its distinguishability, and the Hermite view of full recovery.

use std::f64::consts::{PI, SQRT_2};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grids::gauss_legendre_raw;
use crate::inversion::{loglog_slope, uniform_noise};
use crate::linalg::jacobi_svd;
use crate::peaked::{factorial, legendre_derivative_at_one, legendre_values, normalize_kernel, xi_moments, Profile};
use crate::quad::integrate_breaks;

pub const MAX_BAND: usize = 32;
/// Noise redraws behind every error bar.
pub const NOISE_DRAWS: usize = 20;
/// Paths of [`legendre_projection`] may differ by at most this much.
pub const PATH_TOL: f64 = 1e-6;
const RANK_TOL: f64 = 1e-12;

/// Number of real harmonics with degree `<= band`.
pub fn harmonic_count(band: usize) -> usize {
    (band + 1) * (band + 1)
}

/// Position of `Y_{n,m}` in a coefficient vector.
pub fn harmonic_index(n: usize, m: i64) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= n);
    ((n * n + n) as i64 + m) as usize
}

/// Real orthonormal spherical harmonics `Y_{n,m}(v)` for all `n <= band`,
/// ordered by [`harmonic_index`]. `m > 0` carries `cos(m psi)`, `m < 0`
/// carries `sin(|m| psi)`.
pub fn real_harmonics(band: usize, v: [f64; 3]) -> Vec<f64> {
    let z = v[2].clamp(-1.0, 1.0);
    let s = (1.0 - z * z).max(0.0).sqrt();
    let psi = v[1].atan2(v[0]);
    let mut y = vec![0.0; harmonic_count(band)];
    // Normalized associated Legendre functions, built column by column in m.
    for m in 0..=band {
        let mf = m as f64;
        let mut pmm = (1.0 / (4.0 * PI)).sqrt();
        for k in 1..=m {
            let kf = k as f64;
            pmm *= -((2.0 * kf + 1.0) / (2.0 * kf)).sqrt() * s;
        }
        let mut prev = 0.0;
        let mut cur = pmm;
        for n in m..=band {
            if n > m {
                let nf = n as f64;
                let a = ((4.0 * nf * nf - 1.0) / (nf * nf - mf * mf)).sqrt();
                let b = (((nf - 1.0).powi(2) - mf * mf) / (4.0 * (nf - 1.0).powi(2) - 1.0)).sqrt();
                let next = a * (z * cur - b * prev);
                prev = cur;
                cur = next;
            }
            let base = n * n + n;
            if m == 0 {
                y[base] = cur;
            } else {
                y[base + m] = SQRT_2 * cur * (mf * psi).cos();
                y[base - m] = SQRT_2 * cur * (mf * psi).sin();
            }
        }
    }
    y
}

/// Product rule on the unit sphere: Gauss-Legendre in `v_3` times uniform
/// azimuth. Exact for products of two harmonics of degree `<= band`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereQuadrature {
    band: usize,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl SphereQuadrature {
    pub fn band(&self) -> usize {
        self.band
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 3]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(*p)).sum()
    }

    /// Harmonic table `Y[q][idx]` at the nodes.
    fn harmonics(&self, band: usize) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| real_harmonics(band, *p)).collect()
    }
}

pub fn sphere_quadrature(band: usize) -> Result<SphereQuadrature> {
    if band > MAX_BAND {
        return invalid(format!("band {band} exceeds {MAX_BAND}"));
    }
    let (z, wz) = gauss_legendre_raw(band + 1);
    let na = 2 * band + 2;
    let wa = 2.0 * PI / na as f64;
    let mut points = Vec::with_capacity(z.len() * na);
    let mut weights = Vec::with_capacity(z.len() * na);
    for (zi, wi) in z.iter().zip(&wz) {
        let s = (1.0 - zi * zi).sqrt();
        for k in 0..na {
            let psi = 2.0 * PI * (k as f64 + 0.5) / na as f64;
            points.push([s * psi.cos(), s * psi.sin(), *zi]);
            weights.push(wi * wa);
        }
    }
    Ok(SphereQuadrature { band, points, weights })
}

/// Finite real-harmonic expansion `sum c_{n,m} Y_{n,m}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicExpansion {
    pub band: usize,
    pub coeffs: Vec<f64>,
}

impl HarmonicExpansion {
    pub fn new(band: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != harmonic_count(band) {
            return invalid(format!("band {band} needs {} coefficients (got {})", harmonic_count(band), coeffs.len()));
        }
        Ok(Self { band, coeffs })
    }

    pub fn single(band: usize, n: usize, m: i64) -> Result<Self> {
        if n > band || m.unsigned_abs() as usize > n {
            return invalid(format!("Y_({n},{m}) is outside band {band}"));
        }
        let mut c = vec![0.0; harmonic_count(band)];
        c[harmonic_index(n, m)] = 1.0;
        Ok(Self { band, coeffs: c })
    }

    fn eval_with(&self, y: &[f64]) -> f64 {
        self.coeffs.iter().zip(y).map(|(c, v)| c * v).sum()
    }

    pub fn eval(&self, v: [f64; 3]) -> f64 {
        self.eval_with(&real_harmonics(self.band, v))
    }
}

/// Analytic stand-in for the transport kernel,
/// `gamma(v, v') = sum_r G_r(v) F_r(v') - d(v)`.
///
/// The subtracted term mirrors `g(v) f_0(v)` integrated over space and time,
/// which does not depend on `v'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedGamma {
    pub band: usize,
    pub terms: Vec<(HarmonicExpansion, HarmonicExpansion)>,
    pub diagonal: Option<HarmonicExpansion>,
}

impl ManufacturedGamma {
    pub fn new(band: usize, terms: Vec<(HarmonicExpansion, HarmonicExpansion)>, diagonal: Option<HarmonicExpansion>) -> Result<Self> {
        let over = terms.iter().flat_map(|(g, f)| [g.band, f.band]).chain(diagonal.iter().map(|d| d.band)).any(|b| b > band);
        if over {
            return invalid(format!("expansion exceeds band {band}"));
        }
        Ok(Self { band, terms, diagonal })
    }

    /// `Y_{n,m}(v) Y_{n',m'}(v')`.
    pub fn product(band: usize, left: (usize, i64), right: (usize, i64)) -> Result<Self> {
        let g = HarmonicExpansion::single(band, left.0, left.1)?;
        let f = HarmonicExpansion::single(band, right.0, right.1)?;
        Self::new(band, vec![(g, f)], None)
    }

    pub fn zero(band: usize) -> Self {
        Self { band, terms: Vec::new(), diagonal: None }
    }

    /// Random kernel with `rank` separable terms and a diagonal part; the
    /// coefficient of degree `n` is uniform on `[-2^-n, 2^-n]`, mimicking the
    /// angular smoothness of transport kernels.
    pub fn random(band: usize, rank: usize, rng: &mut impl Rng) -> Self {
        let draw = |rng: &mut dyn rand::RngCore| {
            let mut c = vec![0.0; harmonic_count(band)];
            for n in 0..=band {
                let amp = 0.5f64.powi(n as i32);
                for m in -(n as i64)..=(n as i64) {
                    c[harmonic_index(n, m)] = rng.gen_range(-amp..=amp);
                }
            }
            HarmonicExpansion { band, coeffs: c }
        };
        let terms = (0..rank).map(|_| (draw(rng), draw(rng))).collect();
        let diagonal = Some(draw(rng));
        Self { band, terms, diagonal }
    }

    pub fn eval(&self, v: [f64; 3], vp: [f64; 3]) -> f64 {
        let y = real_harmonics(self.band, v);
        let yp = real_harmonics(self.band, vp);
        let sep: f64 = self.terms.iter().map(|(g, f)| g.eval_with(&y) * f.eval_with(&yp)).sum();
        sep - self.diagonal.as_ref().map_or(0.0, |d| d.eval_with(&y))
    }
}

/// `count` kernels from [`ManufacturedGamma::random`] with a seeded stream.
pub fn random_suite(band: usize, rank: usize, count: usize, seed: u64) -> Vec<ManufacturedGamma> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| ManufacturedGamma::random(band, rank, &mut rng)).collect()
}

/// `int P_n(v . v') gamma(v, v') dv dv'` by the double quadrature.
pub fn projection_direct(gamma: &ManufacturedGamma, n: usize, quad: &SphereQuadrature) -> f64 {
    let ys = quad.harmonics(gamma.band);
    let g: Vec<Vec<f64>> = gamma.terms.iter().map(|(g, _)| ys.iter().map(|y| g.eval_with(y)).collect()).collect();
    let f: Vec<Vec<f64>> = gamma.terms.iter().map(|(_, f)| ys.iter().map(|y| f.eval_with(y)).collect()).collect();
    let d: Vec<f64> = ys.iter().map(|y| gamma.diagonal.as_ref().map_or(0.0, |d| d.eval_with(y))).collect();
    let pts = quad.points();
    let w = quad.weights();
    let mut total = 0.0;
    for a in 0..pts.len() {
        let mut row = 0.0;
        for b in 0..pts.len() {
            let mu = pts[a][0] * pts[b][0] + pts[a][1] * pts[b][1] + pts[a][2] * pts[b][2];
            let pn = legendre_values(n, mu.clamp(-1.0, 1.0))[n];
            let sep: f64 = g.iter().zip(&f).map(|(gr, fr)| gr[a] * fr[b]).sum();
            row += w[b] * pn * (sep - d[a]);
        }
        total += w[a] * row;
    }
    total
}

/// Same projection through the addition formula, with harmonic coefficients
/// taken by quadrature: `4 pi/(2n+1) sum_m g_{n,m} f_{n,m} - 4 pi delta_{n0} int d`.
pub fn projection_addition(gamma: &ManufacturedGamma, n: usize, quad: &SphereQuadrature) -> f64 {
    let ys = quad.harmonics(gamma.band);
    let coef = |e: &HarmonicExpansion, idx: usize| -> f64 { ys.iter().zip(quad.weights()).map(|(y, w)| w * e.eval_with(y) * y[idx]).sum() };
    let mut sum = 0.0;
    for m in -(n as i64)..=(n as i64) {
        let idx = harmonic_index(n, m);
        for (g, f) in &gamma.terms {
            sum += coef(g, idx) * coef(f, idx);
        }
    }
    let mut out = 4.0 * PI / (2 * n + 1) as f64 * sum;
    if n == 0 {
        if let Some(d) = &gamma.diagonal {
            out -= 4.0 * PI * quad.integrate(|v| d.eval(v));
        }
    }
    out
}

/// Legendre projection of `gamma`; returns the addition-formula value after
/// checking it against the direct quadrature.
pub fn legendre_projection(gamma: &ManufacturedGamma, n: usize, quad: &SphereQuadrature) -> Result<f64> {
    if n > gamma.band {
        return invalid(format!("degree {n} exceeds band {}", gamma.band));
    }
    if quad.band() < gamma.band {
        return invalid(format!("quadrature band {} cannot resolve kernel band {}", quad.band(), gamma.band));
    }
    let a = projection_direct(gamma, n, quad);
    let b = projection_addition(gamma, n, quad);
    if (a - b).abs() > PATH_TOL * (1.0 + b.abs()) {
        return Err(Error::InternalConsistency(format!("projection paths disagree at n = {n}: direct {a}, addition {b}")));
    }
    Ok(b)
}

/// `a_j = (1/j!) sum_{n <= band} P_n^{(j)}(1) int P_n gamma` for `j = 0..=jmax`.
pub fn xi_row(gamma: &ManufacturedGamma, jmax: usize, quad: &SphereQuadrature) -> Result<Vec<f64>> {
    let proj = (0..=gamma.band).map(|n| legendre_projection(gamma, n, quad)).collect::<Result<Vec<_>>>()?;
    Ok((0..=jmax)
        .map(|j| proj.iter().enumerate().map(|(n, p)| legendre_derivative_at_one(n, j) * p).sum::<f64>() / factorial(j))
        .collect())
}

/// `A xi = b` with the known `xi_0` column split off.
#[derive(Debug, Clone, PartialEq)]
pub struct XiSystem {
    /// Coefficients of `xi_0`, one per experiment.
    pub a0: Array1<f64>,
    /// Columns `j = 1..=J`.
    pub a: Array2<f64>,
}

impl XiSystem {
    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn unknowns(&self) -> usize {
        self.a.ncols()
    }

    /// Exact data for moments `xi[0..=J]`.
    pub fn forward(&self, xi: &[f64]) -> Result<Array1<f64>> {
        if xi.len() != self.unknowns() + 1 {
            return invalid(format!("expected {} moments (got {})", self.unknowns() + 1, xi.len()));
        }
        Ok(&self.a0 * xi[0] + self.a.dot(&Array1::from(xi[1..].to_vec())))
    }

    /// Moves the `xi_0` contribution to the data side.
    pub fn reduce(&self, b: &Array1<f64>, xi0: f64) -> Array1<f64> {
        b - &(&self.a0 * xi0)
    }
}

pub fn assemble_xi_system(experiments: &[ManufacturedGamma], jmax: usize, quad: &SphereQuadrature) -> Result<XiSystem> {
    if experiments.is_empty() {
        return invalid("no experiments");
    }
    if jmax == 0 {
        return invalid("need at least one unknown moment");
    }
    if let Some(g) = experiments.iter().find(|g| g.band < jmax) {
        return invalid(format!("J = {jmax} exceeds kernel band {}", g.band));
    }
    let rows = experiments.par_iter().map(|g| xi_row(g, jmax, quad)).collect::<Result<Vec<_>>>()?;
    let a0 = Array1::from_iter(rows.iter().map(|r| r[0]));
    let a = Array2::from_shape_fn((rows.len(), jmax), |(i, j)| rows[i][j + 1]);
    Ok(XiSystem { a0, a })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiEstimate {
    /// Mean over the noise draws, components `j = 1..=J`.
    pub xi: Vec<f64>,
    /// Sample standard deviation over the draws.
    pub error_bars: Vec<f64>,
    pub draws: Vec<Vec<f64>>,
}

/// Least-squares pseudo-inverse applied to every noise draw.
fn least_squares(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (m, n) = a.dim();
    if m < n {
        return invalid(format!("{m} experiments cannot determine {n} moments"));
    }
    let svd = jacobi_svd(a)?;
    let smax = svd.s[0];
    if svd.s[n - 1] <= RANK_TOL * smax {
        let v = svd.v.column(n - 1);
        let col = (0..n).max_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs())).expect("n > 0");
        return invalid(format!("moment matrix is rank deficient in column xi_{}", col + 1));
    }
    let inv_s = svd.s.mapv(|s| 1.0 / s);
    Ok(svd.v.dot(&Array2::from_diag(&inv_s)).dot(&svd.u.t()))
}

/// Solves the reduced system under `NOISE_DRAWS` uniform perturbations of
/// size `delta` (draw `d` uses `seed + d`).
pub fn solve_xi(a: &Array2<f64>, b: &Array1<f64>, delta: f64, seed: u64) -> Result<XiEstimate> {
    if !(delta >= 0.0) {
        return invalid("delta must be nonnegative");
    }
    if b.len() != a.nrows() {
        return invalid("data length does not match the experiment count");
    }
    let pinv = least_squares(a)?;
    let draws: Vec<Vec<f64>> = (0..NOISE_DRAWS as u64)
        .map(|d| {
            let noisy = b + &Array1::from(uniform_noise(b.len(), delta, seed + d));
            pinv.dot(&noisy).to_vec()
        })
        .collect();
    let n = a.ncols();
    let k = draws.len() as f64;
    let xi: Vec<f64> = (0..n).map(|j| draws.iter().map(|x| x[j]).sum::<f64>() / k).collect();
    let error_bars = (0..n).map(|j| (draws.iter().map(|x| (x[j] - xi[j]).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()).collect();
    Ok(XiEstimate { xi, error_bars, draws })
}

/// `h_k(mu) = sum_{n <= N} (2n+1)/(4 pi) P_n(mu) (-1)^k P_n^{(k)}(1) / k!`.
///
/// The alternating sign comes from expanding `P_n(1 - eps t)` about 1.
pub fn h_values(k: usize, truncation: usize, mu: f64) -> f64 {
    let p = legendre_values(truncation, mu);
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let s: f64 = (k..=truncation).map(|n| (2 * n + 1) as f64 * p[n] * legendre_derivative_at_one(n, k)).sum();
    sign * s / (4.0 * PI * factorial(k))
}

pub const MAX_RECONSTRUCT_ORDER: usize = 6;

/// `eps sum_k h_k^{(N)}(mu) xi_k` at the given nodes.
pub fn reconstruct_rescaled_kernel(xi: &[f64], eps: f64, truncation: usize, mu: &[f64]) -> Result<Vec<f64>> {
    if xi.is_empty() || xi.len() > MAX_RECONSTRUCT_ORDER + 1 {
        return invalid(format!("reconstruction uses 1..={} moments (got {})", MAX_RECONSTRUCT_ORDER + 1, xi.len()));
    }
    Ok(mu
        .iter()
        .map(|&m| eps * xi.iter().enumerate().map(|(k, x)| h_values(k, truncation, m) * x).sum::<f64>())
        .collect())
}

/// Parameters of the `kappa_eps` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KappaEpsilonConfig {
    pub profile: Profile,
    pub eps: Vec<f64>,
    pub delta: f64,
    /// Legendre truncation of the reconstruction.
    pub truncation: usize,
    /// Band of the manufactured kernels, which is also the number of unknown moments.
    pub band: usize,
    pub experiments: usize,
    pub rank: usize,
    /// Sup norms are taken on this many uniform nodes in `mu`.
    pub mu_nodes: usize,
    pub seed: u64,
}

impl Default for KappaEpsilonConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Exponential,
            eps: vec![0.2, 0.1, 0.05],
            delta: 1e-3,
            truncation: 3,
            band: 3,
            experiments: 12,
            rank: 2,
            mu_nodes: 2001,
            seed: 20240601,
        }
    }
}

impl KappaEpsilonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() || self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return invalid("eps list must be nonempty and strictly decreasing");
        }
        if self.band == 0 || self.band > MAX_RECONSTRUCT_ORDER {
            return invalid(format!("band must lie in 1..={MAX_RECONSTRUCT_ORDER}"));
        }
        if self.truncation < self.band {
            return invalid("truncation must be at least the band");
        }
        if self.experiments < self.band {
            return invalid("need at least as many experiments as unknown moments");
        }
        if self.mu_nodes < 2 {
            return invalid("need at least two mu nodes");
        }
        if !(self.delta >= 0.0) {
            return invalid("delta must be nonnegative");
        }
        Ok(())
    }

    pub fn suite(&self) -> Vec<ManufacturedGamma> {
        random_suite(self.band, self.rank, self.experiments, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaEpsilonRow {
    pub eps: f64,
    pub xi1: f64,
    /// Worst `|xi1_hat - xi1|` over the noise draws.
    pub xi1_error: f64,
    /// Worst relative sup-norm error of the rescaled kernel over the draws.
    pub kappa: f64,
    pub kappa_over_delta_eps: f64,
    /// Sup norm of the reconstructed true kernel.
    pub true_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaEpsilonTable {
    pub rows: Vec<KappaEpsilonRow>,
    pub slope: Option<f64>,
}

pub fn kappa_epsilon(cfg: &KappaEpsilonConfig) -> Result<KappaEpsilonTable> {
    cfg.validate()?;
    let quad = sphere_quadrature(cfg.band)?;
    let sys = assemble_xi_system(&cfg.suite(), cfg.band, &quad)?;
    let mu: Vec<f64> = (0..cfg.mu_nodes).map(|i| -1.0 + 2.0 * i as f64 / (cfg.mu_nodes - 1) as f64).collect();
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let rows = cfg
        .eps
        .par_iter()
        .map(|&eps| {
            let kernel = normalize_kernel(cfg.profile, eps)?;
            let xi = xi_moments(&kernel, cfg.band)?.xi;
            let b = sys.forward(&xi)?;
            let est = solve_xi(&sys.a, &sys.reduce(&b, xi[0]), cfg.delta, cfg.seed)?;
            let truth = reconstruct_rescaled_kernel(&xi, eps, cfg.truncation, &mu)?;
            let true_sup = sup(&truth);
            let mut kappa = 0.0f64;
            let mut xi1_error = 0.0f64;
            for d in &est.draws {
                let mut hat = vec![xi[0]];
                hat.extend_from_slice(d);
                let rec = reconstruct_rescaled_kernel(&hat, eps, cfg.truncation, &mu)?;
                let diff: Vec<f64> = rec.iter().zip(&truth).map(|(a, b)| a - b).collect();
                kappa = kappa.max(sup(&diff) / true_sup);
                xi1_error = xi1_error.max((d[0] - xi[1]).abs());
            }
            Ok(KappaEpsilonRow { eps, xi1: xi[1], xi1_error, kappa, kappa_over_delta_eps: kappa / (cfg.delta * eps), true_sup })
        })
        .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let k: Vec<f64> = rows.iter().map(|r| r.kappa).collect();
    let slope = if k.iter().all(|v| *v > 0.0) { loglog_slope(&eps, &k) } else { None };
    Ok(KappaEpsilonTable { rows, slope })
}

pub const MAX_HERMITE: usize = 40;

/// Probabilists' Hermite polynomials `p_0..=p_nmax` at `x`.
pub fn hermite_all(nmax: usize, x: f64) -> Vec<f64> {
    let mut p = vec![1.0];
    if nmax >= 1 {
        p.push(x);
    }
    for n in 1..nmax {
        p.push(x * p[n] - n as f64 * p[n - 1]);
    }
    p
}

/// `p_n` at every node.
pub fn hermite_basis(n: usize, x: &[f64]) -> Result<Vec<f64>> {
    if n > MAX_HERMITE {
        return invalid(format!("Hermite degree {n} exceeds {MAX_HERMITE}"));
    }
    Ok(x.iter().map(|&v| hermite_all(n, v)[n]).collect())
}

/// Coefficients `c_j` with `v^m = sum_j c_j p_j(v)`.
pub fn monomial_in_hermite(m: usize) -> Vec<f64> {
    let mut c = vec![0.0; m + 1];
    for k in 0..=m / 2 {
        c[m - 2 * k] = factorial(m) / (2f64.powi(k as i32) * factorial(k) * factorial(m - 2 * k));
    }
    c
}

/// Integration domain for the Hermite Gram entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HermiteDomain {
    /// `[0, upper]`, the support of the moment integrals.
    HalfLine { upper: f64 },
    /// `(-inf, inf)`, where the weight makes the polynomials orthogonal.
    FullLine,
}

/// `xi = C sigma_hat` for the Hermite coefficients of the profile.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteMap {
    pub eps: f64,
    /// Rows `m = 0..=M`, columns `n = 0..=N_h`.
    pub c: Array2<f64>,
    /// `gram[a][n] = int p_a p_n exp(-v^2/2)`.
    gram: Vec<Vec<f64>>,
}

impl HermiteMap {
    /// `D_{n,m,k} = int p_{m-2k} p_n exp(-v^2/2)`.
    pub fn d(&self, n: usize, m: usize, k: usize) -> f64 {
        self.gram[m - 2 * k][n]
    }

    pub fn row_norm(&self, m: usize) -> f64 {
        self.c.row(m).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub const MAX_HERMITE_MAP: usize = 20;

pub fn hermite_map(eps: f64, m_max: usize, n_max: usize) -> Result<HermiteMap> {
    hermite_map_on(HermiteDomain::HalfLine { upper: 2.0 / eps }, eps, m_max, n_max)
}

pub fn hermite_map_on(domain: HermiteDomain, eps: f64, m_max: usize, n_max: usize) -> Result<HermiteMap> {
    if m_max > MAX_HERMITE_MAP || n_max > MAX_HERMITE_MAP {
        return invalid(format!("Hermite map sizes must not exceed {MAX_HERMITE_MAP}"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return invalid("eps must lie in (0, 1)");
    }
    // The weight is below 1e-300 beyond |v| = 38; polynomial growth up to
    // degree 40 does not change that materially.
    let reach = 60.0;
    let breaks: Vec<f64> = match domain {
        HermiteDomain::HalfLine { upper } => {
            let top = upper.min(reach);
            let mut b: Vec<f64> = (0..=(top.ceil() as usize)).map(|v| (v as f64).min(top)).collect();
            b.dedup();
            b
        }
        HermiteDomain::FullLine => (-(reach as i64)..=(reach as i64)).map(|v| v as f64).collect(),
    };
    let deg = m_max.max(n_max);
    let mut gram = vec![vec![0.0; n_max + 1]; m_max + 1];
    for a in 0..=m_max {
        for n in 0..=n_max {
            let f = |v: f64| {
                let p = hermite_all(deg, v);
                p[a] * p[n] * (-0.5 * v * v).exp()
            };
            gram[a][n] = integrate_breaks(f, &breaks, 1e-13, 1e-13)?.value;
        }
    }
    let c = Array2::from_shape_fn((m_max + 1, n_max + 1), |(m, n)| {
        let s: f64 = (0..=m / 2).map(|k| gram[m - 2 * k][n] / (2f64.powi(k as i32) * factorial(k) * factorial(m - 2 * k))).sum();
        eps.powi(m as i32 - 1) * 2.0 * PI * factorial(m) / factorial(n) * s
    });
    Ok(HermiteMap { eps, c, gram })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HermiteCondRow {
    pub eps: f64,
    /// `||C_{m,.}||_2` for `m = 0..=M`.
    pub row_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HermiteCondTable {
    pub rows: Vec<HermiteCondRow>,
    /// Log-log slope of each row norm against `eps`.
    pub slopes: Vec<Option<f64>>,
}

pub fn hermite_conditioning(eps_list: &[f64], m_max: usize, n_max: usize) -> Result<HermiteCondTable> {
    let rows = eps_list
        .par_iter()
        .map(|&eps| {
            let map = hermite_map(eps, m_max, n_max)?;
            Ok(HermiteCondRow { eps, row_norms: (0..=m_max).map(|m| map.row_norm(m)).collect() })
        })
        .collect::<Result<Vec<_>>>()?;
    let slopes = (0..=m_max)
        .map(|m| {
            let y: Vec<f64> = rows.iter().map(|r| r.row_norms[m]).collect();
            loglog_slope(eps_list, &y)
        })
        .collect();
    Ok(HermiteCondTable { rows, slopes })
}

/// `n_0 = floor(log_eps delta) + 1`.
pub fn recoverable_terms(delta: f64, eps: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0 && eps > 0.0 && eps < 1.0) {
        return invalid("delta and eps must lie in (0, 1)");
    }
    let r = delta.ln() / eps.ln();
    // Exact powers such as 1e-6 = (1e-2)^3 should not lose a term to rounding.
    let r = if (r - r.round()).abs() < 1e-9 { r.round() } else { r.floor() };
    Ok(r as usize + 1)
}

/// Predicted error `(ln eps / ln delta)^k` of full recovery.
pub fn full_recovery_error(k: u32, delta: f64, eps: f64) -> Result<f64> {
    if k == 0 {
        return invalid("smoothness k must be at least 1");
    }
    if !(delta > 0.0 && delta < 1.0 && eps > 0.0 && eps < 1.0) {
        return invalid("delta and eps must lie in (0, 1)");
    }
    Ok((eps.ln() / delta.ln()).powi(k as i32))
}

/// Worst error over noise draws when Hermite coefficients `1/(n+1)^2` are
/// recovered from `delta`-perturbed moments through the square map `C`.
pub fn hermite_coefficient_error(eps: f64, delta: f64, m_max: usize, seed: u64) -> Result<f64> {
    let map = hermite_map(eps, m_max, m_max)?;
    let truth = Array1::from_iter((0..=m_max).map(|n| 1.0 / ((n + 1) * (n + 1)) as f64));
    let xi = map.c.dot(&truth);
    let pinv = least_squares(&map.c)?;
    let mut worst = 0.0f64;
    for d in 0..NOISE_DRAWS as u64 {
        let noisy = &xi + &Array1::from(uniform_noise(xi.len(), delta, seed + d));
        let est = pinv.dot(&noisy);
        worst = worst.max((&est - &truth).iter().fold(0.0, |a, v| a.max(v.abs())));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(rng: &mut impl Rng) -> [f64; 3] {
        let z: f64 = rng.gen_range(-1.0..=1.0);
        let psi: f64 = rng.gen_range(0.0..2.0 * PI);
        let s = (1.0 - z * z).sqrt();
        [s * psi.cos(), s * psi.sin(), z]
    }

    #[test]
    fn quadrature_mass_and_orthonormality() {
        let q = sphere_quadrature(6).unwrap();
        assert!((q.weights().iter().sum::<f64>() - 4.0 * PI).abs() < 1e-12);
        let ys = q.harmonics(6);
        let nh = harmonic_count(6);
        for a in 0..nh {
            for b in 0..nh {
                let ip: f64 = ys.iter().zip(q.weights()).map(|(y, w)| w * y[a] * y[b]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((ip - expect).abs() < 1e-12, "{a} {b}: {ip}");
            }
            if a > 0 {
                let m: f64 = ys.iter().zip(q.weights()).map(|(y, w)| w * y[a]).sum();
                assert!(m.abs() < 1e-12);
            }
        }
        let q2 = sphere_quadrature(2).unwrap();
        let y21 = |v: [f64; 3]| real_harmonics(3, v)[harmonic_index(2, 1)];
        let y31 = |v: [f64; 3]| real_harmonics(3, v)[harmonic_index(3, 1)];
        assert!((q2.integrate(|v| y21(v) * y21(v)) - 1.0).abs() < 1e-10);
        assert!(q2.integrate(|v| y31(v) * y21(v)).abs() < 1e-12);
        assert!(sphere_quadrature(33).is_err());
    }

    #[test]
    fn harmonics_closed_forms_and_addition_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c1 = (3.0 / (4.0 * PI)).sqrt();
        for _ in 0..20 {
            let v = unit(&mut rng);
            let y = real_harmonics(2, v);
            assert!((y[0] - (1.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);
            assert!((y[harmonic_index(1, 0)] - c1 * v[2]).abs() < 1e-14);
            assert!((y[harmonic_index(1, 1)].abs() - c1 * v[0].abs()).abs() < 1e-14);
            assert!((y[harmonic_index(1, -1)].abs() - c1 * v[1].abs()).abs() < 1e-14);
            let vp = unit(&mut rng);
            let a = real_harmonics(8, v);
            let b = real_harmonics(8, vp);
            let mu = v.iter().zip(&vp).map(|(p, q)| p * q).sum::<f64>();
            let p = legendre_values(8, mu);
            for n in 0..=8 {
                let s: f64 = (-(n as i64)..=n as i64).map(|m| a[harmonic_index(n, m)] * b[harmonic_index(n, m)]).sum();
                assert!((s - (2 * n + 1) as f64 / (4.0 * PI) * p[n]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let q = sphere_quadrature(3).unwrap();
        let g = ManufacturedGamma::product(3, (1, 0), (1, 0)).unwrap();
        for n in 0..=3 {
            let p = legendre_projection(&g, n, &q).unwrap();
            let expect = if n == 1 { 4.0 * PI / 3.0 } else { 0.0 };
            assert!((p - expect).abs() < 1e-12, "n={n}: {p}");
        }
        let d = HarmonicExpansion::new(1, vec![0.7, 0.1, -0.3, 0.2]).unwrap();
        let diag = ManufacturedGamma::new(3, vec![], Some(d)).unwrap();
        for n in 1..=3 {
            assert!(legendre_projection(&diag, n, &q).unwrap().abs() < 1e-12);
        }
        let p0 = legendre_projection(&diag, 0, &q).unwrap();
        assert!((p0 + 4.0 * PI * 0.7 * (4.0 * PI).sqrt()).abs() < 1e-11);
        assert!(legendre_projection(&g, 4, &q).is_err());
        assert!(legendre_projection(&g, 1, &sphere_quadrature(2).unwrap()).is_err());
    }

    #[test]
    fn dual_paths_agree_on_random_kernels() {
        let q = sphere_quadrature(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let g = ManufacturedGamma::random(3, 2, &mut rng);
            for n in 0..=3 {
                let a = projection_direct(&g, n, &q);
                let b = projection_addition(&g, n, &q);
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn golden_row_and_zero_row() {
        let q = sphere_quadrature(3).unwrap();
        let g = ManufacturedGamma::product(3, (1, 0), (1, 0)).unwrap();
        let row = xi_row(&g, 3, &q).unwrap();
        let c = 4.0 * PI / 3.0;
        for (r, e) in row.iter().zip([c, c, 0.0, 0.0]) {
            assert!((r - e).abs() < 1e-10);
        }
        let z = xi_row(&ManufacturedGamma::zero(3), 3, &q).unwrap();
        assert!(z.iter().all(|v| v.abs() == 0.0));
    }

    #[test]
    fn rows_match_brute_force_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let suite: Vec<_> = (0..4).map(|_| ManufacturedGamma::random(8, 2, &mut rng)).collect();
        let q = sphere_quadrature(8).unwrap();
        let fine = sphere_quadrature(12).unwrap();
        let sys = assemble_xi_system(&suite, 8, &q).unwrap();
        for (i, g) in suite.iter().enumerate() {
            let proj: Vec<f64> = (0..=8).map(|n| projection_direct(g, n, &fine)).collect();
            for j in 0..=8 {
                let mut brute = 0.0;
                for (n, p) in proj.iter().enumerate() {
                    brute += legendre_derivative_at_one(n, j) * p;
                }
                brute /= factorial(j);
                let got = if j == 0 { sys.a0[i] } else { sys.a[[i, j - 1]] };
                assert!((got - brute).abs() < 1e-9 * (1.0 + brute.abs()), "row {i} col {j}: {got} vs {brute}");
            }
        }
    }

    fn standard_system() -> (XiSystem, Vec<f64>) {
        let cfg = KappaEpsilonConfig::default();
        let q = sphere_quadrature(cfg.band).unwrap();
        let sys = assemble_xi_system(&cfg.suite(), cfg.band, &q).unwrap();
        let k = normalize_kernel(Profile::Exponential, 0.1).unwrap();
        (sys, xi_moments(&k, cfg.band).unwrap().xi)
    }

    #[test]
    fn exact_solve_and_known_xi0_elimination() {
        let (sys, xi) = standard_system();
        let b = sys.forward(&xi).unwrap();
        let est = solve_xi(&sys.a, &sys.reduce(&b, xi[0]), 0.0, 1).unwrap();
        for j in 0..est.xi.len() {
            assert!((est.xi[j] - xi[j + 1]).abs() < 1e-9);
            assert!(est.error_bars[j] < 1e-12);
        }
        let full = Array2::from_shape_fn((sys.rows(), sys.unknowns() + 1), |(i, j)| if j == 0 { sys.a0[i] } else { sys.a[[i, j - 1]] });
        let all = solve_xi(&full, &b, 0.0, 1).unwrap();
        assert!((all.xi[0] - xi[0]).abs() < 1e-9 * xi[0]);
        for j in 0..est.xi.len() {
            assert!((all.xi[j + 1] - est.xi[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn noisy_solve_error_scale() {
        let (sys, xi) = standard_system();
        let b = sys.reduce(&sys.forward(&xi).unwrap(), xi[0]);
        let delta = 1e-3;
        let est = solve_xi(&sys.a, &b, delta, 9).unwrap();
        let worst = est.draws.iter().map(|d| (d[0] - xi[1]).abs()).fold(0.0, f64::max);
        assert!(worst <= 5.0 * delta, "{worst}");
        assert!(est.error_bars.windows(2).all(|w| w[1] > w[0]), "{:?}", est.error_bars);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let suite: Vec<_> = (0..6)
            .map(|_| {
                let mut g = ManufacturedGamma::random(3, 2, &mut rng);
                for (a, _) in &mut g.terms {
                    for m in -3..=3 {
                        a.coeffs[harmonic_index(3, m)] = 0.0;
                    }
                }
                g
            })
            .collect();
        let q = sphere_quadrature(3).unwrap();
        let sys = assemble_xi_system(&suite, 3, &q).unwrap();
        let err = solve_xi(&sys.a, &Array1::zeros(6), 0.0, 0).unwrap_err();
        assert!(err.to_string().contains("xi_3"), "{err}");
        assert!(solve_xi(&sys.a.slice(ndarray::s![0..2, ..]).to_owned(), &Array1::zeros(2), 0.0, 0).is_err());
    }

    #[test]
    fn reconstruction_examples() {
        let eps = 0.05;
        let mu: Vec<f64> = (0..41).map(|i| -1.0 + i as f64 / 20.0).collect();
        let n = 8;
        let rec = reconstruct_rescaled_kernel(&[2.0 * PI / eps, 0.0, 0.0], eps, n, &mu).unwrap();
        for (r, m) in rec.iter().zip(&mu) {
            let p = legendre_values(n, *m);
            let expect: f64 = 0.5 * (0..=n).map(|k| (2 * k + 1) as f64 * p[k]).sum::<f64>();
            assert!((r - expect).abs() < 1e-10 * expect.abs().max(1.0));
        }
        let base = [1.0 / eps, 1.0, 0.1];
        let mut bumped = base;
        let d = 1e-3;
        bumped[1] += d;
        let a = reconstruct_rescaled_kernel(&base, eps, n, &mu).unwrap();
        let b = reconstruct_rescaled_kernel(&bumped, eps, n, &mu).unwrap();
        let change = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let h1 = mu.iter().map(|m| (eps * h_values(1, n, *m)).abs()).fold(0.0, f64::max);
        assert!((change - d * h1).abs() < 1e-12 * (d * h1));
        assert!(reconstruct_rescaled_kernel(&[0.0; 8], eps, n, &mu).is_err());
    }

    #[test]
    fn reconstruction_converges_in_truncation() {
        let eps = 1e-3;
        let k = normalize_kernel(Profile::Exponential, eps).unwrap();
        let xi = xi_moments(&k, 6).unwrap().xi;
        let mut prev = f64::INFINITY;
        for n in [2usize, 4, 8, 16] {
            let err2 = crate::quad::integrate_breaks(
                |m| {
                    let r = reconstruct_rescaled_kernel(&xi, eps, n, &[m]).unwrap()[0];
                    (r - k.rescaled(m)).powi(2)
                },
                &[-1.0, 0.9, 0.99, 0.999, 0.9999, 1.0],
                1e-10,
                1e-10,
            )
            .unwrap()
            .value;
            let err = err2.sqrt();
            assert!(err < prev, "N={n}: {err} vs {prev}");
            prev = err;
        }
    }

    #[test]
    fn kappa_epsilon_law() {
        let t = kappa_epsilon(&KappaEpsilonConfig::default()).unwrap();
        for w in t.rows.windows(2) {
            let r = w[1].kappa / w[0].kappa;
            assert!((0.3..=0.7).contains(&r), "ratio {r}");
        }
        let s: Vec<f64> = t.rows.iter().map(|r| r.kappa_over_delta_eps).collect();
        let (lo, hi) = s.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(hi / lo <= 3.0);
        assert!(t.rows.iter().all(|r| r.xi1_error <= 5e-3));
        let exact = kappa_epsilon(&KappaEpsilonConfig { delta: 0.0, ..Default::default() }).unwrap();
        assert!(exact.rows.iter().all(|r| r.kappa <= 1e-8));
    }

    #[test]
    fn hermite_identities() {
        let x = [-1.3, 0.0, 0.4, 2.2];
        let p2 = hermite_basis(2, &x).unwrap();
        for (p, v) in p2.iter().zip(x) {
            assert!((p - (v * v - 1.0)).abs() < 1e-14);
        }
        assert_eq!(monomial_in_hermite(2), vec![1.0, 0.0, 1.0]);
        assert_eq!(monomial_in_hermite(4), vec![3.0, 0.0, 6.0, 0.0, 1.0]);
        for m in 0..=10 {
            let c = monomial_in_hermite(m);
            for v in x {
                let p = hermite_all(m, v);
                let s: f64 = c.iter().zip(&p).map(|(a, b)| a * b).sum();
                assert!((s - v.powi(m as i32)).abs() < 1e-9 * v.abs().powi(m as i32).max(1.0));
            }
        }
        assert!(hermite_basis(41, &x).is_err());
    }

    #[test]
    fn hermite_map_structure() {
        let eps = 0.1;
        let map = hermite_map(eps, 4, 6).unwrap();
        for n in 0..=6 {
            let direct = crate::quad::integrate(|v| hermite_all(n, v)[n] * (-0.5 * v * v).exp(), 0.0, 20.0, 1e-14, 1e-14).unwrap().value;
            let expect = 2.0 * PI / (eps * factorial(n)) * direct;
            assert!((map.c[[0, n]] - expect).abs() < 1e-10 * expect.abs().max(1.0));
        }
        let full = hermite_map_on(HermiteDomain::FullLine, eps, 6, 6).unwrap();
        for a in 0..=6 {
            for n in 0..=6 {
                let expect = if a == n { (2.0 * PI).sqrt() * factorial(n) } else { 0.0 };
                assert!((full.gram[a][n] - expect).abs() < 1e-9 * factorial(n));
            }
        }
        for m in 0..=6 {
            for n in 0..=6 {
                if n > m || (m + n) % 2 == 1 {
                    assert!(full.c[[m, n]].abs() < 1e-8 * full.row_norm(m), "C[{m},{n}]");
                }
            }
        }
        assert!(full.d(2, 4, 1) == full.gram[2][2]);
    }

    #[test]
    fn hermite_row_scaling() {
        let t = hermite_conditioning(&[0.2, 0.1, 0.05, 0.025], 3, 6).unwrap();
        for m in 1..=3 {
            let s = t.slopes[m].unwrap();
            assert!((s - (m as f64 - 1.0)).abs() < 0.1, "m={m}: {s}");
        }
    }

    #[test]
    fn recoverable_term_counts() {
        assert_eq!(recoverable_terms(1e-6, 1e-2).unwrap(), 4);
        assert_eq!(recoverable_terms(0.3, 0.3).unwrap(), 2);
        assert_eq!(recoverable_terms(1e-6, 1e-3).unwrap(), 3);
        let eps = [0.5, 0.2, 0.1, 0.01, 1e-3];
        let counts: Vec<usize> = eps.iter().map(|e| recoverable_terms(1e-4, *e).unwrap()).collect();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        let deltas = [1e-8, 1e-6, 1e-3, 0.1];
        let counts: Vec<usize> = deltas.iter().map(|d| recoverable_terms(*d, 0.05).unwrap()).collect();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        assert!(recoverable_terms(1.0, 0.1).is_err());
    }

    #[test]
    fn full_recovery_predictions() {
        assert!((full_recovery_error(3, 0.01, 0.01).unwrap() - 1.0).abs() < 1e-15);
        assert!((full_recovery_error(2, 1e-2, 1e-4).unwrap() - 4.0).abs() < 1e-12);
        assert!(full_recovery_error(0, 0.1, 0.1).is_err());
        let e: Vec<f64> = [0.2, 0.1, 0.05].iter().map(|eps| hermite_coefficient_error(*eps, 1e-6, 4, 7).unwrap()).collect();
        assert!(e.windows(2).all(|w| w[1] > w[0]), "{e:?}");
    }
}
