//! Forward-peaked scattering kernels `sigma((1 - mu)/eps) / eps^2`: their
//! normalization, Legendre moments `sigma_n`, the moments `xi_n`, and the
//! comparison of the collision spectrum with the Fokker-Planck limit.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::inversion::loglog_slope;
use crate::quad::integrate_breaks;

/// Absolute tolerance of the moment quadratures.
pub const QUAD_TOL: f64 = 1e-13;

/// Base profile `sigma(alpha)` on `[0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// `exp(-alpha)`
    Exponential,
    /// `exp(-alpha^2)`
    Gaussian,
    /// `(1 - alpha^2)^2` on `[0, 1]`, zero beyond.
    Bump,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Exponential, Profile::Gaussian, Profile::Bump];

    pub fn eval(self, alpha: f64) -> f64 {
        match self {
            Profile::Exponential => (-alpha).exp(),
            Profile::Gaussian => (-alpha * alpha).exp(),
            Profile::Bump => {
                if alpha < 1.0 {
                    let s = 1.0 - alpha * alpha;
                    s * s
                } else {
                    0.0
                }
            }
        }
    }

    /// `int_0^inf t^n sigma(t) dt`.
    pub fn full_line_moment(self, n: usize) -> f64 {
        match self {
            Profile::Exponential => factorial(n),
            Profile::Gaussian => 0.5 * gamma_half_integer((n as f64 + 1.0) / 2.0),
            // int_0^1 t^n (1 - 2t^2 + t^4) dt
            Profile::Bump => {
                let m = n as f64;
                1.0 / (m + 1.0) - 2.0 / (m + 3.0) + 1.0 / (m + 5.0)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Exponential => "exponential",
            Profile::Gaussian => "gaussian",
            Profile::Bump => "bump",
        }
    }

    /// Support end, if compact.
    fn support(self) -> Option<f64> {
        match self {
            Profile::Bump => Some(1.0),
            _ => None,
        }
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Gamma function at half-integers and integers, enough for moments.
fn gamma_half_integer(x: f64) -> f64 {
    // x is a positive multiple of 1/2.
    let twice = (2.0 * x).round() as usize;
    if twice % 2 == 0 {
        factorial(twice / 2 - 1)
    } else {
        // Gamma(k + 1/2) = (2k)! sqrt(pi) / (4^k k!)
        let k = (twice - 1) / 2;
        factorial(2 * k) * PI.sqrt() / (4f64.powi(k as i32) * factorial(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakedKernel {
    pub profile: Profile,
    pub eps: f64,
    /// Multiplier making `2 pi int_0^{2/eps} c sigma = 1`.
    pub norm_const: f64,
}

impl PeakedKernel {
    pub fn eval(&self, alpha: f64) -> f64 {
        self.norm_const * self.profile.eval(alpha)
    }

    pub fn alpha_max(&self) -> f64 {
        2.0 / self.eps
    }

    /// Rescaled kernel `(1/eps) sigma((1 - mu)/eps)`.
    pub fn rescaled(&self, mu: f64) -> f64 {
        self.eval((1.0 - mu) / self.eps) / self.eps
    }

    /// Initial partition of `[0, 2/eps]`: dyadic near the origin, where every
    /// profile lives, then uniform pieces so that oscillatory factors
    /// `P_n(1 - eps alpha)` are resolved from the start.
    fn breaks(&self, n: usize) -> Vec<f64> {
        let top = self.alpha_max();
        let mut b = vec![0.0];
        let mut x: f64 = 0.125;
        let stop = self.profile.support().unwrap_or(f64::INFINITY).min(top);
        while x < stop.min(64.0) {
            b.push(x);
            x *= 2.0;
        }
        if let Some(s) = self.profile.support() {
            if s < top {
                b.push(s);
            }
        }
        let last = *b.last().expect("nonempty");
        if last < top {
            let pieces = (2 * n + 2).max(4);
            for k in 1..=pieces {
                let y = last + (top - last) * k as f64 / pieces as f64;
                b.push(y);
            }
        }
        b.dedup();
        b
    }

    fn integral(&self, n: usize, g: impl Fn(f64) -> f64) -> Result<f64> {
        let breaks = self.breaks(n);
        Ok(integrate_breaks(|a| self.eval(a) * g(a), &breaks, QUAD_TOL, 1e-15)?.value)
    }
}

pub fn normalize_kernel(profile: Profile, eps: f64) -> Result<PeakedKernel> {
    if !(eps > 0.0 && eps <= 1.0) {
        return invalid(format!("eps must lie in (0, 1] (got {eps})"));
    }
    let raw = PeakedKernel { profile, eps, norm_const: 1.0 };
    let mass = 2.0 * PI * raw.integral(0, |_| 1.0)?;
    if !(mass > 0.0) {
        return invalid("profile has zero mass on [0, 2/eps]");
    }
    Ok(PeakedKernel { norm_const: 1.0 / mass, ..raw })
}

/// `P_0(x), ..., P_nmax(x)` by the three-term recurrence.
pub fn legendre_values(nmax: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(nmax + 1);
    p.push(1.0);
    if nmax >= 1 {
        p.push(x);
    }
    for n in 1..nmax {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * x * p[n] - nf * p[n - 1]) / (nf + 1.0);
        p.push(next);
    }
    p
}

/// `P_n^{(j)}(1) = (n + j)! / (2^j j! (n - j)!)`, zero for `j > n`.
pub fn legendre_derivative_at_one(n: usize, j: usize) -> f64 {
    if j > n {
        return 0.0;
    }
    // (n+j)!/(n-j)! = prod_{k=n-j+1}^{n+j} k
    let num: f64 = ((n - j + 1)..=(n + j)).map(|k| k as f64).product();
    num / (2f64.powi(j as i32) * factorial(j))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LegendreCoeffs {
    pub sigma_n: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentVector {
    pub xi: Vec<f64>,
}

impl MomentVector {
    pub fn xi1(&self) -> f64 {
        self.xi[1]
    }
}

pub const MAX_ORDER: usize = 64;

/// `sigma_n = 2 pi int_0^{2/eps} sigma(alpha) P_n(1 - eps alpha) d alpha`.
pub fn legendre_moments(k: &PeakedKernel, nmax: usize) -> Result<LegendreCoeffs> {
    if nmax > MAX_ORDER {
        return invalid(format!("order {nmax} exceeds {MAX_ORDER}"));
    }
    let sigma_n = (0..=nmax)
        .map(|n| Ok(2.0 * PI * k.integral(n, |a| legendre_values(n, 1.0 - k.eps * a)[n])?))
        .collect::<Result<_>>()?;
    Ok(LegendreCoeffs { sigma_n })
}

/// `xi_n = eps^(n-1) 2 pi int_0^{2/eps} t^n sigma(t) dt`.
pub fn xi_moments(k: &PeakedKernel, nmax: usize) -> Result<MomentVector> {
    if nmax > MAX_ORDER {
        return invalid(format!("order {nmax} exceeds {MAX_ORDER}"));
    }
    let xi = (0..=nmax)
        .map(|n| Ok(k.eps.powi(n as i32 - 1) * 2.0 * PI * k.integral(n, |t| t.powi(n as i32))?))
        .collect::<Result<_>>()?;
    Ok(MomentVector { xi })
}

/// `lambda_n = (sigma_n - sigma_0) / eps`.
pub fn collision_eigenvalues(c: &LegendreCoeffs, eps: f64) -> Vec<f64> {
    c.sigma_n.iter().map(|s| (s - c.sigma_n[0]) / eps).collect()
}

/// `-n (n + 1) xi1 / 2` for `n = 0..=nmax`.
pub fn fp_eigenvalues(xi1: f64, nmax: usize) -> Result<Vec<f64>> {
    if !(xi1 > 0.0) {
        return invalid("xi1 must be positive");
    }
    Ok((0..=nmax).map(|n| 0.0 - (n * (n + 1)) as f64 * xi1 / 2.0).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpRow {
    pub eps: f64,
    pub xi1: f64,
    /// `max_{1<=n<=N} |lambda_n - lambda_n^FP| / (n (n + 1) / 2)`
    pub error: f64,
    /// Mode attaining the maximum.
    pub worst_mode: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpReport {
    pub rows: Vec<FpRow>,
    pub order: Option<f64>,
}

pub fn fp_convergence_report(profile: Profile, eps_list: &[f64], nmax: usize) -> Result<FpReport> {
    if nmax == 0 {
        return invalid("need at least one nonconstant mode");
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("eps list must be strictly decreasing");
    }
    let rows = eps_list
        .iter()
        .map(|&eps| {
            let k = normalize_kernel(profile, eps)?;
            let c = legendre_moments(&k, nmax)?;
            let xi1 = xi_moments(&k, 1)?.xi1();
            let lam = collision_eigenvalues(&c, eps);
            let fp = fp_eigenvalues(xi1, nmax)?;
            let (worst_mode, error) = (1..=nmax)
                .map(|n| (n, (lam[n] - fp[n]).abs() / ((n * (n + 1)) as f64 / 2.0)))
                .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            Ok(FpRow { eps, xi1, error, worst_mode })
        })
        .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let err: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok(FpReport { order: loglog_slope(&eps, &err), rows })
}
