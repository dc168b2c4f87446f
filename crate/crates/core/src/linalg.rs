//! Small linear-algebra kernels: a banded LU for the transport steps and a
//! one-sided Jacobi SVD for the kernel systems.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals, stored row-wise.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
    factored: bool,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)], factored: false }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku);
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// `y = A x` (only valid before factorization).
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factored, "matvec on a factored band matrix");
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// In-place LU without pivoting. Intended for diagonally dominant systems;
    /// a pivot smaller than `1e-300` in magnitude is reported as breakdown.
    pub fn factor(&mut self) -> Result<()> {
        let n = self.n;
        for k in 0..n {
            let pivot = self.data[self.slot(k, k)];
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(Error::NumericalBreakdown {
                    step: 0,
                    reason: format!("zero pivot in banded LU at row {k}"),
                });
            }
            let imax = (k + self.kl).min(n - 1);
            let jmax = (k + self.ku).min(n - 1);
            for i in k + 1..=imax {
                let sik = self.slot(i, k);
                let l = self.data[sik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[sik] = l;
                for j in k + 1..=jmax {
                    let skj = self.slot(k, j);
                    let sij = self.slot(i, j);
                    self.data[sij] -= l * self.data[skj];
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A x = b` in place using the stored factors.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factored, "solve on an unfactored band matrix");
        let n = self.n;
        for i in 0..n {
            let lo = i.saturating_sub(self.kl);
            let mut s = b[i];
            for j in lo..i {
                s -= self.data[self.slot(i, j)] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + self.ku).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=hi {
                s -= self.data[self.slot(i, j)] * b[j];
            }
            b[i] = s / self.data[self.slot(i, i)];
        }
    }
}

/// Thin singular value decomposition `A = U diag(s) V^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `m x r` with orthonormal columns, `r = min(m, n)`.
    pub u: Array2<f64>,
    /// Nonincreasing singular values.
    pub s: Array1<f64>,
    /// `n x r` with orthonormal columns.
    pub v: Array2<f64>,
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Works on the columns of `A` when `m >= n`, otherwise on `A^T`. Accurate
/// for small singular values relative to the large ones, which is what the
/// conditioning studies depend on.
pub fn jacobi_svd(a: &Array2<f64>) -> Result<Svd> {
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("SVD of an empty matrix".into()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("SVD input has non-finite entries".into()));
    }
    let transposed = m < n;
    let mut w = if transposed { a.t().to_owned() } else { a.clone() };
    let (rows, cols) = w.dim();
    let mut v = Array2::<f64>::eye(cols);

    const MAX_SWEEPS: usize = 80;
    let tol = f64::EPSILON * (rows as f64);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0usize;
        for p in 0..cols {
            for q in p + 1..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    let (x, y) = (w[[i, p]], w[[i, q]]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                off += 1;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (w[[i, p]], w[[i, q]]);
                    w[[i, p]] = c * x - s * y;
                    w[[i, q]] = s * x + c * y;
                }
                for i in 0..cols {
                    let (x, y) = (v[[i, p]], v[[i, q]]);
                    v[[i, p]] = c * x - s * y;
                    v[[i, q]] = s * x + c * y;
                }
            }
        }
        if off == 0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericalBreakdown {
            step: MAX_SWEEPS,
            reason: "Jacobi SVD did not converge".into(),
        });
    }

    let norms: Vec<f64> = w.axis_iter(Axis(1)).map(|c| c.dot(&c).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut u = Array2::<f64>::zeros((rows, cols));
    let mut vv = Array2::<f64>::zeros((cols, cols));
    let mut s = Array1::<f64>::zeros(cols);
    let smax = norms[order[0]];
    for (k, &c) in order.iter().enumerate() {
        s[k] = norms[c];
        vv.column_mut(k).assign(&v.column(c));
        if norms[c] > smax * 1e-300 && norms[c] > 0.0 {
            let col = w.column(c).mapv(|x| x / norms[c]);
            u.column_mut(k).assign(&col);
        }
    }
    complete_orthonormal(&mut u, &s);

    Ok(if transposed { Svd { u: vv, s, v: u } } else { Svd { u, s, v: vv } })
}

/// Fills columns of `u` belonging to zero singular values with an orthonormal
/// completion so that `U` always has orthonormal columns.
fn complete_orthonormal(u: &mut Array2<f64>, s: &Array1<f64>) {
    let (rows, cols) = u.dim();
    for k in 0..cols {
        if s[k] > 0.0 && u.column(k).dot(&u.column(k)) > 0.5 {
            continue;
        }
        for e in 0..rows {
            let mut cand = Array1::<f64>::zeros(rows);
            cand[e] = 1.0;
            for _ in 0..2 {
                for j in 0..cols {
                    if j == k {
                        continue;
                    }
                    let proj = u.column(j).dot(&cand);
                    cand.scaled_add(-proj, &u.column(j));
                }
            }
            let nrm = cand.dot(&cand).sqrt();
            if nrm > 1e-8 {
                u.column_mut(k).assign(&cand.mapv(|x| x / nrm));
                break;
            }
        }
    }
}

/// Dense least-squares solve `min ||A x - b||` through the SVD, with singular
/// values below `rcond * s_max` treated as zero. Returns `None` when the
/// numerical rank is smaller than the column count.
pub fn lstsq_full_rank(a: &Array2<f64>, b: &Array1<f64>, rcond: f64) -> Result<Option<Array1<f64>>> {
    let svd = jacobi_svd(a)?;
    let (_, n) = a.dim();
    if svd.s.len() < n || svd.s[n - 1] <= rcond * svd.s[0] {
        return Ok(None);
    }
    let utb = svd.u.t().dot(b);
    let coef = &utb / &svd.s;
    Ok(Some(svd.v.dot(&coef)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn band_lu_matches_dense_solution() {
        let n = 7;
        let mut a = BandMatrix::zeros(n, 2, 1);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(2)..=(i + 1).min(n - 1) {
                let v = if i == j { 6.0 + i as f64 } else { -(1.0 + (i * 3 + j) as f64 * 0.1) };
                a.add(i, j, v);
                dense[i][j] = v;
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.5).collect();
        let mut b = a.matvec(&x);
        let check: Vec<f64> = dense.iter().map(|r| r.iter().zip(&x).map(|(p, q)| p * q).sum()).collect();
        for (p, q) in b.iter().zip(&check) {
            assert!((p - q).abs() < 1e-13);
        }
        a.factor().unwrap();
        a.solve_in_place(&mut b);
        for (p, q) in b.iter().zip(&x) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pivot_is_breakdown() {
        let mut a = BandMatrix::zeros(2, 1, 1);
        a.add(0, 1, 1.0);
        a.add(1, 0, 1.0);
        assert!(matches!(a.factor(), Err(Error::NumericalBreakdown { .. })));
    }

    #[test]
    fn svd_diag_and_rank_one() {
        let d = array![[2.0, 0.0], [0.0, 1.0]];
        let s = jacobi_svd(&d).unwrap();
        assert!((s.s[0] - 2.0).abs() < 1e-15 && (s.s[1] - 1.0).abs() < 1e-15);

        let u = array![1.0, 2.0, -1.0];
        let v = array![0.5, -3.0, 1.0, 2.0];
        let a = Array2::from_shape_fn((3, 4), |(i, j)| u[i] * v[j]);
        let s = jacobi_svd(&a).unwrap();
        let expect = u.dot(&u).sqrt() * v.dot(&v).sqrt();
        assert!((s.s[0] - expect).abs() < 1e-12 * expect);
        assert!(s.s[1].abs() < 1e-12 && s.s[2].abs() < 1e-12);
        let utu = s.u.t().dot(&s.u);
        assert!((&utu - &Array2::<f64>::eye(3)).iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn svd_agrees_with_nalgebra() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &(m, n) in &[(6usize, 4usize), (4, 9), (12, 12)] {
            let a = Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0));
            let ours = jacobi_svd(&a).unwrap();
            let na = nalgebra::DMatrix::from_fn(m, n, |i, j| a[[i, j]]);
            let mut theirs: Vec<f64> = na.svd(false, false).singular_values.iter().copied().collect();
            theirs.sort_by(|x, y| y.total_cmp(x));
            for (p, q) in ours.s.iter().zip(&theirs) {
                assert!((p - q).abs() < 1e-12, "{p} vs {q}");
            }
            let rec = ours.u.dot(&Array2::from_diag(&ours.s)).dot(&ours.v.t());
            let err: f64 = (&rec - &a).iter().map(|x| x * x).sum::<f64>().sqrt();
            let nrm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(err <= 1e-10 * nrm);
            let vtv = ours.v.t().dot(&ours.v);
            assert!((&vtv - &Array2::<f64>::eye(vtv.nrows())).iter().all(|x| x.abs() < 1e-10));
        }
    }

    #[test]
    fn lstsq_recovers_exact_solution() {
        let a = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let x = array![0.3, -1.2];
        let b = a.dot(&x);
        let got = lstsq_full_rank(&a, &b, 1e-12).unwrap().unwrap();
        assert!((&got - &x).iter().all(|e| e.abs() < 1e-12));
        let deficient = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(lstsq_full_rank(&deficient, &array![1.0, 2.0], 1e-12).unwrap().is_none());
    }
}
