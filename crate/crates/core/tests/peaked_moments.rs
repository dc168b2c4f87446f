use std::f64::consts::PI;

use invrte::moments::{
    assemble_xi_system, hermite_map_on, random_suite, solve_xi, sphere_quadrature, HermiteDomain,
};
use invrte::peaked::{collision_eigenvalues, fp_convergence_report, legendre_moments, normalize_kernel, xi_moments, Profile};
use statrs::function::erf::erf;
use statrs::function::gamma::gamma;

#[test]
fn full_line_moments_against_gamma_function() {
    for n in 0..12 {
        let expect = 0.5 * gamma((n as f64 + 1.0) / 2.0);
        let got = Profile::Gaussian.full_line_moment(n);
        assert!((got - expect).abs() < 1e-12 * expect, "n={n}");
        assert!((Profile::Exponential.full_line_moment(n) - gamma(n as f64 + 1.0)).abs() < 1e-9 * gamma(n as f64 + 1.0));
    }
}

#[test]
fn gaussian_normalization_against_erf() {
    for eps in [1.0, 0.5, 0.2] {
        let k = normalize_kernel(Profile::Gaussian, eps).unwrap();
        let mass = PI.sqrt() / 2.0 * erf(2.0 / eps);
        assert!((k.norm_const - 1.0 / (2.0 * PI * mass)).abs() < 1e-12);
    }
}

#[test]
fn spectra_are_dissipative_and_converge() {
    for p in Profile::ALL {
        let k = normalize_kernel(p, 0.01).unwrap();
        let lam = collision_eigenvalues(&legendre_moments(&k, 12).unwrap(), 0.01);
        assert!(lam.windows(2).all(|w| w[1] < w[0]), "{p:?}");
        let r = fp_convergence_report(p, &[0.02, 0.01, 0.005], 6).unwrap();
        assert!(r.rows.windows(2).all(|w| w[1].error < w[0].error), "{p:?}");
    }
}

#[test]
fn exact_moments_recovered_from_manufactured_suite() {
    let q = sphere_quadrature(4).unwrap();
    let suite = random_suite(4, 3, 10, 42);
    let sys = assemble_xi_system(&suite, 4, &q).unwrap();
    let k = normalize_kernel(Profile::Bump, 0.1).unwrap();
    let xi = xi_moments(&k, 4).unwrap().xi;
    let b = sys.reduce(&sys.forward(&xi).unwrap(), xi[0]);
    let est = solve_xi(&sys.a, &b, 0.0, 0).unwrap();
    for j in 0..4 {
        assert!((est.xi[j] - xi[j + 1]).abs() < 1e-9 * xi[j + 1].abs().max(1.0), "xi_{}", j + 1);
    }
}

#[test]
fn hermite_gram_is_diagonal_on_the_full_line() {
    let map = hermite_map_on(HermiteDomain::FullLine, 0.1, 8, 8).unwrap();
    for n in 0..=8 {
        let norm = (2.0 * PI).sqrt() * gamma(n as f64 + 1.0);
        assert!((map.d(n, n, 0) - norm).abs() < 1e-9 * norm);
        if n >= 2 {
            assert!(map.d(n, n + 2, 1) == map.d(n, n, 0));
            assert!(map.d(n - 2, n, 0).abs() < 1e-9 * norm);
        }
    }
}
