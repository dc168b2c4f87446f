use invrte::diffusion::{diffusion_check, DiffusionCheckConfig};
use invrte::grids::{gauss_legendre, SlabGrid};
use invrte::inversion::{build_system, kn_sweep, SweepConfig};
use invrte::kernels::{duality_residual, gamma_scattering, kernel_row};
use invrte::transport::{solve_adjoint, solve_forward, AdjointSource, BoundaryInflow, OpticalField, Side, TransportProblem, Variant};

fn slab(kn: f64, nx: usize, variant: Variant) -> TransportProblem {
    let g = SlabGrid::new(nx, nx, 1.0).unwrap();
    let q = gauss_legendre(8).unwrap();
    let inflow = BoundaryInflow::one_sided(&g, &q, Side::Left, |t| (std::f64::consts::PI * t).sin().powi(2));
    TransportProblem::new(g, q, kn, OpticalField::uniform(nx, 1.0, 0.5), inflow, variant)
}

#[test]
fn smooth_perturbation_duality_both_variants() {
    for variant in [Variant::Absorption, Variant::Scattering] {
        let p = slab(0.1, 48, variant);
        let sigma: Vec<f64> = p.grid.centers().iter().map(|x| 0.02 * (std::f64::consts::PI * x).sin().powi(4)).collect();
        let d = duality_residual(&p, &sigma, 40, Side::Right).unwrap();
        assert!(!d.degenerate);
        assert!(d.residual < 0.1, "{variant:?}: {}", d.residual);
    }
}

#[test]
fn linear_model_matches_synthetic_data() {
    let cfg = SweepConfig { nx: 48, nt: 48, ..Default::default() };
    let (_, sys, truth) = build_system(&cfg, 0.2).unwrap();
    let pred = sys.a.dot(&sys.restrict(&truth));
    for (p, b) in pred.iter().zip(sys.b.iter()) {
        assert!((p - b).abs() <= 0.1 * b.abs().max(1e-12), "{p} vs {b}");
    }
}

#[test]
fn scattering_kernel_vanishes_for_isotropic_background() {
    let p = slab(0.2, 40, Variant::Scattering);
    let nv = p.quad.len();
    let f0 = invrte::transport::AngularFlux::from_fn(41, 40, nv, |k, i, _| (k as f64 * 0.1).cos() + i as f64 * 0.01);
    let g = solve_adjoint(&p, AdjointSource { tau: 20, side: Side::Left }).unwrap();
    let gam = gamma_scattering(&f0, &g, p.kn, &p.grid, &p.quad).unwrap();
    assert!(gam.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn kernels_shrink_with_kn() {
    let mut prev = f64::INFINITY;
    for (kn, nx) in [(0.4, 40), (0.2, 40), (0.1, 80)] {
        let p = slab(kn, nx, Variant::Absorption);
        let f0 = solve_forward(&p).unwrap();
        let row = kernel_row(&p, &f0, nx, Side::Left, "sin2").unwrap();
        let m = row.max_abs();
        assert!(m < prev);
        prev = m;
    }
}

#[test]
fn diffusion_error_decreases() {
    let cfg = DiffusionCheckConfig { kns: vec![0.2, 0.1], ..Default::default() };
    let t = diffusion_check(&cfg).unwrap();
    assert!(t.monotone);
    assert_eq!(t.rows[0].nx, 20);
    assert_eq!(t.rows[1].nx, 40);
}

#[test]
fn sweep_is_deterministic() {
    let cfg = SweepConfig { nx: 40, nt: 40, noise_draws: 4, ..Default::default() };
    let a = kn_sweep(&cfg, &[0.2, 0.4]).unwrap();
    let b = kn_sweep(&cfg, &[0.4, 0.2]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows[0].kn, 0.4);
}
