//! Acceptance run: one PASS/FAIL line per criterion with the measured
//! values and the wall time. Exits nonzero when any criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use invrte::diffusion::{diffusion_check, interior_mask, DiffusionCheckConfig, LAYER_FACTOR};
use invrte::grids::{collision_apply, gauss_legendre, SlabGrid};
use invrte::inversion::{kn_sweep, uniform_noise, SweepConfig, SweepTable};
use invrte::kernels::{duality_residual, gamma_scattering};
use invrte::moments::{
    hermite_conditioning, kappa_epsilon, projection_addition, projection_direct, random_suite, recoverable_terms,
    sphere_quadrature, xi_row, KappaEpsilonConfig, ManufacturedGamma,
};
use invrte::peaked::{fp_convergence_report, legendre_moments, normalize_kernel, xi_moments, Profile};
use invrte::transport::{solve_adjoint, AdjointSource, AngularFlux, BoundaryInflow, OpticalField, Side, TransportProblem, Variant};

// Tolerances and windows, fixed before any run.
const C1_MASS: f64 = 1e-13;
const C1_CONST: f64 = 1e-14;
const C1_SLICES: usize = 1000;
const C2_MIN_SLOPE: f64 = 1.0;
const C3_RESIDUAL: f64 = 0.1;
const C3_RATIO: (f64, f64) = (2.0, 6.0);
const C4_GAMMA: (f64, f64) = (0.8, 1.2);
const C4_KAPPA: (f64, f64) = (-1.3, -0.7);
const C5_ZERO: f64 = 1e-12;
const C6_FACTOR: f64 = 3.0;
const C7_SIGMA0: f64 = 1e-10;
const C7_XI0_REL: f64 = 1e-8;
const C8_RATIO: (f64, f64) = (0.35, 0.7);
const C8_LADDER: [f64; 4] = [0.01, 0.005, 0.0025, 0.00125];
const C9_TOL: f64 = 1e-8;
const C9_KERNELS: usize = 50;
const C10_TOL: f64 = 1e-10;
const C11_RATIO: (f64, f64) = (0.3, 0.7);
const C11_XI1: f64 = 5.0;
const C12_SLOPE: f64 = 0.1;
const SWEEP_KNS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(x: f64, (lo, hi): (f64, f64)) -> bool {
    x >= lo && x <= hi
}

fn slope_str(s: Option<f64>) -> String {
    s.map_or("none".into(), |v| format!("{v:.4}"))
}

fn c1() -> Verdict {
    let mut worst_mass = 0.0f64;
    let mut worst_const = 0.0f64;
    for s in 0..C1_SLICES as u64 {
        let nv = [2, 4, 8, 16, 32][s as usize % 5];
        let q = gauss_legendre(nv).unwrap();
        let f = uniform_noise(nv, 1.0, 1000 + s);
        let lf = collision_apply(&f, &q).unwrap();
        worst_mass = worst_mass.max(q.average(&lf).abs());
        let c = uniform_noise(1, 1.0, 5000 + s)[0];
        let lc = collision_apply(&vec![c; nv], &q).unwrap();
        worst_const = worst_const.max(lc.iter().fold(0.0, |a, v| a.max(v.abs())));
    }
    verdict(worst_mass <= C1_MASS && worst_const <= C1_CONST, format!("max|<Lf>| = {worst_mass:.2e}, max|L c| = {worst_const:.2e}"))
}

fn c2() -> Verdict {
    let t = diffusion_check(&DiffusionCheckConfig::default()).unwrap();
    let errs: Vec<String> = t.rows.iter().map(|r| format!("{:.3e}", r.l2_error)).collect();
    let ok = t.monotone && t.slope.is_some_and(|s| s >= C2_MIN_SLOPE);
    verdict(ok, format!("errors [{}], monotone {}, slope {}", errs.join(", "), t.monotone, slope_str(t.slope)))
}

fn c3() -> Verdict {
    let kn = 0.05;
    let g = SlabGrid::new(160, 160, 1.0).unwrap();
    let q = gauss_legendre(8).unwrap();
    let inflow = BoundaryInflow::one_sided(&g, &q, Side::Left, |t| t);
    let p = TransportProblem::new(g, q, kn, OpticalField::uniform(160, 1.0, 1.0), inflow, Variant::Absorption);
    let bump = |a: f64| -> Vec<f64> { g.centers().iter().map(|&x| if (0.4..=0.6).contains(&x) { a } else { 0.0 }).collect() };
    let mask = interior_mask(&g, LAYER_FACTOR * kn);
    let outside_layer = bump(1.0).iter().zip(&mask).all(|(s, m)| *s == 0.0 || *m);
    let full = duality_residual(&p, &bump(0.01), 160, Side::Right).unwrap();
    let half = duality_residual(&p, &bump(0.005), 160, Side::Right).unwrap();
    let ratio = (full.lhs - full.rhs).abs() / (half.lhs - half.rhs).abs();
    let ok = outside_layer && !full.degenerate && full.residual <= C3_RESIDUAL && within(ratio, C3_RATIO);
    verdict(ok, format!("residual {:.3e}, halving ratio {ratio:.3}", full.residual))
}

fn sweep(variant: Variant) -> SweepTable {
    kn_sweep(&SweepConfig { variant, ..Default::default() }, &SWEEP_KNS).unwrap()
}

fn degradation(t: &SweepTable) -> (bool, String) {
    let g = t.gamma_slope.unwrap_or(f64::NAN);
    let k = t.kappa_slope.unwrap_or(f64::NAN);
    (within(g, C4_GAMMA) && within(k, C4_KAPPA), format!("gamma slope {}, kappa slope {}", slope_str(t.gamma_slope), slope_str(t.kappa_slope)))
}

fn c4(abs: &SweepTable) -> Verdict {
    let (ok, d) = degradation(abs);
    verdict(ok, d)
}

fn c5() -> Verdict {
    let t = sweep(Variant::Scattering);
    let (ok, d) = degradation(&t);
    let g = SlabGrid::new(40, 40, 1.0).unwrap();
    let q = gauss_legendre(8).unwrap();
    let p = TransportProblem::new(g, q.clone(), 0.2, OpticalField::uniform(40, 1.0, 1.0), BoundaryInflow::zero(40, 8), Variant::Scattering);
    let f0 = AngularFlux::from_fn(41, 40, 8, |k, i, _| 1.0 + 0.3 * (k as f64 * 0.2).sin() * (i as f64 * 0.1).cos());
    let adj = solve_adjoint(&p, AdjointSource { tau: 30, side: Side::Right }).unwrap();
    let z = gamma_scattering(&f0, &adj, 0.2, &g, &q).unwrap().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    verdict(ok && z <= C5_ZERO, format!("{d}, max|gamma_sca(iso)| = {z:.2e}"))
}

fn c6(abs: &SweepTable) -> Verdict {
    let at = |kn: f64| abs.rows.iter().find(|r| r.kn == kn).map(|r| r.tikhonov_error).unwrap();
    let (hi, lo) = (at(0.05), at(0.4));
    let ratio = hi / lo;
    verdict(ratio >= C6_FACTOR, format!("median rel. error {lo:.3e} (Kn=0.4) -> {hi:.3e} (Kn=0.05), factor {ratio:.3}"))
}

fn c7() -> Verdict {
    let mut s0 = 0.0f64;
    let mut x0 = 0.0f64;
    for p in Profile::ALL {
        for eps in [0.2, 0.1, 0.05, 0.025] {
            let k = normalize_kernel(p, eps).unwrap();
            s0 = s0.max((legendre_moments(&k, 0).unwrap().sigma_n[0] - 1.0).abs());
            let xi0 = xi_moments(&k, 0).unwrap().xi[0];
            let target = 2.0 * PI / eps;
            x0 = x0.max((xi0 - target).abs() / target);
        }
    }
    verdict(s0 <= C7_SIGMA0 && x0 <= C7_XI0_REL, format!("max|sigma_0 - 1| = {s0:.2e}, max rel|xi_0 - 2pi/eps| = {x0:.3e}"))
}

fn c8() -> Verdict {
    let r = fp_convergence_report(Profile::Exponential, &C8_LADDER, 10).unwrap();
    let ratios: Vec<f64> = r.rows.windows(2).map(|w| w[1].error / w[0].error).collect();
    let ok = ratios.iter().all(|x| within(*x, C8_RATIO));
    verdict(ok, format!("E ratios {:?}", ratios.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>()))
}

fn c9() -> Verdict {
    let q = sphere_quadrature(3).unwrap();
    let suite = random_suite(3, 2, C9_KERNELS, 909);
    let mut worst = 0.0f64;
    for g in &suite {
        for n in 0..=3 {
            worst = worst.max((projection_direct(g, n, &q) - projection_addition(g, n, &q)).abs());
        }
    }
    verdict(worst <= C9_TOL, format!("max path gap {worst:.2e} over {C9_KERNELS} kernels"))
}

fn c10() -> Verdict {
    let q = sphere_quadrature(3).unwrap();
    let g = ManufacturedGamma::product(3, (1, 0), (1, 0)).unwrap();
    let row = xi_row(&g, 3, &q).unwrap();
    let c = 4.0 * PI / 3.0;
    let gap = row.iter().zip([c, c, 0.0, 0.0]).fold(0.0f64, |a, (r, e)| a.max((r - e).abs()));
    verdict(gap <= C10_TOL, format!("row {:?}, max gap {gap:.2e}", row.iter().map(|x| format!("{x:.12}")).collect::<Vec<_>>()))
}

fn c11() -> Verdict {
    let cfg = KappaEpsilonConfig::default();
    let t = kappa_epsilon(&cfg).unwrap();
    let ratios: Vec<f64> = t.rows.windows(2).map(|w| w[1].kappa / w[0].kappa).collect();
    let xi1 = t.rows.iter().map(|r| r.xi1_error).fold(0.0, f64::max);
    let ok = ratios.iter().all(|r| within(*r, C11_RATIO)) && xi1 <= C11_XI1 * cfg.delta;
    verdict(ok, format!("kappa ratios {:?}, max xi1 error {xi1:.2e}", ratios.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>()))
}

fn c12() -> Verdict {
    let t = hermite_conditioning(&[0.2, 0.1, 0.05, 0.025], 3, 6).unwrap();
    let slopes: Vec<f64> = (1..=3).map(|m| t.slopes[m].unwrap_or(f64::NAN)).collect();
    let slopes_ok = slopes.iter().enumerate().all(|(i, s)| (s - i as f64).abs() <= C12_SLOPE);
    let n0 = recoverable_terms(1e-6, 1e-2).unwrap();
    verdict(slopes_ok && n0 == 4, format!("row slopes {:?}, n0 = {n0}", slopes.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>()))
}

fn run_cli(out: &Path, args: &[&str]) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_invrte")).args(args).arg("--out").arg(out).status().expect("spawn invrte");
    assert!(status.success(), "invrte {args:?} failed");
    std::fs::read(out.join(format!("{}.csv", args[0]))).unwrap()
}

fn c13() -> Verdict {
    let root = std::env::temp_dir().join(format!("invrte-acceptance-{}", std::process::id()));
    let mut same = true;
    let mut checked = Vec::new();
    for study in ["sweep-kn", "kappa-epsilon", "duality"] {
        let a = run_cli(&root.join("a"), &[study, "--threads", "4", "--seed", "7"]);
        let b = run_cli(&root.join("b"), &[study, "--threads", "4", "--seed", "7"]);
        let c = run_cli(&root.join("c"), &[study, "--threads", "1", "--seed", "7"]);
        same &= a == b && a == c;
        checked.push(format!("{study} ({} bytes)", a.len()));
    }
    let _ = std::fs::remove_dir_all(&root);
    verdict(same, format!("byte-identical across runs and thread counts: {}", checked.join(", ")))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        if !v.pass {
            failed += 1;
        }
        println!("{} criterion {id:>2} {name}: {} [{secs:.2}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    let abs_start = Instant::now();
    let abs = sweep(Variant::Absorption);
    let abs_secs = abs_start.elapsed().as_secs_f64();
    report(1, "collision invariants", &mut c1);
    report(2, "diffusion limit", &mut c2);
    report(3, "duality identity", &mut c3);
    report(4, "degradation, absorption", &mut || {
        let mut v = c4(&abs);
        v.detail += &format!(" (sweep {abs_secs:.2}s)");
        v
    });
    report(5, "degradation, scattering", &mut c5);
    report(6, "tikhonov degradation", &mut || c6(&abs));
    report(7, "peaked normalization", &mut c7);
    report(8, "fokker-planck spectrum", &mut c8);
    report(9, "dual-path projection", &mut c9);
    report(10, "a_ij golden row", &mut c10);
    report(11, "kappa_eps law", &mut c11);
    report(12, "hermite conditioning", &mut c12);
    report(13, "reproducibility", &mut c13);
    println!("acceptance: {} of 13 criteria pass", 13 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
