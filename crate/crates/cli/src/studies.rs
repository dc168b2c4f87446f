//! One function per subcommand. Each returns the output table, a JSON
//! summary for the manifest, and optionally a line for standard output.

use invrte::diffusion::diffusion_check;
use invrte::inversion::{kn_sweep, reconstruct};
use invrte::kernels::{duality_residual, kernel_row};
use invrte::moments::{
    assemble_xi_system, full_recovery_error, hermite_coefficient_error, hermite_conditioning, kappa_epsilon,
    random_suite, recoverable_terms, solve_xi, sphere_quadrature,
};
use invrte::peaked::{collision_eigenvalues, fp_convergence_report, fp_eigenvalues, legendre_moments, normalize_kernel, xi_moments};
use invrte::transport::{outflow, solve_adjoint, solve_forward, AdjointSource};
use invrte::{Error, Result};
use serde_json::json;

use crate::config::{check_list, ExperimentConfig, Regime};
use crate::output::{num, opt, Table};

pub struct Outcome {
    pub table: Table,
    pub summary: serde_json::Value,
    pub stdout: Option<String>,
}

impl Outcome {
    fn new(table: Table, summary: serde_json::Value) -> Self {
        Self { table, summary, stdout: None }
    }
}

pub fn regime_of(study: &str) -> Regime {
    match study {
        "forward" | "adjoint" | "diffusion-check" | "gamma" | "duality" | "invert" | "sweep-kn" => Regime::Diffusive,
        _ => Regime::Peaked,
    }
}

/// Cheap checks that need no solves; run before any compute.
pub fn validate(study: &str, cfg: &ExperimentConfig) -> Result<()> {
    match study {
        "forward" | "adjoint" | "gamma" | "duality" => {
            cfg.slab.problem()?;
        }
        "diffusion-check" => cfg.diffusion.validate()?,
        "invert" | "sweep-kn" => {
            cfg.sweep.validate()?;
            let kns = if study == "invert" { vec![cfg.invert.kn] } else { cfg.sweep_kn.kns.clone() };
            check_list("sweep_kn.kns", &kns)?;
            for kn in kns {
                cfg.sweep.problem(kn)?.validate()?;
            }
        }
        "fp-spectrum" => check_list("fp_spectrum.eps", &cfg.fp_spectrum.eps)?,
        "kappa-epsilon" => cfg.kappa_epsilon.validate()?,
        "hermite-cond" => check_list("hermite.eps", &cfg.hermite.eps)?,
        "recoverable-terms" => {
            let r = &cfg.recoverable;
            recoverable_terms(r.delta, r.eps)?;
            full_recovery_error(r.smoothness, r.delta, r.eps)?;
        }
        _ => {}
    }
    Ok(())
}

pub fn run(study: &str, cfg: &ExperimentConfig) -> Result<Outcome> {
    match study {
        "forward" => forward(cfg),
        "adjoint" => adjoint(cfg),
        "diffusion-check" => diffusion(cfg),
        "gamma" => gamma(cfg),
        "duality" => duality(cfg),
        "invert" => invert(cfg),
        "sweep-kn" => sweep(cfg),
        "fp-spectrum" => fp_spectrum(cfg),
        "xi-moments" => xi_table(cfg),
        "moment-invert" => moment_invert(cfg),
        "kappa-epsilon" => kappa(cfg),
        "hermite-cond" => hermite(cfg),
        "recoverable-terms" => recoverable(cfg),
        other => Err(Error::InvalidArgument(format!("unknown study {other}"))),
    }
}

fn forward(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.slab.problem()?;
    let f = solve_forward(&p)?;
    let m = outflow(&f, &p.quad)?;
    let mut t = Table::new(&["level", "t", "outflow_left", "outflow_right"]);
    for (k, [l, r]) in m.m.iter().enumerate() {
        t.push(vec![k.to_string(), num(p.grid.t(k)), num(*l), num(*r)]);
    }
    Ok(Outcome::new(t, json!({ "min": f.min(), "max": f.max() })))
}

fn adjoint(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.slab.problem()?;
    let probe = cfg.adjoint;
    let g = solve_adjoint(&p, AdjointSource { tau: probe.tau, side: probe.side })?;
    let rho = g.density(&p.quad);
    let mut t = Table::new(&["level", "t", "cell", "x", "density"]);
    for (k, row) in rho.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            t.push(vec![k.to_string(), num(p.grid.t(k)), i.to_string(), num(p.grid.x(i)), num(*v)]);
        }
    }
    Ok(Outcome::new(t, json!({ "tau": probe.tau, "side": probe.side.name() })))
}

fn diffusion(cfg: &ExperimentConfig) -> Result<Outcome> {
    let d = diffusion_check(&cfg.diffusion)?;
    let mut t = Table::new(&["kn", "nx", "nt", "l2_error", "max_deviation", "slope"]);
    for r in &d.rows {
        t.push(vec![num(r.kn), r.nx.to_string(), r.nt.to_string(), num(r.l2_error), num(r.max_deviation), opt(d.slope)]);
    }
    Ok(Outcome::new(t, json!({ "slope": d.slope, "monotone": d.monotone })))
}

fn gamma(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.slab.problem()?;
    let f0 = solve_forward(&p)?;
    let probe = cfg.gamma;
    let row = kernel_row(&p, &f0, probe.tau, probe.side, "slab")?;
    let mut t = Table::new(&["cell", "x", "gamma"]);
    for (i, g) in row.gamma.iter().enumerate() {
        t.push(vec![i.to_string(), num(p.grid.x(i)), num(*g)]);
    }
    Ok(Outcome::new(t, json!({ "variant": p.variant, "max_abs": row.max_abs() })))
}

fn duality(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.slab.problem()?;
    let d = &cfg.duality;
    let (lo, hi) = d.support;
    let mut t = Table::new(&["amplitude", "lhs", "rhs", "mismatch", "residual", "degenerate"]);
    let mut mismatches = Vec::new();
    for h in 0..=d.halvings {
        let amp = d.amplitude / 2f64.powi(h as i32);
        let sigma: Vec<f64> = p.grid.centers().iter().map(|&x| if x >= lo && x <= hi { amp } else { 0.0 }).collect();
        let r = duality_residual(&p, &sigma, d.tau, d.side)?;
        let mismatch = (r.lhs - r.rhs).abs();
        mismatches.push(mismatch);
        t.push(vec![num(amp), num(r.lhs), num(r.rhs), num(mismatch), num(r.residual), r.degenerate.to_string()]);
    }
    let ratios: Vec<f64> = mismatches.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(Outcome::new(t, json!({ "halving_ratios": ratios })))
}

fn invert(cfg: &ExperimentConfig) -> Result<Outcome> {
    let s = &cfg.sweep;
    let kn = cfg.invert.kn;
    let r = reconstruct(s, kn, s.seed.wrapping_add(cfg.invert.draw))?;
    let grid = s.grid()?;
    let mut t = Table::new(&["cell", "x", "in_mask", "truth", "estimate"]);
    for i in 0..r.truth.len() {
        t.push(vec![i.to_string(), num(grid.x(i)), r.in_mask[i].to_string(), num(r.truth[i]), num(r.estimate[i])]);
    }
    Ok(Outcome::new(t, json!({ "kn": kn, "lambda_reg": r.lambda_reg, "relative_error": r.relative_error })))
}

fn sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let tab = kn_sweep(&cfg.sweep, &cfg.sweep_kn.kns)?;
    let mut t = Table::new(&[
        "kn",
        "max_gamma",
        "lambda_max",
        "lambda_min",
        "kappa",
        "kappa_worst",
        "tikhonov_error",
        "rank",
        "gamma_slope",
        "kappa_slope",
        "lambda_min_slope",
        "tikhonov_slope",
    ]);
    for r in &tab.rows {
        t.push(vec![
            num(r.kn),
            num(r.max_gamma),
            num(r.lambda_max),
            num(r.lambda_min),
            num(r.kappa),
            num(r.kappa_worst),
            num(r.tikhonov_error),
            r.rank.to_string(),
            opt(tab.gamma_slope),
            opt(tab.kappa_slope),
            opt(tab.lambda_min_slope),
            opt(tab.tikhonov_slope),
        ]);
    }
    let summary = json!({
        "variant": cfg.sweep.variant,
        "gamma_slope": tab.gamma_slope,
        "kappa_slope": tab.kappa_slope,
        "lambda_min_slope": tab.lambda_min_slope,
        "tikhonov_slope": tab.tikhonov_slope,
    });
    Ok(Outcome::new(t, summary))
}

fn fp_spectrum(cfg: &ExperimentConfig) -> Result<Outcome> {
    let c = &cfg.fp_spectrum;
    let rep = fp_convergence_report(c.profile, &c.eps, c.order)?;
    let mut t = Table::new(&["eps", "xi1", "error", "worst_mode", "order"]);
    for r in &rep.rows {
        t.push(vec![num(r.eps), num(r.xi1), num(r.error), r.worst_mode.to_string(), opt(rep.order)]);
    }
    Ok(Outcome::new(t, json!({ "profile": c.profile, "order": rep.order })))
}

fn xi_table(cfg: &ExperimentConfig) -> Result<Outcome> {
    let c = &cfg.xi_moments;
    let k = normalize_kernel(c.profile, c.eps)?;
    let s = legendre_moments(&k, c.order)?;
    let xi = xi_moments(&k, c.order)?;
    let lam = collision_eigenvalues(&s, c.eps);
    let fp = fp_eigenvalues(xi.xi1(), c.order)?;
    let mut t = Table::new(&["n", "sigma_n", "xi_n", "lambda_n", "lambda_fp"]);
    for n in 0..=c.order {
        t.push(vec![n.to_string(), num(s.sigma_n[n]), num(xi.xi[n]), num(lam[n]), num(fp[n])]);
    }
    Ok(Outcome::new(t, json!({ "profile": c.profile, "eps": c.eps, "norm_const": k.norm_const })))
}

fn moment_invert(cfg: &ExperimentConfig) -> Result<Outcome> {
    let c = &cfg.moment_invert;
    let quad = sphere_quadrature(c.band)?;
    let suite = random_suite(c.band, c.rank, c.experiments, c.seed);
    let sys = assemble_xi_system(&suite, c.band, &quad)?;
    let k = normalize_kernel(c.profile, c.eps)?;
    let xi = xi_moments(&k, c.band)?.xi;
    let b = sys.reduce(&sys.forward(&xi)?, xi[0]);
    let est = solve_xi(&sys.a, &b, c.delta, c.seed)?;
    let mut t = Table::new(&["j", "xi_true", "xi_estimate", "abs_error", "error_bar"]);
    for j in 0..est.xi.len() {
        let e = est.xi[j];
        t.push(vec![(j + 1).to_string(), num(xi[j + 1]), num(e), num((e - xi[j + 1]).abs()), num(est.error_bars[j])]);
    }
    Ok(Outcome::new(t, json!({ "xi0": xi[0], "experiments": c.experiments })))
}

fn kappa(cfg: &ExperimentConfig) -> Result<Outcome> {
    let tab = kappa_epsilon(&cfg.kappa_epsilon)?;
    let mut t = Table::new(&["eps", "xi1", "xi1_error", "kappa", "kappa_over_delta_eps", "true_sup"]);
    for r in &tab.rows {
        t.push(vec![num(r.eps), num(r.xi1), num(r.xi1_error), num(r.kappa), num(r.kappa_over_delta_eps), num(r.true_sup)]);
    }
    let ratios: Vec<f64> = tab.rows.windows(2).map(|w| w[1].kappa / w[0].kappa).collect();
    Ok(Outcome::new(t, json!({ "slope": tab.slope, "halving_ratios": ratios })))
}

fn hermite(cfg: &ExperimentConfig) -> Result<Outcome> {
    let c = &cfg.hermite;
    let tab = hermite_conditioning(&c.eps, c.rows, c.columns)?;
    let mut t = Table::new(&["eps", "m", "row_norm", "slope", "coefficient_error"]);
    for r in &tab.rows {
        let err = hermite_coefficient_error(r.eps, c.delta, c.rows, c.seed)?;
        for (m, norm) in r.row_norms.iter().enumerate() {
            t.push(vec![num(r.eps), m.to_string(), num(*norm), opt(tab.slopes[m]), num(err)]);
        }
    }
    Ok(Outcome::new(t, json!({ "slopes": tab.slopes })))
}

fn recoverable(cfg: &ExperimentConfig) -> Result<Outcome> {
    let r = &cfg.recoverable;
    let n0 = recoverable_terms(r.delta, r.eps)?;
    let err = full_recovery_error(r.smoothness, r.delta, r.eps)?;
    let mut t = Table::new(&["delta", "eps", "n0", "smoothness", "predicted_error"]);
    t.push(vec![num(r.delta), num(r.eps), n0.to_string(), r.smoothness.to_string(), num(err)]);
    Ok(Outcome { table: t, summary: json!({ "n0": n0 }), stdout: Some(n0.to_string()) })
}
