//! The five pipelines behind the subcommands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact::pde_residual_field;
use crate::functionals::{
    calibrate_term_vi, fundamental_terms, gradient_lp_distance, gradient_p_mass, j_eps, l2_distance,
    ut_theta_mass, ConvergenceReport, ReferenceSolution,
};
use crate::grid::SpaceTimeField;
use crate::solver::{solve_regularized, weak_form_residual};
use crate::verifier::{
    benilan_crandall_check, bounded_sequence, convergence_from_solves, field_tol_disc,
    maximum_principle_check, onedim_measurement, scalar_inequality_campaign, solve_sweep,
    summability_entry, summability_verdict, vector_inequality_campaign, verify_case_p_above_threshold,
    verify_energy_lemma, verify_general_estimate, verify_theta_bound, SweepSolve, Verdict,
};

use super::config::{DataSpec, ExperimentConfig, ExperimentKind, ReferenceKind};
use super::field_io::export_field;
use super::report::{write_csv, CampaignRow, RefineRow, Report, Runtime, SolveSummary, SweepRow};

/// Slack of the maximum-principle check.
const MAX_PRINCIPLE_SLACK: f64 = 1e-9;

/// Required shrink factor between consecutive refinement levels.
const REFINE_SHRINK: f64 = 1.5;

/// Runs the configured experiment, writing every artifact into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    std::fs::create_dir_all(out)?;
    let runtime = Runtime {
        version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
        seed: cfg.seed,
    };
    let mut report = Report::new(cfg.kind.name(), cfg.echo.clone(), runtime);
    if cfg.kind != ExperimentKind::PropertyTests {
        report.grid = Some(cfg.grid.describe());
        report.data = Some(cfg.boundary()?.label().to_string());
    }
    match cfg.kind {
        ExperimentKind::Solve => solve(cfg, out, &mut report)?,
        ExperimentKind::Sweep => sweep(cfg, out, &mut report)?,
        ExperimentKind::Verify => verify(cfg, out, &mut report)?,
        ExperimentKind::Refine => refine(cfg, out, &mut report)?,
        ExperimentKind::PropertyTests => proptest(cfg, out, &mut report)?,
    }
    report.finish();
    report.write(&out.join("report.json"))?;
    Ok(report)
}

fn field_path(out: &Path, index: usize) -> PathBuf {
    out.join(format!("u_eps_{index}.plapf"))
}

/// Largest strong-form residual away from the first and last level.
fn max_interior_residual(field: &SpaceTimeField, p: f64, eps: f64) -> Result<f64> {
    let r = pde_residual_field(field, p, eps)?;
    let levels = field.grid().levels();
    Ok((1..levels - 1)
        .flat_map(|l| r.level(l).iter().copied())
        .fold(0.0, |m, v: f64| m.max(v.abs())))
}

fn barenblatt_shift(cfg: &ExperimentConfig) -> Option<f64> {
    match cfg.data {
        DataSpec::Barenblatt { t0, .. } if cfg.p < 2.0 => Some(t0),
        _ => None,
    }
}

/// Row of the ε table; the distance and `W/M/O` columns are filled later.
fn sweep_row(cfg: &ExperimentConfig, field: &SpaceTimeField, eps: f64) -> Result<SweepRow> {
    let p = cfg.p;
    let mut row = SweepRow {
        eps,
        j_eps: Some(j_eps(field, p, eps, None)),
        grad_lp: Some(gradient_p_mass(field, p)),
        ut_theta_mass: Some(ut_theta_mass(field, cfg.summability_theta(), &cfg.region()?)?),
        ..Default::default()
    };
    if eps > 0.0 {
        let terms = fundamental_terms(field, &cfg.cutoff_on(field.grid())?, p, eps, cfg.estimate.alpha)?;
        row.set_terms(terms.as_array());
    }
    Ok(row)
}

fn fill_convergence(rows: &mut [SweepRow], conv: &ConvergenceReport) {
    for (row, e) in rows.iter_mut().zip(&conv.entries) {
        row.w_eps = Some(e.w_eps);
        row.m_eps = Some(e.m_eps);
        row.o_eps = Some(e.o_eps);
        row.l2_dist = Some(e.l2_dist);
        row.grad_lp_dist = Some(e.grad_lp_dist);
    }
}

fn solve(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let (field, log) = solve_regularized(&cfg.grid, &cfg.solver_params(cfg.eps), &cfg.boundary()?)?;
    report.add_solve(SolveSummary::new(cfg.eps, cfg.grid.describe(), &log));
    export_field(&field, cfg.p, cfg.eps, &out.join("u.plapf"))?;
    let residual = max_interior_residual(&field, cfg.p, cfg.eps)?;
    report.value("pde_residual.max_interior", residual);
    let mut row = sweep_row(cfg, &field, cfg.eps)?;
    if let Some(sol) = cfg.analytic()? {
        let exact = sol.sample(&cfg.grid)?;
        let err = field
            .values()
            .iter()
            .zip(exact.values())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let l2 = l2_distance(&field, &exact)?;
        let norm = l2_distance(&exact, &SpaceTimeField::zeros(&cfg.grid))?;
        report.value("solve_regularized.max_nodal_error", err);
        report.value("l2_distance.absolute", l2);
        if norm > 0.0 {
            report.value("l2_distance.relative", l2 / norm);
        }
        row.l2_dist = Some(l2);
        row.grad_lp_dist = Some(gradient_lp_distance(&field, &exact, cfg.p)?);
    }
    report.verdicts.push(maximum_principle_check(&field, MAX_PRINCIPLE_SLACK));
    if let Some(t0) = barenblatt_shift(cfg) {
        let tol = field_tol_disc(&field, cfg.p, cfg.eps)?;
        report.verdicts.push(benilan_crandall_check(&field, cfg.p, t0 + cfg.grid.t(0), tol)?);
    }
    write_csv(&out.join("solve.csv"), &[row])
}

fn reference_for(cfg: &ExperimentConfig, solves: &[SweepSolve]) -> Result<ReferenceSolution> {
    match cfg.reference {
        ReferenceKind::Analytic => match cfg.analytic()? {
            Some(sol) => Ok(ReferenceSolution::Analytic(sol)),
            None => Err(Error::Config {
                path: "reference".into(),
                message: "data has no closed form".into(),
            }),
        },
        ReferenceKind::SmallestEps => {
            let last = solves.last().expect("plans hold at least three ε values");
            Ok(ReferenceSolution::Discrete {
                field: last.field.clone(),
                label: format!("regularized solve at eps = {} (smallest in the sweep)", last.eps),
            })
        }
    }
}

/// Solves the plan, exports every field and fills the ε table.
fn sweep_common(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<(Vec<SweepSolve>, Vec<SweepRow>)> {
    let solves = solve_sweep(&cfg.sweep, &cfg.grid, &cfg.solver_params(cfg.eps), &cfg.boundary()?)?;
    for (k, s) in solves.iter().enumerate() {
        report.add_solve(SolveSummary::new(s.eps, cfg.grid.describe(), &s.log));
        export_field(&s.field, cfg.p, s.eps, &field_path(out, k))?;
        report.verdicts.push(maximum_principle_check(&s.field, MAX_PRINCIPLE_SLACK));
    }
    let mut rows = solves
        .par_iter()
        .map(|s| sweep_row(cfg, &s.field, s.eps))
        .collect::<Result<Vec<_>>>()?;
    let reference = reference_for(cfg, &solves)?;
    report.reference = Some(reference.label());
    let (conv, verdicts) = convergence_from_solves(&cfg.sweep, &cfg.grid, &solves, &reference)?;
    fill_convergence(&mut rows, &conv);
    report.constants.insert("C_p".into(), conv.c_p);
    report.constants.insert("K".into(), conv.k_bound);
    report.verdicts.extend(verdicts);
    report.convergence = Some(conv);
    Ok((solves, rows))
}

fn sweep(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let (_, rows) = sweep_common(cfg, out, report)?;
    write_csv(&out.join("sweep.csv"), &rows)
}

fn verify(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let (solves, rows) = sweep_common(cfg, out, report)?;
    let (p, est) = (cfg.p, cfg.estimate);
    let dim = cfg.grid.dim();
    let cutoff = cfg.cutoff()?;
    let eps: Vec<f64> = solves.iter().map(|s| s.eps).collect();
    let per_eps = solves
        .par_iter()
        .map(|s| -> Result<(Vec<Verdict>, [f64; 4])> {
            let mut vs = Vec::new();
            let mut m = [f64::NAN; 4];
            if s.eps > 0.0 {
                vs.push(verify_general_estimate(&s.field, &cutoff, p, s.eps, est.alpha, est.sigma)?);
            }
            if p > 1.5 {
                let v = verify_case_p_above_threshold(&s.field, &cutoff, p, s.eps, 0.5 * (2.0 * p - 3.0))?;
                m[0] = v.details["weighted_hessian"];
                vs.push(v);
            }
            if p < 1.5 {
                vs.push(verify_energy_lemma(&s.field, &cutoff, p, s.eps, est.alpha, est.kappa)?);
                let t = verify_theta_bound(&s.field, &cutoff, p, s.eps, est.theta)?;
                m[1] = t.value;
            }
            if dim == 1 {
                let o = onedim_measurement(&s.field, &cutoff, p, s.eps)?;
                m[2] = o.details["weighted_hessian"];
                m[3] = o.value;
            }
            if let Some(t0) = barenblatt_shift(cfg) {
                let tol = field_tol_disc(&s.field, p, s.eps)?;
                vs.push(benilan_crandall_check(&s.field, p, t0 + cfg.grid.t(0), tol)?);
            }
            Ok((vs, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut measured: [Vec<f64>; 4] = Default::default();
    for (vs, m) in per_eps {
        report.verdicts.extend(vs);
        for k in 0..4 {
            measured[k].push(m[k]);
        }
    }
    let bound = |name: &str, values: &[f64]| bounded_sequence(name, &eps, values, 1.5);
    if p > 1.5 {
        report.verdicts.push(bound("weighted Hessian (p > 3/2)", &measured[0]));
    }
    if p < 1.5 {
        report.verdicts.push(bound("theta-weighted Hessian", &measured[1]));
    }
    if dim == 1 {
        report.verdicts.push(bound("one-dimensional weighted second derivative", &measured[2]));
        let ratios = &measured[3];
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let spread = if max == 0.0 { 0.0 } else { max / min };
        report.constants.insert("C_onedim".into(), max);
        report
            .verdicts
            .push(Verdict::new("one-dimensional majorant ratio spread", spread, 4.0, 0.0, Default::default()));
    }
    if p < 1.5 {
        let l = measured[1].iter().cloned().fold(0.0, f64::max);
        report.constants.insert("L_theta".into(), l);
    }
    let theta = cfg.summability_theta();
    let region = cfg.region()?;
    let entries = solves
        .par_iter()
        .map(|s| summability_entry(&s.field, p, s.eps, theta, &region))
        .collect::<Result<Vec<_>>>()?;
    report.verdicts.push(summability_verdict(p, theta, &entries));
    write_csv(&out.join("verify.csv"), &rows)
}

fn refine(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let (p, eps, alpha) = (cfg.p, cfg.eps, cfg.estimate.alpha);
    if !(eps > 0.0) {
        return Err(Error::Config {
            path: "solver.eps".into(),
            message: "a refinement study needs ε > 0".into(),
        });
    }
    let boundary = cfg.boundary()?;
    let analytic = cfg.analytic()?;
    let levels = cfg
        .sweep
        .refinements
        .par_iter()
        .map(|&f| -> Result<_> {
            let grid = cfg.grid.refined(f)?;
            let (field, log) = solve_regularized(&grid, &cfg.solver_params(eps), &boundary)?;
            let cutoff = cfg.cutoff_on(&grid)?;
            let terms = fundamental_terms(&field, &cutoff, p, eps, alpha)?;
            let weak = weak_form_residual(&field, &cutoff, p, eps)?;
            let dist = match &analytic {
                Some(sol) => {
                    let exact = sol.sample(&grid)?;
                    Some((l2_distance(&field, &exact)?, gradient_lp_distance(&field, &exact, p)?))
                }
                None => None,
            };
            Ok((f, grid, field, log, terms, weak, dist))
        })
        .collect::<Result<Vec<_>>>()?;
    let form = calibrate_term_vi(&levels[0].4, &levels[levels.len() - 1].4);
    report.term_vi_form = Some(format!("{form:?}"));
    let mut rows = Vec::new();
    for (k, (f, grid, field, log, terms, weak, dist)) in levels.iter().enumerate() {
        report.add_solve(SolveSummary::new(eps, grid.describe(), log));
        report.verdicts.push(maximum_principle_check(field, MAX_PRINCIPLE_SLACK));
        export_field(field, p, eps, &out.join(format!("u_refine_{k}.plapf")))?;
        let mut t = terms.clone();
        t.vi_form = form;
        let a = t.as_array();
        rows.push(RefineRow {
            refinement: *f,
            h: grid.h(0),
            tau: grid.tau(),
            l2_dist: dist.map(|d| d.0),
            grad_lp_dist: dist.map(|d| d.1),
            identity_residual: t.relative_residual(),
            weak_residual: *weak,
            term_I: a[0],
            term_II: a[1],
            term_III: a[2],
            term_IV: a[3],
            term_V: a[4],
            term_VI: a[5],
            term_VII: a[6],
            picard_iterations: log.total_picard_iterations(),
        });
    }
    let shrink = |name: &str, a: f64, b: f64, fa: usize, fb: usize| {
        Verdict::new(format!("{name} shrinks under refinement"), REFINE_SHRINK, a / b, 0.0, Default::default())
            .detail("refinement", fa as f64)
            .detail("coarse", a)
            .detail("refined", b)
            .detail("fine_refinement", fb as f64)
    };
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (fa, fb) = (a.refinement, b.refinement);
        report
            .verdicts
            .push(shrink("fundamental identity residual", a.identity_residual, b.identity_residual, fa, fb));
        report
            .verdicts
            .push(shrink("weak-form residual", a.weak_residual.abs(), b.weak_residual.abs(), fa, fb));
    }
    // Distances to a closed form of the ε = 0 equation include the regularization
    // error, so they are recorded but not asserted to shrink.
    if let Some(last) = rows.last() {
        if let Some(d) = last.l2_dist {
            report.value("l2_distance.finest", d);
        }
        report.value("fundamental_terms.relative_residual", last.identity_residual);
        report.value("weak_form_residual.finest", last.weak_residual);
    }
    write_csv(&out.join("refine.csv"), &rows)
}

fn proptest(cfg: &ExperimentConfig, out: &Path, report: &mut Report) -> Result<()> {
    let campaigns = cfg
        .proptest_p
        .par_iter()
        .map(|&p| -> Result<_> {
            Ok([
                scalar_inequality_campaign(p, cfg.samples, cfg.seed)?,
                vector_inequality_campaign(p, cfg.samples, cfg.seed),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let campaigns: Vec<_> = campaigns.into_iter().flatten().collect();
    let rows: Vec<CampaignRow> = campaigns
        .iter()
        .map(|c| CampaignRow {
            inequality: c.name.clone(),
            p: c.p,
            seed: c.seed,
            samples: c.samples,
            violations: c.violations.len(),
            max_excess: c.max_excess,
        })
        .collect();
    report.campaigns = campaigns;
    write_csv(&out.join("proptest.csv"), &rows)
}
