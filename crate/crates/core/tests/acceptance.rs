//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;
use std::time::Instant;

use plaplab::exact::{barenblatt_fast_diffusion, linear_solution, AnalyticSolution};
use plaplab::functionals::{
    calibrate_term_vi, fundamental_terms, make_cutoff, ConvergenceReport, Cutoff, ReferenceSolution,
    TermViForm,
};
use plaplab::grid::{Grid, Region, SpaceTimeField};
use plaplab::solver::{solve_regularized, BoundaryData, SolveLog, SolverParams};
use plaplab::verifier::{
    benilan_crandall_analytic, benilan_crandall_check, bounded_sequence, convergence_study,
    field_tol_disc, maximum_principle_check, onedim_measurement, scalar_inequality_campaign,
    solve_sweep, summability_entry, summability_verdict, sweep_tol_disc, vector_inequality_campaign,
    verify_case_p_above_threshold, verify_energy_lemma, verify_general_estimate, verify_theta_bound,
    SweepPlan, SweepSolve, Verdict,
};

fn line(n: &str, name: &str, pass: bool, detail: String) {
    println!("criterion {n} [{name}]: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn check(n: &str, name: &str, verdicts: &[Verdict]) -> bool {
    for v in verdicts {
        println!("    {}", v.summary());
    }
    let pass = verdicts.iter().all(|v| v.pass);
    line(n, name, pass, format!("{} verdicts", verdicts.len()));
    pass
}

fn barenblatt(p: f64, c: f64) -> AnalyticSolution {
    barenblatt_fast_diffusion(p, 1, c, 1.0).unwrap()
}

fn line_grid(cells: usize) -> Grid {
    Grid::line((-4.0, 4.0), cells, (0.0, 1.0), cells).unwrap()
}

fn cutoff_1d(grid: &Grid) -> Cutoff {
    make_cutoff(grid, &[(-2.5, 2.5)], &[1.0], Some(((0.1, 0.9), 0.3))).unwrap()
}

fn sweep_1d(p: f64, c: f64, cells: usize) -> Vec<SweepSolve> {
    let sol = barenblatt(p, c);
    let plan = SweepPlan::default_for(p);
    solve_sweep(&plan, &line_grid(cells), &SolverParams::new(p, 1.0), &BoundaryData::from_solution(&sol)).unwrap()
}

struct BaseSolve {
    field: SpaceTimeField,
    log: SolveLog,
    seconds: f64,
}

fn oracle_solve(cells: usize) -> BaseSolve {
    let sol = barenblatt(1.5, 1.0);
    let start = Instant::now();
    let (field, log) =
        solve_regularized(&line_grid(cells), &SolverParams::new(1.5, 1e-3), &BoundaryData::from_solution(&sol))
            .unwrap();
    BaseSolve {
        field,
        log,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn oracle_base() -> &'static BaseSolve {
    static S: OnceLock<BaseSolve> = OnceLock::new();
    S.get_or_init(|| oracle_solve(200))
}

fn oracle_fine() -> &'static BaseSolve {
    static S: OnceLock<BaseSolve> = OnceLock::new();
    S.get_or_init(|| oracle_solve(400))
}

fn standard_report(cells: usize) -> (ConvergenceReport, Vec<Verdict>) {
    let sol = barenblatt(1.5, 1.0);
    convergence_study(
        &SweepPlan::default_for(1.5),
        &line_grid(cells),
        &SolverParams::new(1.5, 1.0),
        &BoundaryData::from_solution(&sol),
        &ReferenceSolution::Analytic(sol),
    )
    .unwrap()
}

fn standard() -> &'static (ConvergenceReport, Vec<Verdict>) {
    static S: OnceLock<(ConvergenceReport, Vec<Verdict>)> = OnceLock::new();
    S.get_or_init(|| standard_report(200))
}

fn standard_fine() -> &'static (ConvergenceReport, Vec<Verdict>) {
    static S: OnceLock<(ConvergenceReport, Vec<Verdict>)> = OnceLock::new();
    S.get_or_init(|| standard_report(400))
}

fn sweep_p16() -> &'static Vec<SweepSolve> {
    static S: OnceLock<Vec<SweepSolve>> = OnceLock::new();
    S.get_or_init(|| sweep_1d(1.6, 0.1, 200))
}

fn sweep_p13() -> &'static Vec<SweepSolve> {
    static S: OnceLock<Vec<SweepSolve>> = OnceLock::new();
    S.get_or_init(|| sweep_1d(1.3, 0.001, 200))
}

const BUMP_AMPLITUDE: f64 = 100.0;
const PLANE_T: f64 = 2.0;

fn plane_grid() -> Grid {
    Grid::plane((-1.0, 1.0), 32, (-1.0, 1.0), 32, (0.0, PLANE_T), 40).unwrap()
}

fn bump() -> BoundaryData {
    BoundaryData::from_fn("cosine bump", |x, t| {
        if t == 0.0 {
            BUMP_AMPLITUDE * (FRAC_PI_2 * x[0]).cos() * (FRAC_PI_2 * x[1]).cos()
        } else {
            0.0
        }
    })
}

fn sweep_2d() -> &'static Vec<SweepSolve> {
    static S: OnceLock<Vec<SweepSolve>> = OnceLock::new();
    S.get_or_init(|| {
        let plan = SweepPlan::default_for(1.2);
        solve_sweep(&plan, &plane_grid(), &SolverParams::new(1.2, 1.0), &bump()).unwrap()
    })
}

fn cutoff_2d(grid: &Grid) -> Cutoff {
    let t = PLANE_T;
    make_cutoff(grid, &[(-0.8, 0.8), (-0.8, 0.8)], &[0.3, 0.3], Some(((0.1 * t, 0.9 * t), 0.3 * t))).unwrap()
}

fn eps_of(sweep: &[SweepSolve]) -> Vec<f64> {
    sweep.iter().map(|s| s.eps).collect()
}

#[test]
fn criterion_01_oracle_accuracy() {
    let sol = barenblatt(1.5, 1.0);
    let rel = |b: &BaseSolve| {
        let exact = sol.sample(b.field.grid()).unwrap();
        let zero = SpaceTimeField::zeros(b.field.grid());
        plaplab::functionals::l2_distance(&b.field, &exact).unwrap()
            / plaplab::functionals::l2_distance(&exact, &zero).unwrap()
    };
    let (base, fine) = (oracle_base(), oracle_fine());
    let (e0, e1) = (rel(base), rel(fine));
    let pass = e0 <= 2e-2 && e0 / e1 >= 1.5 && base.seconds <= 60.0 && base.log.converged;
    line(
        "1",
        "oracle accuracy",
        pass,
        format!("rel L2 {e0:.3e} -> {e1:.3e}, ratio {:.2}, {:.2} s", e0 / e1, base.seconds),
    );
    assert!(pass);
}

#[test]
fn criterion_02_affine_exactness() {
    let grid = Grid::plane((0.0, 1.0), 12, (0.0, 1.0), 10, (0.0, 0.5), 8).unwrap();
    let line_g = Grid::line((0.0, 1.0), 32, (0.0, 0.5), 16).unwrap();
    let mut worst = 0.0_f64;
    for (g, sol) in [
        (&line_g, linear_solution(&[1.0], 0.0).unwrap()),
        (&grid, linear_solution(&[2.0, -1.0], 0.3).unwrap()),
    ] {
        let exact = sol.sample(g).unwrap();
        for p in [1.1, 1.5, 1.9] {
            for eps in [0.0, 0.5, 1.0] {
                let (u, log) = solve_regularized(g, &SolverParams::new(p, eps), &BoundaryData::from_solution(&sol)).unwrap();
                assert_eq!(log.floored, eps == 0.0);
                let err = u.values().iter().zip(exact.values()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                worst = worst.max(err);
            }
        }
    }
    let pass = worst <= 1e-9;
    line("2", "affine exactness", pass, format!("max nodal error {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_03_sign_of_w() {
    let (coarse, fine) = (&standard().0, &standard_fine().0);
    let tol = sweep_tol_disc(coarse);
    let tol_fine = sweep_tol_disc(fine);
    let mut verdicts: Vec<Verdict> = standard().1.iter().filter(|v| v.name == "W_eps sign").cloned().collect();
    for e in &coarse.entries {
        verdicts.push(Verdict::new("W_eps within sweep tol_disc", e.w_eps, 0.0, tol, Default::default()).detail("eps", e.eps));
    }
    verdicts.push(
        Verdict::new("tol_disc shrink under refinement", 1.5, tol / tol_fine, 0.0, Default::default())
            .detail("tol_disc", tol)
            .detail("tol_disc_refined", tol_fine),
    );
    assert!(check("3", "sign of W_eps", &verdicts));
}

#[test]
fn criterion_04_uniform_gradient_bound() {
    let report = &standard().0;
    let n = report.entries.len();
    let (a, b) = (report.entries[n - 2].grad_lp_mass, report.entries[n - 1].grad_lp_mass);
    let mut verdicts: Vec<Verdict> =
        standard().1.iter().filter(|v| v.name == "uniform gradient bound").cloned().collect();
    verdicts.push(Verdict::new("gradient mass variation", (a - b).abs() / a.max(b), 0.2, 0.0, Default::default()));
    println!("    measured C_p {:.4}, K {:.4}", report.c_p, report.k_bound);
    assert!(check("4", "uniform gradient bound", &verdicts));
}

#[test]
fn criterion_05_convergence() {
    let (report, all) = standard();
    let last = report.entries.last().unwrap();
    let first = &report.entries[0];
    let mut verdicts: Vec<Verdict> = all.iter().filter(|v| v.name.contains("decreasing")).cloned().collect();
    verdicts.push(Verdict::new("final relative L2 distance", last.rel_l2_dist, 0.05, 0.0, Default::default()));
    verdicts.push(Verdict::new("final relative gradient distance", last.rel_grad_lp_dist, 0.05, 0.0, Default::default()));
    verdicts.push(Verdict::new("O_eps shrinks toward 0", last.o_eps, 0.1 * first.o_eps, 0.0, Default::default()));
    assert!(check("5", "convergence", &verdicts));
}

#[test]
fn criterion_06_fundamental_identity() {
    let (p, eps) = (1.6, 0.1);
    let alpha = 0.5 * (p - 2.0);
    let sol = barenblatt(p, 1.0);
    let terms = |cells: usize| {
        let g = line_grid(cells);
        let (u, _) = solve_regularized(&g, &SolverParams::new(p, eps), &BoundaryData::from_solution(&sol)).unwrap();
        let c = cutoff_1d(&g);
        (fundamental_terms(&u, &c, p, eps, alpha).unwrap(), u, c)
    };
    let (coarse, field, cutoff) = terms(200);
    let (fine, _, _) = terms(400);
    let form = calibrate_term_vi(&coarse, &fine);
    let (r0, r1) = (coarse.relative_residual_for(form), fine.relative_residual_for(form));
    println!(
        "    term VI form {:?}; other form residual {:.3e}",
        form,
        coarse.relative_residual_for(match form {
            TermViForm::GradV => TermViForm::GradU,
            TermViForm::GradU => TermViForm::GradV,
        })
    );
    let verdicts = vec![
        Verdict::new("relative identity residual", r0, 0.05, 0.0, Default::default()),
        Verdict::new("residual shrink under refinement", 1.5, r0 / r1, 0.0, Default::default()).detail("refined", r1),
        verify_general_estimate(&field, &cutoff, p, eps, alpha, 0.1).unwrap(),
        verify_case_p_above_threshold(&field, &cutoff, p, eps, 0.05).unwrap(),
    ];
    assert!(check("6", "fundamental identity", &verdicts));
}

#[test]
fn criterion_07a_threshold_regime_bounded() {
    let sweep = sweep_p16();
    let values: Vec<f64> = sweep
        .iter()
        .map(|s| {
            let c = cutoff_1d(s.field.grid());
            let v = verify_case_p_above_threshold(&s.field, &c, 1.6, s.eps, 0.05).unwrap();
            assert!(v.pass, "{}", v.summary());
            v.details["weighted_hessian"]
        })
        .collect();
    let v = bounded_sequence("weighted Hessian, p = 1.6", &eps_of(sweep), &values, 1.5);
    assert!(check("7a", "p = 1.6 weighted Hessian bounded", &[v]));
}

#[test]
fn criterion_07b_onedim_bounded() {
    let sweep = sweep_p13();
    let mut weighted = Vec::new();
    let mut ratios = Vec::new();
    for s in sweep {
        let m = onedim_measurement(&s.field, &cutoff_1d(s.field.grid()), 1.3, s.eps).unwrap();
        weighted.push(m.details["weighted_hessian"]);
        ratios.push(m.value);
    }
    let eps = eps_of(sweep);
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let verdicts = vec![
        bounded_sequence("weighted second derivative, n = 1, p = 1.3", &eps, &weighted, 1.5),
        Verdict::new("majorant ratio spread", max / min, 4.0, 0.0, Default::default()).detail("C_p_measured", max),
    ];
    assert!(check("7b", "n = 1, p = 1.3 bounded", &verdicts));
}

#[test]
fn criterion_07c_theta_bound() {
    let sweep = sweep_2d();
    let mut literal = Vec::new();
    let mut matched = Vec::new();
    let mut verdicts = Vec::new();
    for s in sweep {
        let c = cutoff_2d(s.field.grid());
        let m = verify_theta_bound(&s.field, &c, 1.2, s.eps, 1.2).unwrap();
        literal.push(m.value);
        matched.push(m.details["weighted_hessian_matched"]);
        let alpha = 0.5 * (1.2 - 1.0) * (1.2 - 2.0);
        verdicts.push(verify_energy_lemma(&s.field, &c, 1.2, s.eps, alpha, 0.05).unwrap());
    }
    let eps = eps_of(sweep);
    verdicts.push(bounded_sequence("theta-weighted Hessian", &eps, &literal, 1.5));
    verdicts.push(bounded_sequence("theta-weighted Hessian, half exponent", &eps, &matched, 1.5));
    assert!(check("7c", "p = 1.2, theta = 1.2 bounded", &verdicts));
}

#[test]
fn criterion_08_ut_summability() {
    let one = sweep_p16();
    let g1 = one[0].field.grid();
    let r1 = Region::from_box(g1, &[(-2.5, 2.5)], (0.1, 0.9)).unwrap();
    let e1: Vec<_> = one.iter().map(|s| summability_entry(&s.field, 1.6, s.eps, 2.0, &r1).unwrap()).collect();
    let two = sweep_2d();
    let g2 = two[0].field.grid();
    let r2 = Region::from_box(g2, &[(-0.7, 0.7), (-0.7, 0.7)], (0.1 * PLANE_T, 0.9 * PLANE_T)).unwrap();
    let e2: Vec<_> = two.iter().map(|s| summability_entry(&s.field, 1.2, s.eps, 1.2, &r2).unwrap()).collect();
    let verdicts = vec![summability_verdict(1.6, 2.0, &e1), summability_verdict(1.2, 1.2, &e2)];
    assert!(check("8", "u_t summability", &verdicts));
}

#[test]
fn criterion_09_inequality_campaigns() {
    let start = Instant::now();
    let mut pass = true;
    let mut worst = f64::NEG_INFINITY;
    for p in [1.1, 1.5, 1.9] {
        let s = scalar_inequality_campaign(p, 100_000, 2024).unwrap();
        let v = vector_inequality_campaign(p, 100_000, 2024);
        for c in s.violations.iter().chain(&v.violations) {
            println!("    counterexample p = {p}: {c:?}");
        }
        pass &= s.passed() && v.passed();
        worst = worst.max(s.max_excess).max(v.max_excess);
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 10.0;
    line("9", "inequality campaigns", pass, format!("max excess {worst:.3e}, {secs:.2} s"));
    assert!(pass);
}

#[test]
fn criterion_10_benilan_crandall() {
    let sol = barenblatt(1.5, 1.0);
    let base = oracle_base();
    let grid = base.field.grid();
    let analytic = benilan_crandall_analytic(&sol, grid, 1.5, 1.0, 1e-9).unwrap();
    let tol = field_tol_disc(&base.field, 1.5, 1e-3).unwrap();
    let solved = benilan_crandall_check(&base.field, 1.5, 1.0, tol).unwrap();
    assert!(check("10", "Benilan-Crandall", &[analytic, solved]));
}

#[test]
fn criterion_11_maximum_principle() {
    let mut fields: Vec<&SpaceTimeField> = vec![&oracle_base().field, &oracle_fine().field];
    for s in sweep_p16().iter().chain(sweep_p13()).chain(sweep_2d()) {
        fields.push(&s.field);
    }
    let verdicts: Vec<Verdict> = fields.iter().map(|f| maximum_principle_check(f, 1e-9)).collect();
    let pass = verdicts.iter().all(|v| v.pass);
    let worst = verdicts.iter().map(|v| v.lhs).fold(0.0, f64::max);
    line("11", "maximum principle", pass, format!("{} solves, worst excess {worst:.2e}", verdicts.len()));
    assert!(pass);
}
