//! Backward-Euler / Picard solver for the regularized equation
//! `u_t = div((|∇u|² + ε²)^{(p-2)/2} ∇u) + f`.
//!
//! Each time step freezes the diffusivity from the current iterate, solves
//! the symmetric system `(I − τ div(A∇)) u = u_old + τ f`, and repeats until
//! the relative update drops below `picard_tol`. When the plain update stops
//! shrinking, the fixed-point map is under-relaxed. Diffusivities live on
//! cell faces; nodal gradients are central in the interior and second-order
//! one-sided on `∂Ω`.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::AnalyticSolution;
use crate::functionals::Cutoff;
use crate::grid::{integrate, nodal_gradients, Grid, Region, SpaceTimeField};

/// Gradient magnitude below which the unregularized flux is taken as zero.
pub const CRITICAL_GRADIENT: f64 = 1e-14;

/// Lower limit of the adaptive under-relaxation of the Picard map.
pub const MIN_RELAXATION: f64 = 0.125;

/// Default floor on `|∇u|` used when `ε = 0`.
pub const DEFAULT_GRADIENT_FLOOR: f64 = 1e-8;

/// How the nonlinear diffusivity `A(|∇u|²)` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Diffusivity {
    /// `(|∇u|² + ε²)^{(p-2)/2}`, ε > 0.
    Regularized { p: f64, eps: f64 },
    /// `max(|∇u|², δ²)^{(p-2)/2}`: the stand-in for ε = 0 solves.
    Floored { p: f64, floor: f64 },
    /// `|∇u|^{p-2}`, with zero flux at critical points.
    Singular { p: f64 },
}

impl Diffusivity {
    /// Coefficient used when evaluating residuals and functionals.
    pub fn for_residual(p: f64, eps: f64) -> Self {
        if eps > 0.0 {
            Diffusivity::Regularized { p, eps }
        } else {
            Diffusivity::Singular { p }
        }
    }

    #[inline]
    pub fn coefficient(&self, g2: f64) -> f64 {
        match *self {
            Diffusivity::Regularized { p, eps } => (g2 + eps * eps).powf(0.5 * (p - 2.0)),
            Diffusivity::Floored { p, floor } => g2.max(floor * floor).powf(0.5 * (p - 2.0)),
            Diffusivity::Singular { p } => {
                if g2 < CRITICAL_GRADIENT * CRITICAL_GRADIENT {
                    0.0
                } else {
                    g2.powf(0.5 * (p - 2.0))
                }
            }
        }
    }
}

/// A function of `(x, t)`.
pub type PointFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// Right-hand side `f(x, t)`; only used for manufactured-solution tests.
#[derive(Clone)]
pub struct SourceTerm(pub Arc<PointFn>);

impl fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SourceTerm(..)")
    }
}

#[derive(Clone, Debug)]
pub struct SolverParams {
    pub p: f64,
    pub eps: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub linear_tol: f64,
    pub source: Option<SourceTerm>,
    /// Active only when `eps == 0`.
    pub gradient_floor: f64,
}

impl SolverParams {
    pub fn new(p: f64, eps: f64) -> Self {
        SolverParams {
            p,
            eps,
            picard_tol: 1e-10,
            picard_max_iters: 200,
            linear_tol: 1e-12,
            source: None,
            gradient_floor: DEFAULT_GRADIENT_FLOOR,
        }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        SolverParams {
            eps,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p <= 2.0) {
            return Err(Error::params(format!("need 1 < p <= 2, got {}", self.p)));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::params(format!("need finite eps >= 0, got {}", self.eps)));
        }
        if !(self.picard_tol > 0.0 && self.linear_tol > 0.0) || self.picard_max_iters == 0 {
            return Err(Error::params("tolerances and iteration cap must be positive"));
        }
        if self.eps == 0.0 && !(self.gradient_floor > 0.0) {
            return Err(Error::params(
                "eps = 0 requires a positive gradient floor",
            ));
        }
        Ok(())
    }

    /// True when this is an ε = 0 solve made well-posed by the gradient floor.
    pub fn is_floored(&self) -> bool {
        self.eps == 0.0
    }

    pub fn diffusivity(&self) -> Diffusivity {
        if self.eps > 0.0 {
            Diffusivity::Regularized {
                p: self.p,
                eps: self.eps,
            }
        } else {
            Diffusivity::Floored {
                p: self.p,
                floor: self.gradient_floor,
            }
        }
    }
}

/// Dirichlet data `g(x, t)` on the parabolic boundary (lateral sides and the
/// initial slice).
#[derive(Clone)]
pub struct BoundaryData {
    g: Arc<PointFn>,
    label: String,
}

impl fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BoundaryData({})", self.label)
    }
}

impl BoundaryData {
    pub fn from_fn(
        label: impl Into<String>,
        g: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        BoundaryData {
            g: Arc::new(g),
            label: label.into(),
        }
    }

    pub fn constant(c: f64) -> Self {
        BoundaryData::from_fn(format!("constant {c}"), move |_, _| c)
    }

    /// Trace of a closed-form solution.
    pub fn from_solution(sol: &AnalyticSolution) -> Self {
        let s = sol.clone();
        BoundaryData::from_fn(format!("{sol:?}"), move |x, t| s.value(x, t))
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        (self.g)(x, t)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Data on one level: every node at `level == 0`, lateral nodes otherwise.
    /// Interior entries of later levels are left at zero.
    pub fn slice(&self, grid: &Grid, level: usize) -> Result<Vec<f64>> {
        let t = grid.t(level);
        let dim = grid.dim();
        let mut out = vec![0.0; grid.spatial_len()];
        for node in grid.nodes() {
            if level == 0 || grid.is_boundary(node) {
                let v = self.eval(&grid.coord(node)[..dim], t);
                if !v.is_finite() {
                    return Err(Error::params(format!(
                        "boundary data is not finite at node {node:?}, level {level}"
                    )));
                }
                out[grid.spatial_index(node)] = v;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub iterations: usize,
    pub final_update: f64,
    pub linear_iterations: usize,
    /// Smallest under-relaxation factor applied during the step (1 = plain Picard).
    pub relaxation: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolveLog {
    pub steps: Vec<StepLog>,
    pub wall_time_s: f64,
    pub converged: bool,
    pub floored: bool,
    /// Smallest and largest frozen diffusivity seen over the whole solve.
    pub coefficient_range: (f64, f64),
}

impl SolveLog {
    pub fn total_picard_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).sum()
    }

    pub fn max_final_update(&self) -> f64 {
        self.steps.iter().map(|s| s.final_update).fold(0.0, f64::max)
    }
}

/// Face diffusivities of `level`. `ax[s]` sits on the face between node `s`
/// and its `+x` neighbour, `ay[s]` between `s` and its `+y` neighbour; faces
/// leaving the grid carry zero. The face gradient pairs the compact normal
/// difference with the mean of the two nodal tangential components.
pub fn face_diffusivities(grid: &Grid, level: &[f64], coef: Diffusivity) -> [Vec<f64>; 2] {
    let [nx, ny] = grid.shape();
    let g = nodal_gradients(grid, level);
    let mut ax = vec![0.0; nx * ny];
    let mut ay = vec![0.0; nx * ny];
    for s in 0..nx * ny {
        let [i, j] = grid.node_at(s);
        if i + 1 < nx {
            let gx = (level[s + ny] - level[s]) / grid.h(0);
            let gy = 0.5 * (g[s][1] + g[s + ny][1]);
            ax[s] = coef.coefficient(gx * gx + gy * gy);
        }
        if grid.dim() == 2 && j + 1 < ny {
            let gy = (level[s + 1] - level[s]) / grid.h(1);
            let gx = 0.5 * (g[s][0] + g[s + 1][0]);
            ay[s] = coef.coefficient(gx * gx + gy * gy);
        }
    }
    [ax, ay]
}

/// Conservative face-flux divergence `div(A∇u)` at interior nodes, zero on `∂Ω`.
pub fn discrete_divergence(grid: &Grid, level: &[f64], coef: Diffusivity) -> Vec<f64> {
    let faces = face_diffusivities(grid, level, coef);
    let ny = grid.shape()[1];
    let strides = [ny, 1];
    let mut out = vec![0.0; grid.spatial_len()];
    for node in grid.nodes() {
        if grid.is_boundary(node) {
            continue;
        }
        let s = grid.spatial_index(node);
        let mut div = 0.0;
        for k in 0..grid.dim() {
            let h = grid.h(k);
            let (sp, sm) = (s + strides[k], s - strides[k]);
            let fp = faces[k][s] * (level[sp] - level[s]) / h;
            let fm = faces[k][sm] * (level[s] - level[sm]) / h;
            div += (fp - fm) / h;
        }
        out[s] = div;
    }
    out
}

/// Face coefficients for the frozen-diffusivity system.
struct Faces {
    ax: Vec<f64>,
    ay: Vec<f64>,
    min_a: f64,
    max_a: f64,
}

fn frozen_faces(grid: &Grid, iterate: &[f64], coef: Diffusivity) -> Result<Faces> {
    let [ax, ay] = face_diffusivities(grid, iterate, coef);
    let [nx, ny] = grid.shape();
    let (mut min_a, mut max_a) = (f64::INFINITY, 0.0_f64);
    for s in 0..nx * ny {
        let [i, j] = grid.node_at(s);
        let mut present = Vec::with_capacity(2);
        if i + 1 < nx {
            present.push(ax[s]);
        }
        if grid.dim() == 2 && j + 1 < ny {
            present.push(ay[s]);
        }
        for v in present {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Internal(format!(
                    "frozen diffusivity {v} is not positive and finite"
                )));
            }
            min_a = min_a.min(v);
            max_a = max_a.max(v);
        }
    }
    Ok(Faces {
        ax,
        ay,
        min_a,
        max_a,
    })
}

struct LinearOutcome {
    values: Vec<f64>,
    iterations: usize,
}

fn solve_tridiagonal(grid: &Grid, faces: &Faces, rhs: &[f64], bd: &[f64]) -> Result<LinearOutcome> {
    let n = grid.shape()[0];
    let r = grid.tau() / (grid.h(0) * grid.h(0));
    let m = n - 2;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut b = vec![0.0; m];
    for k in 0..m {
        let i = k + 1;
        let (aw, ae) = (faces.ax[i - 1], faces.ax[i]);
        lower[k] = -r * aw;
        upper[k] = -r * ae;
        diag[k] = 1.0 + r * (aw + ae);
        b[k] = rhs[i];
    }
    b[0] += r * faces.ax[0] * bd[0];
    b[m - 1] += r * faces.ax[n - 2] * bd[n - 1];
    // Thomas elimination; the matrix is strictly diagonally dominant.
    for k in 1..m {
        let w = lower[k] / diag[k - 1];
        diag[k] -= w * upper[k - 1];
        b[k] -= w * b[k - 1];
    }
    let mut x = vec![0.0; n];
    x[0] = bd[0];
    x[n - 1] = bd[n - 1];
    x[m] = b[m - 1] / diag[m - 1];
    for k in (0..m - 1).rev() {
        x[k + 1] = (b[k] - upper[k] * x[k + 2]) / diag[k];
    }
    Ok(LinearOutcome {
        values: x,
        iterations: 1,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn solve_cg(
    grid: &Grid,
    faces: &Faces,
    rhs: &[f64],
    bd: &[f64],
    start: &[f64],
    tol: f64,
    step: usize,
) -> Result<LinearOutcome> {
    let [nx, ny] = grid.shape();
    let rx = grid.tau() / (grid.h(0) * grid.h(0));
    let ry = grid.tau() / (grid.h(1) * grid.h(1));
    let interior: Vec<usize> = (0..nx * ny)
        .filter(|&s| !grid.is_boundary(grid.node_at(s)))
        .collect();
    let n = nx * ny;
    let is_free = {
        let mut f = vec![false; n];
        for &s in &interior {
            f[s] = true;
        }
        f
    };
    let diag: Vec<f64> = (0..n)
        .map(|s| {
            if !is_free[s] {
                return 1.0;
            }
            1.0 + rx * (faces.ax[s] + faces.ax[s - ny]) + ry * (faces.ay[s] + faces.ay[s - 1])
        })
        .collect();
    // y = M x on free nodes, x = 0 on fixed nodes.
    let apply = |x: &[f64], y: &mut [f64]| {
        for &s in &interior {
            let mut v = diag[s] * x[s];
            v -= rx * (faces.ax[s] * x[s + ny] + faces.ax[s - ny] * x[s - ny]);
            v -= ry * (faces.ay[s] * x[s + 1] + faces.ay[s - 1] * x[s - 1]);
            y[s] = v;
        }
    };
    // Move Dirichlet values to the right-hand side.
    let mut b = vec![0.0; n];
    let mut fixed = vec![0.0; n];
    for s in 0..n {
        if !is_free[s] {
            fixed[s] = bd[s];
        }
    }
    {
        let mut tmp = vec![0.0; n];
        apply(&fixed, &mut tmp);
        for &s in &interior {
            b[s] = rhs[s] - (tmp[s] - diag[s] * fixed[s]);
        }
    }
    let mut x = vec![0.0; n];
    for &s in &interior {
        x[s] = start[s];
    }
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r = vec![0.0; n];
    for &s in &interior {
        r[s] = b[s] - ax[s];
    }
    let bnorm = dot(&b, &b).sqrt().max(f64::MIN_POSITIVE);
    let mut z: Vec<f64> = (0..n).map(|s| r[s] / diag[s]).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let max_iter = 20 * interior.len() + 100;
    let mut it = 0;
    let mut ap = vec![0.0; n];
    while dot(&r, &r).sqrt() > tol * bnorm {
        if it >= max_iter {
            return Err(Error::LinearBreakdown {
                step,
                reason: format!("conjugate gradient did not reach {tol:e} in {max_iter} iterations"),
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearBreakdown {
                step,
                reason: format!("non-positive curvature pᵀAp = {pap:e}"),
            });
        }
        let alpha = rz / pap;
        for &s in &interior {
            x[s] += alpha * p[s];
            r[s] -= alpha * ap[s];
        }
        for &s in &interior {
            z[s] = r[s] / diag[s];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for &s in &interior {
            p[s] = z[s] + beta * p[s];
        }
        it += 1;
    }
    for s in 0..n {
        if !is_free[s] {
            x[s] = bd[s];
        }
    }
    Ok(LinearOutcome {
        values: x,
        iterations: it,
    })
}

struct PicardOutcome {
    values: Vec<f64>,
    linear_iterations: usize,
    min_a: f64,
    max_a: f64,
}

fn picard_step_impl(
    grid: &Grid,
    params: &SolverParams,
    iterate: &[f64],
    previous_level: &[f64],
    boundary_slice: &[f64],
    t: f64,
    step: usize,
) -> Result<PicardOutcome> {
    let n = grid.spatial_len();
    for (name, v) in [
        ("iterate", iterate),
        ("previous level", previous_level),
        ("boundary slice", boundary_slice),
    ] {
        if v.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Internal(format!("{name} is not finite")));
        }
    }
    let faces = frozen_faces(grid, iterate, params.diffusivity())?;
    let tau = grid.tau();
    let dim = grid.dim();
    let mut rhs = previous_level.to_vec();
    if let Some(SourceTerm(f)) = &params.source {
        for node in grid.nodes() {
            let s = grid.spatial_index(node);
            rhs[s] += tau * f(&grid.coord(node)[..dim], t);
        }
    }
    let out = if dim == 1 {
        solve_tridiagonal(grid, &faces, &rhs, boundary_slice)?
    } else {
        solve_cg(
            grid,
            &faces,
            &rhs,
            boundary_slice,
            iterate,
            params.linear_tol,
            step,
        )?
    };
    Ok(PicardOutcome {
        values: out.values,
        linear_iterations: out.iterations,
        min_a: faces.min_a,
        max_a: faces.max_a,
    })
}

/// One lagged-diffusivity update: freezes `A` from `iterate`, then solves
/// `(I − τ div(A∇)) u = previous_level + τ f(·, t)` with the lateral entries
/// of `boundary_slice` imposed. Returns the full spatial vector.
pub fn picard_step(
    grid: &Grid,
    params: &SolverParams,
    iterate: &[f64],
    previous_level: &[f64],
    boundary_slice: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    params.validate()?;
    picard_step_impl(grid, params, iterate, previous_level, boundary_slice, t, 0)
        .map(|o| o.values)
}

fn relative_update(new: &[f64], old: &[f64]) -> f64 {
    let diff = new
        .iter()
        .zip(old)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = new.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

/// Solves the regularized equation on `grid` with Dirichlet data on the
/// parabolic boundary.
pub fn solve_regularized(
    grid: &Grid,
    params: &SolverParams,
    boundary: &BoundaryData,
) -> Result<(SpaceTimeField, SolveLog)> {
    params.validate()?;
    let start = Instant::now();
    let mut field = SpaceTimeField::zeros(grid);
    field.level_mut(0).copy_from_slice(&boundary.slice(grid, 0)?);
    let mut log = SolveLog {
        floored: params.is_floored(),
        converged: true,
        coefficient_range: (f64::INFINITY, 0.0),
        ..Default::default()
    };
    for step in 1..grid.levels() {
        let t = grid.t(step);
        let bd = boundary.slice(grid, step)?;
        let previous = field.level(step - 1).to_vec();
        let mut iterate = previous.clone();
        for node in grid.nodes().filter(|&n| grid.is_boundary(n)) {
            let s = grid.spatial_index(node);
            iterate[s] = bd[s];
        }
        let mut entry = StepLog {
            step,
            relaxation: 1.0,
            ..Default::default()
        };
        let mut omega = 1.0_f64;
        let mut last_update = f64::INFINITY;
        loop {
            let out = picard_step_impl(grid, params, &iterate, &previous, &bd, t, step)?;
            entry.iterations += 1;
            entry.linear_iterations += out.linear_iterations;
            entry.final_update = relative_update(&out.values, &iterate);
            log.coefficient_range.0 = log.coefficient_range.0.min(out.min_a);
            log.coefficient_range.1 = log.coefficient_range.1.max(out.max_a);
            if entry.final_update <= params.picard_tol {
                iterate = out.values;
                break;
            }
            // Damp the fixed-point map once it stops contracting; this kills
            // the two-cycles lagged diffusivity falls into on stiff steps.
            if entry.final_update >= last_update {
                omega = (0.5 * omega).max(MIN_RELAXATION);
            }
            last_update = entry.final_update;
            entry.relaxation = entry.relaxation.min(omega);
            for (u, v) in iterate.iter_mut().zip(&out.values) {
                *u += omega * (v - *u);
            }
            if entry.iterations >= params.picard_max_iters {
                log.converged = false;
                let (iterations, update) = (entry.iterations, entry.final_update);
                log.steps.push(entry);
                log.wall_time_s = start.elapsed().as_secs_f64();
                return Err(Error::SolverFailure {
                    step,
                    iterations,
                    update,
                    log: Box::new(log),
                });
            }
        }
        field.level_mut(step).copy_from_slice(&iterate);
        log.steps.push(entry);
    }
    log.wall_time_s = start.elapsed().as_secs_f64();
    Ok((field, log))
}

/// `(min, max)` of a field over its parabolic boundary: the initial level
/// and the lateral nodes of every later level.
pub fn parabolic_boundary_range(field: &SpaceTimeField) -> (f64, f64) {
    let grid = field.grid();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for level in 0..grid.levels() {
        for node in grid.nodes() {
            if level == 0 || grid.is_boundary(node) {
                let v = field.get(level, node);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    (lo, hi)
}

/// `∬ u φ_t − ∬ A_ε(∇u) ⟨∇u, ∇φ⟩` for a compactly supported test function
/// `φ`; vanishes up to discretization error for solutions.
pub fn weak_form_residual(field: &SpaceTimeField, phi: &Cutoff, p: f64, eps: f64) -> Result<f64> {
    let grid = field.grid();
    phi.check_support(grid, 1)
        .map_err(|e| Error::InvalidTestFunction(e.to_string()))?;
    if !phi.has_time_support() {
        return Err(Error::InvalidTestFunction(
            "test function must vanish near t_lo and t_hi".into(),
        ));
    }
    let coef = Diffusivity::for_residual(p, eps);
    let dim = grid.dim();
    let grads: Vec<Vec<[f64; 2]>> = (0..grid.levels())
        .map(|l| nodal_gradients(grid, field.level(l)))
        .collect();
    let region = Region::full(grid);
    Ok(integrate(grid, &region, |level, node| {
        let x = grid.coord(node);
        let t = grid.t(level);
        let ev = phi.eval(&x[..dim], t);
        if ev.is_zero() {
            return 0.0;
        }
        let g = grads[level][grid.spatial_index(node)];
        let a = coef.coefficient(g[0] * g[0] + g[1] * g[1]);
        field.get(level, node) * ev.dt - a * (g[0] * ev.grad[0] + g[1] * ev.grad[1])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::linear_solution;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let piv = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, piv);
            b.swap(k, piv);
            for i in k + 1..n {
                let w = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= w * a[k][j];
                }
                b[i] -= w * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn params_validation() {
        assert!(SolverParams::new(1.5, 0.1).validate().is_ok());
        assert!(SolverParams::new(1.0, 0.1).validate().is_err());
        assert!(SolverParams::new(2.1, 0.1).validate().is_err());
        assert!(SolverParams::new(1.5, -0.1).validate().is_err());
        let mut p = SolverParams::new(1.5, 0.0);
        assert!(p.validate().is_ok() && p.is_floored());
        p.gradient_floor = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn diffusivity_bounds() {
        let (p, eps) = (1.4, 0.2);
        let c = Diffusivity::Regularized { p, eps };
        let top = eps.powf(p - 2.0);
        for g2 in [0.0, 1e-6, 0.3, 5.0, 1e4] {
            let a = c.coefficient(g2);
            assert!(a > 0.0 && a <= top * (1.0 + 1e-15));
        }
        assert_eq!(Diffusivity::Singular { p }.coefficient(0.0), 0.0);
        let fl = Diffusivity::Floored { p, floor: 1e-8 };
        assert!((fl.coefficient(0.0) - 1e-8_f64.powf(p - 2.0)).abs() < 1e-3);
    }

    #[test]
    fn heat_step_matches_dense_solve() {
        // p = 2 gives A ≡ 1: one backward-Euler heat step on 17 nodes.
        let grid = Grid::line((0.0, 1.0), 16, (0.0, 0.1), 8).unwrap();
        let params = SolverParams::new(2.0, 0.3);
        let prev: Vec<f64> = (0..17).map(|i| (i as f64 * 0.37).sin() + 0.1 * i as f64).collect();
        let mut bd = vec![0.0; 17];
        bd[0] = 0.25;
        bd[16] = -0.5;
        let mut it = prev.clone();
        it[0] = bd[0];
        it[16] = bd[16];
        let out = picard_step(&grid, &params, &it, &prev, &bd, 0.0125).unwrap();

        let r = grid.tau() / (grid.h(0) * grid.h(0));
        let mut a = vec![vec![0.0; 17]; 17];
        let mut b = vec![0.0; 17];
        a[0][0] = 1.0;
        b[0] = bd[0];
        a[16][16] = 1.0;
        b[16] = bd[16];
        for i in 1..16 {
            a[i][i - 1] = -r;
            a[i][i] = 1.0 + 2.0 * r;
            a[i][i + 1] = -r;
            b[i] = prev[i];
        }
        let dense = dense_solve(a, b);
        for (x, y) in out.iter().zip(&dense) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn tiny_time_step_keeps_previous_level() {
        let grid = Grid::line((0.0, 1.0), 20, (0.0, 1e-14), 8).unwrap();
        let params = SolverParams::new(1.5, 0.1);
        let prev: Vec<f64> = (0..21).map(|i| (i as f64 * 0.5).cos()).collect();
        let out = picard_step(&grid, &params, &prev, &prev, &prev, 0.0).unwrap();
        for (x, y) in out.iter().zip(&prev) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_iterate_gives_affine_output() {
        let grid = Grid::plane((0.0, 1.0), 10, (0.0, 2.0), 12, (0.0, 1.0), 8).unwrap();
        let params = SolverParams::new(1.3, 0.05);
        let lin = linear_solution(&[0.7, -1.2], 0.4).unwrap();
        let field = lin.sample(&grid).unwrap();
        let lv = field.level(0);
        let out = picard_step(&grid, &params, lv, lv, lv, 0.0).unwrap();
        for (x, y) in out.iter().zip(lv) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_data_is_preserved() {
        let grid = Grid::line((0.0, 1.0), 16, (0.0, 1.0), 10).unwrap();
        let (u, log) = solve_regularized(&grid, &SolverParams::new(1.5, 0.1), &BoundaryData::constant(5.0)).unwrap();
        assert!(u.values().iter().all(|v| (v - 5.0).abs() <= 1e-12));
        assert!(log.converged);
        let grid = Grid::plane((0.0, 1.0), 8, (0.0, 1.0), 8, (0.0, 1.0), 8).unwrap();
        let (u, _) = solve_regularized(&grid, &SolverParams::new(1.2, 0.0), &BoundaryData::constant(5.0)).unwrap();
        assert!(u.values().iter().all(|v| (v - 5.0).abs() <= 1e-12));
    }

    #[test]
    fn non_convergence_reports_the_step() {
        let grid = Grid::line((0.0, 1.0), 16, (0.0, 1.0), 8).unwrap();
        let mut params = SolverParams::new(1.2, 1e-3);
        params.picard_max_iters = 1;
        params.picard_tol = 1e-15;
        let bd = BoundaryData::from_fn("bump", |x, t| (3.0 * x[0]).sin() * (1.0 + t));
        match solve_regularized(&grid, &params, &bd) {
            Err(Error::SolverFailure { step, log, .. }) => {
                assert_eq!(step, 1);
                assert!(!log.converged);
            }
            other => panic!("expected solver failure, got {other:?}"),
        }
    }

    #[test]
    fn boundary_range() {
        let grid = Grid::line((0.0, 1.0), 8, (0.0, 1.0), 8).unwrap();
        let f = SpaceTimeField::from_fn(&grid, |x, t| x[0] + 10.0 * t * x[0] * (1.0 - x[0])).unwrap();
        let (lo, hi) = parabolic_boundary_range(&f);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 1.0);
    }
}
