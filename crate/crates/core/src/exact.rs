//! Closed-form reference solutions and strong-form residuals.
//!
//! Every nontrivial closed form is admitted only after substitution into the
//! equation `u_t = div(|∇u|^{p-2}∇u)` with high-order differences of the
//! analytic flux, so a wrong formula fails at construction time instead of
//! silently producing a wrong oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::time_derivative_field;
use crate::grid::{Grid, SpaceTimeField};
use crate::solver::{discrete_divergence, Diffusivity};

/// Residual bound every closed form must meet before release.
pub const SELF_CHECK_TOL: f64 = 1e-6;

/// Where the evaluators of an [`AnalyticSolution`] may be used.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Validity {
    Everywhere,
    /// Everywhere except the closed ball of this radius around the origin.
    OutsideBall { radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub slope: Vec<f64>,
    pub offset: f64,
}

/// Self-similar source solution of the fast-diffusion p-Laplace flow,
/// `u = s^{-n/λ} [C + k ξ^{p/(p-1)}]^{(p-1)/(p-2)}` with `s = t + t₀`,
/// `ξ = |x| s^{-1/λ}`, `λ = n(p-2) + p` and `k = ((2-p)/p) λ^{1/(1-p)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Barenblatt {
    pub p: f64,
    pub n: usize,
    pub mass: f64,
    pub t0: f64,
    lambda: f64,
    k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialPHarmonic {
    pub p: f64,
    pub exclusion_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AnalyticSolution {
    Linear(Linear),
    Barenblatt(Barenblatt),
    RadialPHarmonic(RadialPHarmonic),
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Barenblatt {
    fn exponents(&self) -> (f64, f64, f64, f64) {
        let p = self.p;
        let a = self.n as f64 / self.lambda;
        let b = 1.0 / self.lambda;
        let q = p / (p - 1.0);
        let m = (p - 1.0) / (p - 2.0);
        (a, b, q, m)
    }

    fn base(&self, r: f64, s: f64) -> f64 {
        let (_, b, q, _) = self.exponents();
        let xi = r * s.powf(-b);
        self.mass + self.k * xi.powf(q)
    }

    fn value(&self, x: &[f64], t: f64) -> f64 {
        let s = t + self.t0;
        let (a, _, _, m) = self.exponents();
        s.powf(-a) * self.base(norm(x), s).powf(m)
    }

    fn gradient(&self, x: &[f64], t: f64) -> [f64; 2] {
        // ∇u = m k q s^{-a-2b} B^{m-1} ξ^{q-2} x
        let s = t + self.t0;
        let (a, b, q, m) = self.exponents();
        let r = norm(x);
        let xi = r * s.powf(-b);
        let coef = m * self.k * q * s.powf(-a - 2.0 * b) * self.base(r, s).powf(m - 1.0) * xi.powf(q - 2.0);
        let mut g = [0.0; 2];
        for (gi, xi_) in g.iter_mut().zip(x) {
            *gi = coef * xi_;
        }
        g
    }

    fn time_derivative(&self, x: &[f64], t: f64) -> f64 {
        // u_t = s^{-a-1} B^{m-1} (-a B - m k q b ξ^q)
        let s = t + self.t0;
        let (a, b, q, m) = self.exponents();
        let r = norm(x);
        let xi = r * s.powf(-b);
        let bb = self.base(r, s);
        s.powf(-a - 1.0) * bb.powf(m - 1.0) * (-a * bb - m * self.k * q * b * xi.powf(q))
    }

    /// Characteristic length `s^{1/λ}` at time `t`.
    pub fn length_scale(&self, t: f64) -> f64 {
        (t + self.t0).powf(1.0 / self.lambda)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl AnalyticSolution {
    pub fn dim(&self) -> Option<usize> {
        match self {
            AnalyticSolution::Linear(l) => Some(l.slope.len()),
            AnalyticSolution::Barenblatt(b) => Some(b.n),
            AnalyticSolution::RadialPHarmonic(_) => Some(2),
        }
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        match self {
            AnalyticSolution::Linear(l) => {
                l.offset + l.slope.iter().zip(x).map(|(a, xi)| a * xi).sum::<f64>()
            }
            AnalyticSolution::Barenblatt(b) => b.value(x, t),
            AnalyticSolution::RadialPHarmonic(h) => {
                norm(x).powf((h.p - 2.0) / (h.p - 1.0))
            }
        }
    }

    pub fn gradient(&self, x: &[f64], t: f64) -> [f64; 2] {
        match self {
            AnalyticSolution::Linear(l) => {
                let mut g = [0.0; 2];
                for (gi, a) in g.iter_mut().zip(&l.slope) {
                    *gi = *a;
                }
                g
            }
            AnalyticSolution::Barenblatt(b) => b.gradient(x, t),
            AnalyticSolution::RadialPHarmonic(h) => {
                let gamma = (h.p - 2.0) / (h.p - 1.0);
                let r = norm(x);
                let c = gamma * r.powf(gamma - 2.0);
                [c * x[0], c * x.get(1).copied().unwrap_or(0.0)]
            }
        }
    }

    pub fn time_derivative(&self, x: &[f64], t: f64) -> f64 {
        match self {
            AnalyticSolution::Barenblatt(b) => b.time_derivative(x, t),
            _ => 0.0,
        }
    }

    pub fn validity(&self) -> Validity {
        match self {
            AnalyticSolution::RadialPHarmonic(h) => Validity::OutsideBall {
                radius: h.exclusion_radius,
            },
            _ => Validity::Everywhere,
        }
    }

    /// Whether `u ≥ 0` holds on the whole validity domain.
    pub fn nonnegative(&self) -> bool {
        match self {
            AnalyticSolution::Linear(l) => l.slope.iter().all(|a| *a == 0.0) && l.offset >= 0.0,
            AnalyticSolution::Barenblatt(_) | AnalyticSolution::RadialPHarmonic(_) => true,
        }
    }

    /// Checks the grid's spatial box lies in the validity domain and the dimensions agree.
    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if let Some(n) = self.dim() {
            if n != grid.dim() {
                return Err(Error::InvalidDomain(format!(
                    "solution is {n}-dimensional, grid is {}-dimensional",
                    grid.dim()
                )));
            }
        }
        if let Validity::OutsideBall { radius } = self.validity() {
            // Distance from the origin to the nearest point of the box.
            let d2: f64 = grid
                .space_axes()
                .iter()
                .map(|a| {
                    let c = 0.0_f64.clamp(a.lo, a.hi);
                    c * c
                })
                .sum();
            if d2.sqrt() <= radius {
                return Err(Error::InvalidDomain(format!(
                    "grid box comes within {} of the origin; solution is valid only for |x| > {radius}",
                    d2.sqrt()
                )));
            }
        }
        Ok(())
    }

    /// Samples `u` onto the grid.
    pub fn sample(&self, grid: &Grid) -> Result<SpaceTimeField> {
        self.check_grid(grid)?;
        SpaceTimeField::from_fn(grid, |x, t| self.value(x, t))
    }

    /// `u_t − div(F(∇u))` at one point, with the divergence taken by
    /// fourth-order central differences of the analytic flux.
    pub fn point_residual(&self, x: &[f64], t: f64, p: f64, eps: f64, step: f64) -> f64 {
        // Exact power law: the analytic flux stays smooth where |∇u| is tiny.
        let flux = |y: &[f64]| {
            let g = self.gradient(y, t);
            let norm = g[0].hypot(g[1]);
            let c = if eps > 0.0 {
                Diffusivity::Regularized { p, eps }.coefficient(norm * norm)
            } else if norm == 0.0 {
                0.0
            } else {
                norm.powf(p - 2.0)
            };
            [c * g[0], c * g[1]]
        };
        let mut div = 0.0;
        let mut y = x.to_vec();
        for k in 0..x.len() {
            let mut f = [0.0; 4];
            for (slot, off) in f.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
                y[k] = x[k] + off * step;
                *slot = flux(&y)[k];
            }
            y[k] = x[k];
            div += (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * step);
        }
        self.time_derivative(x, t) - div
    }
}

/// `u = ⟨a, x⟩ + b`: solves the original and every regularized equation.
pub fn linear_solution(slope: &[f64], offset: f64) -> Result<AnalyticSolution> {
    if slope.is_empty() || slope.len() > 2 {
        return Err(Error::params("slope must have 1 or 2 components"));
    }
    if !slope.iter().chain([&offset]).all(|v| v.is_finite()) {
        return Err(Error::params("linear solution needs finite coefficients"));
    }
    Ok(AnalyticSolution::Linear(Linear {
        slope: slope.to_vec(),
        offset,
    }))
}

/// Barenblatt profile for `1 < p < 2`, released only after it passes the
/// substitution check at a spread of points and times.
pub fn barenblatt_fast_diffusion(p: f64, n: usize, mass: f64, t0: f64) -> Result<AnalyticSolution> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::params(format!("Barenblatt profile needs 1 < p < 2, got {p}")));
    }
    if n == 0 || n > 2 {
        return Err(Error::params(format!("dimension must be 1 or 2, got {n}")));
    }
    let lambda = n as f64 * (p - 2.0) + p;
    if lambda <= 0.0 {
        return Err(Error::params(format!(
            "λ = n(p-2)+p = {lambda} must be positive (n = {n}, p = {p})"
        )));
    }
    if !(mass > 0.0 && t0 > 0.0) {
        return Err(Error::params("mass parameter and time shift must be positive"));
    }
    let k = (2.0 - p) / p * lambda.powf(1.0 / (1.0 - p));
    let b = Barenblatt {
        p,
        n,
        mass,
        t0,
        lambda,
        k,
    };
    let sol = AnalyticSolution::Barenblatt(b.clone());
    for t in [0.0, 0.5 * t0, t0, 1.0] {
        let ell = b.length_scale(t);
        let step = 1e-3 * ell;
        for xi in [0.0, 0.1, 0.35, 0.7, 1.3, 2.5, 4.0] {
            let mut points = vec![vec![xi * ell]];
            if n == 2 {
                points = vec![
                    vec![xi * ell, 0.0],
                    vec![0.6 * xi * ell, -0.8 * xi * ell],
                ];
            } else if xi > 0.0 {
                points.push(vec![-xi * ell]);
            }
            for x in points {
                let res = sol.point_residual(&x, t, p, 0.0, step);
                let scale = sol.time_derivative(&x, t).abs().max(1.0);
                if !(res.abs() <= SELF_CHECK_TOL * scale) {
                    return Err(Error::OracleVerification {
                        residual: res.abs(),
                        tolerance: SELF_CHECK_TOL * scale,
                        x,
                        t,
                    });
                }
            }
        }
    }
    Ok(sol)
}

/// Stationary radial solution `|x|^{(p-2)/(p-1)}` in two dimensions, valid
/// outside a ball around the origin.
pub fn radial_p_harmonic(p: f64, exclusion_radius: f64) -> Result<AnalyticSolution> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::params(format!("need 1 < p <= 2, got {p}")));
    }
    if !(exclusion_radius > 0.0) {
        return Err(Error::InvalidDomain(
            "the origin must be excluded by a positive radius".into(),
        ));
    }
    let sol = AnalyticSolution::RadialPHarmonic(RadialPHarmonic { p, exclusion_radius });
    let r0 = 2.0 * exclusion_radius;
    for angle in [0.0_f64, 0.9, 2.2, 4.0] {
        let x = [r0 * angle.cos(), r0 * angle.sin()];
        let res = sol.point_residual(&x, 0.0, p, 0.0, 1e-3 * r0);
        let scale = r0.powf((p - 2.0) / (p - 1.0) - 2.0).max(1.0);
        if !(res.abs() <= SELF_CHECK_TOL * scale) {
            return Err(Error::OracleVerification {
                residual: res.abs(),
                tolerance: SELF_CHECK_TOL * scale,
                x: x.to_vec(),
                t: 0.0,
            });
        }
    }
    Ok(sol)
}

/// Strong-form residual `u_t − div(F_ε(∇u))` of a closed form at every
/// grid node, using the fine substitution stencil (step `1e-4` times the
/// smallest grid spacing).
pub fn pde_residual_analytic(
    solution: &AnalyticSolution,
    grid: &Grid,
    p: f64,
    eps: f64,
) -> Result<SpaceTimeField> {
    solution.check_grid(grid)?;
    let h = (0..grid.dim()).map(|k| grid.h(k)).fold(f64::INFINITY, f64::min);
    SpaceTimeField::from_fn(grid, |x, t| solution.point_residual(x, t, p, eps, 1e-2 * h))
}

/// Residual of a discrete field: centered time difference minus the
/// conservative face-flux divergence of the solver. Boundary nodes report 0.
///
/// With `eps = 0` nodes whose gradient is below `1e-14` carry zero flux.
pub fn pde_residual_field(field: &SpaceTimeField, p: f64, eps: f64) -> Result<SpaceTimeField> {
    let grid = field.grid();
    let ut = time_derivative_field(field)?;
    let coef = Diffusivity::for_residual(p, eps);
    let mut out = SpaceTimeField::zeros(grid);
    for level in 0..grid.levels() {
        let div = discrete_divergence(grid, field.level(level), coef);
        let ut_l = ut.level(level);
        let dst = out.level_mut(level);
        for node in grid.nodes() {
            if grid.is_boundary(node) {
                continue;
            }
            let s = grid.spatial_index(node);
            dst[s] = ut_l[s] - div[s];
        }
    }
    Ok(out)
}
