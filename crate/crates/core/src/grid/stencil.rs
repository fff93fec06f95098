//! Finite-difference stencils on a single time level.

use super::{Grid, Node, SpaceTimeField};
use crate::error::{Error, Result};

#[inline]
fn at(grid: &Grid, level: &[f64], i: usize, j: usize) -> f64 {
    level[grid.spatial_index([i, j])]
}

/// Central difference gradient; the caller guarantees a one-cell margin.
#[inline]
pub(crate) fn central_gradient(grid: &Grid, level: &[f64], node: Node) -> [f64; 2] {
    let [i, j] = node;
    let gx = (at(grid, level, i + 1, j) - at(grid, level, i - 1, j)) / (2.0 * grid.h(0));
    let gy = if grid.dim() == 2 {
        (at(grid, level, i, j + 1) - at(grid, level, i, j - 1)) / (2.0 * grid.h(1))
    } else {
        0.0
    };
    [gx, gy]
}

/// Second-order derivative along one axis, one-sided at the ends.
#[inline]
fn axis_derivative(values: [f64; 3], h: f64, position: Side) -> f64 {
    let [a, b, c] = values;
    match position {
        Side::Low => (-3.0 * a + 4.0 * b - c) / (2.0 * h),
        Side::Mid => (c - a) / (2.0 * h),
        Side::High => (a - 4.0 * b + 3.0 * c) / (2.0 * h),
    }
}

#[derive(Clone, Copy)]
enum Side {
    Low,
    Mid,
    High,
}

fn stencil_along(n: usize, k: usize) -> (Side, [usize; 3]) {
    if k == 0 {
        (Side::Low, [0, 1, 2])
    } else if k + 1 == n {
        (Side::High, [n - 3, n - 2, n - 1])
    } else {
        (Side::Mid, [k - 1, k, k + 1])
    }
}

/// Gradient at every node of one level: central in the interior,
/// second-order one-sided on `∂Ω`. Exact for quadratics everywhere.
pub fn nodal_gradients(grid: &Grid, level: &[f64]) -> Vec<[f64; 2]> {
    let [nx, ny] = grid.shape();
    let mut out = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        let (sx, ix) = stencil_along(nx, i);
        for j in 0..ny {
            let gx = axis_derivative(ix.map(|ii| at(grid, level, ii, j)), grid.h(0), sx);
            let gy = if grid.dim() == 2 {
                let (sy, iy) = stencil_along(ny, j);
                axis_derivative(iy.map(|jj| at(grid, level, i, jj)), grid.h(1), sy)
            } else {
                0.0
            };
            out.push([gx, gy]);
        }
    }
    out
}

/// Hessian entries `[u_xx, u_xy, u_yy]` with the four-point cross stencil
/// for the mixed derivative; the caller guarantees a one-cell margin.
#[inline]
pub(crate) fn hessian_at(grid: &Grid, level: &[f64], node: Node) -> [f64; 3] {
    let [i, j] = node;
    let hx = grid.h(0);
    let c = at(grid, level, i, j);
    let uxx = (at(grid, level, i + 1, j) - 2.0 * c + at(grid, level, i - 1, j)) / (hx * hx);
    if grid.dim() == 1 {
        return [uxx, 0.0, 0.0];
    }
    let hy = grid.h(1);
    let uyy = (at(grid, level, i, j + 1) - 2.0 * c + at(grid, level, i, j - 1)) / (hy * hy);
    let uxy = (at(grid, level, i + 1, j + 1) - at(grid, level, i + 1, j - 1)
        - at(grid, level, i - 1, j + 1)
        + at(grid, level, i - 1, j - 1))
        / (4.0 * hx * hy);
    [uxx, uxy, uyy]
}

#[inline]
pub(crate) fn hessian_sq_at(grid: &Grid, level: &[f64], node: Node) -> f64 {
    let [xx, xy, yy] = hessian_at(grid, level, node);
    xx * xx + 2.0 * xy * xy + yy * yy
}

fn require_margin(grid: &Grid, node: Node, level: usize, reason: &'static str) -> Result<()> {
    let [nx, ny] = grid.shape();
    let inside = node[0] < nx && node[1] < ny && level < grid.levels();
    if !inside || grid.margin(node) < 1 {
        return Err(Error::OutOfDomain {
            node,
            level,
            reason,
        });
    }
    Ok(())
}

/// Central-difference gradient at a strictly interior node.
pub fn gradient(field: &SpaceTimeField, node: Node, level: usize) -> Result<[f64; 2]> {
    let grid = field.grid();
    require_margin(grid, node, level, "gradient needs a strictly interior node")?;
    Ok(central_gradient(grid, field.level(level), node))
}

/// `|D²u|² = Σ u_{x_i x_j}²` from second-order central differences.
pub fn hessian_frobenius_sq(field: &SpaceTimeField, node: Node, level: usize) -> Result<f64> {
    let grid = field.grid();
    require_margin(grid, node, level, "Hessian needs a one-cell margin")?;
    Ok(hessian_sq_at(grid, field.level(level), node))
}

/// Every derivative the estimates need on one time level.
///
/// `grad` and `v = |∇u|²` are defined at every node. `hess`, `hess_sq` and
/// `grad_v` (central differences of the nodal `v`) are defined on nodes with
/// at least a one-cell margin and are zero elsewhere.
#[derive(Clone, Debug)]
pub struct LevelDerivatives {
    pub grad: Vec<[f64; 2]>,
    pub v: Vec<f64>,
    pub hess: Vec<[f64; 3]>,
    pub hess_sq: Vec<f64>,
    pub grad_v: Vec<[f64; 2]>,
}

impl LevelDerivatives {
    pub fn compute(grid: &Grid, level: &[f64]) -> Self {
        let n = grid.spatial_len();
        let grad = nodal_gradients(grid, level);
        let v: Vec<f64> = grad.iter().map(|g| g[0] * g[0] + g[1] * g[1]).collect();
        let mut hess = vec![[0.0; 3]; n];
        let mut hess_sq = vec![0.0; n];
        let mut grad_v = vec![[0.0; 2]; n];
        for node in grid.nodes() {
            if grid.margin(node) < 1 {
                continue;
            }
            let s = grid.spatial_index(node);
            let hs = hessian_at(grid, level, node);
            hess[s] = hs;
            hess_sq[s] = hs[0] * hs[0] + 2.0 * hs[1] * hs[1] + hs[2] * hs[2];
            grad_v[s] = central_gradient(grid, &v, node);
        }
        LevelDerivatives {
            grad,
            v,
            hess,
            hess_sq,
            grad_v,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Grid {
        Grid::line((0.0, 1.0), 10, (0.0, 1.0), 8).unwrap()
    }

    fn plane() -> Grid {
        Grid::plane((0.0, 1.0), 10, (-1.0, 1.0), 12, (0.0, 1.0), 8).unwrap()
    }

    #[test]
    fn affine_gradient_is_exact() {
        let g = line();
        let u = SpaceTimeField::from_fn(&g, |x, _| 3.0 * x[0]).unwrap();
        for i in 1..10 {
            let d = gradient(&u, [i, 0], 3).unwrap();
            assert!((d[0] - 3.0).abs() < 1e-12);
            assert_eq!(d[1], 0.0);
        }
        let g = plane();
        let u = SpaceTimeField::from_fn(&g, |x, _| x[0] - 2.0 * x[1]).unwrap();
        for node in g.nodes().filter(|&n| !g.is_boundary(n)) {
            let d = gradient(&u, node, 0).unwrap();
            assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_gradient_at_half() {
        // d/dx x² = 2x = 1 at x = 0.5.
        let g = line();
        let u = SpaceTimeField::from_fn(&g, |x, _| x[0] * x[0]).unwrap();
        let d = gradient(&u, [5, 0], 0).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_gradient_is_rejected() {
        let g = line();
        let u = SpaceTimeField::zeros(&g);
        assert!(matches!(
            gradient(&u, [0, 0], 0),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(gradient(&u, [10, 0], 0).is_err());
        assert!(hessian_frobenius_sq(&u, [10, 0], 0).is_err());
        let g = plane();
        let u = SpaceTimeField::zeros(&g);
        assert!(gradient(&u, [3, 0], 0).is_err());
    }

    #[test]
    fn one_sided_boundary_gradients_exact_for_quadratics() {
        let g = plane();
        let u = SpaceTimeField::from_fn(&g, |x, _| x[0] * x[0] + 0.5 * x[0] * x[1] - x[1]).unwrap();
        let grads = nodal_gradients(&g, u.level(0));
        for node in g.nodes() {
            let [x, y] = g.coord(node);
            let d = grads[g.spatial_index(node)];
            assert!((d[0] - (2.0 * x + 0.5 * y)).abs() < 1e-12);
            assert!((d[1] - (0.5 * x - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn hessian_values() {
        let g = line();
        let affine = SpaceTimeField::from_fn(&g, |x, _| 2.0 - x[0]).unwrap();
        let half_sq = SpaceTimeField::from_fn(&g, |x, _| 0.5 * x[0] * x[0]).unwrap();
        for i in 1..10 {
            assert!(hessian_frobenius_sq(&affine, [i, 0], 1).unwrap().abs() < 1e-12);
            assert!((hessian_frobenius_sq(&half_sq, [i, 0], 1).unwrap() - 1.0).abs() < 1e-12);
        }
        let g = plane();
        let xy = SpaceTimeField::from_fn(&g, |x, _| x[0] * x[1]).unwrap();
        let quad = SpaceTimeField::from_fn(&g, |x, _| x[0] * x[0] - 3.0 * x[0] * x[1] + 0.5 * x[1] * x[1]).unwrap();
        for node in g.nodes().filter(|&n| g.margin(n) >= 1) {
            assert!((hessian_frobenius_sq(&xy, node, 0).unwrap() - 2.0).abs() < 1e-10);
            // [[2, -3], [-3, 1]] → 4 + 9 + 9 + 1.
            assert!((hessian_frobenius_sq(&quad, node, 0).unwrap() - 23.0).abs() < 1e-9);
        }
    }
}
