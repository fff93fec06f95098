//! Tensor-product trapezoidal quadrature over a [`Region`].
//!
//! Weighted samples are accumulated with pairwise summation in a fixed
//! order, so results do not depend on thread count or platform.

use super::{Grid, Node, Region};
use crate::error::{Error, Result};

/// Pairwise (tree) summation; error grows like `O(log n)` instead of `O(n)`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn trapezoid_weights(lo: usize, hi: usize, step: f64) -> Vec<f64> {
    (lo..=hi)
        .map(|k| if k == lo || k == hi { 0.5 * step } else { step })
        .collect()
}

struct Weights {
    x: Vec<f64>,
    y: Vec<f64>,
    t: Vec<f64>,
}

impl Weights {
    fn new(grid: &Grid, region: &Region) -> Self {
        let y = if grid.dim() == 2 {
            trapezoid_weights(region.space[1].0, region.space[1].1, grid.h(1))
        } else {
            vec![1.0; region.space[1].1 - region.space[1].0 + 1]
        };
        Weights {
            x: trapezoid_weights(region.space[0].0, region.space[0].1, grid.h(0)),
            y,
            t: trapezoid_weights(region.time.0, region.time.1, grid.tau()),
        }
    }
}

fn check_region(grid: &Grid, region: &Region) -> Result<()> {
    let shape = grid.shape();
    let ok = region.space[0].1 < shape[0]
        && region.space[1].1 < shape[1]
        && region.time.1 < grid.levels();
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidRegion("region exceeds grid".into()))
    }
}

/// `∬_region f dx dt` with `f` evaluated at `(level, node)`.
pub fn integrate(grid: &Grid, region: &Region, f: impl Fn(usize, Node) -> f64) -> f64 {
    let w = Weights::new(grid, region);
    let mut terms = Vec::with_capacity(region.len());
    for (lt, level) in region.levels().enumerate() {
        for (li, i) in (region.space[0].0..=region.space[0].1).enumerate() {
            for (lj, j) in (region.space[1].0..=region.space[1].1).enumerate() {
                terms.push(w.t[lt] * w.x[li] * w.y[lj] * f(level, [i, j]));
            }
        }
    }
    pairwise_sum(&terms)
}

/// `∫ f dx` over the spatial extent of `region` (its time range is ignored).
pub fn integrate_space(grid: &Grid, region: &Region, f: impl Fn(Node) -> f64) -> f64 {
    let w = Weights::new(grid, region);
    let mut terms = Vec::with_capacity(w.x.len() * w.y.len());
    for (li, i) in (region.space[0].0..=region.space[0].1).enumerate() {
        for (lj, j) in (region.space[1].0..=region.space[1].1).enumerate() {
            terms.push(w.x[li] * w.y[lj] * f([i, j]));
        }
    }
    pairwise_sum(&terms)
}

/// Integral of samples laid out region-locally: level outermost, then `i`, then `j`.
pub fn spacetime_integral(grid: &Grid, region: &Region, samples: &[f64]) -> Result<f64> {
    check_region(grid, region)?;
    if samples.len() != region.len() {
        return Err(Error::ShapeMismatch {
            expected: region.len(),
            actual: samples.len(),
        });
    }
    let (i0, j0, t0) = (region.space[0].0, region.space[1].0, region.time.0);
    let nx = region.space[0].1 - i0 + 1;
    let ny = region.space[1].1 - j0 + 1;
    Ok(integrate(grid, region, |level, [i, j]| {
        samples[((level - t0) * nx + (i - i0)) * ny + (j - j0)]
    }))
}

/// `(∬_region |f|^q)^{1/q}` for `q ≥ 1`.
pub fn lp_norm(
    grid: &Grid,
    region: &Region,
    q: f64,
    f: impl Fn(usize, Node) -> f64,
) -> Result<f64> {
    if !(q >= 1.0 && q.is_finite()) {
        return Err(Error::InvalidExponent {
            value: q,
            reason: "Lebesgue exponent must be finite and at least 1",
        });
    }
    check_region(grid, region)?;
    let s = integrate(grid, region, |l, n| f(l, n).abs().powf(q));
    Ok(s.powf(1.0 / q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceTimeField;
    use std::f64::consts::PI;

    #[test]
    fn unit_cylinder_measure() {
        let g = Grid::line((0.0, 1.0), 10, (0.0, 1.0), 10).unwrap();
        let r = Region::full(&g);
        assert!((integrate(&g, &r, |_, _| 1.0) - 1.0).abs() < 1e-14);
        assert!((integrate(&g, &r, |_, _| 2.5) - 2.5).abs() < 1e-14);
        let g2 = Grid::plane((0.0, 2.0), 8, (0.0, 3.0), 9, (1.0, 2.0), 8).unwrap();
        assert!((integrate(&g2, &Region::full(&g2), |_, _| 1.0) - 6.0).abs() < 1e-13);
    }

    #[test]
    fn sine_integral_matches_closed_form() {
        // ∫₀¹ sin(πx) dx = 2/π.
        let g = Grid::line((0.0, 1.0), 100, (0.0, 1.0), 100).unwrap();
        let u = SpaceTimeField::from_fn(&g, |x, _| (PI * x[0]).sin()).unwrap();
        let r = Region::full(&g);
        let v = integrate(&g, &r, |l, n| u.get(l, n));
        assert!((v - 2.0 / PI).abs() < 1e-4);
    }

    #[test]
    fn samples_layout_and_shape_check() {
        let g = Grid::line((0.0, 1.0), 10, (0.0, 1.0), 10).unwrap();
        let r = Region::new(&g, [(2, 6), (0, 0)], (1, 5)).unwrap();
        let samples = vec![1.0; r.len()];
        let v = spacetime_integral(&g, &r, &samples).unwrap();
        assert!((v - 0.4 * 0.4).abs() < 1e-14);
        assert!(matches!(
            spacetime_integral(&g, &r, &samples[1..]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn lp_norms() {
        let g = Grid::line((0.0, 1.0), 10, (0.0, 1.0), 10).unwrap();
        let r = Region::full(&g);
        assert_eq!(lp_norm(&g, &r, 3.0, |_, _| 0.0).unwrap(), 0.0);
        assert!((lp_norm(&g, &r, 2.0, |_, _| -1.7).unwrap() - 1.7).abs() < 1e-14);
        assert!(matches!(
            lp_norm(&g, &r, 0.5, |_, _| 1.0),
            Err(Error::InvalidExponent { .. })
        ));
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..1000).map(|k| k as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }
}
