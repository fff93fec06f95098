//! Uniform tensor-product discretization of the space-time cylinder.
//!
//! A [`Grid`] covers `Ω × (t_lo, t_hi)` with `Ω` an interval (n = 1) or a
//! rectangle (n = 2). Nodes are addressed by `[i, j]` with `j = 0` in one
//! dimension, so 1-D and 2-D code share the same indexing. Gradients are
//! returned as `[f64; 2]` whose second entry is zero when n = 1.

mod field;
mod quadrature;
mod stencil;

pub use field::SpaceTimeField;
pub use quadrature::{integrate, integrate_space, lp_norm, pairwise_sum, spacetime_integral};
pub use stencil::{gradient, hessian_frobenius_sq, nodal_gradients, LevelDerivatives};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial node index `[i, j]`; `j` is always 0 for one-dimensional grids.
pub type Node = [usize; 2];

/// Smallest admissible cell count along any axis, time included.
pub const MIN_CELLS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Self {
        Axis { lo, hi, cells }
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    /// Coordinate of node `i`, computed directly so there is no drift along the axis.
    pub fn coord(&self, i: usize) -> f64 {
        if i == self.cells {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.hi <= self.lo {
            return Err(Error::InvalidGrid(format!(
                "{name} axis needs finite lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.cells < MIN_CELLS {
            return Err(Error::InvalidGrid(format!(
                "{name} axis needs at least {MIN_CELLS} cells, got {}",
                self.cells
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    space: Vec<Axis>,
    time: Axis,
}

impl Grid {
    pub fn new(space: Vec<Axis>, time: Axis) -> Result<Self> {
        if space.is_empty() || space.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {}",
                space.len()
            )));
        }
        for (k, axis) in space.iter().enumerate() {
            axis.validate(["x", "y"][k])?;
        }
        time.validate("t")?;
        Ok(Grid { space, time })
    }

    pub fn line(x: (f64, f64), nx: usize, t: (f64, f64), nt: usize) -> Result<Self> {
        Grid::new(vec![Axis::new(x.0, x.1, nx)], Axis::new(t.0, t.1, nt))
    }

    pub fn plane(
        x: (f64, f64),
        nx: usize,
        y: (f64, f64),
        ny: usize,
        t: (f64, f64),
        nt: usize,
    ) -> Result<Self> {
        Grid::new(
            vec![Axis::new(x.0, x.1, nx), Axis::new(y.0, y.1, ny)],
            Axis::new(t.0, t.1, nt),
        )
    }

    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.space[k]
    }

    pub fn space_axes(&self) -> &[Axis] {
        &self.space
    }

    pub fn time_axis(&self) -> &Axis {
        &self.time
    }

    pub fn h(&self, k: usize) -> f64 {
        self.space[k].step()
    }

    pub fn tau(&self) -> f64 {
        self.time.step()
    }

    /// Node counts per spatial axis; the unused second axis of a 1-D grid has one node.
    pub fn shape(&self) -> [usize; 2] {
        [
            self.space[0].nodes(),
            self.space.get(1).map_or(1, Axis::nodes),
        ]
    }

    pub fn spatial_len(&self) -> usize {
        let [a, b] = self.shape();
        a * b
    }

    pub fn levels(&self) -> usize {
        self.time.nodes()
    }

    pub fn len(&self) -> usize {
        self.levels() * self.spatial_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial_index(&self, node: Node) -> usize {
        node[0] * self.shape()[1] + node[1]
    }

    pub fn node_at(&self, s: usize) -> Node {
        let ny = self.shape()[1];
        [s / ny, s % ny]
    }

    pub fn flat(&self, level: usize, node: Node) -> usize {
        level * self.spatial_len() + self.spatial_index(node)
    }

    pub fn coord(&self, node: Node) -> [f64; 2] {
        [
            self.space[0].coord(node[0]),
            self.space.get(1).map_or(0.0, |a| a.coord(node[1])),
        ]
    }

    pub fn t(&self, level: usize) -> f64 {
        self.time.coord(level)
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        let [a, b] = self.shape();
        (0..a).flat_map(move |i| (0..b).map(move |j| [i, j]))
    }

    /// True for nodes on the lateral boundary `∂Ω`.
    pub fn is_boundary(&self, node: Node) -> bool {
        let [a, b] = self.shape();
        node[0] == 0
            || node[0] + 1 == a
            || (self.dim() == 2 && (node[1] == 0 || node[1] + 1 == b))
    }

    /// Number of cells between `node` and the nearest lateral boundary.
    pub fn margin(&self, node: Node) -> usize {
        let [a, b] = self.shape();
        let mut m = node[0].min(a - 1 - node[0]);
        if self.dim() == 2 {
            m = m.min(node[1]).min(b - 1 - node[1]);
        }
        m
    }

    /// Lebesgue measure of `Ω_T`.
    pub fn measure(&self) -> f64 {
        self.space.iter().map(|a| a.hi - a.lo).product::<f64>() * (self.time.hi - self.time.lo)
    }

    /// Same cylinder with every cell count multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Grid> {
        let scale = |a: &Axis| Axis::new(a.lo, a.hi, a.cells * factor);
        Grid::new(self.space.iter().map(scale).collect(), scale(&self.time))
    }

    /// Copy with the space axes reversed (x ↔ y); identity in 1-D.
    pub fn transposed(&self) -> Grid {
        let mut space = self.space.clone();
        space.reverse();
        Grid {
            space,
            time: self.time,
        }
    }

    pub fn describe(&self) -> String {
        let sp: Vec<String> = self
            .space
            .iter()
            .map(|a| format!("[{}, {}]/{}", a.lo, a.hi, a.cells))
            .collect();
        format!(
            "n={} space {} time [{}, {}]/{}",
            self.dim(),
            sp.join(" x "),
            self.time.lo,
            self.time.hi,
            self.time.cells
        )
    }
}

/// Axis-aligned box of nodes, inclusive index ranges in space and time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub space: [(usize, usize); 2],
    pub time: (usize, usize),
}

impl Region {
    pub fn new(grid: &Grid, space: [(usize, usize); 2], time: (usize, usize)) -> Result<Self> {
        let shape = grid.shape();
        for k in 0..2 {
            let (a, b) = space[k];
            let needs_extent = k < grid.dim();
            if b >= shape[k] || a > b || (needs_extent && a == b) {
                return Err(Error::InvalidRegion(format!(
                    "axis {k} range {a}..={b} invalid for {} nodes",
                    shape[k]
                )));
            }
        }
        if time.1 >= grid.levels() || time.0 >= time.1 {
            return Err(Error::InvalidRegion(format!(
                "time range {}..={} invalid for {} levels",
                time.0,
                time.1,
                grid.levels()
            )));
        }
        Ok(Region { space, time })
    }

    pub fn full(grid: &Grid) -> Self {
        let [a, b] = grid.shape();
        Region {
            space: [(0, a - 1), (0, b - 1)],
            time: (0, grid.levels() - 1),
        }
    }

    /// Sub-box keeping `space_margin` cells away from `∂Ω` and `time_margin`
    /// levels away from both time ends.
    pub fn interior(grid: &Grid, space_margin: usize, time_margin: usize) -> Result<Self> {
        let [a, b] = grid.shape();
        let ry = if grid.dim() == 2 {
            (space_margin, b.saturating_sub(space_margin + 1))
        } else {
            (0, 0)
        };
        Region::new(
            grid,
            [(space_margin, a.saturating_sub(space_margin + 1)), ry],
            (
                time_margin,
                grid.levels().saturating_sub(time_margin + 1),
            ),
        )
    }

    /// Two cells in space, one level in time: room for every stencil in the crate.
    pub fn default_interior(grid: &Grid) -> Result<Self> {
        Region::interior(grid, 2, 1)
    }

    /// Region covering the given physical box (nodes whose coordinates fall inside it).
    pub fn from_box(grid: &Grid, space: &[(f64, f64)], time: (f64, f64)) -> Result<Self> {
        if space.len() != grid.dim() {
            return Err(Error::InvalidRegion(format!(
                "box has {} axes, grid has {}",
                space.len(),
                grid.dim()
            )));
        }
        let span = |axis: &Axis, (lo, hi): (f64, f64)| {
            let h = axis.step();
            let a = ((lo - axis.lo) / h - 1e-9).ceil().max(0.0) as usize;
            let b = (((hi - axis.lo) / h + 1e-9).floor() as usize).min(axis.cells);
            (a, b)
        };
        let mut ranges = [(0, 0); 2];
        for (k, &b) in space.iter().enumerate() {
            ranges[k] = span(grid.axis(k), b);
        }
        Region::new(grid, ranges, span(grid.time_axis(), time))
    }

    pub fn contains(&self, level: usize, node: Node) -> bool {
        (self.time.0..=self.time.1).contains(&level)
            && (self.space[0].0..=self.space[0].1).contains(&node[0])
            && (self.space[1].0..=self.space[1].1).contains(&node[1])
    }

    /// Strictly inside the grid's index range in every spatial axis of the grid.
    pub fn is_interior(&self, grid: &Grid) -> bool {
        let shape = grid.shape();
        (0..grid.dim()).all(|k| self.space[k].0 > 0 && self.space[k].1 + 1 < shape[k])
    }

    pub fn spatial_nodes(&self) -> impl Iterator<Item = Node> + '_ {
        let (i0, i1) = self.space[0];
        let (j0, j1) = self.space[1];
        (i0..=i1).flat_map(move |i| (j0..=j1).map(move |j| [i, j]))
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<usize> {
        self.time.0..=self.time.1
    }

    pub fn len(&self) -> usize {
        let n = |(a, b): (usize, usize)| b - a + 1;
        n(self.space[0]) * n(self.space[1]) * n(self.time)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_coarse_or_degenerate_axes() {
        assert!(Grid::line((0.0, 1.0), 7, (0.0, 1.0), 8).is_err());
        assert!(Grid::line((0.0, 1.0), 8, (0.0, 1.0), 4).is_err());
        assert!(Grid::line((1.0, 1.0), 8, (0.0, 1.0), 8).is_err());
        assert!(Grid::new(vec![], Axis::new(0.0, 1.0, 8)).is_err());
        assert!(Grid::line((0.0, 1.0), 8, (0.0, 1.0), 8).is_ok());
    }

    #[test]
    fn coordinates_do_not_drift() {
        let g = Grid::line((-4.0, 4.0), 1000, (0.0, 1.0), 10).unwrap();
        let h = g.h(0);
        for i in 0..=1000 {
            let x = g.coord([i, 0])[0];
            let exact = -4.0 + i as f64 * h;
            assert!((x - exact).abs() <= f64::EPSILON * 4.0);
        }
        assert_eq!(g.coord([1000, 0])[0], 4.0);
    }

    #[test]
    fn flat_indexing_round_trips() {
        let g = Grid::plane((0.0, 1.0), 8, (0.0, 2.0), 10, (0.0, 1.0), 8).unwrap();
        assert_eq!(g.shape(), [9, 11]);
        for s in 0..g.spatial_len() {
            assert_eq!(g.spatial_index(g.node_at(s)), s);
        }
        assert_eq!(g.flat(2, [1, 3]), 2 * 99 + 11 + 3);
    }

    #[test]
    fn regions() {
        let g = Grid::line((0.0, 1.0), 10, (0.0, 1.0), 10).unwrap();
        let r = Region::default_interior(&g).unwrap();
        assert_eq!(r.space[0], (2, 8));
        assert_eq!(r.space[1], (0, 0));
        assert_eq!(r.time, (1, 9));
        assert!(r.is_interior(&g));
        assert!(!Region::full(&g).is_interior(&g));
        assert!(Region::new(&g, [(3, 3), (0, 0)], (0, 2)).is_err());
        assert!(Region::new(&g, [(0, 11), (0, 0)], (0, 2)).is_err());

        let b = Region::from_box(&g, &[(0.25, 0.75)], (0.1, 0.9)).unwrap();
        assert_eq!(b.space[0], (3, 7));
        assert_eq!(b.time, (1, 9));
    }
}
