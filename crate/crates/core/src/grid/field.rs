use super::{Grid, Node};
use crate::error::{Error, Result};

/// Nodal values of `u(x, t)` on every node of a [`Grid`], time level outermost.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    grid: Grid,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: &Grid) -> Self {
        SpaceTimeField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(k));
        }
        Ok(SpaceTimeField {
            grid: grid.clone(),
            values,
        })
    }

    /// Samples `f(x, t)` at every node; `x` has `grid.dim()` entries.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64], f64) -> f64) -> Result<Self> {
        let dim = grid.dim();
        let mut values = Vec::with_capacity(grid.len());
        for level in 0..grid.levels() {
            let t = grid.t(level);
            for node in grid.nodes() {
                let x = grid.coord(node);
                values.push(f(&x[..dim], t));
            }
        }
        SpaceTimeField::from_values(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, level: usize, node: Node) -> f64 {
        self.values[self.grid.flat(level, node)]
    }

    pub fn level(&self, level: usize) -> &[f64] {
        let n = self.grid.spatial_len();
        &self.values[level * n..(level + 1) * n]
    }

    pub(crate) fn level_mut(&mut self, level: usize) -> &mut [f64] {
        let n = self.grid.spatial_len();
        &mut self.values[level * n..(level + 1) * n]
    }

    pub fn same_grid(&self, other: &SpaceTimeField) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same values with the two space axes swapped (n = 2); identity in 1-D.
    pub fn transposed(&self) -> SpaceTimeField {
        let grid = self.grid.transposed();
        if self.grid.dim() == 1 {
            return SpaceTimeField {
                grid,
                values: self.values.clone(),
            };
        }
        let mut values = vec![0.0; self.values.len()];
        for level in 0..self.grid.levels() {
            for node in self.grid.nodes() {
                values[grid.flat(level, [node[1], node[0]])] = self.get(level, node);
            }
        }
        SpaceTimeField { grid, values }
    }
}
