//! Uniform Cartesian grid with a single spacing `h` on both axes.

use crate::error::{Error, Result};

/// Uniform 2D node grid.
///
/// Nodes are stored with the `x1` index varying fastest: node `(i, j)` (0-based)
/// has flat index `j * n1 + i` and sits at `(x1_min + i h, x2_min + j h)`.
/// The row `j = n2 - 1` is the ground surface when `x2_max = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
    pub h: f64,
    pub n1: usize,
    pub n2: usize,
}

fn axis_count(name: &str, lo: f64, hi: f64, h: f64) -> Result<usize> {
    if !(hi > lo) {
        return Err(Error::config(format!("axis {name}: empty extent [{lo}, {hi}]")));
    }
    let ratio = (hi - lo) / h;
    let cells = ratio.round();
    if (ratio - cells).abs() * h > 1e-9 * h.max(1.0) || cells < 2.0 {
        return Err(Error::config(format!(
            "axis {name}: extent {} is not an integer multiple (>= 2) of h = {h} (ratio {ratio})",
            hi - lo
        )));
    }
    Ok(cells as usize + 1)
}

/// Builds a grid over `[x1_min, x1_max] x [x2_min, x2_max]` with spacing `h`.
pub fn build_grid(x1_min: f64, x1_max: f64, x2_min: f64, x2_max: f64, h: f64) -> Result<Grid> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::config(format!("grid spacing must be positive, got {h}")));
    }
    let n1 = axis_count("x1", x1_min, x1_max, h)?;
    let n2 = axis_count("x2", x2_min, x2_max, h)?;
    Ok(Grid { x1_min, x1_max, x2_min, x2_max, h, n1, n2 })
}

impl Grid {
    /// Total node count `N_h`.
    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n1 + i
    }

    #[inline]
    pub fn ij(&self, node: usize) -> (usize, usize) {
        (node % self.n1, node / self.n1)
    }

    #[inline]
    pub fn x1(&self, i: usize) -> f64 {
        self.x1_min + i as f64 * self.h
    }

    #[inline]
    pub fn x2(&self, j: usize) -> f64 {
        self.x2_min + j as f64 * self.h
    }

    pub fn coords(&self, node: usize) -> (f64, f64) {
        let (i, j) = self.ij(node);
        (self.x1(i), self.x2(j))
    }

    /// Row index of the top (free-surface) row.
    pub fn surface_row(&self) -> usize {
        self.n2 - 1
    }

    /// Nearest node index along x1, with the snap distance in metres.
    pub fn snap_x1(&self, x1: f64) -> Result<(usize, f64)> {
        let t = (x1 - self.x1_min) / self.h;
        let i = t.round();
        if i < 0.0 || i > (self.n1 - 1) as f64 {
            return Err(Error::Domain(format!(
                "x1 = {x1} lies outside [{}, {}]",
                self.x1_min, self.x1_max
            )));
        }
        let i = i as usize;
        Ok((i, (self.x1(i) - x1).abs()))
    }

    /// Nearest surface node for a receiver at `x1`, with the snap distance.
    pub fn surface_node(&self, x1: f64) -> Result<(usize, f64)> {
        let (i, d) = self.snap_x1(x1)?;
        Ok((self.index(i, self.surface_row()), d))
    }

    /// Largest axis distance from `(x1, x2)` to the nearest domain edge, negative when outside.
    pub fn boundary_margin(&self, x1: f64, x2: f64) -> f64 {
        (x1 - self.x1_min)
            .min(self.x1_max - x1)
            .min(x2 - self.x2_min)
            .min(self.x2_max - x2)
    }
}
