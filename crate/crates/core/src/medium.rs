//! Layered isotropic elastic material.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Converts density and wave speeds to Lamé parameters `(λ, μ)`.
///
/// Requires `c_p > c_s > 0`; a medium with `λ < 0` (but `λ + 2μ > 0`) is accepted with a warning.
pub fn lame_from_velocities(nu: f64, cp: f64, cs: f64) -> Result<(f64, f64)> {
    if !(nu > 0.0 && cp > 0.0 && cs > 0.0) || !(nu.is_finite() && cp.is_finite() && cs.is_finite()) {
        return Err(Error::Domain(format!(
            "density and wave speeds must be positive, got ν={nu}, c_p={cp}, c_s={cs}"
        )));
    }
    if cp <= cs {
        return Err(Error::Domain(format!("c_p = {cp} must exceed c_s = {cs}")));
    }
    let mu = nu * cs * cs;
    let lambda = nu * (cp * cp - 2.0 * cs * cs);
    if lambda < 0.0 {
        log::warn!("negative Lamé λ = {lambda:e} (c_p < √2 c_s)");
    }
    Ok((lambda, mu))
}

/// One horizontal layer `x2_bottom <= x2 <= x2_top`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub x2_top: f64,
    pub x2_bottom: f64,
    pub density: f64,
    pub cp: f64,
    pub cs: f64,
}

/// Ordered stack of layers from the surface downwards.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub layers: Vec<Layer>,
}

impl LayerSpec {
    /// Two-layer LOH.1-like medium: a 1 km soft layer over a half space.
    pub fn loh1(depth: f64) -> Self {
        LayerSpec {
            layers: vec![
                Layer { x2_top: 0.0, x2_bottom: -1000.0, density: 2600.0, cp: 4000.0, cs: 2000.0 },
                Layer { x2_top: -1000.0, x2_bottom: depth, density: 2700.0, cp: 6000.0, cs: 3464.0 },
            ],
        }
    }

    pub fn homogeneous(x2_top: f64, x2_bottom: f64, density: f64, cp: f64, cs: f64) -> Self {
        LayerSpec { layers: vec![Layer { x2_top, x2_bottom, density, cp, cs }] }
    }

    /// Checks that the layers are ordered, contiguous and cover `[x2_min, x2_max]`.
    pub fn validate(&self, x2_min: f64, x2_max: f64) -> Result<()> {
        let tol = 1e-9 * (x2_max - x2_min).abs().max(1.0);
        let first = self.layers.first().ok_or_else(|| Error::config("no layers given"))?;
        if (first.x2_top - x2_max).abs() > tol && first.x2_top < x2_max {
            return Err(Error::config(format!(
                "top layer starts at x2 = {} below the domain top {x2_max}",
                first.x2_top
            )));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if !(l.x2_top > l.x2_bottom) {
                return Err(Error::config(format!("layer {k} has x2_top <= x2_bottom")));
            }
            lame_from_velocities(l.density, l.cp, l.cs).map_err(|e| Error::config(format!("layer {k}: {e}")))?;
            if k > 0 {
                let prev = &self.layers[k - 1];
                if (prev.x2_bottom - l.x2_top).abs() > tol {
                    return Err(Error::config(format!(
                        "gap or overlap between layer {} (bottom {}) and layer {k} (top {})",
                        k - 1,
                        prev.x2_bottom,
                        l.x2_top
                    )));
                }
            }
        }
        let last = self.layers.last().unwrap();
        if last.x2_bottom > x2_min + tol {
            return Err(Error::config(format!(
                "layers end at x2 = {} above the domain bottom {x2_min}",
                last.x2_bottom
            )));
        }
        Ok(())
    }
}

/// Per-node density and Lamé parameters.
#[derive(Debug, Clone)]
pub struct MaterialField {
    pub density: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

impl MaterialField {
    pub fn cp(&self, node: usize) -> f64 {
        ((self.lambda[node] + 2.0 * self.mu[node]) / self.density[node]).sqrt()
    }

    pub fn cs(&self, node: usize) -> f64 {
        (self.mu[node] / self.density[node]).sqrt()
    }

    pub fn max_cp(&self) -> f64 {
        (0..self.density.len()).map(|n| self.cp(n)).fold(0.0, f64::max)
    }

    /// Largest `sqrt(c_p² + c_s²)` over the field, used by the time-step limit.
    pub fn max_combined_speed(&self) -> f64 {
        (0..self.density.len())
            .map(|n| (self.cp(n).powi(2) + self.cs(n).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn check_positive(&self) -> Result<()> {
        for n in 0..self.density.len() {
            let (nu, l, m) = (self.density[n], self.lambda[n], self.mu[n]);
            if !(nu > 0.0 && m > 0.0 && l + 2.0 * m > 0.0) {
                return Err(Error::Domain(format!("non-physical material at node {n}: ν={nu}, λ={l}, μ={m}")));
            }
        }
        Ok(())
    }
}

/// Samples a layer stack on the grid nodes. Interface nodes take the upper layer.
pub fn layered_material(layers: &LayerSpec, grid: &Grid) -> Result<MaterialField> {
    layers.validate(grid.x2_min, grid.x2_max)?;
    let props: Vec<(f64, f64, f64)> = layers
        .layers
        .iter()
        .map(|l| {
            let (lam, mu) = lame_from_velocities(l.density, l.cp, l.cs)?;
            Ok((l.density, lam, mu))
        })
        .collect::<Result<_>>()?;
    let mut row_props = Vec::with_capacity(grid.n2);
    for j in 0..grid.n2 {
        let x2 = grid.x2(j);
        let k = layers
            .layers
            .iter()
            .position(|l| x2 >= l.x2_bottom)
            .unwrap_or(layers.layers.len() - 1);
        row_props.push(props[k]);
    }
    let n = grid.len();
    let mut m = MaterialField { density: vec![0.0; n], lambda: vec![0.0; n], mu: vec![0.0; n] };
    for node in 0..n {
        let (_, j) = grid.ij(node);
        let (d, l, u) = row_props[j];
        m.density[node] = d;
        m.lambda[node] = l;
        m.mu[node] = u;
    }
    m.check_positive()?;
    Ok(m)
}
