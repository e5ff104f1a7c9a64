//! The seismic forward problem: source → receivers, with θ-derivatives.

use std::sync::Once;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hessian::{receiver_contributions, NoiseModel};
use crate::inference::Prior;
use crate::medium::{layered_material, LayerSpec, MaterialField};
use crate::solver::{assemble_operators, cfl_limit, DiscreteOperators, ReceiverLoad, ReceiverSeries, SparseForcing, Stepper};
use crate::source::{time_function, SourcePatch, SourceParams, N_THETA};

static SMOOTH_START: Once = Once::new();

/// Receiver set snapped to grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Receivers {
    pub positions: Vec<(f64, f64)>,
    pub nodes: Vec<usize>,
}

/// Grid, material, operators and time axis of one forward problem.
#[derive(Debug, Clone)]
pub struct SeismicModel {
    pub grid: Grid,
    pub material: MaterialField,
    pub ops: DiscreteOperators,
    pub dt: f64,
    pub nt: usize,
}

/// Number of levels `N_t = 1 + T/Δt`; `T` must be a whole number of steps.
pub fn level_count(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::config(format!("dt = {dt} and T = {horizon} must be positive")));
    }
    let steps = horizon / dt;
    let k = steps.round();
    if (steps - k).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::config(format!("T = {horizon} is not a multiple of dt = {dt}")));
    }
    Ok(k as usize + 1)
}

impl SeismicModel {
    /// Builds the model and rejects time steps above `cfl · h / max sqrt(c_p² + c_s²)`.
    pub fn new(grid: Grid, layers: &LayerSpec, dt: f64, horizon: f64, cfl: f64) -> Result<Self> {
        let material = layered_material(layers, &grid)?;
        let nt = level_count(dt, horizon)?;
        let limit = cfl * cfl_limit(grid.h, material.max_combined_speed());
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "dt = {dt} violates the stability limit {limit:.6} (cfl = {cfl}, h = {}, max sqrt(cp^2+cs^2) = {:.3})",
                grid.h,
                material.max_combined_speed()
            )));
        }
        let ops = assemble_operators(&grid, &material);
        Ok(SeismicModel { grid, material, ops, dt, nt })
    }

    pub fn stepper(&self) -> Stepper<'_> {
        Stepper::new(&self.ops, self.dt, self.nt).expect("time axis validated at construction")
    }

    pub fn horizon(&self) -> f64 {
        (self.nt - 1) as f64 * self.dt
    }

    /// Surface receivers at the given `x1` positions, snapped to the nearest node.
    pub fn receivers(&self, x1: &[f64]) -> Result<Receivers> {
        let mut out = Receivers { positions: Vec::new(), nodes: Vec::new() };
        for &x in x1 {
            let (node, d) = self.grid.surface_node(x)?;
            if d > 1e-9 * self.grid.h {
                log::warn!("receiver at x1 = {x} snapped by {d} m to the nearest grid node");
            }
            out.positions.push(self.grid.coords(node));
            out.nodes.push(node);
        }
        Ok(out)
    }

    /// Every node of the surface row.
    pub fn surface(&self) -> Receivers {
        let j = self.grid.surface_row();
        let nodes: Vec<usize> = (0..self.grid.n1).map(|i| self.grid.index(i, j)).collect();
        Receivers { positions: nodes.iter().map(|&n| self.grid.coords(n)).collect(), nodes }
    }

    /// Discrete source for the primal problem and/or the sensitivities to `active` parameters.
    pub fn source_forcing(&self, theta: &SourceParams, primal: bool, active: &[usize]) -> Result<SparseForcing> {
        let patch = SourcePatch::new(theta, &self.grid)?;
        let s0 = time_function(0.0, theta.ts, theta.omega).s;
        let peak = time_function(theta.ts, theta.ts, theta.omega).s;
        if s0 > 1e-8 * peak {
            SMOOTH_START.call_once(|| {
                log::warn!("source time function is not negligible at t = 0 (S(0)/S(t_s) = {:e})", s0 / peak)
            });
        }
        let cols = primal as usize + active.len();
        let rows: Vec<usize> = patch.nodes.iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect();
        let mut values = Vec::with_capacity(self.nt * rows.len() * cols);
        for m in 0..self.nt {
            let t = m as f64 * self.dt;
            let f = if primal { Some(patch.force(t)) } else { None };
            let jac = if active.is_empty() { None } else { Some(patch.jacobian(t)) };
            for p in 0..36 {
                for k in 0..2 {
                    if let Some(f) = &f {
                        values.push(f[p][k]);
                    }
                    if let Some(j) = &jac {
                        values.extend(active.iter().map(|&a| j[p][k][a]));
                    }
                }
            }
        }
        Ok(SparseForcing { rows, cols, values })
    }

    pub fn forward(&self, theta: &SourceParams, rec: &Receivers) -> Result<ReceiverSeries> {
        let f = self.source_forcing(theta, true, &[])?;
        Ok(self.stepper().forward(&f, &rec.positions, &rec.nodes, None)?.remove(0))
    }

    /// `∂u/∂θ_j` at the receivers for each `j` in `active`.
    pub fn sensitivities(&self, theta: &SourceParams, active: &[usize], rec: &Receivers) -> Result<Vec<ReceiverSeries>> {
        let f = self.source_forcing(theta, false, active)?;
        self.stepper().forward(&f, &rec.positions, &rec.nodes, None)
    }

    /// Primal recording followed by the sensitivities, from one batched solve.
    pub fn forward_with_sensitivities(
        &self,
        theta: &SourceParams,
        active: &[usize],
        rec: &Receivers,
    ) -> Result<(ReceiverSeries, Vec<ReceiverSeries>)> {
        let f = self.source_forcing(theta, true, active)?;
        let mut out = self.stepper().forward(&f, &rec.positions, &rec.nodes, None)?;
        let primal = out.remove(0);
        Ok((primal, out))
    }

    /// Splits the recording into `offset + θ[param] · column` for a moment component `param`.
    pub fn moment_split(&self, theta: &SourceParams, param: usize, rec: &Receivers) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(4..7).contains(&param) {
            return Err(Error::Domain(format!("parameter {param} does not enter the source linearly")));
        }
        let mut t = theta.to_array();
        t[param] = 0.0;
        let (offset, mut col) = self.forward_with_sensitivities(&SourceParams::from_array(t), &[param], rec)?;
        Ok((offset.data, col.remove(0).data))
    }

    /// Gauss-Newton Hessian `H_I` for the `active` parameters.
    pub fn hessian_h1(&self, theta: &SourceParams, active: &[usize], rec: &Receivers, noise: &NoiseModel) -> Result<DMatrix<f64>> {
        crate::hessian::misfit_hessian_h1(&self.sensitivities(theta, active, rec)?, noise)
    }

    /// Per-surface-node contributions to `H_I`, indexed by the column `i` of the surface row.
    pub fn surface_contributions(&self, theta: &SourceParams, active: &[usize], noise: &NoiseModel) -> Result<Vec<DMatrix<f64>>> {
        receiver_contributions(&self.sensitivities(theta, active, &self.surface())?, noise)
    }

    /// Adjoint evaluation of the misfit gradient and `H_II` for the `active` parameters.
    ///
    /// `residual` holds `C_ε⁻¹ (u(θ) − d)` at the receivers, i.e. `∇_u` of the misfit.
    pub fn adjoint_gradient_h2(
        &self,
        theta: &SourceParams,
        active: &[usize],
        residual: &ReceiverSeries,
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let patch = SourcePatch::new(theta, &self.grid)?;
        let n = active.len();
        let mut grad = vec![0.0; n];
        let mut h2 = DMatrix::zeros(n, n);
        let c = &self.ops.c;
        let load = ReceiverLoad { series: residual.clone() };
        self.stepper().dual(&load, |m, phi| {
            if m + 1 >= self.nt {
                return;
            }
            let t = m as f64 * self.dt;
            let tv = time_function(t, theta.ts, theta.omega);
            let jac = patch.jacobian(t);
            for p in 0..36 {
                let node = patch.nodes[p];
                for k in 0..2 {
                    let row = 2 * node + k;
                    let w = phi[row] * c[row];
                    if w == 0.0 {
                        continue;
                    }
                    let block = patch.hessian_block_with(&tv, p, k);
                    for (a, &ia) in active.iter().enumerate() {
                        grad[a] -= w * jac[p][k][ia];
                        for (b, &ib) in active.iter().enumerate() {
                            h2[(a, b)] -= w * block[ia][ib];
                        }
                    }
                }
            }
        })?;
        Ok((grad, h2))
    }
}

/// `C_ε⁻¹ (sim − data)` sample by sample.
pub fn weighted_residual(sim: &ReceiverSeries, data: &ReceiverSeries, noise: &NoiseModel) -> Result<ReceiverSeries> {
    if !sim.same_shape(data) {
        return Err(Error::Shape("simulated and observed series differ in shape".into()));
    }
    let mut out = sim.clone();
    let ci = noise.inverse();
    for (o, d) in out.data.chunks_exact_mut(2).zip(data.data.chunks_exact(2)) {
        let r = [o[0] - d[0], o[1] - d[1]];
        o[0] = ci[(0, 0)] * r[0] + ci[(0, 1)] * r[1];
        o[1] = ci[(1, 0)] * r[0] + ci[(1, 1)] * r[1];
    }
    Ok(out)
}

/// Adds independent noise draws to a recording.
pub fn add_noise<R: rand::Rng>(series: &ReceiverSeries, noise: &NoiseModel, rng: &mut R) -> ReceiverSeries {
    let mut out = series.clone();
    for s in out.data.chunks_exact_mut(2) {
        let xi = [rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal)];
        let e = noise.color(xi);
        s[0] += e[0];
        s[1] += e[1];
    }
    out
}

/// A subset of source parameters treated as unknown, the rest held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedProblem {
    pub base: SourceParams,
    pub active: Vec<usize>,
    pub prior: Prior,
}

impl ReducedProblem {
    /// `full_prior` covers all seven parameters; its restriction to `active` becomes the prior.
    pub fn new(base: SourceParams, active: Vec<usize>, full_prior: &Prior) -> Result<Self> {
        if full_prior.dim() != N_THETA {
            return Err(Error::config(format!("prior must have {N_THETA} ranges, got {}", full_prior.dim())));
        }
        let mut seen = [false; N_THETA];
        for &a in &active {
            if a >= N_THETA || seen[a] {
                return Err(Error::config(format!("invalid or repeated active parameter index {a}")));
            }
            seen[a] = true;
        }
        if active.is_empty() {
            return Err(Error::config("no active parameters"));
        }
        let prior = Prior::new(active.iter().map(|&a| full_prior.bounds[a]).collect())?;
        Ok(ReducedProblem { base, active, prior })
    }

    pub fn full(&self, reduced: &[f64]) -> SourceParams {
        let mut a = self.base.to_array();
        for (&i, &v) in self.active.iter().zip(reduced) {
            a[i] = v;
        }
        SourceParams::from_array(a)
    }

    pub fn reduce(&self, theta: &SourceParams) -> Vec<f64> {
        let a = theta.to_array();
        self.active.iter().map(|&i| a[i]).collect()
    }
}

/// Default prior ranges for all seven parameters.
pub fn default_prior() -> Prior {
    Prior::new(vec![
        (-1000.0, 1000.0),
        (-3000.0, -1000.0),
        (0.5, 1.5),
        (3.0, 5.0),
        (1e13, 1e15),
        (1e13, 1e15),
        (1e13, 1e15),
    ])
    .expect("static prior is valid")
}
