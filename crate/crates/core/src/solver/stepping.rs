//! Explicit time stepping shared by the primal, sensitivity and dual problems.
//!
//! Every problem is advanced by the same recursion
//! `P u^{m+1} = Q u^m + R u^{m−1} + C f^m` with diagonal `P`, `R` and
//! `Q = A + diag(q)`. Interior rows use the central second difference in time;
//! absorbing rows use a central first difference with the self coupling
//! averaged over `m ± 1`.

use super::operators::{Csr, DiscreteOperators};
use super::series::ReceiverSeries;
use crate::error::{Error, Result};

/// Right-hand side supplier for one or more simultaneous problems.
pub trait Forcing: Sync {
    /// Number of simultaneous right-hand sides.
    fn columns(&self) -> usize;

    /// Calls `add(row, column, value)` for every nonzero entry of the load at time level `m`.
    fn visit(&self, m: usize, add: &mut dyn FnMut(usize, usize, f64));
}

/// Load given explicitly on a fixed row set for every time level.
#[derive(Debug, Clone)]
pub struct SparseForcing {
    pub rows: Vec<usize>,
    pub cols: usize,
    /// `values[(m * rows.len() + e) * cols + c]`
    pub values: Vec<f64>,
}

impl Forcing for SparseForcing {
    fn columns(&self) -> usize {
        self.cols
    }

    fn visit(&self, m: usize, add: &mut dyn FnMut(usize, usize, f64)) {
        let nr = self.rows.len();
        let base = m * nr * self.cols;
        if base >= self.values.len() {
            return;
        }
        for (e, &row) in self.rows.iter().enumerate() {
            for c in 0..self.cols {
                let v = self.values[base + e * self.cols + c];
                if v != 0.0 {
                    add(row, c, v);
                }
            }
        }
    }
}

/// Data misfit gradient `∇_u 𝕃` concentrated on receiver nodes.
#[derive(Debug, Clone)]
pub struct ReceiverLoad {
    pub series: ReceiverSeries,
}

impl Forcing for ReceiverLoad {
    fn columns(&self) -> usize {
        1
    }

    fn visit(&self, m: usize, add: &mut dyn FnMut(usize, usize, f64)) {
        for (r, &node) in self.series.nodes.iter().enumerate() {
            let [a, b] = self.series.sample(r, m);
            add(2 * node, 0, a);
            add(2 * node + 1, 0, b);
        }
    }
}

/// Time-step limit `h / max sqrt(c_p² + c_s²)` of the explicit scheme.
pub fn cfl_limit(h: f64, max_combined_speed: f64) -> f64 {
    h / max_combined_speed
}

/// Time stepper bound to an operator, a step size and a number of levels.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    pub ops: &'a DiscreteOperators,
    pub dt: f64,
    pub nt: usize,
    p_inv: Vec<f64>,
    q: Vec<f64>,
    r: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(ops: &'a DiscreteOperators, dt: f64, nt: usize) -> Result<Self> {
        if !(dt > 0.0) || nt < 2 {
            return Err(Error::config(format!("invalid time axis: dt = {dt}, N_t = {nt}")));
        }
        let n = ops.rows();
        let mut p_inv = vec![0.0; n];
        let mut q = vec![0.0; n];
        let mut r = vec![0.0; n];
        for k in 0..n {
            if ops.absorbing[k] {
                let half = 0.5 / dt;
                p_inv[k] = 1.0 / (half - 0.5 * ops.d[k]);
                r[k] = half + 0.5 * ops.d[k];
            } else {
                p_inv[k] = dt * dt;
                q[k] = 2.0 / (dt * dt);
                r[k] = -1.0 / (dt * dt);
            }
        }
        Ok(Stepper { ops, dt, nt, p_inv, q, r })
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.dt
    }

    /// Runs the recursion for `nt` states starting from two zero states.
    ///
    /// `load(s, rhs)` adds the forcing of step `s → s+1`; `visit(s, state)` sees state `s`.
    fn march(
        &self,
        a: &Csr,
        k: usize,
        mut load: impl FnMut(usize, &mut [f64]),
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Result<()> {
        let n = self.ops.rows() * k;
        let mut prev = vec![0.0; n];
        let mut cur = vec![0.0; n];
        let mut next = vec![0.0; n];
        for s in 0..self.nt {
            visit(s, &cur);
            if s + 1 == self.nt {
                break;
            }
            a.mul_batched(&cur, &mut next, k);
            load(s, &mut next);
            let mut finite = true;
            for row in 0..self.ops.rows() {
                let (pi, q, r) = (self.p_inv[row], self.q[row], self.r[row]);
                for c in row * k..(row + 1) * k {
                    let v = (next[c] + q * cur[c] + r * prev[c]) * pi;
                    finite &= v.is_finite();
                    next[c] = v;
                }
            }
            if !finite {
                return Err(Error::Instability { step: s + 1 });
            }
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(())
    }

    /// Solves the forward problem for every column of `forcing`.
    ///
    /// Returns one receiver recording per column. `history`, if given, sees the
    /// full interleaved state (`[row][column]`) at every level.
    pub fn forward(
        &self,
        forcing: &dyn Forcing,
        positions: &[(f64, f64)],
        receivers: &[usize],
        mut history: Option<&mut dyn FnMut(usize, &[f64])>,
    ) -> Result<Vec<ReceiverSeries>> {
        let k = forcing.columns();
        let c = &self.ops.c;
        let mut out: Vec<ReceiverSeries> = (0..k)
            .map(|_| ReceiverSeries::zeros(positions.to_vec(), receivers.to_vec(), self.nt, self.dt))
            .collect();
        self.march(
            &self.ops.a,
            k,
            |m, rhs| forcing.visit(m, &mut |row, col, v| rhs[row * k + col] += c[row] * v),
            |m, state| {
                for (ri, &node) in receivers.iter().enumerate() {
                    for comp in 0..2 {
                        let row = 2 * node + comp;
                        for (col, series) in out.iter_mut().enumerate() {
                            series.data[(ri * self.nt + m) * 2 + comp] = state[row * k + col];
                        }
                    }
                }
                if let Some(h) = history.as_mut() {
                    h(m, state);
                }
            },
        )?;
        Ok(out)
    }

    /// Solves the dual problem backwards in time for every column of `load`.
    ///
    /// The dual state satisfies `P φ^{n−1} = Qᵀ φ^n + R φ^{n+1} − w^n` with
    /// `φ^{N_t} = φ^{N_t−1} = 0`. `visit(m, φ^m)` is called for `m = N_t−1` down
    /// to `0`. For any load `w` and forcing `q` this gives
    /// `Σ_m ⟨w^m, u^m⟩ = −Σ_m ⟨φ^m, C q^m⟩`.
    pub fn dual(&self, load: &dyn Forcing, mut visit: impl FnMut(usize, &[f64])) -> Result<()> {
        let k = load.columns();
        let nt = self.nt;
        self.march(
            &self.ops.at,
            k,
            |s, rhs| load.visit(nt - 1 - s, &mut |row, col, v| rhs[row * k + col] -= v),
            |s, state| visit(nt - 1 - s, state),
        )
        .map_err(|e| match e {
            Error::Instability { step } => Error::Instability { step: nt - 1 - step },
            other => other,
        })
    }

    /// Dual histories `φ^m` for `m = 0..N_t`, each of length `rows × columns`.
    pub fn dual_history(&self, load: &dyn Forcing) -> Result<Vec<Vec<f64>>> {
        let mut hist = vec![Vec::new(); self.nt];
        self.dual(load, |m, phi| hist[m] = phi.to_vec())?;
        Ok(hist)
    }
}
