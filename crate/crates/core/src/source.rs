//! Point moment-tensor source.
//!
//! The body force is `f(t, x) = S(t) M ∇δ(x − x_s)` with a Gaussian time function
//! `S`. On the grid, `δ` and `δ′` are replaced by six-point stencils that are
//! fourth-order accurate and twice continuously differentiable in the source
//! position, which makes the discrete force smooth enough for second derivatives.

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const N_THETA: usize = 7;

pub const PARAM_NAMES: [&str; N_THETA] = ["x1s", "x2s", "ts", "omega", "m11", "m12", "m22"];

/// Source parameters `θ = (x1s, x2s, t_s, ω_s, m11, m12, m22)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    pub x1s: f64,
    pub x2s: f64,
    pub ts: f64,
    pub omega: f64,
    pub m11: f64,
    pub m12: f64,
    pub m22: f64,
}

impl SourceParams {
    pub fn from_array(a: [f64; N_THETA]) -> Self {
        SourceParams { x1s: a[0], x2s: a[1], ts: a[2], omega: a[3], m11: a[4], m12: a[5], m22: a[6] }
    }

    pub fn to_array(&self) -> [f64; N_THETA] {
        [self.x1s, self.x2s, self.ts, self.omega, self.m11, self.m12, self.m22]
    }
}

/// Value and θ-derivatives of the time function at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeValue {
    pub s: f64,
    pub d_ts: f64,
    pub d_omega: f64,
    pub d_ts_ts: f64,
    pub d_ts_omega: f64,
    pub d_omega_omega: f64,
}

/// `S(t) = ω/√(2π) exp(−ω²(t − t_s)²/2)` and its exact first and second derivatives in `(t_s, ω)`.
pub fn time_function(t: f64, ts: f64, omega: f64) -> TimeValue {
    let tau = t - ts;
    let w2 = omega * omega;
    let s = omega / (2.0 * std::f64::consts::PI).sqrt() * (-0.5 * w2 * tau * tau).exp();
    TimeValue {
        s,
        d_ts: s * w2 * tau,
        d_omega: s * (1.0 / omega - omega * tau * tau),
        d_ts_ts: s * (w2 * w2 * tau * tau - w2),
        d_ts_omega: s * (3.0 * omega * tau - w2 * omega * tau.powi(3)),
        d_omega_omega: s * (w2 * tau.powi(4) - 3.0 * tau * tau),
    }
}

// Polynomial coefficients in α, lowest degree first.
const P_POLY: [f64; 10] = [0.0, 0.0, 0.0, 0.0, 0.0, 5.0 / 3.0, -7.0 / 24.0, -17.0 / 12.0, 9.0 / 8.0, -0.25];
const R_POLY: [f64; 10] = [0.0, 0.0, 0.0, 0.0, -25.0 / 12.0, -0.75, 59.0 / 12.0, -4.0, 1.0, 0.0];
const BINOMIAL: [f64; 6] = [1.0, -5.0, 10.0, -10.0, 5.0, -1.0];

const DELTA_BASE: [[f64; 5]; 6] = [
    [0.0, 1.0 / 12.0, -1.0 / 24.0, -1.0 / 12.0, -19.0 / 24.0],
    [0.0, -2.0 / 3.0, 2.0 / 3.0, 1.0 / 6.0, 4.0],
    [1.0, 0.0, -1.25, 0.0, -97.0 / 12.0],
    [0.0, 2.0 / 3.0, 2.0 / 3.0, -1.0 / 6.0, 49.0 / 6.0],
    [0.0, -1.0 / 12.0, -1.0 / 24.0, 1.0 / 12.0, -33.0 / 8.0],
    [0.0, 0.0, 0.0, 0.0, 5.0 / 6.0],
];

const DELTA_PRIME_BASE: [[f64; 5]; 6] = [
    [-1.0 / 12.0, 1.0 / 12.0, 0.25, 2.0 / 3.0, 0.0],
    [2.0 / 3.0, -4.0 / 3.0, -0.5, -3.5, 0.0],
    [0.0, 2.5, 0.0, 22.0 / 3.0, 0.0],
    [-2.0 / 3.0, -4.0 / 3.0, 0.5, -23.0 / 3.0, 0.0],
    [1.0 / 12.0, 1.0 / 12.0, -0.25, 4.0, 0.0],
    [0.0, 0.0, 0.0, -5.0 / 6.0, 0.0],
];

/// Evaluates a polynomial and its first two derivatives.
fn poly3(c: &[f64], x: f64) -> [f64; 3] {
    let (mut p, mut dp, mut d2p) = (0.0, 0.0, 0.0);
    for &ci in c.iter().rev() {
        d2p = d2p * x + 2.0 * dp;
        dp = dp * x + p;
        p = p * x + ci;
    }
    [p, dp, d2p]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StencilKind {
    Delta,
    DeltaPrime,
}

/// Six-point discretization of `δ(x − x_s)` or `δ′(x − x_s)` on one axis.
///
/// `weights[i]` belongs to node `anchor − 2 + i`. `d1` and `d2` are the first and
/// second derivatives of the weights with respect to `x_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaStencil {
    pub kind: StencilKind,
    pub anchor: usize,
    pub alpha: f64,
    pub weights: [f64; 6],
    pub d1: [f64; 6],
    pub d2: [f64; 6],
}

impl DeltaStencil {
    /// Index of the first node in the support.
    pub fn first(&self) -> usize {
        self.anchor - 2
    }
}

fn stencil(kind: StencilKind, x_s: f64, origin: f64, h: f64, n: usize) -> Result<DeltaStencil> {
    let t = (x_s - origin) / h;
    if !t.is_finite() || t < 3.0 - 1e-12 || t > (n as f64 - 1.0) - 3.0 + 1e-12 {
        return Err(Error::Domain(format!(
            "source coordinate {x_s} must lie at least 3h = {} inside [{origin}, {}]",
            3.0 * h,
            origin + (n as f64 - 1.0) * h
        )));
    }
    let k = t.floor();
    let alpha = (t - k).max(0.0);
    let anchor = k as usize;
    let (base, extra, scale) = match kind {
        StencilKind::Delta => (&DELTA_BASE, &P_POLY, 1.0 / h),
        StencilKind::DeltaPrime => (&DELTA_PRIME_BASE, &R_POLY, 1.0 / (h * h)),
    };
    let e = poly3(extra, alpha);
    let mut s = DeltaStencil { kind, anchor, alpha, weights: [0.0; 6], d1: [0.0; 6], d2: [0.0; 6] };
    for i in 0..6 {
        let b = poly3(&base[i], alpha);
        s.weights[i] = (b[0] + BINOMIAL[i] * e[0]) * scale;
        s.d1[i] = (b[1] + BINOMIAL[i] * e[1]) * scale / h;
        s.d2[i] = (b[2] + BINOMIAL[i] * e[2]) * scale / (h * h);
    }
    Ok(s)
}

/// Regularized `δ(x − x_s)` on an axis with `n` nodes starting at `origin`.
pub fn delta_stencil(x_s: f64, origin: f64, h: f64, n: usize) -> Result<DeltaStencil> {
    stencil(StencilKind::Delta, x_s, origin, h, n)
}

/// Regularized `δ′(x − x_s)` on an axis with `n` nodes starting at `origin`.
pub fn delta_prime_stencil(x_s: f64, origin: f64, h: f64, n: usize) -> Result<DeltaStencil> {
    stencil(StencilKind::DeltaPrime, x_s, origin, h, n)
}

/// Spatial part of the discrete source on its 6×6 node patch.
///
/// With `G1 = δ′(x1)δ(x2)` and `G2 = δ(x1)δ′(x2)` the force is
/// `f1 = S (m11 G1 + m12 G2)`, `f2 = S (m12 G1 + m22 G2)`. For each patch node the
/// struct keeps `G_c` together with its gradient and Hessian in `(x1s, x2s)`.
#[derive(Debug, Clone)]
pub struct SourcePatch {
    pub params: SourceParams,
    /// Grid node of each of the 36 patch entries, x1 fastest.
    pub nodes: [usize; 36],
    /// `g[c][p]` = `[G, ∂1 G, ∂2 G, ∂11 G, ∂12 G, ∂22 G]` for basis `c` at patch entry `p`.
    pub g: [[[f64; 6]; 36]; 2],
}

impl SourcePatch {
    pub fn new(params: &SourceParams, grid: &Grid) -> Result<Self> {
        if !(params.omega > 0.0) {
            return Err(Error::Domain(format!("ω_s must be positive, got {}", params.omega)));
        }
        let h = grid.h;
        let dx = delta_stencil(params.x1s, grid.x1_min, h, grid.n1)?;
        let px = delta_prime_stencil(params.x1s, grid.x1_min, h, grid.n1)?;
        let dy = delta_stencil(params.x2s, grid.x2_min, h, grid.n2)?;
        let py = delta_prime_stencil(params.x2s, grid.x2_min, h, grid.n2)?;
        let mut nodes = [0usize; 36];
        let mut g = [[[0.0; 6]; 36]; 2];
        for b in 0..6 {
            for a in 0..6 {
                let p = b * 6 + a;
                nodes[p] = grid.index(dx.first() + a, dy.first() + b);
                for (c, (sx, sy)) in [(&px, &dy), (&dx, &py)].into_iter().enumerate() {
                    g[c][p] = [
                        sx.weights[a] * sy.weights[b],
                        sx.d1[a] * sy.weights[b],
                        sx.weights[a] * sy.d1[b],
                        sx.d2[a] * sy.weights[b],
                        sx.d1[a] * sy.d1[b],
                        sx.weights[a] * sy.d2[b],
                    ];
                }
            }
        }
        Ok(SourcePatch { params: *params, nodes, g })
    }

    /// Moment coefficients of `(G1, G2)` in component `k` (0 or 1).
    fn moments(&self, k: usize) -> [f64; 2] {
        let p = &self.params;
        if k == 0 {
            [p.m11, p.m12]
        } else {
            [p.m12, p.m22]
        }
    }

    /// Index of the moment parameter multiplying basis `c` in component `k`.
    fn moment_index(k: usize, c: usize) -> usize {
        match (k, c) {
            (0, 0) => 4,
            (0, 1) | (1, 0) => 5,
            _ => 6,
        }
    }

    /// Force values at time `t`: `out[p][k]` for patch entry `p`, component `k`.
    pub fn force(&self, t: f64) -> [[f64; 2]; 36] {
        let s = time_function(t, self.params.ts, self.params.omega).s;
        let mut out = [[0.0; 2]; 36];
        for (p, o) in out.iter_mut().enumerate() {
            for (k, ok) in o.iter_mut().enumerate() {
                let m = self.moments(k);
                *ok = s * (m[0] * self.g[0][p][0] + m[1] * self.g[1][p][0]);
            }
        }
        out
    }

    /// Jacobian of the force at time `t`: `out[p][k][j] = ∂θj f_k` at patch entry `p`.
    pub fn jacobian(&self, t: f64) -> Vec<[[f64; N_THETA]; 2]> {
        let tv = time_function(t, self.params.ts, self.params.omega);
        (0..36)
            .map(|p| {
                let mut o = [[0.0; N_THETA]; 2];
                for (k, row) in o.iter_mut().enumerate() {
                    let m = self.moments(k);
                    let mix = |d: usize| m[0] * self.g[0][p][d] + m[1] * self.g[1][p][d];
                    row[0] = tv.s * mix(1);
                    row[1] = tv.s * mix(2);
                    row[2] = tv.d_ts * mix(0);
                    row[3] = tv.d_omega * mix(0);
                    for c in 0..2 {
                        row[Self::moment_index(k, c)] += tv.s * self.g[c][p][0];
                    }
                }
                o
            })
            .collect()
    }

    /// Second θ-derivatives of component `k` at patch entry `p` and time `t`.
    pub fn hessian_block(&self, t: f64, p: usize, k: usize) -> [[f64; N_THETA]; N_THETA] {
        let tv = time_function(t, self.params.ts, self.params.omega);
        self.hessian_block_with(&tv, p, k)
    }

    pub(crate) fn hessian_block_with(&self, tv: &TimeValue, p: usize, k: usize) -> [[f64; N_THETA]; N_THETA] {
        let m = self.moments(k);
        let g = |c: usize, d: usize| self.g[c][p][d];
        let mix = |d: usize| m[0] * g(0, d) + m[1] * g(1, d);
        let mut h = [[0.0; N_THETA]; N_THETA];
        // location-location
        h[0][0] = tv.s * mix(3);
        h[0][1] = tv.s * mix(4);
        h[1][1] = tv.s * mix(5);
        // location-time
        for (loc, d) in [(0usize, 1usize), (1, 2)] {
            h[loc][2] = tv.d_ts * mix(d);
            h[loc][3] = tv.d_omega * mix(d);
        }
        // time-time
        h[2][2] = tv.d_ts_ts * mix(0);
        h[2][3] = tv.d_ts_omega * mix(0);
        h[3][3] = tv.d_omega_omega * mix(0);
        // moment cross terms; moment-moment vanishes
        for c in 0..2 {
            let mi = Self::moment_index(k, c);
            h[0][mi] += tv.s * g(c, 1);
            h[1][mi] += tv.s * g(c, 2);
            h[2][mi] += tv.d_ts * g(c, 0);
            h[3][mi] += tv.d_omega * g(c, 0);
        }
        for i in 0..N_THETA {
            for j in 0..i {
                h[i][j] = h[j][i];
            }
        }
        h
    }
}

/// Dense force vectors `(f̃1, f̃2)` of length `N_h` at time `t`.
pub fn discretize_source(params: &SourceParams, grid: &Grid, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let patch = SourcePatch::new(params, grid)?;
    let mut f1 = vec![0.0; grid.len()];
    let mut f2 = vec![0.0; grid.len()];
    for (p, v) in patch.force(t).iter().enumerate() {
        f1[patch.nodes[p]] += v[0];
        f2[patch.nodes[p]] += v[1];
    }
    Ok((f1, f2))
}

/// Dense Jacobians `∂θ f̃k` as `N_h × N_θ` row-major arrays, `k = 1, 2`.
pub fn source_jacobian(params: &SourceParams, grid: &Grid, t: f64) -> Result<[Vec<f64>; 2]> {
    let patch = SourcePatch::new(params, grid)?;
    let mut out = [vec![0.0; grid.len() * N_THETA], vec![0.0; grid.len() * N_THETA]];
    for (p, jac) in patch.jacobian(t).iter().enumerate() {
        let n = patch.nodes[p];
        for k in 0..2 {
            for j in 0..N_THETA {
                out[k][n * N_THETA + j] += jac[k][j];
            }
        }
    }
    Ok(out)
}

/// Second-derivative blocks `∇θ∇θ f̃k(i,:)` for every supported node `i`, as `(node, [block_k1, block_k2])`.
pub fn source_hessian_rows(
    params: &SourceParams,
    grid: &Grid,
    t: f64,
) -> Result<Vec<(usize, [[[f64; N_THETA]; N_THETA]; 2])>> {
    let patch = SourcePatch::new(params, grid)?;
    Ok((0..36)
        .map(|p| (patch.nodes[p], [patch.hessian_block(t, p, 0), patch.hessian_block(t, p, 1)]))
        .collect())
}
