//! Spatial difference operators for the 2D elastic wave equation.

use crate::grid::Grid;
use crate::medium::MaterialField;

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl Csr {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c as u32);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Csr { n, indptr, indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn transpose(&self) -> Csr {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for r in 0..self.n {
            for e in self.indptr[r]..self.indptr[r + 1] {
                rows[self.indices[e] as usize].push((r, self.values[e]));
            }
        }
        Csr::from_rows(rows)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        (self.indptr[r]..self.indptr[r + 1])
            .find(|&e| self.indices[e] as usize == c)
            .map(|e| self.values[e])
            .unwrap_or(0.0)
    }

    /// `y = A x` for `k` interleaved right-hand sides (`x[c * k + col]`).
    pub fn mul_batched(&self, x: &[f64], y: &mut [f64], k: usize) {
        if k == 1 {
            for (r, yr) in y.iter_mut().enumerate() {
                let mut acc = 0.0;
                for e in self.indptr[r]..self.indptr[r + 1] {
                    acc += self.values[e] * x[self.indices[e] as usize];
                }
                *yr = acc;
            }
            return;
        }
        for (r, yr) in y.chunks_exact_mut(k).enumerate() {
            yr.fill(0.0);
            for e in self.indptr[r]..self.indptr[r + 1] {
                let a = self.values[e];
                let c = self.indices[e] as usize;
                for (yv, xv) in yr.iter_mut().zip(&x[c * k..(c + 1) * k]) {
                    *yv += a * xv;
                }
            }
        }
    }
}

/// Assembled semi-discrete operator.
///
/// Unknowns are interleaved, `row = 2 * node + component`. On interior and
/// free-surface rows (`I1`) the system is `u_tt = A u + C f` with `C = 1/ν`.
/// On absorbing rows (`I2`) it is `u_t = A u + D u`, where the diagonal self
/// coupling `D` is kept apart so the time stepper can treat it implicitly.
#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    pub grid: Grid,
    pub a: Csr,
    pub at: Csr,
    /// Diagonal self coupling on absorbing rows, zero elsewhere.
    pub d: Vec<f64>,
    /// `true` on absorbing rows.
    pub absorbing: Vec<bool>,
    /// Force scaling `C`: `1/ν` on `I1` rows, zero on `I2` rows.
    pub c: Vec<f64>,
}

impl DiscreteOperators {
    pub fn rows(&self) -> usize {
        self.d.len()
    }

    pub fn is_absorbing_node(grid: &Grid, i: usize, j: usize) -> bool {
        i == 0 || i == grid.n1 - 1 || j == 0
    }
}

struct RowBuilder<'a> {
    grid: &'a Grid,
    entries: Vec<(usize, f64)>,
}

impl RowBuilder<'_> {
    fn add(&mut self, i: usize, j: usize, comp: usize, v: f64) {
        self.entries.push((2 * self.grid.index(i, j) + comp, v));
    }
}

/// Builds the operator for a grid whose top row is a free surface and whose
/// other three edges absorb outgoing waves.
pub fn assemble_operators(grid: &Grid, mat: &MaterialField) -> DiscreteOperators {
    let (n1, n2, h) = (grid.n1, grid.n2, grid.h);
    let h2 = h * h;
    let at = |f: &[f64], i: usize, j: usize| f[grid.index(i, j)];
    let lam = |i, j| at(&mat.lambda, i, j);
    let mu = |i, j| at(&mat.mu, i, j);
    let l2m = |i, j| at(&mat.lambda, i, j) + 2.0 * at(&mat.mu, i, j);
    let nrows = 2 * grid.len();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(nrows);
    let mut d = vec![0.0; nrows];
    let mut absorbing = vec![false; nrows];
    let mut c = vec![0.0; nrows];

    for node in 0..grid.len() {
        let (i, j) = grid.ij(node);
        let nu = mat.density[node];
        let mut r = [RowBuilder { grid, entries: Vec::new() }, RowBuilder { grid, entries: Vec::new() }];
        if !DiscreteOperators::is_absorbing_node(grid, i, j) {
            let top = j == n2 - 1;
            // (comp, coefficient along x, coefficient along y) for the second-derivative parts
            for comp in 0..2 {
                let bx = |a: usize, b: usize| if comp == 0 { l2m(a, b) } else { mu(a, b) };
                let by = |a: usize, b: usize| if comp == 0 { mu(a, b) } else { l2m(a, b) };
                let bp = 0.5 * (bx(i + 1, j) + bx(i, j));
                let bm = 0.5 * (bx(i, j) + bx(i - 1, j));
                let rb = &mut r[comp];
                rb.add(i + 1, j, comp, bp / h2);
                rb.add(i, j, comp, -(bp + bm) / h2);
                rb.add(i - 1, j, comp, bm / h2);
                let oc = 1 - comp;
                // coefficient in the x-derivative of the cross term and in the y-derivative of the cross term
                let cx = |a: usize, b: usize| if comp == 0 { lam(a, b) } else { mu(a, b) };
                let cy = |a: usize, b: usize| if comp == 0 { mu(a, b) } else { lam(a, b) };
                if !top {
                    let bp = 0.5 * (by(i, j + 1) + by(i, j));
                    let bm = 0.5 * (by(i, j) + by(i, j - 1));
                    rb.add(i, j + 1, comp, bp / h2);
                    rb.add(i, j, comp, -(bp + bm) / h2);
                    rb.add(i, j - 1, comp, bm / h2);
                    // D0x(cx D0y u_oc)
                    for (ii, s) in [(i + 1, 1.0), (i - 1, -1.0)] {
                        let w = s * cx(ii, j) / (4.0 * h2);
                        rb.add(ii, j + 1, oc, w);
                        rb.add(ii, j - 1, oc, -w);
                    }
                    // D0y(cy D0x u_oc)
                    for (jj, s) in [(j + 1, 1.0), (j - 1, -1.0)] {
                        let w = s * cy(i, jj) / (4.0 * h2);
                        rb.add(i + 1, jj, oc, w);
                        rb.add(i - 1, jj, oc, -w);
                    }
                } else {
                    // half-cell closure enforcing zero traction at the surface
                    let bh = 0.5 * (by(i, j) + by(i, j - 1));
                    rb.add(i, j, comp, -2.0 * bh / h2);
                    rb.add(i, j - 1, comp, 2.0 * bh / h2);
                    for (ii, s) in [(i + 1, 1.0), (i - 1, -1.0)] {
                        let w = s * cx(ii, j) / (2.0 * h2);
                        rb.add(ii, j, oc, w);
                        rb.add(ii, j - 1, oc, -w);
                    }
                    for jj in [j - 1, j] {
                        let w = -cy(i, jj) / (2.0 * h2);
                        rb.add(i + 1, jj, oc, w);
                        rb.add(i - 1, jj, oc, -w);
                    }
                }
                for e in rb.entries.iter_mut() {
                    e.1 /= nu;
                }
                c[2 * node + comp] = 1.0 / nu;
            }
        } else {
            let cp = mat.cp(node);
            let cs = mat.cs(node);
            // one-sided or centred first differences: list of (i, j, weight)
            let dx: Vec<(usize, usize, f64)> = if i == 0 {
                vec![(1, j, 1.0 / h), (0, j, -1.0 / h)]
            } else if i == n1 - 1 {
                vec![(i, j, 1.0 / h), (i - 1, j, -1.0 / h)]
            } else {
                vec![(i + 1, j, 0.5 / h), (i - 1, j, -0.5 / h)]
            };
            let dy: Vec<(usize, usize, f64)> = if j == 0 {
                vec![(i, 1, 1.0 / h), (i, 0, -1.0 / h)]
            } else if j == n2 - 1 {
                vec![(i, j, 1.0 / h), (i, j - 1, -1.0 / h)]
            } else {
                vec![(i, j + 1, 0.5 / h), (i, j - 1, -0.5 / h)]
            };
            let (l, m, lm) = (lam(i, j), mu(i, j), l2m(i, j));
            // each condition: (normal comp, sign, normal derivative, tangential derivative)
            let mut conds = Vec::new();
            if i == 0 || i == n1 - 1 {
                conds.push((0usize, if i == 0 { 1.0 } else { -1.0 }, &dx, &dy));
            }
            if j == 0 {
                conds.push((1usize, 1.0, &dy, &dx));
            }
            let wgt = 1.0 / conds.len() as f64;
            for (nc, s, dn, dt) in conds {
                let tc = 1 - nc;
                // normal component: s/(ν c_p) [(λ+2μ) ∂n u_n + λ ∂t u_t]
                let kp = wgt * s / (nu * cp);
                for &(a, b, w) in dn.iter() {
                    r[nc].add(a, b, nc, kp * lm * w);
                }
                for &(a, b, w) in dt.iter() {
                    r[nc].add(a, b, tc, kp * l * w);
                }
                // tangential component: s/(ν c_s) μ (∂n u_t + ∂t u_n)
                let ks = wgt * s / (nu * cs);
                for &(a, b, w) in dn.iter() {
                    r[tc].add(a, b, tc, ks * m * w);
                }
                for &(a, b, w) in dt.iter() {
                    r[tc].add(a, b, nc, ks * m * w);
                }
            }
            for comp in 0..2 {
                let row = 2 * node + comp;
                absorbing[row] = true;
                let mut self_coef = 0.0;
                r[comp].entries.retain(|&(col, v)| {
                    if col == row {
                        self_coef += v;
                        false
                    } else {
                        true
                    }
                });
                d[row] = self_coef;
            }
        }
        let [r0, r1] = r;
        rows.push(r0.entries);
        rows.push(r1.entries);
    }
    let a = Csr::from_rows(rows);
    let at = a.transpose();
    DiscreteOperators { grid: grid.clone(), a, at, d, absorbing, c }
}
