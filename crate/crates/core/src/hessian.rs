//! Gauss-Newton Hessian assembly, parameter scaling and conditioning.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};
use crate::solver::ReceiverSeries;

/// Diagonal entries below this value mark a parameter as unidentifiable.
pub const UNIDENTIFIABLE_THRESHOLD: f64 = 1e-300;

/// Per-receiver Gaussian measurement noise with a 2×2 covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub cov: Matrix2<f64>,
    inv: Matrix2<f64>,
    /// Lower Cholesky factor of the inverse covariance transposed: `C⁻¹ = Wᵀ W`.
    whiten: Matrix2<f64>,
}

impl NoiseModel {
    pub fn new(c11: f64, c12: f64, c22: f64) -> Result<Self> {
        let cov = Matrix2::new(c11, c12, c12, c22);
        let chol = nalgebra::Cholesky::new(cov)
            .ok_or_else(|| Error::config(format!("noise covariance [[{c11}, {c12}], [{c12}, {c22}]] is not positive definite")))?;
        let l = chol.l();
        let whiten = l.try_inverse().ok_or_else(|| Error::config("noise covariance is singular"))?;
        let inv = whiten.transpose() * whiten;
        Ok(NoiseModel { cov, inv, whiten })
    }

    pub fn isotropic(variance: f64) -> Result<Self> {
        Self::new(variance, 0.0, variance)
    }

    pub fn inverse(&self) -> &Matrix2<f64> {
        &self.inv
    }

    /// `L⁻¹ v` for `C = L Lᵀ`; whitened residuals have identity covariance.
    pub fn whiten(&self, v: [f64; 2]) -> [f64; 2] {
        let w = self.whiten;
        [w[(0, 0)] * v[0] + w[(0, 1)] * v[1], w[(1, 0)] * v[0] + w[(1, 1)] * v[1]]
    }

    /// `L ξ` for `C = L Lᵀ`: turns standard normal pairs into noise samples.
    pub fn color(&self, xi: [f64; 2]) -> [f64; 2] {
        let l = self.whiten.try_inverse().unwrap_or_else(Matrix2::identity);
        [l[(0, 0)] * xi[0] + l[(0, 1)] * xi[1], l[(1, 0)] * xi[0] + l[(1, 1)] * xi[1]]
    }

    /// `aᵀ C⁻¹ b`.
    #[inline]
    pub fn inner(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let c = &self.inv;
        a[0] * (c[(0, 0)] * b[0] + c[(0, 1)] * b[1]) + a[1] * (c[(1, 0)] * b[0] + c[(1, 1)] * b[1])
    }
}

fn check_shapes(sens: &[ReceiverSeries]) -> Result<()> {
    if let Some(first) = sens.first() {
        for (j, s) in sens.iter().enumerate() {
            if !s.same_shape(first) || s.data.len() != first.data.len() {
                return Err(Error::Shape(format!("sensitivity series {j} differs in receivers or time grid")));
            }
        }
    }
    Ok(())
}

/// `H_I[j,k] = Σ_r Σ_m ∂_j u(t_m, x_r)ᵀ C_ε⁻¹ ∂_k u(t_m, x_r)`.
pub fn misfit_hessian_h1(sens: &[ReceiverSeries], noise: &NoiseModel) -> Result<DMatrix<f64>> {
    check_shapes(sens)?;
    let n = sens.len();
    let mut h = DMatrix::zeros(n, n);
    for g in receiver_contributions(sens, noise)? {
        h += g;
    }
    Ok(h)
}

/// Per-receiver contributions to `H_I`; a design's Hessian is the sum over its receivers.
pub fn receiver_contributions(sens: &[ReceiverSeries], noise: &NoiseModel) -> Result<Vec<DMatrix<f64>>> {
    check_shapes(sens)?;
    let n = sens.len();
    let Some(first) = sens.first() else { return Ok(Vec::new()) };
    let mut out = Vec::with_capacity(first.receivers());
    for r in 0..first.receivers() {
        let mut g = DMatrix::zeros(n, n);
        for m in 0..first.nt {
            let v: Vec<[f64; 2]> = sens.iter().map(|s| s.sample(r, m)).collect();
            for j in 0..n {
                if v[j] == [0.0, 0.0] {
                    continue;
                }
                for k in 0..=j {
                    g[(j, k)] += noise.inner(v[j], v[k]);
                }
            }
        }
        for j in 0..n {
            for k in 0..j {
                g[(k, j)] = g[(j, k)];
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// Diagonally rescaled Hessian and its conditioning.
#[derive(Debug, Clone)]
pub struct ScaledHessian {
    /// Diagonal of the scaling matrix `S = sqrt(diag H)`.
    pub scaling: DVector<f64>,
    /// `S⁻ᵀ H S⁻¹`, unit diagonal.
    pub scaled: DMatrix<f64>,
    pub cond_unscaled: f64,
    pub cond_scaled: f64,
}

impl ScaledHessian {
    /// `log|H| = log|H̃| + 2 Σ log S_ii`.
    pub fn log_det(&self) -> Result<f64> {
        Ok(self.log_det_scaled()? + 2.0 * self.scaling.iter().map(|s| s.ln()).sum::<f64>())
    }

    pub fn log_det_scaled(&self) -> Result<f64> {
        let chol = nalgebra::Cholesky::new(self.scaled.clone()).ok_or_else(|| self.singular_error())?;
        Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    /// `H⁻¹ = S⁻¹ H̃⁻¹ S⁻¹`.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        let chol = nalgebra::Cholesky::new(self.scaled.clone()).ok_or_else(|| self.singular_error())?;
        let inv = chol.inverse();
        let n = self.scaling.len();
        Ok(DMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (self.scaling[i] * self.scaling[j])))
    }

    fn singular_error(&self) -> Error {
        let eig = nalgebra::SymmetricEigen::new(self.scaled.clone());
        let k = eig.eigenvalues.imin();
        let dir: Vec<String> = eig.eigenvectors.column(k).iter().map(|v| format!("{v:.3}")).collect();
        Error::Estimator(format!(
            "Hessian is singular or indefinite (smallest scaled eigenvalue {:e}, direction [{}] in scaled coordinates)",
            eig.eigenvalues[k],
            dir.join(", ")
        ))
    }
}

fn cond_from_singular_values(sv: &DVector<f64>) -> f64 {
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Rescales `H` by `S = sqrt(diag H)` and reports both condition numbers.
///
/// The unscaled condition number is evaluated as `σ_max(H) σ_max(H⁻¹)` with the
/// inverse formed through the scaled matrix, which keeps it accurate for
/// matrices whose diagonal spans many orders of magnitude.
pub fn scale_hessian(h: &DMatrix<f64>) -> Result<ScaledHessian> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::Shape(format!("Hessian is {}x{}", n, h.ncols())));
    }
    let mut s = DVector::zeros(n);
    for i in 0..n {
        let d = h[(i, i)];
        if !(d >= UNIDENTIFIABLE_THRESHOLD) {
            return Err(Error::Unidentifiable { index: i });
        }
        s[i] = d.sqrt();
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { h[(i, j)] / (s[i] * s[j]) });
    let sv_scaled = scaled.clone().singular_values();
    let cond_scaled = cond_from_singular_values(&sv_scaled);
    let mut out = ScaledHessian { scaling: s, scaled, cond_unscaled: f64::INFINITY, cond_scaled };
    if cond_scaled.is_finite() {
        if let Ok(inv) = out.inverse() {
            let smax = h.clone().singular_values().max();
            let smax_inv = inv.singular_values().max();
            out.cond_unscaled = smax * smax_inv;
        }
    }
    Ok(out)
}

/// Hessian pieces at one parameter value.
#[derive(Debug, Clone)]
pub struct HessianResult {
    pub h1: DMatrix<f64>,
    pub h2: Option<DMatrix<f64>>,
    pub scaled: ScaledHessian,
}

impl HessianResult {
    pub fn new(h1: DMatrix<f64>, h2: Option<DMatrix<f64>>) -> Result<Self> {
        let scaled = scale_hessian(&h1)?;
        Ok(HessianResult { h1, h2, scaled })
    }

    /// `H_I + H_II` (or `H_I` alone when `H_II` was not computed).
    pub fn full(&self) -> DMatrix<f64> {
        match &self.h2 {
            Some(h2) => &self.h1 + h2,
            None => self.h1.clone(),
        }
    }
}

/// Writes a matrix as CSV with 17 significant digits.
pub fn write_matrix_csv<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(i, j)])).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
