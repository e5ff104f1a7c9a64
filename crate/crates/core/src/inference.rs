//! Priors, the data misfit, Laplace information-gain estimators and nested Monte Carlo.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hessian::{scale_hessian, NoiseModel};
use crate::integrate::{mean_and_stderr, stream_rng, tags};
use crate::solver::ReceiverSeries;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Independent uniform priors `θ_i ~ U(a_i, b_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    pub bounds: Vec<(f64, f64)>,
}

impl Prior {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(a, b)) in bounds.iter().enumerate() {
            if !(b > a) || !a.is_finite() || !b.is_finite() {
                return Err(Error::config(format!("prior {i}: empty range [{a}, {b}]")));
            }
        }
        Ok(Prior { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.bounds.iter().map(|(a, b)| b - a).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && theta.iter().zip(&self.bounds).all(|(t, (a, b))| t >= a && t <= b)
    }

    /// `h(θ) = log p(θ)`; `−∞` outside the box.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if self.contains(theta) {
            -self.widths().iter().map(|w| w.ln()).sum::<f64>()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Maps a point of `[−1, 1]^d` onto the prior box.
    pub fn from_reference(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bounds).map(|(x, (a, b))| a + (b - a) * 0.5 * (x + 1.0)).collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.bounds.iter().map(|(a, b)| a + (b - a) * rng.gen::<f64>()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// `D̂_KL` from `H_I` at the true parameter.
    Laplace,
    /// Laplace integrand with the full Hessian `H_I + H_II`.
    LaplaceSecondOrder,
    NestedMc,
}

impl EstimatorKind {
    pub fn tag(&self) -> &'static str {
        match self {
            EstimatorKind::Laplace => "laplace",
            EstimatorKind::LaplaceSecondOrder => "laplace2",
            EstimatorKind::NestedMc => "nested",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace" => Ok(EstimatorKind::Laplace),
            "laplace2" => Ok(EstimatorKind::LaplaceSecondOrder),
            "nested" => Ok(EstimatorKind::NestedMc),
            other => Err(Error::config(format!("unknown estimator `{other}` (expected laplace, laplace2 or nested)"))),
        }
    }
}

/// Expected information gain estimate in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct EigEstimate {
    pub value: f64,
    pub stderr: f64,
    pub estimator: EstimatorKind,
    /// Number of outer samples or quadrature points.
    pub samples: usize,
    pub m_inner: Option<usize>,
}

/// `½ Σ_r Σ_m rᵀ C_ε⁻¹ r` with `r = sim − data`.
pub fn misfit(sim: &ReceiverSeries, data: &ReceiverSeries, noise: &NoiseModel) -> Result<f64> {
    if !sim.same_shape(data) || sim.data.len() != data.data.len() {
        return Err(Error::Shape("simulated and observed series differ in shape".into()));
    }
    let terms: Vec<f64> = sim
        .data
        .chunks_exact(2)
        .zip(data.data.chunks_exact(2))
        .map(|(s, d)| {
            let r = [s[0] - d[0], s[1] - d[1]];
            0.5 * noise.inner(r, r)
        })
        .collect();
    Ok(crate::integrate::pairwise_sum(&terms))
}

/// Negative log posterior up to a constant: misfit minus `h(θ)`; `+∞` outside the prior.
pub fn cost_functional(
    sim: &ReceiverSeries,
    data: &ReceiverSeries,
    prior: &Prior,
    noise: &NoiseModel,
    theta: &[f64],
) -> Result<f64> {
    let h = prior.log_density(theta);
    if h == f64::NEG_INFINITY {
        return Ok(f64::INFINITY);
    }
    Ok(misfit(sim, data, noise)? - h)
}

/// Gaussian-approximation KL divergence `−(n/2) log 2π + ½ log|H| − n/2 − log_prior`.
pub fn laplace_dkl(h: &DMatrix<f64>, log_prior: f64) -> Result<f64> {
    let n = h.nrows() as f64;
    let log_det = scale_hessian(h)?.log_det()?;
    Ok(-0.5 * n * LN_2PI + 0.5 * log_det - 0.5 * n - log_prior)
}

/// `D̂_KL` at `θ*` from the Gauss-Newton Hessian.
pub fn dkl_hat(h1: &DMatrix<f64>, prior: &Prior, theta: &[f64]) -> Result<f64> {
    laplace_dkl(h1, prior_value(prior, theta)?)
}

fn prior_value(prior: &Prior, theta: &[f64]) -> Result<f64> {
    let h = prior.log_density(theta);
    if h.is_finite() {
        Ok(h)
    } else {
        Err(Error::Domain(format!("θ = {theta:?} lies outside the prior support")))
    }
}

/// `tr(H⁻¹ ∇∇h) / 2`.
pub fn prior_trace_term(h: &DMatrix<f64>, prior_hessian: &DMatrix<f64>) -> Result<f64> {
    let inv = scale_hessian(h)?.inverse()?;
    Ok(0.5 * (inv * prior_hessian).trace())
}

/// Second-order Laplace integrand with the full Hessian `H = H_I + H_II − ∇∇h`.
///
/// `prior_hessian` is `∇∇h`; `None` stands for a uniform prior where it vanishes.
pub fn dkl_second_order(
    h_full: &DMatrix<f64>,
    log_prior: f64,
    prior_hessian: Option<&DMatrix<f64>>,
) -> Result<f64> {
    let base = laplace_dkl(h_full, log_prior)?;
    match prior_hessian {
        Some(hh) => Ok(base - prior_trace_term(h_full, hh)?),
        None => Ok(base),
    }
}

/// Per-parameter gains `log(b_i − a_i) − ½ log(2πe (H⁻¹)_ii)`.
pub fn per_parameter_gain(h1: &DMatrix<f64>, prior: &Prior) -> Result<Vec<f64>> {
    let inv = scale_hessian(h1)?.inverse()?;
    Ok(prior
        .widths()
        .iter()
        .enumerate()
        .map(|(i, w)| w.ln() - 0.5 * (LN_2PI + 1.0 + inv[(i, i)].ln()))
        .collect())
}

/// Warns when a posterior standard deviation exceeds a sixth of its prior width.
pub fn check_concentration(h1: &DMatrix<f64>, prior: &Prior) -> Result<()> {
    let inv = scale_hessian(h1)?.inverse()?;
    for (i, w) in prior.widths().iter().enumerate() {
        let sd = inv[(i, i)].max(0.0).sqrt();
        if sd > w / 6.0 {
            log::warn!("posterior std {sd:e} of parameter {i} exceeds 1/6 of its prior width {w:e}");
        }
    }
    Ok(())
}

/// Where the inner samples of the nested estimator come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSampling {
    /// Independent inner samples for every outer sample.
    Fresh,
    /// One pool of inner samples, independent of the outer samples, shared by all of them.
    SharedPool,
    /// The outer samples double as inner samples (biased).
    ReuseOuter,
}

impl std::str::FromStr for InnerSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fresh" => Ok(InnerSampling::Fresh),
            "pool" => Ok(InnerSampling::SharedPool),
            "reuse" => Ok(InnerSampling::ReuseOuter),
            other => Err(Error::config(format!("unknown nested sampling mode `{other}` (fresh, pool, reuse)"))),
        }
    }
}

fn whiten_all(g: &[f64], noise: &NoiseModel) -> Result<Vec<f64>> {
    if g.len() % 2 != 0 {
        return Err(Error::Shape(format!("model output length {} is not a multiple of 2", g.len())));
    }
    Ok(g.chunks_exact(2).flat_map(|c| noise.whiten([c[0], c[1]])).collect())
}

fn log_sum_exp(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn neg_half_dist2(a: &[f64], b: &[f64]) -> f64 {
    -0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

/// Double-loop Monte Carlo estimate of the expected information gain.
///
/// `model(θ)` returns the noise-free observation as consecutive two-component
/// samples; each pair carries independent noise with covariance `noise`.
pub fn nested_mc_eig<G>(
    model: G,
    prior: &Prior,
    noise: &NoiseModel,
    m_outer: usize,
    m_inner: usize,
    seed: u64,
    mode: InnerSampling,
) -> Result<EigEstimate>
where
    G: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if m_outer < 1 || m_inner < 1 {
        return Err(Error::Estimator("nested Monte Carlo needs M_outer, M_inner >= 1".into()));
    }
    let eval = |theta: &[f64]| -> Result<Vec<f64>> { whiten_all(&model(theta)?, noise) };
    let outer: Vec<Vec<f64>> = (0..m_outer)
        .into_par_iter()
        .map(|i| eval(&prior.sample(&mut stream_rng(seed, tags::PRIOR, i as u64))))
        .collect::<Result<_>>()?;
    let pool: Vec<Vec<f64>> = match mode {
        InnerSampling::SharedPool => (0..m_inner)
            .into_par_iter()
            .map(|j| eval(&prior.sample(&mut stream_rng(seed, tags::INNER, j as u64))))
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    let m_in = if mode == InnerSampling::ReuseOuter { m_outer } else { m_inner };
    let terms: Vec<f64> = (0..m_outer)
        .into_par_iter()
        .map(|i| {
            let g = &outer[i];
            let mut rng = stream_rng(seed, tags::NOISE, i as u64);
            let xi: Vec<f64> = (0..g.len()).map(|_| rng.sample(StandardNormal)).collect();
            let y: Vec<f64> = g.iter().zip(&xi).map(|(a, b)| a + b).collect();
            let log_lik = -0.5 * xi.iter().map(|v| v * v).sum::<f64>();
            let lse = match mode {
                InnerSampling::Fresh => {
                    let mut vals = Vec::with_capacity(m_inner);
                    for j in 0..m_inner {
                        let idx = (i as u64) * (m_inner as u64) + j as u64;
                        let gj = eval(&prior.sample(&mut stream_rng(seed, tags::INNER, idx)))?;
                        vals.push(neg_half_dist2(&y, &gj));
                    }
                    log_sum_exp(vals.into_iter())
                }
                InnerSampling::SharedPool => log_sum_exp(pool.iter().map(|gj| neg_half_dist2(&y, gj))),
                InnerSampling::ReuseOuter => log_sum_exp(outer.iter().map(|gj| neg_half_dist2(&y, gj))),
            };
            if !lse.is_finite() {
                return Err(Error::Estimator(format!("all inner likelihoods underflow for outer sample {i}")));
            }
            Ok(log_lik - (lse - (m_in as f64).ln()))
        })
        .collect::<Result<_>>()?;
    let (value, stderr) = mean_and_stderr(&terms);
    Ok(EigEstimate { value, stderr, estimator: EstimatorKind::NestedMc, samples: m_outer, m_inner: Some(m_in) })
}

/// `log(Φ(hi) − Φ(lo))` for the standard normal CDF, stable in both tails.
pub fn log_normal_interval(lo: f64, hi: f64) -> f64 {
    if !(hi > lo) {
        return f64::NEG_INFINITY;
    }
    if lo > 0.0 {
        return log_normal_interval(-hi, -lo);
    }
    if hi > 0.0 {
        let tails = 0.5 * libm::erfc(-lo / std::f64::consts::SQRT_2) + 0.5 * libm::erfc(hi / std::f64::consts::SQRT_2);
        return (-tails).ln_1p();
    }
    // both limits in the lower tail: log Φ(hi) + log(1 − Φ(lo)/Φ(hi))
    let (lh, ll) = (log_normal_cdf(hi), log_normal_cdf(lo));
    lh + (-(ll - lh).exp()).ln_1p()
}

fn log_normal_cdf(z: f64) -> f64 {
    if z > -30.0 {
        (0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        let z2 = z * z;
        -0.5 * z2 - (-z).ln() - 0.5 * LN_2PI + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)).ln()
    }
}

/// Nested Monte Carlo with one parameter integrated out exactly.
///
/// The observation must be affine in parameter `linear`: `model(θ)` returns
/// `(offset, column)` with `u(θ) = offset + θ[linear] · column`, both
/// independent of `θ[linear]`. Outer samples are drawn from the full prior.
/// Inner samples cover the remaining parameters only; for each one the
/// likelihood is integrated over the uniform prior of `θ[linear]` in closed form.
#[allow(clippy::too_many_arguments)]
pub fn nested_mc_eig_marginal<G>(
    model: G,
    prior: &Prior,
    linear: usize,
    noise: &NoiseModel,
    m_outer: usize,
    m_inner: usize,
    seed: u64,
    mode: InnerSampling,
) -> Result<EigEstimate>
where
    G: Fn(&[f64]) -> Result<(Vec<f64>, Vec<f64>)> + Sync,
{
    if m_outer < 1 || m_inner < 1 {
        return Err(Error::Estimator("nested Monte Carlo needs M_outer, M_inner >= 1".into()));
    }
    if linear >= prior.dim() {
        return Err(Error::Shape(format!("linear parameter {linear} outside dimension {}", prior.dim())));
    }
    let (a, b) = prior.bounds[linear];
    let eval = |theta: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let (g0, g1) = model(theta)?;
        if g0.len() != g1.len() {
            return Err(Error::Shape("offset and column lengths differ".into()));
        }
        Ok((whiten_all(&g0, noise)?, whiten_all(&g1, noise)?))
    };
    let inner_log_lik = |y: &[f64], (g0, g1): &(Vec<f64>, Vec<f64>)| -> f64 {
        let (mut rr, mut gr, mut gg) = (0.0, 0.0, 0.0);
        for ((yv, o), c) in y.iter().zip(g0).zip(g1) {
            let r = yv - o;
            rr += r * r;
            gr += c * r;
            gg += c * c;
        }
        if gg == 0.0 {
            return -0.5 * rr;
        }
        let centre = gr / gg;
        let sd = gg.sqrt();
        -0.5 * (rr - gr * centre) - (b - a).ln() + 0.5 * (LN_2PI - gg.ln())
            + log_normal_interval(sd * (a - centre), sd * (b - centre))
    };
    let outer_theta: Vec<Vec<f64>> =
        (0..m_outer).map(|i| prior.sample(&mut stream_rng(seed, tags::PRIOR, i as u64))).collect();
    let outer: Vec<(Vec<f64>, Vec<f64>)> = outer_theta.par_iter().map(|t| eval(t)).collect::<Result<_>>()?;
    let pool: Vec<(Vec<f64>, Vec<f64>)> = match mode {
        InnerSampling::SharedPool => (0..m_inner)
            .into_par_iter()
            .map(|j| eval(&prior.sample(&mut stream_rng(seed, tags::INNER, j as u64))))
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    let m_in = if mode == InnerSampling::ReuseOuter { m_outer } else { m_inner };
    let terms: Vec<f64> = (0..m_outer)
        .into_par_iter()
        .map(|i| {
            let (g0, g1) = &outer[i];
            let psi = outer_theta[i][linear];
            let mut rng = stream_rng(seed, tags::NOISE, i as u64);
            let xi: Vec<f64> = (0..g0.len()).map(|_| rng.sample(StandardNormal)).collect();
            let y: Vec<f64> = g0.iter().zip(g1).zip(&xi).map(|((o, c), e)| o + psi * c + e).collect();
            let log_lik = -0.5 * xi.iter().map(|v| v * v).sum::<f64>();
            let lse = match mode {
                InnerSampling::Fresh => {
                    let mut vals = Vec::with_capacity(m_inner);
                    for j in 0..m_inner {
                        let idx = (i as u64) * (m_inner as u64) + j as u64;
                        let gj = eval(&prior.sample(&mut stream_rng(seed, tags::INNER, idx)))?;
                        vals.push(inner_log_lik(&y, &gj));
                    }
                    log_sum_exp(vals.into_iter())
                }
                InnerSampling::SharedPool => log_sum_exp(pool.iter().map(|gj| inner_log_lik(&y, gj))),
                InnerSampling::ReuseOuter => log_sum_exp(outer.iter().map(|gj| inner_log_lik(&y, gj))),
            };
            if !lse.is_finite() {
                return Err(Error::Estimator(format!("all inner likelihoods underflow for outer sample {i}")));
            }
            Ok(log_lik - (lse - (m_in as f64).ln()))
        })
        .collect::<Result<_>>()?;
    let (value, stderr) = mean_and_stderr(&terms);
    Ok(EigEstimate { value, stderr, estimator: EstimatorKind::NestedMc, samples: m_outer, m_inner: Some(m_in) })
}
