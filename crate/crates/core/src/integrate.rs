//! Integration over the prior: Gauss-Legendre, Smolyak sparse grids and Monte Carlo.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::Prior;

/// Deterministic random stream for `(seed, tag, index)`.
///
/// Streams with different `(tag, index)` are independent, and a stream depends
/// only on its key, never on the order in which samples are evaluated.
pub fn stream_rng(seed: u64, tag: u16, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tag as u64) << 48) ^ index);
    rng
}

pub mod tags {
    pub const PRIOR: u16 = 1;
    pub const NOISE: u16 = 2;
    pub const INNER: u16 = 3;
    pub const REPLICATE: u16 = 4;
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Gauss-Legendre nodes (ascending) and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleKind {
    Tensor { order: usize },
    SmolyakTotalDegree { level: usize },
}

/// Weighted point set on `[−1, 1]^dim`; weights sum to `2^dim`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub kind: RuleKind,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn key(p: &[f64]) -> Vec<u64> {
    p.iter().map(|&v| if v == 0.0 { 0 } else { v.to_bits() }).collect()
}

fn add_tensor(acc: &mut BTreeMap<Vec<u64>, (Vec<f64>, f64)>, orders: &[usize], coef: f64) {
    let rules: Vec<_> = orders.iter().map(|&n| gauss_legendre(n)).collect();
    let mut idx = vec![0usize; orders.len()];
    loop {
        let p: Vec<f64> = idx.iter().zip(&rules).map(|(&i, r)| r.0[i]).collect();
        let w: f64 = idx.iter().zip(&rules).map(|(&i, r)| r.1[i]).product();
        let e = acc.entry(key(&p)).or_insert((p, 0.0));
        e.1 += coef * w;
        let mut d = 0;
        loop {
            if d == orders.len() {
                return;
            }
            idx[d] += 1;
            if idx[d] < orders[d] {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

fn finish(dim: usize, acc: BTreeMap<Vec<u64>, (Vec<f64>, f64)>, kind: RuleKind) -> QuadratureRule {
    let mut entries: Vec<(Vec<f64>, f64)> = acc.into_values().filter(|(_, w)| *w != 0.0).collect();
    entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (points, weights) = entries.into_iter().unzip();
    QuadratureRule { dim, points, weights, kind }
}

/// Full tensor Gauss-Legendre rule with `order` points per axis.
pub fn tensor_rule(dim: usize, order: usize) -> QuadratureRule {
    let mut acc = BTreeMap::new();
    add_tensor(&mut acc, &vec![order; dim], 1.0);
    finish(dim, acc, RuleKind::Tensor { order })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Smolyak combination rule over the total-degree index set `|i| ≤ level + dim`,
/// built from Gauss-Legendre rules with `i` points for index `i`.
pub fn smolyak_total_degree(dim: usize, level: usize) -> QuadratureRule {
    assert!(dim >= 1);
    let top = level + dim;
    let bottom = (level + 1).max(dim);
    let mut acc = BTreeMap::new();
    let mut idx = vec![1usize; dim];
    loop {
        let s: usize = idx.iter().sum();
        if s >= bottom && s <= top {
            let q = top - s;
            if q < dim {
                let coef = if q % 2 == 0 { 1.0 } else { -1.0 } * binomial(dim - 1, q);
                add_tensor(&mut acc, &idx, coef);
            }
        }
        // next multi-index with all entries ≥ 1 and sum ≤ top
        let mut d = 0;
        loop {
            if d == dim {
                return finish(dim, acc, RuleKind::SmolyakTotalDegree { level });
            }
            idx[d] += 1;
            if idx.iter().sum::<usize>() <= top {
                break;
            }
            idx[d] = 1;
            d += 1;
        }
    }
}

/// `E[f(θ)]` under the prior using a quadrature rule on the reference cube.
pub fn expectation_quadrature<F>(f: F, rule: &QuadratureRule, prior: &Prior) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if rule.dim != prior.dim() {
        return Err(Error::Integration(format!("rule dimension {} vs prior dimension {}", rule.dim, prior.dim())));
    }
    let vals: Vec<f64> = rule
        .points
        .par_iter()
        .zip(&rule.weights)
        .map(|(p, &w)| {
            let theta = prior.from_reference(p);
            let v = f(&theta)?;
            if !v.is_finite() {
                return Err(Error::Integration(format!("integrand is {v} at θ = {theta:?}")));
            }
            Ok(w * v)
        })
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&vals) / 2f64.powi(rule.dim as i32))
}

/// Monte Carlo estimate of `E[f(θ)]` with its standard error.
///
/// Sample `j` is drawn from its own stream, so the result does not depend on
/// scheduling. `f` also receives the sample index.
pub fn expectation_mc<F>(f: F, prior: &Prior, m: usize, seed: u64) -> Result<(f64, f64)>
where
    F: Fn(usize, &[f64]) -> Result<f64> + Sync,
{
    if m < 2 {
        return Err(Error::Integration(format!("Monte Carlo needs at least 2 samples, got {m}")));
    }
    let vals: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|j| {
            let theta = prior.sample(&mut stream_rng(seed, tags::PRIOR, j as u64));
            let v = f(j, &theta)?;
            if !v.is_finite() {
                return Err(Error::Integration(format!("integrand is {v} at sample {j}, θ = {theta:?}")));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    Ok(mean_and_stderr(&vals))
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `ε_i = |I_{i+1} − I_i| / |I_{i+1}|` for a sequence of estimates.
pub fn successive_relative_errors(estimates: &[f64]) -> Vec<f64> {
    estimates.windows(2).map(|w| (w[1] - w[0]).abs() / w[1].abs()).collect()
}

/// Least-squares decay rate of `log error` against `log size` (positive for decaying errors).
pub fn convergence_rate(errors: &[f64], sizes: &[f64]) -> Result<f64> {
    if errors.len() != sizes.len() || errors.len() < 3 {
        return Err(Error::Domain(format!(
            "need at least 3 matching (size, error) pairs, got {} and {}",
            sizes.len(),
            errors.len()
        )));
    }
    if errors.iter().chain(sizes).any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("sizes and errors must be positive".into()));
    }
    let x: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("sizes must not all be equal".into()));
    }
    Ok(-sxy / sxx)
}
