//! Batch drivers behind the command line.
//!
//! Every CSV starts with a `#` provenance block (code version, SHA-256 of the
//! effective configuration, seed and the configuration itself). Sweep tables
//! are restartable: rows whose key is already present are skipped. Wall-clock
//! times go to `*.timing.csv` sidecars so the result tables stay reproducible.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::RngCore;
use rayon::prelude::*;

use crate::config::{Diagnostic, Integrator, RunConfig};
use crate::design::DesignSpec;
use crate::error::{Error, Result};
use crate::hessian::{receiver_contributions, scale_hessian, NoiseModel};
use crate::inference::{
    dkl_hat, dkl_second_order, nested_mc_eig, nested_mc_eig_marginal, per_parameter_gain, EigEstimate, EstimatorKind,
    InnerSampling, Prior,
};
use crate::integrate::{
    convergence_rate, mean_and_stderr, pairwise_sum, smolyak_total_degree, stream_rng, successive_relative_errors, tags,
};
use crate::model::{add_noise, weighted_residual, ReducedProblem, Receivers, SeismicModel};
use crate::source::{SourceParams, PARAM_NAMES};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Floats in result files: 17 significant digits.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub config_text: String,
}

impl Provenance {
    pub fn new(c: &RunConfig) -> Self {
        Provenance { config_hash: c.hash(), seed: c.seed, config_text: c.to_text() }
    }

    pub fn header(&self, table: &str) -> String {
        let mut s = format!(
            "# seisdesign {VERSION} {table}\n# config_sha256 = {}\n# seed = {}\n",
            self.config_hash, self.seed
        );
        for line in self.config_text.lines() {
            s.push_str("#   ");
            s.push_str(line);
            s.push('\n');
        }
        s
    }
}

/// Append-only CSV keyed by its first column.
pub struct CsvTable {
    path: PathBuf,
    file: File,
    done: HashSet<String>,
}

impl CsvTable {
    /// Opens `path` for appending, or creates it. An existing file must carry
    /// the same header; a torn last line is dropped.
    pub fn open(path: &Path, prelude: &str, columns: &[&str]) -> Result<Self> {
        let head = format!("{prelude}{}\n", columns.join(","));
        let mut done = HashSet::new();
        if path.exists() {
            let mut text = fs::read_to_string(path)?;
            if !text.starts_with(&head) {
                return Err(Error::State(format!(
                    "{} was written by a different configuration or version; remove it or use another output directory",
                    path.display()
                )));
            }
            if !text.ends_with('\n') {
                let keep = text.rfind('\n').map_or(0, |i| i + 1).max(head.len());
                text.truncate(keep);
                fs::write(path, &text)?;
            }
            for line in text[head.len()..].lines() {
                if let Some(key) = line.split(',').next() {
                    done.insert(key.to_string());
                }
            }
        } else {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, &head)?;
        }
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(CsvTable { path: path.to_path_buf(), file, done })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_done(&self, key: &str) -> bool {
        self.done.contains(key)
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.file, "{}", fields.join(","))?;
        self.file.flush()?;
        if let Some(k) = fields.first() {
            self.done.insert(k.clone());
        }
        Ok(())
    }
}

/// Writes a whole CSV at once (non-resumable outputs).
fn write_table(path: &Path, prelude: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut s = format!("{prelude}{}\n", columns.join(","));
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    let tmp = path.with_extension("csv.part");
    fs::write(&tmp, s)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn timing_row(out: &Path, table: &str, key: &str, seconds: f64) -> Result<()> {
    fs::create_dir_all(out)?;
    let path = out.join(format!("{table}.timing.csv"));
    let new = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
    if new {
        writeln!(f, "key,seconds")?;
    }
    writeln!(f, "{key},{seconds:.3}")?;
    Ok(())
}

/// How prior expectations are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integration {
    MonteCarlo { samples: usize, seed: u64 },
    Sparse { level: usize },
}

impl Integration {
    pub fn from_config(c: &RunConfig) -> Self {
        match c.integrator {
            Integrator::MonteCarlo => Integration::MonteCarlo { samples: c.samples, seed: c.seed },
            Integrator::Sparse => Integration::Sparse { level: c.sparse_level },
        }
    }

    /// Parameter points and, for quadrature, their probability weights.
    pub fn points(&self, prior: &Prior) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
        match *self {
            Integration::MonteCarlo { samples, seed } => {
                if samples < 2 {
                    return Err(Error::Integration(format!("Monte Carlo needs at least 2 samples, got {samples}")));
                }
                let pts = (0..samples).map(|j| prior.sample(&mut stream_rng(seed, tags::PRIOR, j as u64))).collect();
                Ok((pts, None))
            }
            Integration::Sparse { level } => {
                let rule = smolyak_total_degree(prior.dim(), level);
                let pts = rule.points.iter().map(|p| prior.from_reference(p)).collect();
                let scale = 0.5f64.powi(prior.dim() as i32);
                Ok((pts, Some(rule.weights.iter().map(|w| w * scale).collect())))
            }
        }
    }

    /// Estimate and standard error (zero for quadrature) from point values.
    pub fn combine(&self, values: &[f64], weights: Option<&[f64]>) -> (f64, f64) {
        match weights {
            None => mean_and_stderr(values),
            Some(w) => {
                let prods: Vec<f64> = values.iter().zip(w).map(|(v, w)| v * w).collect();
                (pairwise_sum(&prods), 0.0)
            }
        }
    }
}

/// Evaluates `f(H_I, θ)` for every design at every integration point.
///
/// All designs share the parameter points and the sensitivity solves; each
/// design's `H_I` is the ordered sum of its receivers' contributions, which is
/// exactly what [`SeismicModel::hessian_h1`] computes for that design alone.
pub fn design_hessian_map<T, F>(
    model: &SeismicModel,
    problem: &ReducedProblem,
    noise: &NoiseModel,
    designs: &[Receivers],
    points: &[Vec<f64>],
    f: F,
) -> Result<Vec<Vec<Result<T>>>>
where
    T: Send,
    F: Fn(&DMatrix<f64>, &[f64]) -> Result<T> + Sync,
{
    let mut nodes: Vec<usize> = designs.iter().flat_map(|d| d.nodes.iter().copied()).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let union = Receivers { positions: nodes.iter().map(|&n| model.grid.coords(n)).collect(), nodes: nodes.clone() };
    let n = problem.active.len();
    points
        .par_iter()
        .map(|th| {
            let sens = model.sensitivities(&problem.full(th), &problem.active, &union)?;
            let contrib = receiver_contributions(&sens, noise)?;
            Ok(designs
                .iter()
                .map(|d| {
                    let mut h = DMatrix::zeros(n, n);
                    for node in &d.nodes {
                        let k = nodes.binary_search(node).expect("node in union");
                        h += &contrib[k];
                    }
                    f(&h, th)
                })
                .collect())
        })
        .collect()
}

fn transpose_results<T>(per_point: Vec<Vec<Result<T>>>, designs: usize) -> Vec<Result<Vec<T>>> {
    let mut out: Vec<Result<Vec<T>>> = (0..designs).map(|_| Ok(Vec::with_capacity(per_point.len()))).collect();
    for row in per_point {
        for (d, v) in row.into_iter().enumerate() {
            if let Ok(acc) = &mut out[d] {
                match v {
                    Ok(x) => acc.push(x),
                    Err(e) => out[d] = Err(e),
                }
            }
        }
    }
    out
}

/// Laplace information gain `E[D̂_KL]` for several designs sharing the same parameter points.
pub fn laplace_eig_designs(
    model: &SeismicModel,
    problem: &ReducedProblem,
    noise: &NoiseModel,
    designs: &[Receivers],
    integration: Integration,
) -> Result<Vec<Result<EigEstimate>>> {
    let (points, weights) = integration.points(&problem.prior)?;
    let per_point = design_hessian_map(model, problem, noise, designs, &points, |h, th| {
        let v = dkl_hat(h, &problem.prior, th)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Integration(format!("integrand is {v} at θ = {th:?}")))
        }
    })?;
    Ok(transpose_results(per_point, designs.len())
        .into_iter()
        .map(|vals| {
            let vals = vals?;
            let (value, stderr) = integration.combine(&vals, weights.as_deref());
            Ok(EigEstimate { value, stderr, estimator: EstimatorKind::Laplace, samples: vals.len(), m_inner: None })
        })
        .collect())
}

/// Laplace information gain with the second-order (`H_I + H_II`) Hessian and noisy data.
pub fn laplace2_eig(
    model: &SeismicModel,
    problem: &ReducedProblem,
    noise: &NoiseModel,
    rec: &Receivers,
    integration: Integration,
    seed: u64,
) -> Result<EigEstimate> {
    let (points, weights) = integration.points(&problem.prior)?;
    let vals: Vec<f64> = points
        .par_iter()
        .enumerate()
        .map(|(j, th)| {
            let theta = problem.full(th);
            let (u, sens) = model.forward_with_sensitivities(&theta, &problem.active, rec)?;
            let h1 = crate::hessian::misfit_hessian_h1(&sens, noise)?;
            let data = add_noise(&u, noise, &mut stream_rng(seed, tags::NOISE, j as u64));
            let residual = weighted_residual(&u, &data, noise)?;
            let (_, h2) = model.adjoint_gradient_h2(&theta, &problem.active, &residual)?;
            let v = dkl_second_order(&(h1 + h2), problem.prior.log_density(th), None)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Integration(format!("integrand is {v} at θ = {th:?}")))
            }
        })
        .collect::<Result<_>>()?;
    let (value, stderr) = integration.combine(&vals, weights.as_deref());
    Ok(EigEstimate { value, stderr, estimator: EstimatorKind::LaplaceSecondOrder, samples: vals.len(), m_inner: None })
}

/// Nested Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NestedSettings {
    pub outer: usize,
    pub inner: usize,
    pub seed: u64,
    pub mode: InnerSampling,
    /// Integrate the first active moment component out analytically.
    pub marginalize: bool,
}

impl NestedSettings {
    pub fn from_config(c: &RunConfig) -> Self {
        NestedSettings {
            outer: c.nested_outer,
            inner: c.nested_inner,
            seed: c.seed,
            mode: c.nested_mode,
            marginalize: c.nested_marginalize,
        }
    }
}

/// Nested Monte Carlo reference estimate for one design.
pub fn nested_eig(
    model: &SeismicModel,
    problem: &ReducedProblem,
    noise: &NoiseModel,
    rec: &Receivers,
    s: NestedSettings,
) -> Result<EigEstimate> {
    let linear = problem.active.iter().position(|&a| (4..7).contains(&a));
    match linear {
        Some(k) if s.marginalize => nested_mc_eig_marginal(
            |th| model.moment_split(&problem.full(th), problem.active[k], rec),
            &problem.prior,
            k,
            noise,
            s.outer,
            s.inner,
            s.seed,
            s.mode,
        ),
        _ => nested_mc_eig(
            |th| Ok(model.forward(&problem.full(th), rec)?.data),
            &problem.prior,
            noise,
            s.outer,
            s.inner,
            s.seed,
            s.mode,
        ),
    }
}

/// EIG of one receiver set with the estimator selected in `c`.
pub fn eig_for_design(c: &RunConfig, model: &SeismicModel, rec: &Receivers) -> Result<EigEstimate> {
    let problem = c.reduced()?;
    let noise = c.noise_model()?;
    match c.estimator {
        EstimatorKind::Laplace => {
            laplace_eig_designs(model, &problem, &noise, std::slice::from_ref(rec), Integration::from_config(c))?
                .remove(0)
        }
        EstimatorKind::LaplaceSecondOrder => {
            laplace2_eig(model, &problem, &noise, rec, Integration::from_config(c), c.seed)
        }
        EstimatorKind::NestedMc => nested_eig(model, &problem, &noise, rec, NestedSettings::from_config(c)),
    }
}

fn estimate_fields(e: &EigEstimate) -> Vec<String> {
    vec![
        e.estimator.tag().to_string(),
        fmt_f(e.value),
        fmt_f(e.stderr),
        e.samples.to_string(),
        e.m_inner.map_or(String::new(), |m| m.to_string()),
    ]
}

/// `simulate`: one forward solve at `theta`, recorded at `receivers`.
pub fn run_simulate(c: &RunConfig, out: &Path) -> Result<PathBuf> {
    let model = c.model()?;
    let rec = model.receivers(&c.receivers)?;
    let u = model.forward(&c.theta, &rec)?;
    fs::create_dir_all(out)?;
    u.save(&out.join("simulate.bin"))?;
    let mut rows = Vec::with_capacity(u.receivers() * u.nt);
    for r in 0..u.receivers() {
        for m in 0..u.nt {
            let [u1, u2] = u.sample(r, m);
            rows.push(vec![
                r.to_string(),
                fmt_f(u.positions[r].0),
                m.to_string(),
                fmt_f(m as f64 * u.dt),
                fmt_f(u1),
                fmt_f(u2),
            ]);
        }
    }
    let path = out.join("simulate.csv");
    let prov = Provenance::new(c);
    write_table(&path, &prov.header("simulate"), &["receiver", "x1", "step", "t", "u1", "u2"], &rows)?;
    Ok(path)
}

/// Hessian blocks and conditioning at one parameter value.
#[derive(Debug, Clone)]
pub struct HessianReport {
    pub h1: DMatrix<f64>,
    pub h2: DMatrix<f64>,
    pub cond_unscaled: f64,
    pub cond_scaled: f64,
}

/// `hessian`: `H_I`, `H_II` (noisy data drawn at `theta`) and conditioning.
pub fn run_hessian(c: &RunConfig, out: &Path) -> Result<HessianReport> {
    let model = c.model()?;
    let rec = model.receivers(&c.receivers)?;
    let noise = c.noise_model()?;
    let (u, sens) = model.forward_with_sensitivities(&c.theta, &c.active, &rec)?;
    let h1 = crate::hessian::misfit_hessian_h1(&sens, &noise)?;
    let data = add_noise(&u, &noise, &mut stream_rng(c.seed, tags::NOISE, 0));
    let residual = weighted_residual(&u, &data, &noise)?;
    let (_, h2) = model.adjoint_gradient_h2(&c.theta, &c.active, &residual)?;
    let scaled = scale_hessian(&h1)?;
    let mut rows = Vec::new();
    let full = &h1 + &h2;
    for (name, m) in [("h1", &h1), ("h2", &h2), ("full", &full), ("h1_scaled", &scaled.scaled)] {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                rows.push(vec![
                    name.to_string(),
                    PARAM_NAMES[c.active[i]].to_string(),
                    PARAM_NAMES[c.active[j]].to_string(),
                    fmt_f(m[(i, j)]),
                ]);
            }
        }
    }
    let prov = Provenance::new(c);
    write_table(&out.join("hessian.csv"), &prov.header("hessian"), &["block", "row", "col", "value"], &rows)?;
    write_table(
        &out.join("hessian_summary.csv"),
        &prov.header("hessian_summary"),
        &["cond_unscaled", "cond_scaled", "log_det_h1"],
        &[vec![fmt_f(scaled.cond_unscaled), fmt_f(scaled.cond_scaled), fmt_f(scaled.log_det()?)]],
    )?;
    Ok(HessianReport { cond_unscaled: scaled.cond_unscaled, cond_scaled: scaled.cond_scaled, h1, h2 })
}

/// `eig`: information gain of the configured `receivers`.
pub fn run_eig(c: &RunConfig, out: &Path) -> Result<EigEstimate> {
    let model = c.model()?;
    let rec = model.receivers(&c.receivers)?;
    let t0 = Instant::now();
    let e = eig_for_design(c, &model, &rec)?;
    let key = c.receivers.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let mut fields = vec![key.clone()];
    fields.extend(estimate_fields(&e));
    let prov = Provenance::new(c);
    write_table(
        &out.join("eig.csv"),
        &prov.header("eig"),
        &["receivers", "estimator", "eig", "stderr", "samples", "m_inner"],
        &[fields],
    )?;
    timing_row(out, "eig", &key, t0.elapsed().as_secs_f64())?;
    Ok(e)
}

/// Outcome of a sweep: rows written now, rows skipped as already present, failed design points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepSummary {
    pub written: usize,
    pub skipped: usize,
    pub failed: Vec<String>,
    pub path: PathBuf,
}

/// `sweep`: every design point of the configured scenario.
pub fn run_sweep(c: &RunConfig, out: &Path) -> Result<SweepSummary> {
    let model = c.model()?;
    let name = format!("sweep_{}", c.scenario.name());
    let prov = Provenance::new(c);
    let mut table = CsvTable::open(
        &out.join(format!("{name}.csv")),
        &prov.header(&name),
        &["key", "n_r", "d_r", "estimator", "eig", "stderr", "samples", "m_inner"],
    )?;
    let mut summary = SweepSummary { path: table.path().to_path_buf(), ..Default::default() };
    let mut todo: Vec<(DesignSpec, Receivers)> = Vec::new();
    for d in c.scenario.designs() {
        if table.is_done(&d.key()) {
            summary.skipped += 1;
            continue;
        }
        match model.receivers(&d.positions()) {
            Ok(r) => todo.push((d, r)),
            Err(e) => {
                log::error!("design {}: {e}", d.key());
                summary.failed.push(d.key());
            }
        }
    }
    let mut emit = |table: &mut CsvTable, d: &DesignSpec, res: Result<EigEstimate>| -> Result<()> {
        match res {
            Ok(e) => {
                let mut f = vec![d.key(), d.n_r.to_string(), fmt_f(d.d_r)];
                f.extend(estimate_fields(&e));
                table.row(&f)?;
                summary.written += 1;
            }
            Err(e) => {
                log::error!("design {}: {e}", d.key());
                summary.failed.push(d.key());
            }
        }
        Ok(())
    };
    if todo.is_empty() {
        return Ok(summary);
    }
    if c.estimator == EstimatorKind::Laplace {
        let problem = c.reduced()?;
        let noise = c.noise_model()?;
        let t0 = Instant::now();
        let recs: Vec<Receivers> = todo.iter().map(|(_, r)| r.clone()).collect();
        let results = laplace_eig_designs(&model, &problem, &noise, &recs, Integration::from_config(c))?;
        timing_row(out, &name, "all", t0.elapsed().as_secs_f64())?;
        for ((d, _), res) in todo.iter().zip(results) {
            emit(&mut table, d, res)?;
        }
    } else {
        for (d, r) in &todo {
            let t0 = Instant::now();
            let res = eig_for_design(c, &model, r);
            timing_row(out, &name, &d.key(), t0.elapsed().as_secs_f64())?;
            emit(&mut table, d, res)?;
        }
    }
    Ok(summary)
}

/// `per-param`: Laplace information gain of each active parameter across the scenario's designs.
pub fn run_per_param(c: &RunConfig, out: &Path) -> Result<SweepSummary> {
    let model = c.model()?;
    let problem = c.reduced()?;
    let noise = c.noise_model()?;
    let integration = Integration::from_config(c);
    let name = format!("per_param_{}", c.scenario.name());
    let mut columns = vec!["key".to_string(), "n_r".into(), "d_r".into()];
    columns.extend(c.active.iter().map(|&a| format!("q_{}", PARAM_NAMES[a])));
    let cols: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let prov = Provenance::new(c);
    let mut table = CsvTable::open(&out.join(format!("{name}.csv")), &prov.header(&name), &cols)?;
    let mut summary = SweepSummary { path: table.path().to_path_buf(), ..Default::default() };
    let mut todo = Vec::new();
    for d in c.scenario.designs() {
        if table.is_done(&d.key()) {
            summary.skipped += 1;
        } else {
            todo.push((d, model.receivers(&d.positions())?));
        }
    }
    if todo.is_empty() {
        return Ok(summary);
    }
    let (points, weights) = integration.points(&problem.prior)?;
    let recs: Vec<Receivers> = todo.iter().map(|(_, r)| r.clone()).collect();
    let t0 = Instant::now();
    let per_point = design_hessian_map(&model, &problem, &noise, &recs, &points, |h, _| per_parameter_gain(h, &problem.prior))?;
    timing_row(out, &name, "all", t0.elapsed().as_secs_f64())?;
    for ((d, _), vals) in todo.iter().zip(transpose_results(per_point, recs.len())) {
        match vals {
            Ok(vals) => {
                let mut f = vec![d.key(), d.n_r.to_string(), fmt_f(d.d_r)];
                for i in 0..c.active.len() {
                    let col: Vec<f64> = vals.iter().map(|q| q[i]).collect();
                    f.push(fmt_f(integration.combine(&col, weights.as_deref()).0));
                }
                table.row(&f)?;
                summary.written += 1;
            }
            Err(e) => {
                log::error!("design {}: {e}", d.key());
                summary.failed.push(d.key());
            }
        }
    }
    Ok(summary)
}

/// Conditioning of `H_I` at the prior mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    pub cond_unscaled: f64,
    pub cond_scaled: f64,
    pub max_diag_deviation: f64,
}

pub fn condition_study(c: &RunConfig) -> Result<ConditionReport> {
    let model = c.model()?;
    let rec = model.receivers(&c.receivers)?;
    let mean = c.prior.mean();
    let theta = SourceParams::from_array(mean.try_into().expect("seven parameters"));
    let h1 = model.hessian_h1(&theta, &c.active, &rec, &c.noise_model()?)?;
    let s = scale_hessian(&h1)?;
    let dev = (0..s.scaled.nrows()).map(|i| (s.scaled[(i, i)] - 1.0).abs()).fold(0.0, f64::max);
    Ok(ConditionReport { cond_unscaled: s.cond_unscaled, cond_scaled: s.cond_scaled, max_diag_deviation: dev })
}

/// Monte Carlo and sparse-quadrature convergence of the Laplace information gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// `(M, replicate, estimate)`.
    pub mc: Vec<(usize, usize, f64)>,
    /// `(M, RMS relative error over replicates)`.
    pub mc_errors: Vec<(usize, f64)>,
    pub mc_rate: f64,
    /// `(level, points, estimate)`.
    pub sparse: Vec<(usize, usize, f64)>,
    /// `(points of the finer level, successive relative error)`.
    pub sparse_errors: Vec<(usize, f64)>,
    pub sparse_rate: f64,
}

impl ConvergenceReport {
    /// Number of consecutive sparse error pairs in which the error decreases.
    pub fn sparse_decreasing_pairs(&self) -> (usize, usize) {
        let e: Vec<f64> = self.sparse_errors.iter().map(|p| p.1).collect();
        let dec = e.windows(2).filter(|w| w[1] < w[0]).count();
        (dec, e.len().saturating_sub(1))
    }
}

pub fn convergence_study(c: &RunConfig) -> Result<ConvergenceReport> {
    let model = c.model()?;
    let rec = model.receivers(&c.receivers)?;
    let problem = c.reduced()?;
    let noise = c.noise_model()?;
    let f = |th: &[f64]| -> Result<f64> {
        let h1 = model.hessian_h1(&problem.full(th), &problem.active, &rec, &noise)?;
        dkl_hat(&h1, &problem.prior, th)
    };
    let mut sizes = c.mc_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let m_max = *sizes.last().ok_or_else(|| Error::config("`mc_sizes` is empty"))?;
    if c.mc_replicates < 2 {
        return Err(Error::config("`mc_replicates` must be at least 2"));
    }
    let mut mc = Vec::new();
    let mut finals = Vec::new();
    for r in 0..c.mc_replicates {
        let seed = stream_rng(c.seed, tags::REPLICATE, r as u64).next_u64();
        let vals: Vec<f64> = (0..m_max)
            .into_par_iter()
            .map(|j| f(&problem.prior.sample(&mut stream_rng(seed, tags::PRIOR, j as u64))))
            .collect::<Result<_>>()?;
        for &m in &sizes {
            mc.push((m, r, mean_and_stderr(&vals[..m]).0));
        }
        finals.push(mean_and_stderr(&vals).0);
    }
    let reference = mean_and_stderr(&finals).0;
    let mc_errors: Vec<(usize, f64)> = sizes
        .iter()
        .map(|&m| {
            let sq: Vec<f64> =
                mc.iter().filter(|e| e.0 == m).map(|e| ((e.2 - reference) / reference).powi(2)).collect();
            (m, (sq.iter().sum::<f64>() / sq.len() as f64).sqrt())
        })
        .collect();
    let mc_rate = convergence_rate(
        &mc_errors.iter().map(|e| e.1).collect::<Vec<_>>(),
        &mc_errors.iter().map(|e| e.0 as f64).collect::<Vec<_>>(),
    )?;
    let mut sparse = Vec::new();
    for &level in &c.sparse_levels {
        let (pts, w) = Integration::Sparse { level }.points(&problem.prior)?;
        let vals: Vec<f64> = pts.par_iter().map(|p| f(p)).collect::<Result<_>>()?;
        let est = Integration::Sparse { level }.combine(&vals, w.as_deref()).0;
        sparse.push((level, pts.len(), est));
    }
    let errs = successive_relative_errors(&sparse.iter().map(|s| s.2).collect::<Vec<_>>());
    let sparse_errors: Vec<(usize, f64)> = errs.iter().enumerate().map(|(i, &e)| (sparse[i + 1].1, e)).collect();
    let sparse_rate = if sparse_errors.len() >= 3 && sparse_errors.iter().all(|e| e.1 > 0.0) {
        convergence_rate(
            &sparse_errors.iter().map(|e| e.1).collect::<Vec<_>>(),
            &sparse_errors.iter().map(|e| e.0 as f64).collect::<Vec<_>>(),
        )?
    } else {
        f64::NAN
    };
    Ok(ConvergenceReport { mc, mc_errors, mc_rate, sparse, sparse_errors, sparse_rate })
}

/// Laplace estimate, nested Monte Carlo reference and their relative gap.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub laplace: EigEstimate,
    pub nested: EigEstimate,
    pub relative_gap: f64,
}

pub fn comparison_study(c: &RunConfig) -> Result<ComparisonReport> {
    let model = c.model()?;
    let rec = model.receivers(&c.receivers)?;
    let problem = c.reduced()?;
    let noise = c.noise_model()?;
    let laplace =
        laplace_eig_designs(&model, &problem, &noise, std::slice::from_ref(&rec), Integration::from_config(c))?
            .remove(0)?;
    let nested = nested_eig(&model, &problem, &noise, &rec, NestedSettings::from_config(c))?;
    let relative_gap = (laplace.value - nested.value).abs() / nested.value.abs();
    Ok(ComparisonReport { laplace, nested, relative_gap })
}

/// `diagnose`: runs the configured diagnostic and writes its tables.
pub fn run_diagnose(c: &RunConfig, out: &Path) -> Result<()> {
    let prov = Provenance::new(c);
    let t0 = Instant::now();
    match c.diagnostic {
        Diagnostic::Condition => {
            let r = condition_study(c)?;
            write_table(
                &out.join("condition.csv"),
                &prov.header("condition"),
                &["cond_unscaled", "cond_scaled", "max_diag_deviation"],
                &[vec![fmt_f(r.cond_unscaled), fmt_f(r.cond_scaled), fmt_f(r.max_diag_deviation)]],
            )?;
            log::info!("cond(H) = {:e}, cond(H scaled) = {:e}", r.cond_unscaled, r.cond_scaled);
        }
        Diagnostic::Convergence => {
            let r = convergence_study(c)?;
            let rows: Vec<Vec<String>> =
                r.mc.iter().map(|&(m, k, e)| vec![m.to_string(), k.to_string(), fmt_f(e)]).collect();
            write_table(&out.join("convergence_mc.csv"), &prov.header("convergence_mc"), &["samples", "replicate", "estimate"], &rows)?;
            let mut rows = Vec::new();
            for (i, &(l, n, e)) in r.sparse.iter().enumerate() {
                let err = if i == 0 { String::new() } else { fmt_f(r.sparse_errors[i - 1].1) };
                rows.push(vec![l.to_string(), n.to_string(), fmt_f(e), err]);
            }
            write_table(
                &out.join("convergence_sparse.csv"),
                &prov.header("convergence_sparse"),
                &["level", "points", "estimate", "relative_error"],
                &rows,
            )?;
            let (dec, pairs) = r.sparse_decreasing_pairs();
            write_table(
                &out.join("convergence_rates.csv"),
                &prov.header("convergence_rates"),
                &["integrator", "rate", "decreasing_pairs", "pairs"],
                &[
                    vec!["mc".into(), fmt_f(r.mc_rate), String::new(), String::new()],
                    vec!["sparse".into(), fmt_f(r.sparse_rate), dec.to_string(), pairs.to_string()],
                ],
            )?;
            log::info!("Monte Carlo rate {:.3}, sparse rate {:.3}", r.mc_rate, r.sparse_rate);
        }
        Diagnostic::Comparison => {
            let r = comparison_study(c)?;
            let mut rows = Vec::new();
            for e in [&r.laplace, &r.nested] {
                rows.push(estimate_fields(e));
            }
            rows.push(vec!["relative_gap".into(), fmt_f(r.relative_gap), String::new(), String::new(), String::new()]);
            write_table(
                &out.join("comparison.csv"),
                &prov.header("comparison"),
                &["estimator", "eig", "stderr", "samples", "m_inner"],
                &rows,
            )?;
            log::info!("Laplace {:.4}, nested {:.4}, gap {:.3}", r.laplace.value, r.nested.value, r.relative_gap);
        }
    }
    let name = match c.diagnostic {
        Diagnostic::Condition => "condition",
        Diagnostic::Convergence => "convergence",
        Diagnostic::Comparison => "comparison",
    };
    timing_row(out, name, name, t0.elapsed().as_secs_f64())?;
    Ok(())
}
