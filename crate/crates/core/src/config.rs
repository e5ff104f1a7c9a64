//! Run configuration: a flat `key = value` text format.
//!
//! Lines starting with `#` (and anything after a `#`) are comments. Lists are
//! comma separated. `layer = top, bottom, density, cp, cs` may be repeated,
//! from the surface downwards. Grid extents, `h`, `dt` and `T` are required;
//! everything else has a default, and [`RunConfig::to_text`] prints the
//! complete effective configuration.

use std::collections::HashSet;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::design::Scenario;
use crate::error::{Error, Result};
use crate::grid::{build_grid, Grid};
use crate::hessian::NoiseModel;
use crate::inference::{EstimatorKind, InnerSampling, Prior};
use crate::medium::{Layer, LayerSpec};
use crate::model::{default_prior, ReducedProblem, SeismicModel};
use crate::source::{SourceParams, SourcePatch, N_THETA, PARAM_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    MonteCarlo,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagnostic {
    Condition,
    Convergence,
    Comparison,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
    pub h: f64,
    pub dt: f64,
    pub horizon: f64,
    pub cfl: f64,
    pub layers: LayerSpec,
    pub prior: Prior,
    pub theta: SourceParams,
    pub active: Vec<usize>,
    pub noise: [f64; 3],
    pub receivers: Vec<f64>,
    pub scenario: Scenario,
    pub estimator: EstimatorKind,
    pub integrator: Integrator,
    pub samples: usize,
    pub sparse_level: usize,
    pub nested_outer: usize,
    pub nested_inner: usize,
    pub nested_mode: InnerSampling,
    pub nested_marginalize: bool,
    pub seed: u64,
    pub workers: usize,
    pub diagnostic: Diagnostic,
    pub mc_sizes: Vec<usize>,
    pub mc_replicates: usize,
    pub sparse_levels: Vec<usize>,
    pub output: String,
}

const REQUIRED: [&str; 7] = ["x1_min", "x1_max", "x2_min", "x2_max", "h", "dt", "T"];

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::config_at(line, format!("`{key}`: `{}` is not a finite number", v.trim())))
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse::<usize>()
        .map_err(|_| Error::config_at(line, format!("`{key}`: `{}` is not a non-negative integer", v.trim())))
}

fn parse_list<T>(line: usize, key: &str, v: &str, f: fn(usize, &str, &str) -> Result<T>) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| f(line, key, s)).collect()
}

fn parse_fixed<const N: usize>(line: usize, key: &str, v: &str) -> Result<[f64; N]> {
    let vals = parse_list(line, key, v, parse_f64)?;
    vals.try_into()
        .map_err(|got: Vec<f64>| Error::config_at(line, format!("`{key}` needs {N} values, got {}", got.len())))
}

fn param_index(line: usize, key: &str, v: &str) -> Result<usize> {
    let v = v.trim();
    PARAM_NAMES
        .iter()
        .position(|n| *n == v)
        .or_else(|| v.parse::<usize>().ok().filter(|&i| (1..=N_THETA).contains(&i)).map(|i| i - 1))
        .ok_or_else(|| {
            Error::config_at(line, format!("`{key}`: unknown parameter `{v}` (use 1..7 or one of {PARAM_NAMES:?})"))
        })
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            x1_min: -10000.0,
            x1_max: 10000.0,
            x2_min: -15000.0,
            x2_max: 0.0,
            h: 200.0,
            dt: 0.025,
            horizon: 8.0,
            cfl: 0.9,
            layers: LayerSpec::loh1(-15000.0),
            prior: default_prior(),
            theta: SourceParams::from_array([0.0, -2000.0, 1.0, 4.0, 1e14, 1e14, 1e14]),
            active: (0..N_THETA).collect(),
            noise: [1e-4, 0.0, 1e-4],
            receivers: vec![-8000.0, -4000.0, 0.0, 4000.0, 8000.0],
            scenario: Scenario::I,
            estimator: EstimatorKind::Laplace,
            integrator: Integrator::MonteCarlo,
            samples: 500,
            sparse_level: 5,
            nested_outer: 500,
            nested_inner: 500,
            nested_mode: InnerSampling::Fresh,
            nested_marginalize: true,
            seed: 0,
            workers: 1,
            diagnostic: Diagnostic::Condition,
            mc_sizes: vec![100, 1000, 10000],
            mc_replicates: 10,
            sparse_levels: vec![5, 6, 7, 8, 9, 10],
            output: "out".to_string(),
        }
    }
}

fn scenario_name(s: Scenario) -> &'static str {
    s.name()
}

impl RunConfig {
    /// Parses and validates a configuration text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen: HashSet<String> = HashSet::new();
        let mut layers: Vec<Layer> = Vec::new();
        let mut prior = c.prior.bounds.clone();
        let mut theta = c.theta.to_array();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::config_at(line, format!("expected `key = value`, got `{content}`")))?;
            let key = key.trim();
            let value = value.trim();
            if key != "layer" && !seen.insert(key.to_string()) {
                return Err(Error::config_at(line, format!("duplicate key `{key}`")));
            }
            match key {
                "x1_min" => c.x1_min = parse_f64(line, key, value)?,
                "x1_max" => c.x1_max = parse_f64(line, key, value)?,
                "x2_min" => c.x2_min = parse_f64(line, key, value)?,
                "x2_max" => c.x2_max = parse_f64(line, key, value)?,
                "h" => c.h = parse_f64(line, key, value)?,
                "dt" => c.dt = parse_f64(line, key, value)?,
                "T" => c.horizon = parse_f64(line, key, value)?,
                "cfl" => c.cfl = parse_f64(line, key, value)?,
                "layer" => {
                    let [top, bottom, density, cp, cs] = parse_fixed::<5>(line, key, value)?;
                    layers.push(Layer { x2_top: top, x2_bottom: bottom, density, cp, cs });
                }
                k if k.starts_with("prior_") => {
                    let name = &k[6..];
                    let name = match name {
                        "x1" => "x1s",
                        "x2" => "x2s",
                        other => other,
                    };
                    let i = PARAM_NAMES
                        .iter()
                        .position(|n| *n == name)
                        .ok_or_else(|| Error::config_at(line, format!("unknown key `{key}`")))?;
                    let [a, b] = parse_fixed::<2>(line, key, value)?;
                    if !(b > a) {
                        return Err(Error::config_at(line, format!("`{key}`: empty range [{a}, {b}]")));
                    }
                    prior[i] = (a, b);
                }
                "theta" => theta = parse_fixed::<N_THETA>(line, key, value)?,
                "active" => {
                    c.active = parse_list(line, key, value, param_index)?;
                    let mut s = c.active.clone();
                    s.sort();
                    s.dedup();
                    if s.len() != c.active.len() || s.is_empty() {
                        return Err(Error::config_at(line, "`active` must list distinct parameters"));
                    }
                }
                "noise" => c.noise = parse_fixed::<3>(line, key, value)?,
                "receivers" => c.receivers = parse_list(line, key, value, parse_f64)?,
                "scenario" => c.scenario = value.parse().map_err(|e: Error| Error::config_at(line, e.to_string()))?,
                "estimator" => c.estimator = value.parse().map_err(|e: Error| Error::config_at(line, e.to_string()))?,
                "integrator" => {
                    c.integrator = match value {
                        "mc" => Integrator::MonteCarlo,
                        "sparse" => Integrator::Sparse,
                        other => return Err(Error::config_at(line, format!("unknown integrator `{other}` (mc, sparse)"))),
                    }
                }
                "samples" => c.samples = parse_usize(line, key, value)?,
                "sparse_level" => c.sparse_level = parse_usize(line, key, value)?,
                "nested_outer" => c.nested_outer = parse_usize(line, key, value)?,
                "nested_inner" => c.nested_inner = parse_usize(line, key, value)?,
                "nested_mode" => c.nested_mode = value.parse().map_err(|e: Error| Error::config_at(line, e.to_string()))?,
                "nested_marginalize" => {
                    c.nested_marginalize = match value {
                        "true" => true,
                        "false" => false,
                        other => return Err(Error::config_at(line, format!("`{key}`: expected true or false, got `{other}`"))),
                    }
                }
                "seed" => {
                    c.seed = value
                        .parse()
                        .map_err(|_| Error::config_at(line, format!("`seed`: `{value}` is not an unsigned integer")))?
                }
                "workers" => c.workers = parse_usize(line, key, value)?,
                "diagnostic" => {
                    c.diagnostic = match value {
                        "condition" => Diagnostic::Condition,
                        "convergence" => Diagnostic::Convergence,
                        "comparison" => Diagnostic::Comparison,
                        other => {
                            return Err(Error::config_at(
                                line,
                                format!("unknown diagnostic `{other}` (condition, convergence, comparison)"),
                            ))
                        }
                    }
                }
                "mc_sizes" => c.mc_sizes = parse_list(line, key, value, parse_usize)?,
                "mc_replicates" => c.mc_replicates = parse_usize(line, key, value)?,
                "sparse_levels" => c.sparse_levels = parse_list(line, key, value, parse_usize)?,
                "output" => c.output = value.to_string(),
                other => return Err(Error::config_at(line, format!("unknown key `{other}`"))),
            }
        }
        for k in REQUIRED {
            if !seen.contains(k) {
                return Err(Error::config(format!("missing required key `{k}`")));
            }
        }
        c.layers = if layers.is_empty() { LayerSpec::loh1(c.x2_min) } else { LayerSpec { layers } };
        c.prior = Prior::new(prior)?;
        c.theta = SourceParams::from_array(theta);
        c.validate()?;
        Ok(c)
    }

    pub fn grid(&self) -> Result<Grid> {
        build_grid(self.x1_min, self.x1_max, self.x2_min, self.x2_max, self.h)
    }

    /// Builds the forward model; fails on grid, layer or stability errors.
    pub fn model(&self) -> Result<SeismicModel> {
        self.model_with_horizon(self.horizon)
    }

    pub fn model_with_horizon(&self, horizon: f64) -> Result<SeismicModel> {
        SeismicModel::new(self.grid()?, &self.layers, self.dt, horizon, self.cfl)
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.noise[0], self.noise[1], self.noise[2])
    }

    pub fn reduced(&self) -> Result<ReducedProblem> {
        ReducedProblem::new(self.theta, self.active.clone(), &self.prior)
    }

    /// Checks everything that can be checked without solving.
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::config(format!("cfl = {} must lie in (0, 1]", self.cfl)));
        }
        let grid = self.grid()?;
        crate::model::level_count(self.dt, self.horizon)?;
        let mat = crate::medium::layered_material(&self.layers, &grid)?;
        let limit = self.cfl * crate::solver::cfl_limit(grid.h, mat.max_combined_speed());
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "dt = {} violates the stability limit {limit:.6} (cfl = {})",
                self.dt, self.cfl
            )));
        }
        self.noise_model()?;
        SourcePatch::new(&self.theta, &grid).map_err(|e| Error::config(format!("theta: {e}")))?;
        // every corner of the location prior must admit the source stencil
        let (a1, b1) = self.prior.bounds[0];
        let (a2, b2) = self.prior.bounds[1];
        for (x1, x2) in [(a1, a2), (a1, b2), (b1, a2), (b1, b2)] {
            let corner = SourceParams { x1s: x1, x2s: x2, ..self.theta };
            SourcePatch::new(&corner, &grid)
                .map_err(|e| Error::config(format!("source location prior does not fit the grid: {e}")))?;
        }
        for &x in &self.receivers {
            grid.snap_x1(x).map_err(|e| Error::config(format!("receiver: {e}")))?;
        }
        if self.active.is_empty() {
            return Err(Error::config("no active parameters"));
        }
        if self.samples < 2 {
            return Err(Error::config("`samples` must be at least 2"));
        }
        if self.nested_outer < 1 || self.nested_inner < 1 {
            return Err(Error::config("nested sample counts must be positive"));
        }
        Ok(())
    }

    /// Complete effective configuration in canonical form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ");
        let ulist = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "x1_min = {:e}", self.x1_min);
        let _ = writeln!(s, "x1_max = {:e}", self.x1_max);
        let _ = writeln!(s, "x2_min = {:e}", self.x2_min);
        let _ = writeln!(s, "x2_max = {:e}", self.x2_max);
        let _ = writeln!(s, "h = {:e}", self.h);
        let _ = writeln!(s, "dt = {:e}", self.dt);
        let _ = writeln!(s, "T = {:e}", self.horizon);
        let _ = writeln!(s, "cfl = {:e}", self.cfl);
        for l in &self.layers.layers {
            let _ = writeln!(s, "layer = {}", list(&[l.x2_top, l.x2_bottom, l.density, l.cp, l.cs]));
        }
        for (i, (a, b)) in self.prior.bounds.iter().enumerate() {
            let _ = writeln!(s, "prior_{} = {}", PARAM_NAMES[i], list(&[*a, *b]));
        }
        let _ = writeln!(s, "theta = {}", list(&self.theta.to_array()));
        let names: Vec<&str> = self.active.iter().map(|&i| PARAM_NAMES[i]).collect();
        let _ = writeln!(s, "active = {}", names.join(", "));
        let _ = writeln!(s, "noise = {}", list(&self.noise));
        let _ = writeln!(s, "receivers = {}", list(&self.receivers));
        let _ = writeln!(s, "scenario = {}", scenario_name(self.scenario));
        let _ = writeln!(s, "estimator = {}", self.estimator.tag());
        let _ = writeln!(
            s,
            "integrator = {}",
            match self.integrator {
                Integrator::MonteCarlo => "mc",
                Integrator::Sparse => "sparse",
            }
        );
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "sparse_level = {}", self.sparse_level);
        let _ = writeln!(s, "nested_outer = {}", self.nested_outer);
        let _ = writeln!(s, "nested_inner = {}", self.nested_inner);
        let _ = writeln!(
            s,
            "nested_mode = {}",
            match self.nested_mode {
                InnerSampling::Fresh => "fresh",
                InnerSampling::SharedPool => "pool",
                InnerSampling::ReuseOuter => "reuse",
            }
        );
        let _ = writeln!(s, "nested_marginalize = {}", self.nested_marginalize);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(
            s,
            "diagnostic = {}",
            match self.diagnostic {
                Diagnostic::Condition => "condition",
                Diagnostic::Convergence => "convergence",
                Diagnostic::Comparison => "comparison",
            }
        );
        let _ = writeln!(s, "mc_sizes = {}", ulist(&self.mc_sizes));
        let _ = writeln!(s, "mc_replicates = {}", self.mc_replicates);
        let _ = writeln!(s, "sparse_levels = {}", ulist(&self.sparse_levels));
        s
    }

    /// SHA-256 of the canonical configuration (worker count and output path excluded).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const MINIMAL: &str = "\
# layer over half space
x1_min = -10000
x1_max = 10000
x2_min = -15000
x2_max = 0
h = 200
dt = 0.025
T = 8
";

    #[test]
    fn minimal_config() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        let m = c.model().unwrap();
        assert_eq!(m.nt, 321);
        assert_eq!(m.grid.len(), 7676);
        assert_eq!(c.layers, LayerSpec::loh1(-15000.0));
    }

    #[test]
    fn cfl_violation_names_limit() {
        let text = MINIMAL.replace("dt = 0.025", "dt = 0.05");
        let err = RunConfig::parse(&text.replace("T = 8", "T = 8.0")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stability limit 0.025981"), "{msg}");
    }

    #[test]
    fn unknown_key_has_line() {
        let text = format!("{MINIMAL}foo = 3\n");
        match RunConfig::parse(&text).unwrap_err() {
            Error::Config { line, message } => {
                assert_eq!(line, Some(9));
                assert!(message.contains("foo"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn missing_and_bad_values() {
        let text = MINIMAL.replace("h = 200\n", "");
        assert!(RunConfig::parse(&text).unwrap_err().to_string().contains("`h`"));
        let text = MINIMAL.replace("h = 200", "h = abc");
        assert!(matches!(RunConfig::parse(&text), Err(Error::Config { line: Some(6), .. })));
        let text = MINIMAL.replace("h = 200", "h = 400");
        assert!(RunConfig::parse(&text).unwrap_err().to_string().contains("x2"));
        let text = format!("{MINIMAL}h = 100\n");
        assert!(RunConfig::parse(&text).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn lists_and_layers() {
        let text = format!(
            "{MINIMAL}layer = 0, -1000, 2600, 4000, 2000\nlayer = -1000, -15000, 2700, 6000, 3464\n\
             active = x2s, omega, 5\nreceivers = -9000, 1000\nnoise = 2e-4, 0, 1e-4\nestimator = nested\n"
        );
        let c = RunConfig::parse(&text).unwrap();
        assert_eq!(c.active, vec![1, 3, 4]);
        assert_eq!(c.receivers, vec![-9000.0, 1000.0]);
        assert_eq!(c.layers, LayerSpec::loh1(-15000.0));
        assert_eq!(c.estimator, EstimatorKind::NestedMc);
        let again = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }
}
