#![allow(dead_code)]

use seisdesign::grid::{build_grid, Grid};
use seisdesign::medium::{layered_material, LayerSpec};
use seisdesign::solver::{assemble_operators, Forcing, Stepper};

/// `u(x, t) = g(t) φ(x) e` with a Gaussian bump `φ` and `g(t) = sin³(πt)`.
pub struct Manufactured {
    pub grid: Grid,
    pub density: f64,
    pub lambda: f64,
    pub mu: f64,
    pub centre: (f64, f64),
    pub width: f64,
    pub dir: [f64; 2],
    pub dt: f64,
}

impl Manufactured {
    pub fn g(&self, t: f64) -> (f64, f64) {
        let s = (std::f64::consts::PI * t).sin();
        let c = (std::f64::consts::PI * t).cos();
        let p2 = std::f64::consts::PI.powi(2);
        (s.powi(3), p2 * (6.0 * s * c * c - 3.0 * s.powi(3)))
    }

    fn phi(&self, x: f64, y: f64) -> (f64, [[f64; 2]; 2]) {
        let (dx, dy) = (x - self.centre.0, y - self.centre.1);
        let s2 = self.width * self.width;
        let p = (-(dx * dx + dy * dy) / (2.0 * s2)).exp();
        let d = [dx, dy];
        let mut hess = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                hess[i][j] = (d[i] * d[j] / (s2 * s2) - if i == j { 1.0 / s2 } else { 0.0 }) * p;
            }
        }
        (p, hess)
    }

    pub fn exact(&self, node: usize, t: f64) -> [f64; 2] {
        let (x, y) = self.grid.coords(node);
        let (p, _) = self.phi(x, y);
        let g = self.g(t).0;
        [g * p * self.dir[0], g * p * self.dir[1]]
    }
}

impl Forcing for Manufactured {
    fn columns(&self) -> usize {
        1
    }

    fn visit(&self, m: usize, add: &mut dyn FnMut(usize, usize, f64)) {
        let t = m as f64 * self.dt;
        let (g, gtt) = self.g(t);
        for node in 0..self.grid.len() {
            let (x, y) = self.grid.coords(node);
            let (p, h) = self.phi(x, y);
            let lap = h[0][0] + h[1][1];
            for i in 0..2 {
                let grad_div = h[i][0] * self.dir[0] + h[i][1] * self.dir[1];
                let div_sigma = (self.lambda + self.mu) * grad_div + self.mu * lap * self.dir[i];
                add(2 * node + i, 0, self.density * gtt * p * self.dir[i] - g * div_sigma);
            }
        }
    }
}

/// Max-norm error at `t = horizon` of the manufactured solution on a unit square with spacing `h`.
pub fn manufactured_error(n: usize, horizon: f64) -> f64 {
    let h = 1.0 / n as f64;
    let grid = build_grid(0.0, 1.0, -1.0, 0.0, h).unwrap();
    let (density, cp, cs) = (1.3, 3f64.sqrt(), 1.0);
    let mat = layered_material(&LayerSpec::homogeneous(0.0, -1.0, density, cp, cs), &grid).unwrap();
    let ops = assemble_operators(&grid, &mat);
    let dt = h / 4.0;
    let nt = (horizon / dt).round() as usize + 1;
    let mms = Manufactured {
        grid: grid.clone(),
        density,
        lambda: density * (cp * cp - 2.0 * cs * cs),
        mu: density * cs * cs,
        centre: (0.45, -0.55),
        width: 0.07,
        dir: [1.0, 0.5],
        dt,
    };
    let stepper = Stepper::new(&ops, dt, nt).unwrap();
    let mut err = 0.0f64;
    let mut hist = |m: usize, state: &[f64]| {
        if m + 1 == nt {
            for node in 0..grid.len() {
                let e = mms.exact(node, m as f64 * dt);
                err = err.max((state[2 * node] - e[0]).abs()).max((state[2 * node + 1] - e[1]).abs());
            }
        }
    };
    stepper.forward(&mms, &[], &[], Some(&mut hist)).unwrap();
    err
}

/// Observed orders between successive refinements.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

use rand::{Rng, SeedableRng};
use seisdesign::solver::{ReceiverLoad, ReceiverSeries, SparseForcing};

/// Random two-layer instance on an `n × n` grid with random load and data weights.
pub struct AdjointInstance {
    pub ops: seisdesign::solver::DiscreteOperators,
    pub dt: f64,
    pub nt: usize,
    pub forcing: SparseForcing,
    pub load: ReceiverLoad,
}

pub fn adjoint_instance(seed: u64, n: usize, nt: usize) -> AdjointInstance {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h = 1.0;
    let depth = -((n - 1) as f64);
    let grid = build_grid(0.0, (n - 1) as f64, depth, 0.0, h).unwrap();
    let cut = -(rng.gen_range(1..n - 1) as f64);
    let mut layer = |top: f64, bottom: f64| {
        let cs: f64 = rng.gen_range(1.0..2.0);
        seisdesign::medium::Layer {
            x2_top: top,
            x2_bottom: bottom,
            density: rng.gen_range(1.0..3.0),
            cp: cs * rng.gen_range(1.5..2.5),
            cs,
        }
    };
    let spec = LayerSpec { layers: vec![layer(0.0, cut), layer(cut, depth)] };
    let mat = layered_material(&spec, &grid).unwrap();
    let dt = 0.8 * seisdesign::solver::cfl_limit(h, mat.max_combined_speed());
    let ops = assemble_operators(&grid, &mat);
    let rows: Vec<usize> = (0..2 * grid.len()).collect();
    let values = (0..rows.len() * nt).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let forcing = SparseForcing { rows, cols: 1, values };
    let nodes: Vec<usize> = (0..grid.len()).collect();
    let mut series = ReceiverSeries::zeros(nodes.iter().map(|&k| grid.coords(k)).collect(), nodes, nt, dt);
    for v in series.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    AdjointInstance { ops, dt, nt, forcing, load: ReceiverLoad { series } }
}

/// `(Σ ⟨w, u⟩, −Σ ⟨φ, C q⟩)` for an instance.
pub fn adjoint_pair(inst: &AdjointInstance) -> (f64, f64) {
    let stepper = Stepper::new(&inst.ops, inst.dt, inst.nt).unwrap();
    let w = &inst.load.series;
    let u = stepper.forward(&inst.forcing, &w.positions, &w.nodes, None).unwrap().remove(0);
    let lhs: f64 = u.data.iter().zip(&w.data).map(|(a, b)| a * b).sum();
    let hist = stepper.dual_history(&inst.load).unwrap();
    let mut rhs = 0.0;
    for (m, phi) in hist.iter().enumerate() {
        inst.forcing.visit(m, &mut |row, _, v| rhs -= phi[row] * inst.ops.c[row] * v);
    }
    (lhs, rhs)
}

use nalgebra::DMatrix;
use seisdesign::hessian::NoiseModel;
use seisdesign::model::{add_noise, default_prior, weighted_residual, Receivers, ReducedProblem, SeismicModel};
use seisdesign::source::SourceParams;

pub const THETA_STAR: [f64; 7] = [-1000.0, -2000.0, 1.0, 4.0, 1e14, 1e14, 1e14];
pub const REDUCED: [usize; 3] = [1, 3, 4];

/// Small layer-over-half-space model, `h = 250`, `T = 1.25`.
pub fn desk_model(x1_min: f64, x1_max: f64, depth: f64) -> SeismicModel {
    let grid = build_grid(x1_min, x1_max, depth, 0.0, 250.0).unwrap();
    SeismicModel::new(grid, &LayerSpec::loh1(depth), 0.03125, 1.25, 0.9).unwrap()
}

pub fn small_model() -> SeismicModel {
    desk_model(-4000.0, 4000.0, -4000.0)
}

pub fn noise() -> NoiseModel {
    NoiseModel::isotropic(1e-4).unwrap()
}

pub fn reduced_problem() -> ReducedProblem {
    ReducedProblem::new(SourceParams::from_array(THETA_STAR), REDUCED.to_vec(), &default_prior()).unwrap()
}

/// Noisy data at `θ*` and the point `θ₀ ≠ θ*` where derivatives are checked.
pub struct MisfitSetup {
    pub model: SeismicModel,
    pub rec: Receivers,
    pub data: seisdesign::solver::ReceiverSeries,
    pub problem: ReducedProblem,
    pub theta0: Vec<f64>,
    pub steps: Vec<f64>,
}

pub fn misfit_setup(seed: u64) -> MisfitSetup {
    let model = small_model();
    let rec = model.receivers(&[-3000.0, 0.0, 1000.0, 3000.0]).unwrap();
    let problem = reduced_problem();
    let clean = model.forward(&problem.base, &rec).unwrap();
    let data = add_noise(&clean, &noise(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    MisfitSetup { model, rec, data, problem, theta0: vec![-1970.0, 4.05, 1.1e14], steps: vec![2.0, 2e-3, 1e12] }
}

impl MisfitSetup {
    pub fn misfit(&self, th: &[f64]) -> f64 {
        let u = self.model.forward(&self.problem.full(th), &self.rec).unwrap();
        seisdesign::inference::misfit(&u, &self.data, &noise()).unwrap()
    }

    pub fn adjoint(&self, th: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let theta = self.problem.full(th);
        let u = self.model.forward(&theta, &self.rec).unwrap();
        let res = weighted_residual(&u, &self.data, &noise()).unwrap();
        self.model.adjoint_gradient_h2(&theta, &self.problem.active, &res).unwrap()
    }

    pub fn h1(&self, th: &[f64]) -> DMatrix<f64> {
        self.model.hessian_h1(&self.problem.full(th), &self.problem.active, &self.rec, &noise()).unwrap()
    }
}

/// Richardson-extrapolated central difference of a vector function along coordinate `i`.
pub fn central_diff<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], i: usize, step: f64) -> Vec<f64> {
    let d = |s: f64| {
        let (mut a, mut b) = (x.to_vec(), x.to_vec());
        a[i] += s;
        b[i] -= s;
        let (fa, fb) = (f(&a), f(&b));
        fa.iter().zip(&fb).map(|(p, q)| (p - q) / (2.0 * s)).collect::<Vec<f64>>()
    };
    let (coarse, fine) = (d(step), d(step / 2.0));
    fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect()
}

/// Largest componentwise relative error of the adjoint gradient against finite differences.
pub fn gradient_error(s: &MisfitSetup) -> f64 {
    let (g, _) = s.adjoint(&s.theta0);
    (0..g.len())
        .map(|i| {
            let fd = central_diff(|t| vec![s.misfit(t)], &s.theta0, i, s.steps[i])[0];
            (fd - g[i]).abs() / g[i].abs()
        })
        .fold(0.0, f64::max)
}

/// Largest entry of `|H_fd − (H_I + H_II)|ᵢⱼ / sqrt(Hᵢᵢ Hⱼⱼ)`, FD taken on the adjoint gradient.
pub fn hessian_error(s: &MisfitSetup) -> f64 {
    let (_, h2) = s.adjoint(&s.theta0);
    let h = s.h1(&s.theta0) + h2;
    let n = h.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        let col = central_diff(|t| s.adjoint(t).0, &s.theta0, j, s.steps[j]);
        for i in 0..n {
            let scale = (h[(i, i)] * h[(j, j)]).sqrt();
            worst = worst.max((col[i] - h[(i, j)]).abs() / scale);
        }
    }
    worst
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// `(moment linearity error, worst FD error of the x1s, x2s, ts, ω sensitivities)`, both relative.
pub fn sensitivity_errors() -> (f64, f64) {
    let model = small_model();
    let rec = model.receivers(&[-3000.0, 0.0, 1000.0, 3000.0]).unwrap();
    let theta = SourceParams::from_array([-900.0, -2100.0, 1.05, 3.9, 3e14, -2e14, 5e14]);
    let (u, sens) = model.forward_with_sensitivities(&theta, &[0, 1, 2, 3, 4, 5, 6], &rec).unwrap();
    let a = theta.to_array();
    let lin: Vec<f64> = (0..u.data.len())
        .map(|k| a[4] * sens[4].data[k] + a[5] * sens[5].data[k] + a[6] * sens[6].data[k])
        .collect();
    let diff: Vec<f64> = lin.iter().zip(&u.data).map(|(p, q)| p - q).collect();
    let linearity = max_abs(&diff) / max_abs(&u.data);
    let steps = [5.0, 5.0, 1e-3, 1e-3];
    let mut fd_err = 0.0f64;
    for i in 0..4 {
        let fd = central_diff(
            |x| model.forward(&SourceParams::from_array(x.try_into().unwrap()), &rec).unwrap().data,
            &a,
            i,
            steps[i],
        );
        let d: Vec<f64> = fd.iter().zip(&sens[i].data).map(|(p, q)| p - q).collect();
        fd_err = fd_err.max(max_abs(&d) / max_abs(&sens[i].data));
    }
    (linearity, fd_err)
}

/// Log-log slopes of `‖H_I‖` and of the mean scaled noise-gradient norm against the
/// number of duplicated receiver copies `K` (so `N ∝ K`), over `draws` noise draws.
pub fn scaling_slopes(draws: usize) -> (f64, f64) {
    let model = small_model();
    let problem = reduced_problem();
    let base = [-3000.0, 1000.0];
    let ks = [1usize, 2, 4, 8, 16, 32];
    let h_ref = model.hessian_h1(&problem.base, &problem.active, &model.receivers(&base).unwrap(), &noise()).unwrap();
    let scale: Vec<f64> = (0..3).map(|i| h_ref[(i, i)].sqrt()).collect();
    let (mut hn, mut gn) = (Vec::new(), Vec::new());
    for &k in &ks {
        let x: Vec<f64> = (0..k).flat_map(|_| base).collect();
        let rec = model.receivers(&x).unwrap();
        let (u, sens) = model.forward_with_sensitivities(&problem.base, &problem.active, &rec).unwrap();
        let h = seisdesign::hessian::misfit_hessian_h1(&sens, &noise()).unwrap();
        hn.push(h.norm());
        let mut total = 0.0;
        for d in 0..draws {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000 * k as u64 + d as u64);
            let data = add_noise(&u, &noise(), &mut rng);
            let res = weighted_residual(&u, &data, &noise()).unwrap();
            let (g, _) = model.adjoint_gradient_h2(&problem.base, &problem.active, &res).unwrap();
            total += g.iter().zip(&scale).map(|(v, s)| (v / s).powi(2)).sum::<f64>().sqrt();
        }
        gn.push(total / draws as f64);
    }
    let n: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let slope = |y: &[f64]| {
        let x: Vec<f64> = n.iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let (mx, my) = (x.iter().sum::<f64>() / x.len() as f64, y.iter().sum::<f64>() / y.len() as f64);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        sxy / sxx
    };
    (slope(&hn), slope(&gn))
}

/// Exact information gain of `ȳ = θ + N(0, s²)` with `θ ~ U(a, b)`:
/// `h(U(a, b) ⊛ N(0, s²)) − ½ log(2πe s²)`, entropy by composite Simpson.
pub fn uniform_gaussian_information(a: f64, b: f64, s: f64) -> f64 {
    let phi = |z: f64| 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    let p = |y: f64| (phi((y - a) / s) - phi((y - b) / s)) / (b - a);
    let (lo, hi) = (a - 12.0 * s, b + 12.0 * s);
    let n = 200_000;
    let dx = (hi - lo) / n as f64;
    let mut acc = 0.0;
    for k in 0..=n {
        let y = lo + k as f64 * dx;
        let v = p(y);
        let f = if v > 0.0 { -v * v.ln() } else { 0.0 };
        let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f;
    }
    acc * dx / 3.0 - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s * s).ln()
}

/// Scalar model observed `n_obs` times (as `n_obs / 2` two-component samples).
pub fn linear_gaussian_model(n_obs: usize) -> impl Fn(&[f64]) -> seisdesign::Result<Vec<f64>> + Sync {
    move |t: &[f64]| Ok(vec![t[0]; n_obs])
}

/// Reflected/incident kinetic-energy ratio of a normally incident P pulse at the `x1_max` edge.
///
/// The reflection is the difference between a run whose right edge sits at
/// `x1 = 200` and a run on a domain twice as wide.
pub fn absorbing_reflection_ratio() -> f64 {
    let (rho, cp, cs) = (1.0, 2.0, 1.0);
    let dt = 0.4;
    let t_e = 75.0;
    let nt = (t_e / dt) as usize + 1;
    let run = |x1_max: f64| {
        let grid = build_grid(0.0, x1_max, -100.0, 0.0, 1.0).unwrap();
        let mat = layered_material(&LayerSpec::homogeneous(0.0, -100.0, rho, cp, cs), &grid).unwrap();
        let ops = assemble_operators(&grid, &mat);
        let (x0, w, t0, tau) = (150.0, 3.0, 12.0, 3.0);
        let nodes: Vec<usize> = (0..grid.len()).filter(|&k| (grid.coords(k).0 - x0).abs() <= 4.0 * w).collect();
        let rows: Vec<usize> = nodes.iter().map(|&k| 2 * k).collect();
        let mut values = Vec::with_capacity(rows.len() * nt);
        for m in 0..nt {
            let g = (-((m as f64 * dt - t0) / tau).powi(2)).exp();
            for &k in &nodes {
                values.push(g * (-((grid.coords(k).0 - x0) / w).powi(2)).exp());
            }
        }
        let forcing = SparseForcing { rows, cols: 1, values };
        let stepper = Stepper::new(&ops, dt, nt).unwrap();
        let (mut prev, mut last) = (Vec::new(), Vec::new());
        let mut keep = |m: usize, s: &[f64]| {
            if m + 2 == nt {
                prev = s.to_vec();
            } else if m + 1 == nt {
                last = s.to_vec();
            }
        };
        stepper.forward(&forcing, &[], &[], Some(&mut keep)).unwrap();
        let v: Vec<f64> = last.iter().zip(&prev).map(|(a, b)| (a - b) / dt).collect();
        (grid, v)
    };
    let (small, v_small) = run(200.0);
    let (big, v_big) = run(400.0);
    let (mut reflected, mut incident) = (0.0, 0.0);
    for k in 0..big.len() {
        let (x1, x2) = big.coords(k);
        let e = v_big[2 * k].powi(2) + v_big[2 * k + 1].powi(2);
        if x1 > 200.0 {
            incident += e;
        } else {
            let ks = small.index((x1 as usize).min(small.n1 - 1), small.n2 - 1 - (-x2) as usize);
            reflected += (v_small[2 * ks] - v_big[2 * k]).powi(2) + (v_small[2 * ks + 1] - v_big[2 * k + 1]).powi(2);
        }
    }
    reflected / incident
}

/// Fastest P travel time from `(0, z_s)` to `(x_r, 0)` through a layer of thickness `d` (speed `c1`)
/// over a half space (speed `c2`), by golden-section search over the interface crossing point.
pub fn layered_travel_time(z_s: f64, x_r: f64, d: f64, c1: f64, c2: f64) -> f64 {
    let t = |x: f64| ((x * x + (z_s.abs() - d).powi(2)).sqrt()) / c2 + ((x_r - x).powi(2) + d * d).sqrt() / c1;
    let (mut a, mut b) = (0.0, x_r);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let (c, e) = (b - g * (b - a), a + g * (b - a));
        if t(c) < t(e) {
            b = e;
        } else {
            a = c;
        }
    }
    t(0.5 * (a + b))
}
