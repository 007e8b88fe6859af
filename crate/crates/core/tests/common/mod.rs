//! Independent reference implementations shared by the integration tests
//! and the acceptance run. Nothing here calls into the crate's forward
//! passes: networks, the encoder stem, the integrator and both losses are
//! re-derived with plain loops over the stored weights.
#![allow(dead_code)]

use idbf::dataset::{Dataset, WindowBatch};
use idbf::diffnet::{Activation, Dense, MlpParams, Module, Tensor};
use idbf::filter::QpProblem;
use idbf::idbf::{BarrierNet, IdbfHyper};
use idbf::latentdyn::{DynModel, DynTrainConfig, Encoder, LatentModels};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// finite differences

pub struct FdReport {
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates skipped because a relu kink lies inside the stencil.
    pub kinks: usize,
}

impl FdReport {
    pub fn merge(&mut self, other: FdReport) {
        self.max_rel = self.max_rel.max(other.max_rel);
        self.checked += other.checked;
        self.kinks += other.kinks;
    }

    pub fn empty() -> Self {
        FdReport {
            max_rel: 0.0,
            checked: 0,
            kinks: 0,
        }
    }
}

pub const FD_STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;
/// Relative tolerance the checks are held to.
pub const FD_TOL: f64 = 1e-4;

/// Compares the analytic gradient `value_grad(model).1` with central
/// differences of `value_grad(model).0` at `coords` random parameter
/// coordinates. Gradients are expected in `Module::tensors` order.
pub fn fd_check<M: Module + Clone>(
    model: &M,
    coords: usize,
    rng: &mut impl Rng,
    value_grad: impl Fn(&M) -> (f64, Vec<Tensor>),
) -> FdReport {
    let (f0, grads) = value_grad(model);
    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    assert_eq!(grads.len(), sizes.len(), "one gradient per tensor");
    let total: usize = sizes.iter().sum();
    let mut report = FdReport::empty();
    for _ in 0..coords {
        let mut flat = rng.random_range(0..total);
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        let at = |delta: f64| {
            let mut m = model.clone();
            m.tensors_mut()[ti].data_mut()[flat] += delta;
            value_grad(&m).0
        };
        let (fp, fm) = (at(FD_STEP), at(-FD_STEP));
        let fwd = (fp - f0) / FD_STEP;
        let bwd = (f0 - fm) / FD_STEP;
        if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()).max(1e-2) {
            report.kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let analytic = grads[ti].data()[flat];
        // One ulp of the loss moves the central difference by about
        // eps |f| / h, so smaller gradients cannot be resolved to FD_TOL.
        let resolution = f64::EPSILON * f0.abs().max(fp.abs()).max(fm.abs()) / FD_STEP;
        let floor = FD_FLOOR.max(resolution / FD_TOL);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        report.max_rel = report.max_rel.max(rel);
        report.checked += 1;
    }
    report
}

pub fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

// ---------------------------------------------------------------------------
// plain networks

pub fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Linear => z,
        Activation::Tanh => z.tanh(),
        Activation::Relu => z.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
    }
}

fn act_deriv(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Linear => 1.0,
        Activation::Tanh => 1.0 - z.tanh().powi(2),
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Sigmoid => {
            let s = act(Activation::Sigmoid, z);
            s * (1.0 - s)
        }
    }
}

/// `y = act(x W + b)` with `W` stored `[fan_in, fan_out]` row-major.
fn dense_pre(l: &Dense, x: &[f64]) -> Vec<f64> {
    let (fi, fo) = (l.weight.shape()[0], l.weight.shape()[1]);
    assert_eq!(x.len(), fi);
    let w = l.weight.data();
    (0..fo)
        .map(|j| l.bias.data()[j] + (0..fi).map(|i| x[i] * w[i * fo + j]).sum::<f64>())
        .collect()
}

pub fn plain_mlp(p: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in &p.layers {
        h = dense_pre(l, &h).into_iter().map(|z| act(l.activation, z)).collect();
    }
    h
}

/// Output and Jacobian-vector product `J(x) v`, forward mode.
pub fn plain_mlp_jvp(p: &MlpParams, x: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut h = x.to_vec();
    let mut t = v.to_vec();
    for l in &p.layers {
        let z = dense_pre(l, &h);
        let fo = z.len();
        let fi = t.len();
        let w = l.weight.data();
        let tz: Vec<f64> = (0..fo).map(|j| (0..fi).map(|i| t[i] * w[i * fo + j]).sum()).collect();
        t = (0..fo).map(|j| tz[j] * act_deriv(l.activation, z[j])).collect();
        h = z.into_iter().map(|z| act(l.activation, z)).collect();
    }
    (h, t)
}

/// `f(x) + g(x) u` with `g` read row-major `[n, m]`.
pub fn plain_xdot(d: &DynModel, x: &[f64], u: &[f64]) -> Vec<f64> {
    let f = plain_mlp(&d.f, x);
    let g = plain_mlp(&d.g, x);
    let m = u.len();
    (0..f.len())
        .map(|i| f[i] + (0..m).map(|j| g[i * m + j] * u[j]).sum::<f64>())
        .collect()
}

/// Classic RK4 with zero-order hold, written out independently.
pub fn plain_rollout(d: &DynModel, x0: &[f64], actions: &[Vec<f64>], dt: f64, substeps: usize) -> Vec<Vec<f64>> {
    let h = dt / substeps as f64;
    let mut out = vec![x0.to_vec()];
    let mut x = x0.to_vec();
    let add = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + s * b).collect() };
    for u in actions {
        for _ in 0..substeps {
            let k1 = plain_xdot(d, &x, u);
            let k2 = plain_xdot(d, &add(&x, h / 2.0, &k1), u);
            let k3 = plain_xdot(d, &add(&x, h / 2.0, &k2), u);
            let k4 = plain_xdot(d, &add(&x, h, &k3), u);
            x = (0..x.len())
                .map(|i| x[i] + h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0)
                .collect();
        }
        out.push(x.clone());
    }
    out
}

/// 2x2 stride-2 relu convolution of an `[h, w, c]` image; the weight row
/// of tap `(dy, dx, ch)` is `(dy * 2 + dx) * c + ch`.
fn plain_conv(l: &Dense, img: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let co = l.bias.len();
    let wt = l.weight.data();
    let mut out = Vec::with_capacity((h / 2) * (w / 2) * co);
    for py in 0..h / 2 {
        for px in 0..w / 2 {
            for o in 0..co {
                let mut z = l.bias.data()[o];
                for dy in 0..2 {
                    for dx in 0..2 {
                        for ch in 0..c {
                            let v = img[((2 * py + dy) * w + 2 * px + dx) * c + ch];
                            z += v * wt[((dy * 2 + dx) * c + ch) * co + o];
                        }
                    }
                }
                out.push(z.max(0.0));
            }
        }
    }
    out
}

pub fn plain_encode_sequence(e: &Encoder, frames: &[Vec<f64>], actions: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let s = e.image_size;
    let c1 = e.conv1.bias.len();
    let mut x = vec![0.0; e.latent_dim];
    let mut u = vec![0.0; e.action_dim];
    let mut out = Vec::new();
    for (k, f) in frames.iter().enumerate() {
        let h1 = plain_conv(&e.conv1, f, s, s, 3);
        let mut input = plain_conv(&e.conv2, &h1, s / 2, s / 2, c1);
        input.extend_from_slice(&x);
        input.extend_from_slice(&u);
        x = plain_mlp(&e.mlp, &input);
        out.push(x.clone());
        if k < actions.len() {
            u = actions[k].clone();
        }
    }
    out
}

/// Full-resolution reconstruction by nearest-neighbour upsampling.
pub fn plain_decode(models: &LatentModels, x: &[f64]) -> Vec<f64> {
    let s = models.decoder.image_size;
    let half = plain_mlp(&models.decoder.mlp, x);
    let mut out = vec![0.0; s * s * 3];
    for y in 0..s {
        for xx in 0..s {
            for c in 0..3 {
                out[(y * s + xx) * 3 + c] = half[((y / 2) * (s / 2) + xx / 2) * 3 + c];
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// loss oracles

/// `(total, state, rec1, rec2)` of the multiple-shooting loss.
pub fn dyn_loss_oracle(models: &LatentModels, ds: &Dataset, batch: &WindowBatch, cfg: &DynTrainConfig) -> [f64; 4] {
    let dt = ds.config.dt;
    let (mut state, mut rec1, mut rec2) = (0.0, 0.0, 0.0);
    let mut pixels = 0usize;
    let t_len = batch.windows[0].len;
    for w in &batch.windows {
        let tr = &ds.trajectories[w.traj];
        let frames: Vec<Vec<f64>> = tr.observations.iter().map(|o| o.to_unit()).collect();
        let lat = plain_encode_sequence(&models.encoder, &frames, &tr.actions);
        let pred = plain_rollout(&models.dynamics, &lat[w.start], &tr.actions[w.start..w.start + w.len], dt, cfg.substeps);
        for k in 0..=w.len {
            let z = &lat[w.start + k];
            state += pred[k].iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let truth = &frames[w.start + k];
            let r1 = plain_decode(models, &pred[k]);
            let r2 = plain_decode(models, z);
            rec1 += r1.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            rec2 += r2.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            pixels += truth.len();
        }
    }
    let count = (batch.windows.len() * (t_len + 1)) as f64;
    let state = state / count;
    let rec1 = rec1 / pixels as f64;
    let rec2 = rec2 / pixels as f64;
    [cfg.w_state * state + cfg.w_rec1 * rec1 + cfg.w_rec2 * rec2, state, rec1, rec2]
}

/// `(total, safe, unsafe, ascent)` of the barrier loss.
pub fn idbf_loss_oracle(
    barrier: &BarrierNet,
    dynamics: &DynModel,
    safe: &[Vec<f64>],
    unsafe_states: &[Vec<f64>],
    pairs: &[(Vec<f64>, Vec<f64>)],
    h: &IdbfHyper,
) -> [f64; 4] {
    let b = |x: &[f64]| plain_mlp(&barrier.mlp, x)[0];
    let mean = |v: Vec<f64>| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let s = h.w_safe * mean(safe.iter().map(|x| (h.eps_safe - b(x)).max(0.0)).collect());
    let u = h.w_unsafe * mean(unsafe_states.iter().map(|x| (b(x) + h.eps_unsafe).max(0.0)).collect());
    let a = h.w_ascent
        * mean(
            pairs
                .iter()
                .map(|(x, u)| {
                    let xdot = plain_xdot(dynamics, x, u);
                    let (bx, db) = plain_mlp_jvp(&barrier.mlp, x, &xdot);
                    (h.eps_ascent - (db[0] + h.alpha * bx[0])).max(0.0)
                })
                .collect(),
        );
    [s + u + a, s, u, a]
}

// ---------------------------------------------------------------------------
// QP grid oracle

pub fn random_qp(rng: &mut impl Rng) -> QpProblem {
    let mut c = || -> f64 { rng.random_range(-2.0..=2.0) };
    let u_ref = vec![c(), c()];
    let a = vec![c(), c()];
    let b = c();
    let lo = vec![-c().abs().max(0.1), -c().abs().max(0.1)];
    let hi = vec![c().abs().max(0.1), c().abs().max(0.1)];
    QpProblem { u_ref, a, b, lo, hi }
}

pub struct GridOptimum {
    pub u: Vec<f64>,
    pub objective: f64,
    /// Diagonal of one grid cell.
    pub cell_diameter: f64,
}

/// Best feasible point of an `n x n` grid over the box, if any.
pub fn grid_qp(p: &QpProblem, n: usize) -> (Option<GridOptimum>, f64) {
    let step = [
        (p.hi[0] - p.lo[0]) / (n - 1) as f64,
        (p.hi[1] - p.lo[1]) / (n - 1) as f64,
    ];
    let diameter = step[0].hypot(step[1]);
    let mut best: Option<GridOptimum> = None;
    for i in 0..n {
        for j in 0..n {
            let u = [p.lo[0] + i as f64 * step[0], p.lo[1] + j as f64 * step[1]];
            if p.a[0] * u[0] + p.a[1] * u[1] + p.b < 0.0 {
                continue;
            }
            let obj = (u[0] - p.u_ref[0]).powi(2) + (u[1] - p.u_ref[1]).powi(2);
            if best.as_ref().is_none_or(|g| obj < g.objective) {
                best = Some(GridOptimum {
                    u: u.to_vec(),
                    objective: obj,
                    cell_diameter: diameter,
                });
            }
        }
    }
    (best, diameter)
}

/// Checks one solver result against the grid. `Err` carries a description.
pub fn qp_agrees_with_grid(p: &QpProblem, u: &[f64], feasible: bool, n: usize) -> Result<(), String> {
    let (grid, d) = grid_qp(p, n);
    let tol = 1e-9;
    let in_box = (0..2).all(|i| u[i] >= p.lo[i] - tol && u[i] <= p.hi[i] + tol);
    if !in_box {
        return Err(format!("solution {u:?} leaves the box"));
    }
    if feasible && p.constraint(u) < -tol {
        return Err(format!("reported feasible but constraint = {}", p.constraint(u)));
    }
    let Some(g) = grid else { return Ok(()) };
    if !feasible {
        return Err(format!("grid point {:?} is feasible but the solver reports infeasible", g.u));
    }
    let obj = p.objective(u);
    // The objective changes by at most this much when the point moves by one
    // cell diameter, which bounds how far the grid can be from the optimum.
    let slack = 2.0 * d * obj.sqrt() + d * d;
    if obj > g.objective + tol {
        return Err(format!("objective {obj} worse than grid optimum {}", g.objective));
    }
    if g.objective - obj > slack {
        return Err(format!("grid optimum {} more than one cell from {obj}", g.objective));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fixtures

pub fn linear_dyn(a: &[[f64; 3]; 3], b: &[[f64; 2]; 3]) -> DynModel {
    // f(x) = A x: one linear layer with weight A^T.
    let mut w = vec![0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            w[j * 3 + i] = a[i][j];
        }
    }
    let f = MlpParams {
        layers: vec![Dense {
            weight: Tensor::matrix(3, 3, w),
            bias: Tensor::row(&[0.0; 3]),
            activation: Activation::Linear,
        }],
    };
    // g(x) = B: zero weight, bias holds B row-major.
    let flat: Vec<f64> = b.iter().flatten().copied().collect();
    let g = MlpParams {
        layers: vec![Dense {
            weight: Tensor::zeros(&[3, 6]),
            bias: Tensor::row(&flat),
            activation: Activation::Linear,
        }],
    };
    DynModel {
        f,
        g,
        latent_dim: 3,
        action_dim: 2,
    }
}

pub mod grad;

/// RK4 endpoint errors `(coarse, fine)` on `xdot = A x + B u` for a random
/// stable `A`, integrating to `t_end` with `steps` and `2 * steps` steps
/// against the matrix-exponential solution.
pub fn rk4_linear_errors(seed: u64, t_end: f64, steps: usize) -> (f64, f64) {
    use nalgebra::{Matrix3, Vector2, Vector3};
    let mut r = rng(seed);
    // Stable by construction: -(M M^T + 0.5 I) plus a skew part.
    let m = Matrix3::from_fn(|_, _| r.random_range(-1.0..1.0));
    let s = Matrix3::from_fn(|_, _| r.random_range(-1.0..1.0));
    let a = -(m * m.transpose() + Matrix3::identity() * 0.5) + (s - s.transpose());
    let b = nalgebra::Matrix3x2::from_fn(|_, _| r.random_range(-1.0..1.0));
    let u = Vector2::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
    let x0 = Vector3::from_fn(|_, _| r.random_range(-1.0..1.0));

    let e = (a * t_end).exp();
    let exact = e * x0 + a.try_inverse().unwrap() * (e - Matrix3::identity()) * b * u;

    let mut aa = [[0.0; 3]; 3];
    let mut bb = [[0.0; 2]; 3];
    for i in 0..3 {
        for j in 0..3 {
            aa[i][j] = a[(i, j)];
        }
        for j in 0..2 {
            bb[i][j] = b[(i, j)];
        }
    }
    let model = linear_dyn(&aa, &bb);
    let err = |n: usize| {
        let acts = vec![vec![u[0], u[1]]; n];
        let xs = idbf::latentdyn::integrate(&model, x0.as_slice(), &acts, t_end / n as f64, n, 1).unwrap();
        let end = xs.last().unwrap();
        (0..3).map(|i| (end[i] - exact[i]).powi(2)).sum::<f64>().sqrt()
    };
    (err(steps), err(2 * steps))
}
pub mod losses;
