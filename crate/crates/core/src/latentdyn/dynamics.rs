use rand::Rng;

use super::LatentArch;
use crate::diffnet::{Activation, BoundMlp, MlpParams, Module, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Control-affine latent dynamics `xdot = f(x) + g(x) u`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynModel {
    pub f: MlpParams,
    /// Output is `g(x)` flattened row-major as `n_z x m`.
    pub g: MlpParams,
    pub latent_dim: usize,
    pub action_dim: usize,
}

impl DynModel {
    pub fn new(arch: &LatentArch, rng: &mut impl Rng) -> Self {
        let n = arch.latent_dim;
        let m = arch.action_dim;
        let mut fw = vec![n];
        fw.extend(&arch.dynamics_hidden);
        let mut gw = fw.clone();
        fw.push(n);
        gw.push(n * m);
        Self {
            f: MlpParams::new(&fw, Activation::Tanh, Activation::Linear, rng),
            g: MlpParams::new(&gw, Activation::Tanh, Activation::Linear, rng),
            latent_dim: n,
            action_dim: m,
        }
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        self.f.forward_vec(x).expect("drift input width")
    }

    /// `g(x)` as a row-major `n_z x m` matrix.
    pub fn input_matrix(&self, x: &[f64]) -> Vec<f64> {
        self.g.forward_vec(x).expect("input-matrix width")
    }

    pub fn dynamics(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let f = self.drift(x);
        let g = self.input_matrix(x);
        affine(&f, &g, u)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundDyn {
        BoundDyn {
            f: self.f.bind(tape),
            g: self.g.bind(tape),
        }
    }
}

pub(crate) fn affine(f: &[f64], g: &[f64], u: &[f64]) -> Vec<f64> {
    let m = u.len();
    f.iter()
        .enumerate()
        .map(|(i, fi)| fi + (0..m).map(|j| g[i * m + j] * u[j]).sum::<f64>())
        .collect()
}

impl Module for DynModel {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.f.tensors();
        v.extend(self.g.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.f.tensors_mut();
        v.extend(self.g.tensors_mut());
        v
    }
}

/// Anything that can evaluate batched latent dynamics on a tape.
pub trait LatentFlow {
    /// `x` is `[r, n_z]`, `u` is `[r, m]`; returns `[r, n_z]`.
    fn xdot(&self, tape: &mut Tape, x: Var, u: Var) -> Var;
}

pub struct BoundDyn {
    pub f: BoundMlp,
    pub g: BoundMlp,
}

impl BoundDyn {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.f.vars();
        v.extend(self.g.vars());
        v
    }
}

impl LatentFlow for BoundDyn {
    fn xdot(&self, tape: &mut Tape, x: Var, u: Var) -> Var {
        let f = self.f.forward(tape, x);
        let g = self.g.forward(tape, x);
        let gu = tape.row_matvec(g, u);
        tape.add(f, gu)
    }
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

/// Classic RK4 step of length `h` with the action held constant.
pub fn rk4_step(rhs: &impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let k1 = rhs(x);
    let k2 = rhs(&axpy(x, 0.5 * h, &k1));
    let k3 = rhs(&axpy(x, 0.5 * h, &k2));
    let k4 = rhs(&axpy(x, h, &k3));
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Zero-order-hold rollout of `steps` control intervals of length `dt`,
/// each split into `substeps` RK4 steps. Returns `steps + 1` states
/// starting with `x0`.
pub fn integrate(
    model: &DynModel,
    x0: &[f64],
    actions: &[Vec<f64>],
    dt: f64,
    steps: usize,
    substeps: usize,
) -> Result<Vec<Vec<f64>>> {
    if steps > actions.len() {
        return Err(Error::Config(format!(
            "{steps} integration steps but only {} actions",
            actions.len()
        )));
    }
    let h = dt / substeps.max(1) as f64;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.to_vec());
    let mut x = x0.to_vec();
    for (k, u) in actions.iter().take(steps).enumerate() {
        let rhs = |x: &[f64]| model.dynamics(x, u);
        for _ in 0..substeps.max(1) {
            x = rk4_step(&rhs, &x, h);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationNonFinite(k));
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Batched, differentiable version of [`integrate`]: `x0` is `[r, n_z]`
/// and `actions[k]` is `[r, m]`. Returns `actions.len() + 1` nodes.
pub fn integrate_tape(
    tape: &mut Tape,
    flow: &impl LatentFlow,
    x0: Var,
    actions: &[Var],
    dt: f64,
    substeps: usize,
) -> Vec<Var> {
    let n_sub = substeps.max(1);
    let h = dt / n_sub as f64;
    let mut out = Vec::with_capacity(actions.len() + 1);
    out.push(x0);
    let mut x = x0;
    for &u in actions {
        for _ in 0..n_sub {
            x = rk4_step_tape(tape, flow, x, u, h);
        }
        out.push(x);
    }
    out
}

fn rk4_step_tape(tape: &mut Tape, flow: &impl LatentFlow, x: Var, u: Var, h: f64) -> Var {
    let k1 = flow.xdot(tape, x, u);
    let s = tape.scale(k1, 0.5 * h);
    let x2 = tape.add(x, s);
    let k2 = flow.xdot(tape, x2, u);
    let s = tape.scale(k2, 0.5 * h);
    let x3 = tape.add(x, s);
    let k3 = flow.xdot(tape, x3, u);
    let s = tape.scale(k3, h);
    let x4 = tape.add(x, s);
    let k4 = flow.xdot(tape, x4, u);
    let a = tape.add(k2, k3);
    let a = tape.scale(a, 2.0);
    let b = tape.add(k1, k4);
    let sum = tape.add(a, b);
    let incr = tape.scale(sum, h / 6.0);
    tape.add(x, incr)
}

/// Mean over latent dimensions of the population variance of the ensemble's
/// predicted `xdot` at `(x, u)`.
pub fn ensemble_variance(x: &[f64], u: &[f64], members: &[DynModel]) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::EnsembleTooSmall(members.len()));
    }
    let preds: Vec<Vec<f64>> = members.iter().map(|m| m.dynamics(x, u)).collect();
    Ok(prediction_variance(&preds))
}

pub(crate) fn prediction_variance(preds: &[Vec<f64>]) -> f64 {
    let mcount = preds.len() as f64;
    let n = preds[0].len();
    let mut total = 0.0;
    for d in 0..n {
        let mean = preds.iter().map(|p| p[d]).sum::<f64>() / mcount;
        total += preds.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / mcount;
    }
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> DynModel {
        DynModel::new(&LatentArch::default(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn zero_action_gives_drift() {
        let m = model(1);
        let x = [0.3, -0.1, 0.8];
        assert_eq!(m.dynamics(&x, &[0.0, 0.0]), m.drift(&x));
    }

    #[test]
    fn superposition_in_u() {
        let m = model(2);
        let x = [0.1, 0.2, -0.4];
        let (u1, u2) = ([0.7, -1.2], [-0.3, 1.9]);
        let base = m.dynamics(&x, &[0.0, 0.0]);
        let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
        let lhs: Vec<f64> = m.dynamics(&x, &sum).iter().zip(&base).map(|(a, b)| a - b).collect();
        let d1 = m.dynamics(&x, &u1);
        let d2 = m.dynamics(&x, &u2);
        let rhs: Vec<f64> = (0..3).map(|i| (d1[i] - base[i]) + (d2[i] - base[i])).collect();
        assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn unit_action_extracts_input_column() {
        let m = model(3);
        let x = [0.5, 0.5, -0.5];
        let g = m.input_matrix(&x);
        let base = m.dynamics(&x, &[0.0, 0.0]);
        for j in 0..2 {
            let mut e = [0.0, 0.0];
            e[j] = 1.0;
            let d = m.dynamics(&x, &e);
            let col: Vec<f64> = (0..3).map(|i| g[i * 2 + j]).collect();
            let diff: Vec<f64> = d.iter().zip(&base).map(|(a, b)| a - b).collect();
            assert!(close(&diff, &col, 1e-12));
        }
    }

    #[test]
    fn zero_dynamics_hold_state() {
        let mut m = model(4);
        for t in m.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let x0 = [1.0, -2.0, 0.5];
        let traj = integrate(&m, &x0, &vec![vec![1.0, 1.0]; 5], 0.02, 5, 1).unwrap();
        assert!(traj.iter().all(|x| x == &x0));
        assert_eq!(integrate(&m, &x0, &[], 0.02, 0, 1).unwrap(), vec![x0.to_vec()]);
    }

    #[test]
    fn too_many_steps_is_rejected() {
        assert!(integrate(&model(5), &[0.0; 3], &[vec![0.0; 2]], 0.02, 2, 1).is_err());
    }

    #[test]
    fn non_finite_state_names_step() {
        let mut m = model(6);
        m.f.layers.last_mut().unwrap().bias.data_mut()[0] = f64::INFINITY;
        let err = integrate(&m, &[0.0; 3], &vec![vec![0.0; 2]; 3], 0.02, 3, 1).unwrap_err();
        assert!(matches!(err, Error::IntegrationNonFinite(0)));
    }

    #[test]
    fn tape_rollout_matches_plain() {
        let m = model(7);
        let x0 = [0.2, -0.3, 0.1];
        let acts = vec![vec![1.0, -0.5], vec![0.0, 2.0], vec![-1.5, 0.3]];
        let plain = integrate(&m, &x0, &acts, 0.05, 3, 2).unwrap();
        let mut tape = Tape::new();
        let bd = m.bind(&mut tape);
        let xv = tape.input(Tensor::row(&x0));
        let av: Vec<Var> = acts.iter().map(|a| tape.input(Tensor::row(a))).collect();
        let xs = integrate_tape(&mut tape, &bd, xv, &av, 0.05, 2);
        for (v, want) in xs.iter().zip(&plain) {
            assert!(close(tape.value(*v).data(), want, 1e-13));
        }
    }

    #[test]
    fn ensemble_variance_examples() {
        let a = model(8);
        assert_eq!(ensemble_variance(&[0.1; 3], &[0.2; 2], &[a.clone(), a.clone()]).unwrap(), 0.0);
        assert!(matches!(
            ensemble_variance(&[0.0; 3], &[0.0; 2], &[a]),
            Err(Error::EnsembleTooSmall(1))
        ));
        let c = 0.7;
        let preds = vec![vec![c; 3], vec![-c; 3]];
        assert!((prediction_variance(&preds) - c * c).abs() < 1e-15);
    }
}
