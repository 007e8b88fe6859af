//! Safety filters wrapping a reference controller: the barrier QP filter
//! and the two sampling baselines (BC density and ensemble variance).

mod log;
mod qp;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::bcpolicy::MixtureHead;
use crate::bundle::ModelBundle;
use crate::envnav::{ActionBox, Observation};
use crate::error::{Error, Result};
use crate::idbf::BarrierNet;
use crate::latentdyn::{affine, prediction_variance, DynModel, Encoder};

pub use log::{read_log_csv, write_log_csv, StepRecord, LOG_HEADER};
pub use qp::{solve_qp, QpProblem, QpSolution, MAX_QP_DIM};

pub const DEFAULT_SAMPLES: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct FilterDecision {
    pub action: Vec<f64>,
    pub intervened: bool,
    /// Left-hand side of the filter's acceptance test at `action`
    /// (`>= 0` means satisfied).
    pub constraint_value: f64,
    pub feasible: bool,
    /// Barrier value at the current latent state, if the filter has one.
    pub barrier: Option<f64>,
}

impl FilterDecision {
    pub fn passthrough(u_ref: &[f64]) -> Self {
        Self {
            action: u_ref.to_vec(),
            intervened: false,
            constraint_value: f64::NAN,
            feasible: true,
            barrier: None,
        }
    }
}

/// Which filter to run, as written on the command line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterKind {
    None,
    Idbf,
    Bc(f64),
    Ensemble(f64),
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterKind::None => write!(f, "none"),
            FilterKind::Idbf => write!(f, "idbf"),
            FilterKind::Bc(p) => write!(f, "bc:{p}"),
            FilterKind::Ensemble(d) => write!(f, "ensemble:{d}"),
        }
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown filter '{s}' (none, idbf, bc:<p>, ensemble:<delta>)"));
        let num = |v: &str| v.parse::<f64>().ok().filter(|x| !x.is_nan()).ok_or_else(bad);
        match s.split_once(':') {
            None if s == "none" => Ok(FilterKind::None),
            None if s == "idbf" => Ok(FilterKind::Idbf),
            Some(("bc", v)) => Ok(FilterKind::Bc(num(v)?)),
            Some(("ensemble", v)) => Ok(FilterKind::Ensemble(num(v)?)),
            _ => Err(bad()),
        }
    }
}

/// Recursive encoder state `(x_{k-1}, u_{k-1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct Carry {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl Carry {
    pub fn zero(latent_dim: usize, action_dim: usize) -> Self {
        Self {
            x: vec![0.0; latent_dim],
            u: vec![0.0; action_dim],
        }
    }

    /// Encodes the new frame and returns the current latent state. The
    /// carry keeps the new state; [`Carry::executed`] must be called with the
    /// action that is finally applied.
    pub fn encode(&mut self, encoder: &Encoder, image: &Observation) -> Vec<f64> {
        self.x = encoder.encode_step(&image.to_unit(), &self.x, &self.u);
        self.x.clone()
    }

    pub fn executed(&mut self, u: &[f64]) {
        self.u = u.to_vec();
    }
}

/// QP coefficients of the barrier condition at latent state `x`:
/// `a = grad B^T g(x)`, `b = grad B^T f(x) + alpha B(x)`. Returns
/// `(a, b, B(x))`.
pub fn barrier_constraint(barrier: &BarrierNet, dynamics: &DynModel, alpha: f64, x: &[f64]) -> (Vec<f64>, f64, f64) {
    let (bv, grad) = barrier.barrier_and_grad(x);
    let f = dynamics.drift(x);
    let g = dynamics.input_matrix(x);
    let m = dynamics.action_dim;
    let a = (0..m).map(|j| (0..grad.len()).map(|i| grad[i] * g[i * m + j]).sum()).collect();
    let b = grad.iter().zip(&f).map(|(d, fi)| d * fi).sum::<f64>() + alpha * bv;
    (a, b, bv)
}

/// The barrier QP filter with its encoder carry.
pub struct IdbfFilter<'a> {
    pub bundle: &'a ModelBundle,
    barrier: &'a BarrierNet,
    action_box: ActionBox,
    pub carry: Carry,
}

impl<'a> IdbfFilter<'a> {
    pub fn new(bundle: &'a ModelBundle) -> Result<Self> {
        let a = &bundle.latent.arch;
        Ok(Self {
            barrier: bundle.require_barrier()?,
            action_box: bundle.env.action_box(),
            carry: Carry::zero(a.latent_dim, a.action_dim),
            bundle,
        })
    }

    pub fn reset(&mut self) {
        let a = &self.bundle.latent.arch;
        self.carry = Carry::zero(a.latent_dim, a.action_dim);
    }

    /// Encodes `image`, solves the QP around `u_ref` and feeds the filtered
    /// action back into the carry.
    pub fn step(&mut self, image: &Observation, u_ref: &[f64]) -> Result<FilterDecision> {
        let x = self.carry.encode(&self.bundle.latent.encoder, image);
        let (a, b, bv) = barrier_constraint(self.barrier, &self.bundle.latent.dynamics, self.bundle.alpha, &x);
        let problem = QpProblem {
            u_ref: u_ref.to_vec(),
            a,
            b,
            lo: self.action_box.lo.clone(),
            hi: self.action_box.hi.clone(),
        };
        let sol = solve_qp(&problem)?;
        self.carry.executed(&sol.u);
        Ok(FilterDecision {
            intervened: sol.u != u_ref,
            constraint_value: problem.constraint(&sol.u),
            feasible: sol.feasible,
            barrier: Some(bv),
            action: sol.u,
        })
    }
}

fn nearest_qualifying(
    u_ref: &[f64],
    action_box: &ActionBox,
    n_samples: usize,
    rng: &mut impl Rng,
    score: impl Fn(&[f64]) -> f64,
) -> FilterDecision {
    let mut candidates = Vec::with_capacity(n_samples + 1);
    candidates.push(u_ref.to_vec());
    for _ in 0..n_samples {
        candidates.push(action_box.sample(rng));
    }
    let nr = action_box.normalize(u_ref);
    let mut best: Option<(f64, usize, f64)> = None;
    for (i, u) in candidates.iter().enumerate() {
        let s = score(u);
        if s >= 0.0 {
            let d: f64 = action_box.normalize(u).iter().zip(&nr).map(|(a, b)| (a - b).powi(2)).sum();
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, i, s));
            }
        }
    }
    match best {
        Some((_, i, s)) => FilterDecision {
            intervened: i != 0 && candidates[i] != u_ref,
            action: candidates.swap_remove(i),
            constraint_value: s,
            feasible: true,
            barrier: None,
        },
        None => FilterDecision {
            action: u_ref.to_vec(),
            intervened: false,
            constraint_value: score(u_ref),
            feasible: false,
            barrier: None,
        },
    }
}

/// Closest action to `u_ref` among `u_ref` and `n_samples` uniform box
/// samples whose privileged-state BC density is at least `p`; `u_ref`
/// unchanged when none qualifies. `constraint_value` is density minus `p`.
pub fn bc_filter(
    bc: &MixtureHead,
    state: &[f64],
    u_ref: &[f64],
    p: f64,
    action_box: &ActionBox,
    n_samples: usize,
    rng: &mut impl Rng,
) -> FilterDecision {
    let mix = bc.mixture(state);
    nearest_qualifying(u_ref, action_box, n_samples, rng, |u| mix.density(&action_box.normalize(u)) - p)
}

/// Same rule as [`bc_filter`] with the test `ensemble_variance(x, u) <= delta`;
/// `constraint_value` is `delta` minus the variance.
pub fn ensemble_filter(
    members: &[DynModel],
    x: &[f64],
    u_ref: &[f64],
    delta: f64,
    action_box: &ActionBox,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<FilterDecision> {
    if members.len() < 2 {
        return Err(Error::EnsembleTooSmall(members.len()));
    }
    let parts: Vec<(Vec<f64>, Vec<f64>)> = members.iter().map(|m| (m.drift(x), m.input_matrix(x))).collect();
    Ok(nearest_qualifying(u_ref, action_box, n_samples, rng, |u| {
        let preds: Vec<Vec<f64>> = parts.iter().map(|(f, g)| affine(f, g, u)).collect();
        delta - prediction_variance(&preds)
    }))
}
