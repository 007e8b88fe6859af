//! The in-distribution barrier function: network, contrastive samples,
//! training loss and the joint training schedule.

mod contrastive;
mod loss;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{Activation, BoundMlp, Checkpoint, MlpParams, Module, Tape, Tensor};
use crate::error::{Error, Result};

pub use contrastive::{contrastive_sample, density_quantile, ContrastiveSample, ContrastiveSampler};
pub use loss::{idbf_loss, IdbfBatch, IdbfLossTerms};
pub use train::{
    latent_pairs,
    train_barrier_phase, train_bc_phase, train_joint, BcPhase, JointStats, PhaseCConfig, Progress,
};

/// Hyperparameters of the barrier loss. `gamma(B) = alpha * B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdbfHyper {
    pub w_safe: f64,
    pub w_unsafe: f64,
    pub w_ascent: f64,
    pub eps_safe: f64,
    pub eps_unsafe: f64,
    pub eps_ascent: f64,
    pub alpha: f64,
    /// Candidate actions drawn per safe state.
    pub n_candidate: usize,
    /// Fixed density threshold; when absent it is set from `tau_quantile`.
    pub tau_bc: Option<f64>,
    /// Quantile of the BC density over dataset pairs used as threshold.
    pub tau_quantile: f64,
}

impl Default for IdbfHyper {
    fn default() -> Self {
        Self {
            w_safe: 1.0,
            w_unsafe: 1.0,
            w_ascent: 1.0,
            eps_safe: 0.05,
            eps_unsafe: 0.05,
            eps_ascent: 0.05,
            alpha: 1.0,
            n_candidate: 20,
            tau_bc: None,
            tau_quantile: 0.1,
        }
    }
}

impl IdbfHyper {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_safe, self.w_unsafe, self.w_ascent];
        let e = [self.eps_safe, self.eps_unsafe, self.eps_ascent];
        if w.iter().any(|v| !(*v >= 0.0)) || e.iter().any(|v| !(*v > 0.0)) || !(self.alpha > 0.0) {
            return Err(Error::Config(
                "barrier weights must be >= 0, margins and alpha > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tau_quantile) {
            return Err(Error::Config("tau_quantile must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `B: R^n -> R`, smooth hidden activations and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct BarrierNet {
    pub mlp: MlpParams,
}

impl BarrierNet {
    pub fn new(latent_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut widths = vec![latent_dim];
        widths.extend(hidden);
        widths.push(1);
        Self {
            mlp: MlpParams::new(&widths, Activation::Tanh, Activation::Linear, rng),
        }
    }

    pub fn from_mlp(mlp: MlpParams) -> Result<Self> {
        mlp.validate()?;
        if mlp.output_width() != 1 {
            return Err(Error::shape("barrier output", &[1], &[mlp.output_width()]));
        }
        if mlp.layers.iter().any(|l| l.activation == Activation::Relu) {
            return Err(Error::Config("barrier network needs smooth activations".into()));
        }
        Ok(Self { mlp })
    }

    pub fn latent_dim(&self) -> usize {
        self.mlp.input_width()
    }

    pub fn barrier(&self, x: &[f64]) -> f64 {
        self.mlp.forward_vec(x).expect("barrier input width")[0]
    }

    /// `(B(x), grad B(x))` by one reverse pass.
    pub fn barrier_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let bound = self.mlp.bind(&mut tape);
        let xv = tape.param(Tensor::row(x));
        let out = bound.forward(&mut tape, xv);
        let value = tape.value(out).item();
        let grads = tape.backward(out).expect("scalar barrier output");
        (value, grads.tensor(xv).into_data())
    }

    pub fn barrier_grad(&self, x: &[f64]) -> Vec<f64> {
        self.barrier_and_grad(x).1
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        self.mlp.bind(tape)
    }

    pub fn save_into(&self, ck: &mut Checkpoint) {
        ck.put_mlp("barrier", &self.mlp);
    }

    pub fn load_from(ck: &Checkpoint) -> Result<Self> {
        Self::from_mlp(ck.get_mlp("barrier")?)
    }
}

impl Module for BarrierNet {
    fn tensors(&self) -> Vec<&Tensor> {
        self.mlp.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.tensors_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_constant_barrier() {
        let mut b = BarrierNet::new(3, &[8, 8], &mut ChaCha8Rng::seed_from_u64(0));
        for t in b.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        b.mlp.layers.last_mut().unwrap().bias.data_mut()[0] = 0.7;
        let (v, g) = b.barrier_and_grad(&[1.0, -3.0, 2.0]);
        assert_eq!(v, 0.7);
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let b = BarrierNet::new(3, &[16, 16], &mut ChaCha8Rng::seed_from_u64(1));
        let x = [0.3, -0.7, 1.1];
        let g = b.barrier_grad(&x);
        let h = 1e-5;
        for i in 0..3 {
            let mut p = x;
            let mut m = x;
            p[i] += h;
            m[i] -= h;
            let fd = (b.barrier(&p) - b.barrier(&m)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
        assert_eq!(g, b.barrier_grad(&x));
    }

    #[test]
    fn relu_barrier_is_rejected() {
        let mlp = MlpParams::new(&[3, 4, 1], Activation::Relu, Activation::Linear, &mut ChaCha8Rng::seed_from_u64(2));
        assert!(BarrierNet::from_mlp(mlp).is_err());
    }
}
