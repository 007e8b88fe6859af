//! Image-to-latent models and control-affine latent dynamics.
//!
//! A recursive encoder maps each frame (plus the previous latent state and
//! action) to a low-dimensional state `x`, a decoder maps `x` back to an
//! image, and `xdot = f(x) + g(x) u` is integrated with RK4 under a
//! zero-order hold on the actions.

mod decoder;
mod dynamics;
mod encoder;
mod loss;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{Checkpoint, Module, Tensor};
use crate::error::{Error, Result};

pub use decoder::{BoundDecoder, Decoder};
pub use dynamics::{
    ensemble_variance, integrate, integrate_tape, rk4_step, BoundDyn, DynModel, LatentFlow,
};
pub(crate) use dynamics::{affine, prediction_variance};
pub use encoder::{BoundEncoder, Encoder};
pub use loss::{dyn_loss, frames_to_unit, BoundLatent, DynLossTerms, EncodedBatch};
pub use train::{encode_dataset, mean_half_frame, train_dynamics, train_ensemble, LatentTable, StepStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentArch {
    pub latent_dim: usize,
    pub action_dim: usize,
    pub image_size: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub dynamics_hidden: Vec<usize>,
}

impl Default for LatentArch {
    fn default() -> Self {
        Self {
            latent_dim: 3,
            action_dim: 2,
            image_size: 64,
            conv1_channels: 4,
            conv2_channels: 8,
            encoder_hidden: vec![64],
            decoder_hidden: vec![64, 128],
            dynamics_hidden: vec![64, 64],
        }
    }
}

impl LatentArch {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.action_dim == 0 {
            return Err(Error::Config("latent and action dimensions must be positive".into()));
        }
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of 4",
                self.image_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynTrainConfig {
    /// Prediction horizon of each multiple-shooting window, in control steps.
    pub t_pred: usize,
    /// Distinct trajectories per batch.
    pub traj_per_batch: usize,
    /// Windows drawn from each of those trajectories.
    pub windows_per_traj: usize,
    pub w_state: f64,
    pub w_rec1: f64,
    pub w_rec2: f64,
    /// RK4 substeps per control interval.
    pub substeps: usize,
    /// The state term is off for this many steps and then ramps linearly to
    /// `w_state` over as many again, so the decoder starts using the latent
    /// before the state term can pull the encoder towards a constant.
    pub state_warmup: usize,
    pub lr: f64,
    pub epochs: usize,
    pub clip_norm: f64,
    /// Derived from the pipeline seed, never read from a file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for DynTrainConfig {
    fn default() -> Self {
        Self {
            t_pred: 10,
            traj_per_batch: 16,
            windows_per_traj: 2,
            w_state: 1.0,
            w_rec1: 1.0,
            w_rec2: 1.0,
            substeps: 1,
            state_warmup: 300,
            lr: 3e-3,
            epochs: 30,
            clip_norm: 10.0,
            seed: 0,
        }
    }
}

impl DynTrainConfig {
    /// State weight in effect at training step `step`.
    pub fn w_state_at(&self, step: usize) -> f64 {
        if self.state_warmup == 0 {
            return self.w_state;
        }
        let ramp = step.saturating_sub(self.state_warmup) as f64 / self.state_warmup as f64;
        self.w_state * ramp.min(1.0)
    }

    /// Windows per batch (`N_dyn`).
    pub fn n_dyn(&self) -> usize {
        self.traj_per_batch * self.windows_per_traj
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_pred == 0 || self.n_dyn() == 0 || self.substeps == 0 {
            return Err(Error::Config("t_pred, batch sizes and substeps must be >= 1".into()));
        }
        if [self.w_state, self.w_rec1, self.w_rec2].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Encoder, decoder and dynamics trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentModels {
    pub arch: LatentArch,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub dynamics: DynModel,
}

impl LatentModels {
    pub fn new(arch: &LatentArch, rng: &mut impl Rng) -> Self {
        Self {
            arch: arch.clone(),
            encoder: Encoder::new(arch, rng),
            decoder: Decoder::new(arch, rng),
            dynamics: DynModel::new(arch, rng),
        }
    }

    pub fn save_into(&self, ck: &mut Checkpoint) {
        let a = &self.arch;
        ck.set_meta("arch.latent_dim", a.latent_dim);
        ck.set_meta("arch.action_dim", a.action_dim);
        ck.set_meta("arch.image_size", a.image_size);
        ck.put("encoder.conv1.weight", &self.encoder.conv1.weight);
        ck.put("encoder.conv1.bias", &self.encoder.conv1.bias);
        ck.put("encoder.conv2.weight", &self.encoder.conv2.weight);
        ck.put("encoder.conv2.bias", &self.encoder.conv2.bias);
        ck.put_mlp("encoder.head", &self.encoder.mlp);
        ck.put_mlp("decoder", &self.decoder.mlp);
        ck.put_mlp("dynamics.f", &self.dynamics.f);
        ck.put_mlp("dynamics.g", &self.dynamics.g);
    }

    pub fn load_from(ck: &Checkpoint) -> Result<Self> {
        let head = ck.get_mlp("encoder.head")?;
        let conv = |p: &str| -> Result<crate::diffnet::Dense> {
            Ok(crate::diffnet::Dense {
                weight: ck.tensor(&format!("{p}.weight"))?.clone(),
                bias: ck.tensor(&format!("{p}.bias"))?.clone(),
                activation: crate::diffnet::Activation::Relu,
            })
        };
        let conv1 = conv("encoder.conv1")?;
        let conv2 = conv("encoder.conv2")?;
        let f = ck.get_mlp("dynamics.f")?;
        let g = ck.get_mlp("dynamics.g")?;
        let decoder = ck.get_mlp("decoder")?;
        let latent_dim: usize = ck.meta_parse("arch.latent_dim")?;
        let action_dim: usize = ck.meta_parse("arch.action_dim")?;
        let image_size: usize = ck.meta_parse("arch.image_size")?;
        let hidden = |m: &crate::diffnet::MlpParams| -> Vec<usize> {
            m.layers[..m.layers.len() - 1].iter().map(|l| l.fan_out()).collect()
        };
        let arch = LatentArch {
            latent_dim,
            action_dim,
            image_size,
            conv1_channels: conv1.fan_out(),
            conv2_channels: conv2.fan_out(),
            encoder_hidden: hidden(&head),
            decoder_hidden: hidden(&decoder),
            dynamics_hidden: hidden(&f),
        };
        let models = Self {
            encoder: Encoder {
                conv1,
                conv2,
                mlp: head,
                image_size,
                latent_dim,
                action_dim,
            },
            decoder: Decoder {
                mlp: decoder,
                image_size,
            },
            dynamics: DynModel {
                f,
                g,
                latent_dim,
                action_dim,
            },
            arch,
        };
        models.check_shapes()?;
        Ok(models)
    }

    fn check_shapes(&self) -> Result<()> {
        let fresh = Self::new(&self.arch, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0));
        for (i, (a, b)) in self.tensors().iter().zip(fresh.tensors()).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::shape(format!("latent model tensor {i}"), b.shape(), a.shape()));
            }
        }
        Ok(())
    }
}

impl Module for LatentModels {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.decoder.tensors());
        v.extend(self.dynamics.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.decoder.tensors_mut());
        v.extend(self.dynamics.tensors_mut());
        v
    }
}
