//! Dense float64 tensors, a reverse-mode tape, MLPs and the Adam optimizer.
//!
//! This is the minimal differentiable-programming layer every network in
//! the crate is trained with. It supports exactly the operations the losses
//! need (matmul, elementwise arithmetic, tanh/relu/sigmoid, exp/log,
//! reductions, hinge, a few layout ops for the image stem) and nothing more.

mod adam;
mod checkpoint;
mod mlp;
mod tape;
mod tensor;

pub use adam::{clip_global_norm, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub(crate) use checkpoint::{parse_kv, read_f64_blob, write_f64_blob};
pub use mlp::{Activation, BoundMlp, Dense, MlpParams};
pub use tape::{Gradients, PatchGeom, Tape, Var};
pub(crate) use tape::logsumexp;
pub use tensor::Tensor;
pub(crate) use tensor::matmul;

/// Any bundle of trainable tensors. The order of [`Module::tensors`] and
/// [`Module::tensors_mut`] must agree; optimizers rely on it.
pub trait Module {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

impl Module for MlpParams {
    fn tensors(&self) -> Vec<&Tensor> {
        MlpParams::tensors(self)
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        MlpParams::tensors_mut(self)
    }
}

/// Collects gradients for a list of bound variables, in order.
pub fn collect_grads(grads: &Gradients, vars: &[Var]) -> Vec<Tensor> {
    vars.iter().map(|&v| grads.tensor(v)).collect()
}
