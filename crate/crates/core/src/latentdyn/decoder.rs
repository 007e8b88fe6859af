use rand::Rng;

use super::LatentArch;
use crate::diffnet::{Activation, BoundMlp, MlpParams, Module, PatchGeom, Tape, Tensor, Var};

/// Latent state to image. An MLP with sigmoid output produces a
/// half-resolution frame which is upsampled 2x (nearest neighbour), so the
/// reconstruction is always in `[0, 1]`.
const OUTPUT_FLOOR: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub mlp: MlpParams,
    pub image_size: usize,
}

pub struct BoundDecoder {
    mlp: BoundMlp,
    half: usize,
}

impl Decoder {
    pub fn new(arch: &LatentArch, rng: &mut impl Rng) -> Self {
        let half = arch.image_size / 2;
        let mut widths = vec![arch.latent_dim];
        widths.extend(&arch.decoder_hidden);
        widths.push(half * half * 3);
        Self {
            mlp: MlpParams::new(&widths, Activation::Tanh, Activation::Sigmoid, rng),
            image_size: arch.image_size,
        }
    }

    /// Reconstructed `s*s*3` image for one latent state.
    pub fn decode(&self, x: &[f64]) -> Vec<f64> {
        let small = self.mlp.forward_vec(x).expect("decoder input width");
        let half = self.image_size / 2;
        let s = self.image_size;
        let mut out = vec![0.0; s * s * 3];
        for y in 0..s {
            for xx in 0..s {
                let src = ((y / 2) * half + xx / 2) * 3;
                let dst = (y * s + xx) * 3;
                for c in 0..3 {
                    out[dst + c] = small[src + c].clamp(0.0, 1.0);
                }
            }
        }
        out
    }

    /// Sets the output bias so that the untrained decoder produces `mean`, a
    /// half-resolution frame, clamped away from 0 and 1. Without this the
    /// sigmoid spends its first few hundred steps saturating towards the
    /// pure white background and the robot never enters the gradient.
    pub fn init_output_bias(&mut self, mean: &[f64]) {
        let last = self.mlp.layers.last_mut().expect("decoder has layers");
        for (b, &m) in last.bias.data_mut().iter_mut().zip(mean) {
            let p = m.clamp(OUTPUT_FLOOR, 1.0 - OUTPUT_FLOOR);
            *b = (p / (1.0 - p)).ln();
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundDecoder {
        BoundDecoder {
            mlp: self.mlp.bind(tape),
            half: self.image_size / 2,
        }
    }
}

impl Module for Decoder {
    fn tensors(&self) -> Vec<&Tensor> {
        self.mlp.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.tensors_mut()
    }
}

impl BoundDecoder {
    pub fn vars(&self) -> Vec<Var> {
        self.mlp.vars()
    }

    /// `[r, n_z]` latents -> `[r, s*s*3]` images.
    pub fn decode(&self, tape: &mut Tape, x: Var) -> Var {
        let n = tape.value(x).rows();
        let small = self.decode_half(tape, x);
        let h = self.half;
        tape.upsample2x(small, PatchGeom { n, h, w: h, c: 3, k: 2 })
    }

    /// The half-resolution image before upsampling, `[r, (s/2)^2 * 3]`.
    pub fn decode_half(&self, tape: &mut Tape, x: Var) -> Var {
        self.mlp.forward(tape, x)
    }
}
