//! Recursive image encoder `x_k = E(I_k, x_{k-1}, u_{k-1})`.
//!
//! Images pass through two stride-2 convolutions (2x2 kernels, relu), are
//! flattened, and then concatenated with the previous latent state and
//! action before an MLP produces the new latent state.

use rand::Rng;

use super::LatentArch;
use crate::diffnet::{matmul, Activation, BoundMlp, Dense, MlpParams, Module, PatchGeom, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub conv1: Dense,
    pub conv2: Dense,
    /// Input layout `[features, x_prev, u_prev]`.
    pub mlp: MlpParams,
    pub image_size: usize,
    pub latent_dim: usize,
    pub action_dim: usize,
}

pub struct BoundEncoder {
    conv1: (Var, Var),
    conv2: (Var, Var),
    mlp: BoundMlp,
    feature_dim: usize,
    image_size: usize,
    c1: usize,
    c2: usize,
    latent_dim: usize,
}

impl Encoder {
    pub fn new(arch: &LatentArch, rng: &mut impl Rng) -> Self {
        let s = arch.image_size;
        let feature_dim = (s / 4) * (s / 4) * arch.conv2_channels;
        let mut widths = vec![feature_dim + arch.latent_dim + arch.action_dim];
        widths.extend(&arch.encoder_hidden);
        widths.push(arch.latent_dim);
        Self {
            conv1: Dense::init(4 * 3, arch.conv1_channels, Activation::Relu, rng),
            conv2: Dense::init(4 * arch.conv1_channels, arch.conv2_channels, Activation::Relu, rng),
            mlp: MlpParams::new(&widths, Activation::Tanh, Activation::Linear, rng),
            image_size: s,
            latent_dim: arch.latent_dim,
            action_dim: arch.action_dim,
        }
    }

    pub fn feature_dim(&self) -> usize {
        (self.image_size / 4) * (self.image_size / 4) * self.conv2.fan_out()
    }

    /// Flattened stem features of `n` images given as `[n, s*s*3]` unit floats.
    pub fn features(&self, images: &[f64], n: usize) -> Vec<f64> {
        let s = self.image_size;
        let p1 = patchify(images, n, s, s, 3);
        let h1 = dense_relu(&p1, n * (s / 2) * (s / 2), &self.conv1);
        let p2 = patchify(&h1, n, s / 2, s / 2, self.conv1.fan_out());
        dense_relu(&p2, n * (s / 4) * (s / 4), &self.conv2)
    }

    /// MLP head on one feature row plus the recursion inputs.
    pub fn head(&self, features: &[f64], x_prev: &[f64], u_prev: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(features.len() + x_prev.len() + u_prev.len());
        input.extend_from_slice(features);
        input.extend_from_slice(x_prev);
        input.extend_from_slice(u_prev);
        self.mlp.forward_vec(&input).expect("encoder head widths")
    }

    /// One recursion step on a `[0, 1]`-scaled image.
    pub fn encode_step(&self, image: &[f64], x_prev: &[f64], u_prev: &[f64]) -> Vec<f64> {
        let f = self.features(image, 1);
        self.head(&f, x_prev, u_prev)
    }

    /// Latent states for every frame of a trajectory, starting the recursion
    /// from zero state and zero action. `actions[k]` links frame `k` to `k+1`.
    pub fn encode_sequence(&self, images: &[Vec<f64>], actions: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = images.len();
        let flat: Vec<f64> = images.iter().flatten().copied().collect();
        let feats = self.features(&flat, n);
        let fd = self.feature_dim();
        let mut x = vec![0.0; self.latent_dim];
        let mut u = vec![0.0; self.action_dim];
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            x = self.head(&feats[k * fd..(k + 1) * fd], &x, &u);
            out.push(x.clone());
            if k < actions.len() {
                u = actions[k].clone();
            }
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder {
        BoundEncoder {
            conv1: (tape.param(self.conv1.weight.clone()), tape.param(self.conv1.bias.clone())),
            conv2: (tape.param(self.conv2.weight.clone()), tape.param(self.conv2.bias.clone())),
            mlp: self.mlp.bind(tape),
            feature_dim: self.feature_dim(),
            image_size: self.image_size,
            c1: self.conv1.fan_out(),
            c2: self.conv2.fan_out(),
            latent_dim: self.latent_dim,
        }
    }
}

impl Module for Encoder {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.conv1.weight, &self.conv1.bias, &self.conv2.weight, &self.conv2.bias];
        v.extend(self.mlp.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
        ];
        v.extend(self.mlp.tensors_mut());
        v
    }
}

impl BoundEncoder {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = vec![self.conv1.0, self.conv1.1, self.conv2.0, self.conv2.1];
        v.extend(self.mlp.vars());
        v
    }

    /// Stem features of an image batch `[n, s*s*3]` -> `[n, feature_dim]`.
    pub fn features(&self, tape: &mut Tape, images: Var) -> Var {
        let n = tape.value(images).rows();
        let s = self.image_size;
        let p1 = tape.patchify(images, PatchGeom { n, h: s, w: s, c: 3, k: 2 });
        let z1 = tape.matmul(p1, self.conv1.0);
        let z1 = tape.add_bias(z1, self.conv1.1);
        let h1 = tape.relu(z1);
        let h1 = tape.reshape(h1, &[n, (s / 2) * (s / 2) * self.c1]);
        let geo = PatchGeom { n, h: s / 2, w: s / 2, c: self.c1, k: 2 };
        let p2 = tape.patchify(h1, geo);
        let z2 = tape.matmul(p2, self.conv2.0);
        let z2 = tape.add_bias(z2, self.conv2.1);
        let h2 = tape.relu(z2);
        tape.reshape(h2, &[n, (s / 4) * (s / 4) * self.c2])
    }

    /// Runs the recursion over `steps` frames for `b` sequences at once.
    ///
    /// `images` holds `steps * b` rows in time-major order (row `k * b + i`
    /// is frame `k` of sequence `i`); `actions[k]` is the `[b, m]` action
    /// applied after frame `k`. Returns the `[steps * b, n_z]` latent states
    /// in the same order.
    pub fn encode_sequences(&self, tape: &mut Tape, images: Var, actions: &[Var], b: usize) -> Var {
        let rows = tape.value(images).rows();
        let steps = rows / b;
        let feats = self.features(tape, images);

        let (w0, b0, act0) = self.mlp.layers[0];
        let fd = self.feature_dim;
        let w_feat = tape.slice_rows(w0, 0, fd);
        let w_x = tape.slice_rows(w0, fd, self.latent_dim);
        let m = tape.value(w0).rows() - fd - self.latent_dim;
        let w_u = tape.slice_rows(w0, fd + self.latent_dim, m);
        let z_img = tape.matmul(feats, w_feat);

        let mut x_prev = tape.input(Tensor::zeros(&[b, self.latent_dim]));
        let mut u_prev = tape.input(Tensor::zeros(&[b, m]));
        let mut xs = Vec::with_capacity(steps);
        for k in 0..steps {
            let zi = tape.slice_rows(z_img, k * b, b);
            let zx = tape.matmul(x_prev, w_x);
            let zu = tape.matmul(u_prev, w_u);
            let z = tape.add(zi, zx);
            let z = tape.add(z, zu);
            let z = tape.add_bias(z, b0);
            let mut h = act0.on_tape(tape, z);
            for &(w, bias, act) in &self.mlp.layers[1..] {
                let z = tape.matmul(h, w);
                let z = tape.add_bias(z, bias);
                h = act.on_tape(tape, z);
            }
            xs.push(h);
            x_prev = h;
            if k < actions.len() {
                u_prev = actions[k];
            }
        }
        tape.concat_rows(&xs)
    }
}

/// Non-overlapping 2x2 patches of an NHWC batch.
fn patchify(src: &[f64], n: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let (ph, pw) = (h / 2, w / 2);
    let pc = 4 * c;
    let mut out = vec![0.0; n * ph * pw * pc];
    for img in 0..n {
        for py in 0..ph {
            for px in 0..pw {
                let o = ((img * ph + py) * pw + px) * pc;
                for dy in 0..2 {
                    let s = ((img * h + py * 2 + dy) * w + px * 2) * c;
                    out[o + dy * 2 * c..o + (dy + 1) * 2 * c].copy_from_slice(&src[s..s + 2 * c]);
                }
            }
        }
    }
    out
}

fn dense_relu(x: &[f64], rows: usize, layer: &Dense) -> Vec<f64> {
    let out = layer.fan_out();
    let mut y = matmul(x, layer.weight.data(), rows, layer.fan_in(), out);
    for row in y.chunks_mut(out) {
        for (v, b) in row.iter_mut().zip(layer.bias.data()) {
            *v = (*v + b).max(0.0);
        }
    }
    y
}
