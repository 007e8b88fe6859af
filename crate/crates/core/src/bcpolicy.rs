//! Gaussian-mixture behavioural cloning density `pi(u | x)`.
//!
//! Densities are defined over actions normalised to `[-1, 1]^m` (see
//! [`ActionBox::normalize`](crate::envnav::ActionBox::normalize)), so a
//! uniform action distribution has density `2^-m`.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffnet::{
    clip_global_norm, collect_grads, logsumexp, AdamState, Activation, BoundMlp, Checkpoint, MlpParams, Module, Tape,
    Tensor, Var,
};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const MIN_STD: f64 = 1e-3;
pub const MAX_STD: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    pub components: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// Derived from the pipeline seed, never read from a file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            components: 5,
            hidden: vec![64, 64],
            lr: 1e-3,
            epochs: 20,
            batch_size: 256,
            clip_norm: 10.0,
            seed: 0,
        }
    }
}

/// Mixture parameters at one conditioning input.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

impl Mixture {
    pub fn log_density(&self, u: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.weights.len())
            .map(|k| self.weights[k].ln() + log_normal_diag(u, &self.means[k], &self.stds[k]))
            .collect();
        logsumexp(&terms)
    }

    pub fn density(&self, u: &[f64]) -> f64 {
        self.log_density(u).exp()
    }

    /// Ancestral sample: component by weight, then the diagonal Gaussian.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if r < acc {
                k = i;
                break;
            }
        }
        self.means[k]
            .iter()
            .zip(&self.stds[k])
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s * z
            })
            .collect()
    }
}

fn log_normal_diag(u: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    u.iter()
        .zip(mean.iter().zip(std))
        .map(|(x, (m, s))| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Conditioning network producing `K` logits, `K` means and `K` log-stds.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureHead {
    pub net: MlpParams,
    pub components: usize,
    pub action_dim: usize,
    /// Conditioning inputs are standardised with these before the network.
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
}

fn log_std_squash(raw: f64) -> f64 {
    let (lo, hi) = (MIN_STD.ln(), MAX_STD.ln());
    0.5 * (lo + hi) + 0.5 * (hi - lo) * raw.tanh()
}

impl MixtureHead {
    pub fn new(input_dim: usize, action_dim: usize, components: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut widths = vec![input_dim];
        widths.extend(hidden);
        widths.push(components * (1 + 2 * action_dim));
        Self {
            net: MlpParams::new(&widths, Activation::Tanh, Activation::Linear, rng),
            components,
            action_dim,
            input_mean: vec![0.0; input_dim],
            input_std: vec![1.0; input_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Sets the standardisation from data (std floored at 1e-6).
    pub fn fit_standardization(&mut self, states: &[Vec<f64>]) {
        let d = self.input_dim();
        let n = states.len().max(1) as f64;
        for j in 0..d {
            let mean = states.iter().map(|s| s[j]).sum::<f64>() / n;
            let var = states.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / n;
            self.input_mean[j] = mean;
            self.input_std[j] = var.sqrt().max(1e-6);
        }
    }

    pub fn mixture(&self, x: &[f64]) -> Mixture {
        let out = self.net.forward_vec(&self.standardize(x)).expect("bc input width");
        self.split(&out)
    }

    fn split(&self, out: &[f64]) -> Mixture {
        let (k, m) = (self.components, self.action_dim);
        let lse = logsumexp(&out[..k]);
        let weights = out[..k].iter().map(|l| (l - lse).exp()).collect();
        let means = (0..k).map(|c| out[k + c * m..k + (c + 1) * m].to_vec()).collect();
        let stds = (0..k)
            .map(|c| {
                out[k + k * m + c * m..k + k * m + (c + 1) * m]
                    .iter()
                    .map(|&r| log_std_squash(r).exp())
                    .collect()
            })
            .collect();
        Mixture { weights, means, stds }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundHead {
        BoundHead {
            net: self.net.bind(tape),
            components: self.components,
            action_dim: self.action_dim,
        }
    }

    /// Standardised conditioning inputs as a tape input, `[r, d]`.
    pub fn inputs(&self, tape: &mut Tape, states: &[&[f64]]) -> Var {
        let flat: Vec<f64> = states.iter().flat_map(|s| self.standardize(s)).collect();
        tape.input(Tensor::matrix(states.len(), self.input_dim(), flat))
    }

    pub fn save_into(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.put_mlp(&format!("{prefix}.net"), &self.net);
        ck.put(&format!("{prefix}.input_mean"), &Tensor::row(&self.input_mean));
        ck.put(&format!("{prefix}.input_std"), &Tensor::row(&self.input_std));
        ck.set_meta(&format!("{prefix}.components"), self.components);
        ck.set_meta(&format!("{prefix}.action_dim"), self.action_dim);
    }

    pub fn load_from(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let net = ck.get_mlp(&format!("{prefix}.net"))?;
        let components: usize = ck.meta_parse(&format!("{prefix}.components"))?;
        let action_dim: usize = ck.meta_parse(&format!("{prefix}.action_dim"))?;
        let head = Self {
            input_mean: ck.tensor(&format!("{prefix}.input_mean"))?.data().to_vec(),
            input_std: ck.tensor(&format!("{prefix}.input_std"))?.data().to_vec(),
            net,
            components,
            action_dim,
        };
        let want = components * (1 + 2 * action_dim);
        if head.net.output_width() != want || head.net.input_width() != head.input_dim() {
            return Err(Error::shape(
                format!("{prefix} mixture head"),
                &[head.input_dim(), want],
                &[head.net.input_width(), head.net.output_width()],
            ));
        }
        Ok(head)
    }
}

impl Module for MixtureHead {
    fn tensors(&self) -> Vec<&Tensor> {
        self.net.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.tensors_mut()
    }
}

pub struct BoundHead {
    net: BoundMlp,
    components: usize,
    action_dim: usize,
}

impl BoundHead {
    pub fn vars(&self) -> Vec<Var> {
        self.net.vars()
    }

    /// Log-density of each row of `u` `[r, m]` given standardised inputs
    /// `x` `[r, d]`; returns `[r, 1]`.
    pub fn log_density(&self, tape: &mut Tape, x: Var, u: Var) -> Var {
        let (k, m) = (self.components, self.action_dim);
        let (lo, hi) = (MIN_STD.ln(), MAX_STD.ln());
        let out = self.net.forward(tape, x);
        let logits = tape.slice_cols(out, 0, k);
        let lse = tape.logsumexp_rows(logits);
        let log_w = tape.sub_col(logits, lse);
        let mut comps = Vec::with_capacity(k);
        for c in 0..k {
            let mu = tape.slice_cols(out, k + c * m, m);
            let raw = tape.slice_cols(out, k + k * m + c * m, m);
            let t = tape.tanh(raw);
            let t = tape.scale(t, 0.5 * (hi - lo));
            let log_std = tape.offset(t, 0.5 * (lo + hi));
            let neg = tape.scale(log_std, -1.0);
            let inv_std = tape.exp(neg);
            let d = tape.sub(u, mu);
            let z = tape.mul(d, inv_std);
            let z2 = tape.square(z);
            let z2 = tape.scale(z2, -0.5);
            let e = tape.sub(z2, log_std);
            let e = tape.row_sum(e);
            comps.push(tape.offset(e, -0.5 * m as f64 * (2.0 * PI).ln()));
        }
        let comps = tape.concat_cols(&comps);
        let joint = tape.add(comps, log_w);
        tape.logsumexp_rows(joint)
    }
}

/// `pi(u | x)` with `u` in normalised action coordinates.
pub fn bc_density(head: &MixtureHead, u: &[f64], x: &[f64]) -> f64 {
    head.mixture(x).density(u)
}

pub fn bc_log_density(head: &MixtureHead, u: &[f64], x: &[f64]) -> f64 {
    head.mixture(x).log_density(u)
}

pub fn bc_sample(head: &MixtureHead, x: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    head.mixture(x).sample(rng)
}

/// Mean negative log-likelihood over paired data.
pub fn mean_nll(head: &MixtureHead, states: &[Vec<f64>], actions: &[Vec<f64>]) -> f64 {
    let n = states.len().max(1) as f64;
    -states
        .iter()
        .zip(actions)
        .map(|(x, u)| bc_log_density(head, u, x))
        .sum::<f64>()
        / n
}

/// Fits a mixture head by minibatch Adam on the negative log-likelihood.
/// `actions` must already be normalised. Returns the head and the mean
/// training NLL of each epoch.
pub fn bc_train(states: &[Vec<f64>], actions: &[Vec<f64>], cfg: &BcConfig) -> Result<(MixtureHead, Vec<f64>)> {
    if states.is_empty() || states.len() != actions.len() {
        return Err(Error::CountMismatch {
            context: "behaviour cloning pairs".into(),
            expected: states.len(),
            found: actions.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "bc"));
    let mut head = MixtureHead::new(states[0].len(), actions[0].len(), cfg.components, &cfg.hidden, &mut rng);
    head.fit_standardization(states);
    let m = head.action_dim;
    let mut adam = AdamState::new(cfg.lr);
    let mut order: Vec<usize> = (0..states.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut tape = Tape::new();
            let bound = head.bind(&mut tape);
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| states[i].as_slice()).collect();
            let x = head.inputs(&mut tape, &xs);
            let u: Vec<f64> = chunk.iter().flat_map(|&i| actions[i].iter().copied()).collect();
            let u = tape.input(Tensor::matrix(chunk.len(), m, u));
            let ll = bound.log_density(&mut tape, x, u);
            let mean = tape.mean(ll);
            let loss = tape.scale(mean, -1.0);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    phase: "behaviour cloning".into(),
                    step,
                    detail: format!("negative log-likelihood = {value}"),
                });
            }
            epoch_sum += value * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            let mut g = collect_grads(&grads, &bound.vars());
            clip_global_norm(&mut g, cfg.clip_norm);
            adam.step(&mut head.tensors_mut(), &g)?;
            step += 1;
        }
        history.push(epoch_sum / states.len() as f64);
    }
    Ok((head, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(mean: Vec<f64>, std: f64) -> Mixture {
        let m = mean.len();
        Mixture {
            weights: vec![1.0],
            means: vec![mean],
            stds: vec![vec![std; m]],
        }
    }

    #[test]
    fn gaussian_peak_value() {
        let s0: f64 = 0.3;
        let mix = single(vec![0.1, -0.2], s0);
        let want = (2.0 * PI * s0 * s0).powf(-1.0);
        assert!((mix.density(&[0.1, -0.2]) - want).abs() < 1e-12);
    }

    #[test]
    fn duplicated_component_is_same_density() {
        let one = single(vec![0.4, 0.0], 0.5);
        let two = Mixture {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.4, 0.0]; 2],
            stds: vec![vec![0.5, 0.5]; 2],
        };
        for u in [[0.0, 0.0], [1.0, -1.0], [0.4, 0.3]] {
            assert!((one.density(&u) - two.density(&u)).abs() < 1e-14);
        }
    }

    #[test]
    fn head_weights_are_normalised_and_stds_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut head = MixtureHead::new(3, 2, 5, &[16], &mut rng);
        for t in head.net.tensors_mut() {
            for v in t.data_mut() {
                *v *= 200.0;
            }
        }
        let mix = head.mixture(&[0.3, -2.0, 1.0]);
        assert!((mix.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(mix.stds.iter().flatten().all(|s| (MIN_STD * 0.999..=MAX_STD * 1.001).contains(s)));
    }

    #[test]
    fn tape_log_density_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = MixtureHead::new(3, 2, 4, &[8], &mut rng);
        let xs = [vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 2.0]];
        let us = [vec![0.5, -0.5], vec![0.9, 0.1]];
        let mut tape = Tape::new();
        let b = head.bind(&mut tape);
        let xr: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let x = head.inputs(&mut tape, &xr);
        let u = tape.input(Tensor::matrix(2, 2, us.concat()));
        let ll = b.log_density(&mut tape, x, u);
        for i in 0..2 {
            let want = bc_log_density(&head, &us[i], &xs[i]);
            assert!((tape.value(ll).data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let mix = single(vec![0.0, 0.0], 1.0);
        let a = mix.sample(&mut ChaCha8Rng::seed_from_u64(9));
        let b = mix.sample(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_pairs_are_rejected() {
        assert!(bc_train(&[vec![0.0]], &[], &BcConfig::default()).is_err());
    }
}
