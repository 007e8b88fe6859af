//! One finite-difference check per network class. Each builds a random
//! instance from `seed`, reduces its output to a scalar with a random
//! projection, and compares tape gradients with central differences.

use idbf::bcpolicy::MixtureHead;
use idbf::dataset::collect_random;
use idbf::diffnet::{collect_grads, Activation, MlpParams, Tape, Tensor, Var};
use idbf::envnav::NavConfig;
use idbf::idbf::{idbf_loss, BarrierNet, IdbfBatch, IdbfHyper};
use idbf::latentdyn::{
    dyn_loss, integrate_tape, BoundLatent, Decoder, DynModel, DynTrainConfig, Encoder, LatentArch, LatentModels,
};
use rand::Rng;

use super::{fd_check, random_vec, rng, FdReport};

/// Coordinates probed per instance.
pub const COORDS: usize = 6;

fn project(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let r = tape.input(Tensor::new(shape, random_vec(&mut rng(seed ^ 0xabc), n, 1.0)).unwrap());
    let p = tape.mul(y, r);
    tape.sum(p)
}

fn small_arch() -> LatentArch {
    LatentArch {
        latent_dim: 3,
        action_dim: 2,
        image_size: 8,
        conv1_channels: 2,
        conv2_channels: 3,
        encoder_hidden: vec![6],
        decoder_hidden: vec![5, 7],
        dynamics_hidden: vec![6, 5],
    }
}

fn small_env() -> NavConfig {
    NavConfig {
        image_size: 8,
        ..NavConfig::default()
    }
}

pub fn mlp(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let acts = [Activation::Tanh, Activation::Relu, Activation::Sigmoid];
    let hidden = acts[r.random_range(0..3)];
    let output = [Activation::Linear, Activation::Sigmoid, Activation::Tanh][r.random_range(0..3)];
    let net = MlpParams::new(&[4, 7, 5, 3], hidden, output, &mut r);
    let x = Tensor::matrix(5, 4, random_vec(&mut r, 20, 2.0));
    fd_check(&net, COORDS, &mut r, |m| {
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let xi = tape.input(x.clone());
        let y = b.forward(&mut tape, xi);
        let l = project(&mut tape, y, seed);
        let g = tape.backward(l).unwrap();
        (tape.value(l).item(), collect_grads(&g, &b.vars()))
    })
}

pub fn encoder(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let arch = small_arch();
    let enc = Encoder::new(&arch, &mut r);
    let (b, steps) = (2, 3);
    let pix = 8 * 8 * 3;
    let images = Tensor::matrix(b * steps, pix, (0..b * steps * pix).map(|_| r.random::<f64>()).collect());
    let actions: Vec<Tensor> = (0..steps).map(|_| Tensor::matrix(b, 2, random_vec(&mut r, 2 * b, 2.0))).collect();
    fd_check(&enc, COORDS, &mut r, |e| {
        let mut tape = Tape::new();
        let be = e.bind(&mut tape);
        let im = tape.input(images.clone());
        let acts: Vec<Var> = actions.iter().map(|a| tape.input(a.clone())).collect();
        let x = be.encode_sequences(&mut tape, im, &acts, b);
        let l = project(&mut tape, x, seed);
        let g = tape.backward(l).unwrap();
        (tape.value(l).item(), collect_grads(&g, &be.vars()))
    })
}

pub fn decoder(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let dec = Decoder::new(&small_arch(), &mut r);
    let x = Tensor::matrix(4, 3, random_vec(&mut r, 12, 2.0));
    fd_check(&dec, COORDS, &mut r, |d| {
        let mut tape = Tape::new();
        let bd = d.bind(&mut tape);
        let xi = tape.input(x.clone());
        let y = bd.decode(&mut tape, xi);
        let l = project(&mut tape, y, seed);
        let g = tape.backward(l).unwrap();
        (tape.value(l).item(), collect_grads(&g, &bd.vars()))
    })
}

pub fn dynamics(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let model = DynModel::new(&small_arch(), &mut r);
    let x0 = Tensor::matrix(3, 3, random_vec(&mut r, 9, 1.0));
    let actions: Vec<Tensor> = (0..4).map(|_| Tensor::matrix(3, 2, random_vec(&mut r, 6, 2.0))).collect();
    fd_check(&model, COORDS, &mut r, |m| {
        let mut tape = Tape::new();
        let bm = m.bind(&mut tape);
        let x = tape.input(x0.clone());
        let acts: Vec<Var> = actions.iter().map(|a| tape.input(a.clone())).collect();
        let traj = integrate_tape(&mut tape, &bm, x, &acts, 0.1, 2);
        let all = tape.concat_rows(&traj);
        let l = project(&mut tape, all, seed);
        let g = tape.backward(l).unwrap();
        (tape.value(l).item(), collect_grads(&g, &bm.vars()))
    })
}

/// Value plus directional derivative, the quantity the ascent term uses.
pub fn barrier(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let net = BarrierNet::new(3, &[8, 6], &mut r);
    let x = Tensor::matrix(5, 3, random_vec(&mut r, 15, 2.0));
    let v = Tensor::matrix(5, 3, random_vec(&mut r, 15, 2.0));
    fd_check(&net, COORDS, &mut r, |n| {
        let mut tape = Tape::new();
        let bb = n.bind(&mut tape);
        let xi = tape.input(x.clone());
        let vi = tape.input(v.clone());
        let (b, db) = bb.forward_with_tangent(&mut tape, xi, vi);
        let both = tape.concat_cols(&[b, db]);
        let l = project(&mut tape, both, seed);
        let g = tape.backward(l).unwrap();
        (tape.value(l).item(), collect_grads(&g, &bb.vars()))
    })
}

pub fn mixture_head(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let head = MixtureHead::new(3, 2, 3, &[8], &mut r);
    let xs: Vec<Vec<f64>> = (0..6).map(|_| random_vec(&mut r, 3, 2.0)).collect();
    let u = Tensor::matrix(6, 2, random_vec(&mut r, 12, 1.0));
    fd_check(&head.net, COORDS, &mut r, |net| {
        let h = MixtureHead {
            net: net.clone(),
            ..head.clone()
        };
        let mut tape = Tape::new();
        let bh = h.bind(&mut tape);
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let x = h.inputs(&mut tape, &refs);
        let ui = tape.input(u.clone());
        let ll = bh.log_density(&mut tape, x, ui);
        let l = project(&mut tape, ll, seed);
        let g = tape.backward(l).unwrap();
        (tape.value(l).item(), collect_grads(&g, &bh.vars()))
    })
}

/// Whole multiple-shooting loss through encoder, integrator and decoder.
pub fn dyn_loss_all(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let ds = collect_random(&small_env(), 3, 6, seed).unwrap();
    let models = LatentModels::new(&small_arch(), &mut r);
    let cfg = DynTrainConfig {
        t_pred: 3,
        ..DynTrainConfig::default()
    };
    let batch = ds.sample_batch(2, 2, 3, &mut r).unwrap();
    fd_check(&models, COORDS, &mut r, |m| {
        let mut tape = Tape::new();
        let bound = BoundLatent::bind(m, &mut tape);
        let terms = dyn_loss(&mut tape, &bound, &ds, &batch, &cfg).unwrap();
        let g = tape.backward(terms.total).unwrap();
        (tape.value(terms.total).item(), collect_grads(&g, &bound.vars()))
    })
}

/// Barrier loss gradients with respect to the barrier parameters.
pub fn idbf_loss_all(seed: u64) -> FdReport {
    let mut r = rng(seed);
    let net = BarrierNet::new(3, &[8, 6], &mut r);
    let dynm = DynModel::new(&small_arch(), &mut r);
    let safe = Tensor::matrix(6, 3, random_vec(&mut r, 18, 1.5));
    let uns = Tensor::matrix(4, 3, random_vec(&mut r, 12, 1.5));
    let px = Tensor::matrix(5, 3, random_vec(&mut r, 15, 1.5));
    let pu = Tensor::matrix(5, 2, random_vec(&mut r, 10, 2.0));
    // Large margins keep most hinges active so every term contributes.
    let hyper = IdbfHyper {
        eps_safe: 2.0,
        eps_unsafe: 2.0,
        eps_ascent: 2.0,
        ..IdbfHyper::default()
    };
    fd_check(&net, COORDS, &mut r, |n| {
        let mut tape = Tape::new();
        let bb = n.bind(&mut tape);
        let bd = dynm.bind(&mut tape);
        let batch = IdbfBatch {
            safe: tape.input(safe.clone()),
            unsafe_states: Some(tape.input(uns.clone())),
            pair_x: tape.input(px.clone()),
            pair_u: tape.input(pu.clone()),
        };
        let t = idbf_loss(&mut tape, &bb, &bd, &batch, &hyper);
        let g = tape.backward(t.total).unwrap();
        (tape.value(t.total).item(), collect_grads(&g, &bb.vars()))
    })
}

pub type Check = fn(u64) -> FdReport;

pub const CLASSES: [(&str, Check); 8] = [
    ("mlp", mlp),
    ("encoder", encoder),
    ("decoder", decoder),
    ("dynamics", dynamics),
    ("barrier", barrier),
    ("mixture_head", mixture_head),
    ("dyn_loss", dyn_loss_all),
    ("idbf_loss", idbf_loss_all),
];
