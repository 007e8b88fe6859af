//! Library losses evaluated next to their straight-line oracles.

use super::{dyn_loss_oracle, idbf_loss_oracle, random_vec, rng};
use idbf::dataset::collect_random;
use idbf::diffnet::{Tape, Tensor};
use idbf::envnav::NavConfig;
use idbf::idbf::{idbf_loss, BarrierNet, IdbfBatch, IdbfHyper};
use idbf::latentdyn::{dyn_loss, BoundLatent, DynModel, DynTrainConfig, LatentArch, LatentModels};
use rand::Rng;

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

pub fn rows(t: &[Vec<f64>]) -> Tensor {
    Tensor::matrix(t.len(), t[0].len(), t.iter().flatten().copied().collect())
}

/// Latents, dynamics, decoder and encoder all random; the oracle decodes at
/// full resolution and encodes each window's trajectory on its own.
pub fn check_dyn_loss(seed: u64) -> f64 {
    let mut r = rng(seed);
    let env = NavConfig {
        image_size: 16,
        ..NavConfig::default()
    };
    let arch = LatentArch {
        image_size: 16,
        ..LatentArch::default()
    };
    let ds = collect_random(&env, 5, 12, seed).unwrap();
    let models = LatentModels::new(&arch, &mut r);
    let cfg = DynTrainConfig {
        t_pred: r.random_range(1..=6),
        substeps: r.random_range(1..=3),
        w_state: r.random_range(0.1..2.0),
        w_rec1: r.random_range(0.1..2.0),
        w_rec2: r.random_range(0.1..2.0),
        ..DynTrainConfig::default()
    };
    let batch = ds.sample_batch(3, 2, cfg.t_pred, &mut r).unwrap();
    let mut tape = Tape::new();
    let bound = BoundLatent::bind(&models, &mut tape);
    let t = dyn_loss(&mut tape, &bound, &ds, &batch, &cfg).unwrap();
    let got = [t.total, t.state, t.rec1, t.rec2].map(|v| tape.value(v).item());
    let want = dyn_loss_oracle(&models, &ds, &batch, &cfg);
    (0..4).map(|i| rel(got[i], want[i])).fold(0.0, f64::max)
}

pub fn check_idbf_loss(seed: u64) -> f64 {
    let mut r = rng(seed);
    let barrier = BarrierNet::new(3, &[16, 16], &mut r);
    let dynamics = DynModel::new(&LatentArch::default(), &mut r);
    let hyper = IdbfHyper {
        w_safe: r.random_range(0.1..2.0),
        w_unsafe: r.random_range(0.1..2.0),
        w_ascent: r.random_range(0.1..2.0),
        eps_safe: r.random_range(0.01..1.0),
        eps_unsafe: r.random_range(0.01..1.0),
        eps_ascent: r.random_range(0.01..1.0),
        alpha: r.random_range(0.1..3.0),
        ..IdbfHyper::default()
    };
    let n_safe = r.random_range(1..20);
    let n_unsafe = r.random_range(0..20);
    let n_pairs = r.random_range(1..20);
    let safe: Vec<Vec<f64>> = (0..n_safe).map(|_| random_vec(&mut r, 3, 2.0)).collect();
    let uns: Vec<Vec<f64>> = (0..n_unsafe).map(|_| random_vec(&mut r, 3, 2.0)).collect();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        (0..n_pairs).map(|_| (random_vec(&mut r, 3, 2.0), random_vec(&mut r, 2, 2.0))).collect();

    let mut tape = Tape::new();
    let bb = barrier.bind(&mut tape);
    let bd = dynamics.bind(&mut tape);
    let px: Vec<Vec<f64>> = pairs.iter().map(|p| p.0.clone()).collect();
    let pu: Vec<Vec<f64>> = pairs.iter().map(|p| p.1.clone()).collect();
    let batch = IdbfBatch {
        safe: tape.input(rows(&safe)),
        unsafe_states: (!uns.is_empty()).then(|| tape.input(rows(&uns))),
        pair_x: tape.input(rows(&px)),
        pair_u: tape.input(rows(&pu)),
    };
    let t = idbf_loss(&mut tape, &bb, &bd, &batch, &hyper);
    let got = [t.total, t.safe, t.unsafe_term, t.ascent].map(|v| tape.value(v).item());
    let want = idbf_loss_oracle(&barrier, &dynamics, &safe, &uns, &pairs, &hyper);
    (0..4).map(|i| rel(got[i], want[i])).fold(0.0, f64::max)
}
