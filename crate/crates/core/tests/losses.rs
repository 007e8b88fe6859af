mod common;

use common::losses::{check_dyn_loss, check_idbf_loss};
use common::rng;
use idbf::dataset::collect_random;
use idbf::diffnet::Tape;
use idbf::envnav::NavConfig;
use idbf::latentdyn::{dyn_loss, BoundLatent, DynTrainConfig, LatentArch, LatentModels};

#[test]
fn dyn_loss_matches_straight_line_oracle() {
    for seed in 0..6 {
        let e = check_dyn_loss(seed);
        assert!(e < 1e-10, "seed {seed}: relative error {e:.2e}");
    }
}

#[test]
fn idbf_loss_matches_straight_line_oracle() {
    for seed in 0..40 {
        let e = check_idbf_loss(seed);
        assert!(e < 1e-10, "seed {seed}: relative error {e:.2e}");
    }
}

#[test]
fn consistent_linear_system_has_zero_state_loss() {
    // Identical latents everywhere and zero dynamics: the state term
    // vanishes whatever the images are.
    let mut r = rng(9);
    let env = NavConfig {
        image_size: 8,
        ..NavConfig::default()
    };
    let arch = LatentArch {
        image_size: 8,
        ..LatentArch::default()
    };
    let ds = collect_random(&env, 3, 8, 1).unwrap();
    let mut models = LatentModels::new(&arch, &mut r);
    for layer in models.encoder.mlp.layers.iter_mut() {
        layer.weight.data_mut().fill(0.0);
    }
    for net in [&mut models.dynamics.f, &mut models.dynamics.g] {
        for layer in net.layers.iter_mut() {
            layer.weight.data_mut().fill(0.0);
            layer.bias.data_mut().fill(0.0);
        }
    }
    let cfg = DynTrainConfig {
        t_pred: 4,
        ..DynTrainConfig::default()
    };
    let batch = ds.sample_batch(2, 3, 4, &mut r).unwrap();
    let mut tape = Tape::new();
    let bound = BoundLatent::bind(&models, &mut tape);
    let t = dyn_loss(&mut tape, &bound, &ds, &batch, &cfg).unwrap();
    assert_eq!(tape.value(t.state).item(), 0.0);
}
