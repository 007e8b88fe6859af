mod common;

use common::{linear_dyn, plain_rollout, rk4_linear_errors, rng};
use idbf::latentdyn::{integrate, DynModel, LatentArch};

#[test]
fn rk4_is_fourth_order_on_linear_systems() {
    for seed in 0..10 {
        let (coarse, fine) = rk4_linear_errors(seed, 2.0, 16);
        let ratio = coarse / fine;
        assert!((12.0..=20.0).contains(&ratio), "seed {seed}: ratio {ratio:.2}");
    }
}

#[test]
fn zero_dynamics_hold_the_state() {
    let model = linear_dyn(&[[0.0; 3]; 3], &[[0.0; 2]; 3]);
    let xs = integrate(&model, &[0.3, -0.2, 1.0], &vec![vec![1.0, -1.0]; 5], 0.1, 5, 2).unwrap();
    assert!(xs.iter().all(|x| x == &vec![0.3, -0.2, 1.0]));
}

#[test]
fn constant_input_moves_linearly() {
    // xdot = B u with B = [[1, 0], [0, 1], [0, 0]].
    let model = linear_dyn(&[[0.0; 3]; 3], &[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
    let xs = integrate(&model, &[0.0; 3], &vec![vec![1.0, 0.5]; 10], 0.02, 10, 1).unwrap();
    let end = xs.last().unwrap();
    assert!((end[0] - 0.2).abs() < 1e-12 && (end[1] - 0.1).abs() < 1e-12 && end[2] == 0.0);
}

#[test]
fn integrate_matches_an_independent_rk4() {
    let mut r = rng(3);
    for _ in 0..5 {
        let model = DynModel::new(&LatentArch::default(), &mut r);
        let acts: Vec<Vec<f64>> = (0..6).map(|_| common::random_vec(&mut r, 2, 2.0)).collect();
        let x0 = common::random_vec(&mut r, 3, 1.0);
        let a = integrate(&model, &x0, &acts, 0.05, 6, 3).unwrap();
        let b = plain_rollout(&model, &x0, &acts, 0.05, 3);
        for (p, q) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn too_few_actions_is_an_error() {
    let model = linear_dyn(&[[0.0; 3]; 3], &[[0.0; 2]; 3]);
    assert!(integrate(&model, &[0.0; 3], &[vec![0.0; 2]], 0.1, 2, 1).is_err());
}
