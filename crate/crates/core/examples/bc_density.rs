//! Fits the mixture density policy to a bimodal action set (go left or go
//! right around an obstacle) and prints the density along the first action
//! axis, plus a Monte Carlo check that it integrates to one.
//!
//! cargo run --release --example bc_density

use anyhow::Result;
use idbf::bcpolicy::{bc_density, bc_train, BcConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 0.08)?;
    let n = 4000;
    let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
    let us: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let side = if i % 2 == 0 { 0.6 } else { -0.6 };
            vec![side + noise.sample(&mut rng), 0.3 + noise.sample(&mut rng)]
        })
        .collect();
    let cfg = BcConfig { components: 4, hidden: vec![16], epochs: 30, lr: 3e-3, ..BcConfig::default() };
    let (head, nll) = bc_train(&xs, &us, &cfg)?;
    println!("nll {:.3} -> {:.3}", nll[0], nll[nll.len() - 1]);

    let x = [0.2];
    for k in 0..=16 {
        let u0 = -1.0 + k as f64 / 8.0;
        let d = bc_density(&head, &[u0, 0.3], &x);
        println!("u0 {u0:+.3}  p {d:8.4}  {}", "#".repeat((d * 2.0).round() as usize));
    }

    let samples = 200_000;
    let mut mass = 0.0;
    for _ in 0..samples {
        let u = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        mass += bc_density(&head, &u, &x);
    }
    println!("integral over [-2, 2]^2: {:.4}", 16.0 * mass / samples as f64);
    Ok(())
}
