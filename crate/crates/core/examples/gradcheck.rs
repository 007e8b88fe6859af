//! Reverse-mode gradients of a small tanh network against central
//! differences, and the forward-mode tangent against a finite difference
//! along the same direction.
//!
//! cargo run --release --example gradcheck

use anyhow::Result;
use idbf::diffnet::{collect_grads, Activation, MlpParams, Module, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(net: &MlpParams, x: &Tensor, y: &Tensor) -> Result<f64> {
    let out = net.forward(x)?;
    Ok(out.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = MlpParams::new(&[3, 8, 8, 2], Activation::Tanh, Activation::Linear, &mut rng);
    let x = Tensor::matrix(5, 3, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect());
    let y = Tensor::matrix(5, 2, (0..10).map(|_| rng.random_range(-1.0..1.0)).collect());

    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let xv = tape.input(x.clone());
    let yv = tape.input(y.clone());
    let out = bound.forward(&mut tape, xv);
    let diff = tape.sub(out, yv);
    let sq = tape.square(diff);
    let l = tape.mean(sq);
    let grads = collect_grads(&tape.backward(l)?, &bound.vars());

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (ti, g) in grads.iter().enumerate() {
        for k in 0..g.len() {
            let mut p = net.clone();
            p.tensors_mut()[ti].data_mut()[k] += h;
            let mut m = net.clone();
            m.tensors_mut()[ti].data_mut()[k] -= h;
            let fd = (loss(&p, &x, &y)? - loss(&m, &x, &y)?) / (2.0 * h);
            let rel = (fd - g.data()[k]).abs() / fd.abs().max(g.data()[k].abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    println!("{} parameters, max relative error {worst:.2e}", net.parameter_count());

    // Directional derivative of the first output along a random direction.
    let x0: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dir: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let xv = tape.input(Tensor::row(&x0));
    let dv = tape.input(Tensor::row(&dir));
    let (_, t) = bound.forward_with_tangent(&mut tape, xv, dv);
    let shifted = |s: f64| -> Result<f64> {
        let xs: Vec<f64> = x0.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
        Ok(net.forward_vec(&xs)?[0])
    };
    let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
    println!("tangent {:+.8}  finite difference {fd:+.8}", tape.value(t).data()[0]);
    Ok(())
}
