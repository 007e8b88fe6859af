//! Renders the robot at a grid of positions, encodes each frame and prints
//! the sign of the learned barrier as a map of the room. Safe positions show
//! `.` (B >= 0) or `#` (B < 0); unsafe positions show `O` (B < 0) or `o`.
//!
//! cargo run --release --example barrier_map -- runs/desk/bundle

use std::path::PathBuf;

use anyhow::{Context, Result};
use idbf::bundle::ModelBundle;
use idbf::envnav::{is_unsafe, render, NavState};
use idbf::filter::Carry;

fn main() -> Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).context("usage: barrier_map <bundle dir>")?);
    let bundle = ModelBundle::load(&dir)?;
    let barrier = bundle.require_barrier()?;
    let cfg = &bundle.env;
    let arch = &bundle.latent.arch;
    let n = 40;
    let (mut agree, mut total) = (0, 0);
    for i in (0..n).rev() {
        let mut line = String::new();
        for j in 0..n {
            let s = NavState::new((j as f64 + 0.5) * cfg.room_size / n as f64, (i as f64 + 0.5) * cfg.room_size / n as f64);
            // The encoder is recursive; a few repeats of a still frame settle it.
            let mut carry = Carry::zero(arch.latent_dim, arch.action_dim);
            let image = render(s, cfg);
            let mut x = Vec::new();
            for _ in 0..5 {
                x = carry.encode(&bundle.latent.encoder, &image);
            }
            let b = barrier.barrier(&x);
            let bad = is_unsafe(s, cfg);
            total += 1;
            if (b < 0.0) == bad {
                agree += 1;
            }
            line.push(match (bad, b < 0.0) {
                (true, true) => 'O',
                (true, false) => 'o',
                (false, true) => '#',
                (false, false) => '.',
            });
        }
        println!("{line}");
    }
    println!("sign of B matches the true label at {agree}/{total} positions (O: unsafe and B < 0)");
    Ok(())
}
