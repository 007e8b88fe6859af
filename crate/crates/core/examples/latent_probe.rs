//! How much of the robot position a trained encoder keeps: fits a linear
//! map from latent state to true position on held-out trajectories and
//! prints R^2 per axis along with latent scale.
//!
//! cargo run --release --example latent_probe -- runs/desk/phase_a runs/desk/data

use std::path::PathBuf;

use anyhow::{Context, Result};
use idbf::bundle::ModelBundle;
use idbf::dataset::Dataset;
use idbf::latentdyn::encode_dataset;
use nalgebra::{DMatrix, DVector};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let bundle_dir = PathBuf::from(args.next().context("usage: latent_probe <bundle dir> <data dir> [holdout]")?);
    let data_dir = PathBuf::from(args.next().context("missing data dir")?);
    let holdout: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(25);

    let bundle = ModelBundle::load(&bundle_dir)?;
    let ds = Dataset::load(&data_dir)?;
    let (_, held) = ds.split(holdout);
    let table = encode_dataset(&bundle.latent.encoder, &held);

    let mut rows = Vec::new();
    let mut pos = Vec::new();
    for (i, tr) in held.trajectories.iter().enumerate() {
        let states = tr.states.as_ref().context("dataset has no ground-truth states")?;
        for (t, s) in states.iter().enumerate() {
            rows.push(table.get(i, t).to_vec());
            pos.push(s.pos);
        }
    }
    let n = rows.len();
    let d = rows[0].len();
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let std = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        println!("latent[{j}]: mean {mean:+.4} std {std:.4}");
    }
    let x = DMatrix::from_fn(n, d + 1, |r, c| if c < d { rows[r][c] } else { 1.0 });
    let svd = x.clone().svd(true, true);
    for axis in 0..2 {
        let y = DVector::from_fn(n, |r, _| pos[r][axis]);
        let w = svd.solve(&y, 1e-12).map_err(anyhow::Error::msg)?;
        let resid = &y - &x * w;
        let mean = y.mean();
        let tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        println!("position axis {axis}: linear R^2 = {:.4}", 1.0 - resid.norm_squared() / tot);
    }
    Ok(())
}
