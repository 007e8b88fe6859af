//! Collects safe random-action demonstrations, saves them and prints how the
//! positions cover the room.
//!
//! cargo run --release --example collect_dataset -- /tmp/data 50

use std::path::PathBuf;

use anyhow::{Context, Result};
use idbf::dataset::{collect_random, Dataset};
use idbf::envnav::NavConfig;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let cfg = NavConfig::default();
    let ds = collect_random(&cfg, n, 100, 0)?;
    ds.save(&dir)?;
    let back = Dataset::load_checked(&dir, Some(&cfg))?;
    anyhow::ensure!(back == ds, "reloaded dataset differs");

    // 5 x 5 occupancy histogram of visited positions.
    let mut grid = [[0usize; 5]; 5];
    let cell = cfg.room_size / 5.0;
    let mut travel = 0.0;
    for t in &ds.trajectories {
        let s = t.states.as_ref().context("no states")?;
        travel += ((s[s.len() - 1].pos[0] - s[0].pos[0]).powi(2) + (s[s.len() - 1].pos[1] - s[0].pos[1]).powi(2)).sqrt();
        for p in s {
            let i = ((p.pos[1] / cell) as usize).min(4);
            let j = ((p.pos[0] / cell) as usize).min(4);
            grid[i][j] += 1;
        }
    }
    println!("{} trajectories, {} frames, saved to {}", ds.len(), ds.frame_count(), dir.display());
    println!("mean start-to-end displacement {:.3} m", travel / ds.len() as f64);
    for row in grid.iter().rev() {
        println!("{}", row.iter().map(|c| format!("{c:>6}")).collect::<String>());
    }
    Ok(())
}
