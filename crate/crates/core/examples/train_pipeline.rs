//! Every stage end to end: collect data, train the latent model, the BC
//! density, the barrier and the baselines, then write the comparison table.
//! Defaults to a small config that finishes in a few minutes.
//!
//! cargo run --release --example train_pipeline -- [config.toml] [out dir]

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use idbf::idbf::Progress;
use idbf::pipeline::{self, Layout};
use idbf::Config;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(p) => Config::load(&PathBuf::from(p))?,
        None => Config::from_toml(include_str!("../configs/smoke.toml"))?,
    };
    let layout = Layout::new(args.next().unwrap_or_else(|| "runs/pipeline".into()));
    let start = Instant::now();
    let mut last = String::new();
    let reports = pipeline::run_all(&cfg, &layout, |p| {
        let stage = match p {
            Progress::Dynamics(_) => "dynamics",
            Progress::BcEpoch { .. } => "bc",
            Progress::Joint(_) => "joint",
        };
        if stage != last {
            eprintln!("[{:>6.1}s] {stage}", start.elapsed().as_secs_f64());
            last = stage.to_string();
        }
    })?;
    for r in &reports {
        let (c, cs) = r.collision();
        let (i, is) = r.intervention();
        println!("{:<16} collision {c:6.2} +- {cs:5.2} %   intervention {i:8.3} +- {is:7.3}", r.filter.to_string());
    }
    println!("table in {}", layout.report().display());
    Ok(())
}
