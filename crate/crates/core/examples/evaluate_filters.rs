//! Loads a trained bundle and runs the closed-loop comparison of every filter
//! on shared episodes, printing rows as they finish.
//!
//! cargo run --release --example evaluate_filters -- runs/desk/bundle [episodes]

use std::path::PathBuf;

use anyhow::{Context, Result};
use idbf::bundle::ModelBundle;
use idbf::evalcli::{run_table, EvalConfig};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().context("usage: evaluate_filters <bundle dir> [episodes]")?);
    let episodes: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let bundle = ModelBundle::load(&dir)?;
    let eval = EvalConfig { episodes, ..EvalConfig::default() };
    let out = dir.with_file_name("eval");
    run_table(&bundle.env, &bundle, &eval, &out, |r| {
        let (c, cs) = r.collision();
        let (i, is) = r.intervention();
        let infeasible: usize = r.episodes.iter().map(|e| e.infeasible_steps).sum();
        println!(
            "{:<16} collision {c:6.2} +- {cs:5.2} %  intervention {i:8.3} +- {is:7.3}  infeasible steps {infeasible}",
            r.filter.to_string()
        );
    })?;
    println!("logs and table.csv in {}", out.display());
    Ok(())
}
