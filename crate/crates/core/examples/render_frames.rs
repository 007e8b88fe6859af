//! Drives the reference controller towards a goal behind the obstacle with no
//! filter and writes every rendered frame as PPM.
//!
//! cargo run --release --example render_frames -- /tmp/frames

use std::path::PathBuf;

use anyhow::Result;
use idbf::envnav::{is_unsafe, obstacle_distance, NavConfig, NavState};
use idbf::evalcli::{rollout, FilterRuntime};
use idbf::filter::FilterKind;

fn main() -> Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "frames".into()));
    let cfg = NavConfig::default();
    let start = NavState::new(1.5, 1.5);
    let goal = [8.5, 8.5];
    let mut filter = FilterRuntime::new(FilterKind::None, None, 0)?;
    let r = rollout(&cfg, &mut filter, start, goal, 150, 0, Some(&dir))?;
    let hits = r.states.iter().filter(|s| is_unsafe(**s, &cfg)).count();
    let closest = r.states.iter().map(|s| obstacle_distance(s.pos, &cfg)).fold(f64::INFINITY, f64::min);
    println!("{} frames in {}", r.records.len(), dir.display());
    println!("unsafe states {hits}, closest obstacle distance {closest:.3} m");
    Ok(())
}
