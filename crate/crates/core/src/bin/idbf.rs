use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use idbf::filter::FilterKind;
use idbf::idbf::Progress;
use idbf::pipeline::{self, Layout};
use idbf::Config;

/// Train and evaluate in-distribution barrier safety filters on the
/// navigation task.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root shared by all stages.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// Print training losses every this many steps.
    #[arg(long, global = true, default_value_t = 50)]
    log_every: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Collect safe random-action demonstrations.
    GenData,
    /// Train encoder, decoder and latent dynamics.
    TrainDyn,
    /// Fit the latent BC density on a frozen encoder snapshot.
    TrainBc,
    /// Joint dynamics and barrier training, then the baseline models.
    TrainIdbf,
    /// Evaluate one filter.
    Eval {
        #[arg(long, default_value = "idbf")]
        filter: FilterKind,
        /// Write every rendered frame as PPM next to the logs.
        #[arg(long)]
        dump_frames: bool,
    },
    /// Evaluate every filter column and write the comparison table.
    Report,
}

fn progress(every: usize) -> impl FnMut(Progress) {
    let start = Instant::now();
    move |p| match p {
        Progress::Dynamics(s) if s.step % every != 0 => {}
        Progress::Joint(s) if s.step % every != 0 => {}
        Progress::BcEpoch { .. } => eprintln!("{p}"),
        _ => eprintln!("[{:>6.0}s] {p}", start.elapsed().as_secs_f64()),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    cfg.validate()?;
    let layout = Layout::new(&cli.out);
    match cli.command {
        Command::GenData => {
            let ds = pipeline::gen_data(&cfg, &layout)?;
            println!("{} trajectories, {} frames -> {}", ds.len(), ds.frame_count(), layout.data().display());
        }
        Command::TrainDyn => {
            pipeline::train_dyn(&cfg, &layout, progress(cli.log_every))?;
            println!("wrote {}", layout.phase_a().display());
        }
        Command::TrainBc => {
            let b = pipeline::train_bc(&cfg, &layout, progress(1))?;
            println!("tau_bc {:.5}; wrote {}", b.tau_bc.unwrap_or(f64::NAN), layout.phase_b().display());
        }
        Command::TrainIdbf => {
            pipeline::train_idbf(&cfg, &layout, progress(cli.log_every))?;
            println!("wrote {}", layout.bundle().display());
        }
        Command::Eval { filter, dump_frames } => {
            let r = pipeline::eval_filter(&cfg, &layout, filter, dump_frames)?;
            let (c, cs) = r.collision();
            let (i, is) = r.intervention();
            println!("{filter}: collision {c:.2} ± {cs:.2} %, intervention {i:.2} ± {is:.2}");
        }
        Command::Report => {
            println!("{:<16} {:>18} {:>22}", "filter", "collision (%)", "intervention");
            pipeline::report(&cfg, &layout, |r| {
                let (c, cs) = r.collision();
                let (i, is) = r.intervention();
                println!("{:<16} {:>9.2} ± {:<6.2} {:>11.2} ± {:<8.2}", r.filter.to_string(), c, cs, i, is);
            })?;
            println!("wrote {}", layout.report().join("table.csv").display());
        }
    }
    Ok(())
}
