//! Stage orchestration shared by the command-line tool, the examples and the
//! acceptance run. Each stage reads the previous stage's output directory
//! under a common root:
//!
//! ```text
//! <out>/data       collected dataset
//! <out>/phase_a    latent models after dynamics-only training
//! <out>/phase_b    plus the latent BC model and its threshold
//! <out>/bundle     plus barrier, privileged BC and dynamics ensemble
//! <out>/report     evaluation CSVs and per-step logs
//! ```

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bcpolicy::bc_train;
use crate::bundle::ModelBundle;
use crate::config::Config;
use crate::dataset::{collect_random, Dataset};
use crate::error::{Error, Result};
use crate::evalcli::{evaluate, run_table, write_table, EvalReport};
use crate::filter::FilterKind;
use crate::idbf::{train_barrier_phase, train_bc_phase, Progress};
use crate::latentdyn::{encode_dataset, train_dynamics, train_ensemble, DynTrainConfig, LatentModels};
use crate::rng::derive_seed;

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn phase_a(&self) -> PathBuf {
        self.root.join("phase_a")
    }
    pub fn phase_b(&self) -> PathBuf {
        self.root.join("phase_b")
    }
    pub fn bundle(&self) -> PathBuf {
        self.root.join("bundle")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// Collects the dataset and writes it with the config used.
pub fn gen_data(cfg: &Config, layout: &Layout) -> Result<Dataset> {
    let ds = collect_random(&cfg.env, cfg.data.trajectories, cfg.data.horizon, cfg.data_seed())?;
    ds.save(&layout.data())?;
    write_config(cfg, &layout.root)?;
    Ok(ds)
}

fn write_config(cfg: &Config, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let p = root.join("config.toml");
    std::fs::write(&p, cfg.to_toml()).map_err(|e| Error::io(&p, e))
}

/// Training and held-out trajectories; the last `holdout` are held out.
pub fn load_train(cfg: &Config, layout: &Layout) -> Result<(Dataset, Dataset)> {
    let ds = Dataset::load_checked(&layout.data(), Some(&cfg.env))?;
    Ok(ds.split(cfg.data.holdout))
}

/// Dynamics-only training of encoder, decoder and dynamics.
pub fn train_dyn(cfg: &Config, layout: &Layout, mut progress: impl FnMut(Progress)) -> Result<ModelBundle> {
    let (train, _) = load_train(cfg, layout)?;
    let mut init = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "latent-init"));
    let mut latent = LatentModels::new(&cfg.arch, &mut init);
    train_dynamics(&mut latent, &train, &cfg.dynamics, |s| progress(Progress::Dynamics(s)))?;
    let bundle = ModelBundle::new(cfg.env.clone(), latent, cfg.dynamics.substeps);
    bundle.save(&layout.phase_a())?;
    Ok(bundle)
}

/// Fits the latent BC model on a frozen snapshot of the phase-A encoder.
pub fn train_bc(cfg: &Config, layout: &Layout, mut progress: impl FnMut(Progress)) -> Result<ModelBundle> {
    let (train, _) = load_train(cfg, layout)?;
    let mut bundle = ModelBundle::load(&layout.phase_a())?;
    let snapshot = encode_dataset(&bundle.latent.encoder, &train);
    let bc = train_bc_phase(&train, &snapshot, &cfg.bc, &cfg.idbf)?;
    for (epoch, &nll) in bc.history.iter().enumerate() {
        progress(Progress::BcEpoch { epoch, nll });
    }
    bundle.bc = Some(bc.head);
    bundle.tau_bc = Some(bc.tau);
    bundle.save(&layout.phase_b())?;
    Ok(bundle)
}

/// Joint dynamics and barrier training from the phase-B models, then the
/// two baselines.
pub fn train_idbf(cfg: &Config, layout: &Layout, mut progress: impl FnMut(Progress)) -> Result<ModelBundle> {
    let (train, _) = load_train(cfg, layout)?;
    let mut bundle = ModelBundle::load(&layout.phase_b())?;
    let bc = bundle
        .bc
        .clone()
        .ok_or_else(|| Error::Config("phase-B bundle has no BC model".into()))?;
    let tau = bundle.tau_bc.ok_or_else(|| Error::Config("phase-B bundle has no tau_bc".into()))?;
    // Same snapshot as phase B: encoding is deterministic.
    let snapshot = encode_dataset(&bundle.latent.encoder, &train);
    let (barrier, _) = train_barrier_phase(&train, &snapshot, &mut bundle.latent, &bc, tau, cfg, |s| {
        progress(Progress::Joint(s))
    })?;
    bundle.barrier = Some(barrier);
    bundle.alpha = cfg.idbf.alpha;
    train_baselines(cfg, &train, &mut bundle)?;
    bundle.save(&layout.bundle())?;
    Ok(bundle)
}

/// Privileged-position BC density and a dynamics ensemble on the final
/// encoder's latents.
pub fn train_baselines(cfg: &Config, train: &Dataset, bundle: &mut ModelBundle) -> Result<()> {
    let bx = train.config.action_box();
    let mut xs = Vec::with_capacity(train.pair_count());
    let mut us = Vec::with_capacity(train.pair_count());
    for tr in &train.trajectories {
        let states = tr
            .states
            .as_ref()
            .ok_or_else(|| Error::Config("privileged BC needs ground-truth states".into()))?;
        for (s, u) in states.iter().zip(&tr.actions) {
            xs.push(s.pos.to_vec());
            us.push(bx.normalize(u));
        }
    }
    bundle.baseline_bc = Some(bc_train(&xs, &us, &cfg.baseline_bc)?.0);

    let table = encode_dataset(&bundle.latent.encoder, train);
    let ecfg = DynTrainConfig {
        epochs: cfg.ensemble.epochs,
        lr: cfg.ensemble.lr,
        ..cfg.dynamics.clone()
    };
    bundle.ensemble = train_ensemble(&table, train, &cfg.arch, &ecfg, cfg.ensemble.members)?;
    Ok(())
}

/// Evaluates one filter and writes its table and per-step logs.
pub fn eval_filter(cfg: &Config, layout: &Layout, kind: FilterKind, dump_frames: bool) -> Result<EvalReport> {
    let bundle = match kind {
        FilterKind::None => None,
        _ => Some(ModelBundle::load(&layout.bundle())?),
    };
    let out = layout.report().join("single");
    let r = evaluate(&cfg.env, bundle.as_ref(), kind, &cfg.eval, Some(&out.join("logs")), dump_frames)?;
    write_table(std::slice::from_ref(&r), &out)?;
    Ok(r)
}

/// All eight filter columns under shared episodes.
pub fn report(cfg: &Config, layout: &Layout, on_report: impl FnMut(&EvalReport)) -> Result<Vec<EvalReport>> {
    let bundle = ModelBundle::load(&layout.bundle())?;
    run_table(&cfg.env, &bundle, &cfg.eval, &layout.report(), on_report)
}

/// Every stage in order.
pub fn run_all(cfg: &Config, layout: &Layout, mut progress: impl FnMut(Progress)) -> Result<Vec<EvalReport>> {
    gen_data(cfg, layout)?;
    train_dyn(cfg, layout, &mut progress)?;
    train_bc(cfg, layout, &mut progress)?;
    train_idbf(cfg, layout, &mut progress)?;
    report(cfg, layout, |_| {})
}
