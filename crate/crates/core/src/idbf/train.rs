use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{idbf_loss, BarrierNet, ContrastiveSampler, IdbfBatch, IdbfHyper};
use crate::bcpolicy::{bc_train, BcConfig, MixtureHead};
use crate::bundle::ModelBundle;
use crate::config::Config;
use crate::dataset::Dataset;
use crate::diffnet::{clip_global_norm, collect_grads, AdamState, Module, Tape, Tensor};
use crate::error::{Error, Result};
use crate::latentdyn::{
    dyn_loss, encode_dataset, integrate, integrate_tape, train_dynamics, BoundLatent, LatentModels, LatentTable,
    StepStats,
};
use crate::rng::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseCConfig {
    pub epochs: usize,
    /// Learning rate of encoder, decoder and dynamics.
    pub lr: f64,
    pub barrier_lr: f64,
    /// Weight of the barrier loss next to the dynamics loss.
    pub lambda: f64,
    pub barrier_hidden: Vec<usize>,
    /// Treat contrastive states as constants instead of differentiating
    /// through the encoder and dynamics that produced them.
    pub detach_contrastive: bool,
    /// Safe states per batch used to draw contrastive samples (0 = all).
    pub contrastive_states: usize,
    pub clip_norm: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PhaseCConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            barrier_lr: 1e-3,
            lambda: 1.0,
            barrier_hidden: vec![64, 64],
            detach_contrastive: true,
            contrastive_states: 0,
            clip_norm: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointStats {
    pub step: usize,
    pub dynamics: f64,
    pub barrier: f64,
    pub safe: f64,
    pub unsafe_term: f64,
    pub ascent: f64,
    pub n_unsafe: usize,
    pub mean_b_safe: f64,
    pub mean_b_unsafe: f64,
    pub frac_safe_nonneg: f64,
}

pub struct BcPhase {
    pub head: MixtureHead,
    pub tau: f64,
    pub history: Vec<f64>,
}

/// Every (state, normalised action) pair of `ds` with states read from `table`.
pub fn latent_pairs(ds: &Dataset, table: &LatentTable) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let bx = ds.config.action_box();
    let mut xs = Vec::with_capacity(ds.pair_count());
    let mut us = Vec::with_capacity(ds.pair_count());
    for (i, tr) in ds.trajectories.iter().enumerate() {
        for (t, u) in tr.actions.iter().enumerate() {
            xs.push(table.get(i, t).to_vec());
            us.push(bx.normalize(u));
        }
    }
    (xs, us)
}

/// Fits the latent-conditioned BC model on a frozen latent table and sets
/// the contrastive density threshold.
pub fn train_bc_phase(ds: &Dataset, table: &LatentTable, bc: &BcConfig, hyper: &IdbfHyper) -> Result<BcPhase> {
    let (xs, us) = latent_pairs(ds, table);
    let (head, history) = bc_train(&xs, &us, bc)?;
    let tau = match hyper.tau_bc {
        Some(t) => t,
        None => super::density_quantile(&head, &xs, &us, hyper.tau_quantile),
    };
    Ok(BcPhase { head, tau, history })
}

/// Joint optimisation of the dynamics loss and `lambda` times the barrier
/// loss. BC conditioning for contrastive sampling is looked up in the
/// frozen `snapshot` table, so the sampler does not chase the encoder.
#[allow(clippy::too_many_arguments)]
pub fn train_barrier_phase(
    ds: &Dataset,
    snapshot: &LatentTable,
    latent: &mut LatentModels,
    bc: &MixtureHead,
    tau: f64,
    cfg: &Config,
    mut on_step: impl FnMut(&JointStats),
) -> Result<(BarrierNet, Vec<JointStats>)> {
    let jc = &cfg.joint;
    let dc = &cfg.dynamics;
    let hyper = &cfg.idbf;
    hyper.validate()?;
    let dt = ds.config.dt;
    let bx = ds.config.action_box();
    let n_z = latent.arch.latent_dim;
    let m = latent.arch.action_dim;

    let mut init = ChaCha8Rng::seed_from_u64(derive_seed(jc.seed, "barrier-init"));
    let mut barrier = BarrierNet::new(n_z, &jc.barrier_hidden, &mut init);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(jc.seed, "joint-batches"));
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(jc.seed, "contrastive"));
    let mut adam_latent = AdamState::new(jc.lr);
    let mut adam_barrier = AdamState::new(jc.barrier_lr);

    let total_steps = jc.epochs * (ds.len() / dc.traj_per_batch.max(1)).max(1);
    let mut history = Vec::with_capacity(total_steps);
    for step in 0..total_steps {
        let batch = ds.sample_batch(dc.traj_per_batch, dc.windows_per_traj, dc.t_pred, &mut batch_rng)?;
        let mut tape = Tape::new();
        let bound = BoundLatent::bind(latent, &mut tape);
        let bb = barrier.bind(&mut tape);
        let terms = dyn_loss(&mut tape, &bound, ds, &batch, dc)?;
        let enc = &terms.encoded;

        let mut safe_rows = Vec::new();
        let mut pair_rows = Vec::new();
        let mut pair_ids = Vec::new();
        for (slot, &traj) in enc.trajs.iter().enumerate() {
            let len = ds.trajectories[traj].len();
            for t in 0..enc.steps.min(len + 1) {
                safe_rows.push(enc.row(slot, t));
                if t < len {
                    pair_rows.push(enc.row(slot, t));
                    pair_ids.push((traj, t));
                }
            }
        }
        let safe = tape.gather_rows(enc.latents, &safe_rows);
        let pair_x = tape.gather_rows(enc.latents, &pair_rows);
        let pu: Vec<f64> = pair_ids
            .iter()
            .flat_map(|&(i, t)| ds.trajectories[i].actions[t].iter().copied())
            .collect();
        let pair_u = tape.input(Tensor::matrix(pair_ids.len(), m, pu));

        let chosen: Vec<usize> = if jc.contrastive_states == 0 || jc.contrastive_states >= pair_ids.len() {
            (0..pair_ids.len()).collect()
        } else {
            let mut v = index::sample(&mut sample_rng, pair_ids.len(), jc.contrastive_states).into_vec();
            v.sort_unstable();
            v
        };
        let sampler = ContrastiveSampler {
            bc,
            dynamics: &latent.dynamics,
            action_box: &bx,
            n_candidate: hyper.n_candidate,
            tau,
            dt,
            substeps: dc.substeps,
        };
        let mut kept_rows = Vec::new();
        let mut kept_u = Vec::new();
        for &c in &chosen {
            let (traj, t) = pair_ids[c];
            for (u, _) in sampler.low_density_actions(snapshot.get(traj, t), &mut sample_rng) {
                kept_rows.push(pair_rows[c]);
                kept_u.extend(u);
            }
        }
        let n_unsafe = kept_rows.len();
        let unsafe_states = if n_unsafe == 0 {
            None
        } else if jc.detach_contrastive {
            let lat = tape.value(enc.latents);
            let mut flat = Vec::with_capacity(n_unsafe * n_z);
            for (k, &r) in kept_rows.iter().enumerate() {
                let u = kept_u[k * m..(k + 1) * m].to_vec();
                let next = integrate(&latent.dynamics, lat.row_slice(r), &[u], dt, 1, dc.substeps)?;
                flat.extend_from_slice(&next[1]);
            }
            Some(tape.input(Tensor::matrix(n_unsafe, n_z, flat)))
        } else {
            let x0 = tape.gather_rows(enc.latents, &kept_rows);
            let u = tape.input(Tensor::matrix(n_unsafe, m, kept_u));
            Some(integrate_tape(&mut tape, &bound.dynamics, x0, &[u], dt, dc.substeps)[1])
        };

        let ib = IdbfBatch {
            safe,
            unsafe_states,
            pair_x,
            pair_u,
        };
        let it = idbf_loss(&mut tape, &bb, &bound.dynamics, &ib, hyper);
        let weighted = tape.scale(it.total, jc.lambda);
        let total = tape.add(terms.total, weighted);

        let b_safe = tape.value(it.b_safe).data();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let stats = JointStats {
            step,
            dynamics: tape.value(terms.total).item(),
            barrier: tape.value(it.total).item(),
            safe: tape.value(it.safe).item(),
            unsafe_term: tape.value(it.unsafe_term).item(),
            ascent: tape.value(it.ascent).item(),
            n_unsafe,
            mean_b_safe: mean(b_safe),
            mean_b_unsafe: it.b_unsafe.map_or(f64::NAN, |v| mean(tape.value(v).data())),
            frac_safe_nonneg: b_safe.iter().filter(|b| **b >= 0.0).count() as f64 / b_safe.len().max(1) as f64,
        };
        let value = tape.value(total).item();
        if !value.is_finite() {
            return Err(Error::Diverged {
                phase: "joint".into(),
                step,
                detail: format!("dynamics loss {}, barrier loss {}", stats.dynamics, stats.barrier),
            });
        }
        let grads = tape.backward(total)?;
        let mut gl = collect_grads(&grads, &bound.vars());
        clip_global_norm(&mut gl, jc.clip_norm);
        let mut gb = collect_grads(&grads, &bb.vars());
        clip_global_norm(&mut gb, jc.clip_norm);
        adam_latent.step(&mut latent.tensors_mut(), &gl)?;
        adam_barrier.step(&mut barrier.tensors_mut(), &gb)?;
        on_step(&stats);
        history.push(stats);
    }
    Ok((barrier, history))
}

/// Progress events of [`train_joint`].
#[derive(Clone, Copy, Debug)]
pub enum Progress<'a> {
    Dynamics(&'a StepStats),
    BcEpoch { epoch: usize, nll: f64 },
    Joint(&'a JointStats),
}

impl std::fmt::Display for Progress<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Progress::Dynamics(s) => write!(
                f,
                "dyn {:>5} total {:.5} state {:.5} rec {:.5}/{:.5}",
                s.step, s.total, s.state, s.rec1, s.rec2
            ),
            Progress::BcEpoch { epoch, nll } => write!(f, "bc epoch {epoch:>3} nll {nll:.4}"),
            Progress::Joint(s) => write!(
                f,
                "joint {:>5} dyn {:.5} barrier {:.4} (safe {:.4} unsafe {:.4} ascent {:.4}) B+ {:.3} B- {:.3} n- {}",
                s.step,
                s.dynamics,
                s.barrier,
                s.safe,
                s.unsafe_term,
                s.ascent,
                s.mean_b_safe,
                s.mean_b_unsafe,
                s.n_unsafe
            ),
        }
    }
}

/// Phase A (dynamics only), phase B (latent BC on a frozen encoder
/// snapshot) and phase C (joint dynamics and barrier training).
pub fn train_joint(ds: &Dataset, cfg: &Config, mut progress: impl FnMut(Progress)) -> Result<ModelBundle> {
    cfg.validate()?;
    let mut init = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "latent-init"));
    let mut latent = LatentModels::new(&cfg.arch, &mut init);
    train_dynamics(&mut latent, ds, &cfg.dynamics, |s| progress(Progress::Dynamics(s)))?;

    let snapshot = encode_dataset(&latent.encoder, ds);
    let bc = train_bc_phase(ds, &snapshot, &cfg.bc, &cfg.idbf)?;
    for (epoch, &nll) in bc.history.iter().enumerate() {
        progress(Progress::BcEpoch { epoch, nll });
    }

    let (barrier, _) = train_barrier_phase(ds, &snapshot, &mut latent, &bc.head, bc.tau, cfg, |s| {
        progress(Progress::Joint(s))
    })?;
    let mut bundle = ModelBundle::new(ds.config.clone(), latent, cfg.dynamics.substeps);
    bundle.bc = Some(bc.head);
    bundle.tau_bc = Some(bc.tau);
    bundle.barrier = Some(barrier);
    bundle.alpha = cfg.idbf.alpha;
    Ok(bundle)
}
