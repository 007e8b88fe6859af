use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{dyn_loss, frames_to_unit, integrate_tape, BoundLatent, DynModel, DynTrainConfig, Encoder, LatentArch, LatentModels};
use crate::dataset::{Dataset, WindowBatch};
use crate::diffnet::{clip_global_norm, collect_grads, AdamState, Module, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

/// Latent state of every frame of every trajectory under a fixed encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTable {
    pub latents: Vec<Vec<Vec<f64>>>,
}

impl LatentTable {
    pub fn get(&self, traj: usize, t: usize) -> &[f64] {
        &self.latents[traj][t]
    }

    pub fn iter_frames(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.latents.iter().flatten()
    }
}

pub fn encode_dataset(encoder: &Encoder, ds: &Dataset) -> LatentTable {
    let latents = ds
        .trajectories
        .iter()
        .map(|tr| {
            let frames: Vec<Vec<f64>> = tr.observations.iter().map(|o| frames_to_unit(&[o])).collect();
            encoder.encode_sequence(&frames, &tr.actions)
        })
        .collect();
    LatentTable { latents }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub total: f64,
    pub state: f64,
    pub rec1: f64,
    pub rec2: f64,
}

pub(crate) fn batches_per_epoch(ds: &Dataset, traj_per_batch: usize) -> usize {
    (ds.len() / traj_per_batch.max(1)).max(1)
}

pub(crate) fn check_finite(phase: &str, step: usize, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            phase: phase.into(),
            step,
            detail: format!("loss = {value}"),
        })
    }
}

/// Pixelwise mean of every frame of `ds` at half resolution.
pub fn mean_half_frame(ds: &Dataset) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for tr in &ds.trajectories {
        let frames: Vec<&crate::envnav::Observation> = tr.observations.iter().collect();
        let (pooled, _) = super::loss::pool_blocks(&frames);
        if sum.is_empty() {
            sum = vec![0.0; pooled.len() / frames.len()];
        }
        for chunk in pooled.chunks(sum.len()) {
            for (s, v) in sum.iter_mut().zip(chunk) {
                *s += v;
            }
        }
        count += frames.len();
    }
    sum.iter().map(|s| s / count.max(1) as f64).collect()
}

/// Trains encoder, decoder and dynamics on the multiple-shooting loss alone.
/// `on_step` sees every step's loss terms.
pub fn train_dynamics(
    models: &mut LatentModels,
    ds: &Dataset,
    cfg: &DynTrainConfig,
    mut on_step: impl FnMut(&StepStats),
) -> Result<Vec<StepStats>> {
    cfg.validate()?;
    models.decoder.init_output_bias(&mean_half_frame(ds));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dyn-batches"));
    let mut adam = AdamState::new(cfg.lr);
    let total_steps = cfg.epochs * batches_per_epoch(ds, cfg.traj_per_batch);
    let mut history = Vec::with_capacity(total_steps);
    for step in 0..total_steps {
        let batch = ds.sample_batch(cfg.traj_per_batch, cfg.windows_per_traj, cfg.t_pred, &mut rng)?;
        let mut tape = Tape::new();
        let bound = BoundLatent::bind(models, &mut tape);
        let step_cfg = DynTrainConfig {
            w_state: cfg.w_state_at(step),
            ..cfg.clone()
        };
        let terms = dyn_loss(&mut tape, &bound, ds, &batch, &step_cfg)?;
        let stats = StepStats {
            step,
            total: tape.value(terms.total).item(),
            state: tape.value(terms.state).item(),
            rec1: tape.value(terms.rec1).item(),
            rec2: tape.value(terms.rec2).item(),
        };
        check_finite("dynamics", step, stats.total)?;
        let grads = tape.backward(terms.total)?;
        let mut g = collect_grads(&grads, &bound.vars());
        clip_global_norm(&mut g, cfg.clip_norm);
        adam.step(&mut models.tensors_mut(), &g)?;
        on_step(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// State-prediction loss of one dynamics model on table latents.
pub(crate) fn table_state_loss(
    tape: &mut Tape,
    model: &DynModel,
    table: &LatentTable,
    ds: &Dataset,
    batch: &WindowBatch,
    substeps: usize,
) -> (Var, Vec<Var>) {
    let bound = model.bind(tape);
    let n = model.latent_dim;
    let m = model.action_dim;
    let nw = batch.windows.len();
    let horizon = batch.windows[0].len;
    let x0: Vec<f64> = batch.windows.iter().flat_map(|w| table.get(w.traj, w.start).to_vec()).collect();
    let x0 = tape.input(Tensor::matrix(nw, n, x0));
    let acts: Vec<Var> = (0..horizon)
        .map(|k| {
            let a: Vec<f64> = batch
                .windows
                .iter()
                .flat_map(|w| ds.trajectories[w.traj].actions[w.start + k].clone())
                .collect();
            tape.input(Tensor::matrix(nw, m, a))
        })
        .collect();
    let pred = integrate_tape(tape, &bound, x0, &acts, ds.config.dt, substeps);
    let pred = tape.concat_rows(&pred);
    let target: Vec<f64> = (0..=horizon)
        .flat_map(|k| batch.windows.iter().flat_map(move |w| table.get(w.traj, w.start + k).to_vec()))
        .collect();
    let target = tape.input(Tensor::matrix(nw * (horizon + 1), n, target));
    let d = tape.sub(pred, target);
    let s = tape.square(d);
    let sum = tape.sum(s);
    let loss = tape.scale(sum, 1.0 / (nw * (horizon + 1)) as f64);
    (loss, bound.vars())
}

/// Trains `members` independently initialised dynamics models on the state
/// term only, with latents taken from a frozen encoder's `table`.
pub fn train_ensemble(
    table: &LatentTable,
    ds: &Dataset,
    arch: &LatentArch,
    cfg: &DynTrainConfig,
    members: usize,
) -> Result<Vec<DynModel>> {
    if members < 2 {
        return Err(Error::EnsembleTooSmall(members));
    }
    cfg.validate()?;
    let base = derive_seed(cfg.seed, "ensemble");
    let total_steps = cfg.epochs * batches_per_epoch(ds, cfg.traj_per_batch);
    let mut out = Vec::with_capacity(members);
    for i in 0..members {
        let mut rng = stream(base, i as u64);
        let mut model = DynModel::new(arch, &mut rng);
        let mut adam = AdamState::new(cfg.lr);
        for step in 0..total_steps {
            let batch = ds.sample_batch(cfg.traj_per_batch, cfg.windows_per_traj, cfg.t_pred, &mut rng)?;
            let mut tape = Tape::new();
            let (loss, vars) = table_state_loss(&mut tape, &model, table, ds, &batch, cfg.substeps);
            check_finite(&format!("ensemble member {i}"), step, tape.value(loss).item())?;
            let grads = tape.backward(loss)?;
            let mut g = collect_grads(&grads, &vars);
            clip_global_norm(&mut g, cfg.clip_norm);
            adam.step(&mut model.tensors_mut(), &g)?;
        }
        out.push(model);
    }
    Ok(out)
}
