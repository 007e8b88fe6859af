use super::{BoundDecoder, BoundDyn, BoundEncoder, DynTrainConfig, LatentModels};
use crate::dataset::{Dataset, WindowBatch};
use crate::diffnet::{Tape, Tensor, Var};
use crate::envnav::Observation;
use crate::error::{Error, Result};

/// All latent-model parameters bound to one tape.
pub struct BoundLatent {
    pub encoder: BoundEncoder,
    pub decoder: BoundDecoder,
    pub dynamics: BoundDyn,
}

impl BoundLatent {
    pub fn bind(models: &LatentModels, tape: &mut Tape) -> Self {
        Self {
            encoder: models.encoder.bind(tape),
            decoder: models.decoder.bind(tape),
            dynamics: models.dynamics.bind(tape),
        }
    }

    /// Same order as `Module::tensors` on [`LatentModels`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars();
        v.extend(self.decoder.vars());
        v.extend(self.dynamics.vars());
        v
    }
}

/// Encoded prefixes of the trajectories touched by a batch.
pub struct EncodedBatch {
    /// `[steps * b, n_z]`, time-major: row `t * b + slot`.
    pub latents: Var,
    /// Dataset index of each slot.
    pub trajs: Vec<usize>,
    pub steps: usize,
}

impl EncodedBatch {
    pub fn row(&self, slot: usize, t: usize) -> usize {
        t * self.trajs.len() + slot
    }

    pub fn slot_of(&self, traj: usize) -> usize {
        self.trajs.iter().position(|&t| t == traj).expect("trajectory in batch")
    }
}

pub struct DynLossTerms {
    pub total: Var,
    pub state: Var,
    pub rec1: Var,
    pub rec2: Var,
    pub encoded: EncodedBatch,
}

/// Frames as `[0, 1]` floats, concatenated.
pub fn frames_to_unit(frames: &[&Observation]) -> Vec<f64> {
    let mut out = Vec::with_capacity(frames.iter().map(|f| f.pixels.len()).sum());
    for f in frames {
        out.extend(f.pixels.iter().map(|&p| p as f64 / 255.0));
    }
    out
}

/// 2x2 block means of each frame in `[0, 1]` units, and the mean squared
/// deviation of the pixels from their block mean.
pub(crate) fn pool_blocks(frames: &[&Observation]) -> (Vec<f64>, f64) {
    let s = frames[0].size;
    let h = s / 2;
    let mut pooled = Vec::with_capacity(frames.len() * h * h * 3);
    let mut spread = 0.0;
    for f in frames {
        for by in 0..h {
            for bx in 0..h {
                for c in 0..3 {
                    let px = |dy: usize, dx: usize| {
                        f.pixels[((2 * by + dy) * s + 2 * bx + dx) * 3 + c] as f64 / 255.0
                    };
                    let v = [px(0, 0), px(0, 1), px(1, 0), px(1, 1)];
                    let mean = v.iter().sum::<f64>() / 4.0;
                    spread += v.iter().map(|p| (p - mean).powi(2)).sum::<f64>();
                    pooled.push(mean);
                }
            }
        }
    }
    let count = (frames.len() * s * s * 3) as f64;
    (pooled, spread / count)
}

/// Multiple-shooting loss over the windows of `batch`.
///
/// Each window starts from the latent state produced by encoding its whole
/// trajectory prefix. The mean is over windows and over `k = 0..=t_pred`;
/// image residuals are averaged over pixels and channels.
pub fn dyn_loss(
    tape: &mut Tape,
    bound: &BoundLatent,
    ds: &Dataset,
    batch: &WindowBatch,
    cfg: &DynTrainConfig,
) -> Result<DynLossTerms> {
    if batch.windows.is_empty() {
        return Err(Error::Config("empty window batch".into()));
    }
    let trajs = batch.trajectories();
    let b = trajs.len();
    let steps = batch.windows.iter().map(|w| w.end()).max().unwrap_or(0) + 1;
    let m = ds.trajectories[trajs[0]].actions[0].len();

    let mut frames = Vec::with_capacity(steps * b);
    let mut actions = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut a = Vec::with_capacity(b * m);
        for &i in &trajs {
            let tr = &ds.trajectories[i];
            frames.push(&tr.observations[t.min(tr.len())]);
            match tr.actions.get(t) {
                Some(u) => a.extend_from_slice(u),
                None => a.extend(std::iter::repeat_n(0.0, m)),
            }
        }
        actions.push(tape.input(Tensor::matrix(b, m, a)));
    }
    let pix = frames[0].pixels.len();
    let images = tape.input(Tensor::matrix(steps * b, pix, frames_to_unit(&frames)));
    let latents = bound.encoder.encode_sequences(tape, images, &actions, b);
    let encoded = EncodedBatch { latents, trajs, steps };

    let horizon = batch.windows[0].len;
    if batch.windows.iter().any(|w| w.len != horizon) {
        return Err(Error::Config("windows of one batch must share their length".into()));
    }
    let nw = batch.windows.len();
    let slots: Vec<usize> = batch.windows.iter().map(|w| encoded.slot_of(w.traj)).collect();
    let rows_at = |k: usize| -> Vec<usize> {
        batch
            .windows
            .iter()
            .zip(&slots)
            .map(|(w, &s)| encoded.row(s, w.start + k))
            .collect()
    };
    let x0 = tape.gather_rows(latents, &rows_at(0));
    let mut win_actions = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let mut a = Vec::with_capacity(nw * m);
        for w in &batch.windows {
            a.extend_from_slice(&ds.trajectories[w.traj].actions[w.start + k]);
        }
        win_actions.push(tape.input(Tensor::matrix(nw, m, a)));
    }
    let pred = super::integrate_tape(tape, &bound.dynamics, x0, &win_actions, ds.config.dt, cfg.substeps);
    let pred_all = tape.concat_rows(&pred);
    let target_rows: Vec<usize> = (0..=horizon).flat_map(|k| rows_at(k)).collect();
    let target = tape.gather_rows(latents, &target_rows);

    let count = (nw * (horizon + 1)) as f64;
    let diff = tape.sub(pred_all, target);
    let sq = tape.square(diff);
    let state_sum = tape.sum(sq);
    let state = tape.scale(state_sum, 1.0 / count);

    let mut target_frames = Vec::with_capacity(target_rows.len());
    for k in 0..=horizon {
        for w in &batch.windows {
            target_frames.push(&ds.trajectories[w.traj].observations[w.start + k]);
        }
    }
    // The decoder upsamples by pixel repetition, so the full-resolution
    // mean squared error equals the error against 2x2 block means plus the
    // mean within-block variance of the target, which does not depend on
    // the parameters.
    let (pooled, spread) = pool_blocks(&target_frames);
    let truth = tape.input(Tensor::matrix(target_rows.len(), pix / 4, pooled));
    let rec_term = |tape: &mut Tape, x: Var| {
        let img = bound.decoder.decode_half(tape, x);
        let d = tape.sub(img, truth);
        let s = tape.square(d);
        let m = tape.mean(s);
        tape.offset(m, spread)
    };
    let rec1 = rec_term(tape, pred_all);
    let rec2 = rec_term(tape, target);

    let a = tape.scale(state, cfg.w_state);
    let b1 = tape.scale(rec1, cfg.w_rec1);
    let b2 = tape.scale(rec2, cfg.w_rec2);
    let t = tape.add(a, b1);
    let total = tape.add(t, b2);
    Ok(DynLossTerms {
        total,
        state,
        rec1,
        rec2,
        encoded,
    })
}
