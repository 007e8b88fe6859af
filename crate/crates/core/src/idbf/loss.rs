use super::IdbfHyper;
use crate::diffnet::{BoundMlp, Tape, Tensor, Var};
use crate::latentdyn::LatentFlow;

/// Tape inputs of the barrier loss. `pair_x` / `pair_u` are the dataset's
/// own (state, action) pairs.
pub struct IdbfBatch {
    /// `[n_safe, n_z]`
    pub safe: Var,
    /// `[n_unsafe, n_z]`, absent when no contrastive sample was kept.
    pub unsafe_states: Option<Var>,
    pub pair_x: Var,
    pub pair_u: Var,
}

pub struct IdbfLossTerms {
    pub total: Var,
    /// `B` at the safe states, `[n_safe, 1]`.
    pub b_safe: Var,
    pub b_unsafe: Option<Var>,
    pub safe: Var,
    pub unsafe_term: Var,
    pub ascent: Var,
}

fn hinge_mean(tape: &mut Tape, margin_minus: Var, weight: f64) -> Var {
    let h = tape.hinge(margin_minus);
    let m = tape.mean(h);
    tape.scale(m, weight)
}

/// Three hinge terms: safe states above `eps_safe`, contrastive states
/// below `-eps_unsafe`, and along dataset actions
/// `grad B . (f + g u) + alpha B >= eps_ascent`. The directional derivative
/// is taken with a forward-mode tangent that stays on the tape.
pub fn idbf_loss(
    tape: &mut Tape,
    barrier: &BoundMlp,
    flow: &impl LatentFlow,
    batch: &IdbfBatch,
    hyper: &IdbfHyper,
) -> IdbfLossTerms {
    let b_safe = barrier.forward(tape, batch.safe);
    let neg = tape.scale(b_safe, -1.0);
    let arg = tape.offset(neg, hyper.eps_safe);
    let safe = hinge_mean(tape, arg, hyper.w_safe);

    let (unsafe_term, b_unsafe) = match batch.unsafe_states {
        Some(x) if tape.value(x).rows() > 0 => {
            let b = barrier.forward(tape, x);
            let arg = tape.offset(b, hyper.eps_unsafe);
            (hinge_mean(tape, arg, hyper.w_unsafe), Some(b))
        }
        _ => (tape.input(Tensor::scalar(0.0)), None),
    };

    let xdot = flow.xdot(tape, batch.pair_x, batch.pair_u);
    let (b, db) = barrier.forward_with_tangent(tape, batch.pair_x, xdot);
    let ab = tape.scale(b, hyper.alpha);
    let lhs = tape.add(db, ab);
    let neg = tape.scale(lhs, -1.0);
    let arg = tape.offset(neg, hyper.eps_ascent);
    let ascent = hinge_mean(tape, arg, hyper.w_ascent);

    let t = tape.add(safe, unsafe_term);
    let total = tape.add(t, ascent);
    IdbfLossTerms {
        total,
        b_safe,
        b_unsafe,
        safe,
        unsafe_term,
        ascent,
    }
}
