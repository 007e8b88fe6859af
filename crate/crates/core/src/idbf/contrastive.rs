use rand::Rng;

use super::IdbfHyper;
use crate::bcpolicy::{bc_density, MixtureHead};
use crate::envnav::ActionBox;
use crate::error::{Error, Result};
use crate::latentdyn::{integrate, DynModel};

/// A low-density action and the latent state one control interval later.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveSample {
    pub action: Vec<f64>,
    pub density: f64,
    pub state: Vec<f64>,
}

pub struct ContrastiveSampler<'a> {
    pub bc: &'a MixtureHead,
    pub dynamics: &'a DynModel,
    pub action_box: &'a ActionBox,
    pub n_candidate: usize,
    pub tau: f64,
    pub dt: f64,
    pub substeps: usize,
}

impl ContrastiveSampler<'_> {
    /// Draws `n_candidate` uniform box actions and keeps those whose BC
    /// density at `bc_input` is below the threshold, with their densities.
    /// Always consumes the same amount of randomness.
    pub fn low_density_actions(&self, bc_input: &[f64], rng: &mut impl Rng) -> Vec<(Vec<f64>, f64)> {
        let mix = self.bc.mixture(bc_input);
        (0..self.n_candidate)
            .filter_map(|_| {
                let u = self.action_box.sample(rng);
                let p = mix.density(&self.action_box.normalize(&u));
                (p < self.tau).then_some((u, p))
            })
            .collect()
    }

    /// Contrastive states around `x_safe`. The BC model is conditioned on
    /// `bc_input`, which is `x_safe` itself unless the caller keeps a
    /// separate conditioning table.
    pub fn sample(&self, x_safe: &[f64], bc_input: &[f64], rng: &mut impl Rng) -> Result<Vec<ContrastiveSample>> {
        self.low_density_actions(bc_input, rng)
            .into_iter()
            .map(|(action, density)| {
                let next = integrate(self.dynamics, x_safe, std::slice::from_ref(&action), self.dt, 1, self.substeps)?;
                Ok(ContrastiveSample {
                    action,
                    density,
                    state: next[1].clone(),
                })
            })
            .collect()
    }
}

/// Contrastive latents for one safe state, conditioning BC on the state.
/// `hyper.tau_bc` must be set.
pub fn contrastive_sample(
    x_safe: &[f64],
    bc: &MixtureHead,
    dynamics: &DynModel,
    hyper: &IdbfHyper,
    action_box: &ActionBox,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    let tau = hyper
        .tau_bc
        .ok_or_else(|| Error::Config("density threshold tau_bc is not set".into()))?;
    let sampler = ContrastiveSampler {
        bc,
        dynamics,
        action_box,
        n_candidate: hyper.n_candidate,
        tau,
        dt,
        substeps: 1,
    };
    Ok(sampler.sample(x_safe, x_safe, rng)?.into_iter().map(|s| s.state).collect())
}

/// Empirical `q`-quantile (lower interpolation) of the BC density over
/// `(state, normalised action)` pairs.
pub fn density_quantile(bc: &MixtureHead, states: &[Vec<f64>], actions: &[Vec<f64>], q: f64) -> f64 {
    let mut d: Vec<f64> = states.iter().zip(actions).map(|(x, u)| bc_density(bc, u, x)).collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    d[((d.len() - 1) as f64 * q).floor() as usize]
}
