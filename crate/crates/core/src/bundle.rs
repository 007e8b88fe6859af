//! All trained models of one pipeline run, persisted as a checkpoint
//! directory `model/` plus one directory per ensemble member
//! (`ensemble/member_00/`, ...). Fields that a stage has not produced yet
//! are simply absent.

use std::path::Path;

use crate::bcpolicy::MixtureHead;
use crate::diffnet::Checkpoint;
use crate::envnav::NavConfig;
use crate::error::{Error, Result};
use crate::idbf::BarrierNet;
use crate::latentdyn::{DynModel, LatentModels};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub env: NavConfig,
    pub latent: LatentModels,
    /// RK4 substeps per control interval used in training.
    pub substeps: usize,
    /// Latent-conditioned BC density and its contrastive threshold.
    pub bc: Option<MixtureHead>,
    pub tau_bc: Option<f64>,
    pub barrier: Option<BarrierNet>,
    /// Class-K gain, `gamma(B) = alpha * B`.
    pub alpha: f64,
    /// Privileged-state BC density for the baseline filter.
    pub baseline_bc: Option<MixtureHead>,
    pub ensemble: Vec<DynModel>,
}

impl ModelBundle {
    pub fn new(env: NavConfig, latent: LatentModels, substeps: usize) -> Self {
        Self {
            env,
            latent,
            substeps,
            bc: None,
            tau_bc: None,
            barrier: None,
            alpha: 1.0,
            baseline_bc: None,
            ensemble: Vec::new(),
        }
    }

    pub fn require_barrier(&self) -> Result<&BarrierNet> {
        self.barrier
            .as_ref()
            .ok_or_else(|| Error::Config("model bundle has no trained barrier".into()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        let e = &self.env;
        ck.set_meta("env.room_size", e.room_size);
        ck.set_meta("env.obstacle_size", e.obstacle_size);
        ck.set_meta("env.robot_radius", e.robot_radius);
        ck.set_meta("env.dt", e.dt);
        ck.set_meta("env.v_max", e.v_max);
        ck.set_meta("env.image_size", e.image_size);
        ck.set_meta("env.ref_gain", e.ref_gain);
        ck.set_meta("env_hash", e.hash());
        ck.set_meta("substeps", self.substeps);
        ck.set_meta("alpha", self.alpha);
        ck.set_meta("ensemble_size", self.ensemble.len());
        self.latent.save_into(&mut ck);
        if let Some(bc) = &self.bc {
            bc.save_into(&mut ck, "bc");
        }
        if let Some(t) = self.tau_bc {
            ck.set_meta("tau_bc", t);
        }
        if let Some(b) = &self.barrier {
            b.save_into(&mut ck);
        }
        if let Some(bc) = &self.baseline_bc {
            bc.save_into(&mut ck, "baseline_bc");
        }
        ck.save(&dir.join("model"))?;
        for (i, m) in self.ensemble.iter().enumerate() {
            let mut ek = Checkpoint::new();
            ek.set_meta("latent_dim", m.latent_dim);
            ek.set_meta("action_dim", m.action_dim);
            ek.put_mlp("f", &m.f);
            ek.put_mlp("g", &m.g);
            ek.save(&dir.join("ensemble").join(format!("member_{i:02}")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let model_dir = dir.join("model");
        if !model_dir.join("manifest.txt").exists() {
            return Err(Error::MissingCheckpoint(model_dir));
        }
        let ck = Checkpoint::load(&model_dir)?;
        let env = NavConfig {
            room_size: ck.meta_parse("env.room_size")?,
            obstacle_size: ck.meta_parse("env.obstacle_size")?,
            robot_radius: ck.meta_parse("env.robot_radius")?,
            dt: ck.meta_parse("env.dt")?,
            v_max: ck.meta_parse("env.v_max")?,
            image_size: ck.meta_parse("env.image_size")?,
            ref_gain: ck.meta_parse("env.ref_gain")?,
        };
        let stored = ck.meta("env_hash")?.to_string();
        if stored != env.hash() {
            return Err(Error::ConfigHash {
                stored,
                current: env.hash(),
            });
        }
        let has = |prefix: &str| ck.meta(&format!("{prefix}.components")).is_ok();
        let mut bundle = Self::new(env, LatentModels::load_from(&ck)?, ck.meta_parse("substeps")?);
        bundle.alpha = ck.meta_parse("alpha")?;
        if has("bc") {
            bundle.bc = Some(MixtureHead::load_from(&ck, "bc")?);
        }
        if ck.meta("tau_bc").is_ok() {
            bundle.tau_bc = Some(ck.meta_parse("tau_bc")?);
        }
        if ck.meta("activation.barrier").is_ok() {
            bundle.barrier = Some(BarrierNet::load_from(&ck)?);
        }
        if has("baseline_bc") {
            bundle.baseline_bc = Some(MixtureHead::load_from(&ck, "baseline_bc")?);
        }
        let members: usize = ck.meta_parse("ensemble_size")?;
        for i in 0..members {
            let p = dir.join("ensemble").join(format!("member_{i:02}"));
            if !p.join("manifest.txt").exists() {
                return Err(Error::MissingCheckpoint(p));
            }
            let ek = Checkpoint::load(&p)?;
            bundle.ensemble.push(DynModel {
                f: ek.get_mlp("f")?,
                g: ek.get_mlp("g")?,
                latent_dim: ek.meta_parse("latent_dim")?,
                action_dim: ek.meta_parse("action_dim")?,
            });
        }
        Ok(bundle)
    }
}
