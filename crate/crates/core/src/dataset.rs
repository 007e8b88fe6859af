//! Safe demonstration trajectories: collection, persistence and batching.
//!
//! On disk a dataset is a directory with `manifest.txt` plus, per
//! trajectory `i`, the files `traj_{i:05}.obs` (raw RGB bytes of all
//! frames), `traj_{i:05}.act` (little-endian f64 actions) and optionally
//! `traj_{i:05}.state` (little-endian f64 privileged positions).

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffnet::{parse_kv, read_f64_blob, write_f64_blob};
use crate::envnav::{self, NavConfig, NavState, Observation};
use crate::error::{Error, Result};
use crate::rng::stream;

pub const DATASET_VERSION: u32 = 1;
const MAX_ATTEMPTS: usize = 1_000_000;
const MIN_ACCEPTANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `T + 1` frames.
    pub observations: Vec<Observation>,
    /// `T` actions; `actions[t]` is applied between frame `t` and `t + 1`.
    pub actions: Vec<Vec<f64>>,
    pub dt: f64,
    /// `T + 1` true positions; only the privileged baseline reads these.
    pub states: Option<Vec<NavState>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.observations.len() != self.actions.len() + 1 {
            return Err(Error::CountMismatch {
                context: "trajectory frames".into(),
                expected: self.actions.len() + 1,
                found: self.observations.len(),
            });
        }
        if let Some(s) = &self.states {
            if s.len() != self.observations.len() {
                return Err(Error::CountMismatch {
                    context: "trajectory states".into(),
                    expected: self.observations.len(),
                    found: s.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: NavConfig,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

/// Rolls out i.i.d. uniform box actions from uniformly sampled safe starts
/// and keeps only rollouts whose every state is safe, until `n` are kept.
pub fn collect_random(cfg: &NavConfig, n: usize, horizon: usize, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if n == 0 || horizon == 0 {
        return Err(Error::Config("need at least one trajectory of length one".into()));
    }
    let bx = cfg.action_box();
    let mut trajectories = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while trajectories.len() < n {
        if attempts >= MAX_ATTEMPTS
            && (trajectories.len() as f64) < MIN_ACCEPTANCE * attempts as f64
        {
            return Err(Error::LowAcceptance {
                accepted: trajectories.len(),
                attempts,
            });
        }
        let mut rng: ChaCha8Rng = stream(seed, attempts as u64);
        attempts += 1;

        let mut s = envnav::sample_safe_state(cfg, &mut rng);
        let mut states = vec![s];
        let mut actions = Vec::with_capacity(horizon);
        let mut safe = true;
        for _ in 0..horizon {
            let u = bx.sample(&mut rng);
            s = envnav::step(s, &u, cfg).0;
            if envnav::is_unsafe(s, cfg) {
                safe = false;
                break;
            }
            states.push(s);
            actions.push(u);
        }
        if !safe {
            continue;
        }
        let observations = states.iter().map(|&s| envnav::render(s, cfg)).collect();
        trajectories.push(Trajectory {
            observations,
            actions,
            dt: cfg.dt,
            states: Some(states),
        });
    }
    Ok(Dataset {
        config: cfg.clone(),
        seed,
        trajectories,
    })
}

/// One multiple-shooting window: frames `start ..= start + len` of a
/// trajectory and the `len` actions between them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub traj: usize,
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub windows: Vec<Window>,
}

impl WindowBatch {
    /// Distinct trajectories in first-seen order.
    pub fn trajectories(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for w in &self.windows {
            if !out.contains(&w.traj) {
                out.push(w.traj);
            }
        }
        out
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn frame_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.observations.len()).sum()
    }

    pub fn pair_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Re-checks every stored privileged state against the safety label.
    pub fn all_states_safe(&self) -> bool {
        self.trajectories.iter().all(|t| {
            t.states
                .as_ref()
                .is_some_and(|s| s.iter().all(|&x| !envnav::is_unsafe(x, &self.config)))
        })
    }

    /// Deterministic split: the last `holdout` trajectories form the second set.
    pub fn split(&self, holdout: usize) -> (Dataset, Dataset) {
        let cut = self.len().saturating_sub(holdout);
        let mk = |ts: &[Trajectory]| Dataset {
            config: self.config.clone(),
            seed: self.seed,
            trajectories: ts.to_vec(),
        };
        (mk(&self.trajectories[..cut]), mk(&self.trajectories[cut..]))
    }

    /// Samples `n_traj` distinct trajectories and `per_traj` uniformly placed
    /// windows of `len` steps in each.
    pub fn sample_batch(
        &self,
        n_traj: usize,
        per_traj: usize,
        len: usize,
        rng: &mut impl Rng,
    ) -> Result<WindowBatch> {
        let min_len = self.trajectories.iter().map(Trajectory::len).min().unwrap_or(0);
        if len == 0 || len > min_len {
            return Err(Error::Config(format!(
                "window length {len} must be in 1..={min_len}"
            )));
        }
        let picks = index::sample(rng, self.len(), n_traj.min(self.len())).into_vec();
        let mut windows = Vec::with_capacity(picks.len() * per_traj);
        for traj in picks {
            let t = self.trajectories[traj].len();
            for _ in 0..per_traj {
                let start = rng.random_range(0..=t - len);
                windows.push(Window { traj, start, len });
            }
        }
        Ok(WindowBatch { windows })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let c = &self.config;
        let lengths: Vec<String> = self.trajectories.iter().map(|t| t.len().to_string()).collect();
        let has_states = self.trajectories.iter().all(|t| t.states.is_some());
        let manifest = format!(
            "format_version = {DATASET_VERSION}\n\
             count = {}\n\
             lengths = {}\n\
             seed = {}\n\
             env_hash = {}\n\
             has_states = {has_states}\n\
             env.room_size = {:e}\n\
             env.obstacle_size = {:e}\n\
             env.robot_radius = {:e}\n\
             env.dt = {:e}\n\
             env.v_max = {:e}\n\
             env.image_size = {}\n\
             env.ref_gain = {:e}\n",
            self.len(),
            lengths.join(","),
            self.seed,
            c.hash(),
            c.room_size,
            c.obstacle_size,
            c.robot_radius,
            c.dt,
            c.v_max,
            c.image_size,
            c.ref_gain,
        );
        for (i, t) in self.trajectories.iter().enumerate() {
            t.validate()?;
            let mut bytes = Vec::with_capacity(t.observations.len() * c.frame_len());
            for o in &t.observations {
                bytes.extend_from_slice(&o.pixels);
            }
            let p = dir.join(format!("traj_{i:05}.obs"));
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
            let acts: Vec<f64> = t.actions.iter().flatten().copied().collect();
            write_f64_blob(&dir.join(format!("traj_{i:05}.act")), &acts)?;
            if let (true, Some(s)) = (has_states, &t.states) {
                let flat: Vec<f64> = s.iter().flat_map(|x| x.pos).collect();
                write_f64_blob(&dir.join(format!("traj_{i:05}.state")), &flat)?;
            }
        }
        let mp = dir.join("manifest.txt");
        fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))
    }

    /// Loads a dataset and checks it was rendered under `expected` (when given).
    pub fn load_checked(dir: &Path, expected: Option<&NavConfig>) -> Result<Dataset> {
        let ds = Self::load(dir)?;
        if let Some(cfg) = expected {
            if cfg.hash() != ds.config.hash() {
                return Err(Error::ConfigHash {
                    stored: ds.config.hash(),
                    current: cfg.hash(),
                });
            }
        }
        Ok(ds)
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let mp = dir.join("manifest.txt");
        let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let kv = parse_kv(&text, &mp)?;
        let get = |k: &str| {
            kv.get(k).ok_or_else(|| Error::Manifest {
                path: mp.clone(),
                detail: format!("missing key '{k}'"),
            })
        };
        let bad = |k: &str| Error::Manifest {
            path: mp.clone(),
            detail: format!("malformed value for '{k}'"),
        };
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(k)) };
        let int = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(k)) };

        let version = int("format_version")? as u32;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                path: mp,
                expected: DATASET_VERSION,
                found: version,
            });
        }
        let config = NavConfig {
            room_size: num("env.room_size")?,
            obstacle_size: num("env.obstacle_size")?,
            robot_radius: num("env.robot_radius")?,
            dt: num("env.dt")?,
            v_max: num("env.v_max")?,
            image_size: int("env.image_size")? as usize,
            ref_gain: num("env.ref_gain")?,
        };
        let stored_hash = get("env_hash")?.clone();
        if stored_hash != config.hash() {
            return Err(Error::ConfigHash {
                stored: stored_hash,
                current: config.hash(),
            });
        }
        let count = int("count")? as usize;
        let lengths: Vec<usize> = get("lengths")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().parse().map_err(|_| bad("lengths")))
            .collect::<Result<_>>()?;
        if lengths.len() != count {
            return Err(Error::CountMismatch {
                context: "manifest lengths".into(),
                expected: count,
                found: lengths.len(),
            });
        }
        let blobs = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".obs"))
            .count();
        if blobs != count {
            return Err(Error::CountMismatch {
                context: "observation blobs".into(),
                expected: count,
                found: blobs,
            });
        }
        let has_states = get("has_states")? == "true";
        let frame = config.frame_len();
        let m = envnav::ACTION_DIM;
        let mut trajectories = Vec::with_capacity(count);
        for (i, &t) in lengths.iter().enumerate() {
            let op = dir.join(format!("traj_{i:05}.obs"));
            let bytes = fs::read(&op).map_err(|e| Error::io(&op, e))?;
            if bytes.len() != (t + 1) * frame {
                return Err(Error::CorruptBlob {
                    path: op,
                    detail: format!("expected {} bytes, found {}", (t + 1) * frame, bytes.len()),
                });
            }
            let observations = bytes
                .chunks_exact(frame)
                .map(|c| Observation {
                    size: config.image_size,
                    pixels: c.to_vec(),
                })
                .collect();
            let acts = read_f64_blob(&dir.join(format!("traj_{i:05}.act")), t * m)?;
            let actions = acts.chunks_exact(m).map(<[f64]>::to_vec).collect();
            let states = if has_states {
                let s = read_f64_blob(&dir.join(format!("traj_{i:05}.state")), (t + 1) * 2)?;
                Some(s.chunks_exact(2).map(|p| NavState::new(p[0], p[1])).collect())
            } else {
                None
            };
            trajectories.push(Trajectory {
                observations,
                actions,
                dt: config.dt,
                states,
            });
        }
        Ok(Dataset {
            config,
            seed: int("seed")?,
            trajectories,
        })
    }
}
