//! Closed-loop evaluation: rollouts, safety and intervention metrics, and
//! the comparison table over all filters.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::ModelBundle;
use crate::envnav::{self, ActionBox, NavConfig, NavState};
use crate::error::{Error, Result};
use crate::filter::{bc_filter, ensemble_filter, write_log_csv, Carry, FilterDecision, FilterKind, IdbfFilter, StepRecord};
use crate::rng::{derive_seed, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Episode length in seconds.
    pub seconds: f64,
    /// Random candidate actions per step for the sampling baselines.
    pub samples: usize,
    pub bc_thresholds: Vec<f64>,
    pub ensemble_thresholds: Vec<f64>,
    /// Probabilities of (across the obstacle, outside the room, free space)
    /// goals.
    pub goal_mix: [f64; 3],
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 20,
            seconds: 5.0,
            samples: 200,
            bc_thresholds: vec![0.32, 0.35, 0.38],
            ensemble_thresholds: vec![0.0005, 0.001, 0.002],
            goal_mix: [0.5, 0.25, 0.25],
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || !(self.seconds > 0.0) {
            return Err(Error::Config("need at least one episode of positive length".into()));
        }
        let s: f64 = self.goal_mix.iter().sum();
        if self.goal_mix.iter().any(|p| *p < 0.0) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config("goal_mix must be a probability vector".into()));
        }
        Ok(())
    }

    pub fn steps(&self, dt: f64) -> usize {
        (self.seconds / dt).round() as usize
    }

    /// The table's filter columns in order.
    pub fn table_filters(&self) -> Vec<FilterKind> {
        let mut v = vec![FilterKind::None, FilterKind::Idbf];
        v.extend(self.bc_thresholds.iter().map(|&p| FilterKind::Bc(p)));
        v.extend(self.ensemble_thresholds.iter().map(|&d| FilterKind::Ensemble(d)));
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    AcrossObstacle,
    OutOfRoom,
    FreeSpace,
}

/// Initial state and goal of episode `index`; depends only on the seed and
/// the index, so every filter sees the same episodes.
pub fn episode_setup(cfg: &NavConfig, eval: &EvalConfig, index: usize) -> (NavState, [f64; 2], GoalKind) {
    let mut rng = stream(derive_seed(eval.seed, "episodes"), index as u64);
    let start = envnav::sample_safe_state(cfg, &mut rng);
    let r: f64 = rng.random();
    let l = cfg.room_size;
    if r < eval.goal_mix[0] {
        let goal = [l - start.pos[0], l - start.pos[1]];
        (start, goal, GoalKind::AcrossObstacle)
    } else if r < eval.goal_mix[0] + eval.goal_mix[1] {
        let along = rng.random_range(0.0..=l);
        let out = rng.random_range(1.0..=3.0);
        let goal = match rng.random_range(0..4) {
            0 => [-out, along],
            1 => [l + out, along],
            2 => [along, -out],
            _ => [along, l + out],
        };
        (start, goal, GoalKind::OutOfRoom)
    } else {
        let g = envnav::sample_safe_state(cfg, &mut rng);
        (start, g.pos, GoalKind::FreeSpace)
    }
}

/// A filter instance for one rollout.
pub enum FilterRuntime<'a> {
    None,
    Idbf(IdbfFilter<'a>),
    Bc { bundle: &'a ModelBundle, p: f64, samples: usize },
    Ensemble { bundle: &'a ModelBundle, delta: f64, samples: usize, carry: Carry },
}

impl<'a> FilterRuntime<'a> {
    pub fn new(kind: FilterKind, bundle: Option<&'a ModelBundle>, samples: usize) -> Result<Self> {
        let need = || bundle.ok_or_else(|| Error::Config(format!("filter {kind} needs trained models")));
        Ok(match kind {
            FilterKind::None => FilterRuntime::None,
            FilterKind::Idbf => FilterRuntime::Idbf(IdbfFilter::new(need()?)?),
            FilterKind::Bc(p) => {
                let bundle = need()?;
                if bundle.baseline_bc.is_none() {
                    return Err(Error::Config("model bundle has no privileged BC model".into()));
                }
                FilterRuntime::Bc { bundle, p, samples }
            }
            FilterKind::Ensemble(delta) => {
                let bundle = need()?;
                if bundle.ensemble.len() < 2 {
                    return Err(Error::EnsembleTooSmall(bundle.ensemble.len()));
                }
                let a = &bundle.latent.arch;
                FilterRuntime::Ensemble {
                    bundle,
                    delta,
                    samples,
                    carry: Carry::zero(a.latent_dim, a.action_dim),
                }
            }
        })
    }

    pub fn step(
        &mut self,
        image: &envnav::Observation,
        state: NavState,
        u_ref: &[f64],
        action_box: &ActionBox,
        rng: &mut impl Rng,
    ) -> Result<FilterDecision> {
        match self {
            FilterRuntime::None => Ok(FilterDecision::passthrough(u_ref)),
            FilterRuntime::Idbf(f) => f.step(image, u_ref),
            FilterRuntime::Bc { bundle, p, samples } => {
                let bc = bundle.baseline_bc.as_ref().expect("checked at construction");
                Ok(bc_filter(bc, &state.pos, u_ref, *p, action_box, *samples, rng))
            }
            FilterRuntime::Ensemble {
                bundle,
                delta,
                samples,
                carry,
            } => {
                let x = carry.encode(&bundle.latent.encoder, image);
                let d = ensemble_filter(&bundle.ensemble, &x, u_ref, *delta, action_box, *samples, rng)?;
                carry.executed(&d.action);
                Ok(d)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub records: Vec<StepRecord>,
    /// `steps + 1` true states.
    pub states: Vec<NavState>,
}

/// Closed loop render -> filter -> step for `steps` control intervals.
/// Frames are written to `frames_dir` as PPM when given.
pub fn rollout(
    cfg: &NavConfig,
    filter: &mut FilterRuntime,
    start: NavState,
    goal: [f64; 2],
    steps: usize,
    filter_seed: u64,
    frames_dir: Option<&Path>,
) -> Result<Rollout> {
    let bx = cfg.action_box();
    let mut rng = stream(filter_seed, 0);
    let mut s = start;
    let mut states = vec![s];
    let mut records = Vec::with_capacity(steps);
    if let Some(d) = frames_dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for k in 0..steps {
        let image = envnav::render(s, cfg);
        if let Some(d) = frames_dir {
            image.write_ppm(&d.join(format!("frame_{k:04}.ppm")))?;
        }
        let u_ref = envnav::ref_policy(s, goal, cfg);
        let dec = filter.step(&image, s, &u_ref, &bx, &mut rng)?;
        let next = envnav::step(s, &dec.action, cfg).0;
        records.push(StepRecord {
            time: k as f64 * cfg.dt,
            barrier: dec.barrier.unwrap_or(f64::NAN),
            constraint: dec.constraint_value,
            u_ref_x: u_ref[0],
            u_ref_y: u_ref[1],
            u_x: dec.action[0],
            u_y: dec.action[1],
            intervened: dec.intervened,
            feasible: dec.feasible,
            pos_x: s.pos[0],
            pos_y: s.pos[1],
            unsafe_after: envnav::is_unsafe(next, cfg),
        });
        s = next;
        states.push(s);
    }
    Ok(Rollout { records, states })
}

/// Percentage of steps labelled unsafe.
pub fn collision_rate(log: &[StepRecord]) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    Ok(100.0 * log.iter().filter(|r| r.unsafe_after).count() as f64 / log.len() as f64)
}

/// `sum_t |u_t - u_ref_t|^2` with every action dimension scaled by the box
/// half-width.
pub fn cumulative_intervention(log: &[StepRecord], action_box: &ActionBox) -> f64 {
    log.iter()
        .map(|r| {
            let (u, ur) = (r.u(), r.u_ref());
            (0..2).map(|i| ((u[i] - ur[i]) / action_box.half_width(i)).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub filter: String,
    pub episode: usize,
    pub goal_kind: GoalKind,
    pub start_x: f64,
    pub start_y: f64,
    pub goal_x: f64,
    pub goal_y: f64,
    pub collision_rate: f64,
    pub intervention: f64,
    pub infeasible_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub filter: FilterKind,
    pub episodes: Vec<EpisodeResult>,
}

impl EvalReport {
    pub fn collision(&self) -> (f64, f64) {
        mean_std(&self.episodes.iter().map(|e| e.collision_rate).collect::<Vec<_>>())
    }

    pub fn intervention(&self) -> (f64, f64) {
        mean_std(&self.episodes.iter().map(|e| e.intervention).collect::<Vec<_>>())
    }
}

/// Runs every episode of `eval` under one filter. Per-step logs go to
/// `log_dir/<filter>/episode_XX.csv` and, with `dump_frames`, frames to
/// `log_dir/<filter>/episode_XX/`.
pub fn evaluate(
    cfg: &NavConfig,
    bundle: Option<&ModelBundle>,
    kind: FilterKind,
    eval: &EvalConfig,
    log_dir: Option<&Path>,
    dump_frames: bool,
) -> Result<EvalReport> {
    eval.validate()?;
    let bx = cfg.action_box();
    let steps = eval.steps(cfg.dt);
    let name = kind.to_string();
    let dir = log_dir.map(|d| d.join(name.replace(':', "_")));
    if let Some(d) = &dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut episodes = Vec::with_capacity(eval.episodes);
    for ep in 0..eval.episodes {
        let (start, goal, goal_kind) = episode_setup(cfg, eval, ep);
        let mut runtime = FilterRuntime::new(kind, bundle, eval.samples)?;
        let frames = match (&dir, dump_frames) {
            (Some(d), true) => Some(d.join(format!("episode_{ep:02}"))),
            _ => None,
        };
        let seed = derive_seed(eval.seed, &format!("filter-{ep}"));
        let ro = rollout(cfg, &mut runtime, start, goal, steps, seed, frames.as_deref())?;
        if let Some(d) = &dir {
            write_log_csv(&d.join(format!("episode_{ep:02}.csv")), &ro.records)?;
        }
        episodes.push(EpisodeResult {
            filter: name.clone(),
            episode: ep,
            goal_kind,
            start_x: start.pos[0],
            start_y: start.pos[1],
            goal_x: goal[0],
            goal_y: goal[1],
            collision_rate: collision_rate(&ro.records)?,
            intervention: cumulative_intervention(&ro.records, &bx),
            infeasible_steps: ro.records.iter().filter(|r| !r.feasible).count(),
        });
    }
    Ok(EvalReport { filter: kind, episodes })
}

/// Evaluates every filter column under the same episodes and writes
/// `table.csv` (mean and sample std per filter and metric) and
/// `episodes.csv` into `out`.
pub fn run_table(
    cfg: &NavConfig,
    bundle: &ModelBundle,
    eval: &EvalConfig,
    out: &Path,
    mut on_report: impl FnMut(&EvalReport),
) -> Result<Vec<EvalReport>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut reports = Vec::new();
    for kind in eval.table_filters() {
        let r = evaluate(cfg, Some(bundle), kind, eval, Some(&out.join("logs")), false)?;
        on_report(&r);
        reports.push(r);
    }
    write_table(&reports, out)?;
    Ok(reports)
}

#[derive(Serialize)]
struct TableRow<'a> {
    filter: String,
    metric: &'a str,
    mean: f64,
    std: f64,
}

pub fn write_table(reports: &[EvalReport], out: &Path) -> Result<()> {
    let err = |p: &Path, e: csv::Error| Error::io(p, std::io::Error::other(e));
    let tp = out.join("table.csv");
    let mut w = csv::Writer::from_path(&tp).map_err(|e| err(&tp, e))?;
    for r in reports {
        for (metric, (mean, std)) in [("collision_rate_pct", r.collision()), ("cumulative_intervention", r.intervention())] {
            w.serialize(TableRow {
                filter: r.filter.to_string(),
                metric,
                mean,
                std,
            })
            .map_err(|e| err(&tp, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&tp, e))?;
    let ep = out.join("episodes.csv");
    let mut w = csv::Writer::from_path(&ep).map_err(|e| err(&ep, e))?;
    for r in reports {
        for e in &r.episodes {
            w.serialize(e).map_err(|x| err(&ep, x))?;
        }
    }
    w.flush().map_err(|e| Error::io(&ep, e))
}
