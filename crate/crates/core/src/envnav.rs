//! Top-down navigation task: a disc robot with single-integrator dynamics in
//! a square room with one square obstacle, rendered to small RGB frames.
//!
//! This is the only module with access to the true robot position. It is
//! used to collect demonstrations, to train the privileged-state baseline
//! and to label safety violations during evaluation.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Axis-aligned bounds on the action vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ActionBox {
    pub fn symmetric(dim: usize, limit: f64) -> Self {
        Self {
            lo: vec![-limit; dim],
            hi: vec![limit; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn clamp(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.lo.iter().zip(&self.hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
    }

    pub fn half_width(&self, i: usize) -> f64 {
        0.5 * (self.hi[i] - self.lo[i])
    }

    /// Maps the box affinely onto `[-1, 1]^m`.
    pub fn normalize(&self, u: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| (u[i] - 0.5 * (self.hi[i] + self.lo[i])) / self.half_width(i))
            .collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| 0.5 * (self.hi[i] + self.lo[i]) + v[i] * self.half_width(i))
            .collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dim()).map(|i| rng.random_range(self.lo[i]..=self.hi[i])).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavConfig {
    /// Side of the square room, meters.
    pub room_size: f64,
    /// Side of the square obstacle centered in the room, meters.
    pub obstacle_size: f64,
    pub robot_radius: f64,
    pub dt: f64,
    /// Per-axis velocity limit, m/s.
    pub v_max: f64,
    /// Image side in pixels.
    pub image_size: usize,
    /// Proportional gain of the reference policy, 1/s.
    pub ref_gain: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            room_size: 10.0,
            obstacle_size: 4.0,
            robot_radius: 1.0,
            dt: 0.02,
            v_max: 2.0,
            image_size: 64,
            ref_gain: 1.0,
        }
    }
}

pub const ACTION_DIM: usize = 2;
pub const CHANNELS: usize = 3;

const WHITE: [u8; 3] = [255, 255, 255];
const ORANGE: [u8; 3] = [255, 140, 0];
const BLUE: [u8; 3] = [0, 60, 255];

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::Config("v_max must be positive".into()));
        }
        if !(self.obstacle_size > 0.0 && self.obstacle_size < self.room_size) {
            return Err(Error::Config("obstacle must fit inside the room".into()));
        }
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::Config("image_size must be a positive multiple of 4".into()));
        }
        Ok(())
    }

    pub fn action_box(&self) -> ActionBox {
        ActionBox::symmetric(ACTION_DIM, self.v_max)
    }

    pub fn pixels_per_meter(&self) -> f64 {
        self.image_size as f64 / self.room_size
    }

    pub fn obstacle_bounds(&self) -> ([f64; 2], [f64; 2]) {
        let c = 0.5 * self.room_size;
        let h = 0.5 * self.obstacle_size;
        ([c - h, c - h], [c + h, c + h])
    }

    pub fn frame_len(&self) -> usize {
        self.image_size * self.image_size * CHANNELS
    }

    /// Stable hex digest of every field; datasets record it so that data
    /// rendered under one geometry is never silently reused under another.
    pub fn hash(&self) -> String {
        let canon = format!(
            "room={:e};obstacle={:e};radius={:e};dt={:e};vmax={:e};image={};gain={:e}",
            self.room_size,
            self.obstacle_size,
            self.robot_radius,
            self.dt,
            self.v_max,
            self.image_size,
            self.ref_gain
        );
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub pos: [f64; 2],
}

impl NavState {
    pub fn new(x: f64, y: f64) -> Self {
        Self { pos: [x, y] }
    }
}

/// `HxWx3` RGB frame, row-major, row 0 at `y = 0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    pub size: usize,
    pub pixels: Vec<u8>,
}

impl Observation {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.size + col) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Channels scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    /// Binary PPM (P6) encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.size, self.size).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

/// Single-integrator Euler step. Actions outside the box are clamped; the
/// flag reports whether clamping happened. Collisions are not resolved.
pub fn step(s: NavState, u: &[f64], cfg: &NavConfig) -> (NavState, bool) {
    let bx = cfg.action_box();
    let clamped = !bx.contains(u);
    let u = bx.clamp(u);
    (
        NavState::new(s.pos[0] + cfg.dt * u[0], s.pos[1] + cfg.dt * u[1]),
        clamped,
    )
}

/// Distance from `p` to the obstacle square (zero inside it).
pub fn obstacle_distance(p: [f64; 2], cfg: &NavConfig) -> f64 {
    let (lo, hi) = cfg.obstacle_bounds();
    let cx = p[0].clamp(lo[0], hi[0]);
    let cy = p[1].clamp(lo[1], hi[1]);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

pub fn is_unsafe(s: NavState, cfg: &NavConfig) -> bool {
    let [x, y] = s.pos;
    let outside = !(0.0..=cfg.room_size).contains(&x) || !(0.0..=cfg.room_size).contains(&y);
    outside || obstacle_distance(s.pos, cfg) < cfg.robot_radius
}

/// Hard-edged rasterization: a pixel takes a shape's color when its center
/// lies inside the shape. The robot is drawn over the obstacle.
pub fn render(s: NavState, cfg: &NavConfig) -> Observation {
    let n = cfg.image_size;
    let ppm = cfg.pixels_per_meter();
    let (lo, hi) = cfg.obstacle_bounds();
    let r2 = cfg.robot_radius * cfg.robot_radius;
    let mut pixels = Vec::with_capacity(n * n * CHANNELS);
    for row in 0..n {
        let y = (row as f64 + 0.5) / ppm;
        let dy2 = (y - s.pos[1]).powi(2);
        for col in 0..n {
            let x = (col as f64 + 0.5) / ppm;
            let color = if (x - s.pos[0]).powi(2) + dy2 <= r2 {
                BLUE
            } else if x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1] {
                ORANGE
            } else {
                WHITE
            };
            pixels.extend_from_slice(&color);
        }
    }
    Observation { size: n, pixels }
}

/// Proportional go-to-goal law, clamped to the action box.
pub fn ref_policy(s: NavState, goal: [f64; 2], cfg: &NavConfig) -> Vec<f64> {
    let u = [
        cfg.ref_gain * (goal[0] - s.pos[0]),
        cfg.ref_gain * (goal[1] - s.pos[1]),
    ];
    cfg.action_box().clamp(&u)
}

/// Uniform sample over safe positions by rejection.
pub fn sample_safe_state(cfg: &NavConfig, rng: &mut impl Rng) -> NavState {
    loop {
        let s = NavState::new(
            rng.random_range(0.0..=cfg.room_size),
            rng.random_range(0.0..=cfg.room_size),
        );
        if !is_unsafe(s, cfg) {
            return s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NavConfig {
        NavConfig::default()
    }

    #[test]
    fn zero_action_keeps_state() {
        let s = NavState::new(1.0, 2.0);
        assert_eq!(step(s, &[0.0, 0.0], &cfg()).0, s);
    }

    #[test]
    fn euler_step() {
        let (s, clamped) = step(NavState::new(0.0, 0.0), &[1.0, 0.0], &cfg());
        assert_eq!(s.pos, [0.02, 0.0]);
        assert!(!clamped);
    }

    #[test]
    fn out_of_box_action_is_clamped_and_flagged() {
        let (s, clamped) = step(NavState::new(0.0, 0.0), &[5.0, -5.0], &cfg());
        assert!(clamped);
        assert!((s.pos[0] - 0.04).abs() < 1e-15 && (s.pos[1] + 0.04).abs() < 1e-15);
    }

    #[test]
    fn unsafe_examples() {
        let c = cfg();
        assert!(!is_unsafe(NavState::new(1.5, 1.5), &c));
        assert!((obstacle_distance([1.5, 1.5], &c) - 4.5f64.sqrt()).abs() < 1e-12);
        assert!(is_unsafe(NavState::new(2.1, 5.0), &c));
        assert!((obstacle_distance([2.1, 5.0], &c) - 0.9).abs() < 1e-12);
        assert!(is_unsafe(NavState::new(-0.1, 5.0), &c));
        assert!(is_unsafe(NavState::new(5.0, 10.2), &c));
        assert!(is_unsafe(NavState::new(5.0, 5.0), &c));
    }

    #[test]
    fn ref_policy_examples() {
        let c = cfg();
        let s = NavState::new(3.0, 4.0);
        assert_eq!(ref_policy(s, [3.0, 4.0], &c), vec![0.0, 0.0]);
        assert_eq!(ref_policy(s, [5.0, 4.0], &c), vec![2.0, 0.0]);
        assert_eq!(ref_policy(s, [13.0, 4.0], &c), vec![2.0, 0.0]);
    }

    #[test]
    fn render_is_deterministic() {
        let c = cfg();
        let s = NavState::new(2.345, 8.1);
        assert_eq!(render(s, &c), render(s, &c));
    }

    #[test]
    fn ppm_header() {
        let obs = render(NavState::new(1.5, 1.5), &cfg());
        let ppm = obs.to_ppm();
        assert!(ppm.starts_with(b"P6\n64 64\n255\n"));
        assert_eq!(ppm.len(), 13 + 64 * 64 * 3);
    }

    #[test]
    fn config_hash_changes_with_geometry() {
        let a = cfg();
        let mut b = cfg();
        b.robot_radius = 0.5;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), cfg().hash());
    }
}
