use crate::error::{Error, Result};

/// `min |u - u_ref|^2` subject to `a . u + b >= 0` and `lo <= u <= hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub u_ref: Vec<f64>,
    pub a: Vec<f64>,
    pub b: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub u: Vec<f64>,
    /// False when the box and the halfspace do not intersect; `u` is then
    /// the box point with the largest `a . u + b`.
    pub feasible: bool,
}

pub const MAX_QP_DIM: usize = 4;

impl QpProblem {
    pub fn constraint(&self, u: &[f64]) -> f64 {
        self.a.iter().zip(u).map(|(a, u)| a * u).sum::<f64>() + self.b
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.u_ref).map(|(u, r)| (u - r).powi(2)).sum()
    }

    fn in_box(&self, u: &[f64], tol: f64) -> bool {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    fn check(&self) -> Result<()> {
        let m = self.u_ref.len();
        if [self.a.len(), self.lo.len(), self.hi.len()].iter().any(|&n| n != m) {
            return Err(Error::shape("qp vectors", &[m], &[self.a.len()]));
        }
        if m == 0 || m > MAX_QP_DIM {
            return Err(Error::Config(format!("qp dimension {m} not in 1..={MAX_QP_DIM}")));
        }
        let all = self.u_ref.iter().chain(&self.a).chain(&self.lo).chain(&self.hi).chain(std::iter::once(&self.b));
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("qp coefficients".into()));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| l > h) {
            return Err(Error::Config("qp box has lo > hi".into()));
        }
        Ok(())
    }

    /// Box point maximising `a . u + b`; coordinates with `a_i = 0` stay as
    /// close to `u_ref` as the box allows.
    pub fn min_violation(&self) -> Vec<f64> {
        (0..self.a.len())
            .map(|i| {
                if self.a[i] > 0.0 {
                    self.hi[i]
                } else if self.a[i] < 0.0 {
                    self.lo[i]
                } else {
                    self.u_ref[i].clamp(self.lo[i], self.hi[i])
                }
            })
            .collect()
    }
}

/// Exact solution by enumerating active sets: every coordinate is free, at
/// its lower bound or at its upper bound, and the halfspace is active or
/// not. Each combination has a closed-form minimiser; the best feasible one
/// is the optimum.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    p.check()?;
    let m = p.u_ref.len();
    if p.in_box(&p.u_ref, 0.0) && p.constraint(&p.u_ref) >= 0.0 {
        return Ok(QpSolution {
            u: p.u_ref.clone(),
            feasible: true,
        });
    }
    let best_reach = p.constraint(&p.min_violation());
    if best_reach < 0.0 {
        return Ok(QpSolution {
            u: p.min_violation(),
            feasible: false,
        });
    }
    let scale = 1.0 + p.b.abs() + p.a.iter().map(|a| a.abs()).sum::<f64>();
    let tol = 1e-12 * scale;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |u: Vec<f64>| {
        if !p.in_box(&u, tol) || p.constraint(&u) < -tol {
            return;
        }
        let u: Vec<f64> = u.iter().zip(p.lo.iter().zip(&p.hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect();
        let obj = p.objective(&u);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, u));
        }
    };
    let combos = 3usize.pow(m as u32);
    for code in 0..combos {
        let mut u = p.u_ref.clone();
        let mut free = Vec::with_capacity(m);
        let mut c = code;
        for i in 0..m {
            match c % 3 {
                0 => free.push(i),
                1 => u[i] = p.lo[i],
                _ => u[i] = p.hi[i],
            }
            c /= 3;
        }
        consider(u.clone());
        // halfspace active: move the free coordinates along a_F
        let norm: f64 = free.iter().map(|&i| p.a[i] * p.a[i]).sum();
        if norm > 0.0 {
            let lam = -p.constraint(&u) / norm;
            for &i in &free {
                u[i] += lam * p.a[i];
            }
            consider(u);
        }
    }
    match best {
        Some((_, u)) => Ok(QpSolution { u, feasible: true }),
        // unreachable in exact arithmetic; fall back to the least violation
        None => Ok(QpSolution {
            u: p.min_violation(),
            feasible: false,
        }),
    }
}
