//! The two-dimensional safety QP on its own: project a reference action onto
//! `a . u + b >= 0` inside a box, including the infeasible fallback.
//!
//! cargo run --release --example qp_filter

use anyhow::Result;
use idbf::filter::{solve_qp, QpProblem};

fn main() -> Result<()> {
    let cases = [
        ("reference already safe", vec![0.5, 0.5], vec![1.0, 0.0], 0.0),
        ("halfspace cuts the reference", vec![1.5, 0.3], vec![-1.0, 0.0], 1.0),
        ("corner of box and halfspace", vec![2.0, 2.0], vec![-1.0, -1.0], 1.5),
        ("no safe action in the box", vec![0.0, 0.0], vec![1.0, 0.0], -3.0),
    ];
    for (name, u_ref, a, b) in cases {
        let p = QpProblem { u_ref, a, b, lo: vec![-2.0; 2], hi: vec![2.0; 2] };
        let s = solve_qp(&p)?;
        println!(
            "{name:<30} u_ref {:?} -> u [{:+.4}, {:+.4}]  a.u+b {:+.4}  feasible {}",
            p.u_ref, s.u[0], s.u[1], p.constraint(&s.u), s.feasible
        );
    }
    Ok(())
}
