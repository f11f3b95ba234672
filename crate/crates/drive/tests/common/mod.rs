//! Small conic programs with known optima, shared by the test targets.
#![allow(dead_code)]

use scvx_drive_core::program::{AffineRow, ConeKind, ConicProgram};

/// `min t s.t. ||(3, 4)|| <= t`, optimum `t = 5`.
pub fn norm_epigraph() -> ConicProgram {
    let mut p = ConicProgram::new();
    let t = p.add_variables("t", 1).start;
    p.add_cost(t, 1.0);
    p.push_cone(ConeKind::SecondOrder, vec![AffineRow::new().term(t, 1.0), AffineRow::constant(3.0), AffineRow::constant(4.0)])
        .unwrap();
    p
}

/// `min x s.t. x >= 1, x >= -2`, optimum `x = 1`.
pub fn small_lp() -> ConicProgram {
    let mut p = ConicProgram::new();
    let x = p.add_variables("x", 1).start;
    p.add_cost(x, 1.0);
    p.push_cone(ConeKind::Nonnegative, vec![AffineRow::new().term(x, 1.0).plus(-1.0), AffineRow::new().term(x, 1.0).plus(2.0)])
        .unwrap();
    p
}

/// `min ||u|| s.t. x_{k+1} = x_k + u_k, x_0 = 0, x_2 = 1`, optimum
/// `u = (0.5, 0.5)`. Variables: `x_0..x_2`, `u_0, u_1`, epigraph `t`.
pub fn least_norm_steps(cost_scale: f64) -> ConicProgram {
    let mut p = ConicProgram::new();
    let x = p.add_variables("x", 3).start;
    let u = p.add_variables("u", 2).start;
    let t = p.add_variables("t", 1).start;
    p.add_cost(t, cost_scale);
    let step = |k: usize| AffineRow::new().term(x + k + 1, 1.0).term(x + k, -1.0).term(u + k, -1.0);
    p.push_cone(
        ConeKind::Zero,
        vec![AffineRow::new().term(x, 1.0), step(0), step(1), AffineRow::new().term(x + 2, 1.0).plus(-1.0)],
    )
    .unwrap();
    p.push_cone(
        ConeKind::SecondOrder,
        vec![AffineRow::new().term(t, 1.0), AffineRow::new().term(u, 1.0), AffineRow::new().term(u + 1, 1.0)],
    )
    .unwrap();
    p
}

/// `min x s.t. x >= 1, x <= 0`.
pub fn infeasible() -> ConicProgram {
    let mut p = ConicProgram::new();
    let x = p.add_variables("x", 1).start;
    p.add_cost(x, 1.0);
    p.push_cone(ConeKind::Nonnegative, vec![AffineRow::new().term(x, 1.0).plus(-1.0), AffineRow::new().term(x, -1.0)])
        .unwrap();
    p
}
