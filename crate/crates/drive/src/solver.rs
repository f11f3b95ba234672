//! Interior-point backend for [`ConicProgram`]s built on Clarabel, plus a
//! plain-text sparse dump of a program for cross-checking with other solvers.

use std::io::{self, Write};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use scvx_drive_core::program::{ConeKind, ConicProgram, ConicSolver, SolveResult, SolveSettings, SolveStatus};

/// Homogeneous-embedding interior-point solver for zero, nonnegative and
/// second-order cones.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelSolver;

/// Program data in the `A x + s = b, s in K` convention.
struct Standardized {
    a: CscMatrix<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

fn standardize(program: &ConicProgram) -> Standardized {
    let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::with_capacity(program.num_rows());
    for (i, row) in program.rows().iter().enumerate() {
        for &(j, c) in &row.terms {
            rows.push(i);
            cols.push(j);
            vals.push(-c);
        }
        b.push(row.constant);
    }
    let a = CscMatrix::new_from_triplets(program.num_rows(), program.num_vars(), rows, cols, vals);
    let cones = program
        .cones()
        .iter()
        .map(|cone| match cone.kind {
            ConeKind::Zero => SupportedConeT::ZeroConeT(cone.dim),
            ConeKind::Nonnegative => SupportedConeT::NonnegativeConeT(cone.dim),
            ConeKind::SecondOrder if cone.dim == 1 => SupportedConeT::NonnegativeConeT(1),
            ConeKind::SecondOrder => SupportedConeT::SecondOrderConeT(cone.dim),
        })
        .collect();
    Standardized { a, b, cones }
}

fn map_status(status: SolverStatus) -> SolveStatus {
    match status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => SolveStatus::AlmostOptimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::PrimalInfeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::DualInfeasible,
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::IterationLimit,
        SolverStatus::Unsolved
        | SolverStatus::NumericalError
        | SolverStatus::InsufficientProgress
        | SolverStatus::CallbackTerminated => SolveStatus::NumericalError,
    }
}

impl ConicSolver for ClarabelSolver {
    fn solve(&self, program: &ConicProgram, settings: &SolveSettings) -> SolveResult {
        let data = standardize(program);
        let n = program.num_vars();
        let p = CscMatrix::zeros((n, n));
        let options = DefaultSettings {
            max_iter: settings.max_iterations,
            tol_feas: settings.abs_tol,
            tol_gap_abs: settings.abs_tol,
            tol_gap_rel: settings.rel_tol,
            verbose: false,
            max_threads: 1,
            ..DefaultSettings::default()
        };
        let mut solver = match DefaultSolver::new(&p, program.cost(), &data.a, &data.b, &data.cones, options) {
            Ok(solver) => solver,
            Err(err) => {
                log::error!("solver setup failed: {err}");
                return SolveResult::failed(SolveStatus::NumericalError, 0);
            }
        };
        solver.solve();
        let solution = &solver.solution;
        let status = map_status(solution.status);
        if !status.has_solution() {
            return SolveResult::failed(status, solution.iterations);
        }
        SolveResult {
            status,
            objective: program.objective(&solution.x),
            primal: Some(solution.x.clone()),
            dual: Some(solution.z.clone()),
            iterations: solution.iterations,
        }
    }
}

/// Write `program` as sparse triplets.
///
/// The header lists the dimensions and one `# cone <kind> <first row> <dim>`
/// line per block, meaning the row values `a_i' x + b_i` of that block lie in
/// the cone. The body has `c <col> <value>` lines for the linear cost,
/// `a <row> <col> <value>` lines for the constraint coefficients and
/// `b <row> <value>` lines for the row constants.
pub fn write_triplets<W: Write>(program: &ConicProgram, mut out: W) -> io::Result<()> {
    writeln!(out, "# variables {}", program.num_vars())?;
    writeln!(out, "# rows {}", program.num_rows())?;
    writeln!(out, "# cost_constant {:e}", program.cost_constant())?;
    for cone in program.cones() {
        let kind = match cone.kind {
            ConeKind::Zero => "zero",
            ConeKind::Nonnegative => "nonnegative",
            ConeKind::SecondOrder => "second_order",
        };
        writeln!(out, "# cone {kind} {} {}", cone.start, cone.dim)?;
    }
    for (j, c) in program.cost().iter().enumerate().filter(|(_, c)| **c != 0.0) {
        writeln!(out, "c {j} {c:e}")?;
    }
    for (i, row) in program.rows().iter().enumerate() {
        for &(j, c) in &row.terms {
            writeln!(out, "a {i} {j} {c:e}")?;
        }
        if row.constant != 0.0 {
            writeln!(out, "b {i} {:e}", row.constant)?;
        }
    }
    Ok(())
}
