//! Solver-agnostic second-order cone program and the interface a conic
//! solver backend implements.
//!
//! A program minimizes `c' x + c0` subject to a list of cone blocks. Each
//! block is a list of affine rows `r_i(x) = sum_j a_ij x_j + b_i`, and the
//! stacked row values must lie in the block's cone:
//!
//! - [`ConeKind::Zero`]: every row equals zero.
//! - [`ConeKind::Nonnegative`]: every row is nonnegative.
//! - [`ConeKind::SecondOrder`]: `r_0 >= ||(r_1, ..., r_m)||_2`.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::math::norm2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConeKind {
    Zero,
    Nonnegative,
    SecondOrder,
}

/// A contiguous run of rows that must lie in one cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConeBlock {
    pub kind: ConeKind,
    pub start: usize,
    pub dim: usize,
}

impl ConeBlock {
    pub fn rows(&self) -> Range<usize> {
        self.start..self.start + self.dim
    }
}

/// `sum_j coeff_j x_j + constant`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineRow {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineRow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(value: f64) -> Self {
        Self { terms: Vec::new(), constant: value }
    }

    /// Append `coeff * x[var]`; zero coefficients are dropped.
    pub fn term(mut self, var: usize, coeff: f64) -> Self {
        self.add_term(var, coeff);
        self
    }

    pub fn add_term(&mut self, var: usize, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push((var, coeff));
        }
    }

    pub fn plus(mut self, value: f64) -> Self {
        self.constant += value;
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for (_, c) in &mut self.terms {
            *c *= factor;
        }
        self.constant *= factor;
        self
    }

    pub fn negated(self) -> Self {
        self.scaled(-1.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().fold(self.constant, |acc, &(j, c)| acc + c * x[j])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProgramError {
    #[error("row references variable {var} but only {count} are declared")]
    UnknownVariable { var: usize, count: usize },
    #[error("cone blocks need at least one row")]
    EmptyCone,
    #[error("non-finite coefficient in row {row}")]
    NonFinite { row: usize },
}

/// A named range of decision variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableGroup {
    pub name: String,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConicProgram {
    num_vars: usize,
    cost: Vec<f64>,
    cost_constant: f64,
    rows: Vec<AffineRow>,
    cones: Vec<ConeBlock>,
    groups: Vec<VariableGroup>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declare `count` new variables under `name`.
    pub fn add_variables(&mut self, name: &str, count: usize) -> Range<usize> {
        let range = self.num_vars..self.num_vars + count;
        self.num_vars += count;
        self.cost.resize(self.num_vars, 0.0);
        self.groups.push(VariableGroup { name: name.into(), range: range.clone() });
        range
    }

    pub fn add_cost(&mut self, var: usize, coeff: f64) {
        self.cost[var] += coeff;
    }

    pub fn add_cost_constant(&mut self, value: f64) {
        self.cost_constant += value;
    }

    pub fn push_cone(&mut self, kind: ConeKind, rows: Vec<AffineRow>) -> Result<(), ProgramError> {
        if rows.is_empty() {
            return Err(ProgramError::EmptyCone);
        }
        for (i, row) in rows.iter().enumerate() {
            if !row.constant.is_finite() || row.terms.iter().any(|(_, c)| !c.is_finite()) {
                return Err(ProgramError::NonFinite { row: self.rows.len() + i });
            }
            if let Some(&(var, _)) = row.terms.iter().find(|(v, _)| *v >= self.num_vars) {
                return Err(ProgramError::UnknownVariable { var, count: self.num_vars });
            }
        }
        self.cones.push(ConeBlock { kind, start: self.rows.len(), dim: rows.len() });
        self.rows.extend(rows);
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn cost_constant(&self) -> f64 {
        self.cost_constant
    }

    pub fn rows(&self) -> &[AffineRow] {
        &self.rows
    }

    pub fn cones(&self) -> &[ConeBlock] {
        &self.cones
    }

    pub fn groups(&self) -> &[VariableGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<Range<usize>> {
        self.groups.iter().find(|g| g.name == name).map(|g| g.range.clone())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).fold(self.cost_constant, |acc, (c, v)| acc + c * v)
    }

    /// Count of blocks of each kind: `(zero, nonnegative, second-order)`.
    pub fn cone_counts(&self) -> (usize, usize, usize) {
        self.cones.iter().fold((0, 0, 0), |(z, n, s), c| match c.kind {
            ConeKind::Zero => (z + 1, n, s),
            ConeKind::Nonnegative => (z, n + 1, s),
            ConeKind::SecondOrder => (z, n, s + 1),
        })
    }

    /// Worst violation of each cone family at `x`.
    pub fn residuals(&self, x: &[f64]) -> Residuals {
        let mut out = Residuals::default();
        for cone in &self.cones {
            let values: Vec<f64> = self.rows[cone.rows()].iter().map(|r| r.eval(x)).collect();
            match cone.kind {
                ConeKind::Zero => {
                    out.equality = values.iter().fold(out.equality, |m, v| m.max(v.abs()));
                }
                ConeKind::Nonnegative => {
                    out.nonnegative = values.iter().fold(out.nonnegative, |m, v| m.max(-v));
                }
                ConeKind::SecondOrder => {
                    let tail = norm2(values[1..].iter().copied());
                    out.second_order = out.second_order.max(tail - values[0]);
                }
            }
        }
        out
    }
}

/// Largest constraint violations; zero means satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub equality: f64,
    pub nonnegative: f64,
    pub second_order: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.equality.max(self.nonnegative).max(self.second_order)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSettings {
    /// Primal and dual residual tolerance.
    pub abs_tol: f64,
    /// Relative duality-gap tolerance.
    pub rel_tol: f64,
    pub max_iterations: u32,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self { abs_tol: 1e-8, rel_tol: 1e-8, max_iterations: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    AlmostOptimal,
    PrimalInfeasible,
    DualInfeasible,
    IterationLimit,
    NumericalError,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, Self::Optimal | Self::AlmostOptimal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Optimal => "optimal",
            Self::AlmostOptimal => "almost_optimal",
            Self::PrimalInfeasible => "primal_infeasible",
            Self::DualInfeasible => "dual_infeasible",
            Self::IterationLimit => "iteration_limit",
            Self::NumericalError => "numerical_error",
        }
    }
}

impl core::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Present iff `status.has_solution()`.
    pub primal: Option<Vec<f64>>,
    /// Cone multipliers, one per row, when a solution is present.
    pub dual: Option<Vec<f64>>,
    pub objective: f64,
    pub iterations: u32,
}

impl SolveResult {
    /// A result without a solution.
    pub fn failed(status: SolveStatus, iterations: u32) -> Self {
        Self { status, primal: None, dual: None, objective: f64::NAN, iterations }
    }
}

/// A backend that solves [`ConicProgram`]s.
pub trait ConicSolver {
    fn solve(&self, program: &ConicProgram, settings: &SolveSettings) -> SolveResult;
}
