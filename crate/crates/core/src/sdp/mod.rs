//! Block-PSD semidefinite programs with free variables, an embedded
//! primal-dual interior-point solver and SDPA file exchange.
//!
//! Primal form (maximization):
//!
//! ```text
//! max  <C, X> + c_f' x_f
//! s.t. <A_i, X> + (A_f x_f)_i = b_i,   X = diag(X_1, ..., X_K) PSD
//! ```
//!
//! Dual: `min b'y  s.t.  S = sum_i y_i A_i - C PSD,  A_f' y = c_f`.

mod sdpa;
mod solver;

use faer::Mat;
use thiserror::Error;

pub use sdpa::{read_sdpa, read_sdpa_solution, write_sdpa, write_sdpa_solution, SdpaSolution};
pub use solver::{solve, validate, SolverOptions, ValidationReport};

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("row {row} references block {block} entry ({i}, {j}) outside the declared dimension")]
    EntryOutOfRange { row: usize, block: usize, i: usize, j: usize },
    #[error("row {row} references free variable {var} but only {count} are declared")]
    FreeOutOfRange { row: usize, var: usize, count: usize },
    #[error("non-finite coefficient in row {0}")]
    NonFinite(usize),
    #[error("SDPA format error at line {line}: {message}")]
    Sdpa { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One upper-triangle coefficient: contributes `coef * X_block[i][j]`
/// (with `i <= j`) to the linear functional. An off-diagonal entry is
/// therefore a coefficient on the single aliased variable `X[i][j] = X[j][i]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub coef: f64,
}

impl Entry {
    pub fn new(block: usize, i: usize, j: usize, coef: f64) -> Self {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        Self { block, i, j, coef }
    }
}

/// Sparse linear functional over block entries and free variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearForm {
    pub entries: Vec<Entry>,
    pub free: Vec<(usize, f64)>,
}

impl LinearForm {
    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|e| e.coef == 0.0) && self.free.iter().all(|(_, c)| *c == 0.0)
    }

    /// Merges duplicate references and drops zeros; ordering becomes canonical.
    pub fn normalized(&self) -> Self {
        let mut entries = self.entries.clone();
        entries.sort_by_key(|e| (e.block, e.i, e.j));
        let mut merged: Vec<Entry> = Vec::with_capacity(entries.len());
        for e in entries {
            match merged.last_mut() {
                Some(l) if (l.block, l.i, l.j) == (e.block, e.i, e.j) => l.coef += e.coef,
                _ => merged.push(e),
            }
        }
        merged.retain(|e| e.coef != 0.0);
        let mut free = self.free.clone();
        free.sort_by_key(|(v, _)| *v);
        let mut fm: Vec<(usize, f64)> = Vec::with_capacity(free.len());
        for (v, c) in free {
            match fm.last_mut() {
                Some(l) if l.0 == v => l.1 += c,
                _ => fm.push((v, c)),
            }
        }
        fm.retain(|(_, c)| *c != 0.0);
        Self { entries: merged, free: fm }
    }

    pub fn evaluate(&self, x: &[Mat<f64>], x_free: &[f64]) -> f64 {
        let mut acc = 0.0;
        for e in &self.entries {
            acc += e.coef * x[e.block][(e.i, e.j)];
        }
        for (v, c) in &self.free {
            acc += c * x_free[*v];
        }
        acc
    }

    fn norm_sq(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| if e.i == e.j { e.coef * e.coef } else { 0.5 * e.coef * e.coef })
            .sum::<f64>()
            + self.free.iter().map(|(_, c)| c * c).sum::<f64>()
    }
}

/// Equality-constrained block SDP in the primal form above.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SdpProblem {
    pub block_dims: Vec<usize>,
    pub num_free: usize,
    pub rows: Vec<LinearForm>,
    pub rhs: Vec<f64>,
    pub objective: LinearForm,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, dim: usize) -> usize {
        self.block_dims.push(dim);
        self.block_dims.len() - 1
    }

    pub fn add_free(&mut self) -> usize {
        self.num_free += 1;
        self.num_free - 1
    }

    pub fn add_row(&mut self, row: LinearForm, rhs: f64) -> usize {
        self.rows.push(row);
        self.rhs.push(rhs);
        self.rows.len() - 1
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Total order of the PSD cone.
    pub fn cone_order(&self) -> usize {
        self.block_dims.iter().sum()
    }

    pub fn check(&self) -> Result<(), SdpError> {
        let forms = self.rows.iter().enumerate().chain(std::iter::once((self.rows.len(), &self.objective)));
        for (r, form) in forms {
            for e in &form.entries {
                let ok = e.block < self.block_dims.len() && e.i <= e.j && e.j < self.block_dims[e.block];
                if !ok {
                    return Err(SdpError::EntryOutOfRange { row: r, block: e.block, i: e.i, j: e.j });
                }
                if !e.coef.is_finite() {
                    return Err(SdpError::NonFinite(r));
                }
            }
            for (v, c) in &form.free {
                if *v >= self.num_free {
                    return Err(SdpError::FreeOutOfRange { row: r, var: *v, count: self.num_free });
                }
                if !c.is_finite() {
                    return Err(SdpError::NonFinite(r));
                }
            }
        }
        if self.rhs.iter().any(|b| !b.is_finite()) {
            return Err(SdpError::NonFinite(self.rhs.iter().position(|b| !b.is_finite()).unwrap()));
        }
        Ok(())
    }

    /// `A(X) + A_f x_f`.
    pub fn apply(&self, x: &[Mat<f64>], x_free: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.evaluate(x, x_free)).collect()
    }

    /// `sum_i y_i A_i - C` as dense symmetric blocks.
    pub fn dual_slack(&self, y: &[f64]) -> Vec<Mat<f64>> {
        let mut s: Vec<Mat<f64>> = self.block_dims.iter().map(|&n| Mat::zeros(n, n)).collect();
        for (row, yi) in self.rows.iter().zip(y) {
            add_form_to_blocks(&mut s, row, *yi);
        }
        add_form_to_blocks(&mut s, &self.objective, -1.0);
        s
    }

    /// `A_f' y - c_f`.
    pub fn free_residual(&self, y: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.num_free];
        for (row, yi) in self.rows.iter().zip(y) {
            for (v, c) in &row.free {
                r[*v] += c * yi;
            }
        }
        for (v, c) in &self.objective.free {
            r[*v] -= c;
        }
        r
    }
}

/// Adds `scale * A` for the symmetric matrix `A` represented by `form`.
fn add_form_to_blocks(blocks: &mut [Mat<f64>], form: &LinearForm, scale: f64) {
    for e in &form.entries {
        let m = &mut blocks[e.block];
        if e.i == e.j {
            m[(e.i, e.i)] += scale * e.coef;
        } else {
            let h = 0.5 * scale * e.coef;
            m[(e.i, e.j)] += h;
            m[(e.j, e.i)] += h;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Primal residual within tolerance but optimality not established.
    Feasible,
    PrimalInfeasible,
    DualInfeasible,
    Stalled,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Feasible => "feasible",
            SolveStatus::PrimalInfeasible => "primal_infeasible",
            SolveStatus::DualInfeasible => "dual_infeasible",
            SolveStatus::Stalled => "stalled",
        };
        f.write_str(s)
    }
}

/// Relative residuals, all measured on the unscaled problem.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Residuals {
    /// `||A(X) + A_f x_f - b|| / (1 + ||b||)`
    pub primal: f64,
    /// `||A*(y) - C - S|| / (1 + ||C||)` including the free-variable rows.
    pub dual: f64,
    /// `|pobj - dobj| / (1 + |pobj| + |dobj|)`
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InfeasibilityCertificate {
    /// `b'y = -1`, `A*(y)` PSD, `A_f' y = 0` (up to tolerance).
    Primal { y: Vec<f64> },
    /// `<C,X> + c_f'x_f = 1`, `A(X) + A_f x_f = 0`, `X` PSD.
    Dual { x: Vec<Mat<f64>>, x_free: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mu: f64,
    pub tau: f64,
    pub kappa: f64,
    pub step: f64,
    pub sigma: f64,
    pub residuals: Residuals,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<Mat<f64>>,
    pub x_free: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<Mat<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub residuals: Residuals,
    pub certificate: Option<InfeasibilityCertificate>,
    pub trace: Vec<IterationRecord>,
}

impl ConicSolution {
    pub fn is_solved(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::Feasible)
    }
}

/// Smallest eigenvalue of a symmetric block (`+inf` for an empty block).
pub fn min_eigenvalue(m: &Mat<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    match m.self_adjoint_eigenvalues(faer::Side::Lower) {
        Ok(ev) => ev.first().copied().unwrap_or(f64::INFINITY),
        Err(_) => f64::NAN,
    }
}
