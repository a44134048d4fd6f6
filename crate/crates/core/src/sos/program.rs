use std::collections::{BTreeMap, BTreeSet};

use faer::Mat;
use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::basis::{gram_basis_for, BasisOptions};
use super::linear::{Dv, LinExpr, LinPoly};
use crate::poly::{Monomial, Polynomial, VarId, VariableSpace};
use crate::sdp::{self, ConicSolution, Entry, LinearForm, Residuals, SdpProblem, SolveStatus, SolverOptions};

#[derive(Debug, Error)]
pub enum SosError {
    #[error("constraint `{constraint}`: monomial {monomial} cannot be produced by the Gram basis")]
    Uncoverable { constraint: String, monomial: String },
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("solver reported {0}")]
    Solver(SolveStatus),
    #[error("certificate rejected: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SosOptions {
    pub solver: SolverOptions,
    pub psd_tol: f64,
    pub recon_tol: f64,
}

impl Default for SosOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), psd_tol: 1e-6, recon_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct GramBlock {
    pub name: String,
    pub basis: Vec<Monomial>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Expression equals `b' Q b` for the Gram block with this index.
    Sos(usize),
    /// Every coefficient vanishes.
    Zero,
}

#[derive(Debug, Clone)]
pub struct SosConstraint {
    pub name: String,
    pub expr: LinPoly,
    pub kind: ConstraintKind,
}

/// Declarative SOS program: unknown polynomials, SOS memberships, linear
/// objective to maximize.
#[derive(Debug, Clone)]
pub struct SosProgram {
    space: VariableSpace,
    num_free: usize,
    grams: Vec<GramBlock>,
    constraints: Vec<SosConstraint>,
    named: BTreeMap<String, LinPoly>,
    objective: LinExpr,
    /// Per-variable magnitudes; empty means unscaled.
    var_scales: Vec<f64>,
}

impl SosProgram {
    pub fn new(space: &VariableSpace) -> Self {
        Self {
            space: space.clone(),
            num_free: 0,
            grams: Vec::new(),
            constraints: Vec::new(),
            named: BTreeMap::new(),
            objective: LinExpr::default(),
            var_scales: Vec::new(),
        }
    }

    /// Declares the typical magnitude of a variable. Gram blocks are solved in
    /// the congruent basis `b_i / scale(b_i)`, which keeps the SDP well
    /// conditioned when variables live on very different ranges. Results are
    /// always reported in the original basis.
    pub fn set_variable_scale(&mut self, v: VarId, scale: f64) {
        assert!(scale.is_finite() && scale > 0.0, "variable scale must be positive");
        if self.var_scales.is_empty() {
            self.var_scales = vec![1.0; self.space.len()];
        }
        self.var_scales[v.index()] = scale;
    }

    fn monomial_scale(&self, m: &Monomial) -> f64 {
        if self.var_scales.is_empty() {
            return 1.0;
        }
        m.iter().map(|(v, e)| self.var_scales[v.index()].powi(e as i32)).product()
    }

    fn gram_scales(&self) -> Vec<Vec<f64>> {
        self.grams.iter().map(|g| g.basis.iter().map(|m| self.monomial_scale(m)).collect()).collect()
    }

    pub fn space(&self) -> &VariableSpace {
        &self.space
    }

    pub fn grams(&self) -> &[GramBlock] {
        &self.grams
    }

    pub fn constraints(&self) -> &[SosConstraint] {
        &self.constraints
    }

    pub fn num_free(&self) -> usize {
        self.num_free
    }

    pub fn new_free(&mut self) -> Dv {
        self.num_free += 1;
        Dv::Free(self.num_free - 1)
    }

    /// Polynomial with one free coefficient per basis monomial.
    pub fn new_poly(&mut self, basis: &[Monomial]) -> LinPoly {
        let terms: Vec<(Monomial, LinExpr)> =
            basis.iter().map(|m| (m.clone(), LinExpr::var(self.new_free()))).collect();
        LinPoly::from_terms(self.space.id(), terms)
    }

    fn check_name(&self, name: &str) -> Result<(), SosError> {
        if self.grams.iter().any(|g| g.name == name) || self.constraints.iter().any(|c| c.name == name) {
            return Err(SosError::DuplicateName(name.to_string()));
        }
        Ok(())
    }

    fn add_gram(&mut self, name: &str, basis: Vec<Monomial>) -> usize {
        self.grams.push(GramBlock { name: name.to_string(), basis });
        self.grams.len() - 1
    }

    /// `b' Q b` as a linear polynomial in the entries of Gram block `g`.
    pub fn gram_poly(&self, g: usize) -> LinPoly {
        let basis = &self.grams[g].basis;
        let mut out = LinPoly::zero(self.space.id());
        for i in 0..basis.len() {
            for j in i..basis.len() {
                let w = if i == j { 1.0 } else { 2.0 };
                out.add_term(basis[i].mul(&basis[j]), &LinExpr::term(Dv::Gram(g, i, j), w), 1.0);
            }
        }
        out
    }

    /// New SOS polynomial `b' Q b` with `Q` PSD (a multiplier).
    pub fn new_sos_poly(&mut self, name: &str, basis: Vec<Monomial>) -> Result<LinPoly, SosError> {
        self.check_name(name)?;
        let g = self.add_gram(name, basis);
        let p = self.gram_poly(g);
        self.named.insert(name.to_string(), p.clone());
        Ok(p)
    }

    /// Records a polynomial to be reported in the certificate.
    pub fn name_poly(&mut self, name: &str, p: &LinPoly) {
        self.named.insert(name.to_string(), p.clone());
    }

    /// `expr` is SOS, with a Gram basis chosen from its support.
    pub fn add_sos(&mut self, name: &str, expr: LinPoly, opts: &BasisOptions) -> Result<usize, SosError> {
        let basis = gram_basis_for(expr.support(), opts);
        self.add_sos_with_basis(name, expr, basis)
    }

    pub fn add_sos_with_basis(&mut self, name: &str, expr: LinPoly, basis: Vec<Monomial>) -> Result<usize, SosError> {
        self.check_name(name)?;
        debug!("sos constraint `{name}`: {} terms, basis size {}", expr.len(), basis.len());
        let g = self.add_gram(name, basis);
        self.constraints.push(SosConstraint { name: name.to_string(), expr, kind: ConstraintKind::Sos(g) });
        Ok(self.constraints.len() - 1)
    }

    /// Every coefficient of `expr` vanishes.
    pub fn add_zero(&mut self, name: &str, expr: LinPoly) -> Result<usize, SosError> {
        self.check_name(name)?;
        self.constraints.push(SosConstraint { name: name.to_string(), expr, kind: ConstraintKind::Zero });
        Ok(self.constraints.len() - 1)
    }

    /// Objective to maximize.
    pub fn set_objective(&mut self, obj: LinExpr) {
        self.objective = obj;
    }

    fn form_of(e: &LinExpr, scales: &[Vec<f64>]) -> LinearForm {
        let mut f = LinearForm::default();
        for (dv, c) in &e.terms {
            match *dv {
                Dv::Free(k) => f.free.push((k, *c)),
                Dv::Gram(b, i, j) => f.entries.push(Entry::new(b, i, j, *c / (scales[b][i] * scales[b][j]))),
            }
        }
        f
    }

    /// Block SDP equivalent to the program.
    pub fn lower(&self) -> Result<SdpProblem, SosError> {
        let scales = self.gram_scales();
        let mut p = SdpProblem::new();
        for g in &self.grams {
            p.add_block(g.basis.len());
        }
        p.num_free = self.num_free;
        for c in &self.constraints {
            let mut rows: BTreeMap<Monomial, LinExpr> =
                c.expr.terms().map(|(m, e)| (m.clone(), e.clone())).collect();
            if let ConstraintKind::Sos(g) = c.kind {
                let gp = self.gram_poly(g);
                let covered: BTreeSet<&Monomial> = gp.support().collect();
                for (m, e) in rows.iter() {
                    if !covered.contains(m) && e.is_constant() {
                        return Err(SosError::Uncoverable {
                            constraint: c.name.clone(),
                            monomial: m.display(&self.space).to_string(),
                        });
                    }
                }
                for (m, e) in gp.terms() {
                    rows.entry(m.clone()).or_default().add_scaled(e, -1.0);
                }
            }
            for (_, e) in rows {
                if e.is_zero() {
                    continue;
                }
                p.add_row(Self::form_of(&e, &scales), -e.constant);
            }
        }
        p.objective = Self::form_of(&self.objective, &scales);
        Ok(p)
    }

    pub fn solve(&self, opts: &SosOptions) -> Result<Certificate, SosError> {
        let problem = self.lower()?;
        debug!(
            "lowered SDP: {} rows, {} free, blocks {:?}",
            problem.num_rows(),
            problem.num_free,
            problem.block_dims
        );
        let sol = sdp::solve(&problem, &opts.solver);
        debug!("solver finished: {} after {} iterations", sol.status, sol.iterations);
        self.reconstruct(&sol, opts)
    }

    /// Assembles numeric polynomials and Gram matrices from a solver result
    /// and checks them.
    pub fn reconstruct(&self, sol: &ConicSolution, opts: &SosOptions) -> Result<Certificate, SosError> {
        if !sol.is_solved() {
            return Err(SosError::Solver(sol.status));
        }
        let scales = self.gram_scales();
        let x: Vec<Mat<f64>> = sol
            .x
            .iter()
            .zip(&scales)
            .map(|(q, s)| Mat::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] / (s[i] * s[j])))
            .collect();
        let values = |dv: Dv| match dv {
            Dv::Free(k) => sol.x_free[k],
            Dv::Gram(b, i, j) => x[b][(i, j)],
        };
        let mut polynomials = BTreeMap::new();
        for (name, p) in &self.named {
            polynomials.insert(name.clone(), p.value(&values));
        }
        let mut gram_matrices = BTreeMap::new();
        let mut min_eig = f64::INFINITY;
        for (g, block) in self.grams.iter().enumerate() {
            let e = sdp::min_eigenvalue(&x[g]);
            min_eig = min_eig.min(e);
            gram_matrices.insert(
                block.name.clone(),
                GramMatrix {
                    basis: block.basis.iter().map(|m| m.display(&self.space).to_string()).collect(),
                    matrix: mat_rows(&x[g]),
                    min_eigenvalue: e,
                },
            );
        }
        let mut constraint_residuals = BTreeMap::new();
        let mut worst = 0.0f64;
        for c in &self.constraints {
            let lhs = c.expr.value(&values);
            let r = match c.kind {
                ConstraintKind::Sos(g) => lhs.max_abs_diff(&gram_expansion(&self.grams[g].basis, &x[g], &self.space)),
                ConstraintKind::Zero => lhs.max_abs_coefficient(),
            };
            worst = worst.max(r);
            constraint_residuals.insert(c.name.clone(), r);
        }
        let objective_value = self.objective.value(&values);
        let diagnostics = Diagnostics {
            status: sol.status,
            iterations: sol.iterations,
            residuals: sol.residuals,
            min_gram_eigenvalue: min_eig,
            max_reconstruction_residual: worst,
            constraint_residuals,
        };
        if !(min_eig >= -opts.psd_tol) {
            return Err(SosError::Rejected(format!("Gram matrix eigenvalue {min_eig:e} below -{:e}", opts.psd_tol)));
        }
        if !(worst <= opts.recon_tol) {
            return Err(SosError::Rejected(format!(
                "reconstruction residual {worst:e} exceeds {:e}",
                opts.recon_tol
            )));
        }
        if min_eig < 0.0 {
            debug!("accepted Gram matrix with eigenvalue {min_eig:e}");
        }
        Ok(Certificate { polynomials, gram_matrices, objective_value, diagnostics })
    }
}

fn mat_rows(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// `b' Q b` for a numeric matrix.
pub fn gram_expansion(basis: &[Monomial], q: &Mat<f64>, space: &VariableSpace) -> Polynomial {
    let mut terms = Vec::with_capacity(basis.len() * (basis.len() + 1) / 2);
    for i in 0..basis.len() {
        for j in i..basis.len() {
            let w = if i == j { 1.0 } else { 2.0 };
            terms.push((basis[i].mul(&basis[j]), w * 0.5 * (q[(i, j)] + q[(j, i)])));
        }
    }
    Polynomial::from_terms(space.id(), terms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    pub basis: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub residuals: Residuals,
    pub min_gram_eigenvalue: f64,
    pub max_reconstruction_residual: f64,
    pub constraint_residuals: BTreeMap<String, f64>,
}

/// Numeric witness of a solved SOS program.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub polynomials: BTreeMap<String, Polynomial>,
    pub gram_matrices: BTreeMap<String, GramMatrix>,
    pub objective_value: f64,
    pub diagnostics: Diagnostics,
}

/// Attempts an SOS decomposition of a fixed polynomial.
pub fn sos_decompose(p: &Polynomial, space: &VariableSpace, opts: &SosOptions) -> Result<Certificate, SosError> {
    let mut prog = SosProgram::new(space);
    prog.add_sos("p", LinPoly::from_poly(p), &BasisOptions::default())?;
    prog.solve(opts)
}
