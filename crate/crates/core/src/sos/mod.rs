//! Sum-of-squares programs over polynomials with affine decision-variable
//! coefficients, lowered to block SDPs.

mod basis;
mod linear;
mod program;

pub use basis::{gram_basis_for, monomials_up_to, BasisOptions};
pub use linear::{Dv, LinExpr, LinPoly};
pub use program::{
    gram_expansion, sos_decompose, Certificate, ConstraintKind, Diagnostics, GramBlock, GramMatrix, SosConstraint,
    SosError, SosOptions, SosProgram,
};
