//! Sparse multivariate polynomials over named real variables.
//!
//! Every polynomial belongs to a [`VariableSpace`]; arithmetic between
//! polynomials of different spaces is rejected. Terms are kept in a
//! [`BTreeMap`] keyed by [`Monomial`], whose ordering is graded
//! lexicographic, so iteration order and printing are deterministic.

mod monomial;
mod parse;
mod space;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

pub use monomial::Monomial;
pub use parse::ParseError;
pub use space::{SpaceId, VarId, VariableSpace};

use thiserror::Error;

static ZERO_TOL_BITS: AtomicU64 = AtomicU64::new(0x3D71_9799_812D_EA11); // 1e-12

/// Coefficients with magnitude below this value are dropped.
pub fn zero_tolerance() -> f64 {
    f64::from_bits(ZERO_TOL_BITS.load(Ordering::Relaxed))
}

/// Overrides the canonical zero tolerance for the whole process.
pub fn set_zero_tolerance(tol: f64) {
    assert!(tol >= 0.0 && tol.is_finite(), "zero tolerance must be finite and >= 0");
    ZERO_TOL_BITS.store(tol.to_bits(), Ordering::Relaxed);
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("variable space mismatch ({0:?} vs {1:?})")]
    SpaceMismatch(SpaceId, SpaceId),
    #[error("unknown variable index {0}")]
    UnknownVariable(u32),
    #[error("no value assigned to variable index {0}")]
    MissingAssignment(u32),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// A real polynomial in canonical form.
#[derive(Clone, PartialEq)]
pub struct Polynomial {
    space: SpaceId,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(space: SpaceId) -> Self {
        Self { space, terms: BTreeMap::new() }
    }

    pub fn constant(space: SpaceId, c: f64) -> Self {
        Self::monomial(space, Monomial::one(), c)
    }

    pub fn monomial(space: SpaceId, m: Monomial, c: f64) -> Self {
        let mut p = Self::zero(space);
        p.add_term(m, c);
        p
    }

    /// The polynomial `v`.
    pub fn var(space: SpaceId, v: VarId) -> Self {
        Self::monomial(space, Monomial::var(v), 1.0)
    }

    /// Builds a polynomial from raw terms, merging duplicates.
    pub fn from_terms(space: SpaceId, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut p = Self::zero(space);
        for (m, c) in terms {
            *p.terms.entry(m).or_insert(0.0) += c;
        }
        p.canonicalize();
        p
    }

    /// Affine form `sum_i coeffs[i] * vars[i] + offset`.
    pub fn affine(space: SpaceId, vars: &[VarId], coeffs: &[f64], offset: f64) -> Self {
        assert_eq!(vars.len(), coeffs.len());
        Self::from_terms(
            space,
            vars.iter()
                .zip(coeffs)
                .map(|(v, c)| (Monomial::var(*v), *c))
                .chain(std::iter::once((Monomial::one(), offset))),
        )
    }

    pub fn space(&self) -> SpaceId {
        self.space
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, c)| (m, *c))
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coefficient(&Monomial::one())
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn min_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).min().unwrap_or(0)
    }

    /// Sorted, deduplicated list of variables that occur in some term.
    pub fn variables(&self) -> Vec<VarId> {
        let mut vs: Vec<VarId> = self.terms.keys().flat_map(|m| m.vars()).collect();
        vs.sort_unstable();
        vs.dedup();
        vs
    }

    pub fn support(&self) -> impl Iterator<Item = &Monomial> + '_ {
        self.terms.keys()
    }

    fn add_term(&mut self, m: Monomial, c: f64) {
        use std::collections::btree_map::Entry;
        let tol = zero_tolerance();
        match self.terms.entry(m) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().abs() < tol {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                if !(c.abs() < tol) {
                    v.insert(c);
                }
            }
        }
    }

    fn canonicalize(&mut self) {
        let tol = zero_tolerance();
        self.terms.retain(|_, c| !(c.abs() < tol));
    }

    fn check(&self, other: &Self) -> Result<(), PolyError> {
        if self.space == other.space {
            Ok(())
        } else {
            Err(PolyError::SpaceMismatch(self.space, other.space))
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, PolyError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            *out.terms.entry(m.clone()).or_insert(0.0) += c;
        }
        out.canonicalize();
        Ok(out)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.try_add(&other.scale(-1.0))
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, PolyError> {
        self.check(other)?;
        let mut acc: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                *acc.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        let mut out = Self { space: self.space, terms: acc };
        out.canonicalize();
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self {
            space: self.space,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect(),
        };
        out.canonicalize();
        out
    }

    pub fn pow(&self, e: u32) -> Self {
        let mut out = Self::constant(self.space, 1.0);
        for _ in 0..e {
            out = &out * self;
        }
        out
    }

    /// Formal partial derivative with respect to `v`.
    pub fn differentiate(&self, v: VarId) -> Self {
        let mut out = Self::zero(self.space);
        for (m, c) in &self.terms {
            let e = m.exponent(v);
            if e > 0 {
                *out.terms.entry(m.lower(v)).or_insert(0.0) += c * f64::from(e);
            }
        }
        out.canonicalize();
        out
    }

    /// Differentiates after checking that `v` belongs to `space`.
    pub fn try_differentiate(&self, space: &VariableSpace, v: VarId) -> Result<Self, PolyError> {
        if space.id() != self.space {
            return Err(PolyError::SpaceMismatch(self.space, space.id()));
        }
        if v.index() >= space.len() {
            return Err(PolyError::UnknownVariable(v.0));
        }
        Ok(self.differentiate(v))
    }

    /// Evaluates at a dense point indexed by variable ordinal, using
    /// compensated (Neumaier) summation over terms.
    pub fn evaluate(&self, point: &[f64]) -> Result<f64, PolyError> {
        let mut sum = 0.0;
        let mut comp = 0.0;
        for (m, c) in &self.terms {
            let mut t = *c;
            for (v, e) in m.iter() {
                let x = *point.get(v.index()).ok_or(PolyError::MissingAssignment(v.0))?;
                t *= x.powi(e as i32);
            }
            let s = sum + t;
            if sum.abs() >= t.abs() {
                comp += (sum - s) + t;
            } else {
                comp += (t - s) + sum;
            }
            sum = s;
        }
        Ok(sum + comp)
    }

    /// Evaluates, panicking on missing assignments. Intended for hot loops
    /// where the point is known to cover the space.
    pub fn eval(&self, point: &[f64]) -> f64 {
        self.evaluate(point).expect("point does not cover polynomial variables")
    }

    /// Replaces every occurrence of `v` with `expr`.
    pub fn substitute(&self, v: VarId, expr: &Polynomial) -> Result<Self, PolyError> {
        self.check(expr)?;
        let max_e = self.terms.keys().map(|m| m.exponent(v)).max().unwrap_or(0);
        let mut powers = vec![Self::constant(self.space, 1.0)];
        for k in 1..=max_e as usize {
            let next = &powers[k - 1] * expr;
            powers.push(next);
        }
        let mut acc: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m, c) in &self.terms {
            let e = m.exponent(v) as usize;
            let rest = m.without(v);
            for (pm, pc) in &powers[e].terms {
                *acc.entry(rest.mul(pm)).or_insert(0.0) += c * pc;
            }
        }
        let mut out = Self { space: self.space, terms: acc };
        out.canonicalize();
        Ok(out)
    }

    /// Substitutes several variables at once (simultaneous substitution).
    pub fn substitute_many(&self, subs: &BTreeMap<VarId, Polynomial>) -> Result<Self, PolyError> {
        let mut out = Self::zero(self.space);
        for (m, c) in &self.terms {
            let mut term = Self::constant(self.space, *c);
            for (v, e) in m.iter() {
                let factor = match subs.get(&v) {
                    Some(p) => {
                        self.check(p)?;
                        p.pow(e)
                    }
                    None => Self::monomial(self.space, Monomial::var_pow(v, e), 1.0),
                };
                term = &term * &factor;
            }
            out = &out + &term;
        }
        Ok(out)
    }

    /// Largest absolute coefficient difference against `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst: f64 = 0.0;
        for (m, c) in &self.terms {
            worst = worst.max((c - other.coefficient(m)).abs());
        }
        for (m, c) in &other.terms {
            if !self.terms.contains_key(m) {
                worst = worst.max(c.abs());
            }
        }
        worst
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// Renders with variable names from `space`.
    pub fn display<'a>(&'a self, space: &'a VariableSpace) -> PolyDisplay<'a> {
        PolyDisplay { poly: self, space }
    }

    /// Parses the infix text form against `space`.
    pub fn parse(text: &str, space: &VariableSpace) -> Result<Self, ParseError> {
        parse::parse(text, space)
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_map();
        for (m, c) in self.terms.iter().rev() {
            list.entry(&format_args!("{m:?}"), c);
        }
        list.finish()
    }
}

pub struct PolyDisplay<'a> {
    poly: &'a Polynomial,
    space: &'a VariableSpace,
}

pub(crate) fn format_coefficient(c: f64) -> String {
    let a = c.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{c}")
    } else {
        format!("{c:e}")
    }
}

impl fmt::Display for PolyDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.poly.is_zero() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.poly.terms.iter().rev().enumerate() {
            let neg = c.is_sign_negative();
            let a = c.abs();
            if i == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            if m.is_one() {
                write!(f, "{}", format_coefficient(a))?;
                continue;
            }
            if a != 1.0 {
                write!(f, "{}*", format_coefficient(a))?;
            }
            write!(f, "{}", m.display(self.space))?;
        }
        Ok(())
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $try:ident) => {
        impl std::ops::$tr<&Polynomial> for &Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                self.$try(rhs).expect("polynomials from different variable spaces")
            }
        }
        impl std::ops::$tr<Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                (&self).$try(&rhs).expect("polynomials from different variable spaces")
            }
        }
    };
}

binop!(Add, add, try_add);
binop!(Sub, sub, try_sub);
binop!(Mul, mul, try_mul);

impl std::ops::Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl std::ops::Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests;
