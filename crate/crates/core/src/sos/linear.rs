use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use crate::poly::{zero_tolerance, Monomial, Polynomial, SpaceId};

/// Scalar decision variable of an SOS program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dv {
    Free(usize),
    /// Upper-triangle Gram entry `(block, i, j)`, `i <= j`.
    Gram(usize, usize, usize),
}

/// Affine expression `constant + sum c_k * dv_k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub constant: f64,
    pub terms: BTreeMap<Dv, f64>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: BTreeMap::new() }
    }

    pub fn var(dv: Dv) -> Self {
        Self::term(dv, 1.0)
    }

    pub fn term(dv: Dv, c: f64) -> Self {
        let mut terms = BTreeMap::new();
        if c != 0.0 {
            terms.insert(dv, c);
        }
        Self { constant: 0.0, terms }
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_scaled(&mut self, other: &LinExpr, s: f64) {
        if s == 0.0 {
            return;
        }
        let tol = zero_tolerance();
        self.constant += s * other.constant;
        if self.constant.abs() < tol {
            self.constant = 0.0;
        }
        for (dv, c) in &other.terms {
            let e = self.terms.entry(*dv).or_insert(0.0);
            *e += s * c;
            if e.abs() < tol {
                self.terms.remove(dv);
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = Self::default();
        out.add_scaled(self, s);
        out
    }

    pub fn value(&self, values: &impl Fn(Dv) -> f64) -> f64 {
        self.constant + self.terms.iter().map(|(dv, c)| c * values(*dv)).sum::<f64>()
    }
}

/// Polynomial whose coefficients are affine in decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LinPoly {
    space: SpaceId,
    terms: BTreeMap<Monomial, LinExpr>,
}

impl LinPoly {
    pub fn zero(space: SpaceId) -> Self {
        Self { space, terms: BTreeMap::new() }
    }

    pub fn space(&self) -> SpaceId {
        self.space
    }

    pub fn from_poly(p: &Polynomial) -> Self {
        let terms = p.terms().map(|(m, c)| (m.clone(), LinExpr::constant(c))).collect();
        Self { space: p.space(), terms }
    }

    pub fn from_terms(space: SpaceId, terms: impl IntoIterator<Item = (Monomial, LinExpr)>) -> Self {
        let mut out = Self::zero(space);
        for (m, e) in terms {
            out.add_term(m, &e, 1.0);
        }
        out
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &LinExpr)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, m: &Monomial) -> Option<&LinExpr> {
        self.terms.get(m)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Monomials whose coefficient is not identically zero.
    pub fn support(&self) -> impl Iterator<Item = &Monomial> {
        self.terms.keys()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn add_term(&mut self, m: Monomial, e: &LinExpr, s: f64) {
        let slot = self.terms.entry(m.clone()).or_default();
        slot.add_scaled(e, s);
        if slot.is_zero() {
            self.terms.remove(&m);
        }
    }

    fn check_space(&self, other: SpaceId) {
        assert_eq!(self.space, other, "linear polynomial space mismatch");
    }

    pub fn add_scaled(&mut self, other: &LinPoly, s: f64) {
        self.check_space(other.space);
        for (m, e) in &other.terms {
            let slot = self.terms.entry(m.clone()).or_default();
            slot.add_scaled(e, s);
            if slot.is_zero() {
                self.terms.remove(m);
            }
        }
    }

    pub fn add_poly(&mut self, p: &Polynomial, s: f64) {
        self.check_space(p.space());
        for (m, c) in p.terms() {
            let slot = self.terms.entry(m.clone()).or_default();
            slot.add_scaled(&LinExpr::constant(c), s);
            if slot.is_zero() {
                self.terms.remove(m);
            }
        }
    }

    /// Product with a numeric polynomial.
    pub fn mul_poly(&self, p: &Polynomial) -> LinPoly {
        self.check_space(p.space());
        let mut out = LinPoly::zero(self.space);
        for (m1, e) in &self.terms {
            for (m2, c) in p.terms() {
                let slot = out.terms.entry(m1.mul(m2)).or_default();
                slot.add_scaled(e, c);
            }
        }
        out.terms.retain(|_, e| !e.is_zero());
        out
    }

    pub fn scaled(&self, s: f64) -> LinPoly {
        let mut out = LinPoly::zero(self.space);
        out.add_scaled(self, s);
        out
    }

    /// Numeric polynomial after fixing every decision variable.
    pub fn value(&self, values: &impl Fn(Dv) -> f64) -> Polynomial {
        Polynomial::from_terms(self.space, self.terms.iter().map(|(m, e)| (m.clone(), e.value(values))))
    }

    pub fn differentiate(&self, v: crate::poly::VarId) -> LinPoly {
        let mut out = LinPoly::zero(self.space);
        for (m, e) in &self.terms {
            let k = m.exponent(v);
            if k > 0 {
                let slot = out.terms.entry(m.lower(v)).or_default();
                slot.add_scaled(e, f64::from(k));
            }
        }
        out.terms.retain(|_, e| !e.is_zero());
        out
    }
}

impl Add<&LinPoly> for &LinPoly {
    type Output = LinPoly;
    fn add(self, rhs: &LinPoly) -> LinPoly {
        let mut out = self.clone();
        out.add_scaled(rhs, 1.0);
        out
    }
}

impl Sub<&LinPoly> for &LinPoly {
    type Output = LinPoly;
    fn sub(self, rhs: &LinPoly) -> LinPoly {
        let mut out = self.clone();
        out.add_scaled(rhs, -1.0);
        out
    }
}

impl Mul<&Polynomial> for &LinPoly {
    type Output = LinPoly;
    fn mul(self, rhs: &Polynomial) -> LinPoly {
        self.mul_poly(rhs)
    }
}

impl Neg for &LinPoly {
    type Output = LinPoly;
    fn neg(self) -> LinPoly {
        self.scaled(-1.0)
    }
}
