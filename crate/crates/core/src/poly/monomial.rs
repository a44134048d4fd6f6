use std::cmp::Ordering;
use std::fmt;

use smallvec::SmallVec;

use super::{VarId, VariableSpace};

/// A power product, stored as `(variable, exponent)` pairs sorted by variable.
/// Zero exponents are never stored.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Monomial {
    factors: SmallVec<[(u32, u32); 4]>,
}

impl Monomial {
    pub fn one() -> Self {
        Self::default()
    }

    pub fn var(v: VarId) -> Self {
        Self::var_pow(v, 1)
    }

    pub fn var_pow(v: VarId, e: u32) -> Self {
        let mut factors = SmallVec::new();
        if e > 0 {
            factors.push((v.0, e));
        }
        Self { factors }
    }

    /// Builds from arbitrary `(variable, exponent)` pairs; duplicates add up.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (VarId, u32)>) -> Self {
        let mut factors: SmallVec<[(u32, u32); 4]> =
            pairs.into_iter().filter(|(_, e)| *e > 0).map(|(v, e)| (v.0, e)).collect();
        factors.sort_unstable_by_key(|(v, _)| *v);
        let mut merged: SmallVec<[(u32, u32); 4]> = SmallVec::new();
        for (v, e) in factors {
            match merged.last_mut() {
                Some((lv, le)) if *lv == v => *le += e,
                _ => merged.push((v, e)),
            }
        }
        Self { factors: merged }
    }

    /// Builds from a dense exponent vector.
    pub fn from_exponents(exps: &[u32]) -> Self {
        Self::from_pairs(exps.iter().enumerate().map(|(i, e)| (VarId(i as u32), *e)))
    }

    pub fn is_one(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.factors.iter().map(|(_, e)| e).sum()
    }

    pub fn exponent(&self, v: VarId) -> u32 {
        self.factors
            .binary_search_by_key(&v.0, |(w, _)| *w)
            .map(|i| self.factors[i].1)
            .unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, u32)> + '_ {
        self.factors.iter().map(|(v, e)| (VarId(*v), *e))
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.factors.iter().map(|(v, _)| VarId(*v))
    }

    /// Sum of exponents over the variables selected by `pred`.
    pub fn degree_in(&self, mut pred: impl FnMut(VarId) -> bool) -> u32 {
        self.iter().filter(|(v, _)| pred(*v)).map(|(_, e)| e).sum()
    }

    pub fn mul(&self, other: &Self) -> Self {
        let (a, b) = (&self.factors, &other.factors);
        let mut out: SmallVec<[(u32, u32); 4]> = SmallVec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Self { factors: out }
    }

    /// `self / v` assuming `v` divides `self`.
    pub(crate) fn lower(&self, v: VarId) -> Self {
        let mut factors = self.factors.clone();
        if let Ok(i) = factors.binary_search_by_key(&v.0, |(w, _)| *w) {
            if factors[i].1 == 1 {
                factors.remove(i);
            } else {
                factors[i].1 -= 1;
            }
        }
        Self { factors }
    }

    /// Drops every power of `v`.
    pub fn without(&self, v: VarId) -> Self {
        Self { factors: self.factors.iter().copied().filter(|(w, _)| *w != v.0).collect() }
    }

    /// Whether every exponent is even.
    pub fn is_even(&self) -> bool {
        self.factors.iter().all(|(_, e)| e % 2 == 0)
    }

    /// Halves all exponents; `None` when some exponent is odd.
    pub fn half(&self) -> Option<Self> {
        if !self.is_even() {
            return None;
        }
        Some(Self { factors: self.factors.iter().map(|(v, e)| (*v, e / 2)).collect() })
    }

    /// `self / other` when `other` divides `self`.
    pub fn checked_div(&self, other: &Self) -> Option<Self> {
        if !other.divides(self) {
            return None;
        }
        let factors = self
            .factors
            .iter()
            .filter_map(|&(v, e)| {
                let r = e - other.exponent(VarId(v));
                (r > 0).then_some((v, r))
            })
            .collect();
        Some(Self { factors })
    }

    pub fn divides(&self, other: &Self) -> bool {
        self.iter().all(|(v, e)| other.exponent(v) >= e)
    }

    pub fn evaluate(&self, point: &[f64]) -> f64 {
        self.factors.iter().fold(1.0, |acc, (v, e)| acc * point[*v as usize].powi(*e as i32))
    }

    pub fn display<'a>(&'a self, space: &'a VariableSpace) -> MonomialDisplay<'a> {
        MonomialDisplay { m: self, space }
    }
}

impl Ord for Monomial {
    /// Graded lexicographic: total degree first, then the exponent of the
    /// lowest-indexed variable dominates.
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            o => return o,
        }
        for (a, b) in self.factors.iter().zip(other.factors.iter()) {
            if a.0 != b.0 {
                // the monomial containing the earlier variable is larger
                return if a.0 < b.0 { Ordering::Greater } else { Ordering::Less };
            }
            match a.1.cmp(&b.1) {
                Ordering::Equal => {}
                o => return o,
            }
        }
        self.factors.len().cmp(&other.factors.len())
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_one() {
            return write!(f, "1");
        }
        for (k, (v, e)) in self.factors.iter().enumerate() {
            if k > 0 {
                write!(f, "*")?;
            }
            write!(f, "x{v}")?;
            if *e > 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

pub struct MonomialDisplay<'a> {
    m: &'a Monomial,
    space: &'a VariableSpace,
}

impl fmt::Display for MonomialDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.m.is_one() {
            return write!(f, "1");
        }
        for (k, (v, e)) in self.m.iter().enumerate() {
            if k > 0 {
                write!(f, "*")?;
            }
            write!(f, "{}", self.space.name(v))?;
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(e: &[u32]) -> Monomial {
        Monomial::from_exponents(e)
    }

    #[test]
    fn graded_lex_order() {
        // x > y > 1, x^2 > xy > y^2 > x
        let mut ms = vec![m(&[0, 0]), m(&[1, 0]), m(&[0, 1]), m(&[2, 0]), m(&[1, 1]), m(&[0, 2])];
        ms.sort();
        assert_eq!(ms, vec![m(&[0, 0]), m(&[0, 1]), m(&[1, 0]), m(&[0, 2]), m(&[1, 1]), m(&[2, 0])]);
        assert!(m(&[0, 0, 1]) < m(&[0, 1, 0]));
        assert!(m(&[1, 0, 1]) < m(&[1, 1, 0]));
    }

    #[test]
    fn product_and_half() {
        let a = m(&[1, 2, 0]);
        let b = m(&[1, 0, 3]);
        assert_eq!(a.mul(&b), m(&[2, 2, 3]));
        assert_eq!(m(&[2, 4]).half(), Some(m(&[1, 2])));
        assert_eq!(m(&[2, 3]).half(), None);
        assert!(m(&[1, 0]).divides(&m(&[2, 1])));
        assert!(!m(&[0, 2]).divides(&m(&[2, 1])));
        assert_eq!(m(&[2, 1, 3]).checked_div(&m(&[1, 1, 0])), Some(m(&[1, 0, 3])));
        assert_eq!(m(&[2, 1]).checked_div(&m(&[0, 2])), None);
    }
}
